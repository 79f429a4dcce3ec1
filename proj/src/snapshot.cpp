#include "mhflid/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace mhflid {

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

const SnapshotEntry& MessengerSnapshot::at(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw ProtocolError("snapshot has no entry '" + name + "'");
}

std::string to_string(AggregationMode mode) { return mode == AggregationMode::Uniform ? "uniform" : "data_weighted"; }

AggregationMode aggregation_mode_from_string(const std::string& name) {
  if (name == "uniform") return AggregationMode::Uniform;
  if (name == "data_weighted") return AggregationMode::DataWeighted;
  throw std::invalid_argument("unknown aggregation mode '" + name + "'");
}

namespace {

bool is_body(const std::string& name) { return name.rfind("messenger.body.", 0) == 0; }

bool part_enabled(const std::string& name, bool body, bool head) { return is_body(name) ? body : head; }

}  // namespace

MessengerSnapshot take_snapshot(const Model& messenger, std::uint32_t round, int client_id, std::uint64_t sample_count) {
  MessengerSnapshot s;
  s.round = round;
  s.client_id = client_id;
  s.sample_count = sample_count;
  for (const auto& p : messenger.parameters()) {
    const auto d = p.tensor.data();
    s.entries.push_back({std::string(kMessengerPrefix) + p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return s;
}

void load_snapshot(Model& messenger, const MessengerSnapshot& snapshot, bool body, bool head) {
  auto& params = messenger.parameters();
  if (params.size() != snapshot.entries.size()) throw ProtocolError("snapshot does not match the messenger layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = snapshot.entries[i];
    if (e.name != std::string(kMessengerPrefix) + params[i].name || e.shape != params[i].tensor.shape()) {
      throw ProtocolError("snapshot entry '" + e.name + "' does not match messenger parameter '" + params[i].name + "'");
    }
    if (!part_enabled(e.name, body, head)) continue;
    auto dst = params[i].tensor.mutable_data();
    std::copy(e.data.begin(), e.data.end(), dst.begin());
  }
}

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;

  template <typename T>
  T get() {
    if (bytes.size() - pos < sizeof(T)) throw ProtocolError("snapshot truncated");
    T value;
    std::memcpy(&value, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
  }
};

}  // namespace

std::string encode(const MessengerSnapshot& snapshot) {
  std::string out(kSnapshotMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.entries.size()));
  for (const auto& e : snapshot.entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw ProtocolError("parameter name too long");
    if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw ProtocolError("parameter rank too large");
    if (shape_numel(e.shape) != e.data.size()) throw ProtocolError("entry '" + e.name + "' size mismatch");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * sizeof(float));
  }
  put<std::uint32_t>(out, snapshot.round);
  put<std::uint64_t>(out, snapshot.sample_count);
  return out;
}

MessengerSnapshot decode(std::string_view bytes) {
  if (bytes.substr(0, kSnapshotMagic.size()) != kSnapshotMagic) throw ProtocolError("bad snapshot magic");
  Reader r{bytes, kSnapshotMagic.size()};
  MessengerSnapshot s;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    SnapshotEntry e;
    const auto len = r.get<std::uint16_t>();
    if (bytes.size() - r.pos < len) throw ProtocolError("snapshot truncated");
    e.name.assign(bytes.substr(r.pos, len));
    r.pos += len;
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_numel(e.shape);
    if ((bytes.size() - r.pos) / sizeof(float) < n) throw ProtocolError("snapshot truncated");
    e.data.resize(n);
    std::memcpy(e.data.data(), bytes.data() + r.pos, n * sizeof(float));
    r.pos += n * sizeof(float);
    s.entries.push_back(std::move(e));
  }
  s.round = r.get<std::uint32_t>();
  s.sample_count = r.get<std::uint64_t>();
  if (r.pos != bytes.size()) throw ProtocolError("trailing bytes after snapshot");
  return s;
}

void save_snapshot(const MessengerSnapshot& snapshot, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const auto bytes = encode(snapshot);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

MessengerSnapshot load_snapshot_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

void check_manifest(const MessengerSnapshot& reference, const MessengerSnapshot& other) {
  if (reference.entries.size() != other.entries.size()) {
    throw ProtocolError("manifest mismatch: " + std::to_string(reference.entries.size()) + " vs " +
                        std::to_string(other.entries.size()) + " entries");
  }
  for (std::size_t i = 0; i < reference.entries.size(); ++i) {
    const auto &a = reference.entries[i], &b = other.entries[i];
    if (a.name != b.name || a.shape != b.shape) {
      throw ProtocolError("manifest mismatch at entry " + std::to_string(i) + ": " + a.name + shape_str(a.shape) +
                          " vs " + b.name + shape_str(b.shape));
    }
  }
}

MessengerSnapshot aggregate(std::span<const MessengerSnapshot> snapshots, AggregationMode mode, bool aggregate_body,
                            bool aggregate_head) {
  if (snapshots.empty()) throw ProtocolError("aggregate needs at least one snapshot");
  for (const auto& s : snapshots) check_manifest(snapshots.front(), s);

  std::vector<double> weights(snapshots.size(), 1.0 / static_cast<double>(snapshots.size()));
  std::uint64_t total = 0;
  for (const auto& s : snapshots) total += s.sample_count;
  if (mode == AggregationMode::DataWeighted) {
    if (total == 0) throw ProtocolError("data-weighted aggregation with zero samples");
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
      weights[k] = static_cast<double>(snapshots[k].sample_count) / static_cast<double>(total);
    }
  }

  MessengerSnapshot out = snapshots.front();
  out.client_id = -1;
  out.sample_count = total;
  if (snapshots.size() == 1) return out;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    auto& e = out.entries[i];
    if (!part_enabled(e.name, aggregate_body, aggregate_head)) continue;
    for (std::size_t j = 0; j < e.data.size(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < snapshots.size(); ++k) acc += weights[k] * snapshots[k].entries[i].data[j];
      e.data[j] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace mhflid
