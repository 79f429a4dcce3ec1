#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhflid/model.hpp"

namespace mhflid {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SnapshotEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Messenger parameters in model order, named "messenger.body.*" / "messenger.head.*".
/// `client_id` travels out of band; the wire format does not carry it.
struct MessengerSnapshot {
  std::vector<SnapshotEntry> entries;
  std::uint32_t round = 0;
  int client_id = -1;  // -1 for server-built snapshots
  std::uint64_t sample_count = 0;

  const SnapshotEntry& at(const std::string& name) const;
};

enum class AggregationMode { Uniform, DataWeighted };
std::string to_string(AggregationMode mode);
AggregationMode aggregation_mode_from_string(const std::string& name);

inline constexpr std::string_view kSnapshotMagic = "MHMSG1";
inline constexpr std::string_view kMessengerPrefix = "messenger.";

MessengerSnapshot take_snapshot(const Model& messenger, std::uint32_t round, int client_id, std::uint64_t sample_count);

/// Copies snapshot values into the model. Parts switched off are left as they are.
void load_snapshot(Model& messenger, const MessengerSnapshot& snapshot, bool body = true, bool head = true);

/// "MHMSG1", u32 count, per entry {u16 name length, name, u8 rank, u32 dims, f32 payload},
/// u32 round, u64 sample_count. All integers and floats little-endian.
std::string encode(const MessengerSnapshot& snapshot);
MessengerSnapshot decode(std::string_view bytes);

void save_snapshot(const MessengerSnapshot& snapshot, const std::filesystem::path& path);
MessengerSnapshot load_snapshot_file(const std::filesystem::path& path);

/// Throws ProtocolError unless names and shapes match entry by entry.
void check_manifest(const MessengerSnapshot& reference, const MessengerSnapshot& other);

/// Element-wise mean (uniform) or sample_count-weighted mean. A part whose switch
/// is off is copied from the first snapshot. The result carries the first
/// snapshot's round, client_id -1 and the summed sample count.
MessengerSnapshot aggregate(std::span<const MessengerSnapshot> snapshots, AggregationMode mode,
                            bool aggregate_body = true, bool aggregate_head = true);

}  // namespace mhflid
