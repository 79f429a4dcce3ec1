#include "mhflid/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace mhflid::data {

std::size_t Dataset::labels_per_sample() const {
  return task == Task::Classification ? 1 : inputs.dim(2) * inputs.dim(3);
}

void Dataset::check() const {
  if (!inputs.defined() || inputs.rank() != 4) throw DimensionError(name + ": inputs must be [N x C x H x W]");
  if (labels.size() != size() * labels_per_sample()) throw DimensionError(name + ": label count mismatch");
  if (groups.size() != size()) throw DimensionError(name + ": group count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw std::out_of_range(name + ": label out of range");
  }
  for (int g : groups) {
    if (g < 0 || static_cast<std::size_t>(g) >= num_groups) throw std::out_of_range(name + ": group out of range");
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out{ds.name, ds.task, ds.num_classes, ds.num_groups, {}, {}, {}};
  auto batch = make_batch(ds, indices);
  out.inputs = batch.inputs;
  out.labels = std::move(batch.labels);
  out.groups.reserve(indices.size());
  for (auto i : indices) out.groups.push_back(ds.groups[i]);
  return out;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument(ds.name + ": empty batch");
  const auto shape = ds.sample_shape();
  const std::size_t per = shape[0] * shape[1] * shape[2], lps = ds.labels_per_sample();
  std::vector<real> x(indices.size() * per);
  std::vector<int> y(indices.size() * lps);
  const auto src = ds.inputs.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto i = indices[b];
    if (i >= ds.size()) throw std::out_of_range(ds.name + ": sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * per), per, x.begin() + static_cast<std::ptrdiff_t>(b * per));
    std::copy_n(ds.labels.begin() + static_cast<std::ptrdiff_t>(i * lps), lps, y.begin() + static_cast<std::ptrdiff_t>(b * lps));
  }
  return {Tensor({indices.size(), shape[0], shape[1], shape[2]}, std::move(x)), std::move(y)};
}

Batch whole(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(ds, idx);
}

// Minibatch index lists for one epoch. A trailing batch of one sample joins the
// previous batch because batch normalization needs two samples.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start == 1 && !out.empty()) {
      out.back().push_back(order[start]);
    } else {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return out;
}

namespace {

struct Blob {
  double cx, cy, sigma;
  std::vector<double> amp;
};

struct ClassTemplate {
  std::vector<Blob> blobs;
  double freq, angle, phase;
  std::vector<double> wave_amp;
};

double template_value(const ClassTemplate& t, std::size_t ch, double x, double y, double size) {
  double v = 0.0;
  for (const auto& b : t.blobs) {
    const double dx = x - b.cx, dy = y - b.cy;
    v += b.amp[ch] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
  }
  const double u = (x * std::cos(t.angle) + y * std::sin(t.angle)) / size;
  v += t.wave_amp[ch] * std::sin(2.0 * std::numbers::pi * t.freq * u + t.phase);
  return v;
}

}  // namespace

Dataset gen_classification(std::size_t num_classes, std::size_t n, std::size_t image_size, std::uint64_t seed,
                           const ClassificationOptions& options) {
  if (num_classes < 2 || n == 0 || image_size < 2 || options.channels == 0) {
    throw std::invalid_argument("gen_classification: invalid arguments");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double size = static_cast<double>(image_size);
  const std::size_t channels = options.channels;

  std::vector<ClassTemplate> templates(num_classes);
  for (auto& t : templates) {
    for (int b = 0; b < 2; ++b) {
      Blob blob{size * (0.2 + 0.6 * unit(rng)), size * (0.2 + 0.6 * unit(rng)), size * (0.1 + 0.1 * unit(rng)), {}};
      for (std::size_t c = 0; c < channels; ++c) blob.amp.push_back(2.0 * unit(rng) - 1.0);
      t.blobs.push_back(std::move(blob));
    }
    t.freq = 1.0 + 2.0 * unit(rng);
    t.angle = std::numbers::pi * unit(rng);
    t.phase = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t c = 0; c < channels; ++c) t.wave_amp.push_back(0.3 * (2.0 * unit(rng) - 1.0));
  }

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> shift(-1, 1);
  const std::size_t plane = image_size * image_size;
  std::vector<real> x(n * channels * plane);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = templates[static_cast<std::size_t>(labels[i])];
    const double gain = 0.8 + 0.4 * unit(rng), offset = 0.4 * unit(rng) - 0.2;
    const int sx = shift(rng), sy = shift(rng);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t yy = 0; yy < image_size; ++yy) {
        for (std::size_t xx = 0; xx < image_size; ++xx) {
          const double v = gain * template_value(t, c, static_cast<double>(xx) - sx, static_cast<double>(yy) - sy, size) +
                           offset + options.noise * gauss(rng);
          x[(i * channels + c) * plane + yy * image_size + xx] = static_cast<real>(v);
        }
      }
    }
  }
  Dataset ds{"synthetic-blobs", Task::Classification, num_classes, num_classes,
             Tensor({n, channels, image_size, image_size}, std::move(x)), labels, labels};
  ds.check();
  return ds;
}

Dataset gen_segmentation(std::size_t n, std::size_t image_size, std::uint64_t seed, std::size_t channels) {
  if (n == 0 || image_size < 4 || channels == 0) throw std::invalid_argument("gen_segmentation: invalid arguments");
  constexpr std::size_t kStyles = 4;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double size = static_cast<double>(image_size);

  std::vector<std::vector<double>> background(kStyles), foreground(kStyles);
  for (std::size_t s = 0; s < kStyles; ++s) {
    for (std::size_t c = 0; c < channels; ++c) {
      background[s].push_back(unit(rng) - 0.5);
      foreground[s].push_back(background[s][c] + (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.6 + 0.6 * unit(rng)));
    }
  }

  const std::size_t plane = image_size * image_size;
  std::vector<real> x(n * channels * plane);
  std::vector<int> masks(n * plane), groups(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto style = static_cast<std::size_t>(unit(rng) * kStyles) % kStyles;
    groups[i] = static_cast<int>(style);
    const double a = size * (1.0 / 7.0 + (1.0 / 3.2 - 1.0 / 7.0) * unit(rng));
    const double b = size * (1.0 / 7.0 + (1.0 / 3.2 - 1.0 / 7.0) * unit(rng));
    const double cx = size * (0.3 + 0.4 * unit(rng)), cy = size * (0.3 + 0.4 * unit(rng));
    const double theta = std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t yy = 0; yy < image_size; ++yy) {
      for (std::size_t xx = 0; xx < image_size; ++xx) {
        const double dx = static_cast<double>(xx) + 0.5 - cx, dy = static_cast<double>(yy) + 0.5 - cy;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        masks[i * plane + yy * image_size + xx] = u * u + v * v <= 1.0 ? 1 : 0;
      }
    }
    // The ellipse center pixel is always foreground.
    masks[i * plane + static_cast<std::size_t>(cy) * image_size + static_cast<std::size_t>(cx)] = 1;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double base = masks[i * plane + p] ? foreground[style][c] : background[style][c];
        x[(i * channels + c) * plane + p] = static_cast<real>(base + 0.35 * gauss(rng));
      }
    }
  }
  Dataset ds{"synthetic-ellipses", Task::Segmentation, 2, kStyles,
             Tensor({n, channels, image_size, image_size}, std::move(x)), std::move(masks), std::move(groups)};
  ds.check();
  return ds;
}

namespace {

bool split_client(std::vector<std::size_t>& indices, double train_fraction, std::size_t min_per_split,
                  std::mt19937_64& rng, ClientSplit& out) {
  std::shuffle(indices.begin(), indices.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(indices.size()) * train_fraction));
  if (n_train < min_per_split || indices.size() - n_train < min_per_split) return false;
  out.train.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(indices.begin() + static_cast<std::ptrdiff_t>(n_train), indices.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return true;
}

}  // namespace

Partition dirichlet_partition(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed,
                              const DirichletOptions& options) {
  if (num_clients == 0) throw std::invalid_argument("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw std::invalid_argument("dirichlet_partition: train fraction must be in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_group(ds.num_groups);
  for (std::size_t i = 0; i < ds.size(); ++i) by_group[static_cast<std::size_t>(ds.groups[i])].push_back(i);

  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (std::size_t attempt = 0; attempt < options.max_attempts; ++attempt) {
    std::vector<std::vector<std::size_t>> pools(num_clients);
    for (auto group : by_group) {
      std::shuffle(group.begin(), group.end(), rng);
      std::vector<double> share(num_clients);
      double total = 0.0;
      for (auto& s : share) total += (s = gamma(rng));
      if (!(total > 0.0)) {
        std::fill(share.begin(), share.end(), 1.0);
        total = static_cast<double>(num_clients);
      }
      double cumulative = 0.0;
      std::size_t start = 0;
      for (std::size_t k = 0; k < num_clients; ++k) {
        cumulative += share[k] / total;
        const std::size_t end = k + 1 == num_clients
                                    ? group.size()
                                    : std::min(group.size(), static_cast<std::size_t>(cumulative * static_cast<double>(group.size())));
        for (std::size_t j = start; j < std::max(start, end); ++j) pools[k].push_back(group[j]);
        start = std::max(start, end);
      }
    }
    Partition partition(num_clients);
    bool ok = true;
    for (std::size_t k = 0; k < num_clients && ok; ++k) {
      ok = split_client(pools[k], options.train_fraction, options.min_per_split, rng, partition[k]);
    }
    if (ok) return partition;
  }
  throw std::runtime_error("dirichlet_partition: could not satisfy the minimum split size after " +
                           std::to_string(options.max_attempts) + " draws");
}

std::vector<std::vector<std::size_t>> group_counts(const Dataset& ds, const Partition& partition) {
  std::vector<std::vector<std::size_t>> counts(partition.size(), std::vector<std::size_t>(ds.num_groups, 0));
  for (std::size_t k = 0; k < partition.size(); ++k) {
    for (const auto* split : {&partition[k].train, &partition[k].test}) {
      for (auto i : *split) ++counts[k][static_cast<std::size_t>(ds.groups[i])];
    }
  }
  return counts;
}

std::vector<ClientData> materialize(const Dataset& ds, const Partition& partition) {
  std::vector<ClientData> out;
  for (const auto& split : partition) {
    out.push_back({subset(ds, split.train), subset(ds, split.test), split.train, split.test, 1});
  }
  return out;
}

Tensor resize_inputs(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.rank() != 4) throw DimensionError("resize_inputs expects [N x C x H x W]");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == height && w == width) return x.detach();
  std::vector<real> out(planes * height * width);
  const auto src = x.data();
  if (height <= h && width <= w) {
    if (h % height || w % width) throw DimensionError("resize_inputs: size is not an integer divisor");
    const std::size_t fy = h / height, fx = w / width;
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t xx = 0; xx < width; ++xx) {
          double acc = 0.0;
          for (std::size_t i = 0; i < fy; ++i) {
            for (std::size_t j = 0; j < fx; ++j) acc += src[(p * h + y * fy + i) * w + xx * fx + j];
          }
          out[(p * height + y) * width + xx] = static_cast<real>(acc / static_cast<double>(fy * fx));
        }
      }
    }
  } else if (height >= h && width >= w) {
    if (height % h || width % w) throw DimensionError("resize_inputs: size is not an integer multiple");
    const std::size_t fy = height / h, fx = width / w;
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t xx = 0; xx < width; ++xx) out[(p * height + y) * width + xx] = src[(p * h + y / fy) * w + xx / fx];
      }
    }
  } else {
    throw DimensionError("resize_inputs: mixed shrink/grow is not supported");
  }
  return Tensor({x.dim(0), x.dim(1), height, width}, std::move(out));
}

Dataset downsample(const Dataset& ds, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downsample factor must be positive");
  if (ds.task != Task::Classification) throw std::invalid_argument("downsample supports classification datasets only");
  Dataset out = ds;
  if (factor == 1) {
    out.inputs = ds.inputs.detach();
    return out;
  }
  const auto s = ds.sample_shape();
  if (s[1] % factor || s[2] % factor) throw DimensionError("downsample: image side not divisible by factor");
  out.inputs = resize_inputs(ds.inputs, s[1] / factor, s[2] / factor);
  return out;
}

std::vector<ClientData> resolution_partition(const Dataset& ds, const std::vector<std::size_t>& factors,
                                             std::uint64_t seed, double train_fraction) {
  if (factors.empty()) throw std::invalid_argument("resolution_partition: no factors");
  if (ds.task != Task::Classification) throw std::invalid_argument("resolution_partition needs a classification dataset");
  const std::size_t k = factors.size();
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  // Equal per-class share for every client keeps label distributions identical.
  std::vector<std::vector<std::vector<std::size_t>>> pools(k, std::vector<std::vector<std::size_t>>(ds.num_classes));
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t per = idx.size() / k;
    for (std::size_t client = 0; client < k; ++client) {
      pools[client][c].assign(idx.begin() + static_cast<std::ptrdiff_t>(client * per),
                              idx.begin() + static_cast<std::ptrdiff_t>((client + 1) * per));
    }
  }
  std::vector<ClientData> out;
  for (std::size_t client = 0; client < k; ++client) {
    ClientSplit split;
    for (auto& cls : pools[client]) {
      std::shuffle(cls.begin(), cls.end(), rng);
      const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(cls.size()) * train_fraction));
      split.train.insert(split.train.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_train));
      split.test.insert(split.test.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_train), cls.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    if (split.train.empty() || split.test.empty()) throw std::runtime_error("resolution_partition: pool too small");
    out.push_back({downsample(subset(ds, split.train), factors[client]), downsample(subset(ds, split.test), factors[client]),
                   split.train, split.test, factors[client]});
  }
  return out;
}

namespace {

template <typename T>
void write_raw(const std::filesystem::path& path, const std::vector<T>& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<T> values(count);
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (is.gcount() != static_cast<std::streamsize>(count * sizeof(T))) throw std::runtime_error(path.string() + ": truncated");
  return values;
}

}  // namespace

void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.check();
  std::filesystem::create_directories(dir);
  std::vector<float> x(ds.inputs.data().begin(), ds.inputs.data().end());
  std::vector<std::int32_t> y(ds.labels.begin(), ds.labels.end()), g(ds.groups.begin(), ds.groups.end());
  write_raw(dir / "inputs.f32", x);
  write_raw(dir / "labels.i32", y);
  write_raw(dir / "groups.i32", g);
  nlohmann::json manifest{
      {"name", ds.name},
      {"task", to_string(ds.task)},
      {"num_classes", ds.num_classes},
      {"num_groups", ds.num_groups},
      {"inputs", {{"file", "inputs.f32"}, {"dtype", "f32"}, {"shape", ds.inputs.shape()}}},
      {"labels", {{"file", "labels.i32"}, {"dtype", "i32"}, {"count", ds.labels.size()}}},
      {"groups", {{"file", "groups.i32"}, {"dtype", "i32"}, {"count", ds.groups.size()}}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("missing manifest in " + dir.string());
  const auto m = nlohmann::json::parse(is);
  if (m.at("inputs").at("dtype") != "f32") throw std::runtime_error("unsupported input dtype");
  const auto shape = m.at("inputs").at("shape").get<Shape>();
  if (shape.size() != 4) throw DimensionError("imported inputs must be rank 4");
  const auto xs = read_raw<float>(dir / m.at("inputs").at("file").get<std::string>(), shape_numel(shape));
  const auto ys = read_raw<std::int32_t>(dir / m.at("labels").at("file").get<std::string>(), m.at("labels").at("count").get<std::size_t>());
  const auto gs = read_raw<std::int32_t>(dir / m.at("groups").at("file").get<std::string>(), m.at("groups").at("count").get<std::size_t>());
  Dataset ds{m.at("name").get<std::string>(), task_from_string(m.at("task").get<std::string>()),
             m.at("num_classes").get<std::size_t>(), m.at("num_groups").get<std::size_t>(),
             Tensor(shape, std::vector<real>(xs.begin(), xs.end())), std::vector<int>(ys.begin(), ys.end()),
             std::vector<int>(gs.begin(), gs.end())};
  ds.check();
  return ds;
}

}  // namespace mhflid::data
