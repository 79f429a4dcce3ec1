#include <algorithm>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <set>

#include "doctest.h"
#include "mhflid/data.hpp"
#include "mhflid/metrics.hpp"
#include "mhflid/zoo.hpp"

using namespace mhflid;

namespace {

bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(real)) == 0;
}

}  // namespace

TEST_CASE("classification labels are balanced within one") {
  for (std::size_t n : {600u, 601u, 97u}) {
    auto ds = data::gen_classification(4, n, 16, 3);
    std::vector<std::size_t> hist(4, 0);
    for (int l : ds.labels) ++hist[std::size_t(l)];
    CHECK(*std::max_element(hist.begin(), hist.end()) - *std::min_element(hist.begin(), hist.end()) <= 1);
    CHECK(ds.inputs.shape() == Shape{n, 3, 16, 16});
    CHECK(ds.groups == ds.labels);
  }
}

TEST_CASE("generators are deterministic under seed") {
  auto a = data::gen_classification(3, 50, 16, 9), b = data::gen_classification(3, 50, 16, 9);
  CHECK(same_tensor(a.inputs, b.inputs));
  CHECK(a.labels == b.labels);
  auto c = data::gen_classification(3, 50, 16, 10);
  CHECK_FALSE(same_tensor(a.inputs, c.inputs));
  auto s1 = data::gen_segmentation(10, 32, 4), s2 = data::gen_segmentation(10, 32, 4);
  CHECK(same_tensor(s1.inputs, s2.inputs));
  CHECK(s1.labels == s2.labels);
}

TEST_CASE("a two block network learns the classification data in five epochs") {
  auto ds = data::gen_classification(3, 600, 16, 1);
  std::vector<std::size_t> train(480), test(120);
  std::iota(train.begin(), train.end(), 0);
  std::iota(test.begin(), test.end(), 480);
  auto tr = data::subset(ds, train), te = data::subset(ds, test);
  Model m = Model::build(zoo::family_spec("TinyConvNet-2", Task::Classification, {3, 16, 16}, 3), 7);
  Optimizer opt(m.trainable_tensors(), {OptimizerKind::Adam, 1e-3});
  std::mt19937_64 rng(3);
  for (int epoch = 0; epoch < 5; ++epoch) {
    for (const auto& idx : data::epoch_batches(tr.size(), 8, rng)) {
      auto batch = data::make_batch(tr, idx);
      opt.zero_grad();
      ops::cross_entropy(m.forward(batch.inputs), batch.labels).backward();
      opt.step();
    }
  }
  m.set_training(false);
  NoGradGuard guard;
  auto batch = data::whole(te);
  const double acc = metrics::accuracy(metrics::argmax_classes(m.forward(batch.inputs)), batch.labels);
  MESSAGE("held-out accuracy " << acc);
  CHECK(acc > 0.8);
}

TEST_CASE("segmentation masks are nonempty with a moderate foreground") {
  auto ds = data::gen_segmentation(64, 32, 2);
  CHECK(ds.labels.size() == 64u * 32 * 32);
  CHECK(ds.num_groups == 4);
  double fraction = 0.0;
  for (std::size_t s = 0; s < 64; ++s) {
    std::span<const int> mask(ds.labels.data() + s * 1024, 1024);
    const auto fg = std::count(mask.begin(), mask.end(), 1);
    CHECK(fg > 0);
    fraction += double(fg) / 1024.0 / 64.0;
    CHECK(metrics::dice_coefficient(mask, mask) == 1.0);
  }
  MESSAGE("mean foreground fraction " << fraction);
  CHECK(fraction >= 0.05);
  CHECK(fraction <= 0.5);
}

TEST_CASE("dirichlet partition is disjoint and exhaustive") {
  auto ds = data::gen_classification(3, 600, 8, 1);
  auto part = data::dirichlet_partition(ds, 4, 0.3, 5);
  REQUIRE(part.size() == 4);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& split : part) {
    CHECK(split.train.size() >= 8);
    CHECK(split.test.size() >= 8);
    for (auto i : split.train) seen.insert(i);
    for (auto i : split.test) seen.insert(i);
    total += split.train.size() + split.test.size();
    const double frac = double(split.train.size()) / double(split.train.size() + split.test.size());
    CHECK(frac == doctest::Approx(0.8).epsilon(0.05));
  }
  CHECK(total == 600);
  CHECK(seen.size() == 600);
  auto counts = data::group_counts(ds, part);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::accumulate(counts[k].begin(), counts[k].end(), std::size_t(0)) == part[k].train.size() + part[k].test.size());
  }
  auto again = data::dirichlet_partition(ds, 4, 0.3, 5);
  for (std::size_t k = 0; k < 4; ++k) CHECK(again[k].train == part[k].train);
}

TEST_CASE("large alpha approaches a uniform class mix") {
  auto ds = data::gen_classification(3, 600, 8, 1);
  // Chi-square independence of client x class, df = (4-1)(3-1) = 6, critical value at p = 0.01.
  const double critical = 16.812;
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto counts = data::group_counts(ds, data::dirichlet_partition(ds, 4, 1e6, seed));
    std::vector<double> row(4, 0), col(3, 0);
    double n = 0;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t c = 0; c < 3; ++c) row[k] += double(counts[k][c]), col[c] += double(counts[k][c]), n += double(counts[k][c]);
    double chi2 = 0;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t c = 0; c < 3; ++c) {
        const double e = row[k] * col[c] / n;
        chi2 += (double(counts[k][c]) - e) * (double(counts[k][c]) - e) / e;
      }
    passes += chi2 < critical;
  }
  CHECK(passes == 10);
}

TEST_CASE("small alpha gives dominant classes") {
  auto ds = data::gen_classification(3, 600, 8, 1);
  std::size_t dominated = 0, clients = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto counts = data::group_counts(ds, data::dirichlet_partition(ds, 4, 0.1, seed));
    for (const auto& row : counts) {
      const auto total = std::accumulate(row.begin(), row.end(), std::size_t(0));
      dominated += 2 * *std::max_element(row.begin(), row.end()) > total;
      ++clients;
    }
  }
  MESSAGE(dominated << " of " << clients << " clients dominated");
  CHECK(2 * dominated >= clients);
}

TEST_CASE("impossible partitions fail explicitly") {
  auto ds = data::gen_classification(3, 40, 8, 1);
  CHECK_THROWS(data::dirichlet_partition(ds, 8, 0.3, 1, {0.8, 8, 20}));
}

TEST_CASE("resolution partition") {
  auto ds = data::gen_classification(4, 640, 32, 2);
  auto clients = data::resolution_partition(ds, {1, 2, 4, 8}, 3);
  REQUIRE(clients.size() == 4);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  const std::size_t sides[] = {32, 16, 8, 4};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& c = clients[k];
    CHECK(c.train.sample_shape() == std::array<std::size_t, 3>{3, sides[k], sides[k]});
    CHECK(c.train.size() + c.test.size() == 160);
    CHECK(c.train.size() == 112);
    for (auto i : c.source_train) seen.insert(i);
    for (auto i : c.source_test) seen.insert(i);
    total += c.source_train.size() + c.source_test.size();
    std::vector<std::size_t> hist(4, 0);
    for (int l : c.train.labels) ++hist[std::size_t(l)];
    for (int l : c.test.labels) ++hist[std::size_t(l)];
    CHECK(hist == std::vector<std::size_t>(4, 40));
  }
  CHECK(seen.size() == total);
  // Factor 1 keeps the source images.
  auto first = data::subset(ds, clients[0].source_train);
  CHECK(same_tensor(first.inputs, clients[0].train.inputs));
}

TEST_CASE("downsampling a constant image keeps the constant") {
  data::Dataset ds;
  ds.task = Task::Classification;
  ds.num_classes = 2;
  ds.num_groups = 2;
  ds.inputs = Tensor::full({2, 3, 16, 16}, 0.375f);
  ds.labels = {0, 1};
  ds.groups = {0, 1};
  auto half = data::downsample(ds, 2);
  CHECK(half.sample_shape() == std::array<std::size_t, 3>{3, 8, 8});
  for (real v : half.inputs.data()) CHECK(v == 0.375f);
  auto eighth = data::downsample(ds, 8);
  CHECK(eighth.sample_shape() == std::array<std::size_t, 3>{3, 2, 2});
}

TEST_CASE("resize averages blocks and replicates pixels") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor small = data::resize_inputs(x, 1, 1);
  CHECK(small.data()[0] == doctest::Approx(2.5));
  Tensor big = data::resize_inputs(x, 4, 4);
  CHECK(big.data()[0] == 1);
  CHECK(big.data()[1] == 1);
  CHECK(big.data()[3] == 2);
  CHECK(big.data()[15] == 4);
}

TEST_CASE("epoch batches cover every index and never end with a single sample") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {1u, 2u, 9u, 16u, 17u, 33u}) {
    auto batches = data::epoch_batches(n, 8, rng);
    std::vector<std::size_t> all;
    for (const auto& b : batches) {
      all.insert(all.end(), b.begin(), b.end());
      if (n > 1) CHECK(b.size() >= 2);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> want(n);
    std::iota(want.begin(), want.end(), 0);
    CHECK(all == want);
  }
}

TEST_CASE("export and import round trip") {
  auto dir = std::filesystem::temp_directory_path() / "mhflid_dataset_roundtrip";
  std::filesystem::remove_all(dir);
  auto ds = data::gen_segmentation(5, 16, 8);
  data::export_dataset(ds, dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  auto back = data::import_dataset(dir);
  CHECK(back.name == ds.name);
  CHECK(back.task == ds.task);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.labels == ds.labels);
  CHECK(back.groups == ds.groups);
  CHECK(same_tensor(back.inputs, ds.inputs));
  std::filesystem::remove_all(dir);
}
