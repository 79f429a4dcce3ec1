#include "mhflid/fusion.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mhflid/ops.hpp"

namespace mhflid {

std::string to_string(FusionRole role) { return role == FusionRole::Receiver ? "receiver" : "transmitter"; }

Fusion Fusion::build(FusionRole role, std::size_t local_dim, std::size_t messenger_dim, std::uint64_t seed) {
  if (local_dim == 0 || messenger_dim == 0) throw DimensionError("fusion dimensions must be positive");
  Fusion f;
  f.role_ = role;
  f.local_dim_ = local_dim;
  f.messenger_dim_ = messenger_dim;
  std::mt19937_64 rng(seed);
  const std::string prefix = "fusion." + to_string(role) + ".";
  auto make = [&](const char* name, std::size_t out, std::size_t in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<real> w(out * in);
    for (auto& v : w) v = static_cast<real>(dist(rng));
    f.params_.push_back({prefix + name, Tensor({out, in}, std::move(w), true), true});
  };
  make("w_d", messenger_dim, local_dim);
  make("w_q", messenger_dim, messenger_dim);
  make("w_k", messenger_dim, messenger_dim);
  make("w_v", messenger_dim, messenger_dim);
  return f;
}

Tensor Fusion::adapt(const Tensor& local_tokens) const {
  if (local_tokens.rank() != 3 || local_tokens.dim(2) != local_dim_) {
    throw DimensionError("fusion adapt: expected [N x T x " + std::to_string(local_dim_) + "] tokens, got " +
                         shape_str(local_tokens.shape()));
  }
  return ops::linear(local_tokens, w_d(), Tensor());
}

namespace {

void check_pair(const Tensor& local_tokens, const Tensor& messenger_tokens, std::size_t messenger_dim) {
  if (messenger_tokens.rank() != 3 || messenger_tokens.dim(2) != messenger_dim) {
    throw DimensionError("fusion: expected messenger tokens [N x T x " + std::to_string(messenger_dim) + "], got " +
                         shape_str(messenger_tokens.shape()));
  }
  if (local_tokens.dim(0) != messenger_tokens.dim(0)) throw DimensionError("fusion: batch sizes differ");
}

// Mean-pools `tokens` to `count` tokens (identity when counts already match).
Tensor pool_tokens(const Tensor& tokens, std::size_t count) {
  if (tokens.dim(1) == count) return tokens;
  return ops::repeat_tokens(ops::mean_tokens(tokens), count);
}

}  // namespace

Fusion::Result Fusion::forward(const Tensor& local_tokens, const Tensor& messenger_tokens) const {
  const Tensor local = adapt(local_tokens);
  check_pair(local, messenger_tokens, messenger_dim_);
  const Tensor& query_src = role_ == FusionRole::Receiver ? messenger_tokens : local;
  const Tensor& kv_src = role_ == FusionRole::Receiver ? local : messenger_tokens;
  Tensor q = ops::linear(query_src, w_q(), Tensor());
  Tensor k = ops::linear(kv_src, w_k(), Tensor());
  Tensor v = ops::linear(kv_src, w_v(), Tensor());
  Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), real(1.0 / std::sqrt(static_cast<double>(messenger_dim_))));
  for (auto s : scores.data()) {
    if (!std::isfinite(s)) throw std::domain_error("fusion: non-finite attention score");
  }
  Tensor attention = ops::softmax(scores, -1);
  return {ops::matmul(attention, v), attention};
}

Tensor Fusion::feature_add(const Tensor& local_tokens, const Tensor& messenger_tokens) const {
  const Tensor local = adapt(local_tokens);
  check_pair(local, messenger_tokens, messenger_dim_);
  if (role_ == FusionRole::Receiver) return ops::add(messenger_tokens, pool_tokens(local, messenger_tokens.dim(1)));
  return ops::add(local, pool_tokens(messenger_tokens, local.dim(1)));
}

std::vector<Tensor> Fusion::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

void Fusion::set_frozen(bool frozen) {
  for (auto& p : params_) {
    p.tensor.set_requires_grad(!frozen);
    if (frozen) p.tensor.clear_grad();
  }
}

std::size_t Fusion::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace mhflid
