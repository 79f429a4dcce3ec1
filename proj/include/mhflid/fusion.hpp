#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mhflid/optim.hpp"
#include "mhflid/tensor.hpp"

namespace mhflid {

enum class FusionRole { Receiver, Transmitter };

/// Client-private single-head cross-attention between local body tokens
/// [N x T_l x D_loc] and messenger body tokens [N x T_m x D_mes].
///
/// Receiver:    Q = W_q(I_mes),  K = W_k(I'_loc), V = W_v(I'_loc)  -> T_m tokens
/// Transmitter: Q = W_q(I'_loc), K = W_k(I_mes),  V = W_v(I_mes)   -> T_l tokens
/// with I'_loc = W_d(I_loc) and M = softmax(Q K^T / sqrt(D_mes)) row-wise.
///
/// Projections are bias-free. Parameters are named "fusion.<role>.<proj>"
/// and never leave the client.
class Fusion {
 public:
  struct Result {
    Tensor output;
    Tensor attention;  // [N x T_q x T_k]; undefined in feature-add mode
  };

  static Fusion build(FusionRole role, std::size_t local_dim, std::size_t messenger_dim, std::uint64_t seed);

  Fusion() = default;
  Fusion(Fusion&&) = default;
  Fusion& operator=(Fusion&&) = default;
  Fusion(const Fusion&) = delete;
  Fusion& operator=(const Fusion&) = delete;

  FusionRole role() const { return role_; }
  std::size_t local_dim() const { return local_dim_; }
  std::size_t messenger_dim() const { return messenger_dim_; }

  /// Per-token W_d: D_loc -> D_mes.
  Tensor adapt(const Tensor& local_tokens) const;
  Result forward(const Tensor& local_tokens, const Tensor& messenger_tokens) const;
  /// Ablation: pools the other side to this role's token count and adds.
  Tensor feature_add(const Tensor& local_tokens, const Tensor& messenger_tokens) const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Tensor> trainable_tensors() const;
  void set_frozen(bool frozen);
  std::size_t param_count() const;

  const Tensor& w_d() const { return params_[0].tensor; }
  const Tensor& w_q() const { return params_[1].tensor; }
  const Tensor& w_k() const { return params_[2].tensor; }
  const Tensor& w_v() const { return params_[3].tensor; }

 private:
  FusionRole role_ = FusionRole::Receiver;
  std::size_t local_dim_ = 0, messenger_dim_ = 0;
  std::vector<Parameter> params_;
};

std::string to_string(FusionRole role);

}  // namespace mhflid
