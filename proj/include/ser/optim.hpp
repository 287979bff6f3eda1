#pragma once

#include "ser/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ser {

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConstants&) const = default;
};

template <typename Scalar>
struct OptimizerState {
  std::vector<typename Tensor<Scalar>::Array> m;
  std::vector<typename Tensor<Scalar>::Array> v;
  std::int64_t t = 0;
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer_state(std::span<const Tensor<Scalar>> params);

/// One Adam update with decoupled weight decay, reading each parameter's
/// accumulated gradient (absent gradient = zero):
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>> params, OptimizerState<Scalar>& state, double lr, double weight_decay,
               const AdamConstants& constants = {});

/// eta_min + (lr0 - eta_min)(1 + cos(pi t / t_max)) / 2.
double cosine_lr(int epoch, int t_max, double lr0, double eta_min = 0.0);

}  // namespace ser
