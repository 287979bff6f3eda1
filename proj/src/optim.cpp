#include "ser/optim.hpp"

#include <cmath>
#include <numbers>

namespace ser {

template <typename S>
OptimizerState<S> make_optimizer_state(std::span<const Tensor<S>> params) {
  OptimizerState<S> state;
  for (const auto& p : params) {
    state.m.push_back(Tensor<S>::Array::Zero(p.size()));
    state.v.push_back(Tensor<S>::Array::Zero(p.size()));
  }
  return state;
}

template <typename S>
void adam_step(std::span<Tensor<S>> params, OptimizerState<S>& state, double lr, double weight_decay,
               const AdamConstants& c) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state tracks " + std::to_string(state.m.size()) +
                                              " tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size())
      throw Error(ErrorCode::ShapeMismatch, "optimizer state shape differs for parameter " + std::to_string(i));
  if (!(lr > 0.0)) throw Error(ErrorCode::ConfigError, "learning rate must be positive");

  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const S b1 = static_cast<S>(c.beta1), b2 = static_cast<S>(c.beta2);
  const S step = static_cast<S>(lr);
  const S decay = static_cast<S>(1.0 - lr * weight_decay);
  const S eps = static_cast<S>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (params[i].has_grad()) {
      const auto g = params[i].grad();
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    const auto m_hat = m / static_cast<S>(bc1);
    const auto v_hat = v / static_cast<S>(bc2);
    theta = theta * decay - step * m_hat / (v_hat.sqrt() + eps);
  }
}

double cosine_lr(int epoch, int t_max, double lr0, double eta_min) {
  if (t_max <= 0 || epoch < 0 || epoch > t_max)
    throw Error(ErrorCode::ConfigError, "cosine_lr needs 0 <= epoch <= t_max");
  return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * epoch / t_max));
}

template OptimizerState<float> make_optimizer_state(std::span<const Tensor<float>>);
template OptimizerState<double> make_optimizer_state(std::span<const Tensor<double>>);
template void adam_step(std::span<Tensor<float>>, OptimizerState<float>&, double, double, const AdamConstants&);
template void adam_step(std::span<Tensor<double>>, OptimizerState<double>&, double, double, const AdamConstants&);

}  // namespace ser
