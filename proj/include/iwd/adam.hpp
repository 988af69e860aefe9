#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "iwd/errors.hpp"
#include "iwd/tensor.hpp"

namespace iwd {

/// First/second moment state for one parameter group.
struct AdamState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update, in place. `group` names the parameter
/// group in diagnostics.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const std::string& group = "params") {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + group + " has " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers for " + group + " do not match parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalError("adam_step: non-finite gradient in group '" + group + "' at index " + std::to_string(i));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

/// Named trainable tensors; iteration order is lexicographic by name.
using ParameterSet = std::map<std::string, Tensor>;

/// Adam over every tensor of a ParameterSet.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, const std::map<std::string, Tensor>& grads) {
    for (auto& [name, tensor] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) throw ShapeError("adam: missing gradient for parameter group '" + name + "'");
      auto [st, inserted] = states_.try_emplace(name);
      if (inserted) {
        st->second.lr = lr_;
        st->second.beta1 = beta1_;
        st->second.beta2 = beta2_;
        st->second.eps = eps_;
      }
      adam_step(tensor.data(), it->second.data(), st->second, name);
    }
  }

  const std::map<std::string, AdamState>& states() const { return states_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, AdamState> states_;
};

}  // namespace iwd
