#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "affect/graph.hpp"
#include "affect/init.hpp"
#include "affect/tensor.hpp"

namespace affect {

// RMSProp: v <- gamma*v + (1-gamma)*g^2,  theta <- theta - lr*g/sqrt(v+eps).
// Accumulators are keyed by parameter name so they serialize with the
// checkpoint and survive a save/load round trip.
class RmsProp {
 public:
  static constexpr real kGamma = 0.9;
  static constexpr real kEps = 1e-8;

  void step(const ParamMap& params, const Graph& graph, real lr) {
    for (const auto& [name, tensor] : params) {
      const Tensor* grad = graph.grad_for(*tensor);
      if (!grad) continue;  // no gradient reached this parameter
      if (grad->shape() != tensor->shape())
        throw ShapeError("rmsprop: gradient shape " + shape_str(grad->shape()) +
                         " does not match parameter " + name);
      Tensor& v = accumulator(name, tensor->shape());
      for (std::size_t i = 0; i < tensor->numel(); ++i) {
        const real g = (*grad)[i];
        v[i] = kGamma * v[i] + (1.0 - kGamma) * g * g;
        (*tensor)[i] -= lr * g / std::sqrt(v[i] + kEps);
      }
    }
  }

  const std::map<std::string, Tensor>& state() const { return state_; }

  void load_state(std::map<std::string, Tensor> s) { state_ = std::move(s); }

 private:
  Tensor& accumulator(const std::string& name, const Shape& shape) {
    auto it = state_.find(name);
    if (it == state_.end()) it = state_.emplace(name, Tensor(shape)).first;
    else if (it->second.shape() != shape)
      throw ShapeError("rmsprop state for " + name + " has stale shape");
    return it->second;
  }

  std::map<std::string, Tensor> state_;
};

// Replays the plateau rule over a per-epoch loss history: when the best loss
// fails to improve by min_delta for `patience` consecutive epochs the rate
// drops tenfold, at most twice, with the streak reset after each drop.
inline real plateau_lr(const std::vector<real>& history, real initial_lr, int patience,
                       real min_delta) {
  if (history.empty()) throw ValueError("plateau_lr: empty loss history");
  if (patience < 1) throw ValueError("plateau_lr: patience must be >= 1");
  real lr = initial_lr;
  real best = history[0];
  int bad = 0, reductions = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < best - min_delta) {
      best = history[i];
      bad = 0;
      continue;
    }
    ++bad;
    if (bad >= patience && reductions < 2) {
      lr /= 10.0;
      ++reductions;
      bad = 0;
    }
  }
  return lr;
}

}  // namespace affect
