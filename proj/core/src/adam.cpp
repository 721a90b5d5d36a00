#include "rislab/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rislab {

void adam_step(std::map<std::string, RealTensor>& params,
               const std::map<std::string, RealTensor>& grads, AdamState& state) {
  const AdamConfig& c = state.cfg_;
  if (c.lr <= 0.0 || c.beta1 <= 0.0 || c.beta2 <= 0.0 || c.eps <= 0.0 ||
      c.beta1 >= 1.0 || c.beta2 >= 1.0 || c.weight_decay < 0.0) {
    throw std::invalid_argument("adam_step: hyperparameters out of range");
  }
  state.t_ += 1;
  const double t = static_cast<double>(state.t_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) {
      throw std::invalid_argument("adam_step: gradient for unknown parameter '" +
                                  name + "'");
    }
    RealTensor& p = pit->second;
    if (!p.same_shape(g)) {
      throw std::invalid_argument("adam_step: shape mismatch for '" + name +
                                  "': param " + p.shape_str() + " vs grad " +
                                  g.shape_str());
    }
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (!std::isfinite(g[i])) {
        throw std::domain_error("adam_step: non-finite gradient in parameter '" +
                                name + "'");
      }
    }
    RealTensor& m = state.m_.try_emplace(name, p.rows(), p.cols(), 0.0).first->second;
    RealTensor& v = state.v_.try_emplace(name, p.rows(), p.cols(), 0.0).first->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p[i]);
    }
  }
}

}  // namespace rislab
