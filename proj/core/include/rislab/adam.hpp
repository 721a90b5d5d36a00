#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rislab/tensor.hpp"

namespace rislab {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * wd * p
};

/**
 * Adam with bias correction and decoupled weight decay.
 *
 * Moment tensors are keyed by parameter name and created on first use; the
 * shared step counter advances once per adam_step() call.  Parameters absent
 * from the gradient map are left untouched (no decay either) so stages that
 * freeze a head simply omit its gradients.
 */
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return t_; }

  std::map<std::string, RealTensor>& first_moments() { return m_; }
  std::map<std::string, RealTensor>& second_moments() { return v_; }
  const std::map<std::string, RealTensor>& first_moments() const { return m_; }
  const std::map<std::string, RealTensor>& second_moments() const { return v_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

  friend void adam_step(std::map<std::string, RealTensor>& params,
                        const std::map<std::string, RealTensor>& grads,
                        AdamState& state);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, RealTensor> m_;
  std::map<std::string, RealTensor> v_;
};

/**
 * One optimizer step over all parameters that have a gradient entry.
 * Throws std::domain_error naming the parameter if its gradient contains a
 * NaN or Inf, or std::invalid_argument on shape mismatch.
 */
void adam_step(std::map<std::string, RealTensor>& params,
               const std::map<std::string, RealTensor>& grads, AdamState& state);

}  // namespace rislab
