#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ctcycle/tensor.hpp"

namespace ctcycle {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update over a flat parameter buffer; t counts
/// steps from 1.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
               std::int64_t t, const AdamConfig& config);

/// Adam over a fixed list of parameter tensors. Moments are stored per
/// parameter in registration order; the update consumes each tensor's grad
/// buffer in place.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamConfig config);

  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t t) { step_count_ = t; }

  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  std::vector<Tensor<T>> params_, m_, v_;
  AdamConfig config_;
  std::int64_t step_count_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace ctcycle
