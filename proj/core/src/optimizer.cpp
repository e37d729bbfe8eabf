#include "ctcycle/optimizer.hpp"

#include <cmath>

namespace ctcycle {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
               std::int64_t t, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size()) {
    throw ShapeError("adam_step: buffer sizes disagree");
  }
  if (t < 1) throw ValidationError("adam_step: step count must be >= 1");
  const double b1 = config.beta1, b2 = config.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double lr = config.learning_rate;
  const double eps = config.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
    const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / corr1;
    const double v_hat = vi / corr2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) -
                               lr * m_hat / (std::sqrt(v_hat) + eps));
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor<T>::zeros(p.shape()));
    v_.push_back(Tensor<T>::zeros(p.shape()));
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_count_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step<T>(params_[i].values(), params_[i].grad(), m_[i].values(), v_[i].values(),
                 step_count_, config_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template void adam_step<float>(std::span<float>, std::span<const float>, std::span<float>,
                               std::span<float>, std::int64_t, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, std::span<double>,
                                std::span<double>, std::int64_t, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace ctcycle
