#include "ctcycle/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace ctcycle {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  check_shape_valid(shape);
  auto impl = std::make_shared<Impl>();
  impl->values.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = value;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<T> values, Shape shape, bool requires_grad) {
  check_shape_valid(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({value}, {1}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, double mean, double stddev,
                           bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (impl_->grad.size() != impl_->values.size()) {
    impl_->grad.assign(impl_->values.size(), T(0));
  }
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.assign(impl_->values.size(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() requires a single-element tensor, shape is " + shape_str(shape()));
  return impl_->values[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<std::int64_t>(idx.size()) != rank()) {
    throw ShapeError("index rank mismatch");
  }
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : idx) {
    const auto e = impl_->shape[k];
    if (i < 0 || i >= e) throw ShapeError("index out of bounds");
    flat = flat * e + i;
    ++k;
  }
  return impl_->values[static_cast<std::size_t>(flat)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor::from(std::vector<T>(impl_->values.begin(), impl_->values.end()),
                      impl_->shape, false);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const auto v : impl_->values) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename T>
void Tape<T>::backward(Tensor<T> loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, shape is " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ValidationError("backward() on a loss that does not require gradients");
  }
  for (auto& node : nodes_) node.output.zero_grad();
  loss.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->adjoint();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace ctcycle
