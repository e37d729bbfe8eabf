#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctcycle/errors.hpp"
#include "ctcycle/rng.hpp"

namespace ctcycle {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of f32 or f64 scalars. Copies are shallow: a
/// Tensor is a shared handle, so ops can capture inputs in backward closures
/// without duplicating buffers. Values are treated as immutable once an op
/// has produced them; the documented exceptions are optimizer updates and
/// running-stat refreshes, which mutate leaves in place.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(std::vector<T> values, Shape shape, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  /// Gaussian fill; draws in flat index order so initialization is a pure
  /// function of the rng state.
  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->values.size()); }
  std::int64_t extent(std::int64_t axis) const { return impl_->shape[static_cast<std::size_t>(axis)]; }

  std::span<T> values() { return impl_->values; }
  std::span<const T> values() const { return impl_->values; }
  T* data() { return impl_->values.data(); }
  const T* data() const { return impl_->values.data(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on);

  /// Gradient buffer, same extents as values. Allocated zeroed on first use.
  /// Tensor is a shared handle, so grad access is independent of handle
  /// constness, as with shared_ptr.
  std::span<T> grad() const;
  void zero_grad();

  T item() const;
  T at(std::initializer_list<std::int64_t> idx) const;

  /// Value copy that does not participate in gradient computation.
  Tensor detach() const;

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

/// Ordered record of executed differentiable primitives. Each op that sees a
/// grad-requiring input appends its output handle and one adjoint closure
/// during the forward pass; backward() replays the closures in exact reverse
/// execution order, which is a reverse topological order of the forward graph
/// by construction. Closures accumulate (+=) into input gradients, so a
/// tensor consumed k times receives the sum of its k adjoint contributions.
template <typename T>
class Tape {
 public:
  void record(Tensor<T> output, std::function<void()> adjoint) {
    nodes_.push_back({std::move(output), std::move(adjoint)});
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every grad-requiring leaf.
  /// Intermediate (op-produced) gradients restart from zero on each call, so
  /// repeated calls without reset accumulate one full dLoss/dLeaf per call.
  void backward(Tensor<T> loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> output;
    std::function<void()> adjoint;
  };
  std::vector<Node> nodes_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ctcycle
