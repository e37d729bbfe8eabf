#include <algorithm>
#include <cmath>
#include <cstring>

#include "ctcycle/tensor_ops.hpp"

namespace ctcycle {

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

template <typename T>
bool wants_grad(Tape<T>* tape, const Tensor<T>& a) {
  return tape != nullptr && a.requires_grad();
}

template <typename T>
bool wants_grad(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

}  // namespace

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(what) + ": non-finite value encountered");
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_same_shape(a, b, "add");
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out]() {
      auto og = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_same_shape(a, b, "sub");
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out]() {
      auto og = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) gb[i] -= og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_same_shape(a, b, "mul");
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out]() {
      auto og = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        const T* pb2 = b.data();
        for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * pb2[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const T* pa2 = a.data();
        for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i] * pa2[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = factor * pa[i];
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, factor]() {
      auto og = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += factor * og[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + value;
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      auto og = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> square(const Tensor<T>& a, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pa[i];
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      auto og = out.grad();
      auto ga = a.grad();
      const T* pa2 = a.data();
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += T(2) * pa2[i] * og[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] < T(0) ? -pa[i] : pa[i];
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      auto og = out.grad();
      auto ga = a.grad();
      const T* pa2 = a.data();
      for (std::size_t i = 0; i < og.size(); ++i) {
        const T s = pa2[i] > T(0) ? T(1) : (pa2[i] < T(0) ? T(-1) : T(0));
        ga[i] += s * og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      auto og = out.grad();
      auto ga = a.grad();
      const T* pa2 = a.data();
      for (std::size_t i = 0; i < og.size(); ++i) {
        if (pa2[i] > T(0)) ga[i] += og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : slope * pa[i];
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, slope]() {
      auto og = out.grad();
      auto ga = a.grad();
      const T* pa2 = a.data();
      for (std::size_t i = 0; i < og.size(); ++i) {
        ga[i] += (pa2[i] > T(0) ? T(1) : slope) * og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a, Tape<T>* tape) {
  auto out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.size();
  const T* pa = a.data();
  T* po = out.data();
  const double inv_sqrt2 = 0.7071067811865475244;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(pa[i]);
    po[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
  }
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      auto og = out.grad();
      auto ga = a.grad();
      const T* pa2 = a.data();
      const double inv_sqrt2pi = 0.3989422804014326779;
      const double inv_sqrt2l = 0.7071067811865475244;
      for (std::size_t i = 0; i < og.size(); ++i) {
        const double x = static_cast<double>(pa2[i]);
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2l));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        ga[i] += static_cast<T>((cdf + x * pdf)) * og[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a, Tape<T>* tape) {
  T s = T(0);
  const T* pa = a.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) s += pa[i];
  auto out = Tensor<T>::scalar(s);
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      const T g = out.grad()[0];
      auto ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a, Tape<T>* tape) {
  T s = T(0);
  const T* pa = a.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) s += pa[i];
  const T inv = T(1) / static_cast<T>(n);
  auto out = Tensor<T>::scalar(s * inv);
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, inv]() {
      const T g = out.grad()[0] * inv;
      auto ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape, Tape<T>* tape) {
  if (shape_numel(new_shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  }
  auto out = Tensor<T>::from(std::vector<T>(a.values().begin(), a.values().end()),
                             std::move(new_shape));
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out]() {
      auto og = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::int64_t axis, Tape<T>* tape) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<std::int64_t>(first.size())) {
    throw ShapeError("concat: invalid axis");
  }
  Shape out_shape = first;
  std::int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (std::int64_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != first[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: extent mismatch off the concat axis");
      }
    }
    axis_total += p.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;
  auto out = Tensor<T>::zeros(out_shape);

  // outer = product of extents before axis, inner = product after.
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < static_cast<std::int64_t>(first.size()); ++d) {
    inner *= first[static_cast<std::size_t>(d)];
  }

  std::vector<std::int64_t> offsets(parts.size());
  {
    std::int64_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = off;
      off += parts[p].extent(axis);
    }
  }
  T* po = out.data();
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].data();
    const std::int64_t e = parts[p].extent(axis);
    for (std::int64_t o = 0; o < outer; ++o) {
      T* dst = po + (o * axis_total + offsets[p]) * inner;
      std::memcpy(dst, src + o * e * inner, static_cast<std::size_t>(e * inner) * sizeof(T));
    }
  }

  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> held(parts.begin(), parts.end());
    tape->record(out, [held, out, offsets, outer, inner, axis_total]() {
      auto og = out.grad();
      for (std::size_t p = 0; p < held.size(); ++p) {
        if (!held[p].requires_grad()) continue;
        auto gp = held[p].grad();
        const std::int64_t e = held[p].size() / (outer * inner);
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* gsrc = og.data() + (o * axis_total + offsets[p]) * inner;
          T* gdst = gp.data() + o * e * inner;
          for (std::int64_t i = 0; i < e * inner; ++i) gdst[i] += gsrc[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_batch(const Tensor<T>& a, std::int64_t n, Tape<T>* tape) {
  if (a.rank() < 2) throw ShapeError("select_batch: rank must be >= 2");
  const std::int64_t batch = a.extent(0);
  if (n < 0 || n >= batch) throw ShapeError("select_batch: index out of range");
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  const std::int64_t stride = shape_numel(out_shape);
  std::vector<T> vals(a.values().begin() + n * stride, a.values().begin() + (n + 1) * stride);
  auto out = Tensor<T>::from(std::move(vals), std::move(out_shape));
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, n, stride]() {
      auto og = out.grad();
      auto ga = a.grad();
      T* dst = ga.data() + n * stride;
      for (std::int64_t i = 0; i < stride; ++i) dst[i] += og[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts, Tape<T>* tape) {
  if (parts.empty()) throw ShapeError("stack_batch: no inputs");
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) throw ShapeError("stack_batch: shape mismatch");
  }
  Shape out_shape;
  out_shape.push_back(static_cast<std::int64_t>(parts.size()));
  out_shape.insert(out_shape.end(), parts[0].shape().begin(), parts[0].shape().end());
  auto out = Tensor<T>::zeros(out_shape);
  const std::int64_t stride = parts[0].size();
  T* po = out.data();
  for (std::size_t p = 0; p < parts.size(); ++p) {
    std::memcpy(po + static_cast<std::int64_t>(p) * stride, parts[p].data(),
                static_cast<std::size_t>(stride) * sizeof(T));
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> held(parts.begin(), parts.end());
    tape->record(out, [held, out, stride]() {
      auto og = out.grad();
      for (std::size_t p = 0; p < held.size(); ++p) {
        if (!held[p].requires_grad()) continue;
        auto gp = held[p].grad();
        const T* gsrc = og.data() + static_cast<std::int64_t>(p) * stride;
        for (std::int64_t i = 0; i < stride; ++i) gp[static_cast<std::size_t>(i)] += gsrc[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> tokens_from_chw(const Tensor<T>& a, Tape<T>* tape) {
  if (a.rank() != 3) throw ShapeError("tokens_from_chw: expected [C,h,w], got " + shape_str(a.shape()));
  const std::int64_t c = a.extent(0), h = a.extent(1), w = a.extent(2);
  auto out = Tensor<T>::zeros({h * w, c});
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t t = 0; t < h * w; ++t) po[t * c + ch] = pa[ch * h * w + t];
  }
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, c, h, w]() {
      auto og = out.grad();
      auto ga = a.grad();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t t = 0; t < h * w; ++t) {
          ga[static_cast<std::size_t>(ch * h * w + t)] += og[static_cast<std::size_t>(t * c + ch)];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> chw_from_tokens(const Tensor<T>& a, std::int64_t h, std::int64_t w, Tape<T>* tape) {
  if (a.rank() != 2) throw ShapeError("chw_from_tokens: expected [n,C]");
  if (a.extent(0) != h * w) {
    throw ShapeError("chw_from_tokens: token count " + std::to_string(a.extent(0)) +
                     " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::int64_t c = a.extent(1);
  auto out = Tensor<T>::zeros({c, h, w});
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t t = 0; t < h * w; ++t) po[ch * h * w + t] = pa[t * c + ch];
  }
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, c, h, w]() {
      auto og = out.grad();
      auto ga = a.grad();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t t = 0; t < h * w; ++t) {
          ga[static_cast<std::size_t>(t * c + ch)] += og[static_cast<std::size_t>(ch * h * w + t)];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: expects rank-2 tensors");
  const std::int64_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  require_finite(a, "matmul lhs");
  require_finite(b, "matmul rhs");
  auto out = Tensor<T>::zeros({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  // ikj order: each output element accumulates over k in ascending order.
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T av = pa[i * k + kk];
      const T* brow = pb + kk * n;
      T* orow = po + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record(out, [a, b, out, m, k, n]() {
      auto og = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        const T* pb2 = b.data();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            T acc = T(0);
            const T* grow = og.data() + i * n;
            const T* brow = pb2 + kk * n;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<std::size_t>(i * k + kk)] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const T* pa2 = a.data();
        for (std::int64_t kk = 0; kk < k; ++kk) {
          for (std::int64_t i = 0; i < m; ++i) {
            const T av = pa2[i * k + kk];
            const T* grow = og.data() + i * n;
            T* gbrow = gb.data() + kk * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a, Tape<T>* tape) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expects rank-2 tensor");
  const std::int64_t m = a.extent(0), n = a.extent(1);
  auto out = Tensor<T>::zeros({n, m});
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
  }
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, m, n]() {
      auto og = out.grad();
      auto ga = a.grad();
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          ga[static_cast<std::size_t>(i * n + j)] += og[static_cast<std::size_t>(j * m + i)];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::int64_t axis, Tape<T>* tape) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax: invalid axis");
  require_finite(a, "softmax input");
  const auto& shape = a.shape();
  std::int64_t outer = 1, inner = 1;
  const std::int64_t e = shape[static_cast<std::size_t>(axis)];
  for (std::int64_t d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < a.rank(); ++d) inner *= shape[static_cast<std::size_t>(d)];

  auto out = Tensor<T>::zeros(shape);
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * e * inner + in;
      T mx = pa[base];
      for (std::int64_t j = 1; j < e; ++j) mx = std::max(mx, pa[base + j * inner]);
      T denom = T(0);
      for (std::int64_t j = 0; j < e; ++j) {
        const T ev = std::exp(pa[base + j * inner] - mx);
        po[base + j * inner] = ev;
        denom += ev;
      }
      const T inv = T(1) / denom;
      for (std::int64_t j = 0; j < e; ++j) po[base + j * inner] *= inv;
    }
  }
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    tape->record(out, [a, out, outer, inner, e]() {
      auto og = out.grad();
      auto ga = a.grad();
      const T* so = out.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * e * inner + in;
          T dot = T(0);
          for (std::int64_t j = 0; j < e; ++j) {
            dot += og[static_cast<std::size_t>(base + j * inner)] * so[base + j * inner];
          }
          for (std::int64_t j = 0; j < e; ++j) {
            const std::int64_t idx = base + j * inner;
            ga[static_cast<std::size_t>(idx)] +=
                so[idx] * (og[static_cast<std::size_t>(idx)] - dot);
          }
        }
      }
    });
  }
  return out;
}

#define CTCYCLE_INSTANTIATE_BASIC(T)                                                         \
  template void require_finite<T>(const Tensor<T>&, const char*);                            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                   \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                   \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                   \
  template Tensor<T> scale<T>(const Tensor<T>&, T, Tape<T>*);                                \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T, Tape<T>*);                           \
  template Tensor<T> square<T>(const Tensor<T>&, Tape<T>*);                                  \
  template Tensor<T> abs<T>(const Tensor<T>&, Tape<T>*);                                     \
  template Tensor<T> relu<T>(const Tensor<T>&, Tape<T>*);                                    \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T, Tape<T>*);                           \
  template Tensor<T> gelu<T>(const Tensor<T>&, Tape<T>*);                                    \
  template Tensor<T> sum_all<T>(const Tensor<T>&, Tape<T>*);                                 \
  template Tensor<T> mean_all<T>(const Tensor<T>&, Tape<T>*);                                \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape, Tape<T>*);                          \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, std::int64_t, Tape<T>*);          \
  template Tensor<T> select_batch<T>(const Tensor<T>&, std::int64_t, Tape<T>*);              \
  template Tensor<T> stack_batch<T>(std::span<const Tensor<T>>, Tape<T>*);                   \
  template Tensor<T> tokens_from_chw<T>(const Tensor<T>&, Tape<T>*);                         \
  template Tensor<T> chw_from_tokens<T>(const Tensor<T>&, std::int64_t, std::int64_t,        \
                                        Tape<T>*);                                           \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                \
  template Tensor<T> transpose2d<T>(const Tensor<T>&, Tape<T>*);                             \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::int64_t, Tape<T>*);

CTCYCLE_INSTANTIATE_BASIC(float)
CTCYCLE_INSTANTIATE_BASIC(double)

#undef CTCYCLE_INSTANTIATE_BASIC

}  // namespace ctcycle
