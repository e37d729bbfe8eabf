#include <cmath>
#include <vector>

#include "ctcycle/tensor_ops.hpp"

namespace ctcycle {

namespace {

template <typename T>
struct NormDims {
  std::int64_t n, c, spatial;
};

template <typename T>
NormDims<T> norm_dims(const Tensor<T>& input, const char* op) {
  if (input.rank() == 4) {
    return {input.extent(0), input.extent(1), input.extent(2) * input.extent(3)};
  }
  if (input.rank() == 3) {
    return {1, input.extent(0), input.extent(1) * input.extent(2)};
  }
  throw ShapeError(std::string(op) + ": input must be [C,H,W] or [N,C,H,W], got " +
                   shape_str(input.shape()));
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, NormMode mode,
                     T momentum, T epsilon, bool update_running, Tape<T>* tape) {
  const auto dims = norm_dims(input, "batch_norm");
  const std::int64_t n = dims.n, c = dims.c, sp = dims.spatial;
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("batch_norm: gamma/beta length must equal channel count " + std::to_string(c));
  }
  if (running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batch_norm: running stats length must equal channel count");
  }
  require_finite(input, "batch_norm input");

  const std::int64_t m = n * sp;  // elements per channel
  if (mode == NormMode::Train && m < 2) {
    throw ValidationError("batch_norm: train mode needs at least 2 elements per channel");
  }

  // Per-channel mean and inverse stddev actually used for normalization.
  std::vector<T> mean_c(static_cast<std::size_t>(c));
  std::vector<T> inv_std_c(static_cast<std::size_t>(c));
  const T* in_p = input.data();

  if (mode == NormMode::Train) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = in_p + (b * c + ch) * sp;
        for (std::int64_t i = 0; i < sp; ++i) sum += static_cast<double>(p[i]);
      }
      const double mu = sum / static_cast<double>(m);
      double var = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = in_p + (b * c + ch) * sp;
        for (std::int64_t i = 0; i < sp; ++i) {
          const double dv = static_cast<double>(p[i]) - mu;
          var += dv * dv;
        }
      }
      var /= static_cast<double>(m);
      mean_c[static_cast<std::size_t>(ch)] = static_cast<T>(mu);
      inv_std_c[static_cast<std::size_t>(ch)] =
          static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
      if (update_running) {
        const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
        auto rm = running_mean.values();
        auto rv = running_var.values();
        rm[static_cast<std::size_t>(ch)] =
            (T(1) - momentum) * rm[static_cast<std::size_t>(ch)] + momentum * static_cast<T>(mu);
        rv[static_cast<std::size_t>(ch)] =
            (T(1) - momentum) * rv[static_cast<std::size_t>(ch)] + momentum * static_cast<T>(unbiased);
      }
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean_c[static_cast<std::size_t>(ch)] = running_mean.values()[static_cast<std::size_t>(ch)];
      inv_std_c[static_cast<std::size_t>(ch)] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var.values()[static_cast<std::size_t>(ch)]) +
                          static_cast<double>(epsilon)));
    }
  }

  auto out = Tensor<T>::zeros(input.shape());
  T* out_p = out.data();
  const T* g_p = gamma.data();
  const T* b_p = beta.data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T mu = mean_c[static_cast<std::size_t>(ch)];
      const T is = inv_std_c[static_cast<std::size_t>(ch)];
      const T gv = g_p[ch], bv = b_p[ch];
      const T* src = in_p + (b * c + ch) * sp;
      T* dst = out_p + (b * c + ch) * sp;
      for (std::int64_t i = 0; i < sp; ++i) dst[i] = gv * ((src[i] - mu) * is) + bv;
    }
  }

  const bool needs = tape && (input.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (needs) {
    out.set_requires_grad(true);
    const bool train = mode == NormMode::Train;
    tape->record(out, [input, gamma, beta, out, mean_c, inv_std_c, n, c, sp, train]() {
      auto og = out.grad();
      const T* in_p2 = input.data();
      const T* g_p2 = gamma.data();
      const std::int64_t m = n * sp;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T mu = mean_c[static_cast<std::size_t>(ch)];
        const T is = inv_std_c[static_cast<std::size_t>(ch)];
        // Channel-level reductions shared by all gradient terms.
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* src = in_p2 + (b * c + ch) * sp;
          const T* gp = og.data() + (b * c + ch) * sp;
          for (std::int64_t i = 0; i < sp; ++i) {
            const double xhat = static_cast<double>((src[i] - mu) * is);
            sum_dy += static_cast<double>(gp[i]);
            sum_dy_xhat += static_cast<double>(gp[i]) * xhat;
          }
        }
        if (gamma.requires_grad()) {
          gamma.grad()[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy_xhat);
        }
        if (beta.requires_grad()) {
          beta.grad()[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy);
        }
        if (input.requires_grad()) {
          const T gv = g_p2[ch];
          if (train) {
            const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
            for (std::int64_t b = 0; b < n; ++b) {
              const T* src = in_p2 + (b * c + ch) * sp;
              const T* gp = og.data() + (b * c + ch) * sp;
              T* gi = input.grad().data() + (b * c + ch) * sp;
              for (std::int64_t i = 0; i < sp; ++i) {
                const T xhat = (src[i] - mu) * is;
                gi[i] += gv * is * (gp[i] - mean_dy - xhat * mean_dy_xhat);
              }
            }
          } else {
            for (std::int64_t b = 0; b < n; ++b) {
              const T* gp = og.data() + (b * c + ch) * sp;
              T* gi = input.grad().data() + (b * c + ch) * sp;
              for (std::int64_t i = 0; i < sp; ++i) gi[i] += gv * is * gp[i];
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, T epsilon, Tape<T>* tape) {
  const auto dims = norm_dims(input, "instance_norm");
  const std::int64_t n = dims.n, c = dims.c, sp = dims.spatial;
  if (sp < 2) throw ValidationError("instance_norm: needs at least 2 spatial elements");
  require_finite(input, "instance_norm input");

  std::vector<T> mean_nc(static_cast<std::size_t>(n * c));
  std::vector<T> inv_std_nc(static_cast<std::size_t>(n * c));
  const T* in_p = input.data();
  auto out = Tensor<T>::zeros(input.shape());
  T* out_p = out.data();

  for (std::int64_t k = 0; k < n * c; ++k) {
    const T* src = in_p + k * sp;
    double sum = 0.0;
    for (std::int64_t i = 0; i < sp; ++i) sum += static_cast<double>(src[i]);
    const double mu = sum / static_cast<double>(sp);
    double var = 0.0;
    for (std::int64_t i = 0; i < sp; ++i) {
      const double dv = static_cast<double>(src[i]) - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(sp);
    const T muT = static_cast<T>(mu);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
    mean_nc[static_cast<std::size_t>(k)] = muT;
    inv_std_nc[static_cast<std::size_t>(k)] = is;
    T* dst = out_p + k * sp;
    for (std::int64_t i = 0; i < sp; ++i) dst[i] = (src[i] - muT) * is;
  }

  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    tape->record(out, [input, out, mean_nc, inv_std_nc, n, c, sp]() {
      auto og = out.grad();
      const T* in_p2 = input.data();
      for (std::int64_t k = 0; k < n * c; ++k) {
        const T mu = mean_nc[static_cast<std::size_t>(k)];
        const T is = inv_std_nc[static_cast<std::size_t>(k)];
        const T* src = in_p2 + k * sp;
        const T* gp = og.data() + k * sp;
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t i = 0; i < sp; ++i) {
          const double xhat = static_cast<double>((src[i] - mu) * is);
          sum_dy += static_cast<double>(gp[i]);
          sum_dy_xhat += static_cast<double>(gp[i]) * xhat;
        }
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(sp));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(sp));
        T* gi = input.grad().data() + k * sp;
        for (std::int64_t i = 0; i < sp; ++i) {
          const T xhat = (src[i] - mu) * is;
          gi[i] += is * (gp[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    });
  }
  return out;
}

#define CTCYCLE_INSTANTIATE_NORM(T)                                                          \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   Tensor<T>&, Tensor<T>&, NormMode, T, T, bool, Tape<T>*);  \
  template Tensor<T> instance_norm<T>(const Tensor<T>&, T, Tape<T>*);

CTCYCLE_INSTANTIATE_NORM(float)
CTCYCLE_INSTANTIATE_NORM(double)

#undef CTCYCLE_INSTANTIATE_NORM

}  // namespace ctcycle
