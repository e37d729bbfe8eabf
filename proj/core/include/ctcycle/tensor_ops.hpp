#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ctcycle/tensor.hpp"

// Differentiable primitives. Every op takes an optional Tape<T>*: with a tape
// the op records its adjoint closure and the output requires grad whenever an
// input does; without one the op is pure inference. All reductions run in
// ascending flat-index order, so results are bit-identical across runs.

namespace ctcycle {

struct Conv2dSpec {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
};

struct ConvTranspose2dSpec {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t output_padding = 0;
};

struct Conv3dSpec {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct ConvTranspose3dSpec {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t output_padding = 0;
};

enum class NormMode { Train, Eval };

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> square(const Tensor<T>& a, Tape<T>* tape = nullptr);
/// Elementwise |x|; the subgradient at 0 is 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& a, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope, Tape<T>* tape = nullptr);
/// Exact-erf GELU: x * 0.5 * (1 + erf(x / sqrt(2))). Not the tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a, Tape<T>* tape = nullptr);

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a, Tape<T>* tape = nullptr);

// ---- shape ----------------------------------------------------------------

/// Element order is preserved; round-trips are bit-identical.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::int64_t axis, Tape<T>* tape = nullptr);

/// [N, ...] -> the n-th [...] slice.
template <typename T>
Tensor<T> select_batch(const Tensor<T>& a, std::int64_t n, Tape<T>* tape = nullptr);

/// k tensors of identical shape [...] -> [k, ...].
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts, Tape<T>* tape = nullptr);

/// [C,h,w] -> [h*w, C] token matrix (token index = y*w + x).
template <typename T>
Tensor<T> tokens_from_chw(const Tensor<T>& a, Tape<T>* tape = nullptr);

/// [h*w, C] -> [C,h,w]; inverse of tokens_from_chw.
template <typename T>
Tensor<T> chw_from_tokens(const Tensor<T>& a, std::int64_t h, std::int64_t w,
                          Tape<T>* tape = nullptr);

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a, Tape<T>* tape = nullptr);

/// Numerically stable softmax along one axis; rows along that axis sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::int64_t axis, Tape<T>* tape = nullptr);

// ---- convolutions ---------------------------------------------------------

/// input [C,H,W] or [N,C,H,W]; weight [C_out, C_in/groups, kh, kw]; bias
/// [C_out] or undefined for none. groups == C_in gives depthwise convolution.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dSpec& spec, Tape<T>* tape = nullptr);

/// weight [C_in, C_out, kh, kw]. Output extent (in-1)*stride - 2*padding + k
/// + output_padding per axis; requires output_padding < stride.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, const ConvTranspose2dSpec& spec,
                           Tape<T>* tape = nullptr);

/// input [C,D,H,W]; weight [C_out, C_in, kd, kh, kw].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dSpec& spec, Tape<T>* tape = nullptr);

/// input [C,D,H,W]; weight [C_in, C_out, kd, kh, kw].
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, const ConvTranspose3dSpec& spec,
                           Tape<T>* tape = nullptr);

// ---- normalization --------------------------------------------------------

/// Train mode normalizes with biased batch statistics over batch+spatial axes
/// and, when update_running is set, refreshes the running stats in place with
/// running = (1-momentum)*running + momentum*batch (unbiased variance, the
/// usual convention). Eval mode normalizes with the running stats. Input rank
/// 3 [C,H,W] (batch of one) or 4 [N,C,H,W].
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, NormMode mode,
                     T momentum, T epsilon, bool update_running = true,
                     Tape<T>* tape = nullptr);

/// Per-sample, per-channel normalization over spatial axes, no affine
/// parameters and no running state (the patch-discriminator convention).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, T epsilon, Tape<T>* tape = nullptr);

// ---- checks ---------------------------------------------------------------

template <typename T>
void require_finite(const Tensor<T>& t, const char* what);

}  // namespace ctcycle
