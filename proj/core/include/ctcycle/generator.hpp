#pragma once

#include <vector>

#include "ctcycle/nn.hpp"

namespace ctcycle {

/// Scaled dot-product attention: softmax(Q K^T / sqrt(d_q)) V, with the
/// softmax over the key axis. Q is [n_q, d], K and V are [n_k, d] / [n_k, d_v].
template <typename T>
Tensor<T> self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         Tape<T>* tape = nullptr);

enum class Projection { Query, Key, Value };

struct GeneratorConfig {
  std::int64_t input_channels = 1;
  std::int64_t base_width = 32;           // stem width; downsampling runs base, 2*base, 4*base
  std::int64_t transformer_channels = 128;  // must equal 4 * base_width
  std::int64_t heads = 6;
  std::int64_t head_dim = 64;             // d_q = d_k = d_v
  std::int64_t pointwise_hidden = 512;
  // Transformer depth. One block is the figure-level reading of the
  // architecture; nine is what reproduces the published ~3.5M parameter
  // count, so nine is the default.
  std::int64_t transformer_blocks = 9;
  std::int64_t image_size = 512;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double init_std = 0.02;

  void validate() const;
  std::int64_t grid() const { return image_size / 8; }
  std::int64_t query_tokens() const { return grid() * grid(); }
  std::int64_t key_tokens() const { return (grid() / 2) * (grid() / 2); }

  /// Channel widths divided by 8, for finite-difference checking at 64-bit.
  static GeneratorConfig miniature(std::int64_t image_size = 16);
};

/// One Q/K/V projection: depthwise 3x3 (stride 1 for queries, 2 for keys and
/// values), batch-norm, then a pointwise reduction to head_dim channels.
template <typename T>
struct ProjectionBlock {
  Conv2dLayer<T> depthwise;
  BatchNorm2dLayer<T> norm;
  Conv2dLayer<T> pointwise;
};

template <typename T>
struct AttentionHead {
  ProjectionBlock<T> query, key, value;
};

template <typename T>
struct TransformerBlock {
  std::vector<AttentionHead<T>> heads;
  Conv2dLayer<T> attn_out;  // pointwise heads*d -> c
  BatchNorm2dLayer<T> norm1, norm2;
  Conv2dLayer<T> pw1, pw2;  // pointwise c -> hidden -> c
};

/// Generative convolutional transformer: convolutional downsampling to a
/// c x (S/8) x (S/8) grid, transformer blocks with convolutional Q/K/V
/// projections and multi-head self-attention, transposed-convolution
/// upsampling back to a single-channel image. Output activation is linear:
/// normalized HU values exceed [-1, 1], so a tanh would clip them.
template <typename T>
struct GeneratorModel {
  GeneratorConfig config;

  Conv2dLayer<T> stem;
  BatchNorm2dLayer<T> stem_norm;
  Conv2dLayer<T> down1, down2, down3;
  BatchNorm2dLayer<T> down1_norm, down2_norm, down3_norm;
  std::vector<TransformerBlock<T>> blocks;
  ConvTranspose2dLayer<T> up1, up2, up3;
  BatchNorm2dLayer<T> up1_norm, up2_norm, up3_norm;
  Conv2dLayer<T> final_conv;

  static GeneratorModel create(const GeneratorConfig& config, Rng& rng);

  /// [1,S,S] -> [c, S/8, S/8] (or batched).
  Tensor<T> downsample(const Tensor<T>& x, NormMode mode, Tape<T>* tape = nullptr,
                       bool update_running = true) const;

  /// [c,h,w] -> flattened [n, head_dim] projection matrix for one head.
  Tensor<T> conv_projection(std::int64_t block, std::int64_t head, Projection which,
                            const Tensor<T>& grid_tensor, NormMode mode,
                            Tape<T>* tape = nullptr, bool update_running = true) const;

  /// [c,h,w] -> [c,h,w] (or batched): multi-head attention with residual and
  /// batch-norm, then the pointwise block with its own residual and norm.
  Tensor<T> transformer_block(std::int64_t block, const Tensor<T>& x, NormMode mode,
                              Tape<T>* tape = nullptr, bool update_running = true) const;

  /// [c, S/8, S/8] -> [1,S,S] (or batched), linear output.
  Tensor<T> upsample(const Tensor<T>& x, NormMode mode, Tape<T>* tape = nullptr,
                     bool update_running = true) const;

  /// Full translation pass; output shape equals input shape.
  Tensor<T> generate(const Tensor<T>& x, NormMode mode, Tape<T>* tape = nullptr,
                     bool update_running = true) const;

  void visit_params(const ParamVisitor<T>& fn);
  void visit_buffers(const ParamVisitor<T>& fn);
  std::int64_t parameter_count();
};

extern template struct GeneratorModel<float>;
extern template struct GeneratorModel<double>;

}  // namespace ctcycle
