#pragma once

#include <vector>

#include "ctcycle/nn.hpp"

namespace ctcycle {

/// 70x70 patch discriminator in its canonical configuration: 4x4 convs of
/// widths 64/128/256 at stride 2 and 512 at stride 1, instance-style
/// normalization after every conv except the first, leaky-ReLU slope 0.2,
/// and a final 4x4 single-channel conv. No terminal sigmoid; the
/// least-squares losses operate on raw patch scores.
struct DiscriminatorConfig {
  std::int64_t in_channels = 1;
  std::int64_t base_width = 64;
  /// Number of stride-2 stages. The default 3 yields the 70x70 receptive
  /// field; the miniature gradient-check variant shrinks this so a 16x16
  /// input still reaches the final conv.
  std::int64_t strided_layers = 3;
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;
  double init_std = 0.02;

  void validate() const;
  static DiscriminatorConfig miniature();  // widths / 8, two strided stages

  /// Spatial extent of the score map for a given input extent; throws if the
  /// input is smaller than the receptive field of the stack.
  std::int64_t score_extent(std::int64_t input_extent) const;
};

template <typename T>
struct DiscriminatorModel {
  DiscriminatorConfig config;
  std::vector<Conv2dLayer<T>> convs;     // strided stages + stride-1 stage + score conv
  std::vector<bool> normalized;          // instance norm after convs[i]?

  static DiscriminatorModel create(const DiscriminatorConfig& config, Rng& rng);

  /// [C,S,S] or [N,C,S,S] -> real-valued patch score map [1,h,w] / [N,1,h,w].
  Tensor<T> discriminate(const Tensor<T>& x, Tape<T>* tape = nullptr) const;

  void visit_params(const ParamVisitor<T>& fn);
  std::int64_t parameter_count();
};

extern template struct DiscriminatorModel<float>;
extern template struct DiscriminatorModel<double>;

}  // namespace ctcycle
