#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "ctcycle/nn.hpp"
#include "ctcycle/volume.hpp"

namespace ctcycle {

/// Per-voxel displacement in voxel units on the moving volume's grid, stored
/// component-major as [3][depth][height][width] with components (dz, dy, dx).
/// The zero field is the identity transform.
struct DisplacementField {
  std::int64_t depth = 0, height = 0, width = 0;
  std::vector<float> data;

  static DisplacementField zero(std::int64_t depth, std::int64_t height, std::int64_t width);

  std::int64_t voxel_count() const { return depth * height * width; }
  float& at(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>(((c * depth + z) * height + y) * width + x)];
  }
  float at(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>(((c * depth + z) * height + y) * width + x)];
  }
  bool grid_matches(const Volume& v) const {
    return depth == v.depth && height == v.height && width == v.width;
  }
};

/// Trilinear resampling: output(v) = input(v + field(v)), sample coordinates
/// clamped to the volume edge. A zero field reproduces the input bit for bit.
Volume warp(const Volume& volume, const DisplacementField& field);

/// Composition such that warp(x, compose(a, b)) ~ warp(warp(x, b), a) within
/// interpolation tolerance: (a o b)(v) = a(v) + b sampled at v + a(v).
DisplacementField compose(const DisplacementField& a, const DisplacementField& b);

/// Field persistence inside the CYCK container (one 3-channel f32 entry).
void save_field(const DisplacementField& field, const std::filesystem::path& path);
DisplacementField load_field(const std::filesystem::path& path);

/// Pluggable registration contract: any deterministic map from a
/// (moving, fixed) pair to a displacement field on the moving grid.
class RegistrationModel {
 public:
  virtual ~RegistrationModel() = default;
  virtual DisplacementField predict(const Volume& moving, const Volume& fixed) const = 0;
};

/// Predicts the zero field; the identity baseline for cascade tests.
class ZeroFieldModel : public RegistrationModel {
 public:
  DisplacementField predict(const Volume& moving, const Volume& fixed) const override;
};

struct RegistrationNetConfig {
  std::int64_t base_width = 8;
  std::uint64_t seed = 7;
  std::int64_t train_steps = 200;
  double learning_rate = 1e-3;
  double smoothness_weight = 0.1;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
};

/// Reference registration model: a small 3-level convolutional
/// encoder-decoder over the stacked (moving, fixed) pair, trained
/// unsupervised with mean-squared similarity plus a gradient-smoothness
/// penalty on the predicted field. Volume extents must be even.
class ConvRegistrationNet : public RegistrationModel {
 public:
  static ConvRegistrationNet create(const RegistrationNetConfig& config);

  /// Adam steps cycling deterministically over the pairs.
  void train(const std::vector<std::pair<const Volume*, const Volume*>>& pairs);

  /// Convenience for single-pair fitting (the CLI path): trains on just this
  /// pair, then predicts.
  DisplacementField fit_pair(const Volume& moving, const Volume& fixed);

  DisplacementField predict(const Volume& moving, const Volume& fixed) const override;

  void visit_params(const ParamVisitor<float>& fn);

 private:
  Tensor<float> forward(const Tensor<float>& stacked, Tape<float>* tape) const;

  RegistrationNetConfig config_;
  Conv3dLayer<float> enc1_, enc2_, enc3_;
  ConvTranspose3dLayer<float> up_;
  Conv3dLayer<float> dec_, flow_;
};

enum class CascadeMode {
  /// Compose fields every step and re-warp the original moving volume, so
  /// the net field is exact by construction.
  ComposeFields,
  /// Re-warp the previous warped image each step (the literal recursion);
  /// the composed net field then matches within interpolation tolerance.
  RewarpImages,
};

struct CascadeResult {
  Volume warped;
  DisplacementField net_field;
};

/// Recursive cascade: registers the current warped volume to fixed n times,
/// returning the final warped volume and the composed net field with
/// warp(moving, net_field) ~ warped.
CascadeResult cascade_register(const RegistrationModel& model, const Volume& moving,
                               const Volume& fixed, std::int64_t n,
                               CascadeMode mode = CascadeMode::ComposeFields);

/// Style transfer before registration: translates the contrast volume
/// slice-wise into the fixed volume's phase, registers the translated volume
/// to the fixed one, then applies the resulting net field to the unmodified
/// contrast volume.
Volume translate_then_register(const SliceTranslator& translator, const RegistrationModel& model,
                               const Volume& contrast, const Volume& fixed, std::int64_t n,
                               CascadeMode mode = CascadeMode::ComposeFields);

}  // namespace ctcycle
