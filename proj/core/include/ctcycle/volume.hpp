#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctcycle/errors.hpp"

namespace ctcycle {

/// Maps one slice to another of the same extents, e.g. a generator in eval
/// mode or the identity (the no-transfer baseline).
using SliceTranslator =
    std::function<void(std::span<const float> in, std::span<float> out, std::int64_t height,
                       std::int64_t width)>;

enum class Phase : std::uint8_t { Native = 0, Venous = 1, Arterial = 2 };

const char* phase_name(Phase p);
Phase phase_from_name(const std::string& name);

/// 3-D scalar field with square slices, stored slice-major then row-major.
/// Values live in the normalized domain (HU - intercept) / 1000; `preprocess`
/// maps raw scanner values into it.
struct Volume {
  std::int64_t depth = 0, height = 0, width = 0;
  Phase phase = Phase::Native;
  float intercept = 0.0f;
  float slice_thickness_mm = 1.0f;
  std::vector<float> voxels;

  static Volume zeros(std::int64_t depth, std::int64_t height, std::int64_t width);

  void validate() const;
  std::int64_t slice_size() const { return height * width; }
  std::int64_t voxel_count() const { return depth * height * width; }

  std::span<float> slice(std::int64_t z);
  std::span<const float> slice(std::int64_t z) const;

  float& at(std::int64_t z, std::int64_t y, std::int64_t x) {
    return voxels[static_cast<std::size_t>((z * height + y) * width + x)];
  }
  float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>((z * height + y) * width + x)];
  }
};

/// (raw - intercept) / 1000, the HU normalization applied before training.
/// Exactly invertible for integer-valued raws in 64-bit.
double preprocess_value(double raw, double intercept);

/// Applies preprocess_value voxel-wise; the intercept is kept as metadata so
/// the transform stays invertible.
Volume preprocess(const Volume& raw, double intercept);

/// CYTV container, bit-exact: magic "CYTV", version u32 LE, depth/height/
/// width u32 LE, phase u8, intercept f32 LE, slice_thickness_mm f32 LE, then
/// depth*height*width voxels f32 LE, slice-major then row-major.
Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& volume, const std::filesystem::path& path);

}  // namespace ctcycle
