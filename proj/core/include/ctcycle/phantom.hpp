#pragma once

#include <cstdint>
#include <vector>

#include "ctcycle/registration.hpp"
#include "ctcycle/rng.hpp"
#include "ctcycle/volume.hpp"

namespace ctcycle {

/// Ellipsoid in voxel coordinates. Contrast structures carry per-phase
/// intensity deltas; the geometry itself never changes between phases.
struct PhantomStructure {
  double cz = 0, cy = 0, cx = 0;  // center
  double az = 1, ay = 1, ax = 1;  // semi-axes
  double base_intensity = 0;
  bool contrast = false;
  double delta_venous = 0;
  double delta_arterial = 0;
  /// 0 gives a hard ellipsoid boundary; a positive fraction ramps the
  /// intensity linearly to zero over the outer shell (partial-volume look).
  double edge_softness = 0;
  /// Through-plane structures span every slice (an elliptic cylinder along
  /// z); cz/az do not constrain membership. Practical for shallow volumes,
  /// where an ellipsoid with az <= (depth-1)/2 has no interior voxels.
  bool through_plane = false;
};

struct PhantomSpec {
  std::int64_t image_size = 128;
  std::int64_t depth = 4;
  std::vector<PhantomStructure> structures;
  double noise_sigma = 0.0;
  /// Amplitude (voxels) of the smooth random misalignment applied to the
  /// contrast phases relative to native; 0 keeps the triple co-registered.
  double misalign_amplitude = 0.0;
  std::int64_t misalign_grid = 3;  // control points per axis

  void validate() const;

  /// Body + organs + contrast-avid vessel/lesion structures with seeded
  /// jitter, the stand-in for one patient's anatomy.
  static PhantomSpec randomized(std::int64_t image_size, std::int64_t depth, Rng& rng);
};

struct PhantomTriple {
  Volume native, venous, arterial;
};

/// Three co-registered volumes that differ only by contrast deltas inside the
/// designated structures, plus optional smooth misalignment of the contrast
/// phases and i.i.d. noise. Bit-identical for a fixed (spec, seed).
PhantomTriple generate_phantom_triple(const PhantomSpec& spec, std::uint64_t seed);

/// Smooth random displacement: a seeded coarse grid of Gaussian control
/// vectors, trilinearly upsampled to the full grid.
DisplacementField make_smooth_field(std::int64_t depth, std::int64_t height, std::int64_t width,
                                    std::int64_t control_points, double amplitude, Rng& rng);

struct SplitIndices {
  std::vector<std::int64_t> train, val, test;
};

/// Deterministic patient-level split; all phases of a patient stay together.
/// Ratios must sum to 1; a positive ratio that rounds to zero members is an
/// error.
SplitIndices split(std::int64_t patient_count, double train_ratio, double val_ratio,
                   double test_ratio, std::uint64_t seed);

}  // namespace ctcycle
