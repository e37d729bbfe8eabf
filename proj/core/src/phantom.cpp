#include "ctcycle/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ctcycle {

namespace {

// Stream ids for derive_rng so each randomized ingredient is independent.
constexpr std::uint64_t kStreamMisalignVenous = 11;
constexpr std::uint64_t kStreamMisalignArterial = 12;
constexpr std::uint64_t kStreamNoise = 13;

void rasterize(Volume& vol, const std::vector<PhantomStructure>& structures, Phase phase) {
  const std::int64_t d = vol.depth, h = vol.height, w = vol.width;
  for (const auto& s : structures) {
    double delta = 0.0;
    if (s.contrast) {
      if (phase == Phase::Venous) delta = s.delta_venous;
      if (phase == Phase::Arterial) delta = s.delta_arterial;
    }
    const double value = s.base_intensity + delta;
    const double soft = s.edge_softness;
    const auto z_lo = s.through_plane
                          ? std::int64_t{0}
                          : std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cz - s.az)));
    const auto z_hi = s.through_plane
                          ? d - 1
                          : std::min<std::int64_t>(d - 1, static_cast<std::int64_t>(std::ceil(s.cz + s.az)));
    const auto y_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cy - s.ay)));
    const auto y_hi = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(s.cy + s.ay)));
    const auto x_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cx - s.ax)));
    const auto x_hi = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(s.cx + s.ax)));
    for (std::int64_t z = z_lo; z <= z_hi; ++z) {
      const double nz = s.through_plane ? 0.0 : (static_cast<double>(z) - s.cz) / s.az;
      for (std::int64_t y = y_lo; y <= y_hi; ++y) {
        const double ny = (static_cast<double>(y) - s.cy) / s.ay;
        for (std::int64_t x = x_lo; x <= x_hi; ++x) {
          const double nx = (static_cast<double>(x) - s.cx) / s.ax;
          const double rho2 = nz * nz + ny * ny + nx * nx;
          if (rho2 > 1.0) continue;
          if (soft <= 0.0) {
            vol.at(z, y, x) += static_cast<float>(value);
          } else {
            const double weight = std::min(1.0, (1.0 - std::sqrt(rho2)) / soft);
            vol.at(z, y, x) += static_cast<float>(value * weight);
          }
        }
      }
    }
  }
}

void add_noise(Volume& vol, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (auto& v : vol.voxels) v += static_cast<float>(rng.normal(0.0, sigma));
}

}  // namespace

void PhantomSpec::validate() const {
  if (image_size < 2 || depth < 1) {
    throw ValidationError("phantom: image_size must be >= 2 and depth >= 1");
  }
  if (misalign_grid < 2) throw ValidationError("phantom: misalign_grid must be >= 2");
  for (const auto& s : structures) {
    if (s.az <= 0 || s.ay <= 0 || s.ax <= 0) {
      throw ValidationError("phantom: structure semi-axes must be positive");
    }
    const bool z_ok =
        s.through_plane ||
        (s.cz - s.az >= 0 && s.cz + s.az <= static_cast<double>(depth - 1));
    if (!z_ok || s.cy - s.ay < 0 || s.cy + s.ay > static_cast<double>(image_size - 1) ||
        s.cx - s.ax < 0 || s.cx + s.ax > static_cast<double>(image_size - 1)) {
      throw ValidationError("phantom: structure extends outside the volume bounds");
    }
  }
}

PhantomSpec PhantomSpec::randomized(std::int64_t image_size, std::int64_t depth, Rng& rng) {
  if (depth < 2) throw ValidationError("randomized phantom needs depth >= 2");
  PhantomSpec spec;
  spec.image_size = image_size;
  spec.depth = depth;
  const double s = static_cast<double>(image_size);
  const double dz = static_cast<double>(depth);
  const double mid = (s - 1.0) / 2.0;
  const double mid_z = (dz - 1.0) / 2.0;

  PhantomStructure body;
  body.cz = mid_z;
  body.cy = mid + rng.uniform(-0.02, 0.02) * s;
  body.cx = mid + rng.uniform(-0.02, 0.02) * s;
  body.az = std::max(0.5, mid_z);
  body.through_plane = true;
  body.ay = s * rng.uniform(0.34, 0.40);
  body.ax = s * rng.uniform(0.34, 0.40);
  body.base_intensity = rng.uniform(0.18, 0.22);
  body.edge_softness = 0.2;
  spec.structures.push_back(body);

  for (int organ = 0; organ < 2; ++organ) {
    PhantomStructure o;
    o.cz = mid_z;
    o.cy = mid + rng.uniform(-0.12, 0.12) * s;
    o.cx = mid + (organ == 0 ? -1.0 : 1.0) * rng.uniform(0.10, 0.16) * s;
    o.az = std::min(std::max(0.5, mid_z * rng.uniform(0.6, 0.9)), mid_z);
    o.through_plane = depth < 6;
    o.ay = s * rng.uniform(0.08, 0.14);
    o.ax = s * rng.uniform(0.08, 0.14);
    o.base_intensity = rng.uniform(-0.06, 0.10);
    o.edge_softness = 0.25;
    spec.structures.push_back(o);
  }

  const int vessels = 3 + static_cast<int>(rng.uniform_index(3));  // 3..5
  for (int i = 0; i < vessels; ++i) {
    PhantomStructure v;
    v.cz = mid_z + rng.uniform(-0.25, 0.25) * dz;
    v.cy = mid + rng.uniform(-0.22, 0.22) * s;
    v.cx = mid + rng.uniform(-0.22, 0.22) * s;
    v.az = std::min(std::max(0.5, dz * rng.uniform(0.15, 0.3)), mid_z);
    v.through_plane = depth < 4;
    v.ay = s * rng.uniform(0.03, 0.08);
    v.ax = s * rng.uniform(0.03, 0.08);
    v.base_intensity = rng.uniform(0.02, 0.08);
    v.edge_softness = 0.3;
    v.contrast = true;
    v.delta_venous = rng.uniform(0.25, 0.35);
    v.delta_arterial = rng.uniform(0.40, 0.50);
    // Keep the structure inside the volume.
    v.cz = std::clamp(v.cz, v.az, dz - 1.0 - v.az);
    v.cy = std::clamp(v.cy, v.ay, s - 1.0 - v.ay);
    v.cx = std::clamp(v.cx, v.ax, s - 1.0 - v.ax);
    spec.structures.push_back(v);
  }
  return spec;
}

DisplacementField make_smooth_field(std::int64_t depth, std::int64_t height, std::int64_t width,
                                    std::int64_t control_points, double amplitude, Rng& rng) {
  if (control_points < 2) throw ValidationError("smooth field needs >= 2 control points per axis");
  const std::int64_t g = control_points;
  std::vector<float> control(static_cast<std::size_t>(3 * g * g * g));
  for (auto& v : control) v = static_cast<float>(rng.normal(0.0, amplitude));

  auto field = DisplacementField::zero(depth, height, width);
  const std::int64_t n = depth * height * width;
  const auto cidx = [g](std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
    return ((c * g + z) * g + y) * g + x;
  };
  for (std::int64_t c = 0; c < 3; ++c) {
    std::int64_t i = 0;
    for (std::int64_t z = 0; z < depth; ++z) {
      const double gz = depth > 1 ? static_cast<double>(z) / static_cast<double>(depth - 1) *
                                        static_cast<double>(g - 1)
                                  : 0.0;
      const auto z0 = std::min<std::int64_t>(static_cast<std::int64_t>(gz), g - 2);
      const double fz = gz - static_cast<double>(z0);
      for (std::int64_t y = 0; y < height; ++y) {
        const double gy = height > 1 ? static_cast<double>(y) / static_cast<double>(height - 1) *
                                           static_cast<double>(g - 1)
                                     : 0.0;
        const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(gy), g - 2);
        const double fy = gy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < width; ++x, ++i) {
          const double gx = width > 1 ? static_cast<double>(x) / static_cast<double>(width - 1) *
                                            static_cast<double>(g - 1)
                                      : 0.0;
          const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(gx), g - 2);
          const double fx = gx - static_cast<double>(x0);
          double acc = 0.0;
          for (int bz = 0; bz < 2; ++bz) {
            const double wz = bz ? fz : 1.0 - fz;
            for (int by = 0; by < 2; ++by) {
              const double wy = by ? fy : 1.0 - fy;
              for (int bx = 0; bx < 2; ++bx) {
                const double wx = bx ? fx : 1.0 - fx;
                acc += wz * wy * wx *
                       static_cast<double>(
                           control[static_cast<std::size_t>(cidx(c, z0 + bz, y0 + by, x0 + bx))]);
              }
            }
          }
          // Taper to zero toward the volume boundary so sample positions stay
          // on the grid; patient motion also vanishes at the scan border.
          const auto ramp = [](std::int64_t v, std::int64_t extent) {
            if (extent <= 1) return 1.0;
            const double margin = std::max(1.0, 0.2 * static_cast<double>(extent - 1));
            const double lo = static_cast<double>(v) / margin;
            const double hi = static_cast<double>(extent - 1 - v) / margin;
            return std::clamp(std::min(lo, hi), 0.0, 1.0);
          };
          const double taper = ramp(z, depth) * ramp(y, height) * ramp(x, width);
          field.data[static_cast<std::size_t>(c * n + i)] = static_cast<float>(acc * taper);
        }
      }
    }
  }
  return field;
}

PhantomTriple generate_phantom_triple(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  PhantomTriple t;
  t.native = Volume::zeros(spec.depth, spec.image_size, spec.image_size);
  t.native.phase = Phase::Native;
  t.venous = Volume::zeros(spec.depth, spec.image_size, spec.image_size);
  t.venous.phase = Phase::Venous;
  t.arterial = Volume::zeros(spec.depth, spec.image_size, spec.image_size);
  t.arterial.phase = Phase::Arterial;

  rasterize(t.native, spec.structures, Phase::Native);
  rasterize(t.venous, spec.structures, Phase::Venous);
  rasterize(t.arterial, spec.structures, Phase::Arterial);

  if (spec.misalign_amplitude > 0.0) {
    auto rng_v = derive_rng(seed, kStreamMisalignVenous);
    const auto field_v = make_smooth_field(spec.depth, spec.image_size, spec.image_size,
                                           spec.misalign_grid, spec.misalign_amplitude, rng_v);
    t.venous = warp(t.venous, field_v);
    t.venous.phase = Phase::Venous;
    auto rng_a = derive_rng(seed, kStreamMisalignArterial);
    const auto field_a = make_smooth_field(spec.depth, spec.image_size, spec.image_size,
                                           spec.misalign_grid, spec.misalign_amplitude, rng_a);
    t.arterial = warp(t.arterial, field_a);
    t.arterial.phase = Phase::Arterial;
  }

  auto rng_n = derive_rng(seed, kStreamNoise);
  add_noise(t.native, spec.noise_sigma, rng_n);
  add_noise(t.venous, spec.noise_sigma, rng_n);
  add_noise(t.arterial, spec.noise_sigma, rng_n);
  return t;
}

SplitIndices split(std::int64_t patient_count, double train_ratio, double val_ratio,
                   double test_ratio, std::uint64_t seed) {
  if (patient_count < 1) throw ValidationError("split: need at least one patient");
  const double ratios[3] = {train_ratio, val_ratio, test_ratio};
  double sum = 0.0;
  for (const double r : ratios) {
    if (r < 0.0) throw ValidationError("split: ratios must be non-negative");
    sum += r;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ValidationError("split: ratios must sum to 1");

  // Largest-remainder apportionment, ties broken by partition order.
  std::int64_t counts[3];
  double fractions[3];
  std::int64_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(patient_count);
    counts[i] = static_cast<std::int64_t>(std::floor(exact));
    fractions[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  while (assigned < patient_count) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (fractions[i] > fractions[best]) best = i;
    }
    ++counts[best];
    fractions[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i) {
    if (ratios[i] > 0.0 && counts[i] == 0) {
      throw ValidationError("split: partition " + std::to_string(i) +
                            " is empty at the given sizes");
    }
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(patient_count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::int64_t i = patient_count - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + counts[0]);
  out.val.assign(order.begin() + counts[0], order.begin() + counts[0] + counts[1]);
  out.test.assign(order.begin() + counts[0] + counts[1], order.end());
  return out;
}

}  // namespace ctcycle
