#include "ctcycle/registration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctcycle/checkpoint.hpp"
#include "ctcycle/optimizer.hpp"

namespace ctcycle {

namespace {

struct TrilinearSample {
  float value;
  // d(value)/d(position) per axis; zero for axes clamped off the grid.
  float dz, dy, dx;
};

TrilinearSample sample_trilinear(const float* vol, std::int64_t depth, std::int64_t height,
                                 std::int64_t width, double pz, double py, double px) {
  const bool clamped_z = pz < 0.0 || pz > static_cast<double>(depth - 1);
  const bool clamped_y = py < 0.0 || py > static_cast<double>(height - 1);
  const bool clamped_x = px < 0.0 || px > static_cast<double>(width - 1);
  pz = std::clamp(pz, 0.0, static_cast<double>(depth - 1));
  py = std::clamp(py, 0.0, static_cast<double>(height - 1));
  px = std::clamp(px, 0.0, static_cast<double>(width - 1));

  const auto z0 = static_cast<std::int64_t>(std::floor(pz));
  const auto y0 = static_cast<std::int64_t>(std::floor(py));
  const auto x0 = static_cast<std::int64_t>(std::floor(px));
  const std::int64_t z1 = std::min(z0 + 1, depth - 1);
  const std::int64_t y1 = std::min(y0 + 1, height - 1);
  const std::int64_t x1 = std::min(x0 + 1, width - 1);
  const float fz = static_cast<float>(pz - static_cast<double>(z0));
  const float fy = static_cast<float>(py - static_cast<double>(y0));
  const float fx = static_cast<float>(px - static_cast<double>(x0));

  const auto v = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return vol[(z * height + y) * width + x];
  };
  const float c000 = v(z0, y0, x0), c001 = v(z0, y0, x1);
  const float c010 = v(z0, y1, x0), c011 = v(z0, y1, x1);
  const float c100 = v(z1, y0, x0), c101 = v(z1, y0, x1);
  const float c110 = v(z1, y1, x0), c111 = v(z1, y1, x1);

  const float c00 = c000 + fx * (c001 - c000);
  const float c01 = c010 + fx * (c011 - c010);
  const float c10 = c100 + fx * (c101 - c100);
  const float c11 = c110 + fx * (c111 - c110);
  const float c0 = c00 + fy * (c01 - c00);
  const float c1 = c10 + fy * (c11 - c10);

  TrilinearSample s;
  s.value = c0 + fz * (c1 - c0);
  s.dz = clamped_z ? 0.0f : (c1 - c0);
  const float dy0 = c01 - c00, dy1 = c11 - c10;
  s.dy = clamped_y ? 0.0f : (dy0 + fz * (dy1 - dy0));
  const float dx00 = c001 - c000, dx01 = c011 - c010;
  const float dx10 = c101 - c100, dx11 = c111 - c110;
  const float dx0 = dx00 + fy * (dx01 - dx00);
  const float dx1 = dx10 + fy * (dx11 - dx10);
  s.dx = clamped_x ? 0.0f : (dx0 + fz * (dx1 - dx0));
  return s;
}

}  // namespace

DisplacementField DisplacementField::zero(std::int64_t depth, std::int64_t height,
                                          std::int64_t width) {
  if (depth < 1 || height < 1 || width < 1) {
    throw ValidationError("displacement field extents must be positive");
  }
  DisplacementField f;
  f.depth = depth;
  f.height = height;
  f.width = width;
  f.data.assign(static_cast<std::size_t>(3 * depth * height * width), 0.0f);
  return f;
}

Volume warp(const Volume& volume, const DisplacementField& field) {
  if (!field.grid_matches(volume)) {
    throw ShapeError("warp: field grid does not match volume grid");
  }
  Volume out = volume;
  const std::int64_t d = volume.depth, h = volume.height, w = volume.width;
  const std::int64_t n = d * h * w;
  const float* fz = field.data.data();
  const float* fy = fz + n;
  const float* fx = fy + n;
  const float* src = volume.voxels.data();
  float* dst = out.voxels.data();
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < d; ++z) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x, ++i) {
        // Integral zero displacements reduce to an exact copy.
        if (fz[i] == 0.0f && fy[i] == 0.0f && fx[i] == 0.0f) {
          dst[i] = src[i];
          continue;
        }
        const auto s = sample_trilinear(src, d, h, w, static_cast<double>(z) + fz[i],
                                        static_cast<double>(y) + fy[i],
                                        static_cast<double>(x) + fx[i]);
        dst[i] = s.value;
      }
    }
  }
  return out;
}

DisplacementField compose(const DisplacementField& a, const DisplacementField& b) {
  if (a.depth != b.depth || a.height != b.height || a.width != b.width) {
    throw ShapeError("compose: field grids do not match");
  }
  // (a o b)(v) = a(v) + b(v + a(v)): the net deformation of warping by b
  // first and by a second, so warp(x, compose(a, b)) ~ warp(warp(x, b), a).
  const std::int64_t d = a.depth, h = a.height, w = a.width;
  const std::int64_t n = d * h * w;
  DisplacementField out = DisplacementField::zero(d, h, w);
  const float* az = a.data.data();
  const float* ay = az + n;
  const float* ax = ay + n;
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < d; ++z) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x, ++i) {
        const double pz = static_cast<double>(z) + az[i];
        const double py = static_cast<double>(y) + ay[i];
        const double px = static_cast<double>(x) + ax[i];
        for (std::int64_t c = 0; c < 3; ++c) {
          const auto s = sample_trilinear(b.data.data() + c * n, d, h, w, pz, py, px);
          out.data[static_cast<std::size_t>(c * n + i)] =
              a.data[static_cast<std::size_t>(c * n + i)] + s.value;
        }
      }
    }
  }
  return out;
}

void save_field(const DisplacementField& field, const std::filesystem::path& path) {
  CheckpointFile ck;
  ck.add_f32("field",
             {3u, static_cast<std::uint32_t>(field.depth), static_cast<std::uint32_t>(field.height),
              static_cast<std::uint32_t>(field.width)},
             field.data);
  ck.save(path);
}

DisplacementField load_field(const std::filesystem::path& path) {
  const auto ck = CheckpointFile::load(path);
  const auto& e = ck.get("field");
  if (e.type != EntryType::F32 || e.extents.size() != 4 || e.extents[0] != 3) {
    throw FormatError(path.string() + ": \"field\" entry is not a 3-channel f32 tensor");
  }
  DisplacementField f;
  f.depth = e.extents[1];
  f.height = e.extents[2];
  f.width = e.extents[3];
  f.data = e.f32;
  return f;
}

DisplacementField ZeroFieldModel::predict(const Volume& moving, const Volume& fixed) const {
  if (moving.depth != fixed.depth || moving.height != fixed.height ||
      moving.width != fixed.width) {
    throw ShapeError("registration: moving and fixed grids do not match");
  }
  return DisplacementField::zero(moving.depth, moving.height, moving.width);
}

// ---- differentiable pieces for training the reference net ------------------

namespace {

Tensor<float> volume_tensor(const Volume& v) {
  std::vector<float> data(v.voxels.begin(), v.voxels.end());
  return Tensor<float>::from(std::move(data), {1, v.depth, v.height, v.width});
}

/// output(v) = moving sampled at v + field(v); differentiable in the field
/// only (the moving image is a constant input here).
Tensor<float> warp_tensor(const Tensor<float>& moving, const Tensor<float>& field,
                          Tape<float>* tape) {
  const std::int64_t d = moving.extent(1), h = moving.extent(2), w = moving.extent(3);
  if (field.rank() != 4 || field.extent(0) != 3 || field.extent(1) != d ||
      field.extent(2) != h || field.extent(3) != w) {
    throw ShapeError("warp_tensor: field must be [3,D,H,W] on the moving grid");
  }
  const std::int64_t n = d * h * w;
  auto out = Tensor<float>::zeros({1, d, h, w});
  std::vector<float> grad_pos(static_cast<std::size_t>(3 * n));  // d(out)/d(field component)
  const float* src = moving.data();
  const float* fz = field.data();
  const float* fy = fz + n;
  const float* fx = fy + n;
  float* dst = out.data();
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < d; ++z) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x, ++i) {
        const auto s = sample_trilinear(src, d, h, w, static_cast<double>(z) + fz[i],
                                        static_cast<double>(y) + fy[i],
                                        static_cast<double>(x) + fx[i]);
        dst[i] = s.value;
        grad_pos[static_cast<std::size_t>(i)] = s.dz;
        grad_pos[static_cast<std::size_t>(n + i)] = s.dy;
        grad_pos[static_cast<std::size_t>(2 * n + i)] = s.dx;
      }
    }
  }
  if (tape && field.requires_grad()) {
    out.set_requires_grad(true);
    tape->record(out, [field, out, grad_pos, n]() {
      auto og = out.grad();
      auto gf = field.grad();
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t i2 = 0; i2 < n; ++i2) {
          gf[static_cast<std::size_t>(c * n + i2)] +=
              og[static_cast<std::size_t>(i2)] * grad_pos[static_cast<std::size_t>(c * n + i2)];
        }
      }
    });
  }
  return out;
}

/// Mean squared forward difference of the field along each axis.
Tensor<float> smoothness_penalty(const Tensor<float>& field, Tape<float>* tape) {
  const std::int64_t c = field.extent(0), d = field.extent(1), h = field.extent(2),
                     w = field.extent(3);
  const float* f = field.data();
  double acc = 0.0;
  std::int64_t count = 0;
  const auto idx = [&](std::int64_t ch, std::int64_t z, std::int64_t y, std::int64_t x) {
    return ((ch * d + z) * h + y) * w + x;
  };
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t z = 0; z < d; ++z) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          const float v = f[idx(ch, z, y, x)];
          if (z + 1 < d) {
            const float dv = f[idx(ch, z + 1, y, x)] - v;
            acc += static_cast<double>(dv) * dv;
            ++count;
          }
          if (y + 1 < h) {
            const float dv = f[idx(ch, z, y + 1, x)] - v;
            acc += static_cast<double>(dv) * dv;
            ++count;
          }
          if (x + 1 < w) {
            const float dv = f[idx(ch, z, y, x + 1)] - v;
            acc += static_cast<double>(dv) * dv;
            ++count;
          }
        }
      }
    }
  }
  auto out = Tensor<float>::scalar(static_cast<float>(acc / static_cast<double>(count)));
  if (tape && field.requires_grad()) {
    out.set_requires_grad(true);
    const double inv_count = 1.0 / static_cast<double>(count);
    tape->record(out, [field, out, c, d, h, w, inv_count]() {
      const auto idx = [d, h, w](std::int64_t ch, std::int64_t z, std::int64_t y,
                                 std::int64_t x) { return ((ch * d + z) * h + y) * w + x; };
      const float g = out.grad()[0] * static_cast<float>(inv_count);
      auto gf = field.grad();
      const float* f2 = field.data();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t z = 0; z < d; ++z) {
          for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
              const auto i0 = idx(ch, z, y, x);
              const float v = f2[i0];
              if (z + 1 < d) {
                const auto i1 = idx(ch, z + 1, y, x);
                const float dv = 2.0f * (f2[i1] - v) * g;
                gf[static_cast<std::size_t>(i1)] += dv;
                gf[static_cast<std::size_t>(i0)] -= dv;
              }
              if (y + 1 < h) {
                const auto i1 = idx(ch, z, y + 1, x);
                const float dv = 2.0f * (f2[i1] - v) * g;
                gf[static_cast<std::size_t>(i1)] += dv;
                gf[static_cast<std::size_t>(i0)] -= dv;
              }
              if (x + 1 < w) {
                const auto i1 = idx(ch, z, y, x + 1);
                const float dv = 2.0f * (f2[i1] - v) * g;
                gf[static_cast<std::size_t>(i1)] += dv;
                gf[static_cast<std::size_t>(i0)] -= dv;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

void check_even_grid(const Volume& v) {
  if (v.depth % 2 != 0 || v.height % 2 != 0 || v.width % 2 != 0) {
    throw ValidationError("registration net requires even volume extents, got " +
                          std::to_string(v.depth) + "x" + std::to_string(v.height) + "x" +
                          std::to_string(v.width));
  }
}

}  // namespace

ConvRegistrationNet ConvRegistrationNet::create(const RegistrationNetConfig& config) {
  ConvRegistrationNet net;
  net.config_ = config;
  Rng rng(config.seed);
  const auto b = config.base_width;
  net.enc1_ = Conv3dLayer<float>::create(2, b, 3, 1, 1, rng);
  net.enc2_ = Conv3dLayer<float>::create(b, 2 * b, 3, 2, 1, rng);
  net.enc3_ = Conv3dLayer<float>::create(2 * b, 2 * b, 3, 1, 1, rng);
  net.up_ = ConvTranspose3dLayer<float>::create(2 * b, b, 3, 2, 1, 1, rng);
  net.dec_ = Conv3dLayer<float>::create(2 * b, b, 3, 1, 1, rng);
  // Near-zero flow at init keeps the first predictions close to identity.
  net.flow_ = Conv3dLayer<float>::create(b, 3, 3, 1, 1, rng, 1e-4);
  return net;
}

Tensor<float> ConvRegistrationNet::forward(const Tensor<float>& stacked, Tape<float>* tape) const {
  const float slope = 0.2f;
  auto e1 = leaky_relu(enc1_.forward(stacked, tape), slope, tape);
  auto e2 = leaky_relu(enc2_.forward(e1, tape), slope, tape);
  auto e3 = leaky_relu(enc3_.forward(e2, tape), slope, tape);
  auto u = leaky_relu(up_.forward(e3, tape), slope, tape);
  const Tensor<float> skip[] = {u, e1};
  auto cat = concat(std::span<const Tensor<float>>(skip, 2), 0, tape);
  auto dec = leaky_relu(dec_.forward(cat, tape), slope, tape);
  return flow_.forward(dec, tape);
}

void ConvRegistrationNet::visit_params(const ParamVisitor<float>& fn) {
  enc1_.visit_params("enc1", fn);
  enc2_.visit_params("enc2", fn);
  enc3_.visit_params("enc3", fn);
  up_.visit_params("up", fn);
  dec_.visit_params("dec", fn);
  flow_.visit_params("flow", fn);
}

void ConvRegistrationNet::train(const std::vector<std::pair<const Volume*, const Volume*>>& pairs) {
  if (pairs.empty()) throw ValidationError("registration training needs at least one pair");
  std::vector<Tensor<float>> moving_t, fixed_t;
  for (const auto& [moving, fixed] : pairs) {
    if (moving->depth != fixed->depth || moving->height != fixed->height ||
        moving->width != fixed->width) {
      throw ShapeError("registration: moving and fixed grids do not match");
    }
    check_even_grid(*moving);
    moving_t.push_back(volume_tensor(*moving));
    fixed_t.push_back(volume_tensor(*fixed));
  }

  std::vector<Tensor<float>> params;
  visit_params([&](const std::string&, Tensor<float>& p) { params.push_back(p); });
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config_.learning_rate;
  adam_cfg.beta1 = config_.adam_beta1;
  adam_cfg.beta2 = config_.adam_beta2;
  adam_cfg.epsilon = config_.adam_eps;
  Adam<float> opt(params, adam_cfg);

  for (std::int64_t step = 0; step < config_.train_steps; ++step) {
    const auto k = static_cast<std::size_t>(step) % pairs.size();
    Tape<float> tape;
    const Tensor<float> stacked_in[] = {moving_t[k], fixed_t[k]};
    auto stacked = concat(std::span<const Tensor<float>>(stacked_in, 2), 0, &tape);
    auto field = forward(stacked, &tape);
    auto warped = warp_tensor(moving_t[k], field, &tape);
    auto similarity = mean_all(square(sub(warped, fixed_t[k], &tape), &tape), &tape);
    auto smooth = smoothness_penalty(field, &tape);
    auto loss = add(similarity, scale(smooth, static_cast<float>(config_.smoothness_weight), &tape),
                    &tape);
    if (!loss.all_finite()) throw NumericError("registration training diverged");
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
}

DisplacementField ConvRegistrationNet::fit_pair(const Volume& moving, const Volume& fixed) {
  train({{&moving, &fixed}});
  return predict(moving, fixed);
}

DisplacementField ConvRegistrationNet::predict(const Volume& moving, const Volume& fixed) const {
  if (moving.depth != fixed.depth || moving.height != fixed.height ||
      moving.width != fixed.width) {
    throw ShapeError("registration: moving and fixed grids do not match");
  }
  check_even_grid(moving);
  auto m = volume_tensor(moving);
  auto f = volume_tensor(fixed);
  const Tensor<float> stacked_in[] = {m, f};
  auto stacked = concat<float>(std::span<const Tensor<float>>(stacked_in, 2), 0, nullptr);
  Tensor<float> field = forward(stacked, nullptr);
  DisplacementField out;
  out.depth = moving.depth;
  out.height = moving.height;
  out.width = moving.width;
  out.data.assign(field.values().begin(), field.values().end());
  return out;
}

CascadeResult cascade_register(const RegistrationModel& model, const Volume& moving,
                               const Volume& fixed, std::int64_t n, CascadeMode mode) {
  if (n < 1) throw ValidationError("cascade_register: n must be >= 1");
  if (moving.depth != fixed.depth || moving.height != fixed.height ||
      moving.width != fixed.width) {
    throw ShapeError("cascade_register: moving and fixed grids do not match");
  }
  CascadeResult result;
  result.net_field = model.predict(moving, fixed);
  result.warped = warp(moving, result.net_field);
  for (std::int64_t i = 1; i < n; ++i) {
    const auto step_field = model.predict(result.warped, fixed);
    result.net_field = compose(step_field, result.net_field);
    if (mode == CascadeMode::ComposeFields) {
      result.warped = warp(moving, result.net_field);
    } else {
      result.warped = warp(result.warped, step_field);
    }
  }
  return result;
}

Volume translate_then_register(const SliceTranslator& translator, const RegistrationModel& model,
                               const Volume& contrast, const Volume& fixed, std::int64_t n,
                               CascadeMode mode) {
  if (contrast.depth != fixed.depth || contrast.height != fixed.height ||
      contrast.width != fixed.width) {
    throw ShapeError("translate_then_register: volume grids do not match");
  }
  Volume translated = contrast;
  translated.phase = fixed.phase;
  for (std::int64_t z = 0; z < contrast.depth; ++z) {
    translator(contrast.slice(z), translated.slice(z), contrast.height, contrast.width);
  }
  const auto cascade = cascade_register(model, translated, fixed, n, mode);
  return warp(contrast, cascade.net_field);
}

}  // namespace ctcycle
