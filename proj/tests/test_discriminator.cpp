#include <cmath>
#include <string>

#include "ctcycle/discriminator.hpp"
#include "ctcycle/grad_check.hpp"
#include "ctcycle/tensor_ops.hpp"
#include "doctest.h"

using namespace ctcycle;

namespace {

// Stride arithmetic oracle: floor((e + 2p - k)/s) + 1 per layer of the stack.
std::int64_t score_extent_oracle(std::int64_t input, std::int64_t strided) {
  std::int64_t e = input;
  for (std::int64_t i = 0; i < strided; ++i) e = (e + 2 - 4) / 2 + 1;
  e = (e + 2 - 4) / 1 + 1;
  e = (e + 2 - 4) / 1 + 1;
  return e;
}

}  // namespace

TEST_CASE("patch score map follows the stride arithmetic of the layer stack") {
  CHECK(score_extent_oracle(512, 3) == 62);
  CHECK(score_extent_oracle(128, 3) == 14);
  CHECK(score_extent_oracle(70, 3) == 6);

  DiscriminatorConfig cfg;
  CHECK(cfg.score_extent(512) == 62);
  CHECK(cfg.score_extent(128) == 14);

  Rng rng(21);
  SUBCASE("full-width model at 128") {
    auto model = DiscriminatorModel<float>::create(cfg, rng);
    auto x = Tensor<float>::randn({1, 128, 128}, rng, 0.0, 0.3);
    auto scores = model.discriminate(x);
    CHECK(scores.shape() == Shape{1, 14, 14});
    // Raw scores, no terminal squashing: values land outside [0, 1] freely.
  }

  SUBCASE("same geometry at 512 with narrow widths") {
    DiscriminatorConfig narrow;
    narrow.base_width = 8;
    auto model = DiscriminatorModel<float>::create(narrow, rng);
    auto x = Tensor<float>::randn({1, 512, 512}, rng, 0.0, 0.3);
    auto scores = model.discriminate(x);
    CHECK(scores.shape() == Shape{1, 62, 62});
  }

  SUBCASE("inputs below the receptive field are dimension errors") {
    auto model = DiscriminatorModel<float>::create(cfg, rng);
    CHECK_THROWS_AS(model.discriminate(Tensor<float>::zeros({1, 16, 16})), ShapeError);
  }

  SUBCASE("parameter count of the canonical stack") {
    auto model = DiscriminatorModel<float>::create(cfg, rng);
    // 4x4 convs: 1->64, 64->128, 128->256, 256->512 (stride 1), 512->1.
    const std::int64_t expected = (16 * 1 * 64 + 64) + (16 * 64 * 128 + 128) +
                                  (16 * 128 * 256 + 256) + (16 * 256 * 512 + 512) +
                                  (16 * 512 * 1 + 1);
    CHECK(model.parameter_count() == expected);
  }
}

TEST_CASE("zero input with zero biases scores zero everywhere") {
  Rng rng(22);
  DiscriminatorConfig cfg = DiscriminatorConfig::miniature();
  auto model = DiscriminatorModel<float>::create(cfg, rng);
  auto scores = model.discriminate(Tensor<float>::zeros({1, 32, 32}));
  for (const auto v : scores.values()) CHECK(v == 0.0f);
}

TEST_CASE("patch scores are local up to normalization statistics") {
  Rng rng(23);
  DiscriminatorConfig cfg = DiscriminatorConfig::miniature();
  auto model = DiscriminatorModel<float>::create(cfg, rng);
  Rng in_rng(3);
  auto x = Tensor<float>::randn({1, 64, 64}, in_rng, 0.0, 0.3);
  auto base = model.discriminate(x);

  auto perturbed = x.detach();
  for (std::int64_t y = 0; y < 6; ++y) {
    for (std::int64_t xx = 0; xx < 6; ++xx) {
      perturbed.values()[static_cast<std::size_t>(y * 64 + xx)] += 2.0f;
    }
  }
  auto scored = model.discriminate(perturbed);

  const auto h = base.extent(1), w = base.extent(2);
  double near = 0.0, far = 0.0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t xx = 0; xx < w; ++xx) {
      const double delta = std::fabs(scored.at({0, y, xx}) - base.at({0, y, xx}));
      if (y < h / 2 && xx < w / 2) near = std::max(near, delta);
      if (y == h - 1 && xx == w - 1) far = std::max(far, delta);
    }
  }
  CHECK(near > 0.0);
  // The opposite corner lies outside the receptive field; only the
  // instance-norm statistics couple it to the perturbation.
  CHECK(far < 0.05 * near);
}

TEST_CASE("score-map mean drives the losses") {
  auto scores = Tensor<float>::from({0.0f, 1.0f, 2.0f, 3.0f}, {1, 2, 2});
  auto m = mean_all(scores);
  CHECK(m.item() == doctest::Approx(1.5));
}

TEST_CASE("miniature discriminator passes spot finite-difference checks") {
  Rng rng(24);
  auto model = DiscriminatorModel<double>::create(DiscriminatorConfig::miniature(), rng);
  auto x = Tensor<double>::randn({1, 16, 16}, rng, 0.0, 0.5, true);
  const auto f = [&](Tape<double>* tape) {
    return mean_all(square(model.discriminate(x, tape), tape), tape);
  };
  GradCheckOptions opts;
  opts.max_elements = 32;
  const auto input_report = grad_check<double>(f, x, opts);
  CHECK(input_report.max_rel_error < 1e-4);
  model.visit_params([&](const std::string& name, Tensor<double>& p) {
    const auto report = grad_check<double>(f, p, opts);
    INFO(name << ", worst index " << report.worst_index);
    CHECK(report.max_rel_error < 1e-4);
  });
}
