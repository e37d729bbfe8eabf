#include <benchmark/benchmark.h>

#include "ctcycle/discriminator.hpp"
#include "ctcycle/generator.hpp"
#include "ctcycle/metrics.hpp"
#include "ctcycle/registration.hpp"

using namespace ctcycle;

namespace {

void BM_Conv2dStride1(benchmark::State& state) {
  Rng rng(1);
  auto x = Tensor<float>::randn({32, 64, 64}, rng);
  auto w = Tensor<float>::randn({64, 32, 3, 3}, rng);
  auto b = Tensor<float>::zeros({64});
  for (auto _ : state) {
    auto y = conv2d(x, w, b, {1, 1, 1});
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv2dStride1)->Unit(benchmark::kMillisecond);

void BM_Conv2dStride2(benchmark::State& state) {
  Rng rng(2);
  auto x = Tensor<float>::randn({32, 64, 64}, rng);
  auto w = Tensor<float>::randn({64, 32, 3, 3}, rng);
  auto b = Tensor<float>::zeros({64});
  for (auto _ : state) {
    auto y = conv2d(x, w, b, {2, 1, 1});
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv2dStride2)->Unit(benchmark::kMillisecond);

void BM_ConvTranspose2d(benchmark::State& state) {
  Rng rng(3);
  auto x = Tensor<float>::randn({64, 32, 32}, rng);
  auto w = Tensor<float>::randn({64, 32, 3, 3}, rng);
  auto b = Tensor<float>::zeros({32});
  for (auto _ : state) {
    auto y = conv_transpose2d(x, w, b, {2, 1, 1});
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_ConvTranspose2d)->Unit(benchmark::kMillisecond);

void BM_SelfAttention(benchmark::State& state) {
  Rng rng(4);
  const auto n = state.range(0);
  auto q = Tensor<float>::randn({n, 64}, rng);
  auto k = Tensor<float>::randn({n / 4, 64}, rng);
  auto v = Tensor<float>::randn({n / 4, 64}, rng);
  for (auto _ : state) {
    auto z = self_attention(q, k, v);
    benchmark::DoNotOptimize(z.data());
  }
}
BENCHMARK(BM_SelfAttention)->Arg(256)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_GeneratorForward128(benchmark::State& state) {
  Rng rng(5);
  GeneratorConfig cfg;
  cfg.image_size = 128;
  cfg.transformer_blocks = 1;
  auto model = GeneratorModel<float>::create(cfg, rng);
  auto x = Tensor<float>::randn({1, 128, 128}, rng, 0.0, 0.3);
  for (auto _ : state) {
    auto y = model.generate(x, NormMode::Eval, nullptr, false);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_GeneratorForward128)->Unit(benchmark::kMillisecond);

void BM_DiscriminatorForward128(benchmark::State& state) {
  Rng rng(6);
  DiscriminatorConfig cfg;
  auto model = DiscriminatorModel<float>::create(cfg, rng);
  auto x = Tensor<float>::randn({1, 128, 128}, rng, 0.0, 0.3);
  for (auto _ : state) {
    auto y = model.discriminate(x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_DiscriminatorForward128)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  Rng rng(7);
  std::vector<float> a(128 * 128), b(128 * 128);
  for (auto& v : a) v = static_cast<float>(rng.uniform());
  for (auto& v : b) v = static_cast<float>(rng.uniform());
  for (auto _ : state) {
    benchmark::DoNotOptimize(ssim(a, b, 128, 128));
  }
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

void BM_Warp(benchmark::State& state) {
  Rng rng(8);
  auto vol = Volume::zeros(8, 64, 64);
  for (auto& v : vol.voxels) v = static_cast<float>(rng.uniform());
  auto field = DisplacementField::zero(8, 64, 64);
  for (auto& v : field.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto _ : state) {
    auto out = warp(vol, field);
    benchmark::DoNotOptimize(out.voxels.data());
  }
}
BENCHMARK(BM_Warp)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
