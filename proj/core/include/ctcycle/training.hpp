#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ctcycle/discriminator.hpp"
#include "ctcycle/generator.hpp"
#include "ctcycle/optimizer.hpp"
#include "ctcycle/volume.hpp"

namespace ctcycle {

struct TrainConfig {
  double lambda_cycle = 1.0;
  double learning_rate = 1e-4;
  std::int64_t epochs = 70;
  std::int64_t batch_size = 2;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::int64_t image_size = 512;
  /// Fake-image history buffer capacity for discriminator updates; 0 = off.
  std::int64_t history_buffer = 0;
  /// Checkpoint cadence in epochs for the CLI driver; 0 = final only.
  std::int64_t checkpoint_every = 0;
  /// Reproduces the loss equations with their literal label orientation
  /// (real scores pushed to 0, fakes to 1) instead of the standard one.
  bool paper_literal_lsgan = false;

  // Architecture knobs, mainly for desk-scale runs and miniatures.
  std::int64_t generator_base_width = 32;
  std::int64_t transformer_blocks = 9;
  std::int64_t heads = 6;
  std::int64_t head_dim = 64;
  std::int64_t discriminator_base_width = 64;
  std::int64_t discriminator_strided = 3;

  void validate() const;
  GeneratorConfig generator_config() const;
  DiscriminatorConfig discriminator_config() const;

  /// Flat UTF-8 "key = value" lines; '#' starts a comment. Unknown keys are
  /// validation errors.
  static TrainConfig from_file(const std::filesystem::path& path);
  void apply_line(const std::string& key, const std::string& value);
};

// ---- losses ----------------------------------------------------------------

/// Least-squares generator objective on fake patch scores. Standard
/// orientation pushes D(fake) toward 1; the literal orientation pushes it
/// toward 0.
template <typename T>
Tensor<T> lsgan_generator_loss(const Tensor<T>& fake_scores, bool paper_literal = false,
                               Tape<T>* tape = nullptr);

/// Least-squares discriminator objective: mean((D(real)-1)^2) + mean(D(fake)^2)
/// in the standard orientation; labels swapped in the literal one.
template <typename T>
Tensor<T> lsgan_discriminator_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores,
                                   bool paper_literal = false, Tape<T>* tape = nullptr);

/// Mean-per-element l1 distance between a cycle round-trip and its original.
template <typename T>
Tensor<T> cycle_loss_term(const Tensor<T>& roundtrip, const Tensor<T>& original,
                          Tape<T>* tape = nullptr);

// ---- state -----------------------------------------------------------------

template <typename T>
struct TrainState {
  TrainConfig config;
  Phase phase_x = Phase::Native;
  Phase phase_y = Phase::Venous;

  GeneratorModel<T> g_xy, g_yx;        // G: X->Y, F: Y->X
  DiscriminatorModel<T> d_x, d_y;
  Adam<T> opt_g_xy, opt_g_yx, opt_d_x, opt_d_y;

  std::int64_t epoch = 0;
  std::int64_t step_in_epoch = 0;
  Rng rng;  // consumed by weight init; batch sampling is keyed off (seed, epoch, step)

  std::vector<Tensor<T>> pool_x, pool_y;  // history-buffer contents

  static TrainState create(const TrainConfig& config, Phase phase_x, Phase phase_y);
};

/// Eq.-level objective for the generator update, with the component
/// breakdown. The GAN components are the generator-side least-squares terms;
/// the fakes are returned for reuse in the discriminator update.
template <typename T>
struct TotalLossResult {
  Tensor<T> value;
  Tensor<T> fake_x, fake_y;
  T gan_g = 0, gan_f = 0, cycle = 0, total = 0;
};

template <typename T>
TotalLossResult<T> total_loss(const TrainState<T>& state, const Tensor<T>& batch_x,
                              const Tensor<T>& batch_y, Tape<T>* tape,
                              NormMode mode = NormMode::Train, bool update_running = true);

/// Cycle-consistency loss of the state's generator pair on (x, y) batches.
template <typename T>
Tensor<T> cycle_loss(const TrainState<T>& state, const Tensor<T>& batch_x,
                     const Tensor<T>& batch_y, Tape<T>* tape, NormMode mode = NormMode::Train,
                     bool update_running = true);

template <typename T>
struct StepLog {
  std::int64_t epoch = 0, step = 0;
  T gan_g = 0, gan_f = 0, cycle = 0, total = 0;
  T d_x_loss = 0, d_y_loss = 0;
};

template <typename T>
struct EpochStats {
  std::int64_t steps = 0;
  T gan_g = 0, gan_f = 0, cycle = 0, total = 0, d_x_loss = 0, d_y_loss = 0;
};

template <typename T>
using StepCallback = std::function<void(const StepLog<T>&)>;

/// One pass over the X pool: alternating generator and discriminator Adam
/// updates on seeded unpaired batches. ceil(|X| / batch_size) steps; resumes
/// from state.step_in_epoch when a mid-epoch checkpoint was restored.
template <typename T>
EpochStats<T> train_epoch(TrainState<T>& state, const std::vector<Tensor<T>>& slices_x,
                          const std::vector<Tensor<T>>& slices_y,
                          const StepCallback<T>& on_step = {});

// ---- persistence ------------------------------------------------------------

template <typename T>
void checkpoint_save(const TrainState<T>& state, const std::filesystem::path& path);

template <typename T>
TrainState<T> checkpoint_load(const std::filesystem::path& path);

// ---- bridging ---------------------------------------------------------------

/// Volume slice -> [1,H,W] tensor.
template <typename T>
Tensor<T> slice_tensor(std::span<const float> slice, std::int64_t height, std::int64_t width);

/// All slices of every volume, in volume order then slice order.
template <typename T>
std::vector<Tensor<T>> collect_slices(const std::vector<const Volume*>& volumes);

/// Eval-mode slice translator backed by a generator (shared read-only).
SliceTranslator make_slice_translator(const GeneratorModel<float>& model);

extern template struct TrainState<float>;
extern template struct TrainState<double>;

}  // namespace ctcycle
