#include "ctcycle/training.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ctcycle/checkpoint.hpp"

namespace ctcycle {

namespace {

constexpr std::uint64_t kStreamShuffle = 21;
constexpr std::uint64_t kStreamSampleY = 22;
constexpr std::uint64_t kStreamPool = 23;

std::string trim(const std::string& s) {
  std::size_t lo = 0, hi = s.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1]))) --hi;
  return s.substr(lo, hi - lo);
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda_cycle < 0.0) throw ValidationError("config: lambda_cycle must be >= 0");
  if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
  if (epochs < 0) throw ValidationError("config: epochs must be >= 0");
  if (learning_rate <= 0.0) throw ValidationError("config: learning_rate must be positive");
  generator_config().validate();
  discriminator_config().validate();
}

GeneratorConfig TrainConfig::generator_config() const {
  GeneratorConfig g;
  g.base_width = generator_base_width;
  g.transformer_channels = 4 * generator_base_width;
  g.pointwise_hidden = 16 * generator_base_width;
  g.heads = heads;
  g.head_dim = head_dim;
  g.transformer_blocks = transformer_blocks;
  g.image_size = image_size;
  return g;
}

DiscriminatorConfig TrainConfig::discriminator_config() const {
  DiscriminatorConfig d;
  d.base_width = discriminator_base_width;
  d.strided_layers = discriminator_strided;
  return d;
}

void TrainConfig::apply_line(const std::string& key, const std::string& value) {
  const auto as_i64 = [&]() { return static_cast<std::int64_t>(std::stoll(value)); };
  const auto as_f64 = [&]() { return std::stod(value); };
  if (key == "lambda_cycle") lambda_cycle = as_f64();
  else if (key == "learning_rate") learning_rate = as_f64();
  else if (key == "epochs") epochs = as_i64();
  else if (key == "batch_size") batch_size = as_i64();
  else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "beta1") beta1 = as_f64();
  else if (key == "beta2") beta2 = as_f64();
  else if (key == "adam_epsilon") adam_epsilon = as_f64();
  else if (key == "image_size") image_size = as_i64();
  else if (key == "history_buffer") history_buffer = as_i64();
  else if (key == "checkpoint_every") checkpoint_every = as_i64();
  else if (key == "paper_literal_lsgan") paper_literal_lsgan = as_i64() != 0;
  else if (key == "generator_base_width") generator_base_width = as_i64();
  else if (key == "transformer_blocks") transformer_blocks = as_i64();
  else if (key == "heads") heads = as_i64();
  else if (key == "head_dim") head_dim = as_i64();
  else if (key == "discriminator_base_width") discriminator_base_width = as_i64();
  else if (key == "discriminator_strided") discriminator_strided = as_i64();
  else throw ValidationError("config: unknown key \"" + key + "\"");
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw ValidationError("cannot open config file " + path.string());
  TrainConfig cfg;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected key = value");
    }
    try {
      cfg.apply_line(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    } catch (const std::invalid_argument&) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad value");
    }
  }
  cfg.validate();
  return cfg;
}

// ---- losses ----------------------------------------------------------------

template <typename T>
Tensor<T> lsgan_generator_loss(const Tensor<T>& fake_scores, bool paper_literal, Tape<T>* tape) {
  require_finite(fake_scores, "gan loss scores");
  if (paper_literal) return mean_all(square(fake_scores, tape), tape);
  return mean_all(square(add_scalar(fake_scores, T(-1), tape), tape), tape);
}

template <typename T>
Tensor<T> lsgan_discriminator_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores,
                                   bool paper_literal, Tape<T>* tape) {
  require_finite(real_scores, "gan loss scores");
  require_finite(fake_scores, "gan loss scores");
  if (paper_literal) {
    return add(mean_all(square(real_scores, tape), tape),
               mean_all(square(add_scalar(fake_scores, T(-1), tape), tape), tape), tape);
  }
  return add(mean_all(square(add_scalar(real_scores, T(-1), tape), tape), tape),
             mean_all(square(fake_scores, tape), tape), tape);
}

template <typename T>
Tensor<T> cycle_loss_term(const Tensor<T>& roundtrip, const Tensor<T>& original, Tape<T>* tape) {
  return mean_all(abs(sub(roundtrip, original, tape), tape), tape);
}

// ---- state -----------------------------------------------------------------

namespace {

template <typename T>
std::vector<Tensor<T>> model_params(GeneratorModel<T>& m) {
  std::vector<Tensor<T>> out;
  m.visit_params([&](const std::string&, Tensor<T>& p) { out.push_back(p); });
  return out;
}

template <typename T>
std::vector<Tensor<T>> model_params(DiscriminatorModel<T>& m) {
  std::vector<Tensor<T>> out;
  m.visit_params([&](const std::string&, Tensor<T>& p) { out.push_back(p); });
  return out;
}

}  // namespace

template <typename T>
TrainState<T> TrainState<T>::create(const TrainConfig& config, Phase phase_x, Phase phase_y) {
  config.validate();
  if (phase_x == phase_y) throw ValidationError("train: the two domains must be distinct phases");
  TrainState<T> s;
  s.config = config;
  s.phase_x = phase_x;
  s.phase_y = phase_y;
  s.rng = Rng(config.seed);
  const auto gcfg = config.generator_config();
  const auto dcfg = config.discriminator_config();
  // Init order is part of the determinism contract: G, F, D_X, D_Y.
  s.g_xy = GeneratorModel<T>::create(gcfg, s.rng);
  s.g_yx = GeneratorModel<T>::create(gcfg, s.rng);
  s.d_x = DiscriminatorModel<T>::create(dcfg, s.rng);
  s.d_y = DiscriminatorModel<T>::create(dcfg, s.rng);
  AdamConfig adam{config.learning_rate, config.beta1, config.beta2, config.adam_epsilon};
  s.opt_g_xy = Adam<T>(model_params(s.g_xy), adam);
  s.opt_g_yx = Adam<T>(model_params(s.g_yx), adam);
  s.opt_d_x = Adam<T>(model_params(s.d_x), adam);
  s.opt_d_y = Adam<T>(model_params(s.d_y), adam);
  return s;
}

template <typename T>
TotalLossResult<T> total_loss(const TrainState<T>& state, const Tensor<T>& batch_x,
                              const Tensor<T>& batch_y, Tape<T>* tape, NormMode mode,
                              bool update_running) {
  if (batch_x.shape() != batch_y.shape()) {
    throw ShapeError("total_loss: batch shapes differ");
  }
  const bool literal = state.config.paper_literal_lsgan;
  TotalLossResult<T> r;
  r.fake_y = state.g_xy.generate(batch_x, mode, tape, update_running);
  auto cyc_x = state.g_yx.generate(r.fake_y, mode, tape, update_running);
  r.fake_x = state.g_yx.generate(batch_y, mode, tape, update_running);
  auto cyc_y = state.g_xy.generate(r.fake_x, mode, tape, update_running);

  auto gan_g = lsgan_generator_loss(state.d_y.discriminate(r.fake_y, tape), literal, tape);
  auto gan_f = lsgan_generator_loss(state.d_x.discriminate(r.fake_x, tape), literal, tape);
  auto cyc = add(cycle_loss_term(cyc_x, batch_x, tape), cycle_loss_term(cyc_y, batch_y, tape), tape);
  r.value = add(add(gan_g, gan_f, tape),
                scale(cyc, static_cast<T>(state.config.lambda_cycle), tape), tape);

  r.gan_g = gan_g.item();
  r.gan_f = gan_f.item();
  r.cycle = cyc.item();
  r.total = r.value.item();
  if (!std::isfinite(static_cast<double>(r.total))) {
    throw NumericError("total_loss: objective is not finite");
  }
  return r;
}

template <typename T>
Tensor<T> cycle_loss(const TrainState<T>& state, const Tensor<T>& batch_x,
                     const Tensor<T>& batch_y, Tape<T>* tape, NormMode mode,
                     bool update_running) {
  auto cyc_x = state.g_yx.generate(state.g_xy.generate(batch_x, mode, tape, update_running), mode,
                                   tape, update_running);
  auto cyc_y = state.g_xy.generate(state.g_yx.generate(batch_y, mode, tape, update_running), mode,
                                   tape, update_running);
  return add(cycle_loss_term(cyc_x, batch_x, tape), cycle_loss_term(cyc_y, batch_y, tape), tape);
}

namespace {

/// CycleGAN-style image pool: below capacity the fresh fake goes straight
/// through and is stored; at capacity it swaps with a stored one half the
/// time. Operates on detached single-sample tensors.
template <typename T>
Tensor<T> pool_route(std::vector<Tensor<T>>& pool, std::int64_t capacity, Tensor<T> fake,
                     Rng& rng) {
  if (capacity <= 0) return fake;
  if (static_cast<std::int64_t>(pool.size()) < capacity) {
    pool.push_back(fake);
    return fake;
  }
  if (rng.uniform() < 0.5) {
    const auto j = rng.uniform_index(pool.size());
    auto out = pool[j];
    pool[j] = fake;
    return out;
  }
  return fake;
}

}  // namespace

template <typename T>
EpochStats<T> train_epoch(TrainState<T>& state, const std::vector<Tensor<T>>& slices_x,
                          const std::vector<Tensor<T>>& slices_y,
                          const StepCallback<T>& on_step) {
  if (slices_x.empty() || slices_y.empty()) {
    throw ValidationError("train_epoch: both sample pools must be non-empty");
  }
  const std::int64_t n_x = static_cast<std::int64_t>(slices_x.size());
  const std::int64_t n_y = static_cast<std::int64_t>(slices_y.size());
  const std::int64_t batch = state.config.batch_size;
  const std::int64_t steps = (n_x + batch - 1) / batch;
  const bool literal = state.config.paper_literal_lsgan;

  // The epoch schedule is a pure function of (seed, epoch), so a mid-epoch
  // resume recreates it from the counters alone.
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n_x));
  std::iota(perm.begin(), perm.end(), 0);
  auto shuffle_rng = derive_rng(state.config.seed, kStreamShuffle,
                               static_cast<std::uint64_t>(state.epoch));
  for (std::int64_t i = n_x - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(
        shuffle_rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }

  EpochStats<T> stats;
  for (std::int64_t step = state.step_in_epoch; step < steps; ++step) {
    const std::int64_t lo = step * batch;
    const std::int64_t hi = std::min(lo + batch, n_x);
    auto sample_rng = derive_rng(state.config.seed, kStreamSampleY,
                                 static_cast<std::uint64_t>(state.epoch),
                                 static_cast<std::uint64_t>(step));
    std::vector<Tensor<T>> xs, ys;
    for (std::int64_t i = lo; i < hi; ++i) {
      xs.push_back(slices_x[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      ys.push_back(slices_y[sample_rng.uniform_index(static_cast<std::uint64_t>(n_y))]);
    }
    auto x = stack_batch<T>(std::span<const Tensor<T>>(xs), nullptr);
    auto y = stack_batch<T>(std::span<const Tensor<T>>(ys), nullptr);

    // Generator update.
    Tape<T> tape;
    auto loss = total_loss(state, x, y, &tape);
    state.opt_g_xy.zero_grad();
    state.opt_g_yx.zero_grad();
    state.opt_d_x.zero_grad();
    state.opt_d_y.zero_grad();
    tape.backward(loss.value);
    state.opt_g_xy.step();
    state.opt_g_yx.step();

    // Discriminator update on real samples and detached (optionally pooled)
    // fakes.
    auto pool_rng = derive_rng(state.config.seed, kStreamPool,
                               static_cast<std::uint64_t>(state.epoch),
                               static_cast<std::uint64_t>(step));
    Tensor<T> fake_x_d = loss.fake_x.detach();
    Tensor<T> fake_y_d = loss.fake_y.detach();
    if (state.config.history_buffer > 0) {
      std::vector<Tensor<T>> routed_x, routed_y;
      for (std::int64_t i = 0; i < hi - lo; ++i) {
        routed_x.push_back(pool_route(state.pool_x, state.config.history_buffer,
                                      select_batch<T>(fake_x_d, i, nullptr), pool_rng));
        routed_y.push_back(pool_route(state.pool_y, state.config.history_buffer,
                                      select_batch<T>(fake_y_d, i, nullptr), pool_rng));
      }
      fake_x_d = stack_batch<T>(std::span<const Tensor<T>>(routed_x), nullptr);
      fake_y_d = stack_batch<T>(std::span<const Tensor<T>>(routed_y), nullptr);
    }

    Tape<T> d_tape;
    auto d_x_loss = lsgan_discriminator_loss(state.d_x.discriminate(x, &d_tape),
                                             state.d_x.discriminate(fake_x_d, &d_tape), literal,
                                             &d_tape);
    auto d_y_loss = lsgan_discriminator_loss(state.d_y.discriminate(y, &d_tape),
                                             state.d_y.discriminate(fake_y_d, &d_tape), literal,
                                             &d_tape);
    auto d_total = add(d_x_loss, d_y_loss, &d_tape);
    state.opt_d_x.zero_grad();
    state.opt_d_y.zero_grad();
    d_tape.backward(d_total);
    state.opt_d_x.step();
    state.opt_d_y.step();

    StepLog<T> log;
    log.epoch = state.epoch;
    log.step = step;
    log.gan_g = loss.gan_g;
    log.gan_f = loss.gan_f;
    log.cycle = loss.cycle;
    log.total = loss.total;
    log.d_x_loss = d_x_loss.item();
    log.d_y_loss = d_y_loss.item();

    stats.steps += 1;
    stats.gan_g += log.gan_g;
    stats.gan_f += log.gan_f;
    stats.cycle += log.cycle;
    stats.total += log.total;
    stats.d_x_loss += log.d_x_loss;
    stats.d_y_loss += log.d_y_loss;

    // Counter first: a callback that aborts the epoch leaves the state
    // checkpointable right after the completed step.
    state.step_in_epoch = step + 1;
    if (on_step) on_step(log);
  }
  if (stats.steps > 0) {
    const T inv = T(1) / static_cast<T>(stats.steps);
    stats.gan_g *= inv;
    stats.gan_f *= inv;
    stats.cycle *= inv;
    stats.total *= inv;
    stats.d_x_loss *= inv;
    stats.d_y_loss *= inv;
  }
  state.epoch += 1;
  state.step_in_epoch = 0;
  return stats;
}

// ---- persistence ------------------------------------------------------------

namespace {

template <typename T>
struct DtypeTag;
template <>
struct DtypeTag<float> {
  static constexpr std::uint64_t value = 0;
};
template <>
struct DtypeTag<double> {
  static constexpr std::uint64_t value = 1;
};

template <typename T>
std::vector<std::uint32_t> tensor_extents(const Tensor<T>& t) {
  std::vector<std::uint32_t> out;
  for (const auto e : t.shape()) out.push_back(static_cast<std::uint32_t>(e));
  return out;
}

template <typename T>
void add_tensor(CheckpointFile& ck, const std::string& name, const Tensor<T>& t) {
  if constexpr (std::is_same_v<T, float>) {
    ck.add_f32(name, tensor_extents(t), t.values());
  } else {
    ck.add_f64(name, tensor_extents(t), t.values());
  }
}

template <typename T>
void read_tensor(const CheckpointFile& ck, const std::string& name, Tensor<T>& t) {
  const auto& e = ck.get(name);
  const std::size_t expected = static_cast<std::size_t>(t.size());
  if constexpr (std::is_same_v<T, float>) {
    if (e.type != EntryType::F32 || e.f32.size() != expected) {
      throw FormatError("checkpoint entry \"" + name + "\" has wrong dtype or size");
    }
    std::copy(e.f32.begin(), e.f32.end(), t.values().begin());
  } else {
    if (e.type != EntryType::F64 || e.f64.size() != expected) {
      throw FormatError("checkpoint entry \"" + name + "\" has wrong dtype or size");
    }
    std::copy(e.f64.begin(), e.f64.end(), t.values().begin());
  }
}

double u64_bits_to_f64(std::uint64_t bits) {
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::uint64_t f64_to_u64_bits(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  return bits;
}

template <typename T, typename Model>
void save_model(CheckpointFile& ck, const std::string& prefix, Model& model, Adam<T>& opt) {
  model.visit_params(
      [&](const std::string& name, Tensor<T>& p) { add_tensor(ck, prefix + "." + name, p); });
  ck.add_scalar_u64("opt." + prefix + ".step", static_cast<std::uint64_t>(opt.step_count()));
  std::size_t i = 0;
  model.visit_params([&](const std::string& name, Tensor<T>&) {
    add_tensor(ck, "opt." + prefix + ".m." + name, opt.first_moments()[i]);
    add_tensor(ck, "opt." + prefix + ".v." + name, opt.second_moments()[i]);
    ++i;
  });
}

template <typename T, typename Model>
void load_model(const CheckpointFile& ck, const std::string& prefix, Model& model, Adam<T>& opt) {
  model.visit_params(
      [&](const std::string& name, Tensor<T>& p) { read_tensor(ck, prefix + "." + name, p); });
  opt.set_step_count(static_cast<std::int64_t>(ck.get_scalar_u64("opt." + prefix + ".step")));
  std::size_t i = 0;
  model.visit_params([&](const std::string& name, Tensor<T>&) {
    read_tensor(ck, "opt." + prefix + ".m." + name, opt.first_moments()[i]);
    read_tensor(ck, "opt." + prefix + ".v." + name, opt.second_moments()[i]);
    ++i;
  });
}

}  // namespace

template <typename T>
void checkpoint_save(const TrainState<T>& state, const std::filesystem::path& path) {
  CheckpointFile ck;
  const auto& c = state.config;
  ck.add_scalar_u64("meta.dtype", DtypeTag<T>::value);
  ck.add_scalar_u64("meta.phase_x", static_cast<std::uint64_t>(state.phase_x));
  ck.add_scalar_u64("meta.phase_y", static_cast<std::uint64_t>(state.phase_y));
  ck.add_scalar_u64("meta.epoch", static_cast<std::uint64_t>(state.epoch));
  ck.add_scalar_u64("meta.step_in_epoch", static_cast<std::uint64_t>(state.step_in_epoch));
  ck.add_scalar_u64("config.lambda_cycle", f64_to_u64_bits(c.lambda_cycle));
  ck.add_scalar_u64("config.learning_rate", f64_to_u64_bits(c.learning_rate));
  ck.add_scalar_u64("config.epochs", static_cast<std::uint64_t>(c.epochs));
  ck.add_scalar_u64("config.batch_size", static_cast<std::uint64_t>(c.batch_size));
  ck.add_scalar_u64("config.seed", c.seed);
  ck.add_scalar_u64("config.beta1", f64_to_u64_bits(c.beta1));
  ck.add_scalar_u64("config.beta2", f64_to_u64_bits(c.beta2));
  ck.add_scalar_u64("config.adam_epsilon", f64_to_u64_bits(c.adam_epsilon));
  ck.add_scalar_u64("config.image_size", static_cast<std::uint64_t>(c.image_size));
  ck.add_scalar_u64("config.history_buffer", static_cast<std::uint64_t>(c.history_buffer));
  ck.add_scalar_u64("config.checkpoint_every", static_cast<std::uint64_t>(c.checkpoint_every));
  ck.add_scalar_u64("config.paper_literal_lsgan", c.paper_literal_lsgan ? 1 : 0);
  ck.add_scalar_u64("config.generator_base_width",
                    static_cast<std::uint64_t>(c.generator_base_width));
  ck.add_scalar_u64("config.transformer_blocks", static_cast<std::uint64_t>(c.transformer_blocks));
  ck.add_scalar_u64("config.heads", static_cast<std::uint64_t>(c.heads));
  ck.add_scalar_u64("config.head_dim", static_cast<std::uint64_t>(c.head_dim));
  ck.add_scalar_u64("config.discriminator_base_width",
                    static_cast<std::uint64_t>(c.discriminator_base_width));
  ck.add_scalar_u64("config.discriminator_strided",
                    static_cast<std::uint64_t>(c.discriminator_strided));
  ck.add_u64("rng.state", {4},
             std::span<const std::uint64_t>(state.rng.state().data(), 4));

  auto& s = const_cast<TrainState<T>&>(state);  // visitors are non-const traversals
  save_model(ck, "g_xy", s.g_xy, s.opt_g_xy);
  save_model(ck, "g_yx", s.g_yx, s.opt_g_yx);
  save_model(ck, "d_x", s.d_x, s.opt_d_x);
  save_model(ck, "d_y", s.d_y, s.opt_d_y);
  s.g_xy.visit_buffers(
      [&](const std::string& name, Tensor<T>& b) { add_tensor(ck, "g_xy.buf." + name, b); });
  s.g_yx.visit_buffers(
      [&](const std::string& name, Tensor<T>& b) { add_tensor(ck, "g_yx.buf." + name, b); });

  ck.add_scalar_u64("pool_x.count", state.pool_x.size());
  for (std::size_t i = 0; i < state.pool_x.size(); ++i) {
    add_tensor(ck, "pool_x." + std::to_string(i), state.pool_x[i]);
  }
  ck.add_scalar_u64("pool_y.count", state.pool_y.size());
  for (std::size_t i = 0; i < state.pool_y.size(); ++i) {
    add_tensor(ck, "pool_y." + std::to_string(i), state.pool_y[i]);
  }
  ck.save(path);
}

template <typename T>
TrainState<T> checkpoint_load(const std::filesystem::path& path) {
  const auto ck = CheckpointFile::load(path);
  if (ck.get_scalar_u64("meta.dtype") != DtypeTag<T>::value) {
    throw FormatError(path.string() + ": checkpoint precision does not match the requested one");
  }
  TrainConfig c;
  c.lambda_cycle = u64_bits_to_f64(ck.get_scalar_u64("config.lambda_cycle"));
  c.learning_rate = u64_bits_to_f64(ck.get_scalar_u64("config.learning_rate"));
  c.epochs = static_cast<std::int64_t>(ck.get_scalar_u64("config.epochs"));
  c.batch_size = static_cast<std::int64_t>(ck.get_scalar_u64("config.batch_size"));
  c.seed = ck.get_scalar_u64("config.seed");
  c.beta1 = u64_bits_to_f64(ck.get_scalar_u64("config.beta1"));
  c.beta2 = u64_bits_to_f64(ck.get_scalar_u64("config.beta2"));
  c.adam_epsilon = u64_bits_to_f64(ck.get_scalar_u64("config.adam_epsilon"));
  c.image_size = static_cast<std::int64_t>(ck.get_scalar_u64("config.image_size"));
  c.history_buffer = static_cast<std::int64_t>(ck.get_scalar_u64("config.history_buffer"));
  c.checkpoint_every = static_cast<std::int64_t>(ck.get_scalar_u64("config.checkpoint_every"));
  c.paper_literal_lsgan = ck.get_scalar_u64("config.paper_literal_lsgan") != 0;
  c.generator_base_width =
      static_cast<std::int64_t>(ck.get_scalar_u64("config.generator_base_width"));
  c.transformer_blocks = static_cast<std::int64_t>(ck.get_scalar_u64("config.transformer_blocks"));
  c.heads = static_cast<std::int64_t>(ck.get_scalar_u64("config.heads"));
  c.head_dim = static_cast<std::int64_t>(ck.get_scalar_u64("config.head_dim"));
  c.discriminator_base_width =
      static_cast<std::int64_t>(ck.get_scalar_u64("config.discriminator_base_width"));
  c.discriminator_strided =
      static_cast<std::int64_t>(ck.get_scalar_u64("config.discriminator_strided"));

  auto state = TrainState<T>::create(
      c, static_cast<Phase>(ck.get_scalar_u64("meta.phase_x")),
      static_cast<Phase>(ck.get_scalar_u64("meta.phase_y")));
  state.epoch = static_cast<std::int64_t>(ck.get_scalar_u64("meta.epoch"));
  state.step_in_epoch = static_cast<std::int64_t>(ck.get_scalar_u64("meta.step_in_epoch"));

  const auto& rng_entry = ck.get("rng.state");
  if (rng_entry.type != EntryType::U64 || rng_entry.count() != 4) {
    throw FormatError(path.string() + ": rng.state must be four u64 words");
  }
  std::array<std::uint64_t, 4> rng_state;
  std::copy(rng_entry.u64.begin(), rng_entry.u64.end(), rng_state.begin());
  state.rng.set_state(rng_state);

  load_model(ck, "g_xy", state.g_xy, state.opt_g_xy);
  load_model(ck, "g_yx", state.g_yx, state.opt_g_yx);
  load_model(ck, "d_x", state.d_x, state.opt_d_x);
  load_model(ck, "d_y", state.d_y, state.opt_d_y);
  state.g_xy.visit_buffers(
      [&](const std::string& name, Tensor<T>& b) { read_tensor(ck, "g_xy.buf." + name, b); });
  state.g_yx.visit_buffers(
      [&](const std::string& name, Tensor<T>& b) { read_tensor(ck, "g_yx.buf." + name, b); });

  const auto read_pool = [&](const std::string& prefix, std::vector<Tensor<T>>& pool) {
    const auto count = ck.get_scalar_u64(prefix + ".count");
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto& e = ck.get(prefix + "." + std::to_string(i));
      Shape shape;
      for (const auto ext : e.extents) shape.push_back(static_cast<std::int64_t>(ext));
      auto t = Tensor<T>::zeros(shape);
      read_tensor(ck, prefix + "." + std::to_string(i), t);
      pool.push_back(t);
    }
  };
  read_pool("pool_x", state.pool_x);
  read_pool("pool_y", state.pool_y);
  return state;
}

// ---- bridging ---------------------------------------------------------------

template <typename T>
Tensor<T> slice_tensor(std::span<const float> slice, std::int64_t height, std::int64_t width) {
  if (static_cast<std::int64_t>(slice.size()) != height * width) {
    throw ShapeError("slice_tensor: span size does not match extents");
  }
  std::vector<T> data(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) data[i] = static_cast<T>(slice[i]);
  return Tensor<T>::from(std::move(data), {1, height, width});
}

template <typename T>
std::vector<Tensor<T>> collect_slices(const std::vector<const Volume*>& volumes) {
  std::vector<Tensor<T>> out;
  for (const auto* v : volumes) {
    for (std::int64_t z = 0; z < v->depth; ++z) {
      out.push_back(slice_tensor<T>(v->slice(z), v->height, v->width));
    }
  }
  return out;
}

SliceTranslator make_slice_translator(const GeneratorModel<float>& model) {
  return [&model](std::span<const float> in, std::span<float> out, std::int64_t height,
                  std::int64_t width) {
    auto x = slice_tensor<float>(in, height, width);
    auto y = model.generate(x, NormMode::Eval, nullptr, false);
    const auto vals = y.values();
    std::copy(vals.begin(), vals.end(), out.begin());
  };
}

// ---- instantiations ----------------------------------------------------------

#define CTCYCLE_INSTANTIATE_TRAINING(T)                                                       \
  template Tensor<T> lsgan_generator_loss<T>(const Tensor<T>&, bool, Tape<T>*);               \
  template Tensor<T> lsgan_discriminator_loss<T>(const Tensor<T>&, const Tensor<T>&, bool,    \
                                                 Tape<T>*);                                   \
  template Tensor<T> cycle_loss_term<T>(const Tensor<T>&, const Tensor<T>&, Tape<T>*);        \
  template struct TrainState<T>;                                                              \
  template TotalLossResult<T> total_loss<T>(const TrainState<T>&, const Tensor<T>&,           \
                                            const Tensor<T>&, Tape<T>*, NormMode, bool);      \
  template Tensor<T> cycle_loss<T>(const TrainState<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                   Tape<T>*, NormMode, bool);                                 \
  template EpochStats<T> train_epoch<T>(TrainState<T>&, const std::vector<Tensor<T>>&,        \
                                        const std::vector<Tensor<T>>&,                        \
                                        const StepCallback<T>&);                              \
  template void checkpoint_save<T>(const TrainState<T>&, const std::filesystem::path&);       \
  template TrainState<T> checkpoint_load<T>(const std::filesystem::path&);                    \
  template Tensor<T> slice_tensor<T>(std::span<const float>, std::int64_t, std::int64_t);     \
  template std::vector<Tensor<T>> collect_slices<T>(const std::vector<const Volume*>&);

CTCYCLE_INSTANTIATE_TRAINING(float)
CTCYCLE_INSTANTIATE_TRAINING(double)

#undef CTCYCLE_INSTANTIATE_TRAINING

}  // namespace ctcycle
