// Command-line front end: phantom generation, training, translation,
// evaluation, registration, and the gradient/shape/parameter self-check.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctcycle/grad_check.hpp"
#include "ctcycle/metrics.hpp"
#include "ctcycle/phantom.hpp"
#include "ctcycle/registration.hpp"
#include "ctcycle/training.hpp"

namespace fs = std::filesystem;
using namespace ctcycle;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFormat = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

// Pinned by the closed-form layer arithmetic for the default configuration.
constexpr std::int64_t kExpectedGeneratorParams = 3565409;

struct PhantomGenArgs {
  std::string out_dir;
  std::int64_t count = 10;
  std::int64_t size = 128;
  std::int64_t depth = 4;
  std::uint64_t seed = 1;
  double misalign = 0.0;
  double noise = 0.01;
};

int run_phantom_gen(const PhantomGenArgs& args) {
  fs::create_directories(args.out_dir);
  for (std::int64_t p = 0; p < args.count; ++p) {
    auto spec_rng = derive_rng(args.seed, 1, static_cast<std::uint64_t>(p));
    auto spec = PhantomSpec::randomized(args.size, args.depth, spec_rng);
    spec.noise_sigma = args.noise;
    spec.misalign_amplitude = args.misalign;
    const auto triple =
        generate_phantom_triple(spec, args.seed * 1000003ULL + static_cast<std::uint64_t>(p));
    char stem[64];
    std::snprintf(stem, sizeof(stem), "patient_%03lld", static_cast<long long>(p));
    save_volume(triple.native, fs::path(args.out_dir) / (std::string(stem) + "_native.cytv"));
    save_volume(triple.venous, fs::path(args.out_dir) / (std::string(stem) + "_venous.cytv"));
    save_volume(triple.arterial, fs::path(args.out_dir) / (std::string(stem) + "_arterial.cytv"));
  }
  std::cout << "wrote " << args.count << " phantom triples to " << args.out_dir << "\n";
  return kExitOk;
}

std::pair<Phase, Phase> parse_pair(const std::string& pair) {
  const auto colon = pair.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("--pair must look like native:venous");
  }
  return {phase_from_name(pair.substr(0, colon)), phase_from_name(pair.substr(colon + 1))};
}

std::vector<Volume> load_phase_volumes(const fs::path& dir, Phase phase) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".cytv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Volume> out;
  for (const auto& f : files) {
    auto v = load_volume(f);
    if (v.phase == phase) out.push_back(std::move(v));
  }
  return out;
}

struct TrainArgs {
  std::string data_dir, pair = "native:venous", config_file, out_ckpt, log_file;
  std::int64_t epochs = -1;
  std::int64_t seed = -1;
};

int run_train(const TrainArgs& args) {
  TrainConfig cfg;
  if (!args.config_file.empty()) cfg = TrainConfig::from_file(args.config_file);
  if (args.epochs >= 0) cfg.epochs = args.epochs;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  cfg.validate();

  const auto [phase_x, phase_y] = parse_pair(args.pair);
  const auto vols_x = load_phase_volumes(args.data_dir, phase_x);
  const auto vols_y = load_phase_volumes(args.data_dir, phase_y);
  if (vols_x.empty() || vols_y.empty()) {
    throw ValidationError("no volumes for the requested phases under " + args.data_dir);
  }
  for (const auto* pool : {&vols_x, &vols_y}) {
    for (const auto& v : *pool) {
      if (v.height != cfg.image_size) {
        throw ValidationError("volume slice size " + std::to_string(v.height) +
                              " does not match configured image_size " +
                              std::to_string(cfg.image_size));
      }
    }
  }
  std::vector<const Volume*> px, py;
  for (const auto& v : vols_x) px.push_back(&v);
  for (const auto& v : vols_y) py.push_back(&v);
  const auto slices_x = collect_slices<float>(px);
  const auto slices_y = collect_slices<float>(py);

  auto state = TrainState<float>::create(cfg, phase_x, phase_y);
  const std::string log_path = args.log_file.empty() ? args.out_ckpt + ".log" : args.log_file;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw ValidationError("cannot open loss log " + log_path);
  log.precision(9);

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto stats = train_epoch<float>(state, slices_x, slices_y,
                                          [&](const StepLog<float>& s) {
                                            log << s.epoch << ", " << s.step << ", " << s.gan_g
                                                << ", " << s.gan_f << ", " << s.cycle << ", "
                                                << s.total << "\n";
                                          });
    std::cout << "epoch " << epoch << ": total " << stats.total << " cycle " << stats.cycle
              << " d_x " << stats.d_x_loss << " d_y " << stats.d_y_loss << "\n";
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      checkpoint_save(state, args.out_ckpt);
    }
  }
  checkpoint_save(state, args.out_ckpt);
  std::cout << "checkpoint written to " << args.out_ckpt << "\n";
  return kExitOk;
}

Volume translate_volume(const TrainState<float>& state, bool x_to_y, const Volume& input) {
  const auto& model = x_to_y ? state.g_xy : state.g_yx;
  const auto translator = make_slice_translator(model);
  Volume out = input;
  out.phase = x_to_y ? state.phase_y : state.phase_x;
  for (std::int64_t z = 0; z < input.depth; ++z) {
    translator(input.slice(z), out.slice(z), input.height, input.width);
  }
  return out;
}

struct TranslateArgs {
  std::string ckpt, direction = "x2y", in_path, out_path;
};

int run_translate(const TranslateArgs& args) {
  if (args.direction != "x2y" && args.direction != "y2x") {
    throw ValidationError("--direction must be x2y or y2x");
  }
  const auto state = checkpoint_load<float>(args.ckpt);
  const auto input = load_volume(args.in_path);
  save_volume(translate_volume(state, args.direction == "x2y", input), args.out_path);
  return kExitOk;
}

struct EvaluateArgs {
  std::string ckpt, src, tgt, report;
  bool identity = false;
};

int run_evaluate(const EvaluateArgs& args) {
  const auto src = load_volume(args.src);
  const auto tgt = load_volume(args.tgt);
  TranslationReport report;
  if (args.identity) {
    report = evaluate_translation(nullptr, src, tgt);
  } else {
    if (args.ckpt.empty()) throw ValidationError("evaluate needs --ckpt or --identity");
    const auto state = checkpoint_load<float>(args.ckpt);
    bool x_to_y = false;
    if (src.phase == state.phase_x && tgt.phase == state.phase_y) {
      x_to_y = true;
    } else if (src.phase == state.phase_y && tgt.phase == state.phase_x) {
      x_to_y = false;
    } else {
      throw ValidationError(std::string("checkpoint was trained on ") +
                            phase_name(state.phase_x) + ":" + phase_name(state.phase_y) +
                            ", which does not cover " + phase_name(src.phase) + " -> " +
                            phase_name(tgt.phase));
    }
    const auto translator = make_slice_translator(x_to_y ? state.g_xy : state.g_yx);
    report = evaluate_translation(&translator, src, tgt);
  }
  save_report(report, args.report);
  std::cout << "summary, " << report.mean_mae << ", " << report.mean_rmse << ", "
            << report.mean_ssim << "\n";
  return kExitOk;
}

struct RegisterArgs {
  std::string moving, fixed, out, translate_ckpt, out_field;
  std::int64_t cascades = 1;
  std::int64_t fit_steps = 200;
  std::uint64_t seed = 7;
};

int run_register(const RegisterArgs& args) {
  const auto moving = load_volume(args.moving);
  const auto fixed = load_volume(args.fixed);

  SliceTranslator translator = [](std::span<const float> in, std::span<float> out, std::int64_t,
                                  std::int64_t) { std::copy(in.begin(), in.end(), out.begin()); };
  TrainState<float> state;
  if (!args.translate_ckpt.empty()) {
    state = checkpoint_load<float>(args.translate_ckpt);
    bool x_to_y = false;
    if (moving.phase == state.phase_x && fixed.phase == state.phase_y) {
      x_to_y = true;
    } else if (moving.phase == state.phase_y && fixed.phase == state.phase_x) {
      x_to_y = false;
    } else {
      throw ValidationError("translator checkpoint does not cover the phase pair " +
                            std::string(phase_name(moving.phase)) + " -> " +
                            phase_name(fixed.phase));
    }
    translator = make_slice_translator(x_to_y ? state.g_xy : state.g_yx);
  }

  // Translate first, then fit the displacement network on this pair.
  Volume moving_translated = moving;
  moving_translated.phase = fixed.phase;
  for (std::int64_t z = 0; z < moving.depth; ++z) {
    translator(moving.slice(z), moving_translated.slice(z), moving.height, moving.width);
  }

  RegistrationNetConfig net_cfg;
  net_cfg.seed = args.seed;
  net_cfg.train_steps = args.fit_steps;
  auto net = ConvRegistrationNet::create(net_cfg);
  net.train({{&moving_translated, &fixed}});

  const auto cascade = cascade_register(net, moving_translated, fixed, args.cascades);
  save_volume(warp(moving, cascade.net_field), args.out);
  if (!args.out_field.empty()) save_field(cascade.net_field, args.out_field);
  const auto aligned = warp(moving, cascade.net_field);
  std::cout << "mae(fixed, moving) " << mae(fixed.voxels, moving.voxels) << " -> mae(fixed, aligned) "
            << mae(fixed.voxels, aligned.voxels) << "\n";
  return kExitOk;
}

int run_self_check() {
  int failures = 0;
  const auto report_line = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << what << "\n";
    if (!ok) ++failures;
  };

  {
    Rng rng(1);
    GeneratorConfig cfg;
    auto model = GeneratorModel<float>::create(cfg, rng);
    const auto count = model.parameter_count();
    report_line(count == kExpectedGeneratorParams,
                "generator parameters: " + std::to_string(count) + " (expected " +
                    std::to_string(kExpectedGeneratorParams) + ")");
  }

  {
    bool ok = true;
    Rng rng(2);
    for (const std::int64_t size : {16, 64}) {
      auto cfg = GeneratorConfig::miniature(size);
      auto model = GeneratorModel<float>::create(cfg, rng);
      auto x = Tensor<float>::randn({1, size, size}, rng, 0.0, 0.3);
      ok = ok && model.generate(x, NormMode::Eval, nullptr, false).shape() == x.shape();
    }
    GeneratorConfig cfg;
    cfg.image_size = 128;
    auto model = GeneratorModel<float>::create(cfg, rng);
    auto x = Tensor<float>::randn({1, 128, 128}, rng, 0.0, 0.3);
    auto t = model.downsample(x, NormMode::Eval, nullptr, false);
    ok = ok && t.shape() == Shape{128, 16, 16};
    ok = ok && model.generate(x, NormMode::Eval, nullptr, false).shape() == x.shape();
    report_line(ok, "shape contract at sizes 16/64/128");
  }

  {
    bool ok = true;
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      auto logits = Tensor<float>::randn({8, 6}, rng, 0.0, 20.0);
      auto s = softmax(logits, 1);
      for (std::int64_t r = 0; r < 8; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < 6; ++c) sum += s.at({r, c});
        ok = ok && std::fabs(sum - 1.0) < 1e-6;
      }
    }
    report_line(ok, "attention softmax rows sum to 1");
  }

  {
    Rng rng(4);
    auto cfg = GeneratorConfig::miniature(16);
    cfg.transformer_blocks = 2;
    auto model = GeneratorModel<double>::create(cfg, rng);
    auto x = Tensor<double>::randn({2, 1, 16, 16}, rng, 0.0, 0.5);
    const auto f = [&](Tape<double>* tape) {
      return sum_all(model.generate(x, NormMode::Train, tape, false), tape);
    };
    GradCheckOptions opts;
    opts.max_elements = 6;
    double worst = 0.0;
    int checked = 0;
    model.visit_params([&](const std::string& name, Tensor<double>& p) {
      if (checked % 7 == 0) {  // sampled sweep across the parameter list
        const auto rep = grad_check<double>(f, p, opts);
        worst = std::max(worst, rep.max_rel_error);
        (void)name;
      }
      ++checked;
    });
    report_line(worst < 1e-4, "miniature generator gradients vs central differences, worst " +
                                  std::to_string(worst));
  }

  {
    Rng rng(5);
    auto model = DiscriminatorModel<double>::create(DiscriminatorConfig::miniature(), rng);
    auto x = Tensor<double>::randn({1, 16, 16}, rng, 0.0, 0.5);
    const auto f = [&](Tape<double>* tape) {
      return mean_all(square(model.discriminate(x, tape), tape), tape);
    };
    GradCheckOptions opts;
    opts.max_elements = 8;
    double worst = 0.0;
    model.visit_params([&](const std::string&, Tensor<double>& p) {
      const auto rep = grad_check<double>(f, p, opts);
      worst = std::max(worst, rep.max_rel_error);
    });
    report_line(worst < 1e-4, "miniature discriminator gradients vs central differences, worst " +
                                  std::to_string(worst));
  }

  return failures == 0 ? kExitOk : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-consistent contrast-phase CT translation and registration"};
  app.require_subcommand(1);

  PhantomGenArgs pg;
  auto* phantom_cmd = app.add_subcommand("phantom-gen", "Generate synthetic phantom triples");
  phantom_cmd->add_option("--out", pg.out_dir, "Output directory")->required();
  phantom_cmd->add_option("--count", pg.count, "Number of phantom patients");
  phantom_cmd->add_option("--size", pg.size, "Slice size in pixels");
  phantom_cmd->add_option("--depth", pg.depth, "Slices per volume");
  phantom_cmd->add_option("--seed", pg.seed, "Random seed");
  phantom_cmd->add_option("--misalign", pg.misalign, "Misalignment amplitude in voxels");
  phantom_cmd->add_option("--noise", pg.noise, "Gaussian noise sigma");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the translation pair on unpaired slices");
  train_cmd->add_option("--data", tr.data_dir, "Directory of CYTV volumes")->required();
  train_cmd->add_option("--pair", tr.pair, "Domain pair, e.g. native:venous");
  train_cmd->add_option("--config", tr.config_file, "key = value training config");
  train_cmd->add_option("--out", tr.out_ckpt, "Checkpoint path")->required();
  train_cmd->add_option("--log", tr.log_file, "Loss log path (default: <out>.log)");
  train_cmd->add_option("--epochs", tr.epochs, "Override config epochs");
  train_cmd->add_option("--seed", tr.seed, "Override config seed");

  TranslateArgs ta;
  auto* translate_cmd = app.add_subcommand("translate", "Translate a volume between phases");
  translate_cmd->add_option("--ckpt", ta.ckpt, "Checkpoint path")->required();
  translate_cmd->add_option("--direction", ta.direction, "x2y or y2x")->required();
  translate_cmd->add_option("--in", ta.in_path, "Input CYTV volume")->required();
  translate_cmd->add_option("--out", ta.out_path, "Output CYTV volume")->required();

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Slice-wise MAE/RMSE/SSIM report");
  evaluate_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path");
  evaluate_cmd->add_flag("--identity", ev.identity, "No-transfer baseline");
  evaluate_cmd->add_option("--src", ev.src, "Source volume")->required();
  evaluate_cmd->add_option("--tgt", ev.tgt, "Target volume")->required();
  evaluate_cmd->add_option("--report", ev.report, "Report file")->required();

  RegisterArgs rg;
  auto* register_cmd = app.add_subcommand("register", "Deformable registration with cascades");
  register_cmd->add_option("--moving", rg.moving, "Moving volume")->required();
  register_cmd->add_option("--fixed", rg.fixed, "Fixed volume")->required();
  register_cmd->add_option("--cascades", rg.cascades, "Cascade steps (n >= 1)");
  register_cmd->add_option("--translate-ckpt", rg.translate_ckpt,
                           "Translate moving into the fixed phase first");
  register_cmd->add_option("--out", rg.out, "Aligned output volume")->required();
  register_cmd->add_option("--out-field", rg.out_field, "Persist the net displacement field");
  register_cmd->add_option("--fit-steps", rg.fit_steps, "Per-pair fitting steps");
  register_cmd->add_option("--seed", rg.seed, "Fitting seed");

  auto* selfcheck_cmd =
      app.add_subcommand("self-check", "Gradient, shape and parameter-count suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or help text
    return code == 0 ? 0 : 1;
  }

  try {
    if (phantom_cmd->parsed()) return run_phantom_gen(pg);
    if (train_cmd->parsed()) return run_train(tr);
    if (translate_cmd->parsed()) return run_translate(ta);
    if (evaluate_cmd->parsed()) return run_evaluate(ev);
    if (register_cmd->parsed()) return run_register(rg);
    if (selfcheck_cmd->parsed()) return run_self_check();
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
