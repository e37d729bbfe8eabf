// End-to-end checks of the command-line tool, driven through std::system.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "ctcycle/metrics.hpp"
#include "ctcycle/registration.hpp"
#include "ctcycle/volume.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace ctcycle;

namespace {

const std::string kCli = CTCYCLE_CLI_PATH;

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "ctcycle_cli_tests";
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const auto status = std::system((kCli + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("phantom-gen writes triples and is byte-idempotent") {
  const auto dir = work_dir();
  const auto out_a = (dir / "ph_a").string();
  const auto out_b = (dir / "ph_b").string();
  REQUIRE(run("phantom-gen --out " + out_a + " --count 2 --size 32 --depth 2 --seed 5") == 0);
  REQUIRE(run("phantom-gen --out " + out_b + " --count 2 --size 32 --depth 2 --seed 5") == 0);
  for (const char* name : {"patient_000_native.cytv", "patient_000_venous.cytv",
                           "patient_001_arterial.cytv"}) {
    CHECK(fs::exists(fs::path(out_a) / name));
    CHECK(slurp(fs::path(out_a) / name) == slurp(fs::path(out_b) / name));
  }
  const auto v = load_volume(fs::path(out_a) / "patient_000_venous.cytv");
  CHECK(v.phase == Phase::Venous);
  CHECK(v.height == 32);
  CHECK(v.depth == 2);
}

TEST_CASE("evaluate --identity on identical volumes reports MAE 0, SSIM 1") {
  const auto dir = work_dir();
  const auto ph = (dir / "ph_eval").string();
  REQUIRE(run("phantom-gen --out " + ph + " --count 1 --size 32 --depth 2 --seed 7") == 0);
  const auto vol = ph + "/patient_000_native.cytv";
  const auto report = (dir / "identity.report").string();
  REQUIRE(run("evaluate --identity --src " + vol + " --tgt " + vol + " --report " + report) == 0);
  std::ifstream in(report);
  std::string line, last;
  while (std::getline(in, line)) last = line;
  CHECK(last == "summary, 0, 0, 1");
}

TEST_CASE("train, translate and evaluate round-trip at miniature scale") {
  const auto dir = work_dir();
  const auto ph = (dir / "ph_train").string();
  REQUIRE(run("phantom-gen --out " + ph + " --count 3 --size 32 --depth 2 --seed 11") == 0);

  const auto cfg_path = dir / "tiny.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "image_size = 32\n"
        << "generator_base_width = 4\n"
        << "head_dim = 8\n"
        << "heads = 2\n"
        << "transformer_blocks = 1\n"
        << "discriminator_base_width = 8\n"
        << "discriminator_strided = 2\n"
        << "epochs = 1\n"
        << "batch_size = 2\n"
        << "seed = 3\n"
        << "learning_rate = 0.0002\n";
  }
  const auto ckpt = (dir / "tiny.cyck").string();
  REQUIRE(run("train --data " + ph + " --pair native:venous --config " + cfg_path.string() +
              " --out " + ckpt) == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(ckpt + ".log"));
  {
    std::ifstream log(ckpt + ".log");
    std::string first;
    std::getline(log, first);
    CHECK(first.rfind("0, 0, ", 0) == 0);  // epoch, step, then loss columns
  }

  const auto translated = (dir / "translated.cytv").string();
  REQUIRE(run("translate --ckpt " + ckpt + " --direction x2y --in " + ph +
              "/patient_000_native.cytv --out " + translated) == 0);
  const auto tv = load_volume(translated);
  CHECK(tv.phase == Phase::Venous);
  CHECK(tv.height == 32);

  const auto report = (dir / "model.report").string();
  REQUIRE(run("evaluate --ckpt " + ckpt + " --src " + ph + "/patient_000_native.cytv --tgt " +
              ph + "/patient_000_venous.cytv --report " + report) == 0);
  CHECK(fs::exists(report));

  SUBCASE("phase mismatch against the checkpoint is a validation failure") {
    CHECK(run("evaluate --ckpt " + ckpt + " --src " + ph + "/patient_000_venous.cytv --tgt " +
              ph + "/patient_000_arterial.cytv --report " + report) == 3);
  }
}

TEST_CASE("register matches the library cascade and persists the field") {
  const auto dir = work_dir();
  const auto ph = (dir / "ph_reg").string();
  REQUIRE(run("phantom-gen --out " + ph + " --count 1 --size 32 --depth 4 --seed 13 "
              "--misalign 1.0") == 0);
  const auto moving = ph + "/patient_000_venous.cytv";
  const auto fixed = ph + "/patient_000_native.cytv";
  const auto aligned = (dir / "aligned.cytv").string();
  const auto field_path = (dir / "field.cyck").string();
  REQUIRE(run("register --moving " + moving + " --fixed " + fixed +
              " --cascades 1 --fit-steps 40 --seed 9 --out " + aligned + " --out-field " +
              field_path) == 0);

  // Library twin of the same per-pair fit.
  const auto mv = load_volume(moving);
  const auto fx = load_volume(fixed);
  RegistrationNetConfig net_cfg;
  net_cfg.seed = 9;
  net_cfg.train_steps = 40;
  auto net = ConvRegistrationNet::create(net_cfg);
  net.train({{&mv, &fx}});
  const auto cascade = cascade_register(net, mv, fx, 1);
  const auto produced = load_volume(aligned);
  const auto expected = warp(mv, cascade.net_field);
  REQUIRE(produced.voxels.size() == expected.voxels.size());
  for (std::size_t i = 0; i < produced.voxels.size(); ++i) {
    CHECK(produced.voxels[i] == expected.voxels[i]);
  }
  const auto field = load_field(field_path);
  CHECK(field.depth == 4);
  CHECK(field.height == 32);
}

TEST_CASE("exit codes distinguish usage, format and validation errors") {
  const auto dir = work_dir();
  CHECK(run("no-such-subcommand") == 1);
  CHECK(run("evaluate --identity --src /nonexistent.cytv --tgt /nonexistent.cytv --report " +
            (dir / "r.txt").string()) == 2);
  const auto bad = dir / "bad.cytv";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "XXXXgarbage";
  }
  CHECK(run("evaluate --identity --src " + bad.string() + " --tgt " + bad.string() +
            " --report " + (dir / "r2.txt").string()) == 2);
  CHECK(run("phantom-gen --out " + (dir / "x").string() + " --count 1 --size 32 --depth 1 "
            "--seed 1") == 3);  // randomized phantoms need depth >= 2
}
