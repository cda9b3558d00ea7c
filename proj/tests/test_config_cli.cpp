#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixformer/config.hpp"
#include "fixformer/errors.hpp"

using namespace fixformer;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "fixformer_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

int run(const std::string& args) {
  std::string cmd = std::string(FIXFORMER_BIN) + " " + args + " >" +
                    (work_dir() / "stdout.txt").string() + " 2>" +
                    (work_dir() / "stderr.txt").string();
  int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

std::string captured(const char* name) {
  std::ifstream in(work_dir() / name);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Small enough to train in milliseconds.
const std::string kTinyModel =
    " --set model.image_size=16 --set model.patch_size=8 --set model.d_model=16"
    " --set model.n_heads=2 --set model.n_encoder_layers=1"
    " --set model.n_integration_layers=1 --set model.n_classes=2";

std::string dataset_dir() {
  static std::string dir = [] {
    std::string d = (work_dir() / "ds").string();
    REQUIRE(run("generate --set synth.n_train=24 --set synth.n_val=12"
                " --set synth.n_test=24 --set synth.n_classes=2"
                " --set synth.image_size=16 --set data_dir=" + d) == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("config entries round trip through set") {
  RunConfig a;
  a.variant = IntegrationVariant::TwoWay;
  a.train.lr = 3.14159e-3;
  a.synth.class_priors = {0.25, 0.75};
  a.synth.n_classes = 2;
  a.bench_lengths = {1, 32};
  RunConfig b;
  for (const auto& [k, v] : a.entries()) b.set(k, v);
  CHECK(a.entries() == b.entries());
  CHECK(b.variant == IntegrationVariant::TwoWay);
  CHECK(b.train.lr == a.train.lr);
  CHECK(b.synth.class_priors == a.synth.class_priors);
  CHECK(b.bench_lengths == a.bench_lengths);
}

TEST_CASE("config rejects unknown keys and bad values") {
  RunConfig c;
  CHECK_THROWS_WITH_AS(c.set("model.width", "3"),
                       doctest::Contains("unknown key 'model.width'"),
                       ContractError);
  CHECK_THROWS_WITH_AS(c.set("train.lr", "fast"),
                       doctest::Contains("train.lr"), ContractError);
  CHECK_THROWS_AS(c.set("train.epochs", "-2"), ContractError);
  CHECK_THROWS_AS(c.set("train.epochs", "3x"), ContractError);
  CHECK_THROWS_AS(c.set("variant", "conv"), ContractError);
  CHECK_THROWS_AS(c.set("train.use_lora", "maybe"), ContractError);
  CHECK_NOTHROW(c.set("train.use_lora", "true"));
  CHECK(c.use_lora);
}

TEST_CASE("config files parse with comments and blank lines") {
  fs::path p = work_dir() / "good.cfg";
  {
    std::ofstream out(p);
    out << "# run recipe\n\nvariant = two_way\n  train.epochs=3  \n"
        << "synth.class_priors=0.5,0.5\nsynth.n_classes=2\n";
  }
  RunConfig c = load_run_config(p.string());
  CHECK(c.variant == IntegrationVariant::TwoWay);
  CHECK(c.train.epochs == 3);
  CHECK(c.synth.class_priors == std::vector<double>{0.5, 0.5});

  fs::path bad = work_dir() / "bad.cfg";
  {
    std::ofstream out(bad);
    out << "variant=two_way\njust words\n";
  }
  CHECK_THROWS_WITH_AS(load_run_config(bad.string()), doctest::Contains(":2:"),
                       ContractError);
  {
    std::ofstream out(bad);
    out << "train.lr=quick\n";
  }
  CHECK_THROWS_WITH_AS(load_run_config(bad.string()), doctest::Contains(":1:"),
                       ContractError);
  CHECK_THROWS_AS(load_run_config((work_dir() / "absent.cfg").string()),
                  ContractError);
}

TEST_CASE("overrides require key=value form") {
  RunConfig c;
  apply_override(c, "train.batch_size=16");
  CHECK(c.train.batch_size == 16);
  CHECK_THROWS_AS(apply_override(c, "train.batch_size"), ContractError);
  CHECK_THROWS_AS(apply_override(c, "nope=1"), ContractError);
}

TEST_CASE("generate is deterministic and rejects unusable output paths") {
  std::string ds = dataset_dir();
  CHECK(fs::exists(fs::path(ds) / "manifest.csv"));
  std::string again = (work_dir() / "ds2").string();
  REQUIRE(run("generate --set synth.n_train=24 --set synth.n_val=12"
              " --set synth.n_test=24 --set synth.n_classes=2"
              " --set synth.image_size=16 --set data_dir=" + again) == 0);
  CHECK(slurp(fs::path(ds) / "manifest.csv") ==
        slurp(fs::path(again) / "manifest.csv"));
  CHECK(slurp(fs::path(ds) / "images/00007.pgm") ==
        slurp(fs::path(again) / "images/00007.pgm"));
  CHECK(slurp(fs::path(ds) / "gaze/00031.csv") ==
        slurp(fs::path(again) / "gaze/00031.csv"));

  fs::path blocked = work_dir() / "blocked";
  {
    std::ofstream out(blocked);
    out << "a file, not a directory\n";
  }
  CHECK(run("generate --set synth.n_train=2 --set synth.n_val=1"
            " --set synth.n_test=1 --set data_dir=" + blocked.string()) == 2);
  CHECK(captured("stderr.txt").find("blocked") != std::string::npos);
}

TEST_CASE("train writes checkpoint and byte-stable reports") {
  std::string out = (work_dir() / "run_train").string();
  std::string cmd = "train --set data_dir=" + dataset_dir() +
                    " --set out_dir=" + out + kTinyModel +
                    " --set train.epochs=2 --set train.batch_size=8"
                    " --set train.lr=0.001";
  REQUIRE(run(cmd) == 0);
  CHECK(fs::exists(fs::path(out) / "checkpoint.fxck"));
  std::string txt = slurp(fs::path(out) / "report.txt");
  std::string js = slurp(fs::path(out) / "report.json");
  CHECK(txt.find("config.variant=cross_attention") != std::string::npos);
  CHECK(txt.find("result.test.accuracy=") != std::string::npos);
  CHECK(txt.find("history.2.val_accuracy=") != std::string::npos);
  REQUIRE(run(cmd) == 0);
  CHECK(slurp(fs::path(out) / "report.txt") == txt);
  CHECK(slurp(fs::path(out) / "report.json") == js);

  CHECK(run("train --set data_dir=" + (work_dir() / "absent").string()) == 2);
}

TEST_CASE("zero-epoch training still produces a full report") {
  std::string out = (work_dir() / "run_zero").string();
  REQUIRE(run("train --set data_dir=" + dataset_dir() + " --set out_dir=" + out +
              kTinyModel + " --set train.epochs=0") == 0);
  std::string txt = slurp(fs::path(out) / "report.txt");
  CHECK(txt.find("result.steps=0") != std::string::npos);
  CHECK(txt.find("result.best_epoch=0") != std::string::npos);
  CHECK(txt.find("result.test.accuracy=") != std::string::npos);
  CHECK(fs::exists(fs::path(out) / "checkpoint.fxck"));
}

TEST_CASE("eval reuses a trained checkpoint") {
  std::string out = (work_dir() / "run_eval").string();
  REQUIRE(run("train --set data_dir=" + dataset_dir() + " --set out_dir=" + out +
              kTinyModel + " --set train.epochs=1 --set train.batch_size=8") == 0);
  REQUIRE(run("eval --checkpoint " + out + "/checkpoint.fxck --split val" +
              " --set data_dir=" + dataset_dir() + " --set out_dir=" + out) == 0);
  std::string txt = slurp(fs::path(out) / "eval_report.txt");
  CHECK(txt.find("eval.split=val") != std::string::npos);
  CHECK(txt.find("eval.n_samples=12") != std::string::npos);
  CHECK(txt.find("eval.accuracy=") != std::string::npos);
  CHECK(run("eval --checkpoint " + out + "/missing.fxck --set data_dir=" +
            dataset_dir()) == 2);
}

TEST_CASE("gradcheck audits every group and the corrupt hook trips it") {
  std::string out = (work_dir() / "run_grad").string();
  std::string small =
      " --set model.image_size=16 --set model.patch_size=8 --set model.d_model=8"
      " --set model.n_heads=2 --set model.n_encoder_layers=1"
      " --set model.n_integration_layers=1 --set model.n_classes=2";
  REQUIRE(run("gradcheck --set out_dir=" + out + small) == 0);
  std::string txt = slurp(fs::path(out) / "gradcheck_report.txt");
  CHECK(txt.find("gradcheck.failed=0") != std::string::npos);
  CHECK(txt.find("gradcheck.head.w=") != std::string::npos);
  CHECK(txt.find(",pass") != std::string::npos);

  CHECK(run("gradcheck --corrupt head.w --set out_dir=" + out + small) == 3);
  txt = slurp(fs::path(out) / "gradcheck_report.txt");
  CHECK(txt.find(",fail") != std::string::npos);

  REQUIRE(run("gradcheck --set variant=image_only --set out_dir=" + out + small) == 0);
  txt = slurp(fs::path(out) / "gradcheck_report.txt");
  CHECK(txt.find("gradcheck.gaze") == std::string::npos);  // no gaze rows
  CHECK(txt.find("gradcheck.vit.block0") != std::string::npos);
}

TEST_CASE("bench reports exact buffer accounting") {
  std::string out = (work_dir() / "run_bench").string();
  REQUIRE(run("bench --set out_dir=" + out + kTinyModel +
              " --set bench.iters=2 --set bench.lengths=1,32") == 0);
  std::string txt = slurp(fs::path(out) / "bench_report.txt");
  CHECK(txt.find("bench.sum_len=33") != std::string::npos);
  CHECK(txt.find("bench.ragged_values=528") != std::string::npos);   // 33*16
  CHECK(txt.find("bench.padded_values=1024") != std::string::npos);  // 2*32*16
  CHECK(txt.find("bench.memory_ratio=0.515625") != std::string::npos);

  REQUIRE(run("bench --set out_dir=" + out + kTinyModel +
              " --set bench.iters=2 --set bench.lengths=5,5,5") == 0);
  txt = slurp(fs::path(out) / "bench_report.txt");
  CHECK(txt.find("bench.memory_ratio=1\n") != std::string::npos);  // no waste
}

TEST_CASE("export-attn dumps one stochastic matrix per layer and head") {
  std::string out = (work_dir() / "run_attn").string();
  REQUIRE(run("train --set data_dir=" + dataset_dir() + " --set out_dir=" + out +
              kTinyModel + " --set train.epochs=1 --set train.batch_size=8") == 0);
  REQUIRE(run("export-attn --checkpoint " + out + "/checkpoint.fxck" +
              " --sample 5 --set data_dir=" + dataset_dir() +
              " --set out_dir=" + out) == 0);
  fs::path f = fs::path(out) / "attn" / "layer0_head1.txt";
  REQUIRE(fs::exists(f));
  std::ifstream in(f);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    double v, sum = 0.0;
    std::size_t cols = 0;
    while (ss >> v) {
      CHECK(v >= 0.0);
      sum += v;
      ++cols;
    }
    CHECK(cols > 0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    ++rows;
  }
  CHECK(rows == 5);  // class token + four patches of a 16px image

  CHECK(run("export-attn --checkpoint " + out + "/checkpoint.fxck --sample 9999"
            " --set data_dir=" + dataset_dir()) == 2);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("train --set nonsense=1") == 1);
  CHECK(run("train --set train.batch_size=0") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("eval --split test") == 1);  // missing required --checkpoint
  CHECK(run("") == 1);                   // no subcommand
  CHECK(run("--help") == 0);
}
