#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fixformer/config.hpp"
#include "fixformer/errors.hpp"
#include "fixformer/gradcheck.hpp"
#include "fixformer/ops.hpp"
#include "fixformer/synthetic.hpp"
#include "fixformer/tensor.hpp"
#include "fixformer/util.hpp"

namespace fs = std::filesystem;
using fixformer::RunConfig;
using nlohmann::ordered_json;

namespace {

using Lines = std::vector<std::pair<std::string, std::string>>;

std::string join_doubles(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fixformer::fmt_g17(xs[i]);
  }
  return out;
}

ordered_json config_json(const RunConfig& cfg) {
  ordered_json j;
  j["variant"] = fixformer::variant_name(cfg.variant);
  j["model"] = {{"image_size", cfg.model.image_size},
                {"patch_size", cfg.model.patch_size},
                {"d_model", cfg.model.d_model},
                {"n_heads", cfg.model.n_heads},
                {"n_encoder_layers", cfg.model.n_encoder_layers},
                {"n_integration_layers", cfg.model.n_integration_layers},
                {"mlp_ratio", cfg.model.mlp_ratio},
                {"n_classes", cfg.model.n_classes}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_size", cfg.train.batch_size},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"eps", cfg.train.eps},
                {"lora_rank", cfg.train.lora_rank},
                {"lora_alpha", cfg.train.lora_alpha},
                {"seed", cfg.train.seed},
                {"use_lora", cfg.use_lora}};
  j["synth"] = {{"n_classes", cfg.synth.n_classes},
                {"n_train", cfg.synth.n_train},
                {"n_val", cfg.synth.n_val},
                {"n_test", cfg.synth.n_test},
                {"image_size", cfg.synth.image_size},
                {"gaze_informativeness", cfg.synth.gaze_informativeness},
                {"noise", cfg.synth.noise},
                {"class_priors", cfg.synth.class_priors},
                {"seed", cfg.synth.seed}};
  j["data_dir"] = cfg.data_dir;
  j["out_dir"] = cfg.out_dir;
  j["bench"] = {{"lengths", cfg.bench_lengths}, {"iters", cfg.bench_iters}};
  return j;
}

void append_config(Lines& lines, const RunConfig& cfg) {
  for (const auto& [k, v] : cfg.entries()) lines.push_back({"config." + k, v});
}

void append_metrics(Lines& lines, const std::string& prefix,
                    const fixformer::MetricsReport& m) {
  lines.push_back({prefix + ".accuracy", fixformer::fmt_g17(m.accuracy)});
  lines.push_back({prefix + ".macro_f1", fixformer::fmt_g17(m.macro_f1)});
  lines.push_back({prefix + ".auc", fixformer::fmt_g17(m.auc)});
  lines.push_back({prefix + ".precision", join_doubles(m.precision)});
  lines.push_back({prefix + ".recall", join_doubles(m.recall)});
  for (std::size_t r = 0; r < m.confusion.size(); ++r) {
    std::string row;
    for (std::size_t c = 0; c < m.confusion[r].size(); ++c) {
      if (c) row += ',';
      row += std::to_string(m.confusion[r][c]);
    }
    lines.push_back({prefix + ".confusion." + std::to_string(r), row});
  }
}

ordered_json metrics_json(const fixformer::MetricsReport& m) {
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1},
          {"auc", m.auc},           {"precision", m.precision},
          {"recall", m.recall},     {"confusion", m.confusion}};
}

void write_reports(const std::string& dir, const std::string& stem,
                   const Lines& lines, const ordered_json& j) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw fixformer::DataError("cannot create " + dir + ": " + ec.message());
  const std::string txt_path = dir + "/" + stem + ".txt";
  std::ofstream txt(txt_path);
  if (!txt) throw fixformer::DataError("cannot write " + txt_path);
  for (const auto& [k, v] : lines) txt << k << '=' << v << '\n';
  const std::string json_path = dir + "/" + stem + ".json";
  std::ofstream js(json_path);
  if (!js) throw fixformer::DataError("cannot write " + json_path);
  js << j.dump(2) << '\n';
}

fixformer::Dataset split_data(const RunConfig& cfg, fixformer::Split s) {
  return fixformer::load_split(cfg.data_dir + "/manifest.csv", s);
}

fixformer::Model build_model(const RunConfig& cfg) {
  fixformer::Model m =
      fixformer::Model::init(cfg.model, cfg.variant, cfg.train.seed);
  if (cfg.use_lora)
    m.enable_lora(cfg.train.lora_rank, cfg.train.lora_alpha, cfg.train.seed);
  return m;
}

int cmd_generate(const RunConfig& cfg) {
  auto dataset = fixformer::generate_dataset(cfg.synth);
  fixformer::emit_dataset_files(dataset, cfg.data_dir);
  std::map<fixformer::Split, std::size_t> counts;
  for (const auto& s : dataset) counts[s.split] += 1;
  std::cout << "wrote " << dataset.size() << " samples to " << cfg.data_dir
            << " (train " << counts[fixformer::Split::Train] << ", val "
            << counts[fixformer::Split::Val] << ", test "
            << counts[fixformer::Split::Test] << ")\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  fixformer::Dataset train_ds = split_data(cfg, fixformer::Split::Train);
  fixformer::Dataset val_ds = split_data(cfg, fixformer::Split::Val);
  fixformer::Dataset test_ds = split_data(cfg, fixformer::Split::Test);
  fixformer::Model model = build_model(cfg);
  fixformer::TrainResult res =
      fixformer::train(model, train_ds, val_ds, test_ds, cfg.train);

  const std::string ck_path = cfg.out_dir + "/checkpoint.fxck";
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec)
    throw fixformer::DataError("cannot create " + cfg.out_dir + ": " + ec.message());
  fixformer::save_checkpoint(ck_path, model, cfg.train);

  const std::size_t best_epoch =
      res.history.empty() ? 0 : res.history[res.best_epoch].epoch;
  Lines lines;
  append_config(lines, cfg);
  lines.push_back({"result.steps", std::to_string(res.steps)});
  lines.push_back({"result.best_epoch", std::to_string(best_epoch)});
  lines.push_back(
      {"result.best_val_accuracy", fixformer::fmt_g17(res.best_val_accuracy)});
  append_metrics(lines, "result.test", res.test_metrics);
  for (const auto& h : res.history) {
    const std::string p = "history." + std::to_string(h.epoch);
    lines.push_back({p + ".train_loss", fixformer::fmt_g17(h.train_loss)});
    lines.push_back({p + ".val_accuracy", fixformer::fmt_g17(h.val_accuracy)});
  }

  ordered_json j;
  j["config"] = config_json(cfg);
  j["result"] = {{"steps", res.steps},
                 {"best_epoch", best_epoch},
                 {"best_val_accuracy", res.best_val_accuracy},
                 {"test", metrics_json(res.test_metrics)}};
  j["result"]["history"] = ordered_json::array();
  for (const auto& h : res.history)
    j["result"]["history"].push_back({{"epoch", h.epoch},
                                      {"train_loss", h.train_loss},
                                      {"val_accuracy", h.val_accuracy}});
  write_reports(cfg.out_dir, "report", lines, j);

  std::cout << "trained " << fixformer::variant_name(cfg.variant) << " for "
            << res.steps << " steps; best epoch " << best_epoch
            << " (val accuracy " << res.best_val_accuracy << ")\n"
            << "test accuracy " << res.test_metrics.accuracy << ", macro F1 "
            << res.test_metrics.macro_f1 << ", AUC " << res.test_metrics.auc
            << '\n'
            << "checkpoint: " << ck_path << '\n'
            << "report: " << cfg.out_dir << "/report.txt\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ck_path,
             const std::string& split_name) {
  fixformer::Checkpoint ck = fixformer::load_checkpoint(ck_path);
  fixformer::Split split = fixformer::parse_split(split_name);
  fixformer::Dataset ds = split_data(cfg, split);
  fixformer::MetricsReport m =
      fixformer::evaluate(ck.model, ds, ck.train_cfg.batch_size);

  Lines lines;
  append_config(lines, cfg);
  lines.push_back({"eval.checkpoint", ck_path});
  lines.push_back({"eval.split", split_name});
  lines.push_back({"eval.n_samples", std::to_string(ds.size())});
  append_metrics(lines, "eval", m);
  ordered_json j;
  j["config"] = config_json(cfg);
  j["eval"] = {{"checkpoint", ck_path},
               {"split", split_name},
               {"n_samples", ds.size()}};
  j["eval"].update(metrics_json(m));
  write_reports(cfg.out_dir, "eval_report", lines, j);

  std::cout << split_name << " accuracy " << m.accuracy << ", macro F1 "
            << m.macro_f1 << ", AUC " << m.auc << " over " << ds.size()
            << " samples\n"
            << "report: " << cfg.out_dir << "/eval_report.txt\n";
  return 0;
}

// Deterministic stand-in batch, independent of any dataset on disk.
void gradcheck_batch(const RunConfig& cfg, std::vector<fixformer::ImageSample>& imgs,
                     std::vector<fixformer::FixationSequence>& gazes,
                     std::vector<int>& labels) {
  const std::size_t side = cfg.model.image_size;
  const std::size_t lens[2] = {3, 5};
  for (std::size_t b = 0; b < 2; ++b) {
    auto rng = fixformer::named_rng(cfg.train.seed,
                                    "gradcheck.sample" + std::to_string(b));
    std::uniform_real_distribution<double> px(0.0, 1.0);
    std::vector<double> v(side * side);
    for (double& x : v) x = px(rng);
    imgs.push_back({fixformer::Tensor({side, side}, std::move(v))});
    fixformer::FixationSequence fs;
    std::uniform_real_distribution<double> coord(0.2, 0.8);
    for (std::size_t k = 0; k < lens[b]; ++k) {
      fixformer::Fixation f;
      f.start_s = 0.3 * static_cast<double>(k);
      f.duration_s = 0.15 + 0.05 * static_cast<double>(k);
      f.x = coord(rng);
      f.y = coord(rng);
      fs.fixations.push_back(f);
    }
    gazes.push_back(std::move(fs));
    labels.push_back(static_cast<int>(b % cfg.model.n_classes));
  }
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& corrupt,
                  std::size_t elements) {
  fixformer::Model model = build_model(cfg);
  std::vector<fixformer::ImageSample> imgs;
  std::vector<fixformer::FixationSequence> gazes;
  std::vector<int> labels;
  gradcheck_batch(cfg, imgs, gazes, labels);
  std::vector<const fixformer::ImageSample*> ip{&imgs[0], &imgs[1]};
  std::vector<const fixformer::FixationSequence*> gp{&gazes[0], &gazes[1]};

  auto loss_value = [&]() {
    return fixformer::cross_entropy_mean(model.forward_batch(ip, gp), labels)
        .value();
  };
  std::vector<fixformer::ParamRef> params = model.params();
  auto populate = [&]() {
    for (auto& p : params) p.tensor.zero_grad();
    fixformer::GradTape tape;
    fixformer::TapeScope scope(tape);
    fixformer::Tensor loss =
        fixformer::cross_entropy_mean(model.forward_batch(ip, gp), labels);
    tape.backward(loss);
  };

  std::vector<fixformer::NamedParam> named;
  for (const auto& p : params)
    if (p.trainable) named.push_back({p.name, p.tensor});

  fixformer::GradCheckSettings settings;
  settings.max_elements_per_group = elements;
  settings.corrupt_group = corrupt;
  std::vector<fixformer::GradCheckReport> reports =
      fixformer::gradcheck_all(named, loss_value, populate, settings);

  Lines lines;
  append_config(lines, cfg);
  ordered_json rows = ordered_json::array();
  std::size_t failed = 0;
  for (const auto& r : reports) {
    failed += r.passed ? 0 : 1;
    lines.push_back({"gradcheck." + r.group,
                     fixformer::fmt_g17(r.max_rel_err) + (r.passed ? ",pass" : ",fail")});
    rows.push_back({{"group", r.group},
                    {"elements", r.elements_checked},
                    {"max_rel_err", r.max_rel_err},
                    {"passed", r.passed}});
    std::cout << (r.passed ? "pass" : "FAIL") << "  " << r.group << "  "
              << r.max_rel_err << '\n';
  }
  lines.push_back({"gradcheck.groups", std::to_string(reports.size())});
  lines.push_back({"gradcheck.failed", std::to_string(failed)});
  ordered_json j;
  j["config"] = config_json(cfg);
  j["gradcheck"] = {{"groups", reports.size()}, {"failed", failed}, {"rows", rows}};
  write_reports(cfg.out_dir, "gradcheck_report", lines, j);
  std::cout << reports.size() << " parameter groups, " << failed << " failed\n";
  if (failed) {
    std::cerr << "gradcheck: " << failed << " parameter groups failed\n";
    return 3;
  }
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  const std::vector<std::size_t>& lens = cfg.bench_lengths;
  const std::size_t b = lens.size();
  const std::size_t d = cfg.model.d_model;
  std::size_t sum_t = 0, max_t = 0;
  for (std::size_t t : lens) {
    sum_t += t;
    max_t = std::max(max_t, t);
  }
  const std::size_t ragged_values = sum_t * d;
  const std::size_t padded_values = b * max_t * d;
  const double ratio =
      static_cast<double>(sum_t) / static_cast<double>(b * max_t);

  fixformer::Model model = build_model(cfg);
  const std::size_t side = cfg.model.image_size;
  std::vector<fixformer::ImageSample> imgs;
  std::vector<fixformer::FixationSequence> ragged, padded;
  for (std::size_t i = 0; i < b; ++i) {
    auto rng =
        fixformer::named_rng(cfg.train.seed, "bench.sample" + std::to_string(i));
    std::uniform_real_distribution<double> px(0.0, 1.0);
    std::vector<double> v(side * side);
    for (double& x : v) x = px(rng);
    imgs.push_back({fixformer::Tensor({side, side}, std::move(v))});
    std::uniform_real_distribution<double> coord(0.1, 0.9);
    fixformer::FixationSequence fs;
    for (std::size_t k = 0; k < lens[i]; ++k) {
      fixformer::Fixation f;
      f.start_s = 0.25 * static_cast<double>(k);
      f.duration_s = 0.2;
      f.x = coord(rng);
      f.y = coord(rng);
      fs.fixations.push_back(f);
    }
    ragged.push_back(fs);
    while (fs.fixations.size() < max_t) {  // physical padding, same cost shape
      fixformer::Fixation f;
      f.start_s = 0.25 * static_cast<double>(fs.fixations.size());
      f.duration_s = 0.2;
      f.x = 0.5;
      f.y = 0.5;
      fs.fixations.push_back(f);
    }
    padded.push_back(std::move(fs));
  }
  std::vector<const fixformer::ImageSample*> ip;
  for (const auto& im : imgs) ip.push_back(&im);
  auto run = [&](const std::vector<fixformer::FixationSequence>& seqs) {
    std::vector<const fixformer::FixationSequence*> gp;
    for (const auto& s : seqs) gp.push_back(&s);
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < cfg.bench_iters; ++it)
      model.forward_batch(ip, gp);
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() /
           static_cast<double>(cfg.bench_iters);
  };
  run(ragged);  // warm up
  const double ragged_ms = run(ragged);
  const double padded_ms = run(padded);

  Lines lines;
  append_config(lines, cfg);
  lines.push_back({"bench.batch", std::to_string(b)});
  lines.push_back({"bench.max_len", std::to_string(max_t)});
  lines.push_back({"bench.sum_len", std::to_string(sum_t)});
  lines.push_back({"bench.ragged_values", std::to_string(ragged_values)});
  lines.push_back({"bench.padded_values", std::to_string(padded_values)});
  lines.push_back({"bench.memory_ratio", fixformer::fmt_g17(ratio)});
  ordered_json j;
  j["config"] = config_json(cfg);
  j["bench"] = {{"batch", b},
                {"max_len", max_t},
                {"sum_len", sum_t},
                {"ragged_values", ragged_values},
                {"padded_values", padded_values},
                {"memory_ratio", ratio}};
  write_reports(cfg.out_dir, "bench_report", lines, j);

  std::cout << "batch " << b << ", lengths sum " << sum_t << ", max " << max_t
            << '\n'
            << "gaze value buffer: ragged " << ragged_values << " vs padded "
            << padded_values << " values (ratio " << ratio << ")\n"
            << "forward time (measured, varies): ragged " << ragged_ms
            << " ms vs padded " << padded_ms << " ms per batch\n"
            << "report: " << cfg.out_dir << "/bench_report.txt\n";
  return 0;
}

int cmd_export_attn(const RunConfig& cfg, const std::string& ck_path,
                    std::size_t sample_id) {
  fixformer::Checkpoint ck = fixformer::load_checkpoint(ck_path);
  const std::string manifest = cfg.data_dir + "/manifest.csv";
  const fixformer::ManifestEntry* hit = nullptr;
  std::vector<fixformer::ManifestEntry> entries = fixformer::load_manifest(manifest);
  for (const auto& e : entries)
    if (std::stoull(e.id) == sample_id) {
      hit = &e;
      break;
    }
  if (!hit)
    throw fixformer::DataError(manifest + ": no sample with id " +
                               std::to_string(sample_id));
  const fs::path root = fs::path(manifest).parent_path();
  fixformer::ImageSample img =
      fixformer::load_pgm((root / hit->image_path).string());
  fixformer::FixationSequence gaze = fixformer::fixations_from_raw(
      fixformer::load_gaze_csv((root / hit->gaze_path).string()).samples);

  std::vector<fixformer::LayerAttention> layers =
      ck.model.export_attention(&img, &gaze);

  const std::string dir = cfg.out_dir + "/attn";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw fixformer::DataError("cannot create " + dir + ": " + ec.message());
  std::size_t files = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const fixformer::AttnSink& sink = layers[l].elements.at(0);
    for (std::size_t h = 0; h < sink.head_weights.size(); ++h) {
      const fixformer::Tensor& w = sink.head_weights[h];
      const std::string path = dir + "/layer" + std::to_string(l) + "_head" +
                               std::to_string(h) + ".txt";
      std::ofstream out(path);
      if (!out) throw fixformer::DataError("cannot write " + path);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
          if (c) out << ' ';
          out << fixformer::fmt_g17(w.at(r, c));
        }
        out << '\n';
      }
      ++files;
    }
  }
  std::cout << "sample " << sample_id << ": wrote " << files
            << " attention matrices (" << layers.size() << " layers x "
            << (files / std::max<std::size_t>(layers.size(), 1))
            << " heads) to " << dir << '\n';
  return 0;
}

template <typename F>
int run_guarded(F&& f) {
  try {
    return f();
  } catch (const fixformer::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fixformer::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const fixformer::ContractError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const fixformer::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path,
                  "configuration file, one key=value per line");
  cmd->add_option("--set", a.sets, "override one config key, e.g. train.epochs=3");
}

RunConfig resolve(const CommonArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = fixformer::load_run_config(a.config_path);
  for (const std::string& s : a.sets) fixformer::apply_override(cfg, s);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaze-guided image classification pipeline"};
  app.require_subcommand(1);

  CommonArgs ga, ta, ea, ca, ba, xa;
  std::string eval_ck, eval_split = "test", export_ck, corrupt;
  std::size_t sample_id = 0, elements = 4;

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, ga);
  CLI::App* train = app.add_subcommand(
      "train", "train a model, write checkpoint and report");
  add_common(train, ta);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, ea);
  eval->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, val or test");
  CLI::App* grad = app.add_subcommand(
      "gradcheck", "finite-difference audit of every trainable parameter group");
  add_common(grad, ca);
  grad->add_option("--elements", elements,
                   "elements checked per group, 0 means all");
  grad->add_option("--corrupt", corrupt,
                   "perturb analytic gradients of matching groups (self-test)")
      ->group("");
  CLI::App* bench = app.add_subcommand(
      "bench", "ragged vs padded gaze batching: memory accounting and timing");
  add_common(bench, ba);
  CLI::App* exp = app.add_subcommand("export-attn",
                                     "dump image-to-gaze attention matrices");
  add_common(exp, xa);
  exp->add_option("--checkpoint", export_ck, "checkpoint file")->required();
  exp->add_option("--sample", sample_id, "sample id from the dataset manifest")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (gen->parsed()) return run_guarded([&] { return cmd_generate(resolve(ga)); });
  if (train->parsed()) return run_guarded([&] { return cmd_train(resolve(ta)); });
  if (eval->parsed())
    return run_guarded([&] { return cmd_eval(resolve(ea), eval_ck, eval_split); });
  if (grad->parsed())
    return run_guarded([&] { return cmd_gradcheck(resolve(ca), corrupt, elements); });
  if (bench->parsed()) return run_guarded([&] { return cmd_bench(resolve(ba)); });
  if (exp->parsed())
    return run_guarded(
        [&] { return cmd_export_attn(resolve(xa), export_ck, sample_id); });
  return 1;
}
