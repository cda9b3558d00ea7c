#include "fixformer/config.hpp"

#include <fstream>
#include <sstream>

#include "fixformer/errors.hpp"
#include "fixformer/util.hpp"

namespace fixformer {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ContractError("config: bad value for '" + key + "': '" + value + "'");
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) bad_value(key, value);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  bad_value(key, value);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          Parse parse_one) {
  std::vector<T> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_one(key, trim(item)));
  return out;
}

template <typename Seq, typename Fmt>
std::string join(const Seq& xs, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "variant") {
    try {
      variant = parse_variant(value);
    } catch (const ContractError&) {
      bad_value(key, value);
    }
  } else if (key == "model.image_size") {
    model.image_size = parse_size(key, value);
  } else if (key == "model.patch_size") {
    model.patch_size = parse_size(key, value);
  } else if (key == "model.d_model") {
    model.d_model = parse_size(key, value);
  } else if (key == "model.n_heads") {
    model.n_heads = parse_size(key, value);
  } else if (key == "model.n_encoder_layers") {
    model.n_encoder_layers = parse_size(key, value);
  } else if (key == "model.n_integration_layers") {
    model.n_integration_layers = parse_size(key, value);
  } else if (key == "model.mlp_ratio") {
    model.mlp_ratio = parse_size(key, value);
  } else if (key == "model.n_classes") {
    model.n_classes = parse_size(key, value);
  } else if (key == "train.epochs") {
    train.epochs = parse_size(key, value);
  } else if (key == "train.lr") {
    train.lr = parse_double(key, value);
  } else if (key == "train.weight_decay") {
    train.weight_decay = parse_double(key, value);
  } else if (key == "train.batch_size") {
    train.batch_size = parse_size(key, value);
  } else if (key == "train.beta1") {
    train.beta1 = parse_double(key, value);
  } else if (key == "train.beta2") {
    train.beta2 = parse_double(key, value);
  } else if (key == "train.eps") {
    train.eps = parse_double(key, value);
  } else if (key == "train.lora_rank") {
    train.lora_rank = parse_size(key, value);
  } else if (key == "train.lora_alpha") {
    train.lora_alpha = parse_double(key, value);
  } else if (key == "train.seed") {
    train.seed = parse_size(key, value);
  } else if (key == "train.use_lora") {
    use_lora = parse_bool(key, value);
  } else if (key == "synth.n_classes") {
    synth.n_classes = parse_size(key, value);
  } else if (key == "synth.n_train") {
    synth.n_train = parse_size(key, value);
  } else if (key == "synth.n_val") {
    synth.n_val = parse_size(key, value);
  } else if (key == "synth.n_test") {
    synth.n_test = parse_size(key, value);
  } else if (key == "synth.image_size") {
    synth.image_size = parse_size(key, value);
  } else if (key == "synth.gaze_informativeness") {
    synth.gaze_informativeness = parse_double(key, value);
  } else if (key == "synth.noise") {
    synth.noise = parse_double(key, value);
  } else if (key == "synth.class_priors") {
    synth.class_priors = parse_list<double>(key, value, parse_double);
  } else if (key == "synth.seed") {
    synth.seed = parse_size(key, value);
  } else if (key == "data_dir") {
    data_dir = value;
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "bench.lengths") {
    bench_lengths = parse_list<std::size_t>(key, value, parse_size);
  } else if (key == "bench.iters") {
    bench_iters = parse_size(key, value);
  } else {
    throw ContractError("config: unknown key '" + key + "'");
  }
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (data_dir.empty()) throw ContractError("config: data_dir must not be empty");
  if (out_dir.empty()) throw ContractError("config: out_dir must not be empty");
  if (bench_lengths.empty())
    throw ContractError("config: bench.lengths must not be empty");
  for (std::size_t t : bench_lengths)
    if (t == 0) throw ContractError("config: bench.lengths entries must be positive");
  if (bench_iters == 0) throw ContractError("config: bench.iters must be positive");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  auto u = [](std::size_t v) { return std::to_string(v); };
  std::vector<std::pair<std::string, std::string>> e;
  e.push_back({"variant", variant_name(variant)});
  e.push_back({"model.image_size", u(model.image_size)});
  e.push_back({"model.patch_size", u(model.patch_size)});
  e.push_back({"model.d_model", u(model.d_model)});
  e.push_back({"model.n_heads", u(model.n_heads)});
  e.push_back({"model.n_encoder_layers", u(model.n_encoder_layers)});
  e.push_back({"model.n_integration_layers", u(model.n_integration_layers)});
  e.push_back({"model.mlp_ratio", u(model.mlp_ratio)});
  e.push_back({"model.n_classes", u(model.n_classes)});
  e.push_back({"train.epochs", u(train.epochs)});
  e.push_back({"train.lr", fmt_g17(train.lr)});
  e.push_back({"train.weight_decay", fmt_g17(train.weight_decay)});
  e.push_back({"train.batch_size", u(train.batch_size)});
  e.push_back({"train.beta1", fmt_g17(train.beta1)});
  e.push_back({"train.beta2", fmt_g17(train.beta2)});
  e.push_back({"train.eps", fmt_g17(train.eps)});
  e.push_back({"train.lora_rank", u(train.lora_rank)});
  e.push_back({"train.lora_alpha", fmt_g17(train.lora_alpha)});
  e.push_back({"train.seed", u(train.seed)});
  e.push_back({"train.use_lora", use_lora ? "1" : "0"});
  e.push_back({"synth.n_classes", u(synth.n_classes)});
  e.push_back({"synth.n_train", u(synth.n_train)});
  e.push_back({"synth.n_val", u(synth.n_val)});
  e.push_back({"synth.n_test", u(synth.n_test)});
  e.push_back({"synth.image_size", u(synth.image_size)});
  e.push_back({"synth.gaze_informativeness", fmt_g17(synth.gaze_informativeness)});
  e.push_back({"synth.noise", fmt_g17(synth.noise)});
  e.push_back({"synth.class_priors",
               join(synth.class_priors, [](double v) { return fmt_g17(v); })});
  e.push_back({"synth.seed", u(synth.seed)});
  e.push_back({"data_dir", data_dir});
  e.push_back({"out_dir", out_dir});
  e.push_back({"bench.lengths",
               join(bench_lengths, [&](std::size_t v) { return u(v); })});
  e.push_back({"bench.iters", u(bench_iters)});
  return e;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open config file " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ContractError(path + ":" + std::to_string(lineno) +
                          ": expected key=value");
    try {
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ContractError& e) {
      throw ContractError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ContractError("override '" + assignment + "' is not key=value");
  std::string key = assignment.substr(0, eq);
  cfg.set(key, assignment.substr(eq + 1));
}

}  // namespace fixformer
