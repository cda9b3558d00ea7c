#include "fixformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binio.hpp"
#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"
#include "fixformer/util.hpp"

namespace fixformer {

void TrainConfig::validate() const {
  // epochs == 0 is a legal degenerate run: metrics of the initial model
  if (batch_size == 0) throw ContractError("TrainConfig: batch_size must be positive");
  if (lr < 0.0) throw ContractError("TrainConfig: lr must be non-negative");
  if (weight_decay < 0.0) throw ContractError("TrainConfig: weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ContractError("TrainConfig: betas must lie in [0, 1)");
  if (eps <= 0.0) throw ContractError("TrainConfig: eps must be positive");
  if (lora_rank == 0) throw ContractError("TrainConfig: lora_rank must be positive");
  if (lora_alpha <= 0.0) throw ContractError("TrainConfig: lora_alpha must be positive");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max) {
  if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be positive");
  if (step > total_steps)
    throw ContractError("cosine_lr: step " + std::to_string(step) + " beyond " +
                        std::to_string(total_steps));
  double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
  return std::max(0.0, lr_max * (1.0 + std::cos(phase)) / 2.0);
}

void adamw_step(std::vector<ParamRef>& params, AdamWState& state,
                const TrainConfig& cfg, double lr_t) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  static const std::vector<double> kNoGrad;
  for (ParamRef& p : params) {
    if (!p.trainable) continue;
    std::vector<double>& data = p.tensor.data();
    const std::size_t n = data.size();
    MomentPair& mom = state.moments[p.name];
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    } else if (mom.m.size() != n) {
      throw ContractError("adamw_step: parameter " + p.name + " changed size");
    }
    const std::vector<double>& g = p.tensor.has_grad() ? p.tensor.grad() : kNoGrad;
    if (!g.empty() && g.size() != n)
      throw ContractError("adamw_step: gradient size mismatch for " + p.name);
    if (p.decay && cfg.weight_decay != 0.0) {
      const double shrink = 1.0 - lr_t * cfg.weight_decay;
      for (double& x : data) x *= shrink;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gi;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      data[i] -= lr_t * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace {

void batch_ptrs(const Model& model, const Dataset& ds,
                const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi,
                std::vector<const ImageSample*>& imgs,
                std::vector<const FixationSequence*>& gazes, std::vector<int>& labels) {
  const bool use_img = model.variant != IntegrationVariant::GazeOnly;
  const bool use_gaze = model.variant != IntegrationVariant::ImageOnly;
  imgs.clear();
  gazes.clear();
  labels.clear();
  for (std::size_t k = lo; k < hi; ++k) {
    const LabeledSample& s = ds[order[k]];
    imgs.push_back(use_img ? &s.image : nullptr);
    gazes.push_back(use_gaze ? &s.gaze : nullptr);
    labels.push_back(s.label);
  }
}

std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

}  // namespace

double mean_loss(const Model& model, const Dataset& ds, std::size_t batch_size) {
  if (ds.empty()) throw ContractError("mean_loss: empty dataset");
  if (batch_size == 0) throw ContractError("mean_loss: batch_size must be positive");
  auto order = identity_order(ds.size());
  std::vector<const ImageSample*> imgs;
  std::vector<const FixationSequence*> gazes;
  std::vector<int> labels;
  double sum = 0.0;
  for (std::size_t lo = 0; lo < ds.size(); lo += batch_size) {
    std::size_t hi = std::min(lo + batch_size, ds.size());
    batch_ptrs(model, ds, order, lo, hi, imgs, gazes, labels);
    Tensor loss = cross_entropy_mean(model.forward_batch(imgs, gazes), labels);
    sum += loss.value() * static_cast<double>(hi - lo);
  }
  return sum / static_cast<double>(ds.size());
}

Tensor predict_probs(const Model& model, const Dataset& ds, std::size_t batch_size) {
  if (ds.empty()) throw ContractError("predict_probs: empty dataset");
  if (batch_size == 0) throw ContractError("predict_probs: batch_size must be positive");
  auto order = identity_order(ds.size());
  std::vector<const ImageSample*> imgs;
  std::vector<const FixationSequence*> gazes;
  std::vector<int> labels;
  std::vector<double> out;
  out.reserve(ds.size() * model.cfg.n_classes);
  for (std::size_t lo = 0; lo < ds.size(); lo += batch_size) {
    std::size_t hi = std::min(lo + batch_size, ds.size());
    batch_ptrs(model, ds, order, lo, hi, imgs, gazes, labels);
    Tensor probs = softmax_rows(model.forward_batch(imgs, gazes));
    out.insert(out.end(), probs.data().begin(), probs.data().end());
  }
  return Tensor({ds.size(), model.cfg.n_classes}, std::move(out));
}

MetricsReport evaluate(const Model& model, const Dataset& ds, std::size_t batch_size) {
  std::vector<int> labels;
  labels.reserve(ds.size());
  for (const LabeledSample& s : ds) labels.push_back(s.label);
  return compute_metrics(labels, predict_probs(model, ds, batch_size));
}

TrainResult train(Model& model, const Dataset& train_ds, const Dataset& val_ds,
                  const Dataset& test_ds, const TrainConfig& cfg) {
  cfg.validate();
  if (train_ds.empty() || val_ds.empty() || test_ds.empty())
    throw ContractError("train: every split needs at least one sample");

  std::vector<ParamRef> params = model.params();
  AdamWState state;
  const std::size_t n = train_ds.size();
  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches_per_epoch;
  auto shuffle_rng = named_rng(cfg.seed, "train.shuffle");
  std::vector<std::size_t> order = identity_order(n);

  auto snapshot = [&]() {
    std::vector<std::vector<double>> s;
    s.reserve(params.size());
    for (const ParamRef& p : params) s.push_back(p.tensor.data());
    return s;
  };

  TrainResult res;
  std::vector<std::vector<double>> best = snapshot();
  double best_acc = -1.0;
  std::size_t step = 0;
  std::vector<const ImageSample*> imgs;
  std::vector<const FixationSequence*> gazes;
  std::vector<int> labels;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(lo + cfg.batch_size, n);
      const double lr_t = cosine_lr(step, total_steps, cfg.lr);
      batch_ptrs(model, train_ds, order, lo, hi, imgs, gazes, labels);
      for (ParamRef& p : params) p.tensor.zero_grad();
      GradTape tape;
      double lv;
      {
        TapeScope scope(tape);
        Tensor loss = cross_entropy_mean(model.forward_batch(imgs, gazes), labels);
        lv = loss.value();
        if (!std::isfinite(lv))
          throw NumericError("train: non-finite loss " + fmt_g17(lv) + " at epoch " +
                             std::to_string(epoch + 1) + ", batch " +
                             std::to_string(lo / cfg.batch_size + 1));
        tape.backward(loss);
      }
      adamw_step(params, state, cfg, lr_t);
      loss_sum += lv * static_cast<double>(hi - lo);
      ++step;
    }
    const double val_acc = evaluate(model, val_ds, cfg.batch_size).accuracy;
    res.history.push_back(
        {epoch + 1, loss_sum / static_cast<double>(n), val_acc});
    if (val_acc > best_acc) {
      best_acc = val_acc;
      res.best_epoch = epoch;
      best = snapshot();
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.data() = best[i];
  if (cfg.epochs == 0)
    best_acc = evaluate(model, val_ds, cfg.batch_size).accuracy;
  res.best_val_accuracy = best_acc;
  res.steps = step;
  res.test_metrics = evaluate(model, test_ds, cfg.batch_size);
  return res;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::string config_echo(Model& model, const TrainConfig& cfg) {
  const ModelConfig& mc = model.cfg;
  std::ostringstream out;
  out << "variant=" << variant_name(model.variant) << '\n'
      << "image_size=" << mc.image_size << '\n'
      << "patch_size=" << mc.patch_size << '\n'
      << "d_model=" << mc.d_model << '\n'
      << "n_heads=" << mc.n_heads << '\n'
      << "n_encoder_layers=" << mc.n_encoder_layers << '\n'
      << "n_integration_layers=" << mc.n_integration_layers << '\n'
      << "mlp_ratio=" << mc.mlp_ratio << '\n'
      << "n_classes=" << mc.n_classes << '\n'
      << "lora_enabled=" << (model.lora_enabled ? 1 : 0) << '\n';
  if (model.lora_enabled) {
    const LoRAAdapter& a = *model.vit.blocks.front().attn.lora_q;
    out << "model_lora_rank=" << a.A.rows() << '\n'
        << "model_lora_alpha=" << fmt_g17(a.scale * static_cast<double>(a.A.rows()))
        << '\n';
  }
  out << "train.epochs=" << cfg.epochs << '\n'
      << "train.lr=" << fmt_g17(cfg.lr) << '\n'
      << "train.weight_decay=" << fmt_g17(cfg.weight_decay) << '\n'
      << "train.batch_size=" << cfg.batch_size << '\n'
      << "train.beta1=" << fmt_g17(cfg.beta1) << '\n'
      << "train.beta2=" << fmt_g17(cfg.beta2) << '\n'
      << "train.eps=" << fmt_g17(cfg.eps) << '\n'
      << "train.lora_rank=" << cfg.lora_rank << '\n'
      << "train.lora_alpha=" << fmt_g17(cfg.lora_alpha) << '\n'
      << "train.seed=" << cfg.seed << '\n';
  return out.str();
}

std::map<std::string, std::string> parse_echo(const std::string& text,
                                              const std::string& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ": malformed checkpoint config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv,
                        const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError(path + ": checkpoint config missing " + key);
  return it->second;
}

std::size_t need_size(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& path) {
  try {
    return static_cast<std::size_t>(std::stoull(need(kv, key, path)));
  } catch (const std::logic_error&) {
    throw DataError(path + ": bad integer for " + key);
  }
}

double need_double(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& path) {
  const std::string& s = need(kv, key, path);
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw DataError(path + ": bad number for " + key);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainConfig& cfg) {
  Model& m = const_cast<Model&>(model);  // params() hands out shared views
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write("FXCK", 4);
  binio::write_u32(out, kCheckpointVersion);
  const std::string echo = config_echo(m, cfg);
  binio::write_u64(out, echo.size());
  out.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  std::vector<ParamRef> params = m.params();
  binio::write_u64(out, params.size());
  for (const ParamRef& p : params) {
    binio::write_u64(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    binio::write_u32(out, static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (std::size_t d : p.tensor.shape()) binio::write_u64(out, d);
    for (double v : p.tensor.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      binio::write_u64(out, bits);
    }
  }
  if (!out) throw DataError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "FXCK", 4) != 0)
    throw DataError(path + ": bad checkpoint magic");
  if (binio::read_u32(in, path) != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version");
  std::uint64_t echo_len = binio::read_u64(in, path);
  if (echo_len > (1u << 20)) throw DataError(path + ": implausible config length");
  std::string echo(echo_len, '\0');
  in.read(echo.data(), static_cast<std::streamsize>(echo_len));
  if (in.gcount() != static_cast<std::streamsize>(echo_len))
    throw DataError(path + ": truncated");
  auto kv = parse_echo(echo, path);

  ModelConfig mc;
  mc.image_size = need_size(kv, "image_size", path);
  mc.patch_size = need_size(kv, "patch_size", path);
  mc.d_model = need_size(kv, "d_model", path);
  mc.n_heads = need_size(kv, "n_heads", path);
  mc.n_encoder_layers = need_size(kv, "n_encoder_layers", path);
  mc.n_integration_layers = need_size(kv, "n_integration_layers", path);
  mc.mlp_ratio = need_size(kv, "mlp_ratio", path);
  mc.n_classes = need_size(kv, "n_classes", path);
  IntegrationVariant variant;
  try {
    variant = parse_variant(need(kv, "variant", path));
  } catch (const ContractError& e) {
    throw DataError(path + ": " + e.what());
  }

  Checkpoint ck;
  ck.model = Model::init(mc, variant, 0);
  if (need_size(kv, "lora_enabled", path) != 0)
    ck.model.enable_lora(need_size(kv, "model_lora_rank", path),
                         need_double(kv, "model_lora_alpha", path), 0);
  ck.train_cfg.epochs = need_size(kv, "train.epochs", path);
  ck.train_cfg.lr = need_double(kv, "train.lr", path);
  ck.train_cfg.weight_decay = need_double(kv, "train.weight_decay", path);
  ck.train_cfg.batch_size = need_size(kv, "train.batch_size", path);
  ck.train_cfg.beta1 = need_double(kv, "train.beta1", path);
  ck.train_cfg.beta2 = need_double(kv, "train.beta2", path);
  ck.train_cfg.eps = need_double(kv, "train.eps", path);
  ck.train_cfg.lora_rank = need_size(kv, "train.lora_rank", path);
  ck.train_cfg.lora_alpha = need_double(kv, "train.lora_alpha", path);
  ck.train_cfg.seed = need_size(kv, "train.seed", path);

  std::uint64_t count = binio::read_u64(in, path);
  std::vector<ParamRef> params = ck.model.params();
  if (count != params.size())
    throw DataError(path + ": checkpoint holds " + std::to_string(count) +
                    " tensors, model needs " + std::to_string(params.size()));
  std::map<std::string, ParamRef*> by_name;
  for (ParamRef& p : params) by_name[p.name] = &p;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::uint64_t name_len = binio::read_u64(in, path);
    if (name_len == 0 || name_len > 4096)
      throw DataError(path + ": implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (in.gcount() != static_cast<std::streamsize>(name_len))
      throw DataError(path + ": truncated");
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second == nullptr)
      throw DataError(path + ": unexpected tensor '" + name + "'");
    ParamRef& p = *it->second;
    it->second = nullptr;  // each name may appear once
    std::uint32_t ndim = binio::read_u32(in, path);
    if (ndim != p.tensor.shape().size())
      throw DataError(path + ": rank mismatch for '" + name + "'");
    for (std::size_t d = 0; d < ndim; ++d)
      if (binio::read_u64(in, path) != p.tensor.shape()[d])
        throw DataError(path + ": shape mismatch for '" + name + "'");
    for (double& x : p.tensor.data()) {
      std::uint64_t bits = binio::read_u64(in, path);
      std::memcpy(&x, &bits, 8);
    }
  }
  if (in.peek() != std::ifstream::traits_type::eof())
    throw DataError(path + ": trailing bytes");
  return ck;
}

}  // namespace fixformer
