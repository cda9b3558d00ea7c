#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fixformer/integration.hpp"
#include "fixformer/metrics.hpp"

namespace fixformer {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 2e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  std::uint64_t seed = 0;

  // lr 0 is allowed: it yields the degenerate no-movement run used to pin
  // down the optimizer's decay coupling.
  void validate() const;
};

struct LabeledSample {
  ImageSample image;
  FixationSequence gaze;
  int label = 0;
};
using Dataset = std::vector<LabeledSample>;

// lr_max * (1 + cos(pi * step / total_steps)) / 2, clamped at 0.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max);

struct MomentPair {
  std::vector<double> m, v;
};

struct AdamWState {
  std::size_t t = 0;  // completed steps
  std::map<std::string, MomentPair> moments;
};

// One decoupled-weight-decay Adam update over every trainable parameter.
// Decay multiplies the parameter by (1 - lr_t * weight_decay) before the
// bias-corrected moment step and only touches decay-marked parameters.
// Missing gradients count as zero. Frozen parameters are never read or
// written, which keeps adapter finetuning exact.
void adamw_step(std::vector<ParamRef>& params, AdamWState& state,
                const TrainConfig& cfg, double lr_t);

// Average cross-entropy over the dataset without recording gradients.
double mean_loss(const Model& model, const Dataset& ds, std::size_t batch_size);

// Post-softmax probabilities, one row per sample, in dataset order.
Tensor predict_probs(const Model& model, const Dataset& ds, std::size_t batch_size);

MetricsReport evaluate(const Model& model, const Dataset& ds, std::size_t batch_size);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;  // index into history
  double best_val_accuracy = 0.0;
  MetricsReport test_metrics;
  std::size_t steps = 0;
};

// Full run: shuffled minibatches, AdamW under the cosine schedule, one
// validation pass per epoch. The parameters with the best validation
// accuracy (ties resolved to the earliest epoch) are restored into model
// before the test metrics are computed. Deterministic for a fixed seed.
TrainResult train(Model& model, const Dataset& train_ds, const Dataset& val_ds,
                  const Dataset& test_ds, const TrainConfig& cfg);

// Checkpoint file: "FXCK", u32 version, u64 config length, config text,
// u64 tensor count, then per tensor name length/name/rank/dims/f64 payload,
// everything little-endian and bit-exact.
void save_checkpoint(const std::string& path, const Model& model,
                     const TrainConfig& cfg);

struct Checkpoint {
  Model model;
  TrainConfig train_cfg;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace fixformer
