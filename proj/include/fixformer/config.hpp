#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fixformer/integration.hpp"
#include "fixformer/synthetic.hpp"
#include "fixformer/train.hpp"
#include "fixformer/vit.hpp"

namespace fixformer {

// Fully resolved run recipe: model shape, training hyperparameters, dataset
// generator settings and paths, one dotted key per field.
struct RunConfig {
  IntegrationVariant variant = IntegrationVariant::CrossAttention;
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synth;
  bool use_lora = false;
  std::string data_dir = "data/synthetic";
  std::string out_dir = "run";
  std::vector<std::size_t> bench_lengths = {4, 4, 4, 4, 4, 4, 4, 4, 4, 64};
  std::size_t bench_iters = 10;

  // Sets one schema key from its text form. Unknown keys and unparsable
  // values raise ContractError naming the key.
  void set(const std::string& key, const std::string& value);

  void validate() const;

  // Every schema key with its resolved value, in canonical order. Doubles
  // are printed round-trip exact, so an echo reparses to the same config.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

// Plain-text file: one key=value per line, blank lines and lines starting
// with '#' ignored.
RunConfig load_run_config(const std::string& path);

// Applies one "key=value" command-line override.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace fixformer
