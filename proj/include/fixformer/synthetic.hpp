#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fixformer/gaze.hpp"
#include "fixformer/train.hpp"
#include "fixformer/vit.hpp"

namespace fixformer {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

// Canonical fixation-detection thresholds used whenever raw traces are
// turned into model input.
inline constexpr double kDetectDispersion = 0.03;
inline constexpr double kDetectMinDuration = 0.1;

// Generator recipe. gaze_informativeness is the fraction of the label
// signal carried by the dwell pattern; the image motif carries the rest.
struct SyntheticSpec {
  std::size_t n_classes = 3;
  std::size_t n_train = 240;
  std::size_t n_val = 120;
  std::size_t n_test = 240;
  std::size_t image_size = 32;
  double gaze_informativeness = 0.5;
  double noise = 1.0;
  std::vector<double> class_priors;  // empty means uniform
  std::uint64_t seed = 7;

  static SyntheticSpec standard(double gaze_informativeness);
  static SyntheticSpec imbalanced();  // two classes, 4:1 priors, blind gaze

  void validate() const;
  std::size_t total() const { return n_train + n_val + n_test; }
  std::vector<double> priors() const;  // validated, uniform when empty
};

struct GeneratedSample {
  std::size_t index = 0;
  Split split = Split::Train;
  int label = 0;
  ImageSample image;
  std::vector<RawGazeSample> gaze;  // 60 Hz raw trace, saccades included
};

Split split_of(const SyntheticSpec& spec, std::size_t index);

// Label assignment is stratified: each split holds largest-remainder class
// counts for the priors, permuted by a seed-keyed stream, so empirical
// frequencies match the priors exactly.
int label_for(const SyntheticSpec& spec, std::size_t index);

// Pure function of (spec, index): identical calls produce identical bytes.
GeneratedSample generate_sample(const SyntheticSpec& spec, std::size_t index);

std::vector<GeneratedSample> generate_dataset(const SyntheticSpec& spec);

// Writes images/NNNNN.pgm, gaze/NNNNN.csv and manifest.csv (header
// id,image_path,gaze_path,label,split; paths relative to dir).
void emit_dataset_files(const std::vector<GeneratedSample>& dataset,
                        const std::string& dir);

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string gaze_path;
  int label = 0;
  Split split = Split::Train;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);

FixationSequence fixations_from_raw(const std::vector<RawGazeSample>& samples);

// Loads one split into memory, running fixation detection on each trace.
Dataset load_split(const std::string& manifest_path, Split split);

}  // namespace fixformer
