#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fixformer/tensor.hpp"

namespace fixformer {

struct RawGazeSample {
  double t_s = 0.0;
  double x = 0.0;
  double y = 0.0;
  bool valid = true;
};

struct Fixation {
  double start_s = 0.0;
  double duration_s = 0.0;
  double x = 0.0;
  double y = 0.0;
};

struct FixationSequence {
  std::vector<Fixation> fixations;

  std::size_t length() const { return fixations.size(); }
  // Column views as column tensors: starts [T x 1], durations [T x 1],
  // coords [T x 2].
  Tensor starts() const;
  Tensor durations() const;
  Tensor coords() const;
};

// Dispersion-threshold (I-DT) detection. Invalid samples are dropped first;
// a window grows while (max-min in x) + (max-min in y) stays within
// max_dispersion, then emits a fixation if it spans at least min_duration.
// Centroid is the plain mean of member samples, duration is last t minus
// first t.
FixationSequence detect_fixations(const std::vector<RawGazeSample>& samples,
                                  double max_dispersion, double min_duration_s);

// pe[t, 2i] = sin(tau / ts^(2i/d)), pe[t, 2i+1] = cos(same argument).
Tensor sinusoidal_pe(const std::vector<double>& times_s, std::size_t d_model,
                     double time_scale);

inline constexpr double kSpatialPeScale = 0.01;

// Axis-separable encoding of unit-square points: first half encodes x, second
// half encodes y, each a d_model/2-wide sinusoidal_pe at kSpatialPeScale.
Tensor spatial_pe(const Tensor& coords, std::size_t d_model);

struct GazeEncoderParams {
  Tensor L_D;  // [1 x d_model]
  Tensor L_C;  // [2 x d_model]
  Tensor b_D;  // [1 x d_model], zero at init
  Tensor b_C;  // [1 x d_model], zero at init

  static GazeEncoderParams init(std::size_t d_model, std::uint64_t seed,
                                const std::string& prefix);
  std::size_t d_model() const { return L_D.cols(); }
};

// Row t is sinusoidal_pe(start_t) + duration_t * L_D + coords_t * L_C plus
// the biases. Differentiable with respect to the parameters.
Tensor encode_gaze(const FixationSequence& seq, const GazeEncoderParams& params,
                   double time_scale = 10000.0);

struct GazeLoadResult {
  std::vector<RawGazeSample> samples;
  std::size_t clamped = 0;  // coordinates pulled back into [0,1]
};

// Plain-text CSV, header "t_s,x,y,valid", LF lines. Out-of-range coordinates
// are clamped and counted; non-increasing timestamps are rejected.
GazeLoadResult load_gaze_csv(const std::string& path);
void save_gaze_csv(const std::string& path,
                   const std::vector<RawGazeSample>& samples);

// Plain-text CSV, header "start_s,duration_s,x,y".
FixationSequence load_fixations_csv(const std::string& path);
void save_fixations_csv(const std::string& path, const FixationSequence& seq);

}  // namespace fixformer
