#pragma once

// Test-only dense reference of one fusion layer for a single batch element,
// written as raw loops over nested vectors. Mirrors the layer contract
// independently: pre-norm residual sublayers, PE on queries and keys only,
// values taken raw.

#include <cmath>
#include <vector>

#include "fixformer/integration.hpp"
#include "padded_oracle.hpp"

namespace dense_oracle {

using padded_oracle::Mat;
using padded_oracle::project;
using padded_oracle::to_mat;

inline Mat layernorm(const Mat& x, const fixformer::NormParams& p, double eps = 1e-5) {
  std::vector<double> gain = p.gain.data(), bias = p.bias.data();
  Mat y(x.size(), std::vector<double>(gain.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= double(x[i].size());
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= double(x[i].size());
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = gain[j] * (x[i][j] - mean) * inv + bias[j];
  }
  return y;
}

inline Mat add_mats(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) y[i][j] += b[i][j];
  return y;
}

inline Mat dense_mha(const Mat& q_in, const Mat& k_in, const Mat& v_in,
                     const fixformer::MhaParams& p) {
  const std::size_t d = p.q.w.rows();
  const std::size_t H = p.n_heads, dh = d / H;
  Mat Q = project(q_in, to_mat(p.q.w), p.q.b.data());
  Mat K = project(k_in, to_mat(p.k.w), p.k.b.data());
  Mat V = project(v_in, to_mat(p.v.w), p.v.b.data());
  Mat ctx(q_in.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t tq = 0; tq < Q.size(); ++tq) {
      std::vector<double> scores(K.size());
      double mx = -1e308;
      for (std::size_t tk = 0; tk < K.size(); ++tk) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[tq][h * dh + c] * K[tk][h * dh + c];
        scores[tk] = s / std::sqrt(double(dh));
        mx = std::max(mx, scores[tk]);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t tk = 0; tk < K.size(); ++tk)
        for (std::size_t c = 0; c < dh; ++c)
          ctx[tq][h * dh + c] += (scores[tk] / z) * V[tk][h * dh + c];
    }
  return project(ctx, to_mat(p.o.w), p.o.b.data());
}

inline Mat dense_mlp(const Mat& x, const fixformer::MlpParams& p) {
  Mat h = project(x, to_mat(p.fc1.w), p.fc1.b.data());
  for (auto& row : h)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return project(h, to_mat(p.fc2.w), p.fc2.b.data());
}

// Image-stream update of one fusion layer. img_pe row 0 must be zero (class
// token); gaze_pe is row-aligned with the gaze tokens.
inline Mat cross_layer(const Mat& img, const Mat& gaze, const Mat& img_pe,
                       const Mat& gaze_pe, const fixformer::IntegrationLayerParams& p) {
  Mat x = add_mats(img, dense_mha(layernorm(img, p.ln_self), layernorm(img, p.ln_self),
                                  layernorm(img, p.ln_self), p.self_attn));
  Mat q_in = add_mats(layernorm(x, p.ln_cross), img_pe);
  Mat k_in = add_mats(gaze, gaze_pe);
  x = add_mats(x, dense_mha(q_in, k_in, gaze, p.cross_attn));
  return add_mats(x, dense_mlp(layernorm(x, p.ln_mlp), p.mlp));
}

// Both streams of a two-way layer.
inline std::pair<Mat, Mat> two_way(const Mat& img, const Mat& gaze, const Mat& img_pe,
                                   const Mat& gaze_pe,
                                   const fixformer::IntegrationLayerParams& p) {
  Mat x = cross_layer(img, gaze, img_pe, gaze_pe, p);
  Mat q_in = add_mats(layernorm(gaze, p.ln_gaze_cross), gaze_pe);
  Mat k_in = add_mats(x, img_pe);
  Mat g = add_mats(gaze, dense_mha(q_in, k_in, x, p.gaze_cross));
  g = add_mats(g, dense_mlp(layernorm(g, p.ln_gaze_mlp), p.gaze_mlp));
  return {x, g};
}

inline double max_abs_diff(const fixformer::Tensor& a, const Mat& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      worst = std::max(worst, std::abs(a.at(i, j) - b[i][j]));
  return worst;
}

}  // namespace dense_oracle
