#pragma once

// Test-only reference for ragged attention: pads every element to the max
// length, projects, masks invalid keys with -inf before softmax, and unpads.
// Deliberately written as raw loops over flat vectors so it shares no code
// with the production path.

#include <cmath>
#include <limits>
#include <vector>

#include "fixformer/nn.hpp"
#include "fixformer/ragged.hpp"

namespace padded_oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const fixformer::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

// y = x * W^T + b with W [out x in]
inline Mat project(const Mat& x, const Mat& w, const std::vector<double>& b) {
  std::size_t T = x.size(), out = w.size(), in = w.empty() ? 0 : w[0].size();
  Mat y(T, std::vector<double>(out, 0.0));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[t][i] * w[o][i];
      y[t][o] = s;
    }
  return y;
}

// Multi-head attention over padded buffers with an explicit -inf key mask.
// qs/ks/vs are the unpadded per-element inputs; returns unpadded outputs.
inline std::vector<Mat> padded_masked_attention(const std::vector<Mat>& qs,
                                                const std::vector<Mat>& ks,
                                                const std::vector<Mat>& vs,
                                                const fixformer::MhaParams& p) {
  const std::size_t B = qs.size();
  const std::size_t d = p.q.w.rows();
  const std::size_t H = p.n_heads;
  const std::size_t dh = d / H;
  const double neg_inf = -std::numeric_limits<double>::infinity();

  std::size_t max_q = 0, max_k = 0;
  for (std::size_t b = 0; b < B; ++b) {
    max_q = std::max(max_q, qs[b].size());
    max_k = std::max(max_k, ks[b].size());
  }

  Mat wq = to_mat(p.q.w), wk = to_mat(p.k.w), wv = to_mat(p.v.w), wo = to_mat(p.o.w);
  std::vector<double> bq = p.q.b.data(), bk = p.k.b.data(), bv = p.v.b.data(),
                      bo = p.o.b.data();

  std::vector<Mat> outs(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t Tq = qs[b].size(), Tk = ks[b].size();
    Mat qpad(max_q, std::vector<double>(d, 0.0));
    Mat kpad(max_k, std::vector<double>(d, 0.0));
    Mat vpad(max_k, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < Tq; ++t) qpad[t] = qs[b][t];
    for (std::size_t t = 0; t < Tk; ++t) {
      kpad[t] = ks[b][t];
      vpad[t] = vs[b][t];
    }

    Mat Q = project(qpad, wq, bq);
    Mat K = project(kpad, wk, bk);
    Mat V = project(vpad, wv, bv);

    Mat ctx(max_q, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t tq = 0; tq < max_q; ++tq) {
        std::vector<double> scores(max_k);
        for (std::size_t tk = 0; tk < max_k; ++tk) {
          if (tk >= Tk) {
            scores[tk] = neg_inf;
            continue;
          }
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c)
            s += Q[tq][h * dh + c] * K[tk][h * dh + c];
          scores[tk] = s / std::sqrt(static_cast<double>(dh));
        }
        double mx = neg_inf;
        for (double s : scores) mx = std::max(mx, s);
        double z = 0.0;
        std::vector<double> w(max_k, 0.0);
        for (std::size_t tk = 0; tk < max_k; ++tk) {
          w[tk] = std::exp(scores[tk] - mx);
          z += w[tk];
        }
        for (std::size_t tk = 0; tk < max_k; ++tk) {
          double weight = w[tk] / z;
          for (std::size_t c = 0; c < dh; ++c)
            ctx[tq][h * dh + c] += weight * V[tk][h * dh + c];
        }
      }
    }
    Mat proj = project(ctx, wo, bo);
    outs[b].assign(proj.begin(), proj.begin() + Tq);
  }
  return outs;
}

inline std::vector<Mat> ragged_inputs(const fixformer::RaggedBatch& r) {
  std::vector<Mat> out;
  for (std::size_t i = 0; i < r.batch_count(); ++i) out.push_back(to_mat(r.element(i)));
  return out;
}

// Largest |ragged - oracle| over all elements and entries.
inline double compare_against_oracle(const fixformer::RaggedBatch& q,
                                     const fixformer::RaggedBatch& k,
                                     const fixformer::RaggedBatch& v,
                                     const fixformer::MhaParams& p) {
  fixformer::RaggedBatch got = fixformer::ragged_mha(q, k, v, p);
  std::vector<Mat> want = padded_masked_attention(ragged_inputs(q), ragged_inputs(k),
                                                  ragged_inputs(v), p);
  double worst = 0.0;
  for (std::size_t b = 0; b < q.batch_count(); ++b) {
    fixformer::Tensor e = got.element(b);
    for (std::size_t t = 0; t < e.rows(); ++t)
      for (std::size_t c = 0; c < e.cols(); ++c)
        worst = std::max(worst, std::abs(e.at(t, c) - want[b][t][c]));
  }
  return worst;
}

}  // namespace padded_oracle
