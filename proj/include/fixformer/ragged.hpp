#pragma once

#include <cstddef>
#include <vector>

#include "fixformer/nn.hpp"
#include "fixformer/tensor.hpp"

namespace fixformer {

// Variable-length sequences packed end to end: values holds sum(T_i) rows,
// offsets[i]..offsets[i+1] delimit element i. No padding exists anywhere.
struct RaggedBatch {
  Tensor values;
  std::vector<std::size_t> offsets;  // size B+1, offsets[0] = 0

  static RaggedBatch build(const std::vector<Tensor>& seqs);
  // Same offsets, new values; validates row count.
  static RaggedBatch like(const RaggedBatch& proto, Tensor values);

  std::size_t batch_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t length(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  std::size_t total_rows() const { return offsets.back(); }
  std::size_t width() const { return values.cols(); }
  std::size_t max_length() const;

  // Element i as a [T_i x d] tensor; differentiable slice.
  Tensor element(std::size_t i) const;
  std::vector<Tensor> split() const;

  void check() const;  // offsets monotone, lengths >= 1, rows match
};

// Per-element full multi-head attention of q_i over (k_i, v_i); no query sees
// another element's keys. k and v must share q's batch count and each other's
// offsets. Output offsets equal q's. sinks, when given, collects one AttnSink
// per element.
RaggedBatch ragged_mha(const RaggedBatch& q, const RaggedBatch& k, const RaggedBatch& v,
                       const MhaParams& p, std::vector<AttnSink>* sinks = nullptr);

// Common case: keys and values drawn from the same stream.
RaggedBatch ragged_cross_attention(const RaggedBatch& q, const RaggedBatch& kv,
                                   const MhaParams& p,
                                   std::vector<AttnSink>* sinks = nullptr);

}  // namespace fixformer
