#include "fixformer/ragged.hpp"

#include <algorithm>

#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"

namespace fixformer {

RaggedBatch RaggedBatch::build(const std::vector<Tensor>& seqs) {
  if (seqs.empty()) throw ContractError("RaggedBatch::build: no sequences");
  const std::size_t d = seqs[0].cols();
  RaggedBatch out;
  out.offsets.resize(seqs.size() + 1);
  out.offsets[0] = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (!seqs[i].is_matrix() || seqs[i].cols() != d)
      throw ContractError("RaggedBatch::build: width mismatch at sequence " +
                          std::to_string(i) + ", " + shape_str(seqs[i].shape()));
    if (seqs[i].rows() == 0)
      throw ContractError("RaggedBatch::build: empty sequence at " + std::to_string(i));
    out.offsets[i + 1] = out.offsets[i] + seqs[i].rows();
  }
  out.values = (seqs.size() == 1) ? seqs[0] : concat_rows(seqs);
  return out;
}

RaggedBatch RaggedBatch::like(const RaggedBatch& proto, Tensor values) {
  if (values.rows() != proto.total_rows() || values.cols() != proto.width())
    throw ContractError("RaggedBatch::like: values " + shape_str(values.shape()) +
                        " do not match layout of " + shape_str(proto.values.shape()));
  RaggedBatch out;
  out.values = std::move(values);
  out.offsets = proto.offsets;
  return out;
}

std::size_t RaggedBatch::max_length() const {
  std::size_t m = 0;
  for (std::size_t i = 0; i < batch_count(); ++i) m = std::max(m, length(i));
  return m;
}

Tensor RaggedBatch::element(std::size_t i) const {
  if (i >= batch_count())
    throw ContractError("RaggedBatch::element: index " + std::to_string(i) +
                        " out of range for batch of " + std::to_string(batch_count()));
  return row_slice(values, offsets[i], offsets[i + 1]);
}

std::vector<Tensor> RaggedBatch::split() const {
  std::vector<Tensor> out;
  out.reserve(batch_count());
  for (std::size_t i = 0; i < batch_count(); ++i) out.push_back(element(i));
  return out;
}

void RaggedBatch::check() const {
  if (offsets.size() < 2 || offsets.front() != 0)
    throw ContractError("RaggedBatch: offsets must start at 0 and cover >= 1 element");
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i)
    if (offsets[i + 1] <= offsets[i])
      throw ContractError("RaggedBatch: zero-length element at " + std::to_string(i));
  if (!values.defined() || !values.is_matrix() || values.rows() != offsets.back())
    throw ContractError("RaggedBatch: values rows do not match offsets");
}

RaggedBatch ragged_mha(const RaggedBatch& q, const RaggedBatch& k, const RaggedBatch& v,
                       const MhaParams& p, std::vector<AttnSink>* sinks) {
  q.check();
  k.check();
  v.check();
  const std::size_t B = q.batch_count();
  if (k.batch_count() != B || v.batch_count() != B)
    throw ContractError("ragged_mha: batch counts differ, q " + std::to_string(B) +
                        " k " + std::to_string(k.batch_count()) + " v " +
                        std::to_string(v.batch_count()));
  if (k.offsets != v.offsets)
    throw ContractError("ragged_mha: key and value offsets differ");
  std::vector<Tensor> outs;
  outs.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    AttnSink local;
    AttnSink* sink = (sinks != nullptr) ? &local : nullptr;
    outs.push_back(mha(q.element(i), k.element(i), v.element(i), p, sink));
    if (sinks != nullptr) sinks->push_back(std::move(local));
  }
  RaggedBatch out;
  out.values = (B == 1) ? outs[0] : concat_rows(outs);
  out.offsets = q.offsets;
  return out;
}

RaggedBatch ragged_cross_attention(const RaggedBatch& q, const RaggedBatch& kv,
                                   const MhaParams& p, std::vector<AttnSink>* sinks) {
  return ragged_mha(q, kv, kv, p, sinks);
}

}  // namespace fixformer
