#include "fixformer/nn.hpp"

#include <cmath>

#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"
#include "fixformer/util.hpp"

namespace fixformer {

Tensor init_weight(Shape shape, std::uint64_t seed, const std::string& name) {
  auto rng = named_rng(seed, name);
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = truncated_normal(rng, 0.02);
  return Tensor(std::move(shape), std::move(v), true);
}

LinearParams LinearParams::init(std::size_t out, std::size_t in, std::uint64_t seed,
                                const std::string& name) {
  LinearParams p;
  p.w = init_weight({out, in}, seed, name + ".w");
  p.b = Tensor({1, out}, 0.0, true);
  return p;
}

Tensor LinearParams::apply(const Tensor& x) const { return linear(x, w, b); }

void LinearParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w, true);
  fn(prefix + ".b", b, false);
}

LoRAAdapter LoRAAdapter::init(std::size_t out, std::size_t in, std::size_t rank,
                              double alpha, std::uint64_t seed, const std::string& name) {
  if (rank == 0) throw ContractError("LoRAAdapter: rank must be positive");
  LoRAAdapter a;
  a.A = init_weight({rank, in}, seed, name + ".A");
  a.B = Tensor({out, rank}, 0.0, true);
  a.scale = alpha / static_cast<double>(rank);
  return a;
}

void LoRAAdapter::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".A", A, true);
  fn(prefix + ".B", B, true);
}

Tensor lora_linear(const Tensor& x, const LinearParams& base, const LoRAAdapter* adapter) {
  Tensor out = base.apply(x);
  if (adapter == nullptr) return out;
  Tensor low = matmul(x, transpose(adapter->A));   // [T x r]
  Tensor up = matmul(low, transpose(adapter->B));  // [T x out]
  return add(out, scale(up, adapter->scale));
}

NormParams NormParams::init(std::size_t d) {
  NormParams p;
  p.gain = Tensor({1, d}, 1.0, true);
  p.bias = Tensor({1, d}, 0.0, true);
  return p;
}

Tensor NormParams::apply(const Tensor& x) const {
  return layernorm_rows(x, gain, bias, kLayerNormEps);
}

void NormParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gain", gain, false);
  fn(prefix + ".bias", bias, false);
}

MhaParams MhaParams::init(std::size_t d_model, std::size_t n_heads, std::uint64_t seed,
                          const std::string& name) {
  if (n_heads == 0 || d_model % n_heads != 0)
    throw ContractError("MhaParams: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  MhaParams p;
  p.n_heads = n_heads;
  p.q = LinearParams::init(d_model, d_model, seed, name + ".q");
  p.k = LinearParams::init(d_model, d_model, seed, name + ".k");
  p.v = LinearParams::init(d_model, d_model, seed, name + ".v");
  p.o = LinearParams::init(d_model, d_model, seed, name + ".o");
  return p;
}

void MhaParams::attach_lora(std::size_t rank, double alpha, std::uint64_t seed,
                            const std::string& name) {
  std::size_t d = q.w.rows();
  lora_q = std::make_shared<LoRAAdapter>(
      LoRAAdapter::init(d, d, rank, alpha, seed, name + ".lora_q"));
  lora_v = std::make_shared<LoRAAdapter>(
      LoRAAdapter::init(d, d, rank, alpha, seed, name + ".lora_v"));
}

void MhaParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  q.visit(prefix + ".q", fn);
  k.visit(prefix + ".k", fn);
  v.visit(prefix + ".v", fn);
  o.visit(prefix + ".o", fn);
  if (lora_q) lora_q->visit(prefix + ".lora_q", fn);
  if (lora_v) lora_v->visit(prefix + ".lora_v", fn);
}

Tensor mha(const Tensor& q_input, const Tensor& k_input, const Tensor& v_input,
           const MhaParams& p, AttnSink* sink) {
  const std::size_t d = p.q.w.rows();
  if (q_input.cols() != d || k_input.cols() != d || v_input.cols() != d)
    throw DimensionError("mha: token width mismatch, q " + shape_str(q_input.shape()) +
                         " k " + shape_str(k_input.shape()) + " v " +
                         shape_str(v_input.shape()) + " d_model " + std::to_string(d));
  if (k_input.rows() != v_input.rows())
    throw DimensionError("mha: key and value row counts differ, k " +
                         shape_str(k_input.shape()) + " v " + shape_str(v_input.shape()));
  const std::size_t dh = d / p.n_heads;
  Tensor Q = lora_linear(q_input, p.q, p.lora_q.get());
  Tensor K = p.k.apply(k_input);
  Tensor V = lora_linear(v_input, p.v, p.lora_v.get());
  std::vector<Tensor> heads;
  heads.reserve(p.n_heads);
  for (std::size_t h = 0; h < p.n_heads; ++h) {
    Tensor qh = col_slice(Q, h * dh, (h + 1) * dh);
    Tensor kh = col_slice(K, h * dh, (h + 1) * dh);
    Tensor vh = col_slice(V, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
    Tensor weights = softmax_rows(scores);
    if (sink != nullptr) sink->head_weights.push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  Tensor ctx = (p.n_heads == 1) ? heads[0] : concat_cols(heads);
  return p.o.apply(ctx);
}

MlpParams MlpParams::init(std::size_t d_model, std::size_t hidden, std::uint64_t seed,
                          const std::string& name) {
  MlpParams p;
  p.fc1 = LinearParams::init(hidden, d_model, seed, name + ".fc1");
  p.fc2 = LinearParams::init(d_model, hidden, seed, name + ".fc2");
  return p;
}

Tensor MlpParams::apply(const Tensor& x) const {
  return fc2.apply(gelu(fc1.apply(x)));
}

void MlpParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

}  // namespace fixformer
