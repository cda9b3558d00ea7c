#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fixformer/tensor.hpp"

namespace fixformer {

// Called once per parameter tensor. decay marks membership in the
// weight-decay set (matrix weights yes; biases, norms, embeddings no).
using ParamVisitor =
    std::function<void(const std::string& name, Tensor& t, bool decay)>;

struct LinearParams {
  Tensor w;  // [out x in]
  Tensor b;  // [1 x out]

  static LinearParams init(std::size_t out, std::size_t in, std::uint64_t seed,
                           const std::string& name);
  Tensor apply(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Low-rank update W + (alpha/r) B A kept in factored form; the base weight
// stays untouched.
struct LoRAAdapter {
  Tensor A;  // [r x in]
  Tensor B;  // [out x r]
  double scale = 1.0;

  static LoRAAdapter init(std::size_t out, std::size_t in, std::size_t rank,
                          double alpha, std::uint64_t seed, const std::string& name);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// x*(W + scale*B*A)^T + bias, adapter optional
Tensor lora_linear(const Tensor& x, const LinearParams& base, const LoRAAdapter* adapter);

struct NormParams {
  Tensor gain;  // [1 x d]
  Tensor bias;  // [1 x d]

  static NormParams init(std::size_t d);
  Tensor apply(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

inline constexpr double kLayerNormEps = 1e-5;

// Captured attention weights of one multi-head call, one [Tq x Tkv] matrix
// per head, forward values only.
struct AttnSink {
  std::vector<Tensor> head_weights;
};

struct MhaParams {
  std::size_t n_heads = 1;
  LinearParams q, k, v, o;
  std::shared_ptr<LoRAAdapter> lora_q;  // null unless finetuning
  std::shared_ptr<LoRAAdapter> lora_v;

  static MhaParams init(std::size_t d_model, std::size_t n_heads, std::uint64_t seed,
                        const std::string& name);
  void attach_lora(std::size_t rank, double alpha, std::uint64_t seed,
                   const std::string& name);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Full unmasked multi-head attention. q_input, k_input, v_input are token
// rows of width d_model; k_input and v_input must have equal row counts.
// sink, when given, receives the softmax weights per head.
Tensor mha(const Tensor& q_input, const Tensor& k_input, const Tensor& v_input,
           const MhaParams& p, AttnSink* sink = nullptr);

struct MlpParams {
  LinearParams fc1, fc2;

  static MlpParams init(std::size_t d_model, std::size_t hidden, std::uint64_t seed,
                        const std::string& name);
  Tensor apply(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Truncated-normal (sigma 0.02, clipped at two sigma) tensor with its own
// name-keyed stream: adding parameters elsewhere never shifts this draw.
Tensor init_weight(Shape shape, std::uint64_t seed, const std::string& name);

}  // namespace fixformer
