#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fixformer/gaze.hpp"
#include "fixformer/nn.hpp"
#include "fixformer/ragged.hpp"
#include "fixformer/vit.hpp"

namespace fixformer {

enum class IntegrationVariant { CrossAttention, TwoWay, ImageOnly, GazeOnly };

const char* variant_name(IntegrationVariant v);
IntegrationVariant parse_variant(const std::string& s);

// One fusion layer. The image stream runs self-attention, image-to-gaze
// cross-attention, and an MLP, each as a pre-norm residual sublayer. The
// two-way extension mirrors the cross-attention back onto the gaze stream
// (queries gaze, keys image) and adds a gaze MLP.
struct IntegrationLayerParams {
  bool two_way = false;
  NormParams ln_self, ln_cross, ln_mlp;
  MhaParams self_attn, cross_attn;
  MlpParams mlp;
  NormParams ln_gaze_cross, ln_gaze_mlp;
  MhaParams gaze_cross;
  MlpParams gaze_mlp;

  static IntegrationLayerParams init(const ModelConfig& cfg, bool two_way,
                                     std::uint64_t seed, const std::string& name);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Spatial PE enters queries and keys only, never values; the class token's
// PE row is zero. Gaze tokens pass through untouched.
RaggedBatch cross_attention_layer(const RaggedBatch& img, const RaggedBatch& gaze,
                                  const Tensor& img_coords, const Tensor& gaze_coords,
                                  const IntegrationLayerParams& p,
                                  std::vector<AttnSink>* sinks = nullptr);

// Image update identical to cross_attention_layer, then the mirrored gaze
// update against the already-updated image tokens.
std::pair<RaggedBatch, RaggedBatch> two_way_layer(const RaggedBatch& img,
                                                  const RaggedBatch& gaze,
                                                  const Tensor& img_coords,
                                                  const Tensor& gaze_coords,
                                                  const IntegrationLayerParams& p,
                                                  std::vector<AttnSink>* sinks = nullptr);

struct ParamRef {
  std::string name;
  Tensor tensor;
  bool decay = true;
  bool trainable = true;
};

// Image-to-gaze attention weights of one integration layer: one sink per
// batch element, one [n_image_tokens x n_gaze_tokens] matrix per head.
struct LayerAttention {
  std::vector<AttnSink> elements;
};

struct Model {
  ModelConfig cfg;
  IntegrationVariant variant = IntegrationVariant::CrossAttention;

  ViTParams vit;                     // all but GazeOnly
  GazeEncoderParams gaze_enc;        // all but ImageOnly
  std::vector<IntegrationLayerParams> layers;  // CrossAttention, TwoWay
  Tensor gaze_cls;                             // GazeOnly
  std::vector<EncoderBlockParams> gaze_blocks; // GazeOnly
  LinearParams head;
  bool lora_enabled = false;

  static Model init(const ModelConfig& cfg, IntegrationVariant variant,
                    std::uint64_t seed);

  // Adapters on q and v of every encoder attention layer; the whole image
  // encoder stops receiving gradients from this point on.
  void enable_lora(std::size_t rank, double alpha, std::uint64_t seed);

  std::vector<ParamRef> params();

  // Batched forward; entries may be null only where the variant permits.
  // Returns [B x n_classes] logits.
  Tensor forward_batch(const std::vector<const ImageSample*>& images,
                       const std::vector<const FixationSequence*>& gazes,
                       std::vector<LayerAttention>* attention = nullptr) const;

  Tensor classify(const ImageSample* img, const FixationSequence* gaze) const;

  // Cross-attention maps for one sample; layers outside-in. Fails for
  // variants without image-to-gaze attention.
  std::vector<LayerAttention> export_attention(const ImageSample* img,
                                               const FixationSequence* gaze) const;
};

}  // namespace fixformer
