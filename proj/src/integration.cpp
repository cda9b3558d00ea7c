#include "fixformer/integration.hpp"

#include <algorithm>

#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"

namespace fixformer {

const char* variant_name(IntegrationVariant v) {
  switch (v) {
    case IntegrationVariant::CrossAttention: return "cross_attention";
    case IntegrationVariant::TwoWay: return "two_way";
    case IntegrationVariant::ImageOnly: return "image_only";
    case IntegrationVariant::GazeOnly: return "gaze_only";
  }
  throw ContractError("variant_name: unknown variant");
}

IntegrationVariant parse_variant(const std::string& s) {
  if (s == "cross_attention") return IntegrationVariant::CrossAttention;
  if (s == "two_way") return IntegrationVariant::TwoWay;
  if (s == "image_only") return IntegrationVariant::ImageOnly;
  if (s == "gaze_only") return IntegrationVariant::GazeOnly;
  throw ContractError("unknown variant '" + s +
                      "' (expected cross_attention, two_way, image_only, gaze_only)");
}

IntegrationLayerParams IntegrationLayerParams::init(const ModelConfig& cfg, bool two_way,
                                                    std::uint64_t seed,
                                                    const std::string& name) {
  IntegrationLayerParams p;
  p.two_way = two_way;
  p.ln_self = NormParams::init(cfg.d_model);
  p.ln_cross = NormParams::init(cfg.d_model);
  p.ln_mlp = NormParams::init(cfg.d_model);
  p.self_attn = MhaParams::init(cfg.d_model, cfg.n_heads, seed, name + ".self_attn");
  p.cross_attn = MhaParams::init(cfg.d_model, cfg.n_heads, seed, name + ".cross_attn");
  p.mlp = MlpParams::init(cfg.d_model, cfg.mlp_hidden(), seed, name + ".mlp");
  if (two_way) {
    p.ln_gaze_cross = NormParams::init(cfg.d_model);
    p.ln_gaze_mlp = NormParams::init(cfg.d_model);
    p.gaze_cross = MhaParams::init(cfg.d_model, cfg.n_heads, seed, name + ".gaze_cross");
    p.gaze_mlp = MlpParams::init(cfg.d_model, cfg.mlp_hidden(), seed, name + ".gaze_mlp");
  }
  return p;
}

void IntegrationLayerParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  ln_self.visit(prefix + ".ln_self", fn);
  self_attn.visit(prefix + ".self_attn", fn);
  ln_cross.visit(prefix + ".ln_cross", fn);
  cross_attn.visit(prefix + ".cross_attn", fn);
  ln_mlp.visit(prefix + ".ln_mlp", fn);
  mlp.visit(prefix + ".mlp", fn);
  if (two_way) {
    ln_gaze_cross.visit(prefix + ".ln_gaze_cross", fn);
    gaze_cross.visit(prefix + ".gaze_cross", fn);
    ln_gaze_mlp.visit(prefix + ".ln_gaze_mlp", fn);
    gaze_mlp.visit(prefix + ".gaze_mlp", fn);
  }
}

namespace {

// Constant [B*(rows) x d] repetition of a per-element PE block.
Tensor tile_rows(const Tensor& t, std::size_t times) {
  std::vector<double> v;
  v.reserve(t.size() * times);
  for (std::size_t i = 0; i < times; ++i)
    v.insert(v.end(), t.data().begin(), t.data().end());
  return Tensor({t.rows() * times, t.cols()}, std::move(v));
}

// PE rows for one image element: zero row for the class token, then the
// patch-center encodings.
Tensor image_pe_block(const Tensor& img_coords, std::size_t d) {
  Tensor pe = spatial_pe(img_coords, d);
  Tensor zero({1, d}, 0.0);
  return concat_rows({zero, pe});
}

void check_fusion_inputs(const RaggedBatch& img, const RaggedBatch& gaze,
                         const Tensor& img_coords, const Tensor& gaze_coords,
                         std::size_t d) {
  img.check();
  gaze.check();
  if (img.batch_count() != gaze.batch_count())
    throw ContractError("fusion layer: batch counts differ, image " +
                        std::to_string(img.batch_count()) + " gaze " +
                        std::to_string(gaze.batch_count()));
  if (img.width() != d || gaze.width() != d)
    throw DimensionError("fusion layer: stream width mismatch, image " +
                         shape_str(img.values.shape()) + " gaze " +
                         shape_str(gaze.values.shape()));
  const std::size_t expect = img_coords.rows() + 1;
  for (std::size_t i = 0; i < img.batch_count(); ++i)
    if (img.length(i) != expect)
      throw ContractError("fusion layer: image element " + std::to_string(i) + " has " +
                          std::to_string(img.length(i)) + " tokens, expected " +
                          std::to_string(expect));
  if (gaze_coords.rows() != gaze.total_rows())
    throw ContractError("fusion layer: gaze_coords rows " +
                        std::to_string(gaze_coords.rows()) +
                        " do not align with gaze tokens " +
                        std::to_string(gaze.total_rows()));
}

RaggedBatch image_update(const RaggedBatch& img, const RaggedBatch& gaze,
                         const Tensor& img_coords, const Tensor& gaze_coords,
                         const IntegrationLayerParams& p, std::vector<AttnSink>* sinks) {
  const std::size_t d = p.self_attn.q.w.rows();
  check_fusion_inputs(img, gaze, img_coords, gaze_coords, d);

  Tensor h = p.ln_self.apply(img.values);
  RaggedBatch hr = RaggedBatch::like(img, h);
  Tensor x = add(img.values, ragged_mha(hr, hr, hr, p.self_attn).values);

  Tensor pe_img = tile_rows(image_pe_block(img_coords, d), img.batch_count());
  Tensor pe_gaze = spatial_pe(gaze_coords, d);
  Tensor q_in = add(p.ln_cross.apply(x), pe_img);
  Tensor k_in = add(gaze.values, pe_gaze);
  RaggedBatch ca = ragged_mha(RaggedBatch::like(img, q_in),
                              RaggedBatch::like(gaze, k_in), gaze, p.cross_attn, sinks);
  x = add(x, ca.values);

  x = add(x, p.mlp.apply(p.ln_mlp.apply(x)));
  return RaggedBatch::like(img, x);
}

RaggedBatch ragged_encoder_block(const RaggedBatch& x, const EncoderBlockParams& p) {
  Tensor h = p.ln1.apply(x.values);
  RaggedBatch hr = RaggedBatch::like(x, h);
  Tensor y = add(x.values, ragged_mha(hr, hr, hr, p.attn).values);
  Tensor z = add(y, p.mlp.apply(p.ln2.apply(y)));
  return RaggedBatch::like(x, z);
}

}  // namespace

RaggedBatch cross_attention_layer(const RaggedBatch& img, const RaggedBatch& gaze,
                                  const Tensor& img_coords, const Tensor& gaze_coords,
                                  const IntegrationLayerParams& p,
                                  std::vector<AttnSink>* sinks) {
  return image_update(img, gaze, img_coords, gaze_coords, p, sinks);
}

std::pair<RaggedBatch, RaggedBatch> two_way_layer(const RaggedBatch& img,
                                                  const RaggedBatch& gaze,
                                                  const Tensor& img_coords,
                                                  const Tensor& gaze_coords,
                                                  const IntegrationLayerParams& p,
                                                  std::vector<AttnSink>* sinks) {
  if (!p.two_way) throw ContractError("two_way_layer: params built without two_way");
  RaggedBatch img2 = image_update(img, gaze, img_coords, gaze_coords, p, sinks);

  const std::size_t d = p.self_attn.q.w.rows();
  Tensor pe_img = tile_rows(image_pe_block(img_coords, d), img.batch_count());
  Tensor pe_gaze = spatial_pe(gaze_coords, d);
  Tensor q_in = add(p.ln_gaze_cross.apply(gaze.values), pe_gaze);
  Tensor k_in = add(img2.values, pe_img);
  RaggedBatch ga = ragged_mha(RaggedBatch::like(gaze, q_in),
                              RaggedBatch::like(img2, k_in), img2, p.gaze_cross);
  Tensor g = add(gaze.values, ga.values);
  g = add(g, p.gaze_mlp.apply(p.ln_gaze_mlp.apply(g)));
  return {img2, RaggedBatch::like(gaze, g)};
}

Model Model::init(const ModelConfig& cfg, IntegrationVariant variant, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.variant = variant;
  const bool has_image = variant != IntegrationVariant::GazeOnly;
  const bool has_gaze = variant != IntegrationVariant::ImageOnly;
  if (has_image) m.vit = ViTParams::init(cfg, seed, "vit");
  if (has_gaze) m.gaze_enc = GazeEncoderParams::init(cfg.d_model, seed, "gaze");
  if (variant == IntegrationVariant::CrossAttention ||
      variant == IntegrationVariant::TwoWay) {
    const bool two_way = variant == IntegrationVariant::TwoWay;
    for (std::size_t i = 0; i < cfg.n_integration_layers; ++i)
      m.layers.push_back(IntegrationLayerParams::init(
          cfg, two_way, seed, "fuse.layer" + std::to_string(i)));
  }
  if (variant == IntegrationVariant::GazeOnly) {
    m.gaze_cls = Tensor({1, cfg.d_model}, 0.0, true);
    for (std::size_t i = 0; i < cfg.n_encoder_layers; ++i)
      m.gaze_blocks.push_back(EncoderBlockParams::init(
          cfg, seed, "gaze_tower.block" + std::to_string(i)));
  }
  m.head = LinearParams::init(cfg.n_classes, cfg.d_model, seed, "head");
  return m;
}

void Model::enable_lora(std::size_t rank, double alpha, std::uint64_t seed) {
  if (variant == IntegrationVariant::GazeOnly)
    throw ContractError("enable_lora: no image encoder in this variant");
  if (lora_enabled) throw ContractError("enable_lora: already enabled");
  for (std::size_t i = 0; i < vit.blocks.size(); ++i)
    vit.blocks[i].attn.attach_lora(rank, alpha, seed,
                                   "vit.block" + std::to_string(i) + ".attn");
  // Base encoder stops accumulating gradients entirely.
  vit.visit("vit", [](const std::string& name, Tensor& t, bool) {
    if (name.find(".lora_") == std::string::npos) t.set_requires_grad(false);
  });
  lora_enabled = true;
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  const bool lora = lora_enabled;
  auto add_ref = [&out](const std::string& name, Tensor& t, bool decay, bool trainable) {
    out.push_back(ParamRef{name, t, decay, trainable});
  };
  if (variant != IntegrationVariant::GazeOnly) {
    vit.visit("vit", [&](const std::string& name, Tensor& t, bool decay) {
      bool adapter = name.find(".lora_") != std::string::npos;
      add_ref(name, t, decay, !lora || adapter);
    });
  }
  if (variant != IntegrationVariant::ImageOnly) {
    add_ref("gaze.L_D", gaze_enc.L_D, true, true);
    add_ref("gaze.L_C", gaze_enc.L_C, true, true);
    add_ref("gaze.b_D", gaze_enc.b_D, false, true);
    add_ref("gaze.b_C", gaze_enc.b_C, false, true);
  }
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit("fuse.layer" + std::to_string(i),
                    [&](const std::string& name, Tensor& t, bool decay) {
                      add_ref(name, t, decay, true);
                    });
  if (variant == IntegrationVariant::GazeOnly) {
    add_ref("gaze_tower.cls", gaze_cls, false, true);
    for (std::size_t i = 0; i < gaze_blocks.size(); ++i)
      gaze_blocks[i].visit("gaze_tower.block" + std::to_string(i),
                           [&](const std::string& name, Tensor& t, bool decay) {
                             add_ref(name, t, decay, true);
                           });
  }
  head.visit("head", [&](const std::string& name, Tensor& t, bool decay) {
    add_ref(name, t, decay, true);
  });
  return out;
}

Tensor Model::forward_batch(const std::vector<const ImageSample*>& images,
                            const std::vector<const FixationSequence*>& gazes,
                            std::vector<LayerAttention>* attention) const {
  const bool need_image = variant != IntegrationVariant::GazeOnly;
  const bool need_gaze = variant != IntegrationVariant::ImageOnly;
  const std::size_t B = need_image ? images.size() : gazes.size();
  if (B == 0) throw ContractError("forward_batch: empty batch");
  if (need_image && images.size() != B)
    throw ContractError("forward_batch: image count mismatch");
  if (need_gaze && gazes.size() != B)
    throw ContractError("forward_batch: gaze count mismatch");
  for (std::size_t i = 0; i < B; ++i) {
    if (need_image && (images.size() <= i || images[i] == nullptr))
      throw ContractError("forward_batch: missing image for sample " + std::to_string(i) +
                          " in variant " + variant_name(variant));
    if (need_gaze && (gazes.size() <= i || gazes[i] == nullptr))
      throw ContractError("forward_batch: missing gaze for sample " + std::to_string(i) +
                          " in variant " + variant_name(variant));
  }
  if (attention != nullptr &&
      (variant == IntegrationVariant::ImageOnly || variant == IntegrationVariant::GazeOnly))
    throw ContractError("no cross-attention in this variant");

  auto cls_rows = [&](const RaggedBatch& x) {
    std::vector<Tensor> rows;
    rows.reserve(x.batch_count());
    for (std::size_t i = 0; i < x.batch_count(); ++i)
      rows.push_back(row_slice(x.values, x.offsets[i], x.offsets[i] + 1));
    return (rows.size() == 1) ? rows[0] : concat_rows(rows);
  };

  if (variant == IntegrationVariant::ImageOnly) {
    std::vector<Tensor> rows;
    rows.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
      ImageTokens tokens = encode_image(*images[i], vit, cfg);
      rows.push_back(row_slice(tokens.values, 0, 1));
    }
    Tensor cls = (B == 1) ? rows[0] : concat_rows(rows);
    return head.apply(cls);
  }

  if (variant == IntegrationVariant::GazeOnly) {
    std::vector<Tensor> seqs;
    seqs.reserve(B);
    for (std::size_t i = 0; i < B; ++i)
      seqs.push_back(concat_rows({gaze_cls, encode_gaze(*gazes[i], gaze_enc)}));
    RaggedBatch x = RaggedBatch::build(seqs);
    for (const auto& block : gaze_blocks) x = ragged_encoder_block(x, block);
    return head.apply(cls_rows(x));
  }

  std::vector<Tensor> img_seqs, gaze_seqs, coord_seqs;
  img_seqs.reserve(B);
  gaze_seqs.reserve(B);
  coord_seqs.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    img_seqs.push_back(encode_image(*images[i], vit, cfg).values);
    gaze_seqs.push_back(encode_gaze(*gazes[i], gaze_enc));
    coord_seqs.push_back(gazes[i]->coords());
  }
  RaggedBatch img = RaggedBatch::build(img_seqs);
  RaggedBatch gaze = RaggedBatch::build(gaze_seqs);
  Tensor gaze_coords = (B == 1) ? coord_seqs[0] : concat_rows(coord_seqs);
  Tensor centers = patch_centers(cfg);

  for (const auto& layer : layers) {
    std::vector<AttnSink> sinks;
    std::vector<AttnSink>* sink_ptr = (attention != nullptr) ? &sinks : nullptr;
    if (variant == IntegrationVariant::TwoWay) {
      auto [img2, gaze2] = two_way_layer(img, gaze, centers, gaze_coords, layer, sink_ptr);
      img = std::move(img2);
      gaze = std::move(gaze2);
    } else {
      img = cross_attention_layer(img, gaze, centers, gaze_coords, layer, sink_ptr);
    }
    if (attention != nullptr) attention->push_back(LayerAttention{std::move(sinks)});
  }
  return head.apply(cls_rows(img));
}

Tensor Model::classify(const ImageSample* img, const FixationSequence* gaze) const {
  std::vector<const ImageSample*> images;
  std::vector<const FixationSequence*> gazes;
  if (variant != IntegrationVariant::GazeOnly) images.push_back(img);
  if (variant != IntegrationVariant::ImageOnly) gazes.push_back(gaze);
  return forward_batch(images, gazes);
}

std::vector<LayerAttention> Model::export_attention(const ImageSample* img,
                                                    const FixationSequence* gaze) const {
  if (variant == IntegrationVariant::ImageOnly || variant == IntegrationVariant::GazeOnly)
    throw ContractError("no cross-attention in this variant");
  std::vector<LayerAttention> attention;
  forward_batch({img}, {gaze}, &attention);
  return attention;
}

}  // namespace fixformer
