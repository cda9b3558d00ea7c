#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fixformer/nn.hpp"
#include "fixformer/tensor.hpp"

namespace fixformer {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_encoder_layers = 4;
  std::size_t n_integration_layers = 2;
  std::size_t mlp_ratio = 4;
  std::size_t n_classes = 2;

  // Smallest config that still exercises every code path; sized for
  // finite-difference checks over the full model.
  static ModelConfig tiny();

  void validate() const;
  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t n_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t mlp_hidden() const { return d_model * mlp_ratio; }
};

struct ImageSample {
  Tensor pixels;  // [H x W], values in [0,1]
};

struct ImageTokens {
  Tensor values;  // [(1+P) x d_model], row 0 is the class token
  std::pair<std::size_t, std::size_t> patch_grid;  // rows, cols
};

struct EncoderBlockParams {
  NormParams ln1, ln2;
  MhaParams attn;
  MlpParams mlp;

  static EncoderBlockParams init(const ModelConfig& cfg, std::uint64_t seed,
                                 const std::string& name);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  // Pre-norm: x + attn(ln1 x), then x + mlp(ln2 x).
  Tensor apply(const Tensor& x) const;
};

struct ViTParams {
  LinearParams patch_embed;  // [d_model x patch_size^2]
  Tensor pos_emb;            // [(1+P) x d_model]
  Tensor cls;                // [1 x d_model], zero at init
  std::vector<EncoderBlockParams> blocks;

  static ViTParams init(const ModelConfig& cfg, std::uint64_t seed,
                        const std::string& prefix);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Row-major patch extraction, each patch flattened row-major.
Tensor patchify(const ImageSample& img, const ModelConfig& cfg);

// Normalized (x, y) centers of each patch, row-major grid order.
Tensor patch_centers(const ModelConfig& cfg);

ImageTokens encode_image(const ImageSample& img, const ViTParams& params,
                         const ModelConfig& cfg);

// 8-bit binary PGM (P5). Pixels map to [0,1] by v/255; writing rounds.
ImageSample load_pgm(const std::string& path);
void save_pgm(const std::string& path, const ImageSample& img);

// Raw tensor file: "FXT1", u32 ndim, u64 dims, then f64 little-endian values.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace fixformer
