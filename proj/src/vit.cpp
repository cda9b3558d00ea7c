#include "fixformer/vit.hpp"

#include "binio.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "fixformer/errors.hpp"
#include "fixformer/ops.hpp"

namespace fixformer {

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_integration_layers = 1;
  c.mlp_ratio = 2;
  c.n_classes = 2;
  return c;
}

void ModelConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || d_model == 0 || n_heads == 0 ||
      n_encoder_layers == 0 || n_integration_layers == 0 || mlp_ratio == 0 ||
      n_classes == 0)
    throw ContractError("ModelConfig: all fields must be positive");
  if (image_size % patch_size != 0)
    throw ContractError("ModelConfig: image_size " + std::to_string(image_size) +
                        " not divisible by patch_size " + std::to_string(patch_size));
  if (d_model % n_heads != 0)
    throw ContractError("ModelConfig: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  if (d_model % 4 != 0)
    throw ContractError("ModelConfig: d_model must be divisible by 4 for spatial PE");
}

EncoderBlockParams EncoderBlockParams::init(const ModelConfig& cfg, std::uint64_t seed,
                                            const std::string& name) {
  EncoderBlockParams b;
  b.ln1 = NormParams::init(cfg.d_model);
  b.ln2 = NormParams::init(cfg.d_model);
  b.attn = MhaParams::init(cfg.d_model, cfg.n_heads, seed, name + ".attn");
  b.mlp = MlpParams::init(cfg.d_model, cfg.mlp_hidden(), seed, name + ".mlp");
  return b;
}

void EncoderBlockParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  ln1.visit(prefix + ".ln1", fn);
  attn.visit(prefix + ".attn", fn);
  ln2.visit(prefix + ".ln2", fn);
  mlp.visit(prefix + ".mlp", fn);
}

Tensor EncoderBlockParams::apply(const Tensor& x) const {
  Tensor h = ln1.apply(x);
  Tensor y = add(x, mha(h, h, h, attn));
  return add(y, mlp.apply(ln2.apply(y)));
}

ViTParams ViTParams::init(const ModelConfig& cfg, std::uint64_t seed,
                          const std::string& prefix) {
  cfg.validate();
  ViTParams p;
  p.patch_embed = LinearParams::init(cfg.d_model, cfg.patch_size * cfg.patch_size, seed,
                                     prefix + ".patch_embed");
  p.pos_emb = init_weight({1 + cfg.n_patches(), cfg.d_model}, seed, prefix + ".pos_emb");
  p.cls = Tensor({1, cfg.d_model}, 0.0, true);
  for (std::size_t i = 0; i < cfg.n_encoder_layers; ++i)
    p.blocks.push_back(
        EncoderBlockParams::init(cfg, seed, prefix + ".block" + std::to_string(i)));
  return p;
}

void ViTParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  patch_embed.visit(prefix + ".patch_embed", fn);
  fn(prefix + ".pos_emb", pos_emb, false);
  fn(prefix + ".cls", cls, false);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
}

Tensor patchify(const ImageSample& img, const ModelConfig& cfg) {
  if (!img.pixels.defined() || !img.pixels.is_matrix())
    throw ContractError("patchify: pixels must be a matrix");
  const std::size_t H = img.pixels.rows(), W = img.pixels.cols();
  if (H != cfg.image_size || W != cfg.image_size)
    throw ContractError("patchify: image " + shape_str(img.pixels.shape()) +
                        " does not match configured size " +
                        std::to_string(cfg.image_size));
  if (H % cfg.patch_size != 0 || W % cfg.patch_size != 0)
    throw ContractError("patchify: dimensions not divisible by patch size");
  const std::size_t ps = cfg.patch_size;
  const std::size_t grid = cfg.patches_per_side();
  std::vector<double> v(cfg.n_patches() * ps * ps);
  std::size_t row = 0;
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      double* dst = v.data() + row * ps * ps;
      for (std::size_t py = 0; py < ps; ++py)
        for (std::size_t px = 0; px < ps; ++px)
          dst[py * ps + px] = img.pixels.at(gy * ps + py, gx * ps + px);
      ++row;
    }
  return Tensor({cfg.n_patches(), ps * ps}, std::move(v));
}

Tensor patch_centers(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t grid = cfg.patches_per_side();
  std::vector<double> v(cfg.n_patches() * 2);
  std::size_t row = 0;
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      v[2 * row] = (static_cast<double>(gx) + 0.5) / static_cast<double>(grid);
      v[2 * row + 1] = (static_cast<double>(gy) + 0.5) / static_cast<double>(grid);
      ++row;
    }
  return Tensor({cfg.n_patches(), 2}, std::move(v));
}

ImageTokens encode_image(const ImageSample& img, const ViTParams& params,
                         const ModelConfig& cfg) {
  cfg.validate();
  Tensor patches = patchify(img, cfg);
  Tensor emb = params.patch_embed.apply(patches);
  Tensor x = concat_rows({params.cls, emb});
  x = add(x, params.pos_emb);
  for (const auto& block : params.blocks) x = block.apply(x);
  return ImageTokens{x, {cfg.patches_per_side(), cfg.patches_per_side()}};
}

ImageSample load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok += static_cast<char>(c);
    }
    if (tok.empty()) throw DataError(path + ": truncated PGM header");
    return tok;
  };
  if (next_token() != "P5") throw DataError(path + ": not a binary PGM (P5)");
  auto parse_dim = [&](const std::string& tok) -> std::size_t {
    try {
      long long v = std::stoll(tok);
      if (v <= 0) throw std::invalid_argument("nonpositive");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw DataError(path + ": bad PGM dimension '" + tok + "'");
    }
  };
  std::size_t w = parse_dim(next_token());
  std::size_t h = parse_dim(next_token());
  std::size_t maxval = parse_dim(next_token());
  if (maxval != 255) throw DataError(path + ": only maxval 255 supported");
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw DataError(path + ": truncated pixel data");
  std::vector<double> v(w * h);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = bytes[i] / 255.0;
  return ImageSample{Tensor({h, w}, std::move(v))};
}

void save_pgm(const std::string& path, const ImageSample& img) {
  if (!img.pixels.defined() || !img.pixels.is_matrix())
    throw ContractError("save_pgm: pixels must be a matrix");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  const std::size_t h = img.pixels.rows(), w = img.pixels.cols();
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(w * h);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    double v = img.pixels.data()[i];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    bytes[i] = static_cast<unsigned char>(v * 255.0 + 0.5);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

void save_tensor(const std::string& path, const Tensor& t) {
  if (!t.defined()) throw ContractError("save_tensor: undefined tensor");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write("FXT1", 4);
  binio::write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
  for (std::size_t d : t.shape()) binio::write_u64(out, d);
  static_assert(sizeof(double) == 8);
  for (double v : t.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    binio::write_u64(out, bits);
  }
  if (!out) throw DataError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "FXT1", 4) != 0)
    throw DataError(path + ": bad tensor magic");
  std::uint32_t ndim = binio::read_u32(in, path);
  if (ndim == 0 || ndim > 8) throw DataError(path + ": implausible rank");
  Shape shape(ndim);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(binio::read_u64(in, path));
    if (d == 0) throw DataError(path + ": zero dimension");
    n *= d;
  }
  std::vector<double> v(n);
  for (double& x : v) {
    std::uint64_t bits = binio::read_u64(in, path);
    std::memcpy(&x, &bits, 8);
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace fixformer
