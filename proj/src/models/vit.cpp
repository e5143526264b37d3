#include <algorithm>
#include <cstdlib>
#include <limits>
#include <string>

#include "splab/errors.hpp"
#include "splab/models.hpp"
#include "splab/ops.hpp"
#include "splab/rng.hpp"

namespace splab {

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw DimensionError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                         std::to_string(patch_size));
  }
  if (heads == 0 || embed_dim == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (depth == 0 || mlp_ratio == 0 || n_classes < 2) throw ConfigError("ViT needs depth, mlp_ratio >= 1 and >= 2 classes");
}

std::size_t ViTConfig::parameter_count() const {
  const std::size_t d = embed_dim, m = mlp_dim(), T = tokens(), C = n_classes;
  const std::size_t block = 4 * d + 3 * d * d + 3 * d + d * d + d + 2 * d * m + m + d;
  return patch_dim() * d + d + d + T * d + depth * block + 2 * d + d * C + C;
}

namespace {

Tensor trunc_normal(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.truncated_normal(0.02);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

ViTParams ViTParams::init(const ViTConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "vit-init"));
  const std::size_t d = config.embed_dim, m = config.mlp_dim();
  ViTParams p;
  p.config = config;
  p.patch_w = trunc_normal(rng, {config.patch_dim(), d});
  p.patch_b = Tensor::zeros({d}, true);
  p.cls_token = trunc_normal(rng, {d});
  p.pos_embed = trunc_normal(rng, {config.tokens(), d});
  for (std::size_t l = 0; l < config.depth; ++l) {
    ViTBlock b;
    b.ln1_gamma = Tensor::full({d}, 1.0, true);
    b.ln1_beta = Tensor::zeros({d}, true);
    b.qkv_w = trunc_normal(rng, {d, 3 * d});
    b.qkv_b = Tensor::zeros({3 * d}, true);
    b.proj_w = trunc_normal(rng, {d, d});
    b.proj_b = Tensor::zeros({d}, true);
    b.ln2_gamma = Tensor::full({d}, 1.0, true);
    b.ln2_beta = Tensor::zeros({d}, true);
    b.fc1_w = trunc_normal(rng, {d, m});
    b.fc1_b = Tensor::zeros({m}, true);
    b.fc2_w = trunc_normal(rng, {m, d});
    b.fc2_b = Tensor::zeros({d}, true);
    p.blocks.push_back(std::move(b));
  }
  p.norm_gamma = Tensor::full({d}, 1.0, true);
  p.norm_beta = Tensor::zeros({d}, true);
  p.head_w = Tensor::zeros({d, config.n_classes}, true);
  p.head_b = Tensor::zeros({config.n_classes}, true);
  return p;
}

std::vector<Tensor> ViTParams::parameters() const {
  std::vector<Tensor> out{patch_w, patch_b, cls_token, pos_embed};
  for (const auto& b : blocks) {
    out.insert(out.end(), {b.ln1_gamma, b.ln1_beta, b.qkv_w, b.qkv_b, b.proj_w, b.proj_b, b.ln2_gamma, b.ln2_beta,
                           b.fc1_w, b.fc1_b, b.fc2_w, b.fc2_b});
  }
  out.insert(out.end(), {norm_gamma, norm_beta, head_w, head_b});
  return out;
}

std::vector<double> AttentionMask::additive() const {
  std::vector<double> out(allow.size());
  for (std::size_t i = 0; i < allow.size(); ++i) out[i] = allow[i] ? 0.0 : -std::numeric_limits<double>::infinity();
  return out;
}

AttentionMask AttentionMask::full(std::size_t tokens) {
  return AttentionMask{tokens, std::vector<char>(tokens * tokens, 1)};
}

AttentionMask build_distance_mask(std::size_t grid_side, std::size_t max_dist) {
  const std::size_t T = grid_side * grid_side + 1;
  AttentionMask mask{T, std::vector<char>(T * T, 0)};
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      if (i == 0 || j == 0) {
        mask.allow[i * T + j] = 1;
        continue;
      }
      const std::size_t ri = (i - 1) / grid_side, ci = (i - 1) % grid_side;
      const std::size_t rj = (j - 1) / grid_side, cj = (j - 1) % grid_side;
      const std::size_t dist = std::max(ri > rj ? ri - rj : rj - ri, ci > cj ? ci - cj : cj - ci);
      mask.allow[i * T + j] = dist <= max_dist ? 1 : 0;
    }
  }
  return mask;
}

std::vector<double> patchify(const RgbImage& image, std::size_t patch_size) {
  if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw DimensionError("patchify: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " image is not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t P = patch_size, gh = image.height / P, gw = image.width / P;
  std::vector<double> out;
  out.reserve(image.pixels.size());
  for (std::size_t pr = 0; pr < gh; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc)
      for (std::size_t i = 0; i < P; ++i) {
        const auto row = image.pixels.begin() + static_cast<std::ptrdiff_t>(((pr * P + i) * image.width + pc * P) * 3);
        out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(P * 3));
      }
  return out;
}

RgbImage unpatchify(std::span<const double> patches, std::size_t height, std::size_t width, std::size_t patch_size) {
  const std::size_t P = patch_size;
  if (P == 0 || height % P != 0 || width % P != 0 || patches.size() != height * width * 3) {
    throw DimensionError("unpatchify: patch buffer does not describe a " + std::to_string(height) + "x" +
                         std::to_string(width) + " image");
  }
  RgbImage image{height, width, std::vector<double>(height * width * 3)};
  const std::size_t gw = width / P;
  std::size_t k = 0;
  for (std::size_t pr = 0; pr < height / P; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc)
      for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P * 3; ++j) image.pixels[((pr * P + i) * width + pc * P) * 3 + j] = patches[k++];
  return image;
}

ViTOutput vit_forward(const ViTParams& params, std::span<const RgbImage> images, const AttentionMask* mask,
                      bool capture_attention) {
  const ViTConfig& cfg = params.config;
  if (images.empty()) throw ContractError("vit_forward: empty batch");
  if (mask && Tape::active() != nullptr) {
    throw ContractError("vit_forward: attention masks are inference-only and cannot be used while recording a tape");
  }
  const std::size_t B = images.size(), N = cfg.num_patches(), T = cfg.tokens();
  if (mask && mask->tokens != T) {
    throw DimensionError("vit_forward: mask covers " + std::to_string(mask->tokens) + " tokens, model has " +
                         std::to_string(T));
  }
  std::vector<double> patch_data;
  patch_data.reserve(B * N * cfg.patch_dim());
  for (const auto& img : images) {
    if (img.height != cfg.image_size || img.width != cfg.image_size) {
      throw DimensionError("vit_forward: expected " + std::to_string(cfg.image_size) + "x" +
                           std::to_string(cfg.image_size) + " images, got " + std::to_string(img.height) + "x" +
                           std::to_string(img.width));
    }
    const auto p = patchify(img, cfg.patch_size);
    patch_data.insert(patch_data.end(), p.begin(), p.end());
  }
  const Tensor patches({B * N, cfg.patch_dim()}, std::move(patch_data));
  const std::vector<double> additive = mask ? mask->additive() : std::vector<double>{};

  ViTOutput out;
  Tensor x = add_bias(matmul(patches, params.patch_w), params.patch_b);
  x = prepend_class_token(x, params.cls_token, B);
  x = add_tiled(x, params.pos_embed);
  if (capture_attention) {
    out.attention.assign(B, AttentionCapture{T, {}});
  }
  for (const auto& blk : params.blocks) {
    Tensor h = layernorm(x, blk.ln1_gamma, blk.ln1_beta);
    Tensor qkv = add_bias(matmul(h, blk.qkv_w), blk.qkv_b);
    AttentionProbs probs;
    Tensor attn = multi_head_attention(qkv, B, T, cfg.heads, mask ? &additive : nullptr,
                                       capture_attention ? &probs : nullptr);
    x = add(x, add_bias(matmul(attn, blk.proj_w), blk.proj_b));
    h = layernorm(x, blk.ln2_gamma, blk.ln2_beta);
    h = gelu(add_bias(matmul(h, blk.fc1_w), blk.fc1_b));
    x = add(x, add_bias(matmul(h, blk.fc2_w), blk.fc2_b));
    out.block_outputs.push_back(x);
    if (capture_attention) {
      for (std::size_t b = 0; b < B; ++b) out.attention[b].layers.push_back(std::move(probs.probs[b]));
    }
  }
  std::vector<std::size_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * T;
  out.logits = vit_classify(params, gather_rows(x, cls_rows));
  return out;
}

Tensor vit_classify(const ViTParams& params, const Tensor& class_tokens) {
  return add_bias(matmul(layernorm(class_tokens, params.norm_gamma, params.norm_beta), params.head_w), params.head_b);
}

}  // namespace splab
