#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "splab/data.hpp"
#include "splab/tensor.hpp"

namespace splab {

struct ViTConfig {
  std::size_t image_size = 28;
  std::size_t patch_size = 7;
  std::size_t embed_dim = 32;
  std::size_t heads = 2;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 2;
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  // Patch tokens plus the class token.
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t mlp_dim() const { return mlp_ratio * embed_dim; }
  void validate() const;
  // Closed form:
  //   patch_dim*d + d        patch projection
  //   + d + T*d              class token, position embeddings
  //   + depth * (4d + 3d^2 + 3d + d^2 + d + 2*d*m + m + d)
  //   + 2d + d*C + C         final norm, classifier
  std::size_t parameter_count() const;
};

struct ViTBlock {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_w, qkv_b;  // [d x 3d], packed [Q | K | V]
  Tensor proj_w, proj_b;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;
};

struct ViTParams {
  ViTConfig config;
  Tensor patch_w, patch_b;
  Tensor cls_token;  // [d]
  Tensor pos_embed;  // [T x d]
  std::vector<ViTBlock> blocks;
  Tensor norm_gamma, norm_beta;
  Tensor head_w, head_b;

  // Truncated normal (std 0.02, +-2 std) for projections and embeddings; zero
  // biases and classifier; unit layernorm gains.
  static ViTParams init(const ViTConfig& config);
  // Fixed order used by the optimizer and the checkpoint format.
  std::vector<Tensor> parameters() const;
};

// Row-stochastic T x T attention matrices of one image: layers[l][h].
struct AttentionCapture {
  std::size_t tokens = 0;
  std::vector<std::vector<std::vector<double>>> layers;
};

// Allowed (query, key) pairs; disallowed logits become -inf before softmax.
struct AttentionMask {
  std::size_t tokens = 0;
  std::vector<char> allow;  // row-major T x T

  bool allowed(std::size_t query, std::size_t key) const { return allow[query * tokens + key] != 0; }
  std::vector<double> additive() const;
  static AttentionMask full(std::size_t tokens);
};

// Patch i may attend patch j iff the Chebyshev distance of their grid cells is
// at most max_dist. Token 0 (class token) is unrestricted in both directions.
AttentionMask build_distance_mask(std::size_t grid_side, std::size_t max_dist);

// Raster-ordered flattened patches, each of length P*P*3 laid out (row, col, channel).
std::vector<double> patchify(const RgbImage& image, std::size_t patch_size);
RgbImage unpatchify(std::span<const double> patches, std::size_t height, std::size_t width, std::size_t patch_size);

struct ViTOutput {
  Tensor logits;                              // [B x n_classes]
  std::vector<Tensor> block_outputs;          // per block, [B*T x d]
  std::vector<AttentionCapture> attention;    // per image, when requested
};

// Pre-LN encoder. A mask is only accepted outside training: if a tape is
// active, passing one throws ContractError.
ViTOutput vit_forward(const ViTParams& params, std::span<const RgbImage> images, const AttentionMask* mask = nullptr,
                      bool capture_attention = false);
// Final layernorm + classifier applied to class-token rows [B x d].
Tensor vit_classify(const ViTParams& params, const Tensor& class_tokens);

struct CNNConfig {
  std::size_t image_size = 28;
  std::array<std::size_t, 3> channels{8, 16, 32};
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
  // sum_s (c_{s-1} * c_s * 9 + c_s) + c_3 * C + C with c_0 = 3.
  std::size_t parameter_count() const;
};

struct CNNParams {
  CNNConfig config;
  std::array<Tensor, 3> conv_w;  // [c_s x c_{s-1} x 3 x 3]
  std::array<Tensor, 3> conv_b;
  Tensor head_w, head_b;

  static CNNParams init(const CNNConfig& config);
  std::vector<Tensor> parameters() const;
};

struct CNNOutput {
  Tensor logits;
  std::vector<Tensor> taps;  // global-average-pooled stage outputs, [B x c_s]
};

// Three stride-2 3x3 conv stages with GELU, global average pool, linear head.
CNNOutput cnn_forward(const CNNParams& params, std::span<const RgbImage> images);

enum class RepresentationMode { ClassToken, MeanPatch };

// A trained or trainable classifier of either family. Copies share parameter
// storage; use clone() for an independent model.
class Model {
 public:
  enum class Kind { ViT, CNN };

  explicit Model(ViTParams params) : params_(std::move(params)) {}
  explicit Model(CNNParams params) : params_(std::move(params)) {}

  Kind kind() const { return std::holds_alternative<ViTParams>(params_) ? Kind::ViT : Kind::CNN; }
  std::string kind_name() const { return kind() == Kind::ViT ? "vit" : "cnn"; }
  const ViTParams& vit() const;
  const CNNParams& cnn() const;
  std::size_t n_classes() const;
  std::size_t image_size() const;

  Tensor logits(std::span<const RgbImage> images) const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  Model clone() const;

  // Valid layers are 1..num_layers(): ViT blocks or CNN stages.
  std::size_t num_layers() const;
  // ViT: class-token (or mean patch-token) embedding after block `layer`.
  // CNN: pooled output of stage `layer`. Returns [B x features].
  Tensor layer_representation(std::span<const RgbImage> images, std::size_t layer,
                              RepresentationMode mode = RepresentationMode::ClassToken) const;

 private:
  std::variant<ViTParams, CNNParams> params_;
};

Model init_model(const std::variant<ViTConfig, CNNConfig>& config);

// Checkpoint file:
//   "SPLAB1"                      6-byte magic
//   u32 little-endian N           header length in bytes
//   N bytes of UTF-8 "key=value\n" lines, sorted by key
//   u64 little-endian P           number of parameter values
//   P little-endian IEEE-754 doubles, in Model::parameters() order
// Model keys are written by save_checkpoint; `metadata` adds run keys (e.g.
// config_hash, seed) and must not collide with them.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& metadata = {});

struct Checkpoint {
  Model model;
  std::map<std::string, std::string> header;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace splab
