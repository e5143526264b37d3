#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "splab/errors.hpp"
#include "splab/grad_check.hpp"
#include "splab/models.hpp"
#include "splab/ops.hpp"
#include "support/generators.hpp"

using namespace splab;
namespace fs = std::filesystem;
using proptest::Gen;

namespace {

std::vector<RgbImage> random_images(Gen& g, std::size_t n, std::size_t size) {
  std::vector<RgbImage> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({size, size, g.reals(size * size * 3, 0.0, 1.0)});
  return out;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Parameters drawn at a larger scale so attention is far from uniform and the
// classifier head is not zero.
ViTParams perturbed_vit(const ViTConfig& cfg, std::uint64_t seed) {
  ViTParams p = ViTParams::init(cfg);
  Gen g(seed);
  for (auto& t : p.parameters())
    for (double& v : t.mutable_data()) v += 0.3 * g.rng().normal();
  return p;
}

}  // namespace

TEST(ViTConfig, ParameterCountMatchesHandDerivedTotal) {
  const ViTConfig cfg;  // 28 px, P=7, d=32, h=2, L=2, mlp 64, 2 classes
  const std::size_t d = 32, m = 64, T = 17, pd = 147, C = 2;
  const std::size_t embed = pd * d + d + d + T * d;
  const std::size_t block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * m + m) + (m * d + d);
  const std::size_t head = 2 * d + d * C + C;
  const std::size_t expected = embed + 2 * block + head;
  EXPECT_EQ(cfg.parameter_count(), expected);
  EXPECT_EQ(Model(ViTParams::init(cfg)).parameter_count(), expected);
}

TEST(ViTConfig, ParameterCountFormulaHoldsAcrossConfigs) {
  proptest::for_all(20, 31, [](Gen& g) {
    ViTConfig cfg;
    cfg.patch_size = g.coin() ? 7 : 14;
    cfg.heads = g.size(1, 3);
    cfg.embed_dim = cfg.heads * g.size(2, 6);
    cfg.depth = g.size(1, 3);
    cfg.mlp_ratio = g.size(1, 3);
    cfg.n_classes = g.size(2, 5);
    EXPECT_EQ(Model(ViTParams::init(cfg)).parameter_count(), cfg.parameter_count());
    CNNConfig cnn;
    cnn.channels = {g.size(1, 6), g.size(1, 6), g.size(1, 6)};
    cnn.n_classes = cfg.n_classes;
    EXPECT_EQ(Model(CNNParams::init(cnn)).parameter_count(), cnn.parameter_count());
  });
}

TEST(ViTConfig, ValidationRejectsIndivisibleShapes) {
  ViTConfig cfg;
  cfg.patch_size = 5;
  EXPECT_THROW(cfg.validate(), DimensionError);
  cfg = ViTConfig{};
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ViTInit, BiasesAndHeadAreZeroAndWeightsTruncated) {
  const ViTParams p = ViTParams::init(ViTConfig{});
  for (double v : p.head_w.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.patch_b.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.blocks[0].ln1_gamma.data()) EXPECT_EQ(v, 1.0);
  for (double v : p.patch_w.data()) EXPECT_LE(std::abs(v), 0.04);
}

TEST(Patchify, CountsAndLengths) {
  const RgbImage small{28, 28, std::vector<double>(28 * 28 * 3, 0.0)};
  EXPECT_EQ(patchify(small, 7).size(), 16u * 147u);
  const RgbImage large{384, 384, std::vector<double>(384 * 384 * 3, 0.0)};
  EXPECT_EQ(patchify(large, 16).size() / (16 * 16 * 3), 576u);
  EXPECT_THROW(patchify(small, 5), DimensionError);
}

TEST(Patchify, RoundTripIsExact) {
  Gen g(1);
  const RgbImage img = random_images(g, 1, 28)[0];
  const auto patches = patchify(img, 7);
  EXPECT_EQ(unpatchify(patches, 28, 28, 7), img);
  // First patch starts with the top-left pixel's three channels.
  EXPECT_EQ(patches[0], img.pixels[0]);
  EXPECT_EQ(patches[3], img.pixels[3]);
  EXPECT_EQ(patches[7 * 3], img.pixels[28 * 3]);
}

TEST(DistanceMask, CornerPatchWithDistanceOne) {
  const AttentionMask mask = build_distance_mask(4, 1);
  std::size_t allowed_patches = 0;
  for (std::size_t j = 1; j < mask.tokens; ++j) allowed_patches += mask.allowed(1, j);
  EXPECT_EQ(allowed_patches, 4u);
  EXPECT_TRUE(mask.allowed(1, 0));
  EXPECT_TRUE(mask.allowed(1, 1) && mask.allowed(1, 2) && mask.allowed(1, 5) && mask.allowed(1, 6));
}

TEST(DistanceMask, DiameterAllowsEverything) {
  const AttentionMask mask = build_distance_mask(4, 3);
  for (char a : mask.allow) EXPECT_EQ(a, 1);
}

TEST(DistanceMask, ZeroDistanceIsDiagonalPlusClassToken) {
  const AttentionMask mask = build_distance_mask(4, 0);
  for (std::size_t i = 0; i < mask.tokens; ++i)
    for (std::size_t j = 0; j < mask.tokens; ++j)
      EXPECT_EQ(mask.allowed(i, j), i == 0 || j == 0 || i == j) << i << "," << j;
}

TEST(VitForward, FullMaskIsBitIdenticalToUnmasked) {
  Gen g(2);
  const ViTParams p = perturbed_vit(ViTConfig{}, 3);
  const auto images = random_images(g, 3, 28);
  const AttentionMask full = build_distance_mask(4, 3);
  EXPECT_EQ(values(vit_forward(p, images).logits), values(vit_forward(p, images, &full).logits));
  const AttentionMask all = AttentionMask::full(17);
  EXPECT_EQ(values(vit_forward(p, images).logits), values(vit_forward(p, images, &all).logits));
}

TEST(VitForward, MaskDuringTrainingIsContractError) {
  Gen g(2);
  const ViTParams p = ViTParams::init(ViTConfig{});
  const auto images = random_images(g, 1, 28);
  const AttentionMask mask = build_distance_mask(4, 1);
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(vit_forward(p, images, &mask), ContractError);
}

TEST(VitForward, AttentionRowsAreStochasticAndMaskedEntriesZero) {
  Gen g(4);
  const ViTParams p = perturbed_vit(ViTConfig{}, 5);
  const auto images = random_images(g, 2, 28);
  for (std::size_t dist : {0u, 1u, 3u}) {
    const AttentionMask mask = build_distance_mask(4, dist);
    const auto out = vit_forward(p, images, &mask, true);
    ASSERT_EQ(out.attention.size(), 2u);
    for (const auto& cap : out.attention) {
      ASSERT_EQ(cap.layers.size(), 2u);
      for (const auto& layer : cap.layers) {
        ASSERT_EQ(layer.size(), 2u);
        for (const auto& a : layer) {
          for (std::size_t i = 0; i < 17; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 17; ++j) {
              s += a[i * 17 + j];
              if (!mask.allowed(i, j)) EXPECT_EQ(a[i * 17 + j], 0.0);
            }
            EXPECT_NEAR(s, 1.0, 1e-10);
          }
        }
      }
    }
  }
}

TEST(VitForward, PatchPermutationWithoutPositionsLeavesLogitsUnchanged) {
  Gen g(6);
  ViTParams p = perturbed_vit(ViTConfig{}, 7);
  for (double& v : p.pos_embed.mutable_data()) v = 0.0;
  const RgbImage img = random_images(g, 1, 28)[0];
  const auto patches = patchify(img, 7);
  std::vector<std::size_t> order(16);
  std::iota(order.begin(), order.end(), 0);
  g.rng().shuffle(std::span<std::size_t>(order));
  std::vector<double> permuted(patches.size());
  for (std::size_t k = 0; k < 16; ++k)
    std::copy_n(patches.begin() + static_cast<std::ptrdiff_t>(order[k] * 147), 147,
                permuted.begin() + static_cast<std::ptrdiff_t>(k * 147));
  const RgbImage shuffled = unpatchify(permuted, 28, 28, 7);
  ASSERT_NE(shuffled, img);
  const auto a = values(vit_forward(p, std::span<const RgbImage>(&img, 1)).logits);
  const auto b = values(vit_forward(p, std::span<const RgbImage>(&shuffled, 1)).logits);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(LayerRepresentation, ShapesAndRecomposition) {
  Gen g(8);
  const Model model(perturbed_vit(ViTConfig{}, 9));
  const auto images = random_images(g, 3, 28);
  EXPECT_EQ(model.layer_representation(std::span(images).first(1), 1).shape(), (Shape{1, 32}));
  const Tensor last = model.layer_representation(images, 2);
  EXPECT_EQ(values(vit_classify(model.vit(), last)), values(model.logits(images)));
  const std::vector<RgbImage> same{images[0], images[0]};
  const auto rep = values(model.layer_representation(same, 1, RepresentationMode::MeanPatch));
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(rep[j], rep[32 + j]);
  EXPECT_THROW(model.layer_representation(images, 0), RangeError);
  EXPECT_THROW(model.layer_representation(images, 3), RangeError);
}

TEST(Cnn, ZeroImageWithZeroHeadGivesUniformSoftmax) {
  const Model model(CNNParams::init(CNNConfig{}));
  const std::vector<RgbImage> zero{{28, 28, std::vector<double>(28 * 28 * 3, 0.0)}};
  const auto probs = values(softmax_rows(model.logits(zero)));
  EXPECT_EQ(probs, (std::vector<double>{0.5, 0.5}));
}

TEST(Cnn, TapDimensionsEqualStageChannels) {
  Gen g(10);
  CNNConfig cfg;
  cfg.channels = {4, 6, 5};
  const CNNParams p = CNNParams::init(cfg);
  const auto out = cnn_forward(p, random_images(g, 2, 28));
  ASSERT_EQ(out.taps.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(out.taps[s].shape(), (Shape{2, cfg.channels[s]}));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 2}));
  const std::vector<RgbImage> wrong{{32, 32, std::vector<double>(32 * 32 * 3, 0.0)}};
  EXPECT_THROW(cnn_forward(p, wrong), DimensionError);
}

TEST(GradientFidelity, SmallVitEveryParameter) {
  Gen g(11);
  ViTConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.patch_size = 14;
  const ViTParams p = perturbed_vit(cfg, 12);
  const auto images = random_images(g, 2, 28);
  const std::vector<int> labels{0, 1};
  const auto r = grad_check([&] { return cross_entropy(vit_forward(p, images).logits, labels); }, p.parameters());
  EXPECT_LT(r.max_relative_error, 1e-5);
  EXPECT_EQ(r.coordinates_checked, cfg.parameter_count());
}

TEST(GradientFidelity, SmallCnnEveryParameter) {
  Gen g(13);
  CNNConfig cfg;
  cfg.channels = {2, 3, 4};
  CNNParams p = CNNParams::init(cfg);
  for (double& v : p.head_w.mutable_data()) v = 0.5 * g.rng().normal();
  const auto images = random_images(g, 2, 28);
  const std::vector<int> labels{1, 0};
  const auto r = grad_check([&] { return cross_entropy(cnn_forward(p, images).logits, labels); }, p.parameters());
  EXPECT_LT(r.max_relative_error, 1e-5);
  EXPECT_EQ(r.coordinates_checked, cfg.parameter_count());
}

TEST(Checkpoint, RoundTripPreservesParametersAndHeader) {
  const fs::path path = fs::temp_directory_path() / "splab-test-ckpt.splab";
  Gen g(14);
  const Model model(perturbed_vit(ViTConfig{}, 15));
  save_checkpoint(path, model, {{"config_hash", "abc"}, {"seed", "4"}});
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.header.at("config_hash"), "abc");
  EXPECT_EQ(ck.header.at("kind"), "vit");
  const auto a = model.parameters(), b = ck.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(values(a[i]), values(b[i]));
  const auto images = random_images(g, 2, 28);
  EXPECT_EQ(values(model.logits(images)), values(ck.model.logits(images)));

  const Model cnn(CNNParams::init(CNNConfig{}));
  save_checkpoint(path, cnn);
  EXPECT_EQ(load_checkpoint(path).model.kind(), Model::Kind::CNN);
}

TEST(Checkpoint, StartsWithMagicAndRejectsDamage) {
  const fs::path path = fs::temp_directory_path() / "splab-test-ckpt-bad.splab";
  save_checkpoint(path, Model(CNNParams::init(CNNConfig{})));
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  EXPECT_EQ(bytes.substr(0, 6), "SPLAB1");
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  EXPECT_THROW(load_checkpoint(path), LengthError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "SPLAB0" << bytes.substr(6);
  }
  EXPECT_THROW(load_checkpoint(path), FormatError);
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), FileError);
  EXPECT_THROW(save_checkpoint(path, Model(CNNParams::init(CNNConfig{})), {{"kind", "x"}}), ContractError);
}
