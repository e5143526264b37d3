#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "splab/data.hpp"
#include "splab/errors.hpp"
#include "splab/image_io.hpp"
#include "support/generators.hpp"

using namespace splab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("splab-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<unsigned char>(v >> shift));
}

// Four 2x3 images with pixel i of image k equal to 10*k + i, labels 0,1,1,0.
struct IdxFixture {
  fs::path images, labels;
};

IdxFixture write_fixture(const fs::path& dir, std::uint32_t image_magic = 0x803, std::size_t image_count = 4,
                         std::size_t truncate = 0) {
  std::vector<unsigned char> img;
  push_u32(img, image_magic);
  push_u32(img, static_cast<std::uint32_t>(image_count));
  push_u32(img, 2);
  push_u32(img, 3);
  for (int k = 0; k < static_cast<int>(image_count); ++k)
    for (int i = 0; i < 6; ++i) img.push_back(static_cast<unsigned char>(10 * k + i));
  img.resize(img.size() - truncate);
  std::vector<unsigned char> lab;
  push_u32(lab, 0x801);
  push_u32(lab, 4);
  for (unsigned char l : {0, 1, 1, 0}) lab.push_back(l);
  IdxFixture f{dir / "images.idx", dir / "labels.idx"};
  write_bytes(f.images, img);
  write_bytes(f.labels, lab);
  return f;
}

std::map<int, std::size_t> count_groups(const GroupedDataset& ds) {
  std::map<int, std::size_t> counts;
  for (const auto& img : ds.images) ++counts[img.g];
  return counts;
}

GrayImage flat(std::size_t h, std::size_t w, double v) { return {h, w, std::vector<double>(h * w, v)}; }

}  // namespace

TEST(Idx, ReadsHandCraftedFixture) {
  const auto f = write_fixture(temp_dir("idx-ok"));
  const GraySet set = load_idx(f.images, f.labels);
  ASSERT_EQ(set.size(), 4u);
  EXPECT_EQ(set.labels, (std::vector<int>{0, 1, 1, 0}));
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(set.images[k].height, 2u);
    EXPECT_EQ(set.images[k].width, 3u);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(set.images[k].pixels[i], (10.0 * k + i) / 255.0);
  }
}

TEST(Idx, BadMagicIsFormatError) {
  const auto f = write_fixture(temp_dir("idx-magic"), 0x804);
  EXPECT_THROW(load_idx(f.images, f.labels), FormatError);
}

TEST(Idx, TruncatedFileIsLengthError) {
  const auto f = write_fixture(temp_dir("idx-trunc"), 0x803, 4, 3);
  EXPECT_THROW(load_idx(f.images, f.labels), LengthError);
}

TEST(Idx, CountMismatchIsLengthError) {
  const auto f = write_fixture(temp_dir("idx-count"), 0x803, 3);
  EXPECT_THROW(load_idx(f.images, f.labels), LengthError);
}

TEST(Idx, WriteThenReadRoundTrips) {
  const fs::path dir = temp_dir("idx-rt");
  const GraySet set = synth_glyphs(3, 2, {0, 4});
  write_idx(set, dir / "i.idx", dir / "l.idx");
  const GraySet back = load_idx(dir / "i.idx", dir / "l.idx");
  EXPECT_EQ(back.labels, set.labels);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(back.images[i], set.images[i]);
}

TEST(Glyphs, DeterministicForFixedSeed) {
  const GraySet a = synth_glyphs(7, 5, {0, 1, 2});
  const GraySet b = synth_glyphs(7, 5, {0, 1, 2});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.images[i], b.images[i]);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Glyphs, ZeroPerClassIsEmpty) { EXPECT_EQ(synth_glyphs(1, 0, {0, 1}).size(), 0u); }

TEST(Glyphs, UnknownClassIsConfigError) { EXPECT_THROW(synth_glyphs(1, 1, {10}), ConfigError); }

TEST(Glyphs, DistinctClassesDifferInAtLeast40Pixels) {
  const GraySet set = synth_glyphs(9, 100, {0, 1});
  ASSERT_EQ(set.size(), 200u);
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j)
      if (set.labels[i] != set.labels[j]) ASSERT_GE(pixel_difference(set.images[i], set.images[j]), 40u);
}

TEST(Glyphs, EveryJitterVariantOfEveryClassPairDiffers) {
  std::vector<std::vector<GrayImage>> variants(10);
  for (int c = 0; c < 10; ++c)
    for (int dx = -2; dx <= 2; ++dx)
      for (int dy = -2; dy <= 2; ++dy)
        for (int t = kGlyphBaseThickness - 1; t <= kGlyphBaseThickness + 1; ++t)
          variants[c].push_back(render_glyph(c, dx, dy, t));
  std::size_t min_diff = SIZE_MAX;
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b)
      for (const auto& va : variants[a])
        for (const auto& vb : variants[b]) min_diff = std::min(min_diff, pixel_difference(va, vb));
  EXPECT_GE(min_diff, 40u);
}

TEST(Colorize, Endpoints) {
  const RgbImage red = colorize(flat(2, 2, 0.0), colors::white(), colors::red());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(red.pixels[3 * i], 1.0);
    EXPECT_EQ(red.pixels[3 * i + 1], 0.0);
    EXPECT_EQ(red.pixels[3 * i + 2], 0.0);
  }
  const RgbImage white = colorize(flat(2, 2, 1.0), colors::white(), colors::red());
  for (double v : white.pixels) EXPECT_EQ(v, 1.0);
  const RgbImage gray = colorize(flat(2, 2, 0.5), colors::white(), colors::black());
  for (double v : gray.pixels) EXPECT_EQ(v, 0.5);
}

TEST(Colorize, ExtractMaskInvertsColorize) {
  const GraySet set = synth_glyphs(2, 3, {0, 3});
  for (const auto& g : set.images) {
    for (const auto& bg : colors::evaluation_palette()) {
      EXPECT_EQ(extract_mask(colorize(g, colors::black(), bg), colors::black(), bg), g);
    }
  }
}

TEST(Colors, PaletteHasTenEntriesAndParsesHex) {
  EXPECT_EQ(colors::evaluation_palette().size(), 10u);
  const ColorSpec c = colors::from_hex("x", "#ff8000");
  EXPECT_EQ(c.rgb[0], 1.0);
  EXPECT_EQ(c.rgb[1], 128.0 / 255.0);
  EXPECT_EQ(c.rgb[2], 0.0);
  EXPECT_THROW(colors::by_name("chartreuse-ish"), ConfigError);
}

TEST(Composite, MaskEndpointsAndHalfBlend) {
  proptest::Gen g(4);
  const RgbImage fg{2, 2, g.reals(12, 0, 1)}, bg{2, 2, g.reals(12, 0, 1)};
  EXPECT_EQ(composite(fg, flat(2, 2, 1.0), bg), fg);
  EXPECT_EQ(composite(fg, flat(2, 2, 0.0), bg), bg);
  const RgbImage half = composite(fg, flat(2, 2, 0.5), bg);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(half.pixels[i], 0.5 * fg.pixels[i] + 0.5 * bg.pixels[i]);
  EXPECT_THROW(composite(fg, flat(3, 3, 0.5), bg), DimensionError);
}

TEST(Quotas, PaperRatioGivesExactCounts) {
  CorrelationConfig cc;
  cc.r = 0.45;
  EXPECT_EQ(environment_quotas(1000, 0, cc), (std::vector<std::size_t>{450, 50, 450, 50}));
  EXPECT_EQ(environment_quotas(1000, 1, cc), (std::vector<std::size_t>{50, 450, 50, 450}));
}

TEST(Quotas, UniformRatioSplitsEvenly) {
  CorrelationConfig cc;
  cc.r = 0.25;
  EXPECT_EQ(environment_quotas(400, 0, cc), (std::vector<std::size_t>{100, 100, 100, 100}));
}

TEST(Quotas, CountsSumToClassSizeAndStayWithinOneOfExpectation) {
  proptest::for_all(200, 21, [](proptest::Gen& g) {
    CorrelationConfig cc;
    cc.r = g.real(0.05, 0.5);
    const std::size_t n = g.size(4, 3000);
    for (std::size_t y = 0; y < 2; ++y) {
      const auto q = environment_quotas(n, y, cc);
      const auto p = cc.probabilities(y);
      std::size_t total = 0;
      for (std::size_t e = 0; e < q.size(); ++e) {
        total += q[e];
        EXPECT_LE(std::abs(static_cast<double>(q[e]) - p[e] * static_cast<double>(n)), 1.0 + 1e-9)
            << "r=" << cc.r << " n=" << n;
      }
      EXPECT_EQ(total, n);
    }
  });
}

TEST(Quotas, TooFewSamplesIsConfigError) {
  CorrelationConfig cc;
  EXPECT_THROW(assign_environments({0, 0, 0, 1, 1, 1, 1}, cc, 1), ConfigError);
  EXPECT_NO_THROW(assign_environments({1, 1, 1, 1}, cc, 1));
}

TEST(Quotas, AssignmentIsDeterministic) {
  CorrelationConfig cc;
  std::vector<int> labels(100, 0);
  std::fill(labels.begin() + 50, labels.end(), 1);
  EXPECT_EQ(assign_environments(labels, cc, 5), assign_environments(labels, cc, 5));
  EXPECT_NE(assign_environments(labels, cc, 5), assign_environments(labels, cc, 6));
}

TEST(Cmnist, GroupCountsMatchQuotaTable) {
  CorrelationConfig cc;
  cc.r = 0.45;
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 1000, {0, 1}), cc, 2);
  ASSERT_EQ(ds.size(), 2000u);
  // g = y * 4 + e with e in (red, green, purple, pink).
  const std::map<int, std::size_t> expected{{0, 450}, {1, 50}, {2, 450}, {3, 50},
                                            {4, 50},  {5, 450}, {6, 50}, {7, 450}};
  EXPECT_EQ(count_groups(ds), expected);
  EXPECT_EQ(ds.group_counts, expected);
}

TEST(Cmnist, GroupIdsReproducePairingTable) {
  CorrelationConfig cc;
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 20, {0, 1}), cc, 2);
  for (const auto& img : ds.images) {
    EXPECT_EQ(img.g, img.y * 4 + img.e);
    EXPECT_EQ(img.pixels, colorize(img.mask, colors::white(), colors::by_name(cc.environments[img.e])));
  }
}

TEST(Cmnist, EmptySourceGivesEmptyDataset) {
  const GroupedDataset ds = build_cmnist(GraySet{}, CorrelationConfig{}, 1);
  EXPECT_EQ(ds.size(), 0u);
}

TEST(Cmnist, UniformRatioIsUniform) {
  CorrelationConfig cc;
  cc.r = 0.25;
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 1000, {0, 1}), cc, 2);
  for (const auto& [g, n] : count_groups(ds)) EXPECT_EQ(n, 250u) << "group " << g;
}

TEST(Pairs, BlackOnWhitePreservesMask) {
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 10, {0, 1}), CorrelationConfig{}, 2);
  const auto pairs = make_consistency_pairs(ds, PairPolicy::black_on_white(), 3);
  ASSERT_EQ(pairs.size(), ds.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& img = ds.images[i];
    EXPECT_EQ(pairs[i].x, img.pixels);
    EXPECT_EQ(pairs[i].y, img.y);
    EXPECT_EQ(pairs[i].x_bar, colorize(img.mask, colors::black(), colors::white()));
    const auto env = colors::by_name(ds.environment_set[img.e]);
    EXPECT_EQ(extract_mask(pairs[i].x, colors::white(), env), extract_mask(pairs[i].x_bar, colors::black(), colors::white()));
  }
}

TEST(Pairs, IdentityPolicyReproducesInput) {
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 10, {0, 1}), CorrelationConfig{}, 2);
  for (const auto& p : make_consistency_pairs(ds, PairPolicy::parse("identity"), 3)) EXPECT_EQ(p.x, p.x_bar);
  for (const auto& p : make_consistency_pairs(ds, PairPolicy::parse("fixed:white:original"), 3)) EXPECT_EQ(p.x, p.x_bar);
}

TEST(Pairs, RandomPolicyIsDeterministicAndDrawsFromPalette) {
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 30, {0, 1}), CorrelationConfig{}, 2);
  const auto a = make_consistency_pairs(ds, PairPolicy::random(), 3);
  const auto b = make_consistency_pairs(ds, PairPolicy::random(), 3);
  std::set<std::string> palette;
  for (const auto& c : colors::evaluation_palette()) palette.insert(c.name);
  std::set<std::string> fgs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x_bar, b[i].x_bar);
    EXPECT_TRUE(a[i].fg == "black" || a[i].fg == "white");
    EXPECT_TRUE(palette.count(a[i].bg)) << a[i].bg;
    fgs.insert(a[i].fg);
  }
  EXPECT_EQ(fgs.size(), 2u);
}

TEST(Pairs, PolicyNamesRoundTrip) {
  for (const char* name : {"random", "bw", "identity", "fixed:black:white", "fixed:original:red"}) {
    EXPECT_EQ(PairPolicy::parse(name).name(), name);
  }
  EXPECT_THROW(PairPolicy::parse("sideways"), ConfigError);
}

TEST(SpuriousOod, UsesEnvironmentColorsAndOutOfClassGlyphs) {
  const GraySet source = synth_glyphs(4, 10, {5, 6, 7, 8});
  const auto ood = build_spurious_ood(source, {5, 6, 7, 8}, {0, 1}, {colors::red(), colors::green()}, 1, 30);
  ASSERT_EQ(ood.size(), 30u);
  const GraySet id = synth_glyphs(5, 10, {0, 1});
  for (const auto& img : ood) {
    EXPECT_TRUE(img.y >= 5 && img.y <= 8);
    const ColorSpec bg = img.e == 0 ? colors::red() : colors::green();
    EXPECT_EQ(img.pixels, colorize(img.mask, colors::white(), bg));
    for (const auto& g : id.images) EXPECT_GE(pixel_difference(img.mask, g), 40u);
  }
}

TEST(SpuriousOod, EmptyAndOverlapCases) {
  const GraySet source = synth_glyphs(4, 2, {5});
  EXPECT_TRUE(build_spurious_ood(source, {5}, {0, 1}, {colors::red()}, 1, 0).empty());
  EXPECT_THROW(build_spurious_ood(source, {5, 1}, {0, 1}, {colors::red()}, 1, 3), ConfigError);
}

TEST(RemoveMinority, FractionZeroKeepsEverything) {
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 500, {0, 1}), CorrelationConfig{}, 2);
  const GroupedDataset out = remove_minority(ds, 0.0, 1);
  EXPECT_EQ(out.size(), ds.size());
  EXPECT_EQ(out.group_counts, ds.group_counts);
}

TEST(RemoveMinority, NinetyPercentOfFiftyLeavesFive) {
  const GroupedDataset big = build_cmnist(synth_glyphs(1, 1000, {0, 1}), CorrelationConfig{}, 2);
  const int target = big.smallest_group();
  ASSERT_EQ(big.group_counts.at(target), 50u);
  const GroupedDataset out = remove_minority(big, 0.9, 3);
  EXPECT_EQ(out.group_counts.at(target), 5u);
  for (const auto& [g, n] : big.group_counts)
    if (g != target) EXPECT_EQ(out.group_counts.at(g), n);
  EXPECT_EQ(count_groups(out).at(target), 5u);
}

TEST(RemoveMinority, FractionOneEmptiesGroup) {
  const GroupedDataset big = build_cmnist(synth_glyphs(1, 100, {0, 1}), CorrelationConfig{}, 2);
  const int target = big.smallest_group();
  const GroupedDataset out = remove_minority(big, 1.0, 3);
  EXPECT_EQ(out.group_counts.at(target), 0u);
  EXPECT_EQ(out.size(), big.size() - big.group_counts.at(target));
  EXPECT_THROW(remove_minority(big, 1.5, 3), ContractError);
}

TEST(CompositePreset, QuotasAndSwapPairs) {
  const GroupedDataset ds = build_composite(20, 0.9, 1);
  ASSERT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.group_counts.at(0), 18u);
  EXPECT_EQ(ds.group_counts.at(1), 2u);
  EXPECT_EQ(ds.group_counts.at(3), 18u);
  for (const auto& img : ds.images) {
    EXPECT_EQ(img.pixels.height, kCompositeSize);
    for (double v : img.pixels.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  const auto pairs = make_background_swap_pairs(ds, 2);
  ASSERT_EQ(pairs.size(), ds.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& mask = ds.images[i].mask;
    for (std::size_t p = 0; p < mask.pixels.size(); ++p) {
      if (mask.pixels[p] == 1.0) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(pairs[i].x.pixels[3 * p + c], pairs[i].x_bar.pixels[3 * p + c]);
      }
    }
    EXPECT_NE(pairs[i].x, pairs[i].x_bar);
  }
}

TEST(Export, WritesPpmFilesAndManifest) {
  const fs::path dir = temp_dir("export");
  const GroupedDataset ds = build_cmnist(synth_glyphs(1, 4, {0, 1}), CorrelationConfig{}, 2);
  export_dataset(ds, dir);
  std::ifstream manifest(dir / "manifest.csv");
  std::string header;
  std::getline(manifest, header);
  EXPECT_EQ(header, "index,y,e,g,path");
  const RgbImage back = read_ppm(dir / "images" / "000003.ppm");
  ASSERT_EQ(back.height, 28u);
  for (std::size_t i = 0; i < back.pixels.size(); ++i) {
    EXPECT_NEAR(back.pixels[i], ds.images[3].pixels.pixels[i], 0.5 / 255.0 + 1e-12);
  }
}
