#include <algorithm>
#include <cmath>
#include <string>

#include "splab/data.hpp"
#include "splab/errors.hpp"
#include "splab/rng.hpp"

namespace splab {
namespace {

constexpr std::size_t kSize = kCompositeSize;

void set_pixel(RgbImage& img, std::size_t r, std::size_t c, const std::array<double, 3>& rgb) {
  for (std::size_t ch = 0; ch < 3; ++ch) img.pixels[(r * kSize + c) * 3 + ch] = std::clamp(rgb[ch], 0.0, 1.0);
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

}  // namespace

RgbImage render_background(int environment, std::uint64_t seed) {
  if (environment != 0 && environment != 1) {
    throw RangeError("render_background: environment " + std::to_string(environment) + " is not water(0)/land(1)");
  }
  Rng rng(derive_seed(seed, "background"));
  RgbImage img{kSize, kSize, std::vector<double>(kSize * kSize * 3)};
  const double phase = rng.uniform() * 6.283185307179586;
  // Land gets a few darker soil blobs.
  std::vector<std::array<double, 3>> blobs;
  for (int k = 0; k < 4; ++k) blobs.push_back({rng.uniform() * kSize, rng.uniform() * kSize, 3.0 + 4.0 * rng.uniform()});
  for (std::size_t r = 0; r < kSize; ++r) {
    for (std::size_t c = 0; c < kSize; ++c) {
      const double noise = 0.08 * (rng.uniform() - 0.5);
      std::array<double, 3> rgb;
      if (environment == 0) {
        const double wave = 0.1 * std::sin(0.8 * static_cast<double>(r) + 0.3 * static_cast<double>(c) + phase);
        rgb = {0.10 + noise, 0.35 + wave + noise, 0.75 + wave + noise};
      } else {
        bool soil = false;
        for (const auto& b : blobs) soil = soil || std::hypot(c - b[0], r - b[1]) < b[2];
        rgb = soil ? std::array<double, 3>{0.45 + noise, 0.30 + noise, 0.15 + noise}
                   : std::array<double, 3>{0.25 + noise, 0.55 + noise, 0.15 + noise};
      }
      set_pixel(img, r, c, rgb);
    }
  }
  return img;
}

void render_sprite(int cls, std::uint64_t seed, RgbImage& sprite, GrayImage& mask) {
  if (cls != 0 && cls != 1) throw ConfigError("render_sprite: no sprite for class " + std::to_string(cls));
  Rng rng(derive_seed(seed, "sprite"));
  const double dx = static_cast<double>(rng.below(5)) - 2.0;
  const double dy = static_cast<double>(rng.below(5)) - 2.0;
  const double tint = 0.1 * (rng.uniform() - 0.5);
  const std::array<double, 3> body = cls == 0 ? std::array<double, 3>{0.92 + tint, 0.92 + tint, 0.88 + tint}
                                              : std::array<double, 3>{0.55 + tint, 0.35 + tint, 0.20 + tint};
  const std::array<double, 3> accent = {0.95, 0.75, 0.10};
  sprite = RgbImage{kSize, kSize, std::vector<double>(kSize * kSize * 3, 0.0)};
  mask = GrayImage{kSize, kSize, std::vector<double>(kSize * kSize, 0.0)};
  for (std::size_t r = 0; r < kSize; ++r) {
    for (std::size_t c = 0; c < kSize; ++c) {
      const double x = static_cast<double>(c) - dx, y = static_cast<double>(r) - dy;
      bool in_body = false, in_accent = false;
      if (cls == 0) {
        // Long flat body, long neck, small head.
        in_body = std::pow((x - 14.0) / 9.0, 2) + std::pow((y - 20.0) / 4.0, 2) <= 1.0 ||
                  segment_distance(x, y, 20.0, 18.0, 24.0, 8.0) <= 1.5 || std::hypot(x - 24.0, y - 7.0) <= 2.5;
        in_accent = segment_distance(x, y, 26.0, 7.0, 29.0, 8.0) <= 0.8;
      } else {
        // Round body, short neck, two legs.
        in_body = std::hypot(x - 15.0, y - 15.0) <= 6.5 || std::hypot(x - 20.0, y - 9.0) <= 3.0;
        in_accent = segment_distance(x, y, 13.0, 21.0, 12.0, 27.0) <= 0.8 ||
                    segment_distance(x, y, 17.0, 21.0, 18.0, 27.0) <= 0.8 ||
                    segment_distance(x, y, 23.0, 9.0, 26.0, 10.0) <= 0.8;
      }
      if (in_body || in_accent) {
        mask.pixels[r * kSize + c] = 1.0;
        set_pixel(sprite, r, c, in_body ? body : accent);
      }
    }
  }
}

GroupedDataset build_composite(std::size_t n_per_class, double r, std::uint64_t seed) {
  CorrelationConfig config;
  config.classes = {0, 1};
  config.environments = {"water", "land"};
  config.same_class = {{0}, {1}};
  config.r = r;
  std::vector<int> labels;
  for (int cls : config.classes) labels.insert(labels.end(), n_per_class, cls);
  const auto env = assign_environments(labels, config, seed);
  GroupedDataset ds;
  ds.class_set = config.classes;
  ds.environment_set = config.environments;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint64_t item_seed = derive_seed(seed, "composite/" + std::to_string(i));
    RgbImage sprite;
    LabeledImage img;
    render_sprite(labels[i], item_seed, sprite, img.mask);
    img.pixels = composite(sprite, img.mask, render_background(env[i], item_seed));
    img.y = labels[i];
    img.e = env[i];
    img.g = ds.group_id(img.y, img.e);
    ds.images.push_back(std::move(img));
  }
  ds.recount();
  return ds;
}

std::vector<ConsistencyPair> make_background_swap_pairs(const GroupedDataset& dataset, std::uint64_t seed) {
  if (dataset.images.empty()) throw ContractError("make_background_swap_pairs: dataset is empty");
  std::vector<ConsistencyPair> pairs;
  pairs.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& img = dataset.images[i];
    const int other = 1 - img.e;
    const auto background = render_background(other, derive_seed(seed, "swap/" + std::to_string(i)));
    // Sprite masks are binary, so the image itself serves as the foreground.
    pairs.push_back({img.pixels, composite(img.pixels, img.mask, background), img.y, img.g, "sprite",
                     dataset.environment_set.at(static_cast<std::size_t>(other))});
  }
  return pairs;
}

}  // namespace splab
