#include <algorithm>
#include <cmath>
#include <string>

#include "splab/data.hpp"
#include "splab/errors.hpp"
#include "splab/rng.hpp"

namespace splab {
namespace {

struct Point {
  double x, y;
};
struct Segment {
  Point a, b;
};
struct GlyphShape {
  std::vector<Segment> segments;
  double ring_radius = 0.0;  // > 0 adds a circle around the frame centre
};

constexpr double kCentre = 13.5;

// One fixed stroke drawing per class id, in pixel coordinates of a 28x28 frame.
const GlyphShape& glyph_shape(int cls) {
  static const std::vector<GlyphShape> shapes = {
      {{}, 8.0},                                                                    // 0 ring
      {{{{kCentre, 4.5}, {kCentre, 22.5}}}, 0.0},                                   // 1 vertical bar
      {{{{4.5, kCentre}, {22.5, kCentre}}}, 0.0},                                   // 2 horizontal bar
      {{{{kCentre, 4.5}, {kCentre, 22.5}}, {{4.5, kCentre}, {22.5, kCentre}}}, 0.0},  // 3 plus
      {{{{6, 6}, {21, 21}}, {{6, 21}, {21, 6}}}, 0.0},                              // 4 cross
      {{{{6, 6}, {21, 6}}, {{21, 6}, {21, 21}}, {{21, 21}, {6, 21}}, {{6, 21}, {6, 6}}}, 0.0},  // 5 box
      {{{{kCentre, 5}, {5, 21}}, {{5, 21}, {22, 21}}, {{22, 21}, {kCentre, 5}}}, 0.0},         // 6 triangle
      {{{{6, 6}, {21, 6}}, {{21, 6}, {6, 21}}, {{6, 21}, {21, 21}}}, 0.0},                     // 7 zigzag
      {{{{5, 9}, {22, 9}}, {{5, 18}, {22, 18}}}, 0.0},                                         // 8 double bar
      {{{{5, 6}, {22, 6}}, {{kCentre, 6}, {kCentre, 22}}}, 0.0},                               // 9 tee
  };
  if (cls < 0 || cls >= static_cast<int>(shapes.size())) {
    throw ConfigError("no glyph for class id " + std::to_string(cls));
  }
  return shapes[static_cast<std::size_t>(cls)];
}

double segment_distance(Point p, const Segment& s) {
  const double vx = s.b.x - s.a.x, vy = s.b.y - s.a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - s.a.x) * vx + (p.y - s.a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (s.a.x + t * vx), ey = p.y - (s.a.y + t * vy);
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

GrayImage render_glyph(int cls, int dx, int dy, int thickness) {
  const GlyphShape& shape = glyph_shape(cls);
  const double half = thickness / 2.0;
  GrayImage img{kGlyphSize, kGlyphSize, std::vector<double>(kGlyphSize * kGlyphSize, 0.0)};
  for (std::size_t r = 0; r < kGlyphSize; ++r) {
    for (std::size_t c = 0; c < kGlyphSize; ++c) {
      const Point p{static_cast<double>(c) - dx, static_cast<double>(r) - dy};
      bool on = false;
      for (const auto& s : shape.segments) on = on || segment_distance(p, s) <= half;
      if (shape.ring_radius > 0.0) {
        const double dist = std::hypot(p.x - kCentre, p.y - kCentre);
        on = on || std::abs(dist - shape.ring_radius) <= half;
      }
      img.pixels[r * kGlyphSize + c] = on ? 1.0 : 0.0;
    }
  }
  return img;
}

GraySet synth_glyphs(std::uint64_t seed, std::size_t n_per_class, const std::vector<int>& classes) {
  for (int cls : classes) glyph_shape(cls);
  GraySet set;
  for (int cls : classes) {
    Rng rng(derive_seed(seed, "glyph/" + std::to_string(cls)));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const int dx = static_cast<int>(rng.below(5)) - 2;
      const int dy = static_cast<int>(rng.below(5)) - 2;
      const int thickness = kGlyphBaseThickness + static_cast<int>(rng.below(3)) - 1;
      set.images.push_back(render_glyph(cls, dx, dy, thickness));
      set.labels.push_back(cls);
    }
  }
  return set;
}

GraySet take_per_class(const GraySet& source, const std::vector<int>& classes, std::size_t n_per_class) {
  GraySet out;
  for (int cls : classes) {
    std::size_t taken = 0;
    for (std::size_t i = 0; i < source.size() && taken < n_per_class; ++i) {
      if (source.labels[i] != cls) continue;
      out.images.push_back(source.images[i]);
      out.labels.push_back(cls);
      ++taken;
    }
  }
  return out;
}

std::size_t pixel_difference(const GrayImage& a, const GrayImage& b) {
  if (a.pixels.size() != b.pixels.size()) throw DimensionError("pixel_difference: image sizes differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) n += std::abs(a.pixels[i] - b.pixels[i]) > 0.5 ? 1 : 0;
  return n;
}

}  // namespace splab
