#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace splab {

struct ColorSpec {
  std::string name;
  std::array<double, 3> rgb{};

  friend bool operator==(const ColorSpec&, const ColorSpec&) = default;
};

namespace colors {
// Training environments of the colored-digit setup.
ColorSpec red();
ColorSpec green();
ColorSpec purple();
ColorSpec pink();
ColorSpec black();
ColorSpec white();
// The ten background colors used when recoloring evaluation pairs.
const std::vector<ColorSpec>& evaluation_palette();
// "#rrggbb" -> rgb in [0,1].
ColorSpec from_hex(std::string name, std::string_view hex);
// Any named color above, or "#rrggbb". Throws ConfigError otherwise.
ColorSpec by_name(std::string_view name);
}  // namespace colors

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // row-major, values in [0,1]

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // row-major HxWx3, values in [0,1]

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Grayscale source images carrying only the invariant feature (the glyph).
struct GraySet {
  std::vector<GrayImage> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

// `y` indexes the dataset's class set, `e` its environment set and `g` is the
// canonical pairing y * |environments| + e. `mask` is the glyph/sprite the
// pixels were rendered from.
struct LabeledImage {
  RgbImage pixels;
  GrayImage mask;
  int y = 0;
  int e = 0;
  int g = 0;
};

struct GroupedDataset {
  std::vector<LabeledImage> images;
  std::vector<int> class_set;                // source class ids, indexed by y
  std::vector<std::string> environment_set;  // indexed by e
  std::map<int, std::size_t> group_counts;   // every group id, including empty groups

  std::size_t size() const { return images.size(); }
  std::size_t group_count() const { return class_set.size() * environment_set.size(); }
  int group_id(int y, int e) const;
  // Recomputes group_counts from the images; every (y,e) cell gets an entry.
  void recount();
  // Smallest group among those with at least one image; ties go to the lower id.
  int smallest_group() const;
};

// Spurious-correlation strength. For each class, every environment listed in
// `same_class[y]` receives probability r; the remaining mass is split evenly
// across the other environments.
struct CorrelationConfig {
  std::vector<int> classes{0, 1};
  std::vector<std::string> environments{"red", "green", "purple", "pink"};
  std::vector<std::vector<int>> same_class{{0, 2}, {1, 3}};
  double r = 0.45;

  // Environment probabilities of class index `y`.
  std::vector<double> probabilities(std::size_t y) const;
  void validate() const;
};

// ---- Ingestion ----------------------------------------------------------

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
GraySet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
void write_idx(const GraySet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

inline constexpr std::size_t kGlyphSize = 28;

// Deterministic parametric 28x28 glyphs, one shape per class id 0..9, with
// translation jitter of +-2 px and stroke thickness jitter of +-1.
GraySet synth_glyphs(std::uint64_t seed, std::size_t n_per_class, const std::vector<int>& classes);
// The un-jittered glyph of `cls` shifted by (dx, dy) with stroke width `thickness`.
GrayImage render_glyph(int cls, int dx, int dy, int thickness);
inline constexpr int kGlyphBaseThickness = 4;

// Keeps the first n images of every class in `classes`, in source order.
GraySet take_per_class(const GraySet& source, const std::vector<int>& classes, std::size_t n_per_class);

// Number of pixels whose values differ by more than 0.5.
std::size_t pixel_difference(const GrayImage& a, const GrayImage& b);

// ---- Rendering ----------------------------------------------------------

// pixel = gray * fg + (1 - gray) * bg per channel.
RgbImage colorize(const GrayImage& gray, const ColorSpec& fg, const ColorSpec& bg);
// Recovers the gray mask from a colorize() output given the two colors. Uses
// the channel where fg and bg differ most.
GrayImage extract_mask(const RgbImage& image, const ColorSpec& fg, const ColorSpec& bg);
// pixel = mask * fg + (1 - mask) * bg.
RgbImage composite(const RgbImage& foreground, const GrayImage& mask, const RgbImage& background);

// ---- Dataset construction ------------------------------------------------

// Exact per-environment counts for n_y samples of class index y: round(p * n_y)
// each, with the rounding remainder spread over the same-class environments
// in listed order.
std::vector<std::size_t> environment_quotas(std::size_t n_y, std::size_t y, const CorrelationConfig& config);

// Environment index per label. Labels are source class ids from config.classes.
std::vector<int> assign_environments(const std::vector<int>& labels, const CorrelationConfig& config,
                                     std::uint64_t seed);

// Colorizes every source image of config.classes with a white foreground on its
// assigned environment color.
GroupedDataset build_cmnist(const GraySet& source, const CorrelationConfig& config, std::uint64_t seed);

struct ConsistencyPair {
  RgbImage x;
  RgbImage x_bar;
  int y = 0;
  int g = 0;
  std::string fg;
  std::string bg;
};

struct PairPolicy {
  enum class Kind { Random, BlackOnWhite, Fixed };
  Kind kind = Kind::BlackOnWhite;
  // Fixed only; an empty optional keeps the sample's original color.
  std::optional<ColorSpec> fg;
  std::optional<ColorSpec> bg;

  static PairPolicy random() { return {Kind::Random, {}, {}}; }
  static PairPolicy black_on_white() { return {Kind::BlackOnWhite, {}, {}}; }
  static PairPolicy fixed(std::optional<ColorSpec> fg, std::optional<ColorSpec> bg) {
    return {Kind::Fixed, std::move(fg), std::move(bg)};
  }
  // "random", "bw", "identity", or "fixed:<fg>:<bg>" where a color may be "original".
  static PairPolicy parse(std::string_view text);
  std::string name() const;
};

// x is the dataset image; x_bar re-renders the same mask with recolored
// foreground/background. Random draws fg from {black, white} and bg from the
// evaluation palette, independently per pair.
std::vector<ConsistencyPair> make_consistency_pairs(const GroupedDataset& dataset, const PairPolicy& policy,
                                                    std::uint64_t seed);

// Out-of-class glyphs rendered with in-distribution environment colors and a
// white foreground. `y` holds the source class id, `e` the color index, g = -1.
std::vector<LabeledImage> build_spurious_ood(const GraySet& source, const std::vector<int>& ood_classes,
                                             const std::vector<int>& id_classes,
                                             const std::vector<ColorSpec>& env_colors, std::uint64_t seed,
                                             std::size_t n);

// Shrinks the smallest non-empty group to ceil((1 - fraction) * count) images.
GroupedDataset remove_minority(const GroupedDataset& dataset, double fraction, std::uint64_t seed);

// ---- Foreground/background compositor preset (32x32) ---------------------

inline constexpr std::size_t kCompositeSize = 32;

// Two sprite families (class 0 "waterbird", class 1 "landbird") over two
// procedurally textured backgrounds (environment 0 "water", 1 "land").
RgbImage render_background(int environment, std::uint64_t seed);
void render_sprite(int cls, std::uint64_t seed, RgbImage& sprite, GrayImage& mask);
// Environments assigned with the same quota rule as the colored digits, with
// same_class = {{0},{1}} and probability r for the matching background.
GroupedDataset build_composite(std::size_t n_per_class, double r, std::uint64_t seed);
// Same sprite placed on the opposite background.
std::vector<ConsistencyPair> make_background_swap_pairs(const GroupedDataset& dataset, std::uint64_t seed);

// ---- Export --------------------------------------------------------------

// Writes images as binary PPM files plus manifest.csv (index,y,e,g,path).
void export_dataset(const GroupedDataset& dataset, const std::filesystem::path& dir);

}  // namespace splab
