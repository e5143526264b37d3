#include <cmath>
#include <string>

#include "splab/data.hpp"
#include "splab/errors.hpp"

namespace splab {
namespace colors {

ColorSpec from_hex(std::string name, std::string_view hex) {
  if (hex.size() != 7 || hex[0] != '#') throw ConfigError("bad color literal '" + std::string(hex) + "'");
  ColorSpec c{std::move(name), {}};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const std::string part(hex.substr(1 + 2 * ch, 2));
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(part, &used, 16);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != 2) throw ConfigError("bad color literal '" + std::string(hex) + "'");
    c.rgb[ch] = value / 255.0;
  }
  return c;
}

ColorSpec red() { return from_hex("red", "#ff0000"); }
ColorSpec green() { return from_hex("green", "#008000"); }
ColorSpec purple() { return from_hex("purple", "#800080"); }
ColorSpec pink() { return from_hex("pink", "#ffc0cb"); }
ColorSpec black() { return {"black", {0.0, 0.0, 0.0}}; }
ColorSpec white() { return {"white", {1.0, 1.0, 1.0}}; }

const std::vector<ColorSpec>& evaluation_palette() {
  static const std::vector<ColorSpec> palette = [] {
    std::vector<ColorSpec> p;
    for (const char* hex : {"#ecf02b", "#f06007", "#0ff5f1", "#573115", "#857d0f", "#015c24", "#ab0067", "#fbb7fa",
                            "#d1ed95", "#0026ff"}) {
      p.push_back(from_hex(hex, hex));
    }
    return p;
  }();
  return palette;
}

ColorSpec by_name(std::string_view name) {
  if (name == "red") return red();
  if (name == "green") return green();
  if (name == "purple") return purple();
  if (name == "pink") return pink();
  if (name == "black") return black();
  if (name == "white") return white();
  if (!name.empty() && name[0] == '#') return from_hex(std::string(name), name);
  throw ConfigError("unknown color '" + std::string(name) + "'");
}

}  // namespace colors

RgbImage colorize(const GrayImage& gray, const ColorSpec& fg, const ColorSpec& bg) {
  RgbImage out{gray.height, gray.width, std::vector<double>(gray.pixels.size() * 3)};
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    const double v = gray.pixels[i];
    for (std::size_t ch = 0; ch < 3; ++ch) out.pixels[i * 3 + ch] = v * fg.rgb[ch] + (1.0 - v) * bg.rgb[ch];
  }
  return out;
}

GrayImage extract_mask(const RgbImage& image, const ColorSpec& fg, const ColorSpec& bg) {
  std::size_t channel = 0;
  for (std::size_t ch = 1; ch < 3; ++ch) {
    if (std::abs(fg.rgb[ch] - bg.rgb[ch]) > std::abs(fg.rgb[channel] - bg.rgb[channel])) channel = ch;
  }
  const double span = fg.rgb[channel] - bg.rgb[channel];
  if (span == 0.0) throw ContractError("extract_mask: foreground and background colors coincide");
  GrayImage out{image.height, image.width, std::vector<double>(image.height * image.width)};
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = (image.pixels[i * 3 + channel] - bg.rgb[channel]) / span;
  }
  return out;
}

RgbImage composite(const RgbImage& foreground, const GrayImage& mask, const RgbImage& background) {
  if (foreground.height != background.height || foreground.width != background.width ||
      mask.height != foreground.height || mask.width != foreground.width) {
    throw DimensionError("composite: foreground " + std::to_string(foreground.height) + "x" +
                         std::to_string(foreground.width) + ", mask " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width) + " and background " + std::to_string(background.height) +
                         "x" + std::to_string(background.width) + " differ");
  }
  RgbImage out{foreground.height, foreground.width, std::vector<double>(foreground.pixels.size())};
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const double m = mask.pixels[i];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      out.pixels[i * 3 + ch] = m * foreground.pixels[i * 3 + ch] + (1.0 - m) * background.pixels[i * 3 + ch];
    }
  }
  return out;
}

}  // namespace splab
