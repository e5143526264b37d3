#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>

#include "splab/data.hpp"
#include "splab/errors.hpp"

namespace splab {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw LengthError(path.string() + ": truncated IDX header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

GraySet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string images = read_all(images_path);
  const std::string labels = read_all(labels_path);
  if (read_be32(images, 0, images_path) != kImageMagic) {
    throw FormatError(images_path.string() + ": bad IDX image magic");
  }
  if (read_be32(labels, 0, labels_path) != kLabelMagic) {
    throw FormatError(labels_path.string() + ": bad IDX label magic");
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n != n_labels) {
    throw LengthError("IDX image count " + std::to_string(n) + " differs from label count " +
                      std::to_string(n_labels));
  }
  if (images.size() < 16 + n * rows * cols) throw LengthError(images_path.string() + ": truncated pixel data");
  if (labels.size() < 8 + n) throw LengthError(labels_path.string() + ": truncated label data");

  GraySet set;
  set.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GrayImage img{rows, cols, std::vector<double>(rows * cols)};
    const std::size_t base = 16 + i * rows * cols;
    for (std::size_t p = 0; p < rows * cols; ++p) {
      img.pixels[p] = static_cast<unsigned char>(images[base + p]) / 255.0;
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(static_cast<unsigned char>(labels[8 + i]));
  }
  return set;
}

void write_idx(const GraySet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  const std::size_t rows = set.images.empty() ? 0 : set.images.front().height;
  const std::size_t cols = set.images.empty() ? 0 : set.images.front().width;
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw FileError("cannot write IDX files");
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(set.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  for (const auto& g : set.images) {
    if (g.height != rows || g.width != cols) throw DimensionError("write_idx: images differ in size");
    for (double v : g.pixels) img.put(static_cast<char>(static_cast<unsigned char>(v * 255.0 + 0.5)));
  }
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(set.size()));
  for (int y : set.labels) lab.put(static_cast<char>(y));
}

}  // namespace splab
