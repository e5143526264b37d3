#include "splab/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "splab/errors.hpp"

namespace splab {

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("short write to " + path.string());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read " + path.string());
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P6" || maxval != 255 || width == 0 || height == 0) {
    throw FormatError(path.string() + ": not an 8-bit binary PPM");
  }
  in.get();
  std::string bytes(width * height * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw LengthError(path.string() + ": truncated PPM");
  RgbImage image{height, width, std::vector<double>(bytes.size())};
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    image.pixels[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  }
  return image;
}

RgbImage upscale(const RgbImage& image, std::size_t factor) {
  RgbImage out{image.height * factor, image.width * factor, {}};
  out.pixels.resize(out.height * out.width * 3);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        out.pixels[(r * out.width + c) * 3 + ch] = image.pixels[((r / factor) * image.width + c / factor) * 3 + ch];
  return out;
}

}  // namespace splab
