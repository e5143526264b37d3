#include <cmath>
#include <string>

#include "splab/errors.hpp"
#include "splab/models.hpp"
#include "splab/ops.hpp"
#include "splab/rng.hpp"

namespace splab {

void CNNConfig::validate() const {
  if (image_size == 0) throw ConfigError("CNN image size must be positive");
  for (std::size_t c : channels)
    if (c == 0) throw ConfigError("CNN stage channels must be positive");
  if (n_classes < 2) throw ConfigError("CNN needs at least 2 classes");
}

std::size_t CNNConfig::parameter_count() const {
  std::size_t total = 0, in = 3;
  for (std::size_t c : channels) {
    total += in * c * 9 + c;
    in = c;
  }
  return total + in * n_classes + n_classes;
}

CNNParams CNNParams::init(const CNNConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "cnn-init"));
  CNNParams p;
  p.config = config;
  std::size_t in = 3;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t out = config.channels[s];
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * 9));
    std::vector<double> w(out * in * 9);
    for (double& v : w) v = rng.truncated_normal(stddev);
    p.conv_w[s] = Tensor({out, in, 3, 3}, std::move(w), true);
    p.conv_b[s] = Tensor::zeros({out}, true);
    in = out;
  }
  p.head_w = Tensor::zeros({in, config.n_classes}, true);
  p.head_b = Tensor::zeros({config.n_classes}, true);
  return p;
}

std::vector<Tensor> CNNParams::parameters() const {
  return {conv_w[0], conv_b[0], conv_w[1], conv_b[1], conv_w[2], conv_b[2], head_w, head_b};
}

CNNOutput cnn_forward(const CNNParams& params, std::span<const RgbImage> images) {
  if (images.empty()) throw ContractError("cnn_forward: empty batch");
  const std::size_t B = images.size(), S = params.config.image_size;
  std::vector<double> nchw(B * 3 * S * S);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& img = images[b];
    if (img.height != S || img.width != S) {
      throw DimensionError("cnn_forward: expected " + std::to_string(S) + "x" + std::to_string(S) + " images, got " +
                           std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    for (std::size_t i = 0; i < S * S; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) nchw[(b * 3 + ch) * S * S + i] = img.pixels[i * 3 + ch];
  }
  Tensor x({B, 3, S, S}, std::move(nchw));
  CNNOutput out;
  for (std::size_t s = 0; s < 3; ++s) {
    x = gelu(conv2d(x, params.conv_w[s], params.conv_b[s], 2, 1));
    out.taps.push_back(global_avgpool(x));
  }
  out.logits = add_bias(matmul(out.taps.back(), params.head_w), params.head_b);
  return out;
}

}  // namespace splab
