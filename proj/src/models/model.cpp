#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "splab/errors.hpp"
#include "splab/models.hpp"
#include "splab/ops.hpp"

namespace splab {

const ViTParams& Model::vit() const {
  if (const auto* p = std::get_if<ViTParams>(&params_)) return *p;
  throw ContractError("model is not a ViT");
}

const CNNParams& Model::cnn() const {
  if (const auto* p = std::get_if<CNNParams>(&params_)) return *p;
  throw ContractError("model is not a CNN");
}

std::size_t Model::n_classes() const {
  return kind() == Kind::ViT ? vit().config.n_classes : cnn().config.n_classes;
}

std::size_t Model::image_size() const {
  return kind() == Kind::ViT ? vit().config.image_size : cnn().config.image_size;
}

Tensor Model::logits(std::span<const RgbImage> images) const {
  if (kind() == Kind::ViT) return vit_forward(vit(), images).logits;
  return cnn_forward(cnn(), images).logits;
}

std::vector<Tensor> Model::parameters() const {
  return kind() == Kind::ViT ? vit().parameters() : cnn().parameters();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

Model Model::clone() const {
  Model copy = kind() == Kind::ViT ? Model(ViTParams::init(vit().config)) : Model(CNNParams::init(cnn().config));
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) std::copy(src[i].data().begin(), src[i].data().end(), dst[i].mutable_data().begin());
  return copy;
}

std::size_t Model::num_layers() const { return kind() == Kind::ViT ? vit().config.depth : 3; }

Tensor Model::layer_representation(std::span<const RgbImage> images, std::size_t layer,
                                   RepresentationMode mode) const {
  if (layer < 1 || layer > num_layers()) {
    throw RangeError("layer " + std::to_string(layer) + " outside [1, " + std::to_string(num_layers()) + "] for " +
                     kind_name());
  }
  if (kind() == Kind::CNN) return cnn_forward(cnn(), images).taps[layer - 1].detach();
  const auto out = vit_forward(vit(), images);
  const Tensor& x = out.block_outputs[layer - 1];
  const std::size_t B = images.size(), T = vit().config.tokens(), d = vit().config.embed_dim;
  std::vector<double> rep(B * d, 0.0);
  const auto X = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    if (mode == RepresentationMode::ClassToken) {
      std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(b * T * d), d, rep.begin() + static_cast<std::ptrdiff_t>(b * d));
    } else {
      for (std::size_t t = 1; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) rep[b * d + j] += X[(b * T + t) * d + j];
      for (std::size_t j = 0; j < d; ++j) rep[b * d + j] /= static_cast<double>(T - 1);
    }
  }
  return Tensor({B, d}, std::move(rep));
}

Model init_model(const std::variant<ViTConfig, CNNConfig>& config) {
  if (const auto* v = std::get_if<ViTConfig>(&config)) return Model(ViTParams::init(*v));
  return Model(CNNParams::init(std::get<CNNConfig>(config)));
}

// ---- Checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[] = "SPLAB1";
constexpr std::size_t kMagicLen = 6;

std::map<std::string, std::string> model_header(const Model& model) {
  std::map<std::string, std::string> h;
  h["kind"] = model.kind_name();
  if (model.kind() == Model::Kind::ViT) {
    const auto& c = model.vit().config;
    h["image_size"] = std::to_string(c.image_size);
    h["patch_size"] = std::to_string(c.patch_size);
    h["embed_dim"] = std::to_string(c.embed_dim);
    h["heads"] = std::to_string(c.heads);
    h["depth"] = std::to_string(c.depth);
    h["mlp_ratio"] = std::to_string(c.mlp_ratio);
    h["n_classes"] = std::to_string(c.n_classes);
    h["init_seed"] = std::to_string(c.seed);
  } else {
    const auto& c = model.cnn().config;
    h["image_size"] = std::to_string(c.image_size);
    h["channels"] = std::to_string(c.channels[0]) + "," + std::to_string(c.channels[1]) + "," +
                    std::to_string(c.channels[2]);
    h["n_classes"] = std::to_string(c.n_classes);
    h["init_seed"] = std::to_string(c.seed);
  }
  return h;
}

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset, const std::filesystem::path& path) {
  if (in.size() < offset + sizeof(T)) throw LengthError(path.string() + ": truncated checkpoint");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

std::size_t header_uint(const std::map<std::string, std::string>& h, const std::string& key) {
  const auto it = h.find(key);
  if (it == h.end()) throw FormatError("checkpoint header lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw FormatError("checkpoint header '" + key + "' is not an unsigned integer");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& metadata) {
  auto header = model_header(model);
  for (const auto& [k, v] : metadata) {
    if (header.contains(k)) throw ContractError("checkpoint metadata key '" + k + "' collides with a model key");
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata '" + k + "' contains a reserved character");
    }
    header[k] = v;
  }
  std::string text;
  for (const auto& [k, v] : header) text += k + "=" + v + "\n";

  std::string bytes(kMagic, kMagicLen);
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  const auto params = model.parameters();
  std::size_t count = 0;
  for (const auto& p : params) count += p.numel();
  put_le<std::uint64_t>(bytes, count);
  for (const auto& p : params)
    for (double v : p.data()) put_le<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(v));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw FormatError(path.string() + ": not a SPLAB1 checkpoint");
  }
  const auto header_len = get_le<std::uint32_t>(bytes, kMagicLen, path);
  const std::size_t header_start = kMagicLen + 4;
  if (bytes.size() < header_start + header_len) throw LengthError(path.string() + ": truncated checkpoint header");
  std::map<std::string, std::string> header;
  std::istringstream lines(bytes.substr(header_start, header_len));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ": malformed header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }

  const auto kind = header.find("kind");
  if (kind == header.end()) throw FormatError(path.string() + ": header lacks 'kind'");
  std::optional<Model> model;
  if (kind->second == "vit") {
    ViTConfig c;
    c.image_size = header_uint(header, "image_size");
    c.patch_size = header_uint(header, "patch_size");
    c.embed_dim = header_uint(header, "embed_dim");
    c.heads = header_uint(header, "heads");
    c.depth = header_uint(header, "depth");
    c.mlp_ratio = header_uint(header, "mlp_ratio");
    c.n_classes = header_uint(header, "n_classes");
    c.seed = header_uint(header, "init_seed");
    model.emplace(ViTParams::init(c));
  } else if (kind->second == "cnn") {
    CNNConfig c;
    c.image_size = header_uint(header, "image_size");
    c.n_classes = header_uint(header, "n_classes");
    c.seed = header_uint(header, "init_seed");
    std::istringstream ch(header.at("channels"));
    std::string part;
    for (std::size_t s = 0; s < 3; ++s) {
      if (!std::getline(ch, part, ',')) throw FormatError(path.string() + ": bad 'channels' entry");
      c.channels[s] = static_cast<std::size_t>(std::stoull(part));
    }
    model.emplace(CNNParams::init(c));
  } else {
    throw FormatError(path.string() + ": unknown model kind '" + kind->second + "'");
  }

  std::size_t offset = header_start + header_len;
  const auto count = get_le<std::uint64_t>(bytes, offset, path);
  offset += 8;
  if (count != model->parameter_count()) {
    throw FormatError(path.string() + ": holds " + std::to_string(count) + " values, model needs " +
                      std::to_string(model->parameter_count()));
  }
  if (bytes.size() != offset + count * 8) throw LengthError(path.string() + ": parameter payload has the wrong length");
  for (auto& p : model->parameters()) {
    for (double& v : p.mutable_data()) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset, path));
      offset += 8;
    }
  }
  return Checkpoint{std::move(*model), std::move(header)};
}

}  // namespace splab
