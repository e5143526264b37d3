#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "splab/errors.hpp"
#include "splab/experiment.hpp"
#include "splab/rng.hpp"

namespace splab {
namespace {

using nlohmann::json;

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read through the size_t overload");

// Walks one JSON object, remembering which keys were read so leftovers can be
// reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw SchemaError(display(path_), "expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return;
    convert(*it, path_ + "/" + key, out);
  }

  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = node_.find(key);
    return ObjectReader(it == node_.end() ? empty : *it, path_ + "/" + key);
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw SchemaError(path_ + "/" + key, "unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  static std::string display(const std::string& p) { return p.empty() ? "/" : p; }

  static void convert(const json& v, const std::string& path, std::string& out) {
    if (!v.is_string()) throw SchemaError(path, "expected a string");
    out = v.get<std::string>();
  }
  static void convert(const json& v, const std::string& path, double& out) {
    if (!v.is_number()) throw SchemaError(path, "expected a number");
    out = v.get<double>();
  }
  static void convert(const json& v, const std::string& path, std::size_t& out) {
    if (!v.is_number_unsigned()) throw SchemaError(path, "expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  static void convert(const json& v, const std::string& path, int& out) {
    if (!v.is_number_integer()) throw SchemaError(path, "expected an integer");
    out = v.get<int>();
  }
  template <typename T>
  static void convert(const json& v, const std::string& path, std::vector<T>& out) {
    if (!v.is_array()) throw SchemaError(path, "expected an array");
    std::vector<T> result(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) convert(v[i], path + "/" + std::to_string(i), result[i]);
    out = std::move(result);
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw SchemaError(path, what);
}

void validate(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  require(d.source == "synth" || d.source == "idx" || d.source == "composite", "/dataset/source",
          "must be synth, idx or composite");
  require(d.r > 0.0 && d.r < 1.0, "/dataset/r", "must lie in (0, 1)");
  require(d.test_r > 0.0 && d.test_r < 1.0, "/dataset/test_r", "must lie in (0, 1)");
  require(d.train_per_class > 0, "/dataset/train_per_class", "must be positive");
  require(d.test_per_class > 0, "/dataset/test_per_class", "must be positive");
  if (d.source == "idx") {
    require(!d.idx_train_images.empty(), "/dataset/idx_train_images", "required for the idx source");
    require(!d.idx_train_labels.empty(), "/dataset/idx_train_labels", "required for the idx source");
    require(!d.idx_test_images.empty(), "/dataset/idx_test_images", "required for the idx source");
    require(!d.idx_test_labels.empty(), "/dataset/idx_test_labels", "required for the idx source");
  }
  if (d.source != "composite") {
    CorrelationConfig cc{d.classes, d.environments, d.same_class, d.r};
    try {
      cc.validate();
      for (const auto& e : d.environments) colors::by_name(e);
    } catch (const ConfigError& e) {
      throw SchemaError("/dataset", e.what());
    }
  } else {
    require(d.classes == std::vector<int>{0, 1}, "/dataset/classes", "the composite source has classes [0, 1]");
  }

  const auto& m = c.model;
  require(m.kind == "vit" || m.kind == "cnn", "/model/kind", "must be vit or cnn");
  require(m.representation == "class_token" || m.representation == "mean_patch", "/model/representation",
          "must be class_token or mean_patch");
  require(m.channels.size() == 3, "/model/channels", "must list three stage widths");
  const std::size_t expected_size = d.source == "composite" ? kCompositeSize : kGlyphSize;
  require(m.image_size == expected_size, "/model/image_size",
          "must be " + std::to_string(expected_size) + " for the " + d.source + " source");
  try {
    c.model_config(0);
  } catch (const ConfigError& e) {
    throw SchemaError("/model", e.what());
  }

  require(c.objective.kind == "erm" || c.objective.kind == "gdro", "/objective/kind", "must be erm or gdro");
  require(c.objective.eta >= 0.0, "/objective/eta", "must be non-negative");

  const auto& o = c.optimizer;
  require(o.base_lr > 0.0, "/optimizer/base_lr", "must be positive");
  require(o.momentum >= 0.0 && o.momentum < 1.0, "/optimizer/momentum", "must lie in [0, 1)");
  require(o.epochs > 0, "/optimizer/epochs", "must be positive");
  require(o.batch_size > 0, "/optimizer/batch_size", "must be positive");
  require(o.clip_norm > 0.0, "/optimizer/clip_norm", "must be positive");

  const auto& e = c.evaluation;
  require(!e.pair_policies.empty(), "/evaluation/pair_policies", "must not be empty");
  for (std::size_t i = 0; i < e.pair_policies.size(); ++i) {
    const std::string path = "/evaluation/pair_policies/" + std::to_string(i);
    if (e.pair_policies[i] == "swap") {
      require(d.source == "composite", path, "swap pairs need the composite source");
      continue;
    }
    try {
      PairPolicy::parse(e.pair_policies[i]);
    } catch (const ConfigError& err) {
      throw SchemaError(path, err.what());
    }
  }
  if (e.cka_policy != "swap") {
    try {
      PairPolicy::parse(e.cka_policy);
    } catch (const ConfigError& err) {
      throw SchemaError("/evaluation/cka_policy", err.what());
    }
  }
  const std::size_t layers = m.kind == "vit" ? m.depth : 3;
  for (std::size_t i = 0; i < e.cka_layers.size(); ++i) {
    require(e.cka_layers[i] >= 1 && e.cka_layers[i] <= layers, "/evaluation/cka_layers/" + std::to_string(i),
            "layer must lie in [1, " + std::to_string(layers) + "]");
  }
  if (d.source != "composite") {
    require(!e.ood_environments.empty(), "/evaluation/ood_environments", "must not be empty");
    for (std::size_t i = 0; i < e.ood_environments.size(); ++i) {
      require(std::find(d.environments.begin(), d.environments.end(), e.ood_environments[i]) != d.environments.end(),
              "/evaluation/ood_environments/" + std::to_string(i), "must be one of dataset.environments");
    }
  }
  require(e.cka_batch >= 2, "/evaluation/cka_batch", "must be at least 2");
  for (std::size_t i = 1; i < e.mask_distances.size(); ++i) {
    require(e.mask_distances[i - 1] < e.mask_distances[i], "/evaluation/mask_distances", "must be strictly ascending");
  }
  for (std::size_t i = 0; i < e.imbalance_fractions.size(); ++i) {
    const double f = e.imbalance_fractions[i];
    require(f >= 0.0 && f <= 1.0, "/evaluation/imbalance_fractions/" + std::to_string(i), "must lie in [0, 1]");
  }
  if (m.kind == "vit") {
    const std::size_t patches = (m.image_size / m.patch_size) * (m.image_size / m.patch_size);
    require(e.top_n >= 1 && e.top_n <= patches, "/evaluation/top_n",
            "must lie in [1, " + std::to_string(patches) + "]");
  }
  require(e.finetune_epochs > 0, "/evaluation/finetune_epochs", "must be positive");

  require(!c.name.empty(), "/name", "must not be empty");
  for (char ch : c.name) {
    require(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.', "/name",
            "may only contain letters, digits, '-', '_' and '.'");
  }
  require(!c.output_dir.empty(), "/output_dir", "must not be empty");
  require(!c.seeds.empty(), "/seeds", "must not be empty");
}

json to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& m = c.model;
  const auto& o = c.optimizer;
  const auto& e = c.evaluation;
  json j;
  j["name"] = c.name;
  j["dataset"] = {{"source", d.source},
                  {"classes", d.classes},
                  {"environments", d.environments},
                  {"same_class", d.same_class},
                  {"r", d.r},
                  {"test_r", d.test_r},
                  {"train_per_class", d.train_per_class},
                  {"test_per_class", d.test_per_class},
                  {"seed", d.seed},
                  {"idx_train_images", d.idx_train_images},
                  {"idx_train_labels", d.idx_train_labels},
                  {"idx_test_images", d.idx_test_images},
                  {"idx_test_labels", d.idx_test_labels}};
  j["model"] = {{"kind", m.kind},           {"image_size", m.image_size}, {"patch_size", m.patch_size},
                {"embed_dim", m.embed_dim}, {"heads", m.heads},           {"depth", m.depth},
                {"mlp_ratio", m.mlp_ratio}, {"channels", m.channels},     {"representation", m.representation}};
  j["objective"] = {{"kind", c.objective.kind}, {"eta", c.objective.eta}};
  j["optimizer"] = {{"base_lr", o.base_lr},       {"momentum", o.momentum},     {"warmup_steps", o.warmup_steps},
                    {"epochs", o.epochs},         {"batch_size", o.batch_size}, {"clip_norm", o.clip_norm}};
  j["evaluation"] = {{"pair_policies", e.pair_policies},
                     {"ood_classes", e.ood_classes},
                     {"ood_count", e.ood_count},
                     {"ood_environments", e.ood_environments},
                     {"cka_layers", e.cka_layers},
                     {"cka_batch", e.cka_batch},
                     {"cka_policy", e.cka_policy},
                     {"mask_distances", e.mask_distances},
                     {"imbalance_fractions", e.imbalance_fractions},
                     {"rollout_images", e.rollout_images},
                     {"top_n", e.top_n},
                     {"finetune_epochs", e.finetune_epochs}};
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SchemaError("/", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader top(root, "");
  top.read("name", c.name);
  {
    auto r = top.child("dataset");
    auto& d = c.dataset;
    r.read("source", d.source);
    r.read("classes", d.classes);
    r.read("environments", d.environments);
    r.read("same_class", d.same_class);
    r.read("r", d.r);
    r.read("test_r", d.test_r);
    r.read("train_per_class", d.train_per_class);
    r.read("test_per_class", d.test_per_class);
    r.read("seed", d.seed);
    r.read("idx_train_images", d.idx_train_images);
    r.read("idx_train_labels", d.idx_train_labels);
    r.read("idx_test_images", d.idx_test_images);
    r.read("idx_test_labels", d.idx_test_labels);
    r.finish();
    if (d.source == "composite") {
      // Composite images are always 32 px; keep the model default in step.
      if (!root.contains("model") || !root["model"].contains("image_size")) c.model.image_size = kCompositeSize;
      if (!root["dataset"].contains("environments")) d.environments = {"water", "land"};
      if (!root["dataset"].contains("r")) d.r = 0.9;
      if (!root["dataset"].contains("test_r")) d.test_r = 0.5;
      if (!root["dataset"].contains("same_class")) d.same_class = {{0}, {1}};
      if (!root.contains("evaluation") || !root["evaluation"].contains("pair_policies")) {
        c.evaluation.pair_policies = {"swap"};
      }
      if (!root.contains("evaluation") || !root["evaluation"].contains("cka_policy")) c.evaluation.cka_policy = "swap";
      if (!root.contains("model") || !root["model"].contains("patch_size")) c.model.patch_size = 8;
    }
  }
  {
    auto r = top.child("model");
    auto& m = c.model;
    r.read("kind", m.kind);
    r.read("image_size", m.image_size);
    r.read("patch_size", m.patch_size);
    r.read("embed_dim", m.embed_dim);
    r.read("heads", m.heads);
    r.read("depth", m.depth);
    r.read("mlp_ratio", m.mlp_ratio);
    r.read("channels", m.channels);
    r.read("representation", m.representation);
    r.finish();
  }
  {
    auto r = top.child("objective");
    r.read("kind", c.objective.kind);
    r.read("eta", c.objective.eta);
    r.finish();
  }
  {
    auto r = top.child("optimizer");
    auto& o = c.optimizer;
    r.read("base_lr", o.base_lr);
    r.read("momentum", o.momentum);
    r.read("warmup_steps", o.warmup_steps);
    r.read("epochs", o.epochs);
    r.read("batch_size", o.batch_size);
    r.read("clip_norm", o.clip_norm);
    r.finish();
  }
  {
    auto r = top.child("evaluation");
    auto& e = c.evaluation;
    r.read("pair_policies", e.pair_policies);
    r.read("ood_classes", e.ood_classes);
    r.read("ood_count", e.ood_count);
    r.read("ood_environments", e.ood_environments);
    r.read("cka_layers", e.cka_layers);
    r.read("cka_batch", e.cka_batch);
    r.read("cka_policy", e.cka_policy);
    r.read("mask_distances", e.mask_distances);
    r.read("imbalance_fractions", e.imbalance_fractions);
    r.read("rollout_images", e.rollout_images);
    r.read("top_n", e.top_n);
    r.read("finetune_epochs", e.finetune_epochs);
    r.finish();
  }
  top.read("output_dir", c.output_dir);
  top.read("seeds", c.seeds);
  top.finish();
  validate(c);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse(ss.str());
  c.base_dir = path.parent_path();
  return c;
}

std::string ExperimentConfig::canonical_json() const { return to_json(*this).dump(); }

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json())));
  return buf;
}

std::variant<ViTConfig, CNNConfig> ExperimentConfig::model_config(std::uint64_t run_seed) const {
  const std::size_t n_classes = dataset.classes.size();
  const std::uint64_t seed = derive_seed(run_seed, "init");
  if (model.kind == "vit") {
    ViTConfig v{model.image_size, model.patch_size, model.embed_dim, model.heads,
                model.depth,      model.mlp_ratio,  n_classes,       seed};
    v.validate();
    return v;
  }
  CNNConfig cnn;
  cnn.image_size = model.image_size;
  for (std::size_t i = 0; i < 3 && i < model.channels.size(); ++i) cnn.channels[i] = model.channels[i];
  cnn.n_classes = n_classes;
  cnn.seed = seed;
  cnn.validate();
  return cnn;
}

TrainConfig ExperimentConfig::train_config(std::uint64_t run_seed, std::size_t epochs) const {
  TrainConfig t;
  t.model = model_config(run_seed);
  t.objective = objective.kind == "gdro" ? Objective::GDRO : Objective::ERM;
  t.gdro_eta = objective.eta;
  t.optimizer.base_lr = optimizer.base_lr;
  t.optimizer.momentum = optimizer.momentum;
  t.optimizer.warmup_steps = optimizer.warmup_steps;
  t.optimizer.clip_norm = optimizer.clip_norm;
  t.optimizer.batch_size = optimizer.batch_size;
  t.epochs = epochs;
  t.seed = derive_seed(run_seed, "train");
  return t;
}

RepresentationMode ExperimentConfig::representation() const {
  return model.representation == "mean_patch" ? RepresentationMode::MeanPatch : RepresentationMode::ClassToken;
}

std::string config_schema() {
  const json uint = {{"type", "integer"}, {"minimum", 0}};
  const json num = {{"type", "number"}};
  const json str = {{"type", "string"}};
  auto array_of = [](const json& item) { return json{{"type", "array"}, {"items", item}}; };
  auto object = [](json props) {
    return json{{"type", "object"}, {"additionalProperties", false}, {"properties", std::move(props)}};
  };
  json schema = object({
      {"name", {{"type", "string"}, {"pattern", "^[A-Za-z0-9._-]+$"}}},
      {"dataset", object({{"source", {{"enum", {"synth", "idx", "composite"}}}},
                          {"classes", array_of({{"type", "integer"}})},
                          {"environments", array_of(str)},
                          {"same_class", array_of(array_of({{"type", "integer"}}))},
                          {"r", {{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}},
                          {"test_r", {{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}},
                          {"train_per_class", uint},
                          {"test_per_class", uint},
                          {"seed", uint},
                          {"idx_train_images", str},
                          {"idx_train_labels", str},
                          {"idx_test_images", str},
                          {"idx_test_labels", str}})},
      {"model", object({{"kind", {{"enum", {"vit", "cnn"}}}},
                        {"image_size", uint},
                        {"patch_size", uint},
                        {"embed_dim", uint},
                        {"heads", uint},
                        {"depth", uint},
                        {"mlp_ratio", uint},
                        {"channels", {{"type", "array"}, {"items", uint}, {"minItems", 3}, {"maxItems", 3}}},
                        {"representation", {{"enum", {"class_token", "mean_patch"}}}}})},
      {"objective", object({{"kind", {{"enum", {"erm", "gdro"}}}}, {"eta", num}})},
      {"optimizer", object({{"base_lr", num},
                            {"momentum", num},
                            {"warmup_steps", uint},
                            {"epochs", uint},
                            {"batch_size", uint},
                            {"clip_norm", num}})},
      {"evaluation", object({{"pair_policies", array_of(str)},
                             {"ood_classes", array_of({{"type", "integer"}})},
                             {"ood_count", uint},
                             {"ood_environments", array_of(str)},
                             {"cka_layers", array_of(uint)},
                             {"cka_batch", uint},
                             {"cka_policy", str},
                             {"mask_distances", array_of(uint)},
                             {"imbalance_fractions", array_of(num)},
                             {"rollout_images", array_of(uint)},
                             {"top_n", uint},
                             {"finetune_epochs", uint}})},
      {"output_dir", str},
      {"seeds", {{"type", "array"}, {"items", uint}, {"minItems", 1}}},
  });
  schema["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  schema["title"] = "spurious-lab experiment config";
  return schema.dump(2) + "\n";
}

}  // namespace splab
