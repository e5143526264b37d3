#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "internal.hpp"
#include "splab/attention.hpp"
#include "splab/errors.hpp"
#include "splab/image_io.hpp"
#include "splab/rng.hpp"

namespace splab {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace detail {

std::string policy_file_stem(const std::string& policy) {
  std::string out = policy;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return out;
}

void write_trace_samples(const fs::path& path, const TrainingTrace& trace, const GroupedDataset& ds) {
  CsvWriter csv(path);
  csv.row({"epoch", "index", "y", "g", "loss", "pred"});
  for (std::size_t e = 0; e < trace.sample_losses.size(); ++e) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      csv.row({std::to_string(e + 1), std::to_string(i), std::to_string(ds.images[i].y),
               std::to_string(ds.images[i].g), format_exact(trace.sample_losses[e][i]),
               std::to_string(trace.sample_predictions[e][i])});
    }
  }
}

ordered_json group_accuracy_json(const GroupAccuracyReport& report) {
  ordered_json j;
  j["average"] = reported(report.average);
  j["worst_group"] = reported(report.worst);
  j["worst_group_id"] = report.worst_group;
  ordered_json per_group = ordered_json::object(), counts = ordered_json::object();
  for (const auto& [g, acc] : report.per_group) per_group[std::to_string(g)] = reported(acc);
  for (const auto& [g, n] : report.counts) counts[std::to_string(g)] = n;
  j["per_group"] = per_group;
  j["counts"] = counts;
  return j;
}

ordered_json consistency_json(const ConsistencyResult& c) {
  ordered_json j;
  j["consistency"] = reported(c.conditional);
  j["consistency_unconditional"] = reported(c.unconditional);
  j["correct"] = c.correct;
  j["consistent_correct"] = c.consistent_correct;
  j["total"] = c.total;
  j["degenerate"] = c.degenerate;
  return j;
}

}  // namespace detail

namespace {

using Clock = std::chrono::steady_clock;

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<RgbImage> pixels_of(const GroupedDataset& ds) {
  std::vector<RgbImage> out;
  out.reserve(ds.size());
  for (const auto& img : ds.images) out.push_back(img.pixels);
  return out;
}

std::vector<int> predict(const Model& model, std::span<const RgbImage> images) {
  return argmax_rows(evaluate_logits(model, images, configured_threads()));
}

struct PairSet {
  std::vector<ConsistencyPair> pairs;
  std::vector<RgbImage> x, x_bar;
  std::vector<int> labels;
};

PairSet make_pairs(const ExperimentConfig& c, const std::string& policy, const GroupedDataset& ds,
                   const std::string& purpose) {
  const std::uint64_t seed = derive_seed(c.dataset.seed, purpose + "/" + policy);
  PairSet ps;
  ps.pairs = policy == "swap" ? make_background_swap_pairs(ds, seed)
                              : make_consistency_pairs(ds, PairPolicy::parse(policy), seed);
  for (const auto& p : ps.pairs) {
    ps.x.push_back(p.x);
    ps.x_bar.push_back(p.x_bar);
    ps.labels.push_back(p.y);
  }
  return ps;
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

// Merges one subcommand's artifacts into the run manifest.
void record(const fs::path& dir, const ExperimentConfig& c, std::size_t seed_index, const std::string& command,
            std::vector<std::string> files, Clock::time_point start) {
  const fs::path path = dir / detail::kManifestFile;
  json m = json::object();
  if (fs::exists(path)) {
    try {
      m = json::parse(read_text(path));
    } catch (const json::exception&) {
      m = json::object();
    }
    if (!m.is_object() || m.value("config_hash", "") != c.hash()) m = json::object();
  }
  std::sort(files.begin(), files.end());
  m["config_hash"] = c.hash();
  m["seed"] = c.seeds[seed_index];
  m["seed_index"] = seed_index;
  m["tool_version"] = kToolVersion;
  m["artifacts"][command] = files;
  m["wall_clock_seconds"][command] = std::chrono::duration<double>(Clock::now() - start).count();
  write_text(path, m.dump(2) + "\n");
}

GroupedDataset subset(const GroupedDataset& ds, const std::vector<std::size_t>& idx) {
  GroupedDataset out;
  out.class_set = ds.class_set;
  out.environment_set = ds.environment_set;
  for (std::size_t i : idx) out.images.push_back(ds.images[i]);
  out.recount();
  return out;
}

void write_prediction_rows(CsvWriter& csv, const std::string& key, const std::string& set,
                           std::span<const int> preds, std::span<const int> labels, std::span<const int> groups) {
  for (std::size_t i = 0; i < preds.size(); ++i) {
    csv.row({key, set, std::to_string(i), std::to_string(labels[i]), std::to_string(groups[i]),
             std::to_string(preds[i])});
  }
}

std::vector<int> labels_of(const GroupedDataset& ds) {
  std::vector<int> out;
  for (const auto& img : ds.images) out.push_back(img.y);
  return out;
}

std::vector<int> groups_of(const GroupedDataset& ds) {
  std::vector<int> out;
  for (const auto& img : ds.images) out.push_back(img.g);
  return out;
}

std::vector<int> pair_groups(const PairSet& ps) {
  std::vector<int> out;
  for (const auto& p : ps.pairs) out.push_back(p.g);
  return out;
}

}  // namespace

Experiment::Experiment(ExperimentConfig config, RunOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  if (options_.seed_index && *options_.seed_index >= config_.seeds.size()) {
    throw RangeError("seed index " + std::to_string(*options_.seed_index) + " out of range: config lists " +
                     std::to_string(config_.seeds.size()) + " seeds");
  }
}

Experiment::~Experiment() = default;
Experiment::Experiment(Experiment&&) noexcept = default;
Experiment& Experiment::operator=(Experiment&&) noexcept = default;

fs::path Experiment::root_dir() const {
  const fs::path out = options_.out ? *options_.out : fs::path(config_.output_dir);
  return out / (config_.name + "-" + config_.hash());
}

fs::path Experiment::run_dir(std::size_t seed_index) const {
  return root_dir() / ("seed-" + std::to_string(config_.seeds.at(seed_index)));
}

std::vector<std::size_t> Experiment::selected_seeds() const {
  if (options_.seed_index) return {*options_.seed_index};
  std::vector<std::size_t> all(config_.seeds.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

const std::vector<std::string>& Experiment::subcommands() {
  static const std::vector<std::string> names{"synth",      "train",           "eval",           "cka",
                                              "ood",        "rollout",         "mask-sweep",     "imbalance-sweep",
                                              "finetune-trace", "verify"};
  return names;
}

void Experiment::run(std::string_view subcommand) {
  fs::create_directories(root_dir());
  write_text(root_dir() / detail::kConfigFile, config_.canonical_json() + "\n");
  if (subcommand == "synth") return synth();
  if (subcommand == "train") return train();
  if (subcommand == "eval") return eval();
  if (subcommand == "cka") return cka();
  if (subcommand == "ood") return ood();
  if (subcommand == "rollout") return rollout();
  if (subcommand == "mask-sweep") return mask_sweep();
  if (subcommand == "imbalance-sweep") return imbalance_sweep();
  if (subcommand == "finetune-trace") return finetune_trace();
  if (subcommand == "verify") {
    const VerifyReport report = verify();
    if (!report.ok()) {
      std::string msg = std::to_string(report.mismatches.size()) + " mismatch(es):";
      for (const auto& m : report.mismatches) msg += "\n  " + m;
      throw VerificationError(msg);
    }
    return;
  }
  throw ConfigError("unknown subcommand '" + std::string(subcommand) + "'");
}

const PreparedData& Experiment::data() {
  if (data_) return *data_;
  const auto& d = config_.dataset;
  auto prepared = std::make_unique<PreparedData>();
  if (d.source == "composite") {
    prepared->train = build_composite(d.train_per_class, d.r, derive_seed(d.seed, "train"));
    prepared->test = build_composite(d.test_per_class, d.test_r, derive_seed(d.seed, "test"));
  } else {
    GraySet train_gray, test_gray;
    if (d.source == "synth") {
      train_gray = synth_glyphs(derive_seed(d.seed, "train-glyphs"), d.train_per_class, d.classes);
      test_gray = synth_glyphs(derive_seed(d.seed, "test-glyphs"), d.test_per_class, d.classes);
    } else {
      const auto base = config_.base_dir;
      train_gray = take_per_class(load_idx(resolve(base, d.idx_train_images), resolve(base, d.idx_train_labels)),
                                  d.classes, d.train_per_class);
      test_gray = take_per_class(load_idx(resolve(base, d.idx_test_images), resolve(base, d.idx_test_labels)),
                                 d.classes, d.test_per_class);
    }
    CorrelationConfig train_cc{d.classes, d.environments, d.same_class, d.r};
    CorrelationConfig test_cc{d.classes, d.environments, d.same_class, d.test_r};
    prepared->train = build_cmnist(train_gray, train_cc, derive_seed(d.seed, "train-env"));
    prepared->test = build_cmnist(test_gray, test_cc, derive_seed(d.seed, "test-env"));
    for (const auto& e : d.environments) prepared->env_colors.push_back(colors::by_name(e));
  }
  data_ = std::move(prepared);
  return *data_;
}

Model Experiment::load_model(std::size_t seed_index) const {
  const fs::path path = options_.checkpoint ? *options_.checkpoint : run_dir(seed_index) / detail::kCheckpointFile;
  if (!fs::exists(path)) throw FileError("missing checkpoint " + path.string() + " (run train first)");
  Checkpoint ck = load_checkpoint(path);
  if (ck.model.kind_name() != config_.model.kind || ck.model.image_size() != config_.model.image_size ||
      ck.model.n_classes() != config_.dataset.classes.size()) {
    throw ConfigError("checkpoint " + path.string() + " does not match the configured model");
  }
  return std::move(ck.model);
}

void Experiment::synth() {
  const auto start = Clock::now();
  const auto& d = data();
  const fs::path dir = root_dir() / "dataset";
  export_dataset(d.train, dir / "train");
  export_dataset(d.test, dir / "test");
  ordered_json j;
  j["config_hash"] = config_.hash();
  j["source"] = config_.dataset.source;
  j["classes"] = d.train.class_set;
  j["environments"] = d.train.environment_set;
  for (const auto& [name, ds] : {std::pair<std::string, const GroupedDataset*>{"train", &d.train}, {"test", &d.test}}) {
    ordered_json counts = ordered_json::object();
    for (const auto& [g, n] : ds->group_counts) counts[std::to_string(g)] = n;
    j[name] = {{"size", ds->size()}, {"group_counts", counts}, {"manifest", name + "/manifest.csv"}};
  }
  write_json(dir / "synth.json", j);
  json m;
  m["config_hash"] = config_.hash();
  m["tool_version"] = kToolVersion;
  m["artifacts"]["synth"] = {"synth.json", "test/manifest.csv", "train/manifest.csv"};
  m["wall_clock_seconds"]["synth"] = std::chrono::duration<double>(Clock::now() - start).count();
  write_text(dir / detail::kManifestFile, m.dump(2) + "\n");
}

void Experiment::train() {
  const auto& d = data();
  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    TrainConfig tc = config_.train_config(config_.seeds[k], config_.optimizer.epochs);
    tc.record_samples = true;
    const TrainResult result = splab::train(d.train, tc);
    save_checkpoint(dir / detail::kCheckpointFile, result.model,
                    {{"config_hash", config_.hash()}, {"seed", std::to_string(config_.seeds[k])}});
    result.trace.write_csv(dir / "trace.csv");
    detail::write_trace_samples(dir / "trace_samples.csv", result.trace, d.train);
    record(dir, config_, k, "train", {detail::kCheckpointFile, "trace.csv", "trace_samples.csv"}, start);
  }
}

void Experiment::eval() {
  const auto& d = data();
  const auto test_images = pixels_of(d.test);
  const auto labels = labels_of(d.test);
  const auto groups = groups_of(d.test);
  std::vector<PairSet> pair_sets;
  for (const auto& policy : config_.evaluation.pair_policies) pair_sets.push_back(make_pairs(config_, policy, d.test, "eval-pairs"));

  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    const Model model = load_model(k);
    std::vector<std::string> files{"metrics.json", "predictions_test.csv", "summary.csv"};

    const auto preds = predict(model, test_images);
    {
      CsvWriter csv(dir / "predictions_test.csv");
      csv.row({"index", "y", "e", "g", "pred"});
      for (std::size_t i = 0; i < preds.size(); ++i) {
        csv.row({std::to_string(i), std::to_string(d.test.images[i].y), std::to_string(d.test.images[i].e),
                 std::to_string(groups[i]), std::to_string(preds[i])});
      }
    }
    const auto acc = group_accuracies(preds, labels, groups);

    ordered_json j;
    j["config_hash"] = config_.hash();
    j["seed"] = config_.seeds[k];
    j["model"] = config_.model.kind;
    j["objective"] = config_.objective.kind;
    j["accuracy"] = detail::group_accuracy_json(acc);
    j["accuracy"]["dump"] = "predictions_test.csv";
    j["consistency"] = ordered_json::object();

    CsvWriter summary(dir / "summary.csv");
    summary.row({"config_hash", "seed", "model", "objective", "r", "average_acc", "worst_group_acc", "policy",
                 "consistency", "consistency_unconditional"});
    for (std::size_t p = 0; p < pair_sets.size(); ++p) {
      const auto& policy = config_.evaluation.pair_policies[p];
      const auto& ps = pair_sets[p];
      const auto px = predict(model, ps.x);
      const auto pxb = predict(model, ps.x_bar);
      const auto c = consistency_from_predictions(px, pxb, ps.labels);
      const std::string file = "pairs_" + detail::policy_file_stem(policy) + ".csv";
      CsvWriter csv(dir / file);
      csv.row({"index", "y", "g", "fg", "bg", "pred_x", "pred_x_bar"});
      for (std::size_t i = 0; i < px.size(); ++i) {
        csv.row({std::to_string(i), std::to_string(ps.labels[i]), std::to_string(ps.pairs[i].g), ps.pairs[i].fg,
                 ps.pairs[i].bg, std::to_string(px[i]), std::to_string(pxb[i])});
      }
      files.push_back(file);
      auto cj = detail::consistency_json(c);
      cj["dump"] = file;
      j["consistency"][policy] = cj;
      summary.row({config_.hash(), std::to_string(config_.seeds[k]), config_.model.kind, config_.objective.kind,
                   format_number(config_.dataset.r), format_number(acc.average), format_number(acc.worst), policy,
                   format_number(c.conditional), format_number(c.unconditional)});
    }
    write_json(dir / "metrics.json", j);
    record(dir, config_, k, "eval", files, start);
  }
}

void Experiment::cka() {
  const auto& d = data();
  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    const Model model = load_model(k);

    std::vector<std::size_t> idx(d.train.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(config_.seeds[k], "cka-batch"));
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(std::min(config_.evaluation.cka_batch, idx.size()));
    std::sort(idx.begin(), idx.end());
    const GroupedDataset batch = subset(d.train, idx);
    const PairSet ps = make_pairs(config_, config_.evaluation.cka_policy, batch, "cka-pairs");

    std::vector<std::size_t> layers = config_.evaluation.cka_layers;
    if (layers.empty())
      for (std::size_t l = 1; l <= model.num_layers(); ++l) layers.push_back(l);

    std::vector<std::string> files{"cka.csv", "cka_batch.csv"};
    {
      CsvWriter csv(dir / "cka_batch.csv");
      csv.row({"row", "train_index", "y", "g"});
      for (std::size_t i = 0; i < idx.size(); ++i) {
        csv.row({std::to_string(i), std::to_string(idx[i]), std::to_string(batch.images[i].y),
                 std::to_string(batch.images[i].g)});
      }
    }
    CsvWriter table(dir / "cka.csv");
    table.row({"layer", "score", "batch_size", "representation", "policy"});
    for (std::size_t layer : layers) {
      const Tensor ra = model.layer_representation(ps.x, layer, config_.representation());
      const Tensor rb = model.layer_representation(ps.x_bar, layer, config_.representation());
      const double score = linear_cka(ra, rb);
      for (const auto& [side, rep] : {std::pair<std::string, const Tensor*>{"a", &ra}, {"b", &rb}}) {
        const std::string file = "cka_l" + std::to_string(layer) + "_" + side + ".csv";
        CsvWriter csv(dir / file);
        std::vector<std::string> header;
        for (std::size_t f = 0; f < rep->dim(1); ++f) header.push_back("f" + std::to_string(f));
        csv.row(header);
        for (std::size_t i = 0; i < rep->dim(0); ++i) {
          std::vector<std::string> row;
          for (std::size_t f = 0; f < rep->dim(1); ++f) row.push_back(format_exact(rep->at(i * rep->dim(1) + f)));
          csv.row(row);
        }
        files.push_back(file);
      }
      table.row({std::to_string(layer), format_number(score), std::to_string(idx.size()), config_.model.representation,
                 config_.evaluation.cka_policy});
    }
    record(dir, config_, k, "cka", files, start);
  }
}

void Experiment::ood() {
  if (config_.dataset.source == "composite") throw ConfigError("ood needs a glyph source (synth or idx)");
  const auto& d = data();
  const auto& ds = config_.dataset;
  const auto& ev = config_.evaluation;
  GraySet ood_source;
  if (ds.source == "synth") {
    const std::size_t per_class = (ev.ood_count + ev.ood_classes.size() - 1) / std::max<std::size_t>(1, ev.ood_classes.size());
    ood_source = synth_glyphs(derive_seed(ds.seed, "ood-glyphs"), per_class, ev.ood_classes);
  } else {
    ood_source = load_idx(resolve(config_.base_dir, ds.idx_test_images), resolve(config_.base_dir, ds.idx_test_labels));
  }
  std::vector<ColorSpec> ood_colors;
  for (const auto& name : ev.ood_environments) ood_colors.push_back(colors::by_name(name));
  const auto ood_images =
      build_spurious_ood(ood_source, ev.ood_classes, ds.classes, ood_colors, derive_seed(ds.seed, "ood"), ev.ood_count);
  if (ood_images.empty()) throw ConfigError("ood_count must be positive");
  std::vector<RgbImage> ood_pixels;
  for (const auto& img : ood_images) ood_pixels.push_back(img.pixels);
  const auto id_pixels = pixels_of(d.test);

  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    const Model model = load_model(k);
    const auto id_scores = id_scores_from_logits(evaluate_logits(model, id_pixels, configured_threads()));
    const auto ood_scores = id_scores_from_logits(evaluate_logits(model, ood_pixels, configured_threads()));
    {
      CsvWriter csv(dir / "ood_scores.csv");
      csv.row({"set", "index", "label", "score"});
      for (std::size_t i = 0; i < id_scores.size(); ++i)
        csv.row({"id", std::to_string(i), std::to_string(d.test.images[i].y), format_exact(id_scores[i])});
      for (std::size_t i = 0; i < ood_scores.size(); ++i)
        csv.row({"ood", std::to_string(i), std::to_string(ood_images[i].y), format_exact(ood_scores[i])});
    }
    const OODReport r = ood_report(id_scores, ood_scores);
    ordered_json j;
    j["config_hash"] = config_.hash();
    j["seed"] = config_.seeds[k];
    j["auroc"] = detail::reported(r.auroc);
    j["fpr95"] = detail::reported(r.fpr95);
    j["convention"] = r.convention;
    j["score"] = r.score;
    j["n_id"] = id_scores.size();
    j["n_ood"] = ood_scores.size();
    j["ood_classes"] = ev.ood_classes;
    j["ood_environments"] = ev.ood_environments;
    j["dump"] = "ood_scores.csv";
    write_json(dir / "ood.json", j);
    record(dir, config_, k, "ood", {"ood.json", "ood_scores.csv"}, start);
  }
}

void Experiment::rollout() {
  if (config_.model.kind != "vit") throw ConfigError("rollout needs a vit model");
  const auto& d = data();
  const auto ids = options_.images ? *options_.images : config_.evaluation.rollout_images;
  for (std::size_t id : ids) {
    if (id >= d.test.size()) {
      throw RangeError("rollout image " + std::to_string(id) + " out of range: test set has " +
                       std::to_string(d.test.size()) + " images");
    }
  }
  const std::size_t grid = config_.model.image_size / config_.model.patch_size;
  const std::size_t patch = config_.model.patch_size;
  const std::size_t zoom = 8;
  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k) / "rollout";
    fs::create_directories(dir);
    const Model model = load_model(k);
    std::vector<std::string> files{"rollout/overlays.csv"};
    CsvWriter overlays(dir / "overlays.csv");
    overlays.row({"image", "top_n", "patch_row", "patch_col"});
    for (std::size_t id : ids) {
      const RgbImage& img = d.test.images[id].pixels;
      const auto out = vit_forward(model.vit(), std::span<const RgbImage>(&img, 1), nullptr, true);
      const RolloutMatrix r = attention_rollout(out.attention.at(0));
      const PatchOverlay overlay = top_n_attended(r, grid, config_.evaluation.top_n);
      const auto heat = class_token_heatmap(r, grid);
      const std::string stem = "image_" + std::to_string(id);
      {
        CsvWriter csv(dir / (stem + "_rollout.csv"));
        std::vector<std::string> header;
        for (std::size_t t = 0; t < r.tokens; ++t) header.push_back("t" + std::to_string(t));
        csv.row(header);
        for (std::size_t i = 0; i < r.tokens; ++i) {
          std::vector<std::string> row;
          for (std::size_t t = 0; t < r.tokens; ++t) row.push_back(format_exact(r.at(i, t)));
          csv.row(row);
        }
      }
      for (const auto& [pr, pc] : overlay.patches) {
        overlays.row({std::to_string(id), std::to_string(overlay.n), std::to_string(pr), std::to_string(pc)});
      }
      write_ppm(dir / (stem + ".ppm"), upscale(img, zoom));
      write_ppm(dir / (stem + "_overlay.ppm"), upscale(render_overlay(img, overlay, patch), zoom));
      write_ppm(dir / (stem + "_heatmap.ppm"), upscale(render_heatmap(heat, grid, patch), zoom));
      for (const char* suffix : {"_rollout.csv", ".ppm", "_overlay.ppm", "_heatmap.ppm"}) {
        files.push_back("rollout/" + stem + suffix);
      }
    }
    record(run_dir(k), config_, k, "rollout", files, start);
  }
}

void Experiment::mask_sweep() {
  if (config_.model.kind != "vit") throw ConfigError("mask-sweep needs a vit model");
  const auto& d = data();
  const std::string& policy = config_.evaluation.pair_policies.front();
  const PairSet ps = make_pairs(config_, policy, d.test, "eval-pairs");
  const auto labels = labels_of(d.test);
  const auto groups = groups_of(d.test);
  const auto pgroups = pair_groups(ps);
  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    const Model model = load_model(k);
    const auto rows = splab::mask_sweep(model, d.test, ps.pairs, config_.evaluation.mask_distances);
    CsvWriter table(dir / "mask_sweep.csv");
    table.row({"distance", "average_acc", "worst_group_acc", "consistency", "consistency_unconditional", "policy"});
    CsvWriter dump(dir / "mask_predictions.csv");
    dump.row({"distance", "set", "index", "y", "g", "pred"});
    for (const auto& row : rows) {
      const std::string key = row.distance ? std::to_string(*row.distance) : "none";
      table.row({key, format_number(row.average_accuracy), format_number(row.worst_group_accuracy),
                 format_number(row.consistency.conditional), format_number(row.consistency.unconditional), policy});
      write_prediction_rows(dump, key, "eval", row.eval_predictions, labels, groups);
      write_prediction_rows(dump, key, "x", row.pair_x_predictions, ps.labels, pgroups);
      write_prediction_rows(dump, key, "x_bar", row.pair_x_bar_predictions, ps.labels, pgroups);
    }
    record(dir, config_, k, "mask-sweep", {"mask_sweep.csv", "mask_predictions.csv"}, start);
  }
}

void Experiment::imbalance_sweep() {
  const auto& d = data();
  const std::string& policy = config_.evaluation.pair_policies.front();
  const PairSet ps = make_pairs(config_, policy, d.test, "eval-pairs");
  const auto test_images = pixels_of(d.test);
  const auto labels = labels_of(d.test);
  const auto groups = groups_of(d.test);
  const auto pgroups = pair_groups(ps);
  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    CsvWriter table(dir / "imbalance.csv");
    table.row({"fraction", "minority_group", "minority_count", "train_size", "average_acc", "worst_group_acc",
               "consistency", "consistency_unconditional", "policy"});
    CsvWriter dump(dir / "imbalance_predictions.csv");
    dump.row({"fraction", "set", "index", "y", "g", "pred"});
    for (double fraction : config_.evaluation.imbalance_fractions) {
      const int minority = d.train.smallest_group();
      const GroupedDataset reduced = remove_minority(d.train, fraction, derive_seed(config_.dataset.seed, "imbalance"));
      const TrainResult result = splab::train(reduced, config_.train_config(config_.seeds[k], config_.optimizer.epochs));
      const auto preds = predict(result.model, test_images);
      const auto px = predict(result.model, ps.x);
      const auto pxb = predict(result.model, ps.x_bar);
      const auto acc = group_accuracies(preds, labels, groups);
      const auto c = consistency_from_predictions(px, pxb, ps.labels);
      const std::string key = format_number(fraction);
      table.row({key, std::to_string(minority), std::to_string(reduced.group_counts.at(minority)),
                 std::to_string(reduced.size()), format_number(acc.average), format_number(acc.worst),
                 format_number(c.conditional), format_number(c.unconditional), policy});
      write_prediction_rows(dump, key, "eval", preds, labels, groups);
      write_prediction_rows(dump, key, "x", px, ps.labels, pgroups);
      write_prediction_rows(dump, key, "x_bar", pxb, ps.labels, pgroups);
    }
    record(dir, config_, k, "imbalance-sweep", {"imbalance.csv", "imbalance_predictions.csv"}, start);
  }
}

void Experiment::finetune_trace() {
  const auto& d = data();
  for (std::size_t k : selected_seeds()) {
    const auto start = Clock::now();
    const fs::path dir = run_dir(k);
    fs::create_directories(dir);
    TrainConfig tc = config_.train_config(config_.seeds[k], config_.evaluation.finetune_epochs);
    tc.record_samples = true;
    const TrainResult result = splab::train(d.train, tc);
    result.trace.write_csv(dir / "finetune_trace.csv");
    detail::write_trace_samples(dir / "finetune_samples.csv", result.trace, d.train);
    record(dir, config_, k, "finetune-trace", {"finetune_trace.csv", "finetune_samples.csv"}, start);
  }
}

}  // namespace splab
