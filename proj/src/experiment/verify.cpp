#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "internal.hpp"
#include "splab/attention.hpp"
#include "splab/errors.hpp"

namespace splab {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Checker {
 public:
  explicit Checker(VerifyReport& report) : report_(report) {}

  void same(const std::string& what, const std::string& reported, const std::string& recomputed) {
    ++report_.checked;
    if (reported != recomputed) {
      report_.mismatches.push_back(what + ": reported " + reported + ", recomputed " + recomputed);
    }
  }
  void same(const std::string& what, double reported, double recomputed) {
    same(what, format_exact(reported), format_exact(detail::reported(recomputed)));
  }
  void fail(const std::string& what) { report_.mismatches.push_back(what); }

 private:
  VerifyReport& report_;
};

int to_int(const std::string& s) { return static_cast<int>(parse_number(s)); }

struct PredictionDump {
  std::vector<int> preds, labels, groups;
};

// Rows keyed by (first column, set): distance or fraction, then eval/x/x_bar.
std::map<std::pair<std::string, std::string>, PredictionDump> read_prediction_dump(const fs::path& path,
                                                                                   const std::string& key_column) {
  const CsvTable t = read_csv(path);
  const auto ck = t.column(key_column), cs = t.column("set"), cy = t.column("y"), cg = t.column("g"),
             cp = t.column("pred");
  std::map<std::pair<std::string, std::string>, PredictionDump> out;
  for (const auto& row : t.rows) {
    auto& d = out[{row[ck], row[cs]}];
    d.preds.push_back(to_int(row[cp]));
    d.labels.push_back(to_int(row[cy]));
    d.groups.push_back(to_int(row[cg]));
  }
  return out;
}

void verify_trace(Checker& check, const fs::path& dir, const std::string& trace_file, const std::string& samples_file,
                  const ExperimentConfig& config, std::size_t epochs) {
  const CsvTable trace = read_csv(dir / trace_file);
  const CsvTable samples = read_csv(dir / samples_file);
  const auto ce = samples.column("epoch"), cg = samples.column("g"), cy = samples.column("y"),
             cl = samples.column("loss"), cp = samples.column("pred");
  std::map<std::size_t, std::vector<const std::vector<std::string>*>> by_epoch;
  for (const auto& row : samples.rows) by_epoch[static_cast<std::size_t>(parse_number(row[ce]))].push_back(&row);
  if (trace.rows.size() != epochs || by_epoch.size() != epochs) {
    check.fail(trace_file + ": expected " + std::to_string(epochs) + " epochs, found " +
               std::to_string(trace.rows.size()) + " trace rows and " + std::to_string(by_epoch.size()) +
               " sample epochs");
    return;
  }
  // Minority group: smallest non-empty training group, ties to the lower id.
  std::map<int, std::size_t> counts;
  for (const auto* row : by_epoch.begin()->second) ++counts[to_int((*row)[cg])];
  int minority = -1;
  for (const auto& [g, n] : counts)
    if (minority < 0 || n < counts[minority]) minority = g;

  const std::size_t n = by_epoch.begin()->second.size();
  OptimizerConfig opt;
  opt.base_lr = config.optimizer.base_lr;
  opt.momentum = config.optimizer.momentum;
  opt.warmup_steps = config.optimizer.warmup_steps;
  opt.batch_size = config.optimizer.batch_size;
  opt.clip_norm = config.optimizer.clip_norm;
  const std::size_t steps_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  opt.total_steps = steps_per_epoch * epochs;

  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto& rows = by_epoch[e];
    std::size_t correct = 0, m_correct = 0, m_count = 0;
    double loss_total = 0.0, m_loss = 0.0;
    for (const auto* row : rows) {
      const double loss = parse_number((*row)[cl]);
      const bool ok = to_int((*row)[cp]) == to_int((*row)[cy]);
      correct += ok;
      loss_total += loss;
      if (to_int((*row)[cg]) == minority) {
        ++m_count;
        m_correct += ok;
        m_loss += loss;
      }
    }
    const auto& t = trace.rows[e - 1];
    const std::string where = trace_file + " epoch " + std::to_string(e);
    const double nn = static_cast<double>(rows.size());
    check.same(where + " epoch", t[trace.column("epoch")], std::to_string(e));
    check.same(where + " avg_loss", t[trace.column("avg_loss")], format_number(loss_total / nn));
    check.same(where + " avg_acc", t[trace.column("avg_acc")], format_number(static_cast<double>(correct) / nn));
    check.same(where + " minority_loss", t[trace.column("minority_loss")],
               format_number(m_count ? m_loss / static_cast<double>(m_count) : 0.0));
    check.same(where + " minority_acc", t[trace.column("minority_acc")],
               format_number(m_count ? static_cast<double>(m_correct) / static_cast<double>(m_count) : 0.0));
    check.same(where + " lr", t[trace.column("lr")], format_number(lr_at(e * steps_per_epoch, opt)));
  }
}

void verify_eval(Checker& check, const fs::path& dir) {
  const json m = json::parse(read_text(dir / "metrics.json"));
  const CsvTable preds = read_csv(dir / m["accuracy"]["dump"].get<std::string>());
  std::vector<int> p, y, g;
  for (const auto& row : preds.rows) {
    p.push_back(to_int(row[preds.column("pred")]));
    y.push_back(to_int(row[preds.column("y")]));
    g.push_back(to_int(row[preds.column("g")]));
  }
  const auto acc = group_accuracies(p, y, g);
  const auto& ja = m["accuracy"];
  check.same("metrics.json accuracy.average", ja["average"].get<double>(), acc.average);
  check.same("metrics.json accuracy.worst_group", ja["worst_group"].get<double>(), acc.worst);
  check.same("metrics.json accuracy.worst_group_id", std::to_string(ja["worst_group_id"].get<int>()),
             std::to_string(acc.worst_group));
  for (const auto& [gid, a] : acc.per_group) {
    const std::string key = std::to_string(gid);
    if (!ja["per_group"].contains(key)) {
      check.fail("metrics.json accuracy.per_group lacks group " + key);
      continue;
    }
    check.same("metrics.json accuracy.per_group." + key, ja["per_group"][key].get<double>(), a);
    check.same("metrics.json accuracy.counts." + key, std::to_string(ja["counts"][key].get<std::size_t>()),
               std::to_string(acc.counts.at(gid)));
  }
  if (ja["per_group"].size() != acc.per_group.size()) check.fail("metrics.json accuracy.per_group has extra groups");

  std::map<std::string, ConsistencyResult> by_policy;
  for (const auto& [policy, jc] : m["consistency"].items()) {
    const CsvTable t = read_csv(dir / jc["dump"].get<std::string>());
    std::vector<int> px, pxb, labels;
    for (const auto& row : t.rows) {
      px.push_back(to_int(row[t.column("pred_x")]));
      pxb.push_back(to_int(row[t.column("pred_x_bar")]));
      labels.push_back(to_int(row[t.column("y")]));
    }
    const auto c = consistency_from_predictions(px, pxb, labels);
    by_policy[policy] = c;
    const std::string where = "metrics.json consistency." + policy;
    check.same(where + ".consistency", jc["consistency"].get<double>(), c.conditional);
    check.same(where + ".consistency_unconditional", jc["consistency_unconditional"].get<double>(), c.unconditional);
    check.same(where + ".correct", std::to_string(jc["correct"].get<std::size_t>()), std::to_string(c.correct));
    check.same(where + ".consistent_correct", std::to_string(jc["consistent_correct"].get<std::size_t>()),
               std::to_string(c.consistent_correct));
    check.same(where + ".total", std::to_string(jc["total"].get<std::size_t>()), std::to_string(c.total));
    check.same(where + ".degenerate", jc["degenerate"].get<bool>() ? "true" : "false",
               c.degenerate ? "true" : "false");
  }

  const CsvTable s = read_csv(dir / "summary.csv");
  for (const auto& row : s.rows) {
    const std::string policy = row[s.column("policy")];
    check.same("summary.csv average_acc", row[s.column("average_acc")], format_number(acc.average));
    check.same("summary.csv worst_group_acc", row[s.column("worst_group_acc")], format_number(acc.worst));
    if (!by_policy.count(policy)) {
      check.fail("summary.csv policy " + policy + " missing from metrics.json");
      continue;
    }
    check.same("summary.csv consistency " + policy, row[s.column("consistency")],
               format_number(by_policy[policy].conditional));
    check.same("summary.csv consistency_unconditional " + policy, row[s.column("consistency_unconditional")],
               format_number(by_policy[policy].unconditional));
  }
}

Tensor read_matrix(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<double> values;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw FormatError(path.string() + ": ragged row");
    for (const auto& v : row) values.push_back(parse_number(v));
  }
  return Tensor({t.rows.size(), t.header.size()}, std::move(values));
}

void verify_cka(Checker& check, const fs::path& dir) {
  const CsvTable t = read_csv(dir / "cka.csv");
  for (const auto& row : t.rows) {
    const std::string layer = row[t.column("layer")];
    const Tensor a = read_matrix(dir / ("cka_l" + layer + "_a.csv"));
    const Tensor b = read_matrix(dir / ("cka_l" + layer + "_b.csv"));
    check.same("cka.csv layer " + layer, row[t.column("score")], format_number(linear_cka(a, b)));
  }
}

void verify_ood(Checker& check, const fs::path& dir) {
  const json m = json::parse(read_text(dir / "ood.json"));
  const CsvTable t = read_csv(dir / m["dump"].get<std::string>());
  std::vector<double> id, ood;
  for (const auto& row : t.rows) {
    (row[t.column("set")] == "id" ? id : ood).push_back(parse_number(row[t.column("score")]));
  }
  const OODReport r = ood_report(id, ood);
  check.same("ood.json auroc", m["auroc"].get<double>(), r.auroc);
  check.same("ood.json fpr95", m["fpr95"].get<double>(), r.fpr95);
  check.same("ood.json n_id", std::to_string(m["n_id"].get<std::size_t>()), std::to_string(id.size()));
  check.same("ood.json n_ood", std::to_string(m["n_ood"].get<std::size_t>()), std::to_string(ood.size()));
}

void verify_rollout(Checker& check, const fs::path& run, const std::vector<std::string>& files,
                    const ExperimentConfig& config) {
  const CsvTable t = read_csv(run / "rollout" / "overlays.csv");
  std::map<std::string, std::set<std::pair<std::size_t, std::size_t>>> reported;
  std::size_t top_n = config.evaluation.top_n;
  for (const auto& row : t.rows) {
    reported[row[t.column("image")]].insert({static_cast<std::size_t>(parse_number(row[t.column("patch_row")])),
                                             static_cast<std::size_t>(parse_number(row[t.column("patch_col")]))});
    top_n = static_cast<std::size_t>(parse_number(row[t.column("top_n")]));
  }
  const std::size_t grid = config.model.image_size / config.model.patch_size;
  const std::string suffix = "_rollout.csv";
  for (const auto& f : files) {
    if (f.size() < suffix.size() || f.compare(f.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    const std::string id = f.substr(std::string("rollout/image_").size(),
                                    f.size() - suffix.size() - std::string("rollout/image_").size());
    const Tensor m = read_matrix(run / f);
    RolloutMatrix r{m.dim(0), std::vector<double>(m.data().begin(), m.data().end())};
    for (std::size_t i = 0; i < r.tokens; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < r.tokens; ++j) s += r.at(i, j);
      if (std::abs(s - 1.0) > 1e-9) check.fail(f + ": row " + std::to_string(i) + " sums to " + format_exact(s));
    }
    const PatchOverlay overlay = top_n_attended(r, grid, top_n);
    std::string want, got;
    for (const auto& [pr, pc] : overlay.patches) want += "(" + std::to_string(pr) + "," + std::to_string(pc) + ")";
    for (const auto& [pr, pc] : reported[id]) got += "(" + std::to_string(pr) + "," + std::to_string(pc) + ")";
    check.same("overlays.csv image " + id, got, want);
  }
}

void verify_sweep(Checker& check, const fs::path& dir, const std::string& table_file, const std::string& dump_file,
                  const std::string& key_column) {
  const CsvTable t = read_csv(dir / table_file);
  const auto dump = read_prediction_dump(dir / dump_file, key_column);
  for (const auto& row : t.rows) {
    const std::string key = row[t.column(key_column)];
    const auto eval_it = dump.find({key, "eval"});
    const auto x_it = dump.find({key, "x"});
    const auto xb_it = dump.find({key, "x_bar"});
    if (eval_it == dump.end() || x_it == dump.end() || xb_it == dump.end()) {
      check.fail(table_file + ": no dumped predictions for " + key_column + " " + key);
      continue;
    }
    const auto& ev = eval_it->second;
    const auto acc = group_accuracies(ev.preds, ev.labels, ev.groups);
    const auto c = consistency_from_predictions(x_it->second.preds, xb_it->second.preds, x_it->second.labels);
    const std::string where = table_file + " " + key_column + " " + key;
    check.same(where + " average_acc", row[t.column("average_acc")], format_number(acc.average));
    check.same(where + " worst_group_acc", row[t.column("worst_group_acc")], format_number(acc.worst));
    check.same(where + " consistency", row[t.column("consistency")], format_number(c.conditional));
    check.same(where + " consistency_unconditional", row[t.column("consistency_unconditional")],
               format_number(c.unconditional));
  }
}

void verify_synth(Checker& check, const fs::path& dir) {
  const json m = json::parse(read_text(dir / "synth.json"));
  for (const char* split : {"train", "test"}) {
    const CsvTable t = read_csv(dir / m[split]["manifest"].get<std::string>());
    std::map<std::string, std::size_t> counts;
    for (const auto& [g, n] : m[split]["group_counts"].items()) counts[g] = 0;
    for (const auto& row : t.rows) ++counts[row[t.column("g")]];
    for (const auto& [g, n] : counts) {
      const std::size_t reported_n = m[split]["group_counts"].value(g, std::size_t{0});
      check.same(std::string("synth.json ") + split + " group " + g, std::to_string(reported_n), std::to_string(n));
    }
    check.same(std::string("synth.json ") + split + " size", std::to_string(m[split]["size"].get<std::size_t>()),
               std::to_string(t.rows.size()));
  }
}

}  // namespace

VerifyReport Experiment::verify() const {
  VerifyReport report;
  Checker check(report);
  const fs::path root = root_dir();
  const fs::path config_path = root / detail::kConfigFile;
  if (!fs::exists(config_path)) {
    check.fail("no outputs under " + root.string());
    return report;
  }
  std::string stored = read_text(config_path);
  if (!stored.empty() && stored.back() == '\n') stored.pop_back();
  try {
    const ExperimentConfig reparsed = ExperimentConfig::parse(stored);
    check.same("config.json re-serialization", reparsed.canonical_json(), stored);
    check.same("config.json hash", reparsed.hash(), config_.hash());
  } catch (const ConfigError& e) {
    check.fail(std::string("config.json does not parse: ") + e.what());
  }

  std::size_t runs = 0;
  auto guarded = [&](const std::string& what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      check.fail(what + ": " + e.what());
    }
  };

  if (fs::exists(root / "dataset" / "synth.json")) {
    ++runs;
    guarded("dataset", [&] { verify_synth(check, root / "dataset"); });
  }

  for (std::size_t k : selected_seeds()) {
    const fs::path dir = run_dir(k);
    const fs::path manifest_path = dir / detail::kManifestFile;
    if (!fs::exists(manifest_path)) continue;
    ++runs;
    const std::string seed = "seed-" + std::to_string(config_.seeds[k]) + " ";
    json manifest;
    try {
      manifest = json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
      check.fail(seed + "manifest.json: " + e.what());
      continue;
    }
    check.same(seed + "manifest config_hash", manifest.value("config_hash", ""), config_.hash());
    const json artifacts = manifest.value("artifacts", json::object());
    for (const auto& [command, files] : artifacts.items()) {
      for (const auto& f : files) {
        ++report.checked;
        if (!fs::exists(dir / f.get<std::string>())) check.fail(seed + command + ": listed file missing: " + f.get<std::string>());
      }
    }
    if (artifacts.contains("train")) {
      guarded(seed + "train", [&] {
        const Checkpoint ck = load_checkpoint(dir / detail::kCheckpointFile);
        check.same(seed + "checkpoint config_hash", ck.header.count("config_hash") ? ck.header.at("config_hash") : "",
                   config_.hash());
        verify_trace(check, dir, "trace.csv", "trace_samples.csv", config_, config_.optimizer.epochs);
      });
    }
    if (artifacts.contains("eval")) guarded(seed + "eval", [&] { verify_eval(check, dir); });
    if (artifacts.contains("cka")) guarded(seed + "cka", [&] { verify_cka(check, dir); });
    if (artifacts.contains("ood")) guarded(seed + "ood", [&] { verify_ood(check, dir); });
    if (artifacts.contains("rollout")) {
      guarded(seed + "rollout", [&] {
        verify_rollout(check, dir, artifacts["rollout"].get<std::vector<std::string>>(), config_);
      });
    }
    if (artifacts.contains("mask-sweep")) {
      guarded(seed + "mask-sweep", [&] { verify_sweep(check, dir, "mask_sweep.csv", "mask_predictions.csv", "distance"); });
    }
    if (artifacts.contains("imbalance-sweep")) {
      guarded(seed + "imbalance-sweep",
              [&] { verify_sweep(check, dir, "imbalance.csv", "imbalance_predictions.csv", "fraction"); });
    }
    if (artifacts.contains("finetune-trace")) {
      guarded(seed + "finetune-trace", [&] {
        verify_trace(check, dir, "finetune_trace.csv", "finetune_samples.csv", config_,
                     config_.evaluation.finetune_epochs);
      });
    }
  }
  if (runs == 0) check.fail("no run outputs under " + root.string());
  return report;
}

}  // namespace splab
