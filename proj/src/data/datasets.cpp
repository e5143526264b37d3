#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include "splab/data.hpp"
#include "splab/errors.hpp"
#include "splab/image_io.hpp"
#include "splab/rng.hpp"

namespace splab {

int GroupedDataset::group_id(int y, int e) const {
  return y * static_cast<int>(environment_set.size()) + e;
}

void GroupedDataset::recount() {
  group_counts.clear();
  for (std::size_t y = 0; y < class_set.size(); ++y)
    for (std::size_t e = 0; e < environment_set.size(); ++e)
      group_counts[group_id(static_cast<int>(y), static_cast<int>(e))] = 0;
  for (const auto& img : images) ++group_counts[img.g];
}

int GroupedDataset::smallest_group() const {
  int best = -1;
  std::size_t best_count = 0;
  for (const auto& [g, count] : group_counts) {
    if (count == 0) continue;
    if (best < 0 || count < best_count) {
      best = g;
      best_count = count;
    }
  }
  if (best < 0) throw ContractError("smallest_group: dataset has no images");
  return best;
}

std::vector<double> CorrelationConfig::probabilities(std::size_t y) const {
  const auto& same = same_class.at(y);
  const std::size_t n_env = environments.size();
  const double cross = n_env > same.size() ? (1.0 - r * static_cast<double>(same.size())) /
                                                 static_cast<double>(n_env - same.size())
                                           : 0.0;
  std::vector<double> p(n_env, cross);
  for (int e : same) p[static_cast<std::size_t>(e)] = r;
  return p;
}

void CorrelationConfig::validate() const {
  if (classes.empty() || environments.empty()) throw ConfigError("correlation config needs classes and environments");
  if (same_class.size() != classes.size()) {
    throw ConfigError("correlation config: same_class must list environments for every class");
  }
  for (const auto& same : same_class) {
    if (same.empty()) throw ConfigError("correlation config: every class needs a same-class environment");
    for (int e : same) {
      if (e < 0 || static_cast<std::size_t>(e) >= environments.size()) {
        throw ConfigError("correlation config: environment index " + std::to_string(e) + " out of range");
      }
    }
    const double total = r * static_cast<double>(same.size());
    if (!(r > 0.0) || total > 1.0 + 1e-12 || (same.size() == environments.size() && std::abs(total - 1.0) > 1e-12)) {
      throw ConfigError("correlation ratio " + std::to_string(r) + " is infeasible for " +
                        std::to_string(same.size()) + " same-class environments");
    }
  }
}

std::vector<std::size_t> environment_quotas(std::size_t n_y, std::size_t y, const CorrelationConfig& config) {
  const auto p = config.probabilities(y);
  std::vector<std::size_t> quota(p.size());
  long long assigned = 0;
  for (std::size_t e = 0; e < p.size(); ++e) {
    quota[e] = static_cast<std::size_t>(std::llround(p[e] * static_cast<double>(n_y)));
    assigned += static_cast<long long>(quota[e]);
  }
  long long remainder = static_cast<long long>(n_y) - assigned;
  const auto& same = config.same_class.at(y);
  for (std::size_t k = 0; remainder != 0; ++k) {
    auto& q = quota[static_cast<std::size_t>(same[k % same.size()])];
    if (remainder > 0) {
      ++q;
      --remainder;
    } else if (q > 0) {
      --q;
      ++remainder;
    }
  }
  return quota;
}

std::vector<int> assign_environments(const std::vector<int>& labels, const CorrelationConfig& config,
                                     std::uint64_t seed) {
  config.validate();
  std::vector<int> env(labels.size(), -1);
  for (std::size_t y = 0; y < config.classes.size(); ++y) {
    const int cls = config.classes[y];
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < 4) {
      throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                        " samples; at least 4 are needed to honour environment quotas");
    }
    const auto quota = environment_quotas(members.size(), y, config);
    Rng rng(derive_seed(seed, "environments/" + std::to_string(cls)));
    rng.shuffle(std::span<std::size_t>(members));
    std::size_t next = 0;
    for (std::size_t e = 0; e < quota.size(); ++e)
      for (std::size_t k = 0; k < quota[e]; ++k) env[members[next++]] = static_cast<int>(e);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (env[i] < 0) throw ConfigError("label " + std::to_string(labels[i]) + " is not in the configured classes");
  }
  return env;
}

GroupedDataset build_cmnist(const GraySet& source, const CorrelationConfig& config, std::uint64_t seed) {
  config.validate();
  GraySet filtered;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (std::find(config.classes.begin(), config.classes.end(), source.labels[i]) != config.classes.end()) {
      filtered.images.push_back(source.images[i]);
      filtered.labels.push_back(source.labels[i]);
    }
  }
  std::vector<ColorSpec> env_colors;
  for (const auto& name : config.environments) env_colors.push_back(colors::by_name(name));
  const auto env = assign_environments(filtered.labels, config, seed);

  GroupedDataset ds;
  ds.class_set = config.classes;
  ds.environment_set = config.environments;
  const ColorSpec fg = colors::white();
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    const int y = static_cast<int>(std::find(config.classes.begin(), config.classes.end(), filtered.labels[i]) -
                                   config.classes.begin());
    LabeledImage img;
    img.pixels = colorize(filtered.images[i], fg, env_colors[static_cast<std::size_t>(env[i])]);
    img.mask = filtered.images[i];
    img.y = y;
    img.e = env[i];
    img.g = ds.group_id(y, env[i]);
    ds.images.push_back(std::move(img));
  }
  ds.recount();
  return ds;
}

PairPolicy PairPolicy::parse(std::string_view text) {
  if (text == "random") return random();
  if (text == "bw") return black_on_white();
  if (text == "identity") return fixed(colors::white(), std::nullopt);
  if (text.starts_with("fixed:")) {
    const auto rest = text.substr(6);
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) throw ConfigError("pair policy '" + std::string(text) + "' needs fg:bg");
    const auto color = [](std::string_view s) -> std::optional<ColorSpec> {
      if (s == "original") return std::nullopt;
      return colors::by_name(s);
    };
    return fixed(color(rest.substr(0, colon)), color(rest.substr(colon + 1)));
  }
  throw ConfigError("unknown pair policy '" + std::string(text) + "'");
}

std::string PairPolicy::name() const {
  switch (kind) {
    case Kind::Random:
      return "random";
    case Kind::BlackOnWhite:
      return "bw";
    case Kind::Fixed:
      break;
  }
  if (fg && fg->name == "white" && !bg) return "identity";
  return "fixed:" + (fg ? fg->name : std::string("original")) + ":" + (bg ? bg->name : std::string("original"));
}

std::vector<ConsistencyPair> make_consistency_pairs(const GroupedDataset& dataset, const PairPolicy& policy,
                                                    std::uint64_t seed) {
  if (dataset.images.empty()) throw ContractError("make_consistency_pairs: dataset is empty");
  Rng rng(derive_seed(seed, "pairs/" + policy.name()));
  const auto& palette = colors::evaluation_palette();
  std::vector<ConsistencyPair> pairs;
  pairs.reserve(dataset.size());
  for (const auto& img : dataset.images) {
    const ColorSpec original_bg = colors::by_name(dataset.environment_set.at(static_cast<std::size_t>(img.e)));
    ColorSpec fg, bg;
    switch (policy.kind) {
      case PairPolicy::Kind::Random:
        fg = rng.below(2) == 0 ? colors::black() : colors::white();
        bg = palette[rng.below(palette.size())];
        break;
      case PairPolicy::Kind::BlackOnWhite:
        fg = colors::black();
        bg = colors::white();
        break;
      case PairPolicy::Kind::Fixed:
        fg = policy.fg ? *policy.fg : colors::white();
        bg = policy.bg ? *policy.bg : original_bg;
        break;
    }
    pairs.push_back({img.pixels, colorize(img.mask, fg, bg), img.y, img.g, fg.name, bg.name});
  }
  return pairs;
}

std::vector<LabeledImage> build_spurious_ood(const GraySet& source, const std::vector<int>& ood_classes,
                                             const std::vector<int>& id_classes,
                                             const std::vector<ColorSpec>& env_colors, std::uint64_t seed,
                                             std::size_t n) {
  for (int c : ood_classes) {
    if (std::find(id_classes.begin(), id_classes.end(), c) != id_classes.end()) {
      throw ConfigError("OOD class " + std::to_string(c) + " is also an in-distribution class");
    }
  }
  if (n == 0) return {};
  if (env_colors.empty()) throw ConfigError("build_spurious_ood: no environment colors");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (std::find(ood_classes.begin(), ood_classes.end(), source.labels[i]) != ood_classes.end()) pool.push_back(i);
  }
  if (pool.empty()) throw ConfigError("build_spurious_ood: source has no images of the OOD classes");
  Rng rng(derive_seed(seed, "ood"));
  rng.shuffle(std::span<std::size_t>(pool));
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = pool[i % pool.size()];
    const std::size_t e = rng.below(env_colors.size());
    LabeledImage img;
    img.pixels = colorize(source.images[src], colors::white(), env_colors[e]);
    img.mask = source.images[src];
    img.y = source.labels[src];
    img.e = static_cast<int>(e);
    img.g = -1;
    out.push_back(std::move(img));
  }
  return out;
}

GroupedDataset remove_minority(const GroupedDataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ContractError("remove_minority: fraction " + std::to_string(fraction) + " outside [0, 1]");
  }
  if (dataset.images.empty()) return dataset;
  const int target = dataset.smallest_group();
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset.images[i].g == target) members.push_back(i);
  // Tolerance keeps e.g. (1 - 0.9) * 50 from rounding up to 6.
  const double keep_exact = (1.0 - fraction) * static_cast<double>(members.size());
  const auto keep = static_cast<std::size_t>(std::max(0.0, std::ceil(keep_exact - 1e-9)));
  Rng rng(derive_seed(seed, "remove_minority"));
  rng.shuffle(std::span<std::size_t>(members));
  std::set<std::size_t> dropped(members.begin() + static_cast<std::ptrdiff_t>(keep), members.end());

  GroupedDataset out;
  out.class_set = dataset.class_set;
  out.environment_set = dataset.environment_set;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (!dropped.contains(i)) out.images.push_back(dataset.images[i]);
  out.recount();
  return out;
}

void export_dataset(const GroupedDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw FileError("cannot write " + (dir / "manifest.csv").string());
  manifest << "index,y,e,g,path\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& img = dataset.images[i];
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.ppm", i);
    const std::string rel = std::string("images/") + name;
    write_ppm(dir / rel, img.pixels);
    manifest << i << ',' << img.y << ',' << img.e << ',' << img.g << ',' << rel << '\n';
  }
}

}  // namespace splab
