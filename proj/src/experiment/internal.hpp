#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "splab/data.hpp"
#include "splab/experiment.hpp"
#include "splab/metrics.hpp"
#include "splab/report.hpp"
#include "splab/training.hpp"

namespace splab {

struct PreparedData {
  GroupedDataset train;
  GroupedDataset test;
  std::vector<ColorSpec> env_colors;
};

namespace detail {

inline constexpr const char* kCheckpointFile = "model.splab";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kConfigFile = "config.json";

// "fixed:black:white" -> "fixed_black_white"
std::string policy_file_stem(const std::string& policy);

// Per-sample dump behind a training trace: epoch,index,y,g,loss,pred.
void write_trace_samples(const std::filesystem::path& path, const TrainingTrace& trace, const GroupedDataset& ds);

// Reported JSON numbers carry 12 significant digits.
inline double reported(double v) { return round_reported(v); }

nlohmann::ordered_json group_accuracy_json(const GroupAccuracyReport& report);
nlohmann::ordered_json consistency_json(const ConsistencyResult& c);

}  // namespace detail
}  // namespace splab
