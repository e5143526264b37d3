#include "spurious_lab.h"

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splab/errors.hpp"
#include "splab/experiment.hpp"
#include "splab/metrics.hpp"
#include "splab/models.hpp"

struct splab_experiment {
  splab::ExperimentConfig config;
  splab::RunOptions options;
  std::unique_ptr<splab::Experiment> experiment;  // rebuilt when options change
  std::string text;

  splab::Experiment& get() {
    if (!experiment) experiment = std::make_unique<splab::Experiment>(config, options);
    return *experiment;
  }
};

struct splab_model {
  splab::Model model;
};

namespace {

thread_local std::string last_error;

int fail(int status, std::string message) {
  last_error = std::move(message);
  return status;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return SPLAB_OK;
  } catch (const splab::SchemaError& e) {
    return fail(SPLAB_ERR_SCHEMA, e.what());
  } catch (const splab::ConfigError& e) {
    return fail(SPLAB_ERR_CONFIG, e.what());
  } catch (const splab::VerificationError& e) {
    return fail(SPLAB_ERR_VERIFY, e.what());
  } catch (const splab::FileError& e) {
    return fail(SPLAB_ERR_FILE, e.what());
  } catch (const splab::FormatError& e) {
    return fail(SPLAB_ERR_FORMAT, e.what());
  } catch (const splab::DimensionError& e) {
    return fail(SPLAB_ERR_DIMENSION, e.what());
  } catch (const splab::ContractError& e) {
    return fail(SPLAB_ERR_CONTRACT, e.what());
  } catch (const splab::RangeError& e) {
    return fail(SPLAB_ERR_RANGE, e.what());
  } catch (const splab::NumericError& e) {
    return fail(SPLAB_ERR_NUMERIC, e.what());
  } catch (const splab::DegenerateInputError& e) {
    return fail(SPLAB_ERR_DEGENERATE, e.what());
  } catch (const std::exception& e) {
    return fail(SPLAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SPLAB_ERR_INTERNAL, "unknown error");
  }
}

#define SPLAB_REQUIRE(cond, what) \
  if (!(cond)) return fail(SPLAB_ERR_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* splab_version(void) { return splab::kToolVersion; }

const char* splab_last_error(void) { return last_error.c_str(); }

const char* splab_status_name(int status) {
  switch (status) {
    case SPLAB_OK: return "ok";
    case SPLAB_ERR_INTERNAL: return "internal error";
    case SPLAB_ERR_SCHEMA: return "schema error";
    case SPLAB_ERR_VERIFY: return "verification failure";
    case SPLAB_ERR_CONFIG: return "config error";
    case SPLAB_ERR_FILE: return "file error";
    case SPLAB_ERR_FORMAT: return "format error";
    case SPLAB_ERR_DIMENSION: return "dimension error";
    case SPLAB_ERR_CONTRACT: return "contract error";
    case SPLAB_ERR_RANGE: return "range error";
    case SPLAB_ERR_NUMERIC: return "numeric error";
    case SPLAB_ERR_DEGENERATE: return "degenerate input";
    case SPLAB_ERR_INVALID_ARGUMENT: return "invalid argument";
    default: return "unknown status";
  }
}

const char* splab_config_schema(void) {
  static const std::string schema = splab::config_schema();
  return schema.c_str();
}

int splab_experiment_open(const char* config_path, splab_experiment** out) {
  SPLAB_REQUIRE(config_path && out, "config_path and out must not be null");
  *out = nullptr;
  return guarded([&] { *out = new splab_experiment{splab::ExperimentConfig::load(config_path), {}, {}, {}}; });
}

int splab_experiment_open_json(const char* json_text, const char* base_dir, splab_experiment** out) {
  SPLAB_REQUIRE(json_text && out, "json_text and out must not be null");
  *out = nullptr;
  return guarded([&] {
    auto config = splab::ExperimentConfig::parse(json_text);
    if (base_dir) config.base_dir = base_dir;
    *out = new splab_experiment{std::move(config), {}, {}, {}};
  });
}

void splab_experiment_close(splab_experiment* experiment) { delete experiment; }

int splab_experiment_set_output_dir(splab_experiment* experiment, const char* dir) {
  SPLAB_REQUIRE(experiment && dir, "experiment and dir must not be null");
  experiment->options.out = dir;
  experiment->experiment.reset();
  return SPLAB_OK;
}

int splab_experiment_set_seed_index(splab_experiment* experiment, long long index) {
  SPLAB_REQUIRE(experiment, "experiment must not be null");
  if (index >= 0 && static_cast<std::size_t>(index) >= experiment->config.seeds.size()) {
    return fail(SPLAB_ERR_RANGE, "seed index " + std::to_string(index) + " out of range: config lists " +
                                     std::to_string(experiment->config.seeds.size()) + " seeds");
  }
  experiment->options.seed_index =
      index < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(index));
  experiment->experiment.reset();
  return SPLAB_OK;
}

int splab_experiment_set_checkpoint(splab_experiment* experiment, const char* path) {
  SPLAB_REQUIRE(experiment, "experiment must not be null");
  if (path)
    experiment->options.checkpoint = path;
  else
    experiment->options.checkpoint.reset();
  experiment->experiment.reset();
  return SPLAB_OK;
}

int splab_experiment_set_images(splab_experiment* experiment, const size_t* ids, size_t count) {
  SPLAB_REQUIRE(experiment && (ids || count == 0), "experiment must not be null");
  experiment->options.images = std::vector<std::size_t>(ids, ids + count);
  experiment->experiment.reset();
  return SPLAB_OK;
}

int splab_experiment_run(splab_experiment* experiment, const char* subcommand) {
  SPLAB_REQUIRE(experiment && subcommand, "experiment and subcommand must not be null");
  return guarded([&] { experiment->get().run(subcommand); });
}

const char* splab_experiment_hash(splab_experiment* experiment) {
  if (!experiment) return "";
  experiment->text = experiment->config.hash();
  return experiment->text.c_str();
}

const char* splab_experiment_root_dir(splab_experiment* experiment) {
  if (!experiment) return "";
  experiment->text = experiment->get().root_dir().string();
  return experiment->text.c_str();
}

size_t splab_experiment_seed_count(const splab_experiment* experiment) {
  return experiment ? experiment->config.seeds.size() : 0;
}

int splab_auroc(const double* id_scores, size_t n_id, const double* ood_scores, size_t n_ood, double* out) {
  SPLAB_REQUIRE(out && (id_scores || n_id == 0) && (ood_scores || n_ood == 0), "null pointer argument");
  return guarded([&] { *out = splab::auroc({id_scores, n_id}, {ood_scores, n_ood}); });
}

int splab_fpr_at_tpr(const double* id_scores, size_t n_id, const double* ood_scores, size_t n_ood, double tpr_target,
                     double* out) {
  SPLAB_REQUIRE(out && (id_scores || n_id == 0) && (ood_scores || n_ood == 0), "null pointer argument");
  return guarded([&] { *out = splab::fpr_at_tpr({id_scores, n_id}, {ood_scores, n_ood}, tpr_target); });
}

int splab_linear_cka(const double* x, size_t n, size_t p, const double* y, size_t q, double* out) {
  SPLAB_REQUIRE(out && x && y, "null pointer argument");
  return guarded([&] {
    const splab::Tensor tx({n, p}, std::vector<double>(x, x + n * p));
    const splab::Tensor ty({n, q}, std::vector<double>(y, y + n * q));
    *out = splab::linear_cka(tx, ty);
  });
}

int splab_energy_score(const double* logits, size_t count, double temperature, double* out) {
  SPLAB_REQUIRE(out && logits && count > 0, "logits must be a non-empty array");
  return guarded([&] { *out = splab::energy_score({logits, count}, temperature); });
}

int splab_model_load(const char* checkpoint_path, splab_model** out) {
  SPLAB_REQUIRE(checkpoint_path && out, "checkpoint_path and out must not be null");
  *out = nullptr;
  return guarded([&] { *out = new splab_model{splab::load_checkpoint(checkpoint_path).model}; });
}

void splab_model_close(splab_model* model) { delete model; }

int splab_model_info(const splab_model* model, size_t* image_size, size_t* n_classes) {
  SPLAB_REQUIRE(model, "model must not be null");
  if (image_size) *image_size = model->model.image_size();
  if (n_classes) *n_classes = model->model.n_classes();
  return SPLAB_OK;
}

int splab_model_predict(const splab_model* model, const double* pixels, size_t count, int* labels) {
  SPLAB_REQUIRE(model && (count == 0 || (pixels && labels)), "null pointer argument");
  return guarded([&] {
    const std::size_t s = model->model.image_size();
    const std::size_t per = s * s * 3;
    std::vector<splab::RgbImage> images;
    for (std::size_t i = 0; i < count; ++i) {
      images.push_back({s, s, std::vector<double>(pixels + i * per, pixels + (i + 1) * per)});
    }
    if (images.empty()) return;
    const auto preds = splab::argmax_rows(model->model.logits(images));
    for (std::size_t i = 0; i < count; ++i) labels[i] = preds[i];
  });
}

}  // extern "C"
