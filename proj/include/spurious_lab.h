/* C interface of the spurious-lab library. All functions report failures
 * through a status code; splab_last_error() returns the message of the most
 * recent failure on the calling thread. */
#ifndef SPURIOUS_LAB_H
#define SPURIOUS_LAB_H

#include <stddef.h>

#if defined(_WIN32)
#define SPLAB_API __declspec(dllexport)
#else
#define SPLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum splab_status {
  SPLAB_OK = 0,
  SPLAB_ERR_INTERNAL = 1,
  SPLAB_ERR_SCHEMA = 2,
  SPLAB_ERR_VERIFY = 3,
  SPLAB_ERR_CONFIG = 4,
  SPLAB_ERR_FILE = 5,
  SPLAB_ERR_FORMAT = 6,
  SPLAB_ERR_DIMENSION = 7,
  SPLAB_ERR_CONTRACT = 8,
  SPLAB_ERR_RANGE = 9,
  SPLAB_ERR_NUMERIC = 10,
  SPLAB_ERR_DEGENERATE = 11,
  SPLAB_ERR_INVALID_ARGUMENT = 12
} splab_status;

typedef struct splab_experiment splab_experiment;
typedef struct splab_model splab_model;

SPLAB_API const char* splab_version(void);
SPLAB_API const char* splab_last_error(void);
SPLAB_API const char* splab_status_name(int status);
/* JSON Schema of experiment config files. */
SPLAB_API const char* splab_config_schema(void);

/* Experiments. Relative idx paths in a config resolve against its directory
 * (or against base_dir for splab_experiment_open_json, which may be NULL). */
SPLAB_API int splab_experiment_open(const char* config_path, splab_experiment** out);
SPLAB_API int splab_experiment_open_json(const char* json_text, const char* base_dir, splab_experiment** out);
SPLAB_API void splab_experiment_close(splab_experiment* experiment);
SPLAB_API int splab_experiment_set_output_dir(splab_experiment* experiment, const char* dir);
/* A negative index selects every seed of the config (the default). */
SPLAB_API int splab_experiment_set_seed_index(splab_experiment* experiment, long long index);
SPLAB_API int splab_experiment_set_checkpoint(splab_experiment* experiment, const char* path);
SPLAB_API int splab_experiment_set_images(splab_experiment* experiment, const size_t* ids, size_t count);
/* synth, train, eval, cka, ood, rollout, mask-sweep, imbalance-sweep,
 * finetune-trace or verify. verify fails with SPLAB_ERR_VERIFY. */
SPLAB_API int splab_experiment_run(splab_experiment* experiment, const char* subcommand);
/* Strings owned by the handle, valid until the next call on it. */
SPLAB_API const char* splab_experiment_hash(splab_experiment* experiment);
SPLAB_API const char* splab_experiment_root_dir(splab_experiment* experiment);
SPLAB_API size_t splab_experiment_seed_count(const splab_experiment* experiment);

/* Metrics. Higher scores mean more in-distribution. */
SPLAB_API int splab_auroc(const double* id_scores, size_t n_id, const double* ood_scores, size_t n_ood, double* out);
SPLAB_API int splab_fpr_at_tpr(const double* id_scores, size_t n_id, const double* ood_scores, size_t n_ood,
                               double tpr_target, double* out);
/* x is n x p and y is n x q, both row-major. */
SPLAB_API int splab_linear_cka(const double* x, size_t n, size_t p, const double* y, size_t q, double* out);
SPLAB_API int splab_energy_score(const double* logits, size_t count, double temperature, double* out);

/* Trained models. Pixels are count x size x size x 3 row-major in [0, 1]. */
SPLAB_API int splab_model_load(const char* checkpoint_path, splab_model** out);
SPLAB_API void splab_model_close(splab_model* model);
SPLAB_API int splab_model_info(const splab_model* model, size_t* image_size, size_t* n_classes);
SPLAB_API int splab_model_predict(const splab_model* model, const double* pixels, size_t count, int* labels);

#ifdef __cplusplus
}
#endif

#endif
