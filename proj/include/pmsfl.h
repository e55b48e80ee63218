/* C interface to the pmsfl library.
 *
 * All entry points return a pmsfl_status; anything but PMSFL_OK leaves a
 * human-readable message retrievable with pmsfl_last_error() (thread
 * local). Strings returned through out-parameters are heap-allocated and
 * must be released with pmsfl_string_free().
 */

#ifndef PMSFL_H
#define PMSFL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pmsfl_status {
  PMSFL_OK = 0,
  PMSFL_ERR_INVALID_CONFIG = 1,
  PMSFL_ERR_INVALID_SHAPE = 2,
  PMSFL_ERR_INVALID_LABEL = 3,
  PMSFL_ERR_DOMAIN = 4,
  PMSFL_ERR_INVALID_CACHE = 5,
  PMSFL_ERR_SINGULAR = 6,
  PMSFL_ERR_BUDGET = 7,
  PMSFL_ERR_PROTOCOL = 8,
  PMSFL_ERR_UNRECOVERABLE = 9,
  PMSFL_ERR_NOT_APPLICABLE = 10,
  PMSFL_ERR_IO = 11,
  PMSFL_ERR_INTERNAL = 12
} pmsfl_status;

/* Stable name for a status code ("ok", "invalid-config", ...). */
const char* pmsfl_status_name(pmsfl_status status);

/* Message from the most recent failing call on this thread. */
const char* pmsfl_last_error(void);

void pmsfl_string_free(char* s);

/* Opaque, validated experiment configuration. */
typedef struct pmsfl_config pmsfl_config;

pmsfl_status pmsfl_config_from_json(const char* json_text,
                                    pmsfl_config** out_config);
pmsfl_status pmsfl_config_from_file(const char* path,
                                    pmsfl_config** out_config);
/* Serializes the fully resolved configuration (defaults applied). */
pmsfl_status pmsfl_config_to_json(const pmsfl_config* config,
                                  char** out_json);
void pmsfl_config_free(pmsfl_config* config);

/* Runs the configured experiment, writing metrics.csv and summary.json
 * under out_dir. With dump_masks != 0, binary uplink masks are written
 * under out_dir/masks/. out_summary (optional) receives the summary
 * document. */
pmsfl_status pmsfl_run(const pmsfl_config* config, const char* out_dir,
                       int dump_masks, char** out_summary);

/* Reconstruction-attack evaluation; writes attack_trials.csv and
 * attack_summary.json under out_dir. */
pmsfl_status pmsfl_attack_eval(const pmsfl_config* config,
                               const char* out_dir, char** out_summary);

/* Per-client partition statistics for the configured dataset, as JSON. */
pmsfl_status pmsfl_partition_preview(const pmsfl_config* config,
                                     char** out_json);

/* Differential-privacy calculators. */

/* Amplified budget of the Laplace-forward mechanism under Bernoulli
 * masking: ln((1 - c^d) e^eps + c^d). */
pmsfl_status pmsfl_epsilon_amp_forward(double epsilon, double c, uint32_t d,
                                       double* out_value);

/* Minimal sigma^2 for noisy score updates over `rounds` iterations with
 * clip bound gamma and batch size `batch`. */
pmsfl_status pmsfl_sigma2_update_noise(uint32_t rounds, double gamma,
                                       double epsilon, double delta,
                                       uint32_t batch, double* out_value);

/* Minimal sigma^2 for the noisy-mask mechanism with clip interval
 * [c, 1-c]. */
pmsfl_status pmsfl_sigma2_mask_noise(double c, double epsilon, double delta,
                                     double* out_value);

/* Bernoulli-sampling amplification: minimum over epsilon and the Renyi
 * terms evaluated on alpha_grid (NULL selects the built-in grid). With
 * printed_form != 0 the non-symmetric summand variant is used. */
pmsfl_status pmsfl_bernoulli_amplified_epsilon(double epsilon, double c,
                                               uint32_t d_b,
                                               const double* alpha_grid,
                                               size_t grid_len,
                                               int printed_form,
                                               double* out_value);

#ifdef __cplusplus
}
#endif

#endif /* PMSFL_H */
