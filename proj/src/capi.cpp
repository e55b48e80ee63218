#include "pmsfl.h"

#include <cstdlib>
#include <cstring>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "pmsfl/error.hpp"
#include "pmsfl/harness.hpp"
#include "pmsfl/privacy.hpp"

namespace {

thread_local std::string g_last_error;

pmsfl_status to_status(pmsfl::ErrorCode code) {
  using pmsfl::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidConfig: return PMSFL_ERR_INVALID_CONFIG;
    case ErrorCode::kInvalidShape: return PMSFL_ERR_INVALID_SHAPE;
    case ErrorCode::kInvalidLabel: return PMSFL_ERR_INVALID_LABEL;
    case ErrorCode::kDomain: return PMSFL_ERR_DOMAIN;
    case ErrorCode::kInvalidCache: return PMSFL_ERR_INVALID_CACHE;
    case ErrorCode::kSingular: return PMSFL_ERR_SINGULAR;
    case ErrorCode::kBudget: return PMSFL_ERR_BUDGET;
    case ErrorCode::kProtocol: return PMSFL_ERR_PROTOCOL;
    case ErrorCode::kUnrecoverable: return PMSFL_ERR_UNRECOVERABLE;
    case ErrorCode::kNotApplicable: return PMSFL_ERR_NOT_APPLICABLE;
    case ErrorCode::kIo: return PMSFL_ERR_IO;
    case ErrorCode::kInternal: return PMSFL_ERR_INTERNAL;
  }
  return PMSFL_ERR_INTERNAL;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
pmsfl_status guarded(Fn&& fn) {
  try {
    fn();
    return PMSFL_OK;
  } catch (const pmsfl::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PMSFL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PMSFL_ERR_INTERNAL;
  }
}

}  // namespace

struct pmsfl_config {
  pmsfl::harness::RunConfig cfg;
};

extern "C" {

const char* pmsfl_status_name(pmsfl_status status) {
  switch (status) {
    case PMSFL_OK: return "ok";
    case PMSFL_ERR_INVALID_CONFIG: return "invalid-config";
    case PMSFL_ERR_INVALID_SHAPE: return "invalid-shape";
    case PMSFL_ERR_INVALID_LABEL: return "invalid-label";
    case PMSFL_ERR_DOMAIN: return "domain";
    case PMSFL_ERR_INVALID_CACHE: return "invalid-cache";
    case PMSFL_ERR_SINGULAR: return "singular";
    case PMSFL_ERR_BUDGET: return "budget";
    case PMSFL_ERR_PROTOCOL: return "protocol";
    case PMSFL_ERR_UNRECOVERABLE: return "unrecoverable";
    case PMSFL_ERR_NOT_APPLICABLE: return "not-applicable";
    case PMSFL_ERR_IO: return "io";
    case PMSFL_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* pmsfl_last_error(void) { return g_last_error.c_str(); }

void pmsfl_string_free(char* s) { std::free(s); }

pmsfl_status pmsfl_config_from_json(const char* json_text,
                                    pmsfl_config** out_config) {
  if (!json_text || !out_config) {
    g_last_error = "null argument";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    auto cfg = pmsfl::harness::parse_config_text(json_text);
    *out_config = new pmsfl_config{std::move(cfg)};
  });
}

pmsfl_status pmsfl_config_from_file(const char* path,
                                    pmsfl_config** out_config) {
  if (!path || !out_config) {
    g_last_error = "null argument";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    auto cfg = pmsfl::harness::parse_config_file(path);
    *out_config = new pmsfl_config{std::move(cfg)};
  });
}

pmsfl_status pmsfl_config_to_json(const pmsfl_config* config,
                                  char** out_json) {
  if (!config || !out_json) {
    g_last_error = "null argument";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    *out_json = copy_string(pmsfl::harness::config_to_json(config->cfg).dump(2));
  });
}

void pmsfl_config_free(pmsfl_config* config) { delete config; }

pmsfl_status pmsfl_run(const pmsfl_config* config, const char* out_dir,
                       int dump_masks, char** out_summary) {
  if (!config || !out_dir) {
    g_last_error = "null argument";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    auto outputs =
        pmsfl::harness::run_experiment(config->cfg, out_dir, dump_masks != 0);
    if (out_summary) *out_summary = copy_string(outputs.summary_json);
  });
}

pmsfl_status pmsfl_attack_eval(const pmsfl_config* config,
                               const char* out_dir, char** out_summary) {
  if (!config || !out_dir) {
    g_last_error = "null argument";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    auto outputs = pmsfl::harness::run_attack_eval(config->cfg, out_dir);
    if (out_summary) *out_summary = copy_string(outputs.summary_json);
  });
}

pmsfl_status pmsfl_partition_preview(const pmsfl_config* config,
                                     char** out_json) {
  if (!config || !out_json) {
    g_last_error = "null argument";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    *out_json = copy_string(pmsfl::harness::partition_preview(config->cfg));
  });
}

pmsfl_status pmsfl_epsilon_amp_forward(double epsilon, double c, uint32_t d,
                                       double* out_value) {
  if (!out_value) {
    g_last_error = "null out_value";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded(
      [&] { *out_value = pmsfl::privacy::epsilon_amp_forward(epsilon, c, d); });
}

pmsfl_status pmsfl_sigma2_update_noise(uint32_t rounds, double gamma,
                                       double epsilon, double delta,
                                       uint32_t batch, double* out_value) {
  if (!out_value) {
    g_last_error = "null out_value";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    *out_value = pmsfl::privacy::sigma_for_update_noise(rounds, gamma, epsilon,
                                                        delta, batch);
  });
}

pmsfl_status pmsfl_sigma2_mask_noise(double c, double epsilon, double delta,
                                     double* out_value) {
  if (!out_value) {
    g_last_error = "null out_value";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    *out_value = pmsfl::privacy::sigma_for_mask_noise(c, epsilon, delta);
  });
}

pmsfl_status pmsfl_bernoulli_amplified_epsilon(double epsilon, double c,
                                               uint32_t d_b,
                                               const double* alpha_grid,
                                               size_t grid_len,
                                               int printed_form,
                                               double* out_value) {
  if (!out_value) {
    g_last_error = "null out_value";
    return PMSFL_ERR_INVALID_CONFIG;
  }
  return guarded([&] {
    std::span<const double> grid =
        alpha_grid ? std::span<const double>(alpha_grid, grid_len)
                   : std::span<const double>(pmsfl::privacy::default_alpha_grid());
    *out_value = pmsfl::privacy::bernoulli_amplified_epsilon(
        epsilon, c, d_b, grid, printed_form != 0);
  });
}

}  // extern "C"
