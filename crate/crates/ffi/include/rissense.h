#ifndef RISSENSE_H
#define RISSENSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum {
  RISSENSE_STATUS_OK = 0,
  RISSENSE_STATUS_NULL_POINTER = 1,
  RISSENSE_STATUS_INVALID_ARGUMENT = 2,
  RISSENSE_STATUS_CONFIG = 3,
  RISSENSE_STATUS_COMPUTATION = 4,
  RISSENSE_STATUS_IO = 5,
  RISSENSE_STATUS_PANIC = 6,
} RissenseStatus;

/**
 * Filter outputs of a campaign.
 */
typedef enum {
  RISSENSE_FILTER_RIS = 0,
  RISSENSE_FILTER_NRIS = 1,
  RISSENSE_FILTER_FUSION = 2,
  RISSENSE_FILTER_RIS_RANDOM = 3,
} RissenseFilter;

/**
 * Opaque campaign result.
 */
typedef struct RissenseCampaign RissenseCampaign;

/**
 * Opaque scenario configuration.
 */
typedef struct RissenseConfig RissenseConfig;

/**
 * Received-to-transmitted power ratios (linear).
 */
typedef struct {
  double ris;
  double double_bounce;
  double direct;
} RissenseLinkBudget;

/**
 * GOSPA value and decomposition.
 */
typedef struct {
  double total;
  double localization;
  double missed;
  double false_targets;
} RissenseGospa;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *rissense_last_error(void);

/**
 * Marcum Q-function of order one.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
RissenseStatus rissense_marcum_q1(double a, double b, double *out);

/**
 * Detection probability of a path with amplitude `gain` and matched energy
 * `energy` at noise PSD `noise_psd` and false-alarm rate `p_fa`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
RissenseStatus rissense_detection_probability(double gain,
                                              double energy,
                                              double noise_psd,
                                              double p_fa,
                                              double *out);

/**
 * Broadside link budget; `directional` selects the `N_R²` RIS gain.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
RissenseStatus rissense_link_budget(double d_ur,
                                    double d_us,
                                    double d_rs,
                                    size_t ris_elements,
                                    bool directional,
                                    double wavelength,
                                    double rcs,
                                    RissenseLinkBudget *out);

/**
 * GOSPA between `n_est` and `n_truth` points stored as packed `xyz` triples.
 *
 * # Safety
 * `estimates` and `truth` must hold `3 n` doubles (may be null when the
 * count is zero); `out` must be null or valid for writes.
 */
RissenseStatus rissense_gospa(const double *estimates,
                              size_t n_est,
                              const double *truth,
                              size_t n_truth,
                              double order,
                              double cutoff,
                              double alpha,
                              RissenseGospa *out);

/**
 * Parses a TOML scenario (empty string for defaults).
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be null or valid for
 * writes. Free the handle with [`rissense_config_free`].
 */
RissenseStatus rissense_config_from_toml(const char *toml, RissenseConfig **out);

/**
 * Applies a `key=value` override, e.g. `signal.tx_power_dbm=30`.
 *
 * # Safety
 * `config` must come from [`rissense_config_from_toml`]; `assignment` must
 * be a NUL-terminated string.
 */
RissenseStatus rissense_config_set(RissenseConfig *config, const char *assignment);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void rissense_config_free(RissenseConfig *config);

/**
 * Runs the campaign with `runs` Monte Carlo runs (0 keeps the configured
 * count). Output files are written to `out_dir` unless it is null.
 *
 * # Safety
 * `config` must be a live handle; `out_dir` null or NUL-terminated; `out`
 * valid for writes. Free the result with [`rissense_campaign_free`].
 */
RissenseStatus rissense_campaign_run(const RissenseConfig *config,
                                     size_t runs,
                                     const char *out_dir,
                                     RissenseCampaign **out);

/**
 * Mean GOSPA of a filter at an epoch (0 is the prior).
 *
 * # Safety
 * `campaign` must be a live handle; `out` valid for writes.
 */
RissenseStatus rissense_campaign_mean_gospa(const RissenseCampaign *campaign,
                                            RissenseFilter filter,
                                            size_t epoch,
                                            double *out);

/**
 * # Safety
 * `campaign` must be null or a handle not yet freed.
 */
void rissense_campaign_free(RissenseCampaign *campaign);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISSENSE_H */
