#ifndef FEDSEL_H
#define FEDSEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedselStatus {
  FEDSEL_STATUS_OK = 0,
  FEDSEL_STATUS_NULL_POINTER = 1,
  FEDSEL_STATUS_INVALID_ARGUMENT = 2,
  FEDSEL_STATUS_SHAPE = 3,
  FEDSEL_STATUS_CONSTRUCTION = 4,
  FEDSEL_STATUS_CONFIG = 5,
  FEDSEL_STATUS_PARSE = 6,
  FEDSEL_STATUS_IO = 7,
  /**
   * The caller's buffer is too small; the required length was reported.
   */
  FEDSEL_STATUS_BUFFER_TOO_SMALL = 8,
  FEDSEL_STATUS_PANIC = 9,
} FedselStatus;

/**
 * Experiment configuration.
 */
typedef struct FedselConfig FedselConfig;

/**
 * Results of [`fedsel_run`]: one run per configured seed.
 */
typedef struct FedselResults FedselResults;

/**
 * Stateful client selector.
 */
typedef struct FedselSelector FedselSelector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fedsel_last_error(void);

/**
 * Creates a configuration holding the defaults.
 *
 * # Safety
 * `out_config` must be valid for writes.
 */
enum FedselStatus fedsel_config_new(struct FedselConfig **out_config);

/**
 * # Safety
 * `config` must come from [`fedsel_config_new`] and not be used afterwards.
 */
void fedsel_config_free(struct FedselConfig *config);

/**
 * Sets one `key=value` option, using the same keys as the config file.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum FedselStatus fedsel_config_set(struct FedselConfig *config,
                                    const char *key,
                                    const char *value);

/**
 * Applies a `key=value` configuration file.
 *
 * # Safety
 * `config` must be a live handle; `path` a NUL-terminated string.
 */
enum FedselStatus fedsel_config_apply_file(struct FedselConfig *config, const char *path);

/**
 * Writes the resolved configuration text into `buf`.
 *
 * # Safety
 * `config` must be a live handle; `buf` must hold `cap` bytes; `needed`
 * may be null.
 */
enum FedselStatus fedsel_config_dump(const struct FedselConfig *config,
                                     char *buf,
                                     size_t cap,
                                     size_t *needed);

/**
 * Runs every configured seed.
 *
 * # Safety
 * `config` must be a live handle; `out_results` valid for writes.
 */
enum FedselStatus fedsel_run(const struct FedselConfig *config, struct FedselResults **out_results);

/**
 * # Safety
 * `results` must come from [`fedsel_run`] and not be used afterwards.
 */
void fedsel_results_free(struct FedselResults *results);

/**
 * # Safety
 * `results` must be a live handle; `out_count` valid for writes.
 */
enum FedselStatus fedsel_results_num_runs(const struct FedselResults *results, size_t *out_count);

/**
 * Seed and number of logged rounds (warm-up included) of run `run`.
 *
 * # Safety
 * `results` must be a live handle; the out pointers valid for writes.
 */
enum FedselStatus fedsel_results_run_info(const struct FedselResults *results,
                                          size_t run,
                                          uint64_t *out_seed,
                                          size_t *out_rounds);

/**
 * Copies the per-round test accuracies of run `run` into `buf`.
 *
 * # Safety
 * `results` must be a live handle; `buf` must hold `cap` doubles;
 * `needed` may be null.
 */
enum FedselStatus fedsel_results_accuracy(const struct FedselResults *results,
                                          size_t run,
                                          double *buf,
                                          size_t cap,
                                          size_t *needed);

/**
 * First round of run `run` reaching `target` accuracy. `out_reached` is set
 * to 0 and `out_round` left untouched when the target is never reached.
 *
 * # Safety
 * `results` must be a live handle; the out pointers valid for writes.
 */
enum FedselStatus fedsel_results_rounds_to_target(const struct FedselResults *results,
                                                  size_t run,
                                                  double target,
                                                  uint8_t *out_reached,
                                                  uint64_t *out_round);

/**
 * Writes the metrics CSV for all runs.
 *
 * # Safety
 * `results` must be a live handle; `path` a NUL-terminated string.
 */
enum FedselStatus fedsel_results_write_metrics(const struct FedselResults *results,
                                               const char *path);

/**
 * Creates a selector. `scheme` is `"cucb"`, `"greedy"` or `"random"`.
 *
 * # Safety
 * `scheme` must be a NUL-terminated string; `out_selector` valid for writes.
 */
enum FedselStatus fedsel_selector_new(size_t num_clients,
                                      size_t budget,
                                      double alpha,
                                      double rho,
                                      const char *scheme,
                                      size_t num_classes,
                                      uint64_t seed,
                                      struct FedselSelector **out_selector);

/**
 * # Safety
 * `selector` must come from [`fedsel_selector_new`] and not be used
 * afterwards.
 */
void fedsel_selector_free(struct FedselSelector *selector);

/**
 * Picks the next client set and writes its ids into `out_ids`.
 * `out_warm_up` may be null.
 *
 * # Safety
 * `selector` must be a live handle; `out_ids` must hold `cap` entries;
 * `out_len` valid for writes.
 */
enum FedselStatus fedsel_selector_select(struct FedselSelector *selector,
                                         size_t *out_ids,
                                         size_t cap,
                                         size_t *out_len,
                                         uint8_t *out_warm_up);

/**
 * Feeds back the round's results. `compositions` is `count` rows of
 * `num_classes` values; row `i` and `scaled_rewards[i]` belong to
 * `client_ids[i]`. `selected` lists the clients that were played.
 *
 * # Safety
 * `selector` must be a live handle; every array must hold the stated
 * number of elements.
 */
enum FedselStatus fedsel_selector_observe(struct FedselSelector *selector,
                                          const size_t *selected,
                                          size_t num_selected,
                                          const size_t *client_ids,
                                          const double *compositions,
                                          const double *scaled_rewards,
                                          size_t count);

/**
 * Composition estimate from `n` squared gradient norms, written to `out`
 * (`n` values). `out_saturated` may be null.
 *
 * # Safety
 * `norms` and `out_ratios` must each hold `n` doubles.
 */
enum FedselStatus fedsel_composition_estimate(const double *norms,
                                              size_t n,
                                              double beta,
                                              double *out_ratios,
                                              uint8_t *out_saturated);

/**
 * KL divergence of a composition from uniform.
 *
 * # Safety
 * `ratios` must hold `n` doubles; `out_kl` valid for writes.
 */
enum FedselStatus fedsel_kl_to_uniform(const double *ratios, size_t n, double *out_kl);

/**
 * `1 / max(KL, epsilon)` for a composition.
 *
 * # Safety
 * `ratios` must hold `n` doubles; `out_reward` valid for writes.
 */
enum FedselStatus fedsel_client_reward(const double *ratios,
                                       size_t n,
                                       double epsilon,
                                       double *out_reward);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSEL_H */
