#ifndef PUMA_LAB_H
#define PUMA_LAB_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PumaStatus {
  PUMA_STATUS_OK = 0,
  PUMA_STATUS_NULL_POINTER = 1,
  PUMA_STATUS_INVALID_ARGUMENT = 2,
  PUMA_STATUS_IMPOSSIBLE_CONTEXT = 3,
  PUMA_STATUS_STATE_SPACE_TOO_LARGE = 4,
  PUMA_STATUS_PARSE = 5,
  PUMA_STATUS_IO = 6,
  PUMA_STATUS_BUFFER_TOO_SMALL = 7,
  PUMA_STATUS_INTERNAL = 8,
} PumaStatus;

typedef enum PumaPolicy {
  PUMA_POLICY_MAX_PROB = 0,
  PUMA_POLICY_MARGIN = 1,
  PUMA_POLICY_NEG_ENTROPY = 2,
  PUMA_POLICY_RANDOM = 3,
  PUMA_POLICY_POSITIONAL = 4,
} PumaPolicy;

/**
 * Opaque data distribution.
 */
typedef struct PumaDist PumaDist;

/**
 * Opaque tabular learner.
 */
typedef struct PumaModel PumaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t puma_last_error(char *buf, size_t cap);

/**
 * Build the `Z_m` family with identity layout (latents, then `Y`).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PumaStatus puma_dist_zm(uint32_t m,
                             size_t d,
                             double eta,
                             uint32_t theta,
                             struct PumaDist **out);

/**
 * Build a distribution from `n` sequences (`tokens` is `n * len`,
 * row-major) with positive weights `probs`, normalized to sum to one.
 *
 * # Safety
 * `tokens` must hold `n * len` values, `probs` `n` values, `out` valid.
 */
enum PumaStatus puma_dist_table(size_t len,
                                uint32_t vocab,
                                const uint32_t *tokens,
                                const double *probs,
                                size_t n,
                                struct PumaDist **out);

/**
 * # Safety
 * `dist` must come from a `puma_dist_*` constructor and not be used again.
 */
void puma_dist_free(struct PumaDist *dist);

/**
 * Sequence length of `dist`, or 0 for null.
 *
 * # Safety
 * `dist` must be null or a live handle.
 */
size_t puma_dist_len(const struct PumaDist *dist);

/**
 * Vocabulary size of `dist` (the mask id), or 0 for null.
 *
 * # Safety
 * `dist` must be null or a live handle.
 */
uint32_t puma_dist_vocab(const struct PumaDist *dist);

/**
 * Exact `p(x0^i = · | z)` into `out` (`vocab` values).
 *
 * # Safety
 * `ids` must hold `len` values and `out` `cap` values.
 */
enum PumaStatus puma_exact_posterior(const struct PumaDist *dist,
                                     const uint32_t *ids,
                                     size_t len,
                                     size_t index,
                                     double *out,
                                     size_t cap);

/**
 * `C(P, Q)` for two laws over `n` outcomes.
 *
 * # Safety
 * `p` and `q` must hold `n` values; `out` must be valid.
 */
enum PumaStatus puma_chernoff_information(const double *p, const double *q, size_t n, double *out);

/**
 * Exact marginal agreement check with a fixed selection count. Writes the
 * largest TV over grid steps and whether it is below tolerance.
 *
 * # Safety
 * `out_max_tv` and `out_passed` must be valid.
 */
enum PumaStatus puma_verify_marginal(const struct PumaDist *dist,
                                     enum PumaPolicy policy,
                                     size_t count,
                                     size_t k,
                                     double *out_max_tv,
                                     bool *out_passed);

/**
 * # Safety
 * `out` must be valid.
 */
enum PumaStatus puma_model_new(size_t len,
                               uint32_t vocab,
                               double learning_rate,
                               struct PumaModel **out);

/**
 * # Safety
 * `model` must come from `puma_model_new`/`puma_model_load` and not be used again.
 */
void puma_model_free(struct PumaModel *model);

/**
 * Model probabilities at masked position `index` of `ids`.
 *
 * # Safety
 * `ids` must hold `len` values and `out` `cap` values.
 */
enum PumaStatus puma_model_forward(const struct PumaModel *model,
                                   const uint32_t *ids,
                                   size_t len,
                                   size_t index,
                                   double *out,
                                   size_t cap);

/**
 * Run `steps` PUMA iterations (batch `batch`, max-prob staged chains,
 * `K = L`) on `dist`. Writes the mean loss of the last step.
 *
 * # Safety
 * Handles must be live; `out_loss` may be null.
 */
enum PumaStatus puma_model_train_puma(struct PumaModel *model,
                                      const struct PumaDist *dist,
                                      uint64_t steps,
                                      size_t batch,
                                      uint64_t seed,
                                      double *out_loss);

/**
 * Save `model` in its text format.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum PumaStatus puma_model_save(const struct PumaModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid.
 */
enum PumaStatus puma_model_load(const char *path, struct PumaModel **out);

/**
 * Mean absolute difference of two per-position reveal-step maps.
 *
 * # Safety
 * `a` and `b` must hold `len` values; `out` must be valid.
 */
enum PumaStatus puma_trajectory_distance(const size_t *a, const size_t *b, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PUMA_LAB_H */
