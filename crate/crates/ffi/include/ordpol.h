#ifndef ORDPOL_H
#define ORDPOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OrdpolStatus {
  ORDPOL_STATUS_OK = 0,
  ORDPOL_STATUS_NULL_POINTER = 1,
  ORDPOL_STATUS_INVALID_ARGUMENT = 2,
  ORDPOL_STATUS_CONSTRAINT = 3,
  ORDPOL_STATUS_DIMENSION = 4,
  ORDPOL_STATUS_NUMERICAL = 5,
  ORDPOL_STATUS_CONTRACT = 6,
  ORDPOL_STATUS_CHECKPOINT = 7,
  ORDPOL_STATUS_BUFFER_TOO_SMALL = 8,
  ORDPOL_STATUS_PANIC = 9,
} OrdpolStatus;

/**
 * Opaque policy handle.
 */
typedef struct OrdpolPolicy OrdpolPolicy;

/**
 * Opaque tint environment handle.
 */
typedef struct OrdpolTintEnv OrdpolTintEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to
 * `cap − 1` bytes) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t ordpol_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ordpol_version(void);

/**
 * Writes the `n_tau + 1` class probabilities of the cumulative-logit model with strictly
 * increasing cut points `tau` and latent score `score`.
 *
 * # Safety
 * `tau` must be valid for `n_tau` reads and `probs` for `n_probs` writes.
 */
enum OrdpolStatus ordpol_ordinal_pmf(const double *tau,
                                     size_t n_tau,
                                     double score,
                                     double *probs,
                                     size_t n_probs);

/**
 * Log-probability of class `action` (0-based) and its gradient with respect to the score and
 * the unconstrained threshold parameters `raw` (first cut point, then log-gaps).
 *
 * # Safety
 * `raw` must be valid for `n_raw` reads, `d_raw` for `n_raw` writes, and the scalar outputs
 * must be valid pointers.
 */
enum OrdpolStatus ordpol_ordinal_log_prob_grad(const double *raw,
                                               size_t n_raw,
                                               double score,
                                               size_t action,
                                               double *log_prob,
                                               double *d_score,
                                               double *d_raw);

/**
 * Creates a single-dimension ordinal policy. `torso` is 0 for linear, 1 for a two-layer MLP
 * with `hidden` units; `seed` drives the initialization.
 *
 * # Safety
 * `out` must be a valid pointer; the handle it receives must be freed with
 * [`ordpol_policy_free`].
 */
enum OrdpolStatus ordpol_policy_new_ordinal(size_t classes,
                                            size_t obs_dim,
                                            uint32_t torso,
                                            size_t hidden,
                                            uint64_t seed,
                                            struct OrdpolPolicy **out);

/**
 * Creates a softmax policy; see [`ordpol_policy_new_ordinal`].
 *
 * # Safety
 * As for [`ordpol_policy_new_ordinal`].
 */
enum OrdpolStatus ordpol_policy_new_softmax(size_t classes,
                                            size_t obs_dim,
                                            uint32_t torso,
                                            size_t hidden,
                                            uint64_t seed,
                                            struct OrdpolPolicy **out);

/**
 * Restores a policy from a checkpoint blob.
 *
 * # Safety
 * `bytes` must be valid for `len` reads and `out` a valid pointer.
 */
enum OrdpolStatus ordpol_policy_from_blob(const uint8_t *bytes,
                                          size_t len,
                                          struct OrdpolPolicy **out);

/**
 * Serializes a policy. `written` receives the blob size; when `cap` is too small nothing is
 * copied and `ORDPOL_STATUS_BUFFER_TOO_SMALL` is returned, so a first call with `cap = 0`
 * queries the size.
 *
 * # Safety
 * `policy` must be a live handle, `buf` valid for `cap` writes and `written` a valid pointer.
 */
enum OrdpolStatus ordpol_policy_to_blob(const struct OrdpolPolicy *policy,
                                        uint8_t *buf,
                                        size_t cap,
                                        size_t *written);

/**
 * Number of entries of the flat parameter vector, or 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t ordpol_policy_num_params(const struct OrdpolPolicy *policy);

/**
 * Copies the flat parameter vector into `params`.
 *
 * # Safety
 * `policy` must be a live handle and `params` valid for `len` writes.
 */
enum OrdpolStatus ordpol_policy_get_params(const struct OrdpolPolicy *policy,
                                           double *params,
                                           size_t len);

/**
 * Replaces the flat parameter vector; `len` must equal the parameter count.
 *
 * # Safety
 * `policy` must be a live handle and `params` valid for `len` reads.
 */
enum OrdpolStatus ordpol_policy_set_params(struct OrdpolPolicy *policy,
                                           const double *params,
                                           size_t len);

/**
 * Writes the action probabilities at observation `obs`.
 *
 * # Safety
 * `policy` must be a live handle, `obs` valid for `obs_len` reads and `probs` for `n_probs`
 * writes.
 */
enum OrdpolStatus ordpol_policy_probs(const struct OrdpolPolicy *policy,
                                      const double *obs,
                                      size_t obs_len,
                                      double *probs,
                                      size_t n_probs);

/**
 * Maps a caller-supplied uniform `u ∈ [0, 1)` to an action by inverse CDF.
 *
 * # Safety
 * `policy` must be a live handle, `obs` valid for `obs_len` reads and `action` a valid
 * pointer.
 */
enum OrdpolStatus ordpol_policy_sample(const struct OrdpolPolicy *policy,
                                       const double *obs,
                                       size_t obs_len,
                                       double u,
                                       size_t *action);

/**
 * Releases a policy handle; null is ignored.
 *
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void ordpol_policy_free(struct OrdpolPolicy *policy);

/**
 * Creates a tint environment from a JSON config (null for defaults) and a seed.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be a valid pointer and
 * the handle it receives must be freed with [`ordpol_tint_env_free`].
 */
enum OrdpolStatus ordpol_tint_env_new(const char *config_json,
                                      uint64_t seed,
                                      struct OrdpolTintEnv **out);

/**
 * Observation length of the environment, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t ordpol_tint_env_obs_dim(const struct OrdpolTintEnv *env);

/**
 * Starts a new episode and writes the first observation.
 *
 * # Safety
 * `env` must be a live handle and `obs` valid for `obs_len` writes.
 */
enum OrdpolStatus ordpol_tint_env_reset(struct OrdpolTintEnv *env, double *obs, size_t obs_len);

/**
 * Applies class `action` (0-based) and writes the next observation, reward, end-of-episode
 * flag and whether the wearer reacted.
 *
 * # Safety
 * `env` must be a live handle, `obs` valid for `obs_len` writes and the scalar outputs valid
 * pointers.
 */
enum OrdpolStatus ordpol_tint_env_step(struct OrdpolTintEnv *env,
                                       size_t action,
                                       double *obs,
                                       size_t obs_len,
                                       double *reward,
                                       bool *done,
                                       bool *reacted);

/**
 * Releases an environment handle; null is ignored.
 *
 * # Safety
 * `env` must be null or a handle not yet freed.
 */
void ordpol_tint_env_free(struct OrdpolTintEnv *env);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORDPOL_H */
