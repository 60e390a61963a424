#ifndef UIVI_H
#define UIVI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum UiviStatus {
  UIVI_STATUS_OK = 0,
  UIVI_STATUS_NULL_POINTER = 1,
  UIVI_STATUS_INVALID_ARGUMENT = 2,
  UIVI_STATUS_DIMENSION_MISMATCH = 3,
  UIVI_STATUS_NON_FINITE = 4,
  UIVI_STATUS_UNSUPPORTED = 5,
  UIVI_STATUS_QUADRATURE = 6,
  UIVI_STATUS_PARSE = 7,
  UIVI_STATUS_CONFIG = 8,
  UIVI_STATUS_IO = 9,
  UIVI_STATUS_BUFFER_TOO_SMALL = 10,
  UIVI_STATUS_PANIC = 11,
} UiviStatus;

/**
 * Semi-implicit variational family.
 */
typedef struct UiviFamily UiviFamily;

/**
 * RMSProp ascent state for one family.
 */
typedef struct UiviOptimizer UiviOptimizer;

/**
 * Seeded random-number generator.
 */
typedef struct UiviRng UiviRng;

/**
 * Unnormalized log density `log p(x, z)`.
 */
typedef struct UiviTarget UiviTarget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *uivi_version(void);

/**
 * Message for the last failed call on this thread, or `""` after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *uivi_last_error_message(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum UiviStatus uivi_rng_new(uint64_t seed, struct UiviRng **out);

/**
 * # Safety
 * `rng` must be null or a handle from [`uivi_rng_new`] that has not been freed.
 */
void uivi_rng_free(struct UiviRng *rng);

/**
 * ReLU network `eps_dim -> hidden... -> z_dim` with Xavier weights and every
 * conditional standard deviation set to `init_scale`.
 *
 * # Safety
 * `hidden` must point to `n_hidden` values (or be null when `n_hidden` is 0);
 * `rng` and `out` must be valid.
 */
enum UiviStatus uivi_family_new_mlp(size_t eps_dim,
                                    size_t z_dim,
                                    const size_t *hidden,
                                    size_t n_hidden,
                                    double init_scale,
                                    struct UiviRng *rng,
                                    struct UiviFamily **out);

/**
 * The conjugate family `eps ~ N(0, 1)`, `z | eps ~ N(a eps, sigma^2)`.
 *
 * # Safety
 * `out` must be valid.
 */
enum UiviStatus uivi_family_linear_gaussian(double a, double sigma, struct UiviFamily **out);

/**
 * Loads a checkpoint written by [`uivi_family_save`] or a training run.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum UiviStatus uivi_family_load(const char *path, struct UiviFamily **out);

/**
 * # Safety
 * `family` must be valid; `path` must be a NUL-terminated string.
 */
enum UiviStatus uivi_family_save(const struct UiviFamily *family, const char *path);

/**
 * # Safety
 * `family` must be null or a live handle.
 */
void uivi_family_free(struct UiviFamily *family);

/**
 * # Safety
 * All pointers must be valid.
 */
enum UiviStatus uivi_family_dims(const struct UiviFamily *family,
                                 size_t *eps_dim,
                                 size_t *z_dim,
                                 size_t *num_params);

/**
 * Copies the flat parameter vector (network, then raw scales) into `params`.
 *
 * # Safety
 * `params` must point to `len` writable values.
 */
enum UiviStatus uivi_family_get_params(const struct UiviFamily *family, double *params, size_t len);

/**
 * # Safety
 * `params` must point to `len` readable values.
 */
enum UiviStatus uivi_family_set_params(struct UiviFamily *family, const double *params, size_t len);

/**
 * Writes `n` draws row-major into `z` (`n * z_dim` values).
 *
 * # Safety
 * `z` must point to `len` writable values.
 */
enum UiviStatus uivi_family_sample(const struct UiviFamily *family,
                                   struct UiviRng *rng,
                                   size_t n,
                                   double *z,
                                   size_t len);

/**
 * Monte Carlo estimate of `log q(z)` from `m` mixing draws.
 *
 * # Safety
 * `z` must point to `z_len` values; `out` must be valid.
 */
enum UiviStatus uivi_family_log_density(const struct UiviFamily *family,
                                        const double *z,
                                        size_t z_len,
                                        size_t m,
                                        struct UiviRng *rng,
                                        double *out);

/**
 * Toy 2-D target by name: `banana`, `multimodal` or `x-shaped`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be valid.
 */
enum UiviStatus uivi_target_toy(const char *name, struct UiviTarget **out);

/**
 * Diagonal Gaussian `N(mean, diag(std^2))`.
 *
 * # Safety
 * `mean` and `std` must each point to `dim` values; `out` must be valid.
 */
enum UiviStatus uivi_target_gaussian(const double *mean,
                                     const double *std,
                                     size_t dim,
                                     struct UiviTarget **out);

/**
 * # Safety
 * `target` must be null or a live handle.
 */
void uivi_target_free(struct UiviTarget *target);

/**
 * # Safety
 * `target` and `out` must be valid.
 */
enum UiviStatus uivi_target_dim(const struct UiviTarget *target, size_t *out);

/**
 * Log density at `z`; also writes the gradient when `grad` is non-null.
 *
 * # Safety
 * `z` must point to `len` values; `grad`, if non-null, to `len` writable values.
 */
enum UiviStatus uivi_target_log_joint(const struct UiviTarget *target,
                                      const double *z,
                                      size_t len,
                                      double *value,
                                      double *grad);

/**
 * ELBO estimate with `n_outer` draws and `m` mixing draws for `log q`.
 *
 * # Safety
 * All handles and output pointers must be valid.
 */
enum UiviStatus uivi_elbo_estimate(const struct UiviTarget *target,
                                   const struct UiviFamily *family,
                                   size_t n_outer,
                                   size_t m,
                                   struct UiviRng *rng,
                                   double *value,
                                   double *std_error);

/**
 * Unbiased ELBO gradient (ascent direction) averaged over `samples` draws,
 * using the default reverse-conditional sampler; writes `num_params` values.
 *
 * # Safety
 * `grad` must point to `len` writable values.
 */
enum UiviStatus uivi_elbo_gradient(const struct UiviTarget *target,
                                   const struct UiviFamily *family,
                                   size_t samples,
                                   struct UiviRng *rng,
                                   double *grad,
                                   size_t len);

/**
 * # Safety
 * `family` and `out` must be valid.
 */
enum UiviStatus uivi_optimizer_new(const struct UiviFamily *family,
                                   double eta_net,
                                   double eta_scale,
                                   size_t decay_every,
                                   double decay_factor,
                                   struct UiviOptimizer **out);

/**
 * Applies one ascent step with `grad` (`num_params` values) to `family`.
 *
 * # Safety
 * `grad` must point to `len` values.
 */
enum UiviStatus uivi_optimizer_step(struct UiviOptimizer *optimizer,
                                    struct UiviFamily *family,
                                    const double *grad,
                                    size_t len);

/**
 * # Safety
 * `optimizer` must be null or a live handle.
 */
void uivi_optimizer_free(struct UiviOptimizer *optimizer);

/**
 * Runs a full experiment from a TOML configuration file. A relative
 * `output_dir` in the file is resolved against the file's directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
enum UiviStatus uivi_run_experiment(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UIVI_H */
