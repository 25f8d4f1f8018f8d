/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef ISOSPIN_H
#define ISOSPIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IsospinStatus {
  ISOSPIN_STATUS_OK = 0,
  ISOSPIN_STATUS_NULL_POINTER = 1,
  ISOSPIN_STATUS_INVALID_INPUT = 2,
  ISOSPIN_STATUS_NUMERICAL = 3,
  ISOSPIN_STATUS_IO = 4,
  ISOSPIN_STATUS_PANIC = 5,
} IsospinStatus;

typedef struct IsospinBath IsospinBath;

typedef struct IsospinDensity IsospinDensity;

typedef struct IsospinModel IsospinModel;

typedef struct IsospinRegistry IsospinRegistry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *isospin_last_error(void);

/**
 * Library version as a static string.
 */
const char *isospin_version(void);

/**
 * The bundled isotope registry. Boron ratios are unset until supplied with
 * [`isospin_registry_set_gamma`].
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IsospinStatus isospin_registry_bundled(struct IsospinRegistry **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IsospinStatus isospin_registry_load(const char *path, struct IsospinRegistry **out);

/**
 * Sets the gyromagnetic ratio (MHz/G) of one isotope.
 *
 * # Safety
 * `registry` must come from this library; `isotope` must be NUL-terminated.
 */
enum IsospinStatus isospin_registry_set_gamma(struct IsospinRegistry *registry,
                                              const char *isotope,
                                              double gamma_n);

/**
 * # Safety
 * `registry` must come from this library or be null.
 */
void isospin_registry_free(struct IsospinRegistry *registry);

/**
 * The bundled three-nitrogen defect model.
 *
 * # Safety
 * `registry` must come from this library and `out` be a valid pointer.
 */
enum IsospinStatus isospin_model_bundled(const struct IsospinRegistry *registry,
                                         struct IsospinModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated, `registry` from this library, `out` valid.
 */
enum IsospinStatus isospin_model_load(const char *path,
                                      const struct IsospinRegistry *registry,
                                      struct IsospinModel **out);

/**
 * # Safety
 * `model` must come from this library and `out` be valid.
 */
enum IsospinStatus isospin_model_nucleus_count(const struct IsospinModel *model, size_t *out);

/**
 * Perturbative drive coupling (MHz) of nucleus `index` for a transverse
 * drive of `b_dr` G at in-plane angle `theta`, electron in `m_s = -1`.
 *
 * # Safety
 * `model` must come from this library; `re` and `im` must be valid.
 */
enum IsospinStatus isospin_model_omega(const struct IsospinModel *model,
                                       size_t index,
                                       double bz,
                                       double b_dr,
                                       double theta,
                                       double *re,
                                       double *im);

/**
 * Strongest nuclear transition (MHz) of the exact spectrum at field `bz`.
 *
 * # Safety
 * `model` must come from this library and `out` be valid.
 */
enum IsospinStatus isospin_model_dominant_line(const struct IsospinModel *model,
                                               double bz,
                                               double *out);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void isospin_model_free(struct IsospinModel *model);

/**
 * An empty bath.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum IsospinStatus isospin_bath_new(struct IsospinBath **out);

/**
 * # Safety
 * `path` must be NUL-terminated, `registry` from this library, `out` valid.
 */
enum IsospinStatus isospin_bath_load(const char *path,
                                     const struct IsospinRegistry *registry,
                                     struct IsospinBath **out);

/**
 * Appends a site fully occupied by `isotope` with coupling `azz` MHz.
 *
 * # Safety
 * Handles must come from this library; `isotope` must be NUL-terminated.
 */
enum IsospinStatus isospin_bath_add_isotope(struct IsospinBath *bath,
                                            const struct IsospinRegistry *registry,
                                            const char *isotope,
                                            double azz);

/**
 * Appends a natural-abundance site of `element` with
 * `Azz = coupling_per_gamma * gamma_n` for each isotope.
 *
 * # Safety
 * Handles must come from this library; `element` must be NUL-terminated.
 */
enum IsospinStatus isospin_bath_add_natural(struct IsospinBath *bath,
                                            const struct IsospinRegistry *registry,
                                            const char *element,
                                            double coupling_per_gamma);

/**
 * # Safety
 * `bath` must come from this library and `out` be valid.
 */
enum IsospinStatus isospin_bath_site_count(const struct IsospinBath *bath, size_t *out);

/**
 * # Safety
 * `bath` must come from this library or be null.
 */
void isospin_bath_free(struct IsospinBath *bath);

/**
 * Spectral density by convolution. `f_max <= 0` selects the smallest
 * window that holds the full support.
 *
 * # Safety
 * `bath` must come from this library and `out` be valid.
 */
enum IsospinStatus isospin_density_fft(const struct IsospinBath *bath,
                                       double bin_width,
                                       double f_max,
                                       struct IsospinDensity **out);

/**
 * Spectral density by enumerating every configuration.
 *
 * # Safety
 * `bath` must come from this library and `out` be valid.
 */
enum IsospinStatus isospin_density_bruteforce(const struct IsospinBath *bath,
                                              double bin_width,
                                              struct IsospinDensity **out);

/**
 * Number of bins.
 *
 * # Safety
 * `density` must come from this library and `out` be valid.
 */
enum IsospinStatus isospin_density_len(const struct IsospinDensity *density, size_t *out);

/**
 * Copies bin offsets (MHz) and densities (1/MHz) into caller buffers of
 * length `len`, which must equal [`isospin_density_len`]. Either buffer
 * may be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold `len` doubles.
 */
enum IsospinStatus isospin_density_copy(const struct IsospinDensity *density,
                                        double *offsets,
                                        double *values,
                                        size_t len);

/**
 * Bin width (MHz) and the grid quantization bound (MHz).
 *
 * # Safety
 * `density` must come from this library; outputs may be null.
 */
enum IsospinStatus isospin_density_info(const struct IsospinDensity *density,
                                        double *bin_width,
                                        double *quantization_error);

/**
 * # Safety
 * `density` must come from this library or be null.
 */
void isospin_density_free(struct IsospinDensity *density);

/**
 * Four binomial line weights for polarization `p`, in ascending frequency;
 * `reversed` selects the order of a negative gyromagnetic ratio.
 *
 * # Safety
 * `out` must hold 4 doubles.
 */
enum IsospinStatus isospin_polarization_amplitudes(double p, bool reversed, double *out);

/**
 * Runs a scenario file (or `bundle:` name) into `out_dir`. The status
 * reports whether the call could be made; `exit_code` receives the
 * runner's 0/2/3 convention and the manifest lands in `out_dir`.
 *
 * # Safety
 * Strings must be NUL-terminated; `exit_code` must be valid.
 */
enum IsospinStatus isospin_run_scenario(const char *scenario_path,
                                        const char *out_dir,
                                        int *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISOSPIN_H */
