#ifndef BSM_H
#define BSM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsmStatus {
  BSM_STATUS_OK = 0,
  BSM_STATUS_NULL_POINTER = 1,
  BSM_STATUS_INVALID_ARGUMENT = 2,
  BSM_STATUS_DIMENSION_MISMATCH = 3,
  BSM_STATUS_ILL_CONDITIONED = 4,
  BSM_STATUS_NON_FINITE = 5,
  BSM_STATUS_UNDERDETERMINED_FIT = 6,
  BSM_STATUS_OUTSIDE_ROOM = 7,
  BSM_STATUS_INSUFFICIENT_DECAY = 8,
  BSM_STATUS_MISSING_FILE = 9,
  BSM_STATUS_MALFORMED_FILE = 10,
  BSM_STATUS_PROVENANCE = 11,
  BSM_STATUS_DIGEST = 12,
  BSM_STATUS_CONFIG = 13,
  BSM_STATUS_IO = 14,
  BSM_STATUS_PANIC = 15,
} BsmStatus;

typedef enum BsmProvenance {
  BSM_PROVENANCE_DIRECT = 0,
  BSM_PROVENANCE_REVERBERANT = 1,
  BSM_PROVENANCE_WHOLE_FIELD = 2,
} BsmProvenance;

typedef enum BsmEar {
  BSM_EAR_LEFT = 0,
  BSM_EAR_RIGHT = 1,
} BsmEar;

/**
 * Filter bank handle.
 */
typedef struct BsmFilterBank BsmFilterBank;

/**
 * Microphone array handle.
 */
typedef struct BsmGeometry BsmGeometry;

typedef struct BsmComplex {
  double re;
  double im;
} BsmComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buffer`
 * (NUL-terminated, truncated to `capacity`) and returns its full length in
 * bytes. Pass a null buffer to query the length.
 *
 * # Safety
 * `buffer` must be null or point to `capacity` writable bytes.
 */
size_t bsm_last_error_message(char *buffer, size_t capacity);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *bsm_status_name(enum BsmStatus status);

/**
 * Array of `count` microphones at spherical positions around `center`
 * (three values, meters).
 *
 * # Safety
 * Each input array must hold `count` values, `center` three, and `out`
 * must be writable.
 */
enum BsmStatus bsm_geometry_new(const double *radius,
                                const double *colatitude,
                                const double *azimuth,
                                size_t count,
                                const double *center,
                                struct BsmGeometry **out);

/**
 * `count` microphones evenly spaced on a horizontal semicircle.
 *
 * # Safety
 * `center` must hold three values and `out` must be writable.
 */
enum BsmStatus bsm_geometry_semicircle(size_t count,
                                       double radius,
                                       const double *center,
                                       struct BsmGeometry **out);

/**
 * Number of microphones, or 0 for a null handle.
 *
 * # Safety
 * `geometry` must be null or a live handle.
 */
size_t bsm_geometry_mic_count(const struct BsmGeometry *geometry);

/**
 * # Safety
 * `geometry` must be null or a handle not yet freed.
 */
void bsm_geometry_free(struct BsmGeometry *geometry);

/**
 * `M × count` steering matrix at STFT bin `bin` of an `fft_size`-point
 * transform, written column-major into `out`.
 *
 * # Safety
 * `colatitude` and `azimuth` must hold `count` values and `out` must hold
 * `M * count`.
 */
enum BsmStatus bsm_steering_matrix(const struct BsmGeometry *geometry,
                                   double sample_rate,
                                   size_t fft_size,
                                   double speed_of_sound,
                                   size_t bin,
                                   const double *colatitude,
                                   const double *azimuth,
                                   size_t count,
                                   struct BsmComplex *out);

/**
 * Regularized least-squares filter `c` (length `m`) for the `m × l`
 * steering matrix `v` and HRTF vector `h` (length `l`). `snr` is linear;
 * pass `INFINITY` for the noiseless solve.
 *
 * # Safety
 * `v` must hold `m * l` values, `h` `l`, and `out` `m`.
 */
enum BsmStatus bsm_solve_ls(const struct BsmComplex *v,
                            size_t m,
                            size_t l,
                            const struct BsmComplex *h,
                            double snr_linear,
                            struct BsmComplex *out);

/**
 * Magnitude least-squares filter. `phase_init` (length `m`) may be null;
 * `iterations` and `converged` may be null.
 *
 * # Safety
 * As [`bsm_solve_ls`]; non-null optional pointers must be valid.
 */
enum BsmStatus bsm_solve_magls(const struct BsmComplex *v,
                               size_t m,
                               size_t l,
                               const struct BsmComplex *h,
                               double snr_linear,
                               const struct BsmComplex *phase_init,
                               struct BsmComplex *out,
                               size_t *iterations,
                               bool *converged);

/**
 * Designs a filter bank for the built-in point-receiver head on the
 * one-sided grid of an `fft_size`-point STFT. `doa_count` directions come
 * from `colatitude`/`azimuth`; when both are null a spiral grid of
 * `doa_count` points is used. `magls_cutoff_hz <= 0` selects plain least
 * squares at every bin.
 *
 * # Safety
 * Non-null direction arrays must hold `doa_count` values and `out` must be
 * writable.
 */
enum BsmStatus bsm_filterbank_design(const struct BsmGeometry *geometry,
                                     double sample_rate,
                                     size_t fft_size,
                                     double speed_of_sound,
                                     const double *colatitude,
                                     const double *azimuth,
                                     size_t doa_count,
                                     double ear_offset,
                                     double snr_db,
                                     double magls_cutoff_hz,
                                     enum BsmProvenance provenance,
                                     struct BsmFilterBank **out);

/**
 * # Safety
 * `file` must be a NUL-terminated path and `out` writable.
 */
enum BsmStatus bsm_filterbank_load(const char *file, struct BsmFilterBank **out);

/**
 * # Safety
 * `bank` must be a live handle and `file` a NUL-terminated path.
 */
enum BsmStatus bsm_filterbank_save(const struct BsmFilterBank *bank, const char *file);

/**
 * Microphone count, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t bsm_filterbank_mics(const struct BsmFilterBank *bank);

/**
 * Bin count, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t bsm_filterbank_bins(const struct BsmFilterBank *bank);

/**
 * Copies the `M` coefficients of one ear at one bin into `out`.
 *
 * # Safety
 * `bank` must be a live handle and `out` must hold `M` values.
 */
enum BsmStatus bsm_filterbank_coefficients(const struct BsmFilterBank *bank,
                                           enum BsmEar which,
                                           size_t bin,
                                           struct BsmComplex *out);

/**
 * # Safety
 * `bank` must be null or a handle not yet freed.
 */
void bsm_filterbank_free(struct BsmFilterBank *bank);

/**
 * Number of one-sided bins of the standard STFT at `sample_rate`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BsmStatus bsm_stft_bins(double sample_rate, size_t *out);

/**
 * Filters `mics` channels of `len` samples (channel-major) with `bank`
 * through the standard STFT and writes `len` samples per ear.
 *
 * # Safety
 * `signals` must hold `mics * len` values, `left` and `right` `len` each.
 */
enum BsmStatus bsm_render(const struct BsmFilterBank *bank,
                          const double *signals,
                          size_t mics,
                          size_t len,
                          double sample_rate,
                          double *left,
                          double *right);

/**
 * Per-bin NMSE in dB of a binaural estimate against a reference, both
 * `len` samples per ear, over all STFT frames except `frame_trim` at each
 * edge. Bins without reference energy are written as NaN.
 *
 * # Safety
 * The four signals must hold `len` values; `left_db` and `right_db` must
 * hold the bin count of [`bsm_stft_bins`].
 */
enum BsmStatus bsm_nmse(const double *estimate_left,
                        const double *estimate_right,
                        const double *reference_left,
                        const double *reference_right,
                        size_t len,
                        double sample_rate,
                        size_t frame_trim,
                        double *left_db,
                        double *right_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSM_H */
