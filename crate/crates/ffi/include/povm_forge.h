#ifndef POVM_FORGE_H
#define POVM_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_DOMAIN = 3,
  PF_STATUS_DIMENSION_MISMATCH = 4,
  PF_STATUS_REFUSED = 5,
  PF_STATUS_PARSE = 6,
  PF_STATUS_IO = 7,
  // The reconstruction finished without meeting its stopping rule. The
  // handle is still written.
  PF_STATUS_NOT_CONVERGED = 8,
  PF_STATUS_PANIC = 99,
} PfStatus;

// Probe ensemble with per-probe outcome frequencies.
typedef struct PfDataset PfDataset;

// Diagonal POVM set.
typedef struct PfPovm PfPovm;

// Reconstructed POVM with solver metadata.
typedef struct PfReconstruction PfReconstruction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *pf_last_error(void);

// Library version as a static NUL-terminated string.
const char *pf_version(void);

// Builds a detector POVM from a spec string such as `apd:0.5`,
// `tmd:0.5,0.5/0.1` or `builtin:paper-tmd-8bin,0.48`.
//
// # Safety
// `spec` must be a NUL-terminated string; `out` must be writable.
enum PfStatus pf_povm_from_spec(const char *spec, uintptr_t truncation, struct PfPovm **out);

// # Safety
// `povm` must be null or a handle from this library not yet freed.
void pf_povm_free(struct PfPovm *povm);

// Number of outcomes, or 0 for a null handle.
//
// # Safety
// `povm` must be null or a live handle.
uintptr_t pf_povm_outcomes(const struct PfPovm *povm);

// Highest photon number `N`; diagonals have `N + 1` entries. 0 for null.
//
// # Safety
// `povm` must be null or a live handle.
uintptr_t pf_povm_truncation(const struct PfPovm *povm);

// Copies the diagonal of element `outcome` into `out[0..len]`, where `len`
// must equal `truncation + 1`.
//
// # Safety
// `povm` must be a live handle and `out` must hold `len` doubles.
enum PfStatus pf_povm_diag(const struct PfPovm *povm,
                           uintptr_t outcome,
                           double *out,
                           uintptr_t len);

// Simulates a dataset for `count` probes with mean photon numbers `means`
// at the default laser parameters. `shots == 0` gives exact probabilities.
//
// # Safety
// `povm` must be a live handle, `means` must hold `count` doubles and `out`
// must be writable.
enum PfStatus pf_dataset_simulate(const struct PfPovm *povm,
                                  const double *means,
                                  uintptr_t count,
                                  uint64_t shots,
                                  uint64_t seed,
                                  struct PfDataset **out);

// # Safety
// `dataset` must be null or a handle from this library not yet freed.
void pf_dataset_free(struct PfDataset *dataset);

// # Safety
// `dataset` must be null or a live handle.
uintptr_t pf_dataset_probes(const struct PfDataset *dataset);

// # Safety
// `dataset` must be null or a live handle.
uintptr_t pf_dataset_outcomes(const struct PfDataset *dataset);

// Copies the frequency table row-major (probe-major) into `out[0..len]`,
// `len = probes × outcomes`.
//
// # Safety
// `dataset` must be a live handle and `out` must hold `len` doubles.
enum PfStatus pf_dataset_frequencies(const struct PfDataset *dataset, double *out, uintptr_t len);

// Reconstructs a POVM with `dimension` photon-number entries per element.
// On [`PfStatus::NotConverged`] the best iterate is still written to `out`.
//
// # Safety
// `dataset` must be a live handle and `out` must be writable.
enum PfStatus pf_reconstruct(const struct PfDataset *dataset,
                             uintptr_t dimension,
                             double smoothing,
                             struct PfReconstruction **out);

// # Safety
// `rec` must be null or a handle from this library not yet freed.
void pf_reconstruction_free(struct PfReconstruction *rec);

// Copies the reconstructed POVM into a new handle owned by the caller.
//
// # Safety
// `rec` must be a live handle and `out` must be writable.
enum PfStatus pf_reconstruction_povm(const struct PfReconstruction *rec, struct PfPovm **out);

// RMS residual of the fit, or NaN for a null handle.
//
// # Safety
// `rec` must be null or a live handle.
double pf_reconstruction_residual(const struct PfReconstruction *rec);

// # Safety
// `rec` must be null or a live handle.
uintptr_t pf_reconstruction_iterations(const struct PfReconstruction *rec);

// Average optical power in watts for a probe of mean photon number
// `mean_photon` per pulse.
//
// # Safety
// `out` must be writable.
enum PfStatus pf_mean_photon_to_power(double mean_photon,
                                      double wavelength_m,
                                      double rep_rate_hz,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POVM_FORGE_H */
