#ifndef MFG_HOMOG_H
#define MFG_HOMOG_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum MfgStatus {
  MFG_STATUS_OK = 0,
  MFG_STATUS_NULL_POINTER = 1,
  MFG_STATUS_INVALID_INPUT = 2,
  MFG_STATUS_UNSUPPORTED = 3,
  MFG_STATUS_NO_CONVERGENCE = 4,
  MFG_STATUS_NUMERICAL = 5,
  MFG_STATUS_BUFFER_TOO_SMALL = 6,
  MFG_STATUS_PANIC = 7,
} MfgStatus;

// A solved cell problem together with the query that produced it.
typedef struct MfgCellSolution MfgCellSolution;

// A validated potential.
typedef struct MfgPotential MfgPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mfg_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `cap`). Returns the untruncated length without the NUL.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t mfg_last_error_message(char *buf, size_t cap);

// Builds one of the named presets: `zero`, `separable-default`,
// `y-independent`, `linear-default`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum MfgStatus mfg_potential_preset(const char *name, struct MfgPotential **out);

// Builds a potential from its JSON description, e.g.
// `{"kind":"y-independent","g":{"shape":"arctan","amplitude":1,"rate":1}}`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum MfgStatus mfg_potential_from_json(const char *json, struct MfgPotential **out);

// # Safety
// `pot` must be null or a handle from this library not yet freed.
void mfg_potential_free(struct MfgPotential *pot);

// Solves the cell problem at `(p, alpha)` on a `dim`-dimensional grid with
// `n` points per axis. Tolerances of zero select the defaults.
//
// # Safety
// `pot` must be a live handle, `p` must point to `dim` values, `out` must be valid.
enum MfgStatus mfg_cell_solve(const struct MfgPotential *pot,
                              size_t dim,
                              size_t n,
                              const double *p,
                              double alpha,
                              double newton_tol,
                              double fixedpoint_tol,
                              struct MfgCellSolution **out);

// # Safety
// `sol` must be null or a handle from this library not yet freed.
void mfg_cell_free(struct MfgCellSolution *sol);

// Effective Hamiltonian. Returns NaN for a null handle.
//
// # Safety
// `sol` must be null or a live handle.
double mfg_cell_h_bar(const struct MfgCellSolution *sol);

// Number of grid points, the length of the `u` and `m` buffers.
//
// # Safety
// `sol` must be null or a live handle.
size_t mfg_cell_grid_points(const struct MfgCellSolution *sol);

// Effective drift, `dim` values.
//
// # Safety
// `sol` must be a live handle; `buf` must hold `cap` doubles; `len_out` may be null.
enum MfgStatus mfg_cell_b_bar(const struct MfgCellSolution *sol,
                              double *buf,
                              size_t cap,
                              size_t *len_out);

// Corrector `u` on the grid (index `i + N j`).
//
// # Safety
// As for [`mfg_cell_b_bar`].
enum MfgStatus mfg_cell_u(const struct MfgCellSolution *sol,
                          double *buf,
                          size_t cap,
                          size_t *len_out);

// Invariant density `m` on the grid (index `i + N j`).
//
// # Safety
// As for [`mfg_cell_b_bar`].
enum MfgStatus mfg_cell_m(const struct MfgCellSolution *sol,
                          double *buf,
                          size_t cap,
                          size_t *len_out);

// Gradient of the effective Hamiltonian in `P`, `dim` values.
//
// # Safety
// As for [`mfg_cell_b_bar`].
enum MfgStatus mfg_cell_dh_dp(const struct MfgCellSolution *sol,
                              double *buf,
                              size_t cap,
                              size_t *len_out);

// Derivative of the effective Hamiltonian in `alpha` (requires `alpha > 0`).
//
// # Safety
// `sol` must be a live handle and `out` a valid pointer.
enum MfgStatus mfg_cell_dh_dalpha(const struct MfgCellSolution *sol, double *out);

// Finite-noise effective Hamiltonian for a constant symmetric Hessian `x`
// (row-major, `dim * dim`), the potential averaged on an `n`-point grid.
//
// # Safety
// `pot` must be a live handle, `x` must hold `dim * dim` values, `p` `dim`
// values, and `out` must be valid.
enum MfgStatus mfg_finite_noise_h(const struct MfgPotential *pot,
                                  size_t dim,
                                  size_t n,
                                  const double *x,
                                  const double *p,
                                  double alpha,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFG_HOMOG_H */
