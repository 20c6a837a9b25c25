#ifndef SQFN_H
#define SQFN_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum SqfnStatus {
  SQFN_STATUS_OK = 0,
  SQFN_STATUS_NULL_POINTER = 1,
  SQFN_STATUS_INVALID_UTF8 = 2,
  SQFN_STATUS_BUFFER_TOO_SMALL = 3,
  SQFN_STATUS_DOMAIN = 10,
  SQFN_STATUS_ARGUMENT = 11,
  SQFN_STATUS_RESOURCE = 12,
  SQFN_STATUS_NUMERIC = 13,
  SQFN_STATUS_CONSISTENCY = 14,
  SQFN_STATUS_CONFIG = 15,
  SQFN_STATUS_FIT = 16,
  SQFN_STATUS_NON_FINITE = 17,
  SQFN_STATUS_IO = 18,
  SQFN_STATUS_SERIALIZATION = 19,
  SQFN_STATUS_PANIC = 99,
} SqfnStatus;

// Opaque box grid.
typedef struct SqfnGrid SqfnGrid;

// Opaque spectral decomposition of `L = -Δ + V`.
typedef struct SqfnOperator SqfnOperator;

// Opaque potential sampled on a grid, with its critical-radius table.
typedef struct SqfnPotential SqfnPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t sqfn_last_error(char *buf, size_t len);

// Static NUL-terminated version string.
const char *sqfn_version(void);

// # Safety
// `out` must be valid for one pointer write.
enum SqfnStatus sqfn_grid_new(size_t dim,
                              double half_width,
                              size_t points_per_axis,
                              struct SqfnGrid **out);

// # Safety
// `grid` must be null or a handle from [`sqfn_grid_new`] not yet freed.
void sqfn_grid_free(struct SqfnGrid *grid);

// Number of grid nodes, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t sqfn_grid_node_count(const struct SqfnGrid *grid);

// Writes the `dim` coordinates of node `index`.
//
// # Safety
// `grid` must be live; `out` valid for `len` doubles.
enum SqfnStatus sqfn_grid_node(const struct SqfnGrid *grid, size_t index, double *out, size_t len);

// `V = c |x|^beta` (`beta = 0` gives a constant) with reverse-Hölder
// exponent `s`. Computes the critical-radius table.
//
// # Safety
// `grid` must be live; `out` valid for one pointer write.
enum SqfnStatus sqfn_potential_power(const struct SqfnGrid *grid,
                                     double c,
                                     double beta,
                                     double s,
                                     struct SqfnPotential **out);

// Potential from one nonnegative value per grid node.
//
// # Safety
// `grid` must be live; `values` valid for `len` doubles; `out` for one pointer write.
enum SqfnStatus sqfn_potential_table(const struct SqfnGrid *grid,
                                     const double *values,
                                     size_t len,
                                     double s,
                                     struct SqfnPotential **out);

// # Safety
// `potential` must be null or a live handle.
void sqfn_potential_free(struct SqfnPotential *potential);

// Critical radius at every node.
//
// # Safety
// `potential` must be live; `out` valid for `len` doubles.
enum SqfnStatus sqfn_potential_rho(const struct SqfnPotential *potential, double *out, size_t len);

// Assembles and diagonalizes the discrete operator; fails with
// `SQFN_STATUS_RESOURCE` above `node_cap` nodes.
//
// # Safety
// `potential` must be live; `out` valid for one pointer write.
enum SqfnStatus sqfn_operator_new(const struct SqfnPotential *potential,
                                  size_t node_cap,
                                  struct SqfnOperator **out);

// # Safety
// `op` must be null or a live handle.
void sqfn_operator_free(struct SqfnOperator *op);

// Ascending eigenvalues.
//
// # Safety
// `op` must be live; `out` valid for `len` doubles.
enum SqfnStatus sqfn_operator_eigenvalues(const struct SqfnOperator *op, double *out, size_t len);

// Heat kernel `e^{-tL}(x, y)` as a row-major N×N matrix.
//
// # Safety
// `op` must be live; `out` valid for `len` doubles.
enum SqfnStatus sqfn_heat_kernel(const struct SqfnOperator *op, double t, double *out, size_t len);

// Poisson kernel `e^{-t√L}(x, y)` by subordination with `n_quad` nodes.
//
// # Safety
// `op` must be live; `out` valid for `len` doubles.
enum SqfnStatus sqfn_poisson_kernel(const struct SqfnOperator *op,
                                    double t,
                                    size_t n_quad,
                                    double *out,
                                    size_t len);

// Square function `g^{L,q}` of an `n`-component field in `l^r_n`
// (`r = INFINITY` allowed). `field` is node-major, length `N * n`;
// `out` receives one value per node.
//
// # Safety
// `op` must be live; `field` valid for `field_len` doubles, `out` for `len`.
enum SqfnStatus sqfn_g_function(const struct SqfnOperator *op,
                                double q,
                                double r,
                                size_t n,
                                const double *field,
                                size_t field_len,
                                double *out,
                                size_t len);

// Runs the boundedness suite and envelope fits of a JSON run config and
// writes `report.json`, `tables/` and `log.txt` into `out_dir`.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum SqfnStatus sqfn_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQFN_H */
