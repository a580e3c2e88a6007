#ifndef POLYBESOV_H
#define POLYBESOV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_NOT_ADMISSIBLE = 3,
  PB_STATUS_DIVERGENT = 4,
  PB_STATUS_IO = 5,
  PB_STATUS_NUMERICAL = 6,
  PB_STATUS_BUFFER_TOO_SMALL = 7,
  PB_STATUS_PANIC = 99,
} PbStatus;

/**
 * Assembled double layer system.
 */
typedef struct PbBemSystem PbBemSystem;

/**
 * Wavelet coefficients of one function.
 */
typedef struct PbField PbField;

/**
 * Polyhedral surface.
 */
typedef struct PbSurface PbSurface;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Report schema version, a static NUL-terminated string.
 */
const char *pb_schema_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated).
 * `needed` receives the buffer size required, including the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null with `len == 0`.
 */
enum PbStatus pb_last_error_message(char *buf, uintptr_t len, uintptr_t *needed);

/**
 * Loads a surface: `cube`, `fichera` or a path to a JSON description.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out_surface` a valid pointer.
 */
enum PbStatus pb_surface_load(const char *name, struct PbSurface **out_surface);

/**
 * # Safety
 * `surface` must come from `pb_surface_load` and not be used afterwards; null is ignored.
 */
void pb_surface_free(struct PbSurface *surface);

/**
 * # Safety
 * Handles and out-pointers must be valid.
 */
enum PbStatus pb_surface_num_patches(const struct PbSurface *surface, uintptr_t *out_count);

/**
 * Analyzes a built-in model function (`vertex:N,BETA`, `edge:N,BETA`, `exp:VX,VY,VZ`,
 * `const:C`, `edgedist:N1,N2,BETA,INNER,OUTER`) up to level `level`.
 * `basis` is `haar` or `linear`.
 *
 * # Safety
 * Strings must be NUL-terminated; handles and out-pointers valid.
 */
enum PbStatus pb_field_analyze_model(const struct PbSurface *surface,
                                     const char *model,
                                     const char *basis,
                                     uint32_t level,
                                     struct PbField **out_field);

/**
 * Reads a coefficient dump written by `pb_field_save` or the CLI.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_field` valid.
 */
enum PbStatus pb_field_load(const char *path, struct PbField **out_field);

/**
 * # Safety
 * `field` must be a valid handle and `path` NUL-terminated.
 */
enum PbStatus pb_field_save(const struct PbField *field, const char *path);

/**
 * # Safety
 * `field` must come from this library and not be used afterwards; null is ignored.
 */
void pb_field_free(struct PbField *field);

/**
 * Number of wavelet coefficients (generators excluded).
 *
 * # Safety
 * Handle and out-pointer must be valid.
 */
enum PbStatus pb_field_num_wavelets(const struct PbField *field, uintptr_t *out_count);

/**
 * Besov-type norm with parameters `(alpha, p, q)`; pass `INFINITY` for infinite indices.
 *
 * # Safety
 * Handles and out-pointer must be valid.
 */
enum PbStatus pb_besov_norm(const struct PbSurface *surface,
                            const struct PbField *field,
                            double alpha,
                            double p,
                            double q,
                            double *out_value);

/**
 * Best `n`-term errors in the `(alpha, p, p)` sequence norm for each entry of `ns`.
 *
 * # Safety
 * `ns` and `out_errors` must point to `count` elements each.
 */
enum PbStatus pb_nterm_errors(const struct PbField *field,
                              double alpha,
                              double p,
                              const uintptr_t *ns,
                              uintptr_t count,
                              double *out_errors);

/**
 * Predicted best n-term exponent for a source `(a0, p0, q0)` and a target `(a1, p1, p1)`.
 *
 * # Safety
 * `out_rate` must be valid.
 */
enum PbStatus pb_predicted_rate(double a0,
                                double p0,
                                double q0,
                                double a1,
                                double p1,
                                double *out_rate);

/**
 * Assembles the double layer Galerkin matrix with `4^level` cells per patch.
 *
 * # Safety
 * Handle and out-pointer must be valid.
 */
enum PbStatus pb_bem_assemble(const struct PbSurface *surface,
                              uint32_t level,
                              struct PbBemSystem **out_system);

/**
 * # Safety
 * `system` must come from `pb_bem_assemble`; null is ignored.
 */
void pb_bem_free(struct PbBemSystem *system);

/**
 * Number of cells (unknowns).
 *
 * # Safety
 * Handle and out-pointer must be valid.
 */
enum PbStatus pb_bem_len(const struct PbBemSystem *system, uintptr_t *out_len);

/**
 * Solves with right-hand side given by one value of `g` per cell (cell order as in the
 * density CSV). Writes the density and the relative residual.
 *
 * # Safety
 * `cell_values` and `out_density` must point to `len` elements; `out_residual` may be null.
 */
enum PbStatus pb_bem_solve(const struct PbBemSystem *system,
                           const double *cell_values,
                           uintptr_t len,
                           double *out_density,
                           double *out_residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYBESOV_H */
