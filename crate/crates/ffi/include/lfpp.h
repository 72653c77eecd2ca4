#ifndef LFPP_H
#define LFPP_H

#include <stddef.h>
#include <stdint.h>

// Mollifier selection for `lfpp_field_mollify`.
typedef enum LfppKernel {
  LFPP_KERNEL_HEAT = 0,
  LFPP_KERNEL_LOCALIZED = 1,
} LfppKernel;

// Status codes returned by every fallible function.
typedef enum LfppStatus {
  LFPP_STATUS_OK = 0,
  LFPP_STATUS_NULL_POINTER = 1,
  LFPP_STATUS_INVALID_ARGUMENT = 2,
  LFPP_STATUS_PRECONDITION = 3,
  LFPP_STATUS_IO = 4,
  LFPP_STATUS_FORMAT = 5,
  LFPP_STATUS_COMPUTATION = 6,
  LFPP_STATUS_PANIC = 7,
} LfppStatus;

// Opaque lattice field.
typedef struct LfppField LfppField;

// Opaque LFPP graph.
typedef struct LfppGraph LfppGraph;

// Opaque scaling table.
typedef struct LfppTable LfppTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *lfpp_last_error(void);

// Library version as a static NUL-terminated string.
const char *lfpp_version(void);

// Sample a whole-plane GFF approximation on an `nx` by `ny` lattice.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum LfppStatus lfpp_field_sample(size_t nx,
                                  size_t ny,
                                  double spacing,
                                  double origin_x,
                                  double origin_y,
                                  double torus_factor,
                                  uint64_t seed,
                                  struct LfppField **out);

// Constant field.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum LfppStatus lfpp_field_constant(size_t nx,
                                    size_t ny,
                                    double spacing,
                                    double origin_x,
                                    double origin_y,
                                    double value,
                                    struct LfppField **out);

// Field from row-major `values` of length `nx * ny`.
//
// # Safety
// `values` must point to `nx * ny` readable doubles and `out` to a handle slot.
enum LfppStatus lfpp_field_from_values(size_t nx,
                                       size_t ny,
                                       double spacing,
                                       double origin_x,
                                       double origin_y,
                                       const double *values,
                                       struct LfppField **out);

// Load an LFP1 snapshot.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a handle slot.
enum LfppStatus lfpp_field_load(const char *path, struct LfppField **out);

// Write an LFP1 snapshot.
//
// # Safety
// `field` must be a live handle and `path` a NUL-terminated string.
enum LfppStatus lfpp_field_save(const struct LfppField *field, const char *path);

// Lattice dimensions.
//
// # Safety
// `field` must be a live handle; `nx` and `ny` valid pointers.
enum LfppStatus lfpp_field_dims(const struct LfppField *field, size_t *nx, size_t *ny);

// Copy the row-major values into `buf`; invalid nodes are written as NaN.
//
// # Safety
// `field` must be a live handle and `buf` must hold `len` doubles.
enum LfppStatus lfpp_field_values(const struct LfppField *field, double *buf, size_t len);

// Mollify `field` at scale `eps` into a new handle.
//
// # Safety
// `field` must be a live handle and `out` a handle slot.
enum LfppStatus lfpp_field_mollify(const struct LfppField *field,
                                   double eps,
                                   enum LfppKernel kernel,
                                   struct LfppField **out);

// `field + c` as a new handle.
//
// # Safety
// `field` must be a live handle and `out` a handle slot.
enum LfppStatus lfpp_field_add_scalar(const struct LfppField *field,
                                      double c,
                                      struct LfppField **out);

// # Safety
// `field` must be NULL or a handle not yet freed.
void lfpp_field_free(struct LfppField *field);

// LFPP graph of an already mollified field. A positive `radius` restricts
// the graph to the open disk about `(center_x, center_y)`; otherwise every
// margin-safe node is used.
//
// # Safety
// `field` must be a live handle and `out` a handle slot.
enum LfppStatus lfpp_graph_build(const struct LfppField *field,
                                 double xi,
                                 double center_x,
                                 double center_y,
                                 double radius,
                                 struct LfppGraph **out);

// Raw LFPP distance between the nodes nearest `z` and `w`; `+inf` when
// they are disconnected.
//
// # Safety
// `graph` must be a live handle and `out` a valid pointer.
enum LfppStatus lfpp_graph_distance(const struct LfppGraph *graph,
                                    double zx,
                                    double zy,
                                    double wx,
                                    double wy,
                                    double *out);

// Raw distance around the closed annulus `A_{r1,r2}(x)`.
//
// # Safety
// `graph` must be a live handle and `out` a valid pointer.
enum LfppStatus lfpp_graph_around(const struct LfppGraph *graph,
                                  double x,
                                  double y,
                                  double r1,
                                  double r2,
                                  double *out);

// # Safety
// `graph` must be NULL or a handle not yet freed.
void lfpp_graph_free(struct LfppGraph *graph);

// Read a scaling-table CSV.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a handle slot.
enum LfppStatus lfpp_table_read(const char *path, struct LfppTable **out);

// Interpolated `a_eps`.
//
// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum LfppStatus lfpp_table_a(const struct LfppTable *table, double eps, double *out);

// Fit the exponent, store it in the table and write it to `q_hat`.
//
// # Safety
// `table` must be a live handle and `q_hat` a valid pointer.
enum LfppStatus lfpp_table_fit(struct LfppTable *table, uint64_t seed, double *q_hat);

// # Safety
// `table` must be NULL or a handle not yet freed.
void lfpp_table_free(struct LfppTable *table);

// Run a named experiment. `config` may be NULL for the defaults; when
// `report_path` is not NULL the JSON report is written there. `passed`
// receives 1 when every check passed and 0 otherwise.
//
// # Safety
// String arguments must be NUL-terminated or NULL where allowed; `passed`
// must be a valid pointer.
enum LfppStatus lfpp_experiment_run(const char *name,
                                    const char *config,
                                    const char *report_path,
                                    int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LFPP_H */
