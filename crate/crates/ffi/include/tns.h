/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef TNS_H
#define TNS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TnsStatus {
  TNS_STATUS_OK = 0,
  TNS_STATUS_NULL_POINTER = 1,
  TNS_STATUS_INVALID_ARGUMENT = 2,
  TNS_STATUS_SHAPE_MISMATCH = 3,
  TNS_STATUS_RESOURCE_LIMIT = 4,
  TNS_STATUS_NUMERICAL = 5,
  TNS_STATUS_IO = 6,
  TNS_STATUS_PANIC = 7,
} TnsStatus;

typedef enum TnsVariant {
  TNS_VARIANT_STANDARD = 0,
  TNS_VARIANT_MODIFIED = 1,
} TnsVariant;

/**
 * Coarse-graining settings.
 */
typedef struct TnsConfigHandle TnsConfigHandle;

/**
 * A labelled dense tensor.
 */
typedef struct TnsTensorHandle TnsTensorHandle;

/**
 * Outcome of a free-energy run.
 */
typedef struct TnsFreeEnergy {
  double log_z;
  double log_z_per_site;
  double free_energy_per_site;
  double seconds;
} TnsFreeEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *tns_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tns_version(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum TnsStatus tns_config_new(size_t chi, struct TnsConfigHandle **out);

/**
 * # Safety
 * `cfg` must be null or a live handle from [`tns_config_new`].
 */
void tns_config_free(struct TnsConfigHandle *cfg);

/**
 * `variant` takes a [`TnsVariant`] value; anything else is rejected.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum TnsStatus tns_config_set_variant(struct TnsConfigHandle *cfg, int32_t variant);

/**
 * Boundary treatment: `rank == 0` is exact, otherwise a rank cut.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum TnsStatus tns_config_set_boundary_rank(struct TnsConfigHandle *cfg, size_t rank);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum TnsStatus tns_config_set_seed(struct TnsConfigHandle *cfg, uint64_t seed);

/**
 * Free energy of the uniform ferromagnet on a `2^l` periodic lattice.
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid for writes.
 */
enum TnsStatus tns_free_energy(const struct TnsConfigHandle *cfg,
                               size_t dim,
                               uint32_t l,
                               double beta,
                               double field,
                               struct TnsFreeEnergy *out);

/**
 * Internal energy and magnetization per site at zero field, the latter
 * through a symmetry-breaking field `m_field > 0`. Either output may be null.
 *
 * # Safety
 * `cfg` must be a live handle; non-null outputs must be valid for writes.
 */
enum TnsStatus tns_observables(const struct TnsConfigHandle *cfg,
                               size_t dim,
                               uint32_t l,
                               double beta,
                               double m_field,
                               double *out_u,
                               double *out_m);

/**
 * ln Z per site of the infinite square lattice.
 */
double tns_onsager_log_z_per_site(double beta);

/**
 * Copies `data` (row-major, last leg fastest) into a new tensor.
 *
 * # Safety
 * `shape` and `legs` must hold `rank` entries, `data` the product of the
 * shape, and `out` must be valid for writes.
 */
enum TnsStatus tns_tensor_new(size_t rank,
                              const size_t *shape,
                              const double *data,
                              const char *const *legs,
                              struct TnsTensorHandle **out);

/**
 * # Safety
 * `t` must be null or a live tensor handle.
 */
void tns_tensor_free(struct TnsTensorHandle *t);

/**
 * Number of legs, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
size_t tns_tensor_rank(const struct TnsTensorHandle *t);

/**
 * Number of entries, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
size_t tns_tensor_len(const struct TnsTensorHandle *t);

/**
 * Writes the shape into `buf`, which must hold `cap >= rank` entries.
 *
 * # Safety
 * `t` must be a live handle and `buf` valid for `cap` writes.
 */
enum TnsStatus tns_tensor_shape(const struct TnsTensorHandle *t, size_t *buf, size_t cap);

/**
 * Writes the entries into `buf`, which must hold `cap >= len` values.
 *
 * # Safety
 * `t` must be a live handle and `buf` valid for `cap` writes.
 */
enum TnsStatus tns_tensor_data(const struct TnsTensorHandle *t, double *buf, size_t cap);

/**
 * Contracts leg `legs_a[i]` of `a` with `legs_b[i]` of `b` for each of the
 * `n_pairs` pairs. Free legs of `a` come first in the result.
 *
 * # Safety
 * `a`, `b` must be live handles, the leg arrays hold `n_pairs` strings and
 * `out` be valid for writes.
 */
enum TnsStatus tns_contract(const struct TnsTensorHandle *a,
                            const struct TnsTensorHandle *b,
                            size_t n_pairs,
                            const char *const *legs_a,
                            const char *const *legs_b,
                            struct TnsTensorHandle **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TNS_H */
