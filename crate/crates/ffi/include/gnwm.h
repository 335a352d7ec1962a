/* C interface to the gnwm library. Generated by cbindgen; do not edit. */

#ifndef GNWM_H
#define GNWM_H



#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum GnwmStatus {
  GnwmStatus_Ok = 0,
  GnwmStatus_NullPointer = 1,
  GnwmStatus_InvalidArgument = 2,
  GnwmStatus_NumericError = 3,
  GnwmStatus_IoError = 4,
} GnwmStatus;

/**
 * Opaque grid topology handle.
 */
typedef struct GnwmTopology GnwmTopology;

/**
 * Thermodynamic loss breakdown.
 */
typedef struct GnwmThermoReport {
  double l_collapse;
  double l_wta;
  double l_sim;
  double l_total;
} GnwmThermoReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the most recent error message for this thread into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be null (then only
 * the length is returned).
 */
uintptr_t gnwm_last_error_message(char *buf, uintptr_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gnwm_version(void);

/**
 * Analytic floor of the expansion + contraction pair: 1/sqrt(d).
 */
double gnwm_theoretical_floor(uintptr_t d);

/**
 * Odd smearing-kernel side length for a given sigma.
 */
uintptr_t gnwm_kernel_size(double sigma);

/**
 * Thermodynamic losses over projected batches `p`, `z` (row-major
 * [batch x d], rows already on the simplex/sphere intersection).
 *
 * # Safety
 * `p` and `z` must point to `batch * d` doubles; `out` must be writable.
 */
enum GnwmStatus gnwm_thermo_loss(const double *p,
                                 const double *z,
                                 uintptr_t batch,
                                 uintptr_t d,
                                 double alpha,
                                 double gamma,
                                 struct GnwmThermoReport *out);

/**
 * New planar grid topology with its fixed Gaussian kernel. Returns null on
 * invalid arguments.
 */
struct GnwmTopology *gnwm_topology_new_planar(uintptr_t height, uintptr_t width, double sigma);

/**
 * New 1D ring topology. Returns null on invalid arguments.
 */
struct GnwmTopology *gnwm_topology_new_ring(uintptr_t nodes, double sigma);

/**
 * Node count D of a topology; 0 for null handles.
 */
uintptr_t gnwm_topology_node_count(const struct GnwmTopology *topo);

/**
 * Release a topology handle.
 *
 * # Safety
 * `topo` must be a pointer from `gnwm_topology_new_*`, passed at most once.
 */
void gnwm_topology_free(struct GnwmTopology *topo);

/**
 * Topological smearing followed by the simplex/sphere projection.
 *
 * `logits` and `out` are row-major [batch x D] where D is the topology's
 * node count; rows of `out` are nonnegative with unit L2 norm.
 *
 * # Safety
 * `logits` and `out` must point to `batch * D` doubles.
 */
enum GnwmStatus gnwm_smear_project(const struct GnwmTopology *topo,
                                   const double *logits,
                                   uintptr_t batch,
                                   double *out);

/**
 * Index of the one-hot that grid snapping would produce (argmax, ties to
 * the lowest index).
 *
 * # Safety
 * `p` must point to `d` doubles; `out_index` must be writable.
 */
enum GnwmStatus gnwm_snap_index(const double *p, uintptr_t d, uintptr_t *out_index);

/**
 * Solve a Euclidean TSP instance with the elastic ring.
 *
 * `coords` is row-major [n_cities x 2] in the unit square. The visiting
 * permutation lands in `out_order` (length `n_cities`) and the closed tour
 * length in `out_length`. `steps == 0` or `restarts == 0` select the
 * defaults (3000 / 5).
 *
 * # Safety
 * `coords` must point to `2 * n_cities` doubles; `out_order` to
 * `n_cities` usize slots; `out_length` must be writable.
 */
enum GnwmStatus gnwm_tsp_solve(const double *coords,
                               uintptr_t n_cities,
                               uintptr_t restarts,
                               uintptr_t steps,
                               uint64_t seed,
                               uintptr_t *out_order,
                               double *out_length);

/**
 * Run a full training job from files: a dataset container plus an optional
 * flat config, writing checkpoints and metrics into `out_dir`.
 *
 * # Safety
 * Paths must be NUL-terminated UTF-8 strings; `config_path` may be null.
 */
enum GnwmStatus gnwm_train_file(const char *dataset_path,
                                const char *config_path,
                                const char *out_dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* GNWM_H */
