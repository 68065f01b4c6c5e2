#ifndef PINNFLOW_H
#define PINNFLOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * 2-D incompressible flow; `re` is the Reynolds number.
 */
#define PF_PHYSICS_NS2D 0

/**
 * 3-D, ten outputs including learned stresses; `re` is the Reynolds number.
 */
#define PF_PHYSICS_RANS3D 1

/**
 * 3-D with stresses fixed at zero (four outputs).
 */
#define PF_PHYSICS_RANS3D_ZERO_STRESS 2

/**
 * 3-D, ten outputs, viscosity taken from the model's learned coefficient; `re` is ignored.
 */
#define PF_PHYSICS_RANS3D_INVERSE 3

/**
 * Inverse problem with zero stresses (four outputs); `re` is ignored.
 */
#define PF_PHYSICS_RANS3D_INVERSE_ZERO_STRESS 4

/**
 * Result codes.
 */
typedef enum {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_ARGUMENT = 2,
  PF_STATUS_CONFIG = 3,
  PF_STATUS_DIMENSION = 4,
  PF_STATUS_NUMERIC = 5,
  PF_STATUS_IO = 6,
  PF_STATUS_PARSE = 7,
  PF_STATUS_PANIC = 8,
} PfStatus;

/**
 * A trained network loaded from a checkpoint.
 */
typedef struct PfModel PfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next pinnflow call on this thread.
 */
const char *pf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

/**
 * Loads a checkpoint file into a new model handle stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
PfStatus pf_model_load(const char *path, PfModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`pf_model_load`] and not have been freed.
 */
void pf_model_free(PfModel *model);

/**
 * Input and output widths of the network.
 *
 * # Safety
 * `model` must be a live handle; `n_inputs` and `n_outputs` valid pointers.
 */
PfStatus pf_model_dims(const PfModel *model, size_t *n_inputs, size_t *n_outputs);

/**
 * The learned PDE coefficient. `Config` when the model carries none.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
PfStatus pf_model_coefficient(const PfModel *model, double *out);

/**
 * Network outputs at `n` points. `x` holds `n × n_inputs` values and `out`
 * receives `n × n_outputs`.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
PfStatus pf_model_forward(const PfModel *model, const double *x, size_t n, double *out);

/**
 * Outputs with first and pure second input partials at `n` points.
 *
 * `values` receives `n × n_outputs`; `first` and `second` receive
 * `n × n_outputs × n_inputs`, indexed `[point][output][input]`.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
PfStatus pf_model_input_derivatives(const PfModel *model,
                                    const double *x,
                                    size_t n,
                                    double *values,
                                    double *first,
                                    double *second);

/**
 * Number of residual components per point for a physics code: the momentum
 * equations followed by continuity. Zero for an unknown code.
 */
size_t pf_residual_width(uint32_t physics);

/**
 * PDE residuals of the model at `n` points; `out` receives
 * `n × pf_residual_width(physics)` values.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
PfStatus pf_model_residuals(const PfModel *model,
                            uint32_t physics,
                            double re,
                            const double *x,
                            size_t n,
                            double *out);

/**
 * Relative L2 error ‖pred − truth‖ / ‖truth‖ over `n` values.
 *
 * # Safety
 * `pred` and `truth` must hold `n` doubles; `out` must be valid.
 */
PfStatus pf_relative_l2(const double *pred, const double *truth, size_t n, double *out);

/**
 * Runs a command-line invocation in-process (`argv[0]` is the program
 * name) and returns its exit code: 0 success, 1 usage error, 2 runtime
 * failure, -1 for bad arguments to this function.
 *
 * # Safety
 * `argv` must point to `argc` NUL-terminated strings.
 */
int pf_run_cli(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PINNFLOW_H */
