#ifndef CDPINN_H
#define CDPINN_H

#include <stddef.h>
#include <stdint.h>

typedef enum CdpinnLabel {
  CDPINN_LABEL_ACCURATE = 0,
  CDPINN_LABEL_OPPOSITE_FLOW = 1,
  CDPINN_LABEL_LINEAR = 2,
} CdpinnLabel;

typedef enum CdpinnProblem {
  CDPINN_PROBLEM_PRIMARY = 0,
  CDPINN_PROBLEM_FORCED = 1,
} CdpinnProblem;

typedef enum CdpinnStatus {
  CDPINN_STATUS_OK = 0,
  CDPINN_STATUS_NULL_POINTER = 1,
  CDPINN_STATUS_CONFIG = 2,
  CDPINN_STATUS_SHAPE = 3,
  CDPINN_STATUS_DOMAIN = 4,
  CDPINN_STATUS_SAMPLING = 5,
  CDPINN_STATUS_NUMERIC = 6,
  CDPINN_STATUS_IO = 7,
  CDPINN_STATUS_BUFFER_TOO_SMALL = 8,
  CDPINN_STATUS_PANIC = 9,
} CdpinnStatus;

// A tangent kernel together with its eigen-decomposition.
typedef struct CdpinnKernel CdpinnKernel;

// A tanh network.
typedef struct CdpinnNet CdpinnNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *cdpinn_last_error(void);

// Xavier-initialized network with layer sizes `dims[0..n_dims]`.
//
// # Safety
// `dims` must point to `n_dims` readable values and `out` must be writable.
enum CdpinnStatus cdpinn_net_new(const uintptr_t *dims,
                                 uintptr_t n_dims,
                                 uint64_t seed,
                                 struct CdpinnNet **out);

// Network from the text parameter format.
//
// # Safety
// `text` must be a NUL-terminated string and `out` must be writable.
enum CdpinnStatus cdpinn_net_from_text(const char *text, struct CdpinnNet **out);

// Text form of the parameters; release with [`cdpinn_string_free`].
// Returns NULL if `net` is NULL.
//
// # Safety
// `net` must be NULL or a live handle.
char *cdpinn_net_to_text(const struct CdpinnNet *net);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void cdpinn_string_free(char *s);

// # Safety
// `net` must be NULL or a live handle; it is invalid afterwards.
void cdpinn_net_free(struct CdpinnNet *net);

// Number of trainable parameters, 0 for NULL.
//
// # Safety
// `net` must be NULL or a live handle.
uintptr_t cdpinn_net_num_params(const struct CdpinnNet *net);

// Input dimension, 0 for NULL.
//
// # Safety
// `net` must be NULL or a live handle.
uintptr_t cdpinn_net_input_dim(const struct CdpinnNet *net);

// Evaluate `net(a * (x + b))` at `n_points` row-major points.
// `scale`/`shift` hold one entry per input coordinate; pass both NULL
// for the identity.
//
// # Safety
// Pointers must reference buffers of the stated sizes: `x` holds
// `n_points * input_dim` values and `out` at least `n_points`.
enum CdpinnStatus cdpinn_net_forward(const struct CdpinnNet *net,
                                     const double *scale,
                                     const double *shift,
                                     const double *x,
                                     uintptr_t n_points,
                                     double *out);

// Central FDM solution on `n` intervals; writes `n + 1` nodal values.
//
// # Safety
// `out` must hold at least `cap` values.
enum CdpinnStatus cdpinn_fdm_solve(enum CdpinnProblem kind,
                                   double epsilon,
                                   uintptr_t n,
                                   double *out,
                                   uintptr_t cap);

// Train `net` in place as the corrector of the reduced 1D solution on the
// lattice `k / res_div`, then classify `u_0 + c` on the evaluation grid.
//
// # Safety
// `net` must be a live 1-input handle; `scale`/`shift` each NULL or one
// value; `final_loss` and `label` NULL or writable.
enum CdpinnStatus cdpinn_train_reduced(struct CdpinnNet *net,
                                       enum CdpinnProblem kind,
                                       double epsilon,
                                       const double *scale,
                                       const double *shift,
                                       uintptr_t res_div,
                                       uintptr_t adam_epochs,
                                       uintptr_t lbfgs_epochs,
                                       double *final_loss,
                                       enum CdpinnLabel *label);

// Tangent kernel of `net` on reduced-mode samples `k / res_div`, with its
// eigen-decomposition.
//
// # Safety
// `net` must be a live 1-input handle, `scale`/`shift` NULL or one value
// each, `out` writable.
enum CdpinnStatus cdpinn_kernel_reduced(const struct CdpinnNet *net,
                                        enum CdpinnProblem kind,
                                        double epsilon,
                                        const double *scale,
                                        const double *shift,
                                        uintptr_t res_div,
                                        struct CdpinnKernel **out);

// # Safety
// `k` must be NULL or a live handle; it is invalid afterwards.
void cdpinn_kernel_free(struct CdpinnKernel *k);

// Number of observables `N = N_u + N_r`, 0 for NULL.
//
// # Safety
// `k` must be NULL or a live handle.
uintptr_t cdpinn_kernel_size(const struct CdpinnKernel *k);

// `Tr(K_uu)`, `Tr(K_rr)` and the convergence rate `Tr(K) / N`.
//
// # Safety
// `k` must be a live handle; the outputs NULL or writable.
enum CdpinnStatus cdpinn_kernel_traces(const struct CdpinnKernel *k,
                                       double *tr_uu,
                                       double *tr_rr,
                                       double *rate);

// Eigenvalues in descending order, clipped at zero.
//
// # Safety
// `k` must be a live handle and `out` hold at least `cap` values.
enum CdpinnStatus cdpinn_kernel_eigenvalues(const struct CdpinnKernel *k,
                                            double *out,
                                            uintptr_t cap);

// Row-major `N x N` kernel matrix.
//
// # Safety
// `k` must be a live handle and `out` hold at least `cap` values.
enum CdpinnStatus cdpinn_kernel_matrix(const struct CdpinnKernel *k, double *out, uintptr_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDPINN_H */
