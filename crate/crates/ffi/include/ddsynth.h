#ifndef DDSYNTH_H
#define DDSYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DdStatus {
  DD_STATUS_OK = 0,
  DD_STATUS_INVALID_ARGUMENT = 1,
  DD_STATUS_INFEASIBLE = 2,
  DD_STATUS_NUMERICAL_FAILURE = 3,
  DD_STATUS_PARSE_ERROR = 4,
  DD_STATUS_PANIC = 5,
} DdStatus;

typedef enum DdMode {
  DD_MODE_H2_SDP = 0,
  DD_MODE_DD_H2 = 1,
  DD_MODE_DD_ALPHA = 2,
  DD_MODE_DD_GAIN = 3,
  DD_MODE_DD_ONLY = 4,
} DdMode;

// A state-feedback gain with the record of its synthesis.
typedef struct DdController DdController;

// An LTI plant `ẋ = Ax + Bu + Ed`, `z = Hx`.
typedef struct DdSystem DdSystem;

// Comparison metrics of a controller.
typedef struct DdMetrics {
  // Decay rate, the negated spectral abscissa of `A + BF`.
  double f_alpha;
  double f_gain;
  double f_h2;
  double f_dd;
  bool hurwitz;
} DdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *dd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dd_version(void);

// Builds a system from row-major `A` (n×n), `B` (n×m), `E` (n×l) and `H` (p×n).
enum DdStatus dd_system_new(uintptr_t n,
                            uintptr_t m,
                            uintptr_t p,
                            uintptr_t l,
                            const double *a,
                            const double *b,
                            const double *e,
                            const double *h,
                            struct DdSystem **out);

// Parses a system file (`{n, m, p, l, A, B, E, H}`).
enum DdStatus dd_system_from_json(const char *json, struct DdSystem **out);

// The nominal four-bus power network.
enum DdStatus dd_system_power_grid(struct DdSystem **out);

// The power network with inertia and damping randomized by `seed`.
enum DdStatus dd_system_power_grid_random(uint64_t seed, struct DdSystem **out);

// Writes the dimensions `n, m, p, l`; any output pointer may be null.
enum DdStatus dd_system_dims(const struct DdSystem *sys,
                             uintptr_t *n,
                             uintptr_t *m,
                             uintptr_t *p,
                             uintptr_t *l);

void dd_system_free(struct DdSystem *sys);

// Synthesizes a controller. `config_json` is an optional run configuration
// (null for defaults); `seed` overrides its seed.
enum DdStatus dd_synthesize(const struct DdSystem *sys,
                            enum DdMode mode,
                            uint64_t seed,
                            const char *config_json,
                            struct DdController **out);

// Parses a controller file (`{m, n, F, ...}`).
enum DdStatus dd_controller_from_json(const char *json, struct DdController **out);

enum DdStatus dd_controller_dims(const struct DdController *ctrl, uintptr_t *m, uintptr_t *n);

// Copies the gain into `buf` (row-major, `len` must be at least `m·n`).
enum DdStatus dd_controller_gain(const struct DdController *ctrl, double *buf, uintptr_t len);

// Metrics recorded at synthesis; fails for controllers read without them.
enum DdStatus dd_controller_metrics(const struct DdController *ctrl, struct DdMetrics *out);

// Whether the synthesis loop met its stopping rule.
enum DdStatus dd_controller_converged(const struct DdController *ctrl, bool *out);

// Evaluates any controller on any conformable system.
enum DdStatus dd_evaluate(const struct DdSystem *sys,
                          const struct DdController *ctrl,
                          struct DdMetrics *out);

// Serializes the controller file; release the string with [`dd_string_free`].
enum DdStatus dd_controller_to_json(const struct DdController *ctrl, char **out);

void dd_controller_free(struct DdController *ctrl);

void dd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDSYNTH_H */
