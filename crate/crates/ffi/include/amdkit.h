#ifndef AMDKIT_H
#define AMDKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Label of points that belong to no state.
 */
#define AMD_OUTSIDE UINT64_MAX

typedef enum AmdStatus {
  AMD_STATUS_OK = 0,
  AMD_STATUS_NULL_POINTER = 1,
  AMD_STATUS_INVALID_INPUT = 2,
  AMD_STATUS_CONFIG = 3,
  AMD_STATUS_NO_EXIT = 4,
  AMD_STATUS_BUDGET = 5,
  AMD_STATUS_NUMERICAL = 6,
  AMD_STATUS_IO = 7,
  AMD_STATUS_RUNTIME = 8,
  AMD_STATUS_PANIC = 9,
} AmdStatus;

typedef struct AmdRateGraph AmdRateGraph;

typedef struct AmdRun AmdRun;

typedef struct AmdSystem AmdSystem;

/*
 One exit event.
 */
typedef struct AmdExit {
  uint64_t from;
  uint64_t to;
  uint64_t region;
  double exit_time;
  uint64_t residence_steps;
  uint64_t wall_steps;
  double factor;
} AmdExit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread ("" if none). Valid until
 the next failing call on the same thread.
 */
const char *amd_last_error(void);

/*
 Library version, static storage.
 */
const char *amd_version(void);

/*
 Build a system (surface, dynamics, states, method) from run-config TOML.
 */
enum AmdStatus amd_system_from_toml(const char *toml, struct AmdSystem **out);

void amd_system_free(struct AmdSystem *sys);

size_t amd_system_dim(const struct AmdSystem *sys);

enum AmdStatus amd_system_energy(const struct AmdSystem *sys,
                                 const double *x,
                                 size_t dim,
                                 double *out);

/*
 Writes `dim` gradient components into `grad`.
 */
enum AmdStatus amd_system_gradient(const struct AmdSystem *sys,
                                   const double *x,
                                   size_t dim,
                                   double *grad);

/*
 State label of `x`, or `AMD_OUTSIDE`.
 */
enum AmdStatus amd_system_classify(const struct AmdSystem *sys,
                                   const double *x,
                                   size_t dim,
                                   uint64_t *out);

/*
 One exit from the state containing `x` with the configured method,
 using stream `index` of `seed`.
 */
enum AmdStatus amd_system_exit(const struct AmdSystem *sys,
                               const double *x,
                               size_t dim,
                               uint64_t seed,
                               uint64_t index,
                               struct AmdExit *out);

/*
 Execute a full run config in memory (`seed` replaces the config seed).
 */
enum AmdStatus amd_run_from_toml(const char *toml, uint64_t seed, struct AmdRun **out);

/*
 events.csv contents; owned by the run.
 */
const char *amd_run_events_csv(const struct AmdRun *run);

const char *amd_run_trajectory_csv(const struct AmdRun *run);

/*
 summary as compact JSON; owned by the run.
 */
const char *amd_run_summary_json(const struct AmdRun *run);

/*
 Write the run directory (events, trajectory, summary, manifest).
 */
enum AmdStatus amd_run_write(const struct AmdRun *run, const char *dir);

void amd_run_free(struct AmdRun *run);

struct AmdRateGraph *amd_rate_graph_new(void);

void amd_rate_graph_free(struct AmdRateGraph *g);

/*
 Set k(i → j); zero removes the edge.
 */
enum AmdStatus amd_rate_graph_set_rate(struct AmdRateGraph *g, uint64_t i, uint64_t j, double rate);

double amd_rate_graph_total_rate(const struct AmdRateGraph *g, uint64_t i);

/*
 Sample one kMC exit from `i` with stream `index` of `seed`.
 */
enum AmdStatus amd_rate_graph_sample_exit(const struct AmdRateGraph *g,
                                          uint64_t i,
                                          uint64_t seed,
                                          uint64_t index,
                                          double *time,
                                          uint64_t *next);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMDKIT_H */
