#ifndef INTERSECT_H
#define INTERSECT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define IX_MAX_VEHICLES 4

#define IX_NUM_ACTIONS 6

typedef enum {
  IX_OUTCOME_RUNNING = 0,
  IX_OUTCOME_SUCCESS = 1,
  IX_OUTCOME_FAILURE = 2,
  IX_OUTCOME_TIMEOUT = 3,
} IxOutcome;

typedef enum {
  IX_STATUS_OK = 0,
  IX_STATUS_NULL_POINTER = 1,
  IX_STATUS_INVALID_ARGUMENT = 2,
  IX_STATUS_INVALID_CONFIG = 3,
  IX_STATUS_EPISODE_OVER = 4,
  IX_STATUS_CHECKPOINT = 5,
  IX_STATUS_INTERNAL = 6,
} IxStatus;

/**
 * Trajectory planner with default settings.
 */
typedef struct IxPlanner IxPlanner;

/**
 * Recurrent Q-network with its hidden state.
 */
typedef struct IxPolicy IxPolicy;

/**
 * One simulated episode.
 */
typedef struct IxWorld IxWorld;

typedef struct {
  /**
   * Zero for an empty observation slot; the other fields are then zero.
   */
  uint8_t exists;
  double p;
  double v;
  double a;
  double p_cross_ego;
  double delta;
} IxVehicle;

typedef struct {
  double ego_p;
  double ego_v;
  double ego_a;
  double ego_delta;
  IxVehicle vehicles[IX_MAX_VEHICLES];
} IxObservation;

typedef struct {
  uint8_t feasible;
  /**
   * Jerk to apply for the next simulation step.
   */
  double first_jerk;
  double p_comf;
  double p_crash;
} IxPlan;

typedef struct {
  size_t encoder1;
  size_t encoder2;
  size_t fusion;
  size_t lstm;
} IxNetworkDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *ix_status_message(IxStatus status);

/**
 * Spawns an episode. `d_cross <= 0` selects a single crossing, otherwise two
 * crossings that far apart along the ego path.
 *
 * # Safety
 * `out` must be valid for writes.
 */
IxStatus ix_world_new(double d_cross, uint64_t seed, IxWorld **out);

/**
 * # Safety
 * `world` must be null or a handle from `ix_world_new` not yet freed.
 */
void ix_world_free(IxWorld *world);

/**
 * Advances one simulation step with the given ego jerk.
 *
 * # Safety
 * `world` must be a live handle; `outcome` valid for writes.
 */
IxStatus ix_world_step(IxWorld *world, double jerk, IxOutcome *outcome);

/**
 * # Safety
 * `world` must be a live handle; `out` valid for writes.
 */
IxStatus ix_world_observe(const IxWorld *world, IxObservation *out);

/**
 * Number of simulation steps taken so far.
 *
 * # Safety
 * `world` must be a live handle.
 */
uint64_t ix_world_step_count(const IxWorld *world);

/**
 * # Safety
 * `out` must be valid for writes.
 */
IxStatus ix_planner_new(IxPlanner **out);

/**
 * # Safety
 * `planner` must be null or a handle from `ix_planner_new` not yet freed.
 */
void ix_planner_free(IxPlanner *planner);

/**
 * Plans the ego trajectory for `action` (0 take way, 1 give way, 2 + j follow
 * slot j) in the world's current state.
 *
 * # Safety
 * `planner` and `world` must be live handles; `out` valid for writes.
 */
IxStatus ix_planner_plan(const IxPlanner *planner,
                         const IxWorld *world,
                         uint32_t action,
                         IxPlan *out);

/**
 * Loads a checkpoint. `dims` may be null for the default layer sizes.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `dims` null or readable;
 * `out` valid for writes.
 */
IxStatus ix_policy_load(const uint8_t *bytes,
                        size_t len,
                        const IxNetworkDims *dims,
                        IxPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from `ix_policy_load` not yet freed.
 */
void ix_policy_free(IxPolicy *policy);

/**
 * Clears the recurrent state; call at the start of every episode.
 *
 * # Safety
 * `policy` must be a live handle.
 */
IxStatus ix_policy_reset(IxPolicy *policy);

/**
 * Greedy masked decision for the world's current observation. Advances the
 * recurrent state. `q` may be null, otherwise it receives `IX_NUM_ACTIONS`
 * values.
 *
 * # Safety
 * `policy` and `world` must be live handles; `action` valid for writes; `q`
 * null or valid for `IX_NUM_ACTIONS` writes.
 */
IxStatus ix_policy_act(IxPolicy *policy, const IxWorld *world, uint32_t *action, double *q);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INTERSECT_H */
