//! C ABI over the simulator, the trajectory planner and a trained policy.
//!
//! Every handle is opaque and owned by the caller, who must free it with its
//! matching `*_free` function. Functions return an [`IxStatus`]; outputs are
//! written through pointers only on `IX_STATUS_OK`. Panics never cross the boundary.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use intersect::dqn::{load_checkpoint, normalize, FeatureScale, LstmState, Network, NetworkConfig, QMask};
use intersect::mpc::{MpcConfig, MpcPlanner};
use intersect::sim::{spawn_episode, OutcomeKind, SimConfig, World};
use intersect::topology::PathTopology;
use intersect::{Action, Error, MAX_VEHICLES, NUM_ACTIONS};

// Literals so the generated header is self-contained.
pub const IX_MAX_VEHICLES: usize = 4;
pub const IX_NUM_ACTIONS: usize = 6;
const _: () = assert!(IX_MAX_VEHICLES == MAX_VEHICLES && IX_NUM_ACTIONS == NUM_ACTIONS);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    EpisodeOver = 4,
    Checkpoint = 5,
    Internal = 6,
}

impl From<Error> for IxStatus {
    fn from(e: Error) -> Self {
        match e {
            Error::OutOfRange { .. } | Error::InvalidInput(_) => IxStatus::InvalidArgument,
            Error::InvalidConfig(_) | Error::ConfigParse(_) => IxStatus::InvalidConfig,
            Error::EpisodeOver => IxStatus::EpisodeOver,
            Error::Checkpoint(_) => IxStatus::Checkpoint,
            Error::Io(_) | Error::Csv(_) => IxStatus::Internal,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IxOutcome {
    Running = 0,
    Success = 1,
    Failure = 2,
    Timeout = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IxVehicle {
    /// Zero for an empty observation slot; the other fields are then zero.
    pub exists: u8,
    pub p: f64,
    pub v: f64,
    pub a: f64,
    pub p_cross_ego: f64,
    pub delta: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IxObservation {
    pub ego_p: f64,
    pub ego_v: f64,
    pub ego_a: f64,
    pub ego_delta: f64,
    pub vehicles: [IxVehicle; IX_MAX_VEHICLES],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IxPlan {
    pub feasible: u8,
    /// Jerk to apply for the next simulation step.
    pub first_jerk: f64,
    pub p_comf: f64,
    pub p_crash: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IxNetworkDims {
    pub encoder1: usize,
    pub encoder2: usize,
    pub fusion: usize,
    pub lstm: usize,
}

/// One simulated episode.
pub struct IxWorld(World);

/// Trajectory planner with default settings.
pub struct IxPlanner(MpcPlanner);

/// Recurrent Q-network with its hidden state.
pub struct IxPolicy {
    net: Network,
    state: LstmState,
    scale: FeatureScale,
}

fn guard(f: impl FnOnce() -> Result<(), IxStatus>) -> IxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IxStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => IxStatus::Internal,
    }
}

fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), IxStatus> {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn observation(world: &World) -> IxObservation {
    let obs = world.observe();
    let mut out = IxObservation {
        ego_p: obs.ego.p,
        ego_v: obs.ego.v,
        ego_a: obs.ego.a,
        ego_delta: obs.ego.delta,
        ..Default::default()
    };
    for (dst, src) in out.vehicles.iter_mut().zip(obs.vehicles.iter()) {
        if src.exists {
            *dst = IxVehicle { exists: 1, p: src.p, v: src.v, a: src.a, p_cross_ego: src.p_cross_ego, delta: src.delta };
        }
    }
    out
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn ix_status_message(status: IxStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        IxStatus::Ok => b"ok\0",
        IxStatus::NullPointer => b"null pointer argument\0",
        IxStatus::InvalidArgument => b"invalid argument\0",
        IxStatus::InvalidConfig => b"invalid configuration\0",
        IxStatus::EpisodeOver => b"episode already terminated\0",
        IxStatus::Checkpoint => b"checkpoint rejected\0",
        IxStatus::Internal => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// Spawns an episode. `d_cross <= 0` selects a single crossing, otherwise two
/// crossings that far apart along the ego path.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ix_world_new(d_cross: f64, seed: u64, out: *mut *mut IxWorld) -> IxStatus {
    guard(|| {
        if out.is_null() {
            return Err(IxStatus::NullPointer);
        }
        let topology = if d_cross <= 0.0 { PathTopology::single() } else { PathTopology::double(d_cross)? };
        boxed(out, IxWorld(spawn_episode(Arc::new(topology), &SimConfig::default(), seed)))
    })
}

/// # Safety
/// `world` must be null or a handle from `ix_world_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ix_world_free(world: *mut IxWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Advances one simulation step with the given ego jerk.
///
/// # Safety
/// `world` must be a live handle; `outcome` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ix_world_step(world: *mut IxWorld, jerk: f64, outcome: *mut IxOutcome) -> IxStatus {
    guard(|| {
        let (Some(w), false) = (world.as_mut(), outcome.is_null()) else {
            return Err(IxStatus::NullPointer);
        };
        if !jerk.is_finite() {
            return Err(IxStatus::InvalidArgument);
        }
        let (_, done) = w.0.step(jerk)?;
        *outcome = match done.map(|o| o.kind) {
            None => IxOutcome::Running,
            Some(OutcomeKind::Success) => IxOutcome::Success,
            Some(OutcomeKind::Failure) => IxOutcome::Failure,
            Some(OutcomeKind::Timeout) => IxOutcome::Timeout,
        };
        Ok(())
    })
}

/// # Safety
/// `world` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ix_world_observe(world: *const IxWorld, out: *mut IxObservation) -> IxStatus {
    guard(|| {
        let (Some(w), false) = (world.as_ref(), out.is_null()) else {
            return Err(IxStatus::NullPointer);
        };
        *out = observation(&w.0);
        Ok(())
    })
}

/// Number of simulation steps taken so far.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ix_world_step_count(world: *const IxWorld) -> u64 {
    world.as_ref().map_or(0, |w| w.0.step_count() as u64)
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ix_planner_new(out: *mut *mut IxPlanner) -> IxStatus {
    guard(|| {
        if out.is_null() {
            return Err(IxStatus::NullPointer);
        }
        boxed(out, IxPlanner(MpcPlanner::new(MpcConfig::default())?))
    })
}

/// # Safety
/// `planner` must be null or a handle from `ix_planner_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ix_planner_free(planner: *mut IxPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// Plans the ego trajectory for `action` (0 take way, 1 give way, 2 + j follow
/// slot j) in the world's current state.
///
/// # Safety
/// `planner` and `world` must be live handles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ix_planner_plan(
    planner: *const IxPlanner,
    world: *const IxWorld,
    action: u32,
    out: *mut IxPlan,
) -> IxStatus {
    guard(|| {
        let (Some(p), Some(w), false) = (planner.as_ref(), world.as_ref(), out.is_null()) else {
            return Err(IxStatus::NullPointer);
        };
        let action = Action::from_index(action as usize).ok_or(IxStatus::InvalidArgument)?;
        let plan = p.0.plan(w.0.ego(), &w.0.observe(), action)?;
        *out = IxPlan {
            feasible: plan.feasible as u8,
            first_jerk: plan.first_jerk,
            p_comf: plan.p_comf,
            p_crash: plan.p_crash(),
        };
        Ok(())
    })
}

/// Loads a checkpoint. `dims` may be null for the default layer sizes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `dims` null or readable;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ix_policy_load(
    bytes: *const u8,
    len: usize,
    dims: *const IxNetworkDims,
    out: *mut *mut IxPolicy,
) -> IxStatus {
    guard(|| {
        if bytes.is_null() || out.is_null() {
            return Err(IxStatus::NullPointer);
        }
        let config = dims.as_ref().map_or_else(NetworkConfig::default, |d| NetworkConfig {
            encoder1: d.encoder1,
            encoder2: d.encoder2,
            fusion: d.fusion,
            lstm: d.lstm,
        });
        let net = load_checkpoint(std::slice::from_raw_parts(bytes, len), &config)?;
        let state = net.initial_state();
        boxed(out, IxPolicy { net, state, scale: FeatureScale::default() })
    })
}

/// # Safety
/// `policy` must be null or a handle from `ix_policy_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ix_policy_free(policy: *mut IxPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Clears the recurrent state; call at the start of every episode.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ix_policy_reset(policy: *mut IxPolicy) -> IxStatus {
    guard(|| {
        let p = policy.as_mut().ok_or(IxStatus::NullPointer)?;
        p.state = p.net.initial_state();
        Ok(())
    })
}

/// Greedy masked decision for the world's current observation. Advances the
/// recurrent state. `q` may be null, otherwise it receives `IX_NUM_ACTIONS`
/// values.
///
/// # Safety
/// `policy` and `world` must be live handles; `action` valid for writes; `q`
/// null or valid for `IX_NUM_ACTIONS` writes.
#[no_mangle]
pub unsafe extern "C" fn ix_policy_act(
    policy: *mut IxPolicy,
    world: *const IxWorld,
    action: *mut u32,
    q: *mut f64,
) -> IxStatus {
    guard(|| {
        let (Some(p), Some(w), false) = (policy.as_mut(), world.as_ref(), action.is_null()) else {
            return Err(IxStatus::NullPointer);
        };
        let obs = w.0.observe();
        let values = p.net.forward(&normalize(&obs, &p.scale), &mut p.state);
        *action = QMask::from_observation(&obs).argmax(&values) as u32;
        if !q.is_null() {
            std::slice::from_raw_parts_mut(q, NUM_ACTIONS).copy_from_slice(&values);
        }
        Ok(())
    })
}
