//! C ABI over the `loadbal` solver and simulator.
//!
//! Objects are opaque handles created by `lb_*_from_*`/`lb_solve` and released
//! with the matching `*_free`. Every fallible call returns an [`LbStatus`];
//! the text of the last failure on the calling thread is available from
//! [`lb_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use loadbal::config::ScenarioConfig;
use loadbal::flows::synthesize_flows;
use loadbal::kkt::{solve, OptimalSolution, SolverConfig};
use loadbal::network::{FlowMatrix, Network, NodeRole};
use loadbal::sim::{
    simulate_baseline, simulate_dynamic, simulate_static, Policy, SimConfig, Thresholds,
};
use loadbal::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NonConvergence = 3,
    IndexOutOfRange = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbRole {
    IdleSource = 0,
    ActiveSource = 1,
    Neutral = 2,
    Sink = 3,
    Relay = 4,
}

impl From<NodeRole> for LbRole {
    fn from(r: NodeRole) -> Self {
        match r {
            NodeRole::IdleSource => LbRole::IdleSource,
            NodeRole::ActiveSource => LbRole::ActiveSource,
            NodeRole::Neutral => LbRole::Neutral,
            NodeRole::Sink => LbRole::Sink,
            NodeRole::Relay => LbRole::Relay,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbPolicy {
    StaticOptimal = 0,
    NoBalancing = 1,
    ShortestQueue = 2,
    MinExpectedDelay = 3,
    DynamicThreshold = 4,
}

impl From<LbPolicy> for Policy {
    fn from(p: LbPolicy) -> Self {
        match p {
            LbPolicy::StaticOptimal => Policy::StaticOptimal,
            LbPolicy::NoBalancing => Policy::NoBalancing,
            LbPolicy::ShortestQueue => Policy::ShortestQueue,
            LbPolicy::MinExpectedDelay => Policy::MinExpectedDelay,
            LbPolicy::DynamicThreshold => Policy::DynamicThreshold,
        }
    }
}

/// Result of one simulation run. `ci_halfwidth` is NaN when too few jobs
/// were measured for batch means.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbSimSummary {
    pub mean_response: f64,
    pub ci_halfwidth: f64,
    pub measured_jobs: u64,
    pub transfers: u64,
}

/// Opaque network handle.
pub struct LbNetwork {
    network: Network,
    config: ScenarioConfig,
}

/// Opaque solution handle.
pub struct LbSolution {
    solution: OptimalSolution,
    flow: FlowMatrix,
    mean_response: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: LbStatus, message: impl Into<String>) -> LbStatus {
    set_error(message);
    status
}

fn status_of(e: &Error) -> LbStatus {
    match e {
        Error::NonConvergence { .. } => LbStatus::NonConvergence,
        _ => LbStatus::InvalidInput,
    }
}

/// Runs `body`, converting a panic into [`LbStatus::Panic`].
fn guard(body: impl FnOnce() -> LbStatus) -> LbStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LbStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// Message for the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next `lb_*` call on the same thread.
#[no_mangle]
pub extern "C" fn lb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a scenario JSON document into a network handle.
///
/// # Safety
/// `json` must be NULL or a valid NUL-terminated string; `out` must be NULL or
/// writable. On success `*out` owns a handle to release with
/// [`lb_network_free`].
#[no_mangle]
pub unsafe extern "C" fn lb_network_from_json(
    json: *const c_char,
    out: *mut *mut LbNetwork,
) -> LbStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(e) => return fail(LbStatus::InvalidInput, format!("input is not UTF-8: {e}")),
        };
        let config = match ScenarioConfig::from_json_str(text) {
            Ok(c) => c,
            Err(e) => return fail(LbStatus::InvalidInput, format!("invalid config: {e}")),
        };
        let network = match config.to_network() {
            Ok(n) => n,
            Err(e) => return fail(LbStatus::InvalidInput, format!("invalid config: {e}")),
        };
        *out = Box::into_raw(Box::new(LbNetwork { network, config }));
        LbStatus::Ok
    })
}

/// # Safety
/// `network` must be NULL or a handle from [`lb_network_from_json`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn lb_network_free(network: *mut LbNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// # Safety
/// `network` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_network_node_count(
    network: *const LbNetwork,
    out: *mut usize,
) -> LbStatus {
    guard(|| {
        if network.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        *out = (*network).network.len();
        LbStatus::Ok
    })
}

fn build_solution(network: &Network, solution: OptimalSolution) -> Result<LbSolution, Error> {
    let flow = synthesize_flows(network, &solution.partition, &solution.allocation.beta)?;
    Ok(LbSolution {
        mean_response: solution.mean_response_time(network),
        solution,
        flow,
    })
}

unsafe fn solve_into(network: &Network, cfg: &SolverConfig, out: *mut *mut LbSolution) -> LbStatus {
    let (solution, status) = match solve(network, cfg) {
        Ok(s) => (s, LbStatus::Ok),
        Err(Error::NonConvergence { best, iterations }) => {
            set_error(format!(
                "solver did not converge in {iterations} iterations"
            ));
            (*best, LbStatus::NonConvergence)
        }
        Err(e) => return fail(status_of(&e), e.to_string()),
    };
    match build_solution(network, solution) {
        Ok(s) => {
            *out = Box::into_raw(Box::new(s));
            status
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

/// Solves for the optimal allocation using the scenario's solver settings.
///
/// On [`LbStatus::NonConvergence`] `*out` still receives the best iterate.
///
/// # Safety
/// `network` must be a live handle or NULL; `out` must be writable or NULL.
/// A non-NULL `*out` must be released with [`lb_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn lb_solve(
    network: *const LbNetwork,
    out: *mut *mut LbSolution,
) -> LbStatus {
    guard(|| {
        if network.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let handle = &*network;
        let cfg = match handle.config.solver_config() {
            Ok(c) => c,
            Err(e) => return fail(LbStatus::InvalidInput, e.to_string()),
        };
        solve_into(&handle.network, &cfg, out)
    })
}

/// Like [`lb_solve`] with explicit tolerances for the price bisection and
/// the traffic fixed point.
///
/// # Safety
/// Same contract as [`lb_solve`].
#[no_mangle]
pub unsafe extern "C" fn lb_solve_with_tol(
    network: *const LbNetwork,
    alpha_tol: f64,
    lambda_tol: f64,
    out: *mut *mut LbSolution,
) -> LbStatus {
    guard(|| {
        if network.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let handle = &*network;
        let cfg = SolverConfig {
            alpha_tol,
            lambda_tol,
            ..SolverConfig::default()
        };
        if let Err(e) = cfg.validate() {
            return fail(LbStatus::InvalidInput, e.to_string());
        }
        solve_into(&handle.network, &cfg, out)
    })
}

/// # Safety
/// `solution` must be NULL or a handle from [`lb_solve`] that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_free(solution: *mut LbSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

unsafe fn scalar(
    solution: *const LbSolution,
    out: *mut f64,
    get: impl FnOnce(&LbSolution) -> f64,
) -> LbStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        *out = get(&*solution);
        LbStatus::Ok
    })
}

/// Common marginal delay of the sinks.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_alpha(solution: *const LbSolution, out: *mut f64) -> LbStatus {
    scalar(solution, out, |s| s.solution.alpha)
}

/// Total transfer traffic.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_lambda(
    solution: *const LbSolution,
    out: *mut f64,
) -> LbStatus {
    scalar(solution, out, |s| s.solution.allocation.lambda)
}

/// Extra marginal delay paid by sources.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_comm_price(
    solution: *const LbSolution,
    out: *mut f64,
) -> LbStatus {
    scalar(solution, out, |s| s.solution.comm_price)
}

/// Mean job response time of the allocation.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_mean_response(
    solution: *const LbSolution,
    out: *mut f64,
) -> LbStatus {
    scalar(solution, out, |s| s.mean_response)
}

/// Processing rate of node `index`.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_beta(
    solution: *const LbSolution,
    index: usize,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        let handle = &*solution;
        match handle.solution.allocation.beta.get(index) {
            Some(&b) => {
                *out = b;
                LbStatus::Ok
            }
            None => fail(
                LbStatus::IndexOutOfRange,
                format!("node index {index} out of range"),
            ),
        }
    })
}

/// Role of node `index`.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_role(
    solution: *const LbSolution,
    index: usize,
    out: *mut LbRole,
) -> LbStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        let handle = &*solution;
        match handle.solution.partition.roles.get(index) {
            Some(&r) => {
                *out = r.into();
                LbStatus::Ok
            }
            None => fail(
                LbStatus::IndexOutOfRange,
                format!("node index {index} out of range"),
            ),
        }
    })
}

/// Transfer rate from node `from` to node `to` in the synthesized flow.
///
/// # Safety
/// `solution` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_solution_flow(
    solution: *const LbSolution,
    from: usize,
    to: usize,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        let flow = &(*solution).flow;
        if from >= flow.size() || to >= flow.size() {
            return fail(
                LbStatus::IndexOutOfRange,
                format!("flow entry ({from}, {to}) out of range"),
            );
        }
        *out = flow.get(from, to);
        LbStatus::Ok
    })
}

/// Simulates `jobs` jobs under `policy` with the given seed.
///
/// Static and dynamic policies solve the network first; the dynamic policy
/// uses the optimal prices as its thresholds.
///
/// # Safety
/// `network` must be a live handle or NULL; `out` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_simulate(
    network: *const LbNetwork,
    policy: LbPolicy,
    jobs: u64,
    seed: u64,
    out: *mut LbSimSummary,
) -> LbStatus {
    guard(|| {
        if network.is_null() || out.is_null() {
            return fail(LbStatus::NullPointer, "null argument");
        }
        let handle = &*network;
        let base = match handle.config.sim_config() {
            Ok(c) => c,
            Err(e) => return fail(LbStatus::InvalidInput, e.to_string()),
        };
        let cfg = SimConfig {
            total_jobs: jobs,
            seed,
            policy: policy.into(),
            ..base
        };
        let net = &handle.network;
        let report = match cfg.policy {
            Policy::StaticOptimal | Policy::DynamicThreshold => {
                let solver = match handle.config.solver_config() {
                    Ok(c) => c,
                    Err(e) => return fail(LbStatus::InvalidInput, e.to_string()),
                };
                let solution = match solve(net, &solver).and_then(|s| build_solution(net, s)) {
                    Ok(s) => s,
                    Err(e) => return fail(status_of(&e), e.to_string()),
                };
                if cfg.policy == Policy::StaticOptimal {
                    simulate_static(net, &solution.flow, &cfg)
                } else {
                    let th = Thresholds {
                        low: solution.solution.alpha,
                        high: solution.solution.alpha + solution.solution.comm_price,
                    };
                    simulate_dynamic(net, th, &cfg)
                }
            }
            _ => simulate_baseline(net, &cfg),
        };
        match report {
            Ok(r) => {
                *out = LbSimSummary {
                    mean_response: r.mean_response_time,
                    ci_halfwidth: r.ci_halfwidth.unwrap_or(f64::NAN),
                    measured_jobs: r.measured_jobs,
                    transfers: r.transfer_count,
                };
                LbStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            let mut out = ptr::null_mut();
            assert_eq!(
                lb_network_from_json(ptr::null(), &mut out),
                LbStatus::NullPointer
            );
            assert!(!lb_last_error_message().is_null());
            let mut n = 0usize;
            assert_eq!(
                lb_network_node_count(ptr::null(), &mut n),
                LbStatus::NullPointer
            );
            lb_network_free(ptr::null_mut());
            lb_solution_free(ptr::null_mut());
        }
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(lb_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), LbStatus::Panic);
        let msg = unsafe { CStr::from_ptr(lb_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("boom"));
    }
}
