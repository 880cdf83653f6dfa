//! C ABI over the netbridge solver.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free`. Every fallible call returns an [`NbStatus`] and
//! leaves a message for [`nb_last_error_message`] on failure. Nodes are
//! numbered from 1, time steps from 0, matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use netbridge::calibrate::{calibrate_temperature, Problem};
use netbridge::cli::CliError;
use netbridge::metrics::chain_free_energy;
use netbridge::{load_graph, BridgeSolution, DirectedGraph, Marginal, NodeId, SolverConfig, Temperature};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Infeasible = 4,
    NotConverged = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Where a calibrated temperature sits.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbBoundary {
    Interior = 0,
    Zero = 1,
    Infinite = 2,
}

pub struct NbGraph {
    graph: DirectedGraph,
}

pub struct NbBridge {
    graph: DirectedGraph,
    temperature: f64,
    solution: BridgeSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut msg = msg.into().into_bytes();
    msg.retain(|&b| b != 0);
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (NbStatus, String);

fn fail(status: NbStatus, msg: impl Into<String>) -> Failure {
    (status, msg.into())
}

fn from_lib<E: Into<CliError>>(e: E) -> Failure {
    let e: CliError = e.into();
    let status = match e.exit_code() {
        2 => NbStatus::Infeasible,
        3 => NbStatus::NotConverged,
        _ => match e {
            CliError::Graph(netbridge::GraphError::Parse { .. }) => NbStatus::Parse,
            _ => NbStatus::InvalidArgument,
        },
    };
    (status, e.to_string())
}

fn guard<F>(f: F) -> NbStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NbStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn nb_status_str(status: NbStatus) -> *const c_char {
    let s: &'static CStr = match status {
        NbStatus::Ok => c"ok",
        NbStatus::NullPointer => c"null pointer",
        NbStatus::InvalidArgument => c"invalid argument",
        NbStatus::Parse => c"parse error",
        NbStatus::Infeasible => c"infeasible",
        NbStatus::NotConverged => c"not converged",
        NbStatus::BufferTooSmall => c"buffer too small",
        NbStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Parses a graph document `{"n": .., "edges": [{"from", "to", "length"}]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nb_graph_from_json(json: *const c_char, out: *mut *mut NbGraph) -> NbStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(fail(NbStatus::NullPointer, "null argument"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| fail(NbStatus::Parse, format!("graph text is not UTF-8: {e}")))?;
        let graph = load_graph(text).map_err(from_lib)?;
        *out = Box::into_raw(Box::new(NbGraph { graph }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from [`nb_graph_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nb_graph_free(graph: *mut NbGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of nodes, 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nb_graph_node_count(graph: *const NbGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.node_count())
}

unsafe fn marginal(w: *const f64, n: usize) -> Result<Marginal, Failure> {
    if w.is_null() {
        return Err(fail(NbStatus::NullPointer, "null marginal"));
    }
    let v = std::slice::from_raw_parts(w, n).to_vec();
    Marginal::new(v).map_err(from_lib)
}

fn solve(
    g: &NbGraph,
    nu0: &Marginal,
    nu_n: &Marginal,
    steps: usize,
    temperature: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Box<NbBridge>, Failure> {
    let cfg = SolverConfig { tol, max_iter };
    let solution = Problem::new(&g.graph, nu0, nu_n, steps)
        .solve(temperature, &cfg)
        .map_err(from_lib)?;
    Ok(Box::new(NbBridge {
        graph: g.graph.clone(),
        temperature,
        solution,
    }))
}

/// Solves the bridge over the Boltzmann prior at `temperature` with
/// marginals `nu0`, `nu_n` of length `n` (the node count).
///
/// # Safety
/// Pointers must be valid; `nu0` and `nu_n` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_solve(
    graph: *const NbGraph,
    nu0: *const f64,
    nu_n: *const f64,
    n: usize,
    steps: usize,
    temperature: f64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut NbBridge,
) -> NbStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| fail(NbStatus::NullPointer, "null graph"))?;
        if out.is_null() {
            return Err(fail(NbStatus::NullPointer, "null output"));
        }
        if n != g.graph.node_count() {
            return Err(fail(
                NbStatus::InvalidArgument,
                format!("marginals have {n} entries, graph has {} nodes", g.graph.node_count()),
            ));
        }
        let b = solve(g, &marginal(nu0, n)?, &marginal(nu_n, n)?, steps, temperature, tol, max_iter)?;
        *out = Box::into_raw(b);
        Ok(())
    })
}

/// Point-mass version of [`nb_bridge_solve`] with default tolerances.
///
/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_solve_delta(
    graph: *const NbGraph,
    from: usize,
    to: usize,
    steps: usize,
    temperature: f64,
    out: *mut *mut NbBridge,
) -> NbStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| fail(NbStatus::NullPointer, "null graph"))?;
        if out.is_null() {
            return Err(fail(NbStatus::NullPointer, "null output"));
        }
        let n = g.graph.node_count();
        let nu0 = Marginal::delta(n, NodeId(from)).map_err(from_lib)?;
        let nu_n = Marginal::delta(n, NodeId(to)).map_err(from_lib)?;
        let d = SolverConfig::default();
        *out = Box::into_raw(solve(g, &nu0, &nu_n, steps, temperature, d.tol, d.max_iter)?);
        Ok(())
    })
}

/// # Safety
/// `bridge` must come from a solve call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_free(bridge: *mut NbBridge) {
    if !bridge.is_null() {
        drop(Box::from_raw(bridge));
    }
}

/// Number of steps `N`, 0 for NULL.
///
/// # Safety
/// `bridge` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_horizon(bridge: *const NbBridge) -> usize {
    bridge.as_ref().map_or(0, |b| b.solution.horizon())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(NbStatus::NullPointer, "null buffer"));
    }
    if len < values.len() {
        return Err(fail(
            NbStatus::BufferTooSmall,
            format!("buffer holds {len} doubles, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Writes the `(N+1) x n` marginal flow into `out`.
///
/// # Safety
/// `bridge` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_marginal_flow(bridge: *const NbBridge, out: *mut f64, len: usize) -> NbStatus {
    guard(|| {
        let b = bridge.as_ref().ok_or_else(|| fail(NbStatus::NullPointer, "null bridge"))?;
        let flow = b.solution.marginal_flow();
        copy_out(&flow.iter().copied().collect::<Vec<_>>(), out, len)
    })
}

/// Writes the `n x n` policy matrix of step `t` into `out`.
///
/// # Safety
/// `bridge` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_transition(
    bridge: *const NbBridge,
    t: usize,
    out: *mut f64,
    len: usize,
) -> NbStatus {
    guard(|| {
        let b = bridge.as_ref().ok_or_else(|| fail(NbStatus::NullPointer, "null bridge"))?;
        let pi = b.solution.transitions().get(t).ok_or_else(|| {
            fail(
                NbStatus::InvalidArgument,
                format!("step {t} out of range 0..{}", b.solution.horizon()),
            )
        })?;
        copy_out(&pi.iter().copied().collect::<Vec<_>>(), out, len)
    })
}

/// Average length, entropy (nats) and free energy of the bridge. Any of the
/// output pointers may be NULL.
///
/// # Safety
/// `bridge` must be live; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nb_bridge_efficiency(
    bridge: *const NbBridge,
    length: *mut f64,
    entropy: *mut f64,
    free_energy: *mut f64,
) -> NbStatus {
    guard(|| {
        let b = bridge.as_ref().ok_or_else(|| fail(NbStatus::NullPointer, "null bridge"))?;
        let r = chain_free_energy(&b.solution, b.temperature, &b.graph);
        for (p, v) in [(length, r.length), (entropy, r.entropy), (free_energy, r.free_energy)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Temperature whose `from -> to` bridge has average length `l_bar`.
/// Boundary outcomes report `0` or `INFINITY` with the matching flag.
///
/// # Safety
/// `graph` must be live and the output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn nb_calibrate(
    graph: *const NbGraph,
    from: usize,
    to: usize,
    steps: usize,
    l_bar: f64,
    tol: f64,
    temperature: *mut f64,
    boundary: *mut NbBoundary,
) -> NbStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| fail(NbStatus::NullPointer, "null graph"))?;
        if temperature.is_null() || boundary.is_null() {
            return Err(fail(NbStatus::NullPointer, "null output"));
        }
        let n = g.graph.node_count();
        let nu0 = Marginal::delta(n, NodeId(from)).map_err(from_lib)?;
        let nu_n = Marginal::delta(n, NodeId(to)).map_err(from_lib)?;
        let problem = Problem::new(&g.graph, &nu0, &nu_n, steps);
        let c = calibrate_temperature(&problem, l_bar, tol, &SolverConfig::default()).map_err(from_lib)?;
        let (t, b) = match c.temperature {
            Temperature::Zero => (0.0, NbBoundary::Zero),
            Temperature::Infinite => (f64::INFINITY, NbBoundary::Infinite),
            Temperature::Finite(t) => (t, NbBoundary::Interior),
        };
        *temperature = t;
        *boundary = b;
        Ok(())
    })
}
