//! Temperature analysis of bridges over the Boltzmann prior.
//!
//! The expected length `E_T[l]` of the bridge increases with `T`, from the
//! minimal achievable length at `T -> 0` to the uniform-path average at
//! `T -> inf`, with `dE/dT = Var_T[l] / T^2`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bridge::{solve_schrodinger, BridgeError, BridgeSolution, Marginal, SolverConfig};
use crate::graph::{DirectedGraph, GraphError, NodeId, Path};
use crate::metrics::{chain_average_length, chain_entropy, MetricsError, PathMeasure};
use crate::prior::{boltzmann_prior_toward, check_temperature, PriorChain, PriorError, Temperature};

/// Variance and tracked masses switch from enumeration to recursions above
/// this many paths.
pub const ENUMERATION_LIMIT: usize = 100_000;
pub const MAX_TRACKED_PATHS: usize = 1_000;
/// Smallest and largest temperatures probed while bracketing.
pub const BRACKET_EXPONENTS: [i32; 3] = [2, 4, 6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("length budget {budget} outside the achievable range [{lower}, {upper}]")]
    BudgetOutOfRange { budget: f64, lower: f64, upper: f64 },
    #[error("every admissible path has the same length {0}; temperature is not identifiable")]
    ConstantLength(f64),
    #[error("temperature grid is empty")]
    EmptyGrid,
    #[error("calibration stalled at T={temperature} with length {achieved}")]
    NotConverged { temperature: f64, achieved: f64 },
    #[error("no feasible path between the marginal supports")]
    NoFeasiblePath,
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Marginals and horizon of a transport problem on a fixed graph.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub graph: &'a DirectedGraph,
    pub nu0: &'a Marginal,
    pub nu_n: &'a Marginal,
    pub horizon: usize,
}

impl<'a> Problem<'a> {
    pub fn new(graph: &'a DirectedGraph, nu0: &'a Marginal, nu_n: &'a Marginal, horizon: usize) -> Self {
        Self {
            graph,
            nu0,
            nu_n,
            horizon,
        }
    }

    fn delta_endpoints(&self) -> Option<(NodeId, NodeId)> {
        let single = |nu: &Marginal| {
            let s: Vec<usize> = (0..nu.len()).filter(|&i| nu.weights()[i] > 0.0).collect();
            (s.len() == 1).then(|| NodeId::from_index(s[0]))
        };
        Some((single(self.nu0)?, single(self.nu_n)?))
    }

    /// Boltzmann prior at `T`, re-weighted toward the final support.
    pub fn prior(&self, temperature: f64) -> Result<PriorChain, PriorError> {
        boltzmann_prior_toward(self.graph, temperature, self.horizon, &self.nu_n.support())
    }

    pub fn solve(&self, temperature: f64, cfg: &SolverConfig) -> Result<BridgeSolution, CalibrationError> {
        let prior = self.prior(temperature)?;
        Ok(solve_schrodinger(&prior, self.nu0, self.nu_n, cfg)?)
    }

    /// The `T -> inf` bridge: the prior is the 0/1 adjacency kernel.
    pub fn solve_uniform_limit(&self, cfg: &SolverConfig) -> Result<BridgeSolution, CalibrationError> {
        let n = self.graph.node_count();
        let mut a = Array2::<f64>::zeros((n, n));
        for (i, j, _) in self.graph.edges() {
            a[[i, j]] = 1.0;
        }
        let prior = PriorChain::homogeneous(a, self.horizon, ndarray::Array1::from_elem(n, 1.0 / n as f64))?;
        Ok(solve_schrodinger(&prior, self.nu0, self.nu_n, cfg)?)
    }

    /// Feasible paths from the initial support into the final support, or
    /// `None` if there are more than `cap`.
    pub fn admissible_paths(&self, cap: usize) -> Result<Option<Vec<Path>>, CalibrationError> {
        let targets = self.nu_n.support();
        let mut out = Vec::new();
        for (i, &w) in self.nu0.weights().iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let remaining = cap.saturating_sub(out.len());
            match self
                .graph
                .enumerate_paths_capped(self.horizon, Some(NodeId::from_index(i)), None, remaining.max(1))
            {
                Ok(paths) => out.extend(paths.into_iter().filter(|p| targets[p.last().unwrap()])),
                Err(GraphError::PathCapExceeded { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
            if out.len() > cap {
                return Ok(None);
            }
        }
        Ok(Some(out))
    }
}

/// Expected path length of the bridge at temperature `T`.
pub fn expected_length_at(problem: &Problem<'_>, temperature: f64, cfg: &SolverConfig) -> Result<f64, CalibrationError> {
    let sol = problem.solve(temperature, cfg)?;
    Ok(chain_average_length(&sol, problem.graph))
}

/// Mean and variance of the path length by explicit enumeration.
pub fn length_moments_enumerated(
    sol: &BridgeSolution,
    g: &DirectedGraph,
    paths: &[Path],
) -> Result<(f64, f64), CalibrationError> {
    let mut mean = 0.0;
    let mut second = 0.0;
    for p in paths {
        let w = sol.path_probability(p)?;
        if w > 0.0 {
            let l = g.path_length(p);
            mean += w * l;
            second += w * l * l;
        }
    }
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// Mean and variance of the path length by a forward recursion over the
/// chain, carrying first and second partial-length moments per node.
pub fn length_moments_recursive(sol: &BridgeSolution, g: &DirectedGraph) -> (f64, f64) {
    let n = sol.node_count();
    let mut mass: Vec<f64> = sol.marginals().row(0).to_vec();
    let mut first = vec![0.0; n];
    let mut second = vec![0.0; n];
    for pi in sol.transitions() {
        let mut next_mass = vec![0.0; n];
        let mut next_first = vec![0.0; n];
        let mut next_second = vec![0.0; n];
        for ((i, j), &p) in pi.indexed_iter() {
            if p == 0.0 || mass[i] == 0.0 {
                continue;
            }
            let l = g.length(i, j);
            next_mass[j] += p * mass[i];
            next_first[j] += p * (first[i] + mass[i] * l);
            next_second[j] += p * (second[i] + 2.0 * first[i] * l + mass[i] * l * l);
        }
        mass = next_mass;
        first = next_first;
        second = next_second;
    }
    let mean: f64 = first.iter().sum();
    let m2: f64 = second.iter().sum();
    (mean, (m2 - mean * mean).max(0.0))
}

/// Variance of the path length under the bridge, by enumeration when there
/// are at most [`ENUMERATION_LIMIT`] admissible paths.
pub fn length_variance(problem: &Problem<'_>, sol: &BridgeSolution) -> Result<f64, CalibrationError> {
    match problem.admissible_paths(ENUMERATION_LIMIT)? {
        Some(paths) => Ok(length_moments_enumerated(sol, problem.graph, &paths)?.1),
        None => Ok(length_moments_recursive(sol, problem.graph).1),
    }
}

/// Range of expected lengths reachable by some temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthBounds {
    pub lower: f64,
    pub upper: f64,
}

/// For point-mass marginals the bounds are the minimal and mean length of
/// the `x0 -> xN` paths. Otherwise the upper bound is the adjacency-prior
/// bridge length and the lower bound is the bridge length at `T = 1e-6`.
pub fn length_bounds(problem: &Problem<'_>, cfg: &SolverConfig) -> Result<LengthBounds, CalibrationError> {
    if let Some((x0, x_n)) = problem.delta_endpoints() {
        if let Some(paths) = problem.admissible_paths(ENUMERATION_LIMIT)? {
            if paths.is_empty() {
                return Err(CalibrationError::NoFeasiblePath);
            }
            let lengths: Vec<f64> = paths.iter().map(|p| problem.graph.path_length(p)).collect();
            let lower = lengths.iter().copied().fold(f64::INFINITY, f64::min);
            let upper = lengths.iter().sum::<f64>() / lengths.len() as f64;
            debug_assert!(paths.iter().all(|p| p.first() == Some(x0.index()) && p.last() == Some(x_n.index())));
            return Ok(LengthBounds { lower, upper });
        }
    }
    let upper = chain_average_length(&problem.solve_uniform_limit(cfg)?, problem.graph);
    let tiny = 10f64.powi(-BRACKET_EXPONENTS[BRACKET_EXPONENTS.len() - 1]);
    let lower = expected_length_at(problem, tiny, cfg)?;
    Ok(LengthBounds { lower, upper })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub temperature: Temperature,
    pub achieved_length: f64,
    pub entropy: f64,
    pub bounds: LengthBounds,
    pub evaluations: usize,
}

/// Finds the temperature whose bridge has expected length `budget`.
///
/// Budgets equal (within `tol`) to the lower or upper bound return the
/// symbolic temperatures `0` and `inf`; budgets outside the bounds are
/// errors.
pub fn calibrate_temperature(
    problem: &Problem<'_>,
    budget: f64,
    tol: f64,
    cfg: &SolverConfig,
) -> Result<Calibration, CalibrationError> {
    let bounds = length_bounds(problem, cfg)?;
    if bounds.upper - bounds.lower <= 1e-12 * bounds.upper.abs().max(1.0) {
        return Err(CalibrationError::ConstantLength(bounds.lower));
    }
    let out_of_range = CalibrationError::BudgetOutOfRange {
        budget,
        lower: bounds.lower,
        upper: bounds.upper,
    };
    if !budget.is_finite() {
        return Err(out_of_range);
    }
    if (budget - bounds.lower).abs() <= tol {
        return boundary(problem, Temperature::Zero, bounds, cfg);
    }
    if (budget - bounds.upper).abs() <= tol {
        return boundary(problem, Temperature::Infinite, bounds, cfg);
    }
    if budget < bounds.lower || budget > bounds.upper {
        return Err(out_of_range);
    }

    let evaluations = std::cell::Cell::new(0usize);
    let eval = |t: f64| -> Result<f64, CalibrationError> {
        evaluations.set(evaluations.get() + 1);
        expected_length_at(problem, t, cfg)
    };
    let mut bracket = None;
    for k in BRACKET_EXPONENTS {
        let lo = 10f64.powi(-k);
        let hi = 10f64.powi(k);
        let (e_lo, e_hi) = (eval(lo)?, eval(hi)?);
        if e_lo <= budget && budget <= e_hi {
            bracket = Some((lo, hi));
            break;
        }
        if k == BRACKET_EXPONENTS[BRACKET_EXPONENTS.len() - 1] {
            let limit = if budget < e_lo { Temperature::Zero } else { Temperature::Infinite };
            return boundary(problem, limit, bounds, cfg);
        }
    }
    let (mut lo, mut hi) = bracket.expect("bracket found or returned");
    let mut best = (f64::NAN, f64::INFINITY);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let e = eval(mid)?;
        if (e - budget).abs() < best.1 {
            best = (mid, (e - budget).abs());
        }
        if (e - budget).abs() <= tol {
            break;
        }
        if e < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
    }
    let (t, err) = best;
    let sol = problem.solve(t, cfg)?;
    let achieved = chain_average_length(&sol, problem.graph);
    if err > tol {
        return Err(CalibrationError::NotConverged {
            temperature: t,
            achieved,
        });
    }
    Ok(Calibration {
        temperature: Temperature::Finite(t),
        achieved_length: achieved,
        entropy: chain_entropy(&sol),
        bounds,
        evaluations: evaluations.get() + 1,
    })
}

fn boundary(
    problem: &Problem<'_>,
    limit: Temperature,
    bounds: LengthBounds,
    cfg: &SolverConfig,
) -> Result<Calibration, CalibrationError> {
    let (achieved_length, entropy) = match limit {
        Temperature::Infinite => {
            let sol = problem.solve_uniform_limit(cfg)?;
            (chain_average_length(&sol, problem.graph), chain_entropy(&sol))
        }
        _ => {
            // entropy of the T -> 0 limit: uniform over minimal paths when
            // both marginals are point masses
            let entropy = match (problem.delta_endpoints(), problem.admissible_paths(ENUMERATION_LIMIT)?) {
                (Some(_), Some(paths)) => {
                    let minimal = paths
                        .iter()
                        .filter(|p| problem.graph.path_length(p) <= bounds.lower + 1e-12 * bounds.lower.max(1.0))
                        .count();
                    (minimal as f64).ln()
                }
                _ => f64::NAN,
            };
            (bounds.lower, entropy)
        }
    };
    Ok(Calibration {
        temperature: limit,
        achieved_length,
        entropy,
        bounds,
        evaluations: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub length: f64,
    pub entropy: f64,
    pub variance: f64,
    /// Masses of [`Sweep::tracked`], in the same order.
    pub path_masses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub temperature: f64,
    pub result: Result<SweepPoint, CalibrationError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub tracked: Vec<Path>,
    pub rows: Vec<SweepRow>,
}

/// Solves the bridge at each temperature of `grid`, in parallel, and
/// returns rows sorted by temperature.
pub fn temperature_sweep(problem: &Problem<'_>, grid: &[f64], cfg: &SolverConfig) -> Result<Sweep, CalibrationError> {
    if grid.is_empty() {
        return Err(CalibrationError::EmptyGrid);
    }
    for &t in grid {
        check_temperature(t)?;
    }
    let mut temps = grid.to_vec();
    temps.sort_by(f64::total_cmp);
    let tracked = problem
        .admissible_paths(MAX_TRACKED_PATHS)?
        .unwrap_or_default();
    let rows = temps
        .par_iter()
        .map(|&t| SweepRow {
            temperature: t,
            result: sweep_point(problem, t, &tracked, cfg),
        })
        .collect();
    Ok(Sweep { tracked, rows })
}

fn sweep_point(
    problem: &Problem<'_>,
    temperature: f64,
    tracked: &[Path],
    cfg: &SolverConfig,
) -> Result<SweepPoint, CalibrationError> {
    let sol = problem.solve(temperature, cfg)?;
    let path_masses = tracked
        .iter()
        .map(|p| sol.path_probability(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepPoint {
        length: chain_average_length(&sol, problem.graph),
        entropy: chain_entropy(&sol),
        variance: length_variance(problem, &sol)?,
        path_masses,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmtApproximation {
    pub temperature: f64,
    pub measure: PathMeasure,
    /// Paths attaining the minimal length between their own endpoints.
    pub minimal_paths: Vec<Path>,
    pub minimal_mass: f64,
}

/// Low-temperature bridge as a stand-in for minimum-cost transport.
/// Defaults to `T = 0.05` times the smallest positive edge length.
pub fn omt_approximation(
    problem: &Problem<'_>,
    temperature: Option<f64>,
    cfg: &SolverConfig,
) -> Result<OmtApproximation, CalibrationError> {
    let t = temperature.unwrap_or_else(|| 0.05 * problem.graph.min_positive_length().unwrap_or(1.0));
    check_temperature(t)?;
    let sol = problem.solve(t, cfg)?;
    let paths = problem
        .admissible_paths(crate::graph::DEFAULT_PATH_CAP)?
        .ok_or(GraphError::PathCapExceeded {
            cap: crate::graph::DEFAULT_PATH_CAP,
        })?;
    let measure = PathMeasure::from_mass(&paths, &sol)?;
    let mut shortest = std::collections::BTreeMap::<(usize, usize), f64>::new();
    for p in &paths {
        let key = (p.first().unwrap(), p.last().unwrap());
        let l = problem.graph.path_length(p);
        let e = shortest.entry(key).or_insert(f64::INFINITY);
        *e = e.min(l);
    }
    let minimal_paths: Vec<Path> = paths
        .iter()
        .filter(|p| {
            let lm = shortest[&(p.first().unwrap(), p.last().unwrap())];
            problem.graph.path_length(p) <= lm + 1e-12 * lm.max(1.0)
        })
        .cloned()
        .collect();
    let minimal_mass = minimal_paths.iter().map(|p| measure.get(p)).sum();
    Ok(OmtApproximation {
        temperature: t,
        measure,
        minimal_paths,
        minimal_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{g9, g9_modified};

    fn deltas() -> (Marginal, Marginal) {
        (
            Marginal::delta(9, NodeId(1)).unwrap(),
            Marginal::delta(9, NodeId(9)).unwrap(),
        )
    }

    /// Closed-form length curve of the conditioned Boltzmann law on `lengths`.
    fn curve(lengths: &[f64], t: f64) -> f64 {
        let w: Vec<f64> = lengths.iter().map(|l| (-l / t).exp()).collect();
        lengths.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / w.iter().sum::<f64>()
    }

    const G9_N4_LENGTHS: [f64; 7] = [3.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0];

    #[test]
    fn equal_lengths_give_constant_expectation() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 3);
        for t in [0.1, 1.0, 10.0] {
            let e = expected_length_at(&p, t, &SolverConfig::default()).unwrap();
            assert!((e - 3.0).abs() < 1e-12);
        }
        assert!(matches!(
            calibrate_temperature(&p, 3.0, 1e-10, &SolverConfig::default()),
            Err(CalibrationError::ConstantLength(_))
        ));
    }

    #[test]
    fn expected_length_matches_curve() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 4);
        for t in [0.05, 0.3, 1.0, 7.0] {
            let e = expected_length_at(&p, t, &SolverConfig::default()).unwrap();
            assert!((e - curve(&G9_N4_LENGTHS, t)).abs() < 1e-12, "T={t}");
        }
        let e = expected_length_at(&p, 1.0, &SolverConfig::default()).unwrap();
        assert!((e - 3.329).abs() < 4e-3);
    }

    #[test]
    fn uniform_limit_is_path_mean() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 4);
        let sol = p.solve_uniform_limit(&SolverConfig::default()).unwrap();
        let e = chain_average_length(&sol, &g);
        assert!((e - 25.0 / 7.0).abs() < 1e-13);
    }

    #[test]
    fn variance_routes_agree_and_vanish_when_expected() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 4);
        let sol = p.solve(1.0, &SolverConfig::default()).unwrap();
        let paths = p.admissible_paths(100).unwrap().unwrap();
        let (m1, v1) = length_moments_enumerated(&sol, &g, &paths).unwrap();
        let (m2, v2) = length_moments_recursive(&sol, &g);
        assert!((m1 - m2).abs() < 1e-13 && (v1 - v2).abs() < 1e-13);
        let p3 = Problem::new(&g, &a, &b, 3);
        let sol3 = p3.solve(1.0, &SolverConfig::default()).unwrap();
        assert!(length_variance(&p3, &sol3).unwrap() < 1e-13);
        let chain = DirectedGraph::from_edges(3, &[(1, 2, 1.0), (2, 3, 2.5)]).unwrap();
        let (s, e) = (
            Marginal::delta(3, NodeId(1)).unwrap(),
            Marginal::delta(3, NodeId(3)).unwrap(),
        );
        let pc = Problem::new(&chain, &s, &e, 2);
        let solc = pc.solve(1.0, &SolverConfig::default()).unwrap();
        assert_eq!(length_variance(&pc, &solc).unwrap(), 0.0);
    }

    #[test]
    fn calibration_boundaries() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 4);
        let cfg = SolverConfig::default();
        let c = calibrate_temperature(&p, 3.0, 1e-10, &cfg).unwrap();
        assert_eq!(c.temperature, Temperature::Zero);
        assert!((c.entropy - 3f64.ln()).abs() < 1e-15);
        let c = calibrate_temperature(&p, 25.0 / 7.0, 1e-10, &cfg).unwrap();
        assert_eq!(c.temperature, Temperature::Infinite);
        assert!((c.entropy - 7f64.ln()).abs() < 1e-12);
        for bad in [2.9, 5.0] {
            assert!(matches!(
                calibrate_temperature(&p, bad, 1e-10, &cfg),
                Err(CalibrationError::BudgetOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn calibration_interior() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 4);
        let c = calibrate_temperature(&p, 3.5, 1e-10, &SolverConfig::default()).unwrap();
        let t = c.temperature.value().unwrap();
        assert!((curve(&G9_N4_LENGTHS, t) - 3.5).abs() <= 1e-8);
        assert!((c.achieved_length - 3.5).abs() <= 1e-10);
    }

    #[test]
    fn sweep_rows_sorted_and_monotone() {
        let g = g9_modified();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 3);
        let sweep = temperature_sweep(&p, &[100.0, 0.1, 1.0], &SolverConfig::default()).unwrap();
        let temps: Vec<f64> = sweep.rows.iter().map(|r| r.temperature).collect();
        assert_eq!(temps, vec![0.1, 1.0, 100.0]);
        assert_eq!(sweep.tracked.len(), 3);
        let lengths: Vec<f64> = sweep.rows.iter().map(|r| r.result.as_ref().unwrap().length).collect();
        assert!(lengths.windows(2).all(|w| w[0] <= w[1]));
        let low = sweep.rows[0].result.as_ref().unwrap();
        // tracked order is lexicographic: 1-2-7-9, 1-3-8-9, 1-4-8-9
        assert!(low.path_masses[0] < 1e-4);
        assert!((low.path_masses[1] - 0.5).abs() < 1e-4);
        assert!(matches!(
            temperature_sweep(&p, &[], &SolverConfig::default()),
            Err(CalibrationError::EmptyGrid)
        ));
        assert!(temperature_sweep(&p, &[1.0, -2.0], &SolverConfig::default()).is_err());
    }

    #[test]
    fn omt_on_single_path() {
        let chain = DirectedGraph::from_edges(3, &[(1, 2, 1.0), (2, 3, 2.5)]).unwrap();
        let (s, e) = (
            Marginal::delta(3, NodeId(1)).unwrap(),
            Marginal::delta(3, NodeId(3)).unwrap(),
        );
        let p = Problem::new(&chain, &s, &e, 2);
        for t in [None, Some(10.0)] {
            let omt = omt_approximation(&p, t, &SolverConfig::default()).unwrap();
            assert_eq!(omt.measure.len(), 1);
            assert!((omt.minimal_mass - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_temperatures_stay_solvable() {
        let g = g9();
        let (a, b) = deltas();
        let p = Problem::new(&g, &a, &b, 4);
        let e = expected_length_at(&p, 1e-6, &SolverConfig::default()).unwrap();
        assert!((e - 3.0).abs() < 1e-12);
    }
}
