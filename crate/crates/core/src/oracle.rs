//! Enumeration-based ground truth for bridges on small instances.
//!
//! Nothing here runs the Schrödinger-system iteration. The bridge is
//! recovered by scaling the `n x n` endpoint kernel to the prescribed
//! marginals and spreading each endpoint coupling over the prior paths that
//! realize it.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::Serialize;
use thiserror::Error;

use crate::bridge::{enumerate_prior_paths, solve_schrodinger, BridgeError, Marginal, SolverConfig};
use crate::graph::{DirectedGraph, GraphError, NodeId};
use crate::metrics::{MetricsError, PathMeasure};
use crate::prior::{boltzmann_matrix, check_temperature, ruelle_bowen, PerronConfig, PriorChain, PriorError};

pub const ORACLE_TOL: f64 = 1e-13;
pub const ORACLE_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("endpoint kernel routes disagree by {0:e}")]
    KernelMismatch(f64),
    #[error("infeasible: no positive-mass path from node {origin} to node {sink}")]
    Infeasible { origin: usize, sink: usize },
    #[error("endpoint scaling did not converge after {0} sweeps")]
    NotConverged(usize),
    #[error("no feasible path from node {from} to node {to}")]
    NoFeasiblePath { from: usize, to: usize },
    #[error("marginal has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// `G_ij`: total normalized prior weight of the `i -> j` paths of the
/// horizon, excluding the initial measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointKernel {
    matrix: Array2<f64>,
}

impl EndpointKernel {
    /// Computes the kernel by path enumeration and by matrix products and
    /// insists they agree to `1e-12` relative to the largest entry.
    pub fn new(prior: &PriorChain) -> Result<Self, OracleError> {
        let by_paths = Self::from_paths(prior)?;
        let by_product = Self::from_product(prior);
        let scale = by_product.matrix.iter().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
        let diff = by_paths
            .matrix
            .iter()
            .zip(by_product.matrix.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff > 1e-12 * scale {
            return Err(OracleError::KernelMismatch(diff / scale));
        }
        Ok(by_paths)
    }

    pub fn from_paths(prior: &PriorChain) -> Result<Self, OracleError> {
        let n = prior.node_count();
        let mut matrix = Array2::<f64>::zeros((n, n));
        for p in enumerate_prior_paths(prior, None, None)? {
            let (i, j) = (p.first().unwrap(), p.last().unwrap());
            matrix[[i, j]] += prior.log_weight(&p).exp();
        }
        Ok(Self { matrix })
    }

    pub fn from_product(prior: &PriorChain) -> Self {
        let n = prior.node_count();
        let matrix = prior
            .transitions()
            .iter()
            .fold(Array2::<f64>::eye(n), |acc, m| acc.dot(m));
        Self { matrix }
    }

    /// Kernel relative to the normalized prior steps.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

/// Boltzmann law restricted to `x0 -> xN` paths of `horizon` steps.
pub fn conditioned_boltzmann(
    g: &DirectedGraph,
    temperature: f64,
    horizon: usize,
    x0: NodeId,
    x_n: NodeId,
) -> Result<PathMeasure, OracleError> {
    check_temperature(temperature)?;
    let paths = g.enumerate_paths(horizon, Some(x0), Some(x_n))?;
    if paths.is_empty() {
        return Err(OracleError::NoFeasiblePath { from: x0.0, to: x_n.0 });
    }
    let logs: Vec<f64> = paths.iter().map(|p| -g.path_length(p) / temperature).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(PathMeasure::new(
        horizon,
        paths.into_iter().zip(weights).map(|(p, w)| (p, w / z)),
    )?)
}

fn support(nu: &Marginal) -> Vec<usize> {
    nu.weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Exact bridge path measure by diagonal scaling of the endpoint kernel.
pub fn oracle_bridge(
    prior: &PriorChain,
    nu0: &Marginal,
    nu_n: &Marginal,
    tol: f64,
) -> Result<PathMeasure, OracleError> {
    let n = prior.node_count();
    for nu in [nu0, nu_n] {
        if nu.len() != n {
            return Err(OracleError::Dimension {
                got: nu.len(),
                expected: n,
            });
        }
    }
    let kernel = EndpointKernel::new(prior)?;
    let g = kernel.matrix();
    let rows = support(nu0);
    let cols = support(nu_n);
    for &i in &rows {
        for &j in &cols {
            if g[[i, j]] <= 0.0 {
                return Err(OracleError::Infeasible {
                    origin: i + 1,
                    sink: j + 1,
                });
            }
        }
    }
    let p = nu0.weights();
    let q = nu_n.weights();
    let mut a = Array1::<f64>::ones(rows.len());
    let mut b = Array1::<f64>::ones(cols.len());
    let mut converged = false;
    for _ in 0..ORACLE_MAX_SWEEPS {
        for (r, &i) in rows.iter().enumerate() {
            let s: f64 = cols.iter().enumerate().map(|(c, &j)| g[[i, j]] * b[c]).sum();
            a[r] = p[i] / s;
        }
        for (c, &j) in cols.iter().enumerate() {
            let s: f64 = rows.iter().enumerate().map(|(r, &i)| a[r] * g[[i, j]]).sum();
            b[c] = q[j] / s;
        }
        // columns are exact after the last update; check rows
        let err = rows
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let s: f64 = cols.iter().enumerate().map(|(c, &j)| a[r] * g[[i, j]] * b[c]).sum();
                (s - p[i]).abs()
            })
            .fold(0.0, f64::max);
        if err <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::NotConverged(ORACLE_MAX_SWEEPS));
    }
    let col_index: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(c, &j)| (j, c)).collect();
    let mut masses = Vec::new();
    for (r, &i) in rows.iter().enumerate() {
        for path in enumerate_prior_paths(prior, Some(i), None)? {
            let j = path.last().unwrap();
            if let Some(&c) = col_index.get(&j) {
                let w = prior.log_weight(&path).exp();
                masses.push((path, a[r] * w * b[c]));
            }
        }
    }
    Ok(PathMeasure::new(prior.horizon(), masses)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem7Report {
    /// Largest `(max - min) / max` mass within a `(x0, xN, length)` group.
    pub max_spread: f64,
    /// Whether, for every endpoint pair, the minimal-length paths carry the
    /// largest mass.
    pub minimal_group_is_max: bool,
    pub pairs: usize,
    pub groups: usize,
    /// Whether `M_T` passed the primitivity test.
    pub primitive: bool,
    /// Whether the chain was started from its invariant measure. When that
    /// measure has zeros the uniform start is used instead.
    pub invariant_start: bool,
}

/// Solves the `delta_x0 -> delta_xN` bridge over the Ruelle-Bowen chain of
/// `M_T` for every connected pair and groups path masses by length.
pub fn verify_theorem7(
    g: &DirectedGraph,
    temperature: f64,
    horizon: usize,
    cfg: &SolverConfig,
) -> Result<Theorem7Report, OracleError> {
    let b = boltzmann_matrix(g, temperature)?;
    let rb = ruelle_bowen(&b, &PerronConfig::default().allow_reducible())?;
    let n = g.node_count();
    let invariant_start = rb.invariant.iter().all(|&x| x > 0.0);
    let mu0 = if invariant_start {
        rb.invariant.clone()
    } else {
        Array1::from_elem(n, 1.0 / n as f64)
    };
    let prior = PriorChain::homogeneous(rb.transition.clone(), horizon, mu0)?;

    let mut report = Theorem7Report {
        max_spread: 0.0,
        minimal_group_is_max: true,
        pairs: 0,
        groups: 0,
        primitive: rb.perron.primitive,
        invariant_start,
    };
    for x0 in 1..=n {
        for x_n in 1..=n {
            let paths = g.enumerate_paths(horizon, Some(NodeId(x0)), Some(NodeId(x_n)))?;
            if paths.is_empty() {
                continue;
            }
            let sol = solve_schrodinger(
                &prior,
                &Marginal::delta(n, NodeId(x0))?,
                &Marginal::delta(n, NodeId(x_n))?,
                cfg,
            )?;
            let mut entries: Vec<(f64, f64)> = paths
                .iter()
                .map(|p| Ok((g.path_length(p), sol.path_probability(p)?)))
                .collect::<Result<_, BridgeError>>()?;
            entries.sort_by(|x, y| x.0.total_cmp(&y.0));
            let overall_max = entries.iter().map(|e| e.1).fold(0.0, f64::max);
            let mut start = 0;
            let mut first_group = true;
            while start < entries.len() {
                let len = entries[start].0;
                let mut end = start;
                while end < entries.len() && (entries[end].0 - len).abs() <= 1e-9 * len.max(1.0) {
                    end += 1;
                }
                let group = &entries[start..end];
                let hi = group.iter().map(|e| e.1).fold(0.0, f64::max);
                let lo = group.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
                if hi > 0.0 {
                    report.max_spread = report.max_spread.max((hi - lo) / hi);
                }
                if first_group && lo < overall_max * (1.0 - 1e-9) {
                    report.minimal_group_is_max = false;
                }
                first_group = false;
                report.groups += 1;
                start = end;
            }
            report.pairs += 1;
        }
    }
    Ok(report)
}

/// Groups a measure's paths by `(first, last)` endpoints.
pub fn endpoint_totals(p: &PathMeasure) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for (path, m) in p.iter() {
        let key: (usize, usize) = (path.first().unwrap(), path.last().unwrap());
        *out.entry(key).or_insert(0.0) += m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::SolverConfig;
    use crate::graph::fixtures::{g9, g9_closed};
    use crate::prior::boltzmann_prior;
    use ndarray::array;

    #[test]
    fn conditioned_values() {
        let g = g9();
        let p = conditioned_boltzmann(&g, 1.0, 4, NodeId(1), NodeId(9)).unwrap();
        let e = (-1.0f64).exp();
        let z = 3.0 + 4.0 * e;
        for (path, m) in p.iter() {
            let expected = if g.path_length(path) == 3.0 { 1.0 / z } else { e / z };
            assert!((m - expected).abs() < 1e-15);
        }
        assert!((1.0 / z - 0.22364).abs() < 1e-5);
        assert!((e / z - 0.08227).abs() < 1e-5);
        let p3 = conditioned_boltzmann(&g, 1.0, 3, NodeId(1), NodeId(9)).unwrap();
        for (_, m) in p3.iter() {
            assert!((m - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(
            conditioned_boltzmann(&g, 1.0, 2, NodeId(1), NodeId(9)),
            Err(OracleError::NoFeasiblePath { from: 1, to: 9 })
        ));
    }

    #[test]
    fn kernel_routes_agree() {
        let prior = boltzmann_prior(&g9_closed(), 0.6, 5).unwrap();
        let a = EndpointKernel::from_paths(&prior).unwrap();
        let b = EndpointKernel::from_product(&prior);
        for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
            assert!((x - y).abs() <= 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn oracle_marginals_exact() {
        let prior = boltzmann_prior(&g9_closed(), 1.0, 8).unwrap();
        let nu0 = Marginal::normalized(vec![3.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let nu_n = Marginal::normalized(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        let m = oracle_bridge(&prior, &nu0, &nu_n, ORACLE_TOL).unwrap();
        let mut start = [0.0; 9];
        let mut end = [0.0; 9];
        for (p, w) in m.iter() {
            start[p.first().unwrap()] += w;
            end[p.last().unwrap()] += w;
        }
        for i in 0..9 {
            assert!((start[i] - nu0.weights()[i]).abs() <= 1e-12);
            assert!((end[i] - nu_n.weights()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn oracle_on_stochastic_prior_returns_prior() {
        let m = array![[0.6, 0.4], [0.3, 0.7]];
        let mu0 = array![0.25, 0.75];
        let prior = PriorChain::homogeneous(m.clone(), 3, mu0.clone()).unwrap();
        let mut mu = mu0.clone();
        for _ in 0..3 {
            mu = mu.dot(&m);
        }
        let got = oracle_bridge(
            &prior,
            &Marginal::new(mu0.to_vec()).unwrap(),
            &Marginal::normalized(mu.to_vec()).unwrap(),
            ORACLE_TOL,
        )
        .unwrap();
        for (p, w) in got.iter() {
            let expected = prior.chain_path_mass(p).unwrap();
            assert!((w - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_matches_conditioned_boltzmann_for_deltas() {
        let g = g9();
        let prior = boltzmann_prior(&g, 1.0, 4).unwrap();
        let d1 = Marginal::delta(9, NodeId(1)).unwrap();
        let d9 = Marginal::delta(9, NodeId(9)).unwrap();
        let o = oracle_bridge(&prior, &d1, &d9, ORACLE_TOL).unwrap();
        let c = conditioned_boltzmann(&g, 1.0, 4, NodeId(1), NodeId(9)).unwrap();
        assert!(o.total_variation(&c) < 1e-13);
    }

    #[test]
    fn theorem7_on_fixture() {
        let r = verify_theorem7(&g9(), 1.0, 4, &SolverConfig::default()).unwrap();
        assert!(r.max_spread <= 1e-9, "{r:?}");
        assert!(r.minimal_group_is_max);
        assert!(!r.primitive);
        assert!(!r.invariant_start);
        let r = verify_theorem7(&g9_closed(), 1.0, 4, &SolverConfig::default()).unwrap();
        assert!(r.max_spread <= 1e-9 && r.minimal_group_is_max && r.primitive && r.invariant_start);
    }

    #[test]
    fn theorem7_singleton_groups() {
        let g = DirectedGraph::from_edges(3, &[(1, 2, 1.0), (2, 3, 2.0), (1, 1, 0.9), (2, 2, 0.7), (3, 3, 0.5)])
            .unwrap();
        let r = verify_theorem7(&g, 1.0, 1, &SolverConfig::default()).unwrap();
        assert_eq!(r.max_spread, 0.0);
        assert_eq!(r.groups, r.pairs);
    }
}
