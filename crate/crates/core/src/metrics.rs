//! Efficiency and robustness indices of transport plans.

use std::collections::BTreeMap;

use ndarray::ArrayView1;
use serde::Serialize;
use thiserror::Error;

use crate::bridge::BridgeSolution;
use crate::graph::{DirectedGraph, Path};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("path {path} has {got} nodes, expected {expected}")]
    PathLength {
        path: String,
        got: usize,
        expected: usize,
    },
    #[error("path {path} has invalid mass {mass}")]
    InvalidMass { path: String, mass: f64 },
    #[error("path {path} listed twice")]
    DuplicatePath { path: String },
    #[error("graph statistics need at least two nodes")]
    TooFewNodes,
}

/// Anything that assigns a nonnegative mass to paths of a fixed horizon.
pub trait PathMass {
    fn horizon(&self) -> usize;

    fn mass(&self, p: &Path) -> f64;

    fn log_mass(&self, p: &Path) -> f64 {
        self.mass(p).ln()
    }
}

/// Explicit masses on finitely many paths of one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    horizon: usize,
    masses: BTreeMap<Path, f64>,
}

impl PathMeasure {
    pub fn new<I>(horizon: usize, masses: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (Path, f64)>,
    {
        let mut map = BTreeMap::new();
        for (p, m) in masses {
            if p.indices().len() != horizon + 1 {
                return Err(MetricsError::PathLength {
                    path: p.to_string(),
                    got: p.indices().len(),
                    expected: horizon + 1,
                });
            }
            if !(m.is_finite() && m >= 0.0) {
                return Err(MetricsError::InvalidMass {
                    path: p.to_string(),
                    mass: m,
                });
            }
            let key = p.to_string();
            if map.insert(p, m).is_some() {
                return Err(MetricsError::DuplicatePath { path: key });
            }
        }
        Ok(Self { horizon, masses: map })
    }

    /// Evaluates `source` on each of `paths`.
    pub fn from_mass(paths: &[Path], source: &dyn PathMass) -> Result<Self, MetricsError> {
        Self::new(
            source.horizon(),
            paths.iter().map(|p| (p.clone(), source.mass(p))),
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path, f64)> {
        self.masses.iter().map(|(p, &m)| (p, m))
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.masses.keys()
    }

    pub fn get(&self, p: &Path) -> f64 {
        self.masses.get(p).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    pub fn normalized(&self) -> Self {
        let z = self.total();
        Self {
            horizon: self.horizon,
            masses: self.masses.iter().map(|(p, &m)| (p.clone(), m / z)).collect(),
        }
    }

    /// Half the L1 distance between two measures over the union of supports.
    pub fn total_variation(&self, other: &PathMeasure) -> f64 {
        let mut acc = 0.0;
        for (p, &m) in &self.masses {
            acc += (m - other.get(p)).abs();
        }
        for (p, &m) in &other.masses {
            if !self.masses.contains_key(p) {
                acc += m;
            }
        }
        0.5 * acc
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &PathMeasure, alpha: f64) -> PathMeasure {
        let mut masses: BTreeMap<Path, f64> = BTreeMap::new();
        for (p, &m) in &self.masses {
            *masses.entry(p.clone()).or_default() += alpha * m;
        }
        for (p, &m) in &other.masses {
            *masses.entry(p.clone()).or_default() += (1.0 - alpha) * m;
        }
        PathMeasure {
            horizon: self.horizon,
            masses,
        }
    }
}

impl PathMass for PathMeasure {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn mass(&self, p: &Path) -> f64 {
        self.get(p)
    }
}

/// `L`, `S` and `F = L - T S` of one plan at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub length: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub temperature: f64,
}

impl EfficiencyReport {
    pub fn new(length: f64, entropy: f64, temperature: f64) -> Self {
        // 0 * S is 0 even when the zero-temperature convention is used
        let free_energy = if temperature == 0.0 {
            length
        } else {
            length - temperature * entropy
        };
        let report = Self {
            length,
            entropy,
            free_energy,
            temperature,
        };
        debug_assert!(
            !free_energy.is_finite()
                || (report.free_energy - (length - temperature * entropy)).abs() <= 1e-10
        );
        report
    }
}

/// Expected path length `sum l(x) P(x)`, with `inf * 0 = 0`.
pub fn average_path_length(p: &PathMeasure, g: &DirectedGraph) -> f64 {
    p.iter()
        .filter(|&(_, m)| m > 0.0)
        .map(|(path, m)| g.path_length(path) * m)
        .sum()
}

/// Expected length of a bridge from its marginals and transitions, without
/// enumerating paths.
pub fn chain_average_length(sol: &BridgeSolution, g: &DirectedGraph) -> f64 {
    let mut acc = 0.0;
    for (t, pi) in sol.transitions().iter().enumerate() {
        let mu = sol.marginals().row(t);
        for ((i, j), &p) in pi.indexed_iter() {
            let w = mu[i] * p;
            if w > 0.0 {
                acc += w * g.length(i, j);
            }
        }
    }
    acc
}

fn shannon(weights: ArrayView1<'_, f64>) -> f64 {
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| -w * w.ln())
        .sum()
}

/// Entropy `-sum P ln P` in nats.
pub fn entropy(p: &PathMeasure) -> f64 {
    p.iter().filter(|&(_, m)| m > 0.0).map(|(_, m)| -m * m.ln()).sum()
}

/// Entropy of a bridge by the chain rule: `H(nu_0)` plus the expected
/// entropy of each transition row.
pub fn chain_entropy(sol: &BridgeSolution) -> f64 {
    let mut acc = shannon(sol.marginals().row(0));
    for (t, pi) in sol.transitions().iter().enumerate() {
        let mu = sol.marginals().row(t);
        for (i, row) in pi.outer_iter().enumerate() {
            if mu[i] > 0.0 {
                acc += mu[i] * shannon(row);
            }
        }
    }
    acc
}

/// `D(P || Q) = sum P ln(P/Q)` over the support of `P`; `+inf` when `P`
/// charges a `Q`-null path. `Q` need not be normalized.
pub fn relative_entropy(p: &PathMeasure, q: &dyn PathMass) -> f64 {
    let mut acc = 0.0;
    for (path, m) in p.iter() {
        if m == 0.0 {
            continue;
        }
        let lq = q.log_mass(path);
        if lq == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        acc += m * (m.ln() - lq);
    }
    acc
}

pub fn free_energy(p: &PathMeasure, temperature: f64, g: &DirectedGraph) -> EfficiencyReport {
    EfficiencyReport::new(average_path_length(p, g), entropy(p), temperature)
}

pub fn chain_free_energy(sol: &BridgeSolution, temperature: f64, g: &DirectedGraph) -> EfficiencyReport {
    EfficiencyReport::new(chain_average_length(sol, g), chain_entropy(sol), temperature)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphEfficiency {
    /// Mean of `d_ij` over ordered pairs `i != j`; `+inf` if any pair is
    /// unreachable.
    pub characteristic_length: f64,
    /// Mean of `d_ij` over reachable ordered pairs only.
    pub reachable_pair_average: f64,
    pub reachable_pairs: usize,
    /// `E(G)`: mean of `1/d_ij` with unreachable pairs contributing 0.
    pub efficiency: f64,
    /// `E(G) / E(G_id)` with `G_id` the complete graph of unit lengths.
    pub global_efficiency: f64,
}

pub fn graph_efficiency_stats(g: &DirectedGraph) -> Result<GraphEfficiency, MetricsError> {
    let n = g.node_count();
    if n < 2 {
        return Err(MetricsError::TooFewNodes);
    }
    let d = g.shortest_path_matrix();
    let pairs = (n * (n - 1)) as f64;
    let mut sum = 0.0;
    let mut reachable_sum = 0.0;
    let mut reachable = 0usize;
    let mut inverse = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dij = d[[i, j]];
            sum += dij;
            if dij.is_finite() {
                reachable_sum += dij;
                reachable += 1;
                inverse += 1.0 / dij;
            }
        }
    }
    let efficiency = inverse / pairs;
    // complete graph with unit lengths has E = 1
    let ideal = 1.0;
    Ok(GraphEfficiency {
        characteristic_length: sum / pairs,
        reachable_pair_average: if reachable > 0 {
            reachable_sum / reachable as f64
        } else {
            f64::INFINITY
        },
        reachable_pairs: reachable,
        efficiency,
        global_efficiency: efficiency / ideal,
    })
}
