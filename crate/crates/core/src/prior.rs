//! Prior measures on paths: Boltzmann weights, partition functions, the
//! Perron-Frobenius triple and the Ruelle-Bowen style chain built from it.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DirectedGraph, Path};
use crate::metrics::PathMass;
use crate::projective::{hilbert_distance, sup_norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("transition matrix {index} has shape {rows}x{cols}, expected {n}x{n}")]
    Shape {
        index: usize,
        rows: usize,
        cols: usize,
        n: usize,
    },
    #[error("transition matrix {index} has a negative or non-finite entry at ({row}, {col})")]
    InvalidEntry { index: usize, row: usize, col: usize },
    #[error("initial measure must be strictly positive and finite (node {node})")]
    InitialMeasure { node: usize },
    #[error("path has {got} nodes, expected {expected}")]
    PathLength { got: usize, expected: usize },
    #[error("no feasible paths with {steps} steps")]
    NoFeasiblePaths { steps: usize },
    #[error("matrix is not primitive: entry ({row}, {col}) of its {power}-th power is zero")]
    NotPrimitive { row: usize, col: usize, power: usize },
    #[error("power iteration did not converge in {iterations} iterations (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("matrix is nilpotent on the iterated cone")]
    Nilpotent,
    #[error("Perron eigenvector has a zero entry at node {node}")]
    NonPositiveEigenvector { node: usize },
    #[error("invariant measure vanishes at node {node}; matrix is not primitive")]
    DegenerateInvariantMeasure { node: usize },
}

/// A temperature, including the two limiting regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temperature {
    Zero,
    Finite(f64),
    Infinite,
}

impl Temperature {
    pub fn finite(t: f64) -> Result<Self, PriorError> {
        check_temperature(t)?;
        Ok(Temperature::Finite(t))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Temperature::Finite(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Zero => f.write_str("0"),
            Temperature::Finite(t) => write!(f, "{t}"),
            Temperature::Infinite => f.write_str("inf"),
        }
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<(), PriorError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(PriorError::InvalidTemperature(t))
    }
}

/// Nonnegative transition kernels `M(0..N-1)` and a positive initial measure.
///
/// Each kernel is stored divided by its largest entry; the true kernel is
/// `exp(log_scale(t)) * transition(t)`. Bridges do not depend on the scales.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorChain {
    transitions: Vec<Array2<f64>>,
    log_scales: Vec<f64>,
    mu0: Array1<f64>,
}

impl PriorChain {
    pub fn new(transitions: Vec<Array2<f64>>, mu0: Array1<f64>) -> Result<Self, PriorError> {
        let n = mu0.len();
        for (node, &m) in mu0.iter().enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(PriorError::InitialMeasure { node: node + 1 });
            }
        }
        let mut normalized = Vec::with_capacity(transitions.len());
        let mut log_scales = Vec::with_capacity(transitions.len());
        for (index, m) in transitions.into_iter().enumerate() {
            let (rows, cols) = m.dim();
            if rows != n || cols != n {
                return Err(PriorError::Shape {
                    index,
                    rows,
                    cols,
                    n,
                });
            }
            if let Some(((row, col), _)) = m
                .indexed_iter()
                .find(|(_, &v)| !(v.is_finite() && v >= 0.0))
            {
                return Err(PriorError::InvalidEntry { index, row, col });
            }
            let max = m.iter().copied().fold(0.0_f64, f64::max);
            if max > 0.0 {
                normalized.push(m / max);
                log_scales.push(max.ln());
            } else {
                normalized.push(m);
                log_scales.push(0.0);
            }
        }
        Ok(Self {
            transitions: normalized,
            log_scales,
            mu0,
        })
    }

    /// Same kernel at every step.
    pub fn homogeneous(m: Array2<f64>, horizon: usize, mu0: Array1<f64>) -> Result<Self, PriorError> {
        Self::new(vec![m; horizon], mu0)
    }

    /// Builds a chain from log-domain kernels (`-inf` for absent edges),
    /// normalizing before exponentiating so tiny weights do not underflow
    /// relative to each other unnecessarily.
    pub(crate) fn from_log_weights(
        log_weights: Vec<Array2<f64>>,
        mu0: Array1<f64>,
    ) -> Result<Self, PriorError> {
        let mut transitions = Vec::with_capacity(log_weights.len());
        let mut log_scales = Vec::with_capacity(log_weights.len());
        for w in log_weights {
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                transitions.push(Array2::zeros(w.dim()));
                log_scales.push(0.0);
            } else {
                transitions.push(w.mapv(|x| (x - max).exp()));
                log_scales.push(max);
            }
        }
        let mut chain = Self::new(transitions, mu0)?;
        for (s, extra) in chain.log_scales.iter_mut().zip(log_scales) {
            *s += extra;
        }
        Ok(chain)
    }

    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn node_count(&self) -> usize {
        self.mu0.len()
    }

    /// Normalized kernel at step `t` (largest entry 1).
    pub fn transition(&self, t: usize) -> &Array2<f64> {
        &self.transitions[t]
    }

    pub fn transitions(&self) -> &[Array2<f64>] {
        &self.transitions
    }

    pub fn log_scale(&self, t: usize) -> f64 {
        self.log_scales[t]
    }

    /// The kernel `M(t)` at its true scale. May underflow at tiny temperatures.
    pub fn kernel(&self, t: usize) -> Array2<f64> {
        &self.transitions[t] * self.log_scales[t].exp()
    }

    pub fn mu0(&self) -> &Array1<f64> {
        &self.mu0
    }

    pub fn with_mu0(&self, mu0: Array1<f64>) -> Result<Self, PriorError> {
        let mut chain = Self::new(self.transitions.clone(), mu0)?;
        chain.log_scales = self.log_scales.clone();
        Ok(chain)
    }

    fn check_path(&self, p: &Path) -> Result<(), PriorError> {
        let expected = self.horizon() + 1;
        if p.indices().len() != expected {
            return Err(PriorError::PathLength {
                got: p.indices().len(),
                expected,
            });
        }
        Ok(())
    }

    /// `ln` of the product of normalized kernel entries along `p` (no `mu0`,
    /// no scales); `-inf` when the path leaves the support.
    pub(crate) fn log_weight(&self, p: &Path) -> f64 {
        let nodes = p.indices();
        let mut acc = 0.0;
        for (t, w) in nodes.windows(2).enumerate() {
            let m = self.transitions[t][[w[0], w[1]]];
            if m == 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += m.ln();
        }
        acc
    }

    /// `ln M(x_0, ..., x_N)`, `-inf` for infeasible paths.
    pub fn log_path_mass(&self, p: &Path) -> Result<f64, PriorError> {
        self.check_path(p)?;
        if p.indices().iter().any(|&i| i >= self.node_count()) {
            return Ok(f64::NEG_INFINITY);
        }
        let w = self.log_weight(p);
        if w == f64::NEG_INFINITY {
            return Ok(w);
        }
        Ok(self.mu0[p.indices()[0]].ln() + w + self.log_scales.iter().sum::<f64>())
    }

    /// Path mass `mu0(x_0) m_{x_0 x_1}(0) ... m_{x_{N-1} x_N}(N-1)`.
    pub fn chain_path_mass(&self, p: &Path) -> Result<f64, PriorError> {
        Ok(self.log_path_mass(p)?.exp())
    }
}

impl PathMass for PriorChain {
    fn horizon(&self) -> usize {
        PriorChain::horizon(self)
    }

    fn mass(&self, p: &Path) -> f64 {
        self.chain_path_mass(p).unwrap_or(0.0)
    }
}

fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

fn boltzmann_log_weights(g: &DirectedGraph, temperature: f64) -> Array2<f64> {
    let n = g.node_count();
    let mut w = Array2::from_elem((n, n), f64::NEG_INFINITY);
    for (i, j, l) in g.edges() {
        w[[i, j]] = -l / temperature;
    }
    w
}

/// The kernel `M_T = [exp(-l_ij / T)]`, zero off the edge set.
pub fn boltzmann_matrix(g: &DirectedGraph, temperature: f64) -> Result<Array2<f64>, PriorError> {
    check_temperature(temperature)?;
    Ok(boltzmann_log_weights(g, temperature).mapv(f64::exp))
}

/// Time-homogeneous Boltzmann prior with uniform initial measure `1/n`.
pub fn boltzmann_prior(
    g: &DirectedGraph,
    temperature: f64,
    horizon: usize,
) -> Result<PriorChain, PriorError> {
    check_temperature(temperature)?;
    let w = boltzmann_log_weights(g, temperature);
    PriorChain::from_log_weights(vec![w; horizon], uniform(g.node_count()))
}

/// Boltzmann prior re-weighted by the exact-step distance to `targets`.
///
/// With `h_t(i)` the minimal length of an `(N - t)`-step path from `i` into
/// the target set, step `t` carries weights `exp(-(l_ij + h_{t+1}(j) -
/// h_t(i)) / T)`. Path masses change only by a factor depending on the start
/// node, so bridges whose final marginal lives on `targets` are unchanged,
/// while every kernel keeps an entry equal to 1 along optimal edges. This
/// keeps bridges solvable at temperatures where raw weights underflow.
pub fn boltzmann_prior_toward(
    g: &DirectedGraph,
    temperature: f64,
    horizon: usize,
    targets: &[bool],
) -> Result<PriorChain, PriorError> {
    check_temperature(temperature)?;
    let n = g.node_count();
    let mut h = vec![vec![f64::INFINITY; n]; horizon + 1];
    for (i, &is_target) in targets.iter().enumerate().take(n) {
        if is_target {
            h[horizon][i] = 0.0;
        }
    }
    for t in (0..horizon).rev() {
        for i in 0..n {
            h[t][i] = g
                .successors(i)
                .map(|(j, l)| l + h[t + 1][j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    let weights = (0..horizon)
        .map(|t| {
            let mut w = Array2::from_elem((n, n), f64::NEG_INFINITY);
            for (i, j, l) in g.edges() {
                if h[t][i].is_finite() && h[t + 1][j].is_finite() {
                    let reduced = (l + h[t + 1][j] - h[t][i]).max(0.0);
                    w[[i, j]] = -reduced / temperature;
                }
            }
            w
        })
        .collect();
    PriorChain::from_log_weights(weights, uniform(n))
}

/// `ln Z(T)` where `Z(T) = sum over feasible N-step paths of exp(-l(x)/T)`.
pub fn log_partition_function(
    g: &DirectedGraph,
    temperature: f64,
    horizon: usize,
) -> Result<f64, PriorError> {
    let prior = boltzmann_prior(g, temperature, horizon)?;
    let n = g.node_count();
    let mut w = Array1::<f64>::ones(n);
    let mut log_acc = 0.0;
    for t in (0..horizon).rev() {
        w = prior.transition(t).dot(&w);
        let s = sup_norm(w.view());
        if s == 0.0 {
            return Err(PriorError::NoFeasiblePaths { steps: horizon });
        }
        w /= s;
        log_acc += s.ln() + prior.log_scale(t);
    }
    Ok(log_acc + w.sum().ln())
}

pub fn partition_function(g: &DirectedGraph, temperature: f64, horizon: usize) -> Result<f64, PriorError> {
    Ok(log_partition_function(g, temperature, horizon)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Reject matrices that fail the Wielandt primitivity test. When false,
    /// power iteration is attempted anyway and eigenvectors may have zeros.
    pub require_primitive: bool,
}

impl Default for PerronConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            require_primitive: true,
        }
    }
}

impl PerronConfig {
    pub fn allow_reducible(self) -> Self {
        Self {
            require_primitive: false,
            ..self
        }
    }
}

/// Spectral radius with left/right eigenvectors normalized so `sum u_i v_i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronTriple {
    pub lambda: f64,
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub primitive: bool,
    pub iterations: usize,
}

impl PerronTriple {
    /// `(||B^T u - lambda u||_inf, ||B v - lambda v||_inf)`.
    pub fn residuals(&self, b: &Array2<f64>) -> (f64, f64) {
        let left = &b.t().dot(&self.u) - &(&self.u * self.lambda);
        let right = &b.dot(&self.v) - &(&self.v * self.lambda);
        (sup_norm(left.view()), sup_norm(right.view()))
    }
}

fn bool_product(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut c = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] {
                for j in 0..n {
                    c[i][j] |= b[k][j];
                }
            }
        }
    }
    c
}

/// Wielandt test. Returns `None` for a primitive matrix, otherwise a zero
/// entry (0-based row, col) of `B^(n^2 - 2n + 2)` and that exponent.
pub fn primitivity_witness(b: &Array2<f64>) -> Option<(usize, usize, usize)> {
    let n = b.nrows();
    let bound = n * n + 2 - 2 * n;
    let base: Vec<Vec<bool>> = b
        .outer_iter()
        .map(|row| row.iter().map(|&x| x > 0.0).collect())
        .collect();
    let mut result: Option<Vec<Vec<bool>>> = None;
    let mut square = base;
    let mut e = bound;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => square.clone(),
                Some(r) => bool_product(&r, &square),
            });
        }
        e >>= 1;
        if e > 0 {
            square = bool_product(&square, &square);
        }
    }
    let power = result.expect("bound >= 1");
    for (i, row) in power.iter().enumerate() {
        if let Some(j) = row.iter().position(|&x| !x) {
            return Some((i, j, bound));
        }
    }
    None
}

fn dominant_vector(
    b: &Array2<f64>,
    cfg: &PerronConfig,
) -> Result<(f64, Array1<f64>, usize), PriorError> {
    let n = b.nrows();
    let mut x = Array1::<f64>::ones(n);
    let mut change = f64::INFINITY;
    for k in 1..=cfg.max_iter {
        let mut y = b.dot(&x);
        let s = sup_norm(y.view());
        if s == 0.0 || !s.is_finite() {
            return Err(PriorError::Nilpotent);
        }
        y /= s;
        change = hilbert_distance(x.view(), y.view());
        x = y;
        if change <= cfg.tol {
            let bx = b.dot(&x);
            let lambda = bx.dot(&x) / x.dot(&x);
            let residual = sup_norm((&bx - &(&x * lambda)).view());
            if residual <= cfg.tol * lambda * sup_norm(x.view()) {
                return Ok((lambda, x, k));
            }
        }
    }
    Err(PriorError::NotConverged {
        iterations: cfg.max_iter,
        change,
    })
}

/// Perron-Frobenius triple of a nonnegative square matrix by power
/// iteration, with convergence measured in the Hilbert projective metric.
pub fn perron(b: &Array2<f64>, cfg: &PerronConfig) -> Result<PerronTriple, PriorError> {
    assert_eq!(b.nrows(), b.ncols(), "perron needs a square matrix");
    let witness = primitivity_witness(b);
    if let (Some((row, col, power)), true) = (witness, cfg.require_primitive) {
        return Err(PriorError::NotPrimitive { row, col, power });
    }
    let (lambda, v, iv) = dominant_vector(b, cfg)?;
    let bt = b.t().to_owned();
    let (_, mut u, iu) = dominant_vector(&bt, cfg)?;
    let c = u.dot(&v);
    if c <= 0.0 {
        return Err(PriorError::Nilpotent);
    }
    u /= c;
    Ok(PerronTriple {
        lambda,
        u,
        v,
        primitive: witness.is_none(),
        iterations: iv.max(iu),
    })
}

/// The stochastic matrix `R = lambda^-1 diag(v)^-1 B diag(v)` and its
/// invariant measure `u_i v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuelleBowen {
    pub perron: PerronTriple,
    pub transition: Array2<f64>,
    pub invariant: Array1<f64>,
}

pub fn ruelle_bowen(b: &Array2<f64>, cfg: &PerronConfig) -> Result<RuelleBowen, PriorError> {
    let perron = perron(b, cfg)?;
    if let Some(node) = perron.v.iter().position(|&x| x <= 0.0) {
        return Err(PriorError::NonPositiveEigenvector { node: node + 1 });
    }
    let n = b.nrows();
    let mut r = Array2::<f64>::zeros((n, n));
    for ((i, j), &bij) in b.indexed_iter() {
        r[[i, j]] = bij * perron.v[j] / (perron.lambda * perron.v[i]);
    }
    // strip the last ulps of row-sum drift
    for mut row in r.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row /= s;
    }
    let invariant = &perron.u * &perron.v;
    Ok(RuelleBowen {
        perron,
        transition: r,
        invariant,
    })
}

/// Chain with every step equal to the Ruelle-Bowen matrix of `M_T` and
/// started from its invariant measure. Requires a strictly positive
/// invariant measure, which holds for primitive `M_T`.
pub fn ruelle_bowen_chain(
    g: &DirectedGraph,
    temperature: f64,
    horizon: usize,
    cfg: &PerronConfig,
) -> Result<PriorChain, PriorError> {
    let rb = ruelle_bowen(&boltzmann_matrix(g, temperature)?, cfg)?;
    if let Some(node) = rb.invariant.iter().position(|&x| x <= 0.0) {
        return Err(PriorError::DegenerateInvariantMeasure { node: node + 1 });
    }
    PriorChain::homogeneous(rb.transition, horizon, rb.invariant)
}
