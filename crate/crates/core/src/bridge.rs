//! Schrödinger bridges over Markovian priors.
//!
//! Given a prior chain `M(0..N-1)` and marginals `nu_0`, `nu_N`, the bridge
//! is the path law closest to the prior in relative entropy among laws with
//! those marginals. It is found by solving the Schrödinger system
//!
//! ```text
//! phi(t)       = M(t) phi(t+1)
//! phi_hat(t+1) = M(t)^T phi_hat(t)
//! phi(0) .* phi_hat(0) = nu_0,   phi(N) .* phi_hat(N) = nu_N
//! ```
//!
//! by alternating rescaling of the two boundary conditions. The optimal
//! policy is `Pi(t) = diag(phi(t))^-1 M(t) diag(phi(t+1))`.
//!
//! Potentials are stored relative to the normalized kernels
//! [`PriorChain::transition`], which differ from the true kernels by a
//! positive constant per step. The policy does not see that constant.

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

use crate::graph::{enumerate_layered, DirectedGraph, GraphError, NodeId, Path, DEFAULT_PATH_CAP};
use crate::metrics::PathMass;
use crate::prior::{PriorChain, PriorError};
use crate::projective::{hilbert_distance, sup_norm};

/// Default relative tolerance for ties between path masses.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("marginal has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible: no positive-mass path from node {origin} to node {sink}")]
    Infeasible { origin: usize, sink: usize },
    #[error("bridge did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },
    #[error("path has {got} nodes, expected {expected}")]
    PathLength { got: usize, expected: usize },
    #[error("no positive-mass path from node {from} to node {to}")]
    NoPositivePath { from: usize, to: usize },
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A probability vector on the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal(Array1<f64>);

impl Marginal {
    /// Weights must be nonnegative and sum to 1 within `1e-12`.
    pub fn new(weights: Vec<f64>) -> Result<Self, BridgeError> {
        if weights.is_empty() {
            return Err(BridgeError::InvalidMarginal("no entries".into()));
        }
        if let Some(k) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(BridgeError::InvalidMarginal(format!(
                "entry {} is negative or not finite",
                k + 1
            )));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(BridgeError::InvalidMarginal(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(Array1::from(weights)))
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, BridgeError> {
        let s: f64 = weights.iter().sum();
        if !(s.is_finite() && s > 0.0) {
            return Err(BridgeError::InvalidMarginal("weights must have positive total".into()));
        }
        Self::new(weights.into_iter().map(|w| w / s).collect())
    }

    pub fn delta(n: usize, node: NodeId) -> Result<Self, BridgeError> {
        if node.0 == 0 || node.0 > n {
            return Err(BridgeError::InvalidMarginal(format!("node {node} out of range 1..={n}")));
        }
        let mut w = vec![0.0; n];
        w[node.index()] = 1.0;
        Ok(Self(Array1::from(w)))
    }

    pub fn uniform(n: usize) -> Self {
        Self(Array1::from_elem(n, 1.0 / n as f64))
    }

    /// Uniform on the listed nodes.
    pub fn uniform_on(n: usize, nodes: &[NodeId]) -> Result<Self, BridgeError> {
        let mut w = vec![0.0; n];
        for node in nodes {
            if node.0 == 0 || node.0 > n {
                return Err(BridgeError::InvalidMarginal(format!("node {node} out of range 1..={n}")));
            }
            w[node.index()] = 1.0;
        }
        Self::normalized(w)
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> Vec<bool> {
        self.0.iter().map(|&w| w > 0.0).collect()
    }

    fn support_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(BridgeError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(BridgeError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Potentials, policy and marginal flow of a solved bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSolution {
    phi: Array2<f64>,
    phi_hat: Array2<f64>,
    transitions: Vec<Array2<f64>>,
    marginals: Array2<f64>,
    sweeps: usize,
    residual: f64,
}

impl BridgeSolution {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn node_count(&self) -> usize {
        self.marginals.ncols()
    }

    /// `(N+1) x n` array of `phi(t, i)`.
    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn phi_hat(&self) -> &Array2<f64> {
        &self.phi_hat
    }

    /// Optimal transition matrices `Pi(0..N-1)`.
    pub fn transitions(&self) -> &[Array2<f64>] {
        &self.transitions
    }

    /// Marginal flow: row `t` is the distribution of mass at time `t`.
    pub fn marginals(&self) -> &Array2<f64> {
        &self.marginals
    }

    pub fn marginal_flow(&self) -> Array2<f64> {
        self.marginals.clone()
    }

    /// Number of boundary-rescaling sweeps performed.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Sup-norm violation of the final boundary condition.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Probability of `p` under the bridge: `nu_0(x_0) pi_{x_0 x_1}(0) ...`.
    pub fn path_probability(&self, p: &Path) -> Result<f64, BridgeError> {
        let nodes = p.indices();
        if nodes.len() != self.horizon() + 1 {
            return Err(BridgeError::PathLength {
                got: nodes.len(),
                expected: self.horizon() + 1,
            });
        }
        let n = self.node_count();
        if nodes.iter().any(|&i| i >= n) {
            return Ok(0.0);
        }
        let mut prob = self.marginals[[0, nodes[0]]];
        for (t, w) in nodes.windows(2).enumerate() {
            if prob == 0.0 {
                break;
            }
            prob *= self.transitions[t][[w[0], w[1]]];
        }
        Ok(prob)
    }

    /// Test hook: the same solution with one policy entry overwritten.
    #[doc(hidden)]
    pub fn with_corrupted_transition(&self, t: usize, i: usize, j: usize, value: f64) -> Self {
        let mut s = self.clone();
        s.transitions[t][[i, j]] = value;
        s
    }
}

impl PathMass for BridgeSolution {
    fn horizon(&self) -> usize {
        BridgeSolution::horizon(self)
    }

    fn mass(&self, p: &Path) -> f64 {
        self.path_probability(p).unwrap_or(0.0)
    }
}

/// `Pi(t) = diag(phi(t))^-1 M(t) diag(phi(t+1))` with zero rows where
/// `phi(t, i) = 0`.
pub fn transitions_from_potentials(prior: &PriorChain, phi: &Array2<f64>) -> Vec<Array2<f64>> {
    (0..prior.horizon())
        .map(|t| {
            let m = prior.transition(t);
            let mut pi = Array2::<f64>::zeros(m.dim());
            for ((i, j), &mij) in m.indexed_iter() {
                let denom = phi[[t, i]];
                if denom > 0.0 && mij > 0.0 {
                    pi[[i, j]] = mij * phi[[t + 1, j]] / denom;
                }
            }
            pi
        })
        .collect()
}

fn check_dims(prior: &PriorChain, nu: &Marginal) -> Result<(), BridgeError> {
    if nu.len() != prior.node_count() {
        return Err(BridgeError::Dimension {
            got: nu.len(),
            expected: prior.node_count(),
        });
    }
    Ok(())
}

/// Checks that every source in `supp(nu0)` reaches every sink in
/// `supp(nuN)` through positive kernel entries.
fn check_feasibility(prior: &PriorChain, nu0: &Marginal, nu_n: &Marginal) -> Result<(), BridgeError> {
    let sinks = nu_n.support_indices();
    for source in nu0.support_indices() {
        let mut row = Array1::<f64>::zeros(prior.node_count());
        row[source] = 1.0;
        for m in prior.transitions() {
            row = row.dot(m);
            let s = sup_norm(row.view());
            if s > 0.0 {
                row /= s;
            }
        }
        if let Some(&sink) = sinks.iter().find(|&&j| row[j] <= 0.0) {
            return Err(BridgeError::Infeasible {
                origin: source + 1,
                sink: sink + 1,
            });
        }
    }
    Ok(())
}

struct Pass {
    phi: Array2<f64>,
    phi_hat: Array2<f64>,
}

/// One backward/forward sweep with `phi(N)` fixed.
fn sweep(prior: &PriorChain, nu0: &Marginal, phi_end: &Array1<f64>) -> Option<Pass> {
    let big_n = prior.horizon();
    let n = prior.node_count();
    let mut phi = Array2::<f64>::zeros((big_n + 1, n));
    phi.row_mut(big_n).assign(phi_end);
    for t in (0..big_n).rev() {
        let next = prior.transition(t).dot(&phi.row(t + 1));
        phi.row_mut(t).assign(&next);
    }
    let mut phi_hat = Array2::<f64>::zeros((big_n + 1, n));
    for (i, &w) in nu0.weights().iter().enumerate() {
        if w > 0.0 {
            if phi[[0, i]] <= 0.0 {
                return None;
            }
            phi_hat[[0, i]] = w / phi[[0, i]];
        }
    }
    for t in 0..big_n {
        let next = prior.transition(t).t().dot(&phi_hat.row(t));
        phi_hat.row_mut(t + 1).assign(&next);
    }
    Some(Pass { phi, phi_hat })
}

/// Solves the Schrödinger system for `prior` with marginals `nu0`, `nu_n`.
///
/// Requires every `(source, sink)` pair of the marginal supports to be
/// joined by a positive-mass path.
pub fn solve_schrodinger(
    prior: &PriorChain,
    nu0: &Marginal,
    nu_n: &Marginal,
    cfg: &SolverConfig,
) -> Result<BridgeSolution, BridgeError> {
    cfg.validate()?;
    check_dims(prior, nu0)?;
    check_dims(prior, nu_n)?;
    let n = prior.node_count();
    let big_n = prior.horizon();

    if big_n == 0 {
        let diff = (nu0.weights() - nu_n.weights()).iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        if diff > cfg.tol {
            let (source, sink) = nu0
                .support_indices()
                .into_iter()
                .flat_map(|i| nu_n.support_indices().into_iter().map(move |j| (i, j)))
                .find(|(i, j)| i != j)
                .unwrap_or((0, 0));
            return Err(BridgeError::Infeasible {
                origin: source + 1,
                sink: sink + 1,
            });
        }
        let marginals = nu0.weights().clone().insert_axis(Axis(0));
        return Ok(BridgeSolution {
            phi: Array2::ones((1, n)),
            phi_hat: marginals.clone(),
            transitions: Vec::new(),
            marginals,
            sweeps: 0,
            residual: diff,
        });
    }

    check_feasibility(prior, nu0, nu_n)?;
    let infeasible = || {
        let source = nu0.support_indices()[0];
        let sink = nu_n.support_indices()[0];
        BridgeError::Infeasible {
            origin: source + 1,
            sink: sink + 1,
        }
    };
    let support_n = nu_n.support();
    // phi(N) must vanish off supp(nu_N), otherwise policy rows that carry
    // no flow would point at non-target nodes
    let mut phi_end: Array1<f64> = support_n.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
    let mut residual = f64::INFINITY;
    for sweeps in 1..=cfg.max_iter {
        let pass = sweep(prior, nu0, &phi_end).ok_or_else(infeasible)?;
        let hat_end = pass.phi_hat.row(big_n);
        let mut next = Array1::<f64>::zeros(n);
        residual = 0.0;
        for j in 0..n {
            let target = nu_n.weights()[j];
            let product = if support_n[j] { phi_end[j] * hat_end[j] } else { 0.0 };
            residual = residual.max((product - target).abs());
            if support_n[j] {
                if hat_end[j] <= 0.0 {
                    return Err(infeasible());
                }
                next[j] = target / hat_end[j];
            }
        }
        let s = sup_norm(next.view());
        next /= s;
        let masked_old: Array1<f64> = phi_end
            .iter()
            .zip(&support_n)
            .map(|(&x, &on)| if on { x } else { 0.0 })
            .collect();
        let change = hilbert_distance(masked_old.view(), next.view());
        if residual <= cfg.tol && change <= cfg.tol {
            let transitions = transitions_from_potentials(prior, &pass.phi);
            let marginals = propagate(nu0.weights(), &transitions);
            return Ok(BridgeSolution {
                phi: pass.phi,
                phi_hat: pass.phi_hat,
                transitions,
                marginals,
                sweeps,
                residual,
            });
        }
        phi_end = next;
    }
    Err(BridgeError::NotConverged {
        sweeps: cfg.max_iter,
        residual,
    })
}

fn propagate(nu0: &Array1<f64>, transitions: &[Array2<f64>]) -> Array2<f64> {
    let n = nu0.len();
    let mut flow = Array2::<f64>::zeros((transitions.len() + 1, n));
    flow.row_mut(0).assign(nu0);
    for (t, pi) in transitions.iter().enumerate() {
        let next = flow.row(t).dot(pi);
        flow.row_mut(t + 1).assign(&next);
    }
    flow
}

/// Marginal flow of a solved bridge, rows `t = 0..=N`.
pub fn marginal_flow(sol: &BridgeSolution) -> Array2<f64> {
    sol.marginal_flow()
}

/// Paths with positive prior kernel weight along every step, with optional
/// endpoint constraints, in lexicographic order.
pub fn enumerate_prior_paths(
    prior: &PriorChain,
    from: Option<usize>,
    to: Option<usize>,
) -> Result<Vec<Path>, GraphError> {
    let n = prior.node_count();
    let sources: Vec<usize> = match from {
        Some(f) => vec![f],
        None => (0..n).collect(),
    };
    let mut targets = vec![to.is_none(); n];
    if let Some(t) = to {
        targets[t] = true;
    }
    enumerate_layered(
        n,
        prior.horizon(),
        &sources,
        &targets,
        |t, i| {
            prior
                .transition(t)
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(|(j, _)| j)
                .collect()
        },
        DEFAULT_PATH_CAP,
    )
}

/// Paths from `x0` to `xN` whose mass is within a factor `1 - rel_tol` of
/// the largest such mass.
pub fn most_probable_paths(
    g: &DirectedGraph,
    measure: &dyn PathMass,
    x0: NodeId,
    x_n: NodeId,
    rel_tol: f64,
) -> Result<Vec<Path>, BridgeError> {
    let paths = g.enumerate_paths(measure.horizon(), Some(x0), Some(x_n))?;
    let logs: Vec<f64> = paths.iter().map(|p| measure.log_mass(p)).collect();
    let best = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY || best.is_nan() {
        return Err(BridgeError::NoPositivePath { from: x0.0, to: x_n.0 });
    }
    let threshold = best + (1.0 - rel_tol).ln();
    Ok(paths
        .into_iter()
        .zip(logs)
        .filter(|(_, l)| *l >= threshold)
        .map(|(p, _)| p)
        .collect())
}

/// The solved bridge used as a prior: its policy as kernels, started from
/// the uniform measure (the bridge only depends on the start through its
/// support).
pub fn bridge_as_prior(sol: &BridgeSolution) -> Result<PriorChain, BridgeError> {
    let n = sol.node_count();
    Ok(PriorChain::new(
        sol.transitions().to_vec(),
        Array1::from_elem(n, 1.0 / n as f64),
    )?)
}

/// Solves `first` over `prior`, then `second` over both `prior` and the
/// first bridge, and returns the largest entrywise difference between the
/// two resulting policies.
pub fn iterated_bridge_check(
    prior: &PriorChain,
    first: (&Marginal, &Marginal),
    second: (&Marginal, &Marginal),
    cfg: &SolverConfig,
) -> Result<f64, BridgeError> {
    let bridge = solve_schrodinger(prior, first.0, first.1, cfg)?;
    let over_bridge = solve_schrodinger(&bridge_as_prior(&bridge)?, second.0, second.1, cfg)?;
    let over_prior = solve_schrodinger(prior, second.0, second.1, cfg)?;
    Ok(max_policy_difference(&over_bridge, &over_prior))
}

pub fn max_policy_difference(a: &BridgeSolution, b: &BridgeSolution) -> f64 {
    a.transitions()
        .iter()
        .zip(b.transitions())
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictionRatio {
    /// `(max ratio - min ratio) / max ratio` over the paths.
    pub spread: f64,
    /// Largest bridge-to-prior mass ratio.
    pub ratio: f64,
    pub paths: usize,
}

/// Ratio of bridge mass to prior mass over all `x0 -> xN` paths with
/// positive prior mass.
pub fn restriction_ratio_check(
    prior: &PriorChain,
    sol: &BridgeSolution,
    x0: NodeId,
    x_n: NodeId,
) -> Result<RestrictionRatio, BridgeError> {
    let paths = enumerate_prior_paths(prior, Some(x0.index()), Some(x_n.index()))?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut count = 0;
    for p in &paths {
        let lm = prior.log_path_mass(p)?;
        let pb = sol.path_probability(p)?;
        if lm == f64::NEG_INFINITY || pb == 0.0 {
            continue;
        }
        let r = pb.ln() - lm;
        lo = lo.min(r);
        hi = hi.max(r);
        count += 1;
    }
    if count == 0 {
        return Err(BridgeError::NoPositivePath { from: x0.0, to: x_n.0 });
    }
    Ok(RestrictionRatio {
        spread: 1.0 - (lo - hi).exp(),
        ratio: hi.exp(),
        paths: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{g9, g9_closed, g9_modified};
    use crate::prior::boltzmann_prior;
    use ndarray::array;

    fn delta(node: usize) -> Marginal {
        Marginal::delta(9, NodeId(node)).unwrap()
    }

    fn solve_g9(t: f64, n: usize) -> (PriorChain, BridgeSolution) {
        let prior = boltzmann_prior(&g9(), t, n).unwrap();
        let sol = solve_schrodinger(&prior, &delta(1), &delta(9), &SolverConfig::default()).unwrap();
        (prior, sol)
    }

    #[test]
    fn three_step_flow() {
        let (_, sol) = solve_g9(1.0, 3);
        let f = sol.marginal_flow();
        let third = 1.0 / 3.0;
        let expected = [
            [1.0, 0., 0., 0., 0., 0., 0., 0., 0.],
            [0., third, third, third, 0., 0., 0., 0., 0.],
            [0., 0., 0., 0., 0., 0., third, 2.0 * third, 0.],
            [0., 0., 0., 0., 0., 0., 0., 0., 1.0],
        ];
        for t in 0..4 {
            for i in 0..9 {
                assert!((f[[t, i]] - expected[t][i]).abs() < 1e-12, "({t},{i})");
            }
        }
    }

    #[test]
    fn four_step_row_one() {
        let (_, sol) = solve_g9(1.0, 4);
        let row = sol.marginals().row(1);
        for (i, want) in [(1, 0.4705), (2, 0.3059), (3, 0.2236)] {
            assert!((row[i] - want).abs() < 1e-4);
        }
    }

    #[test]
    fn path_probabilities() {
        let (_, sol) = solve_g9(1.0, 4);
        let p = sol.path_probability(&Path::from_labels(&[1, 2, 7, 9, 9])).unwrap();
        assert!((p - 0.2236).abs() < 1e-3);
        let p = sol.path_probability(&Path::from_labels(&[1, 2, 5, 6, 9])).unwrap();
        assert!((p - 0.0823).abs() < 1e-3);
        assert_eq!(sol.path_probability(&Path::from_labels(&[1, 5, 6, 9, 9])).unwrap(), 0.0);
        assert!(matches!(
            sol.path_probability(&Path::from_labels(&[1, 2])),
            Err(BridgeError::PathLength { got: 2, expected: 5 })
        ));
    }

    #[test]
    fn schrodinger_system_holds() {
        let (prior, sol) = solve_g9(0.7, 4);
        let (phi, hat) = (sol.phi(), sol.phi_hat());
        for t in 0..4 {
            let back = prior.transition(t).dot(&phi.row(t + 1));
            let fwd = prior.transition(t).t().dot(&hat.row(t));
            for i in 0..9 {
                assert!((phi[[t, i]] - back[i]).abs() <= 1e-14 * back[i].max(1.0));
                assert!((hat[[t + 1, i]] - fwd[i]).abs() <= 1e-14 * fwd[i].max(1.0));
            }
        }
        for t in 0..=4 {
            let err: f64 = (0..9)
                .map(|i| (phi[[t, i]] * hat[[t, i]] - sol.marginals()[[t, i]]).abs())
                .sum();
            assert!(err <= 10.0 * 1e-12, "t={t} err={err}");
        }
        assert!(sol.residual() <= 1e-12);
    }

    #[test]
    fn stochastic_prior_is_its_own_bridge() {
        let m = array![[0.5, 0.5, 0.0], [0.2, 0.3, 0.5], [0.1, 0.1, 0.8]];
        let mu0 = array![0.2, 0.3, 0.5];
        let prior = PriorChain::homogeneous(m.clone(), 3, mu0.clone()).unwrap();
        let mut mu_n = mu0.clone();
        for _ in 0..3 {
            mu_n = mu_n.dot(&m);
        }
        let sol = solve_schrodinger(
            &prior,
            &Marginal::new(mu0.to_vec()).unwrap(),
            &Marginal::normalized(mu_n.to_vec()).unwrap(),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.sweeps(), 1);
        for pi in sol.transitions() {
            for (a, b) in pi.iter().zip(m.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_horizon() {
        let prior = boltzmann_prior(&g9(), 1.0, 0).unwrap();
        let nu = Marginal::uniform_on(9, &[NodeId(2), NodeId(5)]).unwrap();
        let sol = solve_schrodinger(&prior, &nu, &nu, &SolverConfig::default()).unwrap();
        assert_eq!(sol.marginal_flow().nrows(), 1);
        assert_eq!(sol.marginal_flow().row(0), nu.weights().view());
        assert!(matches!(
            solve_schrodinger(&prior, &delta(1), &delta(2), &SolverConfig::default()),
            Err(BridgeError::Infeasible { origin: 1, sink: 2 })
        ));
    }

    #[test]
    fn infeasible_pairs_are_named() {
        let prior = boltzmann_prior(&g9(), 1.0, 2).unwrap();
        let err = solve_schrodinger(&prior, &delta(1), &delta(9), &SolverConfig::default()).unwrap_err();
        assert_eq!(err, BridgeError::Infeasible { origin: 1, sink: 9 });
        let err = solve_schrodinger(&prior, &delta(9), &delta(1), &SolverConfig::default()).unwrap_err();
        assert_eq!(err, BridgeError::Infeasible { origin: 9, sink: 1 });
    }

    #[test]
    fn rejects_bad_inputs() {
        let prior = boltzmann_prior(&g9(), 1.0, 3).unwrap();
        let short = Marginal::delta(3, NodeId(1)).unwrap();
        assert!(matches!(
            solve_schrodinger(&prior, &short, &delta(9), &SolverConfig::default()),
            Err(BridgeError::Dimension { got: 3, expected: 9 })
        ));
        let cfg = SolverConfig { tol: 0.0, max_iter: 10 };
        assert!(matches!(
            solve_schrodinger(&prior, &delta(1), &delta(9), &cfg),
            Err(BridgeError::InvalidConfig(_))
        ));
        assert!(Marginal::new(vec![0.5, 0.4]).is_err());
        assert!(Marginal::new(vec![1.5, -0.5]).is_err());
        assert!(Marginal::delta(9, NodeId(10)).is_err());
    }

    #[test]
    fn policy_rows_vanish_off_the_target() {
        let prior = boltzmann_prior(&g9(), 1.0, 4).unwrap();
        let sol = solve_schrodinger(&prior, &delta(1), &delta(9), &SolverConfig::default()).unwrap();
        for j in 0..8 {
            assert_eq!(sol.phi()[[4, j]], 0.0);
        }
        // node 4 only reaches 8 in one step
        assert_eq!(sol.transitions()[3].row(3).sum(), 0.0);
        assert!((sol.transitions()[3].row(7).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_convergence_is_reported() {
        let prior = boltzmann_prior(&g9_closed(), 1.0, 8).unwrap();
        let nu0 = Marginal::uniform_on(9, &[NodeId(1), NodeId(2), NodeId(3)]).unwrap();
        let nu_n = Marginal::uniform_on(9, &[NodeId(8), NodeId(9)]).unwrap();
        let cfg = SolverConfig { tol: 1e-12, max_iter: 1 };
        assert!(matches!(
            solve_schrodinger(&prior, &nu0, &nu_n, &cfg),
            Err(BridgeError::NotConverged { sweeps: 1, .. })
        ));
    }

    #[test]
    fn gauge_invariance() {
        let prior = boltzmann_prior(&g9(), 1.0, 4).unwrap();
        let nu0 = Marginal::uniform_on(9, &[NodeId(1), NodeId(2)]).unwrap();
        let sol = solve_schrodinger(&prior, &nu0, &delta(9), &SolverConfig::default()).unwrap();
        let scaled = sol.phi() * 1e3;
        let pis = transitions_from_potentials(&prior, &scaled);
        for (a, b) in pis.iter().zip(sol.transitions()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        let hat = sol.phi_hat() / 1e3;
        let products = &scaled * &hat;
        for (x, y) in products.iter().zip(sol.marginals().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_scaling_invariance() {
        let g = g9_modified();
        let prior = boltzmann_prior(&g, 0.8, 4).unwrap();
        let mut kernels: Vec<_> = (0..4).map(|t| prior.kernel(t)).collect();
        kernels[1] *= 37.0;
        kernels[3] *= 0.01;
        let scaled = PriorChain::new(kernels, prior.mu0() * 5.0).unwrap();
        let nu0 = Marginal::uniform_on(9, &[NodeId(1), NodeId(2)]).unwrap();
        let a = solve_schrodinger(&prior, &nu0, &delta(9), &SolverConfig::default()).unwrap();
        let b = solve_schrodinger(&scaled, &nu0, &delta(9), &SolverConfig::default()).unwrap();
        assert!(max_policy_difference(&a, &b) < 1e-13);
    }

    #[test]
    fn most_probable_paths_are_minimal() {
        let g = g9();
        let (_, sol) = solve_g9(1.0, 4);
        let best = most_probable_paths(&g, &sol, NodeId(1), NodeId(9), DEFAULT_TIE_TOL).unwrap();
        let labels: Vec<_> = best.iter().map(Path::labels).collect();
        assert_eq!(
            labels,
            vec![vec![1, 2, 7, 9, 9], vec![1, 3, 8, 9, 9], vec![1, 4, 8, 9, 9]]
        );
    }

    #[test]
    fn most_probable_single_path_graph() {
        let g = DirectedGraph::from_edges(3, &[(1, 2, 1.0), (2, 3, 2.0)]).unwrap();
        let prior = boltzmann_prior(&g, 1.0, 2).unwrap();
        let d1 = Marginal::delta(3, NodeId(1)).unwrap();
        let d3 = Marginal::delta(3, NodeId(3)).unwrap();
        let sol = solve_schrodinger(&prior, &d1, &d3, &SolverConfig::default()).unwrap();
        let best = most_probable_paths(&g, &sol, NodeId(1), NodeId(3), DEFAULT_TIE_TOL).unwrap();
        assert_eq!(best, vec![Path::from_labels(&[1, 2, 3])]);
        assert!(matches!(
            most_probable_paths(&g, &sol, NodeId(2), NodeId(3), DEFAULT_TIE_TOL),
            Err(BridgeError::NoPositivePath { .. })
        ));
    }

    #[test]
    fn iterated_bridge_same_pair() {
        let prior = boltzmann_prior(&g9(), 1.0, 4).unwrap();
        let (a, b) = (delta(1), delta(9));
        let dev = iterated_bridge_check(&prior, (&a, &b), (&a, &b), &SolverConfig::default()).unwrap();
        assert!(dev <= 1e-9);
    }

    #[test]
    fn iterated_bridge_new_source() {
        let prior = boltzmann_prior(&g9(), 1.0, 4).unwrap();
        let start = Marginal::uniform_on(9, &[NodeId(1), NodeId(2)]).unwrap();
        let dev = iterated_bridge_check(
            &prior,
            (&delta(1), &delta(9)),
            (&start, &delta(9)),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(dev <= 1e-9, "deviation {dev}");
    }

    #[test]
    fn restriction_ratio_constant() {
        let (prior, sol) = solve_g9(1.0, 4);
        let r = restriction_ratio_check(&prior, &sol, NodeId(1), NodeId(9)).unwrap();
        assert_eq!(r.paths, 7);
        assert!(r.spread <= 1e-9);
        // nu_0 / mu_0 * phi(N, 9) / phi(0, 1) with nu_0 = delta, mu_0 = 1/9,
        // corrected for the normalized kernels
        let scale: f64 = (0..4).map(|t| prior.log_scale(t)).sum();
        let expected = 9.0 * sol.phi()[[4, 8]] / sol.phi()[[0, 0]] * (-scale).exp();
        assert!((r.ratio - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn restriction_ratio_of_prior_against_itself() {
        let m = array![[0.5, 0.5], [0.25, 0.75]];
        let prior = PriorChain::homogeneous(m, 3, array![0.5, 0.5]).unwrap();
        let nu0 = Marginal::new(vec![0.5, 0.5]).unwrap();
        let mut mu = array![0.5, 0.5];
        for t in 0..3 {
            mu = mu.dot(prior.transition(t)) * prior.log_scale(t).exp();
        }
        let nu_n = Marginal::normalized(mu.to_vec()).unwrap();
        let sol = solve_schrodinger(&prior, &nu0, &nu_n, &SolverConfig::default()).unwrap();
        let r = restriction_ratio_check(&prior, &sol, NodeId(1), NodeId(2)).unwrap();
        assert!(r.spread.abs() < 1e-15);
        assert!((r.ratio - 1.0).abs() < 1e-14);
    }
}
