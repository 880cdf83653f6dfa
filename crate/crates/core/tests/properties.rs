use ndarray::Array1;
use proptest::prelude::*;

use netbridge::bridge::{enumerate_prior_paths, BridgeError};
use netbridge::metrics::{chain_entropy, chain_free_energy, free_energy, relative_entropy};
use netbridge::oracle::ORACLE_TOL;
use netbridge::*;

/// Random graph on `n` nodes with every node given a self-loop so that
/// most endpoint pairs are connected for short horizons.
fn graph_strategy() -> impl Strategy<Value = DirectedGraph> {
    (3usize..=6).prop_flat_map(|n| {
        prop::collection::vec((0.0f64..1.0, 0.2f64..3.0), n * n).prop_map(move |cells| {
            let mut edges = Vec::new();
            for (k, (keep, len)) in cells.into_iter().enumerate() {
                let (i, j) = (k / n + 1, k % n + 1);
                if i == j || keep < 0.45 {
                    edges.push((i, j, len));
                }
            }
            DirectedGraph::from_edges(n, &edges).unwrap()
        })
    })
}

fn marginal_from(weights: &[f64], n: usize) -> Marginal {
    let w: Vec<f64> = (0..n).map(|i| if weights[i] < 0.35 { 0.0 } else { weights[i] }).collect();
    if w.iter().all(|&x| x == 0.0) {
        return Marginal::delta(n, NodeId(1)).unwrap();
    }
    Marginal::normalized(w).unwrap()
}

struct Instance {
    g: DirectedGraph,
    t: f64,
    prior: PriorChain,
    nu0: Marginal,
    nu_n: Marginal,
    sol: BridgeSolution,
}

fn instance(g: DirectedGraph, t: f64, steps: usize, a: &[f64], b: &[f64]) -> Option<Instance> {
    let n = g.node_count();
    let prior = boltzmann_prior(&g, t, steps).unwrap();
    let nu0 = marginal_from(a, n);
    let nu_n = marginal_from(b, n);
    match solve_schrodinger(&prior, &nu0, &nu_n, &SolverConfig::default()) {
        Ok(sol) => Some(Instance {
            g,
            t,
            prior,
            nu0,
            nu_n,
            sol,
        }),
        Err(BridgeError::Infeasible { .. }) => None,
        Err(e) => panic!("{e}"),
    }
}

prop_compose! {
    fn problem()(g in graph_strategy(), t in 0.2f64..5.0, steps in 1usize..=4,
                 a in prop::collection::vec(0.0f64..1.0, 6), b in prop::collection::vec(0.0f64..1.0, 6))
                 -> (DirectedGraph, f64, usize, Vec<f64>, Vec<f64>) {
        (g, t, steps, a, b)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bridge_meets_marginals_and_matches_oracle((g, t, steps, a, b) in problem()) {
        let Some(inst) = instance(g, t, steps, &a, &b) else { return Ok(()) };
        let flow = inst.sol.marginal_flow();
        for j in 0..inst.nu0.len() {
            prop_assert!((flow[[0, j]] - inst.nu0.weights()[j]).abs() <= 1e-12);
            prop_assert!((flow[[steps, j]] - inst.nu_n.weights()[j]).abs() <= 1e-9);
        }
        for (t, pi) in inst.sol.transitions().iter().enumerate() {
            for (i, row) in pi.outer_iter().enumerate() {
                if flow[[t, i]] > 0.0 {
                    prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                }
            }
        }
        let oracle = oracle_bridge(&inst.prior, &inst.nu0, &inst.nu_n, ORACLE_TOL).unwrap();
        let mut tv = 0.0;
        for p in enumerate_prior_paths(&inst.prior, None, None).unwrap() {
            tv += (inst.sol.path_probability(&p).unwrap() - oracle.get(&p)).abs();
        }
        prop_assert!(0.5 * tv <= 1e-9, "tv {}", 0.5 * tv);
    }

    #[test]
    fn prior_scale_does_not_change_the_bridge((g, t, steps, a, b) in problem(), c in 1e-3f64..1e3) {
        let Some(inst) = instance(g, t, steps, &a, &b) else { return Ok(()) };
        let n = inst.g.node_count();
        let scaled = PriorChain::homogeneous(
            inst.prior.kernel(0) * c,
            steps,
            Array1::from_elem(n, 1.0 / n as f64),
        ).unwrap();
        let other = solve_schrodinger(&scaled, &inst.nu0, &inst.nu_n, &SolverConfig::default()).unwrap();
        for (x, y) in inst.sol.transitions().iter().zip(other.transitions()) {
            for (p, q) in x.iter().zip(y.iter()) {
                prop_assert!((p - q).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn bridge_minimizes_free_energy((g, t, steps, a, b) in problem(), t2 in 0.2f64..5.0, alpha in 0.0f64..1.0) {
        let Some(inst) = instance(g, t, steps, &a, &b) else { return Ok(()) };
        let other_prior = boltzmann_prior(&inst.g, t2, steps).unwrap();
        let other = solve_schrodinger(&other_prior, &inst.nu0, &inst.nu_n, &SolverConfig::default()).unwrap();
        let f = chain_free_energy(&inst.sol, inst.t, &inst.g).free_energy;
        let f_other = chain_free_energy(&other, inst.t, &inst.g).free_energy;
        prop_assert!(f <= f_other + 1e-9, "{f} > {f_other}");

        let paths = enumerate_prior_paths(&inst.prior, None, None).unwrap();
        let p = PathMeasure::from_mass(&paths, &inst.sol).unwrap();
        let q = PathMeasure::from_mass(&paths, &other).unwrap();
        let mixed = p.mix(&q, alpha);
        prop_assert!(f <= free_energy(&mixed, inst.t, &inst.g).free_energy + 1e-9);
        prop_assert!(chain_entropy(&inst.sol) <= (paths.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn relative_entropy_is_jointly_convex(
        w in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 2..12),
        alpha in 0.0f64..1.0,
    ) {
        let paths: Vec<Path> = (0..w.len()).map(|k| Path::from_indices(vec![k, k + 1])).collect();
        let measure = |col: Vec<f64>| {
            let total: f64 = col.iter().sum();
            PathMeasure::new(1, paths.iter().cloned().zip(col.into_iter().map(|x| x / total))).unwrap()
        };
        let p1 = measure(w.iter().map(|x| x.0).collect());
        let p2 = measure(w.iter().map(|x| x.1).collect());
        let q1 = measure(w.iter().map(|x| x.2).collect());
        let q2 = measure(w.iter().map(|x| x.3).collect());
        let lhs = relative_entropy(&p1.mix(&p2, alpha), &q1.mix(&q2, alpha));
        let rhs = alpha * relative_entropy(&p1, &q1) + (1.0 - alpha) * relative_entropy(&p2, &q2);
        prop_assert!(lhs <= rhs + 1e-12);
        prop_assert!(relative_entropy(&p1, &p1).abs() <= 1e-12);
        prop_assert!(relative_entropy(&p1, &q1) >= -1e-12);
    }

    #[test]
    fn hilbert_metric_axioms(
        v in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0, 0.01f64..10.0), 1..8),
        c in 0.01f64..100.0,
    ) {
        let x = Array1::from_iter(v.iter().map(|t| t.0));
        let y = Array1::from_iter(v.iter().map(|t| t.1));
        let z = Array1::from_iter(v.iter().map(|t| t.2));
        let d = |a: &Array1<f64>, b: &Array1<f64>| hilbert_distance(a.view(), b.view());
        prop_assert!(d(&x, &x).abs() <= 1e-12);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() <= 1e-12);
        prop_assert!((d(&x, &(&y * c)) - d(&x, &y)).abs() <= 1e-9);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
    }
}
