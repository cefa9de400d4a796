use nalgebra::DMatrix;
use proptest::prelude::*;

use ltac::diagnostics::{consensus_error, mean_preservation_residual, stepsize_bounds};
use ltac::ltadmm::{communicate, BridgeVars, MessageLedger};
use ltac::topology::{build_structures, Graph};
use ltac::valuenet::{ProjectionBall, ValueNetParams, Activation};

/// Random connected graph: a random spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = Graph> {
    (3usize..9).prop_flat_map(|n| {
        let parents = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = proptest::collection::vec((0..n, 0..n), 0..n);
        (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> =
                parents.iter().enumerate().map(|(k, p)| (p.index(k + 1), k + 1)).collect();
            for (a, b) in extra {
                let e = (a.min(b), a.max(b));
                if a != b && !edges.iter().any(|&(x, y)| (x.min(y), x.max(y)) == e) {
                    edges.push(e);
                }
            }
            Graph::from_edges(n, edges).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn incidence_identities(g in connected_graph()) {
        let s = build_structures(&g);
        let m = s.slot_count();
        let a = &s.incidence;
        let p = &s.permutation;
        prop_assert_eq!(p * p, DMatrix::<f64>::identity(m, m));
        prop_assert_eq!(a.transpose() * a, s.degree.clone());
        let mut adj = DMatrix::<f64>::zeros(g.node_count(), g.node_count());
        for &(i, j) in g.edges() {
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
        }
        prop_assert_eq!(a.transpose() * p * a, adj);
        prop_assert!(s.spectrum[0].abs() < 1e-9 && s.spectrum[1] > 1e-9);
    }

    #[test]
    fn mean_preserved_from_arbitrary_bridges(
        g in connected_graph(),
        seed in any::<u64>(),
        rho in 0.05f64..2.0,
    ) {
        use rand::Rng;
        let mut rng = ltac::rng::seeded(seed);
        let dim = 3;
        let z = BridgeVars::from_entries(
            g.directed_slots().into_iter().map(|s| (s, (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())),
        );
        let omegas: Vec<Vec<f64>> =
            (0..g.node_count()).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let mut ledger = MessageLedger::default();
        let next = communicate(&z, &omegas, rho, &g, &mut ledger).unwrap();
        prop_assert!(mean_preservation_residual(&g, &next, &omegas, rho) < 1e-12);
        prop_assert_eq!(ledger.total_messages(), 2 * g.edge_count() as u64);
    }

    #[test]
    fn consensus_error_shift_invariant(
        rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 1..6),
        shift in proptest::collection::vec(-10.0f64..10.0, 4),
    ) {
        let shifted: Vec<Vec<f64>> =
            rows.iter().map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        prop_assert!((consensus_error(&rows) - consensus_error(&shifted)).abs() < 1e-9);
        prop_assert!(consensus_error(&rows) >= 0.0);
    }

    #[test]
    fn projection_lands_in_ball_and_is_idempotent(
        w in proptest::collection::vec(-20.0f64..20.0, 6),
        radius in 0.01f64..5.0,
    ) {
        let center = ValueNetParams::from_parts(2, 3, Activation::Tanh, vec![vec![0.5; 6]], vec![1.0, -1.0]).unwrap();
        let params = ValueNetParams::from_parts(2, 3, Activation::Tanh, vec![w], vec![1.0, -1.0]).unwrap();
        let ball = ProjectionBall::new(center, radius).unwrap();
        let once = ball.project(&params).unwrap();
        prop_assert!(ball.contains(&once, 1e-12));
        let twice = ball.project(&once).unwrap();
        prop_assert!(once.distance(&twice) < 1e-12);
        if ball.contains(&params, 0.0) {
            prop_assert_eq!(&once, &params);
        }
    }
}

#[test]
fn alpha_bar_nonincreasing_in_l_and_tau() {
    let ring = Graph::ring(5).unwrap();
    let (rho, beta) = (0.5, 0.05);
    let lambda_u = 3.618_033_988_749_895;
    for tau in 1..=8usize {
        // Only meaningful while the block recursion is contractive.
        if lambda_u * rho * tau as f64 * beta >= 2.0 {
            continue;
        }
        let mut prev = f64::INFINITY;
        for l in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let a = stepsize_bounds(l, tau, rho, beta, &ring).unwrap().alpha_bar;
            assert!(a <= prev * (1.0 + 1e-12), "L = {l}, tau = {tau}");
            prev = a;
        }
    }
    for l in [0.5, 1.0, 4.0] {
        let mut prev = f64::INFINITY;
        for tau in 1..=8usize {
            if lambda_u * rho * tau as f64 * beta >= 2.0 {
                break;
            }
            let a = stepsize_bounds(l, tau, rho, beta, &ring).unwrap().alpha_bar;
            assert!(a <= prev * (1.0 + 1e-12), "L = {l}, tau = {tau}");
            prev = a;
        }
    }
}
