//! Finite-difference and enumeration oracles shared by the gradient tests
//! and the acceptance run.
#![allow(dead_code)]

use rand::Rng;

use ltac::navenv::JointAction;
use ltac::policynet::{init_policy, PolicyParams, PolicyShape};
use ltac::rng::seeded;
use ltac::valuenet::{init_valuenet, Activation, ValueNetParams};

pub const H: f64 = 1e-5;
pub const PROBES: usize = 20;

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero coordinates
/// from being judged on rounding noise alone.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn value_fd(net: &ValueNetParams, s: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..net.layers().len() {
        for k in 0..net.layers()[l].len() {
            let mut plus = net.clone();
            plus.layers_mut()[l][k] += H;
            let mut minus = net.clone();
            minus.layers_mut()[l][k] -= H;
            out.push((plus.value(s).unwrap() - minus.value(s).unwrap()) / (2.0 * H));
        }
    }
    out
}

/// Worst relative error of `value_grad` over random probes; relu probes
/// closer than `1e-3` to a kink are redrawn.
pub fn value_grad_worst(activation: Activation, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    let mut probes = 0;
    while probes < PROBES {
        let net = init_valuenet(&mut rng, 8, 2, 4, activation).unwrap();
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        if activation == Activation::Relu && net.kink_margin(&s).unwrap() < 1e-3 {
            continue;
        }
        probes += 1;
        let analytic = net.value_grad(&s).unwrap().layers.concat();
        for (a, f) in analytic.iter().zip(value_fd(&net, &s)) {
            worst = worst.max(rel_err(*a, f, 1e-4));
        }
    }
    worst
}

/// Worst relative error of the policy score against `d log pi / d omega`.
pub fn policy_score_worst(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    let mut probes = 0;
    while probes < PROBES {
        let policy = init_policy(&mut rng, 6, vec![5, 5], 8).unwrap();
        let s: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        if policy.kink_margin(&s).unwrap() < 1e-3 {
            continue;
        }
        probes += 1;
        let a = JointAction(vec![rng.random_range(0..5), rng.random_range(0..5)]);
        let score = policy.score(&s, &a).unwrap();
        for k in 0..policy.dim() {
            let mut plus = policy.clone();
            plus.as_mut_slice()[k] += H;
            let mut minus = policy.clone();
            minus.as_mut_slice()[k] -= H;
            let fd = (plus.log_prob(&s, &a).unwrap() - minus.log_prob(&s, &a).unwrap()) / (2.0 * H);
            worst = worst.max(rel_err(score[k], fd, 1e-4));
        }
    }
    worst
}

/// `max_k |sum_a pi(a|s) psi_k(a|s)|` over all 25 joint actions of two
/// five-action agents, for a linear and a two-hidden-layer policy.
pub fn expected_score_worst(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for hidden in [vec![], vec![8, 8]] {
        let shape = PolicyShape::new(6, hidden, vec![5, 5]).unwrap();
        let policy = PolicyParams::random(shape, &mut rng);
        let s: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dist = policy.action_distribution(&s).unwrap();
        let mut expected = vec![0.0; policy.dim()];
        for a0 in 0..5 {
            for a1 in 0..5 {
                let p = dist[0][a0] * dist[1][a1];
                let psi = policy.score(&s, &JointAction(vec![a0, a1])).unwrap();
                for (e, x) in expected.iter_mut().zip(psi) {
                    *e += p * x;
                }
            }
        }
        worst = worst.max(expected.iter().map(|x| x.abs()).fold(0.0, f64::max));
    }
    worst
}
