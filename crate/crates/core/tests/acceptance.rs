//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exit status is nonzero when any criterion fails, except the critic
//! sanity check (7) and the navigation learning-curve criteria (8a, 8b),
//! whose failures are reported but tolerated unless `ACCEPTANCE_STRICT=1`
//! is set.

mod common;

use std::time::Instant;

use ltac::critic::{decentralized_td, TdSettings};
use ltac::diagnostics::{beta_window, stepsize_bounds, v_block_inverses};
use ltac::policynet::{PolicyParams, PolicyShape};
use ltac::rng::seeded;
use ltac::runner::{quadratic_reference, train, write_metrics_csv, Oracle, RunConfig, TrainingHistory};
use ltac::sampler::ChainCursor;
use ltac::synthetic::TabularMdp;
use ltac::topology::{build_structures, Graph};
use ltac::valuenet::{init_valuenet, Activation, ProjectionBall};

const TOLERATED: [&str; 3] = ["7", "8a", "8b"];

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Default)]
struct Tally {
    max_mp: f64,
    non_policy: u64,
    runs: usize,
}

impl Tally {
    fn track(&mut self, h: &TrainingHistory) {
        self.max_mp = self.max_mp.max(h.max_mean_preservation_residual);
        self.non_policy += h.ledger.non_policy_messages();
        self.runs += 1;
    }
}

fn below(x: f64, tol: f64) -> bool {
    x < tol
}

fn criterion_1(tally: &mut Tally) -> Outcome {
    let start = Instant::now();
    let h = train(&quadratic_reference(2000, 3)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    tally.track(&h);
    let dist = h
        .final_omegas
        .iter()
        .map(|w| w.iter().map(|x| (x - 1.0 / 3.0).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let consensus = h.metrics.last().unwrap().consensus_error;
    Outcome {
        id: "1",
        passed: below(dist, 1e-6) && below(consensus, 1e-8) && secs < 5.0,
        detail: format!("quadratic: max distance {dist:.3e}, consensus {consensus:.3e}, {secs:.2} s"),
    }
}

fn criterion_2(tally: &mut Tally) -> Outcome {
    let mut quad = quadratic_reference(10, 3);
    quad.diag.cache_compact_form = true;
    let hq = train(&quad).unwrap();
    tally.track(&hq);
    let mut ac = RunConfig::default();
    ac.train.k = 10;
    ac.diag.cache_compact_form = true;
    ac.diag.wall_clock = false;
    let ha = train(&ac).unwrap();
    tally.track(&ha);
    let rq = hq.compact_form_residual.unwrap_or(f64::INFINITY);
    let ra = ha.compact_form_residual.unwrap_or(f64::INFINITY);
    Outcome {
        id: "2",
        passed: below(rq, 1e-10) && below(ra, 1e-10),
        detail: format!("compact form residual: quadratic {rq:.3e}, actor-critic {ra:.3e}"),
    }
}

fn criterion_4(tally: &mut Tally) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for tau in [1usize, 3, 5] {
        let k = 12;
        let q = train(&quadratic_reference(k, tau)).unwrap();
        let mut ac = RunConfig::default();
        ac.train.k = 4;
        ac.train.tau = tau;
        ac.policy.hidden = 8;
        ac.critic.width = 8;
        ac.sampler.burn_in = 5;
        ac.diag.wall_clock = false;
        let a = train(&ac).unwrap();
        for (h, edges) in [(&q, 3u64), (&a, 5u64)] {
            tally.track(h);
            let k = h.config.train.k as u64;
            ok &= h.ledger.rounds == k && h.ledger.total_messages() == 2 * edges * k;
            parts.push(format!(
                "tau={tau} {}: {} rounds/{} msgs",
                if h.config.train.oracle == Oracle::Quadratic { "quad" } else { "ac" },
                h.ledger.rounds,
                h.ledger.total_messages()
            ));
        }
    }
    Outcome {
        id: "4",
        passed: ok,
        detail: format!("communication budget: {}", parts.join(", ")),
    }
}

fn criterion_6() -> Outcome {
    let tanh = common::value_grad_worst(Activation::Tanh, 101);
    let relu = common::value_grad_worst(Activation::Relu, 102);
    let score = common::policy_score_worst(202);
    let identity = common::expected_score_worst(303);
    Outcome {
        id: "6",
        passed: below(tanh, 1e-5) && below(relu, 1e-4) && below(score, 1e-4) && below(identity, 1e-10),
        detail: format!(
            "gradients: value tanh {tanh:.2e}, value relu {relu:.2e}, policy score {score:.2e}, E[psi] {identity:.2e}"
        ),
    }
}

/// Worst value error of the returned critic over 3 seeds.
fn critic_error(step_size: f64, gamma: f64) -> (f64, Vec<f64>) {
    let settings = TdSettings {
        batch: 20,
        iterations: 500,
        step_size,
        gamma,
    };
    let mdp = TabularMdp::two_state_mdp();
    let policy = PolicyParams::zeros(PolicyShape::new(2, vec![], vec![2]).unwrap());
    let exact = mdp.exact_values(&policy, gamma).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut cursor = ChainCursor::new(mdp.clone(), 0, seeded(100 + seed)).unwrap();
        ltac::sampler::burn_in(&mut cursor, &policy, 200).unwrap();
        let theta = init_valuenet(&mut seeded(200 + seed), 16, 2, 2, Activation::Tanh).unwrap();
        let ball = ProjectionBall::new(theta.clone(), 10.0).unwrap();
        let out = decentralized_td(&mut cursor, &policy, &theta, &settings, &ball, &mut seeded(300 + seed)).unwrap();
        for (s, v) in exact.iter().enumerate() {
            worst = worst.max((out.theta_out.value(mdp.feature(s)).unwrap() - v).abs());
        }
    }
    (worst, exact)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (worst, exact) = critic_error(0.05, 0.5);
    let secs = start.elapsed().as_secs_f64();
    // Same run with a larger step, reported for context only.
    let (large_step, _) = critic_error(2.0, 0.5);
    Outcome {
        id: "7",
        passed: below(worst, 0.1) && secs < 10.0,
        detail: format!(
            "critic: max value error {worst:.4} over 3 seeds at eta=0.05 (V* = {exact:.4?}), {secs:.2} s; \
             eta=2.0 gives {large_step:.4}"
        ),
    }
}

fn criterion_8(tally: &mut Tally) -> Vec<Outcome> {
    let k = 2000;
    let prefix = 200;
    let mut cfg = RunConfig::default();
    cfg.train.k = k;
    cfg.train.parallel = false;
    cfg.diag.wall_clock = false;
    let start = Instant::now();
    let full = train(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    tally.track(&full);

    let m = &full.metrics;
    let tenth = k / 10;
    let mean = |xs: &[ltac::diagnostics::RoundMetrics], f: fn(&ltac::diagnostics::RoundMetrics) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };
    let first = mean(&m[..tenth], |r| r.return_mean);
    let last = mean(&m[k - tenth..], |r| r.return_mean);
    let (peak_round, peak) = m
        .iter()
        .map(|r| (r.round, r.consensus_error))
        .fold((0, 0.0f64), |acc, x| if x.1 > acc.1 { x } else { acc });
    let plateau = mean(&m[k - tenth..], |r| r.consensus_error);
    let ratio = peak / plateau;

    let mut repeat = cfg.clone();
    repeat.train.k = prefix;
    repeat.train.parallel = true;
    let again = train(&repeat).unwrap();
    tally.track(&again);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("full.csv"), dir.path().join("repeat.csv"));
    write_metrics_csv(&pa, &full.metrics[..prefix]).unwrap();
    write_metrics_csv(&pb, &again.metrics).unwrap();
    let identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();

    vec![
        Outcome {
            id: "8a",
            passed: last > first,
            detail: format!("navigation: mean return first 10% {first:.3}, last 10% {last:.3}"),
        },
        Outcome {
            id: "8b",
            passed: ratio >= 5.0,
            detail: format!(
                "navigation: consensus peak {peak:.3e} at round {peak_round}, final plateau {plateau:.3e}, ratio {ratio:.2}"
            ),
        },
        Outcome {
            id: "8c",
            passed: identical && secs < 900.0,
            detail: format!(
                "navigation: repeated seed ({prefix} rounds, parallel vs sequential) byte-identical = {identical}, \
                 {k} rounds sequential in {secs:.0} s"
            ),
        },
    ]
}

fn criterion_9() -> Outcome {
    let ring = Graph::ring(5).unwrap();
    let (tau, rho) = (3usize, 0.5);
    let report = stepsize_bounds(1.0, tau, rho, 0.01, &ring).unwrap();
    let structures = build_structures(&ring);
    let (_, lambda_u) = structures.lambda_bounds().unwrap();
    let lambda_err = (lambda_u - 3.618_034_0).abs();
    let window = beta_window(lambda_u, rho, tau);
    let base = 1.0 / (tau as f64 * lambda_u * rho);
    let window_err = (window[0] - base).abs().max((window[1] - 2.0 * base).abs());
    let mut worst = 0.0f64;
    for beta in [0.01, 0.5 * (window[0] + window[1]), 0.99 * window[1]] {
        for b in v_block_inverses(&structures, beta, rho, tau).unwrap() {
            worst = worst.max(b.inverse_residual());
        }
    }
    Outcome {
        id: "9",
        passed: report.alpha_bar_3 == 0.25 && lambda_err < 1e-6 && window_err < 1e-12 && worst < 1e-10,
        detail: format!(
            "step size: alpha_bar_3 = {}, lambda_u = {lambda_u:.7}, window [{:.6}, {:.6}), max |V V^-1 - I| {worst:.2e}",
            report.alpha_bar_3, window[0], window[1]
        ),
    }
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut tally = Tally::default();
    let mut outcomes = vec![criterion_1(&mut tally), criterion_2(&mut tally), criterion_4(&mut tally)];
    outcomes.push(criterion_6());
    outcomes.push(criterion_7());
    outcomes.extend(criterion_8(&mut tally));
    outcomes.push(criterion_9());
    outcomes.push(Outcome {
        id: "3",
        passed: below(tally.max_mp, 1e-12),
        detail: format!("mean preservation: max residual {:.3e} over {} runs", tally.max_mp, tally.runs),
    });
    outcomes.push(Outcome {
        id: "5",
        passed: tally.non_policy == 0,
        detail: format!("privacy: {} non-policy messages over {} runs", tally.non_policy, tally.runs),
    });
    outcomes.sort_by(|a, b| a.id.cmp(b.id));

    let mut blocking = 0;
    for o in &outcomes {
        println!("{} [{}] {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.detail);
        if !o.passed && (strict || !TOLERATED.contains(&o.id)) {
            blocking += 1;
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if blocking > 0 {
        std::process::exit(1);
    }
}
