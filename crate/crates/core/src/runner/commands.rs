use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, train_with, write_json, write_metrics_csv, Oracle, RunConfig, TrainingHistory};
use crate::diagnostics::{beta_window, stepsize_bounds, v_block_inverses, StepsizeReport};
use crate::ltadmm::BridgeRule;
use crate::navenv::{self, JointAction};
use crate::policynet::PolicyParams;
use crate::rng::{stream, Purpose};
use crate::topology::{build_structures, Graph};
use crate::{Error, Result};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains and writes `metrics.csv`, `history.json` and `config_echo.json`
/// into the output directory (`--out` beats the config's `out`).
pub fn cmd_train(
    config: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(PathBuf, TrainingHistory)> {
    let mut cfg = RunConfig::load(config, overrides)?;
    cfg.resolve_seed(seed)?;
    if let Some(out) = out {
        cfg.out = out;
    }
    let dir = cfg.out.clone();
    ensure_dir(&dir)?;
    write_json(&dir.join("config_echo.json"), &cfg)?;

    let k = cfg.train.k;
    let every = (k / 10).max(1);
    let history = train_with(&cfg, BridgeRule::Standard, &mut |m| {
        if (m.round + 1) % every == 0 || m.round + 1 == k {
            eprintln!(
                "round {:>6}/{k}  return {:>10.4}  consensus {:.3e}  critic {:.3e}",
                m.round + 1,
                m.return_mean,
                m.consensus_error,
                m.critic_loss
            );
        }
    })?;
    write_metrics_csv(&dir.join("metrics.csv"), &history.metrics)?;
    write_json(&dir.join("history.json"), &history)?;
    Ok((dir, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub max_steps: usize,
    /// Sample actions instead of taking each agent's most likely one.
    pub stochastic: bool,
    /// Rollout seed; the history's master seed when absent.
    pub seed: Option<u64>,
    /// Where `trajectories.json` goes; next to the history when absent.
    pub out: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            episodes: 4,
            max_steps: 25,
            stochastic: false,
            seed: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub landmarks: Vec<[f64; 2]>,
    /// `positions[t][agent]`, including the initial positions.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub total_distance: Vec<f64>,
    pub success: bool,
    /// Step at which the summed distance first fell below the threshold.
    pub success_step: Option<usize>,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub seed: u64,
    pub max_steps: usize,
    pub success_threshold: f64,
    pub success_rate: f64,
    pub episodes: Vec<EpisodeRecord>,
}

/// Rolls out the averaged policy of a finished run.
pub fn cmd_eval(history_path: &Path, opts: &EvalOptions) -> Result<(PathBuf, EvalReport)> {
    let history: TrainingHistory = read_json(history_path)?;
    let report = evaluate(&history, opts)?;
    let dir = match &opts.out {
        Some(d) => d.clone(),
        None => history_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    ensure_dir(&dir)?;
    let path = dir.join("trajectories.json");
    write_json(&path, &report)?;
    Ok((path, report))
}

pub fn evaluate(history: &TrainingHistory, opts: &EvalOptions) -> Result<EvalReport> {
    let shape = history.policy_shape.clone().ok_or(Error::MissingSnapshot)?;
    if history.final_omega_bar.is_empty() {
        return Err(Error::MissingSnapshot);
    }
    let policy = PolicyParams::from_flat(shape, history.final_omega_bar.clone())?;
    let mut env = history.config.env.clone();
    env.max_steps = opts.max_steps.max(1);
    env.validate()?;
    let seed = opts.seed.unwrap_or(history.config.seed);

    let episodes = (0..opts.episodes)
        .map(|ep| {
            let mut rng = stream(seed, Purpose::Rollout, ep);
            let mut state = navenv::reset(&env, &mut rng);
            let mut rec = EpisodeRecord {
                landmarks: state.landmarks.clone(),
                positions: vec![state.positions.clone()],
                total_distance: vec![state.total_distance()],
                success: false,
                success_step: None,
                total_reward: 0.0,
            };
            for t in 1..=opts.max_steps {
                let s = navenv::flatten_state(&env, &state);
                let action = if opts.stochastic {
                    policy.sample_joint(&s, &mut rng)?
                } else {
                    greedy(&policy, &s)?
                };
                let (next, rewards, _) = navenv::step(&env, &state, &action)?;
                state = next;
                rec.total_reward += rewards.iter().sum::<f64>();
                rec.positions.push(state.positions.clone());
                rec.total_distance.push(state.total_distance());
                if state.total_distance() < env.done_threshold {
                    rec.success = true;
                    rec.success_step = Some(t);
                    break;
                }
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;

    let successes = episodes.iter().filter(|e| e.success).count();
    Ok(EvalReport {
        mode: if opts.stochastic { "stochastic" } else { "greedy" }.into(),
        seed,
        max_steps: opts.max_steps,
        success_threshold: env.done_threshold,
        success_rate: if episodes.is_empty() { 0.0 } else { successes as f64 / episodes.len() as f64 },
        episodes,
    })
}

fn greedy(policy: &PolicyParams, s: &[f64]) -> Result<JointAction> {
    Ok(JointAction(
        policy
            .action_distribution(s)?
            .iter()
            .map(|pi| {
                pi.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (a, &p)| if p > best.1 { (a, p) } else { best })
                    .0
            })
            .collect(),
    ))
}

/// Writes `stepsize.json`; a `beta` outside the window only sets the warning.
pub fn cmd_stepsize(config: Option<&Path>, overrides: &[String], out: Option<PathBuf>) -> Result<(PathBuf, StepsizeReport)> {
    let cfg = RunConfig::load(config, overrides)?;
    let t = &cfg.train;
    let report = stepsize_bounds(cfg.diag.l, t.tau, t.rho, t.beta, &cfg.graph)?;
    let dir = out.unwrap_or(cfg.out.clone());
    ensure_dir(&dir)?;
    let path = dir.join("stepsize.json");
    write_json(&path, &report)?;
    Ok((path, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            passed: value < threshold,
            value,
            threshold,
        }
    }

    fn exact(name: &str, value: f64, expected: f64) -> Self {
        Check {
            name: name.into(),
            passed: value == expected,
            value,
            threshold: expected,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Settings of the quadratic consensus problem: triangle, unit targets,
/// `beta` in the middle of its window.
pub fn quadratic_reference(k: usize, tau: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.graph = Graph::complete(3).expect("triangle");
    cfg.train.oracle = Oracle::Quadratic;
    cfg.train.k = k;
    cfg.train.tau = tau;
    cfg.train.alpha = 0.05;
    cfg.train.rho = 0.5;
    let lambda_u = 3.0;
    cfg.train.beta = 1.5 / (tau as f64 * lambda_u * cfg.train.rho);
    cfg.diag.wall_clock = false;
    cfg
}

/// Quadratic suite, compact form in both modes, invariants and the
/// step-size calculator. `rule` swaps in a faulty bridge update.
pub fn cmd_verify(config: Option<&Path>, overrides: &[String], rule: BridgeRule) -> Result<VerifyReport> {
    let base = RunConfig::load(config, overrides)?;
    let mut checks = Vec::new();
    let mut max_mp = 0.0f64;
    let mut max_rec = 0.0f64;
    let mut non_policy = 0u64;
    let mut track = |h: &TrainingHistory| {
        max_mp = max_mp.max(h.max_mean_preservation_residual);
        max_rec = max_rec.max(h.max_mean_recursion_residual);
        non_policy += h.ledger.non_policy_messages();
    };

    let long = train_with(&quadratic_reference(2000, 3), rule, &mut |_| {})?;
    track(&long);
    let optimum = vec![1.0 / 3.0; 3];
    let dist = long
        .final_omegas
        .iter()
        .map(|w| w.iter().zip(&optimum).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    checks.push(Check::below("quadratic: distance to optimum", nan_as_inf(dist), 1e-6));
    let consensus = long.metrics.last().map_or(f64::INFINITY, |m| m.consensus_error);
    checks.push(Check::below("quadratic: consensus error", nan_as_inf(consensus), 1e-8));

    let mut short = quadratic_reference(10, 3);
    short.diag.cache_compact_form = true;
    let h = train_with(&short, rule, &mut |_| {})?;
    track(&h);
    checks.push(Check::below(
        "compact form: quadratic",
        nan_as_inf(h.compact_form_residual.unwrap_or(f64::INFINITY)),
        1e-12,
    ));

    let mut ac = base.clone();
    ac.train.oracle = Oracle::ActorCritic;
    ac.train.k = 10;
    ac.diag.cache_compact_form = true;
    ac.diag.wall_clock = false;
    let h = train_with(&ac, rule, &mut |_| {})?;
    track(&h);
    checks.push(Check::below(
        "compact form: actor-critic",
        nan_as_inf(h.compact_form_residual.unwrap_or(f64::INFINITY)),
        1e-10,
    ));

    let mut budget_ok = true;
    for tau in [1, 3, 5] {
        let k = 7;
        let h = train_with(&quadratic_reference(k, tau), rule, &mut |_| {})?;
        track(&h);
        let edges = 3u64;
        budget_ok &= h.ledger.rounds == k as u64 && h.ledger.total_messages() == 2 * edges * k as u64;
    }
    checks.push(Check::exact("communication: one round per iteration", f64::from(u8::from(budget_ok)), 1.0));

    checks.push(Check::below("mean preservation", nan_as_inf(max_mp), 1e-12));
    checks.push(Check::below("average recursion", nan_as_inf(max_rec), 1e-10));
    checks.push(Check::exact("privacy: non-policy messages", non_policy as f64, 0.0));

    let ring = Graph::ring(5).expect("ring-5");
    let report = stepsize_bounds(1.0, 3, 0.5, 0.01, &ring)?;
    checks.push(Check::exact("step size: alpha_bar_3(L=1, tau=3)", report.alpha_bar_3, 0.25));
    let expected = 1.0 / (3.0 * 3.618_033_988_749_895 * 0.5);
    checks.push(Check::below(
        "step size: ring-5 beta window",
        (report.beta_window[0] - expected).abs().max((report.beta_window[1] - 2.0 * expected).abs()),
        1e-6,
    ));
    let structures = build_structures(&base.graph);
    let (_, lambda_u) = structures.lambda_bounds()?;
    let window = beta_window(lambda_u, base.train.rho, base.train.tau);
    let mut worst = 0.0f64;
    for beta in [base.train.beta, 0.5 * (window[0] + window[1])] {
        for b in v_block_inverses(&structures, beta, base.train.rho, base.train.tau)? {
            worst = worst.max(b.inverse_residual());
        }
    }
    checks.push(Check::below("spectral blocks: V V^-1 = I", worst, 1e-10));

    Ok(VerifyReport { checks })
}

fn nan_as_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}
