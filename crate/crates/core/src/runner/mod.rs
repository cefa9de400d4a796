//! Training driver, output files and the CLI commands.

mod commands;
mod config;

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_eval, cmd_stepsize, cmd_train, cmd_verify, evaluate, quadratic_reference, Check, EpisodeRecord, EvalOptions,
    EvalReport, VerifyReport,
};
pub use config::{
    apply_override, CriticConfig, DiagConfig, Oracle, PolicyConfig, QuadraticConfig, RunConfig, SamplerConfig,
    TrainConfig, SEED_ENV,
};

use crate::diagnostics::{compact_form_check, consensus_error, dk_surrogate, mean_preservation_trace, RoundMetrics};
use crate::exec::Execution;
use crate::ltadmm::{
    ActorCriticLearner, ActorCriticSettings, AdmmSettings, BridgeRule, CompactTrace, LocalLearner, LtAdmm,
    MessageLedger, QuadraticLearner,
};
use crate::navenv::NavEnv;
use crate::policynet::{init_policy, PolicyShape};
use crate::rng::{stream, Purpose};
use crate::sampler::{ChainCursor, Environment};
use crate::valuenet::init_valuenet;
use crate::{Error, Result};

/// Rounds averaged in `return_mean`.
pub const RETURN_WINDOW: usize = 20;

pub const METRICS_COLUMNS: [&str; 8] = [
    "round",
    "comm_rounds",
    "return_mean",
    "consensus_error",
    "critic_loss",
    "dk_surrogate",
    "grad_norm_est",
    "wall_time_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub metrics: Vec<RoundMetrics>,
    /// Shared `omega_0`.
    pub initial_omega: Vec<f64>,
    pub final_omegas: Vec<Vec<f64>>,
    pub final_omega_bar: Vec<f64>,
    /// Layout of the policy vector; absent for the quadratic oracle.
    pub policy_shape: Option<PolicyShape>,
    pub ledger: MessageLedger,
    /// Largest raw score norm seen during training.
    pub max_score_norm: f64,
    /// Largest mean-preservation residual over all recorded states.
    pub max_mean_preservation_residual: f64,
    pub max_mean_recursion_residual: f64,
    pub compact_form_residual: Option<f64>,
    pub config: RunConfig,
    #[serde(skip)]
    pub trace: Option<CompactTrace>,
}

pub fn train(cfg: &RunConfig) -> Result<TrainingHistory> {
    train_with(cfg, BridgeRule::Standard, &mut |_| {})
}

/// [`train`] with a bridge rule and a per-round callback.
pub fn train_with(
    cfg: &RunConfig,
    rule: BridgeRule,
    progress: &mut dyn FnMut(&RoundMetrics),
) -> Result<TrainingHistory> {
    cfg.validate()?;
    let t = &cfg.train;
    let settings = AdmmSettings {
        tau: t.tau,
        alpha: t.alpha,
        beta: t.beta,
        rho: t.rho,
        execution: if t.parallel { Execution::Parallel } else { Execution::Sequential },
        eval_batch: cfg.diag.b_eval,
        record_trace: cfg.diag.cache_compact_form,
        bridge_rule: rule,
    };
    match t.oracle {
        Oracle::Quadratic => {
            let n = cfg.graph.node_count();
            let (targets, curvatures) = cfg.quadratic.resolved(n)?;
            let omega0 = vec![0.0; targets[0].len()];
            let learners = targets
                .into_iter()
                .zip(curvatures)
                .map(|(target, curvature)| QuadraticLearner { target, curvature })
                .collect();
            let admm = LtAdmm::new(cfg.graph.clone(), settings, learners, omega0.clone())?;
            drive(cfg, admm, omega0, None, progress)
        }
        Oracle::ActorCritic => {
            let env = NavEnv::new(cfg.env.clone())?;
            let (learners, omega0, shape) = actor_critic_learners(cfg, &env)?;
            let admm = LtAdmm::new(cfg.graph.clone(), settings, learners, omega0.clone())?;
            drive(cfg, admm, omega0, Some(shape), progress)
        }
    }
}

/// One learner per agent with its own replica, critic and streams; all share
/// the initial policy.
pub fn actor_critic_learners<E: Environment>(
    cfg: &RunConfig,
    env: &E,
) -> Result<(Vec<ActorCriticLearner<E>>, Vec<f64>, PolicyShape)> {
    let init_seed = cfg.init_seed();
    let sample_seed = cfg.sampling_seed();
    let obs_dim = env.observation_dim();
    let policy = init_policy(
        &mut stream(init_seed, Purpose::PolicyInit, 0),
        obs_dim,
        env.action_counts(),
        cfg.policy.hidden,
    )?;
    let c = &cfg.critic;
    let settings = ActorCriticSettings {
        td: c.td_settings(),
        actor_batch: cfg.train.b,
        burn_in: cfg.sampler.burn_in,
        score_clip: cfg.policy.score_clip,
    };
    let learners = (0..cfg.graph.node_count())
        .map(|i| {
            let theta0 = init_valuenet(
                &mut stream(init_seed, Purpose::CriticInit, i),
                c.width,
                c.depth,
                obs_dim,
                c.activation,
            )?;
            let cursor = ChainCursor::new(env.clone(), i, stream(sample_seed, Purpose::Sampler, i))?;
            ActorCriticLearner::new(
                cursor,
                policy.clone(),
                theta0,
                c.radius,
                settings,
                stream(sample_seed, Purpose::Critic, i),
                stream(sample_seed, Purpose::Evaluation, i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = policy.shape().clone();
    Ok((learners, policy.into_flat(), shape))
}

fn drive<L: LocalLearner>(
    cfg: &RunConfig,
    mut admm: LtAdmm<L>,
    initial_omega: Vec<f64>,
    policy_shape: Option<PolicyShape>,
    progress: &mut dyn FnMut(&RoundMetrics),
) -> Result<TrainingHistory> {
    let start = Instant::now();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(RETURN_WINDOW);
    let mut metrics = Vec::with_capacity(cfg.train.k);
    let mut max_score_norm = 0.0f64;
    let mut max_mp = 0.0f64;
    let mut max_rec = 0.0f64;

    for _ in 0..cfg.train.k {
        let out = admm.train_round()?;
        if window.len() == RETURN_WINDOW {
            window.pop_front();
        }
        window.push_back(out.round_return.unwrap_or(0.0));
        let dk = dk_surrogate(&out.gradients, out.eval_gradient.as_deref(), cfg.diag.b_eval);
        max_score_norm = max_score_norm.max(out.max_score_norm);
        max_mp = max_mp.max(out.mean_preservation_residual);
        max_rec = max_rec.max(out.mean_recursion_residual);
        let m = RoundMetrics {
            round: out.round,
            comm_rounds: admm.ledger().rounds,
            return_mean: window.iter().sum::<f64>() / window.len() as f64,
            consensus_error: consensus_error(admm.omegas()),
            critic_loss: out.critic_loss.unwrap_or(0.0),
            dk_surrogate: dk.total,
            dk_averaged_term: dk.averaged_term,
            grad_norm_est: dk.gradient_term,
            wall_time_s: if cfg.diag.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
            mean_preservation_residual: out.mean_preservation_residual,
            mean_recursion_residual: out.mean_recursion_residual,
        };
        progress(&m);
        metrics.push(m);
    }

    let t = &cfg.train;
    let compact_form_residual = if cfg.diag.cache_compact_form {
        let trace = admm.trace();
        if let Some(tr) = trace {
            let worst = mean_preservation_trace(tr, admm.structures(), t.rho)
                .into_iter()
                .fold(0.0, f64::max);
            max_mp = max_mp.max(worst);
        }
        Some(compact_form_check(trace, admm.structures(), t.alpha, t.beta, t.rho, t.tau)?)
    } else {
        None
    };

    Ok(TrainingHistory {
        metrics,
        initial_omega,
        final_omegas: admm.omegas().to_vec(),
        final_omega_bar: admm.omega_bar(),
        policy_shape,
        ledger: admm.ledger().clone(),
        max_score_norm,
        max_mean_preservation_residual: max_mp,
        max_mean_recursion_residual: max_rec,
        compact_form_residual,
        config: cfg.clone(),
        trace: admm.trace().cloned(),
    })
}

#[derive(Serialize)]
struct CsvRow {
    round: usize,
    comm_rounds: u64,
    return_mean: f64,
    consensus_error: f64,
    critic_loss: f64,
    dk_surrogate: f64,
    grad_norm_est: f64,
    wall_time_s: f64,
}

pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        w.serialize(CsvRow {
            round: m.round,
            comm_rounds: m.comm_rounds,
            return_mean: m.return_mean,
            consensus_error: m.consensus_error,
            critic_loss: m.critic_loss,
            dk_surrogate: m.dk_surrogate,
            grad_norm_est: m.grad_norm_est,
            wall_time_s: m.wall_time_s,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
