//! Local projected TD(0) with Markovian mini-batches.
//!
//! Each critic iteration collects `N_c` contiguous transitions, takes one
//! semi-gradient step averaged over the batch (all TD errors and gradients
//! evaluated at the pre-update parameters), and projects back onto the ball.
//! The returned parameters are the snapshot after an iteration drawn
//! uniformly from `1..=T_c`; the index is drawn up front so only one
//! snapshot is ever stored.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policynet::PolicyParams;
use crate::rng::StreamRng;
use crate::sampler::{collect, ChainCursor, Environment, Transition};
use crate::valuenet::{ProjectionBall, ValueNetParams};
use crate::vecops::axpy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdSettings {
    /// Transitions per critic iteration (`N_c`).
    pub batch: usize,
    /// Critic iterations (`T_c`).
    pub iterations: usize,
    /// Step size `eta`.
    pub step_size: f64,
    pub gamma: f64,
}

impl TdSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("critic.Nc", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("critic.Tc", "must be at least 1"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("critic.eta", "must be non-negative"));
        }
        check_gamma(self.gamma).map_err(|_| Error::config("critic.gamma", "must lie in (0, 1)"))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("discount must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticRunResult {
    pub theta_out: ValueNetParams,
    /// Observation at the end of the last sub-batch.
    pub final_state: Vec<f64>,
    /// Mean squared TD error of each iteration, at its pre-update parameters.
    pub td_loss_trace: Vec<f64>,
    /// Which iteration's snapshot was returned, in `1..=T_c`.
    pub snapshot: usize,
}

/// `r + gamma V(s') - V(s)`
pub fn td_error(params: &ValueNetParams, tr: &Transition, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(tr.reward + gamma * params.value(&tr.s_next)? - params.value(&tr.s)?)
}

/// Batch-mean semi-gradient `(1/n) sum_j delta_j grad V(s_j)` and the mean
/// squared TD error. The bootstrapped target is treated as a constant.
pub fn td_direction(params: &ValueNetParams, batch: &[Transition], gamma: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    check_gamma(gamma)?;
    let mut dir: Vec<Vec<f64>> = params.layers().iter().map(|l| vec![0.0; l.len()]).collect();
    let mut loss = 0.0;
    for tr in batch {
        let g = params.value_grad(&tr.s)?;
        let delta = tr.reward + gamma * params.value(&tr.s_next)? - g.value;
        loss += delta * delta;
        for (acc, layer) in dir.iter_mut().zip(&g.layers) {
            axpy(acc, delta, layer);
        }
    }
    let n = batch.len() as f64;
    dir.iter_mut().flatten().for_each(|x| *x /= n);
    Ok((dir, loss / n))
}

/// Projected TD run for one agent, continuing the cursor's chain.
pub fn decentralized_td<E: Environment>(
    cursor: &mut ChainCursor<E>,
    policy: &PolicyParams,
    theta_init: &ValueNetParams,
    settings: &TdSettings,
    ball: &ProjectionBall,
    rng: &mut StreamRng,
) -> Result<CriticRunResult> {
    settings.validate()?;
    let snapshot = rng.random_range(1..=settings.iterations);
    let mut theta = theta_init.clone();
    let mut kept = None;
    let mut trace = Vec::with_capacity(settings.iterations);
    let mut final_state = cursor.observation().to_vec();

    for iteration in 1..=settings.iterations {
        let batch = collect(cursor, policy, settings.batch)?;
        final_state.clone_from(&batch.last().expect("non-empty batch").s_next);
        let (dir, loss) = td_direction(&theta, &batch, settings.gamma)?;
        trace.push(loss);
        theta.add_scaled(&dir, settings.step_size);
        ball.project_in_place(&mut theta)?;
        if iteration == snapshot {
            kept = Some(theta.clone());
        }
    }

    Ok(CriticRunResult {
        theta_out: kept.expect("snapshot index within range"),
        final_state,
        td_loss_trace: trace,
        snapshot,
    })
}
