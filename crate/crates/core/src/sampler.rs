//! Markov-chain cursors over an environment replica.
//!
//! A cursor owns one environment replica, its current state and a private
//! random stream (used for both action sampling and environment noise).
//! Advancing is the only mutation. When the environment signals `done`, the
//! replica restarts from a fresh reset and the chain continues; the restart
//! is logged so continuity checks can skip that boundary.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::navenv::JointAction;
use crate::policynet::PolicyParams;
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Rewards of every agent after one transition, and whether the episode ended.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// A multi-agent Markov environment with a fully observed global state.
pub trait Environment: Clone + Send + Sync {
    type State: Clone + Debug + Send + Sync;

    fn n_agents(&self) -> usize;
    fn action_counts(&self) -> Vec<usize>;
    fn observation_dim(&self) -> usize;
    fn reset(&self, rng: &mut StreamRng) -> Self::State;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    fn step(&self, state: &mut Self::State, action: &JointAction, rng: &mut StreamRng) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: JointAction,
    /// Reward of the agent owning the cursor.
    pub reward: f64,
    pub s_next: Vec<f64>,
    /// The replica was reset right after this transition, so the next
    /// transition does not start at `s_next`.
    pub reset_after: bool,
}

pub struct ChainCursor<E: Environment> {
    env: E,
    agent: usize,
    state: E::State,
    obs: Vec<f64>,
    rng: StreamRng,
    steps: u64,
    /// Global step indices after which the replica was reset.
    resets: Vec<u64>,
}

impl<E: Environment> Clone for ChainCursor<E> {
    fn clone(&self) -> Self {
        ChainCursor {
            env: self.env.clone(),
            agent: self.agent,
            state: self.state.clone(),
            obs: self.obs.clone(),
            rng: self.rng.clone(),
            steps: self.steps,
            resets: self.resets.clone(),
        }
    }
}

impl<E: Environment> ChainCursor<E> {
    /// Starts a chain at a fresh reset drawn from `rng`.
    pub fn new(env: E, agent: usize, mut rng: StreamRng) -> Result<Self> {
        if agent >= env.n_agents() {
            return Err(Error::InvalidInput(format!(
                "cursor owner {agent} out of range for {} agents",
                env.n_agents()
            )));
        }
        let state = env.reset(&mut rng);
        let obs = env.observe(&state);
        Ok(ChainCursor {
            env,
            agent,
            state,
            obs,
            rng,
            steps: 0,
            resets: Vec::new(),
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn state(&self) -> &E::State {
        &self.state
    }

    pub fn observation(&self) -> &[f64] {
        &self.obs
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reset_log(&self) -> &[u64] {
        &self.resets
    }

    /// Replaces the random stream, keeping the chain position.
    pub fn with_rng(mut self, rng: StreamRng) -> Self {
        self.rng = rng;
        self
    }

    pub fn into_rng(self) -> StreamRng {
        self.rng
    }

    fn advance(&mut self, policy: &PolicyParams) -> Result<Transition> {
        let s = std::mem::take(&mut self.obs);
        let a = policy.sample_joint(&s, &mut self.rng)?;
        let outcome = self.env.step(&mut self.state, &a, &mut self.rng)?;
        let s_next = self.env.observe(&self.state);
        self.steps += 1;
        if outcome.done {
            self.state = self.env.reset(&mut self.rng);
            self.obs = self.env.observe(&self.state);
            self.resets.push(self.steps);
        } else {
            self.obs = s_next.clone();
        }
        Ok(Transition {
            s,
            a,
            reward: outcome.rewards[self.agent],
            s_next,
            reset_after: outcome.done,
        })
    }
}

/// Runs the chain `length` steps under `policy` without recording.
pub fn burn_in<E: Environment>(cursor: &mut ChainCursor<E>, policy: &PolicyParams, length: usize) -> Result<()> {
    for _ in 0..length {
        cursor.advance(policy)?;
    }
    Ok(())
}

/// `count` consecutive transitions under `policy`.
pub fn collect<E: Environment>(
    cursor: &mut ChainCursor<E>,
    policy: &PolicyParams,
    count: usize,
) -> Result<Vec<Transition>> {
    if count == 0 {
        return Err(Error::InvalidInput("collect needs at least one transition".into()));
    }
    (0..count).map(|_| cursor.advance(policy)).collect()
}

/// Chain continuity: every transition starts where the previous one ended,
/// unless a reset was logged in between.
pub fn is_continuous(batch: &[Transition]) -> bool {
    batch
        .windows(2)
        .all(|w| w[0].reset_after || w[0].s_next == w[1].s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navenv::{NavConfig, NavEnv};
    use crate::policynet::{init_policy, PolicyShape};
    use crate::rng::seeded;
    use crate::synthetic::TabularMdp;

    fn nav_setup() -> (NavEnv, PolicyParams) {
        let env = NavEnv::new(NavConfig::default()).unwrap();
        let policy = init_policy(&mut seeded(1), 20, vec![5; 5], 16).unwrap();
        (env, policy)
    }

    #[test]
    fn zero_burn_in_is_a_no_op() {
        let (env, policy) = nav_setup();
        let mut c = ChainCursor::new(env, 0, seeded(2)).unwrap();
        let before = c.observation().to_vec();
        burn_in(&mut c, &policy, 0).unwrap();
        assert_eq!(c.observation(), &before[..]);
        assert_eq!(c.steps(), 0);
    }

    #[test]
    fn single_collect_moves_cursor() {
        let (env, policy) = nav_setup();
        let mut c = ChainCursor::new(env, 1, seeded(3)).unwrap();
        let batch = collect(&mut c, &policy, 1).unwrap();
        assert_eq!(batch.len(), 1);
        if !batch[0].reset_after {
            assert_eq!(c.observation(), &batch[0].s_next[..]);
        }
        assert!(collect(&mut c, &policy, 0).is_err());
    }

    #[test]
    fn batches_are_continuous_and_log_resets() {
        let (env, policy) = nav_setup();
        let mut c = ChainCursor::new(env, 0, seeded(4)).unwrap();
        let batch = collect(&mut c, &policy, 200).unwrap();
        assert!(is_continuous(&batch));
        // 25-step horizon forces resets.
        let resets = batch.iter().filter(|t| t.reset_after).count();
        assert!(resets >= 7);
        assert_eq!(c.reset_log().len(), resets);
    }

    #[test]
    fn split_collects_match_single_collect() {
        let (env, policy) = nav_setup();
        let mut a = ChainCursor::new(env.clone(), 0, seeded(5)).unwrap();
        let mut b = ChainCursor::new(env, 0, seeded(5)).unwrap();
        let mut two = collect(&mut a, &policy, 10).unwrap();
        two.extend(collect(&mut a, &policy, 10).unwrap());
        assert_eq!(two, collect(&mut b, &policy, 20).unwrap());
    }

    #[test]
    fn burn_in_deterministic() {
        let (env, policy) = nav_setup();
        let mut a = ChainCursor::new(env.clone(), 0, seeded(6)).unwrap();
        let mut b = ChainCursor::new(env, 0, seeded(6)).unwrap();
        burn_in(&mut a, &policy, 57).unwrap();
        burn_in(&mut b, &policy, 57).unwrap();
        assert_eq!(a.observation(), b.observation());
    }

    #[test]
    fn two_state_chain_reaches_stationary_distribution() {
        // Rows [[0.9, 0.1], [0.2, 0.8]] give mu = (2/3, 1/3).
        let mdp = TabularMdp::two_state_chain();
        let policy = PolicyParams::zeros(PolicyShape::new(2, vec![], vec![1]).unwrap());
        let trials = 10_000;
        let mut in_first = 0usize;
        for t in 0..trials {
            let mut c = ChainCursor::new(mdp.clone(), 0, seeded(1000 + t)).unwrap();
            burn_in(&mut c, &policy, 500).unwrap();
            if mdp.state_of(c.state()) == 0 {
                in_first += 1;
            }
        }
        let freq = in_first as f64 / trials as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.02, "freq {freq}");
    }
}
