//! Small single-agent tabular MDPs with known answers.
//!
//! States are observed through fixed feature vectors, so the same policy and
//! critic code that drives the navigation task runs unchanged here. The
//! exact discounted values come from solving the Bellman linear system.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::navenv::JointAction;
use crate::policynet::PolicyParams;
use crate::rng::StreamRng;
use crate::sampler::{Environment, StepOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// `transitions[s][a][s']`
    transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`
    rewards: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        features: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n = transitions.len();
        let actions = transitions.first().map_or(0, Vec::len);
        let stochastic = |row: &[f64]| row.len() == n && (row.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        let ok = n > 0
            && actions > 0
            && transitions
                .iter()
                .all(|per_a| per_a.len() == actions && per_a.iter().all(|r| stochastic(r)))
            && rewards.len() == n
            && rewards.iter().all(|r| r.len() == actions)
            && features.len() == n
            && features.iter().all(|f| f.len() == features[0].len() && !f.is_empty())
            && stochastic(&initial);
        if !ok {
            return Err(Error::InvalidInput("inconsistent tabular MDP".into()));
        }
        Ok(TabularMdp {
            transitions,
            rewards,
            features,
            initial,
        })
    }

    /// Action-independent chain with rows `[0.9, 0.1]` and `[0.2, 0.8]`.
    pub fn two_state_chain() -> Self {
        let row0 = vec![0.9, 0.1];
        let row1 = vec![0.2, 0.8];
        TabularMdp::new(
            vec![vec![row0], vec![row1]],
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.5, 0.5],
        )
        .expect("valid fixture")
    }

    /// Two states, two actions, small rewards so that values stay within the
    /// range a `1/sqrt(m)`-scaled critic can represent.
    pub fn two_state_mdp() -> Self {
        TabularMdp::new(
            vec![
                vec![vec![0.9, 0.1], vec![0.3, 0.7]],
                vec![vec![0.6, 0.4], vec![0.2, 0.8]],
            ],
            vec![vec![0.2, 0.1], vec![-0.1, -0.2]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.5, 0.5],
        )
        .expect("valid fixture")
    }

    /// One state, one action, constant reward `r`.
    pub fn single_state(reward: f64, feature: Vec<f64>) -> Self {
        TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![reward]], vec![feature], vec![1.0])
            .expect("valid fixture")
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions[0].len()
    }

    pub fn state_of(&self, state: &usize) -> usize {
        *state
    }

    pub fn feature(&self, state: usize) -> &[f64] {
        &self.features[state]
    }

    /// Policy-averaged transition matrix and reward vector.
    pub fn induced_chain(&self, policy: &PolicyParams) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.n_states();
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            let pi = &policy.action_distribution(&self.features[s])?[0];
            for (a, &pa) in pi.iter().enumerate() {
                r[s] += pa * self.rewards[s][a];
                for s2 in 0..n {
                    p[(s, s2)] += pa * self.transitions[s][a][s2];
                }
            }
        }
        Ok((p, r))
    }

    /// Exact `V = (I - gamma P_pi)^{-1} r_pi`.
    pub fn exact_values(&self, policy: &PolicyParams, gamma: f64) -> Result<Vec<f64>> {
        let (p, r) = self.induced_chain(policy)?;
        let n = self.n_states();
        let system = DMatrix::identity(n, n) - p * gamma;
        let v = system
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::InvalidInput("singular Bellman system".into()))?;
        Ok(v.iter().copied().collect())
    }
}

fn draw(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

impl Environment for TabularMdp {
    type State = usize;

    fn n_agents(&self) -> usize {
        1
    }

    fn action_counts(&self) -> Vec<usize> {
        vec![self.n_actions()]
    }

    fn observation_dim(&self) -> usize {
        self.features[0].len()
    }

    fn reset(&self, rng: &mut StreamRng) -> usize {
        draw(&self.initial, rng)
    }

    fn observe(&self, state: &usize) -> Vec<f64> {
        self.features[*state].clone()
    }

    fn step(&self, state: &mut usize, action: &JointAction, rng: &mut StreamRng) -> Result<StepOutcome> {
        let a = action.as_slice()[0];
        if a >= self.n_actions() {
            return Err(Error::InvalidAction {
                agent: 0,
                action: a,
                count: self.n_actions(),
            });
        }
        let reward = self.rewards[*state][a];
        *state = draw(&self.transitions[*state][a], rng);
        Ok(StepOutcome {
            rewards: vec![reward],
            done: false,
        })
    }
}
