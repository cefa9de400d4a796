//! Cooperative navigation: N damped point masses, each chasing its own
//! landmark inside the square `[-bound, bound]^2`.
//!
//! Per step and per moving agent: damp the velocity, add the force impulse,
//! rescale to `v_max`, integrate the position, clamp it to the arena. Agents
//! choosing `stay` keep position and velocity untouched. Collisions only cost
//! reward; bodies pass through each other.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::sampler::{Environment, StepOutcome};
use crate::{Error, Result};

pub const ACTION_COUNT: usize = 5;

/// Per-agent action index: 0 up, 1 down, 2 left, 3 right, 4 stay.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl JointAction {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Either one value for every agent or an explicit per-agent list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    All(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    pub fn get(&self, agent: usize) -> f64 {
        match self {
            PerAgent::All(v) => *v,
            PerAgent::Each(v) => v[agent],
        }
    }

    fn check(&self, key: &str, n: usize) -> Result<()> {
        let values: Vec<f64> = match self {
            PerAgent::All(v) => vec![*v],
            PerAgent::Each(v) if v.len() != n => {
                return Err(Error::config(key, format!("expected {n} values, got {}", v.len())))
            }
            PerAgent::Each(v) => v.clone(),
        };
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::config(key, "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub n_agents: usize,
    pub mass: PerAgent,
    /// Fraction of velocity removed per step, in `[0, 1)`.
    pub damping: f64,
    pub dt: f64,
    pub v_max: PerAgent,
    pub d_coll: f64,
    pub force_mag: f64,
    /// Half-width of the arena.
    pub bound: f64,
    /// Episode ends once the summed agent-landmark distance drops below this.
    pub done_threshold: f64,
    pub max_steps: usize,
    /// Scale observations by `1/(2 sqrt(N))` so that `||s|| <= 1`.
    pub scale_state: bool,
    /// Rewards are reported as `reward_scale * r + reward_shift`.
    pub reward_scale: f64,
    pub reward_shift: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            n_agents: 5,
            mass: PerAgent::All(1.0),
            damping: 0.25,
            dt: 0.1,
            v_max: PerAgent::All(1.0),
            d_coll: 0.1,
            force_mag: 1.0,
            bound: 1.0,
            done_threshold: 0.15,
            max_steps: 25,
            scale_state: true,
            reward_scale: 1.0,
            reward_shift: 0.0,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents;
        if n == 0 {
            return Err(Error::config("env.n_agents", "must be at least 1"));
        }
        self.mass.check("env.mass", n)?;
        self.v_max.check("env.v_max", n)?;
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::config("env.damping", "must lie in [0, 1)"));
        }
        for (key, v) in [
            ("env.dt", self.dt),
            ("env.d_coll", self.d_coll),
            ("env.force_mag", self.force_mag),
            ("env.bound", self.bound),
            ("env.done_threshold", self.done_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps", "must be at least 1"));
        }
        if !self.reward_scale.is_finite() || !self.reward_shift.is_finite() {
            return Err(Error::config("env.reward_scale", "reward transform must be finite"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        4 * self.n_agents
    }

    fn observation_scale(&self) -> f64 {
        if self.scale_state {
            1.0 / (2.0 * (self.n_agents as f64).sqrt())
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub landmarks: Vec<[f64; 2]>,
    pub step_count: usize,
}

impl NavState {
    pub fn landmark_distances(&self) -> Vec<f64> {
        self.positions.iter().zip(&self.landmarks).map(|(p, l)| dist(p, l)).collect()
    }

    pub fn total_distance(&self) -> f64 {
        self.landmark_distances().iter().sum()
    }
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn force_direction(action: usize) -> Option<[f64; 2]> {
    match action {
        0 => Some([0.0, 1.0]),
        1 => Some([0.0, -1.0]),
        2 => Some([-1.0, 0.0]),
        3 => Some([1.0, 0.0]),
        _ => None,
    }
}

/// Agents and landmarks uniform in the arena; agent `i` targets landmark `i`.
pub fn reset(cfg: &NavConfig, rng: &mut StreamRng) -> NavState {
    let b = cfg.bound;
    let draw = |rng: &mut StreamRng| [rng.random_range(-b..=b), rng.random_range(-b..=b)];
    let positions: Vec<_> = (0..cfg.n_agents).map(|_| draw(rng)).collect();
    let landmarks: Vec<_> = (0..cfg.n_agents).map(|_| draw(rng)).collect();
    NavState {
        positions,
        velocities: vec![[0.0; 2]; cfg.n_agents],
        landmarks,
        step_count: 0,
    }
}

/// Advances one step; returns the next state, per-agent rewards and `done`.
pub fn step(cfg: &NavConfig, state: &NavState, action: &JointAction) -> Result<(NavState, Vec<f64>, bool)> {
    let n = cfg.n_agents;
    if action.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: action.len(),
        });
    }
    let mut next = state.clone();
    for (i, &a) in action.as_slice().iter().enumerate() {
        if a >= ACTION_COUNT {
            return Err(Error::InvalidAction {
                agent: i,
                action: a,
                count: ACTION_COUNT,
            });
        }
        let Some(dir) = force_direction(a) else {
            continue;
        };
        let impulse = cfg.dt / cfg.mass.get(i) * cfg.force_mag;
        let v = state.velocities[i];
        let mut nv = [
            (1.0 - cfg.damping) * v[0] + impulse * dir[0],
            (1.0 - cfg.damping) * v[1] + impulse * dir[1],
        ];
        let speed = nv[0].hypot(nv[1]);
        let v_max = cfg.v_max.get(i);
        if speed > v_max {
            nv = [nv[0] * v_max / speed, nv[1] * v_max / speed];
        }
        let p = state.positions[i];
        next.velocities[i] = nv;
        next.positions[i] = [
            (p[0] + cfg.dt * nv[0]).clamp(-cfg.bound, cfg.bound),
            (p[1] + cfg.dt * nv[1]).clamp(-cfg.bound, cfg.bound),
        ];
    }
    next.step_count += 1;

    let rewards = rewards(cfg, &next);
    let done = next.total_distance() < cfg.done_threshold || next.step_count >= cfg.max_steps;
    Ok((next, rewards, done))
}

/// Negative landmark distance minus one per agent closer than `d_coll`.
pub fn rewards(cfg: &NavConfig, state: &NavState) -> Vec<f64> {
    let p = &state.positions;
    (0..cfg.n_agents)
        .map(|i| {
            let collisions = (0..cfg.n_agents)
                .filter(|&j| j != i && dist(&p[i], &p[j]) < cfg.d_coll)
                .count();
            let raw = -dist(&p[i], &state.landmarks[i]) - collisions as f64;
            cfg.reward_scale * raw + cfg.reward_shift
        })
        .collect()
}

/// Agent positions then landmark positions, optionally rescaled.
pub fn flatten_state(cfg: &NavConfig, state: &NavState) -> Vec<f64> {
    let scale = cfg.observation_scale();
    state
        .positions
        .iter()
        .chain(&state.landmarks)
        .flat_map(|p| [p[0] * scale, p[1] * scale])
        .collect()
}

/// Inverse of [`flatten_state`] for the positional part.
pub fn unflatten_positions(cfg: &NavConfig, s: &[f64]) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    if s.len() != cfg.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.state_dim(),
            got: s.len(),
        });
    }
    let scale = cfg.observation_scale();
    let pts: Vec<[f64; 2]> = s.chunks_exact(2).map(|c| [c[0] / scale, c[1] / scale]).collect();
    let (agents, landmarks) = pts.split_at(cfg.n_agents);
    Ok((agents.to_vec(), landmarks.to_vec()))
}

/// [`NavConfig`] as a sampler environment.
#[derive(Debug, Clone)]
pub struct NavEnv {
    cfg: NavConfig,
}

impl NavEnv {
    pub fn new(cfg: NavConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NavEnv { cfg })
    }

    pub fn config(&self) -> &NavConfig {
        &self.cfg
    }
}

impl Environment for NavEnv {
    type State = NavState;

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn action_counts(&self) -> Vec<usize> {
        vec![ACTION_COUNT; self.cfg.n_agents]
    }

    fn observation_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    fn reset(&self, rng: &mut StreamRng) -> NavState {
        reset(&self.cfg, rng)
    }

    fn observe(&self, state: &NavState) -> Vec<f64> {
        flatten_state(&self.cfg, state)
    }

    fn step(&self, state: &mut NavState, action: &JointAction, _rng: &mut StreamRng) -> Result<StepOutcome> {
        let (next, rewards, done) = step(&self.cfg, state, action)?;
        *state = next;
        Ok(StepOutcome { rewards, done })
    }
}
