//! Run configuration: JSON file, `--set` overrides, seed resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::critic::TdSettings;
use crate::navenv::NavConfig;
use crate::topology::Graph;
use crate::valuenet::Activation;
use crate::{Error, Result};

pub const SEED_ENV: &str = "LTAC_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    pub out: PathBuf,
    pub graph: Graph,
    pub env: NavConfig,
    pub critic: CriticConfig,
    pub policy: PolicyConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub quadratic: QuadraticConfig,
    pub diag: DiagConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/latest"),
            graph: Graph::ring(5).expect("ring-5"),
            env: NavConfig::default(),
            critic: CriticConfig::default(),
            policy: PolicyConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            quadratic: QuadraticConfig::default(),
            diag: DiagConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub radius: f64,
    #[serde(rename = "Nc")]
    pub nc: usize,
    #[serde(rename = "Tc")]
    pub tc: usize,
    pub eta: f64,
    pub gamma: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            width: 64,
            depth: 2,
            activation: Activation::Tanh,
            radius: 10.0,
            nc: 20,
            tc: 3,
            eta: 0.001,
            gamma: 0.95,
        }
    }
}

impl CriticConfig {
    pub fn td_settings(&self) -> TdSettings {
        TdSettings {
            batch: self.nc,
            iterations: self.tc,
            step_size: self.eta,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Width of both hidden layers.
    pub hidden: usize,
    /// Clip each score vector to this norm; off when absent.
    pub score_clip: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 64,
            score_clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub burn_in: usize,
    /// Seed for the sampling streams; the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in: 200,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    #[default]
    ActorCritic,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub tau: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    /// Seed for the shared initial policy and the critics; the master seed
    /// when absent.
    pub seed: Option<u64>,
    pub oracle: Oracle,
    /// Run the agents of a round on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 2000,
            tau: 3,
            b: 20,
            alpha: 0.001,
            beta: 0.01,
            rho: 0.5,
            seed: None,
            oracle: Oracle::ActorCritic,
            parallel: true,
        }
    }
}

/// `J_i(w) = -q_i/2 ||w - c_i||^2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    /// One target per agent; unit basis vectors of `R^N` when absent.
    pub targets: Option<Vec<Vec<f64>>>,
    /// One curvature per agent; all ones when absent.
    pub curvatures: Option<Vec<f64>>,
}

impl QuadraticConfig {
    pub fn resolved(&self, n: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let targets = self.targets.clone().unwrap_or_else(|| {
            (0..n)
                .map(|i| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect()
        });
        if targets.len() != n {
            return Err(Error::config("quadratic.targets", format!("need {n} targets, got {}", targets.len())));
        }
        let dim = targets[0].len();
        if dim == 0 || targets.iter().any(|t| t.len() != dim) {
            return Err(Error::config("quadratic.targets", "targets must share a positive dimension"));
        }
        let curvatures = self.curvatures.clone().unwrap_or_else(|| vec![1.0; n]);
        if curvatures.len() != n || curvatures.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(Error::config("quadratic.curvatures", format!("need {n} positive curvatures")));
        }
        Ok((targets, curvatures))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagConfig {
    /// Evaluation-only samples per agent for the `||grad J||^2` estimate.
    #[serde(rename = "B_eval")]
    pub b_eval: usize,
    /// Smoothness constant for the step-size report.
    #[serde(rename = "L")]
    pub l: f64,
    pub cache_compact_form: bool,
    /// Record elapsed time in `wall_time_s`; when false the column is 0 and
    /// `metrics.csv` is byte-reproducible.
    pub wall_clock: bool,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            b_eval: 20,
            l: 1.0,
            cache_compact_form: false,
            wall_clock: true,
        }
    }
}

impl RunConfig {
    /// Seed for the shared initial policy and the critics.
    pub fn init_seed(&self) -> u64 {
        self.train.seed.unwrap_or(self.seed)
    }

    /// Seed for every sampling stream.
    pub fn sampling_seed(&self) -> u64 {
        self.sampler.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        let t = &self.train;
        if t.tau == 0 {
            return Err(Error::config("train.tau", "must be at least 1"));
        }
        for (key, v) in [("train.alpha", t.alpha), ("train.beta", t.beta), ("train.rho", t.rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.diag.l > 0.0 && self.diag.l.is_finite()) {
            return Err(Error::config("diag.L", "must be positive"));
        }
        match t.oracle {
            Oracle::Quadratic => {
                self.quadratic.resolved(n)?;
            }
            Oracle::ActorCritic => {
                if self.env.n_agents != n {
                    return Err(Error::config(
                        "env.n_agents",
                        format!("graph has {n} nodes but env has {} agents", self.env.n_agents),
                    ));
                }
                self.env.validate()?;
                self.critic.td_settings().validate()?;
                if t.b == 0 {
                    return Err(Error::config("train.B", "must be at least 1"));
                }
                let c = &self.critic;
                if c.width == 0 || c.depth == 0 {
                    return Err(Error::config("critic.width", "width and depth must be positive"));
                }
                if !(c.radius > 0.0 && c.radius.is_finite()) {
                    return Err(Error::config("critic.radius", "must be positive"));
                }
                if self.policy.hidden == 0 {
                    return Err(Error::config("policy.hidden", "must be positive"));
                }
                if let Some(clip) = self.policy.score_clip {
                    if !(clip > 0.0) {
                        return Err(Error::config("policy.score_clip", "must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses a JSON value, naming the offending key on failure.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { String::new() } else { key }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (defaults when `None`), then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)?
            }
            None => Value::Object(Default::default()),
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        Self::from_value(value)
    }

    /// Precedence: explicit argument, then `LTAC_SEED`, then the file.
    pub fn resolve_seed(&mut self, cli_seed: Option<u64>) -> Result<()> {
        if let Some(s) = cli_seed {
            self.seed = s;
        } else if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("not an unsigned integer: {raw:?}")))?;
        }
        Ok(())
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(item, "empty key"));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            _ => return Err(Error::config(parts[..depth].join("."), "not a section")),
        };
        if depth + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
