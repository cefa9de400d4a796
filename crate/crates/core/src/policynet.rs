//! Factorized joint softmax policy.
//!
//! `pi(a | s) = prod_j pi^j(a^j | s)`, where every block `j` is a relu MLP
//! from the full global state to `|A^j|` logits. The whole joint parameter
//! lives in one flat vector so that consensus arithmetic can treat it as a
//! plain `d`-vector. Layout: agent block, then layer, then the layer's
//! row-major weight matrix followed by its bias.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::navenv::JointAction;
use crate::rng::StreamRng;
use crate::vecops::{dot, matvec_t, norm_sq};
use crate::{Error, Result};

pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub input_dim: usize,
    /// Hidden widths shared by every block; empty means a linear softmax.
    pub hidden: Vec<usize>,
    pub action_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl LayerSpan {
    fn weights(self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    fn bias(self) -> std::ops::Range<usize> {
        let start = self.offset + self.rows * self.cols;
        start..start + self.rows
    }
}

impl PolicyShape {
    pub fn new(input_dim: usize, hidden: Vec<usize>, action_counts: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) || action_counts.is_empty() || action_counts.contains(&0) {
            return Err(Error::InvalidInput(
                "policy dimensions, hidden widths and action counts must be positive".into(),
            ));
        }
        Ok(PolicyShape {
            input_dim,
            hidden,
            action_counts,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    fn layer_dims(&self, agent: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut cols = self.input_dim;
        for &h in &self.hidden {
            dims.push((h, cols));
            cols = h;
        }
        dims.push((self.action_counts[agent], cols));
        dims
    }

    pub fn block_len(&self, agent: usize) -> usize {
        self.layer_dims(agent).iter().map(|(r, c)| r * c + r).sum()
    }

    pub fn block_offset(&self, agent: usize) -> usize {
        (0..agent).map(|j| self.block_len(j)).sum()
    }

    /// Total parameter dimension `d`.
    pub fn dim(&self) -> usize {
        (0..self.n_agents()).map(|j| self.block_len(j)).sum()
    }

    fn spans(&self, agent: usize) -> Vec<LayerSpan> {
        let mut offset = self.block_offset(agent);
        self.layer_dims(agent)
            .into_iter()
            .map(|(rows, cols)| {
                let span = LayerSpan { offset, rows, cols };
                offset += rows * cols + rows;
                span
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

/// Two relu hidden layers of width `hidden`; every weight and bias is drawn
/// from `N(0, 0.1^2)`.
pub fn init_policy(
    rng: &mut StreamRng,
    input_dim: usize,
    action_counts: Vec<usize>,
    hidden: usize,
) -> Result<PolicyParams> {
    let shape = PolicyShape::new(input_dim, vec![hidden, hidden], action_counts)?;
    Ok(PolicyParams::random(shape, rng))
}

struct BlockTrace {
    /// Input followed by every hidden activation.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl PolicyParams {
    pub fn random(shape: PolicyShape, rng: &mut StreamRng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let data = (0..shape.dim()).map(|_| normal.sample(rng)).collect();
        PolicyParams { shape, data }
    }

    pub fn zeros(shape: PolicyShape) -> Self {
        let data = vec![0.0; shape.dim()];
        PolicyParams { shape, data }
    }

    pub fn from_flat(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.dim(),
                got: data.len(),
            });
        }
        Ok(PolicyParams { shape, data })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// Overwrites the bias of output unit `action` in block `agent`.
    pub fn set_output_bias(&mut self, agent: usize, action: usize, value: f64) {
        let span = *self.shape.spans(agent).last().expect("output layer");
        self.data[span.bias()][action] = value;
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.shape.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_dim,
                got: s.len(),
            });
        }
        Ok(())
    }

    fn forward_block(&self, agent: usize, s: &[f64]) -> BlockTrace {
        let spans = self.shape.spans(agent);
        let (out_span, hidden) = spans.split_last().expect("output layer");
        let mut acts = vec![s.to_vec()];
        let mut pre = Vec::with_capacity(hidden.len());
        for span in hidden {
            let z = affine(&self.data, *span, acts.last().expect("input"));
            acts.push(z.iter().map(|&v| v.max(0.0)).collect());
            pre.push(z);
        }
        let logits = affine(&self.data, *out_span, acts.last().expect("input"));
        BlockTrace { acts, pre, logits }
    }

    /// Logits of block `agent`.
    pub fn logits(&self, agent: usize, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        Ok(self.forward_block(agent, s).logits)
    }

    /// One probability vector per agent.
    pub fn action_distribution(&self, s: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(s)?;
        Ok((0..self.shape.n_agents())
            .map(|j| softmax(&self.forward_block(j, s).logits))
            .collect())
    }

    /// `log pi(a | s)` of the joint action.
    pub fn log_prob(&self, s: &[f64], a: &JointAction) -> Result<f64> {
        self.check_action(a)?;
        let probs = self.action_distribution(s)?;
        Ok(a.as_slice().iter().zip(&probs).map(|(&aj, p)| log_softmax_at(p, aj)).sum())
    }

    /// Independent categorical draw per agent.
    pub fn sample_joint(&self, s: &[f64], rng: &mut StreamRng) -> Result<JointAction> {
        let probs = self.action_distribution(s)?;
        Ok(JointAction(probs.iter().map(|p| categorical(p, rng)).collect()))
    }

    /// Score `grad_omega log pi(a | s)`, laid out like the parameters.
    pub fn score(&self, s: &[f64], a: &JointAction) -> Result<Vec<f64>> {
        self.check_input(s)?;
        self.check_action(a)?;
        let mut out = vec![0.0; self.dim()];
        for (j, &aj) in a.as_slice().iter().enumerate() {
            self.backprop_block(j, s, aj, &mut out);
        }
        Ok(out)
    }

    fn check_action(&self, a: &JointAction) -> Result<()> {
        if a.len() != self.shape.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.n_agents(),
                got: a.len(),
            });
        }
        for (agent, (&action, &count)) in a.as_slice().iter().zip(&self.shape.action_counts).enumerate() {
            if action >= count {
                return Err(Error::InvalidAction { agent, action, count });
            }
        }
        Ok(())
    }

    fn backprop_block(&self, agent: usize, s: &[f64], action: usize, out: &mut [f64]) {
        let trace = self.forward_block(agent, s);
        let spans = self.shape.spans(agent);
        let probs = softmax(&trace.logits);
        // d log softmax_a / d logits = onehot(a) - pi
        let mut delta: Vec<f64> = probs.iter().map(|p| -p).collect();
        delta[action] += 1.0;

        for (l, span) in spans.iter().enumerate().rev() {
            let input = &trace.acts[l];
            for (r, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = span.offset + r * span.cols;
                    for (g, &x) in out[row..row + span.cols].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            for (g, &d) in out[span.bias()].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let mut back = vec![0.0; span.cols];
                matvec_t(&self.data[span.weights()], span.rows, span.cols, &delta, &mut back);
                for (b, &z) in back.iter_mut().zip(&trace.pre[l - 1]) {
                    if z <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
    }

    /// Smallest `|pre-activation|` over all hidden units at `s`; distance to
    /// the nearest relu kink.
    pub fn kink_margin(&self, s: &[f64]) -> Result<f64> {
        self.check_input(s)?;
        Ok((0..self.shape.n_agents())
            .flat_map(|j| self.forward_block(j, s).pre.into_iter().flatten())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min))
    }
}

fn affine(data: &[f64], span: LayerSpan, x: &[f64]) -> Vec<f64> {
    let w = &data[span.weights()];
    data[span.bias()]
        .iter()
        .enumerate()
        .map(|(r, b)| b + dot(&w[r * span.cols..(r + 1) * span.cols], x))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(probs: &[f64], a: usize) -> f64 {
    probs[a].ln()
}

fn categorical(probs: &[f64], rng: &mut StreamRng) -> usize {
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

/// Rescales `score` to norm `threshold` when it is longer; returns the
/// norm before clipping.
pub fn clip_score(score: &mut [f64], threshold: Option<f64>) -> f64 {
    let norm = norm_sq(score).sqrt();
    if let Some(t) = threshold {
        if norm > t {
            let k = t / norm;
            score.iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}
