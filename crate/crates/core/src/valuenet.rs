//! Width-`m` value network
//!
//! ```text
//! x^0 = s,   x^l = rho(theta^l x^{l-1}) / sqrt(m),   V(s) = b . x^L / sqrt(m)
//! ```
//!
//! `theta^1` is `m x d_s`, later layers are `m x m`. The output vector `b`
//! is drawn at initialization and never trained. Parameter distance is the
//! Frobenius norm over all layers concatenated.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::vecops::{axpy, dot, matvec, matvec_t, norm_sq};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative; relu uses 0 at the kink.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNetParams {
    width: usize,
    input_dim: usize,
    activation: Activation,
    /// Row-major layer weights.
    layers: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Gradient of `V` with respect to every trainable weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub layers: Vec<Vec<f64>>,
}

impl ValueGrad {
    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| norm_sq(l)).sum()
    }
}

/// `N(0, 1)` entries for every layer and for `b`.
pub fn init_valuenet(
    rng: &mut StreamRng,
    width: usize,
    depth: usize,
    input_dim: usize,
    activation: Activation,
) -> Result<ValueNetParams> {
    if width == 0 || depth == 0 || input_dim == 0 {
        return Err(Error::InvalidInput(format!(
            "value net needs positive width/depth/input, got m={width}, L={depth}, d={input_dim}"
        )));
    }
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(rng)).collect() };
    let mut layers = Vec::with_capacity(depth);
    layers.push(normal(width * input_dim));
    for _ in 1..depth {
        layers.push(normal(width * width));
    }
    let output = normal(width);
    Ok(ValueNetParams {
        width,
        input_dim,
        activation,
        layers,
        output,
    })
}

impl ValueNetParams {
    /// Builds a network from explicit weights; used by fixtures and tests.
    pub fn from_parts(
        width: usize,
        input_dim: usize,
        activation: Activation,
        layers: Vec<Vec<f64>>,
        output: Vec<f64>,
    ) -> Result<Self> {
        let ok = !layers.is_empty()
            && output.len() == width
            && layers
                .iter()
                .enumerate()
                .all(|(l, w)| w.len() == width * if l == 0 { input_dim } else { width });
        if !ok {
            return Err(Error::InvalidInput("inconsistent value-net shapes".into()));
        }
        Ok(ValueNetParams {
            width,
            input_dim,
            activation,
            layers,
            output,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.layers
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| norm_sq(l)).sum()
    }

    pub fn distance(&self, other: &ValueNetParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }

    fn same_shape(&self, other: &ValueNetParams) -> bool {
        self.width == other.width
            && self.input_dim == other.input_dim
            && self.layers.len() == other.layers.len()
    }

    /// `theta += scale * grad`
    pub fn add_scaled(&mut self, grad: &[Vec<f64>], scale: f64) {
        for (w, g) in self.layers.iter_mut().zip(grad) {
            axpy(w, scale, g);
        }
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: s.len(),
            });
        }
        Ok(())
    }

    fn inv_sqrt_width(&self) -> f64 {
        1.0 / (self.width as f64).sqrt()
    }

    /// Pre-activations and activations of every layer.
    fn forward_trace(&self, s: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let m = self.width;
        let scale = self.inv_sqrt_width();
        let mut pre = Vec::with_capacity(self.depth());
        let mut act = Vec::with_capacity(self.depth() + 1);
        act.push(s.to_vec());
        for (l, w) in self.layers.iter().enumerate() {
            let cols = if l == 0 { self.input_dim } else { m };
            let mut z = vec![0.0; m];
            matvec(w, m, cols, &act[l], &mut z);
            act.push(z.iter().map(|&zi| scale * self.activation.apply(zi)).collect());
            pre.push(z);
        }
        (pre, act)
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        self.check_input(s)?;
        let (_, act) = self.forward_trace(s);
        Ok(self.inv_sqrt_width() * dot(&self.output, &act[self.depth()]))
    }

    /// Smallest `|pre-activation|` at `s`; distance to the nearest relu kink.
    pub fn kink_margin(&self, s: &[f64]) -> Result<f64> {
        self.check_input(s)?;
        let (pre, _) = self.forward_trace(s);
        Ok(pre.iter().flatten().map(|z| z.abs()).fold(f64::INFINITY, f64::min))
    }

    /// Value and reverse-mode gradient with `b` held fixed.
    pub fn value_grad(&self, s: &[f64]) -> Result<ValueGrad> {
        self.check_input(s)?;
        let m = self.width;
        let scale = self.inv_sqrt_width();
        let (pre, act) = self.forward_trace(s);
        let value = scale * dot(&self.output, &act[self.depth()]);

        let mut grads = vec![Vec::new(); self.depth()];
        // dV/dx^L
        let mut upstream: Vec<f64> = self.output.iter().map(|b| b * scale).collect();
        for l in (0..self.depth()).rev() {
            let cols = if l == 0 { self.input_dim } else { m };
            let dz: Vec<f64> = upstream
                .iter()
                .zip(&pre[l])
                .map(|(u, &z)| u * scale * self.activation.derivative(z))
                .collect();
            let input = &act[l];
            let mut g = vec![0.0; m * cols];
            for (r, &d) in dz.iter().enumerate() {
                if d != 0.0 {
                    axpy(&mut g[r * cols..(r + 1) * cols], d, input);
                }
            }
            grads[l] = g;
            if l > 0 {
                let mut next = vec![0.0; cols];
                matvec_t(&self.layers[l], m, cols, &dz, &mut next);
                upstream = next;
            }
        }
        Ok(ValueGrad { value, layers: grads })
    }
}

/// Closed Frobenius ball around a reference network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBall {
    center: ValueNetParams,
    radius: f64,
}

impl ProjectionBall {
    pub fn new(center: ValueNetParams, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("projection radius must be positive, got {radius}")));
        }
        Ok(ProjectionBall { center, radius })
    }

    pub fn center(&self) -> &ValueNetParams {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, params: &ValueNetParams, tol: f64) -> bool {
        self.center.distance(params) <= self.radius * (1.0 + tol)
    }

    /// Radial projection onto the ball.
    pub fn project(&self, params: &ValueNetParams) -> Result<ValueNetParams> {
        let mut out = params.clone();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, params: &mut ValueNetParams) -> Result<()> {
        if !self.center.same_shape(params) {
            return Err(Error::InvalidInput("projection center shape differs from parameters".into()));
        }
        let d = self.center.distance(params);
        if d <= self.radius {
            return Ok(());
        }
        let shrink = self.radius / d;
        for (w, c) in params.layers.iter_mut().zip(&self.center.layers) {
            for (x, &c0) in w.iter_mut().zip(c) {
                *x = c0 + shrink * (*x - c0);
            }
        }
        Ok(())
    }
}

pub fn project(params: &ValueNetParams, ball: &ProjectionBall) -> Result<ValueNetParams> {
    ball.project(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn scalar_net(theta: f64, b: f64, act: Activation) -> ValueNetParams {
        ValueNetParams::from_parts(1, 1, act, vec![vec![theta]], vec![b]).unwrap()
    }

    #[test]
    fn shapes_and_determinism() {
        let p = init_valuenet(&mut seeded(1), 64, 2, 20, Activation::Tanh).unwrap();
        assert_eq!(p.layers()[0].len(), 64 * 20);
        assert_eq!(p.layers()[1].len(), 64 * 64);
        assert_eq!(p.output().len(), 64);
        assert_eq!(p, init_valuenet(&mut seeded(1), 64, 2, 20, Activation::Tanh).unwrap());
        assert!(init_valuenet(&mut seeded(1), 0, 2, 20, Activation::Tanh).is_err());
    }

    #[test]
    fn init_entries_look_standard_normal() {
        let p = init_valuenet(&mut seeded(2), 64, 2, 20, Activation::Tanh).unwrap();
        let all: Vec<f64> = p.layers().iter().flatten().chain(p.output()).copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        assert!(mean.abs() < 5.0 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn hand_evaluated_value_and_gradient() {
        let p = scalar_net(2.0, 1.0, Activation::Tanh);
        assert!((p.value(&[0.5]).unwrap() - 1f64.tanh()).abs() < 1e-15);
        assert!((p.value(&[0.5]).unwrap() - 0.761_594).abs() < 1e-6);
        let g = p.value_grad(&[0.5]).unwrap();
        assert!((g.layers[0][0] - 0.5 * (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);
        assert!((g.layers[0][0] - 0.209_987).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_and_zero_state_give_zero() {
        let mut p = init_valuenet(&mut seeded(3), 8, 2, 4, Activation::Tanh).unwrap();
        assert_eq!(p.value(&[0.0; 4]).unwrap(), 0.0);
        p.layers_mut().iter_mut().flatten().for_each(|x| *x = 0.0);
        assert_eq!(p.value(&[0.3, -0.1, 0.7, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn frozen_output_decouples_gradient() {
        let p = init_valuenet(&mut seeded(4), 8, 3, 4, Activation::Tanh).unwrap();
        let q = ValueNetParams {
            output: vec![0.0; 8],
            ..p
        };
        assert_eq!(q.value_grad(&[0.1, 0.2, 0.3, 0.4]).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = init_valuenet(&mut seeded(5), 4, 1, 3, Activation::Relu).unwrap();
        assert!(matches!(p.value(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn projection_halves_when_twice_the_radius() {
        let center = scalar_net(0.0, 1.0, Activation::Tanh);
        let center = ValueNetParams {
            layers: vec![vec![0.0, 0.0]],
            input_dim: 2,
            ..center
        };
        let ball = ProjectionBall::new(center.clone(), 1.0).unwrap();
        let p = ValueNetParams {
            layers: vec![vec![2.0 * 0.6, 2.0 * 0.8]],
            ..center
        };
        let out = project(&p, &ball).unwrap();
        assert!((out.layers()[0][0] - 0.6).abs() < 1e-15);
        assert!((out.layers()[0][1] - 0.8).abs() < 1e-15);
        assert_eq!(project(&out, &ball).unwrap(), out);
    }

    #[test]
    fn projection_identity_inside() {
        let c = init_valuenet(&mut seeded(6), 4, 2, 3, Activation::Tanh).unwrap();
        let mut p = c.clone();
        p.layers_mut()[0][0] += 0.5;
        let ball = ProjectionBall::new(c, 1.0).unwrap();
        assert_eq!(ball.project(&p).unwrap(), p);
        assert!(ProjectionBall::new(p, 0.0).is_err());
    }
}
