//! Round metrics, the step-size calculator, the spectral `V` blocks and the
//! compact-form verifier.

use nalgebra::{Complex, DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::critic::td_error;
use crate::ltadmm::{BridgeVars, CompactTrace};
use crate::sampler::Transition;
use crate::topology::{build_structures, Graph, GraphStructures};
use crate::valuenet::ValueNetParams;
use crate::vecops::{axpy, mean_of, norm_sq};
use crate::{Error, Result};

/// One row of `metrics.csv` plus the invariant residuals of that round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub comm_rounds: u64,
    /// Rolling mean of the per-round return.
    pub return_mean: f64,
    pub consensus_error: f64,
    pub critic_loss: f64,
    pub dk_surrogate: f64,
    /// `(1/tau) sum_t ||(1/N) sum_i g_i||^2`, exact from cached gradients.
    pub dk_averaged_term: f64,
    /// `||grad J(omega_bar_k)||^2` estimate.
    pub grad_norm_est: f64,
    pub wall_time_s: f64,
    pub mean_preservation_residual: f64,
    pub mean_recursion_residual: f64,
}

/// `sum_i ||omega_i - omega_bar||^2`
pub fn consensus_error(omegas: &[Vec<f64>]) -> f64 {
    if omegas.is_empty() {
        return 0.0;
    }
    let bar = mean_of(omegas);
    omegas
        .iter()
        .map(|w| w.iter().zip(&bar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DkSurrogate {
    pub averaged_term: f64,
    /// Estimated, from `b_eval` evaluation-only samples per agent.
    pub gradient_term: f64,
    pub b_eval: usize,
    pub total: f64,
}

/// `gradients` is indexed `[agent][t]`.
pub fn dk_surrogate(gradients: &[Vec<Vec<f64>>], grad_estimate: Option<&[f64]>, b_eval: usize) -> DkSurrogate {
    let tau = gradients.first().map_or(0, Vec::len);
    let mut averaged_term = 0.0;
    for t in 0..tau {
        let step: Vec<Vec<f64>> = gradients.iter().map(|g| g[t].clone()).collect();
        averaged_term += norm_sq(&mean_of(&step));
    }
    if tau > 0 {
        averaged_term /= tau as f64;
    }
    let gradient_term = grad_estimate.map_or(0.0, norm_sq);
    DkSurrogate {
        averaged_term,
        gradient_term,
        b_eval,
        total: averaged_term + gradient_term,
    }
}

/// Mean squared TD error over all `(critic, probe batch)` pairs.
pub fn critic_loss(pairs: &[(&ValueNetParams, &[Transition])], gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (critic, batch) in pairs {
        for tr in batch.iter() {
            let d = td_error(critic, tr, gamma)?;
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("critic loss needs a non-empty probe batch".into()));
    }
    Ok(total / count as f64)
}

/// `||1^T A^T Z - rho 1^T D Omega||_inf`, summing bridges directly.
pub fn mean_preservation_residual(graph: &Graph, bridges: &BridgeVars, omegas: &[Vec<f64>], rho: f64) -> f64 {
    let dim = omegas.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    for (_, z) in bridges.iter() {
        axpy(&mut acc, 1.0, z);
    }
    for (w, deg) in omegas.iter().zip(graph.degrees()) {
        axpy(&mut acc, -rho * deg as f64, w);
    }
    acc.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Upper bounds on the actor step size and the constants behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeReport {
    pub alpha_bar_1: f64,
    pub alpha_bar_2: f64,
    pub alpha_bar_3: f64,
    pub alpha_bar_4: f64,
    pub alpha_bar_5: f64,
    pub alpha_bar_6: f64,
    pub alpha_bar: f64,
    pub beta_window: [f64; 2],
    pub beta_in_window: bool,
    pub warning: Option<String>,
    pub beta_0: f64,
    pub c_tilde_2: f64,
    pub c_4: f64,
    /// `1 - lambda_l rho tau beta / 2`.
    pub delta: f64,
    pub l: f64,
    pub tau: usize,
    pub rho: f64,
    pub beta: f64,
    pub n: usize,
    pub lambda_l: f64,
    pub lambda_u: f64,
    pub l_tilde_norm: f64,
    pub vhat_inv_norm: f64,
    pub note: String,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

pub fn beta_window(lambda_u: f64, rho: f64, tau: usize) -> [f64; 2] {
    let base = tau as f64 * lambda_u * rho;
    [1.0 / base, 2.0 / base]
}

pub fn contraction_factor(lambda_l: f64, rho: f64, tau: usize, beta: f64) -> f64 {
    1.0 - lambda_l * rho * tau as f64 * beta / 2.0
}

pub fn stepsize_bounds(l: f64, tau: usize, rho: f64, beta: f64, graph: &Graph) -> Result<StepsizeReport> {
    check_positive("L", l)?;
    check_positive("tau", tau as f64)?;
    check_positive("rho", rho)?;
    check_positive("beta", beta)?;
    let structures = build_structures(graph);
    let (lambda_l, lambda_u) = structures.lambda_bounds()?;
    let l_tilde_norm = structures.signless_norm();
    let window = beta_window(lambda_u, rho, tau);
    let beta_in_window = beta >= window[0] && beta < window[1];
    let vhat = vhat_inv_norm_from(&structures, beta, rho, tau)?;

    let n = graph.node_count();
    let nf = n as f64;
    let t = tau as f64;
    let l2 = l * l;
    let v2 = vhat * vhat;
    let coupling = 1.0 + 2.0 * rho * rho * l_tilde_norm * l_tilde_norm;

    let beta_0 = 72.0 * beta * t * t / (lambda_l * rho) + 216.0 * t.powi(3) * beta * beta;
    let c_tilde_2 = 48.0 * coupling * l2 * t.powi(4) * nf * v2;
    let c_4 = (8.0 * l2 / nf) * (72.0 * beta * t / (lambda_l * rho) + 216.0 * t * t * beta * beta);

    let a1 = f64::min(1.0, 1.0 / (2.0 * l * t * 3f64.sqrt()));
    let a2 = nf.sqrt() / (8.0 * l * t);
    let a3 = 3.0 / (4.0 * l * t);
    let a4 = lambda_l / (lambda_u * (16.0 * coupling * t * l2 * v2 * beta_0).sqrt());
    let a5 = (lambda_l * lambda_l / (16.0 * c_4 * lambda_u * lambda_u * c_tilde_2)).powf(0.25);
    let a6 = (lambda_l * lambda_l * beta * beta / (48.0 * c_4 * t * lambda_u * lambda_u * l2 * nf * v2)).powf(0.25);
    let alpha_bar = [a1, a2, a3, a4, a5, a6].into_iter().fold(f64::INFINITY, f64::min);

    let warning = (!beta_in_window).then(|| {
        let side = if beta < window[0] { "below" } else { "above" };
        format!(
            "beta = {beta} is {side} the theoretical window [{:.6}, {:.6})",
            window[0], window[1]
        )
    });

    Ok(StepsizeReport {
        alpha_bar_1: a1,
        alpha_bar_2: a2,
        alpha_bar_3: a3,
        alpha_bar_4: a4,
        alpha_bar_5: a5,
        alpha_bar_6: a6,
        alpha_bar,
        beta_window: window,
        beta_in_window,
        warning,
        beta_0,
        c_tilde_2,
        c_4,
        delta: contraction_factor(lambda_l, rho, tau, beta),
        l,
        tau,
        rho,
        beta,
        n,
        lambda_l,
        lambda_u,
        l_tilde_norm,
        vhat_inv_norm: vhat,
        note: "L is user-supplied, so the bounds are advisory. ||V^-1|| is the largest \
               2-norm of the inverted 3x3 blocks; the orthogonal and permutation factors \
               around them do not change the operator norm."
            .into(),
    })
}

pub type C64 = Complex<f64>;

/// The 3x3 block `V_i` for an eigenvalue `lt` of `A^T P A - D` (so `lt < 0`).
///
/// Inside the admissible `beta` window `x = beta lt rho tau` lies in
/// `(-2, 0)`, `x (x + 2)` is negative and the entries are complex.
pub fn v_block(lt: f64, beta: f64, rho: f64, tau: usize) -> Matrix3<C64> {
    let bt = beta * tau as f64;
    let x = bt * lt * rho;
    let s = C64::new(x * (x + 2.0), 0.0).sqrt();
    let lr = lt * rho;
    let d12 = -bt + s / lr;
    let d13 = -bt - s / lr;
    let d22 = d12 * lr - 1.0;
    let d23 = d13 * lr - 1.0;
    let one = C64::new(1.0, 0.0);
    Matrix3::new(
        C64::new(-bt, 0.0), d12, d13,
        one, d22, d23,
        one, one, one,
    )
}

/// Per-eigenvalue recursion block that `V_i` diagonalizes.
pub fn recursion_block(lt: f64, beta: f64, rho: f64, tau: usize) -> Matrix3<f64> {
    let bt = beta * tau as f64;
    Matrix3::new(
        1.0, bt, 0.0,
        rho * lt, rho * lt * bt + 0.5, -0.5,
        0.0, -0.5, 0.5,
    )
}

#[derive(Debug, Clone)]
pub struct VBlockInverse {
    /// Laplacian eigenvalue `lambda`; the block uses `-lambda`.
    pub eigenvalue: f64,
    pub block: Matrix3<C64>,
    pub inverse: Matrix3<C64>,
    pub inverse_norm: f64,
}

impl VBlockInverse {
    /// `max |(V V^-1 - I)_{rc}|`
    pub fn inverse_residual(&self) -> f64 {
        (self.block * self.inverse - Matrix3::<C64>::identity())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

fn spectral_norm(m: &Matrix3<C64>) -> f64 {
    m.svd(false, false).singular_values.max()
}

pub fn v_block_inverses(structures: &GraphStructures, beta: f64, rho: f64, tau: usize) -> Result<Vec<VBlockInverse>> {
    structures.lambda_bounds()?;
    structures
        .nonzero_spectrum()
        .iter()
        .map(|&lambda| {
            let block = v_block(-lambda, beta, rho, tau);
            let singular = || Error::SingularBlock { eigenvalue: lambda };
            let inverse = block.try_inverse().ok_or_else(singular)?;
            let inverse_norm = spectral_norm(&inverse);
            if !inverse_norm.is_finite() || spectral_norm(&block) * inverse_norm > 1e12 {
                return Err(singular());
            }
            Ok(VBlockInverse {
                eigenvalue: lambda,
                block,
                inverse,
                inverse_norm,
            })
        })
        .collect()
}

fn vhat_inv_norm_from(structures: &GraphStructures, beta: f64, rho: f64, tau: usize) -> Result<f64> {
    Ok(v_block_inverses(structures, beta, rho, tau)?
        .iter()
        .map(|b| b.inverse_norm)
        .fold(0.0, f64::max))
}

/// Operator norm of the block-diagonal `V^-1`: the largest block norm.
pub fn vhat_inv_norm(graph: &Graph, beta: f64, rho: f64, tau: usize) -> Result<f64> {
    vhat_inv_norm_from(&build_structures(graph), beta, rho, tau)
}

/// Largest absolute residual of the stacked recursion
///
/// ```text
/// Omega_{k+1} = Omega_k + alpha sum_t G_k^t - tau beta (rho D Omega_k - A^T Z_k)
/// Z_{k+1}     = Z_k / 2 - P Z_k / 2 + rho P A Omega_{k+1}
/// ```
///
/// re-evaluated with dense matrices over every recorded round.
pub fn compact_form_check(
    trace: Option<&CompactTrace>,
    structures: &GraphStructures,
    alpha: f64,
    beta: f64,
    rho: f64,
    tau: usize,
) -> Result<f64> {
    let trace = trace.ok_or(Error::MissingCache)?;
    let stack = |rows: &[Vec<f64>]| {
        let d = rows.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c])
    };
    let a = &structures.incidence;
    let p = &structures.permutation;
    let d = &structures.degree;
    let mut worst = 0.0f64;
    for k in 0..trace.rounds() {
        let omega = stack(&trace.omegas[k]);
        let omega_next = stack(&trace.omegas[k + 1]);
        let z = stack(&trace.bridges[k]);
        let z_next = stack(&trace.bridges[k + 1]);
        let g = stack(&trace.gradient_sums[k]);

        let predicted_omega =
            &omega + &g * alpha - (d * &omega * rho - a.transpose() * &z) * (tau as f64 * beta);
        let predicted_z = &z * 0.5 - p * &z * 0.5 + p * a * &omega_next * rho;
        worst = worst
            .max((predicted_omega - &omega_next).amax())
            .max((predicted_z - &z_next).amax());
    }
    Ok(worst)
}

/// `||1^T A^T Z - rho 1^T D Omega||_inf` in assembled matrix form, for each
/// recorded state.
pub fn mean_preservation_trace(trace: &CompactTrace, structures: &GraphStructures, rho: f64) -> Vec<f64> {
    trace
        .omegas
        .iter()
        .zip(&trace.bridges)
        .map(|(omega, z)| {
            let dim = omega[0].len();
            let om = DMatrix::from_fn(omega.len(), dim, |r, c| omega[r][c]);
            let zm = DMatrix::from_fn(z.len(), dim, |r, c| z[r][c]);
            let ones_n = DMatrix::from_element(1, omega.len(), 1.0);
            let lhs = &ones_n * structures.incidence.transpose() * &zm;
            let rhs = &ones_n * &structures.degree * &om * rho;
            (lhs - rhs).amax()
        })
        .collect()
}
