//! Bayes-risk transducer objectives and their analytic gradients with
//! respect to the raw joint logits.
//!
//! For one concerned token `u` the objective is `-log Σ_τ r(τ)·G(τ, u)`.
//! Because `r(τ)` multiplies exactly the vertical arc into row `u` at frame
//! `τ`, this equals the plain sequence objective on a *risk-tilted* lattice
//! whose arc `(τ, u-1) → (τ, u)` carries weight `z + log r(τ)`. The
//! z-gradient is therefore the standard negated arc-occupancy form computed
//! from forward/backward tables of the tilted lattice, and the raw-logit
//! gradient follows by the usual log-softmax backward pass. The streaming
//! objective averages per-token tilted objectives; its bias frame `τ'` is
//! read off the untilted gate table and treated as a constant.

use ndarray::Array3;

use crate::error::{contract, BrtError, Result};
use crate::lattice::{
    backward_table, forward_table, gate_posteriors, occupancy_grad, total_from_alpha, FBTables,
    GateTable, JointLogits, LabelSequence, LatticeLogits,
};
use crate::numerics::log_sum_exp;
use crate::risk::{log_risk_offline, log_risk_streaming, risk_offline, risk_streaming, RiskSpec, RiskVariant};

/// Log-gate spread below which an argmax is considered tied.
pub const TIE_TOL: f64 = 1e-6;

/// Loss value, raw-logit gradient, and per-token alignment diagnostics.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    /// Gradient w.r.t. the raw logits; same extents as the input.
    pub grad: Array3<f64>,
    /// Posterior-argmax emission frame per token (1-based, ties break low).
    pub tau_star: Vec<usize>,
    /// Risk-reweighted expected emission frame per token.
    pub reweighted_mean: Vec<f64>,
}

/// Dispatch on the risk variant. `lambda = 0` makes every variant the unit
/// risk, so it is routed to the exact vanilla computation.
pub fn brt_loss(raw: &JointLogits, l: &LabelSequence, spec: &RiskSpec) -> Result<LossResult> {
    spec.validate()?;
    if l.is_empty() {
        return Err(contract("BRT losses need U >= 1"));
    }
    check_extents(raw, l)?;
    let effective = if spec.lambda == 0.0 { RiskVariant::Unit } else { spec.variant };
    let lat = raw.log_softmax();
    let alpha = forward_table(lat.z(), l.ids());
    let beta = backward_table(lat.z(), l.ids());
    let total = total_from_alpha(lat.z(), &alpha);
    let fb = FBTables { alpha, beta, total };
    let gates = gate_posteriors(&lat, l, &fb)?;
    let tau_star: Vec<usize> = (1..=l.len()).map(|u| gates.tau_star(u)).collect();
    let reweighted_mean: Vec<f64> = (1..=l.len())
        .map(|u| reweighted_emission_mean(&gates, spec, u))
        .collect::<Result<_>>()?;

    let (loss, grad_z) = match effective {
        RiskVariant::Unit => {
            let gz = occupancy_grad(lat.z(), l.ids(), &fb.alpha, &fb.beta, fb.total);
            (-fb.total, gz)
        }
        RiskVariant::OfflineLastToken => {
            let u0 = l.len();
            let log_r: Vec<f64> = (1..=lat.frames())
                .map(|tau| log_risk_offline(tau, l.len(), lat.frames(), spec.lambda, spec.m))
                .collect();
            single_token_loss(&lat, l, &gates, u0, &log_r)?
        }
        RiskVariant::StreamingPerToken => {
            let u_len = l.len();
            let mut loss_sum = 0.0;
            let mut grad_sum: Option<Array3<f64>> = None;
            for u in 1..=u_len {
                let log_r: Vec<f64> = (1..=lat.frames())
                    .map(|tau| log_risk_streaming(tau, tau_star[u - 1], lat.frames(), spec.lambda))
                    .collect();
                let (j_u, gz) = single_token_loss(&lat, l, &gates, u, &log_r)?;
                loss_sum += j_u;
                grad_sum = Some(match grad_sum {
                    None => gz,
                    Some(acc) => acc + gz,
                });
            }
            let scale = 1.0 / u_len as f64;
            (loss_sum * scale, grad_sum.expect("U >= 1") * scale)
        }
    };

    let grad = chain_through_log_softmax(lat.z(), &grad_z);
    Ok(LossResult { loss, grad, tau_star, reweighted_mean })
}

/// Offline objective: risk on the emission frame of the last token.
pub fn brt_offline_loss(raw: &JointLogits, l: &LabelSequence, spec: &RiskSpec) -> Result<LossResult> {
    if spec.variant != RiskVariant::OfflineLastToken {
        return Err(contract("brt_offline_loss requires the OfflineLastToken variant"));
    }
    brt_loss(raw, l, spec)
}

/// Streaming objective: mean of per-token risked objectives.
pub fn brt_streaming_loss(raw: &JointLogits, l: &LabelSequence, spec: &RiskSpec) -> Result<LossResult> {
    if spec.variant != RiskVariant::StreamingPerToken {
        return Err(contract("brt_streaming_loss requires the StreamingPerToken variant"));
    }
    brt_loss(raw, l, spec)
}

/// Vanilla objective on raw logits: unit risk, exact `-log P(l|x)`.
pub fn vanilla_loss_with_grad(raw: &JointLogits, l: &LabelSequence) -> Result<LossResult> {
    brt_loss(raw, l, &RiskSpec::unit())
}

fn check_extents(raw: &JointLogits, l: &LabelSequence) -> Result<()> {
    if raw.labels() != l.len() {
        return Err(contract(format!(
            "label count {} does not match logit rows {}",
            l.len(),
            raw.labels() + 1
        )));
    }
    if let Some(&bad) = l.ids().iter().find(|&&id| id as usize > raw.vocab()) {
        return Err(contract(format!("label id {bad} out of range [1, {}]", raw.vocab())));
    }
    Ok(())
}

/// Loss and z-gradient of `-log Σ_τ r(τ)·G(τ, u0)`.
///
/// The loss value is accumulated from the untilted gate column; the
/// gradient from the tilted lattice's occupancy tables. Both routes compute
/// the same quantity.
fn single_token_loss(
    lat: &LatticeLogits,
    l: &LabelSequence,
    gates: &GateTable,
    u0: usize,
    log_r: &[f64],
) -> Result<(f64, Array3<f64>)> {
    let terms: Vec<f64> = gates
        .column(u0)
        .iter()
        .zip(log_r)
        .map(|(&g, &lr)| g + lr)
        .collect();
    let loss = -log_sum_exp(&terms)?;

    let mut tilted = lat.z().clone();
    let k = l.ids()[u0 - 1] as usize;
    for t in 0..lat.frames() {
        tilted[[t, u0 - 1, k]] += log_r[t];
    }
    let alpha = forward_table(&tilted, l.ids());
    let beta = backward_table(&tilted, l.ids());
    let total = total_from_alpha(&tilted, &alpha);
    let grad_z = occupancy_grad(&tilted, l.ids(), &alpha, &beta, total);
    Ok((loss, grad_z))
}

/// Backward pass of the per-(t,u) log-softmax: maps a z-gradient to a
/// raw-logit gradient. Rows of the result sum to zero.
fn chain_through_log_softmax(z_norm: &Array3<f64>, grad_z: &Array3<f64>) -> Array3<f64> {
    let (t_len, rows, cols) = z_norm.dim();
    let mut grad = Array3::zeros(z_norm.dim());
    for t in 0..t_len {
        for u in 0..rows {
            let mut row_sum = 0.0;
            for k in 0..cols {
                row_sum += grad_z[[t, u, k]];
            }
            for k in 0..cols {
                grad[[t, u, k]] = grad_z[[t, u, k]] - z_norm[[t, u, k]].exp() * row_sum;
            }
        }
    }
    grad
}

/// Risk-reweighted expected emission frame of token `u`:
/// `Σ_τ τ·w(τ) / Σ_τ w(τ)` with `w(τ) = r(τ)·G(τ, u)`.
pub fn reweighted_emission_mean(gates: &GateTable, spec: &RiskSpec, u: usize) -> Result<f64> {
    if u == 0 || u > gates.tokens() {
        return Err(contract(format!("token index {u} out of [1, {}]", gates.tokens())));
    }
    let t_len = gates.frames();
    let col = gates.column(u);
    let log_w: Vec<f64> = (1..=t_len)
        .map(|tau| {
            let r = match spec.variant {
                RiskVariant::Unit => 1.0,
                RiskVariant::OfflineLastToken => {
                    risk_offline(tau, gates.tokens(), t_len, spec.lambda, spec.m)
                }
                RiskVariant::StreamingPerToken => {
                    risk_streaming(tau, gates.tau_star(u), t_len, spec.lambda)
                }
            };
            col[tau - 1] + r.ln()
        })
        .collect();
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (tau, &lw) in (1..=t_len).zip(&log_w) {
        let w = (lw - m).exp();
        num += tau as f64 * w;
        den += w;
    }
    Ok(num / den)
}

/// Compare the analytic gradient against central finite differences of the
/// loss with step `h`; returns the maximum relative error over coordinates
/// with `|analytic| > 1e-8`.
///
/// A central difference of an `f64` loss carries rounding noise of about
/// `eps·|loss| / (2h)` regardless of the gradient's size, so a coordinate
/// whose true derivative sits near that floor cannot be measured to any
/// relative accuracy. The error is therefore taken relative to
/// `max(|analytic|, |fd|, noise_floor)` with a floor of `1e4` times the
/// rounding scale: large enough that the check reports gradient defects
/// rather than arithmetic noise, small enough that any real defect at a
/// contributing coordinate still lands far above the tolerance.
///
/// Restricted to small lattices (`T <= 5`, `U <= 3`). For the streaming
/// variant, inputs whose gate argmax is tied within [`TIE_TOL`] are rejected
/// with [`BrtError::TieRejected`] so the caller can resample: the bias frame
/// must stay constant under the perturbation.
pub fn loss_gradient_check(
    raw: &JointLogits,
    l: &LabelSequence,
    spec: &RiskSpec,
    h: f64,
) -> Result<f64> {
    if raw.frames() > 5 || l.len() > 3 {
        return Err(contract("gradient check is restricted to T <= 5, U <= 3"));
    }
    if !(h > 0.0) {
        return Err(contract("step size must be positive"));
    }
    if spec.variant == RiskVariant::StreamingPerToken && spec.lambda > 0.0 {
        let lat = raw.log_softmax();
        let fb = crate::lattice::fb_tables(&lat, l)?;
        let gates = gate_posteriors(&lat, l, &fb)?;
        for u in 1..=l.len() {
            let mut col = gates.column(u);
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if col.len() > 1 && (col[0] - col[1]).abs() < TIE_TOL {
                return Err(BrtError::TieRejected { u, tol: TIE_TOL });
            }
        }
    }
    let analytic = brt_loss(raw, l, spec)?;
    let noise_floor = 1e4 * f64::EPSILON * analytic.loss.abs().max(1.0) / (2.0 * h);
    let mut worst = 0.0f64;
    let dims = raw.z().dim();
    for t in 0..dims.0 {
        for u in 0..dims.1 {
            for k in 0..dims.2 {
                let a = analytic.grad[[t, u, k]];
                if a.abs() <= 1e-8 {
                    continue;
                }
                let mut plus = raw.clone();
                plus.z_mut()[[t, u, k]] += h;
                let mut minus = raw.clone();
                minus.z_mut()[[t, u, k]] -= h;
                let lp = brt_loss(&plus, l, spec)?.loss;
                let lm = brt_loss(&minus, l, spec)?.loss;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(noise_floor);
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}
