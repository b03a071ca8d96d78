//! Group-level Bayes risk functions over emission frames.
//!
//! A risk function assigns a preference weight `r_g(τ) > 0` to the group of
//! paths whose concerned token is emitted at 1-based frame `τ`; larger
//! values mean stronger preference. Log-domain variants are provided so the
//! losses can tilt lattice arcs without an exp/ln round trip.

use crate::error::{contract, Result};

/// Default `m` for the offline risk.
pub const DEFAULT_M: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskVariant {
    /// Constant 1: recovers the vanilla transducer objective.
    Unit,
    /// Exponential decay in the emission frame of the last token, clamped
    /// at 1 on `τ ≤ m·U`.
    OfflineLastToken,
    /// Per-token exponential decay relative to the posterior-argmax frame
    /// `τ'`; deliberately unclamped, so values exceed 1 for `τ < τ'`.
    StreamingPerToken,
}

impl RiskVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RiskVariant::Unit => "unit",
            RiskVariant::OfflineLastToken => "offline",
            RiskVariant::StreamingPerToken => "streaming",
        }
    }
}

/// A risk function selection with its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub variant: RiskVariant,
    pub lambda: f64,
    pub m: u32,
}

impl RiskSpec {
    pub fn unit() -> Self {
        Self { variant: RiskVariant::Unit, lambda: 0.0, m: DEFAULT_M }
    }

    pub fn offline(lambda: f64, m: u32) -> Result<Self> {
        let spec = Self { variant: RiskVariant::OfflineLastToken, lambda, m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn streaming(lambda: f64) -> Result<Self> {
        let spec = Self { variant: RiskVariant::StreamingPerToken, lambda, m: DEFAULT_M };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(contract(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.m == 0 {
            return Err(contract("m must be a positive integer"));
        }
        Ok(())
    }
}

/// Unit risk: 1 for every frame.
pub fn risk_unit(_tau: usize) -> f64 {
    1.0
}

/// `min(exp(-λ(τ - mU)/T), 1)`: flat preference on `τ ∈ [1, mU]`, then
/// exponential decay.
pub fn risk_offline(tau: usize, u_count: usize, t_count: usize, lambda: f64, m: u32) -> f64 {
    log_risk_offline(tau, u_count, t_count, lambda, m).exp()
}

/// Log form of [`risk_offline`]; exact 0 in the clamp region.
pub fn log_risk_offline(tau: usize, u_count: usize, t_count: usize, lambda: f64, m: u32) -> f64 {
    let shift = tau as f64 - (m as f64) * (u_count as f64);
    (-lambda * shift / t_count as f64).min(0.0)
}

/// `exp(-λ(τ - τ')/T)`, unclamped: exactly 1 at `τ = τ'` and above 1 for
/// earlier frames.
pub fn risk_streaming(tau: usize, tau_star: usize, t_count: usize, lambda: f64) -> f64 {
    log_risk_streaming(tau, tau_star, t_count, lambda).exp()
}

/// Log form of [`risk_streaming`].
pub fn log_risk_streaming(tau: usize, tau_star: usize, t_count: usize, lambda: f64) -> f64 {
    -lambda * (tau as f64 - tau_star as f64) / t_count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_is_constant_one() {
        assert_eq!(risk_unit(1), 1.0);
        assert_eq!(risk_unit(10), 1.0);
        assert_eq!(risk_unit(997), 1.0);
    }

    #[test]
    fn offline_clamps_then_decays() {
        // lambda=5, m=2, T=10, U=2: clamp region is tau <= 4.
        assert_eq!(risk_offline(3, 2, 10, 5.0, 2), 1.0);
        assert_eq!(risk_offline(4, 2, 10, 5.0, 2), 1.0);
        let at5 = risk_offline(5, 2, 10, 5.0, 2);
        assert!((at5 - (-0.5f64).exp()).abs() < 1e-15, "{at5}");
        let at10 = risk_offline(10, 2, 10, 5.0, 2);
        assert!((at10 - (-3.0f64).exp()).abs() < 1e-15, "{at10}");
    }

    #[test]
    fn offline_monotone_in_tau_and_lambda() {
        for tau in 1..10 {
            assert!(risk_offline(tau, 2, 10, 5.0, 2) >= risk_offline(tau + 1, 2, 10, 5.0, 2));
        }
        // Past the clamp, larger lambda means lower risk.
        assert!(risk_offline(7, 2, 10, 2.0, 2) > risk_offline(7, 2, 10, 5.0, 2));
    }

    #[test]
    fn streaming_is_one_at_bias_frame() {
        for tau_star in [1usize, 7, 20] {
            assert_eq!(risk_streaming(tau_star, tau_star, 20, 10.0), 1.0);
        }
    }

    #[test]
    fn streaming_decay_and_unclamped_rise() {
        let v = risk_streaming(9, 7, 20, 10.0);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15, "{v}");
        // Before the bias frame the unclamped value exceeds 1.
        assert!(risk_streaming(5, 7, 20, 10.0) > 1.0);
    }

    #[test]
    fn lambda_zero_degenerates_to_unit() {
        for tau in 1..=20 {
            assert_eq!(risk_streaming(tau, 7, 20, 0.0), 1.0);
            assert_eq!(risk_offline(tau, 3, 20, 0.0, 2), 1.0);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(RiskSpec::offline(-1.0, 2).is_err());
        assert!(RiskSpec::offline(5.0, 0).is_err());
        assert!(RiskSpec::streaming(f64::NAN).is_err());
        assert!(RiskSpec::offline(0.0, 2).is_ok());
    }
}
