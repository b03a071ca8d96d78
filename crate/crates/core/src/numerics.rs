//! Log-domain arithmetic underpinning every lattice computation.
//!
//! Probabilities are carried as natural-log `f64` values: [`LOG_ONE`] (0.0)
//! is probability one and [`LOG_ZERO`] (negative infinity) is probability
//! zero. All accumulation uses max-subtracted log-sum-exp, so results stay
//! finite whenever any input is finite and never become NaN for finite or
//! negative-infinity inputs.

use crate::error::{contract, Result};

/// Natural-log probability; `<= 0` when the value is normalized.
pub type LogProb = f64;

/// log(0), the additive identity of log-sum-exp.
pub const LOG_ZERO: LogProb = f64::NEG_INFINITY;

/// log(1).
pub const LOG_ONE: LogProb = 0.0;

/// Stable two-argument log-sum-exp.
///
/// `log_add(a, LOG_ZERO)` returns `a` exactly.
#[inline]
pub fn log_add(a: LogProb, b: LogProb) -> LogProb {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log Σ exp(vᵢ), computed with max subtraction.
///
/// Returns [`LOG_ZERO`] iff every input is [`LOG_ZERO`]; errors on an empty
/// sequence.
pub fn log_sum_exp(values: &[LogProb]) -> Result<LogProb> {
    if values.is_empty() {
        return Err(contract("log_sum_exp: empty sequence"));
    }
    let m = values.iter().copied().fold(LOG_ZERO, f64::max);
    if m == LOG_ZERO {
        return Ok(LOG_ZERO);
    }
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    Ok(m + s.ln())
}

/// Log-softmax of raw logits; the output exponentials sum to one.
///
/// Errors on an empty vector or any non-finite entry.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<LogProb>> {
    if logits.is_empty() {
        return Err(contract("log_softmax: empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(contract("log_softmax: non-finite input"));
    }
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

/// In-place log-softmax over a slice of finite values.
pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Direct exp/sum/log with Kahan-compensated summation, the independent
    /// route the stable implementation is checked against.
    fn direct_lse(values: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for &v in values {
            let y = v.exp() - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum.ln()
    }

    #[test]
    fn lse_singleton_identity() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
    }

    #[test]
    fn lse_halves_sum_to_one() {
        let half = 0.5f64.ln();
        let r = log_sum_exp(&[half, half]).unwrap();
        assert!(r.abs() < 1e-15, "got {r}");
    }

    #[test]
    fn lse_matches_direct_summation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..0.0)).collect();
            let got = log_sum_exp(&v).unwrap();
            let want = direct_lse(&v);
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn lse_neg_infinity_is_identity() {
        assert_eq!(log_sum_exp(&[-1.5, LOG_ZERO]).unwrap(), -1.5);
        assert_eq!(log_add(-1.5, LOG_ZERO), -1.5);
        assert_eq!(log_add(LOG_ZERO, -1.5), -1.5);
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]).unwrap(), LOG_ZERO);
    }

    #[test]
    fn lse_empty_is_contract_violation() {
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn softmax_uniform_by_symmetry() {
        let out = log_softmax(&[0.7, 0.7, 0.7, 0.7]).unwrap();
        let want = 0.25f64.ln();
        for v in out {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_singleton_normalizes_to_one() {
        let out = log_softmax(&[42.0]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-8.0..8.0)).collect();
            let out = log_softmax(&v).unwrap();
            let total: f64 = out.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
        }
    }

    #[test]
    fn softmax_rejects_nan_and_empty() {
        assert!(log_softmax(&[1.0, f64::NAN]).is_err());
        assert!(log_softmax(&[]).is_err());
    }

    proptest! {
        #[test]
        fn lse_permutation_invariant(mut v in proptest::collection::vec(-30.0f64..5.0, 1..8)) {
            let a = log_sum_exp(&v).unwrap();
            v.reverse();
            let b = log_sum_exp(&v).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn lse_monotone_in_each_argument(v in proptest::collection::vec(-30.0f64..5.0, 1..8), i in 0usize..8, bump in 0.01f64..2.0) {
            let i = i % v.len();
            let base = log_sum_exp(&v).unwrap();
            let mut w = v.clone();
            w[i] += bump;
            let bumped = log_sum_exp(&w).unwrap();
            prop_assert!(bumped > base);
        }

        #[test]
        fn lse_never_nan_on_finite_or_neg_inf(v in proptest::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), -50.0f64..50.0], 1..8)) {
            prop_assert!(!log_sum_exp(&v).unwrap().is_nan());
        }

        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-10.0f64..10.0, 1..8), c in -20.0f64..20.0) {
            let a = log_softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = log_softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
