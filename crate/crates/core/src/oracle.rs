//! Brute-force path enumeration: exact ground truth for losses, gates and
//! alignments on small lattices.
//!
//! Everything here is computed by walking paths one at a time and summing
//! in linear probability space, with no memoization, so it stays an
//! independent check on the dynamic programs elsewhere in the crate.

use crate::error::{contract, BrtError, Result};
use crate::lattice::{LabelSequence, LatticeLogits, BLANK};
use crate::risk::{risk_offline, risk_streaming, RiskSpec, RiskVariant};

/// Refuse to enumerate lattices with more paths than this.
pub const MAX_ENUMERATED_PATHS: u128 = 1_000_000;

/// A complete lattice path: `T + U` symbols, exactly `T` of them blank,
/// the non-blanks spelling the transcription in order, ending in blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    symbols: Vec<u32>,
}

impl Path {
    pub fn from_symbols(symbols: Vec<u32>) -> Self {
        Self { symbols }
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    /// 1-based emission frame of each non-blank token, in order.
    /// Non-decreasing by construction of valid paths.
    pub fn emission_frames(&self) -> Vec<usize> {
        let mut frames = Vec::new();
        let mut tau = 1usize;
        for &s in &self.symbols {
            if s == BLANK {
                tau += 1;
            } else {
                frames.push(tau);
            }
        }
        frames
    }

    /// 1-based frame of the last non-blank emission, if any.
    pub fn last_emission_frame(&self) -> Option<usize> {
        self.emission_frames().last().copied()
    }

    /// Check the path is valid for a `T`-frame lattice and transcription `l`.
    pub fn validate(&self, t_len: usize, l: &LabelSequence) -> Result<()> {
        let blanks = self.symbols.iter().filter(|&&s| s == BLANK).count();
        let labels: Vec<u32> = self.symbols.iter().copied().filter(|&s| s != BLANK).collect();
        if blanks != t_len {
            return Err(contract(format!("path has {blanks} blanks, expected {t_len}")));
        }
        if labels != l.ids() {
            return Err(contract("blank removal does not yield the transcription"));
        }
        if self.symbols.last() != Some(&BLANK) {
            return Err(contract("path must end in blank"));
        }
        Ok(())
    }
}

/// `C(T-1+U, U)`: the number of valid paths.
pub fn path_count(t_len: usize, u_len: usize) -> u128 {
    let n = (t_len - 1 + u_len) as u128;
    let k = (u_len as u128).min(n - u_len as u128);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// All valid paths, by recursive staircase walk over the lattice grid.
pub fn enumerate_paths(t_len: usize, l: &LabelSequence) -> Result<Vec<Path>> {
    if t_len == 0 {
        return Err(contract("enumerate_paths: T must be >= 1"));
    }
    let count = path_count(t_len, l.len());
    if count > MAX_ENUMERATED_PATHS {
        return Err(BrtError::PathBoundExceeded { paths: count, limit: MAX_ENUMERATED_PATHS });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut symbols = Vec::with_capacity(t_len + l.len());
    walk(0, 0, t_len, l.ids(), &mut symbols, &mut out);
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

fn walk(t: usize, u: usize, t_len: usize, labels: &[u32], symbols: &mut Vec<u32>, out: &mut Vec<Path>) {
    if t == t_len - 1 && u == labels.len() {
        symbols.push(BLANK);
        out.push(Path::from_symbols(symbols.clone()));
        symbols.pop();
        return;
    }
    if t + 1 < t_len {
        symbols.push(BLANK);
        walk(t + 1, u, t_len, labels, symbols, out);
        symbols.pop();
    }
    if u < labels.len() {
        symbols.push(labels[u]);
        walk(t, u + 1, t_len, labels, symbols, out);
        symbols.pop();
    }
}

/// Log-posterior of one path, replayed arc by arc against the lattice.
pub fn path_log_prob(lat: &LatticeLogits, l: &LabelSequence, path: &Path) -> Result<f64> {
    path.validate(lat.frames(), l)?;
    let mut t = 0usize;
    let mut u = 0usize;
    let mut lp = 0.0f64;
    for &s in path.symbols() {
        if s == BLANK {
            lp += lat.get(t, u, 0);
            t += 1;
        } else {
            lp += lat.get(t, u, s as usize);
            u += 1;
        }
    }
    Ok(lp)
}

/// Stable `-log Σᵢ exp(lpᵢ)·wᵢ` over positive weights, by max subtraction.
fn neg_log_weighted_sum(log_probs: &[f64], weights: &[f64]) -> f64 {
    let m = log_probs
        .iter()
        .zip(weights)
        .map(|(&lp, &w)| lp + w.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = log_probs
        .iter()
        .zip(weights)
        .map(|(&lp, &w)| (lp + w.ln() - m).exp())
        .sum();
    -(m + s.ln())
}

/// Gate column for 1-based token `u` computed by grouping enumerated paths
/// by the emission frame of `l_u`: entry `t` is `log Σ_{π: τ_u(π)=t+1} P(π)`.
pub fn oracle_gate_column(lat: &LatticeLogits, l: &LabelSequence, u: usize) -> Result<Vec<f64>> {
    if u == 0 || u > l.len() {
        return Err(contract(format!("token index {u} out of [1, {}]", l.len())));
    }
    let paths = enumerate_paths(lat.frames(), l)?;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); lat.frames()];
    for p in &paths {
        let tau = p.emission_frames()[u - 1];
        groups[tau - 1].push(path_log_prob(lat, l, p)?);
    }
    groups
        .into_iter()
        .map(|g| {
            if g.is_empty() {
                Ok(f64::NEG_INFINITY)
            } else {
                let w = vec![1.0; g.len()];
                Ok(-neg_log_weighted_sum(&g, &w))
            }
        })
        .collect()
}

/// Argmax frame (1-based) of an oracle gate column; ties break low.
fn oracle_tau_star(column: &[f64]) -> usize {
    let mut best = 0usize;
    for (t, &v) in column.iter().enumerate() {
        if v > column[best] {
            best = t;
        }
    }
    best + 1
}

/// Expected-risk loss `-log Σ_π P(π|x)·r(π)` by full enumeration.
///
/// The risk of a path is evaluated from its concerned property: the last
/// emission frame for the offline variant, and each token's emission frame
/// (with the bias frame taken from the oracle's own gate grouping) for the
/// streaming variant, whose per-token losses are averaged.
pub fn oracle_loss(lat: &LatticeLogits, l: &LabelSequence, spec: &RiskSpec) -> Result<f64> {
    spec.validate()?;
    let paths = enumerate_paths(lat.frames(), l)?;
    let log_probs: Vec<f64> = paths
        .iter()
        .map(|p| path_log_prob(lat, l, p))
        .collect::<Result<_>>()?;
    let t_len = lat.frames();
    let u_len = l.len();
    match spec.variant {
        RiskVariant::Unit => {
            let w = vec![1.0; log_probs.len()];
            Ok(neg_log_weighted_sum(&log_probs, &w))
        }
        RiskVariant::OfflineLastToken => {
            if u_len == 0 {
                return Err(contract("offline risk needs U >= 1"));
            }
            let w: Vec<f64> = paths
                .iter()
                .map(|p| {
                    let tau = p.last_emission_frame().expect("U >= 1");
                    risk_offline(tau, u_len, t_len, spec.lambda, spec.m)
                })
                .collect();
            Ok(neg_log_weighted_sum(&log_probs, &w))
        }
        RiskVariant::StreamingPerToken => {
            if u_len == 0 {
                return Err(contract("streaming risk needs U >= 1"));
            }
            let mut sum = 0.0;
            for u in 1..=u_len {
                let tau_star = oracle_tau_star(&oracle_gate_column(lat, l, u)?);
                let w: Vec<f64> = paths
                    .iter()
                    .map(|p| {
                        let tau = p.emission_frames()[u - 1];
                        risk_streaming(tau, tau_star, t_len, spec.lambda)
                    })
                    .collect();
                sum += neg_log_weighted_sum(&log_probs, &w);
            }
            Ok(sum / u_len as f64)
        }
    }
}

/// The enumerated path with the highest posterior; ties break to the
/// lexicographically earliest emission-frame vector.
pub fn oracle_best_path(lat: &LatticeLogits, l: &LabelSequence) -> Result<Path> {
    let paths = enumerate_paths(lat.frames(), l)?;
    let mut best: Option<(f64, Vec<usize>, Path)> = None;
    for p in paths {
        let lp = path_log_prob(lat, l, &p)?;
        let frames = p.emission_frames();
        let better = match &best {
            None => true,
            Some((blp, bframes, _)) => lp > *blp || (lp == *blp && frames < *bframes),
        };
        if better {
            best = Some((lp, frames, p));
        }
    }
    Ok(best.expect("at least one path exists").2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::vanilla_loss;
    use crate::verify::random_lattice;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_counts() {
        let one_blank = enumerate_paths(1, &LabelSequence::empty()).unwrap();
        assert_eq!(one_blank.len(), 1);
        assert_eq!(one_blank[0].symbols(), &[BLANK]);

        let l = LabelSequence::new(vec![2]).unwrap();
        let single = enumerate_paths(1, &l).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].symbols(), &[2, BLANK]);

        let l2 = LabelSequence::new(vec![1, 2]).unwrap();
        assert_eq!(enumerate_paths(3, &l2).unwrap().len(), 6);
        assert_eq!(path_count(3, 2), 6);
    }

    #[test]
    fn paths_are_valid_and_distinct() {
        let l = LabelSequence::new(vec![1, 3, 2]).unwrap();
        let paths = enumerate_paths(4, &l).unwrap();
        assert_eq!(paths.len() as u128, path_count(4, 3));
        for p in &paths {
            p.validate(4, &l).unwrap();
        }
        let mut seen: Vec<&[u32]> = paths.iter().map(|p| p.symbols()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), paths.len());
    }

    #[test]
    fn bound_refusal() {
        // T=60, U=30 has C(89,30) paths, far beyond the bound.
        let l = LabelSequence::new(vec![1; 30]).unwrap();
        match enumerate_paths(60, &l) {
            Err(BrtError::PathBoundExceeded { .. }) => {}
            other => panic!("expected bound refusal, got {other:?}"),
        }
    }

    #[test]
    fn summed_posterior_matches_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..20 {
            let (lat, l) = random_lattice(&mut rng, 4, 3, 4);
            let unit = oracle_loss(&lat, &l, &RiskSpec::unit()).unwrap();
            let vanilla = vanilla_loss(&lat, &l).unwrap();
            assert!((unit - vanilla).abs() <= 1e-10);
        }
    }

    #[test]
    fn deterministic_lattice_loss_is_neg_log_risk() {
        // One certain path: emit token 1 at frame 1, blanks after.
        let hot: Vec<(usize, usize, usize)> =
            std::iter::once((0, 0, 1)).chain((0..4).map(|t| (t, 1, 0))).collect();
        let lat = crate::verify::planted_lattice(4, 1, 1, &hot);
        let l = LabelSequence::new(vec![1]).unwrap();
        let spec = RiskSpec::offline(5.0, 2).unwrap();
        // The planted path emits its last token at tau=1, inside the clamp
        // region, so the expected risk is 1 and the loss vanishes.
        let loss = oracle_loss(&lat, &l, &spec).unwrap();
        assert!(loss.abs() <= 1e-10, "{loss}");
    }

    #[test]
    fn emission_frames_from_symbols() {
        let p = Path::from_symbols(vec![BLANK, BLANK, 4, 5, BLANK]);
        assert_eq!(p.emission_frames(), vec![3, 3]);
        assert_eq!(p.last_emission_frame(), Some(3));
        let q = Path::from_symbols(vec![7, BLANK]);
        assert_eq!(q.emission_frames(), vec![1]);
    }
}
