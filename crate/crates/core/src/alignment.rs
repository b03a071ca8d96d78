//! Viterbi alignment extraction and emission-time reporting.

use ndarray::Array2;

use crate::error::{contract, Result};
use crate::lattice::{LabelSequence, LatticeLogits, BLANK};
use crate::numerics::LOG_ZERO;
use crate::oracle::Path;

/// The highest-posterior valid path, by max-plus dynamic programming.
///
/// Ties break toward emitting labels earlier: the path is reconstructed by
/// walking forward from (0, 0) against a max-plus suffix table, preferring
/// the label transition whenever scores tie. Among co-optimal paths this
/// yields the lexicographically earliest emission-frame vector.
pub fn viterbi_align(lat: &LatticeLogits, l: &LabelSequence) -> Result<Path> {
    if l.len() != lat.labels() {
        return Err(contract("label count does not match lattice"));
    }
    if let Some(&bad) = l.ids().iter().find(|&&id| id as usize > lat.vocab()) {
        return Err(contract(format!("label id {bad} out of range [1, {}]", lat.vocab())));
    }
    let t_len = lat.frames();
    let u_len = l.len();

    // best[t][u]: best log score from (t, u) to termination.
    let mut best = Array2::from_elem((t_len, u_len + 1), LOG_ZERO);
    best[[t_len - 1, u_len]] = lat.get(t_len - 1, u_len, 0);
    for t in (0..t_len).rev() {
        for u in (0..=u_len).rev() {
            if t == t_len - 1 && u == u_len {
                continue;
            }
            let mut b = LOG_ZERO;
            if t + 1 < t_len {
                b = b.max(lat.get(t, u, 0) + best[[t + 1, u]]);
            }
            if u < u_len {
                b = b.max(lat.get(t, u, l.ids()[u] as usize) + best[[t, u + 1]]);
            }
            best[[t, u]] = b;
        }
    }

    let mut symbols = Vec::with_capacity(t_len + u_len);
    let (mut t, mut u) = (0usize, 0usize);
    loop {
        if t == t_len - 1 && u == u_len {
            symbols.push(BLANK);
            break;
        }
        let label_score = if u < u_len {
            lat.get(t, u, l.ids()[u] as usize) + best[[t, u + 1]]
        } else {
            LOG_ZERO
        };
        let blank_score = if t + 1 < t_len {
            lat.get(t, u, 0) + best[[t + 1, u]]
        } else {
            LOG_ZERO
        };
        if label_score >= blank_score {
            symbols.push(l.ids()[u]);
            u += 1;
        } else {
            symbols.push(BLANK);
            t += 1;
        }
    }
    Ok(Path::from_symbols(symbols))
}

/// Best path log score without reconstructing the path.
pub fn viterbi_score(lat: &LatticeLogits, l: &LabelSequence) -> Result<f64> {
    let path = viterbi_align(lat, l)?;
    crate::oracle::path_log_prob(lat, l, &path)
}

/// 1-based emission frame of each token along a path.
pub fn emission_times(p: &Path) -> Result<Vec<usize>> {
    if p.symbols().is_empty() || p.symbols().last() != Some(&BLANK) {
        return Err(contract("malformed path: must be non-empty and end in blank"));
    }
    Ok(p.emission_frames())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::vanilla_loss;
    use crate::oracle::{oracle_best_path, path_log_prob};
    use crate::verify::random_lattice;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_lattice_recovers_planted_path() {
        // Plant: blank, emit 2 at frame 2, blank, emit 1 at frame 3, blank.
        let lat = crate::verify::planted_lattice(
            3,
            2,
            2,
            &[(0, 0, 0), (1, 0, 2), (1, 1, 0), (2, 1, 1), (2, 2, 0)],
        );
        let l = LabelSequence::new(vec![2, 1]).unwrap();
        let path = viterbi_align(&lat, &l).unwrap();
        assert_eq!(path.symbols(), &[0, 2, 0, 1, 0]);
        let score = path_log_prob(&lat, &l, &path).unwrap();
        assert!(score.abs() <= 1e-10, "score {score}");
    }

    #[test]
    fn single_node_unique_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(151);
        let (lat, l) = random_lattice(&mut rng, 1, 1, 3);
        let path = viterbi_align(&lat, &l).unwrap();
        assert_eq!(path.symbols(), &[l.ids()[0], BLANK]);
    }

    #[test]
    fn agrees_with_enumeration_best_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(157);
        for _ in 0..100 {
            let (lat, l) = random_lattice(&mut rng, 5, 3, 3);
            let got = viterbi_align(&lat, &l).unwrap();
            let want = oracle_best_path(&lat, &l).unwrap();
            let gs = path_log_prob(&lat, &l, &got).unwrap();
            let ws = path_log_prob(&lat, &l, &want).unwrap();
            assert!((gs - ws).abs() <= 1e-10, "scores {gs} vs {ws}");
            assert_eq!(got.emission_frames(), want.emission_frames());
        }
    }

    #[test]
    fn viterbi_never_beats_the_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(163);
        for _ in 0..20 {
            let (lat, l) = random_lattice(&mut rng, 4, 2, 4);
            let vs = viterbi_score(&lat, &l).unwrap();
            let total = -vanilla_loss(&lat, &l).unwrap();
            assert!(vs <= total + 1e-12);
        }
    }

    #[test]
    fn emission_times_examples() {
        let p = Path::from_symbols(vec![3, BLANK]);
        assert_eq!(emission_times(&p).unwrap(), vec![1]);
        let q = Path::from_symbols(vec![BLANK, BLANK, 1, 2, BLANK]);
        assert_eq!(emission_times(&q).unwrap(), vec![3, 3]);
    }

    #[test]
    fn emission_times_are_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(167);
        for _ in 0..50 {
            let (lat, l) = random_lattice(&mut rng, 5, 3, 3);
            let path = viterbi_align(&lat, &l).unwrap();
            let times = emission_times(&path).unwrap();
            assert_eq!(times.len(), l.len());
            for w in times.windows(2) {
                assert!(w[0] <= w[1]);
            }
            for &tau in &times {
                assert!((1..=lat.frames()).contains(&tau));
            }
        }
    }

    #[test]
    fn malformed_path_is_rejected() {
        assert!(emission_times(&Path::from_symbols(vec![])).is_err());
        assert!(emission_times(&Path::from_symbols(vec![BLANK, 2])).is_err());
    }
}
