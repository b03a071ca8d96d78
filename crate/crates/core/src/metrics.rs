//! Accuracy and latency metrics: edit distance, WER, decoding frames,
//! drift latency, and overall latency.

use crate::error::{contract, BrtError, Result};

/// Levenshtein distance with unit substitution/insertion/deletion costs.
pub fn edit_distance(reference: &[u32], hypothesis: &[u32]) -> usize {
    if reference.is_empty() {
        return hypothesis.len();
    }
    if hypothesis.is_empty() {
        return reference.len();
    }
    let m = hypothesis.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut curr = vec![0usize; m + 1];
    for (i, &r) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &h) in hypothesis.iter().enumerate() {
            let cost = usize::from(r != h);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Corpus word error rate in percent: `100 · Σ edits / Σ reference lengths`.
pub fn wer(refs: &[Vec<u32>], hyps: &[Vec<u32>]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(contract(format!(
            "wer: {} references vs {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let total_len: usize = refs.iter().map(|r| r.len()).sum();
    if refs.is_empty() || total_len == 0 {
        return Err(contract("wer: empty reference corpus"));
    }
    let edits: usize = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r, h)).sum();
    Ok(100.0 * edits as f64 / total_len as f64)
}

/// Positions `(ref_idx, hyp_idx)` of correctly recognized tokens under a
/// minimal edit-distance alignment. Mismatched tokens never pair up.
pub fn matched_token_indices(reference: &[u32], hypothesis: &[u32]) -> Vec<(usize, usize)> {
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        d[i][0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    // Backtrace, preferring diagonal steps so equal tokens pair up.
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + cost {
                if cost == 0 {
                    pairs.push((i - 1, j - 1));
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

/// Per-token and mean drift latency in frames:
/// `DL(u) = emission_frame(u) - ref_start_frame(u)`. Negative values are
/// legitimate (the model may emit before a token's reference start).
pub fn drift_latency(
    emission_frames: &[usize],
    ref_spans: &[(usize, usize)],
) -> Result<(Vec<i64>, f64)> {
    if emission_frames.len() != ref_spans.len() {
        return Err(contract("drift_latency: token count mismatch"));
    }
    if emission_frames.is_empty() {
        return Err(BrtError::UndefinedMetric(
            "drift latency has no contributing tokens".into(),
        ));
    }
    let per_token: Vec<i64> = emission_frames
        .iter()
        .zip(ref_spans)
        .map(|(&e, &(start, _end))| e as i64 - start as i64)
        .collect();
    let mean = per_token.iter().sum::<i64>() as f64 / per_token.len() as f64;
    Ok((per_token, mean))
}

/// Overall latency in milliseconds: data-collecting latency plus drift
/// latency converted at `frame_ms` per frame.
pub fn overall_latency(dcl_ms: f64, mean_dl_frames: f64, frame_ms: f64) -> Result<f64> {
    if !(frame_ms > 0.0) {
        return Err(contract("overall_latency: frame_ms must be positive"));
    }
    Ok(dcl_ms + mean_dl_frames * frame_ms)
}

/// Mean decoded-frame count over a set of decode logs.
pub fn mean_df(frames_decoded: &[usize]) -> Result<f64> {
    if frames_decoded.is_empty() {
        return Err(contract("mean_df: empty decode log"));
    }
    Ok(frames_decoded.iter().sum::<usize>() as f64 / frames_decoded.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain exhaustive recursion, memoized: the independent route.
    fn recursive_edit_distance(a: &[u32], b: &[u32]) -> usize {
        fn go(
            a: &[u32],
            b: &[u32],
            i: usize,
            j: usize,
            memo: &mut std::collections::HashMap<(usize, usize), usize>,
        ) -> usize {
            if i == a.len() {
                return b.len() - j;
            }
            if j == b.len() {
                return a.len() - i;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
            let del = go(a, b, i + 1, j, memo) + 1;
            let ins = go(a, b, i, j + 1, memo) + 1;
            let v = sub.min(del).min(ins);
            memo.insert((i, j), v);
            v
        }
        go(a, b, 0, 0, &mut std::collections::HashMap::new())
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[]), 3);
        assert_eq!(edit_distance(&[], &[5, 6]), 2);
        assert_eq!(edit_distance(&[1, 2], &[1, 3]), 1);
    }

    #[test]
    fn wer_basics() {
        let refs = vec![vec![1, 2], vec![3]];
        assert_eq!(wer(&refs, &refs).unwrap(), 0.0);
        let hyp = vec![vec![1, 3], vec![3]];
        let single = wer(&[vec![1, 2]], &[vec![1, 3]]).unwrap();
        assert_eq!(single, 50.0);
        // Corpus pooling equals manual aggregation.
        let pooled = wer(&refs, &hyp).unwrap();
        assert_eq!(pooled, 100.0 * 1.0 / 3.0);
        assert!(wer(&[], &[]).is_err());
        assert!(wer(&[vec![1]], &[]).is_err());
    }

    #[test]
    fn drift_latency_worked_examples() {
        // Token starts at frame 1 and is emitted at frame 4: 3-frame drift.
        let (per, mean) = drift_latency(&[4], &[(1, 3)]).unwrap();
        assert_eq!(per, vec![3]);
        assert_eq!(mean, 3.0);
        // Emitted at its start frame; emitted one frame early.
        assert_eq!(drift_latency(&[5], &[(5, 8)]).unwrap().0, vec![0]);
        assert_eq!(drift_latency(&[4], &[(5, 8)]).unwrap().0, vec![-1]);
    }

    #[test]
    fn drift_latency_without_tokens_is_undefined() {
        match drift_latency(&[], &[]) {
            Err(BrtError::UndefinedMetric(_)) => {}
            other => panic!("expected undefined metric, got {other:?}"),
        }
    }

    #[test]
    fn overall_latency_examples() {
        assert_eq!(overall_latency(160.0, 0.0, 40.0).unwrap(), 160.0);
        assert_eq!(overall_latency(320.0, 2.0, 40.0).unwrap(), 400.0);
        assert_eq!(overall_latency(160.0, -1.0, 40.0).unwrap(), 120.0);
        assert!(overall_latency(100.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn mean_df_examples() {
        assert_eq!(mean_df(&[30, 30, 30]).unwrap(), 30.0);
        assert_eq!(mean_df(&[10, 20]).unwrap(), 15.0);
        assert_eq!(mean_df(&[7, 9, 14]).unwrap(), 10.0);
        assert!(mean_df(&[]).is_err());
    }

    #[test]
    fn matched_tokens_only_pair_equal_labels() {
        let r = vec![1, 2, 3, 4];
        let h = vec![1, 9, 4];
        let pairs = matched_token_indices(&r, &h);
        for &(i, j) in &pairs {
            assert_eq!(r[i], h[j]);
        }
        assert!(pairs.contains(&(0, 0)));
        assert!(pairs.contains(&(3, 2)));
    }

    proptest! {
        #[test]
        fn edit_distance_matches_recursive_oracle(
            a in proptest::collection::vec(1u32..5, 0..8),
            b in proptest::collection::vec(1u32..5, 0..8),
        ) {
            prop_assert_eq!(edit_distance(&a, &b), recursive_edit_distance(&a, &b));
        }

        #[test]
        fn edit_distance_is_a_metric(
            a in proptest::collection::vec(1u32..4, 0..6),
            b in proptest::collection::vec(1u32..4, 0..6),
            c in proptest::collection::vec(1u32..4, 0..6),
        ) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
        }

        #[test]
        fn drift_latency_is_translation_consistent(
            frames in proptest::collection::vec(1usize..30, 1..6),
            starts in proptest::collection::vec(1usize..30, 1..6),
            shift in 0usize..10,
        ) {
            let n = frames.len().min(starts.len());
            let ef: Vec<usize> = frames[..n].to_vec();
            let spans: Vec<(usize, usize)> = starts[..n].iter().map(|&s| (s, s + 2)).collect();
            let (_, base) = drift_latency(&ef, &spans).unwrap();
            let ef2: Vec<usize> = ef.iter().map(|&e| e + shift).collect();
            let spans2: Vec<(usize, usize)> = spans.iter().map(|&(s, e)| (s + shift, e + shift)).collect();
            let (_, shifted) = drift_latency(&ef2, &spans2).unwrap();
            prop_assert!((base - shifted).abs() < 1e-12);
        }

        #[test]
        fn overall_latency_is_linear(dcl in 0.0f64..1000.0, dl in -10.0f64..10.0, frame in 1.0f64..100.0) {
            let a = overall_latency(dcl, dl, frame).unwrap();
            let b = overall_latency(2.0 * dcl, dl, frame).unwrap();
            prop_assert!((b - a - dcl).abs() < 1e-9);
            let c = overall_latency(dcl, 2.0 * dl, frame).unwrap();
            prop_assert!((c - a - dl * frame).abs() < 1e-9);
        }
    }
}
