//! Frame-synchronous transducer beam search with an early-stop mechanism.
//!
//! Per frame, hypotheses first expand by label emissions (staying on the
//! frame, up to a configurable depth) and then take blank to advance to the
//! next frame; identical prefixes merge by log-sum (or max, behind a flag).
//! With early stop enabled, decoding terminates once the ranked top-k
//! prefixes have been identical for `f` consecutive frames and every one of
//! them is complete: the log-probability of blanking out the remaining
//! frames exceeds the threshold `D`.

use std::collections::HashMap;

use crate::error::{contract, Result};
use crate::lattice::{LatticeLogits, BLANK};
use crate::numerics::{log_add, log_sum_exp, LOG_ZERO};

/// Scores `p(k | x_{1:t+1}, prefix)` for 0-based frame `t`: a normalized
/// log-probability vector over the V+1 symbols, blank first.
pub trait ScoreFn {
    fn log_probs(&self, t: usize, prefix: &[u32]) -> Vec<f64>;
}

impl<F: Fn(usize, &[u32]) -> Vec<f64>> ScoreFn for F {
    fn log_probs(&self, t: usize, prefix: &[u32]) -> Vec<f64> {
        self(t, prefix)
    }
}

/// Replays a stored lattice: the score for a prefix of length `u` is the
/// slice `z[t][u]`, clamped to the last row for longer prefixes. Test and
/// benchmark double for a real model.
pub struct LatticeReplayScoreFn<'a> {
    lat: &'a LatticeLogits,
}

impl<'a> LatticeReplayScoreFn<'a> {
    pub fn new(lat: &'a LatticeLogits) -> Self {
        Self { lat }
    }
}

impl ScoreFn for LatticeReplayScoreFn<'_> {
    fn log_probs(&self, t: usize, prefix: &[u32]) -> Vec<f64> {
        let u = prefix.len().min(self.lat.labels());
        (0..=self.lat.vocab()).map(|k| self.lat.get(t, u, k)).collect()
    }
}

/// Early-stop thresholds: stop once the top `stable_k` prefixes are
/// unchanged for `stable_f` frames and all are complete w.r.t. `threshold_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub threshold_d: f64,
    pub stable_k: usize,
    pub stable_f: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self { enabled: true, threshold_d: -10.0, stable_k: 3, stable_f: 5 }
    }
}

impl EarlyStopConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

/// How merged prefixes combine their path scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Sum path posteriors (the standard rule).
    LogSum,
    /// Keep only the best path per prefix.
    Max,
}

#[derive(Debug, Clone)]
pub struct BeamSearchConfig {
    pub beam_size: usize,
    /// Cap on consecutive label emissions within one frame.
    pub max_labels_per_frame: usize,
    pub merge: MergeMode,
    pub early_stop: EarlyStopConfig,
}

impl Default for BeamSearchConfig {
    fn default() -> Self {
        Self {
            beam_size: 10,
            max_labels_per_frame: 3,
            merge: MergeMode::LogSum,
            early_stop: EarlyStopConfig::default(),
        }
    }
}

/// A beam entry: blank-free prefix, merged log score, completeness state.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub prefix: Vec<u32>,
    pub log_score: f64,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub best: Hypothesis,
    pub n_best: Vec<Hypothesis>,
    /// Frames processed before termination (DF).
    pub frames_decoded: usize,
    pub stopped_early: bool,
}

/// Whether a hypothesis obtained at 1-based frame `tau` is complete: the
/// accumulated log-probability of continuous blanks over frames
/// `tau..=t_len` exceeds `threshold_d`. The series needs no search loop;
/// it is independent of further emissions.
pub fn completeness_check<S: ScoreFn + ?Sized>(
    score_fn: &S,
    prefix: &[u32],
    tau: usize,
    t_len: usize,
    threshold_d: f64,
) -> bool {
    let mut sum = 0.0f64;
    for t in tau..=t_len {
        sum += score_fn.log_probs(t - 1, prefix)[0];
        if sum <= threshold_d {
            return false;
        }
    }
    sum > threshold_d
}

/// Stability-and-completeness monitor, fed once per decoded frame with the
/// ranked beam. Fires when the ordered top-k prefix list has been identical
/// for `stable_f` consecutive observations (so never before frame
/// `stable_f`) and every top-k prefix is complete. If the beam holds fewer
/// than `stable_k` entries, k is the beam size.
pub struct EarlyStopMonitor {
    cfg: EarlyStopConfig,
    prev_topk: Option<Vec<Vec<u32>>>,
    streak: usize,
}

/// First-appearance bookkeeping: the frame at which each live prefix was
/// obtained. Completeness is anchored there, so the blank tail covers every
/// frame since the hypothesis stopped growing.
struct ObtainedAt {
    map: HashMap<Vec<u32>, usize>,
}

impl ObtainedAt {
    fn new() -> Self {
        Self { map: HashMap::new() }
    }

    /// Update for the beam after decoding 1-based frame `frame`; prefixes
    /// that dropped out of the beam forget their history.
    fn advance(&mut self, beam: &[(Vec<u32>, f64)], frame: usize) {
        let mut next = HashMap::with_capacity(beam.len());
        for (prefix, _) in beam {
            let first = self.map.get(prefix).copied().unwrap_or(frame);
            next.insert(prefix.clone(), first);
        }
        self.map = next;
    }

    fn frame_of(&self, prefix: &[u32], fallback: usize) -> usize {
        self.map.get(prefix).copied().unwrap_or(fallback)
    }
}

impl EarlyStopMonitor {
    pub fn new(cfg: EarlyStopConfig) -> Self {
        Self { cfg, prev_topk: None, streak: 0 }
    }

    pub fn observe<C: FnMut(&[u32]) -> bool>(
        &mut self,
        ranked_prefixes: &[Vec<u32>],
        mut is_complete: C,
    ) -> bool {
        let k = self.cfg.stable_k.min(ranked_prefixes.len());
        let topk: Vec<Vec<u32>> = ranked_prefixes[..k].to_vec();
        self.streak = match &self.prev_topk {
            Some(prev) if *prev == topk => self.streak + 1,
            _ => 1,
        };
        self.prev_topk = Some(topk);
        if self.streak < self.cfg.stable_f {
            return false;
        }
        self.prev_topk
            .as_ref()
            .expect("observed at least once")
            .iter()
            .all(|p| is_complete(p))
    }
}

fn merge_into(map: &mut HashMap<Vec<u32>, f64>, prefix: Vec<u32>, score: f64, mode: MergeMode) {
    map.entry(prefix)
        .and_modify(|s| {
            *s = match mode {
                MergeMode::LogSum => log_add(*s, score),
                MergeMode::Max => s.max(score),
            }
        })
        .or_insert(score);
}

/// Rank by score descending, then prefix ascending for determinism.
/// Probability-zero entries are dropped while anything finite survives.
fn ranked(map: HashMap<Vec<u32>, f64>, keep: usize) -> Vec<(Vec<u32>, f64)> {
    let mut v: Vec<(Vec<u32>, f64)> = map.into_iter().collect();
    if v.iter().any(|(_, s)| *s > LOG_ZERO) {
        v.retain(|(_, s)| *s > LOG_ZERO);
    }
    v.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    v.truncate(keep);
    v
}

fn validated_dist<S: ScoreFn + ?Sized>(
    score_fn: &S,
    t: usize,
    prefix: &[u32],
    width: &mut Option<usize>,
) -> Result<Vec<f64>> {
    let dist = score_fn.log_probs(t, prefix);
    match *width {
        None => {
            if dist.len() < 2 {
                return Err(contract("score_fn must cover blank plus at least one label"));
            }
            *width = Some(dist.len());
        }
        Some(w) if w != dist.len() => {
            return Err(contract(format!(
                "score_fn width changed from {w} to {}",
                dist.len()
            )));
        }
        _ => {}
    }
    if dist.iter().any(|v| v.is_nan()) {
        return Err(contract("score_fn returned NaN"));
    }
    let lse = log_sum_exp(&dist)?;
    if lse.abs() > 1e-6 {
        return Err(contract(format!("score_fn is not normalized: log-sum-exp = {lse:e}")));
    }
    Ok(dist)
}

/// Frame-synchronous beam search over `t_len` frames.
///
/// Returns the best hypothesis, the final beam, and the number of frames
/// decoded; with early stop disabled the frame count is always `t_len`.
pub fn beam_search<S: ScoreFn + ?Sized>(
    score_fn: &S,
    t_len: usize,
    cfg: &BeamSearchConfig,
) -> Result<DecodeResult> {
    if cfg.beam_size == 0 {
        return Err(contract("beam size must be >= 1"));
    }
    if t_len == 0 {
        return Err(contract("cannot decode zero frames"));
    }
    let mut width: Option<usize> = None;
    let mut beam: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut monitor = EarlyStopMonitor::new(cfg.early_stop);
    let mut obtained = ObtainedAt::new();
    let mut frames_decoded = 0usize;
    let mut stopped_early = false;

    for t in 0..t_len {
        let mut advanced: HashMap<Vec<u32>, f64> = HashMap::new();
        let mut frontier = beam.clone();
        for depth in 0..=cfg.max_labels_per_frame {
            let mut next: HashMap<Vec<u32>, f64> = HashMap::new();
            for (prefix, score) in &frontier {
                let dist = validated_dist(score_fn, t, prefix, &mut width)?;
                merge_into(&mut advanced, prefix.clone(), score + dist[0], cfg.merge);
                if depth < cfg.max_labels_per_frame {
                    for (k, &lp) in dist.iter().enumerate().skip(1) {
                        let s = score + lp;
                        if s == LOG_ZERO {
                            continue;
                        }
                        let mut ext = prefix.clone();
                        ext.push(k as u32);
                        merge_into(&mut next, ext, s, cfg.merge);
                    }
                }
            }
            frontier = ranked(next, cfg.beam_size);
            if frontier.is_empty() {
                break;
            }
        }
        beam = ranked(advanced, cfg.beam_size);
        frames_decoded = t + 1;
        obtained.advance(&beam, frames_decoded);

        if cfg.early_stop.enabled {
            let prefixes: Vec<Vec<u32>> = beam.iter().map(|(p, _)| p.clone()).collect();
            let stop = monitor.observe(&prefixes, |p| {
                let tau = obtained.frame_of(p, frames_decoded);
                completeness_check(score_fn, p, tau, t_len, cfg.early_stop.threshold_d)
            });
            if stop {
                stopped_early = true;
                break;
            }
        }
    }

    // Completeness of the surviving beam, anchored where each hypothesis
    // was obtained; a run over all frames has nothing left to blank out.
    let n_best: Vec<Hypothesis> = beam
        .into_iter()
        .map(|(prefix, log_score)| {
            let tau = if stopped_early {
                obtained.frame_of(&prefix, frames_decoded)
            } else {
                t_len + 1
            };
            let complete =
                completeness_check(score_fn, &prefix, tau, t_len, cfg.early_stop.threshold_d);
            Hypothesis { prefix, log_score, complete }
        })
        .collect();
    let best = n_best.first().cloned().ok_or_else(|| contract("empty beam"))?;
    Ok(DecodeResult { best, n_best, frames_decoded, stopped_early })
}

/// Greedy decode: beam search degenerated to width 1 without early stop.
pub fn greedy_decode<S: ScoreFn + ?Sized>(score_fn: &S, t_len: usize) -> Result<Vec<u32>> {
    let cfg = BeamSearchConfig {
        beam_size: 1,
        early_stop: EarlyStopConfig::disabled(),
        ..BeamSearchConfig::default()
    };
    Ok(beam_search(score_fn, t_len, &cfg)?.best.prefix)
}

#[allow(dead_code)]
fn unused_blank_guard() {
    // BLANK is pinned to symbol index 0 by the expansion loops above.
    let _ = BLANK;
}
