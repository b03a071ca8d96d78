//! Desk-scale synthetic task and a minimal trainable transducer.
//!
//! An utterance is a sequence of tokens, each spanning a contiguous run of
//! frames that together cover the whole utterance; the feature at a frame
//! is the one-hot identity of the token owning it plus additive Gaussian
//! onset noise: the first frames of every span are heavily corrupted and
//! the noise decays to `noise_std` as the span progresses. Token identity
//! therefore becomes reliable only partway into its span, which is what
//! makes emission timing a real trade-off: a likelihood-only objective
//! prefers to wait for clean frames, while an emission-time risk can buy
//! earlier output at a small accuracy cost.
//!
//! The model is deliberately tiny: a per-frame linear encoder, an embedding
//! of the previous label, an additive join through tanh, and output logits.
//! Training is full-batch gradient descent, sequential and
//! bit-deterministic for a fixed seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::alignment::{emission_times, viterbi_align};
use crate::brt_loss::{brt_loss, LossResult};
use crate::decoder::{beam_search, BeamSearchConfig, ScoreFn};
use crate::error::{contract, BrtError, Result};
use crate::lattice::{JointLogits, LabelSequence};
use crate::metrics::{matched_token_indices, mean_df, wer};
use crate::numerics::log_softmax_in_place;
use crate::risk::{RiskSpec, RiskVariant};
use crate::wire;

/// Noise multiplier at the first frame of a span, decaying linearly to 1
/// over the onset ramp.
pub const ONSET_NOISE_BOOST: f64 = 6.0;

/// Longest onset ramp in frames; shorter spans use half their length.
pub const ONSET_RAMP_CAP: usize = 5;

/// Synthetic dataset recipe. Token count, total frames and per-token span
/// lengths are sampled jointly so that spans of `span_range` length tile a
/// `t_range` utterance exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_utts: usize,
    pub t_range: (usize, usize),
    pub u_range: (usize, usize),
    pub vocab: u32,
    pub span_range: (usize, usize),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_utts: 200,
            t_range: (20, 40),
            u_range: (2, 5),
            vocab: 8,
            span_range: (4, 10),
            noise_std: 0.25,
            seed: 17,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi;
        if self.n_utts == 0
            || !ok_range(self.t_range)
            || !ok_range(self.u_range)
            || !ok_range(self.span_range)
            || self.vocab == 0
        {
            return Err(contract("dataset config: empty or inverted range"));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(contract("dataset config: noise_std must be finite and >= 0"));
        }
        if self.vocab < 2 && self.u_range.1 > 1 {
            return Err(contract(
                "dataset config: repeat-free label sampling needs vocab >= 2 for U > 1",
            ));
        }
        if self.feasible_token_counts().is_empty() {
            return Err(contract(
                "dataset config: no token count makes span_range tile t_range",
            ));
        }
        Ok(())
    }

    fn feasible_token_counts(&self) -> Vec<usize> {
        let (smin, smax) = self.span_range;
        let (tmin, tmax) = self.t_range;
        (self.u_range.0..=self.u_range.1)
            .filter(|&u| u * smin <= tmax && u * smax >= tmin)
            .collect()
    }
}

/// One synthetic utterance with its ground-truth token spans
/// (1-based inclusive frames).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyUtterance {
    pub features: Array2<f64>,
    pub labels: LabelSequence,
    pub ref_spans: Vec<(usize, usize)>,
}

impl ToyUtterance {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }
}

/// Deterministic dataset generation: identical config gives a bit-identical
/// dataset.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<ToyUtterance>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let feasible = cfg.feasible_token_counts();
    let (smin, smax) = cfg.span_range;
    let mut out = Vec::with_capacity(cfg.n_utts);
    for _ in 0..cfg.n_utts {
        let u = feasible[rng.random_range(0..feasible.len())];
        let t_lo = cfg.t_range.0.max(u * smin);
        let t_hi = cfg.t_range.1.min(u * smax);
        let t_len = rng.random_range(t_lo..=t_hi);

        // Random composition of t_len into u spans within span_range.
        let mut spans = Vec::with_capacity(u);
        let mut rem = t_len;
        for i in 0..u {
            let left = u - 1 - i;
            let lo = smin.max(rem.saturating_sub(left * smax));
            let hi = smax.min(rem - left * smin);
            let s = rng.random_range(lo..=hi);
            spans.push(s);
            rem -= s;
        }
        debug_assert_eq!(rem, 0);

        // No adjacent repeats: the joint conditions only on (frame feature,
        // previous label), which cannot disambiguate a repeated token from
        // waiting within its span.
        let mut ids: Vec<u32> = Vec::with_capacity(u);
        for i in 0..u {
            let id = if i == 0 || cfg.vocab == 1 {
                rng.random_range(1..=cfg.vocab)
            } else {
                let prev = ids[i - 1];
                let x = rng.random_range(1..cfg.vocab);
                if x >= prev {
                    x + 1
                } else {
                    x
                }
            };
            ids.push(id);
        }
        let labels = LabelSequence::new(ids)?;

        let mut ref_spans = Vec::with_capacity(u);
        let mut start = 1usize;
        for &s in &spans {
            ref_spans.push((start, start + s - 1));
            start += s;
        }

        let d = cfg.vocab as usize;
        let mut features = Array2::zeros((t_len, d));
        for (tok, &(s, e)) in ref_spans.iter().enumerate() {
            let hot = (labels.ids()[tok] - 1) as usize;
            for t in (s - 1)..e {
                features[[t, hot]] = 1.0;
            }
        }
        if cfg.noise_std > 0.0 {
            for &(s, e) in &ref_spans {
                let span_len = e - s + 1;
                let ramp = span_len.div_ceil(2).min(ONSET_RAMP_CAP).max(1);
                for t in (s - 1)..e {
                    let into_span = t - (s - 1); // 0-based position within the span
                    let decay = (ramp.saturating_sub(into_span)) as f64 / ramp as f64;
                    let std = cfg.noise_std * (1.0 + (ONSET_NOISE_BOOST - 1.0) * decay);
                    for k in 0..d {
                        let n: f64 = rng.sample(StandardNormal);
                        features[[t, k]] += std * n;
                    }
                }
            }
        }
        out.push(ToyUtterance { features, labels, ref_spans });
    }
    Ok(out)
}

/// Held-out evaluation recipe derived from a training recipe: same
/// distribution, independent seed, half the utterances.
pub fn eval_split_config(train: &DatasetConfig) -> DatasetConfig {
    DatasetConfig {
        n_utts: (train.n_utts / 2).max(4),
        seed: train.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..*train
    }
}

/// Minimal transducer: frame encoder, previous-label embedding, additive
/// join through tanh, output logits over V+1 symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub d: usize,
    pub h: usize,
    pub vocab: usize,
    w_enc: Array2<f64>,       // h x d
    emb: Array2<f64>,         // (V+1) x h
    w_join_enc: Array2<f64>,  // h x h
    w_join_pred: Array2<f64>, // h x h
    w_out: Array2<f64>,       // (V+1) x h
}

impl ToyModel {
    pub fn init(d: usize, h: usize, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize, fan_in: usize| -> Array2<f64> {
            let scale = (1.0 / fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let n: f64 = rng.sample(StandardNormal);
                scale * n
            })
        };
        Self {
            d,
            h,
            vocab,
            w_enc: mat(h, d, d),
            emb: mat(vocab + 1, h, h),
            w_join_enc: mat(h, h, h),
            w_join_pred: mat(h, h, h),
            w_out: mat(vocab + 1, h, h),
        }
    }

    pub fn zeros(d: usize, h: usize, vocab: usize) -> Self {
        Self {
            d,
            h,
            vocab,
            w_enc: Array2::zeros((h, d)),
            emb: Array2::zeros((vocab + 1, h)),
            w_join_enc: Array2::zeros((h, h)),
            w_join_pred: Array2::zeros((h, h)),
            w_out: Array2::zeros((vocab + 1, h)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_enc.len()
            + self.emb.len()
            + self.w_join_enc.len()
            + self.w_join_pred.len()
            + self.w_out.len()
    }

    /// Flatten all parameters in a fixed order.
    pub fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for m in [&self.w_enc, &self.emb, &self.w_join_enc, &self.w_join_pred, &self.w_out] {
            v.extend(m.iter().copied());
        }
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(contract("parameter vector length mismatch"));
        }
        let mut it = params.iter();
        for m in [
            &mut self.w_enc,
            &mut self.emb,
            &mut self.w_join_enc,
            &mut self.w_join_pred,
            &mut self.w_out,
        ] {
            for slot in m.iter_mut() {
                *slot = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params_vec().iter().all(|v| v.is_finite())
    }

    /// Previous-label id feeding the prediction side at prefix length `u`.
    fn prev_id(&self, labels: &LabelSequence, u: usize) -> usize {
        if u == 0 {
            0
        } else {
            labels.ids()[u - 1] as usize
        }
    }
}

/// Per-parameter gradients with the same shapes as the model.
pub struct ParamGrads {
    w_enc: Array2<f64>,
    emb: Array2<f64>,
    w_join_enc: Array2<f64>,
    w_join_pred: Array2<f64>,
    w_out: Array2<f64>,
}

impl ParamGrads {
    pub fn zeros_like(m: &ToyModel) -> Self {
        Self {
            w_enc: Array2::zeros(m.w_enc.dim()),
            emb: Array2::zeros(m.emb.dim()),
            w_join_enc: Array2::zeros(m.w_join_enc.dim()),
            w_join_pred: Array2::zeros(m.w_join_pred.dim()),
            w_out: Array2::zeros(m.w_out.dim()),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.w_enc += &other.w_enc;
        self.emb += &other.emb;
        self.w_join_enc += &other.w_join_enc;
        self.w_join_pred += &other.w_join_pred;
        self.w_out += &other.w_out;
    }

    pub fn scale(&mut self, c: f64) {
        self.w_enc *= c;
        self.emb *= c;
        self.w_join_enc *= c;
        self.w_join_pred *= c;
        self.w_out *= c;
    }
}

impl ToyModel {
    pub fn apply_update(&mut self, grads: &ParamGrads, step: f64) {
        self.w_enc.scaled_add(step, &grads.w_enc);
        self.emb.scaled_add(step, &grads.emb);
        self.w_join_enc.scaled_add(step, &grads.w_join_enc);
        self.w_join_pred.scaled_add(step, &grads.w_join_pred);
        self.w_out.scaled_add(step, &grads.w_out);
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    enc: Array2<f64>,    // T x h
    pred: Array2<f64>,   // (U+1) x h
    hidden: Array2<f64>, // (T*(U+1)) x h, tanh outputs
}

fn forward_with_cache(model: &ToyModel, utt: &ToyUtterance) -> Result<(JointLogits, ForwardCache)> {
    if utt.features.ncols() != model.d {
        return Err(contract(format!(
            "feature dim {} does not match model d {}",
            utt.features.ncols(),
            model.d
        )));
    }
    if let Some(&bad) = utt.labels.ids().iter().find(|&&id| id as usize > model.vocab) {
        return Err(contract(format!("label id {bad} exceeds model vocab {}", model.vocab)));
    }
    let t_len = utt.frames();
    let u_len = utt.labels.len();
    let rows = u_len + 1;

    let enc = utt.features.dot(&model.w_enc.t()); // T x h
    let join_enc = enc.dot(&model.w_join_enc.t()); // T x h
    let mut pred = Array2::zeros((rows, model.h));
    for u in 0..rows {
        let id = model.prev_id(&utt.labels, u);
        pred.row_mut(u).assign(&model.emb.row(id));
    }
    let join_pred = pred.dot(&model.w_join_pred.t()); // rows x h

    let n = t_len * rows;
    let mut hidden = Array2::zeros((n, model.h));
    for t in 0..t_len {
        for u in 0..rows {
            let mut row = hidden.row_mut(t * rows + u);
            row.assign(&join_enc.row(t));
            row += &join_pred.row(u);
            row.mapv_inplace(f64::tanh);
        }
    }
    let logits2 = hidden.dot(&model.w_out.t()); // n x (V+1)
    let data: Vec<f64> = logits2.iter().copied().collect();
    let z = Array3::from_shape_vec((t_len, rows, model.vocab + 1), data)
        .expect("shape follows construction");
    let raw = JointLogits::new(z)?;
    Ok((raw, ForwardCache { enc, pred, hidden }))
}

/// Joint logits for one utterance: a deterministic function of parameters
/// and input.
pub fn model_forward(model: &ToyModel, utt: &ToyUtterance) -> Result<JointLogits> {
    Ok(forward_with_cache(model, utt)?.0)
}

/// Backpropagate a loss gradient w.r.t. the raw logits into parameter space.
pub fn model_backward(
    model: &ToyModel,
    utt: &ToyUtterance,
    cache: &ForwardCache,
    dlogits: &Array3<f64>,
) -> ParamGrads {
    let t_len = utt.frames();
    let rows = utt.labels.len() + 1;
    let n = t_len * rows;
    let g2 = {
        let data: Vec<f64> = dlogits.iter().copied().collect();
        Array2::from_shape_vec((n, model.vocab + 1), data).expect("shape follows construction")
    };

    let mut grads = ParamGrads::zeros_like(model);
    grads.w_out = g2.t().dot(&cache.hidden);

    // Through tanh: ds = (W_out^T g) * (1 - hidden^2).
    let mut ds = g2.dot(&model.w_out);
    ds.zip_mut_with(&cache.hidden, |s, &j| *s *= 1.0 - j * j);

    let mut d_join_enc = Array2::zeros((t_len, model.h)); // gradient at join_enc rows
    let mut d_join_pred = Array2::zeros((rows, model.h));
    for t in 0..t_len {
        for u in 0..rows {
            let row = ds.row(t * rows + u);
            d_join_enc.row_mut(t).scaled_add(1.0, &row);
            d_join_pred.row_mut(u).scaled_add(1.0, &row);
        }
    }

    grads.w_join_enc = d_join_enc.t().dot(&cache.enc);
    grads.w_join_pred = d_join_pred.t().dot(&cache.pred);

    let d_enc = d_join_enc.dot(&model.w_join_enc); // T x h
    let d_pred = d_join_pred.dot(&model.w_join_pred); // rows x h

    grads.w_enc = d_enc.t().dot(&utt.features);
    for u in 0..rows {
        let id = model.prev_id(&utt.labels, u);
        grads.emb.row_mut(id).scaled_add(1.0, &d_pred.row(u));
    }
    grads
}

/// Loss and parameter gradients for one utterance, optionally mixing in a
/// share of the vanilla objective.
pub fn loss_and_grads(
    model: &ToyModel,
    utt: &ToyUtterance,
    spec: &RiskSpec,
    vanilla_weight: f64,
) -> Result<(f64, ParamGrads, LossResult)> {
    let (raw, cache) = forward_with_cache(model, utt)?;
    let res = brt_loss(&raw, &utt.labels, spec)?;
    let (loss, dlogits) = if vanilla_weight > 0.0 && spec.variant != RiskVariant::Unit {
        let vres = brt_loss(&raw, &utt.labels, &RiskSpec::unit())?;
        (
            res.loss + vanilla_weight * vres.loss,
            &res.grad + &(vanilla_weight * &vres.grad),
        )
    } else {
        (res.loss, res.grad.clone())
    };
    let grads = model_backward(model, utt, &cache, &dlogits);
    Ok((loss, grads, res))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub spec: RiskSpec,
    pub epochs: usize,
    pub lr: f64,
    pub vanilla_weight: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            spec: RiskSpec::unit(),
            epochs: 150,
            lr: 0.1,
            vanilla_weight: 0.0,
            hidden: 32,
            seed: 1,
        }
    }
}

/// Full-batch gradient descent at a fixed learning rate; deterministic for
/// fixed seeds. Returns the trained model and the per-epoch loss trace
/// (mean loss at the start of each epoch).
pub fn train(dataset: &[ToyUtterance], cfg: &TrainConfig) -> Result<(ToyModel, Vec<f64>)> {
    cfg.spec.validate()?;
    if dataset.is_empty() {
        return Err(contract("train: empty dataset"));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) || !cfg.vanilla_weight.is_finite() {
        return Err(contract("train: bad hyperparameters"));
    }
    let d = dataset[0].features.ncols();
    let vocab = d; // toy features are one-hot over the vocabulary
    let mut model = ToyModel::init(d, cfg.hidden, vocab, cfg.seed);
    let inv_n = 1.0 / dataset.len() as f64;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut acc = ParamGrads::zeros_like(&model);
        let mut loss_sum = 0.0;
        for utt in dataset {
            let (loss, grads, _) = loss_and_grads(&model, utt, &cfg.spec, cfg.vanilla_weight)?;
            loss_sum += loss;
            acc.add_assign(&grads);
        }
        let mean_loss = loss_sum * inv_n;
        if !mean_loss.is_finite() {
            return Err(BrtError::Diverged { epoch, loss: mean_loss });
        }
        trace.push(mean_loss);
        acc.scale(inv_n);
        model.apply_update(&acc, -cfg.lr);
        if !model.all_finite() {
            return Err(BrtError::Diverged { epoch, loss: mean_loss });
        }
    }
    Ok((model, trace))
}

/// Autoregressive decoding scores for one utterance: the joint depends on
/// the frame encoding and the embedding of the last predicted label.
pub struct ToyScoreFn<'a> {
    model: &'a ToyModel,
    join_enc: Array2<f64>,  // T x h
    join_pred: Array2<f64>, // (V+1) x h, one row per possible last label
}

impl<'a> ToyScoreFn<'a> {
    pub fn new(model: &'a ToyModel, features: &Array2<f64>) -> Self {
        let enc = features.dot(&model.w_enc.t());
        let join_enc = enc.dot(&model.w_join_enc.t());
        let join_pred = model.emb.dot(&model.w_join_pred.t());
        Self { model, join_enc, join_pred }
    }
}

impl ScoreFn for ToyScoreFn<'_> {
    fn log_probs(&self, t: usize, prefix: &[u32]) -> Vec<f64> {
        let last = prefix.last().map_or(0, |&id| id as usize);
        let mut hidden = Array1::zeros(self.model.h);
        hidden.assign(&self.join_enc.row(t));
        hidden += &self.join_pred.row(last);
        hidden.mapv_inplace(f64::tanh);
        let mut logits: Vec<f64> = self.model.w_out.dot(&hidden).to_vec();
        log_softmax_in_place(&mut logits);
        logits
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub beam: BeamSearchConfig,
    pub frame_ms: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { beam: BeamSearchConfig::default(), frame_ms: 40.0 }
    }
}

/// Per-utterance evaluation record.
#[derive(Debug, Clone)]
pub struct UttEval {
    pub index: usize,
    pub hyp: Vec<u32>,
    pub best_log_score: f64,
    pub frames_decoded: usize,
    pub stopped_early: bool,
    /// Forced-alignment emission frame of every reference token.
    pub forced_emission_frames: Vec<usize>,
    /// Drift latency of correctly recognized tokens only.
    pub dl_contributions: Vec<i64>,
    pub last_emission_frame: usize,
    pub decode_wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub wer: f64,
    pub mean_df: f64,
    /// None when no token anywhere was correctly recognized.
    pub mean_dl_frames: Option<f64>,
    pub mean_last_emission_frame: f64,
    pub mean_decode_wall_ms: f64,
    pub utts: Vec<UttEval>,
}

/// Decode every utterance with beam search, force-align the ground-truth
/// labels for emission times, and aggregate corpus metrics.
pub fn evaluate(model: &ToyModel, dataset: &[ToyUtterance], cfg: &EvalConfig) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(contract("evaluate: empty dataset"));
    }
    let utts: Vec<UttEval> = dataset
        .par_iter()
        .enumerate()
        .map(|(index, utt)| -> Result<UttEval> {
            let score_fn = ToyScoreFn::new(model, &utt.features);
            let started = Instant::now();
            let decoded = beam_search(&score_fn, utt.frames(), &cfg.beam)?;
            let decode_wall_ms = started.elapsed().as_secs_f64() * 1e3;

            let raw = model_forward(model, utt)?;
            let lat = raw.log_softmax();
            let path = viterbi_align(&lat, &utt.labels)?;
            let forced = emission_times(&path)?;
            let last_emission_frame = forced.last().copied().unwrap_or(0);

            let matched = matched_token_indices(utt.labels.ids(), &decoded.best.prefix);
            let dl_contributions: Vec<i64> = matched
                .iter()
                .map(|&(ri, _)| forced[ri] as i64 - utt.ref_spans[ri].0 as i64)
                .collect();

            Ok(UttEval {
                index,
                hyp: decoded.best.prefix.clone(),
                best_log_score: decoded.best.log_score,
                frames_decoded: decoded.frames_decoded,
                stopped_early: decoded.stopped_early,
                forced_emission_frames: forced,
                dl_contributions,
                last_emission_frame,
                decode_wall_ms,
            })
        })
        .collect::<Result<_>>()?;

    let refs: Vec<Vec<u32>> = dataset.iter().map(|u| u.labels.ids().to_vec()).collect();
    let hyps: Vec<Vec<u32>> = utts.iter().map(|u| u.hyp.clone()).collect();
    let corpus_wer = wer(&refs, &hyps)?;
    let frames: Vec<usize> = utts.iter().map(|u| u.frames_decoded).collect();
    let df = mean_df(&frames)?;
    let dl_pool: Vec<i64> = utts.iter().flat_map(|u| u.dl_contributions.iter().copied()).collect();
    let mean_dl_frames = if dl_pool.is_empty() {
        None
    } else {
        Some(dl_pool.iter().sum::<i64>() as f64 / dl_pool.len() as f64)
    };
    let mean_last = utts.iter().map(|u| u.last_emission_frame as f64).sum::<f64>()
        / utts.len() as f64;
    let mean_wall = utts.iter().map(|u| u.decode_wall_ms).sum::<f64>() / utts.len() as f64;
    Ok(EvalReport {
        wer: corpus_wer,
        mean_df: df,
        mean_dl_frames,
        mean_last_emission_frame: mean_last,
        mean_decode_wall_ms: mean_wall,
        utts,
    })
}

const MODEL_MAGIC: &[u8; 4] = b"BRTM";
const DATASET_MAGIC: &[u8; 4] = b"BRTD";
const CONTAINER_VERSION: u32 = 1;

/// A trained model together with everything needed to regenerate its data
/// and reproduce its training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ToyModel,
    pub data: DatasetConfig,
    pub train: TrainConfig,
}

fn variant_code(v: RiskVariant) -> u32 {
    match v {
        RiskVariant::Unit => 0,
        RiskVariant::OfflineLastToken => 1,
        RiskVariant::StreamingPerToken => 2,
    }
}

fn variant_from_code(c: u32) -> Result<RiskVariant> {
    match c {
        0 => Ok(RiskVariant::Unit),
        1 => Ok(RiskVariant::OfflineLastToken),
        2 => Ok(RiskVariant::StreamingPerToken),
        other => Err(BrtError::Format(format!("unknown risk variant code {other}"))),
    }
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    wire::put_magic(w, MODEL_MAGIC)?;
    wire::put_u32(w, CONTAINER_VERSION)?;
    let m = &ckpt.model;
    wire::put_u32(w, m.d as u32)?;
    wire::put_u32(w, m.h as u32)?;
    wire::put_u32(w, m.vocab as u32)?;
    let dc = &ckpt.data;
    wire::put_u32(w, dc.n_utts as u32)?;
    wire::put_u32(w, dc.t_range.0 as u32)?;
    wire::put_u32(w, dc.t_range.1 as u32)?;
    wire::put_u32(w, dc.u_range.0 as u32)?;
    wire::put_u32(w, dc.u_range.1 as u32)?;
    wire::put_u32(w, dc.vocab)?;
    wire::put_u32(w, dc.span_range.0 as u32)?;
    wire::put_u32(w, dc.span_range.1 as u32)?;
    wire::put_f64(w, dc.noise_std)?;
    wire::put_u64(w, dc.seed)?;
    let tc = &ckpt.train;
    wire::put_u32(w, variant_code(tc.spec.variant))?;
    wire::put_f64(w, tc.spec.lambda)?;
    wire::put_u32(w, tc.spec.m)?;
    wire::put_u32(w, tc.epochs as u32)?;
    wire::put_f64(w, tc.lr)?;
    wire::put_f64(w, tc.vanilla_weight)?;
    wire::put_u32(w, tc.hidden as u32)?;
    wire::put_u64(w, tc.seed)?;
    for v in ckpt.model.params_vec() {
        wire::put_f64(w, v)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    wire::expect_magic(r, MODEL_MAGIC)?;
    wire::expect_version(r, CONTAINER_VERSION, "BRTM")?;
    let d = wire::get_u32(r)? as usize;
    let h = wire::get_u32(r)? as usize;
    let vocab = wire::get_u32(r)? as usize;
    let data = DatasetConfig {
        n_utts: wire::get_u32(r)? as usize,
        t_range: (wire::get_u32(r)? as usize, wire::get_u32(r)? as usize),
        u_range: (wire::get_u32(r)? as usize, wire::get_u32(r)? as usize),
        vocab: wire::get_u32(r)?,
        span_range: (wire::get_u32(r)? as usize, wire::get_u32(r)? as usize),
        noise_std: wire::get_f64(r)?,
        seed: wire::get_u64(r)?,
    };
    let variant = variant_from_code(wire::get_u32(r)?)?;
    let lambda = wire::get_f64(r)?;
    let m = wire::get_u32(r)?;
    let train = TrainConfig {
        spec: RiskSpec { variant, lambda, m },
        epochs: wire::get_u32(r)? as usize,
        lr: wire::get_f64(r)?,
        vanilla_weight: wire::get_f64(r)?,
        hidden: wire::get_u32(r)? as usize,
        seed: wire::get_u64(r)?,
    };
    let mut model = ToyModel::zeros(d, h, vocab);
    let mut params = vec![0.0; model.param_count()];
    for slot in params.iter_mut() {
        *slot = wire::get_f64(r)?;
    }
    model.set_params(&params)?;
    Ok(Checkpoint { model, data, train })
}

pub fn write_checkpoint_file(path: &FsPath, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint_file(path: &FsPath) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}

pub fn write_dataset(w: &mut impl Write, dataset: &[ToyUtterance]) -> Result<()> {
    if dataset.is_empty() {
        return Err(contract("write_dataset: empty dataset"));
    }
    let d = dataset[0].features.ncols();
    wire::put_magic(w, DATASET_MAGIC)?;
    wire::put_u32(w, CONTAINER_VERSION)?;
    wire::put_u32(w, dataset.len() as u32)?;
    wire::put_u32(w, d as u32)?;
    for utt in dataset {
        if utt.features.ncols() != d {
            return Err(contract("write_dataset: inconsistent feature dims"));
        }
        wire::put_u32(w, utt.frames() as u32)?;
        wire::put_u32(w, utt.labels.len() as u32)?;
        for &id in utt.labels.ids() {
            wire::put_u32(w, id)?;
        }
        for &(s, e) in &utt.ref_spans {
            wire::put_u32(w, s as u32)?;
            wire::put_u32(w, e as u32)?;
        }
        for &v in utt.features.iter() {
            wire::put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Vec<ToyUtterance>> {
    wire::expect_magic(r, DATASET_MAGIC)?;
    wire::expect_version(r, CONTAINER_VERSION, "BRTD")?;
    let n = wire::get_u32(r)? as usize;
    let d = wire::get_u32(r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t_len = wire::get_u32(r)? as usize;
        let u_len = wire::get_u32(r)? as usize;
        let mut ids = Vec::with_capacity(u_len);
        for _ in 0..u_len {
            ids.push(wire::get_u32(r)?);
        }
        let labels = LabelSequence::new(ids)?;
        let mut ref_spans = Vec::with_capacity(u_len);
        for _ in 0..u_len {
            let s = wire::get_u32(r)? as usize;
            let e = wire::get_u32(r)? as usize;
            ref_spans.push((s, e));
        }
        let mut data = Vec::with_capacity(t_len * d);
        for _ in 0..t_len * d {
            data.push(wire::get_f64(r)?);
        }
        let features = Array2::from_shape_vec((t_len, d), data)
            .map_err(|e| BrtError::Format(format!("BRTD: bad shape: {e}")))?;
        out.push(ToyUtterance { features, labels, ref_spans });
    }
    Ok(out)
}

pub fn write_dataset_file(path: &FsPath, dataset: &[ToyUtterance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_file(path: &FsPath) -> Result<Vec<ToyUtterance>> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}
