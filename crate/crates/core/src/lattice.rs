//! The transducer lattice: joint logits over (frame, prefix length,
//! symbol), forward/backward variables, the vanilla loss, and gate
//! posteriors.
//!
//! Convention: nodes `(t, u)` with `t ∈ [0, T-1]`, `u ∈ [0, U]`, start at
//! `(0, 0)`. A blank transition moves `(t, u) → (t+1, u)` with weight
//! `z[t][u][0]`; a label transition moves `(t, u) → (t, u+1)` with weight
//! `z[t][u][l_{u+1}]`. Termination takes one final blank at `(T-1, U)`.
//! Every valid path therefore has length `T + U`, contains exactly `T`
//! blanks, and ends in blank. Frames are 0-based internally; the emission
//! frame `τ` reported to risk functions and metrics is 1-based (`τ = t+1`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use ndarray::{Array2, Array3};

use crate::error::{contract, Result};
use crate::numerics::{log_add, log_softmax_in_place, log_sum_exp, LogProb, LOG_ONE, LOG_ZERO};
use crate::wire;

/// Reserved blank symbol id.
pub const BLANK: u32 = 0;

/// Tolerance for per-(t,u) normalization of lattice log-probabilities.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// A blank-free transcription; symbol ids live in `[1, V]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence(Vec<u32>);

impl LabelSequence {
    pub fn new(labels: Vec<u32>) -> Result<Self> {
        if labels.contains(&BLANK) {
            return Err(contract("label sequence may not contain the blank id 0"));
        }
        Ok(Self(labels))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }
}

/// Raw (pre-normalization) joint-network outputs of shape
/// `T × (U+1) × (V+1)`, symbol index 0 being blank. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLogits {
    z: Array3<f64>,
}

impl JointLogits {
    pub fn new(z: Array3<f64>) -> Result<Self> {
        let (t, _u1, v1) = z.dim();
        if t < 1 || v1 < 2 {
            return Err(contract("joint logits need T >= 1 and V >= 1"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(contract("joint logits must be finite"));
        }
        Ok(Self { z })
    }

    pub fn frames(&self) -> usize {
        self.z.dim().0
    }

    /// U: the number of label rows minus one.
    pub fn labels(&self) -> usize {
        self.z.dim().1 - 1
    }

    /// V: non-blank vocabulary size.
    pub fn vocab(&self) -> usize {
        self.z.dim().2 - 1
    }

    pub fn z(&self) -> &Array3<f64> {
        &self.z
    }

    pub fn z_mut(&mut self) -> &mut Array3<f64> {
        &mut self.z
    }

    /// Normalize every (t, u) slice with log-softmax.
    pub fn log_softmax(&self) -> LatticeLogits {
        let mut z = self.z.clone();
        for mut row in z.rows_mut() {
            log_softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        LatticeLogits { z }
    }
}

/// Normalized token log-posteriors on the lattice: every (t, u) slice
/// satisfies `log Σ_k exp(z[t][u][k]) = 0` within [`NORMALIZATION_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeLogits {
    z: Array3<f64>,
}

impl LatticeLogits {
    pub fn new(z: Array3<f64>) -> Result<Self> {
        let (t, _u1, v1) = z.dim();
        if t < 1 || v1 < 2 {
            return Err(contract("lattice needs T >= 1 and V >= 1"));
        }
        for (idx, row) in z.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row.as_slice().expect("contiguous row"))?;
            if !(lse.abs() <= NORMALIZATION_TOL) {
                return Err(contract(format!(
                    "lattice slice {idx} is not normalized: log-sum-exp = {lse:e}"
                )));
            }
        }
        Ok(Self { z })
    }

    pub fn frames(&self) -> usize {
        self.z.dim().0
    }

    pub fn labels(&self) -> usize {
        self.z.dim().1 - 1
    }

    pub fn vocab(&self) -> usize {
        self.z.dim().2 - 1
    }

    pub fn z(&self) -> &Array3<f64> {
        &self.z
    }

    pub fn get(&self, t: usize, u: usize, k: usize) -> LogProb {
        self.z[[t, u, k]]
    }
}

/// Forward/backward variables and the sequence log-posterior.
#[derive(Debug, Clone)]
pub struct FBTables {
    /// `alpha[t][u]`: log summed posterior of partial paths reaching (t, u).
    pub alpha: Array2<f64>,
    /// `beta[t][u]`: log summed posterior of path suffixes from (t, u) to
    /// termination, including the transitions leaving (t, u).
    pub beta: Array2<f64>,
    /// `log P(l|x)`, derived from alpha.
    pub total: f64,
}

/// Gate posteriors: `g[(t, u-1)] = log G(t+1, u)`, the log summed posterior
/// of every path that emits token `l_u` at 1-based frame `t+1`.
#[derive(Debug, Clone)]
pub struct GateTable {
    g: Array2<f64>,
}

impl GateTable {
    pub fn frames(&self) -> usize {
        self.g.dim().0
    }

    pub fn tokens(&self) -> usize {
        self.g.dim().1
    }

    /// Log gate posterior for 1-based frame `tau` and 1-based token `u`.
    pub fn log_gate(&self, tau: usize, u: usize) -> LogProb {
        self.g[[tau - 1, u - 1]]
    }

    /// Log gate column for 1-based token `u`, indexed by 0-based frame.
    pub fn column(&self, u: usize) -> Vec<f64> {
        self.g.column(u - 1).to_vec()
    }

    /// Posterior argmax emission frame (1-based) for token `u`; ties break
    /// toward the smallest frame.
    pub fn tau_star(&self, u: usize) -> usize {
        let col = self.g.column(u - 1);
        let mut best = 0usize;
        for (t, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = t;
            }
        }
        best + 1
    }

    pub(crate) fn from_array(g: Array2<f64>) -> Self {
        Self { g }
    }
}

fn check_pair(frames: usize, label_rows: usize, vocab: usize, l: &LabelSequence) -> Result<()> {
    if l.len() + 1 != label_rows {
        return Err(contract(format!(
            "label count {} does not match lattice label rows {}",
            l.len(),
            label_rows
        )));
    }
    if let Some(&bad) = l.ids().iter().find(|&&id| id as usize > vocab) {
        return Err(contract(format!(
            "label id {bad} out of range [1, {vocab}]"
        )));
    }
    debug_assert!(frames >= 1);
    Ok(())
}

/// Forward recursion over arbitrary (possibly unnormalized) log weights.
pub(crate) fn forward_table(z: &Array3<f64>, labels: &[u32]) -> Array2<f64> {
    let (t_len, _rows, _) = z.dim();
    let u_len = labels.len();
    let mut alpha = Array2::from_elem((t_len, u_len + 1), LOG_ZERO);
    alpha[[0, 0]] = LOG_ONE;
    for t in 0..t_len {
        for u in 0..=u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = LOG_ZERO;
            if t > 0 {
                a = log_add(a, alpha[[t - 1, u]] + z[[t - 1, u, 0]]);
            }
            if u > 0 {
                a = log_add(a, alpha[[t, u - 1]] + z[[t, u - 1, labels[u - 1] as usize]]);
            }
            alpha[[t, u]] = a;
        }
    }
    alpha
}

/// Backward recursion; blank at `t = T-1` with `u < U` is a dead end.
pub(crate) fn backward_table(z: &Array3<f64>, labels: &[u32]) -> Array2<f64> {
    let (t_len, _rows, _) = z.dim();
    let u_len = labels.len();
    let mut beta = Array2::from_elem((t_len, u_len + 1), LOG_ZERO);
    beta[[t_len - 1, u_len]] = z[[t_len - 1, u_len, 0]];
    for t in (0..t_len).rev() {
        for u in (0..=u_len).rev() {
            if t == t_len - 1 && u == u_len {
                continue;
            }
            let mut b = LOG_ZERO;
            if t + 1 < t_len {
                b = log_add(b, z[[t, u, 0]] + beta[[t + 1, u]]);
            }
            if u < u_len {
                b = log_add(b, z[[t, u, labels[u] as usize]] + beta[[t, u + 1]]);
            }
            beta[[t, u]] = b;
        }
    }
    beta
}

pub(crate) fn total_from_alpha(z: &Array3<f64>, alpha: &Array2<f64>) -> f64 {
    let (t_len, rows, _) = z.dim();
    alpha[[t_len - 1, rows - 1]] + z[[t_len - 1, rows - 1, 0]]
}

/// Gradient of `-total` with respect to the log weights: the negated arc
/// occupancies. Zero for symbols that label no arc out of a node.
pub(crate) fn occupancy_grad(
    z: &Array3<f64>,
    labels: &[u32],
    alpha: &Array2<f64>,
    beta: &Array2<f64>,
    total: f64,
) -> Array3<f64> {
    let (t_len, _rows, _) = z.dim();
    let u_len = labels.len();
    let mut grad = Array3::zeros(z.dim());
    for t in 0..t_len {
        for u in 0..=u_len {
            let blank_occ = if t + 1 < t_len {
                alpha[[t, u]] + z[[t, u, 0]] + beta[[t + 1, u]]
            } else if u == u_len {
                alpha[[t, u]] + z[[t, u, 0]]
            } else {
                LOG_ZERO
            };
            if blank_occ != LOG_ZERO {
                grad[[t, u, 0]] = -(blank_occ - total).exp();
            }
            if u < u_len {
                let k = labels[u] as usize;
                let occ = alpha[[t, u]] + z[[t, u, k]] + beta[[t, u + 1]];
                if occ != LOG_ZERO {
                    grad[[t, u, k]] = -(occ - total).exp();
                }
            }
        }
    }
    grad
}

/// Forward variables `alpha(t, u)` for a normalized lattice.
pub fn forward(lat: &LatticeLogits, l: &LabelSequence) -> Result<Array2<f64>> {
    check_pair(lat.frames(), lat.labels() + 1, lat.vocab(), l)?;
    Ok(forward_table(&lat.z, l.ids()))
}

/// Backward variables `beta(t, u)` for a normalized lattice.
pub fn backward(lat: &LatticeLogits, l: &LabelSequence) -> Result<Array2<f64>> {
    check_pair(lat.frames(), lat.labels() + 1, lat.vocab(), l)?;
    Ok(backward_table(&lat.z, l.ids()))
}

/// Both tables plus the total sequence log-posterior.
pub fn fb_tables(lat: &LatticeLogits, l: &LabelSequence) -> Result<FBTables> {
    check_pair(lat.frames(), lat.labels() + 1, lat.vocab(), l)?;
    let alpha = forward_table(&lat.z, l.ids());
    let beta = backward_table(&lat.z, l.ids());
    let total = total_from_alpha(&lat.z, &alpha);
    Ok(FBTables { alpha, beta, total })
}

/// The vanilla transducer loss `-log P(l|x)`.
pub fn vanilla_loss(lat: &LatticeLogits, l: &LabelSequence) -> Result<f64> {
    check_pair(lat.frames(), lat.labels() + 1, lat.vocab(), l)?;
    let alpha = forward_table(&lat.z, l.ids());
    Ok(-total_from_alpha(&lat.z, &alpha))
}

/// Gate posteriors `G(τ, u)` from precomputed forward/backward tables.
pub fn gate_posteriors(lat: &LatticeLogits, l: &LabelSequence, fb: &FBTables) -> Result<GateTable> {
    check_pair(lat.frames(), lat.labels() + 1, lat.vocab(), l)?;
    if l.is_empty() {
        return Err(contract("gate posteriors need U >= 1"));
    }
    let t_len = lat.frames();
    let u_len = l.len();
    let mut g = Array2::from_elem((t_len, u_len), LOG_ZERO);
    for u in 1..=u_len {
        let k = l.ids()[u - 1] as usize;
        for t in 0..t_len {
            g[[t, u - 1]] = fb.alpha[[t, u - 1]] + lat.z[[t, u - 1, k]] + fb.beta[[t, u]];
        }
    }
    Ok(GateTable::from_array(g))
}

const LATTICE_MAGIC: &[u8; 4] = b"BRTL";
const LATTICE_VERSION: u32 = 1;

/// Write a lattice and its labels in the `BRTL` container: magic, u32
/// version=1, T, U, V, the U label ids, then `T·(U+1)·(V+1)` f64 values in
/// row-major (t, u, k) order, all little-endian.
pub fn write_lattice(w: &mut impl Write, lat: &LatticeLogits, l: &LabelSequence) -> Result<()> {
    check_pair(lat.frames(), lat.labels() + 1, lat.vocab(), l)?;
    wire::put_magic(w, LATTICE_MAGIC)?;
    wire::put_u32(w, LATTICE_VERSION)?;
    wire::put_u32(w, lat.frames() as u32)?;
    wire::put_u32(w, lat.labels() as u32)?;
    wire::put_u32(w, lat.vocab() as u32)?;
    for &id in l.ids() {
        wire::put_u32(w, id)?;
    }
    for &v in lat.z.iter() {
        wire::put_f64(w, v)?;
    }
    Ok(())
}

/// Read a `BRTL` container; the payload is validated as a normalized lattice.
pub fn read_lattice(r: &mut impl Read) -> Result<(LatticeLogits, LabelSequence)> {
    wire::expect_magic(r, LATTICE_MAGIC)?;
    wire::expect_version(r, LATTICE_VERSION, "BRTL")?;
    let t = wire::get_u32(r)? as usize;
    let u = wire::get_u32(r)? as usize;
    let v = wire::get_u32(r)? as usize;
    let mut ids = Vec::with_capacity(u);
    for _ in 0..u {
        ids.push(wire::get_u32(r)?);
    }
    let labels = LabelSequence::new(ids)?;
    let n = t
        .checked_mul(u + 1)
        .and_then(|x| x.checked_mul(v + 1))
        .ok_or_else(|| crate::error::BrtError::Format("BRTL: extents overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(wire::get_f64(r)?);
    }
    let z = Array3::from_shape_vec((t, u + 1, v + 1), data)
        .map_err(|e| crate::error::BrtError::Format(format!("BRTL: bad shape: {e}")))?;
    Ok((LatticeLogits::new(z)?, labels))
}

pub fn write_lattice_file(path: &FsPath, lat: &LatticeLogits, l: &LabelSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lattice(&mut w, lat, l)?;
    w.flush()?;
    Ok(())
}

pub fn read_lattice_file(path: &FsPath) -> Result<(LatticeLogits, LabelSequence)> {
    let mut r = BufReader::new(File::open(path)?);
    read_lattice(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::verify::random_lattice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Single-node lattice with a chosen blank probability.
    fn single_blank_lattice(p_blank: f64) -> LatticeLogits {
        let rest = (1.0 - p_blank).ln() - std::f64::consts::LN_2;
        let z = Array3::from_shape_vec(
            (1, 1, 3),
            vec![p_blank.ln(), rest, rest],
        )
        .unwrap();
        LatticeLogits::new(z).unwrap()
    }

    #[test]
    fn single_blank_path_total() {
        let lat = single_blank_lattice(0.9);
        let total = -vanilla_loss(&lat, &LabelSequence::empty()).unwrap();
        assert!((total - 0.9f64.ln()).abs() < 1e-15, "total {total}");
    }

    #[test]
    fn unique_path_emit_then_terminal_blank() {
        // T=1, U=1: the only path emits l1 then the terminal blank.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lat, l) = random_lattice(&mut rng, 1, 1, 3);
        let a = l.ids()[0] as usize;
        let want = lat.get(0, 0, a) + lat.get(0, 1, 0);
        let fb = fb_tables(&lat, &l).unwrap();
        assert!((fb.total - want).abs() < 1e-14);
        assert!((vanilla_loss(&lat, &l).unwrap() + want).abs() < 1e-14);
    }

    #[test]
    fn backward_base_case() {
        let lat = single_blank_lattice(0.7);
        let beta = backward(&lat, &LabelSequence::empty()).unwrap();
        assert_eq!(beta[[0, 0]], lat.get(0, 0, 0));
    }

    #[test]
    fn beta_origin_equals_forward_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (lat, l) = random_lattice(&mut rng, 4, 3, 4);
            let fb = fb_tables(&lat, &l).unwrap();
            assert!((fb.beta[[0, 0]] - fb.total).abs() <= 1e-10);
        }
    }

    #[test]
    fn antidiagonal_identity_matches_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (lat, l) = random_lattice(&mut rng, 3, 2, 4);
        let fb = fb_tables(&lat, &l).unwrap();
        let (t_len, u_len) = (lat.frames(), l.len());
        for n in 0..=(t_len - 1 + u_len) {
            let mut terms = Vec::new();
            for t in 0..t_len {
                if n >= t && n - t <= u_len {
                    let u = n - t;
                    terms.push(fb.alpha[[t, u]] + fb.beta[[t, u]]);
                }
            }
            let s = log_sum_exp(&terms).unwrap();
            assert!((s - fb.total).abs() <= 1e-10, "n={n}: {s} vs {}", fb.total);
        }
    }

    #[test]
    fn total_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..30 {
            let (lat, l) = random_lattice(&mut rng, 3, 2, 3);
            let want = oracle::oracle_loss(&lat, &l, &crate::risk::RiskSpec::unit()).unwrap();
            let got = vanilla_loss(&lat, &l).unwrap();
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn deterministic_lattice_loss_is_zero() {
        // Probability-1 path: emit label 1 at the first frame, then blanks.
        let lat = crate::verify::planted_lattice(
            3,
            1,
            1,
            &[(0, 0, 1), (0, 1, 0), (1, 1, 0), (2, 1, 0)],
        );
        let l = LabelSequence::new(vec![1]).unwrap();
        let loss = vanilla_loss(&lat, &l).unwrap();
        assert!(loss.abs() <= 1e-10, "loss {loss}");
    }

    #[test]
    fn gate_single_node_equals_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (lat, l) = random_lattice(&mut rng, 1, 1, 3);
        let fb = fb_tables(&lat, &l).unwrap();
        let gates = gate_posteriors(&lat, &l, &fb).unwrap();
        assert!((gates.log_gate(1, 1) - fb.total).abs() < 1e-14);
    }

    #[test]
    fn gate_columns_normalize_to_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let (lat, l) = random_lattice(&mut rng, 5, 3, 4);
            let fb = fb_tables(&lat, &l).unwrap();
            let gates = gate_posteriors(&lat, &l, &fb).unwrap();
            for u in 1..=l.len() {
                let s = log_sum_exp(&gates.column(u)).unwrap();
                assert!((s - fb.total).abs() <= 1e-10, "u={u}");
            }
        }
    }

    #[test]
    fn gate_column_matches_oracle_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (lat, l) = random_lattice(&mut rng, 3, 2, 3);
        let fb = fb_tables(&lat, &l).unwrap();
        let gates = gate_posteriors(&lat, &l, &fb).unwrap();
        let want = oracle::oracle_gate_column(&lat, &l, 1).unwrap();
        for t in 0..lat.frames() {
            assert!((gates.column(1)[t] - want[t]).abs() <= 1e-10);
        }
    }

    #[test]
    fn gates_require_labels() {
        let lat = single_blank_lattice(0.5);
        let fb = fb_tables(&lat, &LabelSequence::empty()).unwrap();
        assert!(gate_posteriors(&lat, &LabelSequence::empty(), &fb).is_err());
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let (lat, _) = random_lattice(&mut rng, 2, 1, 2);
        let too_big = LabelSequence::new(vec![3]).unwrap();
        assert!(forward(&lat, &too_big).is_err());
        assert!(LabelSequence::new(vec![0, 1]).is_err());
    }

    #[test]
    fn unnormalized_lattice_is_rejected() {
        let z = Array3::from_elem((1, 1, 2), -0.1);
        assert!(LatticeLogits::new(z).is_err());
    }

    #[test]
    fn brtl_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (lat, l) = random_lattice(&mut rng, 4, 2, 5);
        let mut buf = Vec::new();
        write_lattice(&mut buf, &lat, &l).unwrap();
        let (lat2, l2) = read_lattice(&mut buf.as_slice()).unwrap();
        assert_eq!(l, l2);
        assert_eq!(lat.z, lat2.z);
    }

    #[test]
    fn brtl_rejects_bad_magic_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let (lat, l) = random_lattice(&mut rng, 2, 1, 2);
        let mut buf = Vec::new();
        write_lattice(&mut buf, &lat, &l).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_lattice(&mut bad.as_slice()).is_err());
        let short = &buf[..buf.len() - 3];
        assert!(read_lattice(&mut &short[..]).is_err());
    }
}
