//! Denoising priors `p_θ(z_0 | z_t)`.
//!
//! Two implementations are provided: an exact empirical-Bayes denoiser over a
//! finite clean dataset, and a table of per-step logits loaded from disk for
//! interop with externally trained models.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::corruption::CorruptionProcess;
use crate::error::{Error, Result};
use crate::numeric::{argmax, entropy, log_softmax, log_sum_exp, sample_index};
use crate::rng::StreamKey;
use crate::tokenspace::TokenSequence;

/// Per-position predictive distributions over the `K` clean tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    logits: Array2<f64>,
    log_probs: Array2<f64>,
}

impl DenoiserOutput {
    /// Normalises each row of `logits`. Entries may be `−∞` but every row
    /// needs at least one finite entry and none may be `NaN` or `+∞`.
    pub fn from_logits(logits: Array2<f64>) -> Result<Self> {
        if logits.nrows() == 0 || logits.ncols() < 2 {
            return Err(Error::Shape(format!("logits shape {:?}", logits.dim())));
        }
        let mut log_probs = Array2::zeros(logits.dim());
        for (l, row) in logits.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Validation(format!("logit row {l} has NaN or +inf")));
            }
            if !row.iter().any(|v| v.is_finite()) {
                return Err(Error::Validation(format!("logit row {l} has no finite entry")));
            }
            log_probs.row_mut(l).assign(&log_softmax(row));
        }
        Ok(Self { logits, log_probs })
    }

    /// Raw logits as supplied.
    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.logits.view()
    }

    /// Row-normalised log-probabilities.
    pub fn log_probs(&self) -> ArrayView2<'_, f64> {
        self.log_probs.view()
    }

    /// Row-normalised probabilities.
    pub fn probs(&self) -> Array2<f64> {
        self.log_probs.mapv(f64::exp)
    }

    /// Row entropies in nats.
    pub fn entropies(&self) -> Vec<f64> {
        self.probs().axis_iter(Axis(0)).map(entropy).collect()
    }

    /// Sequence length `L`.
    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    /// Whether there are no rows.
    pub fn is_empty(&self) -> bool {
        self.logits.nrows() == 0
    }

    /// Vocabulary size `K`.
    pub fn vocab_size(&self) -> usize {
        self.logits.ncols()
    }

    /// `Σ_ℓ log p(z_0[ℓ])` under the product of the row marginals.
    pub fn factorized_log_prob(&self, z0: &TokenSequence) -> Result<f64> {
        if z0.len() != self.len() {
            return Err(Error::Shape(format!(
                "sequence length {} vs {} rows",
                z0.len(),
                self.len()
            )));
        }
        let mut total = 0.0;
        for (l, &token) in z0.iter().enumerate() {
            if token >= self.vocab_size() {
                return Err(Error::TokenOutOfRange {
                    position: l,
                    token,
                    vocab: self.vocab_size(),
                });
            }
            total += self.log_probs[[l, token]];
        }
        Ok(total)
    }
}

/// Which joint `log p_θ(z_0; z_t)` enters the potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JointMode {
    /// Product of the per-position marginals.
    #[default]
    Factorized,
    /// The exact joint, where the prior provides one.
    Exact,
}

/// How a clean sequence is drawn from denoiser marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMode {
    /// Independent draws per position.
    Ancestral,
    /// Per-position argmax.
    #[default]
    Argmax,
}

/// Exact joint `p(z_0 | z_t)` of an empirical-Bayes prior: a finite mixture of
/// point masses blended with `ε` uniform mass over all `K^L` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactJoint {
    support: BTreeMap<TokenSequence, f64>,
    smoothing: f64,
    vocab: usize,
    len: usize,
}

impl ExactJoint {
    /// `log p(z_0 | z_t)` including the smoothing mass.
    pub fn log_prob(&self, z0: &TokenSequence) -> f64 {
        let mass = self.support.get(z0).copied().unwrap_or(0.0);
        let uniform = -(self.len as f64) * (self.vocab as f64).ln();
        match (mass > 0.0, self.smoothing > 0.0) {
            (false, false) => f64::NEG_INFINITY,
            (true, false) => mass.ln(),
            (false, true) => self.smoothing.ln() + uniform,
            (true, true) => {
                let a = (1.0 - self.smoothing).ln() + mass.ln();
                let b = self.smoothing.ln() + uniform;
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            }
        }
    }

    /// Posterior mass of each distinct dataset sequence, before smoothing.
    pub fn support(&self) -> &BTreeMap<TokenSequence, f64> {
        &self.support
    }

    /// Uniform smoothing mass `ε`.
    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }
}

/// Interface of a denoising prior.
pub trait Denoiser: Send + Sync {
    /// Per-position predictive distribution over clean tokens given `z_t` at time `t`.
    fn denoise(&self, zt: &TokenSequence, t: f64) -> Result<DenoiserOutput>;

    /// Exact joint, where the prior admits one.
    fn exact_joint(&self, _zt: &TokenSequence, _t: f64) -> Option<Result<ExactJoint>> {
        None
    }

    /// `log p_θ(z_0; z_t)` in the requested mode.
    fn joint_log_prob(
        &self,
        z0: &TokenSequence,
        zt: &TokenSequence,
        t: f64,
        mode: JointMode,
    ) -> Result<f64> {
        match mode {
            JointMode::Factorized => self.denoise(zt, t)?.factorized_log_prob(z0),
            JointMode::Exact => match self.exact_joint(zt, t) {
                Some(joint) => Ok(joint?.log_prob(z0)),
                None => Err(Error::Unsupported(
                    "this denoiser has no exact joint".into(),
                )),
            },
        }
    }
}

/// Exact Bayes denoiser for a finite clean dataset under a known process.
#[derive(Debug, Clone)]
pub struct EmpiricalBayesDenoiser {
    dataset: Vec<TokenSequence>,
    log_weights: Vec<f64>,
    smoothing: f64,
    process: CorruptionProcess,
}

impl EmpiricalBayesDenoiser {
    /// Default uniform smoothing mass.
    pub const DEFAULT_SMOOTHING: f64 = 1e-6;

    /// Uniform prior weights.
    pub fn new(dataset: Vec<TokenSequence>, process: CorruptionProcess, smoothing: f64) -> Result<Self> {
        let n = dataset.len();
        let weights = vec![1.0 / n.max(1) as f64; n];
        Self::with_weights(dataset, weights, process, smoothing)
    }

    /// Prior with explicit nonnegative item weights, normalised internally.
    pub fn with_weights(
        dataset: Vec<TokenSequence>,
        weights: Vec<f64>,
        process: CorruptionProcess,
        smoothing: f64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Config("empirical prior needs a non-empty dataset".into()));
        }
        if weights.len() != dataset.len() {
            return Err(Error::Config(format!(
                "{} weights for {} dataset items",
                weights.len(),
                dataset.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("prior weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("prior weights sum to {sum}")));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::Config(format!("smoothing {smoothing} outside [0, 1]")));
        }
        let len = dataset[0].len();
        if len == 0 {
            return Err(Error::Config("dataset sequences must be non-empty".into()));
        }
        for (i, item) in dataset.iter().enumerate() {
            if item.len() != len {
                return Err(Error::Config(format!(
                    "dataset item {i} has length {}, expected {len}",
                    item.len()
                )));
            }
            process.vocab().check_clean(item)?;
        }
        Ok(Self {
            dataset,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            smoothing,
            process,
        })
    }

    /// Support sequences.
    pub fn dataset(&self) -> &[TokenSequence] {
        &self.dataset
    }

    /// Forward process the posterior is computed under.
    pub fn process(&self) -> &CorruptionProcess {
        &self.process
    }

    /// Uniform smoothing mass `ε`.
    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Length of every support sequence.
    pub fn seq_len(&self) -> usize {
        self.dataset[0].len()
    }

    /// Normalised posterior weights over dataset items given `z_t`.
    pub fn item_weights(&self, zt: &TokenSequence, t: f64) -> Result<Vec<f64>> {
        if zt.len() != self.seq_len() {
            return Err(Error::Shape(format!(
                "z_t has length {}, prior expects {}",
                zt.len(),
                self.seq_len()
            )));
        }
        self.process.vocab().check_noisy(zt)?;
        let q = self.process.cumulative_matrix(t)?;
        let log_q = q.mapv(f64::ln);
        let scores: Vec<f64> = self
            .dataset
            .iter()
            .zip(&self.log_weights)
            .map(|(item, &lw)| {
                lw + item
                    .iter()
                    .zip(zt.iter())
                    .map(|(&x, &z)| log_q[[x, z]])
                    .sum::<f64>()
            })
            .collect();
        let lse = log_sum_exp(ndarray::ArrayView1::from(&scores));
        if lse == f64::NEG_INFINITY {
            return Err(Error::Degenerate(
                "every dataset item has zero likelihood under z_t".into(),
            ));
        }
        Ok(scores.iter().map(|s| (s - lse).exp()).collect())
    }
}

impl Denoiser for EmpiricalBayesDenoiser {
    fn denoise(&self, zt: &TokenSequence, t: f64) -> Result<DenoiserOutput> {
        let weights = self.item_weights(zt, t)?;
        let k = self.process.vocab().size();
        let mut marginals = Array2::<f64>::zeros((self.seq_len(), k));
        for (item, &w) in self.dataset.iter().zip(&weights) {
            for (l, &x) in item.iter().enumerate() {
                marginals[[l, x]] += w;
            }
        }
        let eps = self.smoothing;
        let uniform = 1.0 / k as f64;
        marginals.mapv_inplace(|p| ((1.0 - eps) * p + eps * uniform).ln());
        DenoiserOutput::from_logits(marginals)
    }

    fn exact_joint(&self, zt: &TokenSequence, t: f64) -> Option<Result<ExactJoint>> {
        Some(self.item_weights(zt, t).map(|weights| {
            let mut support = BTreeMap::new();
            for (item, w) in self.dataset.iter().zip(weights) {
                if w > 0.0 {
                    *support.entry(item.clone()).or_insert(0.0) += w;
                }
            }
            ExactJoint {
                support,
                smoothing: self.smoothing,
                vocab: self.process.vocab().size(),
                len: self.seq_len(),
            }
        }))
    }
}

/// Serves one stored `L × K` logit matrix per outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLogitsDenoiser {
    steps: Vec<DenoiserOutput>,
}

impl ExternalLogitsDenoiser {
    /// Denoiser from a `T × L × K` logit table.
    pub fn new(table: Array3<f64>) -> Result<Self> {
        if table.shape()[0] == 0 {
            return Err(Error::Config("logit table has no steps".into()));
        }
        let steps = table
            .axis_iter(Axis(0))
            .map(|m| DenoiserOutput::from_logits(m.to_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps })
    }

    /// Reads a logit table from a binary tensor file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        Self::new(read_tensor(&mut file)?)
    }

    /// Number of stored steps `T`.
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Step index serving time `t`: `t ∈ ((r−1)/T, r/T]` maps to `r − 1`,
    /// with `t = 0` sharing the first step.
    pub fn step_for_time(&self, t: f64) -> usize {
        let n = self.steps.len();
        let r = (t * n as f64 - 1e-9).ceil().clamp(1.0, n as f64) as usize;
        r - 1
    }
}

impl Denoiser for ExternalLogitsDenoiser {
    fn denoise(&self, zt: &TokenSequence, t: f64) -> Result<DenoiserOutput> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        let out = &self.steps[self.step_for_time(t)];
        if zt.len() != out.len() {
            return Err(Error::Shape(format!(
                "z_t has length {}, stored logits have {} rows",
                zt.len(),
                out.len()
            )));
        }
        Ok(out.clone())
    }
}

/// Draws a clean sequence from denoiser marginals, one word of `key` per position.
pub fn sample_clean(output: &DenoiserOutput, key: &StreamKey, mode: SampleMode) -> TokenSequence {
    match mode {
        SampleMode::Argmax => output.log_probs.axis_iter(Axis(0)).map(argmax).collect(),
        SampleMode::Ancestral => output
            .probs()
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(l, row)| sample_index(row, key.uniform(l as u64)))
            .collect(),
    }
}

const MAGIC: &[u8; 4] = b"DLPS";
const VERSION: u8 = 1;

/// Reads one `steps × rows × cols` little-endian `f32` record.
pub fn read_tensor(reader: &mut impl Read) -> Result<Array3<f64>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes in logits file".into()));
    }
    let mut version = [0u8; 1];
    reader.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(Error::Format(format!("unsupported logits file version {}", version[0])));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut buf = [0u8; 4];
        reader.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| Error::Format("logits file dimensions overflow".into()))?;
    let mut bytes = vec![0u8; count * 4];
    reader.read_exact(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Array3::from_shape_vec((dims[0], dims[1], dims[2]), values)
        .map_err(|e| Error::Format(e.to_string()))
}

/// Writes one record; values are narrowed to `f32`.
pub fn write_tensor(writer: &mut impl Write, tensor: &Array3<f64>) -> Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_all(&[VERSION])?;
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        writer.write_all(&d.to_le_bytes())?;
    }
    for &v in tensor.iter() {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{NoiseSchedule, ScheduleKind};
    use crate::tokenspace::VocabSpec;
    use ndarray::array;

    fn linear_uniform(k: usize) -> CorruptionProcess {
        CorruptionProcess::uniform(
            VocabSpec::new(k).unwrap(),
            NoiseSchedule::new(ScheduleKind::Linear, 1e-3).unwrap(),
        )
        .unwrap()
    }

    fn two_items(smoothing: f64) -> EmpiricalBayesDenoiser {
        EmpiricalBayesDenoiser::new(
            vec![vec![0, 0].into(), vec![1, 1].into()],
            linear_uniform(2),
            smoothing,
        )
        .unwrap()
    }

    #[test]
    fn balanced_evidence_gives_half() {
        let out = two_items(0.0).denoise(&vec![0, 1].into(), 0.5).unwrap();
        for p in out.probs().iter() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn agreeing_evidence_gives_nine_tenths() {
        let out = two_items(0.0).denoise(&vec![0, 0].into(), 0.5).unwrap();
        let p = out.probs();
        assert!((p[[1, 0]] - 0.9).abs() < 1e-12);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn no_corruption_gives_point_mass() {
        let out = two_items(0.0).denoise(&vec![1, 1].into(), 0.0).unwrap();
        assert_eq!(out.probs(), array![[0.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn empty_dataset_is_config_error() {
        assert!(matches!(
            EmpiricalBayesDenoiser::new(vec![], linear_uniform(2), 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn masked_off_support_is_degenerate() {
        let process = CorruptionProcess::masked(
            VocabSpec::new(2).unwrap().with_mask(),
            NoiseSchedule::default(),
        )
        .unwrap();
        let d = EmpiricalBayesDenoiser::new(vec![vec![0, 0].into()], process, 0.0).unwrap();
        assert!(matches!(d.denoise(&vec![1, 2].into(), 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn factorized_uniform_joint() {
        let out = DenoiserOutput::from_logits(Array2::zeros((3, 2))).unwrap();
        let lp = out.factorized_log_prob(&vec![0, 1, 0].into()).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exact_joint_off_support() {
        let d = two_items(0.0);
        let lp = d
            .joint_log_prob(&vec![0, 1].into(), &vec![0, 1].into(), 0.5, JointMode::Exact)
            .unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
        let smoothed = two_items(1e-6)
            .joint_log_prob(&vec![0, 1].into(), &vec![0, 1].into(), 0.5, JointMode::Exact)
            .unwrap();
        assert!((smoothed - (1e-6f64 * 0.25).ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_joint_matches_enumeration() {
        let k = 2;
        let process = linear_uniform(k);
        let data: Vec<TokenSequence> = vec![
            vec![0, 0, 0, 0].into(),
            vec![1, 1, 0, 0].into(),
            vec![0, 1, 1, 0].into(),
            vec![1, 1, 1, 1].into(),
            vec![0, 1, 0, 1].into(),
        ];
        let weights = vec![0.1, 0.3, 0.2, 0.25, 0.15];
        let d = EmpiricalBayesDenoiser::with_weights(data.clone(), weights.clone(), process, 0.0)
            .unwrap();
        let zt: TokenSequence = vec![0, 1, 1, 1].into();
        let alpha = 0.6;
        let t = 1.0 - alpha;
        let q = |x: usize, z: usize| if x == z { alpha + (1.0 - alpha) / 2.0 } else { (1.0 - alpha) / 2.0 };
        // Direct summation over all 16 clean states.
        let mut unnorm = vec![0.0; 16];
        for (id, slot) in unnorm.iter_mut().enumerate() {
            let z0: Vec<usize> = (0..4).map(|l| (id >> l) & 1).collect();
            let prior: f64 = data
                .iter()
                .zip(&weights)
                .filter(|(x, _)| x.as_slice() == z0.as_slice())
                .map(|(_, w)| w)
                .sum();
            let lik: f64 = z0.iter().zip(zt.iter()).map(|(&x, &z)| q(x, z)).product();
            *slot = prior * lik;
        }
        let total: f64 = unnorm.iter().sum();
        for (id, &u) in unnorm.iter().enumerate() {
            let z0: TokenSequence = (0..4).map(|l| (id >> l) & 1).collect();
            let lp = d.joint_log_prob(&z0, &zt, t, JointMode::Exact).unwrap();
            if u == 0.0 {
                assert_eq!(lp, f64::NEG_INFINITY);
            } else {
                assert!((lp - (u / total).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn factorized_equals_exact_for_product_dataset() {
        // Every combination of two independent positions, uniform weights.
        let data: Vec<TokenSequence> = (0..3)
            .flat_map(|a| (0..3).map(move |b| vec![a, b].into()))
            .collect();
        let d = EmpiricalBayesDenoiser::new(data, linear_uniform(3), 0.0).unwrap();
        let zt: TokenSequence = vec![2, 0].into();
        for a in 0..3 {
            for b in 0..3 {
                let z0: TokenSequence = vec![a, b].into();
                let f = d.joint_log_prob(&z0, &zt, 0.35, JointMode::Factorized).unwrap();
                let e = d.joint_log_prob(&z0, &zt, 0.35, JointMode::Exact).unwrap();
                assert!((f - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn smoothed_joint_is_consistent_with_smoothed_marginals() {
        let d = two_items(0.01);
        let zt: TokenSequence = vec![0, 1].into();
        let out = d.denoise(&zt, 0.3).unwrap();
        let joint = d.exact_joint(&zt, 0.3).unwrap().unwrap();
        for l in 0..2 {
            for k in 0..2 {
                let marginal: f64 = (0..4usize)
                    .map(|id| vec![id & 1, id >> 1].into())
                    .filter(|z: &TokenSequence| z[l] == k)
                    .map(|z| joint.log_prob(&z).exp())
                    .sum();
                assert!((marginal - out.probs()[[l, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn denoise_is_permutation_invariant() {
        let data: Vec<TokenSequence> = vec![
            vec![0, 1, 2].into(),
            vec![2, 2, 1].into(),
            vec![1, 0, 0].into(),
        ];
        let mut reversed = data.clone();
        reversed.reverse();
        let zt: TokenSequence = vec![2, 1, 0].into();
        let a = EmpiricalBayesDenoiser::new(data, linear_uniform(3), 1e-6).unwrap();
        let b = EmpiricalBayesDenoiser::new(reversed, linear_uniform(3), 1e-6).unwrap();
        let pa = a.denoise(&zt, 0.4).unwrap().probs();
        let pb = b.denoise(&zt, 0.4).unwrap().probs();
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn small_time_concentrates_on_matching_item() {
        let data: Vec<TokenSequence> = vec![vec![0, 1, 1].into(), vec![1, 0, 1].into()];
        let d = EmpiricalBayesDenoiser::new(data, linear_uniform(2), 0.0).unwrap();
        let out = d.denoise(&vec![1, 0, 1].into(), 1e-6).unwrap();
        let z = sample_clean(&out, &StreamKey::new(0), SampleMode::Argmax);
        assert_eq!(z.as_slice(), &[1, 0, 1]);
        assert!(out.probs()[[0, 1]] > 1.0 - 1e-5);
    }

    #[test]
    fn sample_clean_modes() {
        let point = DenoiserOutput::from_logits(array![[0.0, f64::NEG_INFINITY], [f64::NEG_INFINITY, 0.0]]).unwrap();
        for seed in 0..10 {
            let z = sample_clean(&point, &StreamKey::new(seed), SampleMode::Ancestral);
            assert_eq!(z.as_slice(), &[0, 1]);
        }
        let out = DenoiserOutput::from_logits(array![[0.9f64.ln(), 0.1f64.ln()]]).unwrap();
        assert_eq!(sample_clean(&out, &StreamKey::new(0), SampleMode::Argmax).as_slice(), &[0]);

        let uniform = DenoiserOutput::from_logits(Array2::zeros((1, 2))).unwrap();
        let n = 100_000;
        let ones = (0..n)
            .filter(|&i| sample_clean(&uniform, &StreamKey::new(4).child(i), SampleMode::Ancestral)[0] == 1)
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn logits_validation() {
        assert!(DenoiserOutput::from_logits(array![[f64::NAN, 0.0]]).is_err());
        assert!(DenoiserOutput::from_logits(array![[f64::NEG_INFINITY, f64::NEG_INFINITY]]).is_err());
        let out = DenoiserOutput::from_logits(array![[3.0, 1.0, -2.0]]).unwrap();
        assert!((out.probs().sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tensor_round_trip_and_step_lookup() {
        let table = Array3::from_shape_fn((3, 2, 4), |(s, l, k)| (s * 8 + l * 4 + k) as f64 * 0.25);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &table).unwrap();
        assert_eq!(&buf[..5], b"DLPS\x01");
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, table);

        let d = ExternalLogitsDenoiser::new(table).unwrap();
        assert_eq!(d.step_for_time(0.0), 0);
        assert_eq!(d.step_for_time(1.0 / 3.0), 0);
        assert_eq!(d.step_for_time(0.5), 1);
        assert_eq!(d.step_for_time(1.0), 2);
        let out = d.denoise(&vec![0, 0].into(), 1.0).unwrap();
        assert_eq!(out.logits()[[1, 3]], (16 + 4 + 3) as f64 * 0.25);
        assert!(d
            .joint_log_prob(&vec![0, 0].into(), &vec![0, 0].into(), 1.0, JointMode::Exact)
            .is_err());

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
    }
}
