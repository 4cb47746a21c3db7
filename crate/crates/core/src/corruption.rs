//! Forward corruption kernels, noise schedules, the Bayes posterior kernel
//! `q(z_s | z_t, z_0)` and renoising.
//!
//! All kernels act independently per position. A kernel is represented as an
//! `L × K′` matrix whose row `ℓ` is the categorical distribution of position
//! `ℓ`, with `K′` the model alphabet (`K + 1` under masking).

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::numeric::sample_index;
use crate::rng::StreamKey;
use crate::tokenspace::{TokenSequence, VocabSpec};

const STOCHASTIC_TOL: f64 = 1e-12;
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
/// Functional form of the retention schedule.
pub enum ScheduleKind {
    /// `α(t) = 1 − t`
    Linear,
    /// `α(t) = cos²(πt / 2)`
    Cosine,
    /// `α(t) = floor^t`
    LogLinear,
}

/// Retention schedule `α(t)` on `t ∈ [0, 1]`, clamped below by `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    floor: f64,
}

impl NoiseSchedule {
    /// Default lower clamp of `α(t)` for `t > 0`.
    pub const DEFAULT_FLOOR: f64 = 1e-3;

    /// Schedule of the given kind; `floor` must lie in `[0, 1)`.
    pub fn new(kind: ScheduleKind, floor: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&floor) {
            return Err(Error::InvalidArgument(format!(
                "schedule floor must be in [0, 1), got {floor}"
            )));
        }
        if kind == ScheduleKind::LogLinear && floor == 0.0 {
            return Err(Error::InvalidArgument(
                "log-linear schedule needs a positive floor".into(),
            ));
        }
        Ok(Self { kind, floor })
    }

    /// Functional form.
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Lower clamp applied for `t > 0`.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// `α(0) = 1` exactly; elsewhere the closed form clamped to `[floor, 1]`.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(1.0);
        }
        let raw = match self.kind {
            ScheduleKind::Linear => 1.0 - t,
            ScheduleKind::Cosine => {
                let c = (std::f64::consts::FRAC_PI_2 * t).cos();
                c * c
            }
            ScheduleKind::LogLinear => (t * self.floor.ln()).exp(),
        };
        Ok(raw.clamp(self.floor, 1.0))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            floor: Self::DEFAULT_FLOOR,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
/// Structure of the per-step transition matrices.
pub enum ProcessKind {
    /// Absorbing mask state at index `K`.
    Masked,
    /// Resampling from `u = 1/K`.
    Uniform,
    /// Explicit per-step matrices `Q_1 … Q_n` on the grid `t_r = r / n`.
    Generic(Vec<Array2<f64>>),
}

/// A forward corruption process over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionProcess {
    kind: ProcessKind,
    schedule: NoiseSchedule,
    vocab: VocabSpec,
}

impl CorruptionProcess {
    /// Absorbing process; `vocab` must carry a mask token.
    pub fn masked(vocab: VocabSpec, schedule: NoiseSchedule) -> Result<Self> {
        if !vocab.is_masked() {
            return Err(Error::Config(
                "masked process requires a vocabulary with a mask token".into(),
            ));
        }
        Ok(Self {
            kind: ProcessKind::Masked,
            schedule,
            vocab,
        })
    }

    /// Uniform resampling process; `vocab` must not carry a mask token.
    pub fn uniform(vocab: VocabSpec, schedule: NoiseSchedule) -> Result<Self> {
        if vocab.is_masked() {
            return Err(Error::Config(
                "uniform process forbids a mask token".into(),
            ));
        }
        Ok(Self {
            kind: ProcessKind::Uniform,
            schedule,
            vocab,
        })
    }

    /// Generic process from per-step row-stochastic `K′ × K′` matrices.
    pub fn generic(vocab: VocabSpec, steps: Vec<Array2<f64>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Config("generic process needs at least one step".into()));
        }
        let n = vocab.model_size();
        for (r, q) in steps.iter().enumerate() {
            if q.dim() != (n, n) {
                return Err(Error::Shape(format!(
                    "step matrix {r} is {:?}, expected {n}×{n}",
                    q.dim()
                )));
            }
            check_row_stochastic(q).map_err(|e| {
                Error::Validation(format!("step matrix {r}: {e}"))
            })?;
        }
        Ok(Self {
            kind: ProcessKind::Generic(steps),
            schedule: NoiseSchedule::default(),
            vocab,
        })
    }

    /// Structure of the transitions.
    pub fn kind(&self) -> &ProcessKind {
        &self.kind
    }

    /// Vocabulary the process acts on.
    pub fn vocab(&self) -> &VocabSpec {
        &self.vocab
    }

    /// Retention schedule.
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Retention `α(t)` of the schedule.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.schedule.alpha(t)
    }

    fn grid_index(&self, t: f64, steps: usize) -> Result<usize> {
        check_time(t)?;
        let scaled = t * steps as f64;
        let r = scaled.round();
        if (scaled - r).abs() > GRID_TOL {
            return Err(Error::InvalidArgument(format!(
                "time {t} is not on the {steps}-step grid of the generic process"
            )));
        }
        Ok(r as usize)
    }

    /// Closed-form kernel from `s` to `t` given the conditional retention `a`.
    fn closed_form(&self, a: f64) -> Array2<f64> {
        let k = self.vocab.size();
        let n = self.vocab.model_size();
        let mut m = Array2::zeros((n, n));
        match self.kind {
            ProcessKind::Masked => {
                for i in 0..k {
                    m[[i, i]] = a;
                    m[[i, k]] = 1.0 - a;
                }
                m[[k, k]] = 1.0;
            }
            ProcessKind::Uniform => {
                let spread = (1.0 - a) / k as f64;
                m.fill(spread);
                for i in 0..k {
                    m[[i, i]] = a + spread;
                }
            }
            ProcessKind::Generic(_) => unreachable!("closed form requested for generic process"),
        }
        m
    }

    /// `K′ × K′` matrix of `q(z_t = j | z_s = i)` for `s ≤ t`.
    pub fn transition(&self, s: f64, t: f64) -> Result<Array2<f64>> {
        check_time(s)?;
        check_time(t)?;
        if s > t {
            return Err(Error::InvalidArgument(format!(
                "transition needs s ≤ t, got s = {s}, t = {t}"
            )));
        }
        match &self.kind {
            ProcessKind::Generic(steps) => {
                let from = self.grid_index(s, steps.len())?;
                let to = self.grid_index(t, steps.len())?;
                let n = self.vocab.model_size();
                Ok(steps[from..to]
                    .iter()
                    .fold(Array2::eye(n), |acc, q| acc.dot(q)))
            }
            _ => {
                let alpha_s = self.alpha(s)?;
                if alpha_s == 0.0 {
                    return Err(Error::Singularity(s));
                }
                let alpha_t = self.alpha(t)?;
                Ok(self.closed_form(alpha_t / alpha_s))
            }
        }
    }

    /// `Q̄_t = Q_1 ⋯ Q_t`: distribution of `z_t` given each clean token.
    pub fn cumulative_matrix(&self, t: f64) -> Result<Array2<f64>> {
        self.transition(0.0, t)
    }

    /// Marginal kernel `q(z_t | z_0)` evaluated at an explicit retention `α`.
    /// Only defined for the masked and uniform closed forms.
    pub fn marginal_kernel_at_alpha(&self, z0: &TokenSequence, alpha: f64) -> Result<Array2<f64>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        if matches!(self.kind, ProcessKind::Generic(_)) {
            return Err(Error::Unsupported(
                "generic processes have no scalar retention".into(),
            ));
        }
        self.vocab.check_clean(z0)?;
        Ok(rows_for(&self.closed_form(alpha), z0))
    }

    /// `L × K′` marginal kernel `q(z_t | z_0)`.
    pub fn marginal_kernel(&self, z0: &TokenSequence, t: f64) -> Result<Array2<f64>> {
        self.vocab.check_clean(z0)?;
        let cumulative = self.cumulative_matrix(t)?;
        Ok(rows_for(&cumulative, z0))
    }

    /// Samples each position independently from its marginal kernel row.
    pub fn sample_forward(&self, z0: &TokenSequence, t: f64, key: &StreamKey) -> Result<TokenSequence> {
        let kernel = self.marginal_kernel(z0, t)?;
        Ok(sample_rows(&kernel, key))
    }

    /// Draws `z_s ∼ q(z_s | z_0)`; `s = 0` returns `z_0` unchanged.
    pub fn renoise(&self, z0: &TokenSequence, s: f64, key: &StreamKey) -> Result<TokenSequence> {
        self.vocab.check_clean(z0)?;
        if s == 0.0 {
            return Ok(z0.clone());
        }
        self.sample_forward(z0, s, key)
    }

    /// Terminal state: all-mask for masked processes, i.i.d. uniform otherwise.
    pub fn sample_terminal(&self, len: usize, key: &StreamKey) -> TokenSequence {
        match self.vocab.mask_index() {
            Some(mask) if self.kind == ProcessKind::Masked => TokenSequence::new(vec![mask; len]),
            _ => {
                let k = self.vocab.size();
                (0..len)
                    .map(|l| ((key.uniform(l as u64) * k as f64) as usize).min(k - 1))
                    .collect()
            }
        }
    }

    /// `L × K′` posterior kernel `q(z_s | z_t, z_0) ∝ q(z_t | z_s) q(z_s | z_0)`.
    pub fn posterior_kernel(
        &self,
        zt: &TokenSequence,
        z0: &TokenSequence,
        s: f64,
        t: f64,
    ) -> Result<Array2<f64>> {
        check_time(s)?;
        check_time(t)?;
        if s >= t {
            return Err(Error::InvalidArgument(format!(
                "posterior kernel needs s < t, got s = {s}, t = {t}"
            )));
        }
        if zt.len() != z0.len() {
            return Err(Error::Shape(format!(
                "z_t has length {}, z_0 has length {}",
                zt.len(),
                z0.len()
            )));
        }
        self.vocab.check_clean(z0)?;
        self.vocab.check_noisy(zt)?;
        let step = self.transition(s, t)?;
        let to_s = self.cumulative_matrix(s)?;
        let n = self.vocab.model_size();
        let mut out = Array2::zeros((zt.len(), n));
        for (l, (&noisy, &clean)) in zt.iter().zip(z0.iter()).enumerate() {
            let mut total = 0.0;
            for j in 0..n {
                let w = step[[j, noisy]] * to_s[[clean, j]];
                out[[l, j]] = w;
                total += w;
            }
            if total <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "z_t[{l}] = {noisy} is unreachable from z_0[{l}] = {clean}"
                )));
            }
            out.row_mut(l).mapv_inplace(|w| w / total);
        }
        Ok(out)
    }
}

fn rows_for(matrix: &Array2<f64>, z0: &TokenSequence) -> Array2<f64> {
    let mut out = Array2::zeros((z0.len(), matrix.ncols()));
    for (l, &token) in z0.iter().enumerate() {
        out.row_mut(l).assign(&matrix.row(token));
    }
    out
}

/// One categorical draw per row, position `ℓ` using word `ℓ` of `key`.
pub fn sample_rows(kernel: &Array2<f64>, key: &StreamKey) -> TokenSequence {
    kernel
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(l, row)| sample_index(row, key.uniform(l as u64)))
        .collect()
}

/// Checks nonnegativity and unit row sums within `1e-12`.
pub fn check_row_stochastic(m: &Array2<f64>) -> Result<()> {
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Validation(format!("row {i} has a negative entry")));
        }
        let sum = row.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn check_chapman_kolmogorov(p: &CorruptionProcess, z0: &TokenSequence, s: f64, t: f64) {
        let between = p.transition(s, t).unwrap();
        let to_s = p.marginal_kernel(z0, s).unwrap();
        let to_t = p.marginal_kernel(z0, t).unwrap();
        let n = p.vocab().model_size();
        for l in 0..z0.len() {
            for zt in 0..n {
                let composed: f64 = (0..n).map(|zs| between[[zs, zt]] * to_s[[l, zs]]).sum();
                assert!((composed - to_t[[l, zt]]).abs() < 1e-12);
            }
        }
        for row in to_t.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn chapman_kolmogorov(
            k in 2usize..=4,
            masked in any::<bool>(),
            raw in proptest::collection::vec(0usize..4, 1..6),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let vocab = VocabSpec::new(k).unwrap();
            let p = if masked {
                CorruptionProcess::masked(vocab.with_mask(), NoiseSchedule::default()).unwrap()
            } else {
                CorruptionProcess::uniform(vocab, NoiseSchedule::default()).unwrap()
            };
            let z0: TokenSequence = raw.into_iter().map(|x| x % k).collect();
            let (s, t) = if a <= b { (a, b) } else { (b, a) };
            check_chapman_kolmogorov(&p, &z0, s, t);
        }
    }
}
