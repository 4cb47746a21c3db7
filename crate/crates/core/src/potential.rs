//! The log-posterior potential
//! `U(z₀) = −β·D(A(decode z₀) − y) + log p_θ(z₀; z_t)`, its gradient on the
//! one-hot relaxation, discrete prior deltas, and a bilinear contrastive
//! surrogate for the likelihood gradient.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::log_softmax;
use crate::operators::{DataFit, ForwardOperator, Measurement};
use crate::prior::{Denoiser, DenoiserOutput, ExactJoint, JointMode};
use crate::rng::StreamKey;
use crate::tokenspace::{decode, decode_relaxed, OneHotSequence, TokenSequence, VocabSpec};

/// Source of the likelihood term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodMode {
    /// `−β·D(A(x) − y)` with the configured data fit.
    #[default]
    Explicit,
    /// `β·⟨F x, G y⟩ / τ` from a bilinear surrogate.
    Surrogate,
}

/// Weights and modes of the potential `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialConfig {
    /// Data-fit weights of the explicit likelihood.
    pub fit: DataFit,
    /// Multiplies the likelihood term only.
    pub beta: f64,
    /// Joint used for the prior term.
    pub prior_mode: JointMode,
    /// Likelihood source.
    pub likelihood_mode: LikelihoodMode,
}

impl PotentialConfig {
    /// Rejects negative or non-finite `β` and invalid data fits.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("β must be finite and ≥ 0, got {}", self.beta)));
        }
        if self.likelihood_mode == LikelihoodMode::Explicit {
            self.fit.validate()?;
        }
        Ok(())
    }

    /// The same configuration with likelihood weight `beta`.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// The measurement side of a problem: operator, observation, vocabulary and
/// an optional surrogate likelihood.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Forward operator `A`.
    pub operator: ForwardOperator,
    /// Observation `y`.
    pub measurement: Measurement,
    /// Clean vocabulary of the unknown.
    pub vocab: VocabSpec,
    /// Surrogate likelihood, if any.
    pub surrogate: Option<BilinearSurrogate>,
}

impl Problem {
    /// Problem with matching measurement length and a compatible vocabulary.
    pub fn new(operator: ForwardOperator, measurement: Measurement, vocab: VocabSpec) -> Result<Self> {
        if measurement.len() != operator.output_dim() {
            return Err(Error::Shape(format!(
                "measurement has length {}, operator output is {}",
                measurement.len(),
                operator.output_dim()
            )));
        }
        if operator.requires_binary() && vocab.size() != 2 {
            return Err(Error::Config(format!(
                "pairwise boolean operators need K = 2, got K = {}",
                vocab.size()
            )));
        }
        Ok(Self {
            operator,
            measurement,
            vocab,
            surrogate: None,
        })
    }

    /// Attaches a surrogate whose input and measurement widths match.
    pub fn with_surrogate(mut self, surrogate: BilinearSurrogate) -> Result<Self> {
        surrogate.check_dims(self.len(), self.measurement.len())?;
        self.surrogate = Some(surrogate);
        Ok(self)
    }

    /// Number of unknown tokens.
    pub fn len(&self) -> usize {
        self.operator.grid().len()
    }

    /// Whether there are no unknowns.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn surrogate(&self) -> Result<&BilinearSurrogate> {
        self.surrogate
            .as_ref()
            .ok_or_else(|| Error::Config("surrogate likelihood requested but none supplied".into()))
    }

    /// Likelihood term `β·log p(y | x)` up to a constant, on a decoded image.
    pub fn log_likelihood(&self, x: &[f64], cfg: &PotentialConfig) -> Result<f64> {
        if cfg.beta == 0.0 {
            return Ok(0.0);
        }
        Ok(match cfg.likelihood_mode {
            LikelihoodMode::Explicit => -cfg.beta * self.operator.data_fit(x, &self.measurement, &cfg.fit)?,
            LikelihoodMode::Surrogate => cfg.beta * self.surrogate()?.similarity(x, &self.measurement.values)?,
        })
    }

    /// `∂/∂x` of [`log_likelihood`](Self::log_likelihood).
    pub fn likelihood_gradient(&self, x: &[f64], cfg: &PotentialConfig) -> Result<Vec<f64>> {
        let mut g = match cfg.likelihood_mode {
            LikelihoodMode::Explicit => self.operator.residual_gradient(x, &self.measurement, &cfg.fit)?,
            LikelihoodMode::Surrogate => self.surrogate()?.input_gradient(&self.measurement.values)?,
        };
        g.iter_mut().for_each(|v| *v *= cfg.beta);
        Ok(g)
    }
}

/// The prior at one outer step: denoiser marginals plus, when requested, the
/// exact joint.
#[derive(Debug, Clone)]
pub struct PriorTerm {
    /// Denoiser marginals at `z_t`.
    pub output: DenoiserOutput,
    /// Exact joint, present in exact mode.
    pub exact: Option<ExactJoint>,
}

impl PriorTerm {
    /// Queries `denoiser` at `(z_t, t)`; fetches the exact joint in exact mode.
    pub fn evaluate(denoiser: &dyn Denoiser, zt: &TokenSequence, t: f64, mode: JointMode) -> Result<Self> {
        let output = denoiser.denoise(zt, t)?;
        let exact = match mode {
            JointMode::Factorized => None,
            JointMode::Exact => Some(denoiser.exact_joint(zt, t).ok_or_else(|| {
                Error::Unsupported("exact prior mode needs a denoiser with an exact joint".into())
            })??),
        };
        Ok(Self { output, exact })
    }

    /// Marginals only.
    pub fn factorized(output: DenoiserOutput) -> Self {
        Self { output, exact: None }
    }

    /// `log p_θ(z_0; z_t)` in the requested mode.
    pub fn log_prob(&self, z0: &TokenSequence, mode: JointMode) -> Result<f64> {
        match mode {
            JointMode::Factorized => self.output.factorized_log_prob(z0),
            JointMode::Exact => self
                .exact
                .as_ref()
                .map(|j| j.log_prob(z0))
                .ok_or_else(|| Error::Unsupported("no exact joint available".into())),
        }
    }
}

/// `U(z₀; z_t, y)`.
pub fn potential_value(problem: &Problem, prior: &PriorTerm, z0: &TokenSequence, cfg: &PotentialConfig) -> Result<f64> {
    let x = decode(z0, &problem.vocab)?;
    Ok(problem.log_likelihood(&x, cfg)? + prior.log_prob(z0, cfg.prior_mode)?)
}

/// Continuous extension of `U` to the relaxed simplex; linear in `w` on the
/// prior side.
pub fn potential_relaxed(problem: &Problem, prior: &PriorTerm, w: &OneHotSequence, cfg: &PotentialConfig) -> Result<f64> {
    require_factorized(cfg)?;
    let x = decode_relaxed(w, &problem.vocab)?;
    let prior_part: f64 = (&w.weights() * &prior.output.log_probs())
        .iter()
        .filter(|v| !v.is_nan())
        .sum();
    Ok(problem.log_likelihood(&x, cfg)? + prior_part)
}

fn require_factorized(cfg: &PotentialConfig) -> Result<()> {
    if cfg.prior_mode == JointMode::Exact {
        return Err(Error::Unsupported(
            "the exact joint has no continuous extension".into(),
        ));
    }
    Ok(())
}

/// Pulls an intensity-space gradient back to one-hot coordinates:
/// entry `(ℓ, k)` is `intensity(k) · g[ℓ]`.
pub fn pull_back(g: &[f64], vocab: &VocabSpec) -> Array2<f64> {
    let k = vocab.size();
    Array2::from_shape_fn((g.len(), k), |(l, j)| vocab.intensity(j) * g[l])
}

/// Likelihood part of the one-hot gradient.
pub fn likelihood_gradient_one_hot(problem: &Problem, w: &OneHotSequence, cfg: &PotentialConfig) -> Result<Array2<f64>> {
    let x = decode_relaxed(w, &problem.vocab)?;
    Ok(pull_back(&problem.likelihood_gradient(&x, cfg)?, &problem.vocab))
}

/// `∂U/∂w`: the pulled-back likelihood gradient plus the prior log-probs.
pub fn gradient_one_hot(problem: &Problem, prior: &PriorTerm, w: &OneHotSequence, cfg: &PotentialConfig) -> Result<Array2<f64>> {
    require_factorized(cfg)?;
    let mut g = likelihood_gradient_one_hot(problem, w, cfg)?;
    g += &prior.output.log_probs();
    Ok(g)
}

/// `Δ[ℓ, k] = log p(k) − log p(z₀[ℓ])` under the factorized prior.
pub fn prior_deltas(output: &DenoiserOutput, z0: &TokenSequence) -> Result<Array2<f64>> {
    if z0.len() != output.len() {
        return Err(Error::Shape(format!("z0 has length {}, prior has {} rows", z0.len(), output.len())));
    }
    let lp = output.log_probs();
    let mut d = Array2::zeros(lp.dim());
    for (l, &z) in z0.iter().enumerate() {
        let own = lp[[l, z]];
        for k in 0..lp.ncols() {
            d[[l, k]] = if k == z { 0.0 } else { lp[[l, k]] - own };
        }
    }
    Ok(d)
}

/// Linear encoders `f(x) = F x`, `g(y) = G y` with score `⟨F x, G y⟩ / τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSurrogate {
    /// Input encoder `F`.
    pub f: Array2<f64>,
    /// Measurement encoder `G`.
    pub g: Array2<f64>,
    /// Temperature `τ > 0`.
    pub tau: f64,
}

impl BilinearSurrogate {
    /// Surrogate with equal encoder widths, finite entries and `τ > 0`.
    pub fn new(f: Array2<f64>, g: Array2<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("surrogate temperature must be > 0, got {tau}")));
        }
        if f.nrows() != g.nrows() {
            return Err(Error::Shape(format!(
                "encoder widths differ: F has {} rows, G has {}",
                f.nrows(),
                g.nrows()
            )));
        }
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("surrogate encoders must be finite".into()));
        }
        Ok(Self { f, g, tau })
    }

    fn check_dims(&self, x_len: usize, y_len: usize) -> Result<()> {
        if self.f.ncols() != x_len || self.g.ncols() != y_len {
            return Err(Error::Shape(format!(
                "surrogate expects ({}, {}) inputs, got ({x_len}, {y_len})",
                self.f.ncols(),
                self.g.ncols()
            )));
        }
        Ok(())
    }

    /// `⟨F x, G y⟩ / τ`.
    pub fn similarity(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dims(x.len(), y.len())?;
        let a = self.f.dot(&Array1::from(x.to_vec()));
        let b = self.g.dot(&Array1::from(y.to_vec()));
        Ok(a.dot(&b) / self.tau)
    }

    /// `∇ₓ ⟨F x, G y⟩ / τ = Fᵀ G y / τ`, independent of `x`.
    pub fn input_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.g.ncols() {
            return Err(Error::Shape(format!("y has length {}, G expects {}", y.len(), self.g.ncols())));
        }
        let b = self.g.dot(&Array1::from(y.to_vec()));
        Ok(self.f.t().dot(&b).mapv(|v| v / self.tau).to_vec())
    }

    /// Writes `F` then `G` as two consecutive logits-file records.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Writes `F` then `G` to `writer`.
    pub fn write(&self, writer: &mut impl Write) -> Result<()> {
        for m in [&self.f, &self.g] {
            let t = m.clone().insert_axis(Axis(0));
            crate::prior::write_tensor(writer, &t)?;
        }
        Ok(())
    }

    /// Reads a surrogate saved by [`save`](Self::save).
    pub fn load(path: &Path, tau: f64) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut file, tau)
    }

    /// Reads `F` then `G` from `reader`.
    pub fn read(reader: &mut impl Read, tau: f64) -> Result<Self> {
        let mut take = || -> Result<Array2<f64>> {
            let t: Array3<f64> = crate::prior::read_tensor(reader)?;
            if t.shape()[0] != 1 {
                return Err(Error::Format("surrogate records must have one step".into()));
            }
            Ok(t.index_axis(Axis(0), 0).to_owned())
        };
        let f = take()?;
        let g = take()?;
        Self::new(f, g, tau)
    }
}

/// `(1/τ)·∇_w ⟨F · decode_relaxed(w), G y⟩`; constant in `w`.
pub fn surrogate_gradient(w: &OneHotSequence, y: &[f64], surrogate: &BilinearSurrogate, vocab: &VocabSpec) -> Result<Array2<f64>> {
    if w.vocab_size() != vocab.size() {
        return Err(Error::Shape(format!("w has {} columns, vocabulary has {}", w.vocab_size(), vocab.size())));
    }
    surrogate.check_dims(w.len(), y.len())?;
    Ok(pull_back(&surrogate.input_gradient(y)?, vocab))
}

/// InfoNCE loss with in-batch negatives and its gradients in `F` and `G`.
pub fn infonce_loss(
    f: &Array2<f64>,
    g: &Array2<f64>,
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    tau: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = xs.nrows() as f64;
    let a = xs.dot(&f.t());
    let b = ys.dot(&g.t());
    let scores = a.dot(&b.t()) / tau;
    let mut loss = 0.0;
    let mut d_scores = Array2::zeros(scores.dim());
    for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
        let lp = log_softmax(row);
        loss -= lp[i];
        let mut d = lp.mapv(f64::exp);
        d[i] -= 1.0;
        d_scores.row_mut(i).assign(&(d / n));
    }
    let d_a = d_scores.dot(&b) / tau;
    let d_b = d_scores.t().dot(&a) / tau;
    (loss / n, d_a.t().dot(&xs), d_b.t().dot(&ys))
}

/// Mean posterior mass on the matching index, `mean_i q(I = i | x_i, Ỹ)`.
pub fn matching_posterior(surrogate: &BilinearSurrogate, xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> f64 {
    let scores = xs.dot(&surrogate.f.t()).dot(&ys.dot(&surrogate.g.t()).t()) / surrogate.tau;
    let n = scores.nrows();
    scores
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| log_softmax(row)[i].exp())
        .sum::<f64>()
        / n as f64
}

/// Result of [`infonce_fit`], with the loss before each step and at the end.
#[derive(Debug, Clone)]
pub struct InfonceFit {
    /// Fitted encoders.
    pub surrogate: BilinearSurrogate,
    /// Loss before each step followed by the final loss.
    pub losses: Vec<f64>,
}

/// Fits linear encoders by gradient descent on the InfoNCE loss. Rows of
/// `xs` and `ys` are paired samples.
pub fn infonce_fit(
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    dim: usize,
    tau: f64,
    steps: usize,
    lr: f64,
    key: &StreamKey,
) -> Result<InfonceFit> {
    if xs.nrows() < 2 || xs.nrows() != ys.nrows() {
        return Err(Error::InvalidArgument(format!(
            "InfoNCE needs at least two paired samples, got {} and {}",
            xs.nrows(),
            ys.nrows()
        )));
    }
    if dim == 0 || !(tau > 0.0) || !(lr > 0.0) {
        return Err(Error::InvalidArgument("need dim ≥ 1, τ > 0 and lr > 0".into()));
    }
    let normal = Normal::new(0.0, 0.1).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = key.rng();
    let mut f = Array2::from_shape_simple_fn((dim, xs.ncols()), || normal.sample(&mut rng));
    let mut g = Array2::from_shape_simple_fn((dim, ys.ncols()), || normal.sample(&mut rng));
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, df, dg) = infonce_loss(&f, &g, xs, ys, tau);
        losses.push(loss);
        f.scaled_add(-lr, &df);
        g.scaled_add(-lr, &dg);
    }
    losses.push(infonce_loss(&f, &g, xs, ys, tau).0);
    Ok(InfonceFit {
        surrogate: BilinearSurrogate::new(f, g, tau)?,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{ImageGrid, OperatorKind};
    use crate::tokenspace::to_one_hot;
    use ndarray::array;
    use rand::Rng;

    fn identity_problem(y: Vec<f64>, k: usize) -> Problem {
        let grid = ImageGrid::new(1, y.len(), 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Identity, grid).unwrap();
        Problem::new(op, Measurement::new(y, 0.1).unwrap(), VocabSpec::new(k).unwrap()).unwrap()
    }

    fn cfg(beta: f64) -> PotentialConfig {
        PotentialConfig {
            fit: DataFit::gaussian(0.5).unwrap(),
            beta,
            prior_mode: JointMode::Factorized,
            likelihood_mode: LikelihoodMode::Explicit,
        }
    }

    fn prior_from(rows: Array2<f64>) -> PriorTerm {
        PriorTerm::factorized(DenoiserOutput::from_logits(rows).unwrap())
    }

    #[test]
    fn zero_beta_is_prior_only() {
        let p = identity_problem(vec![0.3, 0.9], 2);
        let prior = prior_from(array![[0.2, -1.0], [0.5, 0.1]]);
        let z: TokenSequence = vec![1, 0].into();
        let u = potential_value(&p, &prior, &z, &cfg(0.0)).unwrap();
        assert_eq!(u, prior.log_prob(&z, JointMode::Factorized).unwrap());
        let w = to_one_hot(&z, &p.vocab).unwrap();
        let g = gradient_one_hot(&p, &prior, &w, &cfg(0.0)).unwrap();
        assert_eq!(g, prior.output.log_probs().to_owned());
    }

    #[test]
    fn zero_residual_is_prior_only() {
        let p = identity_problem(vec![1.0, 0.0], 2);
        let prior = prior_from(array![[0.2, -1.0], [0.5, 0.1]]);
        let z: TokenSequence = vec![1, 0].into();
        let u = potential_value(&p, &prior, &z, &cfg(3.0)).unwrap();
        assert_eq!(u, prior.log_prob(&z, JointMode::Factorized).unwrap());
        let w = to_one_hot(&z, &p.vocab).unwrap();
        let g = gradient_one_hot(&p, &prior_from(Array2::zeros((2, 2))), &w, &cfg(3.0)).unwrap();
        for row in g.rows() {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn exact_mode_has_no_gradient() {
        let p = identity_problem(vec![0.0], 2);
        let prior = prior_from(Array2::zeros((1, 2)));
        let mut c = cfg(1.0);
        c.prior_mode = JointMode::Exact;
        let w = to_one_hot(&vec![0].into(), &p.vocab).unwrap();
        assert!(matches!(gradient_one_hot(&p, &prior, &w, &c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn gradient_matches_finite_differences_on_simplex() {
        let k = 4;
        let p = identity_problem(vec![0.1, 0.7, 0.4], k);
        let prior = prior_from(Array2::zeros((3, k)));
        let mut rng = StreamKey::new(5).rng();
        let raw = Array2::from_shape_simple_fn((3, k), || rng.random::<f64>() + 0.1);
        let sums = raw.sum_axis(Axis(1)).insert_axis(Axis(1));
        let w = raw / &sums;
        let c = cfg(1.7);
        let g = gradient_one_hot(&p, &prior, &OneHotSequence::new(w.clone()).unwrap(), &c).unwrap();
        let h = 1e-4;
        let u = |m: &Array2<f64>| {
            // Off-simplex evaluation: the extension is defined on the affine hull.
            let x: Vec<f64> = m.rows().into_iter().map(|r| r.iter().enumerate().map(|(j, v)| v * p.vocab.intensity(j)).sum()).collect();
            p.log_likelihood(&x, &c).unwrap() + (m * &prior.output.log_probs()).sum()
        };
        for l in 0..3 {
            for j in 0..k {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[[l, j]] += h;
                wm[[l, j]] -= h;
                let fd = (u(&wp) - u(&wm)) / (2.0 * h);
                assert!((fd - g[[l, j]]).abs() <= 1e-5 * fd.abs().max(1e-3));
            }
            // Column differences scale with the intensity step.
            let d1 = g[[l, 1]] - g[[l, 0]];
            let d3 = g[[l, 3]] - g[[l, 0]];
            assert!((d3 - 3.0 * d1).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_delta_examples() {
        let out = DenoiserOutput::from_logits(array![[0.9f64.ln(), 0.1f64.ln()], [0.0, 1.0]]).unwrap();
        let z: TokenSequence = vec![0, 1].into();
        let d = prior_deltas(&out, &z).unwrap();
        assert_eq!(d[[0, 0]], 0.0);
        assert_eq!(d[[1, 1]], 0.0);
        assert!((d[[0, 1]] - (1.0f64 / 9.0).ln()).abs() < 1e-14);
        let base = out.factorized_log_prob(&z).unwrap();
        for l in 0..2 {
            for k in 0..2 {
                let moved = out.factorized_log_prob(&z.with_token(l, k)).unwrap();
                assert!((moved - base - d[[l, k]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn surrogate_examples() {
        let vocab = VocabSpec::new(2).unwrap();
        let w = to_one_hot(&vec![0, 1, 1].into(), &vocab).unwrap();
        let y = vec![0.5, -0.2];
        let zero = BilinearSurrogate::new(Array2::zeros((2, 3)), Array2::zeros((2, 2)), 1.0).unwrap();
        assert_eq!(surrogate_gradient(&w, &y, &zero, &vocab).unwrap(), Array2::zeros((3, 2)));

        let ones = BilinearSurrogate::new(Array2::ones((1, 3)), Array2::ones((1, 2)), 1.0).unwrap();
        let g = surrogate_gradient(&w, &y, &ones, &vocab).unwrap();
        for l in 0..3 {
            assert!((g[[l, 1]] - g[[l, 0]] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn surrogate_gradient_is_constant_and_matches_fd() {
        let vocab = VocabSpec::new(3).unwrap();
        let mut rng = StreamKey::new(8).rng();
        let f = Array2::from_shape_simple_fn((2, 4), || rng.random::<f64>() - 0.5);
        let g = Array2::from_shape_simple_fn((2, 3), || rng.random::<f64>() - 0.5);
        let s = BilinearSurrogate::new(f, g, 0.7).unwrap();
        let y = vec![0.3, -0.1, 0.8];
        let reference = surrogate_gradient(&to_one_hot(&vec![0, 1, 2, 0].into(), &vocab).unwrap(), &y, &s, &vocab).unwrap();
        let score = |m: &Array2<f64>| {
            let x: Vec<f64> = m.rows().into_iter().map(|r| r.iter().enumerate().map(|(j, v)| v * vocab.intensity(j)).sum()).collect();
            s.similarity(&x, &y).unwrap()
        };
        for trial in 0..5 {
            let raw = Array2::from_shape_simple_fn((4, 3), || rng.random::<f64>() + 0.05);
            let w = &raw / &raw.sum_axis(Axis(1)).insert_axis(Axis(1));
            let gw = surrogate_gradient(&OneHotSequence::new(w.clone()).unwrap(), &y, &s, &vocab).unwrap();
            for (a, b) in gw.iter().zip(reference.iter()) {
                assert!((a - b).abs() < 1e-12, "trial {trial}");
            }
            let h = 1e-4;
            for l in 0..4 {
                for j in 0..3 {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[[l, j]] += h;
                    wm[[l, j]] -= h;
                    let fd = (score(&wp) - score(&wm)) / (2.0 * h);
                    assert!((fd - gw[[l, j]]).abs() <= 1e-6 * fd.abs().max(1e-6));
                }
            }
        }
    }

    #[test]
    fn surrogate_file_round_trip() {
        let s = BilinearSurrogate::new(array![[0.5, -1.0, 2.0]], array![[0.25, 4.0]], 0.3).unwrap();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(BilinearSurrogate::read(&mut buf.as_slice(), 0.3).unwrap(), s);
    }

    #[test]
    fn infonce_gradient_matches_fd() {
        let mut rng = StreamKey::new(12).rng();
        let xs = Array2::from_shape_simple_fn((4, 3), || rng.random::<f64>() - 0.5);
        let ys = Array2::from_shape_simple_fn((4, 2), || rng.random::<f64>() - 0.5);
        let f = Array2::from_shape_simple_fn((2, 3), || rng.random::<f64>() - 0.5);
        let g = Array2::from_shape_simple_fn((2, 2), || rng.random::<f64>() - 0.5);
        let tau = 0.4;
        let (_, df, dg) = infonce_loss(&f, &g, xs.view(), ys.view(), tau);
        let h = 1e-5;
        for (idx, &analytic) in df.indexed_iter() {
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp[idx] += h;
            fm[idx] -= h;
            let fd = (infonce_loss(&fp, &g, xs.view(), ys.view(), tau).0
                - infonce_loss(&fm, &g, xs.view(), ys.view(), tau).0)
                / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-5 * fd.abs().max(1e-4));
        }
        for (idx, &analytic) in dg.indexed_iter() {
            let mut gp = g.clone();
            let mut gm = g.clone();
            gp[idx] += h;
            gm[idx] -= h;
            let fd = (infonce_loss(&f, &gp, xs.view(), ys.view(), tau).0
                - infonce_loss(&f, &gm, xs.view(), ys.view(), tau).0)
                / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-5 * fd.abs().max(1e-4));
        }
    }

    #[test]
    fn infonce_fit_separates_orthogonal_pairs() {
        let xs = array![[1.0, 0.0], [0.0, 1.0]];
        let ys = array![[0.0, 1.0], [1.0, 0.0]];
        let fit = infonce_fit(xs.view(), ys.view(), 2, 1.0, 500, 0.5, &StreamKey::new(1)).unwrap();
        assert!(fit.losses.last().unwrap() <= &fit.losses[0]);
        assert!(fit.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(matching_posterior(&fit.surrogate, xs.view(), ys.view()) > 0.9);
    }

    #[test]
    fn infonce_identical_inputs_stay_uniform() {
        let xs = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let ys = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
        let fit = infonce_fit(xs.view(), ys.view(), 2, 0.5, 200, 0.1, &StreamKey::new(2)).unwrap();
        assert!((matching_posterior(&fit.surrogate, xs.view(), ys.view()) - 1.0 / 3.0).abs() < 1e-12);
        assert!(infonce_fit(xs.slice(ndarray::s![..1, ..]), ys.slice(ndarray::s![..1, ..]), 2, 0.5, 1, 0.1, &StreamKey::new(2)).is_err());
    }

    #[test]
    fn likelihood_argmax_is_scale_invariant() {
        let p = identity_problem(vec![0.2, 0.9, 0.45], 3);
        let argmax = |beta: f64| {
            let c = cfg(beta);
            (0..27usize)
                .map(|id| {
                    let z: TokenSequence = (0..3).map(|l| (id / 3usize.pow(l)) % 3).collect();
                    let x = decode(&z, &p.vocab).unwrap();
                    (p.log_likelihood(&x, &c).unwrap(), id)
                })
                .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
                .1
        };
        let reference = argmax(1.0);
        for beta in [0.01, 0.5, 7.0, 300.0] {
            assert_eq!(argmax(beta), reference);
        }
    }
}
