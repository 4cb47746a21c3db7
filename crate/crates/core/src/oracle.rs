//! Brute-force enumeration over all `K^L` token sequences.
//!
//! States are encoded in mixed radix with position 0 least significant:
//! `id = Σ_ℓ z[ℓ]·K^ℓ`. Everything here is computed directly from the
//! definitions and serves as ground truth for the sampler.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::potential::{LikelihoodMode, PotentialConfig, Problem};
use crate::prior::{Denoiser, JointMode};
use crate::tokenspace::{decode, Codebook, TokenSequence};

/// Largest enumerable state space.
pub const STATE_GUARD: u128 = 1 << 22;

/// Number of states `K^L`, or a capacity error past the guard.
pub fn state_count(vocab: usize, len: usize) -> Result<usize> {
    let mut states: u128 = 1;
    for _ in 0..len {
        states = states.saturating_mul(vocab as u128);
        if states > STATE_GUARD {
            return Err(Error::Capacity { states, guard: STATE_GUARD });
        }
    }
    Ok(states as usize)
}

/// Mixed-radix id of `z` with position 0 as the least significant digit.
pub fn encode(z: &TokenSequence, vocab: usize) -> usize {
    z.iter().rev().fold(0, |acc, &t| acc * vocab + t)
}

/// Inverse of [`encode`] for sequences of length `len`.
pub fn decode_state(mut id: usize, vocab: usize, len: usize) -> TokenSequence {
    (0..len)
        .map(|_| {
            let t = id % vocab;
            id /= vocab;
            t
        })
        .collect()
}

/// Explicit probability vector over all `K^L` states.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    probs: Vec<f64>,
    vocab: usize,
    len: usize,
}

impl ExactDistribution {
    /// Validates a normalised probability vector over `K^L` states.
    pub fn new(probs: Vec<f64>, vocab: usize, len: usize) -> Result<Self> {
        let n = state_count(vocab, len)?;
        if probs.len() != n {
            return Err(Error::Shape(format!("{} probabilities for {n} states", probs.len())));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Validation("probabilities must be nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs, vocab, len })
    }

    /// Normalises unnormalised log weights with max subtraction.
    pub fn from_log_weights(log_weights: &[f64], vocab: usize, len: usize) -> Result<Self> {
        let lse = log_sum_exp(ndarray::ArrayView1::from(log_weights));
        if lse == f64::NEG_INFINITY || lse.is_nan() {
            return Err(Error::Degenerate("all states have zero weight".into()));
        }
        let probs: Vec<f64> = log_weights.iter().map(|w| (w - lse).exp()).collect();
        let sum: f64 = probs.iter().sum();
        Self::new(probs.iter().map(|p| p / sum).collect(), vocab, len)
    }

    /// Probabilities indexed by state id.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Vocabulary size `K`.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Sequence length `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Whether the distribution has no states.
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of one sequence.
    pub fn prob(&self, z: &TokenSequence) -> f64 {
        self.probs[encode(z, self.vocab)]
    }

    /// Most probable state; ties go to the lowest id.
    pub fn mode(&self) -> TokenSequence {
        let best = crate::numeric::argmax(ndarray::ArrayView1::from(&self.probs));
        decode_state(best, self.vocab, self.len)
    }

    /// `L × K` per-position marginals.
    pub fn marginals(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len, self.vocab));
        for (id, &p) in self.probs.iter().enumerate() {
            let mut rest = id;
            for l in 0..self.len {
                m[[l, rest % self.vocab]] += p;
                rest /= self.vocab;
            }
        }
        m
    }
}

/// Unnormalised log weight of every state, computed in parallel and in order.
fn log_weights(vocab: usize, len: usize, f: impl Fn(&TokenSequence) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    let n = state_count(vocab, len)?;
    (0..n)
        .into_par_iter()
        .with_min_len(1024)
        .map(|id| f(&decode_state(id, vocab, len)))
        .collect()
}

/// Likelihood term evaluated straight from the operator output.
fn log_likelihood(problem: &Problem, z: &TokenSequence, cfg: &PotentialConfig) -> Result<f64> {
    if cfg.beta == 0.0 {
        return Ok(0.0);
    }
    let x = decode(z, &problem.vocab)?;
    match cfg.likelihood_mode {
        LikelihoodMode::Explicit => {
            let ax = problem.operator.apply_relaxed(&x)?;
            let mut fit = 0.0;
            for (a, y) in ax.iter().zip(&problem.measurement.values) {
                let r = a - y;
                fit += cfg.fit.l1 * r.abs() + cfg.fit.l2 * r * r;
            }
            Ok(-cfg.beta * fit)
        }
        LikelihoodMode::Surrogate => problem.log_likelihood(&x, cfg),
    }
}

/// Exact posterior `p(z₀ | z_t, y) ∝ exp(β·log-likelihood)·p_θ(z₀; z_t)` over
/// every state. Falls back to the factorized prior when the exact joint is
/// requested but unavailable; the mode used is returned.
pub fn enumerate_posterior(
    zt: &TokenSequence,
    t: f64,
    problem: &Problem,
    denoiser: &dyn Denoiser,
    cfg: &PotentialConfig,
) -> Result<(ExactDistribution, JointMode)> {
    let vocab = problem.vocab.size();
    let len = problem.len();
    state_count(vocab, len)?;
    let exact = match cfg.prior_mode {
        JointMode::Exact => denoiser.exact_joint(zt, t).transpose()?,
        JointMode::Factorized => None,
    };
    let marginals = denoiser.denoise(zt, t)?;
    let mode = if exact.is_some() { JointMode::Exact } else { JointMode::Factorized };
    let weights = log_weights(vocab, len, |z| {
        let prior = match &exact {
            Some(joint) => joint.log_prob(z),
            None => marginals.factorized_log_prob(z)?,
        };
        if prior == f64::NEG_INFINITY {
            return Ok(prior);
        }
        Ok(prior + log_likelihood(problem, z, cfg)?)
    })?;
    Ok((ExactDistribution::from_log_weights(&weights, vocab, len)?, mode))
}

/// Exact posterior over a finite prior support: `p(x_i | y) ∝ π_i·p(y | x_i)`.
/// Returns normalised masses aligned with `items`.
pub fn enumerate_support_posterior(
    items: &[TokenSequence],
    prior_weights: &[f64],
    problem: &Problem,
    cfg: &PotentialConfig,
) -> Result<Vec<f64>> {
    if items.is_empty() || items.len() != prior_weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} items with {} weights",
            items.len(),
            prior_weights.len()
        )));
    }
    let logw: Vec<f64> = items
        .iter()
        .zip(prior_weights)
        .map(|(z, &w)| Ok(w.ln() + log_likelihood(problem, z, cfg)?))
        .collect::<Result<_>>()?;
    let lse = log_sum_exp(ndarray::ArrayView1::from(&logw));
    if lse == f64::NEG_INFINITY {
        return Err(Error::Degenerate("all support items have zero weight".into()));
    }
    Ok(logw.iter().map(|w| (w - lse).exp()).collect())
}

/// State geometry of the continuous Langevin kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// `φ(z) = z` as a real vector.
    Index,
    /// `φ(z)` is the flattened one-hot matrix.
    OneHot,
    /// `φ(z)[ℓ] = c_{z[ℓ]}`, optionally tilted by `exp(½ Σ_ℓ Δ[ℓ, z′[ℓ]])`.
    Embedding {
        /// Token embeddings `c_k`.
        codebook: Codebook,
        /// Optional `L × K` tilt, zero at the current token.
        deltas: Option<Array2<f64>>,
    },
}

/// Restriction of `exp(−‖φ(z′) − φ(z₀) − η g‖² / 4η)` to valid states,
/// normalised over all `K^L` of them. `g` is `L × 1` (index), `L × K`
/// (one-hot) or `L × d` (embedding).
pub fn exact_langevin_kernel(
    z0: &TokenSequence,
    g: ArrayView2<'_, f64>,
    eta: f64,
    vocab: usize,
    geometry: &Geometry,
) -> Result<ExactDistribution> {
    let len = z0.len();
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("η must be > 0, got {eta}")));
    }
    let width = match geometry {
        Geometry::Index => 1,
        Geometry::OneHot => vocab,
        Geometry::Embedding { codebook, .. } => {
            if codebook.size() != vocab {
                return Err(Error::Shape("codebook size differs from vocabulary".into()));
            }
            codebook.dim()
        }
    };
    if g.dim() != (len, width) {
        return Err(Error::Shape(format!("gradient {:?}, expected ({len}, {width})", g.dim())));
    }
    let embed = |z: &TokenSequence, l: usize, j: usize| -> f64 {
        match geometry {
            Geometry::Index => z[l] as f64,
            Geometry::OneHot => f64::from(u8::from(z[l] == j)),
            Geometry::Embedding { codebook, .. } => codebook.entries()[[z[l], j]],
        }
    };
    let weights = log_weights(vocab, len, |z| {
        let mut sq = 0.0;
        for l in 0..len {
            for j in 0..width {
                let d = embed(z, l, j) - embed(z0, l, j) - eta * g[[l, j]];
                sq += d * d;
            }
        }
        let mut w = -sq / (4.0 * eta);
        if let Geometry::Embedding { deltas: Some(delta), .. } = geometry {
            w += 0.5 * (0..len).map(|l| delta[[l, z[l]]]).sum::<f64>();
        }
        Ok(w)
    })?;
    ExactDistribution::from_log_weights(&weights, vocab, len)
}

/// Enumerates the product of independent per-position categoricals.
pub fn product_distribution(rows: &Array2<f64>) -> Result<ExactDistribution> {
    let (len, vocab) = rows.dim();
    let logs = rows.mapv(f64::ln);
    let weights = log_weights(vocab, len, |z| Ok((0..len).map(|l| logs[[l, z[l]]]).sum()))?;
    ExactDistribution::from_log_weights(&weights, vocab, len)
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &ExactDistribution, q: &ExactDistribution) -> Result<f64> {
    if p.vocab != q.vocab || p.len != q.len {
        return Err(Error::Shape(format!(
            "distributions over K={}, L={} and K={}, L={}",
            p.vocab, p.len, q.vocab, q.len
        )));
    }
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Normalised histogram of samples over state ids.
pub fn empirical_distribution(samples: &[TokenSequence], vocab: usize, len: usize) -> Result<ExactDistribution> {
    let n = state_count(vocab, len)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut counts = vec![0u64; n];
    for z in samples {
        if z.len() != len {
            return Err(Error::Shape(format!("sample of length {}, expected {len}", z.len())));
        }
        if let Some((position, &token)) = z.iter().enumerate().find(|(_, &t)| t >= vocab) {
            return Err(Error::TokenOutOfRange { position, token, vocab });
        }
        counts[encode(z, vocab)] += 1;
    }
    let total = samples.len() as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let sum: f64 = probs.iter().sum();
    ExactDistribution::new(probs.iter().map(|p| p / sum).collect(), vocab, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{CorruptionProcess, NoiseSchedule, ScheduleKind};
    use crate::operators::{DataFit, ForwardOperator, ImageGrid, Measurement, OperatorKind};
    use crate::prior::EmpiricalBayesDenoiser;
    use crate::rng::StreamKey;
    use crate::sampler::{proposal_logits_onehot, proposal_probs};
    use crate::tokenspace::VocabSpec;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn encoding_round_trip() {
        for id in 0..81 {
            let z = decode_state(id, 3, 4);
            assert_eq!(encode(&z, 3), id);
        }
        assert_eq!(decode_state(1, 2, 3).as_slice(), &[1, 0, 0]);
        assert!(matches!(state_count(2, 23), Err(Error::Capacity { .. })));
        assert_eq!(state_count(2, 22).unwrap(), 1 << 22);
    }

    #[test]
    fn tv_examples() {
        let p = ExactDistribution::new(vec![0.6, 0.4], 2, 1).unwrap();
        let q = ExactDistribution::new(vec![0.5, 0.5], 2, 1).unwrap();
        assert!((tv_distance(&p, &q).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let a = ExactDistribution::new(vec![1.0, 0.0], 2, 1).unwrap();
        let b = ExactDistribution::new(vec![0.0, 1.0], 2, 1).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        let c = ExactDistribution::new(vec![0.25; 4], 2, 2).unwrap();
        assert!(tv_distance(&a, &c).is_err());
    }

    #[test]
    fn empirical_examples() {
        let z: TokenSequence = vec![1, 0].into();
        let d = empirical_distribution(&[z.clone(), z.clone(), z.clone()], 2, 2).unwrap();
        assert_eq!(d.prob(&z), 1.0);
        let w: TokenSequence = vec![0, 1].into();
        let d = empirical_distribution(&[z.clone(), w.clone()], 2, 2).unwrap();
        assert_eq!((d.prob(&z), d.prob(&w)), (0.5, 0.5));

        let target: Vec<f64> = (1..=16).map(|i| i as f64 / 136.0).collect();
        let truth = ExactDistribution::new(target.clone(), 2, 4).unwrap();
        let rows = ndarray::Array1::from(target);
        let key = StreamKey::new(21);
        let samples: Vec<TokenSequence> = (0..100_000u64)
            .map(|i| decode_state(crate::numeric::sample_index(rows.view(), key.uniform(i)), 2, 4))
            .collect();
        let emp = empirical_distribution(&samples, 2, 4).unwrap();
        assert!(tv_distance(&emp, &truth).unwrap() < 0.01);
    }

    fn inpaint_problem(y: Vec<f64>, mask: Vec<bool>, sigma: f64) -> Problem {
        let grid = ImageGrid::new(1, mask.len(), 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Inpaint { mask }, grid).unwrap();
        Problem::new(op, Measurement::new(y, sigma).unwrap(), VocabSpec::new(2).unwrap()).unwrap()
    }

    fn exact_cfg(beta: f64, sigma: f64) -> PotentialConfig {
        PotentialConfig {
            fit: DataFit::gaussian(sigma).unwrap(),
            beta,
            prior_mode: JointMode::Exact,
            likelihood_mode: LikelihoodMode::Explicit,
        }
    }

    fn dataset() -> Vec<TokenSequence> {
        vec![
            vec![0, 0, 1, 1].into(),
            vec![1, 0, 1, 0].into(),
            vec![1, 1, 1, 1].into(),
            vec![0, 1, 0, 0].into(),
            vec![1, 1, 0, 0].into(),
        ]
    }

    fn linear_uniform() -> CorruptionProcess {
        CorruptionProcess::uniform(
            VocabSpec::new(2).unwrap(),
            NoiseSchedule::new(ScheduleKind::Linear, 1e-3).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_beta_is_the_prior() {
        let problem = inpaint_problem(vec![0.3, 0.8], vec![true, false, true, false], 0.2);
        let d = EmpiricalBayesDenoiser::new(dataset(), linear_uniform(), 1e-3).unwrap();
        let zt: TokenSequence = vec![1, 0, 1, 1].into();
        let (post, mode) = enumerate_posterior(&zt, 0.6, &problem, &d, &exact_cfg(0.0, 0.2)).unwrap();
        assert_eq!(mode, JointMode::Exact);
        let joint = d.exact_joint(&zt, 0.6).unwrap().unwrap();
        for id in 0..16 {
            let z = decode_state(id, 2, 4);
            assert!((post.probs()[id] - joint.log_prob(&z).exp()).abs() < 1e-12);
        }
        let marg = post.marginals();
        let out = d.denoise(&zt, 0.6).unwrap().probs();
        for (a, b) in marg.iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sharp_likelihood_is_a_point_mass() {
        let grid = ImageGrid::new(1, 3, 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Identity, grid).unwrap();
        let problem = Problem::new(op, Measurement::new(vec![1.0, 0.0, 1.0], 1e-3).unwrap(), VocabSpec::new(2).unwrap()).unwrap();
        let out = crate::prior::DenoiserOutput::from_logits(Array2::zeros((3, 2))).unwrap();
        struct Flat(crate::prior::DenoiserOutput);
        impl Denoiser for Flat {
            fn denoise(&self, _: &TokenSequence, _: f64) -> Result<crate::prior::DenoiserOutput> {
                Ok(self.0.clone())
            }
        }
        let mut cfg = exact_cfg(1.0, 1e-3);
        cfg.prior_mode = JointMode::Factorized;
        let (post, mode) = enumerate_posterior(&vec![0, 0, 0].into(), 0.5, &problem, &Flat(out), &cfg).unwrap();
        assert_eq!(mode, JointMode::Factorized);
        assert!((post.prob(&vec![1, 0, 1].into()) - 1.0).abs() < 1e-12);
        assert_eq!(post.mode().as_slice(), &[1, 0, 1]);
    }

    #[test]
    fn posterior_matches_hand_enumeration() {
        let sigma = 0.3;
        let problem = inpaint_problem(vec![0.9, 0.2], vec![true, false, false, true], sigma);
        let smoothing = 0.01;
        let d = EmpiricalBayesDenoiser::new(dataset(), linear_uniform(), smoothing).unwrap();
        let zt: TokenSequence = vec![1, 1, 0, 1].into();
        let t = 0.5;
        let (post, _) = enumerate_posterior(&zt, t, &problem, &d, &exact_cfg(1.0, sigma)).unwrap();

        // Independent direct summation.
        let alpha = 0.5;
        let stay = alpha + (1.0 - alpha) / 2.0;
        let items = dataset();
        let item_w: Vec<f64> = items
            .iter()
            .map(|x| x.iter().zip(zt.iter()).map(|(a, b)| if a == b { stay } else { 1.0 - stay }).product())
            .collect();
        let wsum: f64 = item_w.iter().sum();
        let mut unnorm = [0.0; 16];
        for (id, slot) in unnorm.iter_mut().enumerate() {
            let z: Vec<usize> = (0..4).map(|l| (id >> l) & 1).collect();
            let mass: f64 = items.iter().zip(&item_w).filter(|(x, _)| x.as_slice() == z.as_slice()).map(|(_, w)| w / wsum).sum();
            let prior = (1.0 - smoothing) * mass + smoothing / 16.0;
            let r0 = z[0] as f64 - 0.9;
            let r1 = z[3] as f64 - 0.2;
            let lik = (-(r0 * r0 + r1 * r1) / (2.0 * sigma * sigma)).exp();
            *slot = prior * lik;
        }
        let total: f64 = unnorm.iter().sum();
        for id in 0..16 {
            assert!((post.probs()[id] - unnorm[id] / total).abs() < 1e-12);
        }
    }

    #[test]
    fn support_posterior_agrees_with_full_enumeration() {
        let sigma = 0.4;
        let problem = inpaint_problem(vec![0.1, 0.95], vec![false, true, true, false], sigma);
        let items = dataset();
        let weights = vec![0.2; 5];
        let cfg = exact_cfg(1.0, sigma);
        let support = enumerate_support_posterior(&items, &weights, &problem, &cfg).unwrap();
        let d = EmpiricalBayesDenoiser::new(items.clone(), linear_uniform(), 0.0).unwrap();
        let zt: TokenSequence = vec![0, 0, 0, 0].into();
        // At t = 1 under a zero-floor schedule the denoiser returns the data prior.
        let flat = CorruptionProcess::uniform(VocabSpec::new(2).unwrap(), NoiseSchedule::new(ScheduleKind::Linear, 0.0).unwrap()).unwrap();
        let d = EmpiricalBayesDenoiser::new(d.dataset().to_vec(), flat, 0.0).unwrap();
        let (post, _) = enumerate_posterior(&zt, 1.0, &problem, &d, &cfg).unwrap();
        for (item, p) in items.iter().zip(&support) {
            assert!((post.prob(item) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn langevin_kernel_limits() {
        let z0: TokenSequence = vec![1, 0].into();
        let g = Array2::zeros((2, 3));
        let k = exact_langevin_kernel(&z0, g.view(), 1e-4, 3, &Geometry::OneHot).unwrap();
        assert!((k.prob(&z0) - 1.0).abs() < 1e-12);

        let g1 = array![[0.4, -1.0, 2.0]];
        let single = exact_langevin_kernel(&vec![2].into(), g1.view(), 0.7, 3, &Geometry::OneHot).unwrap();
        let r = proposal_logits_onehot(g1.view(), &vec![2].into(), 0.7).unwrap();
        let p = proposal_probs(&r, 1.0);
        for k in 0..3 {
            assert!((single.probs()[k] - p[[0, k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn langevin_kernel_is_permutation_covariant() {
        let mut rng = StreamKey::new(31).rng();
        let g = Array2::from_shape_simple_fn((3, 3), || rng.random::<f64>() * 2.0 - 1.0);
        let z0: TokenSequence = vec![0, 2, 1].into();
        let perm = [2usize, 0, 1];
        let mut gp = Array2::zeros((3, 3));
        for l in 0..3 {
            for k in 0..3 {
                gp[[l, perm[k]]] = g[[l, k]];
            }
        }
        let z0p: TokenSequence = z0.iter().map(|&t| perm[t]).collect();
        let a = exact_langevin_kernel(&z0, g.view(), 0.6, 3, &Geometry::OneHot).unwrap();
        let b = exact_langevin_kernel(&z0p, gp.view(), 0.6, 3, &Geometry::OneHot).unwrap();
        for id in 0..27 {
            let z = decode_state(id, 3, 3);
            let zp: TokenSequence = z.iter().map(|&t| perm[t]).collect();
            assert!((a.prob(&z) - b.prob(&zp)).abs() < 1e-14);
        }
    }
}
