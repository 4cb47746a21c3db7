//! Acceptance checks. Each criterion builds its own small instance, compares
//! the library against an independent reference and reports the worst-case
//! discrepancy together with the time taken.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use dlps_core::corruption::{CorruptionProcess, NoiseSchedule};
use dlps_core::operators::{
    random_mask, DataFit, ForwardOperator, ImageGrid, Measurement, OperatorKind, Tier,
};
use dlps_core::oracle::{
    empirical_distribution, enumerate_posterior, enumerate_support_posterior, exact_langevin_kernel,
    product_distribution, tv_distance, Geometry,
};
use dlps_core::potential::{
    gradient_one_hot, potential_relaxed, surrogate_gradient, BilinearSurrogate, LikelihoodMode, PotentialConfig,
    PriorTerm, Problem,
};
use dlps_core::prior::{DenoiserOutput, EmpiricalBayesDenoiser, JointMode};
use dlps_core::rng::StreamKey;
use dlps_core::sampler::{
    adam_precondition, alpha_blend, beta_at, proposal_logits_embedding, proposal_logits_index,
    proposal_logits_onehot, proposal_probs, run, tau_at, AdamConfig, AdamState, InnerChain, OuterSchedule,
    SamplerConfig,
};
use dlps_core::tokenspace::{decode, decode_relaxed, Codebook, OneHotSequence, TokenSequence, VocabSpec};
use ndarray::{Array2, Axis};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::dataset::{make_synthetic_dataset, SyntheticKind, SyntheticSpec};
use crate::error::{io_err, HarnessError, Result};
use crate::experiment::{sample, simulate};
use crate::metrics::{iou_f1, psnr, ssim, token_accuracy, PSNR_CAP};

/// Result of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Criterion number, 1 to 9.
    pub id: u8,
    /// Short human-readable name.
    pub name: &'static str,
    /// Whether both the tolerance and the runtime bound were met.
    pub passed: bool,
    /// Measured quantities and thresholds.
    pub detail: String,
    /// Wall time of the check.
    pub elapsed: Duration,
    /// Runtime bound.
    pub budget: Duration,
}

impl Outcome {
    fn finish(id: u8, name: &'static str, ok: bool, detail: String, start: Instant, budget: Duration) -> Self {
        let elapsed = start.elapsed();
        Self { id, name, passed: ok && elapsed <= budget, detail, elapsed, budget }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} #{} {}: {} ({:.2} s of {:.0} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64()
        )
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn random_tokens(rng: &mut impl Rng, len: usize, vocab: usize) -> TokenSequence {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Interior point of the simplex with every weight at least `floor`.
fn random_simplex(rng: &mut impl Rng, rows: usize, cols: usize, floor: f64) -> Array2<f64> {
    let raw = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() + floor);
    &raw / &raw.sum_axis(Axis(1)).insert_axis(Axis(1))
}

/// Product-of-categoricals proposal against the normalised restriction of
/// the continuous kernel, in all three geometries.
pub fn factorization_exactness() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = StreamKey::new(101).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let eta = 0.05 + 2.0 * rng.random::<f64>();
        let (len, vocab) = (4, 4);
        let z0 = random_tokens(&mut rng, len, vocab);
        let g = random_matrix(&mut rng, len, 1, 3.0);
        let g_vec = g.column(0).to_vec();
        let ours = product_distribution(&proposal_probs(&proposal_logits_index(&g_vec, &z0, vocab, eta)?, 1.0))?;
        let exact = exact_langevin_kernel(&z0, g.view(), eta, vocab, &Geometry::Index)?;
        worst = worst.max(tv_distance(&ours, &exact)?);
    }
    for _ in 0..100 {
        let eta = 0.05 + 2.0 * rng.random::<f64>();
        let (len, vocab) = (3, 3);
        let z0 = random_tokens(&mut rng, len, vocab);
        let g = random_matrix(&mut rng, len, vocab, 3.0);
        let ours = product_distribution(&proposal_probs(&proposal_logits_onehot(g.view(), &z0, eta)?, 1.0))?;
        let exact = exact_langevin_kernel(&z0, g.view(), eta, vocab, &Geometry::OneHot)?;
        worst = worst.max(tv_distance(&ours, &exact)?);
    }
    for _ in 0..100 {
        let eta = 0.05 + 2.0 * rng.random::<f64>();
        let (len, vocab, dim) = (3, 3, 2);
        let z0 = random_tokens(&mut rng, len, vocab);
        let codebook = Codebook::new(random_matrix(&mut rng, vocab, dim, 1.0))?;
        let g = random_matrix(&mut rng, len, dim, 3.0);
        let mut deltas = random_matrix(&mut rng, len, vocab, 2.0);
        for (l, &z) in z0.iter().enumerate() {
            deltas[[l, z]] = 0.0;
        }
        let logits = proposal_logits_embedding(g.view(), deltas.view(), &codebook, &z0, eta)?;
        let ours = product_distribution(&proposal_probs(&logits, 1.0))?;
        let geometry = Geometry::Embedding { codebook, deltas: Some(deltas) };
        let exact = exact_langevin_kernel(&z0, g.view(), eta, vocab, &geometry)?;
        worst = worst.max(tv_distance(&ours, &exact)?);
    }
    let ok = worst < 1e-10;
    let detail = format!("max TV {worst:.3e} over 300 triples (limit 1e-10)");
    Ok(Outcome::finish(1, "factorization exactness", ok, detail, start, secs(5)))
}

/// The MH-corrected inner chain against the enumerated posterior on an
/// eight-pixel inpainting problem with an exact empirical-Bayes prior.
pub fn mh_stationarity() -> Result<Outcome> {
    let start = Instant::now();
    let len = 8;
    let vocab = VocabSpec::new(2)?;
    let mut rng = StreamKey::new(202).rng();
    let key = StreamKey::new(203);
    let grid = ImageGrid::new(1, len, 1)?;
    let mask = random_mask(&grid, 0.5, &key.child(2))?;
    // Three patterns share the observed pixels so the posterior keeps
    // several modes instead of collapsing onto one item.
    let base = random_tokens(&mut rng, len, 2);
    let data: Vec<TokenSequence> = (0..6)
        .map(|i| (0..len).map(|l| if i < 3 && mask[l] { base[l] } else { rng.random_range(0..2) }).collect())
        .collect();
    let process = CorruptionProcess::uniform(vocab.clone(), NoiseSchedule::default())?;
    let denoiser = EmpiricalBayesDenoiser::new(data.clone(), process.clone(), 1e-4)?;
    let t = 0.5;
    let zt = process.sample_forward(&data[0], t, &key.child(1))?;
    let op = ForwardOperator::new(OperatorKind::Inpaint { mask }, grid)?;
    let sigma = 0.1;
    let y = op.simulate_measurement(&decode(&data[0], &vocab)?, sigma, &key.child(3))?;
    let problem = Problem::new(op, y, vocab)?;
    let cfg = SamplerConfig {
        eta: 0.2,
        tau_start: 1.0,
        tau_end: 1.0,
        beta_0: 1.0,
        beta_max: 1.0,
        precondition: false,
        mh: true,
        prior_mode: JointMode::Exact,
        fit: DataFit::gaussian(sigma)?,
        ..SamplerConfig::default()
    };
    let prior = PriorTerm::evaluate(&denoiser, &zt, t, JointMode::Exact)?;
    let schedule = OuterSchedule { beta: 1.0, grad_scale: 1.0, alphas: vec![1.0; len] };
    let mut chain = InnerChain::new(&problem, &prior, &cfg, schedule)?;
    let chain_key = key.child(4);
    let mut z = TokenSequence::from(vec![0; len]);
    let mut u = chain.potential(&z)?;
    let (burn, steps) = (10_000u64, 200_000u64);
    let mut samples = Vec::with_capacity(steps as usize);
    let mut accepted = 0u64;
    for m in 0..burn + steps {
        let (next, u_next, flag) = chain.step(&z, u, 1.0, &chain_key.child(m))?;
        z = next;
        u = u_next;
        if m >= burn {
            accepted += u64::from(flag == Some(true));
            samples.push(z.clone());
        }
    }
    let empirical = empirical_distribution(&samples, 2, len)?;
    let (target, _) = enumerate_posterior(&zt, t, &problem, &denoiser, &cfg.potential(1.0))?;
    let tv = tv_distance(&empirical, &target)?;
    let modes = target.probs().iter().filter(|&&p| p > 0.01).count();
    let detail = format!(
        "TV {tv:.4} after {steps} steps (limit 0.05), {modes} states above 1% mass, acceptance {:.3}",
        accepted as f64 / steps as f64
    );
    Ok(Outcome::finish(2, "MH stationarity", tv < 0.05, detail, start, secs(60)))
}

/// Chapman-Kolmogorov composition of the forward kernels and normalisation
/// of the reverse posterior kernel.
pub fn corruption_bayes_identity() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = StreamKey::new(303).rng();
    let (len, k) = (6, 4);
    let schedule = NoiseSchedule::default();
    let processes = [
        CorruptionProcess::masked(VocabSpec::new(k)?.with_mask(), schedule)?,
        CorruptionProcess::uniform(VocabSpec::new(k)?, schedule)?,
    ];
    let (mut composition, mut rows): (f64, f64) = (0.0, 0.0);
    for process in &processes {
        for trial in 0..50u64 {
            let a = rng.random::<f64>();
            let b = rng.random::<f64>();
            let (s, t) = (a.min(b), a.max(b).max(a.min(b) + 1e-3).min(1.0));
            let z0 = random_tokens(&mut rng, len, k);
            let zt = process.sample_forward(&z0, t, &StreamKey::new(304).child(trial))?;
            let to_s = process.cumulative_matrix(s)?;
            let step = process.transition(s, t)?;
            let to_t = process.cumulative_matrix(t)?;
            for (&clean, &noisy) in z0.iter().zip(zt.iter()) {
                let via: f64 = (0..to_s.ncols()).map(|m| step[[m, noisy]] * to_s[[clean, m]]).sum();
                composition = composition.max((via - to_t[[clean, noisy]]).abs());
            }
            let posterior = process.posterior_kernel(&zt, &z0, s, t)?;
            for row in posterior.rows() {
                rows = rows.max((row.sum() - 1.0).abs());
            }
        }
    }
    let ok = composition <= 1e-12 && rows <= 1e-12;
    let detail = format!("max composition error {composition:.2e}, max row-sum error {rows:.2e} (limit 1e-12)");
    Ok(Outcome::finish(3, "corruption-kernel Bayes identity", ok, detail, start, secs(1)))
}

/// Operators exercised by the gradient check, with the vocabulary size each needs.
fn gradient_operators(rng: &mut impl Rng, grid: ImageGrid) -> Vec<(OperatorKind, usize)> {
    let n = grid.len();
    let mut pairs = Vec::new();
    while pairs.len() < 8 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            pairs.push((a, b));
        }
    }
    let mask: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
    let motion = random_simplex(rng, 1, 3, 0.1);
    vec![
        (OperatorKind::Identity, 4),
        (OperatorKind::Inpaint { mask }, 4),
        (OperatorKind::Box { x: 1, y: 1, w: 2, h: 2 }, 4),
        (OperatorKind::XorPairs(pairs.clone()), 2),
        (OperatorKind::AndPairs(pairs), 2),
        (OperatorKind::GaussianBlur { size: 3, sigma: 1.0 }, 4),
        (OperatorKind::MotionBlur { kernel: motion }, 4),
        (OperatorKind::Downsample { factor: 2 }, 4),
        (OperatorKind::Hdr, 4),
    ]
}

/// True when `x` sits away from a nondifferentiable point of the potential:
/// the HDR clip corners or a zero residual under an ℓ1 term.
fn smooth_at(problem: &Problem, x: &[f64], fit: &DataFit) -> Result<bool> {
    const MARGIN: f64 = 1e-2;
    if matches!(problem.operator.kind(), OperatorKind::Hdr)
        && x.iter().any(|&v| (v - 0.25).abs() < MARGIN || (v - 0.75).abs() < MARGIN)
    {
        return Ok(false);
    }
    if fit.l1 > 0.0 {
        let r = problem.operator.residual(x, &problem.measurement)?;
        if r.iter().any(|v| v.abs() < MARGIN) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-3)
}

/// Directional central differences along `e_{ℓ,j} − e_{ℓ,0}`, which keep the
/// point on the simplex.
fn simplex_fd_error(
    w: &Array2<f64>,
    grad: &Array2<f64>,
    h: f64,
    f: impl Fn(&OneHotSequence) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let (len, k) = w.dim();
    for l in 0..len {
        for j in 1..k {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[[l, j]] += h;
            plus[[l, 0]] -= h;
            minus[[l, j]] -= h;
            minus[[l, 0]] += h;
            let fd = (f(&OneHotSequence::new(plus)?)? - f(&OneHotSequence::new(minus)?)?) / (2.0 * h);
            worst = worst.max(relative_error(fd, grad[[l, j]] - grad[[l, 0]]));
        }
    }
    Ok(worst)
}

/// Analytic one-hot gradients of the explicit potential and of the bilinear
/// surrogate against central finite differences on the simplex.
pub fn gradient_correctness() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = StreamKey::new(404).rng();
    let h = 1e-4;
    let grid = ImageGrid::new(4, 4, 1)?;
    let mut explicit: f64 = 0.0;
    let mut checked = 0usize;
    for config in 0..20 {
        for (kind, k) in gradient_operators(&mut rng, grid) {
            let op = ForwardOperator::new(kind, grid)?;
            let y: Vec<f64> = (0..op.output_dim()).map(|_| rng.random::<f64>()).collect();
            let vocab = VocabSpec::new(k)?;
            let problem = Problem::new(op, Measurement::new(y, 0.1)?, vocab.clone())?;
            let fit = DataFit { l1: if config % 2 == 0 { 0.0 } else { rng.random::<f64>() }, l2: 0.5 + rng.random::<f64>() };
            let cfg = PotentialConfig {
                fit,
                beta: 0.2 + rng.random::<f64>(),
                prior_mode: JointMode::Factorized,
                likelihood_mode: LikelihoodMode::Explicit,
            };
            let prior = PriorTerm::factorized(DenoiserOutput::from_logits(random_matrix(&mut rng, grid.len(), k, 2.0))?);
            let w = loop {
                let w = random_simplex(&mut rng, grid.len(), k, 0.05);
                let x = decode_relaxed(&OneHotSequence::new(w.clone())?, &vocab)?;
                if smooth_at(&problem, &x, &fit)? {
                    break w;
                }
            };
            let grad = gradient_one_hot(&problem, &prior, &OneHotSequence::new(w.clone())?, &cfg)?;
            let err = simplex_fd_error(&w, &grad, h, |p| Ok(potential_relaxed(&problem, &prior, p, &cfg)?))?;
            explicit = explicit.max(err);
            checked += 1;
        }
    }
    let mut surrogate: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(2..5usize);
        let vocab = VocabSpec::new(k)?;
        let (len, m, width) = (5, 3, 2);
        let s = BilinearSurrogate::new(
            random_matrix(&mut rng, width, len, 1.0),
            random_matrix(&mut rng, width, m, 1.0),
            0.2 + rng.random::<f64>(),
        )?;
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let w = random_simplex(&mut rng, len, k, 0.05);
        let grad = surrogate_gradient(&OneHotSequence::new(w.clone())?, &y, &s, &vocab)?;
        let err = simplex_fd_error(&w, &grad, h, |p| Ok(s.similarity(&decode_relaxed(p, &vocab)?, &y)?))?;
        surrogate = surrogate.max(err);
    }
    let ok = explicit < 1e-5 && surrogate < 1e-5;
    let detail = format!(
        "max relative error {explicit:.2e} over {checked} operator configurations, {surrogate:.2e} over 20 surrogates (limit 1e-5)"
    );
    Ok(Outcome::finish(4, "gradient correctness", ok, detail, start, secs(10)))
}

/// Accuracies of one recovery trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryTrial {
    /// Token accuracy of the sampler output, in percent.
    pub sampler: f64,
    /// Token accuracy of the exact posterior mode, in percent.
    pub map: f64,
}

/// Runs one inpainting trial of the recovery experiment. The posterior mode
/// is the best dataset item; it is certified against every off-support
/// state by bounding their prior mass with the smoothing floor and their
/// likelihood with the per-pixel maximum. The sampler runs `base` with the
/// data fit and seed of the trial.
pub fn recovery_trial(trial: u64, base: &SamplerConfig) -> Result<RecoveryTrial> {
    let spec = SyntheticSpec { kind: SyntheticKind::Binary, height: 8, width: 8, channels: 1, count: 16, seed: 5 };
    let data = make_synthetic_dataset(&spec)?;
    let smoothing = 1e-6;
    let process = CorruptionProcess::uniform(data.vocab.clone(), NoiseSchedule::default())?;
    let denoiser = EmpiricalBayesDenoiser::new(data.items.clone(), process.clone(), smoothing)?;
    let (hidden, sigma) = Tier::Medium.inpaint();
    let key = StreamKey::new(1000).child(trial);
    let truth = &data.items[trial as usize % data.len()];
    let mask = random_mask(&data.grid, hidden, &key.child(1))?;
    let op = ForwardOperator::new(OperatorKind::Inpaint { mask: mask.clone() }, data.grid)?;
    let y = op.simulate_measurement(&decode(truth, &data.vocab)?, sigma, &key.child(2))?;
    let problem = Problem::new(op, y, data.vocab.clone())?;
    let fit = DataFit::gaussian(sigma)?;
    let pc = PotentialConfig { fit, beta: 1.0, prior_mode: JointMode::Factorized, likelihood_mode: LikelihoodMode::Explicit };

    let n = data.len() as f64;
    let posterior = enumerate_support_posterior(&data.items, &vec![1.0 / n; data.len()], &problem, &pc)?;
    let best = (0..posterior.len()).fold(0, |b, i| if posterior[i] > posterior[b] { i } else { b });
    let log_lik = |z: &TokenSequence| problem.log_likelihood(&decode(z, &data.vocab)?, &pc);
    let len = truth.len() as f64;
    let log_uniform = -len * 2f64.ln();
    let support_best = ((1.0 - smoothing) / n).ln() + log_lik(&data.items[best])?;
    let mut shown = problem.measurement.values.iter();
    let threshold: TokenSequence = mask
        .iter()
        .map(|&kept| if kept { usize::from(*shown.next().expect("one value per kept pixel") > 0.5) } else { 0 })
        .collect();
    let off_support_bound = smoothing.ln() + log_uniform + log_lik(&threshold)?;
    if support_best <= off_support_bound {
        return Err(HarnessError::InvalidArgument(format!(
            "trial {trial}: posterior mode is not certified to lie on the dataset support"
        )));
    }
    let map = token_accuracy(truth, &data.items[best])?;
    let cfg = SamplerConfig { fit, seed: trial, ..base.clone() };
    let (z, _) = run(&problem, &denoiser, &process, &cfg)?;
    Ok(RecoveryTrial { sampler: token_accuracy(truth, &z)?, map })
}

/// Mean sampler accuracy over 50 inpainting trials against the mean
/// accuracy of the exact posterior mode.
pub fn end_to_end_recovery() -> Result<Outcome> {
    use rayon::prelude::*;
    let start = Instant::now();
    let trials: Vec<RecoveryTrial> = (0..50u64).into_par_iter().map(|i| recovery_trial(i, &SamplerConfig::default())).collect::<Result<_>>()?;
    let n = trials.len() as f64;
    let sampler = trials.iter().map(|t| t.sampler).sum::<f64>() / n;
    let map = trials.iter().map(|t| t.map).sum::<f64>() / n;
    let gap = map - sampler;
    let ok = gap.abs() <= 2.0;
    let detail = format!("sampler {sampler:.2}% vs posterior mode {map:.2}%, gap {gap:.2} points (limit 2)");
    Ok(Outcome::finish(5, "end-to-end recovery", ok, detail, start, secs(120)))
}

/// Adam-preconditioned directions of constant gradients 1 and 10.
pub fn adam_equalization() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = AdamConfig::default();
    let g = Array2::from_shape_vec((1, 2), vec![1.0, 10.0]).map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
    let mut state = AdamState::new((1, 2));
    let mut last = Array2::zeros((1, 2));
    for _ in 0..200 {
        last = adam_precondition(&g, &mut state, &cfg);
    }
    let (a, b) = (last[[0, 0]].abs(), last[[0, 1]].abs());
    let spread = (a - b).abs() / a.max(b);
    let detail = format!("magnitudes {a:.5} and {b:.5}, relative spread {spread:.2e} (limit 0.05)");
    Ok(Outcome::finish(6, "Adam preconditioning", spread < 0.05, detail, start, secs(1)))
}

/// Endpoints of the β and τ schedules and the maximal-entropy α blend.
pub fn schedule_endpoints() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = StreamKey::new(707).rng();
    let mut failures = Vec::new();
    for case in 0..50 {
        let beta_0 = rng.random::<f64>();
        let alpha_min = 0.05 + 0.9 * rng.random::<f64>();
        let cfg = SamplerConfig {
            outer_steps: rng.random_range(2..40),
            inner_steps: rng.random_range(2..40),
            beta_0,
            beta_max: beta_0 + 10.0 * rng.random::<f64>(),
            tau_start: 0.1 + rng.random::<f64>(),
            tau_end: 0.01 + rng.random::<f64>(),
            alpha_min,
            alpha_base: alpha_min + (1.0 - alpha_min) * rng.random::<f64>(),
            ..SamplerConfig::default()
        };
        let k = rng.random_range(2..300usize);
        let max_entropy = vec![(k as f64).ln(); 3];
        let checks = [
            beta_at(&cfg, 0) == cfg.beta_0,
            beta_at(&cfg, cfg.outer_steps - 1) == cfg.beta_max,
            tau_at(&cfg, 0) == cfg.tau_start,
            tau_at(&cfg, cfg.inner_steps - 1) == cfg.tau_end,
            alpha_blend(&cfg, &max_entropy, k).iter().all(|&a| a == cfg.alpha_min),
        ];
        if checks.iter().any(|ok| !ok) {
            failures.push(case);
        }
    }
    let detail = if failures.is_empty() {
        "all endpoints exact over 50 random schedules".to_string()
    } else {
        format!("inexact endpoints in cases {failures:?}")
    };
    Ok(Outcome::finish(7, "schedule endpoints", failures.is_empty(), detail, start, secs(1)))
}

/// Experiment configuration used by the determinism check: a 32×32 binary
/// dataset large enough to take the parallel code paths.
pub fn determinism_config(output: &Path) -> String {
    format!(
        r#"seed = 17
n_chains = 2
output = "{}"

[data.synthetic]
height = 32
width = 32
count = 3
seed = 4

[operator]
kind = "inpaint"
tier = "medium"

[sampler]
outer_steps = 4
inner_steps = 3
"#,
        output.display()
    )
}

fn read_tree(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<std::io::Result<_>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        files.push((entry.file_name().to_string_lossy().into_owned(), std::fs::read(&path).map_err(io_err(&path))?));
    }
    Ok(files)
}

/// Runs `sample` twice on the same measurements and compares the
/// reconstructions and the CSV byte for byte. `work` must be an empty or
/// missing scratch directory.
pub fn determinism(work: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_toml(&determinism_config(work))?;
    simulate(&cfg)?;
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        sample(&cfg)?;
        let csv = std::fs::read(cfg.output.join("metrics.csv")).map_err(io_err(cfg.output.join("metrics.csv")))?;
        snapshots.push((read_tree(&cfg.output.join("reconstructions"))?, csv));
    }
    let files = snapshots[0].0.len();
    let ok = files > 0 && snapshots[0] == snapshots[1];
    let detail = format!("{files} reconstructions and metrics.csv {}", if ok { "identical" } else { "differ" });
    Ok(Outcome::finish(8, "determinism", ok, detail, start, secs(30)))
}

/// Closed-form metric examples.
pub fn metric_sanity() -> Result<Outcome> {
    let start = Instant::now();
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            failures.push(name);
        }
    };
    let x = vec![0.3; 16];
    check("psnr identical", psnr(&x, &x, 1.0)? == PSNR_CAP);
    let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
    check("psnr mse 0.01", (psnr(&x, &shifted, 1.0)? - 20.0).abs() < 1e-9);
    let far: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
    check("psnr mse 0.25", (psnr(&x, &far, 1.0)? - 10.0 * 4f64.log10()).abs() < 1e-9);

    check("accuracy identical", token_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 4])? == 100.0);
    check("accuracy disjoint", token_accuracy(&[1, 2, 3, 4], &[0, 0, 0, 0])? == 0.0);
    check("accuracy three of four", token_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0])? == 75.0);

    let grid = ImageGrid::new(12, 12, 1)?;
    let img: Vec<f64> = (0..grid.len()).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    check("ssim identical", (ssim(&img, &img, &grid, 1.0)? - 1.0).abs() < 1e-12);
    let inverted: Vec<f64> = img.iter().map(|v| 1.0 - v).collect();
    check("ssim inverted", ssim(&img, &inverted, &grid, 1.0)? < 0.0);
    let (a, b) = (0.2, 0.7);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let expected = (2.0 * a * b + c1) * c2 / ((a * a + b * b + c1) * c2);
    check("ssim constant", (ssim(&vec![a; grid.len()], &vec![b; grid.len()], &grid, 1.0)? - expected).abs() < 1e-12);

    let m = [true, true, false, false];
    check("iou identical", iou_f1(&m, &m)? == (1.0, 1.0));
    check("iou disjoint", iou_f1(&m, &[false, false, true, true])? == (0.0, 0.0));
    let (iou, f1) = iou_f1(&[true, true, true, true, false, false], &[false, false, true, true, true, true])?;
    check("iou overlap", (iou - 2.0 / 6.0).abs() < 1e-15 && (f1 - 0.5).abs() < 1e-15);

    let ok = failures.is_empty();
    let detail = if ok { "all closed-form examples match".to_string() } else { format!("mismatches: {failures:?}") };
    Ok(Outcome::finish(9, "metric sanity", ok, detail, start, secs(1)))
}

/// Runs every criterion in order; `work` hosts the determinism scratch
/// directory. A criterion that errors is reported as a failure.
pub fn run_all(work: &Path) -> Vec<Outcome> {
    type Check<'a> = (u8, &'static str, Box<dyn Fn() -> Result<Outcome> + 'a>);
    let checks: Vec<Check<'_>> = vec![
        (1, "factorization exactness", Box::new(factorization_exactness)),
        (2, "MH stationarity", Box::new(mh_stationarity)),
        (3, "corruption-kernel Bayes identity", Box::new(corruption_bayes_identity)),
        (4, "gradient correctness", Box::new(gradient_correctness)),
        (5, "end-to-end recovery", Box::new(end_to_end_recovery)),
        (6, "Adam preconditioning", Box::new(adam_equalization)),
        (7, "schedule endpoints", Box::new(schedule_endpoints)),
        (8, "determinism", Box::new(move || determinism(&work.join("determinism")))),
        (9, "metric sanity", Box::new(metric_sanity)),
    ];
    checks
        .into_iter()
        .map(|(id, name, check)| {
            let start = Instant::now();
            check().unwrap_or_else(|e| Outcome {
                id,
                name,
                passed: false,
                detail: format!("error: {e}"),
                elapsed: start.elapsed(),
                budget: Duration::ZERO,
            })
        })
        .collect()
}
