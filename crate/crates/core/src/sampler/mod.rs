//! The discrete Langevin posterior sampler.
//!
//! An outer loop walks the diffusion time grid from `t = 1` to `t = 0`. At
//! each step the denoiser proposes a clean estimate, an inner chain refines it
//! with gradient-informed factorized proposals, and the refined estimate is
//! renoised to the next, lower noise level.

mod adam;
mod mh;
mod proposal;
mod schedule;

pub use adam::{adam_precondition, AdamConfig, AdamState};
pub use mh::{log_acceptance, mh_accept, proposal_log_prob};
pub use proposal::{
    proposal_logits_embedding, proposal_logits_index, proposal_logits_onehot, proposal_probs,
    sample_proposal, StepSize,
};
pub use schedule::{alpha_blend, beta_at, grad_scale_at, tau_at, OuterSchedule};

use ndarray::{Array2, Axis};

use crate::corruption::CorruptionProcess;
use crate::error::{Error, Result};
use crate::operators::DataFit;
use crate::potential::{potential_value, prior_deltas, PotentialConfig, PriorTerm, Problem};
use crate::prior::{sample_clean, Denoiser, JointMode, SampleMode};
use crate::potential::LikelihoodMode;
use crate::rng::StreamKey;
use crate::tokenspace::{decode, Codebook, TokenSequence};

/// Geometry in which the Langevin proposal is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProposalForm {
    /// Scalar token-index geometry; meaningful for ordinal vocabularies.
    Index,
    /// One-hot geometry with a fixed Hamming penalty.
    #[default]
    OneHot,
    /// Intensity codebook geometry with finite-difference prior deltas.
    Embedding,
}

/// Where the entropy-weighted `α` enters the proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaTarget {
    /// Damps the likelihood guidance.
    #[default]
    Gradient,
    /// Softens the locality penalty through `η / α`.
    Penalty,
    /// Both of the above.
    Both,
}

/// Hyperparameters of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Outer diffusion steps `T`.
    pub outer_steps: usize,
    /// Inner refinement steps `M` per outer step.
    pub inner_steps: usize,
    /// Langevin step size `η`.
    pub eta: f64,
    /// Proposal geometry.
    pub proposal_form: ProposalForm,
    /// Inner temperature at the first inner step.
    pub tau_start: f64,
    /// Inner temperature at the last inner step.
    pub tau_end: f64,
    /// Upper bound of the entropy-weighted `α` blend.
    pub alpha_base: f64,
    /// Value of `α` at maximal predictive entropy.
    pub alpha_min: f64,
    /// Where `α` enters the proposal.
    pub alpha_target: AlphaTarget,
    /// Likelihood weight at the first outer step.
    pub beta_0: f64,
    /// Likelihood weight at the last outer step.
    pub beta_max: f64,
    /// Guidance multiplier at the first outer step.
    pub grad_scale_init: f64,
    /// Guidance multiplier at the last outer step.
    pub grad_scale_final: f64,
    /// Adam moment decays and stabiliser.
    pub adam: AdamConfig,
    /// Whether guidance is Adam-preconditioned.
    pub precondition: bool,
    /// Whether proposals pass a Metropolis-Hastings test.
    pub mh: bool,
    /// How the inner chain is initialised from the denoiser.
    pub init_mode: SampleMode,
    /// Data-fit weights of the explicit likelihood.
    pub fit: DataFit,
    /// Joint used for the prior term.
    pub prior_mode: JointMode,
    /// Likelihood source.
    pub likelihood_mode: LikelihoodMode,
    /// Root seed of every random stream.
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            outer_steps: 20,
            inner_steps: 10,
            eta: 1.0,
            proposal_form: ProposalForm::OneHot,
            tau_start: 1.0,
            tau_end: 0.5,
            alpha_base: 1.0,
            alpha_min: 0.5,
            alpha_target: AlphaTarget::Gradient,
            beta_0: 0.1,
            beta_max: 1.0,
            grad_scale_init: 20.0,
            grad_scale_final: 20.0,
            adam: AdamConfig::default(),
            precondition: true,
            mh: false,
            init_mode: SampleMode::Argmax,
            fit: DataFit { l1: 0.0, l2: 1.0 },
            prior_mode: JointMode::Factorized,
            likelihood_mode: LikelihoodMode::Explicit,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Checks ranges and the potential at `beta_max`.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.outer_steps == 0 {
            return fail("outer_steps must be ≥ 1".into());
        }
        if !(self.eta > 0.0) {
            return fail(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return fail("temperatures must be > 0".into());
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_base) {
            return fail(format!(
                "need 0 < alpha_min ≤ alpha_base, got {} and {}",
                self.alpha_min, self.alpha_base
            ));
        }
        if !(self.beta_0 >= 0.0 && self.beta_0 <= self.beta_max) {
            return fail(format!(
                "need 0 ≤ beta_0 ≤ beta_max, got {} and {}",
                self.beta_0, self.beta_max
            ));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail(format!("invalid Adam parameters {a:?}"));
        }
        self.potential(self.beta_max).validate()
    }

    /// Potential configuration at likelihood weight `beta`.
    pub fn potential(&self, beta: f64) -> PotentialConfig {
        PotentialConfig {
            fit: self.fit,
            beta,
            prior_mode: self.prior_mode,
            likelihood_mode: self.likelihood_mode,
        }
    }
}

/// Diagnostics of one inner chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InnerTrace {
    /// `U` of the chain state after each inner step.
    pub potentials: Vec<f64>,
    /// Acceptance decisions; empty without MH.
    pub accepted: Vec<bool>,
}

impl InnerTrace {
    /// Fraction of accepted proposals; `None` without MH.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (!self.accepted.is_empty())
            .then(|| self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64)
    }
}

/// One outer iteration of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    /// Diffusion time of the step.
    pub t: f64,
    /// Noisy state the denoiser saw.
    pub zt: TokenSequence,
    /// Initial clean estimate drawn from the denoiser.
    pub z0_init: TokenSequence,
    /// Clean estimate after inner refinement.
    pub z0_refined: TokenSequence,
    /// Inner chain diagnostics.
    pub inner: InnerTrace,
}

/// Record of a full [`run`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleTrace {
    /// One record per outer step, noisiest first.
    pub steps: Vec<OuterRecord>,
}

/// Fixed context of one inner chain.
pub struct InnerChain<'a> {
    problem: &'a Problem,
    prior: &'a PriorTerm,
    cfg: &'a SamplerConfig,
    potential: PotentialConfig,
    schedule: OuterSchedule,
    codebook: Codebook,
    eta: StepSize,
    adam: AdamState,
}

impl<'a> InnerChain<'a> {
    /// Chain for one outer step; `schedule` must hold one `α` per position.
    pub fn new(problem: &'a Problem, prior: &'a PriorTerm, cfg: &'a SamplerConfig, schedule: OuterSchedule) -> Result<Self> {
        let len = problem.len();
        let k = problem.vocab.size();
        if prior.output.len() != len || prior.output.vocab_size() != k {
            return Err(Error::Shape(format!(
                "prior is {}×{}, problem is {len}×{k}",
                prior.output.len(),
                prior.output.vocab_size()
            )));
        }
        if schedule.alphas.len() != len {
            return Err(Error::Shape("one α per position required".into()));
        }
        let eta = match cfg.alpha_target {
            AlphaTarget::Gradient => StepSize::Shared(cfg.eta),
            AlphaTarget::Penalty | AlphaTarget::Both => {
                StepSize::PerPosition(schedule.alphas.iter().map(|a| cfg.eta / a).collect())
            }
        };
        let width = match cfg.proposal_form {
            ProposalForm::OneHot => k,
            ProposalForm::Index | ProposalForm::Embedding => 1,
        };
        Ok(Self {
            problem,
            prior,
            cfg,
            potential: cfg.potential(schedule.beta),
            codebook: Codebook::from_intensities(&problem.vocab),
            schedule,
            eta,
            adam: AdamState::new((len, width)),
        })
    }

    /// `U(z)` at this step's likelihood weight.
    pub fn potential(&self, z: &TokenSequence) -> Result<f64> {
        potential_value(self.problem, self.prior, z, &self.potential)
    }

    /// Raw likelihood guidance at `z` in the coordinates of the proposal form.
    fn guidance(&self, z: &TokenSequence) -> Result<Array2<f64>> {
        let vocab = &self.problem.vocab;
        let x = decode(z, vocab)?;
        let gx = self.problem.likelihood_gradient(&x, &self.potential)?;
        let len = gx.len();
        Ok(match self.cfg.proposal_form {
            ProposalForm::OneHot => crate::potential::pull_back(&gx, vocab),
            ProposalForm::Embedding => Array2::from_shape_vec((len, 1), gx).expect("shape"),
            ProposalForm::Index => {
                let step = vocab.intensity_step();
                Array2::from_shape_fn((len, 1), |(l, _)| gx[l] * step)
            }
        })
    }

    /// Applies damping and gradient scale to a preconditioned guidance matrix.
    fn damp(&self, mut g: Array2<f64>) -> Array2<f64> {
        let use_alpha = matches!(self.cfg.alpha_target, AlphaTarget::Gradient | AlphaTarget::Both);
        for (l, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
            let a = if use_alpha { self.schedule.alphas[l] } else { 1.0 };
            row *= self.schedule.grad_scale * a;
        }
        g
    }

    /// Proposal logits at `z` given its (preconditioned, damped) guidance.
    fn logits(&self, z: &TokenSequence, guided: &Array2<f64>) -> Result<Array2<f64>> {
        let lp = self.prior.output.log_probs();
        match self.cfg.proposal_form {
            ProposalForm::OneHot => {
                let g = guided + &lp;
                proposal_logits_onehot(g.view(), z, self.eta.clone())
            }
            ProposalForm::Embedding => {
                let deltas = prior_deltas(&self.prior.output, z)?;
                proposal_logits_embedding(guided.view(), deltas.view(), &self.codebook, z, self.eta.clone())
            }
            ProposalForm::Index => {
                let k = lp.ncols();
                let g: Vec<f64> = z
                    .iter()
                    .enumerate()
                    .map(|(l, &zl)| guided[[l, 0]] + prior_slope(lp.row(l), zl, k))
                    .collect();
                proposal_logits_index(&g, z, k, self.eta.clone())
            }
        }
    }

    fn precondition(&self, state: &AdamState, raw: &Array2<f64>) -> Array2<f64> {
        if self.cfg.precondition {
            state.peek(raw, &self.cfg.adam)
        } else {
            raw.clone()
        }
    }

    /// One inner step from `z` with potential `u`; returns the next state,
    /// its potential and the MH decision if any.
    pub fn step(&mut self, z: &TokenSequence, u: f64, tau: f64, key: &StreamKey) -> Result<(TokenSequence, f64, Option<bool>)> {
        let raw = self.guidance(z)?;
        let guided = self.damp(self.precondition(&self.adam, &raw));
        let fwd = self.logits(z, &guided)?;
        let proposal = sample_proposal(&fwd, tau, &key.child(0))?;
        let result = if self.cfg.mh {
            let u_prop = self.potential(&proposal)?;
            let rev_raw = self.guidance(&proposal)?;
            let rev_guided = self.damp(self.precondition(&self.adam, &rev_raw));
            let rev = self.logits(&proposal, &rev_guided)?;
            let (ok, next) = mh_accept(z, &proposal, u, u_prop, &fwd, &rev, tau, key.child(1).uniform(0));
            let u_next = if ok { u_prop } else { u };
            (next, u_next, Some(ok))
        } else {
            let u_next = self.potential(&proposal)?;
            (proposal, u_next, None)
        };
        if self.cfg.precondition {
            self.adam.update(&raw, &self.cfg.adam);
        }
        Ok(result)
    }
}

/// Central finite difference of a log-prob row at token `z` (one-sided at the
/// ends), clamped to a finite range.
fn prior_slope(row: ndarray::ArrayView1<'_, f64>, z: usize, k: usize) -> f64 {
    let slope = if z == 0 {
        row[1] - row[0]
    } else if z + 1 == k {
        row[k - 1] - row[k - 2]
    } else {
        0.5 * (row[z + 1] - row[z - 1])
    };
    if slope.is_nan() {
        0.0
    } else {
        slope.clamp(-1e12, 1e12)
    }
}

/// Runs `M` inner steps from `z_init`, calling `observe` on every state.
pub fn inner_refine_with(
    problem: &Problem,
    prior: &PriorTerm,
    z_init: &TokenSequence,
    cfg: &SamplerConfig,
    schedule: OuterSchedule,
    steps: usize,
    key: &StreamKey,
    mut observe: impl FnMut(&TokenSequence),
) -> Result<(TokenSequence, InnerTrace)> {
    problem.vocab.check_clean(z_init)?;
    let mut chain = InnerChain::new(problem, prior, cfg, schedule)?;
    let mut z = z_init.clone();
    let mut trace = InnerTrace::default();
    if steps == 0 {
        return Ok((z, trace));
    }
    let mut u = chain.potential(&z)?;
    for m in 0..steps {
        let tau = tau_at(cfg, m);
        let (next, u_next, accepted) = chain.step(&z, u, tau, &key.child(m as u64))?;
        z = next;
        u = u_next;
        trace.potentials.push(u);
        if let Some(a) = accepted {
            trace.accepted.push(a);
        }
        observe(&z);
    }
    Ok((z, trace))
}

/// `cfg.inner_steps` refinement steps at outer iteration `r`.
pub fn inner_refine(
    problem: &Problem,
    prior: &PriorTerm,
    z_init: &TokenSequence,
    cfg: &SamplerConfig,
    r: usize,
    key: &StreamKey,
) -> Result<(TokenSequence, InnerTrace)> {
    let schedule = OuterSchedule::new(cfg, r, &prior.output.entropies(), problem.vocab.size());
    inner_refine_with(problem, prior, z_init, cfg, schedule, cfg.inner_steps, key, |_| {})
}

const TAG_TERMINAL: u64 = 0x7e5;
const TAG_INIT: u64 = 1;
const TAG_INNER: u64 = 2;
const TAG_RENOISE: u64 = 3;

/// Full sampler: terminal draw, then `T` rounds of denoise, refine, renoise.
pub fn run(
    problem: &Problem,
    denoiser: &dyn Denoiser,
    process: &CorruptionProcess,
    cfg: &SamplerConfig,
) -> Result<(TokenSequence, SampleTrace)> {
    cfg.validate()?;
    if process.vocab().size() != problem.vocab.size() {
        return Err(Error::Config(format!(
            "process vocabulary has K = {}, problem has K = {}",
            process.vocab().size(),
            problem.vocab.size()
        )));
    }
    let root = StreamKey::new(cfg.seed);
    let total = cfg.outer_steps;
    let mut zt = process.sample_terminal(problem.len(), &root.child(TAG_TERMINAL));
    let mut trace = SampleTrace::default();
    let mut z_star = TokenSequence::new(Vec::new());
    for i in 0..total {
        let level = total - i;
        let t = level as f64 / total as f64;
        let s = (level - 1) as f64 / total as f64;
        let key = root.child(i as u64);
        let prior = PriorTerm::evaluate(denoiser, &zt, t, cfg.prior_mode)?;
        let z_init = sample_clean(&prior.output, &key.child(TAG_INIT), cfg.init_mode);
        let (refined, inner) = inner_refine(problem, &prior, &z_init, cfg, i, &key.child(TAG_INNER))?;
        let next = process.renoise(&refined, s, &key.child(TAG_RENOISE))?;
        trace.steps.push(OuterRecord {
            t,
            zt: std::mem::replace(&mut zt, next),
            z0_init: z_init,
            z0_refined: refined.clone(),
            inner,
        });
        z_star = refined;
    }
    Ok((z_star, trace))
}
