//! Experiment configuration: a TOML document with fixed sections. Unknown
//! keys are rejected so that a typo never silently falls back to a default.

use std::path::{Path, PathBuf};

use dlps_core::corruption::ScheduleKind;
use dlps_core::operators::{DataFit, Tier};
use dlps_core::prior::{EmpiricalBayesDenoiser, JointMode, SampleMode};
use dlps_core::sampler::{AdamConfig, AlphaTarget, ProposalForm, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::{SyntheticKind, SyntheticSpec};
use crate::error::{io_err, HarnessError, Result};

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every per-image and per-chain stream derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Independent sampler chains per image.
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    /// Directory receiving every artifact.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Evaluation images.
    pub data: DataConfig,
    /// Forward corruption process.
    #[serde(default)]
    pub process: ProcessConfig,
    /// Denoising prior.
    #[serde(default)]
    pub prior: PriorConfig,
    /// Measurement operator.
    #[serde(default)]
    pub operator: OperatorConfig,
    /// Sampler hyperparameters.
    #[serde(default)]
    pub sampler: SamplerSection,
}

fn default_chains() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("dlps-out")
}

/// Evaluation images: a dataset directory or a synthetic generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding a dataset manifest.
    pub path: Option<PathBuf>,
    /// Generated dataset used when no path is given.
    pub synthetic: Option<SyntheticConfig>,
    /// Use only the first `limit` images.
    pub limit: Option<usize>,
}

/// Synthetic generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Pattern family.
    #[serde(default)]
    pub kind: SyntheticFamily,
    /// Quantization levels of colour fields.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Image rows.
    pub height: usize,
    /// Image columns.
    pub width: usize,
    /// Channels per pixel.
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Number of images.
    pub count: usize,
    /// Generator seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_levels() -> usize {
    4
}

fn default_channels() -> usize {
    1
}

/// Pattern family of a synthetic dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFamily {
    /// Binary geometric patterns.
    #[default]
    Binary,
    /// Quantized colour fields.
    Color,
}

impl SyntheticConfig {
    /// Generator parameters for the dataset module.
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            kind: match self.kind {
                SyntheticFamily::Binary => SyntheticKind::Binary,
                SyntheticFamily::Color => SyntheticKind::Color { levels: self.levels },
            },
            height: self.height,
            width: self.width,
            channels: self.channels,
            count: self.count,
            seed: self.seed,
        }
    }
}

/// Forward corruption process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    /// Absorbing or uniform.
    #[serde(default)]
    pub kind: ProcessChoice,
    /// Noise schedule shape.
    #[serde(default)]
    pub schedule: ScheduleChoice,
    /// Lower bound on the retained fraction.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    1e-3
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self { kind: ProcessChoice::default(), schedule: ScheduleChoice::default(), floor: default_floor() }
    }
}

/// Absorbing or uniform corruption.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessChoice {
    /// Absorbing mask state.
    Masked,
    /// Uniform resampling over the vocabulary.
    #[default]
    Uniform,
}

/// Noise schedule shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleChoice {
    /// Linear in t.
    Linear,
    /// Cosine.
    #[default]
    Cosine,
    /// Log-linear.
    LogLinear,
}

impl From<ScheduleChoice> for ScheduleKind {
    fn from(value: ScheduleChoice) -> Self {
        match value {
            ScheduleChoice::Linear => ScheduleKind::Linear,
            ScheduleChoice::Cosine => ScheduleKind::Cosine,
            ScheduleChoice::LogLinear => ScheduleKind::LogLinear,
        }
    }
}

/// Denoising prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Prediction source.
    #[serde(default)]
    pub kind: PriorChoice,
    /// Uniform smoothing mass of the empirical-Bayes prior.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Dataset the empirical-Bayes prior is built from; the evaluation
    /// images when absent.
    pub dataset: Option<PathBuf>,
    /// Stored logit table for the external prior.
    pub logits: Option<PathBuf>,
}

fn default_smoothing() -> f64 {
    EmpiricalBayesDenoiser::DEFAULT_SMOOTHING
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { kind: PriorChoice::default(), smoothing: default_smoothing(), dataset: None, logits: None }
    }
}

/// Source of denoiser predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorChoice {
    /// Posterior over a finite training set.
    #[default]
    EmpiricalBayes,
    /// Stored logits.
    External,
}

/// Measurement operator and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// Operator family.
    #[serde(default)]
    pub kind: OperatorChoice,
    /// Difficulty tier of inpainting tasks.
    #[serde(default)]
    pub tier: TierChoice,
    /// Measurement noise; defaults to the tier value for inpainting tasks
    /// and 0.05 otherwise.
    pub sigma_y: Option<f64>,
    /// Hidden fraction of random inpainting; defaults to the tier value.
    pub hidden_fraction: Option<f64>,
    /// Fixed inpainting mask file, overriding the random mask.
    pub mask: Option<PathBuf>,
    /// Side of the centred hidden square; defaults to the tier value.
    pub box_side: Option<usize>,
    /// Number of random index pairs for XOR/AND; defaults to `L`.
    pub pairs: Option<usize>,
    /// Gaussian kernel side.
    #[serde(default = "default_blur_size")]
    pub blur_size: usize,
    /// Gaussian kernel width.
    #[serde(default = "default_blur_sigma")]
    pub blur_sigma: f64,
    /// Motion-blur kernel file.
    pub kernel: Option<PathBuf>,
    /// Downsampling factor.
    #[serde(default = "default_factor")]
    pub factor: usize,
}

fn default_blur_size() -> usize {
    9
}

fn default_blur_sigma() -> f64 {
    1.5
}

fn default_factor() -> usize {
    4
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            kind: OperatorChoice::default(),
            tier: TierChoice::default(),
            sigma_y: None,
            hidden_fraction: None,
            mask: None,
            box_side: None,
            pairs: None,
            blur_size: default_blur_size(),
            blur_sigma: default_blur_sigma(),
            kernel: None,
            factor: default_factor(),
        }
    }
}

/// Operator family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorChoice {
    /// Pixel-wise identity.
    Identity,
    /// Random pixel inpainting.
    #[default]
    Inpaint,
    /// Centred square inpainting.
    Box,
    /// XOR of random pairs.
    Xor,
    /// AND of random pairs.
    And,
    /// Gaussian blur.
    GaussianBlur,
    /// Motion blur.
    MotionBlur,
    /// Average-pool downsampling.
    Downsample,
    /// Clipped high-dynamic-range map.
    Hdr,
}

/// Difficulty tier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierChoice {
    /// Few hidden pixels.
    Easy,
    /// Intermediate.
    #[default]
    Medium,
    /// Many hidden pixels.
    Hard,
}

impl From<TierChoice> for Tier {
    fn from(value: TierChoice) -> Self {
        match value {
            TierChoice::Easy => Tier::Easy,
            TierChoice::Medium => Tier::Medium,
            TierChoice::Hard => Tier::Hard,
        }
    }
}

impl OperatorConfig {
    /// Effective measurement noise level.
    pub fn sigma(&self) -> f64 {
        self.sigma_y.unwrap_or(match self.kind {
            OperatorChoice::Inpaint => Tier::from(self.tier).inpaint().1,
            _ => 0.05,
        })
    }

    /// Effective hidden fraction for random inpainting.
    pub fn hidden(&self) -> f64 {
        self.hidden_fraction.unwrap_or_else(|| Tier::from(self.tier).inpaint().0)
    }

    /// Effective side of the hidden square.
    pub fn side(&self) -> usize {
        self.box_side.unwrap_or_else(|| Tier::from(self.tier).box_side())
    }
}

/// Proposal geometry names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalChoice {
    /// Integer index distance.
    Index,
    /// One-hot distance.
    #[default]
    OneHot,
    /// One-dimensional embedding distance.
    Embedding,
}

/// Where the entropy-weighted α acts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaChoice {
    /// Scales the gradient only.
    #[default]
    Gradient,
    /// Scales the locality penalty only.
    Penalty,
    /// Scales both.
    Both,
}

/// Initial clean draw of each inner chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitChoice {
    /// Sample each position from the prediction.
    Ancestral,
    /// Most likely token per position.
    #[default]
    Argmax,
}

/// Prior joint inside the potential.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointChoice {
    /// Product of per-position marginals.
    #[default]
    Factorized,
    /// Exact mixture joint.
    Exact,
}

/// Sampler hyperparameters. Data-fit weights default to the Gaussian
/// likelihood of the measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// Outer annealing steps.
    pub outer_steps: usize,
    /// Inner Langevin steps per outer step.
    pub inner_steps: usize,
    /// Step size of the locality penalty.
    pub eta: f64,
    /// Proposal geometry.
    pub proposal: ProposalChoice,
    /// Inner temperature at the first step.
    pub tau_start: f64,
    /// Inner temperature at the last step.
    pub tau_end: f64,
    /// Base blend weight.
    pub alpha_base: f64,
    /// Minimum blend weight.
    pub alpha_min: f64,
    /// Where the blend weight acts.
    pub alpha_target: AlphaChoice,
    /// Initial likelihood weight.
    pub beta_0: f64,
    /// Final likelihood weight.
    pub beta_max: f64,
    /// Guidance scale at the first outer step.
    pub grad_scale_init: f64,
    /// Guidance scale at the last outer step.
    pub grad_scale_final: f64,
    /// Adam first-moment decay.
    pub adam_beta1: f64,
    /// Adam second-moment decay.
    pub adam_beta2: f64,
    /// Adam denominator floor.
    pub adam_eps: f64,
    /// Whether to Adam-normalize gradients.
    pub precondition: bool,
    /// Whether to apply the Metropolis-Hastings correction.
    pub mh: bool,
    /// Initial clean draw.
    pub init: InitChoice,
    /// Prior joint inside the potential.
    pub prior_mode: JointChoice,
    /// Weight of the l1 data-fit term.
    pub fit_l1: Option<f64>,
    /// Weight of the l2 data-fit term.
    pub fit_l2: Option<f64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            outer_steps: d.outer_steps,
            inner_steps: d.inner_steps,
            eta: d.eta,
            proposal: ProposalChoice::default(),
            tau_start: d.tau_start,
            tau_end: d.tau_end,
            alpha_base: d.alpha_base,
            alpha_min: d.alpha_min,
            alpha_target: AlphaChoice::default(),
            beta_0: d.beta_0,
            beta_max: d.beta_max,
            grad_scale_init: d.grad_scale_init,
            grad_scale_final: d.grad_scale_final,
            adam_beta1: d.adam.beta1,
            adam_beta2: d.adam.beta2,
            adam_eps: d.adam.eps,
            precondition: d.precondition,
            mh: d.mh,
            init: InitChoice::default(),
            prior_mode: JointChoice::default(),
            fit_l1: None,
            fit_l2: None,
        }
    }
}

/// Noise level below which the default Gaussian data fit is floored.
pub const FIT_SIGMA_FLOOR: f64 = 0.01;

impl SamplerSection {
    /// Data fit: explicit weights, else Gaussian in `max(σ_y, 0.01)`.
    pub fn fit(&self, sigma_y: f64) -> Result<DataFit> {
        let gaussian = DataFit::gaussian(sigma_y.max(FIT_SIGMA_FLOOR))?;
        let fit = DataFit { l1: self.fit_l1.unwrap_or(0.0), l2: self.fit_l2.unwrap_or(gaussian.l2) };
        fit.validate()?;
        Ok(fit)
    }

    /// Core sampler configuration with the given data fit and seed.
    pub fn to_sampler(&self, fit: DataFit, seed: u64) -> SamplerConfig {
        SamplerConfig {
            outer_steps: self.outer_steps,
            inner_steps: self.inner_steps,
            eta: self.eta,
            proposal_form: match self.proposal {
                ProposalChoice::Index => ProposalForm::Index,
                ProposalChoice::OneHot => ProposalForm::OneHot,
                ProposalChoice::Embedding => ProposalForm::Embedding,
            },
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            alpha_base: self.alpha_base,
            alpha_min: self.alpha_min,
            alpha_target: match self.alpha_target {
                AlphaChoice::Gradient => AlphaTarget::Gradient,
                AlphaChoice::Penalty => AlphaTarget::Penalty,
                AlphaChoice::Both => AlphaTarget::Both,
            },
            beta_0: self.beta_0,
            beta_max: self.beta_max,
            grad_scale_init: self.grad_scale_init,
            grad_scale_final: self.grad_scale_final,
            adam: AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps },
            precondition: self.precondition,
            mh: self.mh,
            init_mode: match self.init {
                InitChoice::Ancestral => SampleMode::Ancestral,
                InitChoice::Argmax => SampleMode::Argmax,
            },
            fit,
            prior_mode: match self.prior_mode {
                JointChoice::Factorized => JointMode::Factorized,
                JointChoice::Exact => JointMode::Exact,
            },
            likelihood_mode: dlps_core::potential::LikelihoodMode::Explicit,
            seed,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML rendering, used for the config echo.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Structural checks that need no file access beyond existence.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.into()));
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return fail("data.path and data.synthetic are mutually exclusive"),
            (None, None) => return fail("one of data.path or data.synthetic is required"),
            (Some(p), None) if !p.is_dir() => {
                return Err(HarnessError::Config(format!("dataset directory {} does not exist", p.display())))
            }
            _ => {}
        }
        if self.n_chains == 0 {
            return fail("n_chains must be ≥ 1");
        }
        let op = &self.operator;
        if !(op.sigma() >= 0.0) {
            return fail("sigma_y must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&op.hidden()) {
            return fail("hidden_fraction must lie in [0, 1]");
        }
        if op.kind == OperatorChoice::MotionBlur && op.kernel.is_none() {
            return fail("motion-blur needs operator.kernel");
        }
        if self.prior.kind == PriorChoice::External && self.prior.logits.is_none() {
            return fail("external prior needs prior.logits");
        }
        for path in [&op.mask, &op.kernel, &self.prior.logits, &self.prior.dataset].into_iter().flatten() {
            if !path.exists() {
                return Err(HarnessError::Config(format!("{} does not exist", path.display())));
            }
        }
        let fit = self.sampler.fit(op.sigma())?;
        self.sampler.to_sampler(fit, 0).validate()?;
        Ok(())
    }
}
