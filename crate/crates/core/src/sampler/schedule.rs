//! Outer- and inner-loop hyperparameter schedules.

use crate::sampler::SamplerConfig;

/// Linear interpolation hitting both endpoints exactly; a single step
/// evaluates at the final endpoint.
fn ramp(start: f64, end: f64, index: usize, count: usize) -> f64 {
    if count <= 1 || index + 1 >= count {
        end
    } else if index == 0 {
        start
    } else {
        start + (end - start) * index as f64 / (count - 1) as f64
    }
}

/// Likelihood weight at outer iteration `r` (0 is the noisiest step).
pub fn beta_at(cfg: &SamplerConfig, r: usize) -> f64 {
    ramp(cfg.beta_0, cfg.beta_max, r, cfg.outer_steps)
}

/// Gradient scale at outer iteration `r`.
pub fn grad_scale_at(cfg: &SamplerConfig, r: usize) -> f64 {
    ramp(cfg.grad_scale_init, cfg.grad_scale_final, r, cfg.outer_steps)
}

/// Geometric temperature at inner step `m`; constant `τ_start` when `M = 1`.
pub fn tau_at(cfg: &SamplerConfig, m: usize) -> f64 {
    let count = cfg.inner_steps;
    if count <= 1 || m == 0 {
        cfg.tau_start
    } else if m + 1 >= count {
        cfg.tau_end
    } else {
        cfg.tau_start * (cfg.tau_end / cfg.tau_start).powf(m as f64 / (count - 1) as f64)
    }
}

/// Per-position blend `α_min + (α_base − α_min)(1 − H / log K)`.
pub fn alpha_blend(cfg: &SamplerConfig, entropies: &[f64], vocab: usize) -> Vec<f64> {
    let max_entropy = (vocab as f64).ln();
    entropies
        .iter()
        .map(|&h| {
            let confidence = (1.0 - h / max_entropy).clamp(0.0, 1.0);
            if confidence == 0.0 {
                cfg.alpha_min
            } else {
                cfg.alpha_min + (cfg.alpha_base - cfg.alpha_min) * confidence
            }
        })
        .collect()
}

/// All schedule values for one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSchedule {
    /// Likelihood weight.
    pub beta: f64,
    /// Guidance multiplier.
    pub grad_scale: f64,
    /// Per-position `α`.
    pub alphas: Vec<f64>,
}

impl OuterSchedule {
    /// Schedule values at outer iteration `r` from the denoiser entropies.
    pub fn new(cfg: &SamplerConfig, r: usize, entropies: &[f64], vocab: usize) -> Self {
        Self {
            beta: beta_at(cfg, r),
            grad_scale: grad_scale_at(cfg, r),
            alphas: alpha_blend(cfg, entropies, vocab),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SamplerConfig {
        SamplerConfig {
            outer_steps: 7,
            inner_steps: 3,
            beta_0: 0.3,
            beta_max: 11.1,
            tau_start: 2.0,
            tau_end: 0.5,
            alpha_base: 1.0,
            alpha_min: 0.2,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let c = cfg();
        assert_eq!(beta_at(&c, 0), 0.3);
        assert_eq!(beta_at(&c, 6), 11.1);
        assert_eq!(tau_at(&c, 0), 2.0);
        assert_eq!(tau_at(&c, 2), 0.5);
        assert!((tau_at(&c, 1) - 1.0).abs() < 1e-15);
        let single = SamplerConfig { outer_steps: 1, ..c.clone() };
        assert_eq!(beta_at(&single, 0), 11.1);
        let one_inner = SamplerConfig { inner_steps: 1, ..c };
        assert_eq!(tau_at(&one_inner, 0), 2.0);
    }

    #[test]
    fn entropy_blend() {
        let c = cfg();
        let a = alpha_blend(&c, &[2f64.ln(), 0.0, 0.5 * 2f64.ln()], 2);
        assert_eq!(a[0], 0.2);
        assert_eq!(a[1], 1.0);
        assert!((a[2] - 0.6).abs() < 1e-15);
    }
}
