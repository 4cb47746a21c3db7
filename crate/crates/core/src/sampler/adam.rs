//! Diagonal Adam preconditioning of proposal gradients.

use ndarray::{Array2, Zip};

/// Adam moment decays and stabiliser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Stabiliser added to `√v̂`.
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-3,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Array2<f64>,
    v: Array2<f64>,
    step: u64,
}

impl AdamState {
    /// Zero moments for gradients of `shape`.
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            step: 0,
        }
    }

    /// Number of updates folded in so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// First-moment estimate.
    pub fn first_moment(&self) -> &Array2<f64> {
        &self.m
    }

    /// Second-moment estimate.
    pub fn second_moment(&self) -> &Array2<f64> {
        &self.v
    }

    /// Bias-corrected direction `m̂ / (√v̂ + ε)` that an update with `g`
    /// would produce, without mutating the state.
    pub fn peek(&self, g: &Array2<f64>, cfg: &AdamConfig) -> Array2<f64> {
        self.clone().update(g, cfg)
    }

    /// Folds `g` into the moments and returns the bias-corrected direction.
    pub fn update(&mut self, g: &Array2<f64>, cfg: &AdamConfig) -> Array2<f64> {
        assert_eq!(g.dim(), self.m.dim(), "gradient shape differs from Adam state");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let mut out = Array2::zeros(g.dim());
        Zip::from(&mut out)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(g)
            .for_each(|o, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *o = (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            });
        out
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_precondition(g: &Array2<f64>, state: &mut AdamState, cfg: &AdamConfig) -> Array2<f64> {
    state.update(g, cfg)
}
