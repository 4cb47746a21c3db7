//! Factorized discrete Langevin proposals in index, one-hot and embedding
//! geometry, and parallel sampling from them.
//!
//! Every form is the per-position restriction of the Gaussian kernel
//! `exp(−‖φ(z′) − φ(z) − η g‖² / 4η)` to valid tokens, written relative to the
//! current token so that the self-logit is exactly zero.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{sample_index, softmax};
use crate::rng::StreamKey;
use crate::tokenspace::{Codebook, TokenSequence};

/// Step size, shared or per position.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSize {
    /// One `η` for every position.
    Shared(f64),
    /// One `η` per position.
    PerPosition(Vec<f64>),
}

impl StepSize {
    /// `η` at `position`.
    #[inline]
    pub fn at(&self, position: usize) -> f64 {
        match self {
            StepSize::Shared(eta) => *eta,
            StepSize::PerPosition(etas) => etas[position],
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        let ok = match self {
            StepSize::Shared(eta) => *eta > 0.0,
            StepSize::PerPosition(etas) => etas.len() == len && etas.iter().all(|&e| e > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "step size must be positive with one entry per position: {self:?}"
            )))
        }
    }
}

impl From<f64> for StepSize {
    fn from(eta: f64) -> Self {
        StepSize::Shared(eta)
    }
}

fn check_tokens(z0: &TokenSequence, len: usize, vocab: usize) -> Result<()> {
    if z0.len() != len {
        return Err(Error::Shape(format!("z0 has length {}, gradient has {len} rows", z0.len())));
    }
    for (position, &token) in z0.iter().enumerate() {
        if token >= vocab {
            return Err(Error::TokenOutOfRange { position, token, vocab });
        }
    }
    Ok(())
}

/// `r[ℓ,k] = ½ g[ℓ](k − z₀[ℓ]) − (k − z₀[ℓ])² / 4η`.
pub fn proposal_logits_index(g: &[f64], z0: &TokenSequence, vocab: usize, eta: impl Into<StepSize>) -> Result<Array2<f64>> {
    let eta = eta.into();
    eta.check(g.len())?;
    check_tokens(z0, g.len(), vocab)?;
    Ok(Array2::from_shape_fn((g.len(), vocab), |(l, k)| {
        let d = k as f64 - z0[l] as f64;
        if k == z0[l] {
            0.0
        } else {
            0.5 * g[l] * d - d * d / (4.0 * eta.at(l))
        }
    }))
}

/// `r[ℓ,k] = ½(g[ℓ,k] − g[ℓ,z₀[ℓ]]) − 1/2η` for `k ≠ z₀[ℓ]`, zero otherwise.
pub fn proposal_logits_onehot(g: ArrayView2<'_, f64>, z0: &TokenSequence, eta: impl Into<StepSize>) -> Result<Array2<f64>> {
    let eta = eta.into();
    eta.check(g.nrows())?;
    check_tokens(z0, g.nrows(), g.ncols())?;
    Ok(Array2::from_shape_fn(g.dim(), |(l, k)| {
        let z = z0[l];
        if k == z {
            0.0
        } else {
            0.5 * (g[[l, k]] - g[[l, z]]) - 1.0 / (2.0 * eta.at(l))
        }
    }))
}

/// `r[ℓ,k] = ½ g[ℓ]·(c_k − c_z) + ½ Δ[ℓ,k] − ‖c_k − c_z‖² / 4η`, where `g` is
/// the likelihood gradient in embedding space and `Δ` the prior deltas.
pub fn proposal_logits_embedding(
    g: ArrayView2<'_, f64>,
    deltas: ArrayView2<'_, f64>,
    codebook: &Codebook,
    z0: &TokenSequence,
    eta: impl Into<StepSize>,
) -> Result<Array2<f64>> {
    let eta = eta.into();
    let (len, dim) = g.dim();
    let vocab = codebook.size();
    eta.check(len)?;
    if dim != codebook.dim() || deltas.dim() != (len, vocab) {
        return Err(Error::Shape(format!(
            "gradient {:?}, deltas {:?}, codebook {}×{}",
            g.dim(),
            deltas.dim(),
            vocab,
            codebook.dim()
        )));
    }
    check_tokens(z0, len, vocab)?;
    let c = codebook.entries();
    Ok(Array2::from_shape_fn((len, vocab), |(l, k)| {
        let z = z0[l];
        if k == z {
            return 0.0;
        }
        let mut drift = 0.0;
        for j in 0..dim {
            drift += g[[l, j]] * (c[[k, j]] - c[[z, j]]);
        }
        0.5 * drift + 0.5 * deltas[[l, k]] - codebook.sq_dist(k, z) / (4.0 * eta.at(l))
    }))
}

/// Per-position probabilities `softmax(r[ℓ] / τ)`.
pub fn proposal_probs(logits: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (mut dst, row) in out.axis_iter_mut(Axis(0)).zip(logits.axis_iter(Axis(0))) {
        dst.assign(&softmax(row.mapv(|r| r / tau).view()));
    }
    out
}

const PARALLEL_MIN_ROWS: usize = 512;

/// Draws every position independently; position `ℓ` consumes word `ℓ` of
/// `key`, so the result does not depend on thread scheduling.
pub fn sample_proposal(logits: &Array2<f64>, tau: f64, key: &StreamKey) -> Result<TokenSequence> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    let draw = |(l, row): (usize, ndarray::ArrayView1<'_, f64>)| {
        let probs = softmax(row.mapv(|r| r / tau).view());
        sample_index(probs.view(), key.uniform(l as u64))
    };
    let tokens: Vec<usize> = if logits.nrows() >= PARALLEL_MIN_ROWS {
        (0..logits.nrows())
            .into_par_iter()
            .map(|l| draw((l, logits.row(l))))
            .collect()
    } else {
        logits.axis_iter(Axis(0)).enumerate().map(draw).collect()
    };
    Ok(TokenSequence::new(tokens))
}
