//! Token sequences, one-hot relaxations, codebooks and the token → intensity
//! decoder used for pixel-space problems.
//!
//! Clean tokens live in `0..K`. Masked processes append one extra symbol at
//! index `K`; it never appears in a clean sequence and has no intensity.

use std::ops::Deref;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Vocabulary description shared by every component of a problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabSpec {
    size: usize,
    masked: bool,
    intensity: Vec<f64>,
}

impl VocabSpec {
    /// `K` visible tokens with the default intensity map `k / (K − 1)`.
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs at least 2 tokens, got {size}"
            )));
        }
        let denom = (size - 1) as f64;
        let intensity = (0..size).map(|k| k as f64 / denom).collect();
        Ok(Self {
            size,
            masked: false,
            intensity,
        })
    }

    /// Custom intensity map; must be strictly increasing inside `[0, 1]`.
    pub fn with_intensities(intensity: Vec<f64>) -> Result<Self> {
        let size = intensity.len();
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs at least 2 tokens, got {size}"
            )));
        }
        if intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("intensities must lie in [0, 1]".into()));
        }
        if intensity.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(
                "intensity map must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            size,
            masked: false,
            intensity,
        })
    }

    /// Adds the absorbing mask symbol at index `K`.
    pub fn with_mask(mut self) -> Self {
        self.masked = true;
        self
    }

    /// The same vocabulary without a mask token.
    pub fn without_mask(mut self) -> Self {
        self.masked = false;
        self
    }

    /// Number of visible (clean) tokens `K`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Whether a mask token is appended after the clean tokens.
    pub fn is_masked(&self) -> bool {
        self.masked
    }

    /// Index of the mask token, equal to `K`, when present.
    pub fn mask_index(&self) -> Option<usize> {
        self.masked.then_some(self.size)
    }

    /// Size of the noisy-state alphabet: `K + 1` with a mask, else `K`.
    pub fn model_size(&self) -> usize {
        self.size + usize::from(self.masked)
    }

    /// Intensity of a clean token.
    pub fn intensity(&self, token: usize) -> f64 {
        self.intensity[token]
    }

    /// Intensities of all clean tokens in order.
    pub fn intensities(&self) -> &[f64] {
        &self.intensity
    }

    /// Average intensity increment between neighbouring token indices.
    pub fn intensity_step(&self) -> f64 {
        (self.intensity[self.size - 1] - self.intensity[0]) / (self.size - 1) as f64
    }

    /// Checks a clean sequence: non-empty and every token in `0..K`.
    pub fn check_clean(&self, z: &TokenSequence) -> Result<()> {
        if z.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        for (position, &token) in z.iter().enumerate() {
            if token >= self.size {
                return Err(Error::TokenOutOfRange {
                    position,
                    token,
                    vocab: self.size,
                });
            }
        }
        Ok(())
    }

    /// Checks a noisy sequence: tokens in `0..model_size()`.
    pub fn check_noisy(&self, z: &TokenSequence) -> Result<()> {
        if z.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        for (position, &token) in z.iter().enumerate() {
            if token >= self.model_size() {
                return Err(Error::TokenOutOfRange {
                    position,
                    token,
                    vocab: self.model_size(),
                });
            }
        }
        Ok(())
    }
}

/// A length-`L` sequence of token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    /// Wraps a vector of token ids.
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    /// The underlying token ids.
    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Token ids as a slice.
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Mutable token ids.
    pub fn as_mut_slice(&mut self) -> &mut [usize] {
        &mut self.0
    }

    /// Copy with position `position` replaced by `token`.
    pub fn with_token(&self, position: usize, token: usize) -> Self {
        let mut out = self.clone();
        out.0[position] = token;
        out
    }
}

impl Deref for TokenSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSequence {
    fn from(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }
}

impl FromIterator<usize> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `L × K` row-stochastic relaxation of a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotSequence(Array2<f64>);

impl OneHotSequence {
    /// Validates an `L × K` matrix whose rows lie on the probability simplex.
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() < 2 {
            return Err(Error::Shape(format!(
                "one-hot matrix must be L×K with L ≥ 1, K ≥ 2, got {:?}",
                weights.dim()
            )));
        }
        for (row, values) in weights.axis_iter(Axis(0)).enumerate() {
            if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "row {row} has a negative or non-finite weight"
                )));
            }
            let sum = values.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!("row {row} sums to {sum}")));
            }
        }
        Ok(Self(weights))
    }

    /// The `L × K` weight matrix.
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Consumes the sequence and returns its weights.
    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Sequence length `L`.
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    /// Whether the sequence has no positions.
    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    /// Vocabulary size `K`.
    pub fn vocab_size(&self) -> usize {
        self.0.ncols()
    }
}

/// Embedding vectors `c_k`, one row per clean token.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook(Array2<f64>);

impl Codebook {
    /// Codebook from a `K × d` matrix of finite embeddings.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() < 2 || entries.ncols() == 0 {
            return Err(Error::Shape(format!(
                "codebook must be K×d with K ≥ 2, d ≥ 1, got {:?}",
                entries.dim()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("codebook entries must be finite".into()));
        }
        Ok(Self(entries))
    }

    /// One-dimensional codebook whose entries are the token intensities.
    pub fn from_intensities(vocab: &VocabSpec) -> Self {
        let entries = Array2::from_shape_vec((vocab.size(), 1), vocab.intensities().to_vec())
            .expect("shape matches intensity count");
        Self(entries)
    }

    /// Standard basis codebook; makes the embedding form coincide with the one-hot form.
    pub fn one_hot(size: usize) -> Self {
        Self(Array2::eye(size))
    }

    /// The `K × d` embedding matrix.
    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Number of entries `K`.
    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    /// Squared Euclidean distance between entries `a` and `b`.
    pub fn sq_dist(&self, a: usize, b: usize) -> f64 {
        self.0
            .row(a)
            .iter()
            .zip(self.0.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }
}

/// Row `ℓ` becomes the basis vector `e_{z[ℓ]}`.
pub fn to_one_hot(z: &TokenSequence, vocab: &VocabSpec) -> Result<OneHotSequence> {
    vocab.check_clean(z)?;
    let mut weights = Array2::zeros((z.len(), vocab.size()));
    for (position, &token) in z.iter().enumerate() {
        weights[[position, token]] = 1.0;
    }
    Ok(OneHotSequence(weights))
}

/// Row-wise argmax projection; ties resolve to the lowest token index.
pub fn from_one_hot(w: &OneHotSequence) -> TokenSequence {
    w.0.axis_iter(Axis(0))
        .map(|row| crate::numeric::argmax(row))
        .collect()
}

/// Maps tokens to intensities. Fails on mask tokens.
pub fn decode(z: &TokenSequence, vocab: &VocabSpec) -> Result<Vec<f64>> {
    z.iter()
        .enumerate()
        .map(|(position, &token)| {
            if Some(token) == vocab.mask_index() {
                Err(Error::MaskToken(position))
            } else if token >= vocab.size() {
                Err(Error::TokenOutOfRange {
                    position,
                    token,
                    vocab: vocab.size(),
                })
            } else {
                Ok(vocab.intensity(token))
            }
        })
        .collect()
}

/// Expected intensity under each row of `w`.
pub fn decode_relaxed(w: &OneHotSequence, vocab: &VocabSpec) -> Result<Vec<f64>> {
    if w.vocab_size() != vocab.size() {
        return Err(Error::Shape(format!(
            "one-hot width {} does not match vocabulary size {}",
            w.vocab_size(),
            vocab.size()
        )));
    }
    Ok(w.0
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .zip(vocab.intensities())
                .map(|(weight, value)| weight * value)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn binary() -> VocabSpec {
        VocabSpec::new(2).unwrap()
    }

    #[test]
    fn one_hot_basis_vectors() {
        let w = to_one_hot(&TokenSequence::new(vec![0]), &binary()).unwrap();
        assert_eq!(w.weights(), array![[1.0, 0.0]]);
        let w = to_one_hot(&TokenSequence::new(vec![1, 0]), &binary()).unwrap();
        assert_eq!(w.weights(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn one_hot_rejects_out_of_range() {
        let err = to_one_hot(&TokenSequence::new(vec![0, 2]), &binary()).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { position: 1, token: 2, .. }));
    }

    #[test]
    fn from_one_hot_argmax_and_ties() {
        let w = |m: Array2<f64>| OneHotSequence::new(m).unwrap();
        assert_eq!(from_one_hot(&w(array![[1.0, 0.0]])).as_slice(), &[0]);
        assert_eq!(from_one_hot(&w(array![[0.5, 0.5]])).as_slice(), &[0]);
        assert_eq!(from_one_hot(&w(array![[0.2, 0.8]])).as_slice(), &[1]);
    }

    #[test]
    fn non_normalized_rows_rejected() {
        assert!(matches!(
            OneHotSequence::new(array![[0.5, 0.6]]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            OneHotSequence::new(array![[-0.5, 1.5]]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(&vec![0, 1].into(), &binary()).unwrap(), vec![0.0, 1.0]);
        let v256 = VocabSpec::new(256).unwrap();
        assert_eq!(decode(&vec![255].into(), &v256).unwrap(), vec![1.0]);
        let mid = decode(&vec![128].into(), &v256).unwrap()[0];
        assert!((mid - 0.501_960_784_313_725_5).abs() < 1e-15);
    }

    #[test]
    fn decode_rejects_mask() {
        let vocab = binary().with_mask();
        assert!(matches!(
            decode(&vec![0, 2].into(), &vocab),
            Err(Error::MaskToken(1))
        ));
    }

    #[test]
    fn decode_relaxed_examples() {
        let vocab = binary();
        let hard = to_one_hot(&vec![1].into(), &vocab).unwrap();
        assert_eq!(decode_relaxed(&hard, &vocab).unwrap(), vec![1.0]);
        let half = OneHotSequence::new(array![[0.5, 0.5]]).unwrap();
        assert_eq!(decode_relaxed(&half, &vocab).unwrap(), vec![0.5]);
        let w = OneHotSequence::new(array![[0.25, 0.75]]).unwrap();
        assert_eq!(decode_relaxed(&w, &vocab).unwrap(), vec![0.75]);
    }

    #[test]
    fn intensity_map_validation() {
        assert!(VocabSpec::new(1).is_err());
        assert!(VocabSpec::with_intensities(vec![0.0, 0.0]).is_err());
        assert!(VocabSpec::with_intensities(vec![0.0, 1.5]).is_err());
        let v = VocabSpec::with_intensities(vec![0.0, 0.2, 1.0]).unwrap();
        assert_eq!(v.intensity(1), 0.2);
        assert_eq!(v.with_mask().mask_index(), Some(3));
    }

    fn sequence(k: usize, len: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..k, len)
    }

    proptest! {
        #[test]
        fn one_hot_round_trip(tokens in sequence(8, 16)) {
            let vocab = VocabSpec::new(8).unwrap();
            let z = TokenSequence::new(tokens);
            prop_assert_eq!(from_one_hot(&to_one_hot(&z, &vocab).unwrap()), z);
        }

        #[test]
        fn relaxed_decode_matches_hard_decode(tokens in sequence(5, 12)) {
            let vocab = VocabSpec::new(5).unwrap();
            let z = TokenSequence::new(tokens);
            let relaxed = decode_relaxed(&to_one_hot(&z, &vocab).unwrap(), &vocab).unwrap();
            prop_assert_eq!(relaxed, decode(&z, &vocab).unwrap());
        }

        #[test]
        fn relaxed_decode_is_linear(
            a in sequence(4, 6),
            b in sequence(4, 6),
            lambda in 0.0f64..=1.0,
        ) {
            let vocab = VocabSpec::new(4).unwrap();
            let wa = to_one_hot(&a.into(), &vocab).unwrap();
            let wb = to_one_hot(&b.into(), &vocab).unwrap();
            let mixed = &wa.weights() * lambda + &wb.weights() * (1.0 - lambda);
            let mixed = OneHotSequence::new(mixed).unwrap();
            let lhs = decode_relaxed(&mixed, &vocab).unwrap();
            let da = decode_relaxed(&wa, &vocab).unwrap();
            let db = decode_relaxed(&wb, &vocab).unwrap();
            for i in 0..lhs.len() {
                let rhs = lambda * da[i] + (1.0 - lambda) * db[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-12);
            }
        }
    }
}
