//! Small log-domain helpers shared across modules.

use ndarray::{Array1, ArrayView1};

/// `log Σ exp(x)` with max-subtraction. Returns −∞ for an all −∞ input.
pub fn log_sum_exp(values: ArrayView1<'_, f64>) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable log-softmax of a vector.
pub fn log_softmax(values: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(values);
    values.mapv(|v| v - lse)
}

/// Softmax of a vector, computed through [`log_softmax`].
pub fn softmax(values: ArrayView1<'_, f64>) -> Array1<f64> {
    log_softmax(values).mapv(f64::exp)
}

/// Shannon entropy (nats) of a probability row.
pub fn entropy(probs: ArrayView1<'_, f64>) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Inverse-CDF draw from a probability row using a uniform `u ∈ [0, 1)`.
pub fn sample_index(probs: ArrayView1<'_, f64>, u: f64) -> usize {
    let total: f64 = probs.sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
            acc += p;
            if target < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(array![f64::NEG_INFINITY, f64::NEG_INFINITY].view()), f64::NEG_INFINITY);
        let v = log_sum_exp(array![0.0, f64::NEG_INFINITY].view());
        assert_eq!(v, 0.0);
        let big = log_sum_exp(array![1000.0, 1000.0].view());
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn sample_index_skips_zero_mass() {
        let p = array![0.0, 1.0, 0.0];
        assert_eq!(sample_index(p.view(), 0.0), 1);
        assert_eq!(sample_index(p.view(), 0.999_999), 1);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(argmax(array![0.2, 0.8].view()), 1);
    }
}
