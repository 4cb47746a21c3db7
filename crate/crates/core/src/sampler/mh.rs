//! Metropolis–Hastings correction for factorized proposals.

use ndarray::{Array2, Axis};

use crate::numeric::log_softmax;
use crate::tokenspace::TokenSequence;

/// `log q(z | logits)` for the tempered product-of-categoricals proposal.
pub fn proposal_log_prob(logits: &Array2<f64>, tau: f64, z: &TokenSequence) -> f64 {
    logits
        .axis_iter(Axis(0))
        .zip(z.iter())
        .map(|(row, &k)| log_softmax(row.mapv(|r| r / tau).view())[k])
        .sum()
}

/// Log acceptance ratio `ΔU + log q_rev − log q_fwd`, handling `−∞` potentials.
pub fn log_acceptance(u_cur: f64, u_prop: f64, log_q_fwd: f64, log_q_rev: f64) -> f64 {
    if u_prop == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if u_cur == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    (u_prop - u_cur) + (log_q_rev - log_q_fwd)
}

/// Accepts `z_prop` with probability `min{1, exp(ΔU)·q_rev/q_fwd}` using the
/// uniform draw `u`. Returns the decision and the next state.
#[allow(clippy::too_many_arguments)]
pub fn mh_accept(
    z_cur: &TokenSequence,
    z_prop: &TokenSequence,
    u_cur: f64,
    u_prop: f64,
    fwd_logits: &Array2<f64>,
    rev_logits: &Array2<f64>,
    tau: f64,
    u: f64,
) -> (bool, TokenSequence) {
    if z_prop == z_cur {
        return (true, z_cur.clone());
    }
    let log_q_fwd = proposal_log_prob(fwd_logits, tau, z_prop);
    let log_q_rev = proposal_log_prob(rev_logits, tau, z_cur);
    let log_a = log_acceptance(u_cur, u_prop, log_q_fwd, log_q_rev);
    if log_a >= 0.0 || u < log_a.exp() {
        (true, z_prop.clone())
    } else {
        (false, z_cur.clone())
    }
}
