//! Bilinear softmax decoder and rating expectation.
//!
//! The score of level `r` for a user/item pair is `z_u^T Q_r z_v` with
//! `Q_r = sum_s a_rs P_s`. On the tape this is evaluated per basis as
//! `(Z P_s)[u] . Z[v]`, which costs one dense product per basis instead of
//! one bilinear form per pair and level.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::{basis_name, BoundParams, Parameters, DECODER_COEFFICIENTS};
use crate::tape::{log_sum_exp, Tape, Var};
use crate::tensor::Tensor;

/// Logits for every pair, `E x levels`. `pairs` index rows of `z`.
pub fn decode_logits(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    z: Var,
    pairs: &Arc<[(usize, usize)]>,
) -> Result<Var> {
    let mut per_basis = Vec::with_capacity(config.basis_count);
    for s in 0..config.basis_count {
        let projected = tape.matmul(z, bound.get(&basis_name(s))?)?;
        per_basis.push(tape.row_dot(projected, z, pairs)?);
    }
    let stacked = tape.concat_cols(&per_basis)?;
    tape.matmul(stacked, bound.get(DECODER_COEFFICIENTS)?)
}

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoder logits"));
    }
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|&z| libm::exp(z - lse)).collect())
}

/// Rating-level distribution for a single pair of encodings.
pub fn decode(z_u: &[f64], z_v: &[f64], params: &Parameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let d = config.z_dim();
    if z_u.len() != d || z_v.len() != d {
        return Err(Error::ShapeMismatch {
            op: "decode",
            lhs: [1, z_u.len()],
            rhs: [1, z_v.len()],
        });
    }
    let zu = Tensor::from_vec(1, d, z_u.to_vec())?;
    let zv = Tensor::from_vec(d, 1, z_v.to_vec())?;
    let mut logits = Vec::with_capacity(config.n_levels());
    for level in 0..config.n_levels() {
        let q = params.decoder_matrix(config, level)?;
        logits.push(zu.matmul(&q)?.matmul(&zv)?.item());
    }
    softmax(&logits)
}

/// Expected rating `sum_r value_r * P(r)`.
pub fn predict_rating(prob: &[f64], values: &[i32]) -> Result<f64> {
    if prob.len() != values.len() {
        return Err(Error::ShapeMismatch {
            op: "predict_rating",
            lhs: [1, prob.len()],
            rhs: [1, values.len()],
        });
    }
    let total: f64 = prob.iter().sum();
    if !total.is_finite() || libm::fabs(total - 1.0) > 1e-9 {
        return Err(Error::NotNormalized(total));
    }
    let lo = values.iter().copied().min().map_or(0.0, f64::from);
    let hi = values.iter().copied().max().map_or(0.0, f64::from);
    // a convex combination cannot leave [lo, hi]; only roundoff can
    let e: f64 = prob.iter().zip(values).map(|(p, &v)| p * f64::from(v)).sum();
    Ok(e.clamp(lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    /// `-sum log P(target)` over all pairs.
    pub total: f64,
    pub mean: f64,
}

/// Negative log-likelihood of `targets` under row-wise distributions.
pub fn negative_log_likelihood(probs: &Tensor, targets: &[usize]) -> Result<Loss> {
    if targets.is_empty() {
        return Err(Error::Empty("loss targets"));
    }
    if probs.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "negative_log_likelihood",
            lhs: probs.shape(),
            rhs: [targets.len(), 1],
        });
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= probs.cols() {
            return Err(Error::IndexOutOfRange {
                op: "negative_log_likelihood",
                index: t,
                len: probs.cols(),
            });
        }
        total -= libm::log(probs.get(i, t));
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("negative_log_likelihood"));
    }
    Ok(Loss {
        total,
        mean: total / targets.len() as f64,
    })
}
