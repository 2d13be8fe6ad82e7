//! Graph convolution over one snapshot followed by a dense layer.
//!
//! For every node `i` and level `r` the message is
//! `sum_{j in N_{i,r}} W_r[j] / c_ij`. Messages are concatenated or summed
//! over levels, passed through ReLU, then through the shared dense layer and
//! ReLU again. Inputs are one-hot, so `W_r x_j` is row `j` of `W_r` and is
//! read directly instead of multiplying by an identity matrix.
//!
//! Dropout is applied twice in training mode: to the one-hot inputs (one
//! mask over nodes, shared by all levels) and to the resulting encodings.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::AdjacencyStructure;
use crate::model::config::{Accumulation, ModelConfig};
use crate::model::params::{level_name, BoundParams, DENSE};
use crate::tape::{dropout_mask, Tape, Var};

/// Encoder weights on a tape, with ordinal sharing already materialized.
#[derive(Clone, Debug)]
pub struct EncoderWeights {
    levels: Vec<Var>,
    dense: Var,
}

impl EncoderWeights {
    pub fn bind(tape: &mut Tape, bound: &BoundParams, config: &ModelConfig) -> Result<Self> {
        let mut levels = Vec::with_capacity(config.n_levels());
        for level in 0..config.n_levels() {
            let inc = bound.get(&level_name(level))?;
            let w = match levels.last() {
                Some(&prev) if config.ordinal_sharing => tape.add(prev, inc)?,
                _ => inc,
            };
            levels.push(w);
        }
        Ok(EncoderWeights {
            levels,
            dense: bound.get(DENSE)?,
        })
    }

    pub fn level(&self, r: usize) -> Var {
        self.levels[r]
    }
}

/// Encodes every node of one snapshot. Returns an `n_nodes x output` matrix
/// with users first, then items.
pub fn encode_step<R: Rng + ?Sized>(
    tape: &mut Tape,
    weights: &EncoderWeights,
    adj: &AdjacencyStructure,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if adj.n_nodes() != config.input_dim() || adj.n_levels() != config.n_levels() {
        return Err(Error::Config(alloc::format!(
            "adjacency has {} nodes and {} levels, model expects {} and {}",
            adj.n_nodes(),
            adj.n_levels(),
            config.input_dim(),
            config.n_levels()
        )));
    }
    let input_mask: Option<Arc<[f64]>> = if training && config.dropout > 0.0 {
        Some(dropout_mask(config.input_dim(), config.dropout, rng)?.into())
    } else {
        None
    };

    let mut messages = Vec::with_capacity(config.n_levels());
    for r in 0..config.n_levels() {
        let mut w = weights.level(r);
        if let Some(mask) = &input_mask {
            w = tape.scale_rows(w, Arc::clone(mask))?;
        }
        messages.push(tape.gather_accumulate(w, adj.messages(r))?);
    }
    let pre = match config.accumulation {
        Accumulation::Concat => tape.concat_cols(&messages)?,
        Accumulation::Sum => {
            let mut acc = messages[0];
            for &m in &messages[1..] {
                acc = tape.add(acc, m)?;
            }
            acc
        }
    };
    let hidden = tape.relu(pre)?;
    let dense = tape.matmul(hidden, weights.dense)?;
    let z = tape.relu(dense)?;
    tape.dropout(z, config.dropout, training, rng)
}
