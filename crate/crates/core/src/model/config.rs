use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NormScheme, SequenceMode};

/// How per-level messages are combined into the hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulation {
    /// Each level contributes `hidden / levels` columns.
    Concat,
    /// Each level contributes all `hidden` columns and the results are summed.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    None,
    Gru,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Rating value of each level, ascending.
    pub rating_values: Vec<i32>,
    pub hidden: usize,
    pub output: usize,
    pub accumulation: Accumulation,
    pub dropout: f64,
    pub norm: NormScheme,
    pub mode: SequenceMode,
    pub cell: CellKind,
    pub recurrent_hidden: usize,
    pub steps: usize,
    pub ordinal_sharing: bool,
    pub basis_count: usize,
}

impl ModelConfig {
    /// Defaults used for ML-100k: concatenation, left normalization,
    /// hidden 500, output 75, dropout 0.7.
    pub fn new(n_users: usize, n_items: usize, rating_values: Vec<i32>) -> Self {
        ModelConfig {
            n_users,
            n_items,
            rating_values,
            hidden: 500,
            output: 75,
            accumulation: Accumulation::Concat,
            dropout: 0.7,
            norm: NormScheme::Left,
            mode: SequenceMode::Static,
            cell: CellKind::None,
            recurrent_hidden: 500,
            steps: 1,
            ordinal_sharing: true,
            basis_count: 2,
        }
    }

    /// Width of the one-hot input: one row per user and per item.
    pub fn input_dim(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_levels(&self) -> usize {
        self.rating_values.len()
    }

    /// Columns produced by one level's weight matrix.
    pub fn level_width(&self) -> usize {
        match self.accumulation {
            Accumulation::Concat => self.hidden / self.n_levels().max(1),
            Accumulation::Sum => self.hidden,
        }
    }

    /// Width of the final node encodings fed to the decoder.
    pub fn z_dim(&self) -> usize {
        match self.cell {
            CellKind::None => self.output,
            _ => self.recurrent_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.n_users == 0 || self.n_items == 0 {
            return bad(format!("need users and items, got {} and {}", self.n_users, self.n_items));
        }
        if self.rating_values.len() < 2 {
            return bad(format!("need at least two rating levels, got {}", self.rating_values.len()));
        }
        if self.rating_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("rating values must be strictly ascending".into());
        }
        if self.hidden == 0 || self.output == 0 || self.basis_count == 0 || self.steps == 0 {
            return bad("hidden, output, basis_count and steps must be positive".into());
        }
        if self.accumulation == Accumulation::Concat && self.hidden % self.n_levels() != 0 {
            return bad(format!(
                "hidden size {} is not divisible by {} rating levels",
                self.hidden,
                self.n_levels()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match (self.mode, self.cell) {
            (SequenceMode::Static, CellKind::None) => {
                if self.steps != 1 {
                    return bad(format!("static mode uses one step, got {}", self.steps));
                }
            }
            (SequenceMode::Static, _) => return bad("static mode takes no recurrent cell".into()),
            (_, CellKind::None) => return bad("disjoint and incremental modes need a recurrent cell".into()),
            _ => {
                if self.recurrent_hidden == 0 {
                    return bad("recurrent_hidden must be positive".into());
                }
            }
        }
        Ok(())
    }
}
