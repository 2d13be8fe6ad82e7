//! Named parameter tensors and their weight-sharing structure.
//!
//! Encoder level weights are stored as increments `T_s` with one row per
//! input node; with ordinal sharing the weights of level `r` are
//! `W_r = T_1 + ... + T_r`, otherwise `W_r = T_r`. Decoder matrices are
//! `Q_r = sum_s a_rs P_s` over `basis_count` shared bases. All parameters
//! are shared between the user side and the item side.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::{CellKind, ModelConfig};
use crate::rng::uniform_symmetric;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const GRU_GATES: [&str; 3] = ["update", "reset", "candidate"];
pub const LSTM_GATES: [&str; 4] = ["input", "forget", "output", "cell"];

pub fn level_name(level: usize) -> String {
    format!("enc.level{level}")
}

pub const DENSE: &str = "enc.dense";
pub const DECODER_COEFFICIENTS: &str = "dec.coef";

pub fn basis_name(s: usize) -> String {
    format!("dec.basis{s}")
}

pub fn gate_name(cell: &str, gate: &str, part: &str) -> String {
    format!("{cell}.{gate}.{part}")
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    entries: Vec<(String, Tensor)>,
}

/// Parameters registered on a tape, looked up by name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| uniform_symmetric(rng, bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}

impl Parameters {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Parameters { entries }
    }

    /// Glorot-uniform weights, zero biases, drawn in a fixed order.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut entries = Vec::new();
        let d_in = config.input_dim();
        for level in 0..config.n_levels() {
            entries.push((level_name(level), glorot(d_in, config.level_width(), rng)));
        }
        entries.push((DENSE.into(), glorot(config.hidden, config.output, rng)));

        let (cell, gates): (&str, &[&str]) = match config.cell {
            CellKind::None => ("", &[]),
            CellKind::Gru => ("gru", &GRU_GATES),
            CellKind::Lstm => ("lstm", &LSTM_GATES),
        };
        let h = config.recurrent_hidden;
        for gate in gates {
            entries.push((gate_name(cell, gate, "input"), glorot(config.output, h, rng)));
            entries.push((gate_name(cell, gate, "recurrent"), glorot(h, h, rng)));
            entries.push((gate_name(cell, gate, "bias"), Tensor::zeros(1, h)));
        }

        let z = config.z_dim();
        for s in 0..config.basis_count {
            entries.push((basis_name(s), glorot(z, z, rng)));
        }
        entries.push((
            DECODER_COEFFICIENTS.into(),
            glorot(config.basis_count, config.n_levels(), rng),
        ));
        Ok(Parameters { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.entries {
            vars.insert(name.clone(), tape.param(name.as_str(), t.clone())?);
        }
        Ok(BoundParams { vars })
    }

    /// Materialized encoder weights of `level`, one row per input node.
    pub fn level_weights(&self, config: &ModelConfig, level: usize) -> Result<Tensor> {
        if !config.ordinal_sharing {
            return self.require(&level_name(level)).cloned();
        }
        let mut acc = self.require(&level_name(0))?.clone();
        for s in 1..=level {
            acc.add_assign(self.require(&level_name(s))?);
        }
        Ok(acc)
    }

    /// Materialized decoder matrix `Q_level`.
    pub fn decoder_matrix(&self, config: &ModelConfig, level: usize) -> Result<Tensor> {
        let coef = self.require(DECODER_COEFFICIENTS)?;
        let z = config.z_dim();
        let mut q = Tensor::zeros(z, z);
        for s in 0..config.basis_count {
            let a = coef.get(s, level);
            let basis = self.require(&basis_name(s))?;
            for (o, p) in q.data_mut().iter_mut().zip(basis.data()) {
                *o += a * p;
            }
        }
        Ok(q)
    }

    /// Checks names and shapes against what `config` expects.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let mut rng = crate::rng::SeedStreams::new(0).stream(crate::rng::Purpose::Init, 0);
        let reference = Parameters::init(config, &mut rng)?;
        if reference.len() != self.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                reference.len(),
                self.len()
            )));
        }
        for (name, t) in reference.iter() {
            let have = self.require(name)?;
            if have.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "parameter shape",
                    lhs: have.shape(),
                    rhs: t.shape(),
                });
            }
        }
        Ok(())
    }
}
