//! GRU and LSTM cells over a batch of node encodings.
//!
//! Rows are nodes; every node runs the same cell with the same weights. A
//! missing previous state stands for the zero initial state.
//!
//! GRU:
//! `u = sig(x Wu + h Uu + bu)`, `r = sig(x Wr + h Ur + br)`,
//! `n = tanh(x Wn + (r * h) Un + bn)`, `h' = (1 - u) * n + u * h`.
//!
//! LSTM:
//! `i, f, o = sig(x W + h U + b)`, `g = tanh(x Wg + h Ug + bg)`,
//! `c' = f * c + i * g`, `h' = o * tanh(c')`.

use crate::error::{Error, Result};
use crate::model::config::{CellKind, ModelConfig};
use crate::model::params::{gate_name, BoundParams, GRU_GATES, LSTM_GATES};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
struct Gate {
    input: Var,
    recurrent: Var,
    bias: Var,
}

impl Gate {
    fn bind(bound: &BoundParams, cell: &str, gate: &str) -> Result<Self> {
        Ok(Gate {
            input: bound.get(&gate_name(cell, gate, "input"))?,
            recurrent: bound.get(&gate_name(cell, gate, "recurrent"))?,
            bias: bound.get(&gate_name(cell, gate, "bias"))?,
        })
    }

    /// `x W + h U + b`, dropping the `h U` term for a zero state.
    fn pre_activation(&self, tape: &mut Tape, x: Var, h: Option<Var>) -> Result<Var> {
        let mut acc = tape.matmul(x, self.input)?;
        if let Some(h) = h {
            let rec = tape.matmul(h, self.recurrent)?;
            acc = tape.add(acc, rec)?;
        }
        tape.add_row(acc, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    update: Gate,
    reset: Gate,
    candidate: Gate,
}

impl GruWeights {
    pub fn bind(bound: &BoundParams) -> Result<Self> {
        let [u, r, n] = GRU_GATES;
        Ok(GruWeights {
            update: Gate::bind(bound, "gru", u)?,
            reset: Gate::bind(bound, "gru", r)?,
            candidate: Gate::bind(bound, "gru", n)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    input: Gate,
    forget: Gate,
    output: Gate,
    cell: Gate,
}

impl LstmWeights {
    pub fn bind(bound: &BoundParams) -> Result<Self> {
        let [i, f, o, g] = LSTM_GATES;
        Ok(LstmWeights {
            input: Gate::bind(bound, "lstm", i)?,
            forget: Gate::bind(bound, "lstm", f)?,
            output: Gate::bind(bound, "lstm", o)?,
            cell: Gate::bind(bound, "lstm", g)?,
        })
    }
}

pub fn gru_cell(tape: &mut Tape, w: &GruWeights, x: Var, h_prev: Option<Var>) -> Result<Var> {
    let u_pre = w.update.pre_activation(tape, x, h_prev)?;
    let u = tape.sigmoid(u_pre)?;
    let gated_h = match h_prev {
        Some(h) => {
            let r_pre = w.reset.pre_activation(tape, x, Some(h))?;
            let r = tape.sigmoid(r_pre)?;
            Some(tape.mul(r, h)?)
        }
        None => None,
    };
    let n_pre = w.candidate.pre_activation(tape, x, gated_h)?;
    let n = tape.tanh(n_pre)?;
    let keep_new = tape.one_minus(u)?;
    let fresh = tape.mul(keep_new, n)?;
    match h_prev {
        Some(h) => {
            let carried = tape.mul(u, h)?;
            tape.add(fresh, carried)
        }
        None => Ok(fresh),
    }
}

/// One LSTM step; returns `(h_next, c_next)`.
pub fn lstm_cell(tape: &mut Tape, w: &LstmWeights, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let h_prev = state.map(|(h, _)| h);
    let i_pre = w.input.pre_activation(tape, x, h_prev)?;
    let i = tape.sigmoid(i_pre)?;
    let o_pre = w.output.pre_activation(tape, x, h_prev)?;
    let o = tape.sigmoid(o_pre)?;
    let g_pre = w.cell.pre_activation(tape, x, h_prev)?;
    let g = tape.tanh(g_pre)?;
    let mut c = tape.mul(i, g)?;
    if let Some((h, c_prev)) = state {
        let f_pre = w.forget.pre_activation(tape, x, Some(h))?;
        let f = tape.sigmoid(f_pre)?;
        let kept = tape.mul(f, c_prev)?;
        c = tape.add(kept, c)?;
    }
    let squashed = tape.tanh(c)?;
    let h = tape.mul(o, squashed)?;
    Ok((h, c))
}

#[derive(Clone, Copy, Debug)]
pub enum Cell {
    Gru(GruWeights),
    Lstm(LstmWeights),
}

impl Cell {
    pub fn bind(bound: &BoundParams, config: &ModelConfig) -> Result<Option<Self>> {
        Ok(match config.cell {
            CellKind::None => None,
            CellKind::Gru => Some(Cell::Gru(GruWeights::bind(bound)?)),
            CellKind::Lstm => Some(Cell::Lstm(LstmWeights::bind(bound)?)),
        })
    }

    /// Runs the cell over `inputs` from a zero state and returns the final
    /// hidden state.
    pub fn run(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Empty("recurrent inputs"));
        }
        match self {
            Cell::Gru(w) => {
                let mut h = None;
                for &x in inputs {
                    h = Some(gru_cell(tape, w, x, h)?);
                }
                Ok(h.expect("nonempty"))
            }
            Cell::Lstm(w) => {
                let mut state = None;
                for &x in inputs {
                    state = Some(lstm_cell(tape, w, x, state)?);
                }
                Ok(state.expect("nonempty").0)
            }
        }
    }
}
