//! Direct loop implementations of the model, written against the math
//! rather than the tape. They share no code with the library beyond reading
//! parameter tensors.

use gcmc_core::graph::{Edge, NormScheme};
use gcmc_core::model::params::{basis_name, gate_name, level_name, DECODER_COEFFICIENTS, DENSE};
use gcmc_core::model::{Accumulation, CellKind, ModelConfig, Parameters};
use gcmc_core::Tensor;

pub type Matrix = Vec<Vec<f64>>;

fn param<'a>(p: &'a Parameters, name: &str) -> &'a Tensor {
    p.get(name).unwrap_or_else(|| panic!("missing {name}"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Entry `[node][col]` of the level-`r` weight matrix with ordinal sums.
fn w_entry(p: &Parameters, cfg: &ModelConfig, r: usize, node: usize, col: usize) -> f64 {
    if cfg.ordinal_sharing {
        (0..=r).map(|s| param(p, &level_name(s)).get(node, col)).sum()
    } else {
        param(p, &level_name(r)).get(node, col)
    }
}

/// Receiver-side constant of the message from `sender` to `receiver`.
fn norm_constant(scheme: NormScheme, deg_receiver: usize, deg_sender: usize) -> f64 {
    match scheme {
        NormScheme::Left => deg_receiver as f64,
        NormScheme::Symmetric => ((deg_receiver * deg_sender) as f64).sqrt(),
    }
}

/// Evaluation-mode encodings of every node (users, then items).
pub fn encode_step(p: &Parameters, cfg: &ModelConfig, edges: &[Edge]) -> Matrix {
    let (nu, nv) = (cfg.n_users, cfg.n_items);
    let mut du = vec![0usize; nu];
    let mut dv = vec![0usize; nv];
    for e in edges {
        du[e.user] += 1;
        dv[e.item] += 1;
    }
    let width = cfg.level_width();
    let levels = cfg.n_levels();
    let mut out = Vec::with_capacity(nu + nv);
    for node in 0..nu + nv {
        let mut h = vec![0.0; cfg.hidden];
        for r in 0..levels {
            for e in edges.iter().filter(|e| e.level == r) {
                let (sender, c) = if node < nu {
                    if e.user != node {
                        continue;
                    }
                    (nu + e.item, norm_constant(cfg.norm, du[e.user], dv[e.item]))
                } else {
                    if e.item != node - nu {
                        continue;
                    }
                    (e.user, norm_constant(cfg.norm, dv[e.item], du[e.user]))
                };
                for k in 0..width {
                    let slot = match cfg.accumulation {
                        Accumulation::Concat => r * width + k,
                        Accumulation::Sum => k,
                    };
                    h[slot] += w_entry(p, cfg, r, sender, k) / c;
                }
            }
        }
        let dense = param(p, DENSE);
        let z: Vec<f64> = (0..cfg.output)
            .map(|j| {
                let s: f64 = (0..cfg.hidden).map(|k| h[k].max(0.0) * dense.get(k, j)).sum();
                s.max(0.0)
            })
            .collect();
        out.push(z);
    }
    out
}

/// `x W + h U + b` for one row and one gate.
fn gate(p: &Parameters, cell: &str, g: &str, x: &[f64], h: &[f64], j: usize) -> f64 {
    let w = param(p, &gate_name(cell, g, "input"));
    let u = param(p, &gate_name(cell, g, "recurrent"));
    let b = param(p, &gate_name(cell, g, "bias"));
    let mut s = b.get(0, j);
    for (k, xk) in x.iter().enumerate() {
        s += xk * w.get(k, j);
    }
    for (k, hk) in h.iter().enumerate() {
        s += hk * u.get(k, j);
    }
    s
}

pub fn gru_row(p: &Parameters, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n_h = h.len();
    let u: Vec<f64> = (0..n_h).map(|j| sigmoid(gate(p, "gru", "update", x, h, j))).collect();
    let r: Vec<f64> = (0..n_h).map(|j| sigmoid(gate(p, "gru", "reset", x, h, j))).collect();
    let rh: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a * b).collect();
    (0..n_h)
        .map(|j| {
            let n = gate(p, "gru", "candidate", x, &rh, j).tanh();
            (1.0 - u[j]) * n + u[j] * h[j]
        })
        .collect()
}

pub fn lstm_row(p: &Parameters, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h_next = Vec::new();
    let mut c_next = Vec::new();
    for j in 0..h.len() {
        let i = sigmoid(gate(p, "lstm", "input", x, h, j));
        let f = sigmoid(gate(p, "lstm", "forget", x, h, j));
        let o = sigmoid(gate(p, "lstm", "output", x, h, j));
        let g = gate(p, "lstm", "cell", x, h, j).tanh();
        let cj = f * c[j] + i * g;
        c_next.push(cj);
        h_next.push(o * cj.tanh());
    }
    (h_next, c_next)
}

/// Final encodings over a snapshot sequence.
pub fn encode_sequence(p: &Parameters, cfg: &ModelConfig, steps: &[Vec<Edge>]) -> Matrix {
    let series: Vec<Matrix> = steps.iter().map(|s| encode_step(p, cfg, s)).collect();
    if cfg.cell == CellKind::None {
        return series.into_iter().next().expect("one step");
    }
    let n = cfg.n_users + cfg.n_items;
    let dh = cfg.recurrent_hidden;
    (0..n)
        .map(|node| {
            let mut h = vec![0.0; dh];
            let mut c = vec![0.0; dh];
            for step in &series {
                match cfg.cell {
                    CellKind::Gru => h = gru_row(p, &step[node], &h),
                    CellKind::Lstm => (h, c) = lstm_row(p, &step[node], &h, &c),
                    CellKind::None => unreachable!(),
                }
            }
            h
        })
        .collect()
}

/// `z_u^T Q_r z_v` for every level, with `Q_r = sum_s a_rs P_s`.
pub fn logits(p: &Parameters, cfg: &ModelConfig, zu: &[f64], zv: &[f64]) -> Vec<f64> {
    let coef = param(p, DECODER_COEFFICIENTS);
    (0..cfg.n_levels())
        .map(|r| {
            let mut total = 0.0;
            for s in 0..cfg.basis_count {
                let basis = param(p, &basis_name(s));
                for a in 0..zu.len() {
                    for b in 0..zv.len() {
                        total += coef.get(s, r) * zu[a] * basis.get(a, b) * zv[b];
                    }
                }
            }
            total
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn expected_rating(probs: &[f64], values: &[i32]) -> f64 {
    probs.iter().zip(values).map(|(p, &v)| p * v as f64).sum()
}

/// Mean negative log-likelihood over `(user, item, level)` triples.
pub fn mean_nll(p: &Parameters, cfg: &ModelConfig, z: &Matrix, edges: &[Edge]) -> f64 {
    let total: f64 = edges
        .iter()
        .map(|e| {
            let probs = softmax(&logits(p, cfg, &z[e.user], &z[cfg.n_users + e.item]));
            -probs[e.level].ln()
        })
        .sum();
    total / edges.len() as f64
}
