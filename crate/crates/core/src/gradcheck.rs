//! Finite-difference verification of the analytic gradients of the full
//! model loss.
//!
//! Every scalar of every parameter is perturbed by `±step` and the central
//! difference of the loss is compared with the tape gradient. Perturbations
//! that change the sign pattern of any ReLU input are skipped, since the
//! loss is not differentiable across a kink and the difference quotient is
//! meaningless there.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Rating;
use crate::error::{Error, Result};
use crate::graph::{sequence_from_edges, Edge, NormScheme, SequenceMode};
use crate::model::{forward, Accumulation, CellKind, EdgeBatch, GraphInput, ModelConfig, Parameters};
use crate::rng::{Purpose, SeedStreams};
use crate::tape::Gradients;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Refuse instances with more parameter scalars than this.
    pub max_scalars: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            max_scalars: 20_000,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = libm::fmax(libm::fmax(libm::fabs(analytic), libm::fabs(numeric)), floor);
    libm::fabs(analytic - numeric) / denom
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err > self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }
}

/// A complete small problem: model, weights, graph and training edges.
#[derive(Clone, Debug)]
pub struct ToyInstance {
    pub config: ModelConfig,
    pub params: Parameters,
    pub graph: GraphInput,
    pub batch: EdgeBatch,
}

/// Shape of a toy instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub users: usize,
    pub items: usize,
    pub levels: usize,
    pub hidden: usize,
    pub output: usize,
    pub recurrent_hidden: usize,
    pub cell: CellKind,
    pub mode: SequenceMode,
    pub steps: usize,
    pub accumulation: Accumulation,
    pub norm: NormScheme,
    pub dropout: f64,
    pub ordinal_sharing: bool,
}

impl ToySpec {
    /// Square instance with `size` users and `size` items and a GRU over
    /// incremental snapshots.
    pub fn sized(size: usize) -> Self {
        ToySpec {
            users: size,
            items: size,
            levels: 3,
            hidden: 6,
            output: 4,
            recurrent_hidden: 3,
            cell: CellKind::Gru,
            mode: SequenceMode::Incremental,
            steps: 2,
            accumulation: Accumulation::Concat,
            norm: NormScheme::Left,
            dropout: 0.3,
            ordinal_sharing: true,
        }
    }

    /// Random spec within at most 10 users, 10 items, hidden 8, output 4 and
    /// 3 steps.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let levels = rng.random_range(2..=4);
        let accumulation = if rng.random_bool(0.5) {
            Accumulation::Concat
        } else {
            Accumulation::Sum
        };
        let hidden = match accumulation {
            Accumulation::Concat => levels * rng.random_range(1..=8 / levels),
            Accumulation::Sum => rng.random_range(2..=8),
        };
        let cell = match rng.random_range(0..3) {
            0 => CellKind::None,
            1 => CellKind::Gru,
            _ => CellKind::Lstm,
        };
        let (mode, steps) = match cell {
            CellKind::None => (SequenceMode::Static, 1),
            _ => (
                if rng.random_bool(0.5) {
                    SequenceMode::Disjoint
                } else {
                    SequenceMode::Incremental
                },
                rng.random_range(1..=3),
            ),
        };
        ToySpec {
            users: rng.random_range(2..=10),
            items: rng.random_range(2..=10),
            levels,
            hidden,
            output: rng.random_range(1..=4),
            recurrent_hidden: rng.random_range(1..=4),
            cell,
            mode,
            steps,
            accumulation,
            norm: if rng.random_bool(0.5) {
                NormScheme::Left
            } else {
                NormScheme::Symmetric
            },
            dropout: if rng.random_bool(0.5) { 0.0 } else { 0.3 },
            ordinal_sharing: rng.random_bool(0.8),
        }
    }

    pub fn build(&self, seed: u64) -> Result<ToyInstance> {
        let streams = SeedStreams::new(seed);
        let mut rng = streams.stream(Purpose::GradCheck, 1);
        let mut config = ModelConfig::new(self.users, self.items, (1..=self.levels as i32).collect());
        config.hidden = self.hidden;
        config.output = self.output;
        config.recurrent_hidden = self.recurrent_hidden;
        config.cell = self.cell;
        config.mode = self.mode;
        config.steps = self.steps;
        config.accumulation = self.accumulation;
        config.norm = self.norm;
        config.dropout = self.dropout;
        config.ordinal_sharing = self.ordinal_sharing;
        config.validate()?;

        let mut ratings = Vec::new();
        for user in 0..self.users {
            for item in 0..self.items {
                if rng.random_bool(0.5) {
                    ratings.push(Rating {
                        user,
                        item,
                        level: rng.random_range(0..self.levels),
                        timestamp: rng.random_range(0..1000),
                    });
                }
            }
        }
        while ratings.len() < self.steps.max(2) {
            let (user, item) = (ratings.len() % self.users, ratings.len() / self.users);
            if ratings.iter().any(|r| r.user == user && r.item == item) {
                return Err(Error::InvalidArgument("toy instance too small".into()));
            }
            ratings.push(Rating {
                user,
                item,
                level: 0,
                timestamp: 0,
            });
        }
        ratings.sort_by_key(|r| r.timestamp);
        let edges: Vec<Edge> = ratings.iter().map(Edge::from).collect();
        let seq = sequence_from_edges(&edges, config.mode, config.steps)?;
        let graph = GraphInput::build(&seq, &config)?;
        let batch = EdgeBatch::from_ratings(&ratings, config.n_users);
        let params = Parameters::init(&config, &mut streams.stream(Purpose::Init, 0))?;
        Ok(ToyInstance {
            config,
            params,
            graph,
            batch,
        })
    }
}

/// Loss and ReLU sign pattern of one training-mode forward pass. The dropout
/// stream is rebuilt from `seed` on every call so every evaluation sees the
/// same masks.
fn evaluate(inst: &ToyInstance, params: &Parameters, seed: u64) -> Result<(f64, u64)> {
    let mut rng = SeedStreams::new(seed).stream(Purpose::Dropout, 0);
    let fwd = forward(params, &inst.config, &inst.graph, &inst.batch, true, &mut rng)?;
    Ok((fwd.loss_value(), fwd.tape.relu_signature()))
}

/// Analytic gradients of the same pass that `check_gradients` differentiates.
pub fn analytic_gradients(inst: &ToyInstance, seed: u64) -> Result<Gradients> {
    let mut rng = SeedStreams::new(seed).stream(Purpose::Dropout, 0);
    let fwd = forward(&inst.params, &inst.config, &inst.graph, &inst.batch, true, &mut rng)?;
    fwd.tape.backward(fwd.loss)
}

/// Compares analytic and central-difference gradients for every parameter
/// scalar. `tamper` may alter the analytic gradients before comparison.
pub fn check_gradients(
    inst: &ToyInstance,
    seed: u64,
    opts: &GradCheckOptions,
    tamper: Option<&dyn Fn(&mut Gradients)>,
) -> Result<GradCheckReport> {
    let scalars = inst.params.scalar_count();
    if scalars > opts.max_scalars {
        return Err(Error::InvalidArgument(format!(
            "instance has {scalars} parameter scalars, above the finite-difference cap of {}",
            opts.max_scalars
        )));
    }
    let mut grads = analytic_gradients(inst, seed)?;
    if let Some(f) = tamper {
        f(&mut grads);
    }
    let (_, base_sig) = evaluate(inst, &inst.params, seed)?;

    let mut work = inst.params.clone();
    let names: Vec<String> = inst.params.names().map(String::from).collect();
    let mut report = GradCheckReport {
        tolerance: opts.tolerance,
        params: Vec::with_capacity(names.len()),
    };
    for name in names {
        let analytic = grads
            .get(&name)
            .ok_or_else(|| Error::Config(format!("no gradient for {name}")))?
            .clone();
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..analytic.len() {
            let original = work.get(&name).expect("cloned").data()[k];
            let mut probe = |delta: f64| -> Result<(f64, u64)> {
                work.get_mut(&name).expect("cloned").data_mut()[k] = original + delta;
                evaluate(inst, &work, seed)
            };
            let (plus, sig_plus) = probe(opts.step)?;
            let (minus, sig_minus) = probe(-opts.step)?;
            work.get_mut(&name).expect("cloned").data_mut()[k] = original;
            if sig_plus != base_sig || sig_minus != base_sig {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric, opts.floor);
            check.checked += 1;
            if err > check.max_rel_err || check.checked == 1 {
                check.max_rel_err = err;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
