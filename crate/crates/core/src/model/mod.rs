//! The rating model: per-snapshot graph encoder, optional recurrent
//! aggregation over snapshots, and a bilinear softmax decoder.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod params;
pub mod recurrent;

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

pub use config::{Accumulation, CellKind, ModelConfig};
pub use decoder::{decode, negative_log_likelihood, predict_rating, softmax, Loss};
pub use encoder::{encode_step, EncoderWeights};
pub use params::{BoundParams, Parameters};
pub use recurrent::{gru_cell, lstm_cell, Cell, GruWeights, LstmWeights};

use crate::dataset::Rating;
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, AdjacencyStructure, MatrixSequence};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One adjacency structure per snapshot, built once per run.
#[derive(Clone, Debug)]
pub struct GraphInput {
    steps: Vec<AdjacencyStructure>,
}

impl GraphInput {
    pub fn build(seq: &MatrixSequence, config: &ModelConfig) -> Result<Self> {
        if seq.mode() != config.mode || seq.len() != expected_steps(config) {
            return Err(Error::Config(alloc::format!(
                "sequence has {} {:?} steps, model expects {} {:?} steps",
                seq.len(),
                seq.mode(),
                expected_steps(config),
                config.mode
            )));
        }
        let steps = seq
            .steps()
            .iter()
            .map(|edges| build_adjacency(edges, config.n_users, config.n_items, config.n_levels(), config.norm))
            .collect::<Result<_>>()?;
        Ok(GraphInput { steps })
    }

    pub fn from_steps(steps: Vec<AdjacencyStructure>) -> Self {
        GraphInput { steps }
    }

    pub fn steps(&self) -> &[AdjacencyStructure] {
        &self.steps
    }
}

// evaluation mode never draws
fn unused_rng() -> crate::rng::StreamRng {
    crate::rng::SeedStreams::new(0).stream(crate::rng::Purpose::Dropout, 0)
}

fn expected_steps(config: &ModelConfig) -> usize {
    match config.cell {
        CellKind::None => 1,
        _ => config.steps,
    }
}

/// Encodes every snapshot with the shared encoder and reduces the series
/// with `aggregate`. Returns the per-step encodings and the aggregate.
pub fn encode_sequence_with<R, F>(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &GraphInput,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
    aggregate: F,
) -> Result<(Vec<Var>, Var)>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    if graph.steps.is_empty() {
        return Err(Error::Empty("graph steps"));
    }
    let weights = EncoderWeights::bind(tape, bound, config)?;
    let mut series = Vec::with_capacity(graph.steps.len());
    for adj in &graph.steps {
        series.push(encode_step(tape, &weights, adj, config, training, rng)?);
    }
    let z = aggregate(tape, &series)?;
    Ok((series, z))
}

/// Final node encodings, `n_nodes x z_dim`. Without a recurrent cell the
/// single step encoding is returned; otherwise the cell's final hidden state.
pub fn encode_sequence<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &BoundParams,
    graph: &GraphInput,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<(Vec<Var>, Var)> {
    if graph.steps.len() != expected_steps(config) {
        return Err(Error::Config(alloc::format!(
            "{} graph steps for a model expecting {}",
            graph.steps.len(),
            expected_steps(config)
        )));
    }
    let cell = Cell::bind(bound, config)?;
    encode_sequence_with(tape, bound, graph, config, training, rng, |tape, series| match cell {
        None => Ok(series[0]),
        Some(cell) => cell.run(tape, series),
    })
}

/// Pairs and targets for a set of observed ratings. Pair indices point into
/// the joint node space.
#[derive(Clone, Debug)]
pub struct EdgeBatch {
    pub pairs: Arc<[(usize, usize)]>,
    pub targets: Arc<[usize]>,
}

impl EdgeBatch {
    pub fn from_ratings(ratings: &[Rating], n_users: usize) -> Self {
        EdgeBatch {
            pairs: ratings.iter().map(|r| (r.user, n_users + r.item)).collect(),
            targets: ratings.iter().map(|r| r.level).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Output of a forward pass. The tape is kept for the backward sweep.
pub struct Forward {
    pub tape: Tape,
    /// Mean negative log-likelihood over the batch.
    pub loss: Var,
    pub logits: Var,
    pub encodings: Var,
    pub series: Vec<Var>,
}

impl Forward {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    pub fn probabilities(&self) -> &Tensor {
        self.tape.probabilities(self.loss).expect("loss is a softmax node")
    }
}

pub fn forward<R: Rng + ?Sized>(
    params: &Parameters,
    config: &ModelConfig,
    graph: &GraphInput,
    batch: &EdgeBatch,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let (series, encodings) = encode_sequence(&mut tape, &bound, graph, config, training, rng)?;
    let logits = decoder::decode_logits(&mut tape, &bound, config, encodings, &batch.pairs)?;
    let loss = tape.softmax_cross_entropy(logits, &batch.targets)?;
    Ok(Forward {
        tape,
        loss,
        logits,
        encodings,
        series,
    })
}

/// Encodings split by side, computed in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEncodings {
    pub users: Tensor,
    pub items: Tensor,
    /// Per-step encodings over the joint node space; a single entry for
    /// static models.
    pub steps: Vec<Tensor>,
}

fn split_rows(t: &Tensor, at: usize) -> (Tensor, Tensor) {
    let cols = t.cols();
    let (a, b) = t.data().split_at(at * cols);
    (
        Tensor::from_vec(at, cols, a.to_vec()).expect("row split"),
        Tensor::from_vec(t.rows() - at, cols, b.to_vec()).expect("row split"),
    )
}

pub fn node_encodings(params: &Parameters, config: &ModelConfig, graph: &GraphInput) -> Result<NodeEncodings> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let mut no_rng = unused_rng();
    let (series, z) = encode_sequence(&mut tape, &bound, graph, config, false, &mut no_rng)?;
    let (users, items) = split_rows(tape.value(z), config.n_users);
    Ok(NodeEncodings {
        users,
        items,
        steps: series.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// Rating distributions (`E x levels`) for `pairs` in evaluation mode.
pub fn predict_distribution(
    params: &Parameters,
    config: &ModelConfig,
    graph: &GraphInput,
    pairs: &Arc<[(usize, usize)]>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let mut no_rng = unused_rng();
    let (_, z) = encode_sequence(&mut tape, &bound, graph, config, false, &mut no_rng)?;
    let logits = decoder::decode_logits(&mut tape, &bound, config, z, pairs)?;
    let lv = tape.value(logits);
    let mut probs = Tensor::zeros(lv.rows(), lv.cols());
    for i in 0..lv.rows() {
        probs.row_mut(i).copy_from_slice(&softmax(lv.row(i))?);
    }
    Ok(probs)
}

/// Expected ratings for `ratings` in evaluation mode.
pub fn predict_ratings(
    params: &Parameters,
    config: &ModelConfig,
    graph: &GraphInput,
    ratings: &[Rating],
) -> Result<Vec<f64>> {
    let batch = EdgeBatch::from_ratings(ratings, config.n_users);
    let probs = predict_distribution(params, config, graph, &batch.pairs)?;
    (0..probs.rows())
        .map(|i| predict_rating(probs.row(i), &config.rating_values))
        .collect()
}
