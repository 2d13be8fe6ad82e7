//! Full-batch training with Adam and an exponential moving average of the
//! parameters.
//!
//! Each epoch runs one forward/backward pass over every training edge, one
//! Adam step and one EMA update. Evaluation (validation during training,
//! test at the end) always uses the EMA parameters in evaluation mode.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{Rating, RatingsDataset, TemporalSplit};
use crate::error::{Error, Result};
use crate::eval::{mean_std, rmse};
use crate::graph::{sequence_from_edges, Edge, MatrixSequence};
use crate::model::{forward, predict_ratings, EdgeBatch, GraphInput, ModelConfig, Parameters};
use crate::rng::{Purpose, SeedStreams};
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Epochs between validation RMSE evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ema_decay: 0.995,
            seed: 0,
            eval_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("ema_decay {} outside (0, 1)", self.ema_decay)));
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("learning_rate and eps must be positive".into()));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("Adam beta {b} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, aligned with parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut Parameters, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    for (name, _) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Config(format!("no gradient for {name}")))?;
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(cfg.beta2, f64::from(t));
    for (k, (name, theta)) in params.iter_mut().enumerate() {
        let g = grads.get(name).expect("checked above");
        if g.shape() != theta.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: theta.shape(),
                rhs: g.shape(),
            });
        }
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((p, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// `shadow <- decay * shadow + (1 - decay) * params`.
pub fn ema_update(shadow: &mut Parameters, params: &Parameters, decay: f64) -> Result<()> {
    if shadow.len() != params.len() {
        return Err(Error::Config("EMA shadow and parameters differ".into()));
    }
    for ((name, s), (pname, p)) in shadow.iter_mut().zip(params.iter()) {
        if name != pname || s.shape() != p.shape() {
            return Err(Error::Config(format!("EMA shadow entry {name} does not match {pname}")));
        }
        for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean negative log-likelihood per training edge.
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_rmse: Vec<(usize, f64)>,
    pub test_rmse: f64,
}

/// Final state of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: Parameters,
    pub ema: Parameters,
}

/// Inputs shared by every run on one dataset split.
#[derive(Clone, Copy, Debug)]
pub struct RunData<'a> {
    pub dataset: &'a RatingsDataset,
    pub split: &'a TemporalSplit,
}

impl<'a> RunData<'a> {
    pub fn train(&self) -> &'a [Rating] {
        self.split.train(self.dataset)
    }

    pub fn val(&self) -> &'a [Rating] {
        self.split.val(self.dataset)
    }

    pub fn test(&self) -> &'a [Rating] {
        self.split.test(self.dataset)
    }

    pub fn actual_values(&self, ratings: &[Rating]) -> Vec<f64> {
        ratings.iter().map(|r| f64::from(self.dataset.rating_value(r.level))).collect()
    }
}

/// Model config for a dataset with the given variant settings applied.
pub fn model_config_for(dataset: &RatingsDataset, template: &ModelConfig) -> ModelConfig {
    ModelConfig {
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        rating_values: dataset.rating_levels().to_vec(),
        ..template.clone()
    }
}

/// Snapshot sequence over the training edges.
pub fn training_sequence(data: &RunData<'_>, config: &ModelConfig) -> Result<MatrixSequence> {
    let edges: Vec<Edge> = data.train().iter().map(Edge::from).collect();
    sequence_from_edges(&edges, config.mode, config.steps)
}

pub fn evaluate_rmse(params: &Parameters, config: &ModelConfig, graph: &GraphInput, data: &RunData<'_>, ratings: &[Rating]) -> Result<f64> {
    let pred = predict_ratings(params, config, graph, ratings)?;
    rmse(&pred, &data.actual_values(ratings))
}

/// Trains one model. `observer` sees every epoch as it completes.
pub fn train(
    data: &RunData<'_>,
    config: &ModelConfig,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochLog),
) -> Result<(RunResult, TrainedModel)> {
    config.validate()?;
    cfg.validate()?;
    let streams = SeedStreams::new(cfg.seed);
    let mut params = Parameters::init(config, &mut streams.stream(Purpose::Init, 0))?;
    let mut ema = params.clone();
    let mut adam = AdamState::new(&params);

    let seq = training_sequence(data, config)?;
    let graph = GraphInput::build(&seq, config)?;
    let batch = EdgeBatch::from_ratings(data.train(), config.n_users);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_rmse = Vec::new();
    for epoch in 1..=cfg.epochs {
        let diverged = |reason: String| Error::Diverged { epoch, reason };
        let mut rng = streams.stream(Purpose::Dropout, epoch as u64);
        let fwd = forward(&params, config, &graph, &batch, true, &mut rng).map_err(|e| diverged(format!("{e}")))?;
        let loss = fwd.loss_value();
        let grads = fwd.tape.backward(fwd.loss).map_err(|e| diverged(format!("{e}")))?;
        drop(fwd);
        adam_step(&mut params, &grads, &mut adam, cfg).map_err(|e| diverged(format!("{e}")))?;
        ema_update(&mut ema, &params, cfg.ema_decay)?;

        let due = (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || epoch == cfg.epochs;
        let val = if due && !data.val().is_empty() {
            let r = evaluate_rmse(&ema, config, &graph, data, data.val())?;
            val_rmse.push((epoch, r));
            Some(r)
        } else {
            None
        };
        train_loss.push(loss);
        observer(&EpochLog {
            epoch,
            train_loss: loss,
            val_rmse: val,
        });
    }
    let test_rmse = evaluate_rmse(&ema, config, &graph, data, data.test())?;
    Ok((
        RunResult {
            seed: cfg.seed,
            train_loss,
            val_rmse,
            test_rmse,
        },
        TrainedModel { params, ema },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRun {
    pub runs: Vec<(u64, Result<RunResult>)>,
    /// Mean and sample standard deviation of test RMSE over successful runs.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// False when any run failed.
    pub complete: bool,
}

impl MultiRun {
    pub fn from_runs(runs: Vec<(u64, Result<RunResult>)>) -> Self {
        let ok: Vec<f64> = runs.iter().filter_map(|(_, r)| r.as_ref().ok().map(|r| r.test_rmse)).collect();
        let complete = ok.len() == runs.len();
        let (mean, std) = match mean_std(&ok) {
            Ok((m, s)) => (Some(m), s),
            Err(_) => (None, None),
        };
        MultiRun {
            runs,
            mean,
            std,
            complete,
        }
    }
}

/// Runs `train` once per seed, sequentially.
pub fn multi_run(data: &RunData<'_>, config: &ModelConfig, base: &TrainConfig, seeds: &[u64]) -> Result<MultiRun> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("multi_run needs at least two seeds".into()));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..base.clone() };
            (seed, train(data, config, &cfg, |_| {}).map(|(r, _)| r))
        })
        .collect();
    Ok(MultiRun::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::DENSE;
    use crate::rng::{Purpose, SeedStreams};
    use alloc::string::ToString;
    use alloc::vec;
    use rand::Rng;

    fn scalar_params(v: f64) -> Parameters {
        Parameters::from_entries(vec![("w".to_string(), Tensor::scalar(v))])
    }

    fn grads_of(v: f64) -> Gradients {
        let mut tape = crate::Tape::new();
        let w = tape.param("w", Tensor::scalar(1.0)).unwrap();
        let s = tape.scale(w, v).unwrap();
        tape.backward(s).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_params(0.7);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads_of(0.0), &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads_of(1.0), &mut st, &TrainConfig::default()).unwrap();
        assert!((p.get("w").unwrap().item() + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_matches_naive_recurrence() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params(0.3);
        let mut st = AdamState::new(&p);
        let (mut theta, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        let mut rng = SeedStreams::new(1).stream(Purpose::GradCheck, 0);
        for t in 1..=40 {
            let g: f64 = rng.random::<f64>() * 4.0 - 2.0;
            adam_step(&mut p, &grads_of(g), &mut st, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((p.get("w").unwrap().item() - theta).abs() < 1e-12);
            assert!((st.m[0].item() - m).abs() < 1e-12);
            assert!((st.v[0].item() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p);
        let mut g = grads_of(1.0);
        g.get_mut("w").unwrap().data_mut()[0] = f64::NAN;
        assert_eq!(
            adam_step(&mut p, &g, &mut st, &TrainConfig::default()),
            Err(Error::NonFinite("gradient"))
        );
        assert_eq!(st.step, 0);
    }

    #[test]
    fn ema_hand_trace() {
        let mut shadow = scalar_params(0.0);
        let expected = [0.005, 0.014975, 0.029_900_125];
        for (k, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            ema_update(&mut shadow, &scalar_params(v), 0.995).unwrap();
            assert!((shadow.get("w").unwrap().item() - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_converges_geometrically() {
        let target = scalar_params(2.0);
        let mut shadow = scalar_params(0.0);
        for k in 1..=100 {
            ema_update(&mut shadow, &target, 0.995).unwrap();
            let err = 2.0 - shadow.get("w").unwrap().item();
            assert!((err - 2.0 * 0.995f64.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_decay_zero_copies() {
        let mut shadow = scalar_params(0.0);
        ema_update(&mut shadow, &scalar_params(4.5), 0.0).unwrap();
        assert_eq!(shadow.get("w").unwrap().item(), 4.5);
    }

    #[test]
    fn ema_rejects_mismatch() {
        let mut shadow = scalar_params(0.0);
        let other = Parameters::from_entries(vec![(DENSE.to_string(), Tensor::scalar(1.0))]);
        assert!(ema_update(&mut shadow, &other, 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            ema_decay: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn multi_run_aggregate() {
        let ok = |seed, rmse| {
            (
                seed,
                Ok(RunResult {
                    seed,
                    train_loss: vec![],
                    val_rmse: vec![],
                    test_rmse: rmse,
                }),
            )
        };
        let m = MultiRun::from_runs(vec![ok(1, 1.0), ok(2, 1.1)]);
        assert!(m.complete);
        assert!((m.mean.unwrap() - 1.05).abs() < 1e-12);
        assert!((m.std.unwrap() - 0.0707).abs() < 1e-4);
        let partial = MultiRun::from_runs(vec![ok(1, 1.0), (2, Err(Error::NonFinite("x")))]);
        assert!(!partial.complete);
        assert_eq!(partial.mean, Some(1.0));
        assert_eq!(partial.runs.len(), 2);
    }
}
