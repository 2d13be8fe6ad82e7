use gcmc_core::dataset::{build_dataset, temporal_split, RatingsDataset, TemporalSplit};
use gcmc_core::model::{forward, EdgeBatch, GraphInput, ModelConfig};
use gcmc_core::rng::{Purpose, SeedStreams};
use gcmc_core::synthetic::planted_factor_ratings;
use gcmc_core::train::{
    evaluate_rmse, model_config_for, multi_run, train, training_sequence, RunData, TrainConfig,
};
use gcmc_core::Error;

fn planted(seed: u64) -> (RatingsDataset, TemporalSplit) {
    let ds = build_dataset(&planted_factor_ratings(20, 20, 200, 2, seed).unwrap()).unwrap();
    let split = temporal_split(&ds, 0.1, 0.1).unwrap();
    (ds, split)
}

fn small_config(ds: &RatingsDataset) -> ModelConfig {
    let mut t = ModelConfig::new(0, 0, vec![]);
    t.hidden = 50;
    t.output = 10;
    model_config_for(ds, &t)
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        eval_every: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_planted_factors_without_dropout() {
    for seed in 0..3 {
        let (ds, split) = planted(seed);
        let data = RunData { dataset: &ds, split: &split };
        let mut template = ModelConfig::new(0, 0, vec![]);
        template.dropout = 0.0;
        let cfg = model_config_for(&ds, &template);
        let (_, model) = train(&data, &cfg, &quick(200, seed), |_| {}).unwrap();
        let graph = GraphInput::build(&training_sequence(&data, &cfg).unwrap(), &cfg).unwrap();
        let rmse = evaluate_rmse(&model.params, &cfg, &graph, &data, data.train()).unwrap();
        assert!(rmse < 0.5, "seed {seed}: training RMSE {rmse}");
    }
}

#[test]
fn training_reduces_smoothed_loss() {
    let (ds, split) = planted(1);
    let data = RunData { dataset: &ds, split: &split };
    let (res, _) = train(&data, &small_config(&ds), &quick(60, 1), |_| {}).unwrap();
    let head: f64 = res.train_loss[..10].iter().sum();
    let tail: f64 = res.train_loss[50..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
    assert_eq!(res.val_rmse.iter().map(|v| v.0).collect::<Vec<_>>(), [5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60]);
}

#[test]
fn identical_seeds_are_bitwise_identical() {
    let (ds, split) = planted(2);
    let data = RunData { dataset: &ds, split: &split };
    let cfg = small_config(&ds);
    let mut logs = [Vec::new(), Vec::new()];
    let runs: Vec<_> = logs
        .iter_mut()
        .map(|log| train(&data, &cfg, &quick(15, 9), |e| log.push(e.clone())).unwrap())
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(logs[0], logs[1]);
    let other = train(&data, &cfg, &quick(15, 10), |_| {}).unwrap();
    assert_ne!(other.0.train_loss, runs[0].0.train_loss);
}

#[test]
fn repeated_seed_gives_zero_spread() {
    let (ds, split) = planted(3);
    let data = RunData { dataset: &ds, split: &split };
    let multi = multi_run(&data, &small_config(&ds), &quick(5, 0), &[4; 5]).unwrap();
    assert!(multi.complete);
    assert_eq!(multi.std, Some(0.0));
    assert!(multi_run(&data, &small_config(&ds), &quick(5, 0), &[4]).is_err());
}

#[test]
fn zero_epochs_evaluates_initial_weights() {
    let (ds, split) = planted(4);
    let data = RunData { dataset: &ds, split: &split };
    let cfg = small_config(&ds);
    let (res, model) = train(&data, &cfg, &quick(0, 2), |_| panic!("no epochs")).unwrap();
    assert!(res.train_loss.is_empty() && res.val_rmse.is_empty());
    assert_eq!(model.params, model.ema);
    let graph = GraphInput::build(&training_sequence(&data, &cfg).unwrap(), &cfg).unwrap();
    assert_eq!(res.test_rmse, evaluate_rmse(&model.ema, &cfg, &graph, &data, data.test()).unwrap());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let (ds, split) = planted(5);
    let data = RunData { dataset: &ds, split: &split };
    let cfg = TrainConfig {
        learning_rate: 1e300,
        ..quick(10, 0)
    };
    match train(&data, &small_config(&ds), &cfg, |_| {}) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn full_batch_gradient_is_weighted_sum_of_parts() {
    let (ds, split) = planted(6);
    let data = RunData { dataset: &ds, split: &split };
    let cfg = small_config(&ds);
    let graph = GraphInput::build(&training_sequence(&data, &cfg).unwrap(), &cfg).unwrap();
    let params =
        gcmc_core::model::Parameters::init(&cfg, &mut SeedStreams::new(1).stream(Purpose::Init, 0)).unwrap();
    let grads = |ratings: &[gcmc_core::dataset::Rating]| {
        let batch = EdgeBatch::from_ratings(ratings, cfg.n_users);
        let mut rng = SeedStreams::new(0).stream(Purpose::Dropout, 0);
        let fwd = forward(&params, &cfg, &graph, &batch, false, &mut rng).unwrap();
        fwd.tape.backward(fwd.loss).unwrap()
    };
    let all = data.train();
    let (a, b) = all.split_at(57);
    let (ga, gb, g) = (grads(a), grads(b), grads(all));
    let n = all.len() as f64;
    for (name, t) in g.iter() {
        let (ta, tb) = (ga.get(name).unwrap(), gb.get(name).unwrap());
        for k in 0..t.len() {
            let combined = (57.0 * ta.data()[k] + (n - 57.0) * tb.data()[k]) / n;
            assert!((combined - t.data()[k]).abs() < 1e-12, "{name}[{k}]");
        }
    }
}
