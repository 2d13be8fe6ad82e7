mod common;

use std::sync::Arc;

use common::oracle;
use gcmc_core::gradcheck::{ToyInstance, ToySpec};
use gcmc_core::graph::{build_adjacency, sequence_from_edges, Edge, NormScheme, SequenceMode};
use gcmc_core::model::{
    self, decode, encode_sequence_with, forward, gru_cell, lstm_cell, negative_log_likelihood, node_encodings,
    predict_distribution, predict_rating, Accumulation, CellKind, EdgeBatch, GraphInput, GruWeights, LstmWeights,
    ModelConfig, Parameters,
};
use gcmc_core::rng::{Purpose, SeedStreams};
use gcmc_core::tape::NeighborLists;
use gcmc_core::{Tape, Tensor};

const TOL: f64 = 1e-12;

fn random_instances(n: u64) -> Vec<(u64, ToyInstance)> {
    (0..n)
        .map(|seed| {
            let spec = ToySpec::random(&mut SeedStreams::new(seed).stream(Purpose::GradCheck, 0));
            (seed, spec.build(seed).unwrap())
        })
        .collect()
}

fn step_edges(graph: &GraphInput) -> Vec<Vec<Edge>> {
    graph
        .steps()
        .iter()
        .map(|adj| adj.edges().iter().map(|e| e.edge).collect())
        .collect()
}

fn assert_close(got: &Tensor, want: &[Vec<f64>], what: &str) {
    assert_eq!(got.rows(), want.len(), "{what}: rows");
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let g = got.get(i, j);
            assert!((g - w).abs() <= TOL, "{what}[{i}][{j}]: {g} vs {w}");
        }
    }
}

fn batch_edges(batch: &EdgeBatch, n_users: usize) -> Vec<Edge> {
    batch
        .pairs
        .iter()
        .zip(batch.targets.iter())
        .map(|(&(u, v), &level)| Edge {
            user: u,
            item: v - n_users,
            level,
        })
        .collect()
}

#[test]
fn encode_step_matches_oracle() {
    for (seed, inst) in random_instances(30) {
        let enc = node_encodings(&inst.params, &inst.config, &inst.graph).unwrap();
        for (t, edges) in step_edges(&inst.graph).iter().enumerate() {
            let want = oracle::encode_step(&inst.params, &inst.config, edges);
            assert_close(&enc.steps[t], &want, &format!("seed {seed} step {t}"));
        }
    }
}

#[test]
fn encode_sequence_matches_oracle() {
    for (seed, inst) in random_instances(30) {
        let enc = node_encodings(&inst.params, &inst.config, &inst.graph).unwrap();
        let want = oracle::encode_sequence(&inst.params, &inst.config, &step_edges(&inst.graph));
        let nu = inst.config.n_users;
        assert_close(&enc.users, &want[..nu], &format!("seed {seed} users"));
        assert_close(&enc.items, &want[nu..], &format!("seed {seed} items"));
    }
}

#[test]
fn decode_loss_and_expectation_match_oracle() {
    for (seed, inst) in random_instances(30) {
        let cfg = &inst.config;
        let z = oracle::encode_sequence(&inst.params, cfg, &step_edges(&inst.graph));
        let probs = predict_distribution(&inst.params, cfg, &inst.graph, &inst.batch.pairs).unwrap();
        for (e, &(u, v)) in inst.batch.pairs.iter().enumerate() {
            let want = oracle::softmax(&oracle::logits(&inst.params, cfg, &z[u], &z[v]));
            let single = decode(&z[u], &z[v], &inst.params, cfg).unwrap();
            for r in 0..cfg.n_levels() {
                assert!((probs.get(e, r) - want[r]).abs() <= TOL, "seed {seed}");
                assert!((single[r] - want[r]).abs() <= TOL, "seed {seed}");
            }
            let expected = predict_rating(probs.row(e), &cfg.rating_values).unwrap();
            assert!((expected - oracle::expected_rating(&want, &cfg.rating_values)).abs() <= TOL);
        }

        let want_loss = oracle::mean_nll(&inst.params, cfg, &z, &batch_edges(&inst.batch, cfg.n_users));
        let mut rng = SeedStreams::new(0).stream(Purpose::Dropout, 0);
        let fwd = forward(&inst.params, cfg, &inst.graph, &inst.batch, false, &mut rng).unwrap();
        assert!((fwd.loss_value() - want_loss).abs() <= TOL, "seed {seed}");
        let nll = negative_log_likelihood(&probs, &inst.batch.targets).unwrap();
        assert!((nll.mean - want_loss).abs() <= TOL, "seed {seed}");
    }
}

#[test]
fn dropout_disabled_training_pass_equals_evaluation() {
    for (_, mut inst) in random_instances(10) {
        inst.config.dropout = 0.0;
        let mut rng = SeedStreams::new(1).stream(Purpose::Dropout, 0);
        let train = forward(&inst.params, &inst.config, &inst.graph, &inst.batch, true, &mut rng).unwrap();
        let eval = forward(&inst.params, &inst.config, &inst.graph, &inst.batch, false, &mut rng).unwrap();
        assert_eq!(train.loss_value(), eval.loss_value());
    }
}

#[test]
fn zero_weights_give_zero_encodings_and_uniform_predictions() {
    let (_, mut inst) = random_instances(1).remove(0);
    inst.config.cell = CellKind::None;
    inst.config.mode = SequenceMode::Static;
    inst.config.steps = 1;
    let mut params = Parameters::init(&inst.config, &mut SeedStreams::new(2).stream(Purpose::Init, 0)).unwrap();
    for (_, t) in params.iter_mut() {
        t.data_mut().fill(0.0);
    }
    let edges: Vec<Edge> = batch_edges(&inst.batch, inst.config.n_users);
    let graph = GraphInput::build(&sequence_from_edges(&edges, SequenceMode::Static, 1).unwrap(), &inst.config).unwrap();
    let enc = node_encodings(&params, &inst.config, &graph).unwrap();
    assert!(enc.users.data().iter().chain(enc.items.data()).all(|&v| v == 0.0));
    let probs = predict_distribution(&params, &inst.config, &graph, &inst.batch.pairs).unwrap();
    let uniform = 1.0 / inst.config.n_levels() as f64;
    assert!(probs.data().iter().all(|&p| p == uniform));
}

fn static_config(nu: usize, nv: usize) -> ModelConfig {
    let mut c = ModelConfig::new(nu, nv, vec![1, 2, 3, 4, 5]);
    c.hidden = 10;
    c.output = 3;
    c
}

#[test]
fn isolated_node_encodes_to_zero() {
    let cfg = static_config(3, 2);
    let params = Parameters::init(&cfg, &mut SeedStreams::new(4).stream(Purpose::Init, 0)).unwrap();
    let edges = [
        Edge { user: 0, item: 0, level: 4 },
        Edge { user: 1, item: 0, level: 2 },
        Edge { user: 1, item: 1, level: 0 },
    ];
    let graph = GraphInput::build(&sequence_from_edges(&edges, SequenceMode::Static, 1).unwrap(), &cfg).unwrap();
    let enc = node_encodings(&params, &cfg, &graph).unwrap();
    assert!(enc.users.row(2).iter().all(|&v| v == 0.0));
}

fn recurrent_params(cell: CellKind, output: usize, hidden: usize) -> (ModelConfig, Parameters) {
    let mut cfg = static_config(1, 1);
    cfg.output = output;
    cfg.cell = cell;
    cfg.mode = SequenceMode::Incremental;
    cfg.steps = 2;
    cfg.recurrent_hidden = hidden;
    let mut p = Parameters::init(&cfg, &mut SeedStreams::new(0).stream(Purpose::Init, 0)).unwrap();
    for (_, t) in p.iter_mut() {
        t.data_mut().fill(0.0);
    }
    (cfg, p)
}

#[test]
fn zero_weight_gru_halves_state() {
    let (_, p) = recurrent_params(CellKind::Gru, 2, 3);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape).unwrap();
    let w = GruWeights::bind(&bound).unwrap();
    let x = tape.constant(Tensor::from_rows(&[&[0.3, -1.0]]).unwrap()).unwrap();
    let h = tape.constant(Tensor::from_rows(&[&[0.8, -0.4, 2.0]]).unwrap()).unwrap();
    let next = gru_cell(&mut tape, &w, x, Some(h)).unwrap();
    assert_eq!(tape.value(next).data(), &[0.4, -0.2, 1.0]);
    let first = gru_cell(&mut tape, &w, x, None).unwrap();
    assert!(tape.value(first).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_weight_lstm_halves_cell() {
    let (_, p) = recurrent_params(CellKind::Lstm, 2, 2);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape).unwrap();
    let w = LstmWeights::bind(&bound).unwrap();
    let x = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap()).unwrap();
    let h = tape.constant(Tensor::from_rows(&[&[0.1, 0.2]]).unwrap()).unwrap();
    let c = tape.constant(Tensor::from_rows(&[&[1.0, -3.0]]).unwrap()).unwrap();
    let (h2, c2) = lstm_cell(&mut tape, &w, x, Some((h, c))).unwrap();
    assert_eq!(tape.value(c2).data(), &[0.5, -1.5]);
    let want = [0.5 * 0.5f64.tanh(), 0.5 * (-1.5f64).tanh()];
    for (g, w) in tape.value(h2).data().iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
}

#[test]
fn gru_two_steps_by_hand() {
    // scalar GRU: one input, one hidden unit
    let (_, mut p) = recurrent_params(CellKind::Gru, 1, 1);
    let set = |p: &mut Parameters, name: &str, v: f64| p.get_mut(name).unwrap().data_mut()[0] = v;
    set(&mut p, "gru.update.input", 0.5);
    set(&mut p, "gru.update.recurrent", -1.0);
    set(&mut p, "gru.reset.recurrent", 2.0);
    set(&mut p, "gru.candidate.input", 1.0);
    set(&mut p, "gru.candidate.recurrent", 0.7);
    set(&mut p, "gru.candidate.bias", 0.1);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (x1, x2) = (0.6, -0.2);
    let u1 = sig(0.5 * x1);
    let h1 = (1.0 - u1) * (x1 + 0.1f64).tanh();
    let u2 = sig(0.5 * x2 - h1);
    let r2 = sig(2.0 * h1);
    let n2 = (x2 + 0.7 * r2 * h1 + 0.1).tanh();
    let h2 = (1.0 - u2) * n2 + u2 * h1;

    let mut tape = Tape::new();
    let bound = p.bind(&mut tape).unwrap();
    let w = GruWeights::bind(&bound).unwrap();
    let a = tape.constant(Tensor::scalar(x1)).unwrap();
    let b = tape.constant(Tensor::scalar(x2)).unwrap();
    let s1 = gru_cell(&mut tape, &w, a, None).unwrap();
    let s2 = gru_cell(&mut tape, &w, b, Some(s1)).unwrap();
    assert!((tape.value(s1).item() - h1).abs() < 1e-15);
    assert!((tape.value(s2).item() - h2).abs() < 1e-15);
}

#[test]
fn single_step_modes_agree() {
    for cell in [CellKind::Gru, CellKind::Lstm] {
        let mut spec = ToySpec::sized(5);
        spec.cell = cell;
        spec.steps = 1;
        spec.mode = SequenceMode::Disjoint;
        let a = spec.build(8).unwrap();
        spec.mode = SequenceMode::Incremental;
        let b = spec.build(8).unwrap();
        assert_eq!(
            node_encodings(&a.params, &a.config, &a.graph).unwrap(),
            node_encodings(&b.params, &b.config, &b.graph).unwrap()
        );
    }
}

#[test]
fn copy_last_cell_on_incremental_input_reproduces_static() {
    for accumulation in [Accumulation::Concat, Accumulation::Sum] {
        for norm in [NormScheme::Left, NormScheme::Symmetric] {
            let mut spec = ToySpec::sized(6);
            spec.accumulation = accumulation;
            spec.norm = norm;
            spec.steps = 3;
            spec.mode = SequenceMode::Incremental;
            let inst = spec.build(12).unwrap();
            let edges = batch_edges(&inst.batch, inst.config.n_users);

            let mut static_cfg = inst.config.clone();
            static_cfg.cell = CellKind::None;
            static_cfg.mode = SequenceMode::Static;
            static_cfg.steps = 1;
            let static_graph =
                GraphInput::build(&sequence_from_edges(&edges, SequenceMode::Static, 1).unwrap(), &static_cfg).unwrap();
            let base = node_encodings(&inst.params, &static_cfg, &static_graph).unwrap();

            let mut tape = Tape::new();
            let bound = inst.params.bind(&mut tape).unwrap();
            let mut rng = SeedStreams::new(0).stream(Purpose::Dropout, 0);
            let (_, z) = encode_sequence_with(&mut tape, &bound, &inst.graph, &inst.config, false, &mut rng, |_, s| {
                Ok(*s.last().unwrap())
            })
            .unwrap();
            let nu = inst.config.n_users;
            let zv = tape.value(z);
            assert_eq!(&zv.data()[..nu * zv.cols()], base.users.data());
            assert_eq!(&zv.data()[nu * zv.cols()..], base.items.data());
        }
    }
}

#[test]
fn mirrored_graph_gives_mirrored_encodings() {
    // user k and item k have identical input rows and mirrored neighborhoods
    let n = 3;
    let cfg = static_config(n, n);
    let mut params = Parameters::init(&cfg, &mut SeedStreams::new(6).stream(Purpose::Init, 0)).unwrap();
    for level in 0..cfg.n_levels() {
        let t = params.get_mut(&model::params::level_name(level)).unwrap();
        for k in 0..n {
            let row = t.row(k).to_vec();
            t.row_mut(n + k).copy_from_slice(&row);
        }
    }
    let edges = [
        Edge { user: 0, item: 1, level: 3 },
        Edge { user: 1, item: 0, level: 3 },
        Edge { user: 2, item: 2, level: 0 },
        Edge { user: 0, item: 2, level: 4 },
        Edge { user: 2, item: 0, level: 4 },
    ];
    for norm in [NormScheme::Left, NormScheme::Symmetric] {
        let mut cfg = cfg.clone();
        cfg.norm = norm;
        let graph = GraphInput::build(&sequence_from_edges(&edges, SequenceMode::Static, 1).unwrap(), &cfg).unwrap();
        let enc = node_encodings(&params, &cfg, &graph).unwrap();
        assert_eq!(enc.users, enc.items);
        assert!(enc.users.data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn dense_one_hot_product_equals_row_selection() {
    let cfg = static_config(3, 4);
    let edges = [
        Edge { user: 0, item: 1, level: 2 },
        Edge { user: 1, item: 1, level: 2 },
        Edge { user: 2, item: 3, level: 2 },
        Edge { user: 2, item: 0, level: 1 },
    ];
    let n = cfg.input_dim();
    for norm in [NormScheme::Left, NormScheme::Symmetric] {
        let adj = build_adjacency(&edges, 3, 4, 5, norm).unwrap();
        let w = Parameters::init(&cfg, &mut SeedStreams::new(3).stream(Purpose::Init, 0))
            .unwrap()
            .level_weights(&cfg, 2)
            .unwrap();
        // dense normalized adjacency over the joint space
        let mut a = Tensor::zeros(n, n);
        for (i, row) in (0..n).map(|i| (i, adj.messages(2).row(i).collect::<Vec<_>>())) {
            for (j, weight) in row {
                a.set(i, j, weight);
            }
        }
        let mut tape = Tape::new();
        let wv = tape.constant(w).unwrap();
        let av = tape.constant(a).unwrap();
        let one_hot = tape.constant(Tensor::identity(n)).unwrap();
        let xw = tape.matmul(one_hot, wv).unwrap();
        let dense = tape.matmul(av, xw).unwrap();
        let gathered = tape.gather_accumulate(wv, adj.messages(2)).unwrap();
        assert!(tape.value(dense).max_abs_diff(tape.value(gathered)) < 1e-15);
    }
    let lists = Arc::new(NeighborLists::from_lists(&[vec![(0, 1.0)]]).unwrap());
    assert_eq!(lists.nnz(), 1);
}
