mod common;

use afx_autodiff::{Precision, Tape, Tensor};
use afx_core::data::{Segment, Splits};
use afx_core::losses::metrics;
use afx_core::models::{Model, ModelSpec};
use afx_core::nn::Ctx;
use afx_core::train::*;
use afx_core::Error;
use common::*;

#[test]
fn adam_matches_hand_iterates_on_a_square() {
    // f(w) = w², w0 = 1, lr 0.1; iterates worked out by hand from the update rule
    let expected = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let (mut w, mut m, mut v) = (vec![1.0], vec![0.0], vec![0.0]);
    for (t, want) in expected.iter().enumerate() {
        let g = [2.0 * w[0]];
        adam_update(&mut w, &g, &mut m, &mut v, t as u64 + 1, &cfg);
        assert!((w[0] - want).abs() < 1e-12, "iterate {}: {} vs {want}", t + 1, w[0]);
    }
}

#[test]
fn zero_gradient_decays_moments_only() {
    let cfg = AdamConfig::default();
    let (mut w, mut m, mut v) = (vec![0.3, -2.0], vec![0.5, -0.1], vec![0.2, 0.4]);
    adam_update(&mut w, &[0.0, 0.0], &mut m, &mut v, 5, &cfg);
    assert!((m[0] - 0.45).abs() < 1e-15 && (m[1] + 0.09).abs() < 1e-15);
    assert!((v[0] - 0.1998).abs() < 1e-15 && (v[1] - 0.3996).abs() < 1e-15);
    // nonzero first moments still move the weights; zero moments do not
    let (mut w2, mut m2, mut v2) = (vec![0.3], vec![0.0], vec![0.0]);
    adam_update(&mut w2, &[0.0], &mut m2, &mut v2, 1, &cfg);
    assert_eq!(w2, vec![0.3]);
    assert!(w[0] < 0.3);
}

#[test]
fn step_decay_schedule() {
    let cfg = AdamConfig { lr: 0.08, decay_every: 10, decay_factor: 0.5, ..AdamConfig::default() };
    assert_eq!(cfg.lr_at(1), 0.08);
    assert_eq!(cfg.lr_at(10), 0.08);
    assert_eq!(cfg.lr_at(11), 0.04);
    assert_eq!(cfg.lr_at(31), 0.01);
    assert_eq!(AdamConfig::default().lr_at(1000), 1e-3);
}

fn chain(stages: &[(&str, &str)]) -> Model {
    Model::build(&graybox_spec(stages, 0), 0).unwrap()
}

#[test]
fn identity_task_converges() {
    let mut m = chain(&[("gain", "static"), ("dc_offset", "static")]);
    // start at +8 dB so the chain is not the identity
    let id = m.store.find("stage0.gain.ctl.bias").unwrap();
    m.store.set(id, Tensor::from_vec(vec![0.4]));
    let x = noise(4096, 0.5, 1);
    let seg = segment_of(x.clone(), x, vec![]);
    let cfg = TrainConfig { adam: AdamConfig { lr: 3e-2, decay_every: 20, ..AdamConfig::default() }, ..TrainConfig::default() };
    let mut adam = Adam::new(&m.store, cfg.adam);
    let first = train_step(&mut m, &mut adam, &[&seg], &cfg, Precision::F64).unwrap().tot;
    let mut best = first;
    for _ in 1..200 {
        best = best.min(train_step(&mut m, &mut adam, &[&seg], &cfg, Precision::F64).unwrap().tot);
    }
    assert!(first > 0.1, "{first}");
    assert!(best < 1e-4, "{best}");
}

#[test]
fn losses_are_finite_and_gradients_reach_every_tensor() {
    let specs = [
        spec(r#"{"sample_rate": 48000, "num_controls": 1, "model": {"type": "tcn", "blocks": 2, "channels": 4, "cond": "tfilm"}}"#),
        spec(r#"{"sample_rate": 48000, "num_controls": 1, "model": {"type": "lstm", "hidden": 8, "cond": "tvcond"}}"#),
        graybox_spec(&[("parametric_eq", "static"), ("gain", "dynamic"), ("rational", "dummy"), ("lowpass", "dynamic_cond")], 1),
    ];
    for s in specs {
        let mut m = Model::build(&s, 3).unwrap();
        let x = noise(2048, 0.5, 2);
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).tanh()).collect();
        let seg = segment_of(x.clone(), y.clone(), vec![0.5]);
        let tape = Tape::with_precision(Precision::F64);
        let p = m.store.bind(&tape);
        let c = Some(tape.constant(Tensor::from_vec(vec![0.5])));
        let (out, _) = m.forward(&p, &Ctx::train(), tape.constant(Tensor::from_vec(x)), c, None).unwrap();
        let loss = afx_core::losses::l1(tape.constant(Tensor::from_vec(y)), out).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (e, v) in m.store.entries().iter().zip(p.vars()) {
            let g = grads.get(*v).unwrap();
            assert_eq!(g.shape(), e.value.shape(), "{}", e.name);
            assert!(g.all_finite(), "{}", e.name);
        }
        drop(p);
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&m.store, cfg.adam);
        for _ in 0..3 {
            let l = train_step(&mut m, &mut adam, &[&seg], &cfg, Precision::F32).unwrap();
            assert!(l.tot.is_finite() && l.applied, "{}", s.describe());
        }
    }
}

#[test]
fn non_finite_steps_are_skipped_and_counted() {
    let mut m = chain(&[("gain", "static")]);
    let x = noise(2048, 0.5, 1);
    let mut y = x.clone();
    y[10] = f64::NAN;
    let bad = segment_of(x.clone(), y, vec![]);
    let good = segment_of(x.clone(), x, vec![]);
    let cfg = TrainConfig::default();
    let mut adam = Adam::new(&m.store, cfg.adam);
    let before = m.store.clone();
    let l = train_step(&mut m, &mut adam, &[&bad], &cfg, Precision::F32).unwrap();
    assert!(!l.applied && !l.tot.is_finite());
    assert_eq!(adam.skipped, 1);
    assert_eq!(adam.t, 0);
    for (a, b) in before.entries().iter().zip(m.store.entries()) {
        assert_eq!(a.value, b.value);
    }
    assert!(train_step(&mut m, &mut adam, &[&good], &cfg, Precision::F32).unwrap().applied);
    assert_eq!(adam.t, 1);
}

fn lstm_spec() -> ModelSpec {
    spec(r#"{"sample_rate": 48000, "model": {"type": "lstm", "hidden": 6}}"#)
}

fn recurrent_segment(n: usize, seed: u64) -> Segment {
    let x = noise(n, 0.5, seed);
    let y = device(&x, 3.0);
    segment_of(x, y, vec![0.4])
}

#[test]
fn tbptt_update_count_and_errors() {
    let mut m = Model::build(&lstm_spec(), 1).unwrap();
    let seg = recurrent_segment(5000, 1);
    let mut cfg = TrainConfig::default();
    cfg.loss.w_mrstft = 0.0;
    cfg.tbptt = TbpttConfig { enabled: true, chunk_len: 700, warmup_len: 300 };
    let mut adam = Adam::new(&m.store, cfg.adam);
    let losses = tbptt_train_step(&mut m, &mut adam, &[&seg], &cfg, Precision::F32).unwrap();
    assert_eq!(losses.len(), (5000 - 300) / 700);
    assert_eq!(adam.t, 6);
    cfg.tbptt.chunk_len = 6000;
    assert!(matches!(tbptt_train_step(&mut m, &mut adam, &[&seg], &cfg, Precision::F32), Err(Error::InvalidArgument(_))));
}

#[test]
fn tbptt_gradients_do_not_grow_with_history() {
    let mut m = Model::build(&lstm_spec(), 1).unwrap();
    let seg = recurrent_segment(16 * 256, 4);
    let mut cfg = TrainConfig::default();
    cfg.loss.w_mrstft = 0.0;
    cfg.adam.lr = 1e-12;
    cfg.tbptt = TbpttConfig { enabled: true, chunk_len: 256, warmup_len: 0 };
    let mut adam = Adam::new(&m.store, cfg.adam);
    let norms: Vec<f64> =
        tbptt_train_step(&mut m, &mut adam, &[&seg], &cfg, Precision::F64).unwrap().iter().map(|l| l.grad_norm).collect();
    assert!(norms.iter().all(|n| n.is_finite() && *n > 0.0));
    // each chunk's tape holds only that chunk, so later chunks are not larger
    let early = norms[..4].iter().sum::<f64>() / 4.0;
    let late = norms[12..].iter().sum::<f64>() / 4.0;
    assert!(late < 3.0 * early, "{norms:?}");
}

#[test]
fn evaluation_of_identity_is_zero() {
    let m = chain(&[("gain", "static")]);
    let segs: Vec<Segment> = (0..2).map(|i| {
        let x = noise(4096, 0.3, i);
        segment_of(x.clone(), x, vec![])
    }).collect();
    let e = evaluate(&m, &segs, &TrainConfig::default(), Precision::F64).unwrap();
    for v in [e.tot, e.l1, e.mrstft, e.esr, e.dc, e.mae, e.mse, e.mape] {
        assert!(v.abs() < 1e-9, "{e:?}");
    }
    assert!(matches!(evaluate(&m, &[], &TrainConfig::default(), Precision::F64), Err(Error::InvalidArgument(_))));
}

#[test]
fn evaluation_means_match_hand_computation() {
    let m = chain(&[("gain", "static")]);
    let mk = |seed: u64, k: f64| {
        let x = noise(4096, 0.3, seed);
        let y: Vec<f64> = x.iter().map(|v| k * v + 0.01).collect();
        segment_of(x, y, vec![])
    };
    let segs = [mk(1, 1.5), mk(2, 0.5)];
    let cfg = TrainConfig::default();
    let e = evaluate(&m, &segs, &cfg, Precision::F64).unwrap();
    // the chain is the identity, so ŷ = x
    let per = |f: fn(&[f64], &[f64]) -> afx_core::Result<f64>| {
        segs.iter().map(|s| f(&s.y, &s.x).unwrap()).sum::<f64>() / 2.0
    };
    assert!((e.l1 - per(metrics::l1)).abs() < 1e-12);
    assert!((e.esr - per(metrics::esr)).abs() < 1e-12);
    assert!((e.dc - per(metrics::dc_loss)).abs() < 1e-12);
    assert!((e.mse - per(metrics::mse)).abs() < 1e-12);
    assert!((e.mape - per(metrics::mape)).abs() < 1e-12);
    let mr = segs.iter().map(|s| metrics::mrstft(&s.y, &s.x, &cfg.mrstft).unwrap()).sum::<f64>() / 2.0;
    assert!((e.mrstft - mr).abs() < 1e-12);
    assert!((e.tot - (e.l1 + e.mrstft)).abs() < 1e-12);
}

fn tiny_splits(seed: u64) -> Splits {
    let mk = |k: u64| {
        let x = noise(2048, 0.4, seed + k);
        let y = x.iter().map(|v| (2.0 * v).tanh()).collect();
        segment_of(x, y, vec![])
    };
    Splits { train: (0..4).map(mk).collect(), val: vec![mk(10)], test: vec![mk(11)] }
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig { max_steps: 12, val_every: 4, seed, adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() }, ..TrainConfig::default() }
}

fn tiny_model() -> Model {
    chain(&[("gain", "static"), ("rational", "dummy"), ("gain", "static")])
}

#[test]
fn fixed_seed_runs_are_identical() {
    let splits = tiny_splits(0);
    let run = |seed| {
        let mut t = Trainer::new(tiny_model(), tiny_config(seed), Precision::F32).unwrap();
        t.run(&splits, None).unwrap();
        t.log.rows
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_ne!(a, run(2));
    assert!(a.windows(2).all(|w| w[0].step <= w[1].step));
    assert_eq!(a.iter().filter(|r| r.phase == Phase::Val).count(), 3);
}

fn tmpdir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("afx-train-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let splits = tiny_splits(0);
    let mut t = Trainer::new(tiny_model(), tiny_config(1), Precision::F32).unwrap();
    for _ in 0..5 {
        t.step_once(&splits.train).unwrap();
    }
    let dir = tmpdir("ckpt");
    let path = dir.join("a.ckpt.json");
    t.checkpoint().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, t.checkpoint());
    let m = back.restore_model().unwrap();
    for (a, b) in m.store.entries().iter().zip(t.model.store.entries()) {
        assert_eq!(a.value.data(), b.value.data());
    }
    assert_eq!(back.optimizer.as_ref(), Some(&t.adam));

    let mut other = Model::build(&graybox_spec(&[("gain", "static")], 0), 0).unwrap();
    assert!(matches!(back.apply(&mut other), Err(Error::Checkpoint(_))));

    let corrupt = dir.join("corrupt.ckpt.json");
    std::fs::write(&corrupt, "{\"format\": \"afx-checkpoint-v1\", \"spec\": ").unwrap();
    assert!(matches!(Checkpoint::load(&corrupt), Err(Error::Checkpoint(_))));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn resume_reproduces_the_trajectory() {
    let splits = tiny_splits(3);
    let cfg = TrainConfig { max_steps: 30, ..tiny_config(5) };
    let mut straight = Trainer::new(tiny_model(), cfg.clone(), Precision::F32).unwrap();
    let mut reference = Vec::new();
    let mut ckpt = None;
    for i in 0..25 {
        if i == 10 {
            ckpt = Some(straight.checkpoint());
        }
        reference.push(straight.step_once(&splits.train).unwrap().tot);
    }
    let dir = tmpdir("resume");
    let path = dir.join("mid.ckpt.json");
    ckpt.unwrap().save(&path).unwrap();
    let mut resumed = Trainer::resume(&Checkpoint::load(&path).unwrap(), cfg, Precision::F32).unwrap();
    assert_eq!(resumed.step, 10);
    for want in &reference[10..] {
        let got = resumed.step_once(&splits.train).unwrap().tot;
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn run_writes_checkpoints_and_log() {
    let splits = tiny_splits(0);
    let dir = tmpdir("run");
    let mut t = Trainer::new(tiny_model(), tiny_config(1), Precision::F32).unwrap();
    t.run(&splits, Some(&dir)).unwrap();
    t.log.write_csv(&dir.join("metrics.csv")).unwrap();
    assert!(dir.join("best.ckpt.json").exists() && dir.join("last.ckpt.json").exists());
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("step,phase,loss_tot,loss_l1,loss_mrstft,"));
    assert_eq!(lines.count(), 12 + 3);
    let best = Checkpoint::load(&dir.join("best.ckpt.json")).unwrap();
    assert_eq!(best.best_val, t.best_val);
    std::fs::remove_dir_all(dir).unwrap();
}
