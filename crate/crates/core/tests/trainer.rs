use uniconv::checkpoint::Checkpoint;
use uniconv::config::{Config, ModelConfig, TaskMode};
use uniconv::corpus::Dataset;
use uniconv::inference::{Engine, StepOptions};
use uniconv::model::UniConv;
use uniconv::synth::{generate, SyntheticSpec};
use uniconv::trainer::{examples, train, train_model, validate, EpochLog};
use uniconv::Error;

fn dataset(dialogues: usize, val: usize) -> Dataset {
    generate(&SyntheticSpec {
        dialogues,
        val_dialogues: val,
        test_dialogues: 0,
        ..Default::default()
    })
    .unwrap()
    .dataset()
}

fn config(epochs: usize) -> Config {
    let mut c = Config::default();
    c.model = ModelConfig {
        d: 16,
        heads: 2,
        n_dst_slot: 1,
        n_dst_domain: 1,
        n_gen: 1,
        dropout: 0.0,
        ..Default::default()
    };
    c.train.epochs = epochs;
    c.train.batch_size = 4;
    c.train.lr = 3e-3;
    c.train.warmup = 10;
    c.train.seed = 7;
    c
}

fn memorise() -> (Dataset, uniconv::trainer::TrainOutcome) {
    let ds = dataset(1, 0);
    let mut c = config(200);
    c.model.d = 32;
    c.model.heads = 4;
    c.train.label_smoothing = 0.0;
    c.train.batch_size = 1;
    c.train.lr = 5e-3;
    c.train.warmup = 600;
    let out = train(&ds, &c, &mut |_, _| Ok(true)).unwrap();
    (ds, out)
}

#[test]
fn memorises_a_single_dialogue() {
    let (ds, out) = memorise();
    let ex = examples(&out.model, &ds.corpus.train, &ds.kb).unwrap();
    let loss = validate(&out.model, &ex, TaskMode::E2e, 0.0).unwrap();
    assert!(loss < 0.05, "loss {loss} after {} epochs", out.log.len());
    let t = out.log.last().unwrap().train_loss;
    assert!((loss - t).abs() < 0.05, "val {loss} train {t}");

    let d = &ds.corpus.train[0];
    let session = Engine::new(&out.model, &ds.kb).replay(d, TaskMode::Dst, StepOptions::default()).unwrap();
    for (rec, turn) in session.transcript.iter().zip(&d.turns) {
        assert_eq!(rec.state, turn.state, "turn {}", rec.turn);
    }
}

#[test]
fn same_seed_same_first_epoch() {
    let ds = dataset(4, 0);
    let c = config(1);
    let a = train(&ds, &c, &mut |_, _| Ok(true)).unwrap();
    let b = train(&ds, &c, &mut |_, _| Ok(true)).unwrap();
    assert_eq!(a.log[0].train_loss.to_bits(), b.log[0].train_loss.to_bits());
    let mut other = c.clone();
    other.train.seed = 8;
    let d = train(&ds, &other, &mut |_, _| Ok(true)).unwrap();
    assert_ne!(a.log[0].train_loss, d.log[0].train_loss);
}

#[test]
fn validation_is_pure() {
    let ds = dataset(3, 2);
    let c = config(1);
    let model = UniConv::for_dataset(c.model.clone(), &ds, 1, 3).unwrap();
    let before = model.store.clone();
    let ex = examples(&model, &ds.corpus.val, &ds.kb).unwrap();
    let a = validate(&model, &ex, TaskMode::E2e, 0.1).unwrap();
    let b = validate(&model, &ex, TaskMode::E2e, 0.1).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(model.store.iter().zip(before.iter()).all(|((_, x), (_, y))| x.tensor == y.tensor));
}

#[test]
fn checkpoint_reload_reproduces_validation_loss() {
    let ds = dataset(4, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(2);
    c.paths.checkpoint = Some(dir.path().join("m.ckpt"));
    let out = train(&ds, &c, &mut |_, _| Ok(true)).unwrap();
    let back = Checkpoint::load(&dir.path().join("m.ckpt"), Some(&ds.fingerprint)).unwrap();
    assert_eq!(back.epoch, out.best.epoch);
    assert!(back.optimizer.is_some());
    let ex = examples(&back.model, &ds.corpus.val, &ds.kb).unwrap();
    let v = validate(&back.model, &ex, TaskMode::E2e, c.train.label_smoothing).unwrap();
    assert_eq!(Some(v.to_bits()), back.best_val_loss.map(f64::to_bits));
    let stale = Checkpoint::load(&dir.path().join("m.ckpt"), Some("other"));
    assert!(stale.is_err());
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let ds = dataset(2, 0);
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(1);
    c.paths.output = Some(dir.path().to_path_buf());
    let mut model = UniConv::for_dataset(c.model.clone(), &ds, 1, 1).unwrap();
    let id = model.store.iter().next().unwrap().0;
    model.store.get_mut(id).tensor.data_mut().fill(f64::NAN);
    let err = train_model(model, &ds, &c, &mut |_, _| Ok(true)).unwrap_err();
    assert!(matches!(err, Error::Training(_)), "{err}");
    assert!(err.to_string().contains("non-finite"), "{err}");
    assert!(dir.path().join("nonfinite_batch.json").is_file());
}

#[test]
fn hook_can_stop_training_and_log_is_written() {
    let ds = dataset(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(10);
    c.paths.output = Some(dir.path().to_path_buf());
    let out = train(&ds, &c, &mut |_, log| Ok(log.epoch < 3)).unwrap();
    assert_eq!(out.log.len(), 3);
    let text = std::fs::read_to_string(dir.path().join("train_log.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], EpochLog::HEADER);
    assert_eq!(lines.len(), 4);
    assert!(out.log.iter().all(|l| l.val_loss.is_some() && l.train_loss.is_finite()));
}

#[test]
fn c2t_training_skips_the_tracker() {
    let ds = dataset(3, 0);
    let mut c = config(1);
    c.train.mode = TaskMode::C2t;
    let fresh = UniConv::for_dataset(c.model.clone(), &ds, 1, c.train.seed).unwrap();
    let out = train(&ds, &c, &mut |_, _| Ok(true)).unwrap();
    let changed: Vec<String> = fresh
        .store
        .iter()
        .zip(out.model.store.iter())
        .filter(|((_, a), (_, b))| a.tensor != b.tensor)
        .map(|((_, a), _)| a.name.clone())
        .collect();
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|n| !n.starts_with("bdst.")), "{changed:?}");
}
