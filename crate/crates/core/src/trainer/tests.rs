use super::*;
use crate::net::{build_model, AfNetConfig, AttentionKind, BlockTopology, ModelKind};
use crate::synthetic::sign_toy;

fn tiny_model(kind: ModelKind) -> Model {
    build_model(kind, &AfNetConfig::tiny(5, 2, 2, 1, 2)).unwrap()
}

fn mean_loss(model: &Model, p: &[f64], x: &Tensor, y: &[usize]) -> f64 {
    let mut scratch = vec![0.0; p.len()];
    let (l, _) = loss_and_grad(model, p, x, y, 1.0, &mut scratch).unwrap();
    l / y.len() as f64
}

/// Init weights plus small nonzero biases, so that no ReLU sits exactly at
/// its kink (zero biases put all-zero receptive fields on it).
fn kink_free_params(model: &Model, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut p = ModelParameters::init(model, seed).values;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for l in model.layers() {
        for i in l.bias_range() {
            p[i] = rng.random_range(-0.1..0.1);
        }
    }
    p
}

fn check_gradients(cfg: &AfNetConfig, kind: ModelKind) {
    let model = build_model(kind, cfg).unwrap();
    let params = kink_free_params(&model, 4);
    let n: usize = model.input_shape().iter().product();
    let x = model
        .input_tensor(2, (0..2 * n).map(|i| ((i * 7 % 13) as f64 / 6.5 - 1.0) * 0.9).collect())
        .unwrap();
    let y = [1, 3];
    let mut grads = vec![0.0; params.len()];
    loss_and_grad(&model, &params, &x, &y, 0.5, &mut grads).unwrap();
    let h = 1e-5;
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let up = mean_loss(&model, &p, &x, &y);
        p[i] = params[i] - h;
        let down = mean_loss(&model, &p, &x, &y);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-6);
        assert!(err < 1e-4, "{kind} param {i}: analytic {} numeric {numeric}", grads[i]);
    }
}

#[test]
fn gradients_match_central_differences() {
    for topo in [BlockTopology::Parallel, BlockTopology::Sequential] {
        let mut cfg = AfNetConfig::tiny(3, 3, 3, 1, 2);
        cfg.set_attention(AttentionKind::Both);
        cfg.block_topology = topo;
        for kind in [ModelKind::Afnet, ModelKind::Inception2d, ModelKind::Inception3d] {
            check_gradients(&cfg, kind);
        }
    }
    let mut cfg = AfNetConfig::tiny(3, 3, 3, 2, 2);
    cfg.set_attention(AttentionKind::Both);
    check_gradients(&cfg, ModelKind::Afnet);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let model = tiny_model(ModelKind::Afnet);
    let (patches, split) = sign_toy(24, 8, 5, 2, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let (params, history) = train(&model, &patches, &split, &cfg).unwrap();
    assert_eq!(params.values, ModelParameters::init(&model, 9).values);
    assert_eq!(history.epochs(), 3);
}

#[test]
fn rejects_bad_configs_and_empty_splits() {
    let model = tiny_model(ModelKind::Afnet);
    let (patches, mut split) = sign_toy(10, 4, 5, 2, 1).unwrap();
    let zero = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(matches!(train(&model, &patches, &split, &zero), Err(Error::InvalidArgument(_))));
    let neg = TrainConfig { learning_rate: -1.0, ..TrainConfig::default() };
    assert!(train(&model, &patches, &split, &neg).is_err());
    for c in &mut split.classes {
        c.train.clear();
    }
    let one = TrainConfig { epochs: 1, ..TrainConfig::default() };
    assert!(matches!(train(&model, &patches, &split, &one), Err(Error::EmptySplit)));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let model = tiny_model(ModelKind::Inception2d);
    let (patches, split) = sign_toy(40, 10, 5, 2, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        micro_batch: 5,
        seed: 3,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let (a, ha) = train(&model, &patches, &split, &cfg).unwrap();
    let (b, hb) = train(&model, &patches, &split, &cfg).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(ha.train_loss, hb.train_loss);
    assert_eq!(ha.val_accuracy, hb.val_accuracy);

    let half = TrainConfig { epochs: 2, ..cfg.clone() };
    let init = ModelParameters::init(&model, cfg.seed);
    let s = train_from(&model, TrainState::new(init, cfg.adam), &patches, &split, &half, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.optimizer.save(&dir.path().join("opt.bin")).unwrap();
    let opt = Adam::load(&dir.path().join("opt.bin"), model.parameter_count()).unwrap();
    let resumed = TrainState::resume(s.params.clone(), opt, s.history.clone()).unwrap();
    let done = train_from(&model, resumed, &patches, &split, &cfg, |_| Ok(())).unwrap();
    assert_eq!(done.params.values, a.values);
    assert_eq!(done.history.train_loss, ha.train_loss);
}

#[test]
fn micro_batching_matches_whole_batches() {
    let model = tiny_model(ModelKind::Inception3d);
    let (patches, split) = sign_toy(20, 4, 5, 2, 5).unwrap();
    let base = TrainConfig {
        epochs: 2,
        batch_size: 10,
        seed: 1,
        micro_batch: 10,
        ..TrainConfig::default()
    };
    let (a, _) = train(&model, &patches, &split, &base).unwrap();
    let (b, _) = train(&model, &patches, &split, &TrainConfig { micro_batch: 3, ..base }).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn uniform_model_predicts_lowest_class() {
    let model = tiny_model(ModelKind::Afnet);
    let (patches, _) = sign_toy(6, 0, 5, 2, 1).unwrap();
    let p = predict(&model, &vec![0.0; model.parameter_count()], &patches).unwrap();
    assert!(p.labels.iter().all(|&l| l == 1));
    for i in 0..p.probabilities.rows {
        assert!((p.probabilities.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn toy_loss_decreases() {
    let model = tiny_model(ModelKind::Afnet);
    let (patches, split) = sign_toy(60, 10, 5, 2, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 20,
        seed: 2,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let (_, h) = train(&model, &patches, &split, &cfg).unwrap();
    let first: f64 = h.train_loss[..5].iter().sum();
    let last: f64 = h.train_loss[15..].iter().sum();
    assert!(last < first, "{:?}", h.train_loss);
}
