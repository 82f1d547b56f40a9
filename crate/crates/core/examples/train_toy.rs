//! Trains a small network on a separable toy problem and prints the
//! learning curve.

use afnet::net::{build_model, AfNetConfig, ModelKind};
use afnet::synthetic::sign_toy;
use afnet::trainer::{self, TrainConfig};

fn main() -> afnet::Result<()> {
    let (patches, split) = sign_toy(200, 40, 5, 3, 7)?;
    let model = build_model(ModelKind::Afnet, &AfNetConfig::tiny(5, 3, 2, 1, 4))?;
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 50,
        learning_rate: 0.003,
        seed: 1,
        ..TrainConfig::default()
    };
    println!("{} parameters, {} training patches", model.parameter_count(), split.train_idx().len());
    let (params, history) = trainer::train(&model, &patches, &split, &cfg)?;
    for e in (0..history.epochs()).step_by(5) {
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.3}  val loss {:.4}  val acc {:.3}",
            e + 1,
            history.train_loss[e],
            history.train_accuracy[e],
            history.val_loss[e],
            history.val_accuracy[e]
        );
    }
    let val = split.val_idx();
    let pred = trainer::predict_indices(&model, &params.values, &patches, &val, 64)?;
    let hits = val.iter().zip(&pred.labels).filter(|(&i, &p)| patches.labels[i] == p).count();
    println!("final validation accuracy {:.3} in {:.1}s", hits as f64 / val.len() as f64, history.train_seconds);
    Ok(())
}
