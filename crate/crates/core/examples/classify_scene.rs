//! Full pipeline on a synthetic scene: PCA, patches, split, training,
//! evaluation, and classification maps written as PNG.
//!
//! ```text
//! cargo run --release --example classify_scene -- [out_dir]
//! ```

use std::path::PathBuf;

use afnet::net::AfNetConfig;
use afnet::pipeline::{self, RunConfig, Scene};
use afnet::synthetic::field_scene;

fn main() -> afnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("afnet-classify"));
    let (cube, gt) = field_scene(32, 32, 24, 4, 11)?;
    let scene = Scene::from_parts("fields", cube, gt)?;
    let mut cfg = RunConfig {
        dataset: "fields".into(),
        patch_size: 7,
        components: 5,
        network: Some(AfNetConfig::tiny(7, 5, 4, 2, 4)),
        ..RunConfig::default()
    };
    cfg.train.epochs = 15;
    cfg.train.batch_size = 64;
    cfg.train.learning_rate = 0.003;
    let outcome = pipeline::run(&scene, &cfg, Some(&out), None)?;
    print!("{}", outcome.report.to_text());
    println!("artifacts in {}", out.display());
    Ok(())
}
