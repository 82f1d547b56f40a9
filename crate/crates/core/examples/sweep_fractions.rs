//! A training-fraction sweep over a synthetic dataset stored as containers,
//! followed by the summary table.

use afnet::bench::{self, Axis, SweepEnv, SweepPlan};
use afnet::hsio::{datasets, save_cube, save_ground_truth, ClassLegend, Dtype};
use afnet::net::{AfNetConfig, ModelKind};
use afnet::synthetic::field_scene;

fn main() -> afnet::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let (cube, gt) = field_scene(24, 24, 16, 3, 2)?;
    let (cube_path, gt_path) = datasets::container_paths(dir.path(), "fields");
    save_cube(&cube, &cube_path, Dtype::F32)?;
    save_ground_truth(&gt, Some(&ClassLegend::generated(3)), &gt_path)?;

    let mut plan = SweepPlan::new(vec!["fields".into()], ModelKind::Inception2d);
    plan.fractions = vec![5, 10, 15];
    plan.repeats = 2;
    plan.components = 4;
    plan.network = Some(AfNetConfig::tiny(9, 4, 3, 2, 3));
    plan.train.epochs = 5;
    plan.train.batch_size = 32;
    let env = SweepEnv {
        data_root: dir.path().to_path_buf(),
        results_root: Some(dir.path().join("results")),
        jobs: 2,
        command: std::env::args().collect(),
    };
    let result = bench::sweep(&plan, Axis::Fraction, &env)?;
    let (_, text) = bench::report(&result);
    print!("{text}");

    // the same table, rebuilt from the files on disk
    for r in bench::collect_results(&dir.path().join("results"))? {
        println!("{} cells with {} runs on disk", r.cells.len(), r.report_count());
    }
    Ok(())
}
