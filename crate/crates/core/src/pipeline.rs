//! End-to-end runs: load a scene, reduce, extract patches, split, train,
//! evaluate and write the run artifacts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hsio::{self, datasets, ClassLegend, GroundTruthMap, HyperspectralCube};
use crate::metrics::{self, EvaluationReport, Timings};
use crate::net::{build_model, AfNetConfig, AttentionKind, Checkpoint, Model, ModelKind, ModelParameters};
use crate::prep::{extract_patches, pca_reduce, stratified_split, BorderMode, Fractions, PatchSet, SplitAssignment};
use crate::seed;
use crate::trainer::{self, Adam, TrainConfig, TrainState, TrainingHistory};

/// Patches per forward pass when predicting.
pub const PREDICT_CHUNK: usize = 64;

/// A cube with its ground truth and legend.
#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub cube: HyperspectralCube,
    pub gt: GroundTruthMap,
    pub legend: ClassLegend,
    /// Files the scene was read from.
    pub sources: Vec<PathBuf>,
}

impl Scene {
    /// Reads `<root>/<key>.hsij` and `<root>/<key>_gt.hsij`.
    pub fn load(root: &Path, name: &str) -> Result<Self> {
        let (cube_path, gt_path) = datasets::container_paths(root, name);
        let cube = hsio::load_cube(&cube_path)?;
        let gt = hsio::load_ground_truth(&gt_path)?;
        hsio::validate_pair(&cube, &gt)?;
        let legend = hsio::load_legend(&gt_path)?.unwrap_or_else(|| ClassLegend::generated(gt.class_count));
        let sources = vec![
            cube_path.clone(),
            hsio::payload_path(&cube_path),
            gt_path.clone(),
            hsio::payload_path(&gt_path),
        ];
        Ok(Self {
            name: name.to_string(),
            cube,
            gt,
            legend,
            sources,
        })
    }

    pub fn from_parts(name: &str, cube: HyperspectralCube, gt: GroundTruthMap) -> Result<Self> {
        hsio::validate_pair(&cube, &gt)?;
        let legend = ClassLegend::generated(gt.class_count);
        Ok(Self {
            name: name.to_string(),
            cube,
            gt,
            legend,
            sources: Vec::new(),
        })
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub model: ModelKind,
    pub patch_size: usize,
    pub components: usize,
    pub fractions: Fractions,
    pub border_mode: BorderMode,
    pub attention: AttentionKind,
    /// Network layout; `None` uses the default schedule for the data.
    #[serde(default)]
    pub network: Option<AfNetConfig>,
    pub train: TrainConfig,
    /// Nearest-neighbour enlargement of rendered maps.
    #[serde(default = "default_map_scale")]
    pub map_scale: u32,
}

fn default_map_scale() -> u32 {
    4
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: datasets::INDIAN_PINES.key.to_string(),
            model: ModelKind::Afnet,
            patch_size: 9,
            components: 15,
            fractions: Fractions::default(),
            border_mode: BorderMode::default(),
            attention: AttentionKind::default(),
            network: None,
            train: TrainConfig::default(),
            map_scale: default_map_scale(),
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// The network for `class_count` classes, with patch size, components
    /// and attention kind applied.
    pub fn network_config(&self, class_count: usize) -> AfNetConfig {
        let mut cfg = self
            .network
            .clone()
            .unwrap_or_else(|| AfNetConfig::standard(self.patch_size, self.components, class_count));
        cfg.patch_size = self.patch_size;
        cfg.components = self.components;
        cfg.class_count = class_count;
        cfg.set_attention(self.attention);
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.fractions.validate()?;
        self.train.validate()?;
        if self.components == 0 {
            return Err(Error::InvalidArgument("components must be positive".into()));
        }
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("patch size must be odd, got {}", self.patch_size)));
        }
        Ok(())
    }
}

/// Reduced patches and the split for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub patches: PatchSet,
    pub split: SplitAssignment,
}

pub fn prepare(scene: &Scene, cfg: &RunConfig) -> Result<Prepared> {
    let reduced = pca_reduce(&scene.cube, cfg.components)?;
    let patches = extract_patches(reduced, &scene.gt, cfg.patch_size, cfg.border_mode)?;
    let split = stratified_split(&patches, cfg.fractions, seed::derive(cfg.seed(), seed::stream::SPLIT))?;
    Ok(Prepared { patches, split })
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub params: ModelParameters,
    pub history: TrainingHistory,
    pub report: EvaluationReport,
}

/// Predicts the test split (timed) and the remaining patches, and
/// evaluates the test part. Returns the report and a label per patch.
pub fn evaluate_split(
    model: &Model,
    params: &[f64],
    prepared: &Prepared,
    train_seconds: f64,
) -> Result<(EvaluationReport, Vec<usize>)> {
    let patches = &prepared.patches;
    let test = prepared.split.test_idx();
    let start = Instant::now();
    let test_pred = trainer::predict_indices(model, params, patches, &test, PREDICT_CHUNK)?;
    let te = start.elapsed().as_secs_f64();
    let truth: Vec<usize> = test.iter().map(|&i| patches.labels[i]).collect();
    let report = metrics::evaluate(
        &test_pred.labels,
        &truth,
        model.class_count(),
        Timings {
            train_seconds,
            test_seconds: te,
        },
    )?;
    let mut all = vec![0; patches.len()];
    for (&i, &l) in test.iter().zip(&test_pred.labels) {
        all[i] = l;
    }
    let rest: Vec<usize> = (0..patches.len()).filter(|&i| all[i] == 0).collect();
    let rest_pred = trainer::predict_indices(model, params, patches, &rest, PREDICT_CHUNK)?;
    for (&i, &l) in rest.iter().zip(&rest_pred.labels) {
        all[i] = l;
    }
    Ok((report, all))
}

/// Writes the predicted and ground-truth maps as `map.png` and `gt.png`.
pub fn write_maps(dir: &Path, scene: &Scene, patches: &PatchSet, labels: &[usize], scale: u32) -> Result<()> {
    let img = metrics::render_map(labels, &patches.centers, &scene.legend, &scene.gt)?;
    metrics::save_png(&img, &dir.join("map.png"), scale)?;
    let gt = metrics::render_ground_truth(&scene.gt, &scene.legend)?;
    metrics::save_png(&gt, &dir.join("gt.png"), scale)
}

/// Artifact file names inside a run directory.
pub mod files {
    pub const HISTORY: &str = "history.json";
    pub const SPLIT: &str = "split.json";
    pub const REPORT: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const OPTIMIZER: &str = "optimizer.bin";
    pub const CONFIG: &str = "run_config.json";
    pub const MANIFEST: &str = "manifest.json";
}

fn metric_snapshot(report: &EvaluationReport) -> HashMap<String, f64> {
    HashMap::from([
        ("oa".to_string(), report.oa),
        ("aa".to_string(), report.aa),
        ("kappa".to_string(), report.kappa),
    ])
}

/// Trains and evaluates one configuration. With `out` every artifact is
/// written there; with `resume` training continues from the checkpoint,
/// optimizer state and history found in that directory.
pub fn run(scene: &Scene, cfg: &RunConfig, out: Option<&Path>, resume: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let prepared = prepare(scene, cfg)?;
    let model = build_model(cfg.model, &cfg.network_config(scene.gt.class_count))?;
    info!(
        "{} on {}: {} patches, {} train / {} val / {} test, {} parameters",
        cfg.model,
        scene.name,
        prepared.patches.len(),
        prepared.split.train_idx().len(),
        prepared.split.val_idx().len(),
        prepared.split.test_idx().len(),
        model.parameter_count()
    );
    let state = match resume {
        Some(dir) => {
            let (ck, m, params) = Checkpoint::load(dir)?;
            if m.graph.layers != model.graph.layers {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint in {} does not match the requested model",
                    dir.display()
                )));
            }
            let opt = Adam::load(&dir.join(files::OPTIMIZER), params.len())?;
            let history = TrainingHistory::load(&dir.join(files::HISTORY))?;
            if history.epochs() != ck.epoch {
                return Err(Error::InvalidArgument("history and checkpoint disagree on the epoch".into()));
            }
            TrainState::resume(params, opt, history)?
        }
        None => TrainState::new(ModelParameters::init(&model, cfg.seed()), cfg.train.adam),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        prepared.split.save(&dir.join(files::SPLIT))?;
        let path = dir.join(files::CONFIG);
        std::fs::write(&path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&path, e))?;
    }
    let state = trainer::train_from(&model, state, &prepared.patches, &prepared.split, &cfg.train, |s| {
        if let Some(dir) = out {
            Checkpoint::save(dir, &model, &s.params, s.history.epochs(), HashMap::new())?;
            s.optimizer.save(&dir.join(files::OPTIMIZER))?;
            s.history.save(&dir.join(files::HISTORY))?;
        }
        Ok(())
    })?;
    let params = state.selected(cfg.train.keep_best);
    let (report, labels) = evaluate_split(&model, &params.values, &prepared, state.history.train_seconds)?;
    let mut history = state.history.clone();
    history.test_seconds = report.te_seconds;
    if let Some(dir) = out {
        Checkpoint::save(dir, &model, &params, history.epochs(), metric_snapshot(&report))?;
        history.save(&dir.join(files::HISTORY))?;
        report.save(&dir.join(files::REPORT))?;
        let path = dir.join(files::REPORT_TEXT);
        std::fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
        write_maps(dir, scene, &prepared.patches, &labels, cfg.map_scale)?;
    }
    Ok(RunOutcome {
        model,
        params,
        history,
        report,
    })
}

/// Re-evaluates a saved run directory against its recorded split.
pub fn evaluate_checkpoint(scene: &Scene, run_dir: &Path, split_path: Option<&Path>) -> Result<(EvaluationReport, Vec<usize>, Prepared)> {
    let cfg = RunConfig::load(&run_dir.join(files::CONFIG))?;
    let (_, model, params) = Checkpoint::load(run_dir)?;
    let reduced = pca_reduce(&scene.cube, cfg.components)?;
    let patches = extract_patches(reduced, &scene.gt, cfg.patch_size, cfg.border_mode)?;
    let split = SplitAssignment::load(split_path.unwrap_or(&run_dir.join(files::SPLIT)))?;
    split.check_against(&patches)?;
    let prepared = Prepared { patches, split };
    let train_seconds = TrainingHistory::load(&run_dir.join(files::HISTORY)).map_or(0.0, |h| h.train_seconds);
    let (report, labels) = evaluate_split(&model, &params.values, &prepared, train_seconds)?;
    Ok((report, labels, prepared))
}

/// Provenance record written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: HashMap<String, u64>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: HashMap<String, String>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &impl Serialize, root_seed: u64, inputs: &[PathBuf]) -> Result<Self> {
        let mut hashes = HashMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), sha256_file(p)?);
        }
        let seeds = HashMap::from([
            ("root".to_string(), root_seed),
            ("split".to_string(), seed::derive(root_seed, seed::stream::SPLIT)),
            ("init".to_string(), seed::derive(root_seed, seed::stream::INIT)),
            ("shuffle".to_string(), seed::derive(root_seed, seed::stream::SHUFFLE)),
        ]);
        let now = unix_now();
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            seeds,
            inputs: hashes,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now,
            finished_unix: now,
        })
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let path = dir.join(files::MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
