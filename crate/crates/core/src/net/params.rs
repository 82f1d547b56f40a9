//! Parameter initialization, closed-form counting and checkpoint files.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::builder::{active_edges, Model};
use super::config::{AfNetConfig, AttentionSpec, BlockTopology, ConvSpec, Endpoint, ModelKind, Stage};
use crate::error::{Error, Result};
use crate::seed;

/// Flat parameter vector in layer declaration order, plus its init seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub seed: u64,
    pub values: Vec<f64>,
}

impl ModelParameters {
    /// Fan-in scaled uniform weights in (-sqrt(6/fan_in), sqrt(6/fan_in)),
    /// zero biases.
    pub fn init(model: &Model, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::stream::INIT));
        let mut values = vec![0.0; model.parameter_count()];
        for layer in model.layers() {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            for w in &mut values[layer.weight_range()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Self { seed, values }
    }

    pub fn zeros(model: &Model) -> Self {
        Self {
            seed: 0,
            values: vec![0.0; model.parameter_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Writes `values` as consecutive little-endian f64.
pub fn save_blob(values: &[f64], path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::SizeMismatch {
            expected: expected * 8,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Checkpoint manifest stored next to the parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub config: AfNetConfig,
    pub seed: u64,
    pub epoch: usize,
    pub parameter_count: usize,
    /// File name of the parameter blob, relative to the manifest.
    pub params_file: String,
    #[serde(default)]
    pub metrics: HashMap<String, f64>,
}

impl Checkpoint {
    pub const FILE: &'static str = "checkpoint.json";
    pub const PARAMS_FILE: &'static str = "params.bin";

    /// Writes `checkpoint.json` and `params.bin` into `dir`.
    pub fn save(
        dir: &Path,
        model: &Model,
        params: &ModelParameters,
        epoch: usize,
        metrics: HashMap<String, f64>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ck = Self {
            model: model.kind,
            config: model.config.clone(),
            seed: params.seed,
            epoch,
            parameter_count: params.len(),
            params_file: Self::PARAMS_FILE.into(),
            metrics,
        };
        save_blob(&params.values, &dir.join(Self::PARAMS_FILE))?;
        let path = dir.join(Self::FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&ck)?).map_err(|e| Error::io(&path, e))?;
        Ok(ck)
    }

    /// Loads a checkpoint from its directory or its manifest path and
    /// rebuilds the model.
    pub fn load(path: &Path) -> Result<(Self, Model, ModelParameters)> {
        let manifest = if path.is_dir() { path.join(Self::FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        let model = super::builder::build_model(ck.model, &ck.config)?;
        if model.parameter_count() != ck.parameter_count {
            return Err(Error::SizeMismatch {
                expected: model.parameter_count(),
                found: ck.parameter_count,
            });
        }
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let values = load_blob(&dir.join(&ck.params_file), ck.parameter_count)?;
        let params = ModelParameters { seed: ck.seed, values };
        Ok((ck, model, params))
    }
}

fn conv_params(kernel: [usize; 3], in_ch: usize, filters: usize) -> usize {
    filters * kernel.iter().product::<usize>() * in_ch + filters
}

fn gate_params(att: &AttentionSpec, trunk: usize, skip: usize, stage: Stage) -> usize {
    let mut n = 0;
    if att.kind.has_channel() {
        let h = att.bottleneck(trunk + skip);
        n += conv_params([1, 1, 1], trunk + skip, h) + conv_params([1, 1, 1], h, skip);
    }
    if att.kind.has_spatial() {
        let k = att.spatial_kernel;
        let kz = if stage == Stage::Volumetric { k } else { 1 };
        n += conv_params([k, k, kz], 2, 1);
    }
    n
}

struct StageShape {
    stage: Stage,
    kernels: Vec<Vec<[usize; 3]>>,
    filters: Vec<Vec<usize>>,
    attention: Vec<AttentionSpec>,
}

fn stage_shape<C: ConvSpec>(stage: Stage, blocks: &[super::config::BlockSpec<C>]) -> StageShape {
    StageShape {
        stage,
        kernels: blocks.iter().map(|b| b.branches.iter().map(|c| c.kernel3()).collect()).collect(),
        filters: blocks.iter().map(|b| b.branches.iter().map(|c| c.filters()).collect()).collect(),
        attention: blocks.iter().map(|b| b.attention).collect(),
    }
}

/// Trainable parameter count from the configuration alone: the sum over
/// every convolution, attention and classifier layer of
/// `filters * prod(kernel) * in_channels + filters`.
pub fn count_parameters(config: &AfNetConfig, kind: ModelKind) -> Result<usize> {
    config.validate()?;
    let edges = active_edges(config, kind)?;
    let b = config.components;
    let s = config.patch_size;
    // channel width of every computed endpoint, as seen by a planar consumer
    // when the source is volumetric (depth folded into channels)
    let mut width: HashMap<Endpoint, usize> = HashMap::new();
    let mut total = 0;

    let run = |sh: StageShape, input_ch: usize, width: &mut HashMap<Endpoint, usize>| -> usize {
        let mut trunk = input_ch;
        let mut sum = 0;
        let fuse = |target: Endpoint, trunk: usize, att: &AttentionSpec, width: &HashMap<Endpoint, usize>| {
            let mut ch = trunk;
            let mut p = 0;
            for e in edges.iter().filter(|e| e.to == target) {
                let mut src = width[&e.from];
                if e.from.stage == Stage::Volumetric && target.stage == Stage::Planar {
                    src *= b;
                }
                p += gate_params(att, trunk, src, target.stage);
                ch += src;
            }
            (ch, p)
        };
        for k in 0..sh.kernels.len() {
            let att = &sh.attention[k];
            let (block_in, p) = fuse(Endpoint::block(sh.stage, k), trunk, att, width);
            sum += p;
            let mut prev = None;
            for (j, (&kernel, &f)) in sh.kernels[k].iter().zip(&sh.filters[k]).enumerate() {
                let base = match (config.block_topology, prev) {
                    (BlockTopology::Sequential, Some(c)) => c,
                    _ => block_in,
                };
                let (x, p) = fuse(Endpoint::branch(sh.stage, k, j), base, att, width);
                sum += p + conv_params(kernel, x, f);
                width.insert(Endpoint::branch(sh.stage, k, j), f);
                prev = Some(f);
            }
            trunk = sh.filters[k].iter().sum();
            width.insert(Endpoint::block(sh.stage, k), trunk);
        }
        sum
    };

    let fused = match kind {
        ModelKind::Afnet => {
            total += run(stage_shape(Stage::Volumetric, &config.blocks_3d), 1, &mut width);
            let last = config.blocks_3d.last().map_or(0, |x| x.out_channels());
            total += run(stage_shape(Stage::Planar, &config.blocks_2d), b * last, &mut width);
            config.blocks_2d.iter().map(|x| x.out_channels()).sum::<usize>()
        }
        ModelKind::Inception3d => {
            total += run(stage_shape(Stage::Volumetric, &config.blocks_3d), 1, &mut width);
            b * config.blocks_3d.iter().map(|x| x.out_channels()).sum::<usize>()
        }
        ModelKind::Inception2d => {
            total += run(stage_shape(Stage::Planar, &config.blocks_2d), b, &mut width);
            config.blocks_2d.iter().map(|x| x.out_channels()).sum::<usize>()
        }
    };
    total += conv_params([1, 1, 1], fused, config.head_filters);
    total += conv_params([1, 1, 1], s * s * config.head_filters, config.class_count);
    Ok(total)
}
