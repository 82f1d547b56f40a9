//! Assembles the hybrid network and its single-stage baselines.

use std::collections::HashMap;

use super::config::{AfNetConfig, AttentionSpec, BlockTopology, ConvSpec, Endpoint, ModelKind, SkipEdge, Stage};
use super::graph::{Graph, GraphBuilder, LayerRole, LayerSpec, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A built network: its configuration and evaluation graph.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub config: AfNetConfig,
    pub graph: Graph,
}

/// Row-major N x C class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    pub rows: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl Probabilities {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    /// 1-based predicted class per row; ties go to the lowest class index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best + 1
            })
            .collect()
    }
}

/// Numerically stable row-wise softmax of an (N, C) logit buffer.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

impl Model {
    /// Per-sample input shape (S, S, B, 1).
    pub fn input_shape(&self) -> [usize; 4] {
        self.graph.inputs[0]
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.graph.layers
    }

    /// Block-branch and head convolutions (excludes attention and classifier).
    pub fn conv_layer_count(&self) -> usize {
        self.graph
            .layers
            .iter()
            .filter(|l| l.role.is_backbone_conv())
            .count()
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.param_len()
    }

    /// Wraps a gathered patch buffer as a model input tensor.
    pub fn input_tensor(&self, batch: usize, data: Vec<f64>) -> Result<Tensor> {
        let s = self.input_shape();
        let per = s.iter().product::<usize>();
        if data.len() != batch * per {
            return Err(Error::Shape(format!(
                "batch of {batch} needs {} values, got {}",
                batch * per,
                data.len()
            )));
        }
        Ok(Tensor::from_vec([batch, s[0], s[1], s[2], s[3]], data))
    }

    /// Raw class scores, shape (N, C).
    pub fn logits(&self, params: &[f64], input: &Tensor) -> Result<Vec<f64>> {
        let acts = self.graph.forward(params, std::slice::from_ref(input), false)?;
        Ok(acts.into_output().data)
    }

    /// Softmax class probabilities for a batch.
    pub fn forward(&self, params: &[f64], input: &Tensor) -> Result<Probabilities> {
        let logits = self.logits(params, input)?;
        let c = self.class_count();
        Ok(Probabilities {
            rows: input.batch(),
            classes: c,
            data: softmax_rows(&logits, c),
        })
    }
}

pub fn build_model(kind: ModelKind, config: &AfNetConfig) -> Result<Model> {
    config.validate()?;
    let mut b = Builder::new(config, kind)?;
    let s = config.patch_size;
    let bands = config.components;
    let x = b.g.input([s, s, bands, 1], "patch");
    let fusion = match kind {
        ModelKind::Afnet => {
            let outs3 = b.stage(Stage::Volumetric, x)?;
            let last = *outs3.last().ok_or_else(|| no_blocks("3d"))?;
            let bridged = b.bridge(last)?;
            let outs2 = b.stage(Stage::Planar, bridged)?;
            if outs2.is_empty() {
                return Err(no_blocks("2d"));
            }
            b.g.concat(&outs2, "fusion")?
        }
        ModelKind::Inception3d => {
            let outs3 = b.stage(Stage::Volumetric, x)?;
            if outs3.is_empty() {
                return Err(no_blocks("3d"));
            }
            let fused = b.g.concat(&outs3, "fusion")?;
            b.fold(fused)?
        }
        ModelKind::Inception2d => {
            let planar = b.g.reshape(x, [s, s, 1, bands], "as_image")?;
            let outs2 = b.stage(Stage::Planar, planar)?;
            if outs2.is_empty() {
                return Err(no_blocks("2d"));
            }
            b.g.concat(&outs2, "fusion")?
        }
    };
    let head = b.g.conv(fusion, "head", LayerRole::Head, [1, 1, 1], config.head_filters, true);
    let hs = b.g.shape(head);
    let flat = b.g.reshape(head, [1, 1, 1, hs.iter().product()], "flatten")?;
    let logits = b.g.conv(
        flat,
        "classifier",
        LayerRole::Classifier,
        [1, 1, 1],
        config.class_count,
        false,
    );
    Ok(Model {
        kind,
        config: config.clone(),
        graph: b.g.finish(logits),
    })
}

pub fn build_afnet(config: &AfNetConfig) -> Result<Model> {
    build_model(ModelKind::Afnet, config)
}

pub fn build_baseline_3d(config: &AfNetConfig) -> Result<Model> {
    build_model(ModelKind::Inception3d, config)
}

pub fn build_baseline_2d(config: &AfNetConfig) -> Result<Model> {
    build_model(ModelKind::Inception2d, config)
}

fn no_blocks(stage: &str) -> Error {
    Error::InvalidArgument(format!("model needs at least one {stage} block"))
}

fn stage_active(kind: ModelKind, stage: Stage) -> bool {
    match kind {
        ModelKind::Afnet => true,
        ModelKind::Inception3d => stage == Stage::Volumetric,
        ModelKind::Inception2d => stage == Stage::Planar,
    }
}

/// Edges that apply to `kind`, after checking that every endpoint exists and
/// that each edge points forward.
pub(crate) fn active_edges(config: &AfNetConfig, kind: ModelKind) -> Result<Vec<SkipEdge>> {
    let branches = |e: &Endpoint| -> Option<usize> {
        match e.stage {
            Stage::Volumetric => config.blocks_3d.get(e.block).map(|b| b.branches.len()),
            Stage::Planar => config.blocks_2d.get(e.block).map(|b| b.branches.len()),
        }
    };
    let mut out = Vec::new();
    for e in &config.wiring {
        let err = |reason: &str| Error::Wiring {
            edge: e.to_string(),
            reason: reason.to_string(),
        };
        for end in [&e.from, &e.to] {
            let n = branches(end).ok_or_else(|| err("block does not exist"))?;
            if end.branch.is_some_and(|b| b >= n) {
                return Err(err("branch does not exist"));
            }
        }
        let forward = match (e.from.stage, e.to.stage) {
            (Stage::Volumetric, Stage::Planar) => true,
            (Stage::Planar, Stage::Volumetric) => false,
            _ => e.from.block < e.to.block,
        };
        if !forward {
            return Err(err("edge must point to a later block"));
        }
        let trunk_dup = e.from.stage == e.to.stage
            && e.from.branch.is_none()
            && e.to.branch.is_none()
            && e.from.block + 1 == e.to.block;
        let bridge_dup = e.from.stage == Stage::Volumetric
            && e.to.stage == Stage::Planar
            && e.from.branch.is_none()
            && e.to.branch.is_none()
            && e.to.block == 0
            && e.from.block + 1 == config.blocks_3d.len();
        if trunk_dup || bridge_dup {
            return Err(err("duplicates the trunk connection"));
        }
        if stage_active(kind, e.from.stage) && stage_active(kind, e.to.stage) {
            out.push(*e);
        }
    }
    Ok(out)
}

/// Attention gate construction, with pooled trunk descriptors shared
/// between gates that condition on the same trunk.
#[derive(Default)]
pub(crate) struct Gates {
    pooled: HashMap<NodeId, NodeId>,
    count: usize,
}

impl Gates {
    fn pooled(&mut self, g: &mut GraphBuilder, x: NodeId) -> NodeId {
        *self.pooled.entry(x).or_insert_with(|| g.global_avg_pool(x))
    }

    /// Gates `skip` conditioned on `trunk`.
    pub(crate) fn gate(
        &mut self,
        g: &mut GraphBuilder,
        trunk: NodeId,
        skip: NodeId,
        att: AttentionSpec,
        stage: Stage,
    ) -> Result<NodeId> {
        self.count += 1;
        let tag = format!("att{}", self.count);
        let mut out = skip;
        if att.kind.has_channel() {
            let pt = self.pooled(g, trunk);
            let ps = self.pooled(g, skip);
            let ctx = g.concat(&[pt, ps], &format!("{tag}.context"))?;
            let width = g.shape(ctx)[3];
            let cs = g.shape(skip)[3];
            let squeeze = g.conv(
                ctx,
                format!("{tag}.squeeze"),
                LayerRole::AttentionSqueeze,
                [1, 1, 1],
                att.bottleneck(width),
                true,
            );
            let excite = g.conv(
                squeeze,
                format!("{tag}.excite"),
                LayerRole::AttentionExcite,
                [1, 1, 1],
                cs,
                false,
            );
            let gate = g.sigmoid(excite);
            out = g.gate_mul(out, gate)?;
        }
        if att.kind.has_spatial() {
            let k = att.spatial_kernel;
            let kz = if stage == Stage::Volumetric { k } else { 1 };
            let mm = g.mean_max(out);
            let s = g.conv(mm, format!("{tag}.spatial"), LayerRole::SpatialGate, [k, k, kz], 1, false);
            let gate = g.sigmoid(s);
            out = g.gate_mul(out, gate)?;
        }
        Ok(out)
    }
}

struct Builder<'a> {
    g: GraphBuilder,
    cfg: &'a AfNetConfig,
    edges: Vec<SkipEdge>,
    outputs: HashMap<Endpoint, NodeId>,
    bridged: HashMap<NodeId, NodeId>,
    gates: Gates,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a AfNetConfig, kind: ModelKind) -> Result<Self> {
        Ok(Self {
            g: GraphBuilder::new(),
            cfg,
            edges: active_edges(cfg, kind)?,
            outputs: HashMap::new(),
            bridged: HashMap::new(),
            gates: Gates::default(),
        })
    }

    /// Folds the depth axis into channels: (X, Y, Z, C) -> (X, Y, 1, Z * C).
    fn fold(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.g.shape(x);
        self.g.reshape(x, [s[0], s[1], 1, s[2] * s[3]], "fold")
    }

    /// Volumetric-to-planar bridge: fold, then planar max-pool.
    fn bridge(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(&b) = self.bridged.get(&x) {
            return Ok(b);
        }
        let folded = self.fold(x)?;
        let pooled = self.g.max_pool(folded, self.cfg.bridge_pool);
        self.bridged.insert(x, pooled);
        Ok(pooled)
    }

    /// Concatenates `trunk` with the gated sources of every edge into `target`.
    fn fuse(&mut self, trunk: NodeId, target: Endpoint, att: AttentionSpec) -> Result<NodeId> {
        let incoming: Vec<SkipEdge> = self.edges.iter().filter(|e| e.to == target).copied().collect();
        if incoming.is_empty() {
            return Ok(trunk);
        }
        let mut parts = vec![trunk];
        for e in incoming {
            let err = |reason: String| Error::Wiring {
                edge: e.to_string(),
                reason,
            };
            let mut src = *self
                .outputs
                .get(&e.from)
                .ok_or_else(|| err("source is not computed before the target".into()))?;
            if e.from.stage == Stage::Volumetric && target.stage == Stage::Planar {
                src = self.bridge(src)?;
            }
            let (ts, ss) = (self.g.shape(trunk), self.g.shape(src));
            if ts[..3] != ss[..3] {
                return Err(err(format!(
                    "spatial extents differ: trunk {:?}, skip {:?}",
                    &ts[..3],
                    &ss[..3]
                )));
            }
            if src == trunk {
                return Err(err("source is the trunk itself".into()));
            }
            parts.push(self.gates.gate(&mut self.g, trunk, src, att, target.stage)?);
        }
        self.g.concat(&parts, &format!("fuse({target})"))
    }

    fn stage(&mut self, stage: Stage, input: NodeId) -> Result<Vec<NodeId>> {
        let (specs, role): (Vec<(Vec<[usize; 3]>, Vec<usize>, AttentionSpec)>, LayerRole) = match stage {
            Stage::Volumetric => (
                self.cfg
                    .blocks_3d
                    .iter()
                    .map(|b| {
                        (
                            b.branches.iter().map(|c| c.kernel3()).collect(),
                            b.branches.iter().map(|c| c.filters()).collect(),
                            b.attention,
                        )
                    })
                    .collect(),
                LayerRole::Conv3d,
            ),
            Stage::Planar => (
                self.cfg
                    .blocks_2d
                    .iter()
                    .map(|b| {
                        (
                            b.branches.iter().map(|c| c.kernel3()).collect(),
                            b.branches.iter().map(|c| c.filters()).collect(),
                            b.attention,
                        )
                    })
                    .collect(),
                LayerRole::Conv2d,
            ),
        };
        let prefix = match stage {
            Stage::Volumetric => "conv3d",
            Stage::Planar => "conv2d",
        };
        let mut outs = Vec::new();
        let mut trunk = input;
        for (k, (kernels, filters, att)) in specs.into_iter().enumerate() {
            let block_in = self.fuse(trunk, Endpoint::block(stage, k), att)?;
            let mut branch_outs = Vec::new();
            for (b, (kernel, f)) in kernels.into_iter().zip(filters).enumerate() {
                let base = match self.cfg.block_topology {
                    BlockTopology::Parallel => block_in,
                    BlockTopology::Sequential => branch_outs.last().copied().unwrap_or(block_in),
                };
                let x = self.fuse(base, Endpoint::branch(stage, k, b), att)?;
                let y = self.g.conv(x, format!("{prefix}.b{}.{}", k + 1, b + 1), role, kernel, f, true);
                self.outputs.insert(Endpoint::branch(stage, k, b), y);
                branch_outs.push(y);
            }
            let out = self.g.concat(&branch_outs, &format!("{prefix}.b{}", k + 1))?;
            self.outputs.insert(Endpoint::block(stage, k), out);
            outs.push(out);
            trunk = out;
        }
        Ok(outs)
    }
}
