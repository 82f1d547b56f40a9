use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A volumetric convolution: kernel (rows, cols, spectral) and filter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec3D {
    pub kernel: [usize; 3],
    pub filters: usize,
}

/// A planar convolution: kernel (rows, cols) and filter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec2D {
    pub kernel: [usize; 2],
    pub filters: usize,
}

pub trait ConvSpec {
    /// Kernel extent in (rows, cols, depth) form; planar kernels have depth 1.
    fn kernel3(&self) -> [usize; 3];
    fn filters(&self) -> usize;
}

impl ConvSpec for ConvSpec3D {
    fn kernel3(&self) -> [usize; 3] {
        self.kernel
    }
    fn filters(&self) -> usize {
        self.filters
    }
}

impl ConvSpec for ConvSpec2D {
    fn kernel3(&self) -> [usize; 3] {
        [self.kernel[0], self.kernel[1], 1]
    }
    fn filters(&self) -> usize {
        self.filters
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Plain dense concatenation without gating.
    None,
    /// Squeeze-excitation over pooled trunk and skip descriptors.
    #[default]
    Channel,
    /// One convolution over per-position channel mean and max.
    Spatial,
    /// Channel gate followed by spatial gate.
    Both,
}

impl AttentionKind {
    pub fn has_channel(self) -> bool {
        matches!(self, Self::Channel | Self::Both)
    }

    pub fn has_spatial(self) -> bool {
        matches!(self, Self::Spatial | Self::Both)
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "channel" => Ok(Self::Channel),
            "spatial" => Ok(Self::Spatial),
            "both" | "channel+spatial" => Ok(Self::Both),
            other => Err(Error::InvalidArgument(format!("unknown attention kind {other:?}"))),
        }
    }
}

/// How a skip connection is gated before it joins the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub kind: AttentionKind,
    /// Channel squeeze ratio; the bottleneck has max(1, channels / ratio) units.
    pub reduction_ratio: usize,
    /// Side length of the spatial gate kernel.
    pub spatial_kernel: usize,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        Self {
            kind: AttentionKind::Channel,
            reduction_ratio: 4,
            spatial_kernel: 3,
        }
    }
}

impl AttentionSpec {
    pub fn bottleneck(&self, channels: usize) -> usize {
        (channels / self.reduction_ratio.max(1)).max(1)
    }
}

/// A multi-scale block: parallel (or stacked) convolutions of several sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec<C> {
    pub branches: Vec<C>,
    pub attention: AttentionSpec,
}

impl<C: ConvSpec> BlockSpec<C> {
    /// Channels of the block output (all branch outputs concatenated).
    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.filters()).sum()
    }

    /// Index of the branch that carries cross-block "middle" links.
    pub fn middle(&self) -> usize {
        self.branches.len() / 2
    }
}

pub type BlockSpec3D = BlockSpec<ConvSpec3D>;
pub type BlockSpec2D = BlockSpec<ConvSpec2D>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockTopology {
    /// Branches read the block input side by side; outputs concatenate.
    #[default]
    Parallel,
    /// Branches are stacked; each reads the previous one; all outputs
    /// concatenate.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "3d")]
    Volumetric,
    #[serde(rename = "2d")]
    Planar,
}

/// A block output (`branch: None`) or a single branch output/input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub stage: Stage,
    pub block: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<usize>,
}

impl Endpoint {
    pub fn block(stage: Stage, block: usize) -> Self {
        Self {
            stage,
            block,
            branch: None,
        }
    }

    pub fn branch(stage: Stage, block: usize, branch: usize) -> Self {
        Self {
            stage,
            block,
            branch: Some(branch),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.stage {
            Stage::Volumetric => "3d",
            Stage::Planar => "2d",
        };
        match self.branch {
            Some(b) => write!(f, "{s}:block{}.branch{}", self.block + 1, b + 1),
            None => write!(f, "{s}:block{}", self.block + 1),
        }
    }
}

/// A gated skip connection from an earlier output into a later input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEdge {
    pub from: Endpoint,
    pub to: Endpoint,
}

impl fmt::Display for SkipEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Afnet,
    Inception2d,
    Inception3d,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Afnet => "afnet",
            ModelKind::Inception2d => "inception2d",
            ModelKind::Inception3d => "inception3d",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "afnet" | "hybrid" => Ok(Self::Afnet),
            "inception2d" | "2d" => Ok(Self::Inception2d),
            "inception3d" | "3d" => Ok(Self::Inception3d),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Complete description of a network instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfNetConfig {
    pub patch_size: usize,
    pub components: usize,
    pub class_count: usize,
    pub blocks_3d: Vec<BlockSpec3D>,
    /// Window of the max-pool applied when volumetric maps are folded into
    /// planar ones.
    pub bridge_pool: usize,
    pub blocks_2d: Vec<BlockSpec2D>,
    pub head_filters: usize,
    #[serde(default)]
    pub block_topology: BlockTopology,
    pub wiring: Vec<SkipEdge>,
}

impl Default for AfNetConfig {
    fn default() -> Self {
        Self::standard(9, 15, 16)
    }
}

fn block3(filters: [usize; 3], attention: AttentionSpec) -> BlockSpec3D {
    let kernels = [[7, 7, 9], [5, 5, 7], [3, 3, 5]];
    BlockSpec {
        branches: kernels
            .iter()
            .zip(filters)
            .map(|(&kernel, filters)| ConvSpec3D { kernel, filters })
            .collect(),
        attention,
    }
}

fn block2(attention: AttentionSpec) -> BlockSpec2D {
    let kernels = [[3, 3], [3, 3], [1, 1]];
    BlockSpec {
        branches: kernels
            .iter()
            .zip([16, 32, 64])
            .map(|(&kernel, filters)| ConvSpec2D { kernel, filters })
            .collect(),
        attention,
    }
}

impl AfNetConfig {
    /// The standard schedule: three volumetric blocks with kernels
    /// 7x7x9 / 5x5x7 / 3x3x5 and filters (30,20,10), (40,20,10), (60,30,10);
    /// three planar blocks with kernels 3x3 / 3x3 / 1x1 and filters
    /// (16,32,64); a 3x3 bridge pool and a 128-filter 1x1 head.
    pub fn standard(patch_size: usize, components: usize, class_count: usize) -> Self {
        let att = AttentionSpec::default();
        let mut cfg = Self {
            patch_size,
            components,
            class_count,
            blocks_3d: vec![
                block3([30, 20, 10], att),
                block3([40, 20, 10], att),
                block3([60, 30, 10], att),
            ],
            bridge_pool: 3,
            blocks_2d: vec![block2(att), block2(att), block2(att)],
            head_filters: 128,
            block_topology: BlockTopology::Parallel,
            wiring: Vec::new(),
        };
        cfg.wiring = cfg.default_wiring();
        cfg
    }

    /// A small network with the same wiring pattern, for tests and demos.
    pub fn tiny(
        patch_size: usize,
        components: usize,
        class_count: usize,
        branches: usize,
        filters: usize,
    ) -> Self {
        let att = AttentionSpec {
            reduction_ratio: 2,
            ..AttentionSpec::default()
        };
        let k3 = [[3, 3, 3], [1, 1, 1], [3, 3, 1]];
        let k2 = [[3, 3], [1, 1], [3, 3]];
        let b3 = BlockSpec {
            branches: (0..branches)
                .map(|i| ConvSpec3D {
                    kernel: k3[i % 3],
                    filters,
                })
                .collect(),
            attention: att,
        };
        let b2 = BlockSpec {
            branches: (0..branches)
                .map(|i| ConvSpec2D {
                    kernel: k2[i % 3],
                    filters,
                })
                .collect(),
            attention: att,
        };
        let mut cfg = Self {
            patch_size,
            components,
            class_count,
            blocks_3d: vec![b3.clone(), b3.clone(), b3],
            bridge_pool: 3,
            blocks_2d: vec![b2.clone(), b2.clone(), b2],
            head_filters: filters,
            block_topology: BlockTopology::Parallel,
            wiring: Vec::new(),
        };
        cfg.wiring = cfg.default_wiring();
        cfg
    }

    /// Dense cross-block wiring:
    /// * every block receives the outputs of all earlier blocks of its
    ///   stage (the immediately preceding one is the trunk, the rest are
    ///   gated skips);
    /// * the middle branch of each block feeds the middle branch of the next
    ///   block of the same stage;
    /// * volumetric block k feeds planar block k through the bridge.
    pub fn default_wiring(&self) -> Vec<SkipEdge> {
        let mut edges = Vec::new();
        let stages: [(Stage, Vec<usize>); 2] = [
            (
                Stage::Volumetric,
                self.blocks_3d.iter().map(|b| b.branches.len()).collect(),
            ),
            (
                Stage::Planar,
                self.blocks_2d.iter().map(|b| b.branches.len()).collect(),
            ),
        ];
        for (stage, branch_counts) in &stages {
            let n = branch_counts.len();
            for k in 2..n {
                for j in 0..k - 1 {
                    edges.push(SkipEdge {
                        from: Endpoint::block(*stage, j),
                        to: Endpoint::block(*stage, k),
                    });
                }
            }
            for j in 0..n.saturating_sub(1) {
                // a single-branch block's middle output is the block output
                if branch_counts[j] < 2 || branch_counts[j + 1] < 2 {
                    continue;
                }
                edges.push(SkipEdge {
                    from: Endpoint::branch(*stage, j, branch_counts[j] / 2),
                    to: Endpoint::branch(*stage, j + 1, branch_counts[j + 1] / 2),
                });
            }
        }
        let n3 = self.blocks_3d.len();
        for k in 0..n3.min(self.blocks_2d.len()) {
            if k == 0 && n3 == 1 {
                continue;
            }
            edges.push(SkipEdge {
                from: Endpoint::block(Stage::Volumetric, k),
                to: Endpoint::block(Stage::Planar, k),
            });
        }
        edges
    }

    pub fn set_attention(&mut self, kind: AttentionKind) {
        for b in &mut self.blocks_3d {
            b.attention.kind = kind;
        }
        for b in &mut self.blocks_2d {
            b.attention.kind = kind;
        }
    }

    /// Number of convolution layers in the full network (branches + head).
    pub fn conv_layer_count(&self) -> usize {
        self.blocks_3d.iter().map(|b| b.branches.len()).sum::<usize>()
            + self.blocks_2d.iter().map(|b| b.branches.len()).sum::<usize>()
            + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return bad(format!("patch size must be odd, got {}", self.patch_size));
        }
        if self.components == 0 || self.class_count == 0 || self.head_filters == 0 {
            return bad("components, class count and head filters must be positive".into());
        }
        if self.bridge_pool == 0 || self.bridge_pool.is_multiple_of(2) {
            return bad(format!("bridge pool must be odd, got {}", self.bridge_pool));
        }
        let check = |k: [usize; 3], f: usize, at: String| -> Result<()> {
            if k.iter().any(|&d| d == 0 || d % 2 == 0) || f == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{at}: kernel dims must be odd and filters positive, got {k:?} x {f}"
                )));
            }
            Ok(())
        };
        for (i, b) in self.blocks_3d.iter().enumerate() {
            if b.branches.is_empty() {
                return bad(format!("3d block {} has no branches", i + 1));
            }
            for (j, c) in b.branches.iter().enumerate() {
                check(c.kernel3(), c.filters, format!("3d block {} branch {}", i + 1, j + 1))?;
            }
        }
        for (i, b) in self.blocks_2d.iter().enumerate() {
            if b.branches.is_empty() {
                return bad(format!("2d block {} has no branches", i + 1));
            }
            for (j, c) in b.branches.iter().enumerate() {
                check(c.kernel3(), c.filters, format!("2d block {} branch {}", i + 1, j + 1))?;
            }
        }
        if self.blocks_3d.is_empty() && self.blocks_2d.is_empty() {
            return bad("network has no blocks".into());
        }
        for b in self.blocks_3d.iter().map(|b| b.attention).chain(self.blocks_2d.iter().map(|b| b.attention)) {
            if b.reduction_ratio == 0 || b.spatial_kernel % 2 == 0 {
                return bad("attention reduction ratio must be positive and spatial kernel odd".into());
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
