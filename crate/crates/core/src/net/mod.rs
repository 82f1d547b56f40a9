//! The attention-fused hybrid network, its single-stage baselines and the
//! tensor machinery underneath.
//!
//! Feature maps are channel-last `(N, X, Y, Z, C)` tensors; planar maps use
//! `Z = 1`. All arithmetic is `f64` with a fixed reduction order, so a given
//! input and parameter vector always produce bit-identical outputs.

mod attention;
mod builder;
pub mod config;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use attention::{AttentionFuse, Fused};
pub use builder::{build_afnet, build_baseline_2d, build_baseline_3d, build_model, softmax_rows, Model, Probabilities};
pub use config::{
    AfNetConfig, AttentionKind, AttentionSpec, BlockSpec, BlockSpec2D, BlockSpec3D, BlockTopology, ConvSpec,
    ConvSpec2D, ConvSpec3D, Endpoint, ModelKind, SkipEdge, Stage,
};
pub use graph::{Activations, Graph, LayerRole, LayerSpec};
pub use params::{count_parameters, load_blob, save_blob, Checkpoint, ModelParameters};
pub use tensor::Tensor;
