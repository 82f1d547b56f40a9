//! A static dataflow graph over channel-last feature maps with reverse-mode
//! differentiation.

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::tensor::{with_batch, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input(usize),
    Conv { input: NodeId, layer: usize, relu: bool },
    Concat(Vec<NodeId>),
    GlobalAvgPool(NodeId),
    Sigmoid(NodeId),
    GateMul { x: NodeId, gate: NodeId },
    MeanMax(NodeId),
    MaxPool { input: NodeId, size: usize },
    /// Reinterprets the per-sample shape; the data is untouched.
    Reshape(NodeId),
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) => vec![],
            Op::Conv { input, .. } => vec![*input],
            Op::Concat(parts) => parts.clone(),
            Op::GlobalAvgPool(x) | Op::Sigmoid(x) | Op::MeanMax(x) | Op::Reshape(x) => vec![*x],
            Op::GateMul { x, gate } => vec![*x, *gate],
            Op::MaxPool { input, .. } => vec![*input],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    /// Per-sample shape (X, Y, Z, C).
    pub shape: [usize; 4],
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Conv3d,
    Conv2d,
    Head,
    AttentionSqueeze,
    AttentionExcite,
    SpatialGate,
    Classifier,
}

impl LayerRole {
    /// Whether the layer is one of the network's convolution layers proper
    /// (block branches and the 1x1 head), as opposed to attention or
    /// classifier machinery.
    pub fn is_backbone_conv(self) -> bool {
        matches!(self, LayerRole::Conv3d | LayerRole::Conv2d | LayerRole::Head)
    }
}

/// One parameterized layer: weights (kx, ky, kz, in, out) then bias (out).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub role: LayerRole,
    pub kernel: [usize; 3],
    pub in_ch: usize,
    pub out_ch: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn fan_in(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_ch
    }

    pub fn weight_len(&self) -> usize {
        self.fan_in() * self.out_ch
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.weight_len();
        s..s + self.out_ch
    }

    pub(crate) fn geom(&self) -> ConvGeom {
        ConvGeom {
            kernel: self.kernel,
            in_ch: self.in_ch,
            out_ch: self.out_ch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub inputs: Vec<[usize; 4]>,
    pub output: NodeId,
    pub layers: Vec<LayerSpec>,
    needs_grad: Vec<bool>,
    last_use: Vec<usize>,
}

/// Values of every node from one forward pass.
#[derive(Debug)]
pub struct Activations {
    values: Vec<Option<Tensor>>,
    aux: Vec<Vec<u32>>,
    output: NodeId,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.values[self.output].as_ref().expect("output is always kept")
    }

    pub fn into_output(mut self) -> Tensor {
        self.values[self.output].take().expect("output is always kept")
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values[id].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    inputs: Vec<[usize; 4]>,
    layers: Vec<LayerSpec>,
    param_len: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, shape: [usize; 4], label: impl Into<String>) -> NodeId {
        self.nodes.push(Node {
            op,
            shape,
            label: label.into(),
        });
        self.nodes.len() - 1
    }

    pub fn shape(&self, id: NodeId) -> [usize; 4] {
        self.nodes[id].shape
    }

    pub fn input(&mut self, shape: [usize; 4], label: &str) -> NodeId {
        self.inputs.push(shape);
        self.push(Op::Input(self.inputs.len() - 1), shape, label)
    }

    pub fn conv(
        &mut self,
        input: NodeId,
        name: impl Into<String>,
        role: LayerRole,
        kernel: [usize; 3],
        out_ch: usize,
        relu: bool,
    ) -> NodeId {
        let name = name.into();
        let s = self.shape(input);
        let layer = LayerSpec {
            name: name.clone(),
            role,
            kernel,
            in_ch: s[3],
            out_ch,
            offset: self.param_len,
        };
        self.param_len += layer.param_count();
        self.layers.push(layer);
        let layer = self.layers.len() - 1;
        self.push(
            Op::Conv { input, layer, relu },
            [s[0], s[1], s[2], out_ch],
            name,
        )
    }

    pub fn concat(&mut self, parts: &[NodeId], label: &str) -> Result<NodeId> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let first = self.shape(parts[0]);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..3] != first[..3] {
                return Err(Error::Shape(format!(
                    "{label}: cannot concatenate {:?} ({}) with {:?} ({})",
                    first, self.nodes[parts[0]].label, s, self.nodes[p].label
                )));
            }
            c += s[3];
        }
        Ok(self.push(
            Op::Concat(parts.to_vec()),
            [first[0], first[1], first[2], c],
            label,
        ))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let c = self.shape(x)[3];
        let label = format!("gap({})", self.nodes[x].label);
        self.push(Op::GlobalAvgPool(x), [1, 1, 1, c], label)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Sigmoid(x), s, "sigmoid")
    }

    pub fn gate_mul(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        let channel = gs == [1, 1, 1, xs[3]];
        let spatial = gs[..3] == xs[..3] && gs[3] == 1;
        if !(channel || spatial) {
            return Err(Error::Shape(format!(
                "gate {gs:?} does not broadcast over {xs:?}"
            )));
        }
        Ok(self.push(Op::GateMul { x, gate }, xs, "gated"))
    }

    pub fn mean_max(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::MeanMax(x), [s[0], s[1], s[2], 2], "mean_max")
    }

    pub fn max_pool(&mut self, x: NodeId, size: usize) -> NodeId {
        let s = self.shape(x);
        self.push(Op::MaxPool { input: x, size }, s, format!("maxpool{size}"))
    }

    pub fn reshape(&mut self, x: NodeId, shape: [usize; 4], label: &str) -> Result<NodeId> {
        let s = self.shape(x);
        if s.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("cannot reshape {s:?} to {shape:?}")));
        }
        Ok(self.push(Op::Reshape(x), shape, label))
    }

    pub fn finish(self, output: NodeId) -> Graph {
        let n = self.nodes.len();
        let mut needs_grad = vec![false; n];
        let mut last_use = (0..n).collect::<Vec<_>>();
        for (id, node) in self.nodes.iter().enumerate() {
            let ops = node.op.operands();
            needs_grad[id] =
                matches!(node.op, Op::Conv { .. }) || ops.iter().any(|&o| needs_grad[o]);
            for o in ops {
                last_use[o] = id;
            }
        }
        last_use[output] = usize::MAX;
        Graph {
            nodes: self.nodes,
            inputs: self.inputs,
            output,
            layers: self.layers,
            needs_grad,
            last_use,
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn param_len(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Evaluates the graph. With `keep_all` every intermediate value is
    /// retained for [`Graph::backward`]; otherwise values are freed after
    /// their last consumer.
    pub fn forward(&self, params: &[f64], inputs: &[Tensor], keep_all: bool) -> Result<Activations> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Shape(format!(
                "graph takes {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        if params.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, graph needs {}",
                params.len(),
                self.param_len()
            )));
        }
        let batch = inputs.first().map_or(0, |t| t.batch());
        for (i, (t, s)) in inputs.iter().zip(&self.inputs).enumerate() {
            if t.sample_shape() != *s || t.batch() != batch {
                return Err(Error::Shape(format!(
                    "input {i}: expected (N, {}, {}, {}, {}), got {:?}",
                    s[0], s[1], s[2], s[3], t.shape
                )));
            }
        }
        let n = self.nodes.len();
        let mut values: Vec<Option<Tensor>> = vec![None; n];
        let mut aux: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (id, node) in self.nodes.iter().enumerate() {
            let v = |k: NodeId| values[k].as_ref().expect("operand evaluated");
            let out = match &node.op {
                Op::Input(slot) => inputs[*slot].clone(),
                Op::Conv { input, layer, relu } => {
                    let l = &self.layers[*layer];
                    kernels::conv_forward(
                        v(*input),
                        &l.geom(),
                        &params[l.weight_range()],
                        &params[l.bias_range()],
                        *relu,
                    )
                }
                Op::Concat(parts) => {
                    let ts: Vec<&Tensor> = parts.iter().map(|&p| v(p)).collect();
                    kernels::concat(&ts)
                }
                Op::GlobalAvgPool(x) => kernels::global_avg_pool(v(*x)),
                Op::Sigmoid(x) => {
                    let mut t = v(*x).clone();
                    t.data.iter_mut().for_each(|a| *a = kernels::sigmoid(*a));
                    t
                }
                Op::GateMul { x, gate } => kernels::gate_mul(v(*x), v(*gate)),
                Op::MeanMax(x) => {
                    let (t, a) = kernels::mean_max(v(*x));
                    aux[id] = a;
                    t
                }
                Op::MaxPool { input, size } => {
                    let (t, a) = kernels::maxpool_forward(v(*input), *size);
                    aux[id] = a;
                    t
                }
                Op::Reshape(x) => Tensor::from_vec(with_batch(batch, node.shape), v(*x).data.clone()),
            };
            values[id] = Some(out);
            if !keep_all {
                for o in node.op.operands() {
                    if self.last_use[o] == id {
                        values[o] = None;
                    }
                }
            }
        }
        Ok(Activations {
            values,
            aux,
            output: self.output,
        })
    }

    /// Back-propagates `grad_output` (gradient w.r.t. the output node) and
    /// accumulates parameter gradients into `grads`.
    pub fn backward(&self, params: &[f64], acts: &Activations, grad_output: Tensor, grads: &mut [f64]) {
        let n = self.nodes.len();
        let mut g: Vec<Option<Tensor>> = vec![None; n];
        g[self.output] = Some(grad_output);
        let val = |k: NodeId| acts.values[k].as_ref().expect("forward ran with keep_all");
        for id in (0..n).rev() {
            let Some(gy) = g[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input(_) => {}
                Op::Conv { input, layer, relu } => {
                    let l = &self.layers[*layer];
                    let (gw, gb) = grads[l.offset..l.offset + l.param_count()].split_at_mut(l.weight_len());
                    let gx = kernels::conv_backward(
                        val(*input),
                        val(id),
                        &gy,
                        &l.geom(),
                        &params[l.weight_range()],
                        *relu,
                        gw,
                        gb,
                        self.needs_grad[*input],
                    );
                    if let Some(gx) = gx {
                        accumulate(&mut g[*input], gx);
                    }
                }
                Op::Concat(parts) => {
                    let chans: Vec<usize> = parts.iter().map(|&p| self.nodes[p].shape[3]).collect();
                    for (p, gp) in parts.iter().zip(kernels::concat_backward(&gy, &chans)) {
                        if self.needs_grad[*p] {
                            accumulate(&mut g[*p], gp);
                        }
                    }
                }
                Op::GlobalAvgPool(x) => {
                    if self.needs_grad[*x] {
                        let gx = kernels::global_avg_pool_backward(&gy, val(*x).shape);
                        accumulate(&mut g[*x], gx);
                    }
                }
                Op::Sigmoid(x) => {
                    let s = val(id);
                    let mut gx = gy;
                    gx.data
                        .iter_mut()
                        .zip(&s.data)
                        .for_each(|(d, s)| *d *= s * (1.0 - s));
                    accumulate(&mut g[*x], gx);
                }
                Op::GateMul { x, gate } => {
                    let (gx, gg) = kernels::gate_mul_backward(val(*x), val(*gate), &gy);
                    if self.needs_grad[*x] {
                        accumulate(&mut g[*x], gx);
                    }
                    if self.needs_grad[*gate] {
                        accumulate(&mut g[*gate], gg);
                    }
                }
                Op::MeanMax(x) => {
                    if self.needs_grad[*x] {
                        let gx = kernels::mean_max_backward(&gy, &acts.aux[id], val(*x).shape);
                        accumulate(&mut g[*x], gx);
                    }
                }
                Op::MaxPool { input, .. } => {
                    if self.needs_grad[*input] {
                        accumulate(&mut g[*input], kernels::maxpool_backward(&gy, &acts.aux[id]));
                    }
                }
                Op::Reshape(x) => {
                    if self.needs_grad[*x] {
                        let shape = val(*x).shape;
                        accumulate(&mut g[*x], Tensor::from_vec(shape, gy.data));
                    }
                }
            }
        }
    }
}
