//! Stand-alone attention fusion of one skip connection into a trunk.

use super::builder::Gates;
use super::config::{AttentionSpec, Stage};
use super::graph::{Graph, GraphBuilder, LayerRole, LayerSpec, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A single fusion `trunk ++ gate(trunk, skip) * skip`, with its own
/// parameter vector laid out like the gates inside a full network.
#[derive(Debug, Clone)]
pub struct AttentionFuse {
    graph: Graph,
}

/// Output of [`AttentionFuse::forward`].
#[derive(Debug, Clone)]
pub struct Fused {
    pub output: Tensor,
    /// Every sigmoid gate evaluated, channel gate first.
    pub gates: Vec<Tensor>,
}

impl AttentionFuse {
    /// `trunk` and `skip` are per-sample shapes (X, Y, Z, C); their spatial
    /// extents must agree.
    pub fn new(trunk: [usize; 4], skip: [usize; 4], spec: AttentionSpec, stage: Stage) -> Result<Self> {
        if trunk[..3] != skip[..3] {
            return Err(Error::Shape(format!(
                "trunk extent {:?} and skip extent {:?} differ",
                &trunk[..3],
                &skip[..3]
            )));
        }
        let mut g = GraphBuilder::new();
        let t = g.input(trunk, "trunk");
        let s = g.input(skip, "skip");
        let gated = Gates::default().gate(&mut g, t, s, spec, stage)?;
        let out = g.concat(&[t, gated], "fused")?;
        Ok(Self { graph: g.finish(out) })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.graph.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.param_len()
    }

    /// Parameters that pin every gate to `value` (0 or 1): zero weights and a
    /// saturating bias on each gate's final layer.
    pub fn forced_gate_params(&self, open: bool) -> Vec<f64> {
        let mut p = vec![0.0; self.parameter_count()];
        let bias = if open { 1e3 } else { -1e3 };
        for l in self.layers() {
            if matches!(l.role, LayerRole::AttentionExcite | LayerRole::SpatialGate) {
                p[l.bias_range()].iter_mut().for_each(|b| *b = bias);
            }
        }
        p
    }

    pub fn forward(&self, params: &[f64], trunk: &Tensor, skip: &Tensor) -> Result<Fused> {
        let acts = self.graph.forward(params, &[trunk.clone(), skip.clone()], true)?;
        let gates = self
            .graph
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Sigmoid(_)))
            .map(|(id, _)| acts.value(id).expect("kept").clone())
            .collect();
        Ok(Fused {
            output: acts.into_output(),
            gates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::AttentionKind;

    fn data(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.71 + phase).sin() * 3.0).collect()
    }

    #[test]
    fn open_and_closed_gates() {
        for kind in [AttentionKind::Channel, AttentionKind::Spatial, AttentionKind::Both] {
            let spec = AttentionSpec { kind, ..AttentionSpec::default() };
            let f = AttentionFuse::new([4, 4, 3, 5], [4, 4, 3, 6], spec, Stage::Volumetric).unwrap();
            let t = Tensor::from_vec([2, 4, 4, 3, 5], data(480, 0.0));
            let s = Tensor::from_vec([2, 4, 4, 3, 6], data(576, 1.0));
            let open = f.forward(&f.forced_gate_params(true), &t, &s).unwrap();
            let plain = crate::net::kernels::concat(&[&t, &s]);
            assert_eq!(open.output, plain);
            let closed = f.forward(&f.forced_gate_params(false), &t, &s).unwrap();
            for p in 0..2 * 48 {
                let row = &closed.output.data[p * 11..(p + 1) * 11];
                assert_eq!(&row[..5], &t.data[p * 5..(p + 1) * 5]);
                assert!(row[5..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn none_is_plain_concatenation() {
        let spec = AttentionSpec { kind: AttentionKind::None, ..AttentionSpec::default() };
        let f = AttentionFuse::new([3, 3, 1, 2], [3, 3, 1, 4], spec, Stage::Planar).unwrap();
        assert_eq!(f.parameter_count(), 0);
        let t = Tensor::from_vec([1, 3, 3, 1, 2], data(18, 0.2));
        let s = Tensor::from_vec([1, 3, 3, 1, 4], data(36, 0.4));
        let out = f.forward(&[], &t, &s).unwrap();
        assert!(out.gates.is_empty());
        assert_eq!(out.output, crate::net::kernels::concat(&[&t, &s]));
    }

    #[test]
    fn mismatched_extents_are_rejected() {
        let r = AttentionFuse::new([4, 4, 1, 2], [5, 5, 1, 2], AttentionSpec::default(), Stage::Planar);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
