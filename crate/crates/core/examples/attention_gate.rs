//! Fuses one skip connection into a trunk and shows the gates at work:
//! fully open gates reproduce plain concatenation, closed gates silence the
//! skip, and random parameters land in between.

use afnet::net::{AttentionFuse, AttentionKind, AttentionSpec, Stage, Tensor};
use rand::{Rng, SeedableRng};

fn main() -> afnet::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let trunk_shape = [5, 5, 4, 3];
    let skip_shape = [5, 5, 4, 2];
    let random = |shape: [usize; 4], rng: &mut rand_chacha::ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::from_vec([1, shape[0], shape[1], shape[2], shape[3]], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let trunk = random(trunk_shape, &mut rng);
    let skip = random(skip_shape, &mut rng);
    let skip_energy: f64 = skip.data.iter().map(|v| v * v).sum();

    for kind in [AttentionKind::None, AttentionKind::Channel, AttentionKind::Spatial, AttentionKind::Both] {
        let spec = AttentionSpec { kind, ..AttentionSpec::default() };
        let fuse = AttentionFuse::new(trunk_shape, skip_shape, spec, Stage::Volumetric)?;
        let params: Vec<f64> = (0..fuse.parameter_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut line = format!("{:<8} {:>3} params |", format!("{kind:?}"), fuse.parameter_count());
        for (name, p) in [("open", fuse.forced_gate_params(true)), ("closed", fuse.forced_gate_params(false)), ("random", params)] {
            let fused = fuse.forward(&p, &trunk, &skip)?;
            // skip channels sit after the trunk channels at every position
            let c = fused.output.channels();
            let kept: f64 = fused.output.data.chunks(c).flat_map(|px| px[3..].iter()).map(|v| v * v).sum();
            line += &format!(" {name}: {:>5.1}% skip energy", 100.0 * kept / skip_energy);
        }
        println!("{line}");
    }
    Ok(())
}
