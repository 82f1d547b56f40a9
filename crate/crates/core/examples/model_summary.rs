//! Builds the default network and both baselines and prints their layers
//! and parameter counts.
//!
//! ```text
//! cargo run --example model_summary -- [patch] [components] [classes]
//! ```

use afnet::net::{build_model, count_parameters, AfNetConfig, AttentionKind, LayerRole, ModelKind};

fn main() -> afnet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let patch = args.first().copied().unwrap_or(9);
    let components = args.get(1).copied().unwrap_or(15);
    let classes = args.get(2).copied().unwrap_or(16);
    let cfg = AfNetConfig::standard(patch, components, classes);

    let model = build_model(ModelKind::Afnet, &cfg)?;
    println!("input {:?}, {} convolution layers", model.input_shape(), model.conv_layer_count());
    for l in model.layers().iter().filter(|l| l.role.is_backbone_conv() || l.role == LayerRole::Classifier) {
        println!("  {:<28} {:?} {:>5} -> {:<4} {:>9} params", l.name, l.kernel, l.in_ch, l.out_ch, l.param_count());
    }
    println!("wiring:");
    for e in &cfg.wiring {
        println!("  {e}");
    }

    for kind in [ModelKind::Afnet, ModelKind::Inception2d, ModelKind::Inception3d] {
        for att in [AttentionKind::None, AttentionKind::Channel, AttentionKind::Both] {
            let mut c = cfg.clone();
            c.set_attention(att);
            println!("{kind:<12} {:<8} {:>10} parameters", format!("{att:?}"), count_parameters(&c, kind)?);
        }
    }
    Ok(())
}
