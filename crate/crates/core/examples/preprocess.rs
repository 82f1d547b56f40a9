//! PCA band reduction, patch extraction and a stratified split.

use afnet::prep::{extract_patches, pca_reduce, stratified_split, BorderMode, Fractions};
use afnet::synthetic::field_scene;

fn main() -> afnet::Result<()> {
    let (cube, gt) = field_scene(40, 40, 60, 5, 3)?;
    let reduced = pca_reduce(&cube, 6)?;
    let explained: f64 = reduced.explained_variance.iter().sum();
    println!("{} bands -> {} components, {:.2}% variance kept", cube.bands, reduced.components, 100.0 * explained);

    for mode in [BorderMode::Interior, BorderMode::Mirror] {
        let patches = extract_patches(reduced.clone(), &gt, 9, mode)?;
        println!("{mode:?}: {} patches of {} values", patches.len(), patches.patch_len());
    }

    let patches = extract_patches(reduced, &gt, 9, BorderMode::Interior)?;
    let split = stratified_split(&patches, "15/15/70".parse::<Fractions>()?, 7)?;
    println!("train {} / val {} / test {}", split.train_idx().len(), split.val_idx().len(), split.test_idx().len());
    for c in &split.classes {
        println!("  class {}: {} / {} / {}", c.class, c.train.len(), c.val.len(), c.test.len());
    }
    Ok(())
}
