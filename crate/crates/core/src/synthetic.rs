//! Synthetic scenes for tests, examples and smoke runs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hsio::{GroundTruthMap, HyperspectralCube};
use crate::prep::{extract_patches, BorderMode, ClassSplit, Fractions, PatchSet, ReducedCube, SplitAssignment};

/// A scene tiled into rectangular fields, one class per field, each class
/// with a smooth spectral signature plus Gaussian-ish noise. Roughly one
/// pixel in `unlabeled_every` is left unlabeled.
pub fn field_scene(height: usize, width: usize, bands: usize, classes: usize, seed: u64) -> Result<(HyperspectralCube, GroundTruthMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signatures: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = 1.0 + k as f64 * 0.7;
            let level = rng.random_range(0.2..0.8);
            (0..bands)
                .map(|b| level + 0.3 * (freq * b as f64 / bands as f64 * std::f64::consts::PI + phase).sin())
                .collect()
        })
        .collect();
    let cols = (classes as f64).sqrt().ceil() as usize;
    let rows = classes.div_ceil(cols);
    let mut labels = vec![0; height * width];
    let mut data = vec![0.0; height * width * bands];
    for r in 0..height {
        for c in 0..width {
            let field = (r * rows / height) * cols + c * cols / width;
            let class = field % classes;
            let unlabeled = rng.random_range(0..7) == 0;
            labels[r * width + c] = if unlabeled { 0 } else { class + 1 };
            let px = &mut data[(r * width + c) * bands..(r * width + c + 1) * bands];
            for (b, v) in px.iter_mut().enumerate() {
                let noise: f64 = (0..3).map(|_| rng.random_range(-0.05..0.05)).sum();
                *v = signatures[class][b] + noise;
            }
        }
    }
    let cube = HyperspectralCube::new("synthetic", height, width, bands, data)?;
    let gt = GroundTruthMap::new(height, width, labels)?;
    Ok((cube, gt))
}

/// A two-class set whose label is the sign of the first component at the
/// patch center (positive: class 1). The first `train` patches form the
/// training split and the next `val` the validation split.
pub fn sign_toy(train: usize, val: usize, patch_size: usize, components: usize, seed: u64) -> Result<(PatchSet, SplitAssignment)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 20;
    let height = (train + val).div_ceil(width).max(patch_size);
    let mut data = vec![0.0; height * width * components];
    let mut labels = vec![0; height * width];
    for (p, px) in data.chunks_exact_mut(components).enumerate() {
        for v in px.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        px[0] = sign * rng.random_range(0.2..1.0);
        if p < train + val {
            labels[p] = if sign > 0.0 { 1 } else { 2 };
        }
    }
    let reduced = ReducedCube {
        height,
        width,
        components,
        data,
        explained_variance: vec![1.0 / components as f64; components],
        projection: identity(components),
        band_means: vec![0.0; components],
        band_scales: None,
    };
    let gt = GroundTruthMap::new(height, width, labels)?;
    let patches = extract_patches(Arc::new(reduced), &gt, patch_size, BorderMode::Mirror)?;
    let mut classes: Vec<ClassSplit> = (1..=2)
        .map(|class| ClassSplit {
            class,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (i, &l) in patches.labels.iter().enumerate() {
        let c = &mut classes[l - 1];
        if i < train {
            c.train.push(i);
        } else {
            c.val.push(i);
        }
    }
    let total = (train + val) as f64;
    let split = SplitAssignment {
        seed,
        fractions: Fractions {
            train: train as f64 / total,
            val: val as f64 / total,
            test: 0.0,
        },
        classes,
    };
    Ok((patches, split))
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}
