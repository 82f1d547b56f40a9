use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ReducedCube;
use crate::error::{Error, Result};
use crate::hsio::GroundTruthMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorderMode {
    /// Only centers whose full window lies inside the scene.
    Interior,
    /// Reflect the scene at its borders (without repeating the edge pixel)
    /// so every labeled pixel yields a patch.
    #[default]
    Mirror,
}

impl std::str::FromStr for BorderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interior" => Ok(Self::Interior),
            "mirror" => Ok(Self::Mirror),
            other => Err(Error::InvalidArgument(format!("unknown border mode {other:?}"))),
        }
    }
}

/// Center-labeled S x S x B windows over a reduced cube.
///
/// Patches are not copied out; [`PatchSet::gather`] reads them from the
/// shared source on demand, so a set can be read from several threads.
#[derive(Debug, Clone)]
pub struct PatchSet {
    source: Arc<ReducedCube>,
    pub centers: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub patch_size: usize,
    pub border_mode: BorderMode,
    pub class_count: usize,
}

/// Index into `0..n` reflected about the borders: -1 -> 1, n -> n-2.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Extracts one patch per eligible labeled pixel, in row-major scan order.
pub fn extract_patches(
    reduced: impl Into<Arc<ReducedCube>>,
    gt: &GroundTruthMap,
    patch_size: usize,
    border_mode: BorderMode,
) -> Result<PatchSet> {
    let reduced = reduced.into();
    if patch_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "patch size must be odd, got {patch_size}"
        )));
    }
    if patch_size > reduced.height.min(reduced.width) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} exceeds scene extent {}x{}",
            reduced.height, reduced.width
        )));
    }
    if gt.height != reduced.height || gt.width != reduced.width {
        return Err(Error::ExtentMismatch {
            cube_height: reduced.height,
            cube_width: reduced.width,
            gt_height: gt.height,
            gt_width: gt.width,
        });
    }
    let half = (patch_size - 1) / 2;
    let (rows, cols) = match border_mode {
        BorderMode::Interior => (
            half..reduced.height - half,
            half..reduced.width - half,
        ),
        BorderMode::Mirror => (0..reduced.height, 0..reduced.width),
    };
    let mut centers = Vec::new();
    let mut labels = Vec::new();
    for r in rows {
        for c in cols.clone() {
            let label = gt.get(r, c);
            if label != 0 {
                centers.push((r, c));
                labels.push(label);
            }
        }
    }
    Ok(PatchSet {
        source: reduced,
        centers,
        labels,
        patch_size,
        border_mode,
        class_count: gt.class_count,
    })
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn components(&self) -> usize {
        self.source.components
    }

    pub fn source(&self) -> &ReducedCube {
        &self.source
    }

    /// Values per patch: S * S * B.
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.source.components
    }

    /// Writes patch `index` into `out` in (row offset, col offset, component)
    /// row-major order.
    pub fn gather(&self, index: usize, out: &mut [f64]) {
        let s = self.patch_size;
        let b = self.source.components;
        let half = (s / 2) as isize;
        let (r0, c0) = self.centers[index];
        let (h, w) = (self.source.height, self.source.width);
        for i in 0..s {
            let r = reflect(r0 as isize + i as isize - half, h);
            for j in 0..s {
                let c = reflect(c0 as isize + j as isize - half, w);
                let dst = (i * s + j) * b;
                out[dst..dst + b].copy_from_slice(self.source.pixel(r, c));
            }
        }
    }

    /// Copies the listed patches into one contiguous buffer.
    pub fn gather_batch(&self, indices: &[usize]) -> Vec<f64> {
        let len = self.patch_len();
        let mut out = vec![0.0; indices.len() * len];
        for (k, &i) in indices.iter().enumerate() {
            self.gather(i, &mut out[k * len..(k + 1) * len]);
        }
        out
    }

    pub fn patch(&self, index: usize) -> Vec<f64> {
        self.gather_batch(&[index])
    }

    /// Patch indices grouped by class (`result[c - 1]` lists class `c`).
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l - 1].push(i);
        }
        by
    }
}
