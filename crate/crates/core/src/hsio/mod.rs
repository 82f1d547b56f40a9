//! Hyperspectral cubes, ground-truth rasters and their on-disk containers.
//!
//! The native container is a pair of files sharing a stem: `<name>.hsij`
//! holds a JSON header and `<name>.hsib` holds the raw little-endian payload
//! in band-interleaved-by-pixel order. Ground-truth rasters use the same
//! container with a single band and `"kind": "labels"`.

mod container;
pub mod datasets;
pub mod mat;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{
    load_cube, load_ground_truth, load_legend, payload_path, read_header, save_cube,
    save_ground_truth, ContainerHeader, ContainerKind, Dtype,
};

/// A height x width x bands reflectance cube stored band-interleaved-by-pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralCube {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f64>,
    pub band_wavelengths: Option<Vec<f64>>,
    /// Original (1-based) band indices dropped before this cube was written.
    pub removed_bands: Option<Vec<usize>>,
}

impl HyperspectralCube {
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let cube = Self {
            name: name.into(),
            height,
            width,
            bands,
            data,
            band_wavelengths: None,
            removed_bands: None,
        };
        cube.validate()?;
        Ok(cube)
    }

    /// Checks the extent and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::InvalidHeader(format!(
                "cube dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.bands
            )));
        }
        let expected = self.height * self.width * self.bands;
        if self.data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: self.data.len(),
            });
        }
        check_finite(&self.data)?;
        if let Some(w) = &self.band_wavelengths {
            if w.len() != self.bands {
                return Err(Error::InvalidHeader(format!(
                    "{} wavelengths for {} bands",
                    w.len(),
                    self.bands
                )));
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    /// The spectrum of one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    let mut count = 0;
    let mut first = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            count += 1;
            first.get_or_insert(i);
        }
    }
    match first {
        Some(first_index) => Err(Error::NonFinite { count, first_index }),
        None => Ok(()),
    }
}

/// Per-pixel class labels; 0 marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl GroundTruthMap {
    /// Builds a map and infers the class count as the maximum label.
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::SizeMismatch {
                expected: height * width,
                found: labels.len(),
            });
        }
        let class_count = labels.iter().copied().max().unwrap_or(0);
        Ok(Self {
            height,
            width,
            labels,
            class_count,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Number of labeled pixels per class, indexed by `label - 1`.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.class_count];
        for &l in &self.labels {
            if l > 0 {
                hist[l - 1] += 1;
            }
        }
        hist
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub id: usize,
    pub name: String,
    pub rgb: [u8; 3],
}

/// Class names and display colors, ordered by label id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLegend {
    pub entries: Vec<LegendEntry>,
}

impl ClassLegend {
    pub fn new(entries: Vec<LegendEntry>) -> Result<Self> {
        let legend = Self { entries };
        legend.validate()?;
        Ok(legend)
    }

    /// Ids must be exactly 1..=C in order and colors pairwise distinct.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.id != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "legend ids must be contiguous from 1, entry {} has id {}",
                    i, e.id
                )));
            }
            if e.rgb == [0, 0, 0] {
                return Err(Error::InvalidArgument(format!(
                    "class {} uses black, which is reserved for unlabeled pixels",
                    e.id
                )));
            }
            if self.entries[..i].iter().any(|o| o.rgb == e.rgb) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate legend color {:?} for class {}",
                    e.rgb, e.id
                )));
            }
        }
        Ok(())
    }

    /// A legend with generated names and evenly spaced hues.
    pub fn generated(class_count: usize) -> Self {
        let entries = (1..=class_count)
            .map(|id| LegendEntry {
                id,
                name: format!("class {id}"),
                rgb: palette_color(id - 1, class_count),
            })
            .collect();
        Self { entries }
    }

    pub fn class_count(&self) -> usize {
        self.entries.len()
    }

    pub fn color(&self, label: usize) -> Option<[u8; 3]> {
        label
            .checked_sub(1)
            .and_then(|i| self.entries.get(i))
            .map(|e| e.rgb)
    }
}

fn palette_color(index: usize, count: usize) -> [u8; 3] {
    // Spread hues around the wheel; alternate lightness so neighbors differ.
    let hue = index as f64 / count.max(1) as f64 * 360.0;
    let light = if index.is_multiple_of(2) { 0.5 } else { 0.35 };
    let (r, g, b) = hsl_to_rgb(hue, 0.85, light);
    let mut rgb = [r, g, b];
    if rgb == [0, 0, 0] {
        rgb = [1, 1, 1];
    }
    rgb
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to(r1), to(g1), to(b1))
}

/// Summary of a validated cube/ground-truth pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub class_count: usize,
    pub labeled_sample_count: usize,
    pub sensor: String,
}

/// Checks that a cube and a label raster cover the same scene and
/// summarizes the pair.
pub fn validate_pair(cube: &HyperspectralCube, gt: &GroundTruthMap) -> Result<DatasetDescriptor> {
    if cube.height != gt.height || cube.width != gt.width {
        return Err(Error::ExtentMismatch {
            cube_height: cube.height,
            cube_width: cube.width,
            gt_height: gt.height,
            gt_width: gt.width,
        });
    }
    let sensor = datasets::lookup(&cube.name)
        .map(|d| d.sensor.to_string())
        .unwrap_or_default();
    Ok(DatasetDescriptor {
        name: cube.name.clone(),
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        class_count: gt.class_count,
        labeled_sample_count: gt.labeled_count(),
        sensor,
    })
}
