use std::path::Path;

use image::{imageops, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::hsio::{ClassLegend, GroundTruthMap};

/// A label raster where 0 marks pixels without a class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
}

impl ClassMap {
    /// Places `predictions[k]` at `coords[k]` on an otherwise empty raster
    /// the size of `gt`. Pixels unlabeled in `gt` stay empty.
    pub fn from_predictions(predictions: &[usize], coords: &[(usize, usize)], gt: &GroundTruthMap) -> Result<Self> {
        if predictions.len() != coords.len() {
            return Err(Error::SizeMismatch {
                expected: coords.len(),
                found: predictions.len(),
            });
        }
        let mut labels = vec![0; gt.height * gt.width];
        for (&p, &(r, c)) in predictions.iter().zip(coords) {
            if r >= gt.height || c >= gt.width {
                return Err(Error::Shape(format!(
                    "pixel ({r}, {c}) outside {}x{} scene",
                    gt.height, gt.width
                )));
            }
            if gt.get(r, c) != 0 {
                labels[r * gt.width + c] = p;
            }
        }
        Ok(Self {
            height: gt.height,
            width: gt.width,
            labels,
        })
    }

    pub fn colored_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn to_image(&self, legend: &ClassLegend) -> Result<RgbImage> {
        let mut img: RgbImage = ImageBuffer::new(self.width as u32, self.height as u32);
        for (i, &l) in self.labels.iter().enumerate() {
            let rgb = if l == 0 {
                [0, 0, 0]
            } else {
                legend
                    .color(l)
                    .ok_or_else(|| Error::InvalidArgument(format!("legend has no color for class {l}")))?
            };
            img.put_pixel((i % self.width) as u32, (i / self.width) as u32, Rgb(rgb));
        }
        Ok(img)
    }
}

/// Classification map: legend colors at predicted classes, black elsewhere.
pub fn render_map(
    predictions: &[usize],
    coords: &[(usize, usize)],
    legend: &ClassLegend,
    gt: &GroundTruthMap,
) -> Result<RgbImage> {
    ClassMap::from_predictions(predictions, coords, gt)?.to_image(legend)
}

/// The ground truth drawn with the same legend.
pub fn render_ground_truth(gt: &GroundTruthMap, legend: &ClassLegend) -> Result<RgbImage> {
    ClassMap {
        height: gt.height,
        width: gt.width,
        labels: gt.labels.clone(),
    }
    .to_image(legend)
}

/// Writes a PNG, enlarged `scale` times with nearest-neighbour sampling.
pub fn save_png(img: &RgbImage, path: &Path, scale: u32) -> Result<()> {
    let scale = scale.max(1);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if scale == 1 {
        img.save(path)?;
    } else {
        let big = imageops::resize(img, img.width() * scale, img.height() * scale, imageops::FilterType::Nearest);
        big.save(path)?;
    }
    Ok(())
}
