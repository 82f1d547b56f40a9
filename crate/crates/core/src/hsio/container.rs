use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_finite, ClassLegend, GroundTruthMap, HyperspectralCube, LegendEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    #[default]
    Cube,
    Labels,
}

/// The `.hsij` header document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: Dtype,
    pub order: String,
    #[serde(default = "little")]
    pub endianness: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<Vec<LegendEntry>>,
    #[serde(default)]
    pub kind: ContainerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed_bands: Option<Vec<usize>>,
}

fn little() -> String {
    "little".to_string()
}

impl ContainerHeader {
    fn check(&self) -> Result<()> {
        if self.order != "bip" {
            return Err(Error::InvalidHeader(format!(
                "unsupported order {:?}, expected \"bip\"",
                self.order
            )));
        }
        if self.endianness != "little" {
            return Err(Error::InvalidHeader(format!(
                "unsupported endianness {:?}",
                self.endianness
            )));
        }
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::InvalidHeader(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.bands
            )));
        }
        Ok(())
    }

    fn value_count(&self) -> usize {
        self.height * self.width * self.bands
    }
}

/// Resolves `x`, `x.hsij` or `x.hsib` to the header path.
fn header_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hsij") => path.to_path_buf(),
        Some("hsib") => path.with_extension("hsij"),
        _ => {
            let mut s = path.as_os_str().to_owned();
            s.push(".hsij");
            PathBuf::from(s)
        }
    }
}

/// The payload file paired with a header path.
pub fn payload_path(path: &Path) -> PathBuf {
    header_path(path).with_extension("hsib")
}

fn stem_name(path: &Path) -> String {
    header_path(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn read_header(path: &Path) -> Result<ContainerHeader> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: ContainerHeader = serde_json::from_str(&text)?;
    header.check()?;
    Ok(header)
}

fn read_payload(path: &Path, header: &ContainerHeader) -> Result<Vec<f64>> {
    let pp = payload_path(path);
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    let size = header.dtype.size();
    let expected = header.value_count();
    if bytes.len() % size != 0 || bytes.len() / size != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len() / size,
        });
    }
    let values = match header.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(values)
}

fn write_payload(path: &Path, values: &[f64], dtype: Dtype) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * dtype.size());
    match dtype {
        Dtype::F32 => {
            for &v in values {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let pp = payload_path(path);
    fs::write(&pp, bytes).map_err(|e| Error::io(&pp, e))
}

fn write_header(path: &Path, header: &ContainerHeader) -> Result<()> {
    let hp = header_path(path);
    let text = serde_json::to_string_pretty(header)?;
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
}

/// Loads a cube from its native container.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperspectralCube> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let data = read_payload(path, &header)?;
    check_finite(&data)?;
    let cube = HyperspectralCube {
        name: header.name.clone().unwrap_or_else(|| stem_name(path)),
        height: header.height,
        width: header.width,
        bands: header.bands,
        data,
        band_wavelengths: header.wavelengths.clone(),
        removed_bands: header.removed_bands.clone(),
    };
    cube.validate()?;
    Ok(cube)
}

/// Writes a cube. With `Dtype::F32` values are narrowed; loading the result
/// reproduces the narrowed values exactly.
pub fn save_cube(cube: &HyperspectralCube, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    cube.validate()?;
    let header = ContainerHeader {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype,
        order: "bip".into(),
        endianness: little(),
        legend: None,
        kind: ContainerKind::Cube,
        name: Some(cube.name.clone()),
        wavelengths: cube.band_wavelengths.clone(),
        removed_bands: cube.removed_bands.clone(),
    };
    write_payload(path, &cube.data, dtype)?;
    write_header(path, &header)
}

/// Loads a single-band label raster. Labels must be non-negative integers.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruthMap> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.bands != 1 {
        return Err(Error::InvalidHeader(format!(
            "label raster must have one band, found {}",
            header.bands
        )));
    }
    let values = read_payload(path, &header)?;
    let labels = values
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.is_finite() && value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidLabel { index, value })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    GroundTruthMap::new(header.height, header.width, labels)
}

/// Reads the legend stored in a label container, if any.
pub fn load_legend(path: impl AsRef<Path>) -> Result<Option<ClassLegend>> {
    match read_header(path.as_ref())?.legend {
        Some(entries) => Ok(Some(ClassLegend::new(entries)?)),
        None => Ok(None),
    }
}

pub fn save_ground_truth(
    gt: &GroundTruthMap,
    legend: Option<&ClassLegend>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let header = ContainerHeader {
        height: gt.height,
        width: gt.width,
        bands: 1,
        dtype: Dtype::F64,
        order: "bip".into(),
        endianness: little(),
        legend: legend.map(|l| l.entries.clone()),
        kind: ContainerKind::Labels,
        name: None,
        wavelengths: None,
        removed_bands: None,
    };
    let values: Vec<f64> = gt.labels.iter().map(|&l| l as f64).collect();
    write_payload(path, &values, Dtype::F64)?;
    write_header(path, &header)
}
