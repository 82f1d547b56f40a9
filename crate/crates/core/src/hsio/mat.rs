//! Minimal reader for MATLAB level-5 `.mat` files, the format the public
//! hyperspectral scenes are distributed in, and a converter into the native
//! container.
//!
//! Only numeric full (non-sparse, real) arrays are decoded. Compressed
//! elements are inflated with zlib. Other array classes are skipped.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::ZlibDecoder;

use super::{save_cube, save_ground_truth, ClassLegend, Dtype, GroundTruthMap, HyperspectralCube};
use crate::error::{Error, Result};

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

const MX_DOUBLE: u8 = 6;
const MX_UINT64: u8 = 15;

/// A decoded numeric array; `data` is column-major as stored by MATLAB.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl MatArray {
    /// Value at a row-major multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        let mut stride = 1;
        for (i, &d) in index.iter().zip(&self.dims) {
            flat += i * stride;
            stride *= d;
        }
        self.data[flat]
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], big_endian: bool) -> Self {
        Self {
            buf,
            pos: 0,
            big_endian,
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated mat data: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b: [u8; 4] = self.take(4)?.try_into().unwrap();
        Ok(if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        })
    }

    /// Reads one data element tag and returns (type, payload).
    fn element(&mut self) -> Result<(u32, &'a [u8])> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            // small data element: size and type packed into four bytes
            let (ty, n) = (first & 0xffff, (first >> 16) as usize);
            if n > 4 {
                return Err(Error::Format(format!("small element claims {n} bytes")));
            }
            let payload = self.take(4)?;
            return Ok((ty, &payload[..n]));
        }
        let n = self.u32()? as usize;
        let payload = self.take(n)?;
        if first != MI_COMPRESSED {
            let pad = (8 - n % 8) % 8;
            self.take(pad.min(self.remaining()))?;
        }
        Ok((first, payload))
    }
}

fn decode_numbers(ty: u32, bytes: &[u8], big_endian: bool) -> Result<Vec<f64>> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {
            bytes
                .chunks_exact($n)
                .map(|c| {
                    let a: [u8; $n] = c.try_into().unwrap();
                    (if big_endian {
                        <$t>::from_be_bytes(a)
                    } else {
                        <$t>::from_le_bytes(a)
                    }) as f64
                })
                .collect()
        };
    }
    Ok(match ty {
        MI_INT8 => bytes.iter().map(|&b| b as i8 as f64).collect(),
        MI_UINT8 => bytes.iter().map(|&b| b as f64).collect(),
        MI_INT16 => conv!(i16, 2),
        MI_UINT16 => conv!(u16, 2),
        MI_INT32 => conv!(i32, 4),
        MI_UINT32 => conv!(u32, 4),
        MI_SINGLE => conv!(f32, 4),
        MI_DOUBLE => conv!(f64, 8),
        MI_INT64 => conv!(i64, 8),
        MI_UINT64 => conv!(u64, 8),
        other => return Err(Error::Format(format!("unsupported numeric type {other}"))),
    })
}

fn parse_matrix(payload: &[u8], big_endian: bool) -> Result<Option<MatArray>> {
    let mut cur = Cursor::new(payload, big_endian);
    let (_, flags) = cur.element()?;
    if flags.len() < 4 {
        return Err(Error::Format("array flags too short".into()));
    }
    let flag_word = if big_endian {
        u32::from_be_bytes(flags[..4].try_into().unwrap())
    } else {
        u32::from_le_bytes(flags[..4].try_into().unwrap())
    };
    let class = (flag_word & 0xff) as u8;
    let complex = flag_word & 0x800 != 0;
    let (_, dim_bytes) = cur.element()?;
    let dims: Vec<usize> = decode_numbers(MI_INT32, dim_bytes, big_endian)?
        .into_iter()
        .map(|d| d as usize)
        .collect();
    let (_, name_bytes) = cur.element()?;
    let name = String::from_utf8_lossy(name_bytes).into_owned();
    if !(MX_DOUBLE..=MX_UINT64).contains(&class) || complex {
        return Ok(None);
    }
    let (ty, real) = cur.element()?;
    let data = decode_numbers(ty, real, big_endian)?;
    let expected: usize = dims.iter().product();
    if data.len() != expected {
        return Err(Error::Format(format!(
            "array {name:?}: {} values for dims {dims:?}",
            data.len()
        )));
    }
    Ok(Some(MatArray { name, dims, data }))
}

/// Decodes every numeric array in a level-5 MAT file.
pub fn read_mat(bytes: &[u8]) -> Result<Vec<MatArray>> {
    if bytes.len() < 128 {
        return Err(Error::Format("file shorter than a MAT-file header".into()));
    }
    let big_endian = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err(Error::Format("missing MAT-file endian indicator".into())),
    };
    if bytes.starts_with(b"\x89HDF") || bytes[..128].windows(4).any(|w| w == b"7.3 ") {
        return Err(Error::Format(
            "MAT v7.3 (HDF5) files are not supported; re-save with -v7".into(),
        ));
    }
    let mut cur = Cursor::new(&bytes[128..], big_endian);
    let mut arrays = Vec::new();
    while cur.remaining() >= 8 {
        let (ty, payload) = cur.element()?;
        match ty {
            MI_MATRIX => arrays.extend(parse_matrix(payload, big_endian)?),
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(payload)
                    .read_to_end(&mut inflated)
                    .map_err(|e| Error::Format(format!("bad compressed element: {e}")))?;
                let mut inner = Cursor::new(&inflated, big_endian);
                let (ity, ipayload) = inner.element()?;
                if ity == MI_MATRIX {
                    arrays.extend(parse_matrix(ipayload, big_endian)?);
                }
            }
            _ => {}
        }
    }
    Ok(arrays)
}

/// Serializes `arrays` as an uncompressed little-endian level-5 MAT file
/// with double-precision payloads. Used to build fixtures.
pub fn write_mat(arrays: &[MatArray]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut text = b"MATLAB 5.0 MAT-file, written by afnet".to_vec();
    text.resize(116, b' ');
    out.extend_from_slice(&text);
    out.extend_from_slice(&[0u8; 8]);
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");
    for a in arrays {
        let mut body = Vec::new();
        push_element(&mut body, MI_UINT32, &{
            let mut f = (MX_DOUBLE as u32).to_le_bytes().to_vec();
            f.extend_from_slice(&[0; 4]);
            f
        });
        let dims: Vec<u8> = a
            .dims
            .iter()
            .flat_map(|&d| (d as i32).to_le_bytes())
            .collect();
        push_element(&mut body, MI_INT32, &dims);
        push_element(&mut body, MI_INT8, a.name.as_bytes());
        let data: Vec<u8> = a.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        push_element(&mut body, MI_DOUBLE, &data);
        push_element(&mut out, MI_MATRIX, &body);
    }
    out
}

fn push_element(out: &mut Vec<u8>, ty: u32, payload: &[u8]) {
    out.extend_from_slice(&ty.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.resize(out.len() + (8 - payload.len() % 8) % 8, 0);
}

/// Wraps an uncompressed MAT file's elements in zlib-compressed elements,
/// as MATLAB's default `-v7` writer does.
pub fn compress_mat(uncompressed: &[u8]) -> Result<Vec<u8>> {
    use flate2::write::ZlibEncoder;
    use std::io::Write;

    let mut out = uncompressed[..128].to_vec();
    let mut cur = Cursor::new(&uncompressed[128..], false);
    while cur.remaining() >= 8 {
        let start = cur.pos;
        cur.element()?;
        let raw = &uncompressed[128 + start..128 + cur.pos];
        let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(raw)
            .and_then(|_| enc.finish())
            .map(|z| {
                out.extend_from_slice(&MI_COMPRESSED.to_le_bytes());
                out.extend_from_slice(&(z.len() as u32).to_le_bytes());
                out.extend_from_slice(&z);
            })
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

fn pick<'a>(arrays: &'a [MatArray], var: Option<&str>, rank: &[usize]) -> Result<&'a MatArray> {
    match var {
        Some(v) => arrays
            .iter()
            .find(|a| a.name == v)
            .ok_or_else(|| Error::Format(format!("variable {v:?} not found"))),
        None => arrays
            .iter()
            .find(|a| rank.contains(&a.dims.len()))
            .ok_or_else(|| Error::Format("no numeric array of the expected rank".into())),
    }
}

/// What a converted file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertKind {
    Cube,
    Labels,
}

#[derive(Debug, Clone, Default)]
pub struct ConvertOptions {
    /// MAT variable name; defaults to the first array of suitable rank.
    pub variable: Option<String>,
    /// Dataset name recorded in the header.
    pub name: Option<String>,
    /// 1-based band indices to drop from a cube.
    pub removed_bands: Vec<usize>,
    pub legend: Option<ClassLegend>,
}

/// Converts a MAT file into the native container at `output`.
pub fn convert_mat(
    input: &Path,
    output: &Path,
    kind: ConvertKind,
    options: &ConvertOptions,
) -> Result<()> {
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let arrays = read_mat(&bytes)?;
    match kind {
        ConvertKind::Cube => {
            let arr = pick(&arrays, options.variable.as_deref(), &[2, 3])?;
            let mut cube = mat_to_cube(arr, &options.removed_bands)?;
            if let Some(name) = &options.name {
                cube.name = name.clone();
            }
            save_cube(&cube, output, Dtype::F32)
        }
        ConvertKind::Labels => {
            let arr = pick(&arrays, options.variable.as_deref(), &[2])?;
            let gt = mat_to_ground_truth(arr)?;
            save_ground_truth(&gt, options.legend.as_ref(), output)
        }
    }
}

/// Reorders a column-major (rows, cols, bands) array into a BIP cube,
/// dropping `removed_bands` (1-based).
pub fn mat_to_cube(arr: &MatArray, removed_bands: &[usize]) -> Result<HyperspectralCube> {
    let (h, w, l) = match arr.dims.as_slice() {
        [h, w] => (*h, *w, 1),
        [h, w, l] => (*h, *w, *l),
        d => return Err(Error::Format(format!("cube must be rank 2 or 3, got {d:?}"))),
    };
    let kept: Vec<usize> = (0..l).filter(|b| !removed_bands.contains(&(b + 1))).collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument("all bands removed".into()));
    }
    let mut data = Vec::with_capacity(h * w * kept.len());
    for r in 0..h {
        for c in 0..w {
            for &b in &kept {
                data.push(arr.data[r + h * (c + w * b)]);
            }
        }
    }
    let mut cube = HyperspectralCube::new(arr.name.clone(), h, w, kept.len(), data)?;
    if !removed_bands.is_empty() {
        cube.removed_bands = Some(removed_bands.to_vec());
    }
    Ok(cube)
}

pub fn mat_to_ground_truth(arr: &MatArray) -> Result<GroundTruthMap> {
    let (h, w) = match arr.dims.as_slice() {
        [h, w] => (*h, *w),
        d => return Err(Error::Format(format!("labels must be rank 2, got {d:?}"))),
    };
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let index = r * w + c;
            let value = arr.data[r + h * c];
            if !(value.is_finite() && value >= 0.0 && value.fract() == 0.0) {
                return Err(Error::InvalidLabel { index, value });
            }
            labels.push(value as usize);
        }
    }
    GroundTruthMap::new(h, w, labels)
}
