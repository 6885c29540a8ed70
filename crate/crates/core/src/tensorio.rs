//! Minimal binary tensor container and frame ingestion.
//!
//! Layout, all little-endian: magic `TNSR`, version u16, dtype u8
//! (1 = f32, 2 = f64), ndim u8, then ndim u64 dims, then the data.
//! Frames can also come from a directory of raw arrays described by a JSON
//! manifest (`manifest.json` with files, geometry, dtype, value range).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::repetition::FrameSequence;

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::InvalidInput(format!("unknown dtype code {other}"))),
        }
    }
}

/// A tensor read back from disk, data widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Interpret as a 2-D array.
    pub fn into_array2(self) -> Result<Array2<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "expected a 2-D tensor, got {} dims",
                self.shape.len()
            )));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data)
            .map_err(|e| Error::Shape(e.to_string()))
    }
}

fn write_header(out: &mut impl Write, dtype: Dtype, shape: &[usize]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[dtype.code(), shape.len() as u8])?;
    for &d in shape {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::Shape(format!(
            "data length {} does not match shape product {expected}",
            data.len()
        )));
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_header(&mut out, Dtype::F64, shape)?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tensor_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::Shape(format!(
            "data length {} does not match shape product {expected}",
            data.len()
        )));
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_header(&mut out, Dtype::F32, shape)?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_array2(path: &Path, array: &Array2<f64>) -> Result<()> {
    let data: Vec<f64> = array.iter().cloned().collect();
    write_tensor_f64(path, &[array.nrows(), array.ncols()], &data)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut file = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput(format!(
            "{} is not a tensor container (bad magic)",
            path.display()
        )));
    }
    let mut buf2 = [0u8; 2];
    file.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != VERSION {
        return Err(Error::InvalidInput(format!("unsupported version {version}")));
    }
    file.read_exact(&mut buf2)?;
    let dtype = Dtype::from_code(buf2[0])?;
    let ndim = buf2[1] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut buf8 = [0u8; 8];
    for _ in 0..ndim {
        file.read_exact(&mut buf8)?;
        shape.push(u64::from_le_bytes(buf8) as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    match dtype {
        Dtype::F32 => {
            let mut b = [0u8; 4];
            for _ in 0..count {
                file.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as f64);
            }
        }
        Dtype::F64 => {
            for _ in 0..count {
                file.read_exact(&mut buf8)?;
                data.push(f64::from_le_bytes(buf8));
            }
        }
    }
    Ok(Tensor { dtype, shape, data })
}

/// Frame-major container (first dim = frame count) into a frame sequence.
pub fn read_frames(path: &Path, value_range: (f64, f64)) -> Result<FrameSequence> {
    let tensor = read_tensor(path)?;
    if tensor.shape.is_empty() {
        return Err(Error::Shape("frame container needs at least one dim".into()));
    }
    let count = tensor.shape[0];
    let per_frame: usize = tensor.shape[1..].iter().product();
    if count == 0 || per_frame == 0 {
        return Err(Error::Shape("empty frame container".into()));
    }
    let frames: Vec<Vec<f64>> = tensor
        .data
        .chunks(per_frame)
        .map(|c| c.to_vec())
        .collect();
    FrameSequence::new(frames, value_range)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameManifest {
    files: Vec<String>,
    width: usize,
    height: usize,
    #[serde(default = "one")]
    channels: usize,
    dtype: String,
    #[serde(default = "u8_range")]
    value_range: (f64, f64),
}

fn one() -> usize {
    1
}

fn u8_range() -> (f64, f64) {
    (0.0, 255.0)
}

/// Read frames from a directory holding `manifest.json` plus raw arrays.
pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let manifest_path = dir.join("manifest.json");
    let manifest: FrameManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let pixels = manifest.width * manifest.height * manifest.channels;
    if pixels == 0 || manifest.files.is_empty() {
        return Err(Error::InvalidInput("manifest describes an empty clip".into()));
    }
    let mut frames = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        let raw = fs::read(dir.join(name))?;
        let frame: Vec<f64> = match manifest.dtype.as_str() {
            "u8" => raw.iter().map(|&b| b as f64).collect(),
            "f32" => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            "f64" => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            other => {
                return Err(Error::InvalidInput(format!("unsupported frame dtype {other}")))
            }
        };
        if frame.len() != pixels {
            return Err(Error::Shape(format!(
                "{name} holds {} values, expected {pixels}",
                frame.len()
            )));
        }
        frames.push(frame);
    }
    FrameSequence::new(frames, manifest.value_range)
}
