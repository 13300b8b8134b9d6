//! On-disk container: a directory holding `meta.json` plus `data.bin`.
//!
//! `data.bin` is raw row-major little-endian data with no padding; complex
//! values are stored as float32 re/im pairs. The metadata is parsed and
//! validated before any bulk data is read, and the byte length of `data.bin`
//! must match shape and dtype exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::AcquisitionMode;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    /// Complex64 stored as interleaved float32 re/im pairs.
    #[serde(rename = "c64")]
    C64,
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "u16")]
    U16,
    #[serde(rename = "u8")]
    U8,
}

impl Dtype {
    pub fn bytes_per_element(self) -> usize {
        match self {
            Dtype::C64 => 8,
            Dtype::F32 => 4,
            Dtype::U16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainerMeta {
    pub schema_version: u32,
    /// Content kind: "image", "kspace", "mask", "maps", "segmentation", ...
    pub kind: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    pub endianness: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coils: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AcquisitionMode>,
    /// Label dictionary for segmentations, label value -> class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<BTreeMap<u16, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_accel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acs_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ContainerMeta {
    pub fn new(kind: &str, dtype: Dtype, shape: &[usize]) -> Self {
        let names = ["x", "y", "z", "w"];
        // Last axis is x, second-to-last y, etc.; leading extras get generic
        // names. A coil axis, when present, is axis 0 and named by callers.
        let rank = shape.len();
        let axes = (0..rank)
            .map(|i| {
                let from_end = rank - 1 - i;
                if from_end < names.len() {
                    names[from_end].to_string()
                } else {
                    format!("axis{i}")
                }
            })
            .collect();
        ContainerMeta {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            dtype,
            shape: shape.to_vec(),
            axes,
            endianness: "little".to_string(),
            coils: None,
            mode: None,
            classes: None,
            requested_accel: None,
            acs_size: None,
            seed: None,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

fn meta_path(dir: &Path) -> std::path::PathBuf {
    dir.join("meta.json")
}

fn data_path(dir: &Path) -> std::path::PathBuf {
    dir.join("data.bin")
}

/// Writes `meta.json` and `data.bin` into `dir`, creating it if needed.
pub fn write_container(dir: &Path, meta: &ContainerMeta, data: &[u8]) -> Result<()> {
    let expected = meta.element_count() * meta.dtype.bytes_per_element();
    if data.len() != expected {
        return Err(Error::container(
            dir,
            format!(
                "data length {} does not match shape {:?} x dtype {:?} = {expected} bytes",
                data.len(),
                meta.shape,
                meta.dtype
            ),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(meta_path(dir), json).map_err(|e| Error::io(&meta_path(dir), e))?;
    fs::write(data_path(dir), data).map_err(|e| Error::io(&data_path(dir), e))?;
    Ok(())
}

/// Reads and validates metadata, then the raw payload.
pub fn read_container(dir: &Path) -> Result<(ContainerMeta, Vec<u8>)> {
    let meta_file = meta_path(dir);
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: ContainerMeta = serde_json::from_str(&text)
        .map_err(|e| Error::container(dir, format!("invalid meta.json: {e}")))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::container(
            dir,
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                meta.schema_version
            ),
        ));
    }
    if meta.endianness != "little" {
        return Err(Error::container(
            dir,
            format!("unsupported endianness '{}'", meta.endianness),
        ));
    }
    if meta.axes.len() != meta.shape.len() {
        return Err(Error::container(
            dir,
            format!(
                "axes list has {} entries for shape of rank {}",
                meta.axes.len(),
                meta.shape.len()
            ),
        ));
    }
    let data_file = data_path(dir);
    let data = fs::read(&data_file).map_err(|e| Error::io(&data_file, e))?;
    let expected = meta.element_count() * meta.dtype.bytes_per_element();
    if data.len() != expected {
        return Err(Error::container(
            dir,
            format!(
                "data.bin holds {} bytes, expected {expected} for shape {:?} dtype {:?}",
                data.len(),
                meta.shape,
                meta.dtype
            ),
        ));
    }
    Ok((meta, data))
}

pub fn encode_complex(arr: &ArrayD<Complex64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(arr.len() * 8);
    for v in arr.iter() {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_complex(bytes: &[u8], shape: &[usize]) -> Result<ArrayD<Complex64>> {
    let vals: Vec<Complex64> = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
            Complex64::new(re, im)
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), vals)
        .map_err(|e| Error::InvalidArgument(format!("complex payload reshape failed: {e}")))
}

pub fn encode_f32(arr: &ArrayD<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(arr.len() * 4);
    for v in arr.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32(bytes: &[u8], shape: &[usize]) -> Result<ArrayD<f64>> {
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), vals)
        .map_err(|e| Error::InvalidArgument(format!("f32 payload reshape failed: {e}")))
}

pub fn encode_u16(arr: &ArrayD<u16>) -> Vec<u8> {
    let mut out = Vec::with_capacity(arr.len() * 2);
    for v in arr.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_u16(bytes: &[u8], shape: &[usize]) -> Result<ArrayD<u16>> {
    let vals: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), vals)
        .map_err(|e| Error::InvalidArgument(format!("u16 payload reshape failed: {e}")))
}

pub fn encode_u8(arr: &ArrayD<u8>) -> Vec<u8> {
    arr.iter().copied().collect()
}

pub fn decode_u8(bytes: &[u8], shape: &[usize]) -> Result<ArrayD<u8>> {
    ArrayD::from_shape_vec(IxDyn(shape), bytes.to_vec())
        .map_err(|e| Error::InvalidArgument(format!("u8 payload reshape failed: {e}")))
}

/// Checks that the container's declared kind matches what the caller expects.
pub fn expect_kind(dir: &Path, meta: &ContainerMeta, kind: &str) -> Result<()> {
    if meta.kind != kind {
        return Err(Error::container(
            dir,
            format!("content kind is '{}', expected '{kind}'", meta.kind),
        ));
    }
    Ok(())
}
