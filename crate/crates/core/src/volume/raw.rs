//! Raw voxel payloads with JSON sidecars.
//!
//! A volume stored at `v.raw` is the flat voxel array verbatim, and
//! `v.json` (same stem) records the extent, sample dtype, and ordering:
//!
//! ```json
//! {"x0":0,"x1":2,"y0":0,"y1":2,"z0":0,"z1":2,
//!  "dtype":"u8","order":"zyx-row-major-x-fastest"}
//! ```
//!
//! Supported dtypes: `u8` (one byte per voxel), `f64` (little-endian,
//! 8 bytes per voxel), and `i64x3` (gradient fields; see the gradient
//! module). Multi-byte samples are always little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Extent3D, FloatVolume3D, Volume3D, VolumeError};

/// The only voxel ordering this crate writes or accepts.
pub const ORDER: &str = "zyx-row-major-x-fastest";

pub const DTYPE_U8: &str = "u8";
pub const DTYPE_F64: &str = "f64";
/// Planar gradient triples: all gx, then all gy, then all gz.
pub const DTYPE_I64X3: &str = "i64x3";

/// JSON sidecar describing a raw payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub x0: u64,
    pub x1: u64,
    pub y0: u64,
    pub y1: u64,
    pub z0: u64,
    pub z1: u64,
    pub dtype: String,
    pub order: String,
}

impl Sidecar {
    pub fn new(extent: Extent3D, dtype: &str) -> Self {
        Self {
            x0: extent.x0(),
            x1: extent.x1(),
            y0: extent.y0(),
            y1: extent.y1(),
            z0: extent.z0(),
            z1: extent.z1(),
            dtype: dtype.to_owned(),
            order: ORDER.to_owned(),
        }
    }

    pub fn extent(&self) -> Result<Extent3D, VolumeError> {
        Extent3D::new(self.x0, self.x1, self.y0, self.y1, self.z0, self.z1)
    }
}

/// `v.raw` -> `v.json`.
pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

fn io_err(path: &Path, source: std::io::Error) -> VolumeError {
    VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> VolumeError {
    VolumeError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_sidecar(raw_path: &Path, sidecar: &Sidecar) -> Result<(), VolumeError> {
    let path = sidecar_path(raw_path);
    let json = serde_json::to_string(sidecar)
        .map_err(|e| format_err(&path, format!("sidecar encoding failed: {e}")))?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

pub fn read_sidecar(raw_path: &Path) -> Result<Sidecar, VolumeError> {
    let path = sidecar_path(raw_path);
    let data = fs::read(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_slice(&data).map_err(|e| format_err(&path, format!("bad sidecar: {e}")))
}

/// Write the raw payload and its sidecar for an arbitrary dtype. The
/// caller is responsible for `payload` matching the dtype's sample size.
pub fn write_payload(
    raw_path: &Path,
    extent: Extent3D,
    dtype: &str,
    payload: &[u8],
) -> Result<(), VolumeError> {
    fs::write(raw_path, payload).map_err(|e| io_err(raw_path, e))?;
    write_sidecar(raw_path, &Sidecar::new(extent, dtype))
}

/// Read the payload back, checking dtype, order, and exact byte length
/// (`bytes_per_voxel * volume_count`).
pub fn read_payload(
    raw_path: &Path,
    want_dtype: &str,
    bytes_per_voxel: u64,
) -> Result<(Extent3D, Vec<u8>), VolumeError> {
    let sidecar = read_sidecar(raw_path)?;
    if sidecar.dtype != want_dtype {
        return Err(format_err(
            raw_path,
            format!("dtype \"{}\" unsupported here, want \"{want_dtype}\"", sidecar.dtype),
        ));
    }
    if sidecar.order != ORDER {
        return Err(format_err(
            raw_path,
            format!("order \"{}\" unsupported, want \"{ORDER}\"", sidecar.order),
        ));
    }
    let extent = sidecar.extent()?;
    let payload = fs::read(raw_path).map_err(|e| io_err(raw_path, e))?;
    let expected = extent.volume_count() * bytes_per_voxel;
    if payload.len() as u64 != expected {
        return Err(format_err(
            raw_path,
            format!(
                "payload is {} bytes, sidecar extent {} wants {expected}",
                payload.len(),
                extent
            ),
        ));
    }
    Ok((extent, payload))
}

pub fn write_raw(v: &Volume3D, path: &Path) -> Result<(), VolumeError> {
    write_payload(path, v.extent(), DTYPE_U8, v.voxels())
}

pub fn read_raw(path: &Path) -> Result<Volume3D, VolumeError> {
    let (extent, payload) = read_payload(path, DTYPE_U8, 1)?;
    Volume3D::from_voxels(extent, payload)
}

pub fn write_raw_f64(v: &FloatVolume3D, path: &Path) -> Result<(), VolumeError> {
    let mut payload = Vec::with_capacity(v.values().len() * 8);
    for value in v.values() {
        payload.extend_from_slice(&value.to_le_bytes());
    }
    write_payload(path, v.extent(), DTYPE_F64, &payload)
}

pub fn read_raw_f64(path: &Path) -> Result<FloatVolume3D, VolumeError> {
    let (extent, payload) = read_payload(path, DTYPE_F64, 8)?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FloatVolume3D::from_values(extent, values)
}
