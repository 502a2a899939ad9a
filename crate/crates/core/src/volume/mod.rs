//! Dense 3D volumes over half-open voxel boxes.
//!
//! Voxels are stored in a single flat array ordered x-fastest, then y,
//! then z (z slowest), so one z-slice is a contiguous row-major image.
//! The sample at `(x, y, z)` lives at flat index
//! `(z - z0) * dy * dx + (y - y0) * dx + (x - x0)`.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub mod pgm;
pub mod raw;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid extent: {0}")]
    InvalidExtent(String),
    #[error("data length {got} does not match extent volume count {expected}")]
    LengthMismatch { expected: u64, got: u64 },
    #[error("slice z={z} outside extent z range [{z0}, {z1})")]
    SliceOutOfRange { z: u64, z0: u64, z1: u64 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("missing slice file {path}")]
    MissingSlice { path: PathBuf },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Half-open integer box in voxel coordinates: `[x0, x1) x [y0, y1) x [z0, z1)`.
///
/// Always non-empty, and the voxel count always fits in a `u64`. An extent
/// can address volumes far larger than memory (it is also the planning unit
/// for chunked downloads); only materializing a [`Volume3D`] requires the
/// count to fit an allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Extent3D {
    x0: u64,
    x1: u64,
    y0: u64,
    y1: u64,
    z0: u64,
    z1: u64,
}

impl Extent3D {
    pub fn new(x0: u64, x1: u64, y0: u64, y1: u64, z0: u64, z1: u64) -> Result<Self, VolumeError> {
        if x0 >= x1 || y0 >= y1 || z0 >= z1 {
            return Err(VolumeError::InvalidExtent(format!(
                "empty box [{x0},{x1})x[{y0},{y1})x[{z0},{z1})"
            )));
        }
        (x1 - x0)
            .checked_mul(y1 - y0)
            .and_then(|a| a.checked_mul(z1 - z0))
            .ok_or_else(|| {
                VolumeError::InvalidExtent(format!(
                    "voxel count of [{x0},{x1})x[{y0},{y1})x[{z0},{z1}) overflows u64"
                ))
            })?;
        Ok(Self { x0, x1, y0, y1, z0, z1 })
    }

    pub fn x0(&self) -> u64 {
        self.x0
    }
    pub fn x1(&self) -> u64 {
        self.x1
    }
    pub fn y0(&self) -> u64 {
        self.y0
    }
    pub fn y1(&self) -> u64 {
        self.y1
    }
    pub fn z0(&self) -> u64 {
        self.z0
    }
    pub fn z1(&self) -> u64 {
        self.z1
    }

    pub fn dx(&self) -> u64 {
        self.x1 - self.x0
    }
    pub fn dy(&self) -> u64 {
        self.y1 - self.y0
    }
    pub fn dz(&self) -> u64 {
        self.z1 - self.z0
    }

    pub fn volume_count(&self) -> u64 {
        self.dx() * self.dy() * self.dz()
    }

    pub fn contains(&self, x: u64, y: u64, z: u64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1 && z >= self.z0 && z < self.z1
    }

    pub fn contains_extent(&self, other: &Extent3D) -> bool {
        other.x0 >= self.x0
            && other.x1 <= self.x1
            && other.y0 >= self.y0
            && other.y1 <= self.y1
            && other.z0 >= self.z0
            && other.z1 <= self.z1
    }

    pub fn intersects(&self, other: &Extent3D) -> bool {
        self.x0 < other.x1
            && other.x0 < self.x1
            && self.y0 < other.y1
            && other.y0 < self.y1
            && self.z0 < other.z1
            && other.z0 < self.z1
    }

    /// Flat index of `(x, y, z)`, which must lie inside the extent.
    pub fn flat_index(&self, x: u64, y: u64, z: u64) -> u64 {
        debug_assert!(self.contains(x, y, z));
        (z - self.z0) * self.dy() * self.dx() + (y - self.y0) * self.dx() + (x - self.x0)
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn coords_of(&self, flat: u64) -> (u64, u64, u64) {
        debug_assert!(flat < self.volume_count());
        let plane = self.dx() * self.dy();
        let z = flat / plane;
        let rem = flat % plane;
        let y = rem / self.dx();
        let x = rem % self.dx();
        (x + self.x0, y + self.y0, z + self.z0)
    }

    pub(crate) fn alloc_len(&self) -> Result<usize, VolumeError> {
        usize::try_from(self.volume_count()).map_err(|_| {
            VolumeError::InvalidExtent(format!("{self} is too large to materialize in memory"))
        })
    }
}

impl fmt::Display for Extent3D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{})x[{},{})x[{},{})",
            self.x0, self.x1, self.y0, self.y1, self.z0, self.z1
        )
    }
}

/// Summary statistics of a volume. `stddev` is the population sigma
/// (divisor N), so thresholds derived from it are reproducible — the
/// volume is treated as the full population, not a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeStats {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

/// Two-pass mean/sigma with exact min/max. `at(i)` must be finite.
fn compute_stats(n: usize, at: impl Fn(usize) -> f64) -> VolumeStats {
    debug_assert!(n > 0);
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let v = at(i);
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let mean = sum / n as f64;
    let mut sq = 0.0;
    for i in 0..n {
        let d = at(i) - mean;
        sq += d * d;
    }
    VolumeStats {
        mean,
        stddev: (sq / n as f64).sqrt(),
        min,
        max,
    }
}

/// Dense grid of 8-bit samples over an [`Extent3D`].
///
/// Immutable in normal use; construction and IO own the only mutation
/// paths, so shared references are safe across threads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Volume3D {
    extent: Extent3D,
    voxels: Vec<u8>,
}

impl Volume3D {
    /// Volume with every voxel equal to `value`.
    pub fn constant(extent: Extent3D, value: u8) -> Result<Self, VolumeError> {
        let len = extent.alloc_len()?;
        Ok(Self {
            extent,
            voxels: vec![value; len],
        })
    }

    pub fn from_voxels(extent: Extent3D, voxels: Vec<u8>) -> Result<Self, VolumeError> {
        if voxels.len() as u64 != extent.volume_count() {
            return Err(VolumeError::LengthMismatch {
                expected: extent.volume_count(),
                got: voxels.len() as u64,
            });
        }
        Ok(Self { extent, voxels })
    }

    pub fn extent(&self) -> Extent3D {
        self.extent
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<u8> {
        self.voxels
    }

    pub fn voxel(&self, x: u64, y: u64, z: u64) -> u8 {
        self.voxels[self.extent.flat_index(x, y, z) as usize]
    }

    /// Row-major image of the z-slice at absolute index `z`.
    pub fn extract_slice(&self, z: u64) -> Result<SliceImage, VolumeError> {
        let e = &self.extent;
        if z < e.z0 || z >= e.z1 {
            return Err(VolumeError::SliceOutOfRange {
                z,
                z0: e.z0,
                z1: e.z1,
            });
        }
        let plane = (e.dx() * e.dy()) as usize;
        let start = ((z - e.z0) as usize) * plane;
        Ok(SliceImage {
            width: e.dx() as usize,
            height: e.dy() as usize,
            pixels: self.voxels[start..start + plane].to_vec(),
        })
    }

    pub fn stats(&self) -> VolumeStats {
        compute_stats(self.voxels.len(), |i| self.voxels[i] as f64)
    }

    /// Copy of the voxels inside `sub`, which must lie within this volume.
    pub fn subvolume(&self, sub: Extent3D) -> Result<Volume3D, VolumeError> {
        if !self.extent.contains_extent(&sub) {
            return Err(VolumeError::InvalidExtent(format!(
                "subvolume {sub} not contained in {}",
                self.extent
            )));
        }
        let mut out = Vec::with_capacity(sub.alloc_len()?);
        for z in sub.z0..sub.z1 {
            for y in sub.y0..sub.y1 {
                let row = self.extent.flat_index(sub.x0, y, z) as usize;
                out.extend_from_slice(&self.voxels[row..row + sub.dx() as usize]);
            }
        }
        Volume3D::from_voxels(sub, out)
    }

    /// Overwrite the region covered by `sub` with its voxels. The two
    /// regions are addressed in absolute coordinates, so disjoint
    /// subvolumes touch disjoint bytes.
    pub fn write_subvolume(&mut self, sub: &Volume3D) -> Result<(), VolumeError> {
        let se = sub.extent;
        if !self.extent.contains_extent(&se) {
            return Err(VolumeError::InvalidExtent(format!(
                "subvolume {se} not contained in {}",
                self.extent
            )));
        }
        for z in se.z0..se.z1 {
            for y in se.y0..se.y1 {
                let src = se.flat_index(se.x0, y, z) as usize;
                let dst = self.extent.flat_index(se.x0, y, z) as usize;
                let w = se.dx() as usize;
                self.voxels[dst..dst + w].copy_from_slice(&sub.voxels[src..src + w]);
            }
        }
        Ok(())
    }
}

/// Dense grid of finite 64-bit float samples, same ordering as [`Volume3D`].
#[derive(Clone, Debug, PartialEq)]
pub struct FloatVolume3D {
    extent: Extent3D,
    values: Vec<f64>,
}

impl FloatVolume3D {
    pub fn from_values(extent: Extent3D, values: Vec<f64>) -> Result<Self, VolumeError> {
        if values.len() as u64 != extent.volume_count() {
            return Err(VolumeError::LengthMismatch {
                expected: extent.volume_count(),
                got: values.len() as u64,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index });
        }
        Ok(Self { extent, values })
    }

    pub fn extent(&self) -> Extent3D {
        self.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stats(&self) -> VolumeStats {
        compute_stats(self.values.len(), |i| self.values[i])
    }
}

/// One z-slice as a row-major 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}
