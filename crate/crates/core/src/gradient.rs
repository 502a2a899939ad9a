//! 3D Sobel gradients, L_p magnitudes, and mean/sigma binarization.
//!
//! The operator is a 3x3x3 kernel that differences along one axis and
//! smooths along the other two with the fixed profile
//!
//! ```text
//! 1 3 1
//! 3 6 3      (weights of the two smoothing axes)
//! 1 3 1
//! ```
//!
//! so the x-axis kernel has plane rows `(-1,0,1),(-3,0,3),(-1,0,1)` at
//! z-offset +-1 and `(-3,0,3),(-6,0,6),(-3,0,3)` at z-offset 0. The y and
//! z kernels permute the differentiation axis into place, preserving the
//! same weights. Border voxels sample with clamp-to-edge, which keeps the
//! output extent equal to the input extent and makes constant volumes
//! respond zero everywhere.
//!
//! Responses are accumulated in signed 64-bit integers, so convolution
//! output is bit-identical regardless of how many threads compute it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::volume::raw;
use crate::volume::{Extent3D, FloatVolume3D, Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum GradientError {
    #[error("norm order must be >= 1 or infinity, got {0}")]
    InvalidNormOrder(f64),
    #[error("component length {got} does not match extent volume count {expected}")]
    LengthMismatch { expected: u64, got: u64 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Differentiation axis of a Sobel kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Smoothing weights shared by the two non-differentiation axes.
/// Deliberately not a separable product (the center is 6, not 9).
const SMOOTH: [[i64; 3]; 3] = [[1, 3, 1], [3, 6, 3], [1, 3, 1]];

/// A 3x3x3 directional-derivative kernel, indexed `[dz][dy][dx]` with
/// each offset in `{-1, 0, 1}` mapped to `{0, 1, 2}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SobelKernel3D {
    axis: Axis,
    weights: [[[i64; 3]; 3]; 3],
}

impl SobelKernel3D {
    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn weights(&self) -> &[[[i64; 3]; 3]; 3] {
        &self.weights
    }

    /// Weight at signed offsets, each in `-1..=1`.
    pub fn weight(&self, dz: i32, dy: i32, dx: i32) -> i64 {
        self.weights[(dz + 1) as usize][(dy + 1) as usize][(dx + 1) as usize]
    }

    pub fn sum(&self) -> i64 {
        self.weights.iter().flatten().flatten().sum()
    }
}

/// The Sobel kernel differencing along `axis`.
pub fn sobel_kernel(axis: Axis) -> SobelKernel3D {
    let mut weights = [[[0i64; 3]; 3]; 3];
    for dz in 0..3 {
        for dy in 0..3 {
            for dx in 0..3 {
                weights[dz][dy][dx] = match axis {
                    Axis::X => (dx as i64 - 1) * SMOOTH[dz][dy],
                    Axis::Y => (dy as i64 - 1) * SMOOTH[dz][dx],
                    Axis::Z => (dz as i64 - 1) * SMOOTH[dy][dx],
                };
            }
        }
    }
    SobelKernel3D { axis, weights }
}

/// Convolve a volume with a 3x3x3 kernel, clamp-to-edge at borders.
///
/// Output has one signed response per voxel in the same flat order as the
/// input. Slices are computed in parallel; integer accumulation keeps the
/// result independent of the parallelism degree.
pub fn convolve3d(v: &Volume3D, k: &SobelKernel3D) -> Vec<i64> {
    let e = v.extent();
    let nx = e.dx() as usize;
    let ny = e.dy() as usize;
    let nz = e.dz() as usize;
    let plane = nx * ny;
    let vox = v.voxels();
    let w = k.weights();

    let mut out = vec![0i64; vox.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let zoff = [
            z.saturating_sub(1) * plane,
            z * plane,
            (z + 1).min(nz - 1) * plane,
        ];
        for y in 0..ny {
            let yoff = [y.saturating_sub(1) * nx, y * nx, (y + 1).min(ny - 1) * nx];
            for x in 0..nx {
                let xoff = [x.saturating_sub(1), x, (x + 1).min(nx - 1)];
                let mut acc = 0i64;
                for dz in 0..3 {
                    for dy in 0..3 {
                        let base = zoff[dz] + yoff[dy];
                        let row = &w[dz][dy];
                        for dx in 0..3 {
                            if row[dx] != 0 {
                                acc += row[dx] * vox[base + xoff[dx]] as i64;
                            }
                        }
                    }
                }
                slab[y * nx + x] = acc;
            }
        }
    });
    out
}

/// Per-voxel signed gradient triple produced by the three axis kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradientField {
    extent: Extent3D,
    gx: Vec<i64>,
    gy: Vec<i64>,
    gz: Vec<i64>,
}

impl GradientField {
    pub fn from_components(
        extent: Extent3D,
        gx: Vec<i64>,
        gy: Vec<i64>,
        gz: Vec<i64>,
    ) -> Result<Self, GradientError> {
        let expected = extent.volume_count();
        for comp in [&gx, &gy, &gz] {
            if comp.len() as u64 != expected {
                return Err(GradientError::LengthMismatch {
                    expected,
                    got: comp.len() as u64,
                });
            }
        }
        Ok(Self { extent, gx, gy, gz })
    }

    pub fn extent(&self) -> Extent3D {
        self.extent
    }
    pub fn gx(&self) -> &[i64] {
        &self.gx
    }
    pub fn gy(&self) -> &[i64] {
        &self.gy
    }
    pub fn gz(&self) -> &[i64] {
        &self.gz
    }
}

/// Apply all three axis kernels to a volume.
pub fn gradient(v: &Volume3D) -> GradientField {
    GradientField {
        extent: v.extent(),
        gx: convolve3d(v, &sobel_kernel(Axis::X)),
        gy: convolve3d(v, &sobel_kernel(Axis::Y)),
        gz: convolve3d(v, &sobel_kernel(Axis::Z)),
    }
}

/// Norm order for the gradient magnitude: finite `p >= 1` or infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl FromStr for NormOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(NormOrder::Infinity);
        }
        let p: f64 = s.parse().map_err(|_| format!("bad norm order {s:?}"))?;
        if !p.is_finite() || p < 1.0 {
            return Err(format!("norm order must be >= 1 or \"inf\", got {s}"));
        }
        Ok(NormOrder::Finite(p))
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Finite(p) => write!(f, "{p}"),
            NormOrder::Infinity => write!(f, "inf"),
        }
    }
}

/// Per-voxel `(|gx|^p + |gy|^p + |gz|^p)^(1/p)`; the component maximum
/// for `p = inf`. Large `p` is computed on component ratios scaled by the
/// maximum, so the result stays finite for any representable field.
pub fn magnitude_lp(g: &GradientField, p: NormOrder) -> Result<FloatVolume3D, GradientError> {
    if let NormOrder::Finite(p) = p {
        if !p.is_finite() || p < 1.0 {
            return Err(GradientError::InvalidNormOrder(p));
        }
    }
    let n = g.gx.len();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let a = (g.gx[i] as f64).abs();
        let b = (g.gy[i] as f64).abs();
        let c = (g.gz[i] as f64).abs();
        let m = match p {
            NormOrder::Infinity => a.max(b).max(c),
            NormOrder::Finite(p) => {
                if p == 1.0 {
                    a + b + c
                } else if p == 2.0 {
                    (a * a + b * b + c * c).sqrt()
                } else {
                    // Scale by the largest component so x^p never
                    // overflows, whatever p is.
                    let top = a.max(b).max(c);
                    if top == 0.0 {
                        0.0
                    } else {
                        let s = (a / top).powf(p) + (b / top).powf(p) + (c / top).powf(p);
                        top * s.powf(1.0 / p)
                    }
                }
            }
        };
        values.push(m);
    }
    Ok(FloatVolume3D::from_values(g.extent, values)?)
}

/// Which side of the threshold counts as foreground.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Above,
    Below,
}

/// One foreground/background flag per voxel, bit-packed, same flat order
/// as [`Volume3D`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryVolume {
    extent: Extent3D,
    words: Vec<u64>,
    len: usize,
}

impl BinaryVolume {
    pub fn all_background(extent: Extent3D) -> Result<Self, VolumeError> {
        let len = extent.alloc_len()?;
        Ok(Self {
            extent,
            words: vec![0u64; len.div_ceil(64)],
            len,
        })
    }

    /// Nonzero voxels of `v` become foreground.
    pub fn from_volume(v: &Volume3D) -> Self {
        let mut b = Self::all_background(v.extent()).expect("volume is already materialized");
        for (i, &vox) in v.voxels().iter().enumerate() {
            if vox != 0 {
                b.set_flat(i, true);
            }
        }
        b
    }

    /// Render as an 8-bit volume (foreground/background sample values).
    pub fn to_volume(&self, foreground: u8, background: u8) -> Volume3D {
        let voxels = (0..self.len)
            .map(|i| if self.get_flat(i) { foreground } else { background })
            .collect();
        Volume3D::from_voxels(self.extent, voxels).expect("lengths match by construction")
    }

    pub fn extent(&self) -> Extent3D {
        self.extent
    }

    /// Number of voxels (foreground and background).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get_flat(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_flat(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn get(&self, x: u64, y: u64, z: u64) -> bool {
        self.get_flat(self.extent.flat_index(x, y, z) as usize)
    }

    pub fn foreground_count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Flat indices of foreground voxels, ascending.
    pub fn foreground_indices(&self) -> Vec<u64> {
        (0..self.len)
            .filter(|&i| self.get_flat(i))
            .map(|i| i as u64)
            .collect()
    }
}

/// Threshold a magnitude volume at `mean + k * stddev` (population sigma).
///
/// Foreground is strict: with `Polarity::Above` a voxel is foreground iff
/// its value is strictly greater than the threshold, so ties and the
/// degenerate sigma = 0 case go to background. `k` must be finite.
pub fn binarize(m: &FloatVolume3D, k: f64, polarity: Polarity) -> BinaryVolume {
    debug_assert!(k.is_finite());
    let stats = m.stats();
    let t = stats.mean + k * stats.stddev;
    let mut out =
        BinaryVolume::all_background(m.extent()).expect("volume is already materialized");
    for (i, &v) in m.values().iter().enumerate() {
        let fg = match polarity {
            Polarity::Above => v > t,
            Polarity::Below => v < t,
        };
        if fg {
            out.set_flat(i, true);
        }
    }
    out
}

/// Write a gradient field as a raw payload with dtype `i64x3`: planar
/// little-endian components, all gx then all gy then all gz.
pub fn write_gradient(g: &GradientField, path: &Path) -> Result<(), VolumeError> {
    let mut payload = Vec::with_capacity(g.gx.len() * 24);
    for comp in [&g.gx, &g.gy, &g.gz] {
        for v in comp {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    raw::write_payload(path, g.extent, raw::DTYPE_I64X3, &payload)
}

pub fn read_gradient(path: &Path) -> Result<GradientField, VolumeError> {
    let (extent, payload) = raw::read_payload(path, raw::DTYPE_I64X3, 24)?;
    let n = extent.volume_count() as usize;
    let decode = |section: &[u8]| -> Vec<i64> {
        section
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok(GradientField {
        extent,
        gx: decode(&payload[..n * 8]),
        gy: decode(&payload[n * 8..2 * n * 8]),
        gz: decode(&payload[2 * n * 8..]),
    })
}
