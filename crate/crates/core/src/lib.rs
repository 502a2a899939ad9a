//! Desk-scale toolkit for volumetric electron-microscopy processing.
//!
//! The crate covers the span from raw cutout download to graph analysis:
//!
//! * [`volume`] — dense 3D voxel grids, slice extraction, statistics, and
//!   file IO (binary PGM stacks, raw payloads with JSON sidecars).
//! * [`gradient`] — a 3x3x3 Sobel operator for volumes, L_p gradient
//!   magnitudes, and mean/sigma threshold binarization.
//! * [`graph`] — a compact offset-array graph over a single packed edge
//!   array, with common-neighbor dot products and connected components.
//! * [`ingest`] — extent partitioning into z-slab cutouts, TSV chunk
//!   manifests, and parallel HTTP fetch with retry/backoff assembly.

pub mod gradient;
pub mod graph;
pub mod ingest;
pub mod volume;

pub use gradient::{binarize, gradient, magnitude_lp, sobel_kernel, Axis, BinaryVolume,
                   GradientField, NormOrder, Polarity, SobelKernel3D};
pub use graph::{build_from_binary_volume, build_from_edge_list, CompactGraph, Connectivity};
pub use ingest::{plan_chunks, ChunkManifest, CutoutSpec, FetchPolicy};
pub use volume::{Extent3D, FloatVolume3D, SliceImage, Volume3D, VolumeStats};
