//! Chunked cutout ingest: partition an extent into z-slab cutouts, write
//! and read line-oriented TSV manifests, and fetch chunks over HTTP.
//!
//! Manifests are one chunk per line so a line-oriented distributed runner
//! can consume the same file unchanged:
//!
//! ```text
//! chunk_id \t token \t resolution \t x0 \t x1 \t y0 \t y1 \t z0 \t z1
//! ```
//!
//! Chunks split only along z (the slice axis of EM stacks); every chunk
//! spans the full x/y extent.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::volume::{Extent3D, VolumeError};

mod fetch;

pub use fetch::{fetch_all, fetch_chunk, FetchPolicy};

/// Cutout URL shape used when no template is configured. The format
/// segment (`raw`) and host are plain configuration; any server that
/// answers GET with the raw voxel payload works.
pub const DEFAULT_CUTOUT_TEMPLATE: &str =
    "http://openconnecto.me/ocp/ca/{token}/raw/{res}/{x0},{x1}/{y0},{y1}/{z0},{z1}/";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("url template must contain {placeholder} exactly once (found {count} occurrences)")]
    Template {
        placeholder: &'static str,
        count: usize,
    },
    #[error("{path}:{line}: {msg}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error("chunk {chunk_id}: permanent http status {status}")]
    HttpStatus { chunk_id: u64, status: u16 },
    #[error("chunk {chunk_id}: payload is {got} bytes, cutout extent wants {expected}")]
    PayloadSize {
        chunk_id: u64,
        expected: u64,
        got: u64,
    },
    #[error("chunk {chunk_id}: fetch failed after {attempts} attempt(s): {last_error}")]
    FetchFailed {
        chunk_id: u64,
        attempts: u32,
        last_error: String,
    },
    #[error("assembly failed for chunk(s) {}", summarize_failures(failures))]
    AssemblyFailed { failures: Vec<(u64, String)> },
    #[error("http client setup failed: {0}")]
    ClientSetup(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

fn summarize_failures(failures: &[(u64, String)]) -> String {
    let mut s = String::new();
    for (i, (id, cause)) in failures.iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "{id} ({cause})");
    }
    s
}

impl IngestError {
    /// Chunk ids named by an [`IngestError::AssemblyFailed`] error.
    pub fn failed_chunk_ids(&self) -> Vec<u64> {
        match self {
            IngestError::AssemblyFailed { failures } => {
                failures.iter().map(|(id, _)| *id).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// One cutout to fetch: dataset token, resolution level, and extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutoutSpec {
    pub chunk_id: u64,
    pub token: String,
    pub resolution: u32,
    pub extent: Extent3D,
}

/// Ordered cutouts that tile a source extent exactly: pairwise disjoint,
/// union equal. Validated on every construction path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkManifest {
    entries: Vec<CutoutSpec>,
    source_extent: Extent3D,
}

impl ChunkManifest {
    pub fn new(entries: Vec<CutoutSpec>) -> Result<Self, IngestError> {
        if entries.is_empty() {
            return Err(IngestError::ManifestInvalid(
                "manifest contains no entries".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for spec in &entries {
            if !seen.insert(spec.chunk_id) {
                return Err(IngestError::ManifestInvalid(format!(
                    "duplicate chunk_id {}",
                    spec.chunk_id
                )));
            }
            if spec.token.is_empty() || spec.token.contains(['\t', '\n', '\r']) {
                return Err(IngestError::ManifestInvalid(format!(
                    "token {:?} of chunk {} is empty or contains tabs/newlines",
                    spec.token, spec.chunk_id
                )));
            }
        }

        let first = entries[0].extent;
        let (mut x0, mut x1) = (first.x0(), first.x1());
        let (mut y0, mut y1) = (first.y0(), first.y1());
        let (mut z0, mut z1) = (first.z0(), first.z1());
        let mut total = 0u64;
        for spec in &entries {
            let e = spec.extent;
            x0 = x0.min(e.x0());
            x1 = x1.max(e.x1());
            y0 = y0.min(e.y0());
            y1 = y1.max(e.y1());
            z0 = z0.min(e.z0());
            z1 = z1.max(e.z1());
            total = total.checked_add(e.volume_count()).ok_or_else(|| {
                IngestError::ManifestInvalid("total voxel count overflows u64".into())
            })?;
        }
        let source_extent = Extent3D::new(x0, x1, y0, y1, z0, z1)?;
        if total != source_extent.volume_count() {
            return Err(IngestError::ManifestInvalid(format!(
                "entries cover {total} voxels but the bounding extent {source_extent} has {}",
                source_extent.volume_count()
            )));
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.extent.intersects(&b.extent) {
                    return Err(IngestError::ManifestInvalid(format!(
                        "chunks {} and {} overlap",
                        a.chunk_id, b.chunk_id
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            source_extent,
        })
    }

    pub fn entries(&self) -> &[CutoutSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of all chunk extents.
    pub fn source_extent(&self) -> Extent3D {
        self.source_extent
    }
}

/// Partition `extent` into z-slabs of at most `slab_depth` slices, full
/// x/y per chunk. Chunk count is `ceil(dz / slab_depth)`; the last chunk
/// may be shallower.
pub fn plan_chunks(
    token: &str,
    resolution: u32,
    extent: Extent3D,
    slab_depth: u64,
) -> Result<ChunkManifest, IngestError> {
    if slab_depth < 1 {
        return Err(IngestError::InvalidParameter(
            "slab depth must be >= 1".into(),
        ));
    }
    let mut entries = Vec::new();
    let mut z = extent.z0();
    while z < extent.z1() {
        let z_end = (z + slab_depth).min(extent.z1());
        entries.push(CutoutSpec {
            chunk_id: entries.len() as u64,
            token: token.to_owned(),
            resolution,
            extent: Extent3D::new(extent.x0(), extent.x1(), extent.y0(), extent.y1(), z, z_end)?,
        });
        z = z_end;
    }
    ChunkManifest::new(entries)
}

const PLACEHOLDERS: [&str; 8] = [
    "{token}", "{res}", "{x0}", "{x1}", "{y0}", "{y1}", "{z0}", "{z1}",
];

/// Substitute the cutout placeholders into a URL template. The template
/// must contain each of the eight placeholders exactly once; values are
/// substituted literally (no URL-encoding), and unknown `{...}` spans are
/// left untouched. Substitution is a single left-to-right pass, so values
/// are never rescanned for placeholders.
pub fn cutout_url(spec: &CutoutSpec, template: &str) -> Result<String, IngestError> {
    for placeholder in PLACEHOLDERS {
        let count = template.matches(placeholder).count();
        if count != 1 {
            return Err(IngestError::Template { placeholder, count });
        }
    }
    let e = spec.extent;
    let subs: [(&str, String); 8] = [
        ("{token}", spec.token.clone()),
        ("{res}", spec.resolution.to_string()),
        ("{x0}", e.x0().to_string()),
        ("{x1}", e.x1().to_string()),
        ("{y0}", e.y0().to_string()),
        ("{y1}", e.y1().to_string()),
        ("{z0}", e.z0().to_string()),
        ("{z1}", e.z1().to_string()),
    ];
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in &subs {
            if let Some(stripped) = tail.strip_prefix(name) {
                out.push_str(value);
                rest = stripped;
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Dataset info endpoint, e.g.
/// `info_url("http://openconnecto.me", "kasthuri11")` ->
/// `http://openconnecto.me/ocp/ca/kasthuri11/info/`.
pub fn info_url(base: &str, token: &str) -> String {
    format!("{base}/ocp/ca/{token}/info/")
}

/// Write the manifest as TSV, one chunk per line.
pub fn write_manifest(m: &ChunkManifest, path: &Path) -> Result<(), IngestError> {
    let mut out = String::new();
    for spec in &m.entries {
        let e = spec.extent;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            spec.chunk_id,
            spec.token,
            spec.resolution,
            e.x0(),
            e.x1(),
            e.y0(),
            e.y1(),
            e.z0(),
            e.z1()
        );
    }
    fs::write(path, out).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Exact inverse of [`write_manifest`]. Parse errors carry the 1-based
/// line number; the reconstructed manifest is re-validated (tiling,
/// unique ids, non-empty).
pub fn read_manifest(path: &Path) -> Result<ChunkManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parse_err = |line: usize, msg: String| IngestError::ManifestParse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(parse_err(
                lineno,
                format!("expected 9 tab-separated fields, found {}", fields.len()),
            ));
        }
        let uint = |s: &str, what: &str| -> Result<u64, IngestError> {
            s.parse()
                .map_err(|_| parse_err(lineno, format!("bad {what} {s:?}")))
        };
        let chunk_id = uint(fields[0], "chunk_id")?;
        let token = fields[1].to_owned();
        let resolution = uint(fields[2], "resolution")? as u32;
        let coords: Vec<u64> = fields[3..9]
            .iter()
            .map(|s| uint(s, "coordinate"))
            .collect::<Result<_, _>>()?;
        let extent = Extent3D::new(coords[0], coords[1], coords[2], coords[3], coords[4], coords[5])
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        entries.push(CutoutSpec {
            chunk_id,
            token,
            resolution,
            extent,
        });
    }
    ChunkManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ext(x0: u64, x1: u64, y0: u64, y1: u64, z0: u64, z1: u64) -> Extent3D {
        Extent3D::new(x0, x1, y0, y1, z0, z1).unwrap()
    }

    #[test]
    fn plan_splits_depth_100_into_7_slabs() {
        let m = plan_chunks("t", 1, ext(0, 8, 0, 8, 0, 100), 16).unwrap();
        assert_eq!(m.len(), 7);
        assert_eq!(m.entries()[6].extent.dz(), 4);
        assert_eq!(m.source_extent(), ext(0, 8, 0, 8, 0, 100));
        for (i, spec) in m.entries().iter().enumerate() {
            assert_eq!(spec.chunk_id, i as u64);
            assert_eq!(spec.extent.z0(), (i as u64) * 16);
        }
    }

    #[test]
    fn plan_full_kasthuri_z_range() {
        // 10752 x 13312 x [1,1850): 1849 slices -> 116 slabs of 16.
        let m = plan_chunks("kasthuri11", 1, ext(0, 10752, 0, 13312, 1, 1850), 16).unwrap();
        assert_eq!(m.len(), 116);
    }

    #[test]
    fn plan_single_chunk_when_slab_covers_extent() {
        let e = ext(0, 4, 0, 4, 5, 15);
        let m = plan_chunks("t", 0, e, 10).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries()[0].extent, e);
    }

    #[test]
    fn plan_rejects_zero_slab() {
        assert!(matches!(
            plan_chunks("t", 0, ext(0, 1, 0, 1, 0, 1), 0),
            Err(IngestError::InvalidParameter(_))
        ));
    }

    #[test]
    fn cutout_url_substitutes_all_fields() {
        let spec = CutoutSpec {
            chunk_id: 0,
            token: "kasthuri11".into(),
            resolution: 1,
            extent: ext(0, 512, 0, 512, 1, 17),
        };
        let url =
            cutout_url(&spec, "http://h/ocp/ca/{token}/raw/{res}/{x0},{x1}/{y0},{y1}/{z0},{z1}/")
                .unwrap();
        assert_eq!(url, "http://h/ocp/ca/kasthuri11/raw/1/0,512/0,512/1,17/");
    }

    #[test]
    fn cutout_url_missing_placeholder() {
        let spec = CutoutSpec {
            chunk_id: 0,
            token: "t".into(),
            resolution: 0,
            extent: ext(0, 1, 0, 1, 0, 1),
        };
        let err = cutout_url(&spec, "http://h/{token}/{res}/{x0},{x1}/{y0},{y1}/{z0}/").unwrap_err();
        assert!(matches!(
            err,
            IngestError::Template { placeholder: "{z1}", count: 0 }
        ));
    }

    #[test]
    fn cutout_url_duplicate_placeholder() {
        let spec = CutoutSpec {
            chunk_id: 0,
            token: "t".into(),
            resolution: 0,
            extent: ext(0, 1, 0, 1, 0, 1),
        };
        let err = cutout_url(
            &spec,
            "http://h/{token}/{token}/{res}/{x0},{x1}/{y0},{y1}/{z0},{z1}/",
        )
        .unwrap_err();
        assert!(matches!(
            err,
            IngestError::Template { placeholder: "{token}", count: 2 }
        ));
    }

    #[test]
    fn cutout_url_leaves_unknown_braces() {
        let spec = CutoutSpec {
            chunk_id: 0,
            token: "t".into(),
            resolution: 2,
            extent: ext(0, 1, 0, 2, 0, 3),
        };
        let url = cutout_url(
            &spec,
            "http://h/{fmt}/{token}/{res}/{x0},{x1}/{y0},{y1}/{z0},{z1}/",
        )
        .unwrap();
        assert_eq!(url, "http://h/{fmt}/t/2/0,1/0,2/0,3/");
    }

    #[test]
    fn info_url_matches_known_endpoint() {
        assert_eq!(
            info_url("http://openconnecto.me", "kasthuri11"),
            "http://openconnecto.me/ocp/ca/kasthuri11/info/"
        );
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let m = plan_chunks("kasthuri11", 1, ext(0, 8, 0, 8, 0, 100), 16).unwrap();
        write_manifest(&m, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().next().unwrap(), "0\tkasthuri11\t1\t0\t8\t0\t8\t0\t16");
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn manifest_line_with_8_fields_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(
            &path,
            "0\tt\t1\t0\t8\t0\t8\t0\t16\n1\tt\t1\t0\t8\t0\t8\t16\n",
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err();
        match err {
            IngestError::ManifestParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "").unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(IngestError::ManifestInvalid(_))
        ));
    }

    #[test]
    fn overlapping_manifest_rejected() {
        let mk = |id, z0, z1| CutoutSpec {
            chunk_id: id,
            token: "t".into(),
            resolution: 0,
            extent: ext(0, 4, 0, 4, z0, z1),
        };
        let err = ChunkManifest::new(vec![mk(0, 0, 10), mk(1, 5, 15)]).unwrap_err();
        assert!(matches!(err, IngestError::ManifestInvalid(_)));
    }

    #[test]
    fn gapped_manifest_rejected() {
        let mk = |id, z0, z1| CutoutSpec {
            chunk_id: id,
            token: "t".into(),
            resolution: 0,
            extent: ext(0, 4, 0, 4, z0, z1),
        };
        assert!(ChunkManifest::new(vec![mk(0, 0, 4), mk(1, 8, 12)]).is_err());
    }

    #[test]
    fn duplicate_chunk_ids_rejected() {
        let mk = |id, z0, z1| CutoutSpec {
            chunk_id: id,
            token: "t".into(),
            resolution: 0,
            extent: ext(0, 4, 0, 4, z0, z1),
        };
        assert!(ChunkManifest::new(vec![mk(3, 0, 4), mk(3, 4, 8)]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn planned_chunks_tile_exactly(
                x0 in 0u64..50, dx in 1u64..40,
                y0 in 0u64..50, dy in 1u64..40,
                z0 in 0u64..50, dz in 1u64..200,
                slab in 1u64..32,
            ) {
                let e = Extent3D::new(x0, x0 + dx, y0, y0 + dy, z0, z0 + dz).unwrap();
                let m = plan_chunks("t", 1, e, slab).unwrap();
                prop_assert_eq!(m.len() as u64, dz.div_ceil(slab));
                prop_assert_eq!(m.source_extent(), e);
                let total: u64 = m.entries().iter().map(|c| c.extent.volume_count()).sum();
                prop_assert_eq!(total, e.volume_count());
                // Each sample z belongs to exactly one chunk.
                for z in z0..z0 + dz {
                    let owners = m.entries().iter()
                        .filter(|c| z >= c.extent.z0() && z < c.extent.z1())
                        .count();
                    prop_assert_eq!(owners, 1);
                }
            }

            #[test]
            fn random_manifest_roundtrip(
                token in "[a-z][a-z0-9_]{0,12}",
                res in 0u32..8,
                z0 in 0u64..100, dz in 1u64..300,
                slab in 1u64..40,
            ) {
                let e = Extent3D::new(0, 7, 2, 9, z0, z0 + dz).unwrap();
                let m = plan_chunks(&token, res, e, slab).unwrap();
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("m.tsv");
                write_manifest(&m, &path).unwrap();
                prop_assert_eq!(read_manifest(&path).unwrap(), m);
            }
        }
    }
}
