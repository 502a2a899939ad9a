//! Binary graph files.
//!
//! Layout (all integers little-endian u64 unless noted):
//!
//! ```text
//! magic            8 bytes, b"EMVXGRF1"
//! vertex_count     V
//! edge_slot_count  E
//! flags            bit 0: node props present, bit 1: edge props present
//! vertex_ids       V  x u64
//! offsets          (V+1) x u64
//! edges            E  x u64
//! node props       V records of (u64 length + bytes), if flagged
//! edge props       E records of (u64 length + bytes), if flagged
//! ```
//!
//! Loads reject bad magic, truncation, trailing bytes, and any file whose
//! arrays violate the structural invariants.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CompactGraph, GraphError};

const MAGIC: &[u8; 8] = b"EMVXGRF1";
const FLAG_NODE_PROPS: u64 = 1;
const FLAG_EDGE_PROPS: u64 = 2;

fn io_err(path: &Path, source: std::io::Error) -> GraphError {
    GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> GraphError {
    GraphError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        if self.data.len() - self.pos < n {
            return Err(format_err(
                self.path,
                format!("truncated at byte {} (need {n} more)", self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u64_array(&mut self, len: u64) -> Result<Vec<u64>, GraphError> {
        let len = usize::try_from(len)
            .map_err(|_| format_err(self.path, "array length overflows"))?;
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| {
            format_err(self.path, "array length overflows")
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn records(&mut self, count: usize) -> Result<Vec<Vec<u8>>, GraphError> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let len = self.u64()?;
            out.push(self.take(len as usize)?.to_vec());
        }
        Ok(out)
    }
}

impl CompactGraph {
    /// Serialize topology and properties to `path`.
    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&(self.vertex_ids.len() as u64).to_le_bytes());
        w.extend_from_slice(&(self.edges.len() as u64).to_le_bytes());
        let mut flags = 0u64;
        if self.node_props.is_some() {
            flags |= FLAG_NODE_PROPS;
        }
        if self.edge_props.is_some() {
            flags |= FLAG_EDGE_PROPS;
        }
        w.extend_from_slice(&flags.to_le_bytes());
        for arr in [&self.vertex_ids, &self.offsets, &self.edges] {
            for v in arr.iter() {
                w.extend_from_slice(&v.to_le_bytes());
            }
        }
        for props in [&self.node_props, &self.edge_props].into_iter().flatten() {
            for rec in props {
                w.extend_from_slice(&(rec.len() as u64).to_le_bytes());
                w.extend_from_slice(rec);
            }
        }
        let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        file.write_all(&w).map_err(|e| io_err(path, e))
    }

    /// Load a graph saved by [`save`](Self::save), validating every
    /// structural invariant.
    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let data = fs::read(path).map_err(|e| io_err(path, e))?;
        let mut r = Reader {
            data: &data,
            pos: 0,
            path,
        };
        if r.take(8)? != MAGIC {
            return Err(format_err(path, "bad magic (not a graph file)"));
        }
        let v = r.u64()?;
        let e = r.u64()?;
        let flags = r.u64()?;
        if flags & !(FLAG_NODE_PROPS | FLAG_EDGE_PROPS) != 0 {
            return Err(format_err(path, format!("unknown flags {flags:#x}")));
        }
        let vertex_ids = r.u64_array(v)?;
        let offsets = r.u64_array(v + 1)?;
        let edges = r.u64_array(e)?;
        let node_props = if flags & FLAG_NODE_PROPS != 0 {
            Some(r.records(v as usize)?)
        } else {
            None
        };
        let edge_props = if flags & FLAG_EDGE_PROPS != 0 {
            Some(r.records(e as usize)?)
        } else {
            None
        };
        if r.pos != data.len() {
            return Err(format_err(
                path,
                format!("{} trailing bytes after graph data", data.len() - r.pos),
            ));
        }
        let g = CompactGraph {
            vertex_ids,
            offsets,
            edges,
            node_props,
            edge_props,
        };
        g.validate()
            .map_err(|e| format_err(path, format!("invalid graph: {e}")))?;
        Ok(g)
    }
}
