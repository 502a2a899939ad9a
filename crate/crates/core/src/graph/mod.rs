//! Compact undirected graphs: a sorted vertex-id array, per-vertex
//! offsets, and all adjacencies packed into one flat 64-bit array.
//!
//! The layout deliberately avoids anything proportional to V x V:
//!
//! * `vertex_ids` — V sorted 64-bit identifiers (ids are arbitrary, not
//!   forced dense; volume-derived graphs use sparse flat voxel indices),
//! * `offsets` — V+1 indices into the edge array, `offsets[0] = 0`,
//! * `edges` — adjacent vertex ids, strictly ascending within each
//!   vertex's range, each undirected edge stored in both directions.
//!
//! Storage-slot accounting is `edges.len() + 2 * V`: the edge slots plus
//! one id and one offset entry per vertex ([`CompactGraph::memory_footprint`]).
//!
//! Because every neighbor range is sorted, the common-neighbor count
//! ("dot product") of two vertices is a single merge scan over their two
//! ranges — no allocation, no adjacency matrix.

use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;

use thiserror::Error;

use crate::gradient::BinaryVolume;

mod io;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown vertex {0}")]
    UnknownVertex(u64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Input edge list; pairs are undirected, duplicates and self-loops are
/// tolerated and cleaned up at build time.
pub type EdgeList = Vec<(u64, u64)>;

/// Voxel adjacency stencil: face (6), face+edge (18), or full (26).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self, GraphError> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            other => Err(GraphError::InvalidParameter(format!(
                "connectivity must be 6, 18, or 26, got {other}"
            ))),
        }
    }

    /// Maximum L1 length of an offset in the stencil.
    fn max_l1(self) -> u64 {
        match self {
            Self::Six => 1,
            Self::Eighteen => 2,
            Self::TwentySix => 3,
        }
    }
}

/// Component labeling: `labels[i]` is the component id of
/// `vertex_ids[i]`. Ids are dense `0..count`, assigned in order of each
/// component's smallest vertex id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub labels: Vec<u64>,
    pub count: u64,
}

impl ComponentLabeling {
    /// Vertex count of every component, indexed by component id.
    pub fn component_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.count as usize];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn largest_component_size(&self) -> u64 {
        self.component_sizes().into_iter().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CompactGraph {
    vertex_ids: Vec<u64>,
    offsets: Vec<u64>,
    edges: Vec<u64>,
    node_props: Option<Vec<Vec<u8>>>,
    edge_props: Option<Vec<Vec<u8>>>,
}

impl CompactGraph {
    /// The empty graph.
    pub fn empty() -> Self {
        Self {
            offsets: vec![0],
            ..Self::default()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_ids.len()
    }

    /// Stored directed adjacency entries (2x the undirected edge count).
    pub fn edge_slot_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_ids(&self) -> &[u64] {
        &self.vertex_ids
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn edges(&self) -> &[u64] {
        &self.edges
    }

    /// Position of `v` in the sorted vertex array.
    pub fn index_of(&self, v: u64) -> Option<usize> {
        self.vertex_ids.binary_search(&v).ok()
    }

    fn require_index(&self, v: u64) -> Result<usize, GraphError> {
        self.index_of(v).ok_or(GraphError::UnknownVertex(v))
    }

    fn range_of(&self, index: usize) -> &[u64] {
        &self.edges[self.offsets[index] as usize..self.offsets[index + 1] as usize]
    }

    /// Ascending adjacent vertex ids of `v`.
    pub fn neighbors(&self, v: u64) -> Result<&[u64], GraphError> {
        Ok(self.range_of(self.require_index(v)?))
    }

    pub fn degree(&self, v: u64) -> Result<usize, GraphError> {
        Ok(self.neighbors(v)?.len())
    }

    /// Count of common adjacent vertices of `u` and `v`, by scanning the
    /// two sorted neighbor ranges in unison. Equivalent to the dot
    /// product of the two adjacency rows, without materializing them.
    pub fn dot_product(&self, u: u64, v: u64) -> Result<u64, GraphError> {
        let a = self.neighbors(u)?;
        let b = self.neighbors(v)?;
        let (mut i, mut j, mut count) = (0usize, 0usize, 0u64);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(count)
    }

    /// Storage slots used by the topology: `edges.len() + 2 * V`
    /// (edge slots, vertex ids, per-vertex offsets).
    pub fn memory_footprint(&self) -> u64 {
        self.edges.len() as u64 + 2 * self.vertex_ids.len() as u64
    }

    /// Attach one opaque property record per vertex.
    pub fn attach_node_props(mut self, props: Vec<Vec<u8>>) -> Result<Self, GraphError> {
        if props.len() != self.vertex_ids.len() {
            return Err(GraphError::InvalidParameter(format!(
                "{} node property records for {} vertices",
                props.len(),
                self.vertex_ids.len()
            )));
        }
        self.node_props = Some(props);
        Ok(self)
    }

    /// Attach one opaque property record per edge slot.
    pub fn attach_edge_props(mut self, props: Vec<Vec<u8>>) -> Result<Self, GraphError> {
        if props.len() != self.edges.len() {
            return Err(GraphError::InvalidParameter(format!(
                "{} edge property records for {} edge slots",
                props.len(),
                self.edges.len()
            )));
        }
        self.edge_props = Some(props);
        Ok(self)
    }

    /// Property attached to vertex `v`, if node properties are present.
    pub fn node_prop(&self, v: u64) -> Result<Option<&[u8]>, GraphError> {
        let i = self.require_index(v)?;
        Ok(self.node_props.as_ref().map(|p| p[i].as_slice()))
    }

    /// Property attached to edge slot `slot`, if edge properties are present.
    pub fn edge_prop(&self, slot: usize) -> Result<Option<&[u8]>, GraphError> {
        if slot >= self.edges.len() {
            return Err(GraphError::InvalidParameter(format!(
                "edge slot {slot} out of range ({} slots)",
                self.edges.len()
            )));
        }
        Ok(self.edge_props.as_ref().map(|p| p[slot].as_slice()))
    }

    pub fn node_props(&self) -> Option<&[Vec<u8>]> {
        self.node_props.as_deref()
    }

    pub fn edge_props(&self) -> Option<&[Vec<u8>]> {
        self.edge_props.as_deref()
    }

    /// Label vertices by connected component (breadth-first over the
    /// adjacency ranges). Scanning unvisited vertices in ascending id
    /// order makes ids dense and ordered by smallest member.
    pub fn connected_components(&self) -> ComponentLabeling {
        const UNLABELED: u64 = u64::MAX;
        let v = self.vertex_ids.len();
        let mut labels = vec![UNLABELED; v];
        let mut next = 0u64;
        let mut queue = VecDeque::new();
        for start in 0..v {
            if labels[start] != UNLABELED {
                continue;
            }
            labels[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for &nb in self.range_of(i) {
                    let j = self
                        .index_of(nb)
                        .expect("edge endpoints are vertices by construction");
                    if labels[j] == UNLABELED {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            next += 1;
        }
        ComponentLabeling {
            labels,
            count: next,
        }
    }

    /// Build from sorted distinct vertex ids and unique normalized pairs
    /// (`u < v`, both present in `vertex_ids`). Each pair lands in both
    /// endpoints' ranges; ranges come out sorted by construction order
    /// plus a per-range sort.
    fn from_vertices_and_pairs(vertex_ids: Vec<u64>, pairs: &[(u64, u64)]) -> Self {
        let v = vertex_ids.len();
        let rank = |id: u64| -> usize {
            vertex_ids
                .binary_search(&id)
                .expect("pair endpoints are vertices")
        };

        let mut degrees = vec![0u64; v];
        for &(a, b) in pairs {
            degrees[rank(a)] += 1;
            degrees[rank(b)] += 1;
        }
        let mut offsets = Vec::with_capacity(v + 1);
        offsets.push(0u64);
        for d in &degrees {
            offsets.push(offsets.last().unwrap() + d);
        }

        let mut edges = vec![0u64; *offsets.last().unwrap() as usize];
        let mut cursor: Vec<u64> = offsets[..v].to_vec();
        for &(a, b) in pairs {
            let (ra, rb) = (rank(a), rank(b));
            edges[cursor[ra] as usize] = b;
            cursor[ra] += 1;
            edges[cursor[rb] as usize] = a;
            cursor[rb] += 1;
        }
        for i in 0..v {
            edges[offsets[i] as usize..offsets[i + 1] as usize].sort_unstable();
        }

        let g = Self {
            vertex_ids,
            offsets,
            edges,
            node_props: None,
            edge_props: None,
        };
        debug_assert!(g.validate().is_ok());
        g
    }

    /// Check every structural invariant; used on untrusted input (file
    /// loads) and in debug builds after construction.
    pub fn validate(&self) -> Result<(), GraphError> {
        let invalid = |msg: String| GraphError::InvalidParameter(msg);
        let v = self.vertex_ids.len();
        if self.offsets.len() != v + 1 {
            return Err(invalid(format!(
                "offsets length {} != vertex count {v} + 1",
                self.offsets.len()
            )));
        }
        if self.offsets[0] != 0 {
            return Err(invalid("offsets[0] != 0".into()));
        }
        if *self.offsets.last().unwrap() != self.edges.len() as u64 {
            return Err(invalid("offsets end != edge array length".into()));
        }
        if !self.vertex_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("vertex ids not strictly ascending".into()));
        }
        if !self.offsets.windows(2).all(|w| w[0] <= w[1]) {
            return Err(invalid("offsets not nondecreasing".into()));
        }
        for i in 0..v {
            let range = self.range_of(i);
            if !range.windows(2).all(|w| w[0] < w[1]) {
                return Err(invalid(format!(
                    "neighbor range of vertex {} not strictly ascending",
                    self.vertex_ids[i]
                )));
            }
            for &nb in range {
                if nb == self.vertex_ids[i] {
                    return Err(invalid(format!("self-loop on vertex {nb}")));
                }
                let j = self
                    .index_of(nb)
                    .ok_or_else(|| invalid(format!("edge to unknown vertex {nb}")))?;
                if self.range_of(j).binary_search(&self.vertex_ids[i]).is_err() {
                    return Err(invalid(format!(
                        "asymmetric edge {} -> {nb}",
                        self.vertex_ids[i]
                    )));
                }
            }
        }
        if let Some(p) = &self.node_props {
            if p.len() != v {
                return Err(invalid("node property count != vertex count".into()));
            }
        }
        if let Some(p) = &self.edge_props {
            if p.len() != self.edges.len() {
                return Err(invalid("edge property count != edge slot count".into()));
            }
        }
        Ok(())
    }
}

/// Build a graph from raw undirected pairs. Self-loops are dropped,
/// duplicate edges collapse, and the vertex set is exactly the distinct
/// endpoints that survive.
pub fn build_from_edge_list(pairs: &[(u64, u64)]) -> CompactGraph {
    let mut unique = BTreeSet::new();
    for &(a, b) in pairs {
        if a == b {
            continue;
        }
        unique.insert((a.min(b), a.max(b)));
    }
    if unique.is_empty() {
        return CompactGraph::empty();
    }
    let mut vertex_ids = BTreeSet::new();
    for &(a, b) in &unique {
        vertex_ids.insert(a);
        vertex_ids.insert(b);
    }
    let pairs: Vec<(u64, u64)> = unique.into_iter().collect();
    CompactGraph::from_vertices_and_pairs(vertex_ids.into_iter().collect(), &pairs)
}

/// Build the voxel adjacency graph of a binarized volume: one vertex per
/// foreground voxel (id = flat voxel index), one undirected edge between
/// foreground voxels whose offset lies in the connectivity stencil.
/// Isolated foreground voxels are kept as degree-zero vertices.
pub fn build_from_binary_volume(b: &BinaryVolume, connectivity: Connectivity) -> CompactGraph {
    let e = b.extent();
    let vertex_ids = b.foreground_indices();
    if vertex_ids.is_empty() {
        return CompactGraph::empty();
    }

    // Positive-direction half of the stencil, so each edge is found once.
    let mut stencil = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let l1 = (dx.abs() + dy.abs() + dz.abs()) as u64;
                if l1 == 0 || l1 > connectivity.max_l1() {
                    continue;
                }
                if (dz, dy, dx) > (0, 0, 0) {
                    stencil.push((dx, dy, dz));
                }
            }
        }
    }

    let mut pairs = Vec::new();
    for &flat in &vertex_ids {
        let (x, y, z) = e.coords_of(flat);
        for &(dx, dy, dz) in &stencil {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            let nz = z as i64 + dz;
            if nx < 0 || ny < 0 || nz < 0 {
                continue;
            }
            let (nx, ny, nz) = (nx as u64, ny as u64, nz as u64);
            if !e.contains(nx, ny, nz) {
                continue;
            }
            let nb = e.flat_index(nx, ny, nz);
            if b.get_flat(nb as usize) {
                pairs.push((flat.min(nb), flat.max(nb)));
            }
        }
    }
    CompactGraph::from_vertices_and_pairs(vertex_ids, &pairs)
}
