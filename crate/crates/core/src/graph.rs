//! Temporal bidirectional bipartite graphs and mini-batches of them.
//!
//! One node per (sampled frame, detected object). Every object on sampled
//! frame `i` is linked in both directions to every object on sampled frame
//! `i + 1`; nothing else is linked. In particular the same object id on two
//! frames gets no dedicated identity edge beyond that complete bipartite
//! connection, and an empty sampled frame cuts the graph in two.
//!
//! Edges are stored as a flat directed list. An incoming-neighbor index
//! (compressed rows, sources ascending) is derived on construction.

use std::path::Path;

use crate::binio::{put_f64, put_u32, put_u64, ByteReader};
use crate::error::{HegError, Result};
use crate::features::FeatureSource;
use crate::numerics::Matrix;
use crate::scene::{sample_frames, VideoSequence};

/// Anything the message-passing layers can run over.
pub trait Neighborhoods {
    fn node_count(&self) -> usize;
    /// Sources of the edges ending at `p`. Callers guarantee `p < node_count`.
    fn neighbor_slice(&self, p: usize) -> &[usize];
}

/// Where a node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeOrigin {
    /// Position `i` of the frame among the sampled frames.
    pub frame_position: usize,
    pub frame_index: usize,
    pub object_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Adjacency {
    fn incoming(node_count: usize, edges: &[(usize, usize)]) -> Self {
        let mut counts = vec![0usize; node_count + 1];
        for &(_, dst) in edges {
            counts[dst + 1] += 1;
        }
        for i in 0..node_count {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut sources = vec![0usize; edges.len()];
        for &(src, dst) in edges {
            sources[cursor[dst]] = src;
            cursor[dst] += 1;
        }
        for p in 0..node_count {
            sources[counts[p]..counts[p + 1]].sort_unstable();
        }
        Self {
            offsets: counts,
            sources,
        }
    }

    fn of(&self, p: usize) -> &[usize] {
        &self.sources[self.offsets[p]..self.offsets[p + 1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBipartiteGraph {
    features: Matrix,
    origins: Vec<NodeOrigin>,
    edges: Vec<(usize, usize)>,
    partitions: Vec<Vec<usize>>,
    label: usize,
    adjacency: Adjacency,
}

/// Node and edge totals of one graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphStats {
    pub node_count: usize,
    pub directed_edge_count: usize,
    /// Nodes per sampled frame (x̄).
    pub mean_objects_per_frame: f64,
}

impl TemporalBipartiteGraph {
    /// Assembles a graph from its parts, checking index ranges and that the
    /// partitions cover every node exactly once.
    pub fn from_parts(
        features: Matrix,
        origins: Vec<NodeOrigin>,
        edges: Vec<(usize, usize)>,
        partitions: Vec<Vec<usize>>,
        label: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if origins.len() != n {
            return Err(HegError::Dimension(format!(
                "{n} feature rows but {} node origins",
                origins.len()
            )));
        }
        if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s >= n || d >= n) {
            return Err(HegError::Domain(format!(
                "edge ({s}, {d}) references a node outside 0..{n}"
            )));
        }
        let mut seen = vec![false; n];
        for (i, part) in partitions.iter().enumerate() {
            for &p in part {
                if p >= n || seen[p] {
                    return Err(HegError::Domain(format!(
                        "partition {i} lists node {p} out of range or twice"
                    )));
                }
                seen[p] = true;
                if origins[p].frame_position != i {
                    return Err(HegError::Domain(format!(
                        "node {p} is in partition {i} but originates at position {}",
                        origins[p].frame_position
                    )));
                }
            }
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(HegError::Domain(format!("node {p} belongs to no partition")));
        }
        let adjacency = Adjacency::incoming(n, &edges);
        Ok(Self {
            features,
            origins,
            edges,
            partitions,
            label,
            adjacency,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn origins(&self) -> &[NodeOrigin] {
        &self.origins
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Node sets `X_i`, one per sampled frame position.
    pub fn partitions(&self) -> &[Vec<usize>] {
        &self.partitions
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Same structure, different node features (same shape required).
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.features.rows() {
            return Err(HegError::Dimension(format!(
                "replacement features have {} rows, graph has {} nodes",
                features.rows(),
                self.features.rows()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Checks the bipartite structure: every edge joins adjacent partitions,
    /// every edge has its reverse, and each adjacent pair is completely
    /// connected.
    pub fn validate_structure(&self) -> Result<()> {
        let mut edge_set = std::collections::HashSet::with_capacity(self.edges.len());
        for &(s, d) in &self.edges {
            let (ps, pd) = (self.origins[s].frame_position, self.origins[d].frame_position);
            if ps.abs_diff(pd) != 1 {
                return Err(HegError::Domain(format!(
                    "edge ({s}, {d}) joins frame positions {ps} and {pd}"
                )));
            }
            if !edge_set.insert((s, d)) {
                return Err(HegError::Domain(format!("duplicate edge ({s}, {d})")));
            }
        }
        for &(s, d) in &self.edges {
            if !edge_set.contains(&(d, s)) {
                return Err(HegError::Domain(format!("edge ({s}, {d}) has no reverse")));
            }
        }
        if self.edges.len() != bipartite_edge_count(&self.partition_sizes()) {
            return Err(HegError::Domain(format!(
                "{} edges, expected {}",
                self.edges.len(),
                bipartite_edge_count(&self.partition_sizes())
            )));
        }
        Ok(())
    }

    pub fn partition_sizes(&self) -> Vec<usize> {
        self.partitions.iter().map(Vec::len).collect()
    }
}

impl Neighborhoods for TemporalBipartiteGraph {
    fn node_count(&self) -> usize {
        self.features.rows()
    }

    fn neighbor_slice(&self, p: usize) -> &[usize] {
        self.adjacency.of(p)
    }
}

/// `2 · Σ |X_i| · |X_{i+1}|`.
pub fn bipartite_edge_count(partition_sizes: &[usize]) -> usize {
    2 * partition_sizes
        .windows(2)
        .map(|w| w[0] * w[1])
        .sum::<usize>()
}

/// Builds the graph of a video from its detections on every `stride`-th
/// frame. Within a frame, nodes are ordered by object id.
pub fn build_graph(
    seq: &VideoSequence,
    features: &impl FeatureSource,
    stride: usize,
) -> Result<TemporalBipartiteGraph> {
    let frames = sample_frames(seq, stride)?;
    let dim = features.feature_dim();
    let mut data = Vec::new();
    let mut origins = Vec::new();
    let mut partitions = Vec::with_capacity(frames.len());
    for (position, &frame) in frames.iter().enumerate() {
        let mut part = Vec::new();
        for det in seq.detections_at(frame) {
            let row = features.feature(frame, det.object_id).ok_or_else(|| {
                HegError::Ingestion(format!(
                    "video {}: no feature row for frame {frame}, object {}",
                    seq.video_id, det.object_id
                ))
            })?;
            if row.len() != dim {
                return Err(HegError::Dimension(format!(
                    "video {}: feature row for frame {frame}, object {} has width {}, expected {dim}",
                    seq.video_id,
                    det.object_id,
                    row.len()
                )));
            }
            part.push(origins.len());
            origins.push(NodeOrigin {
                frame_position: position,
                frame_index: frame,
                object_id: det.object_id,
            });
            data.extend_from_slice(row);
        }
        partitions.push(part);
    }
    let mut edges = Vec::with_capacity(bipartite_edge_count(
        &partitions.iter().map(Vec::len).collect::<Vec<_>>(),
    ));
    for pair in partitions.windows(2) {
        for &u in &pair[0] {
            for &v in &pair[1] {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }
    let features = Matrix::from_vec(origins.len(), dim, data)?;
    TemporalBipartiteGraph::from_parts(features, origins, edges, partitions, seq.label)
}

/// Incoming neighbors `N(p)`.
pub fn neighbors(g: &impl Neighborhoods, p: usize) -> Result<&[usize]> {
    if p >= g.node_count() {
        return Err(HegError::Domain(format!(
            "node {p} out of range for a graph of {} nodes",
            g.node_count()
        )));
    }
    Ok(g.neighbor_slice(p))
}

pub fn count_stats(g: &TemporalBipartiteGraph) -> GraphStats {
    let node_count = g.node_count();
    let frames = g.partitions.len();
    GraphStats {
        node_count,
        directed_edge_count: g.edges.len(),
        mean_objects_per_frame: if frames == 0 {
            0.0
        } else {
            node_count as f64 / frames as f64
        },
    }
}

/// Disjoint union of several graphs with per-node graph membership.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    features: Matrix,
    edges: Vec<(usize, usize)>,
    adjacency: Adjacency,
    membership: Vec<usize>,
    labels: Vec<usize>,
    node_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Graph index of each node.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn graph_count(&self) -> usize {
        self.labels.len()
    }

    /// Node range of graph `k` within the batch.
    pub fn node_range(&self, k: usize) -> std::ops::Range<usize> {
        self.node_offsets[k]..self.node_offsets[k + 1]
    }
}

impl Neighborhoods for GraphBatch {
    fn node_count(&self) -> usize {
        self.features.rows()
    }

    fn neighbor_slice(&self, p: usize) -> &[usize] {
        self.adjacency.of(p)
    }
}

pub fn batch_graphs<'a, I>(graphs: I) -> Result<GraphBatch>
where
    I: IntoIterator<Item = &'a TemporalBipartiteGraph>,
{
    let graphs: Vec<&TemporalBipartiteGraph> = graphs.into_iter().collect();
    let first = graphs
        .first()
        .ok_or_else(|| HegError::Domain("cannot batch zero graphs".into()))?;
    let dim = first.feature_dim();
    let total_nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
    let mut data = Vec::with_capacity(total_nodes * dim);
    let mut edges = Vec::with_capacity(graphs.iter().map(|g| g.edges.len()).sum());
    let mut membership = Vec::with_capacity(total_nodes);
    let mut node_offsets = vec![0];
    let mut labels = Vec::with_capacity(graphs.len());
    for (k, g) in graphs.iter().enumerate() {
        if g.feature_dim() != dim {
            return Err(HegError::Dimension(format!(
                "graph {k} has feature width {}, graph 0 has {dim}",
                g.feature_dim()
            )));
        }
        let offset = membership.len();
        data.extend_from_slice(g.features.data());
        edges.extend(g.edges.iter().map(|&(s, d)| (s + offset, d + offset)));
        membership.extend(std::iter::repeat_n(k, g.node_count()));
        node_offsets.push(membership.len());
        labels.push(g.label);
    }
    let adjacency = Adjacency::incoming(total_nodes, &edges);
    Ok(GraphBatch {
        features: Matrix::from_vec(total_nodes, dim, data)?,
        edges,
        adjacency,
        membership,
        labels,
        node_offsets,
    })
}

pub const HEGG_MAGIC: &[u8; 4] = b"HEGG";
pub const HEGG_VERSION: u32 = 1;

/// Serializes a graph as `HEGG` (little-endian):
///
/// ```text
/// "HEGG" | version u32 = 1 | label u64 | node count N u64 | feature dim F u64
///        | edge count E u64 | partition count P u64
/// features      N·F × f64
/// node origins  N × (frame_position u64, frame_index u64, object_id u64)
/// edges         E × (src u64, dst u64)
/// partitions    P × (len u64, len × node u64)
/// ```
pub fn encode_graph(g: &TemporalBipartiteGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HEGG_MAGIC);
    put_u32(&mut out, HEGG_VERSION);
    put_u64(&mut out, g.label as u64);
    put_u64(&mut out, g.node_count() as u64);
    put_u64(&mut out, g.feature_dim() as u64);
    put_u64(&mut out, g.edges.len() as u64);
    put_u64(&mut out, g.partitions.len() as u64);
    for &v in g.features.data() {
        put_f64(&mut out, v);
    }
    for o in &g.origins {
        put_u64(&mut out, o.frame_position as u64);
        put_u64(&mut out, o.frame_index as u64);
        put_u64(&mut out, o.object_id);
    }
    for &(s, d) in &g.edges {
        put_u64(&mut out, s as u64);
        put_u64(&mut out, d as u64);
    }
    for part in &g.partitions {
        put_u64(&mut out, part.len() as u64);
        for &p in part {
            put_u64(&mut out, p as u64);
        }
    }
    out
}

pub fn decode_graph(bytes: &[u8]) -> Result<TemporalBipartiteGraph> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(HEGG_MAGIC)?;
    let version = r.u32("version")?;
    if version != HEGG_VERSION {
        return Err(HegError::Format {
            offset: 4,
            message: format!("unsupported HEGG version {version}"),
        });
    }
    let label = r.usize("label")?;
    let nodes = r.usize("node count")?;
    let dim = r.usize("feature dim")?;
    let edge_count = r.usize("edge count")?;
    let partition_count = r.usize("partition count")?;
    let values = nodes
        .checked_mul(dim)
        .ok_or_else(|| r.error("node count × feature dim overflows"))?;
    r.require(values, 8, "features")?;
    let mut data = Vec::with_capacity(values);
    for _ in 0..values {
        data.push(r.f64("feature")?);
    }
    r.require(nodes, 24, "node origins")?;
    let mut origins = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        origins.push(NodeOrigin {
            frame_position: r.usize("frame position")?,
            frame_index: r.usize("frame index")?,
            object_id: r.u64("object id")?,
        });
    }
    r.require(edge_count, 16, "edges")?;
    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        edges.push((r.usize("edge source")?, r.usize("edge target")?));
    }
    r.require(partition_count, 8, "partitions")?;
    let mut partitions = Vec::with_capacity(partition_count);
    for _ in 0..partition_count {
        let len = r.usize("partition length")?;
        r.require(len, 8, "partition nodes")?;
        let mut part = Vec::with_capacity(len);
        for _ in 0..len {
            part.push(r.usize("partition node")?);
        }
        partitions.push(part);
    }
    r.finish()?;
    let end = r.offset();
    TemporalBipartiteGraph::from_parts(
        Matrix::from_vec(nodes, dim, data)?,
        origins,
        edges,
        partitions,
        label,
    )
    .map_err(|e| HegError::Format {
        offset: end,
        message: format!("inconsistent graph: {e}"),
    })
}

pub fn write_graph(path: &Path, g: &TemporalBipartiteGraph) -> Result<()> {
    std::fs::write(path, encode_graph(g)).map_err(|e| HegError::io(path, e))
}

pub fn read_graph(path: &Path) -> Result<TemporalBipartiteGraph> {
    let bytes = std::fs::read(path).map_err(|e| HegError::io(path, e))?;
    decode_graph(&bytes).map_err(|e| match e {
        HegError::Format { offset, message } => HegError::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
