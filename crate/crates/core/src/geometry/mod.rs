//! Surface meshes, edge graphs, the graph Laplacian, geodesic distances and
//! the synthetic heart-to-body transfer matrix.
//!
//! Both the heart and the body surface are closed triangulated surfaces. The
//! same [`WeightedGraph`] (mesh edges weighted by Euclidean length) drives the
//! diffusion operator of the electrophysiology model, the geodesic distances
//! used by maximin placement, and the neighbour averaging of score imputation.

mod sphere;

pub use sphere::sphere_mesh;

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type Point3 = [f64; 3];

pub(crate) fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// A triangulated surface. Serialized as `{"nodes": [[x,y,z],..], "triangles": [[i,j,k],..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMesh", into = "RawMesh")]
pub struct SurfaceMesh {
    nodes: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct RawMesh {
    nodes: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
}

impl TryFrom<RawMesh> for SurfaceMesh {
    type Error = Error;

    fn try_from(raw: RawMesh) -> Result<Self> {
        SurfaceMesh::new(raw.nodes, raw.triangles)
    }
}

impl From<SurfaceMesh> for RawMesh {
    fn from(mesh: SurfaceMesh) -> Self {
        RawMesh {
            nodes: mesh.nodes,
            triangles: mesh.triangles,
        }
    }
}

impl SurfaceMesh {
    /// Validates indices and rejects degenerate triangles.
    pub fn new(nodes: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidMesh("mesh has no nodes".into()));
        }
        if let Some(i) = nodes.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("node {i} has non-finite coordinates")));
        }
        for (index, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= nodes.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {index} references node {bad} but mesh has {} nodes",
                    nodes.len()
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle {
                    index,
                    nodes: *tri,
                });
            }
        }
        Ok(SurfaceMesh { nodes, triangles })
    }

    pub fn nodes(&self) -> &[Point3] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }
}

/// Symmetric graph with positive edge lengths. Neighbour lists are sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Builds a graph from undirected edges `(i, j, length)`.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); node_count];
        let mut seen = BTreeSet::new();
        for &(i, j, d) in edges {
            if i >= node_count || j >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {node_count} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self loop at node {i}")));
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) has non-positive length {d}"
                )));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[i].push((j, d));
            adjacency[j].push((i, d));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(WeightedGraph { adjacency })
    }

    /// Path graph `0 - 1 - ... - (n-1)` with the given uniform edge length.
    pub fn path(n: usize, length: f64) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, length)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Nodes not reachable from node 0 (empty for connected graphs).
    pub fn unreachable_from(&self, source: usize) -> Vec<usize> {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![source];
        seen[source] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..seen.len()).filter(|&i| !seen[i]).collect()
    }

    /// Largest diagonal entry of the diffusion operator, `max_i sum_j D / d_ij`.
    pub fn max_weighted_degree(&self, diffusivity: f64) -> f64 {
        self.adjacency
            .iter()
            .map(|list| list.iter().map(|&(_, d)| diffusivity / d).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// One graph node per mesh node and one edge per unique triangle edge, weighted by
/// Euclidean edge length.
pub fn build_edge_graph(mesh: &SurfaceMesh) -> Result<WeightedGraph> {
    for (index, tri) in mesh.triangles().iter().enumerate() {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(Error::DegenerateTriangle {
                index,
                nodes: *tri,
            });
        }
    }
    let nodes = mesh.nodes();
    let edges: Vec<_> = mesh
        .edges()
        .into_iter()
        .map(|(i, j)| (i, j, distance(&nodes[i], &nodes[j])))
        .collect();
    WeightedGraph::from_edges(mesh.node_count(), &edges)
}

/// `(Lf)_i = sum_{j in N(i)} (D / d_ij) (f_j - f_i)`.
pub fn graph_laplacian_apply(
    graph: &WeightedGraph,
    field: &[f64],
    diffusivity: f64,
) -> Result<Vec<f64>> {
    check_len("graph_laplacian_apply field", graph.node_count(), field.len())?;
    if !(diffusivity > 0.0) {
        return Err(Error::invalid("D", format!("must be positive, got {diffusivity}")));
    }
    Ok(laplacian_unchecked(graph, field, diffusivity))
}

pub(crate) fn laplacian_unchecked(graph: &WeightedGraph, field: &[f64], diffusivity: f64) -> Vec<f64> {
    (0..graph.node_count())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .map(|&(j, d)| diffusivity / d * (field[j] - field[i]))
                .sum()
        })
        .collect()
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by node index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra shortest-path distances along edge lengths. Unreachable nodes are `f64::INFINITY`.
pub fn geodesic_distances(graph: &WeightedGraph, source: usize) -> Result<Vec<f64>> {
    let n = graph.node_count();
    if source >= n {
        return Err(Error::IndexOutOfRange {
            context: "geodesic source",
            index: source,
            len: n,
        });
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(j, len) in graph.neighbors(node) {
            let cand = d + len;
            if cand < dist[j] {
                dist[j] = cand;
                heap.push(HeapEntry { dist: cand, node: j });
            }
        }
    }
    Ok(dist)
}

/// Dense `N_b x N_h` linear map from heart-surface to body-surface potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    entries: Array2<f64>,
}

impl TransferMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("transfer matrix", "must have at least one row and column"));
        }
        if let Some(((i, j), _)) = entries.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "transfer matrix",
                location: format!("({i}, {j})"),
            });
        }
        Ok(TransferMatrix { entries })
    }

    pub fn identity(n: usize) -> Self {
        TransferMatrix {
            entries: Array2::eye(n),
        }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Number of body nodes.
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of heart nodes.
    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.rows() {
                return Err(Error::IndexOutOfRange {
                    context: "transfer matrix row",
                    index: r,
                    len: self.rows(),
                });
            }
        }
        TransferMatrix::new(self.entries.select(ndarray::Axis(0), rows))
    }
}

/// Inverse-distance kernel `R_ij = scale / |x_b,i - x_h,j|`, each row normalized to unit sum.
///
/// This stands in for the boundary-element operator: it is smooth, positive and
/// badly conditioned. Note that `kernel_scale` cancels under the row normalization.
pub fn synth_transfer_matrix(
    heart: &SurfaceMesh,
    body: &SurfaceMesh,
    kernel_scale: f64,
) -> Result<TransferMatrix> {
    if !(kernel_scale > 0.0 && kernel_scale.is_finite()) {
        return Err(Error::invalid(
            "kernel_scale",
            format!("must be positive, got {kernel_scale}"),
        ));
    }
    let (nb, nh) = (body.node_count(), heart.node_count());
    let mut entries = Array2::zeros((nb, nh));
    for (i, xb) in body.nodes().iter().enumerate() {
        for (j, xh) in heart.nodes().iter().enumerate() {
            let d = distance(xb, xh);
            if d == 0.0 {
                return Err(Error::CoincidentNodes { body: i, heart: j });
            }
            entries[[i, j]] = kernel_scale / d;
        }
        let mut row = entries.row_mut(i);
        let sum = row.sum();
        row /= sum;
    }
    TransferMatrix::new(entries)
}
