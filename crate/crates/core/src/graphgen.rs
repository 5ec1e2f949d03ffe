//! Spatial graphs over flip-flops.
//!
//! Node `i` is the `i`-th flip-flop of the netlist. A directed edge `j → i`
//! exists when the shortest combinational path from the output of FF `j` to
//! the D input of FF `i` crosses at most `max_distance` gates. Its feature row
//! has `max_distance` blocks of 8: block `p` one-hot encodes the type of the
//! `p`-th gate along the path (source to target), or is zero past the end.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::netlist::{GateType, Netlist};

/// Shortest path from one flip-flop to another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfPath {
    pub distance: usize,
    pub gates: Vec<GateType>,
}

/// BFS from the output of `src_ff` through combinational gates, stopping at
/// flip-flop D inputs. Readers are explored in declaration order, so the first
/// shortest path found is deterministic. The source itself is not reported.
pub fn ff_distance_bfs(netlist: &Netlist, src_ff: usize) -> BTreeMap<usize, FfPath> {
    bounded_bfs(netlist, src_ff, usize::MAX)
}

fn bounded_bfs(netlist: &Netlist, src_ff: usize, limit: usize) -> BTreeMap<usize, FfPath> {
    let cells = netlist.cells();
    let start = cells[netlist.flip_flops()[src_ff]].output;
    // Per net: (gate count from source, predecessor net, gate that drives it).
    let mut seen: Vec<Option<(usize, usize, GateType)>> = vec![None; netlist.num_nets()];
    seen[start] = Some((0, start, GateType::Buf));
    let mut queue = VecDeque::from([start]);
    let mut found = BTreeMap::new();

    let path_to = |seen: &[Option<(usize, usize, GateType)>], mut net: usize| {
        let mut gates = Vec::new();
        while net != start {
            let (_, prev, kind) = seen[net].expect("visited");
            gates.push(kind);
            net = prev;
        }
        gates.reverse();
        gates
    };

    while let Some(net) = queue.pop_front() {
        let (dist, _, _) = seen[net].expect("queued nets are visited");
        for &c in netlist.readers(net) {
            let cell = &cells[c];
            if cell.kind.is_sequential() {
                let dst = netlist.ff_index_of_cell(c).expect("DFF cell");
                if dst != src_ff && !found.contains_key(&dst) {
                    found.insert(
                        dst,
                        FfPath {
                            distance: dist,
                            gates: path_to(&seen, net),
                        },
                    );
                }
            } else if dist < limit && seen[cell.output].is_none() {
                seen[cell.output] = Some((dist + 1, net, cell.kind));
                queue.push_back(cell.output);
            }
        }
    }
    found
}

/// Directed flip-flop graph with gate-sequence edge vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    pub num_nodes: usize,
    /// `(src, dst)` pairs sorted by `(src, dst)`.
    pub edges: Vec<(u32, u32)>,
    /// Row-major `[num_edges × edge_dim]`.
    pub edge_features: Vec<f32>,
    /// Gate count of the shortest path behind each edge.
    pub distances: Vec<u32>,
    pub max_distance: usize,
    pub node_names: Vec<String>,
    pub undirected: bool,
}

impl SpatialGraph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Feature width `c = max_distance × 8`.
    pub fn edge_dim(&self) -> usize {
        edge_dim(self.max_distance)
    }

    pub fn edge_feature(&self, e: usize) -> &[f32] {
        let c = self.edge_dim();
        &self.edge_features[e * c..(e + 1) * c]
    }

    /// Number of incoming edges per node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(_, d) in &self.edges {
            deg[d as usize] += 1;
        }
        deg
    }

    /// Dense adjacency, `a[j][i] = 1` for an edge `j → i`.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.num_nodes]; self.num_nodes];
        for &(s, d) in &self.edges {
            a[s as usize][d as usize] = 1;
        }
        a
    }

    /// Applies a node relabeling: old node `k` becomes `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> SpatialGraph {
        let c = self.edge_dim();
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        let mapped: Vec<(u32, u32)> = self
            .edges
            .iter()
            .map(|&(s, d)| (perm[s as usize] as u32, perm[d as usize] as u32))
            .collect();
        order.sort_by_key(|&e| mapped[e]);
        let mut names = vec![String::new(); self.num_nodes];
        for (k, name) in self.node_names.iter().enumerate() {
            names[perm[k]] = name.clone();
        }
        SpatialGraph {
            num_nodes: self.num_nodes,
            edges: order.iter().map(|&e| mapped[e]).collect(),
            edge_features: order
                .iter()
                .flat_map(|&e| self.edge_features[e * c..(e + 1) * c].iter().copied())
                .collect(),
            distances: order.iter().map(|&e| self.distances[e]).collect(),
            max_distance: self.max_distance,
            node_names: names,
            undirected: self.undirected,
        }
    }
}

pub fn edge_dim(max_distance: usize) -> usize {
    max_distance * GateType::NUM_COMBINATIONAL
}

/// Block one-hot encoding of a gate sequence, `max_distance` blocks wide.
pub fn encode_gate_sequence(gates: &[GateType], max_distance: usize) -> Vec<f32> {
    let mut row = vec![0.0; edge_dim(max_distance)];
    for (p, g) in gates.iter().take(max_distance).enumerate() {
        let code = g.code().expect("combinational gate");
        row[p * GateType::NUM_COMBINATIONAL + code] = 1.0;
    }
    row
}

/// Inverse of [`encode_gate_sequence`]; `None` for a malformed row.
pub fn decode_gate_sequence(row: &[f32]) -> Option<Vec<GateType>> {
    let width = GateType::NUM_COMBINATIONAL;
    if !row.len().is_multiple_of(width) {
        return None;
    }
    let mut gates = Vec::new();
    let mut ended = false;
    for block in row.chunks(width) {
        let ones: Vec<usize> = block.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
        if block.iter().any(|&v| v != 0.0 && v != 1.0) {
            return None;
        }
        match ones.as_slice() {
            [] => ended = true,
            [code] if !ended => gates.push(GateType::from_code(*code)?),
            _ => return None,
        }
    }
    Some(gates)
}

/// Builds the spatial graph at threshold `max_distance`. With `undirected`,
/// every edge is mirrored (same feature row) unless the reverse already exists.
pub fn build_spatial_graph(netlist: &Netlist, max_distance: usize, undirected: bool) -> SpatialGraph {
    let n = netlist.num_flip_flops();
    let per_source: Vec<BTreeMap<usize, FfPath>> = (0..n)
        .into_par_iter()
        .map(|src| bounded_bfs(netlist, src, max_distance))
        .collect();

    let mut edges: BTreeMap<(u32, u32), (u32, Vec<GateType>)> = BTreeMap::new();
    for (src, paths) in per_source.iter().enumerate() {
        for (&dst, p) in paths {
            if p.distance <= max_distance {
                edges.insert((src as u32, dst as u32), (p.distance as u32, p.gates.clone()));
            }
        }
    }
    if undirected {
        let mirrored: Vec<_> = edges
            .iter()
            .filter(|((s, d), _)| !edges.contains_key(&(*d, *s)))
            .map(|((s, d), v)| ((*d, *s), v.clone()))
            .collect();
        edges.extend(mirrored);
    }

    let mut graph = SpatialGraph {
        num_nodes: n,
        edges: Vec::with_capacity(edges.len()),
        edge_features: Vec::with_capacity(edges.len() * edge_dim(max_distance)),
        distances: Vec::with_capacity(edges.len()),
        max_distance,
        node_names: netlist.flip_flop_names(),
        undirected,
    };
    for (pair, (dist, gates)) in edges {
        graph.edges.push(pair);
        graph.distances.push(dist);
        graph.edge_features.extend(encode_gate_sequence(&gates, max_distance));
    }
    graph
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    /// Edges over ordered non-self pairs `n(n-1)`.
    pub density: f64,
    /// Edge count per path length `0..=max_distance`.
    pub distance_histogram: Vec<usize>,
}

pub fn graph_stats(graph: &SpatialGraph) -> GraphStats {
    let n = graph.num_nodes;
    let pairs = n * n.saturating_sub(1);
    let mut hist = vec![0; graph.max_distance + 1];
    for &d in &graph.distances {
        hist[d as usize] += 1;
    }
    GraphStats {
        num_nodes: n,
        num_edges: graph.num_edges(),
        density: if pairs == 0 {
            0.0
        } else {
            graph.num_edges() as f64 / pairs as f64
        },
        distance_histogram: hist,
    }
}
