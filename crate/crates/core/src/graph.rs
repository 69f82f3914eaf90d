//! Spatio-temporal game graph: one node per observed (tracklet, frame),
//! spatial in-edges from the k nearest same-frame players and temporal edges
//! to the same player at adjacent frames.

use std::collections::BTreeMap;

use crate::datamodel::Clip;

pub const DEFAULT_K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

/// Directed edge; messages flow from `src` into `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameGraph {
    /// Node id → (tracklet, frame), sorted by tracklet then frame. For a
    /// clip observing every tracklet in every frame this is the dense
    /// layout `rank * T + frame`.
    pub nodes: Vec<(u32, usize)>,
    index: BTreeMap<(u32, usize), usize>,
    /// Grouped by destination node in ascending order; per node the two
    /// temporal in-edges (t−1, t+1) come first, then spatial in-edges by
    /// increasing distance.
    pub edges: Vec<Edge>,
}

impl GameGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_id(&self, tracklet: u32, frame: usize) -> Option<usize> {
        self.index.get(&(tracklet, frame)).copied()
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.src).collect()
    }

    pub fn destinations(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    /// The same graph with its edge list reordered by `perm`
    /// (`new[i] = old[perm[i]]`).
    pub fn with_edge_order(&self, perm: &[usize]) -> GameGraph {
        GameGraph {
            nodes: self.nodes.clone(),
            index: self.index.clone(),
            edges: perm.iter().map(|&i| self.edges[i]).collect(),
        }
    }
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Up to `k` nearest other players for every id, nearest first. Ties on
/// distance go to the lower tracklet id.
pub fn knn_neighbors(positions: &[(u32, f64, f64)], k: usize) -> BTreeMap<u32, Vec<u32>> {
    let mut out = BTreeMap::new();
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(positions.len());
    for &(id, x, y) in positions {
        cand.clear();
        cand.extend(
            positions
                .iter()
                .filter(|p| p.0 != id)
                .map(|&(j, px, py)| (sq_dist((x, y), (px, py)), j)),
        );
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.insert(id, cand.iter().take(k).map(|c| c.1).collect());
    }
    out
}

pub fn build_graph(clip: &Clip, k: usize) -> GameGraph {
    let mut nodes: Vec<(u32, usize)> = clip
        .frames
        .iter()
        .enumerate()
        .flat_map(|(t, f)| f.players.iter().map(move |p| (p.tracklet_id, t)))
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    let index: BTreeMap<(u32, usize), usize> =
        nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let mut spatial: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (t, frame) in clip.frames.iter().enumerate() {
        let pos: Vec<(u32, f64, f64)> = frame
            .players
            .iter()
            .map(|p| (p.tracklet_id, p.position[0], p.position[1]))
            .collect();
        for (id, nbrs) in knn_neighbors(&pos, k) {
            spatial[index[&(id, t)]] = nbrs.iter().map(|j| index[&(*j, t)]).collect();
        }
    }

    let mut edges = Vec::new();
    for (dst, &(tid, t)) in nodes.iter().enumerate() {
        let adjacent = [t.checked_sub(1), Some(t + 1)];
        for src in adjacent.into_iter().flatten().filter_map(|f| index.get(&(tid, f))) {
            edges.push(Edge {
                src: *src,
                dst,
                kind: EdgeKind::Temporal,
            });
        }
        edges.extend(spatial[dst].iter().map(|&src| Edge {
            src,
            dst,
            kind: EdgeKind::Spatial,
        }));
    }
    GameGraph {
        nodes,
        index,
        edges,
    }
}
