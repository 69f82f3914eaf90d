use std::collections::BTreeSet;

use pitchgraph::datamodel::{default_class_names, BBox, Clip, Frame, PlayerFrameState};
use pitchgraph::graph::{build_graph, knn_neighbors, EdgeKind, GameGraph, DEFAULT_K};
use pitchgraph::simulator::{generate_dataset, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Key = (u32, usize);

fn player(id: u32, pos: [f64; 2]) -> PlayerFrameState {
    PlayerFrameState {
        tracklet_id: id,
        team: (id % 2) as u8,
        bbox: BBox { x: 0.0, y: 0.0, w: 4.0, h: 9.0 },
        position: pos,
        velocity: [0.0, 0.0],
        action_label: 0,
        shirt_number: None,
    }
}

/// Up to 22 players over up to 12 frames; players drop out at random, and
/// positions snap to a coarse grid half the time so ties are common.
fn random_clip(rng: &mut ChaCha8Rng) -> Clip {
    let n = rng.random_range(1..=22u32);
    let t = rng.random_range(1..=12usize);
    let grid = rng.random_bool(0.5);
    let frames = (0..t)
        .map(|_| {
            let mut players = Vec::new();
            for i in 0..n {
                if !rng.random_bool(0.85) {
                    continue;
                }
                let mut p: [f64; 2] = [rng.random_range(-52.0..52.0), rng.random_range(-33.0..33.0)];
                if grid {
                    p = [(p[0] / 10.0).round() * 10.0, (p[1] / 10.0).round() * 10.0];
                }
                players.push(player(3 * i + 1, p));
            }
            // storage order must not matter
            let len = players.len();
            for i in (1..len).rev() {
                players.swap(i, rng.random_range(0..=i));
            }
            Frame { players }
        })
        .collect();
    Clip {
        clip_id: "rand".into(),
        frame_rate: 25.0,
        frames,
        gt_events: vec![],
        class_names: default_class_names(),
    }
}

fn edge_keys(g: &GameGraph) -> BTreeSet<(Key, Key, EdgeKind)> {
    g.edges.iter().map(|e| (g.nodes[e.src], g.nodes[e.dst], e.kind)).collect()
}

/// All-pairs construction straight from the definition.
fn brute_force(clip: &Clip, k: usize) -> (BTreeSet<Key>, BTreeSet<(Key, Key, EdgeKind)>) {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for (t, f) in clip.frames.iter().enumerate() {
        for p in &f.players {
            nodes.insert((p.tracklet_id, t));
        }
    }
    for (t, f) in clip.frames.iter().enumerate() {
        for q in &f.players {
            let mut others: Vec<(f64, u32)> = f
                .players
                .iter()
                .filter(|p| p.tracklet_id != q.tracklet_id)
                .map(|p| {
                    let (dx, dy) = (p.position[0] - q.position[0], p.position[1] - q.position[1]);
                    (dx * dx + dy * dy, p.tracklet_id)
                })
                .collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in others.iter().take(k) {
                edges.insert(((j, t), (q.tracklet_id, t), EdgeKind::Spatial));
            }
            for s in [t.wrapping_sub(1), t + 1] {
                if nodes.contains(&(q.tracklet_id, s)) {
                    edges.insert(((q.tracklet_id, s), (q.tracklet_id, t), EdgeKind::Temporal));
                }
            }
        }
    }
    (nodes, edges)
}

#[test]
fn matches_brute_force_on_random_clips() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let clip = random_clip(&mut rng);
        let k = if case % 4 == 0 { rng.random_range(1..=8) } else { DEFAULT_K };
        let g = build_graph(&clip, k);
        let (nodes, edges) = brute_force(&clip, k);
        assert_eq!(g.nodes.iter().copied().collect::<BTreeSet<_>>(), nodes, "case {case}");
        assert_eq!(g.nodes.len(), nodes.len());
        assert_eq!(g.edges.len(), edges.len(), "duplicate edges in case {case}");
        assert_eq!(edge_keys(&g), edges, "case {case}");
    }
}

#[test]
fn matches_brute_force_on_simulated_clips() {
    let d = generate_dataset(&SimConfig::default(), 4, 3).unwrap();
    for clip in d.train.iter().chain(&d.val) {
        let g = build_graph(clip, DEFAULT_K);
        assert_eq!(edge_keys(&g), brute_force(clip, DEFAULT_K).1);
        assert_eq!(g.num_nodes(), 20 * 50);
    }
}

#[test]
fn knn_matches_all_pairs_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let pos: Vec<(u32, f64, f64)> = (0..22)
            .map(|i| (i, rng.random_range(-52.5..52.5), rng.random_range(-34.0..34.0)))
            .collect();
        let got = knn_neighbors(&pos, 6);
        for &(id, x, y) in &pos {
            let mut all: Vec<(f64, u32)> = pos
                .iter()
                .filter(|p| p.0 != id)
                .map(|p| ((p.1 - x).powi(2) + (p.2 - y).powi(2), p.0))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<u32> = all.iter().take(6).map(|a| a.1).collect();
            assert_eq!(got[&id], want);
        }
    }
}

#[test]
fn structural_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..60 {
        let clip = random_clip(&mut rng);
        let g = build_graph(&clip, DEFAULT_K);
        let n = g.num_nodes();
        let mut spatial_in = vec![0usize; n];
        let mut temporal_in = vec![0usize; n];
        let keys = edge_keys(&g);
        for e in &g.edges {
            assert_ne!(e.src, e.dst, "self-loop");
            let ((ia, ta), (ib, tb)) = (g.nodes[e.src], g.nodes[e.dst]);
            match e.kind {
                EdgeKind::Spatial => {
                    assert_eq!(ta, tb);
                    spatial_in[e.dst] += 1;
                }
                EdgeKind::Temporal => {
                    assert_eq!(ia, ib);
                    assert_eq!(ta.abs_diff(tb), 1);
                    assert!(keys.contains(&((ib, tb), (ia, ta), EdgeKind::Temporal)), "reverse edge");
                    temporal_in[e.dst] += 1;
                }
            }
        }
        for (v, &(_, t)) in g.nodes.iter().enumerate() {
            let peers = clip.frames[t].players.len() - 1;
            assert_eq!(spatial_in[v], peers.min(DEFAULT_K));
            assert!(temporal_in[v] <= 2);
        }
        for (v, &(id, t)) in g.nodes.iter().enumerate() {
            assert_eq!(g.node_id(id, t), Some(v));
        }
    }
}

#[test]
fn deterministic_including_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let clip = random_clip(&mut rng);
        let a = build_graph(&clip, DEFAULT_K);
        let b = build_graph(&clip, DEFAULT_K);
        assert_eq!(a, b);
        let mut reversed = clip.clone();
        for f in &mut reversed.frames {
            f.players.reverse();
        }
        assert_eq!(build_graph(&reversed, DEFAULT_K), a);
    }
}

#[test]
fn square_lattice_ties_resolve_by_id() {
    // 3×3 lattice with unit spacing: the centre has four neighbours at 1.
    let mut players = Vec::new();
    for (i, (x, y)) in (0..3).flat_map(|x| (0..3).map(move |y| (x, y))).enumerate() {
        players.push(player(100 - i as u32, [x as f64, y as f64]));
    }
    let pos: Vec<_> = players.iter().map(|p| (p.tracklet_id, p.position[0], p.position[1])).collect();
    let centre = 100 - 4;
    let nbrs = knn_neighbors(&pos, 2);
    // ids at distance 1 from the centre are 99, 97, 95, 93
    assert_eq!(nbrs[&centre], vec![93, 95]);
}

proptest! {
    #[test]
    fn translation_leaves_edges_unchanged(
        seed in 0u64..1000,
        offsets in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 12),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = random_clip(&mut rng);
        let mut moved = clip.clone();
        for (f, (dx, dy)) in moved.frames.iter_mut().zip(&offsets) {
            // dyadic offsets keep lattice coordinates exact, so lattice
            // ties survive the shift
            let (dx, dy) = ((dx * 8.0).round() / 8.0, (dy * 8.0).round() / 8.0);
            for p in &mut f.players {
                p.position[0] += dx;
                p.position[1] += dy;
            }
        }
        prop_assert_eq!(build_graph(&moved, DEFAULT_K).edges, build_graph(&clip, DEFAULT_K).edges);
    }
}
