use pitchgraph::datamodel::{default_class_names, ClipEvents, Event, EventSet};
use pitchgraph::eval::{
    average_precision_11pt, evaluate, match_events, temporal_iou, EvalReport, Pair, PrPoint,
};
use pitchgraph::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ev(tracklet_id: u32, start_frame: usize, end_frame: usize, class: usize, score: f64) -> Event {
    Event { tracklet_id, start_frame, end_frame, class, score }
}

fn set(clips: Vec<(&str, Vec<Event>)>) -> EventSet {
    EventSet {
        class_names: default_class_names(),
        clips: clips
            .into_iter()
            .map(|(id, events)| ClipEvents { clip_id: id.into(), events })
            .collect(),
    }
}

// Three clips: an exact hit, a late shot, an untracked pass; a confused
// shot beside a short shot; a low-scoring drive and a missed pass.
fn fixture() -> (EventSet, EventSet) {
    let gts = set(vec![
        ("a", vec![ev(1, 0, 9, 2, 1.0), ev(2, 20, 29, 6, 1.0)]),
        ("b", vec![ev(5, 10, 19, 6, 1.0)]),
        ("c", vec![ev(7, 0, 4, 1, 1.0), ev(7, 10, 14, 2, 1.0)]),
    ]);
    let preds = set(vec![
        ("a", vec![ev(1, 0, 9, 2, 0.9), ev(2, 25, 34, 6, 0.6), ev(3, 0, 4, 2, 0.7)]),
        ("b", vec![ev(5, 10, 19, 2, 0.8), ev(5, 12, 15, 6, 0.95)]),
        ("c", vec![ev(7, 0, 3, 1, 0.4)]),
    ]);
    (preds, gts)
}

fn pt(threshold: f64, recall: f64, precision: f64) -> PrPoint {
    PrPoint { threshold, recall, precision }
}

fn empty_curve() -> Vec<PrPoint> {
    vec![pt(1.0, 0.0, 1.0), pt(0.0, 0.0, 1.0)]
}

fn confusion(cells: &[(usize, usize, usize)]) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; 9]; 9];
    for &(r, c, v) in cells {
        m[r][c] = v;
    }
    m
}

// Hand trace at IoU 0.5:
//   a: (g1,p1) IoU 1 matched; p2 overlaps the shot only 5/15; p3 has no gt.
//   b: (g3,p4) IoU 1 beats (g3,p5) 0.4, a pass matched to a shot.
//   c: (g4,p6) IoU 0.8 but p6 scores under 0.5, so it only feeds AP.
// class 1: [0.4 ✓] of 1 gt → 1. class 2: [0.9 ✓, 0.8 ✗, 0.7 ✗] of 2 gts →
// precision 1 up to recall 0.5, nothing beyond → 6/11. class 6: no TP → 0.
#[test]
fn fixture_report_at_iou_half() {
    let (preds, gts) = fixture();
    let got = evaluate(&preds, &gts, 0.5, 0.5).unwrap();
    let mut pr_curves = vec![empty_curve(); 9];
    pr_curves[0] = vec![];
    pr_curves[1] = vec![pt(1.0, 0.0, 1.0), pt(0.4, 1.0, 1.0), pt(0.0, 1.0, 1.0)];
    pr_curves[2] = vec![
        pt(1.0, 0.0, 1.0),
        pt(0.9, 0.5, 1.0),
        pt(0.8, 0.5, 0.5),
        pt(0.7, 0.5, 1.0 / 3.0),
        pt(0.0, 0.5, 1.0 / 3.0),
    ];
    pr_curves[6] = vec![pt(1.0, 0.0, 1.0), pt(0.95, 0.0, 0.0), pt(0.6, 0.0, 0.0), pt(0.0, 0.0, 0.0)];
    let want = EvalReport {
        iou_thr: 0.5,
        score_thr: 0.5,
        class_names: default_class_names(),
        gt_counts: vec![0, 1, 2, 0, 0, 0, 2, 0, 0],
        per_class_ap: vec![None, Some(1.0), Some(6.0 / 11.0), None, None, None, Some(0.0), None, None],
        map_value: (1.0 + 6.0 / 11.0 + 0.0) / 3.0,
        pr_curves,
        confusion: confusion(&[(0, 2, 1), (0, 6, 2), (1, 0, 1), (2, 0, 1), (2, 2, 1), (6, 0, 1), (6, 2, 1)]),
        tp_fp: vec![(0, 0), (0, 0), (1, 2), (0, 0), (0, 0), (0, 0), (0, 2), (0, 0), (0, 0)],
    };
    assert_eq!(got, want);
    assert_eq!((got.total_tp(), got.total_fp()), (1, 4));
}

// At IoU 0.2 the late shot in clip a becomes a hit: class 6 ranks
// [0.95 ✗, 0.6 ✓] of 2 gts → precision 1/2 up to recall 0.5 → 3/11.
#[test]
fn fixture_report_at_iou_fifth() {
    let (preds, gts) = fixture();
    let got = evaluate(&preds, &gts, 0.2, 0.5).unwrap();
    assert_eq!(
        got.per_class_ap,
        vec![None, Some(1.0), Some(6.0 / 11.0), None, None, None, Some(3.0 / 11.0), None, None]
    );
    assert_eq!(got.map_value, (1.0 + 6.0 / 11.0 + 3.0 / 11.0) / 3.0);
    assert_eq!(
        got.confusion,
        confusion(&[(0, 2, 1), (0, 6, 1), (1, 0, 1), (2, 0, 1), (2, 2, 1), (6, 2, 1), (6, 6, 1)])
    );
    assert_eq!(got.tp_fp[2], (1, 2));
    assert_eq!(got.tp_fp[6], (1, 1));
    assert_eq!((got.total_tp(), got.total_fp()), (2, 3));
}

#[test]
fn iou_examples() {
    let a = ev(0, 0, 9, 1, 1.0);
    assert_eq!(temporal_iou(&a, &a), 1.0);
    assert_eq!(temporal_iou(&a, &ev(0, 20, 29, 1, 1.0)), 0.0);
    assert_eq!(temporal_iou(&a, &ev(0, 5, 14, 1, 1.0)), 5.0 / 15.0);
}

#[test]
fn greedy_prefers_the_better_overlap() {
    // IoUs 0.8 and 0.6 against [0,9]
    let gt = [ev(0, 0, 9, 2, 1.0)];
    let pred = [ev(0, 0, 5, 2, 0.5), ev(0, 0, 7, 2, 0.9)];
    assert_eq!(temporal_iou(&pred[0], &gt[0]), 0.6);
    assert_eq!(temporal_iou(&pred[1], &gt[0]), 0.8);
    assert_eq!(
        match_events(&pred, &gt, 0.5),
        vec![Pair::Matched { pred: 1, gt: 0, iou: 0.8 }, Pair::SpuriousPred { pred: 0 }]
    );
}

/// Interpolated precision by definition: for each recall level scan every
/// prefix of the ranking.
fn ap_oracle(dets: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut sorted: Vec<(f64, bool)> = dets.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut total = 0.0;
    for r in 0..=10 {
        let level = r as f64 / 10.0;
        let mut best: f64 = 0.0;
        for cut in 1..=sorted.len() {
            let tp = sorted[..cut].iter().filter(|d| d.1).count();
            if tp as f64 / n_gt as f64 >= level - 1e-12 {
                best = best.max(tp as f64 / cut as f64);
            }
        }
        total += best;
    }
    total / 11.0
}

#[test]
fn ap_examples() {
    assert_eq!(average_precision_11pt(&[(0.9, true)], 1), 1.0);
    assert_eq!(average_precision_11pt(&[(0.9, false)], 1), 0.0);
    let d = [(0.9, true), (0.8, false), (0.7, true)];
    let ap = average_precision_11pt(&d, 2);
    assert!((ap - ap_oracle(&d, 2)).abs() < 1e-12);
    assert!((ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
}

#[test]
fn ap_matches_oracle_on_random_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..300 {
        let n = rng.random_range(0..25usize);
        // distinct scores so the oracle's sort order is unambiguous
        let mut dets: Vec<(f64, bool)> = (0..n).map(|i| (i as f64 / 32.0 + rng.random_range(0.0..0.01), rng.random_bool(0.5))).collect();
        dets.reverse();
        let tps = dets.iter().filter(|d| d.1).count();
        let n_gt = tps + rng.random_range(if tps == 0 { 1 } else { 0 }..4usize);
        let ap = average_precision_11pt(&dets, n_gt);
        assert!((ap - ap_oracle(&dets, n_gt)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&ap));
    }
}

#[test]
fn perfect_and_empty_detectors() {
    let (_, gts) = fixture();
    for iou in [0.0, 0.2, 0.5, 0.9, 1.0] {
        assert_eq!(evaluate(&gts, &gts, iou, 0.5).unwrap().map_value, 1.0);
    }
    let none = set(vec![("a", vec![]), ("b", vec![]), ("c", vec![])]);
    let r = evaluate(&none, &gts, 0.5, 0.5).unwrap();
    assert_eq!(r.map_value, 0.0);
    for (k, row) in r.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if j != 0 {
                assert_eq!(v, 0);
            } else {
                assert_eq!(v, r.gt_counts[k]);
            }
        }
    }
}

#[test]
fn vocabulary_mismatch_is_schema_error() {
    let (preds, mut gts) = fixture();
    gts.class_names[3] = "corner".into();
    assert!(matches!(evaluate(&preds, &gts, 0.5, 0.5), Err(Error::Schema(_))));
}

fn random_events(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<Event> {
    // events on one tracklet never overlap each other
    let mut out = Vec::new();
    for _ in 0..n {
        let id = rng.random_range(0..3u32);
        let s = rng.random_range(0..t - 1);
        let e = (s + rng.random_range(0..12)).min(t - 1);
        let candidate = ev(id, s, e, rng.random_range(1..9), rng.random_range(0.0..1.0));
        if !out.iter().any(|o: &Event| o.tracklet_id == id && o.start_frame <= e && s <= o.end_frame) {
            out.push(candidate);
        }
    }
    out
}

/// A noisy detector: ground truth jittered, relabelled or dropped, plus
/// spurious events.
fn random_corpus(seed: u64) -> (EventSet, EventSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Vec::new();
    let mut p = Vec::new();
    for c in 0..4 {
        let gt = random_events(&mut rng, 6, 60);
        let mut pred: Vec<Event> = Vec::new();
        for e in &gt {
            if rng.random_bool(0.2) {
                continue;
            }
            let shift = rng.random_range(0..5usize);
            let mut q = ev(e.tracklet_id, e.start_frame + shift, e.end_frame + shift, e.class, rng.random_range(0.0..1.0));
            if rng.random_bool(0.2) {
                q.class = rng.random_range(1..9);
            }
            pred.push(q);
        }
        pred.extend(random_events(&mut rng, 3, 60));
        g.push((format!("c{c}"), gt));
        p.push((format!("c{c}"), pred));
    }
    let to_set = |v: Vec<(String, Vec<Event>)>| EventSet {
        class_names: default_class_names(),
        clips: v.into_iter().map(|(clip_id, events)| ClipEvents { clip_id, events }).collect(),
    };
    (to_set(p), to_set(g))
}

proptest! {
    #[test]
    fn iou_symmetric_bounded_and_one_iff_identical(
        a in (0usize..40, 0usize..15), b in (0usize..40, 0usize..15),
    ) {
        let x = ev(0, a.0, a.0 + a.1, 1, 0.5);
        let y = ev(0, b.0, b.0 + b.1, 2, 0.5);
        let i = temporal_iou(&x, &y);
        prop_assert_eq!(i, temporal_iou(&y, &x));
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert_eq!(i == 1.0, a == b);
    }

    #[test]
    fn matching_is_a_partial_injection(seed in 0u64..5000, thr in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_events(&mut rng, 8, 50);
        let pred = random_events(&mut rng, 8, 50);
        let pairs = match_events(&pred, &gt, thr);
        let mut seen_p = vec![0; pred.len()];
        let mut seen_g = vec![0; gt.len()];
        let mut tp = 0;
        for p in &pairs {
            match *p {
                Pair::Matched { pred: i, gt: j, iou } => {
                    seen_p[i] += 1;
                    seen_g[j] += 1;
                    prop_assert!(iou >= thr && pred[i].tracklet_id == gt[j].tracklet_id);
                    tp += (pred[i].class == gt[j].class) as usize;
                }
                Pair::MissedGt { gt: j } => seen_g[j] += 1,
                Pair::SpuriousPred { pred: i } => seen_p[i] += 1,
            }
        }
        prop_assert!(seen_p.iter().chain(&seen_g).all(|&n| n == 1));
        prop_assert!(tp <= pred.len().min(gt.len()));
    }

    #[test]
    fn ap_depends_only_on_score_rank(
        dets in prop::collection::vec((0.0f64..1.0, any::<bool>()), 0..30),
        extra_gt in 1usize..5,
        transform in 0usize..3,
    ) {
        let n_gt = dets.iter().filter(|d| d.1).count() + extra_gt;
        let f = |s: f64| match transform {
            0 => 0.25 * s + 0.5,
            1 => s.powi(3),
            _ => s.exp() / 3.0,
        };
        let moved: Vec<(f64, bool)> = dets.iter().map(|&(s, t)| (f(s), t)).collect();
        prop_assert_eq!(average_precision_11pt(&dets, n_gt), average_precision_11pt(&moved, n_gt));
    }

    #[test]
    fn report_identities(seed in 0u64..3000, iou in 0.05f64..0.95, score_thr in 0.0f64..1.0) {
        let (preds, gts) = random_corpus(seed);
        let r = evaluate(&preds, &gts, iou, score_thr).unwrap();
        for k in 1..9 {
            let kept = preds.clips.iter().flat_map(|c| &c.events).filter(|e| e.class == k && e.score >= score_thr).count();
            let column: usize = r.confusion.iter().map(|row| row[k]).sum();
            prop_assert_eq!(column, kept);
            prop_assert_eq!(r.confusion[k].iter().sum::<usize>(), r.gt_counts[k]);
            prop_assert_eq!(r.tp_fp[k].0 + r.tp_fp[k].1, kept);
            if let Some(ap) = r.per_class_ap[k] {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
        }
    }

    #[test]
    fn map_non_increasing_in_iou(seed in 0u64..3000) {
        let (preds, gts) = random_corpus(seed);
        let mut last = f64::INFINITY;
        for i in 0..=20 {
            let m = evaluate(&preds, &gts, i as f64 / 20.0, 0.5).unwrap().map_value;
            prop_assert!(m <= last + 1e-15, "mAP rose to {} at {}", m, i);
            last = m;
        }
    }
}
