//! Generative rules of the simulator, scanned over seeded corpora.

use pitchgraph::datamodel::{validate_clip, Action, Clip};
use pitchgraph::simulator::{
    self, generate_dataset, in_attacking_third, in_goalmouth, in_wide_lane, simulate_clip,
    simulate_clip_traced, SimConfig, SimTrace, TouchKind, HEADER_HEIGHT,
};

fn corpus(n: u64) -> Vec<(Clip, SimTrace)> {
    let cfg = SimConfig::default();
    (0..n).map(|s| simulate_clip_traced(&cfg, 1000 + s).unwrap()).collect()
}

fn pos(clip: &Clip, frame: usize, tid: u32) -> [f64; 2] {
    clip.player(frame, tid).unwrap().position
}

#[test]
fn most_clips_contain_an_event() {
    let cfg = SimConfig::default();
    let with_event = (0..1000u64)
        .filter(|&s| !simulate_clip(&cfg, s).unwrap().gt_events.is_empty())
        .count();
    assert!(with_event >= 800, "{with_event} of 1000 clips have events");
}

#[test]
fn every_clip_is_valid() {
    for (c, _) in corpus(300) {
        let v = validate_clip(&c);
        assert!(v.is_empty(), "{}: {}", c.clip_id, v[0]);
    }
}

#[test]
fn throw_ins_are_taken_at_the_sideline() {
    let mut seen = 0;
    for (c, trace) in corpus(600) {
        for e in c.gt_events.iter().filter(|e| e.class == Action::ThrowIn.index()) {
            let touch = e.start_frame + 3;
            let p = pos(&c, touch, e.tracklet_id);
            assert!(p[1].abs() >= 34.0 - 1.5, "{}: y = {}", c.clip_id, p[1]);
            seen += 1;
        }
        for t in trace.touches.iter().filter(|t| t.kind == TouchKind::Action(Action::ThrowIn)) {
            let s = c.player(t.frame, t.tracklet_id).unwrap();
            assert!(s.position[1].abs() >= 32.5);
            assert_eq!(s.velocity, [0.0, 0.0]);
        }
    }
    assert!(seen > 20, "only {seen} throw-ins");
}

#[test]
fn tackles_need_a_close_opponent_who_takes_the_ball() {
    let mut seen = 0;
    for (c, trace) in corpus(600) {
        for (k, t) in trace.touches.iter().enumerate() {
            if t.kind != TouchKind::Action(Action::Tackle) {
                continue;
            }
            seen += 1;
            let victim = t.victim.expect("tackle has a victim");
            let vt = c.player(t.frame, victim).unwrap();
            assert_ne!(vt.team, t.team);
            let d = pos(&c, t.frame, victim);
            let me = pos(&c, t.frame, t.tracklet_id);
            assert!((d[0] - me[0]).hypot(d[1] - me[1]) <= 2.0);
            if let Some(next) = trace.touches.get(k + 1) {
                assert_eq!(next.tracklet_id, t.tracklet_id, "tackler keeps the ball");
            }
            if t.frame + 6 <= c.num_frames() {
                assert!(c.gt_events.iter().any(|e| e.tracklet_id == t.tracklet_id
                    && e.class == Action::BallDrive.index()
                    && e.start_frame == t.frame + 4));
            }
        }
    }
    assert!(seen > 20, "only {seen} tackles");
}

#[test]
fn crosses_shots_headers_and_blocks_follow_their_rules() {
    let mut counts = [0usize; 9];
    for (c, trace) in corpus(600) {
        for (k, t) in trace.touches.iter().enumerate() {
            let TouchKind::Action(a) = t.kind else { continue };
            counts[a.index()] += 1;
            let p = pos(&c, t.frame, t.tracklet_id);
            match a {
                Action::Cross => {
                    assert!(in_attacking_third(t.team, p) && in_wide_lane(p), "{p:?}");
                    assert!(in_goalmouth(t.team, t.target.unwrap()));
                }
                Action::Shot => assert!(in_attacking_third(t.team, p)),
                Action::Header => assert!(t.ball_height > HEADER_HEIGHT),
                Action::BallBlock => {
                    let shot = &trace.touches[k - 1];
                    assert_eq!(shot.kind, TouchKind::Action(Action::Shot));
                    assert_ne!(shot.team, t.team);
                    assert!((1..=3).contains(&(t.frame - shot.frame)));
                }
                _ => {}
            }
        }
    }
    for a in [Action::Cross, Action::Shot, Action::Header, Action::BallBlock] {
        assert!(counts[a.index()] > 20, "{a}: {}", counts[a.index()]);
    }
}

#[test]
fn labelled_actions_match_touches() {
    for (c, trace) in corpus(300) {
        for e in &c.gt_events {
            if e.class == Action::BallDrive.index() {
                continue;
            }
            assert!(
                trace.touches.iter().any(|t| t.tracklet_id == e.tracklet_id
                    && t.kind == TouchKind::Action(Action::from_index(e.class).unwrap())
                    && t.frame + 3 >= e.start_frame
                    && t.frame <= e.end_frame + 3),
                "{}: {e:?}",
                c.clip_id
            );
        }
    }
}

#[test]
fn neighbours_react_to_touches() {
    let mut checked = 0;
    for (c, trace) in corpus(300) {
        let dt = 1.0 / c.frame_rate;
        for r in &trace.reactions {
            assert!(r.start > r.touch_frame && r.start < r.touch_frame + 5);
            if r.start + 1 >= c.num_frames() {
                continue;
            }
            let v0 = c.player(r.start, r.tracklet_id).unwrap().velocity;
            let v1 = c.player(r.start + 1, r.tracklet_id).unwrap().velocity;
            let along = ((v1[0] - v0[0]) * r.dir[0] + (v1[1] - v0[1]) * r.dir[1]) / dt;
            let at_cap = v0[0].hypot(v0[1]) >= simulator::MAX_SPEED - 1e-6;
            assert!(along > 0.0 || at_cap, "{}: {r:?} along {along}", c.clip_id);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn kinematics_are_plausible() {
    for (c, _) in corpus(300) {
        let dt = 1.0 / c.frame_rate;
        for tid in c.tracklets() {
            for f in 0..c.num_frames() {
                let v = c.player(f, tid).unwrap().velocity;
                assert!(v[0].hypot(v[1]) <= 12.0);
                if f > 0 {
                    let u = c.player(f - 1, tid).unwrap().velocity;
                    assert!((v[0] - u[0]).hypot(v[1] - u[1]) / dt <= 8.0);
                }
            }
        }
    }
}

#[test]
fn at_most_one_actor_per_frame() {
    for (c, _) in corpus(300) {
        for f in &c.frames {
            assert!(f.players.iter().filter(|p| p.action_label != 0).count() <= 1);
        }
    }
}

#[test]
fn dataset_split_is_deterministic_and_disjoint() {
    let cfg = SimConfig::default();
    let d = generate_dataset(&cfg, 1000, 7).unwrap();
    assert_eq!((d.train.len(), d.val.len()), (800, 200));
    let ids: std::collections::HashSet<&str> =
        d.train.iter().chain(&d.val).map(|c| c.clip_id.as_str()).collect();
    assert_eq!(ids.len(), 1000);
    for (k, &n) in d.class_counts.iter().enumerate().skip(1) {
        let warned = d.warnings.iter().any(|w| w.contains(Action::ALL[k].name()));
        assert_eq!(warned, n < 20, "class {k}: {n}");
    }
    println!("class counts {:?}", d.class_counts);
    let again = generate_dataset(&cfg, 1000, 7).unwrap();
    assert_eq!(d, again);
}

#[test]
fn scarce_classes_raise_warnings() {
    let w = simulator::count_warnings(&[0, 100, 0, 5, 100, 100, 100, 100, 100], 500);
    assert_eq!(w.len(), 2);
    assert!(w[0].contains("pass") && w[1].contains("cross"));
}
