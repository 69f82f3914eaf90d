//! Clip and annotation types, their invariants, and state normalisation.
//!
//! Pitch frame: origin at the centre spot, `x` toward the right-hand goal,
//! metres. The pitch is 105 × 68; tracked positions may exceed it by a
//! margin (|x| ≤ 65, |y| ≤ 45). Frame intervals are inclusive everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

pub const FRAME_RATE: f64 = 25.0;
pub const HALF_LENGTH: f64 = 52.5;
pub const HALF_WIDTH: f64 = 34.0;
pub const MAX_ABS_X: f64 = 65.0;
pub const MAX_ABS_Y: f64 = 45.0;
/// Velocity normalisation constant and clamp (m/s).
pub const SPEED_SCALE: f64 = 12.0;

pub const BACKGROUND: usize = 0;

/// Action vocabulary; index 0 is background.
pub const CLASS_NAMES: [&str; 9] = [
    "background",
    "ball-drive",
    "pass",
    "cross",
    "header",
    "throw-in",
    "shot",
    "tackle",
    "ball-block",
];

/// The eight action classes plus background, indexed as in [`CLASS_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Background = 0,
    BallDrive = 1,
    Pass = 2,
    Cross = 3,
    Header = 4,
    ThrowIn = 5,
    Shot = 6,
    Tackle = 7,
    BallBlock = 8,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Background,
        Action::BallDrive,
        Action::Pass,
        Action::Cross,
        Action::Header,
        Action::ThrowIn,
        Action::Shot,
        Action::Tackle,
        Action::BallBlock,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn default_class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Screen-space bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerFrameState {
    pub tracklet_id: u32,
    /// 0 or 1.
    pub team: u8,
    pub bbox: BBox,
    /// Pitch position in metres.
    pub position: [f64; 2],
    /// Pitch velocity in m/s.
    pub velocity: [f64; 2],
    pub action_label: usize,
    pub shirt_number: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub players: Vec<PlayerFrameState>,
}

/// An action tube reduced to its temporal extent on one tracklet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub tracklet_id: u32,
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    pub class: usize,
    pub score: f64,
}

impl Event {
    pub fn len(&self) -> usize {
        self.end_frame + 1 - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame < self.start_frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub frame_rate: f64,
    pub frames: Vec<Frame>,
    pub gt_events: Vec<Event>,
    pub class_names: Vec<String>,
}

impl Clip {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Distinct tracklet ids in ascending order.
    pub fn tracklets(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .frames
            .iter()
            .flat_map(|f| f.players.iter().map(|p| p.tracklet_id))
            .collect();
        set.into_iter().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn player(&self, frame: usize, tracklet: u32) -> Option<&PlayerFrameState> {
        self.frames
            .get(frame)?
            .players
            .iter()
            .find(|p| p.tracklet_id == tracklet)
    }

    /// Dense `(tracklet, frame)` layout: every tracklet observed in every frame.
    pub fn dense_layout(&self) -> Result<DenseLayout> {
        let tracklets = self.tracklets();
        let rank: BTreeMap<u32, usize> =
            tracklets.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let t = self.num_frames();
        let mut slot = vec![usize::MAX; tracklets.len() * t];
        for (f, frame) in self.frames.iter().enumerate() {
            for (j, p) in frame.players.iter().enumerate() {
                slot[rank[&p.tracklet_id] * t + f] = j;
            }
        }
        if let Some(missing) = slot.iter().position(|&s| s == usize::MAX) {
            return Err(Error::Alignment(format!(
                "clip {}: tracklet {} missing at frame {}",
                self.clip_id,
                tracklets[missing / t.max(1)],
                missing % t.max(1)
            )));
        }
        Ok(DenseLayout {
            tracklets,
            frames: t,
            slot,
        })
    }

    /// Per-frame label of every tracklet in dense layout order (`n * T + t`).
    pub fn dense_labels(&self, layout: &DenseLayout) -> Vec<usize> {
        (0..layout.len())
            .map(|node| layout.state(self, node).action_label)
            .collect()
    }
}

/// Maps dense node index `n * T + t` to a player record of a [`Clip`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayout {
    pub tracklets: Vec<u32>,
    pub frames: usize,
    slot: Vec<usize>,
}

impl DenseLayout {
    pub fn len(&self) -> usize {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_empty()
    }

    pub fn node(&self, rank: usize, frame: usize) -> usize {
        rank * self.frames + frame
    }

    pub fn state<'c>(&self, clip: &'c Clip, node: usize) -> &'c PlayerFrameState {
        let frame = node % self.frames;
        &clip.frames[frame].players[self.slot[node]]
    }
}

/// Events of one clip, e.g. ground truth or detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipEvents {
    pub clip_id: String,
    pub events: Vec<Event>,
}

/// Events of many clips sharing one class vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSet {
    pub class_names: Vec<String>,
    pub clips: Vec<ClipEvents>,
}

impl EventSet {
    pub fn new(class_names: Vec<String>) -> Self {
        Self {
            class_names,
            clips: Vec::new(),
        }
    }

    /// Ground-truth events of a clip corpus. Clips must share a vocabulary.
    pub fn ground_truth(clips: &[Clip]) -> Result<Self> {
        let names = clips
            .first()
            .map(|c| c.class_names.clone())
            .unwrap_or_else(default_class_names);
        if let Some(c) = clips.iter().find(|c| c.class_names != names) {
            return Err(Error::Schema(format!(
                "clip {} uses a different class vocabulary",
                c.clip_id
            )));
        }
        Ok(Self {
            class_names: names,
            clips: clips
                .iter()
                .map(|c| ClipEvents {
                    clip_id: c.clip_id.clone(),
                    events: c.gt_events.clone(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.clips.iter().map(|c| c.events.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalised `(p̂x, p̂y, v̂x, v̂y, team)` node state.
pub fn normalize_state(s: &PlayerFrameState) -> [f64; 5] {
    let clamp = |v: f64| (v / SPEED_SCALE).clamp(-1.0, 1.0);
    [
        s.position[0] / HALF_LENGTH,
        s.position[1] / HALF_WIDTH,
        clamp(s.velocity[0]),
        clamp(s.velocity[1]),
        if s.team == 0 { 0.0 } else { 1.0 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    EmptyClip,
    Vocabulary,
    BoundingBox,
    Label,
    Team,
    PitchBounds,
    DuplicateTracklet,
    TeamConsistency,
    SingleActor,
    EventShape,
    EventSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: Rule,
    pub frame: Option<usize>,
    pub tracklets: Vec<u32>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(fr) = self.frame {
            write!(f, " frame {fr}")?;
        }
        if !self.tracklets.is_empty() {
            write!(f, " tracklets {:?}", self.tracklets)?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Checks every clip invariant. An empty result means the clip is valid.
pub fn validate_clip(c: &Clip) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, frame, tracklets: Vec<u32>, detail: String| {
        out.push(Violation {
            rule,
            frame,
            tracklets,
            detail,
        })
    };
    if c.frames.is_empty() {
        push(Rule::EmptyClip, None, vec![], "clip has no frames".into());
    }
    if c.class_names.first().map(String::as_str) != Some("background") {
        push(
            Rule::Vocabulary,
            None,
            vec![],
            "class 0 must be `background`".into(),
        );
    }
    let n_classes = c.class_names.len();
    let mut teams: BTreeMap<u32, u8> = BTreeMap::new();

    for (t, frame) in c.frames.iter().enumerate() {
        let mut seen = BTreeSet::new();
        let mut actors = Vec::new();
        for p in &frame.players {
            let id = p.tracklet_id;
            if !seen.insert(id) {
                push(
                    Rule::DuplicateTracklet,
                    Some(t),
                    vec![id],
                    "tracklet appears twice".into(),
                );
            }
            if !(p.bbox.w > 0.0 && p.bbox.h > 0.0) {
                push(
                    Rule::BoundingBox,
                    Some(t),
                    vec![id],
                    format!("non-positive box size {}x{}", p.bbox.w, p.bbox.h),
                );
            }
            if p.action_label >= n_classes {
                push(
                    Rule::Label,
                    Some(t),
                    vec![id],
                    format!("label {} outside [0, {n_classes})", p.action_label),
                );
            }
            if p.team > 1 {
                push(Rule::Team, Some(t), vec![id], format!("team {}", p.team));
            }
            let [x, y] = p.position;
            if !(x.abs() <= MAX_ABS_X && y.abs() <= MAX_ABS_Y) {
                push(
                    Rule::PitchBounds,
                    Some(t),
                    vec![id],
                    format!("position ({x}, {y}) beyond pitch margin"),
                );
            }
            match teams.get(&id) {
                Some(&team) if team != p.team => push(
                    Rule::TeamConsistency,
                    Some(t),
                    vec![id],
                    format!("team changed from {team} to {}", p.team),
                ),
                Some(_) => {}
                None => {
                    teams.insert(id, p.team);
                }
            }
            if p.action_label != BACKGROUND {
                actors.push(id);
            }
        }
        if actors.len() > 1 {
            push(
                Rule::SingleActor,
                Some(t),
                actors,
                "more than one non-background label".into(),
            );
        }
    }

    for (i, e) in c.gt_events.iter().enumerate() {
        if e.start_frame > e.end_frame
            || e.class == BACKGROUND
            || e.class >= n_classes
            || !(0.0..=1.0).contains(&e.score)
        {
            push(
                Rule::EventShape,
                None,
                vec![e.tracklet_id],
                format!("event #{i} malformed: {e:?}"),
            );
            continue;
        }
        for t in e.start_frame..=e.end_frame {
            let label = c.player(t, e.tracklet_id).map(|p| p.action_label);
            if label != Some(e.class) {
                push(
                    Rule::EventSpan,
                    Some(t),
                    vec![e.tracklet_id],
                    format!(
                        "event #{i} ({}..={}, class {}) disagrees with frame label {:?}",
                        e.start_frame, e.end_frame, e.class, label
                    ),
                );
                break;
            }
        }
    }
    out
}
