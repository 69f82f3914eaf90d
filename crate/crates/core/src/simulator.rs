//! Synthetic clip generator.
//!
//! Players steer toward formation anchors that follow a hidden ball; one
//! scripted opening action per clip (chosen uniformly among the seven
//! instantaneous classes) is followed by touches at a mean spacing of
//! `event_rate` frames. Labels come from generative rules:
//!
//! * instantaneous actions label the 7 frames centred on the touch;
//! * a ball-drive runs from the start of possession to 4 frames before the
//!   carrier's next action (so windows never overlap);
//! * a throw-in is taken standing within 1.5 m of a sideline;
//! * a tackle fires when an opponent closes to 1.6 m and takes the ball;
//! * a cross is played from a wide lane of the attacking third into the
//!   goalmouth; a shot only from the attacking third;
//! * a header happens only while the ball is above 1.8 m;
//! * a block is made by a defender 2–3 frames after a shot; the two
//!   windows split at the midpoint between the touches;
//! * the six players nearest a touch accelerate along the new ball
//!   direction, starting 1–3 frames after it.
//!
//! Speeds stay below 10 m/s and accelerations below 7.9 m/s².

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::datamodel::{
    default_class_names, Action, BBox, Clip, Event, Frame, PlayerFrameState, HALF_LENGTH,
    HALF_WIDTH, MAX_ABS_X, MAX_ABS_Y,
};
use crate::error::{Error, Result};

pub const WINDOW_HALF: usize = 3;
pub const MIN_TOUCH_GAP: usize = 8;
pub const MAX_SPEED: f64 = 10.0;
pub const MAX_ACCEL: f64 = 7.9;
pub const HEADER_HEIGHT: f64 = 1.8;
pub const TACKLE_RANGE: f64 = 1.6;
pub const SIDELINE_RANGE: f64 = 1.5;
/// `x` (in the attacking direction) where the attacking third begins.
pub const ATTACKING_THIRD: f64 = HALF_LENGTH / 3.0;
/// `|y|` beyond which a player is in a wide lane.
pub const WIDE_LANE: f64 = HALF_WIDTH / 3.0;
pub const GOALMOUTH_DEPTH: f64 = 16.5;
pub const GOALMOUTH_HALF_WIDTH: f64 = 20.16;
pub const REACTION_NEIGHBOURS: usize = 6;
pub const REACTION_FRAMES: usize = 5;

const TAU: f64 = 0.25;
const ARRIVE_GAIN: f64 = 1.2;
const REACTION_PUSH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_players_per_team: usize,
    pub frames: usize,
    pub frame_rate: f64,
    /// Mean frames between ball touches after the opening action.
    pub event_rate: f64,
    /// Std of the position measurement noise (m), truncated at 2σ.
    pub position_noise: f64,
    /// Std of the velocity measurement noise (m/s), truncated at 2σ.
    pub velocity_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_players_per_team: 10,
            frames: 50,
            frame_rate: 25.0,
            event_rate: 65.0,
            position_noise: 0.05,
            velocity_noise: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 10 {
            return Err(Error::Config(format!(
                "clips need at least 10 frames to hold an event, got {}",
                self.frames
            )));
        }
        if self.n_players_per_team < 3 {
            return Err(Error::Config(format!(
                "need at least 3 players per team, got {}",
                self.n_players_per_team
            )));
        }
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::Config(format!("invalid frame rate {}", self.frame_rate)));
        }
        if !(self.event_rate > 0.0) || !self.event_rate.is_finite() {
            return Err(Error::Config(format!("invalid event rate {}", self.event_rate)));
        }
        for (name, v) in [("position", self.position_noise), ("velocity", self.velocity_noise)] {
            if !(v >= 0.0) || v > 1.0 {
                return Err(Error::Config(format!("{name} noise must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TouchKind {
    Action(Action),
    Reception,
}

/// A ball touch as seen by the generator, including hidden ball state.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchRecord {
    pub frame: usize,
    pub tracklet_id: u32,
    pub team: u8,
    pub kind: TouchKind,
    pub ball_height: f64,
    /// Landing point of the flight the touch starts, if any.
    pub target: Option<[f64; 2]>,
    /// Previous carrier, for tackles.
    pub victim: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub tracklet_id: u32,
    pub touch_frame: usize,
    /// First frame whose integration step applies the push.
    pub start: usize,
    pub dir: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub touches: Vec<TouchRecord>,
    pub reactions: Vec<Reaction>,
}

/// +1 for the team attacking toward +x.
pub fn attack_dir(team: u8) -> f64 {
    if team == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn in_attacking_third(team: u8, p: [f64; 2]) -> bool {
    p[0] * attack_dir(team) >= ATTACKING_THIRD
}

pub fn in_wide_lane(p: [f64; 2]) -> bool {
    p[1].abs() > WIDE_LANE
}

pub fn in_goalmouth(team: u8, p: [f64; 2]) -> bool {
    p[0] * attack_dir(team) >= HALF_LENGTH - GOALMOUTH_DEPTH && p[1].abs() <= GOALMOUTH_HALF_WIDTH
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] * s, a[1] * s]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn unit(a: [f64; 2]) -> [f64; 2] {
    let n = norm(a);
    if n < 1e-12 {
        [0.0, 0.0]
    } else {
        scale(a, 1.0 / n)
    }
}

fn clamp_norm(a: [f64; 2], max: f64) -> [f64; 2] {
    let n = norm(a);
    if n > max {
        scale(a, max / n)
    } else {
        a
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    norm(sub(a, b))
}

fn rotate(a: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [a[0] * c - a[1] * s, a[0] * s + a[1] * c]
}

fn inside(p: [f64; 2], mx: f64, my: f64) -> [f64; 2] {
    [p[0].clamp(-mx, mx), p[1].clamp(-my, my)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scenario {
    Pass,
    Cross,
    Header,
    ThrowIn,
    Shot,
    Tackle,
    Block,
}

const SCENARIOS: [Scenario; 7] = [
    Scenario::Pass,
    Scenario::Cross,
    Scenario::Header,
    Scenario::ThrowIn,
    Scenario::Shot,
    Scenario::Tackle,
    Scenario::Block,
];

#[derive(Debug, Clone, Copy)]
struct Flight {
    from: [f64; 2],
    to: [f64; 2],
    start: f64,
    dur: f64,
    peak: f64,
    receiver: Option<usize>,
}

impl Flight {
    fn s(&self, frame: usize) -> f64 {
        ((frame as f64 - self.start) / self.dur).clamp(0.0, 1.0)
    }

    fn height(&self, frame: usize) -> f64 {
        let s = self.s(frame);
        4.0 * self.peak * s * (1.0 - s)
    }

    fn ground(&self, frame: usize) -> [f64; 2] {
        add(self.from, scale(sub(self.to, self.from), self.s(frame)))
    }
}

#[derive(Debug, Clone, Copy)]
enum Ball {
    Held { player: usize, stationary: bool },
    Flight(Flight),
    Dead([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AfterHeader {
    Dead,
    Pass,
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Act { frame: usize, kind: Option<Action> },
    Reception { frame: usize, player: usize },
    Header { frame: usize, player: usize, then: AfterHeader },
    Block { frame: usize, player: usize },
    Tackle { tackler: usize, earliest: usize },
}

#[derive(Debug, Clone, Copy)]
struct ActiveReaction {
    player: usize,
    touch_frame: usize,
    start: usize,
    end: usize,
    dir: [f64; 2],
}

#[derive(Debug, Clone, Copy, Default)]
struct Body {
    pos: [f64; 2],
    vel: [f64; 2],
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    dt: f64,
    team: Vec<u8>,
    ids: Vec<u32>,
    /// Formation slot in team-relative coordinates.
    slot: Vec<[f64; 2]>,
    /// Wander amplitude, angular frequency, phase.
    wander: Vec<[f64; 3]>,
    body: Vec<Body>,
    ball: Ball,
    ball_pos: [f64; 2],
    dribble: [f64; 2],
    dribble_speed: f64,
    pending: Option<Pending>,
    box_runner: Option<(usize, [f64; 2])>,
    throw_receiver: Option<(usize, [f64; 2])>,
    blocker: Option<usize>,
    active_reactions: Vec<ActiveReaction>,
    /// Current possession eligible for a ball-drive: (player, label start).
    possession: Option<(usize, usize)>,
    drives: Vec<(usize, usize, usize)>,
    instants: Vec<(usize, Action, usize)>,
    trace: SimTrace,
    states: Vec<Vec<Body>>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_players_per_team;
        let team: Vec<u8> = (0..2 * n).map(|i| (i / n) as u8).collect();
        let mut ids: Vec<u32> = (1..=2 * n as u32).collect();
        ids.shuffle(&mut rng);
        let slots = formation(n);
        let slot = (0..2 * n).map(|i| slots[i % n]).collect();
        let wander = (0..2 * n)
            .map(|_| {
                [
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        Sim {
            cfg,
            rng,
            dt: 1.0 / cfg.frame_rate,
            team,
            ids,
            slot,
            wander,
            body: vec![Body::default(); 2 * n],
            ball: Ball::Dead([0.0, 0.0]),
            ball_pos: [0.0, 0.0],
            dribble: [1.0, 0.0],
            dribble_speed: 3.0,
            pending: None,
            box_runner: None,
            throw_receiver: None,
            blocker: None,
            active_reactions: Vec::new(),
            possession: None,
            drives: Vec::new(),
            instants: Vec::new(),
            trace: SimTrace::default(),
            states: Vec::new(),
        }
    }

    fn n(&self) -> usize {
        self.team.len()
    }

    fn anchor(&self, i: usize, frame: usize) -> [f64; 2] {
        let tm = self.team[i];
        let d = attack_dir(tm);
        let [sx, sy] = self.slot[i];
        let [amp, w, phase] = self.wander[i];
        let phase = phase + w * frame as f64 * self.dt;
        let x_rel = 0.8 * sx + 0.4 * self.ball_pos[0] * d + amp * phase.sin();
        let y = 0.75 * sy + 0.3 * self.ball_pos[1] + amp * phase.cos();
        inside([d * x_rel.clamp(-48.0, 48.0), y], 48.0, 31.0)
    }

    fn nearest(&self, to: [f64; 2], mut keep: impl FnMut(usize) -> bool) -> Option<usize> {
        (0..self.n())
            .filter(|&i| keep(i))
            .min_by(|&a, &b| dist(self.body[a].pos, to).total_cmp(&dist(self.body[b].pos, to)))
    }

    fn gap(&mut self) -> usize {
        let extra = (self.cfg.event_rate - MIN_TOUCH_GAP as f64).max(0.0);
        let e: f64 = Exp1.sample(&mut self.rng);
        MIN_TOUCH_GAP + (e * extra).round() as usize
    }

    fn set_dribble(&mut self, player: usize, spread: f64) {
        let d = attack_dir(self.team[player]);
        let angle = self.rng.random_range(-spread..=spread);
        self.dribble = rotate([d, 0.0], angle);
        self.dribble_speed = self.rng.random_range(2.5..5.0);
    }

    fn setup(&mut self) {
        let t = self.cfg.frames;
        let scenario = SCENARIOS[self.rng.random_range(0..SCENARIOS.len())];
        let attack: u8 = self.rng.random_range(0..2);
        let d = attack_dir(attack);
        let t1 = self.rng.random_range(4..=t - 5);
        let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };

        let spot_rel: [f64; 2] = match scenario {
            Scenario::Pass | Scenario::Tackle => {
                [self.rng.random_range(-28.0..28.0), self.rng.random_range(-22.0..22.0)]
            }
            Scenario::Cross => [self.rng.random_range(24.0..34.0), sign * self.rng.random_range(19.0..27.0)],
            Scenario::Header => [self.rng.random_range(-20.0..30.0), self.rng.random_range(-20.0..20.0)],
            Scenario::ThrowIn => [self.rng.random_range(-35.0..35.0), sign * self.rng.random_range(34.0..34.5)],
            Scenario::Shot | Scenario::Block => {
                [self.rng.random_range(20.0..31.0), self.rng.random_range(-12.0..12.0)]
            }
        };
        let spot = [d * spot_rel[0], spot_rel[1]];
        self.ball_pos = spot;
        for i in 0..self.n() {
            let a = self.anchor(i, 0);
            let jx: f64 = StandardNormal.sample(&mut self.rng);
            let jy: f64 = StandardNormal.sample(&mut self.rng);
            let vx: f64 = StandardNormal.sample(&mut self.rng);
            let vy: f64 = StandardNormal.sample(&mut self.rng);
            self.body[i] = Body {
                pos: inside(add(a, [2.5 * jx, 2.5 * jy]), 50.0, 32.0),
                vel: clamp_norm([vx, vy], 2.0),
            };
        }
        let carrier = self
            .nearest(spot, |i| self.team[i] == attack)
            .expect("team has players");
        self.body[carrier].pos = spot;
        let goal = [d * HALF_LENGTH, 0.0];

        match scenario {
            Scenario::Header => {
                let dur = 30.0;
                let from = add(spot, [-d * 28.0, self.rng.random_range(-10.0..10.0)]);
                self.ball = Ball::Flight(Flight {
                    from,
                    to: spot,
                    start: t1 as f64 - 24.0,
                    dur,
                    peak: 4.5,
                    receiver: Some(carrier),
                });
                self.body[carrier].vel = [0.0, 0.0];
                self.pending = Some(Pending::Header {
                    frame: t1,
                    player: carrier,
                    then: AfterHeader::Pass,
                });
                return;
            }
            Scenario::ThrowIn => {
                self.ball = Ball::Held {
                    player: carrier,
                    stationary: true,
                };
                self.body[carrier].vel = [0.0, 0.0];
                let spot_in = [spot[0] + self.rng.random_range(-6.0..6.0), sign * 22.0];
                if let Some(r) = self.nearest(spot_in, |i| self.team[i] == attack && i != carrier) {
                    self.body[r].pos = add(spot_in, [self.rng.random_range(-2.0..2.0), 0.0]);
                    self.throw_receiver = Some((r, self.body[r].pos));
                }
                self.pending = Some(Pending::Act {
                    frame: t1,
                    kind: Some(Action::ThrowIn),
                });
                return;
            }
            _ => {}
        }

        self.ball = Ball::Held {
            player: carrier,
            stationary: false,
        };
        self.possession = Some((carrier, 0));
        match scenario {
            Scenario::Pass => {
                self.set_dribble(carrier, 1.2);
                self.pending = Some(Pending::Act {
                    frame: t1,
                    kind: Some(Action::Pass),
                });
            }
            Scenario::Cross => {
                self.dribble = [d, 0.0];
                self.dribble_speed = self.rng.random_range(2.0..3.5);
                let box_spot = [d * self.rng.random_range(42.0..47.0), self.rng.random_range(-6.0..6.0)];
                if let Some(r) = self.nearest(box_spot, |i| self.team[i] == attack && i != carrier) {
                    self.body[r].pos = [
                        box_spot[0] - d * self.rng.random_range(2.0..6.0),
                        box_spot[1] + self.rng.random_range(-3.0..3.0),
                    ];
                    self.box_runner = Some((r, box_spot));
                }
                self.pending = Some(Pending::Act {
                    frame: t1,
                    kind: Some(Action::Cross),
                });
            }
            Scenario::Shot | Scenario::Block => {
                self.dribble = unit(sub(goal, spot));
                self.dribble_speed = self.rng.random_range(2.0..4.0);
                if scenario == Scenario::Block {
                    if let Some(b) = self.nearest(spot, |i| self.team[i] != attack) {
                        self.body[b].pos = add(spot, scale(unit(sub(goal, spot)), 2.2));
                        self.body[b].vel = scale(self.dribble, self.dribble_speed);
                        self.blocker = Some(b);
                    }
                }
                self.pending = Some(Pending::Act {
                    frame: t1,
                    kind: Some(Action::Shot),
                });
            }
            Scenario::Tackle => {
                self.set_dribble(carrier, 0.7);
                let tackler = self
                    .nearest(spot, |i| self.team[i] != attack)
                    .expect("team has players");
                let perp = [-self.dribble[1], self.dribble[0]];
                let ahead = self.rng.random_range(5.0..7.0);
                let side = self.rng.random_range(-1.0..1.0);
                self.body[tackler].pos = add(add(spot, scale(self.dribble, ahead)), scale(perp, side));
                self.body[tackler].vel = scale(self.dribble, -3.0);
                self.body[carrier].vel = scale(self.dribble, self.dribble_speed);
                self.pending = Some(Pending::Tackle { tackler, earliest: 4 });
            }
            Scenario::Header | Scenario::ThrowIn => unreachable!(),
        }
    }

    fn record(&mut self, frame: usize, player: usize, kind: TouchKind, target: Option<[f64; 2]>, victim: Option<usize>) {
        let ball_height = match self.ball {
            Ball::Flight(f) => f.height(frame),
            _ => 0.0,
        };
        self.trace.touches.push(TouchRecord {
            frame,
            tracklet_id: self.ids[player],
            team: self.team[player],
            kind,
            ball_height,
            target,
            victim: victim.map(|v| self.ids[v]),
        });
        if let TouchKind::Action(a) = kind {
            self.instants.push((player, a, frame));
        }
    }

    fn end_possession(&mut self, frame: usize) {
        if let Some((p, from)) = self.possession.take() {
            if frame >= from + WINDOW_HALF + 1 {
                self.drives.push((p, from, frame - WINDOW_HALF - 1));
            }
        }
    }

    fn launch(&mut self, frame: usize, from: [f64; 2], to: [f64; 2], speed: f64, peak: f64, min_dur: f64, receiver: Option<usize>) -> Flight {
        let dur = (dist(from, to) / speed * self.cfg.frame_rate).round().max(min_dur);
        let f = Flight {
            from,
            to,
            start: frame as f64,
            dur,
            peak,
            receiver,
        };
        self.ball = Ball::Flight(f);
        f
    }

    fn react(&mut self, frame: usize, toucher: usize, dir: [f64; 2], exclude: &[usize]) {
        let dir = unit(dir);
        if norm(dir) == 0.0 {
            return;
        }
        let origin = self.body[toucher].pos;
        let mut order: Vec<usize> = (0..self.n())
            .filter(|&i| i != toucher && !exclude.contains(&i))
            .collect();
        order.sort_by(|&a, &b| {
            dist(self.body[a].pos, origin)
                .total_cmp(&dist(self.body[b].pos, origin))
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(REACTION_NEIGHBOURS) {
            let start = frame + self.rng.random_range(1..=3);
            self.active_reactions.push(ActiveReaction {
                player: i,
                touch_frame: frame,
                start,
                end: start + REACTION_FRAMES,
                dir,
            });
        }
    }

    fn pass_receiver(&mut self, p: usize, min: f64, max: f64) -> usize {
        let tm = self.team[p];
        let d = attack_dir(tm);
        let pos = self.body[p].pos;
        let cand: Vec<(usize, f64)> = (0..self.n())
            .filter(|&i| i != p && self.team[i] == tm)
            .filter_map(|i| {
                let r = dist(self.body[i].pos, pos);
                (r >= min && r <= max).then(|| {
                    let gain = (self.body[i].pos[0] - pos[0]) * d;
                    (i, 1.0 + gain.max(0.0) / 10.0)
                })
            })
            .collect();
        if cand.is_empty() {
            return self
                .nearest(pos, |i| i != p && self.team[i] == tm)
                .expect("team has players");
        }
        let total: f64 = cand.iter().map(|c| c.1).sum();
        let mut pick = self.rng.random_range(0.0..total);
        for &(i, w) in &cand {
            if pick < w {
                return i;
            }
            pick -= w;
        }
        cand[cand.len() - 1].0
    }

    fn lead(&self, r: usize, ahead: f64) -> [f64; 2] {
        inside(add(self.body[r].pos, scale(self.body[r].vel, ahead)), 50.0, 32.0)
    }

    fn act(&mut self, frame: usize, forced: Option<Action>) {
        let Ball::Held { player: p, stationary } = self.ball else {
            return;
        };
        let pos = self.body[p].pos;
        let tm = self.team[p];
        let d = attack_dir(tm);
        let attacking = in_attacking_third(tm, pos);
        let kind = match forced {
            Some(Action::ThrowIn) if stationary && pos[1].abs() >= HALF_WIDTH - SIDELINE_RANGE => Action::ThrowIn,
            Some(Action::Cross) if attacking && in_wide_lane(pos) => Action::Cross,
            Some(Action::Shot) if attacking => Action::Shot,
            Some(_) => Action::Pass,
            None if attacking && pos[1].abs() <= 16.0 && self.rng.random_bool(0.5) => Action::Shot,
            None if attacking && in_wide_lane(pos) && self.rng.random_bool(0.5) => Action::Cross,
            None => Action::Pass,
        };
        self.end_possession(frame);

        match kind {
            Action::ThrowIn | Action::Pass => {
                let (r, to, speed, peak) = if kind == Action::ThrowIn {
                    let r = match self.throw_receiver {
                        Some((r, _)) => r,
                        None => self.pass_receiver(p, 5.0, 22.0),
                    };
                    (r, self.body[r].pos, 11.0, 2.2)
                } else {
                    let r = self.pass_receiver(p, 8.0, 28.0);
                    (r, self.lead(r, 0.5), 14.0, 0.2)
                };
                self.record(frame, p, TouchKind::Action(kind), Some(to), None);
                let f = self.launch(frame, pos, to, speed, peak, 6.0, Some(r));
                self.pending = Some(Pending::Reception {
                    frame: frame + f.dur as usize,
                    player: r,
                });
                self.react(frame, p, sub(to, pos), &[r]);
            }
            Action::Cross => {
                let runner = match self.box_runner {
                    Some((r, _)) => r,
                    None => {
                        let spot = [d * 44.0, 0.0];
                        self.nearest(spot, |i| i != p && self.team[i] == tm)
                            .expect("team has players")
                    }
                };
                let rp = self.body[runner].pos;
                let to = [
                    d * (rp[0] * d).clamp(HALF_LENGTH - GOALMOUTH_DEPTH + 1.0, HALF_LENGTH - 3.0),
                    rp[1].clamp(-6.0, 6.0),
                ];
                self.record(frame, p, TouchKind::Action(Action::Cross), Some(to), None);
                let f = self.launch(frame, pos, to, 18.0, 5.0, 10.0, Some(runner));
                self.box_runner = Some((runner, to));
                self.pending = Some(Pending::Header {
                    frame: frame + (0.8 * f.dur).floor() as usize,
                    player: runner,
                    then: AfterHeader::Dead,
                });
                self.react(frame, p, sub(to, pos), &[runner]);
            }
            Action::Shot => {
                let to = [d * (HALF_LENGTH + 1.0), self.rng.random_range(-3.0..3.0)];
                self.record(frame, p, TouchKind::Action(Action::Shot), Some(to), None);
                self.launch(frame, pos, to, 24.0, 0.6, 6.0, None);
                let blocker = self.blocker.filter(|&b| self.team[b] != tm);
                self.pending = blocker.map(|b| Pending::Block {
                    frame: frame + self.rng.random_range(2..=3),
                    player: b,
                });
                self.react(frame, p, sub(to, pos), &blocker.into_iter().collect::<Vec<_>>());
            }
            _ => unreachable!("carriers only pass, cross, shoot or throw"),
        }
    }

    fn receive(&mut self, frame: usize, r: usize) {
        self.ball = Ball::Held {
            player: r,
            stationary: false,
        };
        self.record(frame, r, TouchKind::Reception, None, None);
        self.possession = Some((r, frame));
        self.throw_receiver = None;
        self.box_runner = None;
        self.set_dribble(r, 1.0);
        let next = frame + self.gap();
        self.pending = Some(Pending::Act { frame: next, kind: None });
    }

    fn step_touches(&mut self, frame: usize) {
        let Some(pending) = self.pending else { return };
        match pending {
            Pending::Act { frame: f, kind } if f == frame => {
                self.pending = None;
                self.act(frame, kind);
            }
            Pending::Reception { frame: f, player } if f == frame => {
                self.pending = None;
                self.receive(frame, player);
            }
            Pending::Header { frame: f, player, then } if f == frame => {
                self.pending = None;
                let Ball::Flight(fl) = self.ball else { return };
                if fl.height(frame) <= HEADER_HEIGHT {
                    self.receive(frame, player);
                    return;
                }
                let here = self.body[player].pos;
                let tm = self.team[player];
                match then {
                    AfterHeader::Dead => {
                        let to = [attack_dir(tm) * (HALF_LENGTH + 1.0), self.rng.random_range(-4.0..4.0)];
                        self.record(frame, player, TouchKind::Action(Action::Header), Some(to), None);
                        self.launch(frame, here, to, 12.0, 1.0, 6.0, None);
                        self.box_runner = None;
                        self.react(frame, player, sub(to, here), &[]);
                    }
                    AfterHeader::Pass => {
                        let r = self.pass_receiver(player, 6.0, 22.0);
                        let to = self.lead(r, 0.4);
                        self.record(frame, player, TouchKind::Action(Action::Header), Some(to), None);
                        let f = self.launch(frame, here, to, 10.0, 0.5, 6.0, Some(r));
                        self.pending = Some(Pending::Reception {
                            frame: frame + f.dur as usize,
                            player: r,
                        });
                        self.react(frame, player, sub(to, here), &[r]);
                    }
                }
            }
            Pending::Block { frame: f, player } if f == frame => {
                self.pending = None;
                let here = self.body[player].pos;
                let away = rotate(
                    [-attack_dir(self.team[player]), 0.0],
                    self.rng.random_range(-2.0..2.0),
                );
                let to = inside(add(here, scale(away, -8.0)), 50.0, 32.0);
                self.record(frame, player, TouchKind::Action(Action::BallBlock), Some(to), None);
                self.ball = Ball::Dead(to);
                self.blocker = None;
                self.react(frame, player, sub(to, here), &[]);
            }
            Pending::Tackle { tackler, earliest } if frame >= earliest => {
                let Ball::Held { player: c, .. } = self.ball else { return };
                if dist(self.body[tackler].pos, self.body[c].pos) > TACKLE_RANGE {
                    return;
                }
                self.pending = None;
                self.end_possession(frame);
                self.ball = Ball::Held {
                    player: tackler,
                    stationary: false,
                };
                self.record(frame, tackler, TouchKind::Action(Action::Tackle), None, Some(c));
                self.possession = Some((tackler, frame + WINDOW_HALF + 1));
                self.set_dribble(tackler, 0.8);
                let dir = self.dribble;
                self.react(frame, tackler, dir, &[c]);
                let next = frame + WINDOW_HALF + 1 + self.gap();
                self.pending = Some(Pending::Act { frame: next, kind: None });
            }
            _ => {}
        }
    }

    /// Most recent reaction of player `i` active at `frame`.
    fn reaction_of(&self, i: usize, frame: usize) -> Option<&ActiveReaction> {
        self.active_reactions
            .iter()
            .rev()
            .find(|r| r.player == i && r.start <= frame && frame < r.end)
    }

    fn arrive(&self, i: usize, target: [f64; 2], vmax: f64) -> [f64; 2] {
        clamp_norm(scale(sub(target, self.body[i].pos), ARRIVE_GAIN), vmax)
    }

    fn desired(&self, i: usize, frame: usize, holder: Option<usize>, presser: Option<usize>) -> [f64; 2] {
        let b = self.body[i];
        if let Ball::Held { player, stationary } = self.ball {
            if player == i {
                if stationary {
                    return [0.0, 0.0];
                }
                let mut v = scale(self.dribble, self.dribble_speed);
                let d = attack_dir(self.team[i]);
                if b.pos[0] * d > 48.0 && v[0] * d > 0.0 {
                    v[0] = 0.0;
                }
                if b.pos[1].abs() > 30.0 && v[1] * b.pos[1] > 0.0 {
                    v[1] = 0.0;
                }
                return v;
            }
        }
        if let Ball::Flight(f) = self.ball {
            if f.receiver == Some(i) {
                return self.arrive(i, f.to, 7.0);
            }
        }
        if let Some(Pending::Tackle { tackler, .. }) = self.pending {
            if tackler == i {
                if let Some(h) = holder {
                    let h = self.body[h];
                    let aim = add(h.pos, scale(h.vel, 0.2));
                    return clamp_norm(scale(unit(sub(aim, b.pos)), 8.0), MAX_SPEED);
                }
            }
        }
        if self.blocker == Some(i) {
            if let Some(h) = holder {
                let hp = self.body[h].pos;
                let goal = [-attack_dir(self.team[i]) * HALF_LENGTH, 0.0];
                return self.arrive(i, add(hp, scale(unit(sub(goal, hp)), 2.2)), 8.0);
            }
        }
        if let Some((r, spot)) = self.box_runner {
            if r == i {
                return self.arrive(i, spot, 6.0);
            }
        }
        if let Some((r, spot)) = self.throw_receiver {
            if r == i {
                return self.arrive(i, spot, 3.0);
            }
        }
        if let Some(r) = self.reaction_of(i, frame) {
            return clamp_norm(add(b.vel, scale(r.dir, REACTION_PUSH)), MAX_SPEED);
        }
        if presser == Some(i) {
            if let Some(h) = holder {
                let hp = self.body[h].pos;
                let off = unit(sub(b.pos, hp));
                return self.arrive(i, add(hp, scale(off, 2.5)), 4.5);
            }
        }
        self.arrive(i, self.anchor(i, frame), 5.5)
    }

    fn integrate(&mut self, frame: usize) {
        let holder = match self.ball {
            Ball::Held { player, .. } => Some(player),
            _ => None,
        };
        let special = |i: usize| {
            Some(i) == self.blocker
                || matches!(self.pending, Some(Pending::Tackle { tackler, .. }) if tackler == i)
        };
        let presser = holder.and_then(|h| {
            let hp = self.body[h].pos;
            self.nearest(hp, |i| self.team[i] != self.team[h] && !special(i))
        });
        let desired: Vec<[f64; 2]> = (0..self.n())
            .map(|i| self.desired(i, frame, holder, presser))
            .collect();
        // a reaction counts once its push is actually applied
        for i in 0..self.n() {
            let Some(r) = self.reaction_of(i, frame).copied() else { continue };
            let push = clamp_norm(add(self.body[i].vel, scale(r.dir, REACTION_PUSH)), MAX_SPEED);
            if r.start == frame && desired[i] == push {
                self.trace.reactions.push(Reaction {
                    tracklet_id: self.ids[i],
                    touch_frame: r.touch_frame,
                    start: r.start,
                    dir: r.dir,
                });
            }
        }
        for (b, v_des) in self.body.iter_mut().zip(desired) {
            let a = clamp_norm(scale(sub(v_des, b.vel), 1.0 / TAU), MAX_ACCEL);
            b.vel = add(b.vel, scale(a, self.dt));
            b.pos = add(b.pos, scale(b.vel, self.dt));
        }
        self.active_reactions.retain(|r| r.end > frame + 1);
        self.ball_pos = match self.ball {
            Ball::Held { player, .. } => self.body[player].pos,
            Ball::Flight(f) => f.ground(frame + 1),
            Ball::Dead(p) => p,
        };
    }

    fn run(&mut self) {
        for frame in 0..self.cfg.frames {
            self.step_touches(frame);
            self.states.push(self.body.clone());
            self.integrate(frame);
        }
        let t = self.cfg.frames;
        if let Some((p, from)) = self.possession.take() {
            self.drives.push((p, from, t - 1));
        }
    }

    fn events(&self) -> Vec<(usize, Event)> {
        let t = self.cfg.frames;
        let mut spans: Vec<(usize, usize, usize, Action)> = Vec::new();
        for (k, &(p, action, f)) in self.instants.iter().enumerate() {
            let mut lo = f.saturating_sub(WINDOW_HALF);
            let mut hi = f + WINDOW_HALF;
            if action == Action::Shot {
                if let Some(&(_, Action::BallBlock, fb)) = self.instants.get(k + 1) {
                    hi = hi.min((f + fb) / 2);
                }
            }
            if action == Action::BallBlock && k > 0 {
                if let (_, Action::Shot, fs) = self.instants[k - 1] {
                    lo = lo.max((fs + f) / 2 + 1);
                }
            }
            spans.push((p, lo, hi, action));
        }
        for &(p, lo, hi) in &self.drives {
            spans.push((p, lo, hi, Action::BallDrive));
        }
        let mut out: Vec<(usize, Event)> = spans
            .into_iter()
            .filter_map(|(p, lo, hi, action)| {
                let hi = hi.min(t - 1);
                (hi + 1 >= lo + 2).then(|| {
                    (
                        p,
                        Event {
                            tracklet_id: self.ids[p],
                            start_frame: lo,
                            end_frame: hi,
                            class: action.index(),
                            score: 1.0,
                        },
                    )
                })
            })
            .collect();
        out.sort_by_key(|(_, e)| (e.start_frame, e.tracklet_id));
        out
    }

    fn emit(mut self, clip_id: String) -> (Clip, SimTrace) {
        let t = self.cfg.frames;
        let n = self.n();
        let events = self.events();
        let mut labels = vec![vec![0usize; n]; t];
        for (p, e) in &events {
            for row in labels.iter_mut().take(e.end_frame + 1).skip(e.start_frame) {
                row[*p] = e.class;
            }
        }
        let mut shirts: Vec<u32> = Vec::with_capacity(n);
        for _ in 0..2 {
            let mut s: Vec<u32> = (1..=self.cfg.n_players_per_team as u32).collect();
            s.shuffle(&mut self.rng);
            shirts.extend(s);
        }
        let mut frames = Vec::with_capacity(t);
        for f in 0..t {
            let mut players = Vec::with_capacity(n);
            for i in 0..n {
                let b = self.states[f][i];
                let pn = [self.bounded_noise(self.cfg.position_noise), self.bounded_noise(self.cfg.position_noise)];
                let vn = [self.bounded_noise(self.cfg.velocity_noise), self.bounded_noise(self.cfg.velocity_noise)];
                let pos = add(b.pos, pn);
                let pos = [pos[0].clamp(-MAX_ABS_X, MAX_ABS_X), pos[1].clamp(-MAX_ABS_Y, MAX_ABS_Y)];
                players.push(PlayerFrameState {
                    tracklet_id: self.ids[i],
                    team: self.team[i],
                    bbox: screen_box(pos),
                    position: pos,
                    velocity: add(b.vel, vn),
                    action_label: labels[f][i],
                    shirt_number: Some(shirts[i]),
                });
            }
            frames.push(Frame { players });
        }
        let clip = Clip {
            clip_id,
            frame_rate: self.cfg.frame_rate,
            frames,
            gt_events: events.into_iter().map(|(_, e)| e).collect(),
            class_names: default_class_names(),
        };
        (clip, self.trace)
    }

    fn bounded_noise(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        sigma * z.clamp(-2.0, 2.0)
    }
}

/// Team-relative slots in three lines (x toward the opponent goal).
fn formation(n: usize) -> Vec<[f64; 2]> {
    let back = n.div_ceil(3) + usize::from(n % 3 == 1 && n > 3);
    let mid = (n - back).div_ceil(2);
    let front = n - back - mid;
    let mut out = Vec::with_capacity(n);
    for (count, x) in [(back, -28.0), (mid, -10.0), (front, 8.0)] {
        for k in 0..count {
            let y = if count == 1 {
                0.0
            } else {
                -26.0 + 52.0 * k as f64 / (count - 1) as f64
            };
            out.push([x, y]);
        }
    }
    out
}

/// Broadcast-camera-like projection to a positive-size pixel box.
fn screen_box(p: [f64; 2]) -> BBox {
    let depth = (p[1] + MAX_ABS_Y) / (2.0 * MAX_ABS_Y);
    let w = 14.0 + 22.0 * depth;
    BBox {
        x: 960.0 + p[0] * (9.0 + 6.0 * depth) - w / 2.0,
        y: 180.0 + 700.0 * depth - 2.4 * w,
        w,
        h: 2.4 * w,
    }
}

pub fn clip_id_for(seed: u64) -> String {
    format!("sim-{seed:016x}")
}

pub fn simulate_clip(cfg: &SimConfig, seed: u64) -> Result<Clip> {
    Ok(simulate_clip_traced(cfg, seed)?.0)
}

/// Like [`simulate_clip`], also returning the hidden touch log.
pub fn simulate_clip_traced(cfg: &SimConfig, seed: u64) -> Result<(Clip, SimTrace)> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, seed);
    sim.setup();
    sim.run();
    Ok(sim.emit(clip_id_for(seed)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
    /// Ground-truth events per class over both splits.
    pub class_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Distinct per-clip seeds derived from `seed`.
pub fn clip_seeds(n_clips: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(n_clips);
    let mut out = Vec::with_capacity(n_clips);
    while out.len() < n_clips {
        let s: u64 = rng.random();
        if seen.insert(s) {
            out.push(s);
        }
    }
    out
}

/// Clips `0..⌊0.8 n⌋` form the training split, the rest validation.
pub fn generate_dataset(cfg: &SimConfig, n_clips: usize, seed: u64) -> Result<Dataset> {
    if n_clips < 2 {
        return Err(Error::Config(format!("need at least 2 clips, got {n_clips}")));
    }
    cfg.validate()?;
    let n_train = (n_clips * 4 / 5).clamp(1, n_clips - 1);
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n_clips - n_train);
    for (i, s) in clip_seeds(n_clips, seed).into_iter().enumerate() {
        let clip = simulate_clip(cfg, s)?;
        if i < n_train {
            train.push(clip);
        } else {
            val.push(clip);
        }
    }
    let class_counts = class_counts(train.iter().chain(&val));
    let warnings = count_warnings(&class_counts, n_clips);
    Ok(Dataset {
        train,
        val,
        class_counts,
        warnings,
    })
}

pub fn class_counts<'c>(clips: impl IntoIterator<Item = &'c Clip>) -> Vec<usize> {
    let mut counts = vec![0; Action::ALL.len()];
    for c in clips {
        for e in &c.gt_events {
            counts[e.class] += 1;
        }
    }
    counts
}

/// One warning per action class seen fewer than `n_clips / 50` times.
pub fn count_warnings(counts: &[usize], n_clips: usize) -> Vec<String> {
    let floor = n_clips as f64 / 50.0;
    Action::ALL[1..]
        .iter()
        .filter(|a| (counts[a.index()] as f64) < floor)
        .map(|a| {
            format!(
                "class {a} has {} events, below the expected minimum of {floor}",
                counts[a.index()]
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::validate_clip;

    #[test]
    fn formation_sizes() {
        for n in 3..=12 {
            assert_eq!(formation(n).len(), n);
        }
    }

    #[test]
    fn rejects_short_clips_and_tiny_teams() {
        let short = SimConfig { frames: 9, ..Default::default() };
        assert!(matches!(simulate_clip(&short, 1), Err(Error::Config(_))));
        let tiny = SimConfig { n_players_per_team: 2, ..Default::default() };
        assert!(matches!(simulate_clip(&tiny, 1), Err(Error::Config(_))));
        assert!(matches!(generate_dataset(&SimConfig::default(), 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_clip() {
        let cfg = SimConfig::default();
        assert_eq!(simulate_clip(&cfg, 42).unwrap(), simulate_clip(&cfg, 42).unwrap());
        assert_ne!(simulate_clip(&cfg, 42).unwrap(), simulate_clip(&cfg, 43).unwrap());
    }

    #[test]
    fn generated_clips_are_valid() {
        let cfg = SimConfig::default();
        for seed in 0..200 {
            let c = simulate_clip(&cfg, seed).unwrap();
            let v = validate_clip(&c);
            assert!(v.is_empty(), "seed {seed}: {}", v[0]);
            assert_eq!(c.frames[0].players.len(), 20);
        }
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = SimConfig {
            frames: 10,
            n_players_per_team: 3,
            ..Default::default()
        };
        for seed in 0..100 {
            let c = simulate_clip(&cfg, seed).unwrap();
            assert!(validate_clip(&c).is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn split_arithmetic() {
        let cfg = SimConfig { frames: 10, ..Default::default() };
        let d = generate_dataset(&cfg, 10, 3).unwrap();
        assert_eq!((d.train.len(), d.val.len()), (8, 2));
        let d2 = generate_dataset(&cfg, 2, 3).unwrap();
        assert_eq!((d2.train.len(), d2.val.len()), (1, 1));
    }
}
