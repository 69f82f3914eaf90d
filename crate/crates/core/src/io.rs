//! Line-oriented text formats for clips, detections, and atomic file writes.
//!
//! Clip file (`pitchgraph/1`):
//!
//! ```text
//! pitchgraph/1
//! classes background ball-drive pass …
//! clip <clip_id> <frame_rate> <n_frames> <n_events>
//! frame <t> <n_players> [<tracklet> <team> <bx> <by> <bw> <bh> <px> <py> <vx> <vy> <label> <shirt|->]…
//! event <tracklet> <start> <end> <class_name> <score>
//! ```
//!
//! Detections file (`pitchgraph-detections/1`):
//!
//! ```text
//! pitchgraph-detections/1
//! classes background ball-drive pass …
//! clip <clip_id>
//! det <clip_id> <tracklet> <start> <end> <class_name> <score>
//! ```
//!
//! Every clip gets a `clip` line, so clips without detections survive a
//! round trip.
//!
//! Floats are written with 17 significant digits in scientific notation,
//! which round-trips every finite `f64` exactly. Tokens are separated by a
//! single space; clip ids may not contain whitespace.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::datamodel::{
    validate_clip, BBox, Clip, ClipEvents, Event, EventSet, Frame, PlayerFrameState,
    CLASS_NAMES,
};
use crate::error::{Error, Result};

pub const CLIP_MAGIC: &str = "pitchgraph/1";
pub const DETECTIONS_MAGIC: &str = "pitchgraph-detections/1";
const PLAYER_FIELDS: usize = 12;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_vocabulary(names: &[String]) -> Result<()> {
    if names.first().map(String::as_str) != Some("background") {
        return Err(Error::Schema("class 0 must be `background`".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !CLASS_NAMES.contains(&n.as_str()) {
            return Err(Error::Schema(format!("unknown class name `{n}`")));
        }
        if !seen.insert(n) {
            return Err(Error::Schema(format!("class `{n}` listed twice")));
        }
    }
    Ok(())
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Schema(format!("{what} `{s}` must be a non-empty token")));
    }
    Ok(())
}

fn class_index(names: &[String], name: &str, line: usize) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Schema(format!("line {line}: class `{name}` not declared in header")))
}

/// Serialises clips to the clip file format.
pub fn clips_to_string(clips: &[Clip]) -> Result<String> {
    let names = clips
        .first()
        .map(|c| c.class_names.clone())
        .unwrap_or_else(crate::datamodel::default_class_names);
    check_vocabulary(&names)?;
    let mut out = String::new();
    writeln!(out, "{CLIP_MAGIC}").unwrap();
    writeln!(out, "classes {}", names.join(" ")).unwrap();
    for c in clips {
        if c.class_names != names {
            return Err(Error::Schema(format!(
                "clip {} uses a different class vocabulary",
                c.clip_id
            )));
        }
        check_token("clip id", &c.clip_id)?;
        writeln!(
            out,
            "clip {} {} {} {}",
            c.clip_id,
            fmt_f64(c.frame_rate),
            c.frames.len(),
            c.gt_events.len()
        )
        .unwrap();
        for (t, frame) in c.frames.iter().enumerate() {
            write!(out, "frame {t} {}", frame.players.len()).unwrap();
            for p in &frame.players {
                write!(
                    out,
                    " {} {} {} {} {} {} {} {} {} {} {} {}",
                    p.tracklet_id,
                    p.team,
                    fmt_f64(p.bbox.x),
                    fmt_f64(p.bbox.y),
                    fmt_f64(p.bbox.w),
                    fmt_f64(p.bbox.h),
                    fmt_f64(p.position[0]),
                    fmt_f64(p.position[1]),
                    fmt_f64(p.velocity[0]),
                    fmt_f64(p.velocity[1]),
                    p.action_label,
                    p.shirt_number.map_or("-".to_string(), |n| n.to_string()),
                )
                .unwrap();
            }
            out.push('\n');
        }
        for e in &c.gt_events {
            let class = names.get(e.class).ok_or_else(|| {
                Error::Schema(format!("clip {}: event class {} out of range", c.clip_id, e.class))
            })?;
            writeln!(
                out,
                "event {} {} {} {} {}",
                e.tracklet_id,
                e.start_frame,
                e.end_frame,
                class,
                fmt_f64(e.score)
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn save_clips(clips: &[Clip], path: &Path) -> Result<()> {
    write_atomic(path, clips_to_string(clips)?.as_bytes())
}

pub fn load_clips(path: &Path) -> Result<Vec<Clip>> {
    parse_clips(&read_text(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next non-empty line as (1-based number, tokens).
    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

fn header<'a>(lines: &mut Lines<'a>, magic: &str) -> Result<Vec<String>> {
    match lines.next() {
        Some((_, t)) if t == [magic] => {}
        Some((n, t)) => {
            return Err(parse_err(
                n,
                format!("expected `{magic}` header, found `{}`", t.join(" ")),
            ))
        }
        None => return Err(parse_err(0, "empty file")),
    }
    match lines.next() {
        Some((_, t)) if t[0] == "classes" => {
            let names: Vec<String> = t[1..].iter().map(|s| s.to_string()).collect();
            check_vocabulary(&names)?;
            Ok(names)
        }
        Some((n, _)) => Err(parse_err(n, "expected `classes` line")),
        None => Err(parse_err(lines.last, "missing `classes` line")),
    }
}

pub fn parse_clips(text: &str) -> Result<Vec<Clip>> {
    let mut lines = Lines::new(text);
    let names = header(&mut lines, CLIP_MAGIC)?;
    let mut clips = Vec::new();
    let last_complete = |clips: &Vec<Clip>| {
        clips
            .last()
            .map_or("none".to_string(), |c: &Clip| format!("clip {}", c.clip_id))
    };

    while let Some((n, toks)) = lines.next() {
        if toks[0] != "clip" || toks.len() != 5 {
            return Err(parse_err(n, format!("expected clip header, found `{}`", toks[0])));
        }
        let clip_id = toks[1].to_string();
        let frame_rate: f64 = num(toks[2], n, "frame rate")?;
        let n_frames: usize = num(toks[3], n, "frame count")?;
        let n_events: usize = num(toks[4], n, "event count")?;
        let truncated = |clips: &Vec<Clip>, line| {
            parse_err(
                line,
                format!(
                    "truncated inside clip {clip_id}; last complete record: {}",
                    last_complete(clips)
                ),
            )
        };

        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let (ln, toks) = lines.next().ok_or_else(|| truncated(&clips, lines.last))?;
            if toks[0] != "frame" || toks.len() < 3 {
                return Err(parse_err(ln, "expected frame line"));
            }
            let idx: usize = num(toks[1], ln, "frame index")?;
            if idx != t {
                return Err(parse_err(ln, format!("frame index {idx}, expected {t}")));
            }
            let count: usize = num(toks[2], ln, "player count")?;
            let fields = &toks[3..];
            if fields.len() != count * PLAYER_FIELDS {
                return Err(if fields.len() < count * PLAYER_FIELDS && lines.next().is_none() {
                    truncated(&clips, ln)
                } else {
                    parse_err(
                        ln,
                        format!("expected {} player fields, found {}", count * PLAYER_FIELDS, fields.len()),
                    )
                });
            }
            let mut players = Vec::with_capacity(count);
            for f in fields.chunks(PLAYER_FIELDS) {
                players.push(PlayerFrameState {
                    tracklet_id: num(f[0], ln, "tracklet id")?,
                    team: num(f[1], ln, "team")?,
                    bbox: BBox {
                        x: num(f[2], ln, "bbox x")?,
                        y: num(f[3], ln, "bbox y")?,
                        w: num(f[4], ln, "bbox w")?,
                        h: num(f[5], ln, "bbox h")?,
                    },
                    position: [num(f[6], ln, "position x")?, num(f[7], ln, "position y")?],
                    velocity: [num(f[8], ln, "velocity x")?, num(f[9], ln, "velocity y")?],
                    action_label: num(f[10], ln, "label")?,
                    shirt_number: if f[11] == "-" {
                        None
                    } else {
                        Some(num(f[11], ln, "shirt number")?)
                    },
                });
            }
            frames.push(Frame { players });
        }

        let mut gt_events = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let (ln, toks) = lines.next().ok_or_else(|| truncated(&clips, lines.last))?;
            if toks[0] != "event" || toks.len() != 6 {
                return Err(parse_err(ln, "expected event line"));
            }
            gt_events.push(Event {
                tracklet_id: num(toks[1], ln, "tracklet id")?,
                start_frame: num(toks[2], ln, "start frame")?,
                end_frame: num(toks[3], ln, "end frame")?,
                class: class_index(&names, toks[4], ln)?,
                score: num(toks[5], ln, "score")?,
            });
        }

        let clip = Clip {
            clip_id,
            frame_rate,
            frames,
            gt_events,
            class_names: names.clone(),
        };
        let violations = validate_clip(&clip);
        if let Some(v) = violations.first() {
            return Err(Error::Schema(format!(
                "clip {} violates {} invariant(s), first: {v}",
                clip.clip_id,
                violations.len()
            )));
        }
        clips.push(clip);
    }
    Ok(clips)
}

pub fn events_to_string(set: &EventSet) -> Result<String> {
    check_vocabulary(&set.class_names)?;
    let mut out = String::new();
    writeln!(out, "{DETECTIONS_MAGIC}").unwrap();
    writeln!(out, "classes {}", set.class_names.join(" ")).unwrap();
    for c in &set.clips {
        check_token("clip id", &c.clip_id)?;
        writeln!(out, "clip {}", c.clip_id).unwrap();
        for e in &c.events {
            let class = set
                .class_names
                .get(e.class)
                .ok_or_else(|| Error::Schema(format!("event class {} out of range", e.class)))?;
            writeln!(
                out,
                "det {} {} {} {} {} {}",
                c.clip_id,
                e.tracklet_id,
                e.start_frame,
                e.end_frame,
                class,
                fmt_f64(e.score)
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn save_events(set: &EventSet, path: &Path) -> Result<()> {
    write_atomic(path, events_to_string(set)?.as_bytes())
}

/// Parses a detections file. A `clip` line declares a clip, possibly with
/// no detections; `det` lines of one clip need not be contiguous. Clips keep
/// first-appearance order.
pub fn parse_events(text: &str) -> Result<EventSet> {
    let mut lines = Lines::new(text);
    let names = header(&mut lines, DETECTIONS_MAGIC)?;
    let mut set = EventSet::new(names);
    let mut index = std::collections::HashMap::new();
    let mut slot_of = |set: &mut EventSet, id: &str| -> usize {
        *index.entry(id.to_string()).or_insert_with(|| {
            set.clips.push(ClipEvents {
                clip_id: id.to_string(),
                events: Vec::new(),
            });
            set.clips.len() - 1
        })
    };
    while let Some((ln, toks)) = lines.next() {
        match (toks[0], toks.len()) {
            ("clip", 2) => {
                slot_of(&mut set, toks[1]);
            }
            ("det", 7) => {
                let event = Event {
                    tracklet_id: num(toks[2], ln, "tracklet id")?,
                    start_frame: num(toks[3], ln, "start frame")?,
                    end_frame: num(toks[4], ln, "end frame")?,
                    class: class_index(&set.class_names, toks[5], ln)?,
                    score: num(toks[6], ln, "score")?,
                };
                if event.start_frame > event.end_frame || event.class == 0 {
                    return Err(Error::Schema(format!("line {ln}: malformed detection")));
                }
                let slot = slot_of(&mut set, toks[1]);
                set.clips[slot].events.push(event);
            }
            _ => return Err(parse_err(ln, "expected clip or detection line")),
        }
    }
    Ok(set)
}

pub fn load_events(path: &Path) -> Result<EventSet> {
    parse_events(&read_text(path)?)
}

/// Loads either a detections file or the ground truth of a clip file.
pub fn load_event_source(path: &Path) -> Result<EventSet> {
    let text = read_text(path)?;
    if text.trim_start().starts_with(DETECTIONS_MAGIC) {
        parse_events(&text)
    } else {
        EventSet::ground_truth(&parse_clips(&text)?)
    }
}
