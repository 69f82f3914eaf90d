//! Temporal-IoU detection metrics: greedy class-agnostic matching with
//! dummy background pairings, 11-point AP, PR curves, confusion matrices
//! and TP/FP accounting.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::datamodel::{Event, EventSet, BACKGROUND};
use crate::error::{Error, Result};

/// Inclusive-interval IoU on frame counts.
pub fn temporal_iou(a: &Event, b: &Event) -> f64 {
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame.min(b.end_frame);
    if lo > hi {
        return 0.0;
    }
    let inter = hi - lo + 1;
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pair {
    Matched { pred: usize, gt: usize, iou: f64 },
    /// Unmatched ground truth against a dummy background prediction.
    MissedGt { gt: usize },
    /// Unmatched prediction against a dummy background ground truth.
    SpuriousPred { pred: usize },
}

/// Greedy matching: repeatedly pairs the remaining same-tracklet (pred, gt)
/// with the highest IoU, provided it reaches `iou_thr` and is positive,
/// whatever the classes. Leftovers get dummy partners. Matched pairs come
/// first in selection order, then missed gts, then spurious preds, each by
/// index.
pub fn match_events(pred: &[Event], gt: &[Event], iou_thr: f64) -> Vec<Pair> {
    let mut cand = Vec::new();
    for (g, ge) in gt.iter().enumerate() {
        for (p, pe) in pred.iter().enumerate() {
            if pe.tracklet_id != ge.tracklet_id {
                continue;
            }
            let iou = temporal_iou(pe, ge);
            if iou > 0.0 && iou >= iou_thr {
                cand.push((iou, g, p));
            }
        }
    }
    cand.sort_by(|a, b| {
        let (ga, pa) = (&gt[a.1], &pred[a.2]);
        let (gb, pb) = (&gt[b.1], &pred[b.2]);
        b.0.total_cmp(&a.0)
            .then(ga.start_frame.cmp(&gb.start_frame))
            .then(pa.start_frame.cmp(&pb.start_frame))
            .then(ga.class.cmp(&gb.class))
            .then(pa.class.cmp(&pb.class))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for (iou, g, p) in cand {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            pairs.push(Pair::Matched { pred: p, gt: g, iou });
        }
    }
    pairs.extend((0..gt.len()).filter(|&g| !gt_used[g]).map(|gt| Pair::MissedGt { gt }));
    pairs.extend(
        (0..pred.len())
            .filter(|&p| !pred_used[p])
            .map(|pred| Pair::SpuriousPred { pred }),
    );
    pairs
}

/// 11-point interpolated AP from `(score, is_tp)` detections of one class.
/// Interpolated precision at recall r is the best precision among ranks
/// reaching recall ≥ r, or 0 if none does.
pub fn average_precision_11pt(detections: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0).then(a.cmp(&b)));
    let mut best = [0.0f64; 11];
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if detections[i].1 {
            tp += 1;
        }
        let precision = tp as f64 / (rank + 1) as f64;
        for (r, b) in best.iter_mut().enumerate() {
            // recall tp / n_gt ≥ r / 10, in integers
            if tp * 10 >= r * n_gt && precision > *b {
                *b = precision;
            }
        }
    }
    best.iter().sum::<f64>() / 11.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Recall and precision of `(score, is_tp)` detections kept at each
/// threshold of `{0, 1} ∪ scores`, descending. Precision with nothing kept
/// is reported as 1.
pub fn pr_curve(detections: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut thresholds: Vec<f64> = detections.iter().map(|d| d.0).chain([0.0, 1.0]).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|s| {
            let kept = detections.iter().filter(|d| d.0 >= s);
            let (n, tp) = kept.fold((0usize, 0usize), |(n, tp), d| (n + 1, tp + d.1 as usize));
            PrPoint {
                threshold: s,
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: if n == 0 { 1.0 } else { tp as f64 / n as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_thr: f64,
    pub score_thr: f64,
    pub class_names: Vec<String>,
    /// Ground-truth events per class.
    pub gt_counts: Vec<usize>,
    /// AP per class; `None` for background and classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map_value: f64,
    /// Per class, over all predictions; empty for background.
    pub pr_curves: Vec<Vec<PrPoint>>,
    /// Rows are ground-truth classes, columns predicted classes; index 0
    /// holds the dummy background partners. Only predictions scoring at
    /// least `score_thr` take part.
    pub confusion: Vec<Vec<usize>>,
    /// Per class `(TP, FP)` at `(iou_thr, score_thr)`.
    pub tp_fp: Vec<(usize, usize)>,
}

impl EvalReport {
    pub fn total_tp(&self) -> usize {
        self.tp_fp.iter().skip(1).map(|x| x.0).sum()
    }

    pub fn total_fp(&self) -> usize {
        self.tp_fp.iter().skip(1).map(|x| x.1).sum()
    }
}

pub fn evaluate(preds: &EventSet, gts: &EventSet, iou_thr: f64, score_thr: f64) -> Result<EvalReport> {
    if preds.class_names != gts.class_names {
        return Err(Error::Schema(format!(
            "class vocabularies differ: [{}] vs [{}]",
            preds.class_names.join(" "),
            gts.class_names.join(" ")
        )));
    }
    let c = gts.class_names.len();
    let gt_by_clip: HashMap<&str, &[Event]> = gts
        .clips
        .iter()
        .map(|ce| (ce.clip_id.as_str(), ce.events.as_slice()))
        .collect();
    let mut pred_by_clip: HashMap<&str, Vec<Event>> = HashMap::new();
    for ce in &preds.clips {
        if !gt_by_clip.contains_key(ce.clip_id.as_str()) {
            return Err(Error::Schema(format!(
                "detections for clip {} which has no ground truth record",
                ce.clip_id
            )));
        }
        pred_by_clip
            .entry(ce.clip_id.as_str())
            .or_default()
            .extend(ce.events.iter().copied());
    }
    for e in preds.clips.iter().flat_map(|ce| &ce.events).chain(gts.clips.iter().flat_map(|ce| &ce.events)) {
        if e.class == BACKGROUND || e.class >= c {
            return Err(Error::Schema(format!("event class {} outside 1..{c}", e.class)));
        }
    }

    let mut gt_counts = vec![0usize; c];
    let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); c];
    let mut confusion = vec![vec![0usize; c]; c];
    let empty = Vec::new();
    for ce in &gts.clips {
        let gt = ce.events.as_slice();
        let pred = pred_by_clip.get(ce.clip_id.as_str()).unwrap_or(&empty);
        for g in gt {
            gt_counts[g.class] += 1;
        }

        for pair in match_events(pred, gt, iou_thr) {
            match pair {
                Pair::Matched { pred: p, gt: g, .. } => {
                    let pe = &pred[p];
                    per_class[pe.class].push((pe.score, pe.class == gt[g].class));
                }
                Pair::SpuriousPred { pred: p } => per_class[pred[p].class].push((pred[p].score, false)),
                Pair::MissedGt { .. } => {}
            }
        }

        let kept: Vec<Event> = pred.iter().filter(|e| e.score >= score_thr).copied().collect();
        for pair in match_events(&kept, gt, iou_thr) {
            match pair {
                Pair::Matched { pred: p, gt: g, .. } => confusion[gt[g].class][kept[p].class] += 1,
                Pair::MissedGt { gt: g } => confusion[gt[g].class][BACKGROUND] += 1,
                Pair::SpuriousPred { pred: p } => confusion[BACKGROUND][kept[p].class] += 1,
            }
        }
    }

    let mut per_class_ap = vec![None; c];
    let mut pr_curves = vec![Vec::new(); c];
    for k in 1..c {
        if gt_counts[k] > 0 {
            per_class_ap[k] = Some(average_precision_11pt(&per_class[k], gt_counts[k]));
        }
        pr_curves[k] = pr_curve(&per_class[k], gt_counts[k]);
    }
    let aps: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map_value = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    let tp_fp = (0..c)
        .map(|k| {
            let col: usize = confusion.iter().map(|row| row[k]).sum();
            if k == BACKGROUND {
                (0, 0)
            } else {
                (confusion[k][k], col - confusion[k][k])
            }
        })
        .collect();

    Ok(EvalReport {
        iou_thr,
        score_thr,
        class_names: gts.class_names.clone(),
        gt_counts,
        per_class_ap,
        map_value,
        pr_curves,
        confusion,
        tp_fp,
    })
}

pub fn ap_csv(r: &EvalReport) -> String {
    let mut s = String::from("class,gt_count,ap,tp,fp\n");
    for k in 1..r.class_names.len() {
        let ap = r.per_class_ap[k].map_or(String::new(), |v| format!("{v:.6}"));
        writeln!(s, "{},{},{ap},{},{}", r.class_names[k], r.gt_counts[k], r.tp_fp[k].0, r.tp_fp[k].1).unwrap();
    }
    writeln!(s, "mAP,,{:.6},{},{}", r.map_value, r.total_tp(), r.total_fp()).unwrap();
    s
}

pub fn pr_csv(r: &EvalReport) -> String {
    let mut s = String::from("class,threshold,recall,precision\n");
    for k in 1..r.class_names.len() {
        for p in &r.pr_curves[k] {
            writeln!(s, "{},{},{},{}", r.class_names[k], p.threshold, p.recall, p.precision).unwrap();
        }
    }
    s
}

pub fn confusion_csv(r: &EvalReport) -> String {
    let mut s = format!("gt\\pred,{}\n", r.class_names.join(","));
    for (k, row) in r.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{},{}", r.class_names[k], cells.join(",")).unwrap();
    }
    s
}

pub fn summary_text(r: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "iou_thr {}  score_thr {}", r.iou_thr, r.score_thr).unwrap();
    writeln!(s, "mAP {:.4}", r.map_value).unwrap();
    writeln!(s, "{:<12} {:>5} {:>8} {:>5} {:>5}", "class", "gt", "AP", "TP", "FP").unwrap();
    for k in 1..r.class_names.len() {
        let ap = r.per_class_ap[k].map_or("-".to_string(), |v| format!("{v:.4}"));
        writeln!(
            s,
            "{:<12} {:>5} {:>8} {:>5} {:>5}",
            r.class_names[k], r.gt_counts[k], ap, r.tp_fp[k].0, r.tp_fp[k].1
        )
        .unwrap();
    }
    writeln!(s, "total TP {}  FP {}", r.total_tp(), r.total_fp()).unwrap();
    s
}
