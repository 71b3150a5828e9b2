//! Episode- and duration-based precision/recall/F1.
//!
//! Episode scoring matches predicted events to ground-truth events of the
//! same class one-to-one, greedily in descending IoU order; a pair counts as
//! a true positive when its IoU reaches the threshold (0.7 by default).
//! Duration scoring overlaps the two label streams sample by sample.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::error::Result;
use crate::postprocess::Event;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;

/// Intersection over union of two sample intervals.
pub fn iou(a: &Event, b: &Event) -> f64 {
    let inter = a.offset.min(b.offset).saturating_sub(a.onset.max(b.onset));
    if inter == 0 {
        return 0.0;
    }
    let union = a.offset.max(b.offset) - a.onset.min(b.onset);
    inter as f64 / union as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Ratios with the 0/0 → 0 convention.
pub fn prf(c: &Counts) -> Prf {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Greedy one-to-one episode matching, per class. Unmatched predictions are
/// false positives, unmatched truths are false negatives; class-mismatched
/// overlaps never pair up.
pub fn match_episodes(pred: &[Event], truth: &[Event], thresh: f64) -> BTreeMap<u16, Counts> {
    let classes: BTreeSet<u16> = pred.iter().chain(truth).map(|e| e.class_id).collect();
    let mut out = BTreeMap::new();
    for class in classes {
        let preds: Vec<&Event> = pred.iter().filter(|e| e.class_id == class).collect();
        let truths: Vec<&Event> = truth.iter().filter(|e| e.class_id == class).collect();

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, p) in preds.iter().enumerate() {
            for (ti, t) in truths.iter().enumerate() {
                let v = iou(p, t);
                if v >= thresh {
                    pairs.push((v, pi, ti));
                }
            }
        }
        // descending IoU; index order breaks exact ties deterministically
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut pred_used = vec![false; preds.len()];
        let mut truth_used = vec![false; truths.len()];
        let mut tp = 0u64;
        for (_, pi, ti) in pairs {
            if !pred_used[pi] && !truth_used[ti] {
                pred_used[pi] = true;
                truth_used[ti] = true;
                tp += 1;
            }
        }
        out.insert(
            class,
            Counts {
                true_pos: tp,
                false_pos: preds.len() as u64 - tp,
                false_neg: truths.len() as u64 - tp,
            },
        );
    }
    out
}

/// Per-class sample-overlap counts. Samples outside either event list match
/// nothing (they can still create false positives or negatives on the other
/// side).
pub fn duration_counts(pred: &[Event], truth: &[Event]) -> BTreeMap<u16, Counts> {
    const NONE: u32 = u32::MAX;
    let extent = pred
        .iter()
        .chain(truth)
        .map(|e| e.offset)
        .max()
        .unwrap_or(0);
    let mut pl = vec![NONE; extent];
    let mut tl = vec![NONE; extent];
    for e in pred {
        for v in &mut pl[e.onset..e.offset] {
            *v = e.class_id as u32;
        }
    }
    for e in truth {
        for v in &mut tl[e.onset..e.offset] {
            *v = e.class_id as u32;
        }
    }
    let classes: BTreeSet<u16> = pred.iter().chain(truth).map(|e| e.class_id).collect();
    let mut out = BTreeMap::new();
    for class in classes {
        let c = class as u32;
        let mut counts = Counts::default();
        for i in 0..extent {
            let p = pl[i] == c;
            let t = tl[i] == c;
            match (p, t) {
                (true, true) => counts.true_pos += 1,
                (true, false) => counts.false_pos += 1,
                (false, true) => counts.false_neg += 1,
                (false, false) => {}
            }
        }
        out.insert(class, counts);
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct ClassMetrics {
    pub class_id: u16,
    pub episode_counts: Counts,
    pub duration_counts: Counts,
    pub episode: Prf,
    pub duration: Prf,
    pub in_truth: bool,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_episode: Prf,
    pub macro_duration: Prf,
}

/// Count accumulator for scoring many windows; counts merge by summation
/// before any ratio is taken.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    episode: BTreeMap<u16, Counts>,
    duration: BTreeMap<u16, Counts>,
    truth_classes: BTreeSet<u16>,
    thresh: f64,
}

impl MetricsAccumulator {
    pub fn new(thresh: f64) -> MetricsAccumulator {
        MetricsAccumulator { thresh, ..Default::default() }
    }

    pub fn add_window(&mut self, pred: &[Event], truth: &[Event]) {
        for (class, c) in match_episodes(pred, truth, self.thresh) {
            self.episode.entry(class).or_default().add(&c);
        }
        for (class, c) in duration_counts(pred, truth) {
            self.duration.entry(class).or_default().add(&c);
        }
        self.truth_classes.extend(truth.iter().map(|e| e.class_id));
    }

    /// Ratios and macro averages. The macro mean runs over classes present
    /// in the truth; a class never seen in truth is reported but excluded.
    pub fn finish(&self) -> MetricsReport {
        let classes: BTreeSet<u16> =
            self.episode.keys().chain(self.duration.keys()).copied().collect();
        let mut per_class = Vec::with_capacity(classes.len());
        let mut macro_ep = Prf::default();
        let mut macro_du = Prf::default();
        let mut n_macro = 0.0;
        for class in classes {
            let ec = self.episode.get(&class).copied().unwrap_or_default();
            let dc = self.duration.get(&class).copied().unwrap_or_default();
            let cm = ClassMetrics {
                class_id: class,
                episode_counts: ec,
                duration_counts: dc,
                episode: prf(&ec),
                duration: prf(&dc),
                in_truth: self.truth_classes.contains(&class),
            };
            if cm.in_truth {
                macro_ep.precision += cm.episode.precision;
                macro_ep.recall += cm.episode.recall;
                macro_ep.f1 += cm.episode.f1;
                macro_du.precision += cm.duration.precision;
                macro_du.recall += cm.duration.recall;
                macro_du.f1 += cm.duration.f1;
                n_macro += 1.0;
            }
            per_class.push(cm);
        }
        if n_macro > 0.0 {
            for m in [&mut macro_ep, &mut macro_du] {
                m.precision /= n_macro;
                m.recall /= n_macro;
                m.f1 /= n_macro;
            }
        }
        MetricsReport { per_class, macro_episode: macro_ep, macro_duration: macro_du }
    }
}

/// Score a single prediction/truth pair.
pub fn report(pred: &[Event], truth: &[Event], thresh: f64) -> MetricsReport {
    let mut acc = MetricsAccumulator::new(thresh);
    acc.add_window(pred, truth);
    acc.finish()
}

// ── rendering ────────────────────────────────────────────────────────

/// Machine-readable CSV: `class,regime,precision,recall,f1,tp,fp,fn`.
pub fn write_report_csv(report: &MetricsReport, w: &mut impl Write) -> Result<()> {
    writeln!(w, "class,regime,precision,recall,f1,tp,fp,fn")?;
    for cm in &report.per_class {
        for (regime, p, c) in [
            ("episode", &cm.episode, &cm.episode_counts),
            ("duration", &cm.duration, &cm.duration_counts),
        ] {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{},{},{}",
                cm.class_id, regime, p.precision, p.recall, p.f1, c.true_pos, c.false_pos, c.false_neg
            )?;
        }
    }
    for (regime, p) in [("episode", &report.macro_episode), ("duration", &report.macro_duration)] {
        writeln!(w, "macro,{},{:.6},{:.6},{:.6},,,", regime, p.precision, p.recall, p.f1)?;
    }
    Ok(())
}

/// Human-readable table.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>10} {:>8} {:>8} {:>8}   {:>10} {:>8} {:>8} {:>8}\n",
        "class", "ep-prec", "ep-rec", "ep-f1", "ep-tp/fp/fn", "du-prec", "du-rec", "du-f1", "du-tp/fp/fn"
    ));
    for cm in &report.per_class {
        out.push_str(&format!(
            "{:<8} {:>10.4} {:>8.4} {:>8.4}   {:>3}/{}/{}   {:>10.4} {:>8.4} {:>8.4}   {}/{}/{}{}\n",
            cm.class_id,
            cm.episode.precision,
            cm.episode.recall,
            cm.episode.f1,
            cm.episode_counts.true_pos,
            cm.episode_counts.false_pos,
            cm.episode_counts.false_neg,
            cm.duration.precision,
            cm.duration.recall,
            cm.duration.f1,
            cm.duration_counts.true_pos,
            cm.duration_counts.false_pos,
            cm.duration_counts.false_neg,
            if cm.in_truth { "" } else { "   (not in truth)" },
        ));
    }
    out.push_str(&format!(
        "{:<8} {:>10.4} {:>8.4} {:>8.4}   {:>10.4} {:>8.4} {:>8.4}\n",
        "macro",
        report.macro_episode.precision,
        report.macro_episode.recall,
        report.macro_episode.f1,
        report.macro_duration.precision,
        report.macro_duration.recall,
        report.macro_duration.f1,
    ));
    out
}
