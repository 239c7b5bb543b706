//! Evaluation: IoU-matched HOI detection mAP, zero-shot splits, and
//! affordance precision / recall / F1 and mAP.
//!
//! AP is the non-interpolated form: precision summed at the ranks of the
//! true positives, divided by the number of ground-truth positives.
//! Predictions are ranked by descending score with ties broken by input
//! order, so reports are reproducible bit for bit.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{AtlError, Result};
use crate::geometry::{iou, BBox};
use crate::rng::Rng;
use crate::synth::HoiInstance;
use crate::taxonomy::Taxonomy;

pub use crate::geometry::iou as box_iou;

pub const IOU_THRESHOLD: f64 = 0.5;
pub const RARE_THRESHOLD: u64 = 10;
pub const DEFAULT_UNSEEN_FRACTION: f64 = 0.2;

// ---------------------------------------------------------------------------
// Zero-shot splits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SplitMode {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "unseen-composition-rare-first")]
    RareFirst,
    #[serde(rename = "unseen-composition-nonrare-first")]
    NonRareFirst,
    #[serde(rename = "novel-object")]
    NovelObject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub unseen_hoi_ids: BTreeSet<usize>,
    pub unseen_object_ids: BTreeSet<usize>,
    pub seen_hoi_ids: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitSelector {
    None,
    Count(usize),
    Objects(Vec<usize>),
}

impl SplitSpec {
    /// No held-out categories.
    pub fn none(tax: &Taxonomy) -> Self {
        Self {
            mode: SplitMode::None,
            unseen_hoi_ids: BTreeSet::new(),
            unseen_object_ids: BTreeSet::new(),
            seen_hoi_ids: (0..tax.n_hoi()).collect(),
        }
    }

    pub fn is_unseen(&self, category: usize) -> bool {
        self.unseen_hoi_ids.contains(&category)
    }

    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        let all: BTreeSet<usize> = (0..tax.n_hoi()).collect();
        if !self.unseen_hoi_ids.is_disjoint(&self.seen_hoi_ids) {
            return Err(AtlError::Data(
                "split: seen and unseen categories overlap".into(),
            ));
        }
        let union: BTreeSet<usize> = self
            .unseen_hoi_ids
            .union(&self.seen_hoi_ids)
            .copied()
            .collect();
        if union != all {
            return Err(AtlError::Data(
                "split: seen and unseen categories do not cover the label space".into(),
            ));
        }
        if let Some(&o) = self
            .unseen_object_ids
            .iter()
            .find(|&&o| o >= tax.n_objects())
        {
            return Err(AtlError::OutOfRange {
                what: "object",
                id: o,
                len: tax.n_objects(),
            });
        }
        match self.mode {
            SplitMode::NovelObject => {
                let expected: BTreeSet<usize> = (0..tax.n_hoi())
                    .filter(|&c| self.unseen_object_ids.contains(&tax.pair(c).1))
                    .collect();
                if expected != self.unseen_hoi_ids {
                    return Err(AtlError::Data(
                        "split: novel-object unseen categories must be exactly those of the unseen objects"
                            .into(),
                    ));
                }
            }
            SplitMode::None if !self.unseen_hoi_ids.is_empty() => {
                return Err(AtlError::Data(
                    "split: mode none with unseen categories".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn default_unseen_count(n_hoi: usize) -> usize {
    ((n_hoi as f64 * DEFAULT_UNSEEN_FRACTION).round() as usize).max(1)
}

pub fn make_split(tax: &Taxonomy, mode: SplitMode, selector: &SplitSelector) -> Result<SplitSpec> {
    let n = tax.n_hoi();
    let counts = tax.train_counts();
    let mut unseen_object_ids = BTreeSet::new();
    let unseen: BTreeSet<usize> = match (mode, selector) {
        (SplitMode::None, _) => BTreeSet::new(),
        (SplitMode::RareFirst | SplitMode::NonRareFirst, SplitSelector::Count(k)) => {
            if *k >= n {
                return Err(AtlError::Config(format!(
                    "unseen count {k} must be below the {n} categories"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            if mode == SplitMode::RareFirst {
                order.sort_by_key(|&c| (counts[c], c));
            } else {
                order.sort_by_key(|&c| (std::cmp::Reverse(counts[c]), c));
            }
            order.into_iter().take(*k).collect()
        }
        (SplitMode::NovelObject, SplitSelector::Objects(objects)) => {
            for &o in objects {
                if o >= tax.n_objects() {
                    return Err(AtlError::OutOfRange {
                        what: "object",
                        id: o,
                        len: tax.n_objects(),
                    });
                }
            }
            unseen_object_ids = objects.iter().copied().collect();
            (0..n)
                .filter(|&c| unseen_object_ids.contains(&tax.pair(c).1))
                .collect()
        }
        (mode, selector) => {
            return Err(AtlError::Config(format!(
                "split mode {mode:?} cannot use selector {selector:?}"
            )))
        }
    };
    if unseen.len() >= n {
        return Err(AtlError::Config(
            "split leaves no seen HOI categories".into(),
        ));
    }
    let seen_hoi_ids = (0..n).filter(|c| !unseen.contains(c)).collect();
    Ok(SplitSpec {
        mode,
        unseen_hoi_ids: unseen,
        unseen_object_ids,
        seen_hoi_ids,
    })
}

/// Picks `count` objects to hold out. Prefers objects whose removal keeps
/// every verb attached to at least one remaining object, so each verb still
/// has training instances to transfer from.
pub fn choose_novel_objects(tax: &Taxonomy, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if count == 0 || count >= tax.n_objects() {
        return Err(AtlError::Config(format!(
            "novel object count {count} must be in 1..{}",
            tax.n_objects()
        )));
    }
    let mut order: Vec<usize> = (0..tax.n_objects()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let keeps_verbs = |held: &[usize]| {
        (0..tax.n_verbs()).all(|v| {
            let objs: Vec<usize> = tax
                .pairs()
                .iter()
                .filter(|p| p.0 == v)
                .map(|p| p.1)
                .collect();
            objs.is_empty() || objs.iter().any(|o| !held.contains(o))
        })
    };
    for &o in &order {
        if chosen.len() == count {
            break;
        }
        chosen.push(o);
        if !keeps_verbs(&chosen) {
            chosen.pop();
        }
    }
    for &o in &order {
        if chosen.len() == count {
            break;
        }
        if !chosen.contains(&o) {
            chosen.push(o);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

// ---------------------------------------------------------------------------
// Detection matching and AP

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub category: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub category: usize,
}

/// One ground-truth entry per set label bit of each instance.
pub fn ground_truth_from_instances(instances: &[HoiInstance]) -> Vec<GroundTruth> {
    instances
        .iter()
        .flat_map(|inst| {
            inst.hoi_label.ones().map(move |category| GroundTruth {
                image_id: inst.image_id,
                human_box: inst.human_box,
                object_box: inst.object_box,
                category,
            })
        })
        .collect()
}

/// Indices sorted by descending score; equal scores keep input order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching of `predictions` (already in rank order) against `gts`.
///
/// A prediction is a true positive when some unused ground truth in the same
/// image has the same category and both the human and object IoUs reach
/// `IOU_THRESHOLD`; among several, the one with the largest minimum overlap
/// is consumed.
pub fn match_detections(predictions: &[Detection], gts: &[GroundTruth]) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    predictions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.image_id != p.image_id || gt.category != p.category {
                    continue;
                }
                let overlap =
                    iou(&p.human_box, &gt.human_box).min(iou(&p.object_box, &gt.object_box));
                if overlap >= IOU_THRESHOLD && best.is_none_or(|(_, o)| overlap > o) {
                    best = Some((g, overlap));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Non-interpolated AP over TP/FP flags in rank order; 0 when `n_positives == 0`.
pub fn average_precision(tp: &[bool], n_positives: usize) -> f64 {
    if n_positives == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &is_tp) in tp.iter().enumerate() {
        if is_tp {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / n_positives as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: usize,
    pub name: String,
    pub n_gt: usize,
    pub n_train: u64,
    pub rare: bool,
    pub unseen: bool,
    /// `None` when the category has no ground truth in the evaluated set.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMap {
    pub group: String,
    pub map: Option<f64>,
    pub n_categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_mode: SplitMode,
    pub rare_threshold: u64,
    pub per_category: Vec<CategoryAp>,
    pub groups: Vec<GroupMap>,
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.group == name)
            .and_then(|g| g.map)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,name,n_gt,n_train,rare,unseen,ap\n");
        for c in &self.per_category {
            let ap = c.ap.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.category, c.name, c.n_gt, c.n_train, c.rare, c.unseen, ap
            );
        }
        s.push_str("\ngroup,map,n_categories\n");
        for g in &self.groups {
            let m = g.map.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", g.group, m, g.n_categories);
        }
        s
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        (None, 0)
    } else {
        (Some(sum / n as f64), n)
    }
}

/// Per-category AP and group means.
///
/// Groups: Full / Rare / NonRare (rare = fewer than `rare_threshold`
/// training instances), plus Unseen / Seen when the split holds categories
/// out. Group means are unweighted over the member categories that have
/// ground truth.
pub fn map_report(
    detections: &[Detection],
    gts: &[GroundTruth],
    tax: &Taxonomy,
    split: &SplitSpec,
    rare_threshold: u64,
) -> Result<EvalReport> {
    let n = tax.n_hoi();
    let mut dets_by_cat: Vec<Vec<&Detection>> = vec![Vec::new(); n];
    for d in detections {
        if d.category >= n {
            return Err(AtlError::OutOfRange {
                what: "HOI category",
                id: d.category,
                len: n,
            });
        }
        if !d.score.is_finite() {
            return Err(AtlError::NonFinite(format!(
                "score of image {}",
                d.image_id
            )));
        }
        dets_by_cat[d.category].push(d);
    }
    let mut gts_by_cat: Vec<Vec<GroundTruth>> = vec![Vec::new(); n];
    for g in gts {
        if g.category >= n {
            return Err(AtlError::OutOfRange {
                what: "HOI category",
                id: g.category,
                len: n,
            });
        }
        gts_by_cat[g.category].push(g.clone());
    }

    let mut per_category = Vec::with_capacity(n);
    for c in 0..n {
        let dets = &dets_by_cat[c];
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let ranked: Vec<Detection> = rank_by_score(&scores)
            .into_iter()
            .map(|i| dets[i].clone())
            .collect();
        let n_gt = gts_by_cat[c].len();
        let ap = if n_gt == 0 {
            None
        } else {
            Some(average_precision(
                &match_detections(&ranked, &gts_by_cat[c]),
                n_gt,
            ))
        };
        let (v, o) = tax.pair(c);
        per_category.push(CategoryAp {
            category: c,
            name: format!("{} {}", tax.verb_names()[v], tax.object_names()[o]),
            n_gt,
            n_train: tax.train_counts()[c],
            rare: tax.train_counts()[c] < rare_threshold,
            unseen: split.is_unseen(c),
            ap,
        });
    }

    let group = |name: &str, keep: &dyn Fn(&CategoryAp) -> bool| {
        let (map, n_categories) =
            mean_of(per_category.iter().filter(|c| keep(c)).filter_map(|c| c.ap));
        GroupMap {
            group: name.to_string(),
            map,
            n_categories,
        }
    };
    let mut groups = vec![
        group("Full", &|_| true),
        group("Rare", &|c| c.rare),
        group("NonRare", &|c| !c.rare),
    ];
    if split.mode != SplitMode::None {
        groups.push(group("Unseen", &|c| c.unseen));
        groups.push(group("Seen", &|c| !c.unseen));
    }
    Ok(EvalReport {
        split_mode: split.mode,
        rare_threshold,
        per_category,
        groups,
    })
}

// ---------------------------------------------------------------------------
// Affordance metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when there were no predictions and precision was reported as 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub micro: Prf,
    pub macro_avg: Prf,
}

fn prf_from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Prf {
    let precision_undefined = n_pred == 0;
    let precision = if n_pred == 0 {
        0.0
    } else {
        tp as f64 / n_pred as f64
    };
    let recall = if n_gt == 0 {
        0.0
    } else {
        tp as f64 / n_gt as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
        precision_undefined,
    }
}

/// Micro-averaged (pooled over every object/verb decision) and per-object
/// macro-averaged precision, recall and F1.
pub fn affordance_prf1(
    predicted: &[BTreeSet<usize>],
    truth: &[BTreeSet<usize>],
) -> Result<PrfReport> {
    if predicted.len() != truth.len() {
        return Err(AtlError::dim(
            "affordance predictions",
            truth.len(),
            predicted.len(),
        ));
    }
    let (mut tp, mut n_pred, mut n_gt) = (0, 0, 0);
    let mut per_object = Vec::with_capacity(truth.len());
    for (p, g) in predicted.iter().zip(truth) {
        let hits = p.intersection(g).count();
        tp += hits;
        n_pred += p.len();
        n_gt += g.len();
        per_object.push(prf_from_counts(hits, p.len(), g.len()));
    }
    let micro = prf_from_counts(tp, n_pred, n_gt);
    let k = per_object.len().max(1) as f64;
    let macro_avg = Prf {
        precision: per_object.iter().map(|p| p.precision).sum::<f64>() / k,
        recall: per_object.iter().map(|p| p.recall).sum::<f64>() / k,
        f1: per_object.iter().map(|p| p.f1).sum::<f64>() / k,
        precision_undefined: per_object.iter().any(|p| p.precision_undefined),
    };
    Ok(PrfReport { micro, macro_avg })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMap {
    /// Mean over verbs with at least one positive and defined scores.
    pub map: Option<f64>,
    pub per_verb: Vec<Option<f64>>,
}

/// Per verb, ranks the queried objects by their score for that verb and
/// computes AP against `truth`; `scores[q][v]` is `None` when verb `v` has
/// no bank entries.
pub fn affordance_map(
    scores: &[Vec<Option<f64>>],
    truth: &[BTreeSet<usize>],
    n_verbs: usize,
) -> Result<AffordanceMap> {
    if scores.len() != truth.len() {
        return Err(AtlError::dim(
            "affordance scores",
            truth.len(),
            scores.len(),
        ));
    }
    for s in scores {
        if s.len() != n_verbs {
            return Err(AtlError::dim("affordance score vector", n_verbs, s.len()));
        }
    }
    let mut per_verb = Vec::with_capacity(n_verbs);
    for v in 0..n_verbs {
        let n_pos = truth.iter().filter(|g| g.contains(&v)).count();
        let column: Option<Vec<f64>> = scores.iter().map(|s| s[v]).collect();
        let ap = match column {
            Some(col) if n_pos > 0 => {
                let flags: Vec<bool> = rank_by_score(&col)
                    .into_iter()
                    .map(|q| truth[q].contains(&v))
                    .collect();
                Some(average_precision(&flags, n_pos))
            }
            _ => None,
        };
        per_verb.push(ap);
    }
    let (map, _) = mean_of(per_verb.iter().filter_map(|a| *a));
    Ok(AffordanceMap { map, per_verb })
}
