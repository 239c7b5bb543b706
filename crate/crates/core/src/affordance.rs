//! Affordance feature bank and object affordance recognition.
//!
//! The bank keeps up to `M` verb features per verb sampled from training
//! HOIs. To recognize the affordances of an object feature, every banked
//! verb feature is concatenated with it and scored by the interaction
//! classifier. HOI scores are reduced to verb scores through the verb-HOI
//! co-occurrence matrix (max over the verb's categories), and an entry of
//! verb `i` counts toward `F_i` only if verb `i` itself fires. The score of
//! verb `i` is `F_i / S_i`, where `S_i` is the number of banked entries.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, AtlError, Result};
use crate::io;
use crate::pipeline::HoiModel;
use crate::rng::Rng;
use crate::synth::HoiInstance;
use crate::taxonomy::Taxonomy;

pub const DEFAULT_BANK_SIZE: usize = 100;
pub const DEFAULT_HOI_THRESHOLD: f64 = 0.5;
pub const DEFAULT_KEEP_THRESHOLD: f64 = 0.5;

/// Anything that maps a (verb feature, object feature) pair to per-HOI probabilities.
pub trait HoiScorer {
    fn hoi_scores(&self, verb_feat: &[f64], object_feat: &[f64]) -> Result<Vec<f64>>;
}

impl HoiScorer for HoiModel {
    fn hoi_scores(&self, verb_feat: &[f64], object_feat: &[f64]) -> Result<Vec<f64>> {
        self.interaction_scores(verb_feat, object_feat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffordanceBank {
    pub m: usize,
    pub feat_dim: usize,
    pub source_seed: u64,
    /// `counts[i] == entries[i].len()`; kept explicit in the file format.
    pub counts: Vec<usize>,
    pub entries: Vec<Vec<Vec<f64>>>,
}

impl AffordanceBank {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_verbs(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        check_len("bank verbs", tax.n_verbs(), self.entries.len())?;
        check_len("bank counts", self.entries.len(), self.counts.len())?;
        for (v, list) in self.entries.iter().enumerate() {
            if list.len() != self.counts[v] {
                return Err(AtlError::Data(format!(
                    "bank verb {v}: count {} but {} entries",
                    self.counts[v],
                    list.len()
                )));
            }
            if list.len() > self.m {
                return Err(AtlError::Data(format!(
                    "bank verb {v} exceeds M = {}",
                    self.m
                )));
            }
            for f in list {
                check_len("bank feature", self.feat_dim, f.len())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path, tax: &Taxonomy) -> Result<Self> {
        let bank: AffordanceBank = io::read_json(path)?;
        bank.validate(tax)?;
        Ok(bank)
    }
}

/// Samples up to `m` verb features per verb, uniformly without replacement,
/// from training instances whose label contains that verb. "No interaction"
/// verbs stay empty.
pub fn build_bank(
    train: &[HoiInstance],
    tax: &Taxonomy,
    m: usize,
    source_seed: u64,
    rng: &mut Rng,
) -> Result<AffordanceBank> {
    if m == 0 {
        return Err(AtlError::Config("bank size M must be at least 1".into()));
    }
    let feat_dim = train.first().map(|t| t.verb_feat.len()).unwrap_or(0);
    if train.is_empty() {
        log::warn!("building affordance bank from an empty training set");
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); tax.n_verbs()];
    for (i, inst) in train.iter().enumerate() {
        check_len("verb_feat", feat_dim, inst.verb_feat.len())?;
        for v in tax.decouple_verb(&inst.hoi_label)?.ones() {
            if !tax.is_no_interaction(v) {
                pools[v].push(i);
            }
        }
    }
    let mut entries = Vec::with_capacity(tax.n_verbs());
    for pool in &pools {
        let picked: Vec<usize> = if pool.len() <= m {
            pool.clone()
        } else {
            let mut idx = index::sample(rng, pool.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| pool[k]).collect()
        };
        entries.push(
            picked
                .into_iter()
                .map(|i| train[i].verb_feat.clone())
                .collect::<Vec<_>>(),
        );
    }
    Ok(AffordanceBank {
        m,
        feat_dim,
        source_seed,
        counts: entries.iter().map(Vec::len).collect(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceScores {
    /// `F_i / S_i`; `None` when verb `i` has no bank entries.
    pub probability: Vec<Option<f64>>,
    /// Raw counts `F_i`.
    pub hits: Vec<usize>,
    /// Bank sizes `S_i`.
    pub bank_counts: Vec<usize>,
    /// Verbs with `F_i / S_i > keep_threshold`, ascending.
    pub kept: BTreeSet<usize>,
}

impl AffordanceScores {
    /// Verbs ordered by descending probability (undefined last), ties by id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probability.len()).collect();
        order.sort_by(|&a, &b| {
            let pa = self.probability[a].unwrap_or(-1.0);
            let pb = self.probability[b].unwrap_or(-1.0);
            pb.total_cmp(&pa)
        });
        order
    }

    pub fn to_table(&self, tax: &Taxonomy) -> String {
        let mut s = format!(
            "{:<4} {:<16} {:>6} {:>6} {:>8} {}\n",
            "rank", "verb", "F_i", "S_i", "score", "kept"
        );
        for (rank, v) in self.ranked().into_iter().enumerate() {
            let score = self.probability[v]
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "n/a".into());
            s.push_str(&format!(
                "{:<4} {:<16} {:>6} {:>6} {:>8} {}\n",
                rank + 1,
                tax.verb_names()[v],
                self.hits[v],
                self.bank_counts[v],
                score,
                if self.kept.contains(&v) { "yes" } else { "" }
            ));
        }
        s
    }
}

/// Per-verb scores from an HOI score vector: max over the verb's categories.
pub fn verb_scores(hoi_scores: &[f64], tax: &Taxonomy) -> Result<Vec<f64>> {
    check_len("HOI scores", tax.n_hoi(), hoi_scores.len())?;
    let mut out = vec![0.0f64; tax.n_verbs()];
    for (c, &s) in hoi_scores.iter().enumerate() {
        let v = tax.pair(c).0;
        out[v] = out[v].max(s);
    }
    Ok(out)
}

pub fn recognize(
    object_feat: &[f64],
    bank: &AffordanceBank,
    scorer: &dyn HoiScorer,
    tax: &Taxonomy,
    hoi_threshold: f64,
    keep_threshold: f64,
) -> Result<AffordanceScores> {
    if bank.is_empty() {
        return Err(AtlError::EmptyBank);
    }
    check_len("bank verbs", tax.n_verbs(), bank.n_verbs())?;
    check_len("object_feat", bank.feat_dim, object_feat.len())?;
    if !(0.0..=1.0).contains(&hoi_threshold) || !(0.0..=1.0).contains(&keep_threshold) {
        return Err(AtlError::Config("thresholds must lie in [0, 1]".into()));
    }
    let mut hits = vec![0usize; tax.n_verbs()];
    for (v, list) in bank.entries.iter().enumerate() {
        for verb_feat in list {
            let scores = verb_scores(&scorer.hoi_scores(verb_feat, object_feat)?, tax)?;
            if scores[v] >= hoi_threshold {
                hits[v] += 1;
            }
        }
    }
    let probability: Vec<Option<f64>> = hits
        .iter()
        .zip(&bank.counts)
        .map(|(&f, &s)| (s > 0).then(|| f as f64 / s as f64))
        .collect();
    let kept = probability
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_some_and(|p| p > keep_threshold))
        .map(|(v, _)| v)
        .collect();
    Ok(AffordanceScores {
        probability,
        hits,
        bank_counts: bank.counts.clone(),
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::taxonomy::MultiHot;

    struct Constant(f64, usize);

    impl HoiScorer for Constant {
        fn hoi_scores(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![self.0; self.1])
        }
    }

    /// Fires on every category when the first verb-feature entry is positive.
    struct SignOfFirst(usize);

    impl HoiScorer for SignOfFirst {
        fn hoi_scores(&self, verb_feat: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![if verb_feat[0] > 0.0 { 0.9 } else { 0.1 }; self.0])
        }
    }

    fn tax() -> Taxonomy {
        // ride=0, eat=1; horse=0, apple=1
        Taxonomy::new(
            vec!["ride".into(), "eat".into()],
            vec!["horse".into(), "apple".into()],
            vec![(0, 0), (1, 1)],
        )
        .unwrap()
    }

    fn inst(category: usize, first: f64) -> HoiInstance {
        let b = crate::geometry::BBox::new(0.0, 0.0, 1.0, 1.0);
        HoiInstance {
            image_id: 0,
            human_box: b,
            object_box: b,
            object_label: category,
            hoi_label: MultiHot::one_hot(2, category).unwrap(),
            human_feat: vec![0.0, 0.0],
            verb_feat: vec![first, 0.0],
            object_feat: vec![0.0, 0.0],
        }
    }

    fn bank_of(ride: &[f64], eat: &[f64]) -> AffordanceBank {
        let entries = vec![
            ride.iter().map(|&x| vec![x, 0.0]).collect::<Vec<_>>(),
            eat.iter().map(|&x| vec![x, 0.0]).collect::<Vec<_>>(),
        ];
        AffordanceBank {
            m: 100,
            feat_dim: 2,
            source_seed: 0,
            counts: entries.iter().map(Vec::len).collect(),
            entries,
        }
    }

    #[test]
    fn bank_caps_and_keeps_small_pools() {
        let tax = tax();
        let mut train: Vec<HoiInstance> = (0..500).map(|i| inst(0, i as f64)).collect();
        train.extend((0..3).map(|i| inst(1, i as f64)));
        let mut r = rng::stream(4, rng::STREAM_BANK);
        let bank = build_bank(&train, &tax, 100, 4, &mut r).unwrap();
        assert_eq!(bank.counts(), &[100, 3]);
        bank.validate(&tax).unwrap();
        let again =
            build_bank(&train, &tax, 100, 4, &mut rng::stream(4, rng::STREAM_BANK)).unwrap();
        assert_eq!(bank, again);
    }

    #[test]
    fn no_interaction_verbs_are_excluded() {
        let mut tax = tax();
        tax.set_no_interaction(1, true).unwrap();
        let train = vec![inst(0, 1.0), inst(1, 1.0)];
        let bank = build_bank(&train, &tax, 10, 0, &mut rng::stream(0, "b")).unwrap();
        assert_eq!(bank.counts(), &[1, 0]);
    }

    #[test]
    fn empty_train_gives_empty_bank() {
        let tax = tax();
        let bank = build_bank(&[], &tax, 10, 0, &mut rng::stream(0, "b")).unwrap();
        assert!(bank.is_empty());
        assert!(matches!(
            recognize(&[], &bank, &Constant(1.0, 2), &tax, 0.5, 0.5),
            Err(AtlError::EmptyBank)
        ));
    }

    #[test]
    fn saturated_and_silent_classifiers() {
        let tax = tax();
        let bank = bank_of(&[1.0, 2.0], &[3.0]);
        let r = recognize(&[0.0, 0.0], &bank, &Constant(1.0, 2), &tax, 0.5, 0.5).unwrap();
        assert_eq!(r.probability, vec![Some(1.0), Some(1.0)]);
        assert_eq!(r.kept, [0, 1].into());
        let r = recognize(&[0.0, 0.0], &bank, &Constant(0.0, 2), &tax, 0.5, 0.5).unwrap();
        assert_eq!(r.probability, vec![Some(0.0), Some(0.0)]);
        assert!(r.kept.is_empty());
    }

    #[test]
    fn three_of_four_entries_fire() {
        let tax = tax();
        let bank = bank_of(&[1.0, 1.0, 1.0, -1.0], &[]);
        let r = recognize(&[0.0, 0.0], &bank, &SignOfFirst(2), &tax, 0.5, 0.5).unwrap();
        assert_eq!(r.hits[0], 3);
        assert_eq!(r.probability[0], Some(0.75));
        assert_eq!(r.probability[1], None);
        assert_eq!(r.kept, [0].into());
    }

    #[test]
    fn recognize_rejects_bad_inputs() {
        let tax = tax();
        let bank = bank_of(&[1.0], &[1.0]);
        assert!(recognize(&[0.0], &bank, &Constant(1.0, 2), &tax, 0.5, 0.5).is_err());
        assert!(recognize(&[0.0, 0.0], &bank, &Constant(1.0, 2), &tax, 1.5, 0.5).is_err());
    }

    #[test]
    fn verb_scores_take_max() {
        let tax = Taxonomy::from_pairs(2, 2, vec![(0, 0), (0, 1), (1, 1)]).unwrap();
        assert_eq!(verb_scores(&[0.2, 0.7, 0.4], &tax).unwrap(), vec![0.7, 0.4]);
    }
}
