//! HOI label space and the verb/object label algebra.
//!
//! A taxonomy fixes `N_v` verbs, `N_o` objects and `C` valid (verb, object)
//! pairs. Each HOI category `c` owns exactly one verb and one object, which
//! gives two binary co-occurrence matrices: the verb-HOI matrix (`N_v x C`)
//! and the object-HOI matrix (`N_o x C`). Labels are multi-hot throughout;
//! one-hot is the special case.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, AtlError, Result};

/// Dense binary matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize) {
        self.data[r * self.cols + c] = true;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_sum(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c)).count()
    }

    /// `x . M` thresholded to binary (any positive entry maps to 1).
    pub fn left_product(&self, x: &MultiHot) -> Result<MultiHot> {
        check_len("left operand", self.rows, x.len())?;
        let mut out = vec![false; self.cols];
        for r in x.ones() {
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o |= m;
            }
        }
        Ok(MultiHot(out))
    }

    /// `y . M^T` thresholded to binary.
    pub fn right_transpose_product(&self, y: &MultiHot) -> Result<MultiHot> {
        check_len("right operand", self.cols, y.len())?;
        let out = (0..self.rows)
            .map(|r| y.ones().any(|c| self.get(r, c)))
            .collect();
        Ok(MultiHot(out))
    }
}

/// Binary multi-hot vector; serialized as an array of 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct MultiHot(pub Vec<bool>);

impl TryFrom<Vec<u8>> for MultiHot {
    type Error = String;

    fn try_from(bits: Vec<u8>) -> std::result::Result<Self, String> {
        bits.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(format!("multi-hot entry {other} is not 0 or 1")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(MultiHot)
    }
}

impl From<MultiHot> for Vec<u8> {
    fn from(m: MultiHot) -> Self {
        m.0.into_iter().map(u8::from).collect()
    }
}

/// Multi-hot vector over the `C` HOI categories.
pub type HoiLabel = MultiHot;

impl MultiHot {
    pub fn zeros(len: usize) -> Self {
        MultiHot(vec![false; len])
    }

    pub fn one_hot(len: usize, idx: usize) -> Result<Self> {
        if idx >= len {
            return Err(AtlError::OutOfRange {
                what: "one-hot index",
                id: idx,
                len,
            });
        }
        let mut v = Self::zeros(len);
        v.0[idx] = true;
        Ok(v)
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut v = Self::zeros(len);
        for &i in indices {
            if i >= len {
                return Err(AtlError::OutOfRange {
                    what: "multi-hot index",
                    id: i,
                    len,
                });
            }
            v.0[i] = true;
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize) {
        self.0[i] = true;
    }

    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.ones().collect()
    }

    pub fn and(&self, other: &MultiHot) -> Result<MultiHot> {
        check_len("multi-hot conjunction", self.len(), other.len())?;
        Ok(MultiHot(
            self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect(),
        ))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// On-disk form of a taxonomy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyFile {
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    pub pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub train_counts: Vec<u64>,
    /// Verbs that denote "no interaction"; excluded from affordance banks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub no_interaction_verbs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    verb_names: Vec<String>,
    object_names: Vec<String>,
    pairs: Vec<(usize, usize)>,
    verb_hoi: BinaryMatrix,
    object_hoi: BinaryMatrix,
    pair_index: HashMap<(usize, usize), usize>,
    train_counts: Vec<u64>,
    no_interaction: Vec<bool>,
}

/// Builds the verb-HOI and object-HOI co-occurrence matrices for a pair list.
pub fn build_cooccurrence(
    pairs: &[(usize, usize)],
    n_verbs: usize,
    n_objects: usize,
) -> Result<(BinaryMatrix, BinaryMatrix)> {
    let mut seen = HashMap::with_capacity(pairs.len());
    let mut verb_hoi = BinaryMatrix::zeros(n_verbs, pairs.len());
    let mut object_hoi = BinaryMatrix::zeros(n_objects, pairs.len());
    for (c, &(v, o)) in pairs.iter().enumerate() {
        if v >= n_verbs {
            return Err(AtlError::OutOfRange {
                what: "verb",
                id: v,
                len: n_verbs,
            });
        }
        if o >= n_objects {
            return Err(AtlError::OutOfRange {
                what: "object",
                id: o,
                len: n_objects,
            });
        }
        if seen.insert((v, o), c).is_some() {
            return Err(AtlError::DuplicatePair { verb: v, object: o });
        }
        verb_hoi.set(v, c);
        object_hoi.set(o, c);
    }
    Ok((verb_hoi, object_hoi))
}

impl Taxonomy {
    pub fn new(
        verb_names: Vec<String>,
        object_names: Vec<String>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if verb_names.is_empty() || object_names.is_empty() || pairs.is_empty() {
            return Err(AtlError::Taxonomy(
                "need at least one verb, one object and one pair".into(),
            ));
        }
        let (verb_hoi, object_hoi) =
            build_cooccurrence(&pairs, verb_names.len(), object_names.len())?;
        let pair_index = pairs.iter().enumerate().map(|(c, &p)| (p, c)).collect();
        let n_verbs = verb_names.len();
        let n_hoi = pairs.len();
        Ok(Self {
            verb_names,
            object_names,
            pairs,
            verb_hoi,
            object_hoi,
            pair_index,
            train_counts: vec![0; n_hoi],
            no_interaction: vec![false; n_verbs],
        })
    }

    /// Taxonomy with generated names `v0..`, `o0..`.
    pub fn from_pairs(
        n_verbs: usize,
        n_objects: usize,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        Self::new(
            (0..n_verbs).map(|i| format!("v{i}")).collect(),
            (0..n_objects).map(|i| format!("o{i}")).collect(),
            pairs,
        )
    }

    pub fn n_verbs(&self) -> usize {
        self.verb_names.len()
    }

    pub fn n_objects(&self) -> usize {
        self.object_names.len()
    }

    pub fn n_hoi(&self) -> usize {
        self.pairs.len()
    }

    pub fn verb_names(&self) -> &[String] {
        &self.verb_names
    }

    pub fn object_names(&self) -> &[String] {
        &self.object_names
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair(&self, category: usize) -> (usize, usize) {
        self.pairs[category]
    }

    pub fn verb_hoi(&self) -> &BinaryMatrix {
        &self.verb_hoi
    }

    pub fn object_hoi(&self) -> &BinaryMatrix {
        &self.object_hoi
    }

    pub fn train_counts(&self) -> &[u64] {
        &self.train_counts
    }

    pub fn set_train_counts(&mut self, counts: Vec<u64>) -> Result<()> {
        check_len("train_counts", self.n_hoi(), counts.len())?;
        self.train_counts = counts;
        Ok(())
    }

    pub fn is_no_interaction(&self, verb: usize) -> bool {
        self.no_interaction[verb]
    }

    pub fn set_no_interaction(&mut self, verb: usize, flag: bool) -> Result<()> {
        self.check_verb(verb)?;
        self.no_interaction[verb] = flag;
        Ok(())
    }

    pub fn verb_id(&self, name: &str) -> Option<usize> {
        self.verb_names.iter().position(|n| n == name)
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_names.iter().position(|n| n == name)
    }

    /// Category id of `(verb, object)` if the pair is valid.
    pub fn category(&self, verb: usize, object: usize) -> Option<usize> {
        self.pair_index.get(&(verb, object)).copied()
    }

    fn check_verb(&self, verb: usize) -> Result<()> {
        if verb < self.n_verbs() {
            Ok(())
        } else {
            Err(AtlError::OutOfRange {
                what: "verb",
                id: verb,
                len: self.n_verbs(),
            })
        }
    }

    fn check_object(&self, object: usize) -> Result<()> {
        if object < self.n_objects() {
            Ok(())
        } else {
            Err(AtlError::OutOfRange {
                what: "object",
                id: object,
                len: self.n_objects(),
            })
        }
    }

    pub fn is_valid_pair(&self, verb: usize, object: usize) -> Result<bool> {
        self.check_verb(verb)?;
        self.check_object(object)?;
        Ok(self.pair_index.contains_key(&(verb, object)))
    }

    /// Composite label: `(l_o . A_o) AND (l_v . A_v)`.
    ///
    /// All-zero output means the combination lies outside the label space.
    pub fn compose_label(
        &self,
        object_label: &MultiHot,
        verb_label: &MultiHot,
    ) -> Result<HoiLabel> {
        let by_object = self.object_hoi.left_product(object_label)?;
        let by_verb = self.verb_hoi.left_product(verb_label)?;
        by_object.and(&by_verb)
    }

    pub fn decouple_verb(&self, label: &HoiLabel) -> Result<MultiHot> {
        self.verb_hoi.right_transpose_product(label)
    }

    pub fn decouple_object(&self, label: &HoiLabel) -> Result<MultiHot> {
        self.object_hoi.right_transpose_product(label)
    }

    /// Verbs applicable to `object` (its affordances).
    pub fn affordances_of(&self, object: usize) -> Vec<usize> {
        let mut verbs: Vec<usize> = self
            .pairs
            .iter()
            .filter(|(_, o)| *o == object)
            .map(|(v, _)| *v)
            .collect();
        verbs.sort_unstable();
        verbs
    }

    /// Categories whose object is `object`.
    pub fn categories_of_object(&self, object: usize) -> Vec<usize> {
        (0..self.n_hoi())
            .filter(|&c| self.pairs[c].1 == object)
            .collect()
    }

    pub fn to_file(&self) -> TaxonomyFile {
        TaxonomyFile {
            verbs: self.verb_names.clone(),
            objects: self.object_names.clone(),
            pairs: self.pairs.iter().map(|&(v, o)| [v, o]).collect(),
            train_counts: self.train_counts.clone(),
            no_interaction_verbs: (0..self.n_verbs())
                .filter(|&v| self.no_interaction[v])
                .collect(),
        }
    }

    pub fn from_file(file: TaxonomyFile) -> Result<Self> {
        let mut tax = Self::new(
            file.verbs,
            file.objects,
            file.pairs.iter().map(|p| (p[0], p[1])).collect(),
        )?;
        if !file.train_counts.is_empty() {
            tax.set_train_counts(file.train_counts)?;
        }
        for v in file.no_interaction_verbs {
            tax.set_no_interaction(v, true)?;
        }
        Ok(tax)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ride_eat() -> Taxonomy {
        // verbs: ride=0, eat=1; objects: horse=0, apple=1
        Taxonomy::new(
            vec!["ride".into(), "eat".into()],
            vec!["horse".into(), "apple".into()],
            vec![(0, 0), (1, 1)],
        )
        .unwrap()
    }

    fn oh(len: usize, i: usize) -> MultiHot {
        MultiHot::one_hot(len, i).unwrap()
    }

    #[test]
    fn cooccurrence_identity_layout() {
        let (av, ao) = build_cooccurrence(&[(0, 0), (1, 1)], 2, 2).unwrap();
        assert_eq!(av.row(0), &[true, false]);
        assert_eq!(av.row(1), &[false, true]);
        assert_eq!(ao.row(0), &[true, false]);
        assert_eq!(ao.row(1), &[false, true]);
    }

    #[test]
    fn cooccurrence_one_verb_two_hois() {
        // hold=0; horse=0, apple=1
        let (av, _) = build_cooccurrence(&[(0, 0), (0, 1)], 1, 2).unwrap();
        assert_eq!(av.row(0), &[true, true]);
    }

    #[test]
    fn cooccurrence_rejects_duplicates_and_bad_ids() {
        match build_cooccurrence(&[(0, 1), (0, 1)], 2, 2) {
            Err(AtlError::DuplicatePair { verb: 0, object: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            build_cooccurrence(&[(2, 0)], 2, 2),
            Err(AtlError::OutOfRange { what: "verb", .. })
        ));
        assert!(matches!(
            build_cooccurrence(&[(0, 5)], 2, 2),
            Err(AtlError::OutOfRange { what: "object", .. })
        ));
    }

    #[test]
    fn compose_examples() {
        let tax = ride_eat();
        let horse = oh(2, 0);
        let apple = oh(2, 1);
        let ride = oh(2, 0);
        assert_eq!(
            tax.compose_label(&horse, &ride).unwrap().0,
            vec![true, false]
        );
        assert!(tax.compose_label(&apple, &ride).unwrap().is_zero());
        assert!(tax
            .compose_label(&MultiHot::zeros(2), &ride)
            .unwrap()
            .is_zero());
        assert!(matches!(
            tax.compose_label(&MultiHot::zeros(3), &ride),
            Err(AtlError::Dimension { .. })
        ));
    }

    #[test]
    fn decouple_examples() {
        // ride=0, hold=1, eat=2; horse=0, apple=1
        let tax = Taxonomy::from_pairs(3, 2, vec![(0, 0), (1, 0), (2, 1)]).unwrap();
        let y = oh(3, 0);
        assert_eq!(tax.decouple_verb(&y).unwrap(), oh(3, 0));
        let y = MultiHot::from_indices(3, &[0, 1]).unwrap();
        assert_eq!(tax.decouple_verb(&y).unwrap().indices(), vec![0, 1]);
        assert!(tax.decouple_verb(&MultiHot::zeros(3)).unwrap().is_zero());

        assert_eq!(tax.decouple_object(&oh(3, 2)).unwrap(), oh(2, 1));
        let y = MultiHot::from_indices(3, &[0, 2]).unwrap();
        assert_eq!(tax.decouple_object(&y).unwrap().indices(), vec![0, 1]);
        assert!(tax.decouple_object(&MultiHot::zeros(3)).unwrap().is_zero());
        assert!(tax.decouple_object(&MultiHot::zeros(4)).is_err());
    }

    #[test]
    fn valid_pair_lookup() {
        let tax = ride_eat();
        assert!(tax.is_valid_pair(0, 0).unwrap());
        assert!(!tax.is_valid_pair(0, 1).unwrap());
        assert!(tax.is_valid_pair(2, 0).is_err());
        assert!(tax.is_valid_pair(0, 2).is_err());
    }

    #[test]
    fn file_round_trip_validates() {
        let mut tax = ride_eat();
        tax.set_train_counts(vec![3, 12]).unwrap();
        tax.set_no_interaction(1, true).unwrap();
        let back = Taxonomy::from_file(tax.to_file()).unwrap();
        assert_eq!(back, tax);

        let mut bad = tax.to_file();
        bad.pairs.push([0, 0]);
        assert!(Taxonomy::from_file(bad).is_err());

        let mut bad = tax.to_file();
        bad.train_counts = vec![1];
        assert!(Taxonomy::from_file(bad).is_err());

        let json = r#"{"verbs":["a"],"objects":["b"],"pairs":[[0,0]],"extra":1}"#;
        assert!(serde_json::from_str::<TaxonomyFile>(json).is_err());
    }
}
