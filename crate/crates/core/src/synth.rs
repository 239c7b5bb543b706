//! Synthetic HOI worlds.
//!
//! Verbs and objects get latent prototype vectors; an instance's verb and
//! object features are their prototypes plus isotropic Gaussian noise. The
//! external object stream (standing in for a separate object-detection
//! dataset) adds a fixed domain-shift vector to the object features. Pair
//! frequencies follow a Zipf-like law so some categories fall into the rare
//! group. Every instance draws from its own RNG stream
//! `indexed_stream(seed, "<set>", index)`, so generation order never changes
//! the result.

use std::collections::BTreeSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, AtlError, Result};
use crate::eval::{SplitMode, SplitSpec};
use crate::geometry::BBox;
use crate::io;
use crate::rng::{self, Rng};
use crate::taxonomy::{HoiLabel, MultiHot, Taxonomy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_verbs: usize,
    pub n_objects: usize,
    pub n_pairs: usize,
    pub feat_dim: usize,
    pub noise_sigma: f64,
    pub tail_exponent: f64,
    /// Training-set size the nominal per-category counts are scaled to.
    pub nominal_train: usize,
    /// Norm of the feature offset applied to external object instances.
    pub domain_shift: f64,
    /// Probability that an instance also carries a second valid HOI with the same object.
    pub co_label_prob: f64,
    /// Derived from the run's master seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_verbs: 12,
            n_objects: 20,
            n_pairs: 60,
            feat_dim: 16,
            noise_sigma: 0.3,
            tail_exponent: 1.3,
            nominal_train: 4000,
            domain_shift: 0.5,
            co_label_prob: 0.1,
            seed: 0,
        }
    }
}

/// Preferred placement of the object box relative to the human box for a verb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbLayout {
    /// Object-centre offset in units of the human box width / height.
    pub dx: f64,
    pub dy: f64,
    /// Object width relative to the human box width.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub feat_dim: usize,
    pub verb_prototypes: Vec<Vec<f64>>,
    pub object_prototypes: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub tail_exponent: f64,
    pub object_domain_shift: Vec<f64>,
    pub verb_layouts: Vec<VerbLayout>,
    /// Relative training frequency of each HOI category.
    pub category_weights: Vec<f64>,
    pub co_label_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiInstance {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_label: usize,
    pub hoi_label: HoiLabel,
    pub human_feat: Vec<f64>,
    pub verb_feat: Vec<f64>,
    pub object_feat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectInstance {
    pub object_box: BBox,
    pub object_label: usize,
    pub object_feat: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<HoiInstance>,
    pub test: Vec<HoiInstance>,
    pub external: Vec<ObjectInstance>,
}

fn gaussian(rng: &mut Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn add_noise(base: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    base.iter()
        .map(|b| b + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn min_pairwise_distance(protos: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            best = best.min(euclidean(&protos[i], &protos[j]));
        }
    }
    best
}

/// Nominal per-rank counts `max(1, round(total * k^-alpha / Z))`, `k = 1..=n`.
pub fn tail_counts(n: usize, alpha: f64, total: usize) -> Vec<u64> {
    let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-alpha)).collect();
    let z: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| ((total as f64 * w / z).round() as u64).max(1))
        .collect()
}

/// Draws `n_pairs` distinct (verb, object) pairs. The first `max(N_v, N_o)`
/// pairs walk two permutations so every verb and every object is used when
/// the budget allows; the rest are drawn uniformly from the remaining grid.
fn sample_pairs(
    n_verbs: usize,
    n_objects: usize,
    n_pairs: usize,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let mut verbs: Vec<usize> = (0..n_verbs).collect();
    let mut objects: Vec<usize> = (0..n_objects).collect();
    verbs.shuffle(rng);
    objects.shuffle(rng);
    let mut chosen = BTreeSet::new();
    let cover = n_verbs.max(n_objects).min(n_pairs);
    for i in 0..cover {
        chosen.insert((verbs[i % n_verbs], objects[i % n_objects]));
    }
    let mut rest: Vec<(usize, usize)> = (0..n_verbs)
        .flat_map(|v| (0..n_objects).map(move |o| (v, o)))
        .filter(|p| !chosen.contains(p))
        .collect();
    rest.shuffle(rng);
    let mut pairs: Vec<(usize, usize)> = chosen.into_iter().collect();
    pairs.extend(rest.into_iter().take(n_pairs - pairs.len()));
    pairs.sort_unstable();
    pairs
}

pub fn gen_world(cfg: &WorldConfig) -> Result<(Taxonomy, WorldSpec)> {
    if cfg.n_verbs == 0 || cfg.n_objects == 0 || cfg.n_pairs == 0 {
        return Err(AtlError::Config(
            "world needs verbs, objects and pairs".into(),
        ));
    }
    if cfg.n_pairs > cfg.n_verbs * cfg.n_objects {
        return Err(AtlError::Config(format!(
            "{} pairs requested but only {} verb-object combinations exist",
            cfg.n_pairs,
            cfg.n_verbs * cfg.n_objects
        )));
    }
    if cfg.feat_dim < 2 {
        return Err(AtlError::Config("feat_dim must be at least 2".into()));
    }
    if cfg.noise_sigma.is_nan()
        || cfg.noise_sigma < 0.0
        || cfg.tail_exponent.is_nan()
        || cfg.tail_exponent < 0.0
    {
        return Err(AtlError::Config(
            "noise_sigma and tail_exponent must be nonnegative".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.co_label_prob) {
        return Err(AtlError::Config("co_label_prob must lie in [0, 1]".into()));
    }
    let mut rng = rng::stream(cfg.seed, "world");
    let pairs = sample_pairs(cfg.n_verbs, cfg.n_objects, cfg.n_pairs, &mut rng);
    let mut tax = Taxonomy::from_pairs(cfg.n_verbs, cfg.n_objects, pairs)?;

    let d = cfg.feat_dim;
    let verb_prototypes: Vec<Vec<f64>> = (0..cfg.n_verbs)
        .map(|_| gaussian(&mut rng, d, 1.0))
        .collect();
    let object_prototypes: Vec<Vec<f64>> = (0..cfg.n_objects)
        .map(|_| gaussian(&mut rng, d, 1.0))
        .collect();
    let threshold = 4.0 * cfg.noise_sigma;
    for (kind, protos) in [("verb", &verb_prototypes), ("object", &object_prototypes)] {
        let m = min_pairwise_distance(protos);
        if m <= threshold {
            log::warn!(
                "{kind} prototypes only {m:.3} apart (noise separation bound {threshold:.3})"
            );
        }
    }

    let dir = gaussian(&mut rng, d, 1.0);
    let norm = dir
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let object_domain_shift = dir.iter().map(|v| v * cfg.domain_shift / norm).collect();

    let verb_layouts = (0..cfg.n_verbs)
        .map(|_| VerbLayout {
            dx: rng.random_range(-1.0..1.0),
            dy: rng.random_range(-0.6..0.6),
            scale: rng.random_range(0.3..1.2),
        })
        .collect();

    let counts = tail_counts(cfg.n_pairs, cfg.tail_exponent, cfg.nominal_train);
    let mut ranks: Vec<usize> = (0..cfg.n_pairs).collect();
    ranks.shuffle(&mut rng);
    let mut train_counts = vec![0u64; cfg.n_pairs];
    for (category, &rank) in ranks.iter().enumerate() {
        train_counts[category] = counts[rank];
    }
    let category_weights = train_counts.iter().map(|&c| c as f64).collect();
    tax.set_train_counts(train_counts)?;

    let world = WorldSpec {
        feat_dim: d,
        verb_prototypes,
        object_prototypes,
        noise_sigma: cfg.noise_sigma,
        tail_exponent: cfg.tail_exponent,
        object_domain_shift,
        verb_layouts,
        category_weights,
        co_label_prob: cfg.co_label_prob,
        seed: cfg.seed,
    };
    Ok((tax, world))
}

impl WorldSpec {
    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        if self.feat_dim < 2 {
            return Err(AtlError::Data("feat_dim must be at least 2".into()));
        }
        check_len("verb prototypes", tax.n_verbs(), self.verb_prototypes.len())?;
        check_len(
            "object prototypes",
            tax.n_objects(),
            self.object_prototypes.len(),
        )?;
        check_len("verb layouts", tax.n_verbs(), self.verb_layouts.len())?;
        check_len("category weights", tax.n_hoi(), self.category_weights.len())?;
        check_len(
            "domain shift",
            self.feat_dim,
            self.object_domain_shift.len(),
        )?;
        for p in self.verb_prototypes.iter().chain(&self.object_prototypes) {
            check_len("prototype", self.feat_dim, p.len())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

fn clamp_box(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    const MIN_SIDE: f64 = 0.01;
    let x1 = x1.clamp(0.0, 1.0 - MIN_SIDE);
    let y1 = y1.clamp(0.0, 1.0 - MIN_SIDE);
    let x2 = x2.clamp(x1 + MIN_SIDE, 1.0);
    let y2 = y2.clamp(y1 + MIN_SIDE, 1.0);
    BBox::new(x1, y1, x2, y2)
}

fn sample_human_box(rng: &mut Rng) -> BBox {
    let cx = rng.random_range(0.3..0.7);
    let cy = rng.random_range(0.3..0.7);
    let w = rng.random_range(0.15..0.35);
    let h = rng.random_range(0.3..0.5);
    clamp_box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

fn sample_object_box_near(human: &BBox, layout: &VerbLayout, rng: &mut Rng) -> BBox {
    let hw = human.width();
    let hh = human.height();
    let cx = (human.x1 + human.x2) / 2.0
        + layout.dx * hw
        + 0.1 * hw * rng.sample::<f64, _>(StandardNormal);
    let cy = (human.y1 + human.y2) / 2.0
        + layout.dy * hh
        + 0.1 * hh * rng.sample::<f64, _>(StandardNormal);
    let w = layout.scale * hw * rng.random_range(0.8..1.2);
    let h = w * rng.random_range(0.7..1.4);
    clamp_box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

fn mean_of(vectors: &[&Vec<f64>]) -> Vec<f64> {
    let d = vectors[0].len();
    let mut out = vec![0.0; d];
    for v in vectors {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += x);
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Samples one annotated pair of `category`; co-labels are restricted to
/// categories accepted by `co_label_allowed`.
pub fn sample_hoi_instance_filtered(
    world: &WorldSpec,
    tax: &Taxonomy,
    category: usize,
    co_label_allowed: &dyn Fn(usize) -> bool,
    rng: &mut Rng,
) -> Result<HoiInstance> {
    if category >= tax.n_hoi() {
        return Err(AtlError::OutOfRange {
            what: "HOI category",
            id: category,
            len: tax.n_hoi(),
        });
    }
    let (verb, object) = tax.pair(category);
    let mut label = MultiHot::one_hot(tax.n_hoi(), category)?;
    if world.co_label_prob > 0.0 && rng.random_bool(world.co_label_prob) {
        let others: Vec<usize> = tax
            .categories_of_object(object)
            .into_iter()
            .filter(|&c| c != category && co_label_allowed(c))
            .collect();
        if !others.is_empty() {
            label.set(others[rng.random_range(0..others.len())]);
        }
    }
    let verbs = tax.decouple_verb(&label)?;
    let active: Vec<&Vec<f64>> = verbs.ones().map(|v| &world.verb_prototypes[v]).collect();
    let verb_mean = mean_of(&active);
    let sigma = world.noise_sigma;
    let verb_feat = add_noise(&verb_mean, sigma, rng);
    let human_feat = add_noise(&verb_mean, sigma, rng);
    let object_feat = add_noise(&world.object_prototypes[object], sigma, rng);
    let human_box = sample_human_box(rng);
    let object_box = sample_object_box_near(&human_box, &world.verb_layouts[verb], rng);
    Ok(HoiInstance {
        image_id: 0,
        human_box,
        object_box,
        object_label: object,
        hoi_label: label,
        human_feat,
        verb_feat,
        object_feat,
    })
}

pub fn sample_hoi_instance(
    world: &WorldSpec,
    tax: &Taxonomy,
    category: usize,
    rng: &mut Rng,
) -> Result<HoiInstance> {
    sample_hoi_instance_filtered(world, tax, category, &|_| true, rng)
}

/// External object instance: prototype + domain shift + noise.
pub fn sample_object_instance(
    world: &WorldSpec,
    object: usize,
    rng: &mut Rng,
) -> Result<ObjectInstance> {
    if object >= world.object_prototypes.len() {
        return Err(AtlError::OutOfRange {
            what: "object",
            id: object,
            len: world.object_prototypes.len(),
        });
    }
    let shifted: Vec<f64> = world.object_prototypes[object]
        .iter()
        .zip(&world.object_domain_shift)
        .map(|(p, s)| p + s)
        .collect();
    let object_feat = add_noise(&shifted, world.noise_sigma, rng);
    let cx = rng.random_range(0.2..0.8);
    let cy = rng.random_range(0.2..0.8);
    let w = rng.random_range(0.1..0.4);
    let h = rng.random_range(0.1..0.4);
    Ok(ObjectInstance {
        object_box: clamp_box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0),
        object_label: object,
        object_feat,
    })
}

/// Generates train / test / external sets under `split`.
///
/// Training categories are drawn from the seen set with probability
/// proportional to the world's category weights, and the realized counts
/// are written back into `tax.train_counts`. Test categories are uniform
/// over all categories. External objects are uniform over all objects.
pub fn gen_dataset(
    world: &WorldSpec,
    tax: &mut Taxonomy,
    split: &SplitSpec,
    n_train: usize,
    n_test: usize,
    n_external: usize,
    seed: u64,
) -> Result<Dataset> {
    world.validate(tax)?;
    split.validate(tax)?;
    if split.seen_hoi_ids.is_empty() {
        return Err(AtlError::Config(
            "split leaves no seen HOI categories".into(),
        ));
    }
    let seen: Vec<usize> = split.seen_hoi_ids.iter().copied().collect();
    let weights: Vec<f64> = seen
        .iter()
        .map(|&c| world.category_weights[c].max(0.0))
        .collect();
    let picker = WeightedIndex::new(&weights)
        .map_err(|e| AtlError::Config(format!("category weights: {e}")))?;
    let is_seen = |c: usize| split.seen_hoi_ids.contains(&c);

    let mut train = Vec::with_capacity(n_train);
    let mut counts = vec![0u64; tax.n_hoi()];
    for i in 0..n_train {
        let mut r = rng::indexed_stream(seed, "train", i as u64);
        let category = seen[picker.sample(&mut r)];
        let mut inst = sample_hoi_instance_filtered(world, tax, category, &is_seen, &mut r)?;
        inst.image_id = i as u64;
        for c in inst.hoi_label.ones() {
            counts[c] += 1;
        }
        train.push(inst);
    }

    let mut test = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let mut r = rng::indexed_stream(seed, "test", i as u64);
        let category = r.random_range(0..tax.n_hoi());
        let mut inst = sample_hoi_instance(world, tax, category, &mut r)?;
        inst.image_id = i as u64;
        test.push(inst);
    }

    let mut external = Vec::with_capacity(n_external);
    for i in 0..n_external {
        let mut r = rng::indexed_stream(seed, "external", i as u64);
        let object = r.random_range(0..tax.n_objects());
        external.push(sample_object_instance(world, object, &mut r)?);
    }

    tax.set_train_counts(counts)?;
    if split.mode == SplitMode::NovelObject {
        debug_assert!(train
            .iter()
            .all(|t| !split.unseen_object_ids.contains(&t.object_label)));
    }
    Ok(Dataset {
        train,
        test,
        external,
    })
}

impl HoiInstance {
    pub fn validate(&self, tax: &Taxonomy, feat_dim: usize) -> Result<()> {
        self.human_box.validate()?;
        self.object_box.validate()?;
        check_len("hoi_label", tax.n_hoi(), self.hoi_label.len())?;
        if self.object_label >= tax.n_objects() {
            return Err(AtlError::OutOfRange {
                what: "object",
                id: self.object_label,
                len: tax.n_objects(),
            });
        }
        let objects = tax.decouple_object(&self.hoi_label)?;
        if objects.indices() != vec![self.object_label] {
            return Err(AtlError::Data(format!(
                "image {}: hoi_label objects {:?} disagree with object_label {}",
                self.image_id,
                objects.indices(),
                self.object_label
            )));
        }
        check_len("human_feat", feat_dim, self.human_feat.len())?;
        check_len("verb_feat", feat_dim, self.verb_feat.len())?;
        check_len("object_feat", feat_dim, self.object_feat.len())?;
        Ok(())
    }
}

impl ObjectInstance {
    pub fn validate(&self, tax: &Taxonomy, feat_dim: usize) -> Result<()> {
        self.object_box.validate()?;
        if self.object_label >= tax.n_objects() {
            return Err(AtlError::OutOfRange {
                what: "object",
                id: self.object_label,
                len: tax.n_objects(),
            });
        }
        check_len("object_feat", feat_dim, self.object_feat.len())
    }
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const EXTERNAL_FILE: &str = "external.jsonl";

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        io::write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        io::write_jsonl(&dir.join(EXTERNAL_FILE), &self.external)
    }

    /// Loads and validates every record against `tax`.
    pub fn load(dir: &Path, tax: &Taxonomy, feat_dim: usize) -> Result<Self> {
        let train: Vec<HoiInstance> = io::read_jsonl(&dir.join(TRAIN_FILE))?;
        let test: Vec<HoiInstance> = io::read_jsonl(&dir.join(TEST_FILE))?;
        let external: Vec<ObjectInstance> = io::read_jsonl(&dir.join(EXTERNAL_FILE))?;
        for inst in train.iter().chain(&test) {
            inst.validate(tax, feat_dim)?;
        }
        for obj in &external {
            obj.validate(tax, feat_dim)?;
        }
        Ok(Self {
            train,
            test,
            external,
        })
    }
}

/// Nearest-prototype index (Euclidean).
pub fn nearest_prototype(feat: &[f64], prototypes: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in prototypes.iter().enumerate() {
        let d = euclidean(feat, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
