#![allow(dead_code)]

use atl_core::affordance::{self, HoiScorer};
use atl_core::config::{DataConfig, RunConfig};
use atl_core::eval::{self, SplitMode, SplitSelector, SplitSpec};
use atl_core::experiment;
use atl_core::geometry::BBox;
use atl_core::pipeline::{self, TrainConfig};
use atl_core::rng;
use atl_core::synth::{self, WorldConfig};
use atl_core::taxonomy::{MultiHot, Taxonomy};
use atl_core::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err(format!($($msg)+));
            }
        }
    };
}

pub fn random_taxonomy(rng: &mut ChaCha8Rng, max_v: usize, max_o: usize) -> Taxonomy {
    let n_v = rng.random_range(1..=max_v);
    let n_o = rng.random_range(1..=max_o);
    let mut all: Vec<(usize, usize)> = (0..n_v)
        .flat_map(|v| (0..n_o).map(move |o| (v, o)))
        .collect();
    all.shuffle(rng);
    let n = rng.random_range(1..=all.len());
    all.truncate(n);
    Taxonomy::from_pairs(n_v, n_o, all).unwrap()
}

/// Composite labels are never all-zero and never exceed the cap.
pub fn composites_respect_cap(seed: u64) -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let tax = random_taxonomy(&mut r, 8, 8);
    let d = 3;
    let n_verb_items = r.random_range(0..6);
    let n_obj_items = r.random_range(0..4);
    let verb_data: Vec<(Vec<f64>, MultiHot)> = (0..n_verb_items)
        .map(|_| {
            let mut l = MultiHot::zeros(tax.n_verbs());
            l.set(r.random_range(0..tax.n_verbs()));
            if r.random_bool(0.3) {
                l.set(r.random_range(0..tax.n_verbs()));
            }
            (vec![r.random(); d], l)
        })
        .collect();
    let obj_data: Vec<(Vec<f64>, MultiHot)> = (0..n_obj_items)
        .map(|_| {
            (
                vec![r.random(); d],
                MultiHot::one_hot(tax.n_objects(), r.random_range(0..tax.n_objects())).unwrap(),
            )
        })
        .collect();
    let vi: Vec<(&[f64], &MultiHot)> = verb_data.iter().map(|(f, l)| (f.as_slice(), l)).collect();
    let oi: Vec<(&[f64], &MultiHot)> = obj_data.iter().map(|(f, l)| (f.as_slice(), l)).collect();
    let cap = r.random_range(0..6);
    let out = pipeline::compose_batch(&vi, &oi, &tax, cap, &mut r).map_err(|e| e.to_string())?;
    ensure!(
        out.len() <= cap,
        "{} composites exceed cap {cap}",
        out.len()
    );
    let valid = vi
        .iter()
        .flat_map(|v| oi.iter().map(move |o| (v, o)))
        .filter(|(v, o)| !tax.compose_label(o.1, v.1).unwrap().is_zero())
        .count();
    ensure!(
        out.len() == valid.min(cap),
        "expected {} composites, got {}",
        valid.min(cap),
        out.len()
    );
    for c in &out {
        ensure!(!c.label.is_zero(), "all-zero composite label");
        ensure!(
            c.input.len() == 2 * d,
            "composite input length {}",
            c.input.len()
        );
        let want = tax
            .compose_label(oi[c.object_item].1, vi[c.verb_item].1)
            .unwrap();
        ensure!(c.label == want, "composite label mismatch");
    }
    Ok(())
}

/// Scores derived deterministically from the feature values.
pub struct HashScorer(pub usize);

impl HoiScorer for HashScorer {
    fn hoi_scores(&self, verb_feat: &[f64], object_feat: &[f64]) -> Result<Vec<f64>> {
        let mut h = 0u64;
        for v in verb_feat.iter().chain(object_feat) {
            h = h.rotate_left(7) ^ v.to_bits();
        }
        let mut r = ChaCha8Rng::seed_from_u64(h);
        Ok((0..self.0).map(|_| r.random()).collect())
    }
}

fn small_run_config(n_train: usize) -> RunConfig {
    RunConfig {
        world: WorldConfig {
            n_verbs: 6,
            n_objects: 8,
            n_pairs: 20,
            feat_dim: 4,
            nominal_train: n_train,
            ..WorldConfig::default()
        },
        data: DataConfig {
            n_train,
            n_test: 20,
            n_external: 20,
        },
        ..RunConfig::default()
    }
}

/// F_i / S_i lies in [0, 1], S_i <= M, and the kept set follows the threshold.
pub fn affordance_ratios_bounded(seed: u64) -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n_train = r.random_range(10..200);
    let p = experiment::prepare(&small_run_config(n_train), seed).map_err(|e| e.to_string())?;
    let m = r.random_range(1..40);
    let bank = affordance::build_bank(
        &p.data.train,
        &p.tax,
        m,
        seed,
        &mut rng::stream(seed, rng::STREAM_BANK),
    )
    .map_err(|e| e.to_string())?;
    if bank.is_empty() {
        return Ok(());
    }
    let hoi_t = r.random_range(0.0..=1.0);
    let keep_t = r.random_range(0.0..=1.0);
    let obj: Vec<f64> = (0..p.world.feat_dim)
        .map(|_| r.random_range(-2.0..2.0))
        .collect();
    let s = affordance::recognize(
        &obj,
        &bank,
        &HashScorer(p.tax.n_hoi()),
        &p.tax,
        hoi_t,
        keep_t,
    )
    .map_err(|e| e.to_string())?;
    for v in 0..p.tax.n_verbs() {
        ensure!(
            s.bank_counts[v] <= m,
            "S_{v} = {} exceeds M = {m}",
            s.bank_counts[v]
        );
        ensure!(s.hits[v] <= s.bank_counts[v], "F_{v} > S_{v}");
        match s.probability[v] {
            Some(q) => {
                ensure!((0.0..=1.0).contains(&q), "ratio {q} out of range");
                ensure!(
                    s.kept.contains(&v) == (q > keep_t),
                    "kept set disagrees with threshold"
                );
            }
            None => ensure!(
                s.bank_counts[v] == 0 && !s.kept.contains(&v),
                "undefined ratio with entries"
            ),
        }
    }
    Ok(())
}

/// Training data of every zero-shot split contains no unseen category and,
/// for novel objects, no held-out object.
pub fn split_has_no_leakage(seed: u64) -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let world_cfg = WorldConfig {
        n_verbs: r.random_range(2..8),
        n_objects: r.random_range(3..10),
        feat_dim: 4,
        nominal_train: 300,
        seed,
        ..WorldConfig::default()
    };
    let world_cfg = WorldConfig {
        n_pairs: r.random_range(
            world_cfg.n_objects.max(world_cfg.n_verbs)..=world_cfg.n_verbs * world_cfg.n_objects,
        ),
        ..world_cfg
    };
    let (mut tax, world) = synth::gen_world(&world_cfg).map_err(|e| e.to_string())?;
    let mode = [
        SplitMode::RareFirst,
        SplitMode::NonRareFirst,
        SplitMode::NovelObject,
    ][r.random_range(0..3)];
    let split = match mode {
        SplitMode::NovelObject => {
            let k = r.random_range(1..tax.n_objects());
            let objs = eval::choose_novel_objects(&tax, k, &mut r).map_err(|e| e.to_string())?;
            eval::make_split(&tax, mode, &SplitSelector::Objects(objs))
        }
        _ => eval::make_split(
            &tax,
            mode,
            &SplitSelector::Count(r.random_range(1..tax.n_hoi().max(2))),
        ),
    };
    let split: SplitSpec = split.map_err(|e| e.to_string())?;
    ensure!(
        split.unseen_hoi_ids.is_disjoint(&split.seen_hoi_ids),
        "seen and unseen overlap"
    );
    ensure!(
        split.unseen_hoi_ids.len() + split.seen_hoi_ids.len() == tax.n_hoi(),
        "split does not cover all categories"
    );
    let data = synth::gen_dataset(&world, &mut tax, &split, 200, 50, 20, seed)
        .map_err(|e| e.to_string())?;
    for inst in &data.train {
        for c in inst.hoi_label.ones() {
            ensure!(
                !split.unseen_hoi_ids.contains(&c),
                "unseen category {c} in training data"
            );
        }
        ensure!(
            !split.unseen_object_ids.contains(&inst.object_label),
            "held-out object in training data"
        );
    }
    for c in &split.unseen_hoi_ids {
        ensure!(
            tax.train_counts()[*c] == 0,
            "unseen category {c} has training count"
        );
    }
    Ok(())
}

/// Each channel is the axis-aligned block of pixel centres inside the box;
/// its side lengths match the box's share of the union frame to within one pixel.
pub fn spatial_map_matches_area(seed: u64) -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rand_box = |r: &mut ChaCha8Rng| {
        let x1 = r.random_range(0.0..0.8);
        let y1 = r.random_range(0.0..0.8);
        BBox::new(
            x1,
            y1,
            x1 + r.random_range(0.02..0.5),
            y1 + r.random_range(0.02..0.5),
        )
    };
    let h = rand_box(&mut r);
    let o = rand_box(&mut r);
    let res = [4, 16, 64][r.random_range(0..3)];
    let map = pipeline::make_spatial_pattern_res(&h, &o, res).map_err(|e| e.to_string())?;
    let frame = h.union(&o);
    for (ch, b) in [h, o].iter().enumerate() {
        let data = map.channel(ch);
        let cols = (0..res)
            .filter(|&c| (0..res).any(|row| data[row * res + c] == 1))
            .count();
        let rows = (0..res)
            .filter(|&row| (0..res).any(|c| data[row * res + c] == 1))
            .count();
        ensure!(
            map.channel_sum(ch) == rows * cols,
            "channel {ch} is not a rectangle"
        );
        let nx = b.width() / frame.width() * res as f64;
        let ny = b.height() / frame.height() * res as f64;
        if map.channel_sum(ch) == 0 {
            ensure!(
                nx < 1.0 || ny < 1.0,
                "channel {ch} empty for a {nx:.3} x {ny:.3} pixel box"
            );
            continue;
        }
        ensure!(
            (cols as f64 - nx).abs() <= 1.0,
            "channel {ch}: {cols} columns vs {nx:.3}"
        );
        ensure!(
            (rows as f64 - ny).abs() <= 1.0,
            "channel {ch}: {rows} rows vs {ny:.3}"
        );
        let area = b.area() / frame.area() * (res * res) as f64;
        ensure!(
            (map.channel_sum(ch) as f64 - area).abs() <= nx + ny + 1.0,
            "channel {ch}: {} pixels vs area {area:.3}",
            map.channel_sum(ch)
        );
    }
    Ok(())
}

/// Serialized data, checkpoint, predictions and report of one small run.
pub fn run_bytes(seed: u64) -> Vec<Vec<u8>> {
    let mut cfg = small_run_config(120);
    cfg.train = TrainConfig {
        hidden: 8,
        iterations: 30,
        spatial_res: 4,
        ..cfg.train
    };
    let p = experiment::prepare(&cfg, seed).unwrap();
    let outcome = experiment::train_model(&p, &cfg.train, seed).unwrap();
    let report = experiment::evaluate_hoi(&outcome.model, &p, &cfg).unwrap();
    let bank = experiment::build_run_bank(&p, 10, seed).unwrap();
    vec![
        serde_json::to_vec(&p.data.train).unwrap(),
        serde_json::to_vec(&p.data.external).unwrap(),
        serde_json::to_vec(&p.split).unwrap(),
        serde_json::to_vec(&outcome.model).unwrap(),
        pipeline::trace_to_csv(&outcome.trace).into_bytes(),
        serde_json::to_vec(&report).unwrap(),
        serde_json::to_vec(&bank).unwrap(),
    ]
}

pub fn same_seed_is_byte_identical(seed: u64) -> Check {
    let a = run_bytes(seed);
    let b = run_bytes(seed);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        ensure!(x == y, "artifact {i} differs between identical runs");
    }
    ensure!(
        a[3] != run_bytes(seed.wrapping_add(1))[3],
        "different seeds gave the same model"
    );
    Ok(())
}
