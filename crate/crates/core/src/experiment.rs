//! End-to-end runs on synthetic worlds: data, split, training of the
//! baseline and transfer variants, HOI mAP and affordance metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::affordance::{self, AffordanceBank, AffordanceScores, HoiScorer};
use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::{
    self, AffordanceMap, Detection, EvalReport, PrfReport, SplitMode, SplitSelector, SplitSpec,
};
use crate::pipeline::{self, HoiModel, TrainConfig, TrainOutcome};
use crate::rng;
use crate::synth::{self, Dataset, WorldSpec};
use crate::taxonomy::Taxonomy;

/// A generated world with its split and data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tax: Taxonomy,
    pub world: WorldSpec,
    pub split: SplitSpec,
    pub data: Dataset,
}

pub fn make_run_split(tax: &Taxonomy, cfg: &RunConfig, seed: u64) -> Result<SplitSpec> {
    let sc = &cfg.split;
    match sc.mode {
        SplitMode::None => Ok(SplitSpec::none(tax)),
        SplitMode::RareFirst | SplitMode::NonRareFirst => {
            let k = ((tax.n_hoi() as f64 * sc.unseen_fraction).round() as usize).max(1);
            eval::make_split(tax, sc.mode, &SplitSelector::Count(k))
        }
        SplitMode::NovelObject => {
            let objects = match &sc.unseen_objects {
                Some(list) => list.clone(),
                None => {
                    let k = ((tax.n_objects() as f64 * sc.unseen_fraction).round() as usize).max(1);
                    eval::choose_novel_objects(tax, k, &mut rng::stream(seed, rng::STREAM_SPLIT))?
                }
            };
            eval::make_split(tax, sc.mode, &SplitSelector::Objects(objects))
        }
    }
}

pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    let mut world_cfg = cfg.world.clone();
    world_cfg.seed = rng::derive_seed(seed, rng::STREAM_DATA, 0);
    let (mut tax, world) = synth::gen_world(&world_cfg)?;
    let split = make_run_split(&tax, cfg, seed)?;
    let data = synth::gen_dataset(
        &world,
        &mut tax,
        &split,
        cfg.data.n_train,
        cfg.data.n_test,
        cfg.data.n_external,
        rng::derive_seed(seed, rng::STREAM_DATA, 1),
    )?;
    Ok(Prepared {
        tax,
        world,
        split,
        data,
    })
}

pub fn train_model(
    prepared: &Prepared,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        seed: rng::derive_seed(seed, rng::STREAM_INIT, 0),
        ..train_cfg.clone()
    };
    pipeline::train(
        &prepared.data.train,
        &prepared.data.external,
        &prepared.tax,
        &cfg,
    )
}

/// Test-set detections; empty when the detection confidences fall below
/// the configured thresholds.
pub fn predict_test(
    model: &HoiModel,
    prepared: &Prepared,
    cfg: &RunConfig,
) -> Result<Vec<Detection>> {
    let e = &cfg.eval;
    if e.s_h < e.human_threshold || e.s_o < e.object_threshold {
        return Ok(Vec::new());
    }
    pipeline::predict_instances(model, &prepared.tax, &prepared.data.test, e.s_h, e.s_o)
}

pub fn evaluate_hoi(model: &HoiModel, prepared: &Prepared, cfg: &RunConfig) -> Result<EvalReport> {
    let dets = predict_test(model, prepared, cfg)?;
    let gts = eval::ground_truth_from_instances(&prepared.data.test);
    eval::map_report(
        &dets,
        &gts,
        &prepared.tax,
        &prepared.split,
        cfg.eval.rare_threshold,
    )
}

/// Objects whose affordances are evaluated: the held-out objects under a
/// novel-object split, otherwise every object.
pub fn query_objects(prepared: &Prepared) -> Vec<usize> {
    if prepared.split.unseen_object_ids.is_empty() {
        (0..prepared.tax.n_objects()).collect()
    } else {
        prepared.split.unseen_object_ids.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceQuery {
    pub object: usize,
    pub object_feat: Vec<f64>,
}

/// Fresh object-dataset style features, interleaved across objects.
pub fn affordance_queries(
    prepared: &Prepared,
    objects: &[usize],
    per_object: usize,
    seed: u64,
) -> Result<Vec<AffordanceQuery>> {
    let mut out = Vec::with_capacity(objects.len() * per_object);
    for _ in 0..per_object {
        for &o in objects {
            let mut r = rng::indexed_stream(seed, rng::STREAM_QUERY, out.len() as u64);
            out.push(AffordanceQuery {
                object: o,
                object_feat: synth::sample_object_instance(&prepared.world, o, &mut r)?.object_feat,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceEval {
    pub prf: PrfReport,
    pub map: AffordanceMap,
    pub scores: Vec<AffordanceScores>,
}

pub fn evaluate_affordance(
    scorer: &dyn HoiScorer,
    bank: &AffordanceBank,
    tax: &Taxonomy,
    queries: &[AffordanceQuery],
    hoi_threshold: f64,
    keep_threshold: f64,
) -> Result<AffordanceEval> {
    let scores = queries
        .iter()
        .map(|q| {
            affordance::recognize(
                &q.object_feat,
                bank,
                scorer,
                tax,
                hoi_threshold,
                keep_threshold,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<BTreeSet<usize>> = queries
        .iter()
        .map(|q| {
            tax.affordances_of(q.object)
                .into_iter()
                .filter(|&v| !tax.is_no_interaction(v))
                .collect()
        })
        .collect();
    let predicted: Vec<BTreeSet<usize>> = scores.iter().map(|s| s.kept.clone()).collect();
    let prf = eval::affordance_prf1(&predicted, &truth)?;
    let probs: Vec<Vec<Option<f64>>> = scores.iter().map(|s| s.probability.clone()).collect();
    let map = eval::affordance_map(&probs, &truth, tax.n_verbs())?;
    Ok(AffordanceEval { prf, map, scores })
}

pub fn build_run_bank(prepared: &Prepared, m: usize, seed: u64) -> Result<AffordanceBank> {
    let bank_seed = rng::derive_seed(seed, rng::STREAM_BANK, 0);
    affordance::build_bank(
        &prepared.data.train,
        &prepared.tax,
        m,
        bank_seed,
        &mut rng::stream(bank_seed, rng::STREAM_BANK),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub full_map: f64,
    pub unseen_map: Option<f64>,
    pub seen_map: Option<f64>,
    pub rare_map: Option<f64>,
    pub affordance_f1: f64,
    pub affordance_map: Option<f64>,
    pub composite_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline: VariantResult,
    pub atl: VariantResult,
}

fn variant(
    prepared: &Prepared,
    cfg: &RunConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    bank: &AffordanceBank,
    queries: &[AffordanceQuery],
) -> Result<(VariantResult, HoiModel)> {
    let outcome = train_model(prepared, train_cfg, seed)?;
    let report = evaluate_hoi(&outcome.model, prepared, cfg)?;
    let aff = evaluate_affordance(
        &outcome.model,
        bank,
        &prepared.tax,
        queries,
        cfg.affordance.hoi_threshold,
        cfg.affordance.keep_threshold,
    )?;
    let result = VariantResult {
        full_map: report.group("Full").unwrap_or(0.0),
        unseen_map: report.group("Unseen"),
        seen_map: report.group("Seen"),
        rare_map: report.group("Rare"),
        affordance_f1: aff.prf.micro.f1,
        affordance_map: aff.map.map,
        composite_samples: outcome.composite_samples,
    };
    Ok((result, outcome.model))
}

/// Baseline (no transfer) and transfer models on one seed's world.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    Ok(run_seed_with_sweep(cfg, seed, &[])?.0)
}

/// [`run_seed`] plus the transfer model's affordance mAP for each bank size.
pub fn run_seed_with_sweep(
    cfg: &RunConfig,
    seed: u64,
    bank_sizes: &[usize],
) -> Result<(SeedResult, Vec<BankSweepRow>)> {
    let prepared = prepare(cfg, seed)?;
    let bank = build_run_bank(&prepared, cfg.bank.m, seed)?;
    let queries = affordance_queries(
        &prepared,
        &query_objects(&prepared),
        cfg.affordance.queries_per_object,
        seed,
    )?;
    let (baseline, _) = variant(&prepared, cfg, &cfg.train.baseline(), seed, &bank, &queries)?;
    let (atl, model) = variant(&prepared, cfg, &cfg.train, seed, &bank, &queries)?;
    let sweep = bank_size_sweep(&prepared, &model, cfg, bank_sizes, seed)?;
    Ok((
        SeedResult {
            seed,
            baseline,
            atl,
        },
        sweep,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankSweepRow {
    pub seed: u64,
    pub m: usize,
    pub affordance_map: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub seeds: Vec<SeedResult>,
    pub metrics: Vec<TrendRow>,
    pub bank_sweep: Vec<BankSweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub metric: String,
    pub baseline_median: Option<f64>,
    pub atl_median: Option<f64>,
}

impl TrendSummary {
    pub fn row(&self, metric: &str) -> Option<&TrendRow> {
        self.metrics.iter().find(|r| r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "seed,variant,full_map,unseen_map,seen_map,rare_map,affordance_f1,affordance_map\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.seeds {
            for (name, v) in [("baseline", &r.baseline), ("atl", &r.atl)] {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{},{},{},{:.6},{}",
                    r.seed,
                    name,
                    v.full_map,
                    opt(v.unseen_map),
                    opt(v.seen_map),
                    opt(v.rare_map),
                    v.affordance_f1,
                    opt(v.affordance_map)
                );
            }
        }
        s
    }

    pub fn bank_sweep_csv(&self) -> String {
        let mut s = String::from("seed,m,affordance_map\n");
        for r in &self.bank_sweep {
            let v = r
                .affordance_map
                .map(|x| format!("{x:.6}"))
                .unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", r.seed, r.m, v);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into());
        let mut s = format!("{:<16} {:>10} {:>10}\n", "median", "Baseline", "ATL");
        for r in &self.metrics {
            let _ = writeln!(
                s,
                "{:<16} {:>10} {:>10}",
                r.metric,
                opt(r.baseline_median),
                opt(r.atl_median)
            );
        }
        s
    }
}

pub fn summarize(seeds: Vec<SeedResult>) -> TrendSummary {
    type Pick = fn(&VariantResult) -> Option<f64>;
    let metrics: [(&str, Pick); 6] = [
        ("full_map", |v| Some(v.full_map)),
        ("unseen_map", |v| v.unseen_map),
        ("seen_map", |v| v.seen_map),
        ("rare_map", |v| v.rare_map),
        ("affordance_f1", |v| Some(v.affordance_f1)),
        ("affordance_map", |v| v.affordance_map),
    ];
    let rows = metrics
        .iter()
        .map(|(name, pick)| {
            let mut b: Vec<f64> = seeds.iter().filter_map(|s| pick(&s.baseline)).collect();
            let mut a: Vec<f64> = seeds.iter().filter_map(|s| pick(&s.atl)).collect();
            TrendRow {
                metric: name.to_string(),
                baseline_median: median(&mut b),
                atl_median: median(&mut a),
            }
        })
        .collect();
    TrendSummary {
        seeds,
        metrics: rows,
        bank_sweep: Vec::new(),
    }
}

/// All seeds; the bank-size sweep runs on the first seed only.
pub fn run_trends(cfg: &RunConfig, seeds: &[u64], bank_sizes: &[usize]) -> Result<TrendSummary> {
    let mut results = Vec::with_capacity(seeds.len());
    let mut sweep = Vec::new();
    for (k, &seed) in seeds.iter().enumerate() {
        let sizes = if k == 0 { bank_sizes } else { &[] };
        let (r, rows) = run_seed_with_sweep(cfg, seed, sizes)?;
        log::info!("seed {seed}: baseline {:?} atl {:?}", r.baseline, r.atl);
        results.push(r);
        sweep.extend(rows);
    }
    let mut summary = summarize(results);
    summary.bank_sweep = sweep;
    Ok(summary)
}

/// Affordance mAP of one trained model for several bank sizes.
pub fn bank_size_sweep(
    prepared: &Prepared,
    model: &HoiModel,
    cfg: &RunConfig,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<BankSweepRow>> {
    if sizes.is_empty() {
        return Ok(Vec::new());
    }
    let queries = affordance_queries(
        prepared,
        &query_objects(prepared),
        cfg.affordance.queries_per_object,
        seed,
    )?;
    sizes
        .iter()
        .map(|&m| {
            let bank = build_run_bank(prepared, m, seed)?;
            let e = evaluate_affordance(
                model,
                &bank,
                &prepared.tax,
                &queries,
                cfg.affordance.hoi_threshold,
                cfg.affordance.keep_threshold,
            )?;
            Ok(BankSweepRow {
                seed,
                m,
                affordance_map: e.map.map,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn queries_interleave_objects() {
        let cfg = RunConfig::default();
        let p = prepare(
            &RunConfig {
                data: crate::config::DataConfig {
                    n_train: 10,
                    n_test: 5,
                    n_external: 5,
                },
                ..cfg
            },
            1,
        )
        .unwrap();
        let objs = query_objects(&p);
        assert_eq!(objs.len(), 4);
        let q = affordance_queries(&p, &objs, 3, 1).unwrap();
        assert_eq!(q.len(), 12);
        assert_eq!(q[0].object, objs[0]);
        assert_eq!(q[1].object, objs[1]);
        assert_eq!(q[4].object, objs[0]);
    }
}
