//! Command-line front end. Every command writes its outputs plus a
//! `manifest-<command>.json` into the output directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::affordance::AffordanceBank;
use crate::config::RunConfig;
use crate::error::{AtlError, Result};
use crate::eval::{self, SplitSpec};
use crate::experiment::{self, Prepared};
use crate::io;
use crate::pipeline::{self, Checkpoint};
use crate::synth::{Dataset, WorldSpec, EXTERNAL_FILE, TEST_FILE, TRAIN_FILE};
use crate::taxonomy::Taxonomy;
use crate::verify;

pub const OUT_DIR_ENV: &str = "ATL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "atl-out";

pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const WORLD_FILE: &str = "world.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BANK_FILE: &str = "bank.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

pub fn exit_code(err: &AtlError) -> i32 {
    match err {
        AtlError::Config(_) => EXIT_CONFIG,
        AtlError::Divergence { .. } => EXIT_DIVERGENCE,
        AtlError::Io { .. } => EXIT_OTHER,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "atl",
    version,
    about = "Affordance transfer learning on synthetic HOI worlds"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Directory written by `gen-data` (defaults to the output directory).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelInputs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Checkpoint written by `train` (defaults to <out>/checkpoint.json).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world, zero-shot split and datasets.
    GenData,
    /// Train the HOI model; writes a checkpoint and the loss trace.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// Disable affordance transfer (lambda2 = 0, no external objects).
        #[arg(long)]
        baseline: bool,
    },
    /// HOI detection mAP with Full/Rare/NonRare groups.
    EvalHoi {
        #[command(flatten)]
        model: ModelInputs,
    },
    /// HOI detection mAP with Unseen/Seen/Full groups under the stored split.
    Zeroshot {
        #[command(flatten)]
        model: ModelInputs,
    },
    /// Sample the affordance feature bank from the training set.
    BuildBank {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Recognize the affordances of held-out objects.
    Affordance {
        #[command(flatten)]
        model: ModelInputs,
        /// Bank written by `build-bank` (defaults to <out>/bank.json).
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Finite-difference gradient verification.
    Gradcheck,
    /// Baseline vs transfer medians over the configured seeds.
    ReproduceTrends,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train { .. } => "train",
            Command::EvalHoi { .. } => "eval-hoi",
            Command::Zeroshot { .. } => "zeroshot",
            Command::BuildBank { .. } => "build-bank",
            Command::Affordance { .. } => "affordance",
            Command::Gradcheck => "gradcheck",
            Command::ReproduceTrends => "reproduce-trends",
        }
    }
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn input(&mut self, path: PathBuf) -> Result<PathBuf> {
        if !path.is_file() {
            return Err(AtlError::Data(format!(
                "{}: input file not found",
                path.display()
            )));
        }
        self.inputs.push(path.clone());
        Ok(path)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.output(name);
        io::write_json(&p, value)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.output(name);
        io::write_text(&p, text)
    }

    fn data_dir(&self, inputs: &Inputs) -> PathBuf {
        inputs.data.clone().unwrap_or_else(|| self.out.clone())
    }

    fn load_prepared(&mut self, inputs: &Inputs) -> Result<Prepared> {
        let dir = self.data_dir(inputs);
        let tax = Taxonomy::load(&self.input(dir.join(TAXONOMY_FILE))?)?;
        let world = WorldSpec::load(&self.input(dir.join(WORLD_FILE))?)?;
        world.validate(&tax)?;
        let split: SplitSpec = io::read_json(&self.input(dir.join(SPLIT_FILE))?)?;
        split.validate(&tax)?;
        for f in [TRAIN_FILE, TEST_FILE, EXTERNAL_FILE] {
            self.input(dir.join(f))?;
        }
        let data = Dataset::load(&dir, &tax, world.feat_dim)?;
        Ok(Prepared {
            tax,
            world,
            split,
            data,
        })
    }

    fn load_checkpoint(&mut self, model: &ModelInputs, tax: &Taxonomy) -> Result<Checkpoint> {
        let path = model
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(CHECKPOINT_FILE));
        Checkpoint::load(&self.input(path)?, tax)
    }

    fn finish(&self, command: &str) -> Result<()> {
        let digest = |paths: &[PathBuf]| -> Result<Vec<FileDigest>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: p.display().to_string(),
                        sha256: hex::encode(Sha256::digest(io::read_bytes(p)?)),
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_hash: self.cfg.hash(),
            config: &self.cfg,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        io::write_json(
            &self.out.join(format!("manifest-{command}.json")),
            &manifest,
        )
    }
}

/// Runs one command; `Ok(false)` means verification ran but failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut run = Run {
        seed: cfg.seed,
        cfg,
        out: cli.common.out.clone(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Some(p) = &cli.common.config {
        run.input(p.clone())?;
    }
    let ok = match &cli.command {
        Command::GenData => gen_data(&mut run)?,
        Command::Train { inputs, baseline } => train(&mut run, inputs, *baseline)?,
        Command::EvalHoi { model } => eval_hoi(&mut run, model, false)?,
        Command::Zeroshot { model } => eval_hoi(&mut run, model, true)?,
        Command::BuildBank { inputs } => build_bank(&mut run, inputs)?,
        Command::Affordance { model, bank } => affordance(&mut run, model, bank.as_deref())?,
        Command::Gradcheck => gradcheck(&mut run)?,
        Command::ReproduceTrends => reproduce_trends(&mut run)?,
    };
    run.finish(cli.command.name())?;
    Ok(ok)
}

fn gen_data(run: &mut Run) -> Result<bool> {
    let p = experiment::prepare(&run.cfg, run.seed)?;
    p.tax.save(&run.output(TAXONOMY_FILE))?;
    run.write_json(WORLD_FILE, &p.world)?;
    run.write_json(SPLIT_FILE, &p.split)?;
    p.data.save(&run.out)?;
    for f in [TRAIN_FILE, TEST_FILE, EXTERNAL_FILE] {
        run.output(f);
    }
    println!(
        "world: {} verbs, {} objects, {} HOI categories; train {}, test {}, external {}; unseen categories {}",
        p.tax.n_verbs(),
        p.tax.n_objects(),
        p.tax.n_hoi(),
        p.data.train.len(),
        p.data.test.len(),
        p.data.external.len(),
        p.split.unseen_hoi_ids.len()
    );
    Ok(true)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    variant: &'static str,
    iterations: usize,
    composite_steps: usize,
    composite_samples: usize,
    final_loss: Option<pipeline::LossParts>,
}

fn train(run: &mut Run, inputs: &Inputs, baseline: bool) -> Result<bool> {
    let p = run.load_prepared(inputs)?;
    let train_cfg = if baseline {
        run.cfg.train.baseline()
    } else {
        run.cfg.train.clone()
    };
    let outcome = experiment::train_model(&p, &train_cfg, run.seed)?;
    let cfg = pipeline::TrainConfig {
        seed: crate::rng::derive_seed(run.seed, crate::rng::STREAM_INIT, 0),
        ..train_cfg
    };
    Checkpoint::new(outcome.model, &cfg).save(&run.output(CHECKPOINT_FILE))?;
    run.write_text("loss_trace.csv", &pipeline::trace_to_csv(&outcome.trace))?;
    let summary = TrainSummary {
        variant: if baseline { "baseline" } else { "atl" },
        iterations: cfg.iterations,
        composite_steps: outcome.composite_steps,
        composite_samples: outcome.composite_samples,
        final_loss: outcome.trace.last().map(|r| r.loss),
    };
    run.write_json("train_summary.json", &summary)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(true)
}

fn eval_hoi(run: &mut Run, model: &ModelInputs, zero_shot: bool) -> Result<bool> {
    let p = run.load_prepared(&model.inputs)?;
    let ck = run.load_checkpoint(model, &p.tax)?;
    let dets = experiment::predict_test(&ck.model, &p, &run.cfg)?;
    let gts = eval::ground_truth_from_instances(&p.data.test);
    let split = if zero_shot {
        p.split.clone()
    } else {
        SplitSpec::none(&p.tax)
    };
    let report = eval::map_report(&dets, &gts, &p.tax, &split, run.cfg.eval.rare_threshold)?;
    let stem = if zero_shot { "zeroshot" } else { "eval" };
    let path = run.output("predictions.jsonl");
    io::write_jsonl(&path, &dets)?;
    run.write_json(&format!("{stem}_report.json"), &report)?;
    run.write_text(&format!("{stem}_report.csv"), &report.to_csv())?;
    for g in &report.groups {
        let v = g
            .map
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!("{:<8} mAP {} ({} categories)", g.group, v, g.n_categories);
    }
    Ok(true)
}

fn build_bank(run: &mut Run, inputs: &Inputs) -> Result<bool> {
    let p = run.load_prepared(inputs)?;
    let bank = experiment::build_run_bank(&p, run.cfg.bank.m, run.seed)?;
    bank.save(&run.output(BANK_FILE))?;
    println!("bank: M = {}, counts {:?}", bank.m, bank.counts());
    Ok(true)
}

pub const HOI_THRESHOLD_SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Serialize)]
struct ThresholdRow {
    hoi_threshold: f64,
    micro_f1: f64,
    map: Option<f64>,
}

#[derive(Debug, Serialize)]
struct AffordanceOutput {
    objects: Vec<usize>,
    queries_per_object: usize,
    hoi_threshold: f64,
    keep_threshold: f64,
    bank_m: usize,
    micro: eval::Prf,
    macro_avg: eval::Prf,
    map: Option<f64>,
    per_verb_ap: Vec<Option<f64>>,
    hoi_threshold_sweep: Vec<ThresholdRow>,
}

fn affordance(run: &mut Run, model: &ModelInputs, bank: Option<&Path>) -> Result<bool> {
    let p = run.load_prepared(&model.inputs)?;
    let ck = run.load_checkpoint(model, &p.tax)?;
    let bank_path = bank
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.out.join(BANK_FILE));
    let bank = AffordanceBank::load(&run.input(bank_path)?, &p.tax)?;
    let objects = experiment::query_objects(&p);
    let aff = &run.cfg.affordance;
    let (hoi_t, keep_t, per_object) = (
        aff.hoi_threshold,
        aff.keep_threshold,
        aff.queries_per_object,
    );
    let queries = experiment::affordance_queries(&p, &objects, per_object, run.seed)?;
    let e = experiment::evaluate_affordance(&ck.model, &bank, &p.tax, &queries, hoi_t, keep_t)?;

    let mut csv = String::from("query,object,verb,hits,bank_count,probability,kept,affordable\n");
    for (qi, (q, s)) in queries.iter().zip(&e.scores).enumerate() {
        let truth = p.tax.affordances_of(q.object);
        for v in 0..p.tax.n_verbs() {
            let prob = s.probability[v]
                .map(|x| format!("{x:.6}"))
                .unwrap_or_default();
            csv.push_str(&format!(
                "{qi},{},{},{},{},{prob},{},{}\n",
                p.tax.object_names()[q.object],
                p.tax.verb_names()[v],
                s.hits[v],
                s.bank_counts[v],
                u8::from(s.kept.contains(&v)),
                u8::from(truth.contains(&v)),
            ));
        }
    }
    run.write_text("affordance_scores.csv", &csv)?;
    let sweep = HOI_THRESHOLD_SWEEP
        .iter()
        .map(|&t| {
            let s = experiment::evaluate_affordance(&ck.model, &bank, &p.tax, &queries, t, keep_t)?;
            Ok(ThresholdRow {
                hoi_threshold: t,
                micro_f1: s.prf.micro.f1,
                map: s.map.map,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = AffordanceOutput {
        objects: objects.clone(),
        queries_per_object: per_object,
        hoi_threshold: hoi_t,
        keep_threshold: keep_t,
        bank_m: bank.m,
        micro: e.prf.micro,
        macro_avg: e.prf.macro_avg,
        map: e.map.map,
        per_verb_ap: e.map.per_verb.clone(),
        hoi_threshold_sweep: sweep,
    };
    run.write_json("affordance_report.json", &out)?;

    for (q, s) in queries.iter().zip(&e.scores).take(objects.len()) {
        println!(
            "object {} (affordances {:?})",
            p.tax.object_names()[q.object],
            p.tax.affordances_of(q.object)
        );
        print!("{}", s.to_table(&p.tax));
    }
    println!(
        "micro P {:.4} R {:.4} F1 {:.4}; affordance mAP {}",
        e.prf.micro.precision,
        e.prf.micro.recall,
        e.prf.micro.f1,
        e.map
            .map
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(true)
}

fn gradcheck(run: &mut Run) -> Result<bool> {
    let summary = verify::run(run.cfg.gradcheck.configs, run.seed)?;
    run.write_json("gradreport.json", &summary)?;
    println!(
        "classifier max relative error {:.3e} over {} configs (tolerance {:.0e})",
        summary.mlp.max_rel_error, summary.mlp_configs, summary.mlp_tolerance
    );
    println!(
        "pipeline max relative error {:.3e} (tolerance {:.0e})",
        summary.pipeline.max_rel_error, summary.pipeline_tolerance
    );
    Ok(summary.passed)
}

fn reproduce_trends(run: &mut Run) -> Result<bool> {
    let t = &run.cfg.trends;
    let summary = experiment::run_trends(&run.cfg, &t.seeds, &t.bank_sizes)?;
    run.write_json("trends.json", &summary)?;
    run.write_text("trends.csv", &summary.to_csv())?;
    run.write_text("bank_sweep.csv", &summary.bank_sweep_csv())?;
    print!("{}", summary.to_table());
    Ok(true)
}
