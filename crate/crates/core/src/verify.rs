//! Gradient verification runs used by the `gradcheck` command.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::SplitSpec;
use crate::nn::{self, GradReport};
use crate::pipeline::{self, HoiModel, StepBatch, TrainConfig};
use crate::rng;
use crate::synth::{self, WorldConfig};
use crate::taxonomy::MultiHot;

pub const MLP_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const MAX_DIM: usize = 32;

/// Random single-classifier checks with every dimension in `1..=MAX_DIM`.
pub fn mlp_sweep(n_configs: usize, seed: u64) -> Result<GradReport> {
    let mut reports = Vec::with_capacity(n_configs);
    for k in 0..n_configs {
        let mut r = rng::indexed_stream(seed, "gradcheck", k as u64);
        let d_in = r.random_range(1..=MAX_DIM);
        let hidden = r.random_range(1..=MAX_DIM);
        let outputs = r.random_range(1..=MAX_DIM);
        let mut params = nn::init_params(d_in, hidden, outputs, r.random());
        for b in params.b1.iter_mut().chain(params.b2.iter_mut()) {
            *b = r.random_range(-0.1..0.1);
        }
        let x: Vec<f64> = (0..d_in).map(|_| r.sample(StandardNormal)).collect();
        let target: Vec<f64> = (0..outputs)
            .map(|_| if r.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        reports.push(nn::grad_check(&params, &x, &target)?);
    }
    Ok(GradReport::merge(&reports))
}

/// Miniature pipeline: feature dim 4, hidden 8, 6 HOI categories.
pub fn miniature_config() -> (WorldConfig, TrainConfig) {
    let world = WorldConfig {
        n_verbs: 3,
        n_objects: 3,
        n_pairs: 6,
        feat_dim: 4,
        nominal_train: 40,
        ..WorldConfig::default()
    };
    let train = TrainConfig {
        hidden: 8,
        spatial_res: 3,
        hoi_batch: 4,
        object_batch: 2,
        lambda_aux: 0.3,
        ..TrainConfig::default()
    };
    (world, train)
}

/// Total-loss check of all heads on one batch with real, composite and verb branches.
pub fn miniature_pipeline(seed: u64) -> Result<GradReport> {
    let (mut world_cfg, mut cfg) = miniature_config();
    world_cfg.seed = rng::derive_seed(seed, rng::STREAM_DATA, 0);
    cfg.seed = rng::derive_seed(seed, rng::STREAM_INIT, 0);
    let (mut tax, world) = synth::gen_world(&world_cfg)?;
    let split = SplitSpec::none(&tax);
    let data = synth::gen_dataset(
        &world,
        &mut tax,
        &split,
        8,
        0,
        4,
        rng::derive_seed(seed, rng::STREAM_DATA, 1),
    )?;
    let model = HoiModel::init(&tax, world_cfg.feat_dim, &cfg);

    let picks = &data.train[..cfg.hoi_batch];
    let verb_labels = picks
        .iter()
        .map(|t| tax.decouple_verb(&t.hoi_label))
        .collect::<Result<Vec<_>>>()?;
    let object_labels = data
        .external
        .iter()
        .map(|e| MultiHot::one_hot(tax.n_objects(), e.object_label))
        .collect::<Result<Vec<_>>>()?;
    let verb_items: Vec<(&[f64], &MultiHot)> = picks
        .iter()
        .zip(&verb_labels)
        .map(|(t, l)| (t.verb_feat.as_slice(), l))
        .collect();
    let object_items: Vec<(&[f64], &MultiHot)> = data
        .external
        .iter()
        .zip(&object_labels)
        .map(|(e, l)| (e.object_feat.as_slice(), l))
        .collect();
    let composites = pipeline::compose_batch(
        &verb_items,
        &object_items,
        &tax,
        usize::MAX,
        &mut rng::stream(seed, rng::STREAM_BATCH),
    )?;

    let batch = StepBatch {
        spatial_inputs: picks
            .iter()
            .map(|t| model.spatial_input(&t.human_box, &t.object_box, &t.human_feat))
            .collect::<Result<_>>()?,
        interaction_inputs: picks
            .iter()
            .map(|t| model.interaction_input(&t.verb_feat, &t.object_feat))
            .collect::<Result<_>>()?,
        targets: picks.iter().map(|t| t.hoi_label.to_f64()).collect(),
        composite_targets: composites.iter().map(|c| c.label.to_f64()).collect(),
        composite_inputs: composites.into_iter().map(|c| c.input).collect(),
        verb_inputs: picks.iter().map(|t| t.verb_feat.clone()).collect(),
        verb_targets: verb_labels.iter().map(|l| l.to_f64()).collect(),
    };
    pipeline::step_grad_check(&model, &batch, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub mlp_configs: usize,
    pub mlp_tolerance: f64,
    pub mlp: GradReport,
    pub pipeline_tolerance: f64,
    pub pipeline: GradReport,
    pub passed: bool,
}

pub fn run(n_configs: usize, seed: u64) -> Result<GradCheckSummary> {
    let mlp = mlp_sweep(n_configs, seed)?;
    let pipeline = miniature_pipeline(seed)?;
    let passed = mlp.max_rel_error < MLP_TOLERANCE && pipeline.max_rel_error < PIPELINE_TOLERANCE;
    Ok(GradCheckSummary {
        mlp_configs: n_configs,
        mlp_tolerance: MLP_TOLERANCE,
        mlp,
        pipeline_tolerance: PIPELINE_TOLERANCE,
        pipeline,
        passed,
    })
}
