//! Three-branch HOI training: spatial branch, real verb-object branch and
//! the composite (affordance transfer) branch.
//!
//! The real and composite branches share one interaction classifier over
//! `verb_feat ++ object_feat`. Composite samples pair verb features from the
//! current HOI batch with external object features; their labels come from
//! [`Taxonomy::compose_label`] and all-zero (invalid) combinations are
//! dropped. The objective is `L_sp + lambda1 * L_hoi + lambda2 * L_atl`
//! (plus an optional auxiliary verb loss).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, AtlError, Result};
use crate::eval::Detection;
use crate::geometry::BBox;
use crate::io;
use crate::nn::{self, GradReport, MlpParams, ParamError};
use crate::rng::{self, Rng};
use crate::synth::{HoiInstance, ObjectInstance};
use crate::taxonomy::{HoiLabel, MultiHot, Taxonomy};

pub const SPATIAL_FULL_RES: usize = 64;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Two-channel binary rasterization of a human / object box pair in the
/// frame of their union box. Stored channel-major: `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMap {
    res: usize,
    data: Vec<u8>,
}

impl SpatialMap {
    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channel(&self, ch: usize) -> &[u8] {
        let n = self.res * self.res;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn channel_sum(&self, ch: usize) -> usize {
        self.channel(ch).iter().map(|&b| b as usize).sum()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64).collect()
    }
}

/// Full-resolution (64 x 64) spatial pattern.
pub fn make_spatial_pattern(human: &BBox, object: &BBox) -> Result<SpatialMap> {
    make_spatial_pattern_res(human, object, SPATIAL_FULL_RES)
}

/// Rasterizes at `res x res`; a pixel is 1 when its centre lies in the box.
pub fn make_spatial_pattern_res(human: &BBox, object: &BBox, res: usize) -> Result<SpatialMap> {
    human.validate()?;
    object.validate()?;
    if res == 0 {
        return Err(AtlError::Config(
            "spatial resolution must be positive".into(),
        ));
    }
    let frame = human.union(object);
    let mut data = vec![0u8; 2 * res * res];
    for (ch, b) in [human, object].into_iter().enumerate() {
        for row in 0..res {
            let y = frame.y1 + (row as f64 + 0.5) / res as f64 * frame.height();
            for col in 0..res {
                let x = frame.x1 + (col as f64 + 0.5) / res as f64 * frame.width();
                if b.contains_point(x, y) {
                    data[ch * res * res + row * res + col] = 1;
                }
            }
        }
    }
    Ok(SpatialMap { res, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Weight of the auxiliary verb head; 0 disables it.
    pub lambda_aux: f64,
    pub lr: f64,
    /// Multiply the learning rate by 0.1 from this iteration on.
    pub lr_decay_step: Option<usize>,
    pub iterations: usize,
    pub hoi_batch: usize,
    /// External object instances per step; also the composite cap.
    pub object_batch: usize,
    pub hidden: usize,
    pub spatial_res: usize,
    pub trace_every: usize,
    /// Stored at checkpoint top level; set from the run's master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 2.0,
            lambda2: 0.5,
            lambda_aux: 0.0,
            lr: nn::DEFAULT_LR,
            lr_decay_step: None,
            iterations: 1000,
            hoi_batch: 16,
            object_batch: 2,
            hidden: nn::DEFAULT_HIDDEN,
            spatial_res: 16,
            trace_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AtlError::Config(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda_aux >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and nonnegative");
        }
        if self.hoi_batch == 0 || self.hidden == 0 || self.spatial_res == 0 || self.trace_every == 0
        {
            return bad("hoi_batch, hidden, spatial_res and trace_every must be positive");
        }
        Ok(())
    }

    /// The same configuration with affordance transfer switched off.
    pub fn baseline(&self) -> Self {
        Self {
            lambda2: 0.0,
            object_batch: 0,
            ..self.clone()
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_decay_step {
            Some(s) if step >= s => self.lr * 0.1,
            _ => self.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiModel {
    pub spatial_res: usize,
    pub feat_dim: usize,
    /// Input: flattened spatial map ++ human feature; output: C.
    pub spatial: MlpParams,
    /// Input: verb feature ++ object feature; output: C. Shared by the
    /// real and composite branches.
    pub interaction: MlpParams,
    /// Optional auxiliary verb head over the verb feature; output: N_v.
    pub verb_aux: Option<MlpParams>,
}

impl HoiModel {
    pub fn init(tax: &Taxonomy, feat_dim: usize, cfg: &TrainConfig) -> Self {
        let sp_in = 2 * cfg.spatial_res * cfg.spatial_res + feat_dim;
        let c = tax.n_hoi();
        Self {
            spatial_res: cfg.spatial_res,
            feat_dim,
            spatial: nn::init_params(
                sp_in,
                cfg.hidden,
                c,
                rng::derive_seed(cfg.seed, "spatial", 0),
            ),
            interaction: nn::init_params(
                2 * feat_dim,
                cfg.hidden,
                c,
                rng::derive_seed(cfg.seed, "interaction", 0),
            ),
            verb_aux: (cfg.lambda_aux > 0.0).then(|| {
                nn::init_params(
                    feat_dim,
                    cfg.hidden,
                    tax.n_verbs(),
                    rng::derive_seed(cfg.seed, "verb-aux", 0),
                )
            }),
        }
    }

    pub fn n_hoi(&self) -> usize {
        self.interaction.outputs()
    }

    pub fn validate(&self, tax: &Taxonomy) -> Result<()> {
        self.spatial.validate()?;
        self.interaction.validate()?;
        check_len(
            "spatial classifier outputs",
            tax.n_hoi(),
            self.spatial.outputs(),
        )?;
        check_len(
            "interaction classifier outputs",
            tax.n_hoi(),
            self.interaction.outputs(),
        )?;
        check_len(
            "spatial classifier inputs",
            2 * self.spatial_res * self.spatial_res + self.feat_dim,
            self.spatial.input_dim(),
        )?;
        check_len(
            "interaction classifier inputs",
            2 * self.feat_dim,
            self.interaction.input_dim(),
        )?;
        if let Some(aux) = &self.verb_aux {
            aux.validate()?;
            check_len("verb head outputs", tax.n_verbs(), aux.outputs())?;
            check_len("verb head inputs", self.feat_dim, aux.input_dim())?;
        }
        Ok(())
    }

    pub fn spatial_input(
        &self,
        human: &BBox,
        object: &BBox,
        human_feat: &[f64],
    ) -> Result<Vec<f64>> {
        check_len("human_feat", self.feat_dim, human_feat.len())?;
        let mut x = make_spatial_pattern_res(human, object, self.spatial_res)?.to_f64();
        x.extend_from_slice(human_feat);
        Ok(x)
    }

    pub fn interaction_input(&self, verb_feat: &[f64], object_feat: &[f64]) -> Result<Vec<f64>> {
        check_len("verb_feat", self.feat_dim, verb_feat.len())?;
        check_len("object_feat", self.feat_dim, object_feat.len())?;
        Ok(concat(verb_feat, object_feat))
    }

    /// `s_hoi`: sigmoid outputs of the interaction classifier.
    pub fn interaction_scores(&self, verb_feat: &[f64], object_feat: &[f64]) -> Result<Vec<f64>> {
        let x = self.interaction_input(verb_feat, object_feat)?;
        Ok(nn::mlp_forward(&self.interaction, &x)?.1)
    }

    /// `s_sp`: sigmoid outputs of the spatial classifier.
    pub fn spatial_scores(
        &self,
        human: &BBox,
        object: &BBox,
        human_feat: &[f64],
    ) -> Result<Vec<f64>> {
        let x = self.spatial_input(human, object, human_feat)?;
        Ok(nn::mlp_forward(&self.spatial, &x)?.1)
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample {
    pub input: Vec<f64>,
    pub label: HoiLabel,
    pub verb_item: usize,
    pub object_item: usize,
}

/// Pairs every verb item with every object item, labels each pair with the
/// composite label, drops all-zero labels, then keeps at most `cap`
/// survivors chosen uniformly without replacement (original order kept).
pub fn compose_batch(
    verb_items: &[(&[f64], &MultiHot)],
    object_items: &[(&[f64], &MultiHot)],
    tax: &Taxonomy,
    cap: usize,
    rng: &mut Rng,
) -> Result<Vec<CompositeSample>> {
    let mut out = Vec::new();
    for (vi, (verb_feat, verb_label)) in verb_items.iter().enumerate() {
        for (oi, (object_feat, object_label)) in object_items.iter().enumerate() {
            let label = tax.compose_label(object_label, verb_label)?;
            if label.is_zero() {
                continue;
            }
            out.push(CompositeSample {
                input: concat(verb_feat, object_feat),
                label,
                verb_item: vi,
                object_item: oi,
            });
        }
    }
    if out.len() > cap {
        let mut keep = index::sample(rng, out.len(), cap).into_vec();
        keep.sort_unstable();
        let mut slots: Vec<Option<CompositeSample>> = out.into_iter().map(Some).collect();
        out = keep
            .into_iter()
            .map(|i| slots[i].take().expect("unique index"))
            .collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub sp: f64,
    pub hoi: f64,
    pub atl: f64,
    pub aux: f64,
    pub total: f64,
}

/// `L_sp + lambda1 * L_hoi + lambda2 * L_atl`.
pub fn total_loss(sp: f64, hoi: f64, atl: f64, cfg: &TrainConfig) -> Result<f64> {
    for (name, v) in [("L_sp", sp), ("L_hoi", hoi), ("L_ATL", atl)] {
        if !v.is_finite() {
            return Err(AtlError::NonFinite(name.into()));
        }
        if v < 0.0 {
            return Err(AtlError::Data(format!("{name} is negative")));
        }
    }
    Ok(sp + cfg.lambda1 * hoi + cfg.lambda2 * atl)
}

/// Fixed inputs for one optimisation step.
#[derive(Debug, Clone, Default)]
pub struct StepBatch {
    pub spatial_inputs: Vec<Vec<f64>>,
    pub interaction_inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub composite_inputs: Vec<Vec<f64>>,
    pub composite_targets: Vec<Vec<f64>>,
    pub verb_inputs: Vec<Vec<f64>>,
    pub verb_targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub spatial: MlpParams,
    pub interaction: MlpParams,
    pub verb_aux: Option<MlpParams>,
}

pub fn step_loss_and_grad(
    model: &HoiModel,
    batch: &StepBatch,
    cfg: &TrainConfig,
) -> Result<(LossParts, ModelGrads)> {
    let (sp, g_sp) = nn::batch_gradient(&model.spatial, &batch.spatial_inputs, &batch.targets)?;
    let (hoi, mut g_int) = nn::batch_gradient(
        &model.interaction,
        &batch.interaction_inputs,
        &batch.targets,
    )?;
    g_int.scale(cfg.lambda1);
    let atl = if batch.composite_inputs.is_empty() {
        0.0
    } else {
        let (atl, g_atl) = nn::batch_gradient(
            &model.interaction,
            &batch.composite_inputs,
            &batch.composite_targets,
        )?;
        g_int.axpy(cfg.lambda2, &g_atl);
        atl
    };
    let (aux, g_aux) = match &model.verb_aux {
        Some(head) if !batch.verb_inputs.is_empty() => {
            let (l, mut g) = nn::batch_gradient(head, &batch.verb_inputs, &batch.verb_targets)?;
            g.scale(cfg.lambda_aux);
            (l, Some(g))
        }
        _ => (0.0, None),
    };
    let total = total_loss(sp, hoi, atl, cfg)? + cfg.lambda_aux * aux;
    Ok((
        LossParts {
            sp,
            hoi,
            atl,
            aux,
            total,
        },
        ModelGrads {
            spatial: g_sp,
            interaction: g_int,
            verb_aux: g_aux,
        },
    ))
}

/// Forward-only twin of [`step_loss_and_grad`].
pub fn step_loss(model: &HoiModel, batch: &StepBatch, cfg: &TrainConfig) -> Result<LossParts> {
    let sp = nn::batch_loss(&model.spatial, &batch.spatial_inputs, &batch.targets)?;
    let hoi = nn::batch_loss(
        &model.interaction,
        &batch.interaction_inputs,
        &batch.targets,
    )?;
    let atl = nn::batch_loss(
        &model.interaction,
        &batch.composite_inputs,
        &batch.composite_targets,
    )?;
    let aux = match &model.verb_aux {
        Some(head) => nn::batch_loss(head, &batch.verb_inputs, &batch.verb_targets)?,
        None => 0.0,
    };
    let total = total_loss(sp, hoi, atl, cfg)? + cfg.lambda_aux * aux;
    Ok(LossParts {
        sp,
        hoi,
        atl,
        aux,
        total,
    })
}

fn head_mut<'a>(m: &'a mut HoiModel, head: &str) -> &'a mut MlpParams {
    match head {
        "spatial" => &mut m.spatial,
        "interaction" => &mut m.interaction,
        _ => m.verb_aux.as_mut().expect("verb head present"),
    }
}

/// Central finite-difference check of [`step_loss_and_grad`] over every
/// parameter of every head, on the total loss.
pub fn step_grad_check(
    model: &HoiModel,
    batch: &StepBatch,
    cfg: &TrainConfig,
) -> Result<GradReport> {
    let (_, grads) = step_loss_and_grad(model, batch, cfg)?;
    type Head<'a> = (&'a str, Option<&'a MlpParams>, Vec<&'a Vec<f64>>);
    let heads: [Head; 3] = [
        (
            "spatial",
            Some(&grads.spatial),
            batch.spatial_inputs.iter().collect(),
        ),
        (
            "interaction",
            Some(&grads.interaction),
            batch
                .interaction_inputs
                .iter()
                .chain(&batch.composite_inputs)
                .collect(),
        ),
        (
            "verb_aux",
            grads.verb_aux.as_ref(),
            batch.verb_inputs.iter().collect(),
        ),
    ];
    let mut probe = model.clone();
    let mut reports = Vec::new();
    for (head, grad, inputs) in heads {
        let Some(grad) = grad else { continue };
        let d_in = head_mut(&mut probe, head).input_dim();
        let mut near_kink = vec![false; grad.hidden()];
        for x in &inputs {
            let x_max = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (j, p) in nn::forward_cache(head_mut(&mut probe, head), x)?
                .pre
                .iter()
                .enumerate()
            {
                near_kink[j] |= p.abs() <= 2.0 * nn::FD_STEP * x_max;
            }
        }
        let mut per_param = Vec::new();
        for (slot, (name, g)) in grad.slices().into_iter().enumerate() {
            let mut worst = 0.0f64;
            let mut checked = 0;
            let mut kinks = 0;
            for (i, &analytic) in g.iter().enumerate() {
                let unit = match slot {
                    0 => Some(i / d_in),
                    1 => Some(i),
                    _ => None,
                };
                if unit.is_some_and(|j| near_kink[j]) {
                    kinks += 1;
                    continue;
                }
                let orig = head_mut(&mut probe, head).slices()[slot].1[i];
                head_mut(&mut probe, head).slices_mut()[slot].1[i] = orig + nn::FD_STEP;
                let up = step_loss(&probe, batch, cfg)?.total;
                head_mut(&mut probe, head).slices_mut()[slot].1[i] = orig - nn::FD_STEP;
                let down = step_loss(&probe, batch, cfg)?.total;
                head_mut(&mut probe, head).slices_mut()[slot].1[i] = orig;
                let numeric = (up - down) / (2.0 * nn::FD_STEP);
                worst = worst.max(nn::relative_error(analytic, numeric));
                checked += 1;
            }
            per_param.push(ParamError {
                name: format!("{head}.{name}"),
                max_rel_error: worst,
                checked,
                kinks_skipped: kinks,
            });
        }
        reports.push(GradReport {
            max_rel_error: per_param
                .iter()
                .map(|p| p.max_rel_error)
                .fold(0.0, f64::max),
            per_param,
        });
    }
    Ok(GradReport::merge(&reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossParts,
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,L_sp,L_hoi,L_ATL,L_total\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{:.9},{:.9},{:.9},{:.9}",
            r.step, r.loss.sp, r.loss.hoi, r.loss.atl, r.loss.total
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HoiModel,
    pub trace: Vec<TraceRow>,
    /// Steps on which composite samples were formed and scored.
    pub composite_steps: usize,
    pub composite_samples: usize,
}

/// Joint SGD training of both classifiers.
///
/// With `lambda2 == 0` or `object_batch == 0` the composite branch is never
/// built, which is the no-transfer baseline.
pub fn train(
    train_set: &[HoiInstance],
    external: &[ObjectInstance],
    tax: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| AtlError::Data("training set is empty".into()))?;
    let feat_dim = first.verb_feat.len();
    let mut model = HoiModel::init(tax, feat_dim, cfg);

    let spatial_inputs = train_set
        .iter()
        .map(|t| model.spatial_input(&t.human_box, &t.object_box, &t.human_feat))
        .collect::<Result<Vec<_>>>()?;
    let interaction_inputs = train_set
        .iter()
        .map(|t| model.interaction_input(&t.verb_feat, &t.object_feat))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = train_set.iter().map(|t| t.hoi_label.to_f64()).collect();
    let verb_labels = train_set
        .iter()
        .map(|t| tax.decouple_verb(&t.hoi_label))
        .collect::<Result<Vec<_>>>()?;
    let object_labels = external
        .iter()
        .map(|e| MultiHot::one_hot(tax.n_objects(), e.object_label))
        .collect::<Result<Vec<_>>>()?;
    for e in external {
        check_len("external object_feat", feat_dim, e.object_feat.len())?;
    }

    let use_transfer = cfg.lambda2 > 0.0 && cfg.object_batch > 0 && !external.is_empty();
    let mut rng = rng::stream(cfg.seed, rng::STREAM_BATCH);
    let mut trace = Vec::new();
    let mut composite_steps = 0;
    let mut composite_samples = 0;

    for step in 0..cfg.iterations {
        let picks: Vec<usize> = (0..cfg.hoi_batch)
            .map(|_| rng.random_range(0..train_set.len()))
            .collect();
        let mut batch = StepBatch {
            spatial_inputs: picks.iter().map(|&i| spatial_inputs[i].clone()).collect(),
            interaction_inputs: picks
                .iter()
                .map(|&i| interaction_inputs[i].clone())
                .collect(),
            targets: picks.iter().map(|&i| targets[i].clone()).collect(),
            ..StepBatch::default()
        };
        if model.verb_aux.is_some() {
            batch.verb_inputs = picks
                .iter()
                .map(|&i| train_set[i].verb_feat.clone())
                .collect();
            batch.verb_targets = picks.iter().map(|&i| verb_labels[i].to_f64()).collect();
        }
        if use_transfer {
            let objects: Vec<usize> = (0..cfg.object_batch)
                .map(|_| rng.random_range(0..external.len()))
                .collect();
            let verb_items: Vec<(&[f64], &MultiHot)> = picks
                .iter()
                .map(|&i| (train_set[i].verb_feat.as_slice(), &verb_labels[i]))
                .collect();
            let object_items: Vec<(&[f64], &MultiHot)> = objects
                .iter()
                .map(|&j| (external[j].object_feat.as_slice(), &object_labels[j]))
                .collect();
            let composites =
                compose_batch(&verb_items, &object_items, tax, cfg.object_batch, &mut rng)?;
            composite_steps += 1;
            composite_samples += composites.len();
            for c in composites {
                batch.composite_targets.push(c.label.to_f64());
                batch.composite_inputs.push(c.input);
            }
        }

        let (loss, grads) = step_loss_and_grad(&model, &batch, cfg).map_err(|e| match e {
            AtlError::NonFinite(what) => AtlError::Divergence {
                step,
                detail: format!("non-finite {what}"),
            },
            other => other,
        })?;
        if !loss.total.is_finite() {
            return Err(AtlError::Divergence {
                step,
                detail: format!("loss {:?}", loss),
            });
        }
        let lr = cfg.lr_at(step);
        let diverged = |e: AtlError| AtlError::Divergence {
            step,
            detail: e.to_string(),
        };
        nn::sgd_step(&mut model.spatial, &grads.spatial, lr).map_err(diverged)?;
        nn::sgd_step(&mut model.interaction, &grads.interaction, lr).map_err(diverged)?;
        if let (Some(head), Some(g)) = (model.verb_aux.as_mut(), grads.verb_aux.as_ref()) {
            nn::sgd_step(head, g, lr).map_err(diverged)?;
        }
        if step % cfg.trace_every == 0 || step + 1 == cfg.iterations {
            trace.push(TraceRow { step, loss });
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        composite_steps,
        composite_samples,
    })
}

/// `S^c = s_h * s_o * s_hoi^c * s_sp^c` for every category `c`.
#[allow(clippy::too_many_arguments)]
pub fn predict_pair(
    human_feat: &[f64],
    verb_feat: &[f64],
    object_feat: &[f64],
    human_box: &BBox,
    object_box: &BBox,
    s_h: f64,
    s_o: f64,
    model: &HoiModel,
    tax: &Taxonomy,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s_h) || !(0.0..=1.0).contains(&s_o) {
        return Err(AtlError::Data("detection scores must lie in [0, 1]".into()));
    }
    check_len("model outputs", tax.n_hoi(), model.n_hoi())?;
    let hoi = model.interaction_scores(verb_feat, object_feat)?;
    let sp = model.spatial_scores(human_box, object_box, human_feat)?;
    Ok(hoi
        .iter()
        .zip(&sp)
        .map(|(a, b)| s_h * s_o * a * b)
        .collect())
}

/// One detection per (instance, category), using the instance boxes.
pub fn predict_instances(
    model: &HoiModel,
    tax: &Taxonomy,
    instances: &[HoiInstance],
    s_h: f64,
    s_o: f64,
) -> Result<Vec<Detection>> {
    let mut out = Vec::with_capacity(instances.len() * tax.n_hoi());
    for inst in instances {
        let scores = predict_pair(
            &inst.human_feat,
            &inst.verb_feat,
            &inst.object_feat,
            &inst.human_box,
            &inst.object_box,
            s_h,
            s_o,
            model,
            tax,
        )?;
        out.extend(
            scores
                .into_iter()
                .enumerate()
                .map(|(category, score)| Detection {
                    image_id: inst.image_id,
                    human_box: inst.human_box,
                    object_box: inst.object_box,
                    category,
                    score,
                }),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub config: TrainConfig,
    pub model: HoiModel,
}

impl Checkpoint {
    pub fn new(model: HoiModel, config: &TrainConfig) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            seed: config.seed,
            config: config.clone(),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path, tax: &Taxonomy) -> Result<Self> {
        let mut ck: Checkpoint = io::read_json(path)?;
        ck.config.seed = ck.seed;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(AtlError::Data(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                ck.format_version
            )));
        }
        ck.model.validate(tax)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_map_full_frame() {
        let b = BBox::new(0.1, 0.2, 0.6, 0.9);
        let m = make_spatial_pattern(&b, &b).unwrap();
        assert_eq!(m.channel_sum(0), 4096);
        assert_eq!(m.channel_sum(1), 4096);
    }

    #[test]
    fn spatial_map_halves() {
        let h = BBox::new(0.0, 0.0, 0.5, 1.0);
        let o = BBox::new(0.5, 0.0, 1.0, 1.0);
        let m = make_spatial_pattern(&h, &o).unwrap();
        assert!((m.channel_sum(0) as i64 - 2048).abs() <= 64);
        assert!((m.channel_sum(1) as i64 - 2048).abs() <= 64);
    }

    #[test]
    fn spatial_map_rejects_degenerate_box() {
        let ok = BBox::new(0.0, 0.0, 1.0, 1.0);
        let bad = BBox::new(0.5, 0.5, 0.5, 0.7);
        assert!(matches!(
            make_spatial_pattern(&ok, &bad),
            Err(AtlError::DegenerateBox(_))
        ));
    }

    #[test]
    fn total_loss_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(total_loss(1.0, 2.0, 0.5, &cfg).unwrap(), 5.25);
        let zero = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..cfg.clone()
        };
        assert_eq!(total_loss(0.7, 2.0, 0.5, &zero).unwrap(), 0.7);
        let a = total_loss(0.3, 0.4, 0.0, &cfg).unwrap();
        let b = total_loss(
            0.3,
            0.4,
            0.0,
            &TrainConfig {
                lambda2: 7.0,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(total_loss(f64::NAN, 0.0, 0.0, &cfg).is_err());
    }

    fn tiny_tax() -> Taxonomy {
        // verbs ride=0, hold=1, eat=2; objects horse=0, apple=1
        Taxonomy::from_pairs(3, 2, vec![(0, 0), (1, 0), (1, 1), (2, 1)]).unwrap()
    }

    #[test]
    fn compose_batch_drops_invalid_and_caps() {
        let tax = tiny_tax();
        let mut r = rng::stream(0, "t");
        let f = [0.0, 1.0];
        let ride = MultiHot::one_hot(3, 0).unwrap();
        let eat = MultiHot::one_hot(3, 2).unwrap();
        let hold = MultiHot::one_hot(3, 1).unwrap();
        let horse = MultiHot::one_hot(2, 0).unwrap();
        let apple = MultiHot::one_hot(2, 1).unwrap();

        let out = compose_batch(&[(&f, &ride)], &[(&f, &apple)], &tax, 5, &mut r).unwrap();
        assert!(out.is_empty());

        let out = compose_batch(
            &[(&f, &hold), (&f, &hold), (&f, &hold)],
            &[(&f, &horse), (&f, &apple)],
            &tax,
            2,
            &mut r,
        )
        .unwrap();
        assert_eq!(out.len(), 2);

        let out = compose_batch(
            &[(&f, &ride), (&f, &eat), (&f, &hold)],
            &[(&f, &horse), (&f, &apple)],
            &tax,
            10,
            &mut r,
        )
        .unwrap();
        // ride-horse, hold-horse, eat-apple, hold-apple
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|c| !c.label.is_zero()));

        assert!(compose_batch(&[], &[(&f, &horse)], &tax, 3, &mut r)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn predict_pair_factors() {
        let tax = Taxonomy::from_pairs(1, 1, vec![(0, 0)]).unwrap();
        let cfg = TrainConfig {
            hidden: 2,
            spatial_res: 2,
            ..TrainConfig::default()
        };
        let mut model = HoiModel::init(&tax, 2, &cfg);
        let b = BBox::new(0.1, 0.1, 0.5, 0.5);
        let f = [0.3, -0.2];
        // zero nets give 0.5 * 0.5
        model.spatial = MlpParams::zeros(model.spatial.input_dim(), 2, 1);
        model.interaction = MlpParams::zeros(4, 2, 1);
        let s = predict_pair(&f, &f, &f, &b, &b, 1.0, 1.0, &model, &tax).unwrap();
        assert_eq!(s, vec![0.25]);
        let s = predict_pair(&f, &f, &f, &b, &b, 0.0, 1.0, &model, &tax).unwrap();
        assert_eq!(s, vec![0.0]);
        // hoi 0.8, sp 0.4: logits ln(4) and ln(2/3)
        model.interaction.b2[0] = 4.0f64.ln();
        model.spatial.b2[0] = (0.4f64 / 0.6).ln();
        let s = predict_pair(&f, &f, &f, &b, &b, 0.5, 0.5, &model, &tax).unwrap();
        assert!((s[0] - 0.08).abs() < 1e-12);
        // saturated factors give 1
        model.interaction.b2[0] = 800.0;
        model.spatial.b2[0] = 800.0;
        let s = predict_pair(&f, &f, &f, &b, &b, 1.0, 1.0, &model, &tax).unwrap();
        assert_eq!(s, vec![1.0]);
        assert!(predict_pair(&f, &f, &f, &b, &b, 1.5, 1.0, &model, &tax).is_err());
        assert!(predict_pair(&f, &f, &[0.0], &b, &b, 1.0, 1.0, &model, &tax).is_err());
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig {
            lr: 1.0,
            lr_decay_step: Some(5),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(4), 1.0);
        assert!((cfg.lr_at(5) - 0.1).abs() < 1e-15);
    }
}
