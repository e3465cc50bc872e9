//! Joint progressive optimization of the neural texture field.
//!
//! Each epoch belongs to one progressive level (`level = ⌊epoch·N/epochs⌋`)
//! and runs `views_per_level[level]` iterations of one view each: sample a
//! novel view, rasterize, render the content view `c`, the labels and the
//! stylized view `z`, match a style patch to `c`, assemble the weighted
//! losses, backpropagate through the backbone and the renderer, and take one
//! Adam step.
//!
//! All randomness derives from `(seed, epoch)` or `(seed, iteration)`, so a
//! run resumed from an epoch checkpoint continues bit-identically.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::field::{load_checkpoint, save_checkpoint, Adam, AdamConfig, NeuralTextureField};
use crate::image::{fit_long_side, Image, LabelMap};
use crate::losses::{
    clip_term, content_term, edited_view_penalty_with_grad, empty_grads, global_style_term, local_style_term,
    total_loss, ClassStyleTarget, GlobalStyleTarget, LossBreakdown, LossTerms, LossWeights, PhotorealTerm, TextTargets,
};
use crate::planner::{sample_novel_view, schedule_fov, ProgressiveSchedule, ViewPlan};
use crate::render::{rasterize, render_content, render_from_field, render_semantics, RenderBuffers};
use crate::scene::{SemanticClassSet, TexturedScene, SENTINEL};
use crate::sky::sample_direction;
use crate::style::{
    build_patch_bank_with_counts, describe, level_scale_counts, match_patch, PatchBank, StylePatch, StyleReference,
    DEFAULT_PER_SCALE, DEFAULT_SCALES, MIN_PATCH_SIDE,
};

pub const MIN_RESOLUTION: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Photorealistic,
    Artistic,
    EditPropagation,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "photorealistic" => Ok(Mode::Photorealistic),
            "artistic" => Ok(Mode::Artistic),
            "edit_propagation" | "edit-propagation" => Ok(Mode::EditPropagation),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

/// Default weights of a mode. Artistic runs drop the photorealism term and
/// raise both style weights; edit propagation keeps the photorealistic
/// weights and adds the edited-view penalty.
pub fn select_mode_weights(mode: Mode) -> LossWeights {
    match mode {
        Mode::Photorealistic | Mode::EditPropagation => LossWeights::default(),
        Mode::Artistic => LossWeights {
            photoreal: 0.0,
            global_style: 10.0,
            local: 1.0,
            ..LossWeights::default()
        },
    }
}

/// A user-edited rendering and the camera it was rendered from.
#[derive(Clone, Debug)]
pub struct EditedView {
    pub camera: CameraPose,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StylizationConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub schedule: ProgressiveSchedule,
    /// Side of the square training views.
    pub resolution: usize,
    /// Overrides the mode's default weights.
    pub weights: Option<LossWeights>,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (the final epoch always).
    pub checkpoint_every: usize,
    pub optimizer: AdamConfig,
    pub patch_scales: Vec<usize>,
    pub patches_per_scale: usize,
    /// Long side of style patches when their statistics are computed.
    pub style_working_side: usize,
    /// Long side at which the matting Laplacian is built.
    pub photoreal_working_side: usize,
    pub matting_eps: f64,
    pub use_patch_matching: bool,
    /// Text losses see the view composited over the sky panorama.
    pub clip_sky_composite: bool,
}

impl Default for StylizationConfig {
    fn default() -> Self {
        StylizationConfig {
            mode: Mode::Photorealistic,
            epochs: 20,
            schedule: ProgressiveSchedule::default(),
            resolution: 512,
            weights: None,
            seed: 0,
            checkpoint_every: 1,
            optimizer: AdamConfig::default(),
            patch_scales: DEFAULT_SCALES.to_vec(),
            patches_per_scale: DEFAULT_PER_SCALE,
            style_working_side: 256,
            photoreal_working_side: crate::losses::matting::WORKING_RESOLUTION,
            matting_eps: crate::losses::matting::DEFAULT_EPS,
            use_patch_matching: true,
            clip_sky_composite: true,
        }
    }
}

impl StylizationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.schedule.validate()?;
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.resolution < MIN_RESOLUTION {
            return bad(format!("resolution must be ≥ {MIN_RESOLUTION}"));
        }
        if self.style_working_side < MIN_RESOLUTION || self.photoreal_working_side < 3 {
            return bad("working resolutions too small".into());
        }
        if !(self.matting_eps > 0.0) {
            return bad("matting eps must be positive".into());
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> LossWeights {
        self.weights.clone().unwrap_or_else(|| select_mode_weights(self.mode))
    }

    /// Progressive level of `epoch`.
    pub fn level(&self, epoch: usize) -> usize {
        (epoch * self.schedule.levels / self.epochs).min(self.schedule.levels - 1)
    }

    pub fn views_in_epoch(&self, epoch: usize) -> usize {
        self.schedule.views_per_level[self.level(epoch)]
    }

    /// Global index of the first iteration of `epoch`.
    pub fn iteration_offset(&self, epoch: usize) -> u64 {
        (0..epoch).map(|e| self.views_in_epoch(e) as u64).sum()
    }
}

pub struct StylizationInputs<'a> {
    pub scene: &'a TexturedScene,
    pub style: &'a StyleReference,
    pub plan: &'a ViewPlan,
    pub fx: &'a FeatureExtractor,
    pub embedding: &'a dyn EmbeddingModel,
    pub classes: &'a SemanticClassSet,
    pub sky: Option<&'a Image>,
    pub edited: Option<&'a EditedView>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Receives `losses.jsonl`, `checkpoints/` and `report.json`.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many epochs are complete.
    pub stop_after: Option<usize>,
}

/// One optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub level: usize,
    pub iteration: u64,
    pub fov_deg: f64,
    pub patch: usize,
    pub coverage: f64,
    pub no_reference: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub level: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub skipped_views: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizationReport {
    pub mode: Mode,
    pub start_epoch: usize,
    /// Epochs completed when the run returned.
    pub end_epoch: usize,
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Views skipped because the camera was inside geometry or saw nothing.
    pub skipped_views: usize,
    /// Content classes (summed over steps) without any style reference.
    pub no_reference: usize,
    /// Background-is-zero checks performed on training images.
    pub mask_audits: usize,
    pub checkpoints: Vec<PathBuf>,
    pub elapsed_seconds: f64,
}

impl StylizationReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss.total).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    next_epoch: usize,
    seed: u64,
    epochs: usize,
    mode: Mode,
}

/// Style statistics of one patch at the working resolution.
struct PatchTargets {
    global: GlobalStyleTarget,
    class: ClassStyleTarget,
}

fn patch_targets(
    image: &Image,
    labels: &LabelMap,
    side: usize,
    fx: &FeatureExtractor,
    classes: &SemanticClassSet,
) -> Result<PatchTargets> {
    let (w, h) = fit_long_side(image.width(), image.height(), side, true);
    let img = image.resize(w, h);
    let lab = labels.resize_nearest(w, h);
    let depth = fx.style_layers.iter().copied().max().unwrap_or(1);
    let maps = fx.extract_to(&img, depth);
    let mut class = ClassStyleTarget::from_maps(&maps, &lab, &fx.style_layers, classes);
    // presence is decided at full resolution
    class.present = crate::losses::presence(labels);
    Ok(PatchTargets {
        global: GlobalStyleTarget::from_maps(&maps, &fx.style_layers),
        class,
    })
}

/// Bank holding only the full style image.
fn full_only_bank(style: &StyleReference, fx: &FeatureExtractor) -> Result<PatchBank> {
    let (w, h) = style.image.dims();
    Ok(PatchBank {
        patches: vec![StylePatch {
            rect: (0, 0, w, h),
            image: style.image.clone(),
            labels: style.labels.clone(),
            scale: w.max(h),
            descriptor: describe(&style.image, fx)?,
        }],
    })
}

fn epoch_bank(
    style: &StyleReference,
    cfg: &StylizationConfig,
    fx: &FeatureExtractor,
    epoch: usize,
) -> Result<PatchBank> {
    let long = style.image.width().max(style.image.height());
    let scales: Vec<usize> = cfg
        .patch_scales
        .iter()
        .copied()
        .filter(|&s| (MIN_PATCH_SIDE..=long).contains(&s))
        .collect();
    if !cfg.use_patch_matching || scales.is_empty() || cfg.patches_per_scale == 0 {
        return full_only_bank(style, fx);
    }
    let level = cfg.level(epoch);
    let counts = level_scale_counts(&scales, cfg.patches_per_scale, level, cfg.schedule.levels);
    build_patch_bank_with_counts(style, &scales, &counts, fx, cfg.seed, epoch as u64)
}

/// Fills background pixels with the sky seen along each pixel ray.
pub fn composite_sky(z: &Image, buffers: &RenderBuffers, camera: &CameraPose, sky: &Image) -> Image {
    let mut out = z.clone();
    for y in 0..buffers.height {
        for x in 0..buffers.width {
            let i = y * buffers.width + x;
            if !buffers.fg_mask[i] {
                out.set_rgb(
                    i,
                    sample_direction(sky, camera.pixel_ray(x as f64 + 0.5, y as f64 + 0.5)),
                );
            }
        }
    }
    out
}

/// Rendered labels with unlabeled foreground treated as building.
fn view_labels(buffers: &RenderBuffers, scene: &TexturedScene) -> LabelMap {
    let mut labels = render_semantics(buffers, &scene.semantics);
    for (l, &fg) in labels.data_mut().iter_mut().zip(&buffers.fg_mask) {
        if fg && *l == SENTINEL {
            *l = SemanticClassSet::BUILDING;
        }
    }
    labels
}

fn audit_background(img: &Image, buffers: &RenderBuffers, what: &str) -> Result<()> {
    let hw = img.pixel_count();
    for c in 0..img.channels() {
        let p = img.plane(c);
        if (0..hw).any(|i| !buffers.fg_mask[i] && p[i] != 0.0) {
            return Err(Error::InvalidArgument(format!("{what} has non-zero background")));
        }
    }
    Ok(())
}

struct EditedTarget {
    buffers: RenderBuffers,
    image: Image,
}

fn prepare_edited(view: &EditedView, scene: &TexturedScene) -> Result<EditedTarget> {
    view.camera.validate()?;
    let (w, h) = view.camera.resolution;
    if view.image.dims() != (w, h) || view.image.channels() != 3 {
        return Err(Error::DimensionMismatch {
            what: "edited image",
            found: view.image.dims(),
            expected: (w, h),
        });
    }
    let buffers = rasterize(&scene.mesh, &view.camera)?;
    let mut image = view.image.clone();
    image.mask_in_place(&buffers.fg_mask);
    Ok(EditedTarget { buffers, image })
}

struct LossSink {
    writer: Option<BufWriter<File>>,
}

impl LossSink {
    /// Opens `losses.jsonl`, keeping only records of epochs before `start`.
    fn open(out_dir: Option<&Path>, start: usize) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(LossSink { writer: None });
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("losses.jsonl");
        let mut kept = Vec::new();
        if start > 0 && path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                let rec: IterationRecord = serde_json::from_str(&line)?;
                if rec.epoch < start {
                    kept.push(line);
                }
            }
        }
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        for line in kept {
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(LossSink { writer: Some(w) })
    }

    fn push(&mut self, rec: &IterationRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io("losses.jsonl", e))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.flush().map_err(|e| Error::io("losses.jsonl", e))?;
        }
        Ok(())
    }
}

/// Optimizes `field` towards the style and returns the run report.
pub fn run_stylization(
    inputs: &StylizationInputs<'_>,
    field: &mut NeuralTextureField,
    cfg: &StylizationConfig,
    opts: &RunOptions,
) -> Result<StylizationReport> {
    cfg.validate()?;
    inputs.plan.validate()?;
    let started = Instant::now();
    let weights = cfg.weights();
    let edited = match (cfg.mode, inputs.edited) {
        (Mode::EditPropagation, Some(v)) => Some(prepare_edited(v, inputs.scene)?),
        (Mode::EditPropagation, None) => {
            return Err(Error::InvalidArgument("edit propagation needs an edited view".into()))
        }
        _ => None,
    };
    // in edit mode the edited image is the style reference
    let edit_style = match (&edited, inputs.edited) {
        (Some(e), Some(v)) => Some(StyleReference::new(
            v.image.clone(),
            view_labels(&e.buffers, inputs.scene),
            &inputs.style.source_text,
            &inputs.style.target_text,
        )?),
        _ => None,
    };
    let style = edit_style.as_ref().unwrap_or(inputs.style);

    let mut adam = Adam::new(cfg.optimizer.clone(), field);
    let mut start_epoch = 0;
    if let Some(path) = &opts.resume {
        let ck = load_checkpoint(path)?;
        let meta: CheckpointMeta =
            serde_json::from_value(ck.meta).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.seed != cfg.seed || meta.epochs != cfg.epochs || meta.mode != cfg.mode {
            return Err(Error::Checkpoint(
                "checkpoint was written by a run with a different configuration".into(),
            ));
        }
        *field = ck.field;
        adam = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        start_epoch = meta.next_epoch;
    }
    let end_epoch = opts
        .stop_after
        .map_or(cfg.epochs, |s| s.min(cfg.epochs))
        .max(start_epoch);

    let fx = inputs.fx;
    let depth = fx
        .content_layers
        .iter()
        .chain(&fx.style_layers)
        .copied()
        .max()
        .unwrap_or(1);
    let content_depth = fx.content_layers.iter().copied().max().unwrap_or(1);
    let full_class = patch_targets(&style.image, &style.labels, cfg.style_working_side, fx, inputs.classes)?.class;
    let text = TextTargets::new(inputs.embedding, &inputs.style.source_text, &inputs.style.target_text)?;
    let ckpt_dir = opts.out_dir.as_ref().map(|d| d.join("checkpoints"));
    let mut sink = LossSink::open(opts.out_dir.as_deref(), start_epoch)?;

    let mut report = StylizationReport {
        mode: cfg.mode,
        start_epoch,
        end_epoch,
        iterations: Vec::new(),
        epochs: Vec::new(),
        skipped_views: 0,
        no_reference: 0,
        mask_audits: 0,
        checkpoints: Vec::new(),
        elapsed_seconds: 0.0,
    };
    let mut grad = field.zero_gradient();

    for epoch in start_epoch..end_epoch {
        let level = cfg.level(epoch);
        let fov = schedule_fov(level, &cfg.schedule)?;
        let bank = epoch_bank(style, cfg, fx, epoch)?;
        let mut targets: HashMap<usize, PatchTargets> = HashMap::new();
        let w = weights.at_epoch(epoch);
        let offset = cfg.iteration_offset(epoch);
        let mut epoch_losses = Vec::new();
        let mut epoch_skipped = 0;

        for k in 0..cfg.views_in_epoch(epoch) {
            let iteration = offset + k as u64;
            let (mut pose, _) = sample_novel_view(inputs.plan, level, &cfg.schedule, cfg.seed, iteration)?;
            pose.resolution = (cfg.resolution, cfg.resolution);
            let buffers = rasterize(&inputs.scene.mesh, &pose)?;
            if buffers.inside_geometry || !buffers.fg_mask.iter().any(|&m| m) {
                epoch_skipped += 1;
                continue;
            }
            let c = render_content(&buffers, &inputs.scene.texture);
            let labels = view_labels(&buffers, inputs.scene);
            let fr = render_from_field(&buffers, field);
            let z = &fr.image;
            audit_background(&c, &buffers, "content view")?;
            audit_background(z, &buffers, "stylized view")?;
            report.mask_audits += 2;

            let patch = if bank.len() > 1 {
                match_patch(&describe(&c, fx)?, &bank)?
            } else {
                bank.full_index()
            };
            if let std::collections::hash_map::Entry::Vacant(e) = targets.entry(patch) {
                let p = &bank.patches[patch];
                let t = patch_targets(&p.image, &p.labels, cfg.style_working_side, fx, inputs.classes)?;
                e.insert(t);
            }
            let t = &targets[&patch];

            let fz = fx.extract_to(z, depth);
            let fc = fx.extract_to(&c, content_depth);
            let mut grads = empty_grads(depth);
            let mut terms = LossTerms {
                content: content_term(&fz, &fc, &fx.content_layers, w.content, Some(&mut grads)),
                global_style: global_style_term(
                    &fz,
                    Some(&buffers.fg_mask),
                    &t.global,
                    w.global_style,
                    Some(&mut grads),
                ),
                ..LossTerms::default()
            };
            let local = local_style_term(
                &fz,
                &labels,
                &t.class,
                &full_class,
                inputs.classes,
                w.local,
                Some(&mut grads),
            );
            terms.local = local.value;
            let mut g_img = fx.backbone.backward(&fz, &grads);

            if w.photoreal > 0.0 {
                let term = PhotorealTerm::new(&c, cfg.matting_eps, cfg.photoreal_working_side)?;
                let (v, g) = term.evaluate(z, true)?;
                terms.photoreal = v;
                g_img.add_assign(&g.expect("gradient requested"), w.photoreal);
            }
            if w.clip > 0.0 {
                let (zc, cc) = match (cfg.clip_sky_composite, inputs.sky) {
                    (true, Some(sky)) => (
                        composite_sky(z, &buffers, &pose, sky),
                        composite_sky(&c, &buffers, &pose, sky),
                    ),
                    _ => (z.clone(), c.clone()),
                };
                let ec = inputs.embedding.encode_image(&cc);
                let (l, g) = clip_term(inputs.embedding, &zc, &ec, &text, true);
                terms.clip = l.total();
                g_img.add_assign(&g.expect("gradient requested"), w.clip);
            }
            let edited_render = match &edited {
                Some(e) => {
                    let er = render_from_field(&e.buffers, field);
                    let (v, g) = edited_view_penalty_with_grad(&er.image, &e.image)?;
                    terms.edited = Some(v);
                    Some((er, g))
                }
                None => None,
            };

            let loss = total_loss(&terms, &weights, epoch)?;
            grad.zero();
            fr.backward(field, &g_img, &mut grad);
            if let Some((er, mut g)) = edited_render {
                g.data_mut().iter_mut().for_each(|v| *v *= w.edited);
                er.backward(field, &g, &mut grad);
            }
            if !grad.is_finite() {
                return Err(Error::NonFiniteLoss("gradient"));
            }
            adam.step(field, &grad);

            let rec = IterationRecord {
                epoch,
                level,
                iteration,
                fov_deg: fov,
                patch,
                coverage: buffers.coverage(),
                no_reference: local.no_reference,
                loss,
            };
            report.no_reference += local.no_reference;
            epoch_losses.push(rec.loss.total);
            sink.push(&rec)?;
            report.iterations.push(rec);
        }
        sink.flush()?;
        report.skipped_views += epoch_skipped;
        report.epochs.push(EpochSummary {
            epoch,
            level,
            mean_loss: if epoch_losses.is_empty() {
                0.0
            } else {
                epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64
            },
            steps: epoch_losses.len(),
            skipped_views: epoch_skipped,
        });
        log::info!(
            "epoch {epoch} level {level} fov {fov:.1}: {} steps, mean loss {:.5}",
            epoch_losses.len(),
            report.epochs.last().map_or(0.0, |e| e.mean_loss)
        );

        let done = epoch + 1;
        let due = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if let Some(dir) = &ckpt_dir {
            if due || done == end_epoch {
                let meta = serde_json::to_value(CheckpointMeta {
                    next_epoch: done,
                    seed: cfg.seed,
                    epochs: cfg.epochs,
                    mode: cfg.mode,
                })?;
                let path = dir.join(format!("epoch_{done:04}.ckpt"));
                save_checkpoint(&path, field, Some(&adam), &meta)?;
                save_checkpoint(dir.join("last.ckpt"), field, Some(&adam), &meta)?;
                report.checkpoints.push(path);
            }
        }
    }

    report.elapsed_seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = &opts.out_dir {
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Mean global style-statistics distance between the style image and
/// renders of `texture` from `poses` (foreground statistics only).
pub fn style_statistics_distance(
    scene: &TexturedScene,
    texture: &crate::scene::TextureImage,
    poses: &[CameraPose],
    style: &Image,
    fx: &FeatureExtractor,
) -> Result<f64> {
    let target = GlobalStyleTarget::new(fx, style);
    let depth = fx.style_layers.iter().copied().max().unwrap_or(1);
    let mut total = 0.0;
    let mut n = 0;
    for pose in poses {
        let buffers = rasterize(&scene.mesh, pose)?;
        if buffers.inside_geometry || !buffers.fg_mask.iter().any(|&m| m) {
            continue;
        }
        let img = render_content(&buffers, texture);
        let maps = fx.extract_to(&img, depth);
        total += global_style_term(&maps, Some(&buffers.fg_mask), &target, 1.0, None);
        n += 1;
    }
    if n == 0 {
        return Err(Error::MetricUndefined("no pose sees the scene".into()));
    }
    Ok(total / n as f64)
}
