//! Subcommand implementations. Output layout under `output_dir`:
//!
//! ```text
//! plan/     plan.json
//! distill/  field.ckpt, distill.json
//! stylize/  checkpoints/, losses.jsonl, report.json
//! edit/     checkpoints/, losses.jsonl, report.json
//! sky/      sky.png, cube_{px,nx,py,ny,pz,nz}.png, sky.json
//! bake/     texture.png, stylized.obj, stylized.mtl
//! eval/     metrics.json
//! ```
//!
//! Every stage directory also holds a `manifest.json`.

use std::path::{Path, PathBuf};

use log::info;
use meshstyle::embedding::LexiconEmbedding;
use meshstyle::features::{ConvBackbone, FeatureExtractor};
use meshstyle::field::{load_checkpoint, save_checkpoint, NeuralTextureField};
use meshstyle::fixture::{cube_city, style_image};
use meshstyle::image::Image;
use meshstyle::metrics::{evaluate_views, EvalView};
use meshstyle::planner::{plan_pivot_views, PlanFile};
use meshstyle::render::{rasterize, render_content, render_from_field};
use meshstyle::scene::{load_scene, write_mtl, write_obj, SemanticClassSet, TexturedScene};
use meshstyle::sky::{backend_by_name, cube_map, synthesize_sky};
use meshstyle::style::StyleReference;
use meshstyle::trainer::{run_stylization, EditedView, Mode, RunOptions, StylizationInputs};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

const CUBE_FACE_NAMES: [&str; 6] = ["px", "nx", "py", "ny", "pz", "nz"];

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Empties and recreates the stage directory.
fn stage_dir(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir.join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| runtime(format!("cannot clear {}: {e}", dir.display())))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn prerequisite(cfg: &RunConfig, rel: &str, producer: &str) -> Result<PathBuf, CliError> {
    let path = cfg.output_dir.join(rel);
    if !path.is_file() {
        return Err(CliError::Runtime(format!(
            "missing prerequisite artifact {}; run `{producer}` first",
            path.display()
        )));
    }
    Ok(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn scene(cfg: &RunConfig, m: &mut Manifest) -> Result<TexturedScene, CliError> {
    let s = &cfg.scene;
    if let Some(f) = &s.fixture {
        m.input_value("scene.fixture", f)?;
        return Ok(cube_city(f)?.scene);
    }
    let (mesh, texture) = (
        s.mesh.as_ref().expect("validated"),
        s.texture.as_ref().expect("validated"),
    );
    m.input_file("scene.mesh", mesh)?;
    m.input_file("scene.texture", texture)?;
    if let Some(sem) = &s.semantics {
        m.input_file("scene.semantics", sem)?;
    }
    Ok(load_scene(mesh, texture, s.semantics.as_deref())?)
}

fn style(cfg: &RunConfig, classes: &SemanticClassSet, m: &mut Manifest) -> Result<StyleReference, CliError> {
    let s = &cfg.style;
    match &s.image {
        Some(img) => {
            m.input_file("style.image", img)?;
            if let Some(l) = &s.labels {
                m.input_file("style.labels", l)?;
            }
            Ok(StyleReference::load(
                img,
                s.labels.as_deref(),
                classes,
                &s.source_text,
                &s.target_text,
            )?)
        }
        None => {
            m.input_value("style.bundled", &(s.bundled_size, cfg.seed))?;
            let (img, labels) = style_image(s.bundled_size, cfg.seed);
            Ok(StyleReference::new(img, labels, &s.source_text, &s.target_text)?)
        }
    }
}

fn features(cfg: &RunConfig, m: &mut Manifest) -> Result<FeatureExtractor, CliError> {
    if cfg.models.backbone.is_empty() {
        return Ok(FeatureExtractor::default());
    }
    let path = Path::new(&cfg.models.backbone);
    m.input_file("models.backbone", path)?;
    Ok(FeatureExtractor::new(ConvBackbone::load(path)?)?)
}

fn plan(cfg: &RunConfig, m: &mut Manifest) -> Result<PlanFile, CliError> {
    let path = prerequisite(cfg, "plan/plan.json", "plan-views")?;
    m.input_file("plan", &path)?;
    Ok(PlanFile::load(path)?)
}

fn load_field(path: &Path, name: &str, m: &mut Manifest) -> Result<NeuralTextureField, CliError> {
    m.input_file(name, path)?;
    Ok(load_checkpoint(path)?.field)
}

fn stylized_checkpoint(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PathBuf, CliError> {
    match explicit {
        Some(p) if p.is_file() => Ok(p.to_path_buf()),
        Some(p) => Err(CliError::Runtime(format!("missing checkpoint {}", p.display()))),
        None => prerequisite(cfg, "stylize/checkpoints/last.ckpt", "stylize"),
    }
}

pub fn plan_views(cfg: &RunConfig) -> Result<(), CliError> {
    let mut m = Manifest::new(
        "plan-views",
        &(&cfg.plan, &cfg.stylize.schedule, cfg.stylize.resolution, cfg.seed),
    )?;
    let scene = scene(cfg, &mut m)?;
    let dir = stage_dir(cfg, "plan")?;
    let p = &cfg.plan;
    let res = cfg.stylize.resolution;
    let plan = plan_pivot_views(&scene, p.pivots, p.regions, p.offset, p.fov_deg, (res, res), cfg.seed)?;
    let file = PlanFile {
        plan,
        schedule: cfg.stylize.schedule.clone(),
    };
    file.save(dir.join("plan.json"))?;
    info!("planned {} pivot views", file.plan.pivots.len());
    m.finish(&dir)?;
    Ok(())
}

pub fn distill(cfg: &RunConfig) -> Result<(), CliError> {
    let mut m = Manifest::new("distill", &(&cfg.field, &cfg.distill))?;
    let scene = scene(cfg, &mut m)?;
    let dir = stage_dir(cfg, "distill")?;
    let mut field = NeuralTextureField::new(cfg.field.clone(), cfg.seed)?;
    let report = meshstyle::field::distill(&mut field, &scene.texture, &cfg.distill)?;
    info!(
        "distilled {} steps, held-out PSNR {:.2} dB",
        report.steps_run, report.final_psnr
    );
    save_checkpoint(
        dir.join("field.ckpt"),
        &field,
        None,
        &serde_json::json!({ "stage": "distill" }),
    )?;
    write_json(&dir.join("distill.json"), &report)?;
    m.finish(&dir)?;
    Ok(())
}

/// Shared by `stylize` and `edit-propagate`.
fn optimize(cfg: &RunConfig, stage: &'static str, edited: Option<(&Path, usize)>) -> Result<(), CliError> {
    let mut m = Manifest::new(stage, &(&cfg.stylize, &cfg.field, &cfg.style, &cfg.edit))?;
    let classes = SemanticClassSet::default();
    let scene = scene(cfg, &mut m)?;
    let style = style(cfg, &classes, &mut m)?;
    let fx = features(cfg, &mut m)?;
    let plan = plan(cfg, &mut m)?;
    let mut field = if cfg.stylize.mode == Mode::Artistic {
        // artistic runs start from an untrained field
        NeuralTextureField::new(cfg.field.clone(), cfg.seed)?
    } else {
        let path = prerequisite(cfg, "distill/field.ckpt", "distill")?;
        load_field(&path, "distill.field", &mut m)?
    };
    let sky = match &cfg.style.sky {
        Some(p) => {
            m.input_file("style.sky", p)?;
            Some(Image::load_rgb(p)?)
        }
        None => None,
    };
    let edited = match edited {
        Some((path, pivot)) => {
            m.input_file("edit.image", path)?;
            let image = Image::load_rgb(path)?;
            let mut camera = *plan.plan.pivots.get(pivot).ok_or_else(|| {
                CliError::Config(format!(
                    "edit.pivot {pivot} exceeds the {} planned views",
                    plan.plan.pivots.len()
                ))
            })?;
            camera.resolution = image.dims();
            Some(EditedView { camera, image })
        }
        None => None,
    };
    let dir = stage_dir(cfg, stage_dir_name(stage))?;
    let em = LexiconEmbedding::new();
    let inputs = StylizationInputs {
        scene: &scene,
        style: &style,
        plan: &plan.plan,
        fx: &fx,
        embedding: &em,
        classes: &classes,
        sky: sky.as_ref(),
        edited: edited.as_ref(),
    };
    let opts = RunOptions {
        out_dir: Some(dir.clone()),
        ..RunOptions::default()
    };
    let report = run_stylization(&inputs, &mut field, &cfg.stylize, &opts)?;
    if let Some(last) = report.loss_curve().last() {
        info!("{stage}: {} iterations, final loss {last:.4}", report.iterations.len());
    }
    m.finish(&dir)?;
    Ok(())
}

fn stage_dir_name(stage: &str) -> &'static str {
    if stage == "edit-propagate" {
        "edit"
    } else {
        "stylize"
    }
}

pub fn stylize(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.stylize.mode == Mode::EditPropagation {
        return Err(CliError::Config(
            "use the edit-propagate subcommand for edit propagation".into(),
        ));
    }
    optimize(cfg, "stylize", None)
}

pub fn edit_propagate(cfg: &RunConfig) -> Result<(), CliError> {
    let image = cfg
        .edit
        .image
        .clone()
        .ok_or_else(|| CliError::Config("edit-propagate needs edit.image or --image".into()))?;
    let mut cfg = cfg.clone();
    cfg.stylize.mode = Mode::EditPropagation;
    optimize(&cfg, "edit-propagate", Some((&image, cfg.edit.pivot)))
}

pub fn sky(cfg: &RunConfig) -> Result<(), CliError> {
    let mut m = Manifest::new("sky", &(&cfg.sky, &cfg.models.diffusion, &cfg.style))?;
    let classes = SemanticClassSet::default();
    let style = style(cfg, &classes, &mut m)?;
    let fx = features(cfg, &mut m)?;
    let backend = backend_by_name(&cfg.models.diffusion, cfg.seed)?;
    let dir = stage_dir(cfg, "sky")?;
    let result = synthesize_sky(&style, backend.as_ref(), &cfg.sky, &fx)?;
    result.panorama.save_png(dir.join("sky.png"))?;
    let face = (cfg.sky.height / 2).max(1);
    for (img, name) in cube_map(&result.panorama, face).iter().zip(CUBE_FACE_NAMES) {
        img.save_png(dir.join(format!("cube_{name}.png")))?;
    }
    write_json(
        &dir.join("sky.json"),
        &serde_json::json!({
            "backend": backend.name(),
            "guided_steps": result.guided_steps,
            "guidance_distances": result.guidance_distances,
        }),
    )?;
    info!(
        "sky panorama {}x{} from backend '{}'",
        2 * cfg.sky.height,
        cfg.sky.height,
        backend.name()
    );
    m.finish(&dir)?;
    Ok(())
}

pub fn bake(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let mut m = Manifest::new("bake", &cfg.bake)?;
    let ckpt = stylized_checkpoint(cfg, checkpoint)?;
    let field = load_field(&ckpt, "checkpoint", &mut m)?;
    let scene = scene(cfg, &mut m)?;
    let dir = stage_dir(cfg, "bake")?;
    let texture = field.bake(cfg.bake.width, cfg.bake.height)?;
    texture.image().save_png(dir.join("texture.png"))?;
    write_obj(&scene.mesh, &dir.join("stylized.obj"), "stylized.mtl")?;
    write_mtl(&scene.mesh.material_name, "texture.png", &dir.join("stylized.mtl"))?;
    info!("baked {}x{} texture", cfg.bake.width, cfg.bake.height);
    m.finish(&dir)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let mut m = Manifest::new("eval", &cfg.eval)?;
    let ckpt = stylized_checkpoint(cfg, checkpoint)?;
    let field = load_field(&ckpt, "checkpoint", &mut m)?;
    let scene = scene(cfg, &mut m)?;
    let plan = plan(cfg, &mut m)?;
    let fx = features(cfg, &mut m)?;
    let dir = stage_dir(cfg, "eval")?;
    let n = match cfg.eval.views {
        0 => plan.plan.pivots.len(),
        k => k.min(plan.plan.pivots.len()),
    };
    let mut renders = Vec::new();
    for (i, cam) in plan.plan.pivots[..n].iter().enumerate() {
        let buffers = rasterize(&scene.mesh, cam)?;
        if !buffers.fg_mask.iter().any(|&f| f) {
            continue;
        }
        let content = render_content(&buffers, &scene.texture);
        let stylized = render_from_field(&buffers, &field).image;
        renders.push((format!("pivot_{i:03}"), content, stylized, buffers.fg_mask));
    }
    let views: Vec<EvalView<'_>> = renders
        .iter()
        .map(|(name, content, stylized, mask)| EvalView {
            name: name.clone(),
            content,
            stylized,
            mask,
        })
        .collect();
    let prompt = cfg.eval.prompt.as_deref().unwrap_or(&cfg.style.target_text);
    let report = evaluate_views(&views, prompt, &fx, &LexiconEmbedding::new())?;
    info!(
        "eSSIM {:.4}, masked LPIPS {:.4}, CLIP {:.4} over {} views",
        report.essim, report.masked_lpips, report.clip_score, report.view_count
    );
    write_json(&dir.join("metrics.json"), &report)?;
    m.finish(&dir)?;
    Ok(())
}

/// plan → distill → stylize → sky → bake → eval; artistic runs skip
/// distillation.
pub fn all(cfg: &RunConfig) -> Result<(), CliError> {
    plan_views(cfg)?;
    if cfg.stylize.mode != Mode::Artistic {
        distill(cfg)?;
    }
    stylize(cfg)?;
    sky(cfg)?;
    bake(cfg, None)?;
    eval(cfg, None)
}
