mod common;

use std::sync::OnceLock;

use meshstyle::embedding::LexiconEmbedding;
use meshstyle::field::{distill, load_checkpoint, DistillationConfig, NeuralTextureField};
use meshstyle::losses::{edited_view_penalty, LossWeights};
use meshstyle::planner::ProgressiveSchedule;
use meshstyle::render::{rasterize, render_content, render_from_field};
use meshstyle::scene::SemanticClassSet;
use meshstyle::trainer::*;

fn fixture() -> &'static common::Pipeline {
    static P: OnceLock<common::Pipeline> = OnceLock::new();
    P.get_or_init(|| common::pipeline(256, 300))
}

fn config(levels: usize, views: Vec<usize>, epochs: usize) -> StylizationConfig {
    let mut schedule = ProgressiveSchedule::with_levels(levels);
    schedule.views_per_level = views;
    StylizationConfig {
        epochs,
        schedule,
        resolution: 64,
        ..StylizationConfig::default()
    }
}

fn run(cfg: &StylizationConfig, field: &mut NeuralTextureField, opts: &RunOptions) -> StylizationReport {
    run_with(cfg, field, opts, None)
}

fn run_with(
    cfg: &StylizationConfig,
    field: &mut NeuralTextureField,
    opts: &RunOptions,
    edited: Option<&EditedView>,
) -> StylizationReport {
    let p = fixture();
    let em = LexiconEmbedding::new();
    let classes = SemanticClassSet::default();
    let inputs = StylizationInputs {
        scene: &p.city.scene,
        style: &p.style,
        plan: &p.plan,
        fx: &p.fx,
        embedding: &em,
        classes: &classes,
        sky: None,
        edited,
    };
    run_stylization(&inputs, field, cfg, opts).unwrap()
}

#[test]
fn smoke_run_writes_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(1, vec![2], 1);
    let mut field = fixture().field.clone();
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let r = run(&cfg, &mut field, &opts);
    assert_eq!((r.start_epoch, r.end_epoch), (0, 1));
    assert_eq!(r.iterations.len() + r.skipped_views, 2);
    assert!(r.loss_curve().iter().all(|l| l.is_finite()));
    assert!(r.mask_audits >= 2 * r.iterations.len());
    assert!(dir.path().join("report.json").exists());
    let lines = std::fs::read_to_string(dir.path().join("losses.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), r.iterations.len());
    let ck = load_checkpoint(dir.path().join("checkpoints/last.ckpt")).unwrap();
    assert_eq!(ck.field.params(), field.params());
    assert!(ck.optimizer.is_some());
}

#[test]
fn fixed_seed_gives_identical_loss_curves() {
    let cfg = config(2, vec![2, 3], 2);
    let mut a = fixture().field.clone();
    let mut b = fixture().field.clone();
    let ra = run(&cfg, &mut a, &RunOptions::default());
    let rb = run(&cfg, &mut b, &RunOptions::default());
    assert_eq!(ra.loss_curve(), rb.loss_curve());
    assert_eq!(a.params(), b.params());
    let levels: Vec<usize> = ra.iterations.iter().map(|r| r.level).collect();
    assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    for rec in &ra.iterations {
        assert_eq!(rec.fov_deg, [90.0, 20.0][rec.level]);
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = config(2, vec![2, 2], 3);
    let mut straight = fixture().field.clone();
    run(&cfg, &mut straight, &RunOptions::default());

    let dir = tempfile::tempdir().unwrap();
    let mut first = fixture().field.clone();
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        stop_after: Some(1),
        ..RunOptions::default()
    };
    let r1 = run(&cfg, &mut first, &opts);
    assert_eq!(r1.end_epoch, 1);
    let mut resumed = NeuralTextureField::new(fixture().field.config().clone(), 99).unwrap();
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: Some(dir.path().join("checkpoints/epoch_0001.ckpt")),
        stop_after: None,
    };
    let r2 = run(&cfg, &mut resumed, &opts);
    assert_eq!((r2.start_epoch, r2.end_epoch), (1, 3));
    assert_eq!(resumed.params(), straight.params());
    let lines = std::fs::read_to_string(dir.path().join("losses.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), r1.iterations.len() + r2.iterations.len());
}

/// Oracle: with every style weight at zero the run only fits the content
/// views, so the baked texture stays at a well distilled baseline.
#[test]
fn content_only_run_keeps_distilled_texture() {
    let p = fixture();
    let mut field = p.field.clone();
    let dc = DistillationConfig {
        steps: 4000,
        eval_every: 250,
        target_psnr: Some(34.0),
        ..DistillationConfig::default()
    };
    assert!(distill(&mut field, &p.city.scene.texture, &dc).unwrap().reached_target);
    let baseline = field.clone();
    let mut cfg = config(1, vec![6], 1);
    cfg.resolution = 128;
    cfg.weights = Some(LossWeights {
        content: 10.0,
        photoreal: 0.0,
        global_style: 0.0,
        clip: 0.0,
        local: 0.0,
        edited: 0.0,
        pht_warmup_epochs: 0,
    });
    run(&cfg, &mut field, &RunOptions::default());
    let (w, h) = p.city.scene.texture.dims();
    let base = baseline.bake(w, h).unwrap();
    let after = field.bake(w, h).unwrap();
    let err = base.image().mean_abs_diff(after.image());
    assert!(err <= 2.0 / 255.0, "{err}");
}

/// Differential oracle: under the same schedule the edit-propagation run
/// ends closer to the edit at the edited camera than a photorealistic run.
#[test]
fn edit_propagation_pulls_edited_view_towards_edit() {
    let p = fixture();
    let camera = p.plan.pivots[0];
    let buffers = rasterize(&p.city.scene.mesh, &camera).unwrap();
    let mut image = render_content(&buffers, &p.city.scene.texture);
    image.data_mut().iter_mut().for_each(|v| *v = 0.2 + 0.6 * *v);
    let edited = EditedView {
        camera,
        image: image.clone(),
    };
    let penalty = |f: &NeuralTextureField| edited_view_penalty(&render_from_field(&buffers, f).image, &image).unwrap();

    let mut cfg = config(1, vec![6], 1);
    let mut plain = p.field.clone();
    run(&cfg, &mut plain, &RunOptions::default());
    cfg.mode = Mode::EditPropagation;
    let mut edit = p.field.clone();
    let r = run_with(&cfg, &mut edit, &RunOptions::default(), Some(&edited));
    assert!(r
        .iterations
        .iter()
        .all(|i| i.loss.terms.iter().any(|t| t.name == "edited")));
    let (d_plain, d_edit) = (penalty(&plain), penalty(&edit));
    assert!(d_edit < d_plain, "edit {d_edit} vs photorealistic {d_plain}");
}

#[test]
fn edit_mode_requires_an_edited_view() {
    let p = fixture();
    let em = LexiconEmbedding::new();
    let classes = SemanticClassSet::default();
    let inputs = StylizationInputs {
        scene: &p.city.scene,
        style: &p.style,
        plan: &p.plan,
        fx: &p.fx,
        embedding: &em,
        classes: &classes,
        sky: None,
        edited: None,
    };
    let mut cfg = config(1, vec![1], 1);
    cfg.mode = Mode::EditPropagation;
    let mut field = p.field.clone();
    assert!(run_stylization(&inputs, &mut field, &cfg, &RunOptions::default()).is_err());
}
