use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, NeuralTextureField};
use crate::error::{Error, Result};
use crate::image::psnr_from_mse;
use crate::rng;
use crate::scene::{texel_center, TextureImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillationConfig {
    /// UV samples per step.
    pub batch_size: usize,
    pub steps: usize,
    /// Stop early once the held-out PSNR reaches this value.
    pub target_psnr: Option<f64>,
    pub eval_every: usize,
    /// Side of the held-out evaluation grid.
    pub holdout_grid: usize,
    /// Consecutive evaluations more than 0.5 dB below the best before aborting.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Learning-rate multiplier reached at the last step; the rate decays
    /// exponentially from 1 towards it.
    pub final_lr_fraction: f64,
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 || self.eval_every == 0 || self.holdout_grid == 0 {
            return Err(Error::InvalidArgument("distillation sizes must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::InvalidArgument("final_lr_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for DistillationConfig {
    fn default() -> Self {
        DistillationConfig {
            batch_size: 4096,
            steps: 2000,
            target_psnr: None,
            eval_every: 100,
            holdout_grid: 128,
            patience: 5,
            seed: 0,
            optimizer: AdamConfig::default(),
            final_lr_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub steps_run: usize,
    pub final_psnr: f64,
    pub best_psnr: f64,
    /// `(step, held-out PSNR)` at every evaluation.
    pub history: Vec<(usize, f64)>,
    pub reached_target: bool,
}

/// Flags a run whose held-out PSNR stays more than `tolerance_db` below its
/// best value for `patience` consecutive evaluations.
#[derive(Clone, Debug)]
pub struct DivergenceMonitor {
    pub tolerance_db: f64,
    pub patience: usize,
    best: f64,
    bad: usize,
}

impl DivergenceMonitor {
    pub fn new(tolerance_db: f64, patience: usize) -> Self {
        DivergenceMonitor {
            tolerance_db,
            patience: patience.max(1),
            best: f64::NEG_INFINITY,
            bad: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, step: usize, psnr: f64) -> Result<()> {
        if psnr.is_nan() {
            return Err(Error::Divergence(format!("held-out PSNR is NaN at step {step}")));
        }
        self.best = self.best.max(psnr);
        if psnr < self.best - self.tolerance_db {
            self.bad += 1;
            if self.bad >= self.patience {
                return Err(Error::Divergence(format!(
                    "held-out PSNR fell to {psnr:.2} dB (best {:.2} dB) for {} evaluations ending at step {step}",
                    self.best, self.bad
                )));
            }
        } else {
            self.bad = 0;
        }
        Ok(())
    }
}

/// UVs of the evaluation grid, offset from texel centers so they are never
/// exact training targets.
fn holdout_uvs(g: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(g * g);
    for j in 0..g {
        for i in 0..g {
            out.push([(i as f64 + 0.37) / g as f64, (j as f64 + 0.71) / g as f64]);
        }
    }
    out
}

/// Held-out PSNR of the field against bilinear texture samples.
pub fn holdout_psnr(field: &NeuralTextureField, texture: &TextureImage, grid: usize) -> f64 {
    let uvs = holdout_uvs(grid.max(1));
    let pred = field.query(&uvs);
    let mut se = 0.0;
    for (uv, p) in uvs.iter().zip(&pred) {
        let t = texture.sample_bilinear(*uv);
        se += (0..3).map(|c| (p[c] - t[c]).powi(2)).sum::<f64>();
    }
    psnr_from_mse(se / (3 * uvs.len()) as f64)
}

/// Fits the field to `texture` by minimizing MSE on texel-jittered UVs.
pub fn distill(
    field: &mut NeuralTextureField,
    texture: &TextureImage,
    cfg: &DistillationConfig,
) -> Result<DistillReport> {
    cfg.validate()?;
    let (w, h) = texture.dims();
    let mut adam = Adam::new(cfg.optimizer.clone(), field);
    let mut grad = field.zero_gradient();
    let mut history = Vec::new();
    let mut monitor = DivergenceMonitor::new(0.5, cfg.patience);
    let mut steps_run = 0;
    let mut reached = false;
    let mut uvs = vec![[0.0; 2]; cfg.batch_size];
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, rng::tag::DISTILL, step as u64);
        for uv in &mut uvs {
            let i = r.gen_range(0..w);
            let j = r.gen_range(0..h);
            let c = texel_center(i, j, w, h);
            let ju: f64 = r.gen_range(-0.5..0.5);
            let jv: f64 = r.gen_range(-0.5..0.5);
            *uv = [
                (c[0] + ju / w as f64).clamp(0.0, 1.0),
                (c[1] + jv / h as f64).clamp(0.0, 1.0),
            ];
        }
        let pred = field.query(&uvs);
        let scale = 2.0 / (3 * cfg.batch_size) as f64;
        let g: Vec<[f64; 3]> = uvs
            .iter()
            .zip(&pred)
            .map(|(uv, p)| {
                let t = texture.sample_bilinear(*uv);
                [scale * (p[0] - t[0]), scale * (p[1] - t[1]), scale * (p[2] - t[2])]
            })
            .collect();
        grad.zero();
        field.backward(&uvs, &g, &mut grad);
        if !grad.is_finite() {
            return Err(Error::Divergence(format!("non-finite gradient at step {step}")));
        }
        let lr_scale = cfg.final_lr_fraction.powf(step as f64 / cfg.steps as f64);
        adam.step_scaled(field, &grad, lr_scale);
        steps_run = step + 1;

        if steps_run % cfg.eval_every == 0 || steps_run == cfg.steps {
            let psnr = holdout_psnr(field, texture, cfg.holdout_grid);
            history.push((steps_run, psnr));
            log::debug!("distill step {steps_run}: held-out PSNR {psnr:.2} dB");
            monitor.observe(steps_run, psnr)?;
            if cfg.target_psnr.is_some_and(|t| psnr >= t) {
                reached = true;
                break;
            }
        }
    }
    let final_psnr = history.last().map(|h| h.1).unwrap_or(f64::NEG_INFINITY);
    Ok(DistillReport {
        steps_run,
        final_psnr,
        best_psnr: monitor.best(),
        history,
        reached_target: reached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::image::Image;

    #[test]
    fn constant_texture_converges_to_within_one_level() {
        let tex = TextureImage::new(Image::filled(64, 64, &[0.8, 0.3, 0.15])).unwrap();
        let mut f = NeuralTextureField::new(FieldConfig::small(), 1).unwrap();
        let cfg = DistillationConfig {
            batch_size: 512,
            steps: 1200,
            eval_every: 100,
            holdout_grid: 32,
            ..DistillationConfig::default()
        };
        let report = distill(&mut f, &tex, &cfg).unwrap();
        assert_eq!(report.steps_run, 1200);
        let baked = f.bake(64, 64).unwrap();
        let target = [0.8, 0.3, 0.15];
        for i in 0..64 * 64 {
            let p = baked.image().rgb(i);
            for c in 0..3 {
                assert!((p[c] - target[c]).abs() <= 1.0 / 255.0, "texel {i}: {p:?}");
            }
        }
    }

    #[test]
    fn target_psnr_stops_early() {
        let tex = TextureImage::new(Image::filled(16, 16, &[0.5, 0.5, 0.5])).unwrap();
        let mut f = NeuralTextureField::new(FieldConfig::small(), 1).unwrap();
        let cfg = DistillationConfig {
            batch_size: 64,
            steps: 1000,
            eval_every: 10,
            holdout_grid: 8,
            target_psnr: Some(40.0),
            ..DistillationConfig::default()
        };
        let report = distill(&mut f, &tex, &cfg).unwrap();
        assert!(report.reached_target);
        assert_eq!(report.steps_run, 10);
    }

    #[test]
    fn monitor_aborts_after_patience_drops() {
        let mut m = DivergenceMonitor::new(0.5, 2);
        m.observe(1, 20.0).unwrap();
        m.observe(2, 19.8).unwrap();
        m.observe(3, 19.0).unwrap();
        m.observe(4, 25.0).unwrap();
        m.observe(5, 24.0).unwrap();
        assert!(matches!(m.observe(6, 23.0), Err(Error::Divergence(_))));
        assert!(DivergenceMonitor::new(0.5, 3).observe(0, f64::NAN).is_err());
    }
}
