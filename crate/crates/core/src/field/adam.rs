use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{FieldGradient, NeuralTextureField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr_grid: f64,
    pub lr_decoder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr_grid: 1e-2,
            lr_decoder: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// Adam with separate learning rates for the grid tables and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
    pub(crate) step: u64,
}

const CHUNK: usize = 1 << 14;

impl Adam {
    pub fn new(config: AdamConfig, field: &NeuralTextureField) -> Self {
        Adam {
            config,
            m: vec![0.0; field.param_count()],
            v: vec![0.0; field.param_count()],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, field: &mut NeuralTextureField, grad: &FieldGradient) {
        self.step_scaled(field, grad, 1.0);
    }

    /// Step with both learning rates multiplied by `lr_scale`.
    pub fn step_scaled(&mut self, field: &mut NeuralTextureField, grad: &FieldGradient, lr_scale: f64) {
        assert_eq!(grad.as_slice().len(), field.param_count(), "gradient layout");
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let grid_end = field.grid_range().end;
        let (b1, b2, eps) = (c.beta1, c.beta2, c.eps);
        let (lr_g, lr_d) = (c.lr_grid * lr_scale, c.lr_decoder * lr_scale);
        let g = grad.as_slice();
        let update = |ci: usize, p: &mut [f32], m: &mut [f32], v: &mut [f32]| {
            let base = ci * CHUNK;
            for k in 0..p.len() {
                let i = base + k;
                let gi = g[i];
                let mi = b1 * m[k] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[k] as f64 + (1.0 - b2) * gi * gi;
                m[k] = mi as f32;
                v[k] = vi as f32;
                let lr = if i < grid_end { lr_g } else { lr_d };
                let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                p[k] = (p[k] as f64 - step) as f32;
            }
        };
        let params = field.params_mut();
        #[cfg(feature = "parallel")]
        params
            .par_chunks_mut(CHUNK)
            .zip(self.m.par_chunks_mut(CHUNK))
            .zip(self.v.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(ci, ((p, m), v))| update(ci, p, m, v));
        #[cfg(not(feature = "parallel"))]
        params
            .chunks_mut(CHUNK)
            .zip(self.m.chunks_mut(CHUNK))
            .zip(self.v.chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(ci, ((p, m), v))| update(ci, p, m, v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;

    #[test]
    fn first_step_moves_each_param_by_its_learning_rate() {
        let cfg = FieldConfig {
            levels: 2,
            base_resolution: 2,
            log2_table_size: 4,
            hidden_width: 4,
            hidden_layers: 1,
            ..FieldConfig::default()
        };
        let mut f = NeuralTextureField::new(cfg, 0).unwrap();
        let before = f.params().to_vec();
        let mut g = f.zero_gradient();
        g.as_mut_slice().iter_mut().for_each(|x| *x = 0.5);
        let mut adam = Adam::new(AdamConfig::default(), &f);
        adam.step(&mut f, &g);
        let grid = f.grid_range();
        for (i, (a, b)) in before.iter().zip(f.params()).enumerate() {
            let lr = if grid.contains(&i) { 1e-2 } else { 1e-3 };
            assert!(((a - b) as f64 - lr).abs() < 1e-6, "param {i}");
        }
        assert_eq!(adam.steps_taken(), 1);
    }
}
