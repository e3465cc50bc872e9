//! Neural texture field: UV → RGB through a multi-resolution feature grid and
//! a small MLP decoder with a sigmoid output.
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64`. The flat
//! parameter vector holds the grid tables first, then each decoder layer as a
//! row-major weight matrix followed by its bias.

mod adam;
mod checkpoint;
mod distill;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use distill::{distill, holdout_psnr, DistillReport, DistillationConfig, DivergenceMonitor};

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::rng;
use crate::scene::{texel_center, TextureImage};

/// Largest texture side accepted by [`NeuralTextureField::bake`].
pub const MAX_BAKE_RESOLUTION: usize = 16384;

/// Samples per parallel work item; fixed so reductions are reproducible.
const CHUNK: usize = 256;

const HASH_PRIME: u64 = 2_654_435_761;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth: f64,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Upper bound on parameter storage in bytes.
    pub budget_bytes: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            levels: 16,
            base_resolution: 16,
            growth: 1.5,
            features_per_level: 2,
            log2_table_size: 18,
            hidden_width: 64,
            hidden_layers: 2,
            // half of a 4096x4096 RGB8 texture
            budget_bytes: 4096 * 4096 * 3 / 2,
        }
    }
}

impl FieldConfig {
    /// Smaller grid for tests and quick runs.
    pub fn small() -> Self {
        FieldConfig {
            levels: 8,
            base_resolution: 8,
            growth: 1.6,
            log2_table_size: 14,
            hidden_width: 32,
            ..FieldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_resolution == 0 || self.features_per_level == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument("field dimensions must be positive".into()));
        }
        if !(self.growth >= 1.0) || self.log2_table_size == 0 || self.log2_table_size > 30 {
            return Err(Error::InvalidArgument("invalid grid growth or table size".into()));
        }
        Ok(())
    }

    pub fn encoding_dim(&self) -> usize {
        self.levels * self.features_per_level
    }
}

#[derive(Clone, Copy, Debug)]
struct Level {
    res: usize,
    offset: usize,
    entries: usize,
    dense: bool,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

/// Accumulated `dL/dθ` in the field's flat parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradient {
    data: Vec<f64>,
}

impl FieldGradient {
    pub fn zero(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|g| *g *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug)]
pub struct NeuralTextureField {
    cfg: FieldConfig,
    levels: Vec<Level>,
    layers: Vec<Layer>,
    grid_len: usize,
    params: Vec<f32>,
    clamped: AtomicU64,
}

impl Clone for NeuralTextureField {
    fn clone(&self) -> Self {
        NeuralTextureField {
            cfg: self.cfg.clone(),
            levels: self.levels.clone(),
            layers: self.layers.clone(),
            grid_len: self.grid_len,
            params: self.params.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for NeuralTextureField {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.params == other.params
    }
}

/// Decoder weights widened to f64 once per batch.
struct Decoder {
    layers: Vec<(Layer, Vec<f64>)>,
}

impl NeuralTextureField {
    /// Fresh field: grid entries uniform in ±1e-4, hidden layers He-uniform,
    /// output layer zero so every query returns 0.5.
    pub fn new(cfg: FieldConfig, seed: u64) -> Result<Self> {
        let mut field = Self::zeroed(cfg)?;
        let mut r = rng::stream(seed, rng::tag::FIELD_INIT, 0);
        for p in &mut field.params[..field.grid_len] {
            *p = r.gen_range(-1e-4f32..=1e-4);
        }
        let n_layers = field.layers.len();
        for (k, layer) in field.layers.clone().iter().enumerate() {
            if k + 1 == n_layers {
                break;
            }
            let bound = (6.0 / layer.inputs as f64).sqrt() as f32;
            let w = &mut field.params[layer.offset..layer.offset + layer.inputs * layer.outputs];
            for p in w {
                *p = r.gen_range(-bound..=bound);
            }
        }
        Ok(field)
    }

    fn zeroed(cfg: FieldConfig) -> Result<Self> {
        cfg.validate()?;
        let table = 1usize << cfg.log2_table_size;
        let mut levels = Vec::with_capacity(cfg.levels);
        let mut offset = 0;
        for l in 0..cfg.levels {
            let res = (cfg.base_resolution as f64 * cfg.growth.powi(l as i32)).floor() as usize;
            let dense_entries = (res + 1) * (res + 1);
            let dense = dense_entries <= table;
            let entries = if dense { dense_entries } else { table };
            levels.push(Level {
                res,
                offset,
                entries,
                dense,
            });
            offset += entries * cfg.features_per_level;
        }
        let grid_len = offset;
        let mut dims = vec![cfg.encoding_dim()];
        dims.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        dims.push(3);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            layers.push(Layer {
                inputs: w[0],
                outputs: w[1],
                offset,
            });
            offset += w[0] * w[1] + w[1];
        }
        let bytes = offset * std::mem::size_of::<f32>();
        if bytes > cfg.budget_bytes {
            return Err(Error::InvalidArgument(format!(
                "field needs {bytes} parameter bytes, budget is {}",
                cfg.budget_bytes
            )));
        }
        Ok(NeuralTextureField {
            cfg,
            levels,
            layers,
            grid_len,
            params: vec![0.0; offset],
            clamped: AtomicU64::new(0),
        })
    }

    /// Field with the given configuration and raw parameters.
    pub fn from_params(cfg: FieldConfig, params: Vec<f32>) -> Result<Self> {
        let mut f = Self::zeroed(cfg)?;
        if params.len() != f.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                f.params.len(),
                params.len()
            )));
        }
        f.params = params;
        Ok(f)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_bytes(&self) -> usize {
        self.params.len() * std::mem::size_of::<f32>()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// Index range of the grid tables within the flat parameter vector.
    pub fn grid_range(&self) -> Range<usize> {
        0..self.grid_len
    }

    /// Index range of the decoder within the flat parameter vector.
    pub fn decoder_range(&self) -> Range<usize> {
        self.grid_len..self.params.len()
    }

    pub fn zero_gradient(&self) -> FieldGradient {
        FieldGradient {
            data: vec![0.0; self.params.len()],
        }
    }

    /// Number of queried coordinates that had to be clamped into `[0,1]²`.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    fn clamp_uv(&self, uv: [f64; 2]) -> [f64; 2] {
        let fix = |x: f64| if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
        let out = [fix(uv[0]), fix(uv[1])];
        if out != uv {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        out
    }

    fn decoder(&self) -> Decoder {
        Decoder {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let n = l.inputs * l.outputs + l.outputs;
                    (
                        *l,
                        self.params[l.offset..l.offset + n].iter().map(|&p| p as f64).collect(),
                    )
                })
                .collect(),
        }
    }

    /// Grid corner parameter offsets and bilinear weights for one level.
    #[inline]
    fn corners(&self, level: &Level, uv: [f64; 2]) -> [(usize, f64); 4] {
        let n = level.res;
        let x = uv[0] * n as f64;
        let y = uv[1] * n as f64;
        let ix = (x.floor() as usize).min(n - 1);
        let iy = (y.floor() as usize).min(n - 1);
        let fx = x - ix as f64;
        let fy = y - iy as f64;
        let f = self.cfg.features_per_level;
        let idx = |cx: usize, cy: usize| -> usize {
            let e = if level.dense {
                cy * (n + 1) + cx
            } else {
                ((cx as u64) ^ (cy as u64).wrapping_mul(HASH_PRIME)) as usize % level.entries
            };
            level.offset + e * f
        };
        [
            (idx(ix, iy), (1.0 - fx) * (1.0 - fy)),
            (idx(ix + 1, iy), fx * (1.0 - fy)),
            (idx(ix, iy + 1), (1.0 - fx) * fy),
            (idx(ix + 1, iy + 1), fx * fy),
        ]
    }

    fn encode(&self, uv: [f64; 2], out: &mut [f64]) {
        let f = self.cfg.features_per_level;
        for (l, level) in self.levels.iter().enumerate() {
            let dst = &mut out[l * f..(l + 1) * f];
            dst.iter_mut().for_each(|d| *d = 0.0);
            for (off, w) in self.corners(level, uv) {
                for k in 0..f {
                    dst[k] += w * self.params[off + k] as f64;
                }
            }
        }
    }

    /// Runs the decoder, storing each hidden layer's post-ReLU output and the
    /// final pre-sigmoid output in `acts`.
    fn decode(dec: &Decoder, enc: &[f64], acts: &mut [Vec<f64>]) -> [f64; 3] {
        let n = dec.layers.len();
        for (k, (layer, w)) in dec.layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(k);
            let input: &[f64] = if k == 0 { enc } else { &prev[k - 1] };
            let out = &mut rest[0];
            let (weights, bias) = w.split_at(layer.inputs * layer.outputs);
            for ((o, row), b) in out.iter_mut().zip(weights.chunks_exact(layer.inputs)).zip(bias) {
                let s = b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                *o = if k + 1 < n { s.max(0.0) } else { s };
            }
        }
        let last = &acts[n - 1];
        [sigmoid(last[0]), sigmoid(last[1]), sigmoid(last[2])]
    }

    fn scratch(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (
            vec![0.0; self.cfg.encoding_dim()],
            self.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
        )
    }

    /// RGB in `[0,1]³` for each UV. Coordinates outside `[0,1]²` are clamped
    /// and counted.
    pub fn query(&self, uvs: &[[f64; 2]]) -> Vec<[f64; 3]> {
        let dec = self.decoder();
        par::map_chunks(uvs.len(), CHUNK, |r| {
            let (mut enc, mut acts) = self.scratch();
            uvs[r]
                .iter()
                .map(|&uv| {
                    let uv = self.clamp_uv(uv);
                    self.encode(uv, &mut enc);
                    Self::decode(&dec, &enc, &mut acts)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn query_one(&self, uv: [f64; 2]) -> [f64; 3] {
        self.query(&[uv])[0]
    }

    /// Adds `Σ_k (dL/drgb_k)·(drgb_k/dθ)` to `grad`.
    pub fn backward(&self, uvs: &[[f64; 2]], grad_rgb: &[[f64; 3]], grad: &mut FieldGradient) {
        assert_eq!(uvs.len(), grad_rgb.len(), "one gradient per queried uv");
        assert_eq!(grad.data.len(), self.params.len(), "gradient layout");
        let dec = self.decoder();
        let dec_len = self.params.len() - self.grid_len;
        let parts = par::map_chunks(uvs.len(), CHUNK, |r| {
            let (mut enc, mut acts) = self.scratch();
            let mut dec_grad = vec![0.0; dec_len];
            let mut grid_grad: Vec<(u32, f64)> = Vec::with_capacity(r.len() * self.cfg.levels * 4 * 2);
            let mut deltas: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
            let mut d_enc = vec![0.0; self.cfg.encoding_dim()];
            for k in r {
                let g = grad_rgb[k];
                if g == [0.0; 3] {
                    continue;
                }
                let uv = self.clamp_uv_silent(uvs[k]);
                self.encode(uv, &mut enc);
                let rgb = Self::decode(&dec, &enc, &mut acts);
                self.decoder_backward(&dec, &enc, &acts, rgb, g, &mut deltas, &mut dec_grad, &mut d_enc);
                let f = self.cfg.features_per_level;
                for (l, level) in self.levels.iter().enumerate() {
                    for (off, w) in self.corners(level, uv) {
                        for c in 0..f {
                            let v = w * d_enc[l * f + c];
                            if v != 0.0 {
                                grid_grad.push(((off + c) as u32, v));
                            }
                        }
                    }
                }
            }
            (dec_grad, grid_grad)
        });
        for (dec_grad, grid_grad) in parts {
            for (i, v) in grid_grad {
                grad.data[i as usize] += v;
            }
            for (d, v) in grad.data[self.grid_len..].iter_mut().zip(dec_grad) {
                *d += v;
            }
        }
    }

    fn clamp_uv_silent(&self, uv: [f64; 2]) -> [f64; 2] {
        let fix = |x: f64| if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
        [fix(uv[0]), fix(uv[1])]
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_backward(
        &self,
        dec: &Decoder,
        enc: &[f64],
        acts: &[Vec<f64>],
        rgb: [f64; 3],
        g: [f64; 3],
        deltas: &mut [Vec<f64>],
        dec_grad: &mut [f64],
        d_enc: &mut [f64],
    ) {
        let n = dec.layers.len();
        for c in 0..3 {
            deltas[n - 1][c] = g[c] * rgb[c] * (1.0 - rgb[c]);
        }
        for k in (0..n).rev() {
            let (layer, w) = &dec.layers[k];
            let base = layer.offset - self.grid_len;
            let (lower, upper) = deltas.split_at_mut(k);
            let delta = &upper[0];
            let input: &[f64] = if k == 0 { enc } else { &acts[k - 1] };
            let (wg, bg) = dec_grad[base..base + layer.inputs * layer.outputs + layer.outputs]
                .split_at_mut(layer.inputs * layer.outputs);
            for ((row, b), &d) in wg.chunks_exact_mut(layer.inputs).zip(bg.iter_mut()).zip(delta) {
                if d == 0.0 {
                    continue;
                }
                row.iter_mut().zip(input).for_each(|(r, x)| *r += d * x);
                *b += d;
            }
            let back: &mut [f64] = if k == 0 { d_enc } else { &mut lower[k - 1] };
            back.iter_mut().for_each(|b| *b = 0.0);
            for (row, &d) in w[..layer.inputs * layer.outputs].chunks_exact(layer.inputs).zip(delta) {
                if d != 0.0 {
                    back.iter_mut().zip(row).for_each(|(b, a)| *b += a * d);
                }
            }
            if k > 0 {
                back.iter_mut()
                    .zip(input)
                    .filter(|(_, x)| **x <= 0.0)
                    .for_each(|(b, _)| *b = 0.0);
            }
        }
    }

    /// Evaluates the field at every texel center of a `width × height` grid.
    pub fn bake(&self, width: usize, height: usize) -> Result<TextureImage> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("bake size must be at least 1x1".into()));
        }
        if width > MAX_BAKE_RESOLUTION || height > MAX_BAKE_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "bake size {width}x{height} exceeds the {MAX_BAKE_RESOLUTION} cap"
            )));
        }
        let mut img = Image::zeros(width, height, 3);
        let rows = (65536 / width).max(1);
        let mut y0 = 0;
        while y0 < height {
            let y1 = (y0 + rows).min(height);
            let uvs: Vec<[f64; 2]> = (y0..y1)
                .flat_map(|j| (0..width).map(move |i| texel_center(i, j, width, height)))
                .collect();
            for (k, rgb) in self.query(&uvs).into_iter().enumerate() {
                img.set_rgb(y0 * width + k, rgb);
            }
            y0 = y1;
        }
        TextureImage::new(img)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
