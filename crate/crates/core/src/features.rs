//! Frozen convolutional feature extractor with an analytic input gradient.
//!
//! The backbone has four blocks, each a 3×3 convolution followed by ReLU,
//! with 2×2 average pooling between blocks. Feature layer `l` (1-based) is
//! the ReLU output of block `l`. Inputs are RGB in `[0,1]`, normalized with
//! the usual ImageNet mean and standard deviation.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::rng;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Channel widths of the default backbone blocks.
pub const DEFAULT_WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// Smallest input side for which every block has at least one position.
pub const MIN_INPUT_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs × 3 × 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    fn check(&self) -> Result<()> {
        if self.weight.len() != self.inputs * self.outputs * 9 || self.bias.len() != self.outputs {
            return Err(Error::InvalidArgument("convolution weight shape mismatch".into()));
        }
        Ok(())
    }

    fn forward(&self, x: &Image) -> Image {
        let (w, h) = x.dims();
        let planes = par::map_range(self.outputs, |o| {
            let mut out = vec![self.bias[o]; w * h];
            for i in 0..self.inputs {
                let src = x.plane(i);
                let k = &self.weight[(o * self.inputs + i) * 9..(o * self.inputs + i + 1) * 9];
                accumulate_correlation(&mut out, src, w, h, k);
            }
            out
        });
        Image::from_planar(w, h, self.outputs, planes.concat())
    }

    /// Gradient with respect to the input given the gradient of the output.
    fn backward_input(&self, g: &Image) -> Image {
        let (w, h) = g.dims();
        let planes = par::map_range(self.inputs, |i| {
            let mut out = vec![0.0; w * h];
            for o in 0..self.outputs {
                let k = &self.weight[(o * self.inputs + i) * 9..(o * self.inputs + i + 1) * 9];
                let mut flipped = [0.0; 9];
                for (t, f) in flipped.iter_mut().enumerate() {
                    *f = k[8 - t];
                }
                accumulate_correlation(&mut out, g.plane(o), w, h, &flipped);
            }
            out
        });
        Image::from_planar(w, h, self.inputs, planes.concat())
    }
}

/// `out[y,x] += Σ k[dy+1, dx+1] · src[y+dy, x+dx]` with zero padding.
fn accumulate_correlation(out: &mut [f64], src: &[f64], w: usize, h: usize, k: &[f64]) {
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let kv = k[((dy + 1) * 3 + dx + 1) as usize];
            if kv == 0.0 {
                continue;
            }
            let x0 = if dx < 0 { 1 } else { 0 };
            let x1 = if dx > 0 { w.saturating_sub(1) } else { w };
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                let orow = &mut out[y * w..(y + 1) * w];
                for x in x0..x1 {
                    orow[x] += kv * srow[(x as isize + dx) as usize];
                }
            }
        }
    }
}

fn pool2(x: &Image) -> Image {
    let (w, h) = (x.width() / 2, x.height() / 2);
    Image::from_fn(w, h, x.channels(), |c, i, j| {
        0.25 * (x.get(c, 2 * i, 2 * j)
            + x.get(c, 2 * i + 1, 2 * j)
            + x.get(c, 2 * i, 2 * j + 1)
            + x.get(c, 2 * i + 1, 2 * j + 1))
    })
}

fn pool2_adjoint(g: &Image, w: usize, h: usize) -> Image {
    let mut out = Image::zeros(w, h, g.channels());
    for c in 0..g.channels() {
        for j in 0..g.height() {
            for i in 0..g.width() {
                let v = 0.25 * g.get(c, i, j);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out.set(c, 2 * i + dx, 2 * j + dy, v);
                }
            }
        }
    }
    out
}

/// Frozen four-block convolutional backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBackbone {
    pub blocks: Vec<Conv3x3>,
}

/// Per-layer activations from one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FeatureMaps {
    /// `layers[l - 1]` is feature layer `l` (post-ReLU).
    pub layers: Vec<Image>,
    pre: Vec<Image>,
    input_dims: (usize, usize),
}

impl FeatureMaps {
    pub fn layer(&self, l: usize) -> &Image {
        &self.layers[l - 1]
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }
}

impl ConvBackbone {
    /// Backbone with He-normal weights drawn from `seed`.
    pub fn seeded(seed: u64, widths: &[usize]) -> Self {
        let mut r = rng::stream(seed, rng::tag::BACKBONE, 0);
        let mut blocks = Vec::new();
        let mut inputs = 3;
        for &outputs in widths {
            let std = (2.0 / (inputs * 9) as f64).sqrt();
            let n = Normal::new(0.0, std).expect("valid std");
            blocks.push(Conv3x3 {
                inputs,
                outputs,
                weight: (0..inputs * outputs * 9).map(|_| n.sample(&mut r)).collect(),
                bias: vec![0.0; outputs],
            });
            inputs = outputs;
        }
        ConvBackbone { blocks }
    }

    pub fn default_seeded() -> Self {
        Self::seeded(0, &DEFAULT_WIDTHS)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut inputs = 3;
        for b in &self.blocks {
            b.check()?;
            if b.inputs != inputs {
                return Err(Error::InvalidArgument("backbone block widths do not chain".into()));
            }
            inputs = b.outputs;
        }
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument("backbone has no blocks".into()));
        }
        Ok(())
    }

    /// Loads weights saved with [`ConvBackbone::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: ConvBackbone = serde_json::from_str(&text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    /// Runs every block up to `depth` on an RGB image.
    pub fn forward_to(&self, img: &Image, depth: usize) -> FeatureMaps {
        assert_eq!(img.channels(), 3, "backbone input must be RGB");
        assert!(
            img.width() >= 1 << (depth - 1) && img.height() >= 1 << (depth - 1),
            "input {:?} too small for {depth} blocks",
            img.dims()
        );
        let mut x = Image::from_fn(img.width(), img.height(), 3, |c, i, j| {
            (img.get(c, i, j) - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
        });
        let mut layers = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        for (k, conv) in self.blocks.iter().take(depth).enumerate() {
            if k > 0 {
                x = pool2(&x);
            }
            let a = conv.forward(&x);
            x = a.map(|v| v.max(0.0));
            pre.push(a);
            layers.push(x.clone());
        }
        FeatureMaps {
            layers,
            pre,
            input_dims: img.dims(),
        }
    }

    pub fn forward(&self, img: &Image) -> FeatureMaps {
        self.forward_to(img, self.depth())
    }

    /// Gradient with respect to the input image given gradients of any subset
    /// of feature layers (`grads[l - 1]` for layer `l`).
    pub fn backward(&self, maps: &FeatureMaps, grads: &[Option<Image>]) -> Image {
        let depth = maps.layers.len();
        let mut g: Option<Image> = None;
        for k in (0..depth).rev() {
            let mut acc = match g.take() {
                Some(x) => x,
                None => Image::zeros(
                    maps.layers[k].width(),
                    maps.layers[k].height(),
                    maps.layers[k].channels(),
                ),
            };
            if let Some(Some(extra)) = grads.get(k) {
                acc.add_assign(extra, 1.0);
            }
            let pre = &maps.pre[k];
            for (d, &a) in acc.data_mut().iter_mut().zip(pre.data()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let gin = self.blocks[k].backward_input(&acc);
            g = Some(if k > 0 {
                let prev = &maps.layers[k - 1];
                pool2_adjoint(&gin, prev.width(), prev.height())
            } else {
                gin
            });
        }
        let mut out = g.expect("at least one block");
        for c in 0..3 {
            for v in out.plane_mut(c) {
                *v /= IMAGENET_STD[c];
            }
        }
        out
    }
}

/// Backbone plus the layer roles used by the losses.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub backbone: ConvBackbone,
    pub content_layers: Vec<usize>,
    pub style_layers: Vec<usize>,
    pub descriptor_layer: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::new(ConvBackbone::default_seeded()).expect("default layers are valid")
    }
}

impl FeatureExtractor {
    /// Content layer 4, style layers 2–4, descriptor layer 3.
    pub fn new(backbone: ConvBackbone) -> Result<Self> {
        Self::with_layers(backbone, vec![4], vec![2, 3, 4], 3)
    }

    pub fn with_layers(
        backbone: ConvBackbone,
        content_layers: Vec<usize>,
        style_layers: Vec<usize>,
        descriptor_layer: usize,
    ) -> Result<Self> {
        backbone.validate()?;
        let d = backbone.depth();
        let ok = |l: &usize| (1..=d).contains(l);
        if !content_layers.iter().all(ok) || !style_layers.iter().all(ok) || !ok(&descriptor_layer) {
            return Err(Error::InvalidArgument(format!("feature layers must lie in 1..={d}")));
        }
        Ok(FeatureExtractor {
            backbone,
            content_layers,
            style_layers,
            descriptor_layer,
        })
    }

    pub fn extract(&self, img: &Image) -> FeatureMaps {
        self.backbone.forward(img)
    }

    pub fn extract_to(&self, img: &Image, depth: usize) -> FeatureMaps {
        self.backbone.forward_to(img, depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |c, x, y| {
            (0.5 + 0.4 * ((x as f64 * 0.7 + c as f64).sin() * (y as f64 * 0.3).cos())).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn layer_shapes_halve_per_block() {
        let fx = FeatureExtractor::default();
        let maps = fx.extract(&test_image(32, 24));
        let dims: Vec<_> = maps
            .layers
            .iter()
            .map(|l| (l.width(), l.height(), l.channels()))
            .collect();
        assert_eq!(dims, vec![(32, 24, 16), (16, 12, 32), (8, 6, 64), (4, 3, 64)]);
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        let b = ConvBackbone::seeded(3, &[5]);
        let conv = &b.blocks[0];
        let x = test_image(7, 6);
        let y = Image::from_fn(7, 6, 5, |c, i, j| ((c * 31 + i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
        let fx = conv.forward(&x);
        let zero_bias: f64 = (0..5).map(|c| conv.bias[c] * y.plane(c).iter().sum::<f64>()).sum();
        let lhs: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>() - zero_bias;
        let rhs: f64 = x
            .data()
            .iter()
            .zip(conv.backward_input(&y).data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let fx = FeatureExtractor::default();
        let img = test_image(8, 8);
        let maps = fx.extract(&img);
        let weights: Vec<Image> = maps
            .layers
            .iter()
            .map(|l| {
                Image::from_fn(l.width(), l.height(), l.channels(), |c, x, y| {
                    ((c + 2 * x + 3 * y) % 5) as f64 - 2.0
                })
            })
            .collect();
        let objective = |img: &Image| -> f64 {
            let m = fx.extract(img);
            m.layers
                .iter()
                .zip(&weights)
                .map(|(l, w)| l.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let grads: Vec<Option<Image>> = weights.iter().cloned().map(Some).collect();
        let g = fx.backbone.backward(&maps, &grads);
        let h = 1e-5;
        for idx in [0, 17, 64, 100, 150, 191] {
            let mut p = img.clone();
            let mut m = img.clone();
            p.data_mut()[idx] += h;
            m.data_mut()[idx] -= h;
            let num = (objective(&p) - objective(&m)) / (2.0 * h);
            let a = g.data()[idx];
            assert!(
                (a - num).abs() <= 1e-4 * a.abs().max(num.abs()).max(1.0),
                "{idx}: {a} vs {num}"
            );
        }
    }

    #[test]
    fn weights_roundtrip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let b = ConvBackbone::seeded(9, &[4, 4]);
        let p = dir.path().join("w.json");
        b.save(&p).unwrap();
        assert_eq!(ConvBackbone::load(&p).unwrap(), b);
    }
}
