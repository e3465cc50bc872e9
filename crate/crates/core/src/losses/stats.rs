//! Channel statistics of feature maps and the `(μ, σ)` matching loss.

use crate::image::{nearest_index, Image, LabelMap};

/// Added under the square root so σ stays differentiable at zero spread.
pub const SIGMA_EPS: f64 = 1e-8;

/// Per-channel mean and population standard deviation over a set of
/// spatial positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

/// Statistics over the positions where `mask` is true (all positions when
/// `mask` is `None`). Returns `None` when no position is selected.
pub fn channel_stats(f: &Image, mask: Option<&[bool]>) -> Option<Stats> {
    let n = f.pixel_count();
    let count = mask.map_or(n, |m| m.iter().filter(|&&b| b).count());
    if count == 0 {
        return None;
    }
    let mut mean = Vec::with_capacity(f.channels());
    let mut std = Vec::with_capacity(f.channels());
    for c in 0..f.channels() {
        let p = f.plane(c);
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let s: f64 = p.iter().enumerate().filter(|&(i, _)| keep(i)).map(|(_, v)| v).sum();
        let mu = s / count as f64;
        let s2: f64 = p
            .iter()
            .enumerate()
            .filter(|&(i, _)| keep(i))
            .map(|(_, v)| (v - mu).powi(2))
            .sum();
        mean.push(mu);
        std.push((s2 / count as f64 + SIGMA_EPS).sqrt());
    }
    Some(Stats { mean, std, count })
}

/// `(1/C)·(‖μ_a − μ_b‖² + ‖σ_a − σ_b‖²)`.
pub fn stats_loss(a: &Stats, b: &Stats) -> f64 {
    let c = a.mean.len() as f64;
    let dm: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let ds: f64 = a.std.iter().zip(&b.std).map(|(x, y)| (x - y).powi(2)).sum();
    (dm + ds) / c
}

/// Adds `weight · ∂stats_loss(target, stats(f))/∂f` into `grad`.
pub fn stats_loss_backward(
    f: &Image,
    mask: Option<&[bool]>,
    stats: &Stats,
    target: &Stats,
    weight: f64,
    grad: &mut Image,
) {
    let c_n = f.channels() as f64;
    let m = stats.count as f64;
    for c in 0..f.channels() {
        let a = weight * 2.0 / c_n * (stats.mean[c] - target.mean[c]) / m;
        let b = weight * 2.0 / c_n * (stats.std[c] - target.std[c]) / (m * stats.std[c]);
        let mu = stats.mean[c];
        let src = f.plane(c);
        let dst = grad.plane_mut(c);
        for i in 0..src.len() {
            if mask.is_none_or(|mk| mk[i]) {
                dst[i] += a + b * (src[i] - mu);
            }
        }
    }
}

/// Nearest-neighbour resize of a boolean mask.
pub fn resize_mask(mask: &[bool], w: usize, h: usize, dw: usize, dh: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let sy = nearest_index(y, dh, h);
        for x in 0..dw {
            out.push(mask[sy * w + nearest_index(x, dw, w)]);
        }
    }
    out
}

/// Labels resized to a feature layer's spatial size.
pub fn labels_at(labels: &LabelMap, f: &Image) -> LabelMap {
    if labels.dims() == f.dims() {
        labels.clone()
    } else {
        labels.resize_nearest(f.width(), f.height())
    }
}
