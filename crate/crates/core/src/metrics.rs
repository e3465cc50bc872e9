//! Evaluation metrics: edge SSIM, masked perceptual distance and the
//! image-text score.
//!
//! Edge SSIM is SSIM (11×11 Gaussian window, σ = 1.5, constants
//! `(0.01)²` and `(0.03)²` for unit data range) between the 3×3 Sobel
//! gradient-magnitude maps of the luminance images.
//!
//! The perceptual distance is the unweighted LPIPS form on the backbone:
//! channel-normalized activations of every layer, squared difference summed
//! over channels, averaged over positions, summed over layers.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingModel};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMaps};
use crate::image::Image;
use crate::par;

pub const EDGE_OPERATOR: &str = "sobel-3x3 gradient magnitude of Rec.601 luminance; SSIM window 11, sigma 1.5";
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const NORM_EPS: f64 = 1e-10;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_dims(a: &Image, b: &Image, what: &'static str) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch {
            what,
            found: b.dims(),
            expected: a.dims(),
        });
    }
    Ok(())
}

pub fn luminance(img: &Image) -> Vec<f64> {
    if img.channels() < 3 {
        return img.plane(0).to_vec();
    }
    (0..img.pixel_count())
        .map(|i| {
            let p = img.rgb(i);
            LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
        })
        .collect()
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(gray: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray[y * w + x]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with `k`.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            tmp[y * ow + x0] = (0..n).map(|i| k[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..n).map(|i| k[i] * tmp[(y0 + i) * ow + x0]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of two single-channel images over all valid window positions.
/// The window shrinks to the largest odd size that fits small images.
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let k = gaussian_kernel(size.max(1), SSIM_SIGMA);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (ma, ..) = filter_valid(a, w, h, &k);
    let (mb, ..) = filter_valid(b, w, h, &k);
    let (maa, ..) = filter_valid(&prod(a, a), w, h, &k);
    let (mbb, ..) = filter_valid(&prod(b, b), w, h, &k);
    let (mab, ..) = filter_valid(&prod(a, b), w, h, &k);
    let n = ma.len() as f64;
    (0..ma.len())
        .map(|i| {
            let (ua, ub) = (ma[i], mb[i]);
            let va = maa[i] - ua * ua;
            let vb = mbb[i] - ub * ub;
            let cov = mab[i] - ua * ub;
            ((2.0 * ua * ub + C1) * (2.0 * cov + C2)) / ((ua * ua + ub * ub + C1) * (va + vb + C2))
        })
        .sum::<f64>()
        / n
}

/// SSIM of the Sobel edge maps of `a` and `b`.
pub fn essim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b, "essim input")?;
    let (w, h) = a.dims();
    let ea = sobel_magnitude(&luminance(a), w, h);
    let eb = sobel_magnitude(&luminance(b), w, h);
    Ok(ssim(&ea, &eb, w, h))
}

fn normalized(f: &Image, pos: usize) -> (Vec<f64>, f64) {
    let hw = f.pixel_count();
    let v: Vec<f64> = (0..f.channels()).map(|c| f.data()[c * hw + pos]).collect();
    let r = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
    (v.into_iter().map(|x| x / r).collect(), r)
}

fn layer_distance(fa: &Image, fb: &Image, grad: Option<&mut Image>) -> f64 {
    let hw = fa.pixel_count();
    let per_pos: Vec<(f64, Vec<f64>)> = par::map_range(hw, |p| {
        let (na, ra) = normalized(fa, p);
        let (nb, _) = normalized(fb, p);
        let diff: Vec<f64> = na.iter().zip(&nb).map(|(x, y)| x - y).collect();
        let d = diff.iter().map(|x| x * x).sum::<f64>();
        // dn/df = (I − n nᵀ)/r applied to 2(n_a − n_b)
        let gn: Vec<f64> = diff.iter().map(|x| 2.0 * x).collect();
        let dotp: f64 = na.iter().zip(&gn).map(|(x, y)| x * y).sum();
        let gf = gn.iter().zip(&na).map(|(g, n)| (g - n * dotp) / ra).collect();
        (d, gf)
    });
    let n = hw as f64;
    if let Some(g) = grad {
        let c = g.channels();
        for (p, (_, gf)) in per_pos.iter().enumerate() {
            for ch in 0..c {
                g.data_mut()[ch * hw + p] += gf[ch] / n;
            }
        }
    }
    per_pos.iter().map(|(d, _)| d).sum::<f64>() / n
}

fn distance_maps(fa: &FeatureMaps, fb: &FeatureMaps, mut grads: Option<&mut Vec<Option<Image>>>) -> f64 {
    let mut total = 0.0;
    for l in 0..fa.layers.len() {
        let slot = grads.as_deref_mut().map(|g| {
            let f = &fa.layers[l];
            g[l].get_or_insert_with(|| Image::zeros(f.width(), f.height(), f.channels()))
        });
        total += layer_distance(&fa.layers[l], &fb.layers[l], slot);
    }
    total
}

/// Perceptual distance between two RGB images of equal size.
pub fn perceptual_distance(a: &Image, b: &Image, fx: &FeatureExtractor) -> Result<f64> {
    check_dims(a, b, "perceptual input")?;
    Ok(distance_maps(&fx.extract(a), &fx.extract(b), None))
}

/// Distance and its gradient with respect to `a`.
pub fn perceptual_distance_with_grad(a: &Image, b: &Image, fx: &FeatureExtractor) -> Result<(f64, Image)> {
    check_dims(a, b, "perceptual input")?;
    let fa = fx.extract(a);
    let mut grads = vec![None; fa.layers.len()];
    let d = distance_maps(&fa, &fx.extract(b), Some(&mut grads));
    Ok((d, fx.backbone.backward(&fa, &grads)))
}

/// Perceptual distance with both images zeroed outside `mask`.
pub fn masked_lpips(a: &Image, b: &Image, mask: &[bool], fx: &FeatureExtractor) -> Result<f64> {
    check_dims(a, b, "masked lpips input")?;
    if mask.len() != a.pixel_count() {
        return Err(Error::InvalidArgument(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            a.pixel_count()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::MetricUndefined("mask selects no pixels".into()));
    }
    let mut a = a.clone();
    let mut b = b.clone();
    a.mask_in_place(mask);
    b.mask_in_place(mask);
    perceptual_distance(&a, &b, fx)
}

/// Cosine similarity of the image and text embeddings.
pub fn clip_score(img: &Image, text: &str, em: &dyn EmbeddingModel) -> Result<f64> {
    if text.trim().is_empty() {
        return Err(Error::InvalidArgument("text prompt must be non-empty".into()));
    }
    Ok(cosine(&em.encode_image(img), &em.encode_text(text)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    pub essim: f64,
    pub masked_lpips: f64,
    pub clip_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub edge_operator: String,
    pub essim: f64,
    pub masked_lpips: f64,
    pub clip_score: f64,
    pub view_count: usize,
    pub per_view: Vec<ViewMetrics>,
}

/// One evaluated view: content render, stylized render and foreground mask.
pub struct EvalView<'a> {
    pub name: String,
    pub content: &'a Image,
    pub stylized: &'a Image,
    pub mask: &'a [bool],
}

/// Averages the three metrics over `views`.
pub fn evaluate_views(
    views: &[EvalView<'_>],
    prompt: &str,
    fx: &FeatureExtractor,
    em: &dyn EmbeddingModel,
) -> Result<MetricReport> {
    if views.is_empty() {
        return Err(Error::MetricUndefined("no views to evaluate".into()));
    }
    let per_view = views
        .iter()
        .map(|v| {
            Ok(ViewMetrics {
                name: v.name.clone(),
                essim: essim(v.content, v.stylized)?,
                masked_lpips: masked_lpips(v.content, v.stylized, v.mask, fx)?,
                clip_score: clip_score(v.stylized, prompt, em)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_view.len() as f64;
    let mean = |f: fn(&ViewMetrics) -> f64| per_view.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        edge_operator: EDGE_OPERATOR.to_string(),
        essim: mean(|v| v.essim),
        masked_lpips: mean(|v| v.masked_lpips),
        clip_score: mean(|v| v.clip_score),
        view_count: per_view.len(),
        per_view,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LexiconEmbedding;

    fn fx() -> FeatureExtractor {
        FeatureExtractor::default()
    }

    #[test]
    fn essim_identity_and_inversion() {
        let x = Image::random(24, 20, 3, 4);
        assert_eq!(essim(&x, &x).unwrap(), 1.0);
        let bin = Image::from_fn(24, 20, 3, |_, i, j| if (i / 6 + j / 5) % 2 == 0 { 1.0 } else { 0.0 });
        let inv = bin.map(|v| 1.0 - v);
        assert!((essim(&bin, &inv).unwrap() - 1.0).abs() < 1e-12);
        let y = Image::random(24, 20, 3, 5);
        assert!((essim(&x, &y).unwrap() - essim(&y, &x).unwrap()).abs() < 1e-12);
        assert!(essim(&x, &Image::random(20, 20, 3, 1)).is_err());
    }

    #[test]
    fn ssim_window_shrinks_for_small_images() {
        let a: Vec<f64> = (0..36).map(|i| (i % 7) as f64 / 7.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v * 0.5).collect();
        let s = ssim(&a, &b, 6, 6);
        assert!(s.is_finite() && s < 1.0 && s > -1.0);
    }

    #[test]
    fn masked_lpips_contract() {
        let f = fx();
        let a = Image::random(16, 16, 3, 1);
        let b = Image::random(16, 16, 3, 2);
        let mask: Vec<bool> = (0..256).map(|i| i % 16 < 10).collect();
        assert_eq!(masked_lpips(&a, &a, &mask, &f).unwrap(), 0.0);
        let ab = masked_lpips(&a, &b, &mask, &f).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, masked_lpips(&b, &a, &mask, &f).unwrap());
        let mut b2 = b.clone();
        for (i, m) in mask.iter().enumerate() {
            if !m {
                b2.set_rgb(i, [0.3, 0.9, 0.1]);
            }
        }
        assert_eq!(ab, masked_lpips(&a, &b2, &mask, &f).unwrap());
        assert!(matches!(
            masked_lpips(&a, &b, &[false; 256], &f),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn perceptual_gradient_matches_finite_differences() {
        let f = fx();
        let a = Image::random(16, 16, 3, 7);
        let b = Image::random(16, 16, 3, 8);
        let (_, g) = perceptual_distance_with_grad(&a, &b, &f).unwrap();
        let scale = g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in (0..a.data().len()).step_by(37) {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data_mut()[i] += 1e-5;
            m.data_mut()[i] -= 1e-5;
            let num = (perceptual_distance(&p, &b, &f).unwrap() - perceptual_distance(&m, &b, &f).unwrap()) / 2e-5;
            assert!(
                (num - g.data()[i]).abs() <= 1e-3 * scale,
                "{i}: {num} vs {}",
                g.data()[i]
            );
        }
    }

    #[test]
    fn clip_score_is_bounded() {
        let em = LexiconEmbedding::new();
        let s = clip_score(&Image::random(8, 8, 3, 3), "a city at night", &em).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!(clip_score(&Image::random(8, 8, 3, 3), "  ", &em).is_err());
    }
}
