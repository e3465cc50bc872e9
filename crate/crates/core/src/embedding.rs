//! Joint image/text embeddings for the text-guided losses and the score metric.
//!
//! [`EmbeddingModel`] is the interface a pretrained vision-language model
//! plugs into. [`LexiconEmbedding`] is the built-in, dependency-free model: it
//! embeds images by their regional color layout and contrast, and embeds text
//! by looking words up in a color/time-of-day lexicon that maps into the same
//! space. It is differentiable in the image, so text terms steer optimization.

use crate::image::Image;

pub trait EmbeddingModel: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_image(&self, img: &Image) -> Vec<f64>;
    /// `(∂E_I/∂img)ᵀ · grad`.
    fn encode_image_vjp(&self, img: &Image, grad: &[f64]) -> Image;
    fn encode_text(&self, text: &str) -> Vec<f64>;
}

/// Cosine similarity with `sim(0, v) = 0`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// `∂cosine(a, b)/∂a`; zero when either vector is zero.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let s = dot(a, b) / (na * nb);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| y / (na * nb) - s * x / (na * na))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// Descriptor: full-image mean RGB, four quadrant means, luminance std.
const DIM: usize = 16;
const STD_CENTER: f64 = 0.2;

struct Entry {
    words: &'static [&'static str],
    top: [f64; 3],
    bottom: [f64; 3],
    contrast: f64,
}

const LEXICON: &[Entry] = &[
    Entry {
        words: &["day", "daytime", "sunny", "noon", "daylight"],
        top: [0.55, 0.7, 0.9],
        bottom: [0.55, 0.55, 0.5],
        contrast: 0.2,
    },
    Entry {
        words: &["night", "midnight", "nighttime"],
        top: [0.05, 0.07, 0.15],
        bottom: [0.12, 0.1, 0.1],
        contrast: 0.15,
    },
    Entry {
        words: &["sunset", "dusk", "golden", "evening"],
        top: [0.95, 0.55, 0.3],
        bottom: [0.45, 0.3, 0.25],
        contrast: 0.2,
    },
    Entry {
        words: &["sunrise", "dawn", "morning"],
        top: [0.95, 0.75, 0.6],
        bottom: [0.55, 0.5, 0.5],
        contrast: 0.18,
    },
    Entry {
        words: &["blue", "hour", "twilight"],
        top: [0.2, 0.3, 0.65],
        bottom: [0.15, 0.2, 0.4],
        contrast: 0.15,
    },
    Entry {
        words: &["neon", "cyberpunk", "futuristic"],
        top: [0.6, 0.15, 0.7],
        bottom: [0.1, 0.5, 0.7],
        contrast: 0.3,
    },
    Entry {
        words: &["snow", "snowy", "winter"],
        top: [0.85, 0.88, 0.92],
        bottom: [0.9, 0.9, 0.95],
        contrast: 0.12,
    },
    Entry {
        words: &["autumn", "fall"],
        top: [0.8, 0.55, 0.3],
        bottom: [0.6, 0.35, 0.15],
        contrast: 0.2,
    },
    Entry {
        words: &["fog", "foggy", "haze", "hazy", "mist", "misty"],
        top: [0.75, 0.75, 0.75],
        bottom: [0.7, 0.7, 0.7],
        contrast: 0.05,
    },
    Entry {
        words: &["rain", "rainy", "overcast", "cloudy", "storm"],
        top: [0.5, 0.52, 0.55],
        bottom: [0.35, 0.36, 0.38],
        contrast: 0.1,
    },
    Entry {
        words: &["red"],
        top: [0.8, 0.15, 0.15],
        bottom: [0.6, 0.1, 0.1],
        contrast: 0.2,
    },
    Entry {
        words: &["orange"],
        top: [0.95, 0.55, 0.15],
        bottom: [0.7, 0.4, 0.1],
        contrast: 0.2,
    },
    Entry {
        words: &["yellow", "gold"],
        top: [0.9, 0.8, 0.2],
        bottom: [0.7, 0.6, 0.15],
        contrast: 0.2,
    },
    Entry {
        words: &["green"],
        top: [0.2, 0.7, 0.3],
        bottom: [0.15, 0.5, 0.2],
        contrast: 0.2,
    },
    Entry {
        words: &["purple", "violet"],
        top: [0.55, 0.25, 0.75],
        bottom: [0.35, 0.15, 0.5],
        contrast: 0.2,
    },
    Entry {
        words: &["pink"],
        top: [0.95, 0.6, 0.75],
        bottom: [0.8, 0.45, 0.6],
        contrast: 0.2,
    },
    Entry {
        words: &["warm"],
        top: [0.85, 0.6, 0.4],
        bottom: [0.7, 0.5, 0.35],
        contrast: 0.2,
    },
    Entry {
        words: &["cold", "cool", "icy"],
        top: [0.5, 0.65, 0.85],
        bottom: [0.4, 0.5, 0.65],
        contrast: 0.2,
    },
    Entry {
        words: &["dark", "black", "gloomy"],
        top: [0.1, 0.1, 0.12],
        bottom: [0.08, 0.08, 0.1],
        contrast: 0.1,
    },
    Entry {
        words: &["bright", "white", "light", "lights"],
        top: [0.9, 0.9, 0.88],
        bottom: [0.8, 0.8, 0.78],
        contrast: 0.25,
    },
    Entry {
        words: &["contrast", "dramatic", "vivid"],
        top: [0.5, 0.5, 0.5],
        bottom: [0.5, 0.5, 0.5],
        contrast: 0.35,
    },
];

/// Color-layout embedding with a color/time-of-day text lexicon.
#[derive(Clone, Debug, Default)]
pub struct LexiconEmbedding;

impl LexiconEmbedding {
    pub fn new() -> Self {
        LexiconEmbedding
    }

    fn quadrant(x: usize, y: usize, w: usize, h: usize) -> usize {
        (if 2 * y < h { 0 } else { 2 }) + if 2 * x < w { 0 } else { 1 }
    }
}

fn fnv(word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingModel for LexiconEmbedding {
    fn dim(&self) -> usize {
        DIM
    }

    fn encode_image(&self, img: &Image) -> Vec<f64> {
        assert_eq!(img.channels(), 3, "embedding input must be RGB");
        let (w, h) = img.dims();
        let n = (w * h) as f64;
        let mut e = vec![0.0; DIM];
        let mut counts = [0.0f64; 4];
        let mut luma = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let q = Self::quadrant(x, y, w, h);
                counts[q] += 1.0;
                let i = y * w + x;
                let rgb = img.rgb(i);
                for c in 0..3 {
                    e[c] += rgb[c];
                    e[3 + 3 * q + c] += rgb[c];
                }
                luma.push(LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]);
            }
        }
        for c in 0..3 {
            e[c] = e[c] / n - 0.5;
            for q in 0..4 {
                e[3 + 3 * q + c] = if counts[q] > 0.0 {
                    e[3 + 3 * q + c] / counts[q] - 0.5
                } else {
                    0.0
                };
            }
        }
        let mu = luma.iter().sum::<f64>() / n;
        let var = luma.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
        e[15] = (var + 1e-12).sqrt() - STD_CENTER;
        e
    }

    fn encode_image_vjp(&self, img: &Image, grad: &[f64]) -> Image {
        let (w, h) = img.dims();
        let n = (w * h) as f64;
        let mut counts = [0.0f64; 4];
        let mut luma = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                counts[Self::quadrant(x, y, w, h)] += 1.0;
                let rgb = img.rgb(y * w + x);
                luma.push(LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]);
            }
        }
        let mu = luma.iter().sum::<f64>() / n;
        let var = luma.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
        let std = (var + 1e-12).sqrt();
        let mut out = Image::zeros(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let q = Self::quadrant(x, y, w, h);
                let dstd = grad[15] * (luma[i] - mu) / (n * std);
                let mut g = [0.0; 3];
                for c in 0..3 {
                    g[c] = grad[c] / n + grad[3 + 3 * q + c] / counts[q] + dstd * LUMA[c];
                }
                out.set_rgb(i, g);
            }
        }
        out
    }

    fn encode_text(&self, text: &str) -> Vec<f64> {
        let mut top = [0.0; 3];
        let mut bottom = [0.0; 3];
        let mut contrast = 0.0;
        let mut hits = 0.0;
        let mut residual = vec![0.0; DIM];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            if let Some(entry) = LEXICON.iter().find(|e| e.words.contains(&word)) {
                for c in 0..3 {
                    top[c] += entry.top[c];
                    bottom[c] += entry.bottom[c];
                }
                contrast += entry.contrast;
                hits += 1.0;
            } else {
                let mut hsh = fnv(word);
                for r in residual.iter_mut() {
                    hsh = hsh
                        .wrapping_mul(6_364_136_223_846_793_005)
                        .wrapping_add(1_442_695_040_888_963_407);
                    *r += ((hsh >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.02;
                }
            }
        }
        if hits == 0.0 {
            top = [0.5; 3];
            bottom = [0.5; 3];
            contrast = STD_CENTER;
            hits = 1.0;
        }
        let mut e = [0.0; DIM];
        for c in 0..3 {
            let t = top[c] / hits - 0.5;
            let b = bottom[c] / hits - 0.5;
            e[c] = 0.5 * (t + b);
            e[3 + c] = t;
            e[6 + c] = t;
            e[9 + c] = b;
            e[12 + c] = b;
        }
        e[15] = contrast / hits - STD_CENTER;
        e.iter().zip(&residual).map(|(a, r)| a + r).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_guard_and_range() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-3.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_grad_matches_finite_differences() {
        let a = [0.3, -0.2, 0.9];
        let b = [0.1, 0.5, -0.4];
        let g = cosine_grad(&a, &b);
        for k in 0..3 {
            let mut p = a;
            let mut m = a;
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let num = (cosine(&p, &b) - cosine(&m, &b)) / 2e-6;
            assert!((num - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn night_images_align_with_night_text() {
        let em = LexiconEmbedding::new();
        let night = Image::from_fn(16, 16, 3, |c, _, y| {
            if y < 8 {
                [0.05, 0.07, 0.15][c]
            } else {
                [0.12, 0.1, 0.1][c]
            }
        });
        let day = Image::from_fn(16, 16, 3, |c, _, y| {
            if y < 8 {
                [0.55, 0.7, 0.9][c]
            } else {
                [0.55, 0.55, 0.5][c]
            }
        });
        let t = em.encode_text("a city at night");
        assert!(cosine(&em.encode_image(&night), &t) > cosine(&em.encode_image(&day), &t));
        assert!(cosine(&em.encode_image(&night), &t) > 0.9);
    }

    #[test]
    fn text_encoding_is_deterministic_and_word_sensitive() {
        let em = LexiconEmbedding::new();
        assert_eq!(em.encode_text("Sunset over water"), em.encode_text("sunset over water"));
        assert_ne!(em.encode_text("sunset"), em.encode_text("sunset harbor"));
    }

    #[test]
    fn image_vjp_matches_finite_differences() {
        let em = LexiconEmbedding::new();
        let img = Image::from_fn(5, 4, 3, |c, x, y| ((c * 7 + x * 3 + y * 5) % 11) as f64 / 11.0);
        let g: Vec<f64> = (0..DIM).map(|k| (k as f64 * 0.37).sin()).collect();
        let vjp = em.encode_image_vjp(&img, &g);
        let f = |im: &Image| -> f64 { em.encode_image(im).iter().zip(&g).map(|(a, b)| a * b).sum() };
        for idx in 0..img.data().len() {
            let mut p = img.clone();
            let mut m = img.clone();
            p.data_mut()[idx] += 1e-6;
            m.data_mut()[idx] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - vjp.data()[idx]).abs() < 1e-7, "{idx}");
        }
    }
}
