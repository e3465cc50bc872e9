//! Style reference, multi-scale patch bank and structure-based patch matching.
//!
//! Each patch carries a self-similarity descriptor: the cosine-similarity
//! matrix of its backbone features resized to a common grid. A training view
//! is paired with the patch whose descriptor is closest, so the style
//! statistics it is pushed towards come from a crop of similar layout and
//! scale.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::image::{fit_long_side, Image, LabelMap};
use crate::par;
use crate::rng;
use crate::scene::{SemanticClassSet, SENTINEL};

/// Minimum long side of a style crop.
pub const MIN_PATCH_SIDE: usize = 256;
/// Features are resized to this square grid before the similarity matrix.
pub const DESCRIPTOR_SIDE: usize = 16;
/// Long side images are resized to before descriptor features are extracted.
pub const DESCRIPTOR_INPUT_SIDE: usize = 128;
pub const DEFAULT_SCALES: [usize; 3] = [256, 384, 512];
pub const DEFAULT_PER_SCALE: usize = 8;

/// Style image, its segmentation and the text prompts.
#[derive(Clone, Debug)]
pub struct StyleReference {
    pub image: Image,
    pub labels: LabelMap,
    pub source_text: String,
    pub target_text: String,
}

impl StyleReference {
    pub fn new(image: Image, labels: LabelMap, source_text: &str, target_text: &str) -> Result<Self> {
        if image.channels() != 3 {
            return Err(Error::InvalidArgument("style image must be RGB".into()));
        }
        if labels.dims() != image.dims() {
            return Err(Error::DimensionMismatch {
                what: "style segmentation",
                found: labels.dims(),
                expected: image.dims(),
            });
        }
        if source_text.trim().is_empty() || target_text.trim().is_empty() {
            return Err(Error::InvalidArgument("style prompts must be non-empty".into()));
        }
        Ok(StyleReference {
            image,
            labels,
            source_text: source_text.to_string(),
            target_text: target_text.to_string(),
        })
    }

    /// Loads the image and, when given, its label PNG. Without labels every
    /// pixel is unlabeled, so only the global style terms see the style.
    pub fn load(
        image: impl AsRef<Path>,
        labels: Option<&Path>,
        classes: &SemanticClassSet,
        source_text: &str,
        target_text: &str,
    ) -> Result<Self> {
        let img = Image::load_rgb(image)?;
        let lab = match labels {
            Some(p) => {
                let l = LabelMap::load_png(p)?;
                if let Some(&bad) = l.data().iter().find(|&&v| v != SENTINEL && v as usize >= classes.len()) {
                    return Err(Error::InvalidLabel {
                        label: bad,
                        classes: classes.len(),
                    });
                }
                l
            }
            None => LabelMap::filled(img.width(), img.height(), SENTINEL),
        };
        Self::new(img, lab, source_text, target_text)
    }
}

/// Pairwise cosine similarities of spatial feature vectors, row-major
/// `n × n` with `n = side²`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureDescriptor {
    pub side: usize,
    pub data: Vec<f64>,
}

impl StructureDescriptor {
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.len() + j]
    }

    /// `Σ (D_a − D_b)²`.
    pub fn distance(&self, other: &StructureDescriptor) -> f64 {
        assert_eq!(self.side, other.side, "descriptor sizes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

/// Descriptor of a feature map resized to `side × side`. Zero-norm feature
/// vectors get similarity 0 to everything except themselves.
pub fn self_similarity(features: &Image, side: usize) -> Result<StructureDescriptor> {
    if features.pixel_count() == 0 || features.channels() == 0 || side == 0 {
        return Err(Error::InvalidArgument(
            "self-similarity needs a non-empty feature map".into(),
        ));
    }
    let f = features.resize(side, side);
    let n = side * side;
    let ch = f.channels();
    let mut unit = vec![0.0; n * ch];
    let mut zero = vec![false; n];
    for i in 0..n {
        let norm = (0..ch).map(|c| f.plane(c)[i].powi(2)).sum::<f64>().sqrt();
        zero[i] = norm == 0.0;
        if !zero[i] {
            for c in 0..ch {
                unit[i * ch + c] = f.plane(c)[i] / norm;
            }
        }
    }
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                if i == j {
                    1.0
                } else if zero[i] || zero[j] {
                    0.0
                } else {
                    let d: f64 = (0..ch).map(|c| unit[i * ch + c] * unit[j * ch + c]).sum();
                    d.clamp(-1.0, 1.0)
                }
            })
            .collect::<Vec<f64>>()
    });
    Ok(StructureDescriptor {
        side,
        data: rows.into_iter().flatten().collect(),
    })
}

/// Structure descriptor of an RGB image.
pub fn describe(img: &Image, fx: &FeatureExtractor) -> Result<StructureDescriptor> {
    let (w, h) = fit_long_side(img.width(), img.height(), DESCRIPTOR_INPUT_SIDE, false);
    let small = img.resize(w, h);
    let maps = fx.extract_to(&small, fx.descriptor_layer);
    self_similarity(maps.layer(fx.descriptor_layer), DESCRIPTOR_SIDE)
}

#[derive(Clone, Debug)]
pub struct StylePatch {
    /// `(x, y, w, h)` in source pixels.
    pub rect: (usize, usize, usize, usize),
    pub image: Image,
    pub labels: LabelMap,
    /// Long side of the crop.
    pub scale: usize,
    pub descriptor: StructureDescriptor,
}

#[derive(Clone, Debug)]
pub struct PatchBank {
    pub patches: Vec<StylePatch>,
}

impl PatchBank {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Index of the full-image patch.
    pub fn full_index(&self) -> usize {
        0
    }
}

/// Crop counts per scale for progressive `level` of `levels`: the preferred
/// scale moves linearly from the largest (first level) to the smallest
/// (last level) and the other scales get weights falling off with their
/// distance to it. Counts sum to `scales.len() * n_per_scale`.
pub fn level_scale_counts(scales: &[usize], n_per_scale: usize, level: usize, levels: usize) -> Vec<usize> {
    let s = scales.len();
    if s == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by_key(|&i| scales[i]);
    let t = if levels > 1 {
        level.min(levels - 1) as f64 / (levels - 1) as f64
    } else {
        0.0
    };
    let preferred = (1.0 - t) * (s - 1) as f64;
    let total = s * n_per_scale;
    let weights: Vec<f64> = (0..s).map(|rank| s as f64 - (rank as f64 - preferred).abs()).collect();
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..s).collect();
    rest.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &r in rest.iter().take(missing) {
        counts[r] += 1;
    }
    let mut out = vec![0; s];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = counts[rank];
    }
    out
}

fn check_scales(style: &StyleReference, scales: &[usize]) -> Result<()> {
    let long = style.image.width().max(style.image.height());
    if long < MIN_PATCH_SIDE {
        return Err(Error::InvalidArgument(format!(
            "style image {:?} is smaller than {MIN_PATCH_SIDE} pixels on both sides",
            style.image.dims()
        )));
    }
    if let Some(&bad) = scales.iter().find(|&&s| s < MIN_PATCH_SIDE || s > long) {
        return Err(Error::InvalidArgument(format!(
            "crop scale {bad} must lie in {MIN_PATCH_SIDE}..={long}"
        )));
    }
    Ok(())
}

/// Bank of `n_per_scale` random crops per scale plus the full image.
pub fn build_patch_bank(
    style: &StyleReference,
    scales: &[usize],
    n_per_scale: usize,
    fx: &FeatureExtractor,
    seed: u64,
    epoch: u64,
) -> Result<PatchBank> {
    let counts = vec![n_per_scale; scales.len()];
    build_patch_bank_with_counts(style, scales, &counts, fx, seed, epoch)
}

/// Bank with `counts[i]` crops of long side `scales[i]`. Crops keep the
/// source aspect ratio; duplicates of an earlier rectangle are dropped and
/// the full image is always patch 0.
pub fn build_patch_bank_with_counts(
    style: &StyleReference,
    scales: &[usize],
    counts: &[usize],
    fx: &FeatureExtractor,
    seed: u64,
    epoch: u64,
) -> Result<PatchBank> {
    check_scales(style, scales)?;
    if counts.len() != scales.len() {
        return Err(Error::InvalidArgument("one crop count per scale required".into()));
    }
    let (sw, sh) = style.image.dims();
    let mut r = rng::stream(seed, rng::tag::PATCH_BANK, epoch);
    let mut rects = vec![(0, 0, sw, sh)];
    for (&scale, &n) in scales.iter().zip(counts) {
        let (w, h) = fit_long_side(sw, sh, scale, false);
        let (w, h) = (w.min(sw), h.min(sh));
        for _ in 0..n {
            let x = r.gen_range(0..=sw - w);
            let y = r.gen_range(0..=sh - h);
            let rect = (x, y, w, h);
            if !rects.contains(&rect) {
                rects.push(rect);
            }
        }
    }
    let patches = par::map_range(rects.len(), |i| {
        let (x, y, w, h) = rects[i];
        let image = style.image.crop(x, y, w, h);
        let descriptor = describe(&image, fx)?;
        Ok(StylePatch {
            rect: rects[i],
            labels: style.labels.crop(x, y, w, h),
            scale: w.max(h),
            image,
            descriptor,
        })
    });
    Ok(PatchBank {
        patches: patches.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Index of the patch with the smallest descriptor distance to `view`
/// (lowest index on ties).
pub fn match_patch(view: &StructureDescriptor, bank: &PatchBank) -> Result<usize> {
    if bank.is_empty() {
        return Err(Error::InvalidArgument("patch bank is empty".into()));
    }
    let d = par::map_range(bank.len(), |i| view.distance(&bank.patches[i].descriptor));
    let mut best = 0;
    for (i, v) in d.iter().enumerate() {
        if *v < d[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Tiles `(view, patch)` pairs side by side, one pair per row, each cell
/// fitted into `cell × cell`.
pub fn contact_sheet(pairs: &[(&Image, &Image)], cell: usize) -> Image {
    let mut sheet = Image::zeros(2 * cell, cell * pairs.len().max(1), 3);
    for (row, (a, b)) in pairs.iter().enumerate() {
        for (col, img) in [a, b].into_iter().enumerate() {
            let (w, h) = fit_long_side(img.width(), img.height(), cell, false);
            let small = img.resize(w, h);
            for c in 0..3 {
                let src_c = c.min(small.channels() - 1);
                for y in 0..h {
                    for x in 0..w {
                        sheet.set(c, col * cell + x, row * cell + y, small.get(src_c, x, y));
                    }
                }
            }
        }
    }
    sheet
}
