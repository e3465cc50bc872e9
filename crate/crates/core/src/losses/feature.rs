//! Backbone-feature losses: content, global style statistics and the
//! semantics-aware local (ROI) style loss.
//!
//! The `*_term` kernels work on precomputed [`FeatureMaps`] so one forward
//! and one backward pass of the stylized view can serve every feature loss.
//! Gradients are accumulated per layer into `grads[l - 1]`.

use super::stats::{channel_stats, labels_at, resize_mask, stats_loss, stats_loss_backward, Stats};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMaps};
use crate::image::{Image, LabelMap};
use crate::scene::{ClassId, SemanticClassSet, SENTINEL};

/// Classes with fewer feature positions at a layer are skipped there.
pub const MIN_ROI_POSITIONS: usize = 4;

/// Per-layer gradient slots, `grads[l - 1]` for layer `l`.
pub type LayerGrads = Vec<Option<Image>>;

pub fn empty_grads(depth: usize) -> LayerGrads {
    vec![None; depth]
}

fn slot<'a>(grads: &'a mut [Option<Image>], maps: &FeatureMaps, l: usize) -> &'a mut Image {
    grads[l - 1].get_or_insert_with(|| {
        let f = maps.layer(l);
        Image::zeros(f.width(), f.height(), f.channels())
    })
}

fn check_same(a: &Image, b: &Image, what: &'static str) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch {
            what,
            found: a.dims(),
            expected: b.dims(),
        });
    }
    Ok(())
}

/// Bit `i` set when label `i` occurs (background excluded).
pub fn presence(labels: &LabelMap) -> u16 {
    labels
        .data()
        .iter()
        .filter(|&&l| l != SENTINEL && l < 16)
        .fold(0u16, |m, &l| m | (1 << l))
}

fn max_layer(layers: &[usize]) -> usize {
    layers.iter().copied().max().unwrap_or(1)
}

/// Mean over `C·H·W` of `(F_z − F_c)²`, summed over `layers`.
pub fn content_term(
    fz: &FeatureMaps,
    fc: &FeatureMaps,
    layers: &[usize],
    weight: f64,
    mut grads: Option<&mut [Option<Image>]>,
) -> f64 {
    let mut total = 0.0;
    for &l in layers {
        let (a, b) = (fz.layer(l), fc.layer(l));
        let n = a.data().len() as f64;
        total += a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        if let Some(g) = grads.as_deref_mut() {
            let dst = slot(g, fz, l);
            for ((d, x), y) in dst.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *d += weight * 2.0 * (x - y) / n;
            }
        }
    }
    total
}

/// Channel statistics of a style image at each style layer.
#[derive(Clone, Debug)]
pub struct GlobalStyleTarget {
    pub layers: Vec<(usize, Stats)>,
}

impl GlobalStyleTarget {
    pub fn new(fx: &FeatureExtractor, style: &Image) -> Self {
        let maps = fx.extract_to(style, max_layer(&fx.style_layers));
        Self::from_maps(&maps, &fx.style_layers)
    }

    pub fn from_maps(maps: &FeatureMaps, layers: &[usize]) -> Self {
        GlobalStyleTarget {
            layers: layers
                .iter()
                .map(|&l| (l, channel_stats(maps.layer(l), None).expect("non-empty layer")))
                .collect(),
        }
    }
}

/// `Σ_l (1/C)(‖Δμ‖² + ‖Δσ‖²)` between the target and `z`'s features, with
/// `z` statistics restricted to `mask` (given at input resolution).
pub fn global_style_term(
    fz: &FeatureMaps,
    mask: Option<&[bool]>,
    target: &GlobalStyleTarget,
    weight: f64,
    mut grads: Option<&mut [Option<Image>]>,
) -> f64 {
    let (iw, ih) = fz.input_dims();
    let mut total = 0.0;
    for (l, t) in &target.layers {
        let f = fz.layer(*l);
        let m = mask.map(|m| resize_mask(m, iw, ih, f.width(), f.height()));
        let Some(s) = channel_stats(f, m.as_deref()) else {
            continue;
        };
        total += stats_loss(t, &s);
        if let Some(g) = grads.as_deref_mut() {
            stats_loss_backward(f, m.as_deref(), &s, t, weight, slot(g, fz, *l));
        }
    }
    total
}

/// Per-class, per-layer statistics of a labeled style image.
#[derive(Clone, Debug)]
pub struct ClassStyleTarget {
    /// Classes occurring in the full-resolution label map.
    pub present: u16,
    /// `(layer, stats[class])`; `None` where the class has too few positions.
    pub layers: Vec<(usize, Vec<Option<Stats>>)>,
}

impl ClassStyleTarget {
    pub fn new(fx: &FeatureExtractor, style: &Image, labels: &LabelMap, classes: &SemanticClassSet) -> Result<Self> {
        if style.dims() != labels.dims() {
            return Err(Error::DimensionMismatch {
                what: "style labels",
                found: labels.dims(),
                expected: style.dims(),
            });
        }
        let maps = fx.extract_to(style, max_layer(&fx.style_layers));
        Ok(Self::from_maps(&maps, labels, &fx.style_layers, classes))
    }

    pub fn from_maps(maps: &FeatureMaps, labels: &LabelMap, layers: &[usize], classes: &SemanticClassSet) -> Self {
        let present = presence(labels);
        let layers = layers
            .iter()
            .map(|&l| {
                let f = maps.layer(l);
                let lab = labels_at(labels, f);
                let per_class = (0..classes.len())
                    .map(|c| {
                        let m: Vec<bool> = lab.data().iter().map(|&v| v as usize == c).collect();
                        channel_stats(f, Some(&m)).filter(|s| s.count >= MIN_ROI_POSITIONS)
                    })
                    .collect();
                (l, per_class)
            })
            .collect();
        ClassStyleTarget { present, layers }
    }

    fn stats(&self, layer: usize, class: ClassId) -> Option<&Stats> {
        self.layers
            .iter()
            .find(|(l, _)| *l == layer)
            .and_then(|(_, s)| s.get(class as usize))
            .and_then(|s| s.as_ref())
    }
}

/// Which style statistics a content class is matched against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleReference {
    Patch(ClassId),
    Full(ClassId),
}

/// The class itself in the patch, its nearest ancestor in the patch, the
/// class in the full style image, then its nearest ancestor there.
pub fn select_reference(
    class: ClassId,
    patch: &ClassStyleTarget,
    full: &ClassStyleTarget,
    classes: &SemanticClassSet,
) -> Option<StyleReference> {
    let has = |mask: u16, c: ClassId| mask & (1 << c) != 0;
    if has(patch.present, class) {
        return Some(StyleReference::Patch(class));
    }
    if let Some(a) = classes.rematch(class, patch.present) {
        return Some(StyleReference::Patch(a));
    }
    if has(full.present, class) {
        return Some(StyleReference::Full(class));
    }
    classes.rematch(class, full.present).map(StyleReference::Full)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalLoss {
    pub value: f64,
    /// Content classes for which no style reference exists anywhere.
    pub no_reference: usize,
}

/// `Σ_l Σ_i (1/C)(‖Δμ_i‖² + ‖Δσ_i‖²)` over the classes present in `z_labels`.
pub fn local_style_term(
    fz: &FeatureMaps,
    z_labels: &LabelMap,
    patch: &ClassStyleTarget,
    full: &ClassStyleTarget,
    classes: &SemanticClassSet,
    weight: f64,
    mut grads: Option<&mut [Option<Image>]>,
) -> LocalLoss {
    let z_present = presence(z_labels);
    let mut refs = Vec::new();
    let mut no_reference = 0;
    for c in 0..classes.len() as ClassId {
        if z_present & (1 << c) == 0 {
            continue;
        }
        match select_reference(c, patch, full, classes) {
            Some(r) => refs.push((c, r)),
            None => no_reference += 1,
        }
    }
    let mut total = 0.0;
    for (l, _) in &patch.layers {
        let f = fz.layer(*l);
        let lab = labels_at(z_labels, f);
        for &(c, r) in &refs {
            let target = match r {
                StyleReference::Patch(k) => patch.stats(*l, k),
                StyleReference::Full(k) => full.stats(*l, k),
            };
            let Some(t) = target else {
                continue;
            };
            let m: Vec<bool> = lab.data().iter().map(|&v| v == c).collect();
            let Some(s) = channel_stats(f, Some(&m)).filter(|s| s.count >= MIN_ROI_POSITIONS) else {
                continue;
            };
            total += stats_loss(t, &s);
            if let Some(g) = grads.as_deref_mut() {
                stats_loss_backward(f, Some(&m), &s, t, weight, slot(g, fz, *l));
            }
        }
    }
    LocalLoss {
        value: total,
        no_reference,
    }
}

/// Content loss between a content view `c` and a stylized view `z`.
pub fn content_loss(c: &Image, z: &Image, fx: &FeatureExtractor) -> Result<f64> {
    Ok(content_loss_with_grad(c, z, fx, false)?.0)
}

/// Content loss and, when `want_grad`, its gradient with respect to `z`.
pub fn content_loss_with_grad(
    c: &Image,
    z: &Image,
    fx: &FeatureExtractor,
    want_grad: bool,
) -> Result<(f64, Option<Image>)> {
    check_same(z, c, "content view")?;
    let depth = max_layer(&fx.content_layers);
    let fz = fx.extract_to(z, depth);
    let fc = fx.extract_to(c, depth);
    let mut grads = empty_grads(depth);
    let v = content_term(&fz, &fc, &fx.content_layers, 1.0, want_grad.then_some(&mut grads[..]));
    Ok((v, want_grad.then(|| fx.backbone.backward(&fz, &grads))))
}

/// Global style loss of `z` (statistics over `z_mask`) against `style`.
pub fn global_style_loss(style: &Image, z: &Image, z_mask: Option<&[bool]>, fx: &FeatureExtractor) -> Result<f64> {
    Ok(global_style_loss_with_grad(style, z, z_mask, fx, false)?.0)
}

pub fn global_style_loss_with_grad(
    style: &Image,
    z: &Image,
    z_mask: Option<&[bool]>,
    fx: &FeatureExtractor,
    want_grad: bool,
) -> Result<(f64, Option<Image>)> {
    if let Some(m) = z_mask {
        if m.len() != z.pixel_count() {
            return Err(Error::InvalidArgument("foreground mask does not match the view".into()));
        }
    }
    let target = GlobalStyleTarget::new(fx, style);
    let depth = max_layer(&fx.style_layers);
    let fz = fx.extract_to(z, depth);
    let mut grads = empty_grads(depth);
    let v = global_style_term(&fz, z_mask, &target, 1.0, want_grad.then_some(&mut grads[..]));
    Ok((v, want_grad.then(|| fx.backbone.backward(&fz, &grads))))
}

/// Inputs of the local semantic loss apart from the stylized view.
pub struct LocalStyleInputs<'a> {
    pub patch: &'a Image,
    pub patch_labels: &'a LabelMap,
    pub full: &'a Image,
    pub full_labels: &'a LabelMap,
    pub classes: &'a SemanticClassSet,
}

pub fn local_semantic_loss(
    z: &Image,
    z_labels: &LabelMap,
    style: &LocalStyleInputs<'_>,
    fx: &FeatureExtractor,
) -> Result<LocalLoss> {
    Ok(local_semantic_loss_with_grad(z, z_labels, style, fx, false)?.0)
}

pub fn local_semantic_loss_with_grad(
    z: &Image,
    z_labels: &LabelMap,
    style: &LocalStyleInputs<'_>,
    fx: &FeatureExtractor,
    want_grad: bool,
) -> Result<(LocalLoss, Option<Image>)> {
    if z_labels.dims() != z.dims() {
        return Err(Error::DimensionMismatch {
            what: "view labels",
            found: z_labels.dims(),
            expected: z.dims(),
        });
    }
    let patch = ClassStyleTarget::new(fx, style.patch, style.patch_labels, style.classes)?;
    let full = ClassStyleTarget::new(fx, style.full, style.full_labels, style.classes)?;
    let depth = max_layer(&fx.style_layers);
    let fz = fx.extract_to(z, depth);
    let mut grads = empty_grads(depth);
    let v = local_style_term(
        &fz,
        z_labels,
        &patch,
        &full,
        style.classes,
        1.0,
        want_grad.then_some(&mut grads[..]),
    );
    Ok((v, want_grad.then(|| fx.backbone.backward(&fz, &grads))))
}
