//! Optimization objectives with analytic gradients with respect to the
//! rendered view.

pub mod clip;
pub mod feature;
pub mod matting;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use clip::{clip_losses, clip_term, ClipLoss, TextTargets};
pub use feature::{
    content_loss, content_loss_with_grad, content_term, empty_grads, global_style_loss, global_style_loss_with_grad,
    global_style_term, local_semantic_loss, local_semantic_loss_with_grad, local_style_term, presence,
    select_reference, ClassStyleTarget, GlobalStyleTarget, LayerGrads, LocalLoss, LocalStyleInputs, StyleReference,
    MIN_ROI_POSITIONS,
};
pub use matting::{matting_laplacian, photorealism_loss, photorealism_loss_with_grad, MattingLaplacian};
pub use stats::{channel_stats, stats_loss, Stats};

use crate::error::{Error, Result};
use crate::image::{Image, Resampler};

/// Photorealism regularizer for one content view, evaluated at a working
/// resolution whose long side is at most `working`.
#[derive(Clone, Debug)]
pub struct PhotorealTerm {
    resampler: Option<Resampler>,
    laplacian: MattingLaplacian,
}

impl PhotorealTerm {
    pub fn new(content: &Image, eps: f64, working: usize) -> Result<Self> {
        let (w, h) = content.dims();
        let long = w.max(h);
        let resampler = (long > working).then(|| {
            let s = working as f64 / long as f64;
            let dw = ((w as f64 * s).round() as usize).max(1);
            let dh = ((h as f64 * s).round() as usize).max(1);
            Resampler::new(w, h, dw, dh)
        });
        let small;
        let base = match &resampler {
            Some(r) => {
                small = r.apply(content);
                &small
            }
            None => content,
        };
        Ok(PhotorealTerm {
            laplacian: matting_laplacian(base, eps)?,
            resampler,
        })
    }

    pub fn laplacian(&self) -> &MattingLaplacian {
        &self.laplacian
    }

    pub fn evaluate(&self, z: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
        let small;
        let zz = match &self.resampler {
            Some(r) => {
                if z.dims() != r.src_dims() {
                    return Err(Error::DimensionMismatch {
                        what: "photorealism input",
                        found: z.dims(),
                        expected: r.src_dims(),
                    });
                }
                small = r.apply(z);
                &small
            }
            None => z,
        };
        if !want_grad {
            return Ok((photorealism_loss(zz, &self.laplacian)?, None));
        }
        let (v, g) = photorealism_loss_with_grad(zz, &self.laplacian)?;
        let g = match &self.resampler {
            Some(r) => r.adjoint(&g),
            None => g,
        };
        Ok((v, Some(g)))
    }
}

fn check_pair(z: &Image, s: &Image) -> Result<()> {
    if z.dims() != s.dims() || z.channels() != s.channels() {
        return Err(Error::DimensionMismatch {
            what: "edited view",
            found: z.dims(),
            expected: s.dims(),
        });
    }
    Ok(())
}

/// Mean over all pixel components of `(z − s)²`.
pub fn edited_view_penalty(z: &Image, s: &Image) -> Result<f64> {
    check_pair(z, s)?;
    let n = z.data().len() as f64;
    Ok(z.data().iter().zip(s.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// Penalty and its gradient `2(z − s)/N` with respect to `z`.
pub fn edited_view_penalty_with_grad(z: &Image, s: &Image) -> Result<(f64, Image)> {
    let v = edited_view_penalty(z, s)?;
    let n = z.data().len() as f64;
    let data = z.data().iter().zip(s.data()).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((v, Image::from_planar(z.width(), z.height(), z.channels(), data)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub content: f64,
    pub photoreal: f64,
    pub global_style: f64,
    pub clip: f64,
    pub local: f64,
    pub edited: f64,
    /// The photorealism weight is zero for epochs before this one.
    pub pht_warmup_epochs: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 10.0,
            photoreal: 1e-3,
            global_style: 1.0,
            clip: 5.0,
            local: 0.1,
            edited: 1.0,
            pht_warmup_epochs: 2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.content,
            self.photoreal,
            self.global_style,
            self.clip,
            self.local,
            self.edited,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Weights in effect at `epoch`.
    pub fn at_epoch(&self, epoch: usize) -> LossWeights {
        let mut w = self.clone();
        if epoch < self.pht_warmup_epochs {
            w.photoreal = 0.0;
        }
        w
    }
}

/// Raw (unweighted) loss values of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub content: f64,
    pub photoreal: f64,
    pub global_style: f64,
    pub clip: f64,
    pub local: f64,
    /// Present only in edit-propagation mode.
    pub edited: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub name: String,
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<TermBreakdown>,
}

/// Weighted sum of the terms with the photorealism warm-up applied.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights, epoch: usize) -> Result<LossBreakdown> {
    let w = weights.at_epoch(epoch);
    let mut list: Vec<(&'static str, f64, f64)> = vec![
        ("content", terms.content, w.content),
        ("photoreal", terms.photoreal, w.photoreal),
        ("global_style", terms.global_style, w.global_style),
        ("clip", terms.clip, w.clip),
        ("local", terms.local, w.local),
    ];
    if let Some(e) = terms.edited {
        list.push(("edited", e, w.edited));
    }
    let mut out = Vec::with_capacity(list.len());
    let mut total = 0.0;
    for (name, raw, weight) in list {
        if !raw.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
        let weighted = if weight == 0.0 { 0.0 } else { weight * raw };
        total += weighted;
        out.push(TermBreakdown {
            name: name.to_string(),
            raw,
            weight,
            weighted,
        });
    }
    Ok(LossBreakdown { total, terms: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms() -> LossTerms {
        LossTerms {
            content: 0.5,
            photoreal: 20.0,
            global_style: 0.25,
            clip: 1.5,
            local: 3.0,
            edited: None,
        }
    }

    #[test]
    fn warmup_excludes_photoreal() {
        let w = LossWeights::default();
        let b0 = total_loss(&terms(), &w, 0).unwrap();
        assert_eq!(b0.total, 10.0 * 0.5 + 0.25 + 5.0 * 1.5 + 0.1 * 3.0);
        let b2 = total_loss(&terms(), &w, 2).unwrap();
        assert_eq!(b2.total, 10.0 * 0.5 + 1e-3 * 20.0 + 0.25 + 5.0 * 1.5 + 0.1 * 3.0);
        assert_eq!(b2.total, b2.terms.iter().map(|t| t.weighted).sum::<f64>());
    }

    #[test]
    fn zero_weights_give_zero_and_nan_is_named() {
        let w = LossWeights {
            content: 0.0,
            photoreal: 0.0,
            global_style: 0.0,
            clip: 0.0,
            local: 0.0,
            edited: 0.0,
            pht_warmup_epochs: 0,
        };
        assert_eq!(total_loss(&terms(), &w, 5).unwrap().total, 0.0);
        let mut t = terms();
        t.local = f64::NAN;
        match total_loss(&t, &LossWeights::default(), 3) {
            Err(Error::NonFiniteLoss(name)) => assert_eq!(name, "local"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn edited_penalty_black_white_is_one() {
        let b = Image::filled(4, 4, &[0.0; 3]);
        let w = Image::filled(4, 4, &[1.0; 3]);
        assert_eq!(edited_view_penalty(&b, &w).unwrap(), 1.0);
        assert_eq!(edited_view_penalty(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn photoreal_term_downsamples_with_adjoint_gradient() {
        let c = Image::from_fn(12, 10, 3, |ch, x, y| ((ch * 3 + x * 5 + y * 7) % 13) as f64 / 13.0);
        let t = PhotorealTerm::new(&c, 1e-7, 6).unwrap();
        assert_eq!(t.laplacian().dims(), (6, 5));
        let z = Image::from_fn(12, 10, 3, |ch, x, y| ((ch + x * y) % 5) as f64 / 5.0);
        let (_, g) = t.evaluate(&z, true).unwrap();
        let g = g.unwrap();
        for i in [0, 17, 55, 203, 359] {
            let mut p = z.clone();
            let mut m = z.clone();
            p.data_mut()[i] += 1e-5;
            m.data_mut()[i] -= 1e-5;
            let num = (t.evaluate(&p, false).unwrap().0 - t.evaluate(&m, false).unwrap().0) / 2e-5;
            assert!(
                (num - g.data()[i]).abs() <= 1e-4 * num.abs().max(1.0),
                "{i}: {num} {}",
                g.data()[i]
            );
        }
    }
}
