//! Global and directional text-embedding losses.

use crate::embedding::{cosine, cosine_grad, EmbeddingModel};
use crate::error::{Error, Result};
use crate::image::Image;

/// Text embeddings of the source and target prompts.
#[derive(Clone, Debug)]
pub struct TextTargets {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

impl TextTargets {
    pub fn new(em: &dyn EmbeddingModel, source_prompt: &str, target_prompt: &str) -> Result<Self> {
        if source_prompt.trim().is_empty() || target_prompt.trim().is_empty() {
            return Err(Error::InvalidArgument("text prompts must be non-empty".into()));
        }
        Ok(TextTargets {
            source: em.encode_text(source_prompt),
            target: em.encode_text(target_prompt),
        })
    }

    fn direction(&self) -> Vec<f64> {
        self.target.iter().zip(&self.source).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClipLoss {
    pub global: f64,
    pub directional: f64,
}

impl ClipLoss {
    pub fn total(&self) -> f64 {
        self.global + self.directional
    }
}

/// Both losses for `z` given the content view's image embedding; the
/// gradient with respect to `z` of `global + directional` when requested.
pub fn clip_term(
    em: &dyn EmbeddingModel,
    z: &Image,
    content_embedding: &[f64],
    text: &TextTargets,
    want_grad: bool,
) -> (ClipLoss, Option<Image>) {
    let ez = em.encode_image(z);
    let di: Vec<f64> = ez.iter().zip(content_embedding).map(|(a, b)| a - b).collect();
    let dt = text.direction();
    let loss = ClipLoss {
        global: 1.0 - cosine(&text.target, &ez),
        directional: 1.0 - cosine(&di, &dt),
    };
    let grad = want_grad.then(|| {
        let g: Vec<f64> = cosine_grad(&ez, &text.target)
            .iter()
            .zip(cosine_grad(&di, &dt))
            .map(|(a, b)| -a - b)
            .collect();
        em.encode_image_vjp(z, &g)
    });
    (loss, grad)
}

pub fn clip_losses(
    c: &Image,
    z: &Image,
    source_prompt: &str,
    target_prompt: &str,
    em: &dyn EmbeddingModel,
) -> Result<ClipLoss> {
    let text = TextTargets::new(em, source_prompt, target_prompt)?;
    Ok(clip_term(em, z, &em.encode_image(c), &text, false).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LexiconEmbedding;

    #[test]
    fn unchanged_view_has_unit_directional_loss() {
        let em = LexiconEmbedding::new();
        let c = Image::random(8, 8, 3, 1);
        let l = clip_losses(&c, &c, "a city by day", "a city at night", &em).unwrap();
        assert_eq!(l.directional, 1.0);
        assert!((0.0..=2.0).contains(&l.global));
        assert!(clip_losses(&c, &c, "", "night", &em).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let em = LexiconEmbedding::new();
        let c = Image::random(8, 8, 3, 2);
        let z = Image::random(8, 8, 3, 3);
        let text = TextTargets::new(&em, "day", "sunset").unwrap();
        let ec = em.encode_image(&c);
        let (_, g) = clip_term(&em, &z, &ec, &text, true);
        let g = g.unwrap();
        for i in (0..z.data().len()).step_by(7) {
            let mut p = z.clone();
            let mut m = z.clone();
            p.data_mut()[i] += 1e-6;
            m.data_mut()[i] -= 1e-6;
            let num = (clip_term(&em, &p, &ec, &text, false).0.total()
                - clip_term(&em, &m, &ec, &text, false).0.total())
                / 2e-6;
            assert!((num - g.data()[i]).abs() < 1e-6, "{i}: {num} vs {}", g.data()[i]);
        }
    }
}
