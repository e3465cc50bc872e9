use crate::error::{Error, Result};
use crate::image::Image;

/// Texel `(i, j)` (column, row from the top) has its center at
/// `u = (i + 0.5) / W`, `v = 1 - (j + 0.5) / H`.
///
/// This is the single convention shared by the rasterizer, texture sampling,
/// semantic baking and neural-field baking.
#[inline]
pub fn texel_center(i: usize, j: usize, w: usize, h: usize) -> [f64; 2] {
    [(i as f64 + 0.5) / w as f64, 1.0 - (j as f64 + 0.5) / h as f64]
}

/// Continuous pixel coordinates (pixel centers at `+0.5`) of a UV.
#[inline]
pub fn uv_to_pixel(uv: [f64; 2], w: usize, h: usize) -> (f64, f64) {
    (uv[0] * w as f64, (1.0 - uv[1]) * h as f64)
}

#[inline]
pub fn nearest_texel(uv: [f64; 2], w: usize, h: usize) -> (usize, usize) {
    let (px, py) = uv_to_pixel(uv, w, h);
    (
        (px.floor().max(0.0) as usize).min(w - 1),
        (py.floor().max(0.0) as usize).min(h - 1),
    )
}

/// RGB texture with all channels in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureImage(Image);

impl TextureImage {
    pub fn new(image: Image) -> Result<Self> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::InvalidArgument("texture must be at least 1x1".into()));
        }
        if image.channels() != 3 {
            return Err(Error::InvalidArgument(format!(
                "texture must have 3 channels, got {}",
                image.channels()
            )));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("texture values must lie in [0,1]".into()));
        }
        Ok(TextureImage(image))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn sample_bilinear(&self, uv: [f64; 2]) -> [f64; 3] {
        let (px, py) = uv_to_pixel(uv, self.width(), self.height());
        [
            self.0.sample_bilinear(0, px, py),
            self.0.sample_bilinear(1, px, py),
            self.0.sample_bilinear(2, px, py),
        ]
    }

    pub fn sample_nearest(&self, uv: [f64; 2]) -> [f64; 3] {
        let (i, j) = nearest_texel(uv, self.width(), self.height());
        self.0.rgb(j * self.width() + i)
    }
}
