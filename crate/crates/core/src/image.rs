//! Planar rasters and label maps.
//!
//! [`Image`] is a channel-major (CHW) `f64` raster used both for RGB pictures
//! and for backbone feature maps. [`LabelMap`] stores one `u8` class index per
//! pixel. [`Resampler`] is a separable linear resize with an exact adjoint,
//! which is what lets losses computed at a reduced working resolution
//! propagate gradients back to full-resolution renders.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let mut img = Image::zeros(width, height, value.len());
        for (c, &v) in value.iter().enumerate() {
            img.plane_mut(c).fill(v);
        }
        img
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut img = Image::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        img
    }

    /// Uniform `[0, 1)` noise from a seeded stream.
    pub fn random(width: usize, height: usize, channels: usize, seed: u64) -> Self {
        use rand::Rng as _;
        let mut r = crate::rng::stream(seed, crate::rng::tag::FIXTURE, 0);
        let data = (0..width * height * channels).map(|_| r.gen::<f64>()).collect();
        Image::from_planar(width, height, channels, data)
    }

    pub fn from_planar(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "planar buffer size");
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// RGB triple at pixel index `i` (row-major).
    #[inline]
    pub fn rgb(&self, i: usize) -> [f64; 3] {
        let n = self.width * self.height;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    #[inline]
    pub fn set_rgb(&mut self, i: usize, v: [f64; 3]) {
        let n = self.width * self.height;
        self.data[i] = v[0];
        self.data[n + i] = v[1];
        self.data[2 * n + i] = v[2];
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Image, scale: f64) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Sets every channel of pixels where `keep` is false to zero.
    pub fn mask_in_place(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.pixel_count());
        for c in 0..self.channels {
            for (v, &k) in self.plane_mut(c).iter_mut().zip(keep) {
                if !k {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        Image::from_fn(w, h, self.channels, |c, x, y| self.get(c, x0 + x, y0 + y))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        if self.data.is_empty() {
            return 0.0;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Bilinear sample in continuous pixel coordinates, where pixel `(x, y)`
    /// has its center at `(x + 0.5, y + 0.5)`. Edges are clamped.
    pub fn sample_bilinear(&self, c: usize, px: f64, py: f64) -> f64 {
        let (x0, x1, fx) = bilinear_taps(px, self.width);
        let (y0, y1, fy) = bilinear_taps(py, self.height);
        let p = self.plane(c);
        let w = self.width;
        let a = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
        let b = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
        a * (1.0 - fy) + b * fy
    }

    /// Converts to 8-bit RGB, clamping to `[0,1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        assert_eq!(self.channels, 3, "to_rgb8 needs 3 channels");
        let n = self.pixel_count();
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            for v in self.rgb(i) {
                out.push(quantize(v));
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * 3);
        let mut img = Image::zeros(width, height, 3);
        for i in 0..width * height {
            img.set_rgb(
                i,
                [
                    bytes[3 * i] as f64 / 255.0,
                    bytes[3 * i + 1] as f64 / 255.0,
                    bytes[3 * i + 2] as f64 / 255.0,
                ],
            );
        }
        img
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_rgb8();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads any supported RGB(A) image as a 3-channel raster in `[0,1]`.
    pub fn load_rgb(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Image::from_rgb8(w as usize, h as usize, rgb.as_raw()))
    }

    /// Stores a single-channel float raster as a 16-bit grayscale PNG after
    /// mapping `[lo, hi]` to the full range.
    pub fn save_gray16(&self, channel: usize, lo: f64, hi: f64, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let buf: Vec<u16> = self
            .plane(channel)
            .iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img =
            image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(self.width as u32, self.height as u32, buf)
                .expect("buffer size");
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Indices and weight for bilinear interpolation along one axis.
#[inline]
pub(crate) fn bilinear_taps(p: f64, n: usize) -> (usize, usize, f64) {
    let t = (p - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (t.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, t - i0 as f64)
}

/// One class index per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        LabelMap {
            width,
            height,
            data: vec![label; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "label buffer size");
        LabelMap { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        LabelMap { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> LabelMap {
        LabelMap::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Nearest-neighbour resize using pixel-center alignment.
    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelMap {
        LabelMap::from_fn(width, height, |x, y| {
            let sx = nearest_index(x, width, self.width);
            let sy = nearest_index(y, height, self.height);
            self.get(sx, sy)
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<LabelMap> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let l = img.to_luma8();
        let (w, h) = l.dimensions();
        Ok(LabelMap::from_vec(w as usize, h as usize, l.into_raw()))
    }
}

/// Source index for nearest sampling of destination index `i`.
#[inline]
pub fn nearest_index(i: usize, dst: usize, src: usize) -> usize {
    (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
}

/// Separable linear resampling with an exact adjoint.
///
/// Downsampling axes use area averaging, upsampling axes use bilinear
/// interpolation with half-pixel alignment.
#[derive(Clone, Debug)]
pub struct Resampler {
    src: (usize, usize),
    dst: (usize, usize),
    x_taps: Vec<Vec<(usize, f64)>>,
    y_taps: Vec<Vec<(usize, f64)>>,
}

impl Resampler {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Self {
        assert!(src_w > 0 && src_h > 0 && dst_w > 0 && dst_h > 0, "empty resample");
        Resampler {
            src: (src_w, src_h),
            dst: (dst_w, dst_h),
            x_taps: axis_taps(src_w, dst_w),
            y_taps: axis_taps(src_h, dst_h),
        }
    }

    pub fn src_dims(&self) -> (usize, usize) {
        self.src
    }

    pub fn dst_dims(&self) -> (usize, usize) {
        self.dst
    }

    pub fn apply(&self, img: &Image) -> Image {
        assert_eq!(img.dims(), self.src, "resampler source dims");
        let (sw, sh) = self.src;
        let (dw, dh) = self.dst;
        let mut out = Image::zeros(dw, dh, img.channels());
        let mut tmp = vec![0.0; dw * sh];
        for c in 0..img.channels() {
            let p = img.plane(c);
            for y in 0..sh {
                let row = &p[y * sw..(y + 1) * sw];
                for (x, taps) in self.x_taps.iter().enumerate() {
                    tmp[y * dw + x] = taps.iter().map(|&(i, w)| w * row[i]).sum();
                }
            }
            let o = out.plane_mut(c);
            for (y, taps) in self.y_taps.iter().enumerate() {
                for x in 0..dw {
                    o[y * dw + x] = taps.iter().map(|&(i, w)| w * tmp[i * dw + x]).sum();
                }
            }
        }
        out
    }

    /// Transpose of [`Resampler::apply`]: maps a gradient on the destination
    /// grid back onto the source grid.
    pub fn adjoint(&self, grad: &Image) -> Image {
        assert_eq!(grad.dims(), self.dst, "resampler adjoint dims");
        let (sw, sh) = self.src;
        let (dw, _) = self.dst;
        let mut out = Image::zeros(sw, sh, grad.channels());
        let mut tmp = vec![0.0; dw * sh];
        for c in 0..grad.channels() {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            let g = grad.plane(c);
            for (y, taps) in self.y_taps.iter().enumerate() {
                for &(i, w) in taps {
                    for x in 0..dw {
                        tmp[i * dw + x] += w * g[y * dw + x];
                    }
                }
            }
            let o = out.plane_mut(c);
            for y in 0..sh {
                for (x, taps) in self.x_taps.iter().enumerate() {
                    let v = tmp[y * dw + x];
                    for &(i, w) in taps {
                        o[y * sw + i] += w * v;
                    }
                }
            }
        }
        out
    }
}

fn axis_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if dst == src {
        return (0..dst).map(|i| vec![(i, 1.0)]).collect();
    }
    if dst < src {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let lo = i as f64 * scale;
                let hi = lo + scale;
                let mut taps = Vec::new();
                let mut j = lo.floor() as usize;
                while (j as f64) < hi && j < src {
                    let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((j, overlap / scale));
                    }
                    j += 1;
                }
                taps
            })
            .collect()
    } else {
        (0..dst)
            .map(|i| {
                let p = (i as f64 + 0.5) * src as f64 / dst as f64;
                let (a, b, f) = bilinear_taps(p, src);
                if a == b {
                    vec![(a, 1.0)]
                } else {
                    vec![(a, 1.0 - f), (b, f)]
                }
            })
            .collect()
    }
}

/// Dimensions scaled so the long side equals `side` (never upscaled when
/// `shrink_only`).
pub fn fit_long_side(w: usize, h: usize, side: usize, shrink_only: bool) -> (usize, usize) {
    let long = w.max(h);
    if shrink_only && long <= side {
        return (w, h);
    }
    let s = side as f64 / long as f64;
    (
        ((w as f64 * s).round() as usize).max(1),
        ((h as f64 * s).round() as usize).max(1),
    )
}

impl Image {
    /// Linear resize (area average when shrinking, bilinear when growing).
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if self.dims() == (width, height) {
            return self.clone();
        }
        Resampler::new(self.width, self.height, width, height).apply(self)
    }
}

/// 2×2 average pooling used to build image pyramids (odd trailing rows and
/// columns are dropped).
pub fn avg_pool2(img: &Image) -> Image {
    let w = (img.width() / 2).max(1);
    let h = (img.height() / 2).max(1);
    Image::from_fn(w, h, img.channels(), |c, x, y| {
        let x1 = (2 * x + 1).min(img.width() - 1);
        let y1 = (2 * y + 1).min(img.height() - 1);
        0.25 * (img.get(c, 2 * x, 2 * y) + img.get(c, x1, 2 * y) + img.get(c, 2 * x, y1) + img.get(c, x1, y1))
    })
}

/// PSNR in dB for signals in `[0,1]`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
