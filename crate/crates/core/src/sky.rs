//! Style-aligned equirectangular sky synthesis by joint multi-window latent
//! denoising.
//!
//! Directions use `+y` up. Longitude `λ` and latitude `φ` map to
//! `(−cos φ sin λ, sin φ, cos φ cos λ)`, so longitude grows to the right of a
//! camera looking along `+z` with the render camera's handedness. On a canvas
//! of `W × H` texels (`W = 2H`) column `x` covers longitudes
//! `[−180 + 360x/W, −180 + 360(x+1)/W)` and row `y` latitudes from `+90` down.
//!
//! Each step warps every 90° window out of the latent canvas (gnomonic
//! projection, bilinear gather), denoises it with the backend, and writes
//! back the per-texel average of all windows covering that texel. The
//! inverse warp is also a gather: every canvas texel inside a window's
//! frustum samples the tile bilinearly with unit weight.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::geom::Vec3;
use crate::image::{Image, Resampler};
use crate::metrics::perceptual_distance_with_grad;
use crate::style::StyleReference;
use crate::{par, rng};

pub const WINDOW_FOV_DEG: f64 = 90.0;
pub const LATENT_FACTOR: usize = 8;
pub const LATENT_CHANNELS: usize = 4;
pub const DEFAULT_HEIGHT: usize = 1024;
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_WINDOWS: usize = 26;
/// Smallest lattice (8 longitudes per ring) whose 90° windows cover the sphere.
pub const MIN_WINDOWS: usize = 26;
pub const RING_LATITUDES: [f64; 3] = [-60.0, 0.0, 60.0];
pub const TRAIN_TIMESTEPS: usize = 1000;
/// Latent columns copied across the seam on each side before decoding.
const SEAM_PAD: usize = 2;

pub fn direction(lon_deg: f64, lat_deg: f64) -> Vec3 {
    let (l, p) = (lon_deg.to_radians(), lat_deg.to_radians());
    Vec3::new(-p.cos() * l.sin(), p.sin(), p.cos() * l.cos())
}

/// `(longitude, latitude)` in degrees of a non-zero direction.
pub fn lon_lat(d: Vec3) -> (f64, f64) {
    let d = d.normalized();
    ((-d.x).atan2(d.z).to_degrees(), d.y.clamp(-1.0, 1.0).asin().to_degrees())
}

/// Continuous canvas coordinates (texel `(x, y)` centered at `(x+0.5, y+0.5)`).
pub fn equirect_coords(lon_deg: f64, lat_deg: f64, w: usize, h: usize) -> (f64, f64) {
    (
        (lon_deg + 180.0) / 360.0 * w as f64,
        (90.0 - lat_deg) / 180.0 * h as f64,
    )
}

/// Direction through the center of canvas texel `(x, y)`.
pub fn texel_direction(x: usize, y: usize, w: usize, h: usize) -> Vec3 {
    let lon = (x as f64 + 0.5) / w as f64 * 360.0 - 180.0;
    let lat = 90.0 - (y as f64 + 0.5) / h as f64 * 180.0;
    direction(lon, lat)
}

/// Bilinear sample with longitude wrap and clamped latitude.
pub fn sample_equirect(img: &Image, c: usize, px: f64, py: f64) -> f64 {
    let (w, h) = img.dims();
    let u = px - 0.5;
    let x0f = u.floor();
    let fx = u - x0f;
    let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let v = (py - 0.5).clamp(0.0, (h - 1) as f64);
    let y0 = (v.floor() as usize).min(h - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fy = v - y0 as f64;
    let p = img.plane(c);
    let a = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
    let b = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
    a * (1.0 - fy) + b * fy
}

/// RGB of a panorama in world direction `dir`.
pub fn sample_direction(pano: &Image, dir: Vec3) -> [f64; 3] {
    let (lon, lat) = lon_lat(dir);
    let (px, py) = equirect_coords(lon, lat, pano.width(), pano.height());
    [0, 1, 2].map(|c| sample_equirect(pano, c.min(pano.channels() - 1), px, py))
}

/// Latent canvas covering the full sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct EquirectCanvas {
    pub latent: Image,
}

impl EquirectCanvas {
    pub fn zeros(h_lat: usize, channels: usize) -> Result<Self> {
        Self::new(Image::zeros(2 * h_lat, h_lat, channels))
    }

    pub fn new(latent: Image) -> Result<Self> {
        if latent.height() < 2 || latent.width() != 2 * latent.height() {
            return Err(Error::InvalidArgument(format!(
                "equirect canvas must be 2H × H, got {:?}",
                latent.dims()
            )));
        }
        Ok(EquirectCanvas { latent })
    }

    /// Standard-normal latent drawn from `seed`.
    pub fn noise(h_lat: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut g = rng::stream(seed, rng::tag::SKY_NOISE, 0);
        let n = 2 * h_lat * h_lat * channels;
        let data = (0..n).map(|_| StandardNormal.sample(&mut g)).collect();
        Self::new(Image::from_planar(2 * h_lat, h_lat, channels, data))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.latent.dims()
    }
}

/// A 90° perspective window with precomputed sampling maps for one canvas size.
#[derive(Clone, Debug)]
pub struct BFoVWindow {
    pub lon_deg: f64,
    pub lat_deg: f64,
    pub fov_deg: f64,
    /// Tile side in latent texels.
    pub size: usize,
    pub canvas_dims: (usize, usize),
    basis: (Vec3, Vec3, Vec3),
    /// Canvas coordinates sampled by each tile texel.
    forward_map: Vec<(f64, f64)>,
    /// `(canvas texel, tile x, tile y)` for every canvas texel in the frustum.
    inverse_map: Vec<(usize, f64, f64)>,
}

/// Orthonormal `(right, up, forward)` matching the render camera's
/// convention (`right = forward × up`).
fn window_basis(forward: Vec3) -> (Vec3, Vec3, Vec3) {
    let hint = if forward.dot(Vec3::Y).abs() > 0.999 {
        Vec3::new(0.0, 0.0, -1.0)
    } else {
        Vec3::Y
    };
    let right = forward.cross(hint).normalized();
    let up = right.cross(forward);
    (right, up, forward)
}

impl BFoVWindow {
    pub fn new(lon_deg: f64, lat_deg: f64, size: usize, canvas_dims: (usize, usize)) -> Result<Self> {
        let (w, h) = canvas_dims;
        if size == 0 || w != 2 * h || h == 0 {
            return Err(Error::InvalidArgument(
                "window needs a positive size and a 2H × H canvas".into(),
            ));
        }
        if !(-90.0..=90.0).contains(&lat_deg) || !lon_deg.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "window center ({lon_deg}, {lat_deg}) invalid"
            )));
        }
        let basis = window_basis(direction(lon_deg, lat_deg));
        let (r, u, f) = basis;
        let tan = (WINDOW_FOV_DEG / 2.0).to_radians().tan();
        let s = size as f64;
        let mut forward_map = Vec::with_capacity(size * size);
        for j in 0..size {
            for i in 0..size {
                let x = (2.0 * (i as f64 + 0.5) / s - 1.0) * tan;
                let y = (1.0 - 2.0 * (j as f64 + 0.5) / s) * tan;
                let (lon, lat) = lon_lat(f + r * x + u * y);
                forward_map.push(equirect_coords(lon, lat, w, h));
            }
        }
        let mut inverse_map = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let d = texel_direction(x, y, w, h);
                let z = d.dot(f);
                if z <= 0.0 {
                    continue;
                }
                let px = d.dot(r) / z / tan;
                let py = d.dot(u) / z / tan;
                if px.abs() <= 1.0 && py.abs() <= 1.0 {
                    inverse_map.push((y * w + x, (px + 1.0) / 2.0 * s, (1.0 - py) / 2.0 * s));
                }
            }
        }
        Ok(BFoVWindow {
            lon_deg,
            lat_deg,
            fov_deg: WINDOW_FOV_DEG,
            size,
            canvas_dims,
            basis,
            forward_map,
            inverse_map,
        })
    }

    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        self.basis
    }

    /// Canvas texels this window writes back to.
    pub fn covered_texels(&self) -> impl Iterator<Item = usize> + '_ {
        self.inverse_map.iter().map(|e| e.0)
    }

    /// Canvas coordinates the tile center samples.
    pub fn center_coords(&self) -> (f64, f64) {
        let (lon, lat) = lon_lat(self.basis.2);
        equirect_coords(lon, lat, self.canvas_dims.0, self.canvas_dims.1)
    }
}

/// Optional random perturbation of the lattice centers, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub seed: u64,
    pub max_deg: f64,
}

/// Lattice of `n = 3k + 2` windows (`k ≥ 8`): rings of `k` longitudes at
/// latitudes −60°, 0° and 60° plus both poles.
pub fn sample_bfov_windows(
    canvas_dims: (usize, usize),
    n_windows: usize,
    size: usize,
    jitter: Option<Jitter>,
) -> Result<Vec<BFoVWindow>> {
    if n_windows < MIN_WINDOWS || !(n_windows - 2).is_multiple_of(3) {
        return Err(Error::InvalidArgument(format!(
            "window count must be 3k + 2 with k ≥ 8 (at least {MIN_WINDOWS}), got {n_windows}"
        )));
    }
    let k = (n_windows - 2) / 3;
    let mut centers: Vec<(f64, f64)> = RING_LATITUDES
        .iter()
        .flat_map(|&lat| (0..k).map(move |i| (-180.0 + 360.0 * i as f64 / k as f64, lat)))
        .collect();
    centers.push((0.0, 90.0));
    centers.push((0.0, -90.0));
    if let Some(j) = jitter {
        let mut g = rng::stream(j.seed, rng::tag::WINDOW_JITTER, 0);
        for c in &mut centers {
            c.0 += g.gen_range(-j.max_deg..=j.max_deg);
            c.1 = (c.1 + g.gen_range(-j.max_deg..=j.max_deg)).clamp(-90.0, 90.0);
        }
    }
    let windows = par::map_range(centers.len(), |i| {
        BFoVWindow::new(centers[i].0, centers[i].1, size, canvas_dims)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if coverage_mask(&windows, canvas_dims).iter().any(|&c| !c) {
        return Err(Error::InvalidArgument("windows do not cover every canvas texel".into()));
    }
    Ok(windows)
}

/// Texels written by at least one window.
pub fn coverage_mask(windows: &[BFoVWindow], canvas_dims: (usize, usize)) -> Vec<bool> {
    let mut m = vec![false; canvas_dims.0 * canvas_dims.1];
    for w in windows {
        for t in w.covered_texels() {
            m[t] = true;
        }
    }
    m
}

/// Tile of `window` gathered from `canvas` (any channel count).
pub fn warp_equirect_to_perspective(canvas: &Image, window: &BFoVWindow) -> Image {
    assert_eq!(canvas.dims(), window.canvas_dims, "canvas dims");
    let s = window.size;
    let mut tile = Image::zeros(s, s, canvas.channels());
    for c in 0..canvas.channels() {
        let plane = tile.plane_mut(c);
        for (k, &(px, py)) in window.forward_map.iter().enumerate() {
            plane[k] = sample_equirect(canvas, c, px, py);
        }
    }
    tile
}

/// Canvas-sized contribution of `tile` plus its per-texel weight (1 inside
/// the window frustum, 0 elsewhere).
pub fn warp_perspective_to_equirect(tile: &Image, window: &BFoVWindow) -> (Image, Vec<f64>) {
    let (w, h) = window.canvas_dims;
    let mut out = Image::zeros(w, h, tile.channels());
    let mut weight = vec![0.0; w * h];
    for &(t, tx, ty) in &window.inverse_map {
        weight[t] = 1.0;
        for c in 0..tile.channels() {
            out.plane_mut(c)[t] = tile.sample_bilinear(c, tx, ty);
        }
    }
    (out, weight)
}

/// Replaces every covered texel by the average of the windows' tiles.
/// Texels no window covers keep their value.
fn scatter_average(canvas: &mut Image, windows: &[BFoVWindow], tiles: &[Image]) {
    let (w, h) = canvas.dims();
    let ch = canvas.channels();
    let mut sum = vec![0.0; w * h * ch];
    let mut weight = vec![0.0; w * h];
    for (win, tile) in windows.iter().zip(tiles) {
        for &(t, tx, ty) in &win.inverse_map {
            weight[t] += 1.0;
            for c in 0..ch {
                sum[c * w * h + t] += tile.sample_bilinear(c, tx, ty);
            }
        }
    }
    let n = w * h;
    for c in 0..ch {
        let plane = canvas.plane_mut(c);
        for t in 0..n {
            if weight[t] > 0.0 {
                plane[t] = sum[c * n + t] / weight[t];
            }
        }
    }
}

/// One DDIM timestep and its successor (`None` on the final step).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timestep {
    pub index: usize,
    pub t: usize,
    pub next: Option<usize>,
}

/// Evenly spaced descending timesteps ending at 0.
pub fn ddim_timesteps(steps: usize) -> Vec<Timestep> {
    let stride = (TRAIN_TIMESTEPS / steps.max(1)).max(1);
    let ts: Vec<usize> = (0..steps)
        .rev()
        .map(|k| (k * stride).min(TRAIN_TIMESTEPS - 1))
        .collect();
    (0..steps)
        .map(|i| Timestep {
            index: i,
            t: ts[i],
            next: ts.get(i + 1).copied(),
        })
        .collect()
}

/// Latent-diffusion backend: autoencoder plus one denoising update.
pub trait DenoiserBackend: Send + Sync {
    fn name(&self) -> &str;
    fn latent_channels(&self) -> usize;
    /// Pixels per latent texel along each axis.
    fn scale_factor(&self) -> usize;
    fn encode(&self, img: &Image) -> Result<Image>;
    fn decode(&self, latent: &Image) -> Result<Image>;
    /// `(∂decode/∂latent)ᵀ · grad`.
    fn decode_vjp(&self, latent: &Image, grad: &Image) -> Result<Image>;
    fn denoise_step(&self, latent: &Image, step: &Timestep, prompt: &str) -> Result<Image>;
}

/// Linear autoencoder shared by the mocks: pixel = 0.5 + 0.25·latent on the
/// first three channels, bilinearly upsampled; encoding is its area-average
/// inverse.
#[derive(Clone, Copy, Debug)]
struct LinearCodec;

impl LinearCodec {
    fn decode(latent: &Image) -> Image {
        let (w, h) = latent.dims();
        let rgb = Image::from_fn(w, h, 3, |c, x, y| {
            0.5 + 0.25 * latent.get(c.min(latent.channels() - 1), x, y)
        });
        Resampler::new(w, h, w * LATENT_FACTOR, h * LATENT_FACTOR).apply(&rgb)
    }

    fn decode_vjp(latent: &Image, grad: &Image) -> Image {
        let (w, h) = latent.dims();
        let g = Resampler::new(w, h, w * LATENT_FACTOR, h * LATENT_FACTOR).adjoint(grad);
        let mut out = Image::zeros(w, h, latent.channels());
        for c in 0..3.min(latent.channels()) {
            for (o, v) in out.plane_mut(c).iter_mut().zip(g.plane(c)) {
                *o = 0.25 * v;
            }
        }
        out
    }

    fn encode(img: &Image) -> Result<Image> {
        let (w, h) = img.dims();
        if w % LATENT_FACTOR != 0 || h % LATENT_FACTOR != 0 || img.channels() != 3 {
            return Err(Error::InvalidArgument(format!(
                "encoder input must be RGB with sides divisible by {LATENT_FACTOR}"
            )));
        }
        let small = img.resize(w / LATENT_FACTOR, h / LATENT_FACTOR);
        Ok(Image::from_fn(
            small.width(),
            small.height(),
            LATENT_CHANNELS,
            |c, x, y| {
                if c < 3 {
                    (small.get(c, x, y) - 0.5) / 0.25
                } else {
                    0.0
                }
            },
        ))
    }
}

macro_rules! linear_codec {
    () => {
        fn latent_channels(&self) -> usize {
            LATENT_CHANNELS
        }
        fn scale_factor(&self) -> usize {
            LATENT_FACTOR
        }
        fn encode(&self, img: &Image) -> Result<Image> {
            LinearCodec::encode(img)
        }
        fn decode(&self, latent: &Image) -> Result<Image> {
            Ok(LinearCodec::decode(latent))
        }
        fn decode_vjp(&self, latent: &Image, grad: &Image) -> Result<Image> {
            Ok(LinearCodec::decode_vjp(latent, grad))
        }
    };
}

/// Leaves latents unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityBackend;

impl DenoiserBackend for IdentityBackend {
    fn name(&self) -> &str {
        "identity"
    }
    linear_codec!();
    fn denoise_step(&self, latent: &Image, _: &Timestep, _: &str) -> Result<Image> {
        Ok(latent.clone())
    }
}

/// Returns a latent filled with `value`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantBackend {
    pub value: f64,
}

impl DenoiserBackend for ConstantBackend {
    fn name(&self) -> &str {
        "constant"
    }
    linear_codec!();
    fn denoise_step(&self, latent: &Image, _: &Timestep, _: &str) -> Result<Image> {
        Ok(Image::filled(
            latent.width(),
            latent.height(),
            &vec![self.value; latent.channels()],
        ))
    }
}

/// Affine toy denoiser `x ← (1 − a)x + a(½·blur(x) + ½·μ)` with a seeded
/// per-channel target `μ ∈ [−1, 1]`; the constant latent `μ` is its fixed
/// point.
#[derive(Clone, Debug)]
pub struct ToyLinearBackend {
    pub rate: f64,
    pub target: Vec<f64>,
}

impl ToyLinearBackend {
    pub fn new(seed: u64) -> Self {
        let mut g = rng::stream(seed, rng::tag::SKY_NOISE, 1);
        ToyLinearBackend {
            rate: 0.25,
            target: (0..LATENT_CHANNELS).map(|_| g.gen_range(-1.0..=1.0)).collect(),
        }
    }
}

fn box_blur3(img: &Image) -> Image {
    let (w, h) = img.dims();
    Image::from_fn(w, h, img.channels(), |c, x, y| {
        let mut s = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                s += img.get(c, xx, yy);
            }
        }
        s / 9.0
    })
}

impl DenoiserBackend for ToyLinearBackend {
    fn name(&self) -> &str {
        "toy"
    }
    linear_codec!();
    fn denoise_step(&self, latent: &Image, _: &Timestep, _: &str) -> Result<Image> {
        let b = box_blur3(latent);
        let a = self.rate;
        let hw = latent.pixel_count();
        let mut out = latent.clone();
        for (k, (o, bv)) in out.data_mut().iter_mut().zip(b.data()).enumerate() {
            let mu = self.target[(k / hw).min(self.target.len() - 1)];
            *o = (1.0 - a) * *o + a * (0.5 * bv + 0.5 * mu);
        }
        Ok(out)
    }
}

/// Environment variable naming the location of an external diffusion model.
pub const BACKEND_ENV: &str = "MESHSTYLE_DIFFUSION_MODEL";

/// Backend by configured name. Only the bundled mocks are built in; any
/// other name reports [`Error::BackendUnavailable`].
pub fn backend_by_name(name: &str, seed: u64) -> Result<Box<dyn DenoiserBackend>> {
    match name {
        "identity" => Ok(Box::new(IdentityBackend)),
        "constant" => Ok(Box::new(ConstantBackend { value: 0.0 })),
        "toy" => Ok(Box::new(ToyLinearBackend::new(seed))),
        other => Err(Error::BackendUnavailable(match std::env::var(BACKEND_ENV) {
            Ok(p) => format!("{other} (model at {p} has no loader in this build)"),
            Err(_) => format!("{other} (set {BACKEND_ENV} and link a loader)"),
        })),
    }
}

fn check_tile(out: &Image, input: &Image, window: usize) -> Result<()> {
    if out.dims() != input.dims() || out.channels() != input.channels() {
        return Err(Error::Backend {
            window,
            message: format!(
                "returned {:?}×{} for a {:?}×{} latent",
                out.dims(),
                out.channels(),
                input.dims(),
                input.channels()
            ),
        });
    }
    if !out.is_finite() {
        return Err(Error::Backend {
            window,
            message: "non-finite latent".into(),
        });
    }
    Ok(())
}

/// Runs `f` on every window tile and writes back the per-texel average.
fn joint_step_with<F>(canvas: &mut EquirectCanvas, windows: &[BFoVWindow], f: F) -> Result<()>
where
    F: Fn(usize, Image) -> Result<Image> + Sync + Send,
{
    let tiles = par::map_range(windows.len(), |i| {
        let tile = warp_equirect_to_perspective(&canvas.latent, &windows[i]);
        let out = f(i, tile.clone()).map_err(|e| match e {
            Error::Backend { .. } => e,
            other => Error::Backend {
                window: i,
                message: other.to_string(),
            },
        })?;
        check_tile(&out, &tile, i)?;
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    scatter_average(&mut canvas.latent, windows, &tiles);
    Ok(())
}

/// One multi-window denoising step of the whole canvas.
pub fn joint_denoise_step(
    canvas: &mut EquirectCanvas,
    windows: &[BFoVWindow],
    backend: &dyn DenoiserBackend,
    step: &Timestep,
    prompt: &str,
) -> Result<()> {
    joint_step_with(canvas, windows, |_, tile| backend.denoise_step(&tile, step, prompt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Latent RMS moved per guided step.
    pub weight: f64,
    /// Guide on every `every`-th step (the last step of each interval).
    pub every: usize,
    /// Side of the square images compared by the perceptual distance.
    pub resolution: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            weight: 0.1,
            every: 5,
            resolution: 128,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) || self.every == 0 || self.resolution < 8 {
            return Err(Error::InvalidArgument(
                "guidance needs weight ≥ 0, interval ≥ 1 and resolution ≥ 8".into(),
            ));
        }
        Ok(())
    }

    pub fn is_guided(&self, step: usize) -> bool {
        self.weight > 0.0 && (step + 1).is_multiple_of(self.every)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkyConfig {
    /// Output height in pixels; the width is twice this.
    pub height: usize,
    pub steps: usize,
    pub windows: usize,
    pub guidance: GuidanceConfig,
    pub jitter_deg: f64,
    pub seed: u64,
}

impl Default for SkyConfig {
    fn default() -> Self {
        SkyConfig {
            height: DEFAULT_HEIGHT,
            steps: DEFAULT_STEPS,
            windows: DEFAULT_WINDOWS,
            guidance: GuidanceConfig::default(),
            jitter_deg: 0.0,
            seed: 0,
        }
    }
}

impl SkyConfig {
    /// Checks the configuration for a backend with latent scale factor `f`.
    pub fn validate(&self, f: usize) -> Result<()> {
        self.guidance.validate()?;
        if f == 0 || self.height == 0 || !self.height.is_multiple_of(f) || self.steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "sky height must be a positive multiple of {f} and steps ≥ 1"
            )));
        }
        if self.windows < MIN_WINDOWS || !(self.windows - 2).is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "window count must be 3k+2 with at least {MIN_WINDOWS} windows"
            )));
        }
        if !(self.jitter_deg >= 0.0 && self.jitter_deg.is_finite()) {
            return Err(Error::InvalidArgument("jitter must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SkyResult {
    pub panorama: Image,
    pub latent: Image,
    pub guided_steps: usize,
    /// Mean perceptual distance of the decoded windows to the reference at
    /// each guided step.
    pub guidance_distances: Vec<f64>,
}

/// Square center crop of `img` resized to `side`.
fn square_reference(img: &Image, side: usize) -> Image {
    let (w, h) = img.dims();
    let s = w.min(h);
    img.crop((w - s) / 2, (h - s) / 2, s, s).resize(side, side)
}

/// Perceptual distance of a decoded tile to `reference` and its gradient
/// with respect to the tile latent.
pub fn window_guidance(
    tile: &Image,
    reference: &Image,
    backend: &dyn DenoiserBackend,
    fx: &FeatureExtractor,
) -> Result<(f64, Image)> {
    let img = backend.decode(tile)?;
    let side = reference.width();
    let r = Resampler::new(img.width(), img.height(), side, side);
    let (d, g) = perceptual_distance_with_grad(&r.apply(&img).map(|v| v.clamp(-1.0, 2.0)), reference, fx)?;
    Ok((d, backend.decode_vjp(tile, &r.adjoint(&g))?))
}

/// Panorama decoded with a few latent columns wrapped across the seam so
/// the decoder sees a continuous strip.
pub fn decode_panorama(latent: &Image, backend: &dyn DenoiserBackend) -> Result<Image> {
    let (w, h) = latent.dims();
    let pad = SEAM_PAD.min(w);
    let padded = Image::from_fn(w + 2 * pad, h, latent.channels(), |c, x, y| {
        latent.get(c, (x + w - pad) % w, y)
    });
    let img = backend.decode(&padded)?;
    let f = backend.scale_factor();
    Ok(img.crop(pad * f, 0, w * f, h * f))
}

/// Synthesizes a `2H × H` sky panorama prompted by the style's target text
/// and guided towards the style image.
pub fn synthesize_sky(
    style: &StyleReference,
    backend: &dyn DenoiserBackend,
    cfg: &SkyConfig,
    fx: &FeatureExtractor,
) -> Result<SkyResult> {
    cfg.validate(backend.scale_factor())?;
    let f = backend.scale_factor();
    let h_lat = cfg.height / f;
    let mut canvas = EquirectCanvas::noise(h_lat, backend.latent_channels(), cfg.seed)?;
    let size = (canvas.dims().0 / 4).max(4);
    let jitter = (cfg.jitter_deg > 0.0).then_some(Jitter {
        seed: cfg.seed,
        max_deg: cfg.jitter_deg,
    });
    let windows = sample_bfov_windows(canvas.dims(), cfg.windows, size, jitter)?;
    let reference = square_reference(&style.image, cfg.guidance.resolution);
    let prompt = style.target_text.as_str();
    let mut guided_steps = 0;
    let mut guidance_distances = Vec::new();
    for step in ddim_timesteps(cfg.steps) {
        if !cfg.guidance.is_guided(step.index) {
            joint_denoise_step(&mut canvas, &windows, backend, &step, prompt)?;
        } else {
            let dist = std::sync::Mutex::new(vec![0.0; windows.len()]);
            joint_step_with(&mut canvas, &windows, |i, tile| {
                let mut z = backend.denoise_step(&tile, &step, prompt)?;
                let (d, g) = window_guidance(&z, &reference, backend, fx)?;
                dist.lock().expect("distance lock")[i] = d;
                let rms = (g.data().iter().map(|v| v * v).sum::<f64>() / g.data().len() as f64).sqrt();
                if rms > 0.0 {
                    z.add_assign(&g, -cfg.guidance.weight / rms);
                }
                Ok(z)
            })?;
            let d = dist.into_inner().expect("distance lock");
            guidance_distances.push(d.iter().sum::<f64>() / d.len() as f64);
            guided_steps += 1;
        }
        if !canvas.latent.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite sky latent after step {}",
                step.index
            )));
        }
    }
    let panorama = decode_panorama(&canvas.latent, backend)?.map(|v| v.clamp(0.0, 1.0));
    Ok(SkyResult {
        panorama,
        latent: canvas.latent,
        guided_steps,
        guidance_distances,
    })
}

/// Mean perceptual distance between the decoded windows of `latent` and the
/// style reference at `side × side`.
pub fn panorama_style_distance(
    latent: &Image,
    style: &Image,
    backend: &dyn DenoiserBackend,
    windows: &[BFoVWindow],
    side: usize,
    fx: &FeatureExtractor,
) -> Result<f64> {
    let reference = square_reference(style, side);
    let d = par::map_range(windows.len(), |i| {
        let tile = warp_equirect_to_perspective(latent, &windows[i]);
        window_guidance(&tile, &reference, backend, fx).map(|(d, _)| d)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Face order of [`cube_map`].
pub const CUBE_FACES: [&str; 6] = ["px", "nx", "py", "ny", "pz", "nz"];

/// Six 90° faces looking along +x, −x, +y, −y, +z, −z, each `size × size`.
pub fn cube_map(pano: &Image, size: usize) -> Vec<Image> {
    let dirs = [
        Vec3::X,
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::Y,
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::Z,
        Vec3::new(0.0, 0.0, -1.0),
    ];
    dirs.iter()
        .map(|&f| {
            let (r, u, f) = window_basis(f);
            let s = size as f64;
            let mut face = Image::zeros(size, size, 3);
            for j in 0..size {
                for i in 0..size {
                    let x = 2.0 * (i as f64 + 0.5) / s - 1.0;
                    let y = 1.0 - 2.0 * (j as f64 + 0.5) / s;
                    face.set_rgb(j * size + i, sample_direction(pano, f + r * x + u * y));
                }
            }
            face
        })
        .collect()
}
