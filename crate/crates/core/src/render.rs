//! CPU rasterization and image formation.
//!
//! [`rasterize`] produces per-pixel UV, face and depth buffers with a depth
//! test and perspective-correct interpolation. The `render_*` functions turn
//! those buffers into content images, label images and neural-field images;
//! [`FieldRender::backward`] carries image gradients back to field parameters.

use std::path::Path;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::field::{FieldGradient, NeuralTextureField};
use crate::geom::Vec3;
use crate::image::{Image, LabelMap};
use crate::par;
use crate::scene::{nearest_texel, SemanticTexture, TextureImage, TriangleMesh, SENTINEL};

/// Default upper bound on render width and height.
pub const DEFAULT_MAX_RESOLUTION: usize = 512;

pub const INVALID_UV: [f64; 2] = [-1.0, -1.0];
pub const NO_FACE: u32 = u32::MAX;

const NEAR: f64 = 1e-4;
const BAND_ROWS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    /// UV per pixel, [`INVALID_UV`] on background.
    pub uv: Vec<[f64; 2]>,
    pub fg_mask: Vec<bool>,
    pub face: Vec<u32>,
    pub depth: Vec<f64>,
    /// Set when the camera sits inside closed geometry; all buffers are then
    /// background.
    pub inside_geometry: bool,
}

impl RenderBuffers {
    pub fn background(width: usize, height: usize) -> Self {
        RenderBuffers {
            width,
            height,
            uv: vec![INVALID_UV; width * height],
            fg_mask: vec![false; width * height],
            face: vec![NO_FACE; width * height],
            depth: vec![f64::INFINITY; width * height],
            inside_geometry: false,
        }
    }

    pub fn coverage(&self) -> f64 {
        self.fg_mask.iter().filter(|&&m| m).count() as f64 / self.fg_mask.len().max(1) as f64
    }

    /// Writes `<stem>_u.png`, `<stem>_v.png` (16-bit) and `<stem>_mask.png`.
    pub fn dump(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut uv = Image::zeros(self.width, self.height, 2);
        for (i, t) in self.uv.iter().enumerate() {
            let (u, v) = if self.fg_mask[i] { (t[0], t[1]) } else { (0.0, 0.0) };
            uv.plane_mut(0)[i] = u;
            uv.plane_mut(1)[i] = v;
        }
        uv.save_gray16(0, 0.0, 1.0, dir.join(format!("{stem}_u.png")))?;
        uv.save_gray16(1, 0.0, 1.0, dir.join(format!("{stem}_v.png")))?;
        let mask = LabelMap::from_vec(
            self.width,
            self.height,
            self.fg_mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
        );
        mask.save_png(dir.join(format!("{stem}_mask.png")))
    }
}

#[derive(Clone, Copy, Debug)]
struct ScreenTri {
    p: [(f64, f64); 3],
    inv_z: [f64; 3],
    uv_over_z: [[f64; 2]; 3],
    face: u32,
    back: bool,
    y_min: usize,
    y_max: usize,
}

/// Rasterizes with the default resolution cap.
pub fn rasterize(mesh: &TriangleMesh, camera: &CameraPose) -> Result<RenderBuffers> {
    rasterize_with_limit(mesh, camera, DEFAULT_MAX_RESOLUTION)
}

pub fn rasterize_with_limit(mesh: &TriangleMesh, camera: &CameraPose, max_resolution: usize) -> Result<RenderBuffers> {
    camera.validate()?;
    let (w, h) = camera.resolution;
    if w > max_resolution || h > max_resolution {
        return Err(Error::InvalidArgument(format!(
            "render resolution {w}x{h} exceeds the {max_resolution} cap"
        )));
    }
    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|&v| camera.to_camera(v)).collect();
    let mut tris = Vec::with_capacity(mesh.faces.len());
    for (fi, f) in mesh.faces.iter().enumerate() {
        let c = [
            cam_verts[f[0] as usize],
            cam_verts[f[1] as usize],
            cam_verts[f[2] as usize],
        ];
        let back = mesh.face_normal(fi).dot(mesh.vertices[f[0] as usize] - camera.position) > 0.0;
        let poly = clip_near(&c, &mesh.uvs[fi]);
        for k in 1..poly.len().saturating_sub(1) {
            let corners = [poly[0], poly[k], poly[k + 1]];
            let mut st = ScreenTri {
                p: [(0.0, 0.0); 3],
                inv_z: [0.0; 3],
                uv_over_z: [[0.0; 2]; 3],
                face: fi as u32,
                back,
                y_min: 0,
                y_max: 0,
            };
            let mut ylo = f64::INFINITY;
            let mut yhi = f64::NEG_INFINITY;
            for (j, (pc, uv)) in corners.iter().enumerate() {
                st.p[j] = camera.camera_to_pixel(*pc);
                st.inv_z[j] = 1.0 / pc.z;
                st.uv_over_z[j] = [uv[0] / pc.z, uv[1] / pc.z];
                ylo = ylo.min(st.p[j].1);
                yhi = yhi.max(st.p[j].1);
            }
            if yhi < 0.0 || ylo > h as f64 {
                continue;
            }
            st.y_min = (ylo - 0.5).ceil().max(0.0) as usize;
            st.y_max = ((yhi - 0.5).floor().min(h as f64 - 1.0)).max(-1.0) as isize as usize;
            if (yhi - 0.5).floor() < 0.0 || st.y_min > st.y_max {
                continue;
            }
            tris.push(st);
        }
    }

    let mut buf = RenderBuffers::background(w, h);
    let mut back_hit = vec![false; w * h];
    {
        let bands = h.div_ceil(BAND_ROWS);
        let results = par::map_range(bands, |b| {
            let y0 = b * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(h);
            raster_band(&tris, w, y0, y1)
        });
        for (b, band) in results.into_iter().enumerate() {
            let off = b * BAND_ROWS * w;
            for (k, px) in band.into_iter().enumerate() {
                if let Some((uv, face, depth, back)) = px {
                    let i = off + k;
                    buf.uv[i] = uv;
                    buf.fg_mask[i] = true;
                    buf.face[i] = face;
                    buf.depth[i] = depth;
                    back_hit[i] = back;
                }
            }
        }
    }
    let hits = buf.fg_mask.iter().filter(|&&m| m).count();
    let backs = back_hit.iter().filter(|&&b| b).count();
    if hits > 0 && 2 * backs > hits {
        let mut bg = RenderBuffers::background(w, h);
        bg.inside_geometry = true;
        return Ok(bg);
    }
    Ok(buf)
}

type PixelHit = Option<([f64; 2], u32, f64, bool)>;

fn raster_band(tris: &[ScreenTri], w: usize, y0: usize, y1: usize) -> Vec<PixelHit> {
    let mut out: Vec<PixelHit> = vec![None; (y1 - y0) * w];
    let mut depth = vec![f64::INFINITY; (y1 - y0) * w];
    for t in tris {
        if t.y_max < y0 || t.y_min >= y1 {
            continue;
        }
        let [a, b, c] = t.p;
        let area = edge(a, b, c);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let xlo = a.0.min(b.0).min(c.0);
        let xhi = a.0.max(b.0).max(c.0);
        if xhi < 0.0 || xlo > w as f64 {
            continue;
        }
        let x_min = (xlo - 0.5).ceil().max(0.0) as usize;
        let x_max_f = (xhi - 0.5).floor().min(w as f64 - 1.0);
        if x_max_f < 0.0 {
            continue;
        }
        let x_max = x_max_f as usize;
        for y in t.y_min.max(y0)..=t.y_max.min(y1 - 1) {
            let py = y as f64 + 0.5;
            for x in x_min..=x_max {
                let p = (x as f64 + 0.5, py);
                let w0 = edge(b, c, p) / area;
                let w1 = edge(c, a, p) / area;
                let w2 = edge(a, b, p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let iz = w0 * t.inv_z[0] + w1 * t.inv_z[1] + w2 * t.inv_z[2];
                if iz <= 0.0 {
                    continue;
                }
                let z = 1.0 / iz;
                let k = (y - y0) * w + x;
                if z < depth[k] {
                    depth[k] = z;
                    let u = (w0 * t.uv_over_z[0][0] + w1 * t.uv_over_z[1][0] + w2 * t.uv_over_z[2][0]) * z;
                    let v = (w0 * t.uv_over_z[0][1] + w1 * t.uv_over_z[1][1] + w2 * t.uv_over_z[2][1]) * z;
                    out[k] = Some(([u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)], t.face, z, t.back));
                }
            }
        }
    }
    out
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Clips a camera-space triangle against the near plane, carrying UVs.
fn clip_near(c: &[Vec3; 3], uv: &[[f64; 2]; 3]) -> Vec<(Vec3, [f64; 2])> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let (p, pu) = (c[i], uv[i]);
        let (q, qu) = (c[(i + 1) % 3], uv[(i + 1) % 3]);
        let p_in = p.z >= NEAR;
        let q_in = q.z >= NEAR;
        if p_in {
            out.push((p, pu));
        }
        if p_in != q_in {
            let t = (NEAR - p.z) / (q.z - p.z);
            let x = p + (q - p) * t;
            let u = [pu[0] + (qu[0] - pu[0]) * t, pu[1] + (qu[1] - pu[1]) * t];
            out.push((Vec3::new(x.x, x.y, NEAR), u));
        }
    }
    out
}

/// Content view: bilinear texture lookup on foreground, zero on background.
pub fn render_content(buffers: &RenderBuffers, texture: &TextureImage) -> Image {
    let mut img = Image::zeros(buffers.width, buffers.height, 3);
    for i in 0..buffers.uv.len() {
        if buffers.fg_mask[i] {
            img.set_rgb(i, texture.sample_bilinear(buffers.uv[i]));
        }
    }
    img
}

/// Label view: nearest-texel lookup on foreground, [`SENTINEL`] on background.
pub fn render_semantics(buffers: &RenderBuffers, semantics: &SemanticTexture) -> LabelMap {
    let labels = semantics.labels();
    let (tw, th) = labels.dims();
    let data = buffers
        .uv
        .iter()
        .zip(&buffers.fg_mask)
        .map(|(&uv, &fg)| {
            if fg {
                let (i, j) = nearest_texel(uv, tw, th);
                labels.get(i, j)
            } else {
                SENTINEL
            }
        })
        .collect();
    LabelMap::from_vec(buffers.width, buffers.height, data)
}

/// Image rendered from a neural texture field plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct FieldRender {
    pub image: Image,
    pixels: Vec<usize>,
    uvs: Vec<[f64; 2]>,
}

/// Stylized view: field queried at every foreground UV, zero on background.
pub fn render_from_field(buffers: &RenderBuffers, field: &NeuralTextureField) -> FieldRender {
    let pixels: Vec<usize> = (0..buffers.uv.len()).filter(|&i| buffers.fg_mask[i]).collect();
    let uvs: Vec<[f64; 2]> = pixels.iter().map(|&i| buffers.uv[i]).collect();
    let rgb = field.query(&uvs);
    let mut image = Image::zeros(buffers.width, buffers.height, 3);
    for (&i, c) in pixels.iter().zip(&rgb) {
        image.set_rgb(i, *c);
    }
    FieldRender { image, pixels, uvs }
}

impl FieldRender {
    /// Accumulates `dL/dparams` into `grad` given `dL/dimage`. Background
    /// pixels carry no gradient.
    pub fn backward(&self, field: &NeuralTextureField, grad_image: &Image, grad: &mut FieldGradient) {
        assert_eq!(grad_image.dims(), self.image.dims(), "gradient image dims");
        let g: Vec<[f64; 3]> = self.pixels.iter().map(|&i| grad_image.rgb(i)).collect();
        field.backward(&self.uvs, &g, grad);
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.len()
    }
}
