//! Procedural test scene ("cube city"), photo-like texture and a
//! high-contrast labeled style image.
//!
//! The city is an `N × N` grid of box buildings (no bottoms) on a tiled
//! ground plane. Every quad gets its own tile in the UV atlas and a single
//! ground-truth class, so label baking can be checked per face.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::Vec3;
use crate::image::{Image, LabelMap};
use crate::rng;
use crate::scene::{
    ClassId, SemanticClassSet as Cls, SemanticTexture, TextureImage, TexturedScene, TriangleMesh, SENTINEL,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CubeCityConfig {
    /// Blocks per side.
    pub blocks: usize,
    pub texture_size: usize,
    pub seed: u64,
}

impl Default for CubeCityConfig {
    fn default() -> Self {
        CubeCityConfig {
            blocks: 3,
            texture_size: 1024,
            seed: 0,
        }
    }
}

/// The generated scene with its per-triangle ground-truth classes. The
/// scene's semantic texture is the ground truth.
#[derive(Clone, Debug)]
pub struct CubeCity {
    pub scene: TexturedScene,
    pub face_labels: Vec<ClassId>,
}

const PITCH: f64 = 1.0;
const LOT: f64 = 0.6;
/// Atlas texels left around each tile so bilinear lookups stay inside.
const TILE_PAD: usize = 2;

struct Quad {
    origin: Vec3,
    e1: Vec3,
    e2: Vec3,
    class: ClassId,
}

fn box_quads(x0: f64, z0: f64, size: f64, h: f64, side: ClassId, roof: ClassId, out: &mut Vec<Quad>) {
    let (x1, z1) = (x0 + size, z0 + size);
    let (dx, dz, dy) = (Vec3::X * size, Vec3::Z * size, Vec3::Y * h);
    out.push(Quad {
        origin: Vec3::new(x0, h, z0),
        e1: dz,
        e2: dx,
        class: roof,
    });
    out.push(Quad {
        origin: Vec3::new(x1, 0.0, z0),
        e1: dy,
        e2: dz,
        class: side,
    });
    out.push(Quad {
        origin: Vec3::new(x0, 0.0, z0),
        e1: dz,
        e2: dy,
        class: side,
    });
    out.push(Quad {
        origin: Vec3::new(x0, 0.0, z1),
        e1: dx,
        e2: dy,
        class: side,
    });
    out.push(Quad {
        origin: Vec3::new(x0, 0.0, z0),
        e1: dy,
        e2: dx,
        class: side,
    });
}

fn class_color(class: ClassId) -> [f64; 3] {
    match class {
        Cls::BUILDING => [0.72, 0.66, 0.58],
        Cls::WINDOW => [0.35, 0.5, 0.62],
        Cls::ROAD => [0.33, 0.33, 0.35],
        Cls::PLANT => [0.3, 0.55, 0.25],
        Cls::WATER => [0.2, 0.4, 0.65],
        _ => [0.5, 0.5, 0.5],
    }
}

/// Texture value of class `class` at tile-local coordinates `(s, t)` in
/// `[0,1]²`.
fn pattern(class: ClassId, s: f64, t: f64, grain: f64) -> [f64; 3] {
    let base = class_color(class);
    let k = match class {
        Cls::BUILDING => {
            let wx = (s * 6.0).fract();
            let wy = (t * 8.0).fract();
            if (0.25..0.75).contains(&wx) && (0.3..0.7).contains(&wy) {
                0.55
            } else {
                1.0
            }
        }
        Cls::WINDOW => {
            let mx = (s * 4.0).fract();
            let my = (t * 5.0).fract();
            if mx < 0.08 || my < 0.08 {
                0.5
            } else {
                1.0 + 0.25 * t
            }
        }
        Cls::ROAD => {
            if (0.47..0.53).contains(&s) && (t * 6.0).fract() < 0.5 {
                2.2
            } else {
                1.0
            }
        }
        Cls::WATER => 1.0 + 0.15 * (s * 25.0 + 6.0 * t).sin(),
        Cls::PLANT => 1.0 + 0.3 * ((s * 31.0).sin() * (t * 23.0).cos()),
        _ => 1.0,
    };
    let g = 1.0 + 0.12 * (grain - 0.5);
    [
        (base[0] * k * g).clamp(0.0, 1.0),
        (base[1] * k * g).clamp(0.0, 1.0),
        (base[2] * k * g).clamp(0.0, 1.0),
    ]
}

/// Builds the city, its atlas texture and ground-truth label texture.
pub fn cube_city(cfg: &CubeCityConfig) -> Result<CubeCity> {
    let n = cfg.blocks.max(1);
    let mut r = rng::stream(cfg.seed, rng::tag::FIXTURE, 1);
    let mut quads = Vec::new();
    // ground: one quad per cell, one water cell
    let water = (n - 1, 0);
    for gz in 0..n {
        for gx in 0..n {
            let class = if (gx, gz) == water { Cls::WATER } else { Cls::ROAD };
            quads.push(Quad {
                origin: Vec3::new(gx as f64 * PITCH, 0.0, gz as f64 * PITCH),
                e1: Vec3::Z * PITCH,
                e2: Vec3::X * PITCH,
                class,
            });
        }
    }
    let margin = 0.5 * (PITCH - LOT);
    for gz in 0..n {
        for gx in 0..n {
            if (gx, gz) == water {
                continue;
            }
            let (x0, z0) = (gx as f64 * PITCH + margin, gz as f64 * PITCH + margin);
            if (gx + 2 * gz) % 5 == 4 {
                box_quads(x0 + 0.1, z0 + 0.1, LOT - 0.2, 0.25, Cls::PLANT, Cls::PLANT, &mut quads);
                continue;
            }
            let h: f64 = r.gen_range(0.6..2.0);
            let side = if (gx + gz) % 2 == 0 { Cls::WINDOW } else { Cls::BUILDING };
            box_quads(x0, z0, LOT, h, side, Cls::BUILDING, &mut quads);
        }
    }

    let size = cfg.texture_size.max(16);
    let tiles = (quads.len() as f64).sqrt().ceil() as usize;
    let tile = size / tiles;
    let mut tex = Image::filled(size, size, &[0.0; 3]);
    let mut labels = LabelMap::filled(size, size, SENTINEL);
    let mut mesh = TriangleMesh {
        vertices: Vec::with_capacity(quads.len() * 4),
        faces: Vec::with_capacity(quads.len() * 2),
        uvs: Vec::with_capacity(quads.len() * 2),
        material_name: "city".into(),
    };
    let mut face_labels = Vec::with_capacity(quads.len() * 2);
    for (qi, q) in quads.iter().enumerate() {
        let (tx, ty) = (qi % tiles, qi / tiles);
        let (px0, py0) = (tx * tile, ty * tile);
        // texel rows grow downward; v grows upward
        let u0 = (px0 + TILE_PAD) as f64 / size as f64;
        let u1 = (px0 + tile - TILE_PAD) as f64 / size as f64;
        let v1 = 1.0 - (py0 + TILE_PAD) as f64 / size as f64;
        let v0 = 1.0 - (py0 + tile - TILE_PAD) as f64 / size as f64;
        for y in py0..py0 + tile {
            for x in px0..px0 + tile {
                let s = (x - px0) as f64 / tile as f64;
                let t = 1.0 - (y - py0) as f64 / tile as f64;
                let i = y * size + x;
                tex.set_rgb(i, pattern(q.class, s, t, r.gen()));
                labels.data_mut()[i] = q.class;
            }
        }
        let base = mesh.vertices.len() as u32;
        mesh.vertices
            .extend([q.origin, q.origin + q.e1, q.origin + q.e1 + q.e2, q.origin + q.e2]);
        let (a, b, c, d) = ([u0, v0], [u1, v0], [u1, v1], [u0, v1]);
        mesh.faces.push([base, base + 1, base + 2]);
        mesh.uvs.push([a, b, c]);
        mesh.faces.push([base, base + 2, base + 3]);
        mesh.uvs.push([a, c, d]);
        face_labels.extend([q.class, q.class]);
    }
    let classes = Cls::default();
    let semantics = SemanticTexture::new(labels, &classes)?;
    let scene = TexturedScene::new(mesh, TextureImage::new(tex)?, Some(semantics))?;
    Ok(CubeCity { scene, face_labels })
}

/// Smooth, photo-like test texture with multi-scale detail.
pub fn photo_texture(size: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, rng::tag::FIXTURE, 2);
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|k| {
            let f = 1.0 + k as f64 * 0.9;
            (
                r.gen_range(-f..f),
                r.gen_range(-f..f),
                r.gen_range(0.0..6.3),
                0.35 / (1.0 + k as f64),
            )
        })
        .collect();
    Image::from_fn(size, size, 3, |c, x, y| {
        let (s, t) = (x as f64 / size as f64, y as f64 / size as f64);
        let mut v = 0.5;
        for (k, (a, b, ph, amp)) in waves.iter().enumerate() {
            let shift = (c as f64) * 0.7 * ((k % 3) as f64);
            v += amp * 0.5 * (std::f64::consts::TAU * (a * s + b * t) + ph + shift).sin();
        }
        v.clamp(0.0, 1.0)
    })
}

/// Night-time style image: dark gradient sky over dark buildings with bright
/// windows and a lit road, with its per-pixel labels.
pub fn style_image(size: usize, seed: u64) -> (Image, LabelMap) {
    let mut r = rng::stream(seed, rng::tag::FIXTURE, 3);
    let n_build = 7;
    let heights: Vec<f64> = (0..n_build).map(|_| r.gen_range(0.25..0.6)).collect();
    let road_top = 0.82;
    let mut img = Image::zeros(size, size, 3);
    let mut lab = LabelMap::filled(size, size, Cls::SKY);
    for y in 0..size {
        for x in 0..size {
            let (s, t) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
            let i = y * size + x;
            let b = ((s * n_build as f64) as usize).min(n_build - 1);
            let roof = road_top - heights[b];
            let (rgb, class) = if t >= road_top {
                let lit = ((s * 10.0).fract() < 0.5) && (t - road_top) < 0.05;
                (if lit { [0.98, 0.85, 0.4] } else { [0.08, 0.07, 0.1] }, Cls::ROAD)
            } else if t >= roof {
                let wx = (s * 42.0).fract();
                let wy = ((t - roof) * 36.0).fract();
                let lit = (0.3..0.7).contains(&wx) && (0.35..0.75).contains(&wy) && ((x / 7 + y / 5) % 3 != 0);
                if lit {
                    ([1.0, 0.82, 0.35], Cls::WINDOW)
                } else {
                    ([0.06, 0.06, 0.09], Cls::BUILDING)
                }
            } else {
                let k = t / road_top;
                ([0.02 + 0.25 * k, 0.03 + 0.08 * k, 0.15 + 0.2 * k], Cls::SKY)
            };
            img.set_rgb(i, rgb);
            lab.data_mut()[i] = class;
        }
    }
    (img, lab)
}
