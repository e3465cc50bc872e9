#![allow(dead_code)]

use meshstyle::image::Image;

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &Image, h: f64, f: impl Fn(&Image) -> f64) -> Image {
    let mut g = Image::zeros(x.width(), x.height(), x.channels());
    for i in 0..x.data().len() {
        let mut p = x.clone();
        let mut m = x.clone();
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &Image, b: &Image) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn min_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
    mat.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

use meshstyle::camera::CameraPose;
use meshstyle::geom::Vec3;
use meshstyle::scene::TriangleMesh;

/// Nearest ray hit per pixel by brute-force Möller–Trumbore intersection:
/// `(face, uv)` or `None` for background.
pub fn raycast(mesh: &TriangleMesh, cam: &CameraPose) -> Vec<Option<(usize, [f64; 2])>> {
    let (w, h) = cam.resolution;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let dir = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
            let mut best: Option<(f64, usize, [f64; 2])> = None;
            for f in 0..mesh.faces.len() {
                let [a, b, c] = mesh.triangle(f);
                if let Some((t, u, v)) = intersect(cam.position, dir, a, b, c) {
                    if best.is_none_or(|bst| t < bst.0) {
                        let uv = mesh.uvs[f];
                        let s = 1.0 - u - v;
                        best = Some((
                            t,
                            f,
                            [
                                s * uv[0][0] + u * uv[1][0] + v * uv[2][0],
                                s * uv[0][1] + u * uv[1][1] + v * uv[2][1],
                            ],
                        ));
                    }
                }
            }
            out.push(best.map(|(_, f, uv)| (f, uv)));
        }
    }
    out
}

fn intersect(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > 1e-9).then_some((t, u, v))
}

use meshstyle::features::FeatureExtractor;
use meshstyle::field::{distill, DistillationConfig, FieldConfig, NeuralTextureField};
use meshstyle::fixture::{cube_city, style_image, CubeCity, CubeCityConfig};
use meshstyle::planner::{plan_pivot_views, ViewPlan};
use meshstyle::style::StyleReference;

/// Cube-city scene with a distilled small field, a pivot plan and the
/// bundled night style.
pub struct Pipeline {
    pub city: CubeCity,
    pub plan: ViewPlan,
    pub style: StyleReference,
    pub fx: FeatureExtractor,
    pub field: NeuralTextureField,
}

pub fn pipeline(texture_size: usize, distill_steps: usize) -> Pipeline {
    let city = cube_city(&CubeCityConfig {
        texture_size,
        ..CubeCityConfig::default()
    })
    .unwrap();
    let plan = plan_pivot_views(&city.scene, 5, 9, 0.35, 90.0, (64, 64), 0).unwrap();
    let (img, labels) = style_image(256, 0);
    let style = StyleReference::new(img, labels, "a city by day", "a city at night").unwrap();
    let mut field = NeuralTextureField::new(FieldConfig::small(), 0).unwrap();
    if distill_steps > 0 {
        let cfg = DistillationConfig {
            steps: distill_steps,
            eval_every: distill_steps,
            ..DistillationConfig::default()
        };
        distill(&mut field, &city.scene.texture, &cfg).unwrap();
    }
    Pipeline {
        city,
        plan,
        style,
        fx: FeatureExtractor::default(),
        field,
    }
}
