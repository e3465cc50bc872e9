use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

/// Triangle mesh with per-face-corner UVs (OBJ convention, v up).
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Vec<[[f64; 2]; 3]>,
    pub material_name: String,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::MeshParse("mesh has no faces".into()));
        }
        if self.uvs.len() != self.faces.len() {
            return Err(Error::MissingUv);
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::IndexOutOfRange(format!(
                        "face {fi} references vertex {i} but mesh has {n} vertices"
                    )));
                }
            }
        }
        for (fi, corners) in self.uvs.iter().enumerate() {
            for uv in corners {
                for &c in uv {
                    if !(0.0..=1.0).contains(&c) {
                        return Err(Error::UvOutOfRange { face: fi, value: c });
                    }
                }
            }
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::MeshParse("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices).unwrap_or(Aabb {
            min: Vec3::ZERO,
            max: Vec3::ZERO,
        })
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (a + b + c) / 3.0
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a).normalized()
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Vec3 {
        let mut acc = Vec3::ZERO;
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let a = self.face_area(f);
            acc += self.face_centroid(f) * a;
            total += a;
        }
        if total > 0.0 {
            acc / total
        } else {
            self.aabb().center()
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            uvs: vec![
                [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
                [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            ],
            material_name: "m".into(),
        }
    }

    #[test]
    fn quad_geometry() {
        let m = quad();
        m.validate().unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        let c = m.surface_centroid();
        assert!((c.x - 0.5).abs() < 1e-12 && (c.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut m = quad();
        m.faces[1][2] = 4;
        assert!(matches!(m.validate(), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn uv_outside_unit_square_is_rejected() {
        let mut m = quad();
        m.uvs[0][1][0] = 1.5;
        assert!(matches!(m.validate(), Err(Error::UvOutOfRange { .. })));
    }
}
