//! OBJ/MTL and glTF readers, PNG textures, and the native OBJ writer.
//!
//! The native format is OBJ + MTL with coordinates printed in shortest
//! round-trip decimal form, so `save_scene` followed by `load_scene`
//! reproduces vertices, faces and UVs bit-exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{SemanticClassSet, SemanticTexture, TextureImage, TexturedScene, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::image::Image;

/// Loads and validates a textured scene. A missing semantics path yields an
/// all-sentinel semantic texture.
pub fn load_scene(
    mesh_path: impl AsRef<Path>,
    texture_path: impl AsRef<Path>,
    semantics_path: Option<&Path>,
) -> Result<TexturedScene> {
    let mesh_path = mesh_path.as_ref();
    let ext = mesh_path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let mesh = match ext.as_str() {
        "obj" => load_obj(mesh_path)?,
        "gltf" | "glb" => load_gltf(mesh_path)?,
        other => {
            return Err(Error::MeshParse(format!(
                "unsupported mesh extension '{other}' (expected obj, gltf or glb)"
            )))
        }
    };
    let texture = TextureImage::new(Image::load_rgb(texture_path)?)?;
    let classes = SemanticClassSet::default();
    let semantics = semantics_path.map(|p| SemanticTexture::load(p, &classes)).transpose()?;
    TexturedScene::new(mesh, texture, semantics)
}

fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let opts = tobj::LoadOptions {
        triangulate: false,
        single_index: false,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, materials) = tobj::load_obj(path, &opts).map_err(|e| match e {
        tobj::LoadError::FaceVertexOutOfBounds | tobj::LoadError::FaceTexCoordOutOfBounds => {
            Error::IndexOutOfRange(format!("{e} in {}", path.display()))
        }
        tobj::LoadError::OpenFileFailed => Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)),
        other => Error::MeshParse(format!("{other} in {}", path.display())),
    })?;
    let materials = materials.unwrap_or_default();
    let mut mesh = TriangleMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        uvs: Vec::new(),
        material_name: String::new(),
    };
    for model in &models {
        let m = &model.mesh;
        if let Some(&bad) = m.face_arities.iter().find(|&&a| a != 3) {
            return Err(Error::NotTriangulated(format!(
                "found a {bad}-sided face in '{}'",
                model.name
            )));
        }
        if m.indices.is_empty() {
            continue;
        }
        if m.texcoords.is_empty() || m.texcoord_indices.len() != m.indices.len() {
            return Err(Error::MissingUv);
        }
        if mesh.material_name.is_empty() {
            if let Some(mat) = m.material_id.and_then(|id| materials.get(id)) {
                mesh.material_name = mat.name.clone();
            }
        }
        let base = mesh.vertices.len() as u32;
        mesh.vertices
            .extend(m.positions.chunks_exact(3).map(|p| Vec3::new(p[0], p[1], p[2])));
        for (f, tri) in m.indices.chunks_exact(3).enumerate() {
            mesh.faces.push([base + tri[0], base + tri[1], base + tri[2]]);
            let mut corners = [[0.0; 2]; 3];
            for (k, corner) in corners.iter_mut().enumerate() {
                let t = m.texcoord_indices[3 * f + k] as usize;
                *corner = [m.texcoords[2 * t], m.texcoords[2 * t + 1]];
            }
            mesh.uvs.push(corners);
        }
    }
    if mesh.material_name.is_empty() {
        mesh.material_name = "material0".into();
    }
    mesh.validate()?;
    Ok(mesh)
}

fn load_gltf(path: &Path) -> Result<TriangleMesh> {
    let (doc, buffers, _) = gltf::import(path).map_err(|e| Error::MeshParse(format!("{e} in {}", path.display())))?;
    let mut mesh = TriangleMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        uvs: Vec::new(),
        material_name: String::new(),
    };
    let scene = doc
        .default_scene()
        .or_else(|| doc.scenes().next())
        .ok_or_else(|| Error::MeshParse("glTF has no scene".into()))?;
    let identity = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    for node in scene.nodes() {
        visit_gltf_node(&node, identity, &buffers, &mut mesh)?;
    }
    if mesh.material_name.is_empty() {
        mesh.material_name = "material0".into();
    }
    mesh.validate()?;
    Ok(mesh)
}

fn mat_mul(a: [[f32; 4]; 4], b: [[f32; 4]; 4]) -> [[f32; 4]; 4] {
    // column-major, as glTF stores them
    let mut out = [[0.0f32; 4]; 4];
    for (c, col) in out.iter_mut().enumerate() {
        for (r, v) in col.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[k][r] * b[c][k]).sum();
        }
    }
    out
}

fn visit_gltf_node(
    node: &gltf::Node,
    parent: [[f32; 4]; 4],
    buffers: &[gltf::buffer::Data],
    out: &mut TriangleMesh,
) -> Result<()> {
    let xf = mat_mul(parent, node.transform().matrix());
    if let Some(m) = node.mesh() {
        for prim in m.primitives() {
            if prim.mode() != gltf::mesh::Mode::Triangles {
                return Err(Error::NotTriangulated(format!("primitive mode {:?}", prim.mode())));
            }
            let reader = prim.reader(|b| buffers.get(b.index()).map(|d| &d.0[..]));
            let positions: Vec<[f32; 3]> = reader
                .read_positions()
                .ok_or_else(|| Error::MeshParse("primitive without positions".into()))?
                .collect();
            let uvs: Vec<[f32; 2]> = reader.read_tex_coords(0).ok_or(Error::MissingUv)?.into_f32().collect();
            let indices: Vec<u32> = match reader.read_indices() {
                Some(i) => i.into_u32().collect(),
                None => (0..positions.len() as u32).collect(),
            };
            if !indices.len().is_multiple_of(3) {
                return Err(Error::NotTriangulated("index count not a multiple of 3".into()));
            }
            if out.material_name.is_empty() {
                if let Some(name) = prim.material().name() {
                    out.material_name = name.to_string();
                }
            }
            let base = out.vertices.len() as u32;
            for p in &positions {
                let v = [p[0], p[1], p[2], 1.0];
                let t: Vec<f64> = (0..3)
                    .map(|r| (0..4).map(|k| xf[k][r] * v[k]).sum::<f32>() as f64)
                    .collect();
                out.vertices.push(Vec3::new(t[0], t[1], t[2]));
            }
            for tri in indices.chunks_exact(3) {
                let mut corners = [[0.0; 2]; 3];
                for (k, corner) in corners.iter_mut().enumerate() {
                    let i = tri[k] as usize;
                    let uv = uvs
                        .get(i)
                        .ok_or_else(|| Error::IndexOutOfRange(format!("uv index {i} of {}", uvs.len())))?;
                    // glTF puts the UV origin at the top-left corner.
                    *corner = [uv[0] as f64, 1.0 - uv[1] as f64];
                }
                out.faces.push([base + tri[0], base + tri[1], base + tri[2]]);
                out.uvs.push(corners);
            }
        }
    }
    for child in node.children() {
        visit_gltf_node(&child, xf, buffers, out)?;
    }
    Ok(())
}

/// Paths written by [`save_scene`].
#[derive(Clone, Debug)]
pub struct SavedScene {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub texture: PathBuf,
    pub semantics: PathBuf,
}

/// Writes `<stem>.obj`, `<stem>.mtl`, `<stem>_texture.png` and
/// `<stem>_semantics.png` (+ label sidecar) into `dir`.
pub fn save_scene(scene: &TexturedScene, dir: impl AsRef<Path>, stem: &str) -> Result<SavedScene> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let texture_name = format!("{stem}_texture.png");
    let saved = SavedScene {
        obj: dir.join(format!("{stem}.obj")),
        mtl: dir.join(format!("{stem}.mtl")),
        texture: dir.join(&texture_name),
        semantics: dir.join(format!("{stem}_semantics.png")),
    };
    write_obj(&scene.mesh, &saved.obj, &format!("{stem}.mtl"))?;
    write_mtl(&scene.mesh.material_name, &texture_name, &saved.mtl)?;
    scene.texture.image().save_png(&saved.texture)?;
    scene.semantics.save(&saved.semantics, &SemanticClassSet::default())?;
    Ok(saved)
}

/// Writes an OBJ referencing `mtl_name`; UVs are deduplicated by bit pattern.
pub fn write_obj(mesh: &TriangleMesh, path: &Path, mtl_name: &str) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "mtllib {mtl_name}");
    let _ = writeln!(s, "o mesh");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    let mut uv_index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut face_uv = Vec::with_capacity(mesh.faces.len());
    for corners in &mesh.uvs {
        let mut idx = [0usize; 3];
        for (k, uv) in corners.iter().enumerate() {
            let key = (uv[0].to_bits(), uv[1].to_bits());
            let next = uv_index.len();
            let i = *uv_index.entry(key).or_insert_with(|| {
                let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
                next
            });
            idx[k] = i + 1;
        }
        face_uv.push(idx);
    }
    let _ = writeln!(s, "usemtl {}", mesh.material_name);
    for (f, t) in mesh.faces.iter().zip(&face_uv) {
        let _ = writeln!(s, "f {}/{} {}/{} {}/{}", f[0] + 1, t[0], f[1] + 1, t[1], f[2] + 1, t[2]);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_mtl(material: &str, texture_file: &str, path: &Path) -> Result<()> {
    let s = format!("newmtl {material}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {texture_file}\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LabelMap;

    fn cube_obj() -> String {
        let mut s = String::from("mtllib cube.mtl\n");
        for z in [0, 1] {
            for y in [0, 1] {
                for x in [0, 1] {
                    s += &format!("v {x} {y} {z}\n");
                }
            }
        }
        s += "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nusemtl cube\n";
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        for q in quads {
            s += &format!("f {}/1 {}/2 {}/3\n", q[0] + 1, q[1] + 1, q[2] + 1);
            s += &format!("f {}/1 {}/3 {}/4\n", q[0] + 1, q[2] + 1, q[3] + 1);
        }
        s
    }

    fn write_texture(dir: &Path, w: usize, h: usize) -> PathBuf {
        let p = dir.join(format!("tex{w}.png"));
        Image::filled(w, h, &[0.2, 0.4, 0.6]).save_png(&p).unwrap();
        p
    }

    #[test]
    fn unit_cube_loads_with_unit_aabb() {
        let dir = tempfile::tempdir().unwrap();
        let obj = dir.path().join("cube.obj");
        std::fs::write(&obj, cube_obj()).unwrap();
        std::fs::write(dir.path().join("cube.mtl"), "newmtl cube\nmap_Kd tex.png\n").unwrap();
        let tex = write_texture(dir.path(), 256, 256);
        let scene = load_scene(&obj, &tex, None).unwrap();
        assert_eq!(scene.mesh.faces.len(), 12);
        assert_eq!(scene.mesh.material_name, "cube");
        assert_eq!(scene.aabb.min, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(scene.aabb.max, Vec3::new(1.0, 1.0, 1.0));
        assert!(scene
            .semantics
            .labels()
            .data()
            .iter()
            .all(|&l| l == super::super::SENTINEL));
    }

    #[test]
    fn out_of_range_face_index() {
        let dir = tempfile::tempdir().unwrap();
        let obj = dir.path().join("bad.obj");
        std::fs::write(&obj, "v 0 0 0\nv 1 0 0\nv 1 1 0\nvt 0 0\nf 1/1 2/1 9/1\n").unwrap();
        let tex = write_texture(dir.path(), 4, 4);
        assert!(matches!(load_scene(&obj, &tex, None), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn quads_and_missing_uvs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tex = write_texture(dir.path(), 4, 4);
        let quad = dir.path().join("quad.obj");
        std::fs::write(&quad, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n").unwrap();
        assert!(matches!(load_scene(&quad, &tex, None), Err(Error::NotTriangulated(_))));
        let nouv = dir.path().join("nouv.obj");
        std::fs::write(&nouv, "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 3\n").unwrap();
        assert!(matches!(load_scene(&nouv, &tex, None), Err(Error::MissingUv)));
    }

    #[test]
    fn semantics_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let obj = dir.path().join("cube.obj");
        std::fs::write(&obj, cube_obj()).unwrap();
        let tex = write_texture(dir.path(), 256, 256);
        let sem = dir.path().join("sem.png");
        LabelMap::filled(128, 128, 1).save_png(&sem).unwrap();
        assert!(matches!(
            load_scene(&obj, &tex, Some(&sem)),
            Err(Error::DimensionMismatch {
                found: (128, 128),
                expected: (256, 256),
                ..
            })
        ));
    }
}
