//! Textured scenes: geometry, texture, per-texel semantics.

mod bake;
mod io;
mod mesh;
mod semantics;
mod texture;

pub use bake::bake_semantics;
pub use io::{load_scene, save_scene, write_mtl, write_obj, SavedScene};
pub use mesh::TriangleMesh;
pub use semantics::{rematch_class, ClassId, LabelManifest, SemanticClassSet, SemanticTexture, SENTINEL};
pub use texture::{nearest_texel, texel_center, uv_to_pixel, TextureImage};

use crate::error::{Error, Result};
use crate::geom::Aabb;

/// The stylization subject: a UV-mapped mesh with its color and label textures.
#[derive(Clone, Debug)]
pub struct TexturedScene {
    pub mesh: TriangleMesh,
    pub texture: TextureImage,
    pub semantics: SemanticTexture,
    pub aabb: Aabb,
}

impl TexturedScene {
    pub fn new(mesh: TriangleMesh, texture: TextureImage, semantics: Option<SemanticTexture>) -> Result<Self> {
        mesh.validate()?;
        let semantics = match semantics {
            Some(s) => {
                if s.dims() != texture.dims() {
                    return Err(Error::DimensionMismatch {
                        what: "semantic texture",
                        found: s.dims(),
                        expected: texture.dims(),
                    });
                }
                s
            }
            None => SemanticTexture::unlabeled(texture.width(), texture.height()),
        };
        let aabb = mesh.aabb();
        Ok(TexturedScene {
            mesh,
            texture,
            semantics,
            aabb,
        })
    }
}
