use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::par;
use crate::render::rasterize_with_limit;

use super::{nearest_texel, ClassId, SemanticClassSet, SemanticTexture, TexturedScene, SENTINEL};

/// Largest label image accepted per view.
const MAX_LABEL_RESOLUTION: usize = 4096;

/// Projects per-view label images onto the texture by majority vote.
///
/// Each foreground pixel votes for its class at the nearest texel of its UV.
/// Texels without votes stay [`SENTINEL`]; ties go to the smallest class
/// index, so the result does not depend on view order.
pub fn bake_semantics(
    scene: &TexturedScene,
    labeled_views: &[(CameraPose, LabelMap)],
    classes: &SemanticClassSet,
) -> Result<SemanticTexture> {
    if labeled_views.is_empty() {
        return Err(Error::InvalidArgument(
            "bake_semantics needs at least one labeled view".into(),
        ));
    }
    let (tw, th) = scene.texture.dims();
    let nc = classes.len();
    for (cam, labels) in labeled_views {
        if labels.dims() != cam.resolution {
            return Err(Error::DimensionMismatch {
                what: "label image",
                found: labels.dims(),
                expected: cam.resolution,
            });
        }
        if let Some(&l) = labels.data().iter().find(|&&l| l != SENTINEL && l as usize >= nc) {
            return Err(Error::InvalidLabel { label: l, classes: nc });
        }
    }
    let votes = par::map_range(labeled_views.len(), |v| -> Result<Vec<(u32, ClassId)>> {
        let (cam, labels) = &labeled_views[v];
        let buf = rasterize_with_limit(&scene.mesh, cam, MAX_LABEL_RESOLUTION)?;
        let mut out = Vec::new();
        for (i, &l) in labels.data().iter().enumerate() {
            if buf.fg_mask[i] && l != SENTINEL {
                let (x, y) = nearest_texel(buf.uv[i], tw, th);
                out.push(((y * tw + x) as u32, l));
            }
        }
        Ok(out)
    });
    let mut counts = vec![0u32; tw * th * nc];
    for view in votes {
        for (texel, l) in view? {
            counts[texel as usize * nc + l as usize] += 1;
        }
    }
    let data = counts
        .chunks(nc)
        .map(|c| {
            let mut best = SENTINEL;
            let mut best_n = 0;
            for (k, &n) in c.iter().enumerate() {
                if n > best_n {
                    best_n = n;
                    best = k as ClassId;
                }
            }
            best
        })
        .collect();
    SemanticTexture::new(LabelMap::from_vec(tw, th, data), classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::image::Image;
    use crate::scene::{TextureImage, TriangleMesh};

    fn quad_scene() -> TexturedScene {
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::new(-1.0, -1.0, 0.0),
                Vec3::new(1.0, -1.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(-1.0, 1.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            uvs: vec![
                [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
                [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            ],
            material_name: "m".into(),
        };
        let tex = TextureImage::new(Image::zeros(8, 8, 3)).unwrap();
        TexturedScene::new(mesh, tex, None).unwrap()
    }

    fn cam() -> CameraPose {
        CameraPose::looking_at(Vec3::new(0.0, 0.0, 1.0), Vec3::ZERO, 90.0, (32, 32))
    }

    #[test]
    fn single_view_labels_every_visible_texel() {
        let scene = quad_scene();
        let classes = SemanticClassSet::default();
        let views = vec![(cam(), LabelMap::filled(32, 32, SemanticClassSet::ROAD))];
        let sem = bake_semantics(&scene, &views, &classes).unwrap();
        assert!(sem.labels().data().iter().all(|&l| l == SemanticClassSet::ROAD));
    }

    #[test]
    fn ties_break_to_smallest_class_and_order_is_irrelevant() {
        let scene = quad_scene();
        let classes = SemanticClassSet::default();
        let a = (cam(), LabelMap::filled(32, 32, SemanticClassSet::CAR));
        let b = (cam(), LabelMap::filled(32, 32, SemanticClassSet::BUILDING));
        let ab = bake_semantics(&scene, &[a.clone(), b.clone()], &classes).unwrap();
        let ba = bake_semantics(&scene, &[b, a], &classes).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.labels().data().iter().all(|&l| l == SemanticClassSet::BUILDING));
    }

    #[test]
    fn unseen_texels_stay_unlabeled() {
        let scene = quad_scene();
        let classes = SemanticClassSet::default();
        let away = CameraPose::looking_at(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 2.0), 60.0, (16, 16));
        let sem = bake_semantics(&scene, &[(away, LabelMap::filled(16, 16, 1))], &classes).unwrap();
        assert!(sem.labels().data().iter().all(|&l| l == SENTINEL));
    }

    #[test]
    fn label_dims_must_match_camera() {
        let scene = quad_scene();
        let classes = SemanticClassSet::default();
        let r = bake_semantics(&scene, &[(cam(), LabelMap::filled(16, 16, 1))], &classes);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
