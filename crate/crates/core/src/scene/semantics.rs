use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LabelMap;

pub type ClassId = u8;

/// Label value for texels or pixels without a class.
pub const SENTINEL: u8 = 255;

const LABELS: [&str; 9] = [
    "sky", "building", "window", "road", "person", "plant", "car", "water", "lights",
];

/// Default illumination-sharing hierarchy as `(child, parent)` pairs.
const DEFAULT_EDGES: [(&str, &str); 8] = [
    ("building", "sky"),
    ("road", "sky"),
    ("water", "sky"),
    ("window", "building"),
    ("lights", "building"),
    ("person", "road"),
    ("car", "road"),
    ("plant", "road"),
];

/// The nine urban classes and their re-match hierarchy rooted at `sky`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticClassSet {
    labels: Vec<String>,
    parent: Vec<Option<ClassId>>,
}

impl Default for SemanticClassSet {
    fn default() -> Self {
        SemanticClassSet::with_edges(&DEFAULT_EDGES).expect("default hierarchy is valid")
    }
}

impl SemanticClassSet {
    pub const SKY: ClassId = 0;
    pub const BUILDING: ClassId = 1;
    pub const WINDOW: ClassId = 2;
    pub const ROAD: ClassId = 3;
    pub const PERSON: ClassId = 4;
    pub const PLANT: ClassId = 5;
    pub const CAR: ClassId = 6;
    pub const WATER: ClassId = 7;
    pub const LIGHTS: ClassId = 8;

    /// Builds the class set with a custom hierarchy. Every non-root class
    /// needs exactly one parent and must reach `sky` without cycles.
    pub fn with_edges(edges: &[(&str, &str)]) -> Result<Self> {
        let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
        let mut parent = vec![None; labels.len()];
        let find = |name: &str| -> Result<ClassId> {
            LABELS
                .iter()
                .position(|l| *l == name)
                .map(|i| i as ClassId)
                .ok_or_else(|| Error::UnknownClass(name.to_string()))
        };
        for &(child, par) in edges {
            let c = find(child)?;
            let p = find(par)?;
            if c == Self::SKY {
                return Err(Error::InvalidArgument("sky is the hierarchy root".into()));
            }
            if parent[c as usize].replace(p).is_some() {
                return Err(Error::InvalidArgument(format!("class '{child}' has two parents")));
            }
        }
        let set = SemanticClassSet { labels, parent };
        for c in 1..set.len() as ClassId {
            let mut cur = c;
            let mut steps = 0;
            while cur != Self::SKY {
                cur = set.parent[cur as usize]
                    .ok_or_else(|| Error::InvalidArgument(format!("class '{}' has no path to sky", set.name(c))))?;
                steps += 1;
                if steps > set.len() {
                    return Err(Error::InvalidArgument("hierarchy has a cycle".into()));
                }
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.labels[id as usize]
    }

    pub fn id(&self, name: &str) -> Result<ClassId> {
        // "light" appears as a shorthand for "lights" in style annotations.
        let name = if name == "light" { "lights" } else { name };
        self.labels
            .iter()
            .position(|l| l == name)
            .map(|i| i as ClassId)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn parent(&self, id: ClassId) -> Option<ClassId> {
        self.parent[id as usize]
    }

    /// Strict ancestors of `id`, nearest first, ending at `sky`.
    pub fn ancestors(&self, id: ClassId) -> Vec<ClassId> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        (0..self.len())
            .filter_map(|c| self.parent[c].map(|p| (self.labels[c].clone(), self.labels[p as usize].clone())))
            .collect()
    }

    /// Nearest ancestor of `missing` whose bit is set in `available`
    /// (bit `i` = class `i` present).
    pub fn rematch(&self, missing: ClassId, available: u16) -> Option<ClassId> {
        self.ancestors(missing).into_iter().find(|&a| available & (1 << a) != 0)
    }
}

/// Substitutes a class missing from the style reference with its nearest
/// available ancestor in the hierarchy.
///
/// Fails with [`Error::NoReference`] when no ancestor (including `sky`) is
/// available.
pub fn rematch_class(missing: &str, available: &[&str], classes: &SemanticClassSet) -> Result<String> {
    let m = classes.id(missing)?;
    let mut mask = 0u16;
    for a in available {
        mask |= 1 << classes.id(a)?;
    }
    if mask & (1 << m) != 0 {
        return Err(Error::InvalidArgument(format!(
            "class '{missing}' is available and needs no re-match"
        )));
    }
    classes
        .rematch(m, mask)
        .map(|c| classes.name(c).to_string())
        .ok_or_else(|| Error::NoReference(missing.to_string()))
}

/// Sidecar describing how label values map to class names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub version: u32,
    pub labels: Vec<String>,
    pub sentinel: u8,
    pub hierarchy: Vec<(String, String)>,
}

/// Per-texel class indices aligned with a [`super::TextureImage`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticTexture(LabelMap);

impl SemanticTexture {
    pub fn new(labels: LabelMap, classes: &SemanticClassSet) -> Result<Self> {
        for &l in labels.data() {
            if l != SENTINEL && l as usize >= classes.len() {
                return Err(Error::InvalidLabel {
                    label: l,
                    classes: classes.len(),
                });
            }
        }
        Ok(SemanticTexture(labels))
    }

    pub fn unlabeled(width: usize, height: usize) -> Self {
        SemanticTexture(LabelMap::filled(width, height, SENTINEL))
    }

    pub fn labels(&self) -> &LabelMap {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn manifest_path(png: &Path) -> PathBuf {
        let mut s = png.as_os_str().to_owned();
        s.push(".labels.json");
        PathBuf::from(s)
    }

    /// Writes an 8-bit single-channel PNG plus a `<png>.labels.json` sidecar.
    pub fn save(&self, png: impl AsRef<Path>, classes: &SemanticClassSet) -> Result<()> {
        let png = png.as_ref();
        self.0.save_png(png)?;
        let manifest = LabelManifest {
            version: 1,
            labels: classes.labels().to_vec(),
            sentinel: SENTINEL,
            hierarchy: classes.edges(),
        };
        let path = Self::manifest_path(png);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
    }

    /// Loads a label PNG. When a sidecar exists its label order is honoured
    /// and remapped onto `classes`.
    pub fn load(png: impl AsRef<Path>, classes: &SemanticClassSet) -> Result<Self> {
        let png = png.as_ref();
        let mut map = LabelMap::load_png(png)?;
        let mpath = Self::manifest_path(png);
        if mpath.exists() {
            let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
            let manifest: LabelManifest = serde_json::from_str(&text)?;
            let remap: Vec<ClassId> = manifest.labels.iter().map(|n| classes.id(n)).collect::<Result<_>>()?;
            for v in map.data_mut() {
                if *v == manifest.sentinel {
                    *v = SENTINEL;
                } else if let Some(&r) = remap.get(*v as usize) {
                    *v = r;
                } else {
                    return Err(Error::InvalidLabel {
                        label: *v,
                        classes: remap.len(),
                    });
                }
            }
        }
        SemanticTexture::new(map, classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_set_has_nine_classes_rooted_at_sky() {
        let c = SemanticClassSet::default();
        assert_eq!(c.len(), 9);
        assert_eq!(c.parent(SemanticClassSet::SKY), None);
        for id in 1..9 {
            assert_eq!(*c.ancestors(id).last().unwrap(), SemanticClassSet::SKY);
        }
    }

    #[test]
    fn water_rematches_to_sky() {
        let c = SemanticClassSet::default();
        let r = rematch_class("water", &["sky", "building", "window", "light"], &c).unwrap();
        assert_eq!(r, "sky");
    }

    #[test]
    fn plant_rematches_to_road() {
        let c = SemanticClassSet::default();
        let r = rematch_class("plant", &["sky", "building", "window", "road"], &c).unwrap();
        assert_eq!(r, "road");
    }

    #[test]
    fn root_fallback_and_no_reference() {
        let c = SemanticClassSet::default();
        assert_eq!(rematch_class("car", &["sky"], &c).unwrap(), "sky");
        assert!(matches!(
            rematch_class("car", &["building"], &c),
            Err(Error::NoReference(_))
        ));
        assert!(rematch_class("building", &["building", "sky"], &c).is_err());
    }

    #[test]
    fn cyclic_or_orphan_hierarchies_are_rejected() {
        assert!(SemanticClassSet::with_edges(&[("building", "sky")]).is_err());
        let mut edges = DEFAULT_EDGES.to_vec();
        edges[0] = ("building", "window");
        assert!(SemanticClassSet::with_edges(&edges).is_err());
    }

    #[test]
    fn save_load_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let c = SemanticClassSet::default();
        let t = SemanticTexture::new(
            LabelMap::from_fn(4, 3, |x, y| if x == 0 { SENTINEL } else { ((x + y) % 9) as u8 }),
            &c,
        )
        .unwrap();
        let p = dir.path().join("sem.png");
        t.save(&p, &c).unwrap();
        assert_eq!(SemanticTexture::load(&p, &c).unwrap(), t);
    }

    #[test]
    fn invalid_label_rejected() {
        let c = SemanticClassSet::default();
        assert!(matches!(
            SemanticTexture::new(LabelMap::filled(2, 2, 9), &c),
            Err(Error::InvalidLabel { label: 9, .. })
        ));
    }
}
