mod common;

use meshstyle::fixture::{cube_city, CubeCityConfig};
use meshstyle::planner::*;
use meshstyle::render::rasterize;
use meshstyle::scene::{nearest_texel, SENTINEL};
use proptest::prelude::*;

/// Coverage threshold frozen from the ray-cast oracle run on this fixture
/// (measured 0.5735 of the mesh-mapped texels).
const T_COV: f64 = 0.57;

fn city() -> meshstyle::fixture::CubeCity {
    cube_city(&CubeCityConfig {
        texture_size: 256,
        ..CubeCityConfig::default()
    })
    .unwrap()
}

#[test]
fn fixture_plan_has_45_poses_and_covers_the_texture() {
    let city = city();
    let scene = &city.scene;
    let plan = plan_pivot_views(scene, 5, 9, 0.35, 90.0, (128, 128), 0).unwrap();
    assert_eq!(plan.pivots.len(), 45);
    let (tw, th) = scene.texture.dims();
    let mut raster = vec![false; tw * th];
    let mut oracle = vec![false; tw * th];
    for cam in &plan.pivots {
        let buf = rasterize(&scene.mesh, cam).unwrap();
        for (i, &fg) in buf.fg_mask.iter().enumerate() {
            if fg {
                let (x, y) = nearest_texel(buf.uv[i], tw, th);
                raster[y * tw + x] = true;
            }
        }
        for (_, uv) in common::raycast(&scene.mesh, cam).into_iter().flatten() {
            let (x, y) = nearest_texel(uv, tw, th);
            oracle[y * tw + x] = true;
        }
    }
    // texels outside the atlas tiles carry no label and are not part of the surface
    let mapped: Vec<bool> = scene.semantics.labels().data().iter().map(|&l| l != SENTINEL).collect();
    let total = mapped.iter().filter(|&&m| m).count() as f64;
    let frac = |m: &[bool]| m.iter().zip(&mapped).filter(|(&v, &k)| v && k).count() as f64 / total;
    let (cov, cov_oracle) = (frac(&raster), frac(&oracle));
    assert!(
        (cov - cov_oracle).abs() <= 0.005,
        "rasterizer {cov} vs oracle {cov_oracle}"
    );
    assert!(cov_oracle >= T_COV, "{cov_oracle}");
    assert!(cov >= T_COV, "{cov}");
}

#[test]
fn regions_partition_faces_with_balanced_area() {
    let city = city();
    let regions = subdivide_regions(&city.scene.mesh, 9, 0).unwrap();
    assert_eq!(regions.assignment.len(), city.scene.mesh.faces.len());
    assert!(regions.assignment.iter().all(|&r| r < 9));
    let mut areas = [0.0; 9];
    for (f, &r) in regions.assignment.iter().enumerate() {
        areas[r] += city.scene.mesh.face_area(f);
    }
    let mean = areas.iter().sum::<f64>() / 9.0;
    for (a, b) in areas.iter().zip(&regions.areas) {
        assert!((a - b).abs() <= 1e-9 * mean);
        assert!(*a <= 3.0 * mean && *a >= mean / 3.0, "region area {a} vs mean {mean}");
    }
}

#[test]
fn default_schedule_fovs() {
    let s = ProgressiveSchedule::default();
    let fovs: Vec<f64> = (0..5).map(|l| schedule_fov(l, &s).unwrap()).collect();
    assert_eq!(fovs, vec![90.0, 72.5, 55.0, 37.5, 20.0]);
    assert!(schedule_fov(5, &s).is_err());
}

#[test]
fn plan_file_roundtrips() {
    let city = city();
    let plan = plan_pivot_views(&city.scene, 5, 9, 0.35, 90.0, (64, 64), 0).unwrap();
    let file = PlanFile {
        plan,
        schedule: ProgressiveSchedule::default(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    file.save(&path).unwrap();
    assert_eq!(PlanFile::load(&path).unwrap(), file);
}

fn fixture_plan() -> &'static ViewPlan {
    static PLAN: std::sync::OnceLock<ViewPlan> = std::sync::OnceLock::new();
    PLAN.get_or_init(|| plan_pivot_views(&city().scene, 5, 9, 0.35, 90.0, (64, 64), 0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn novel_views_are_reproducible_and_bounded(seed in 0u64..1_000, index in 0u64..10_000, level in 0usize..5) {
        let plan = fixture_plan();
        let s = ProgressiveSchedule::default();
        let (a, da) = sample_novel_view(plan, level, &s, seed, index).unwrap();
        let (b, db) = sample_novel_view(plan, level, &s, seed, index).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(da, db);
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(a.fov_deg, schedule_fov(level, &s).unwrap());
        prop_assert!(da.shift.0.abs() <= 1.0 && da.shift.1.abs() <= 1.0);
        prop_assert!((0.0..=1.0).contains(&da.t));
        // the look-at target stays at the image center
        let (px, py, _) = a.project(plan.region_centroids[da.region]).unwrap();
        prop_assert!((px - 32.0).abs() < 1e-6 && (py - 32.0).abs() < 1e-6);
    }
}
