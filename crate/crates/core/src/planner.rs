//! Pivot view placement, novel-view sampling and the progressive
//! field-of-view schedule.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::rng;
use crate::scene::{TexturedScene, TriangleMesh};

pub const DEFAULT_PIVOT_POSITIONS: usize = 5;
pub const DEFAULT_REGIONS: usize = 9;
pub const DEFAULT_OFFSET_FRACTION: f64 = 0.35;
pub const KMEANS_ITERATIONS: usize = 20;

/// Face partition into spatially coherent regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Regions {
    pub centroids: Vec<Vec3>,
    /// Region of every face.
    pub assignment: Vec<usize>,
    /// Surface area per region.
    pub areas: Vec<f64>,
}

/// Area-weighted k-means over face centroids (k-means++ seeding from
/// `seed`, fixed iteration count).
pub fn subdivide_regions(mesh: &TriangleMesh, r: usize, seed: u64) -> Result<Regions> {
    let n = mesh.faces.len();
    if r == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "region count and face count must be positive".into(),
        ));
    }
    if r > n {
        return Err(Error::InvalidArgument(format!("{r} regions requested for {n} faces")));
    }
    let pts: Vec<Vec3> = (0..n).map(|f| mesh.face_centroid(f)).collect();
    let wts: Vec<f64> = (0..n).map(|f| mesh.face_area(f).max(1e-300)).collect();
    let mut g = rng::stream(seed, rng::tag::REGIONS, 0);

    let mut centers = Vec::with_capacity(r);
    let total: f64 = wts.iter().sum();
    let mut pick = g.gen::<f64>() * total;
    let first = wts.iter().position(|w| {
        pick -= w;
        pick <= 0.0
    });
    centers.push(pts[first.unwrap_or(n - 1)]);
    let mut d2: Vec<f64> = pts.iter().map(|p| (*p - centers[0]).norm().powi(2)).collect();
    while centers.len() < r {
        let s: f64 = d2.iter().zip(&wts).map(|(d, w)| d * w).sum();
        let next = if s > 0.0 {
            let mut t = g.gen::<f64>() * s;
            (0..n)
                .find(|&i| {
                    t -= d2[i] * wts[i];
                    t <= 0.0 && d2[i] > 0.0
                })
                .unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(n - 1))
        } else {
            centers.len()
        };
        centers.push(pts[next]);
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min((*p - pts[next]).norm().powi(2));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        for (i, p) in pts.iter().enumerate() {
            assignment[i] = nearest(&centers, *p);
        }
        let mut sum = vec![Vec3::ZERO; r];
        let mut wsum = vec![0.0; r];
        for i in 0..n {
            sum[assignment[i]] += pts[i] * wts[i];
            wsum[assignment[i]] += wts[i];
        }
        for k in 0..r {
            if wsum[k] > 0.0 {
                centers[k] = sum[k] / wsum[k];
            }
        }
    }
    for (i, p) in pts.iter().enumerate() {
        assignment[i] = nearest(&centers, *p);
    }
    let mut sum = vec![Vec3::ZERO; r];
    let mut areas = vec![0.0; r];
    for i in 0..n {
        sum[assignment[i]] += pts[i] * wts[i];
        areas[assignment[i]] += wts[i];
    }
    let centroids = (0..r)
        .map(|k| if areas[k] > 0.0 { sum[k] / areas[k] } else { centers[k] })
        .collect();
    Ok(Regions {
        centroids,
        assignment,
        areas,
    })
}

fn nearest(centers: &[Vec3], p: Vec3) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = (p - *c).norm();
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

/// Pivot cameras: every pivot position paired with every region centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPlan {
    /// `pivots[p * r + k]` sits at `pivot_positions[p]` looking at
    /// `region_centroids[k]`.
    pub pivots: Vec<CameraPose>,
    pub pivot_positions: Vec<Vec3>,
    pub region_centroids: Vec<Vec3>,
    /// Center of the scene bounding box.
    pub model_center: Vec3,
}

impl ViewPlan {
    pub fn regions(&self) -> usize {
        self.region_centroids.len()
    }

    pub fn positions(&self) -> usize {
        self.pivot_positions.len()
    }

    pub fn pivot(&self, position: usize, region: usize) -> &CameraPose {
        &self.pivots[position * self.regions() + region]
    }

    pub fn validate(&self) -> Result<()> {
        if self.pivots.is_empty() || self.pivots.len() != self.positions() * self.regions() {
            return Err(Error::InvalidArgument(
                "plan must hold positions × regions pivots".into(),
            ));
        }
        for p in &self.pivots {
            p.validate()?;
            if !self.region_centroids.contains(&p.look_at) {
                return Err(Error::InvalidArgument("pivot look_at is not a region centroid".into()));
            }
        }
        Ok(())
    }
}

/// Aabb faces pivots are spread over, in round-robin order: top, then the
/// four sides. Each entry is `(outward normal, tangent u, tangent v)`.
const FACES: [(Vec3, Vec3, Vec3); 5] = [
    (Vec3::Y, Vec3::X, Vec3::Z),
    (Vec3::X, Vec3::Z, Vec3::Y),
    (Vec3::new(-1.0, 0.0, 0.0), Vec3::Z, Vec3::Y),
    (Vec3::Z, Vec3::X, Vec3::Y),
    (Vec3::new(0.0, 0.0, -1.0), Vec3::X, Vec3::Y),
];

fn axis(v: Vec3) -> usize {
    if v.x != 0.0 {
        0
    } else if v.y != 0.0 {
        1
    } else {
        2
    }
}

/// `p` positions on the top and side faces of `aabb`, pushed outward by
/// `offset`. Positions sharing a face are spread over a regular grid.
pub fn pivot_positions(aabb: &Aabb, p: usize, offset: f64) -> Vec<Vec3> {
    let per_face: Vec<usize> = (0..FACES.len())
        .map(|f| p / FACES.len() + usize::from(f < p % FACES.len()))
        .collect();
    let c = aabb.center();
    let e = aabb.extent();
    let mut out = vec![Vec3::ZERO; p];
    for (f, &(n, u, v)) in FACES.iter().enumerate() {
        let m = per_face[f];
        if m == 0 {
            continue;
        }
        let g = (m as f64).sqrt().ceil() as usize;
        for k in 0..m {
            let (iu, iv) = (k % g, k / g);
            let rows = m.div_ceil(g);
            let su = (iu as f64 + 0.5) / g as f64 - 0.5;
            let sv = (iv as f64 + 0.5) / rows as f64 - 0.5;
            let face = c + n * (0.5 * e[axis(n)]) + u * (su * e[axis(u)]) + v * (sv * e[axis(v)]);
            // round-robin index of the k-th position on face f
            out[k * FACES.len() + f] = face + n * offset;
        }
    }
    out
}

/// Plans `p × r` pivot views of resolution `resolution` at `fov_deg`.
pub fn plan_pivot_views(
    scene: &TexturedScene,
    p: usize,
    r: usize,
    offset_fraction: f64,
    fov_deg: f64,
    resolution: (usize, usize),
    seed: u64,
) -> Result<ViewPlan> {
    if p == 0 || r == 0 {
        return Err(Error::InvalidArgument(
            "pivot and region counts must be positive".into(),
        ));
    }
    if !(offset_fraction > 0.0) {
        return Err(Error::InvalidArgument("pivot offset must be positive".into()));
    }
    let aabb = scene.aabb;
    if aabb.diagonal() == 0.0 {
        return Err(Error::DegenerateAabb);
    }
    let regions = subdivide_regions(&scene.mesh, r, seed)?;
    let positions = pivot_positions(&aabb, p, offset_fraction * aabb.diagonal());
    let mut pivots = Vec::with_capacity(p * r);
    for pos in &positions {
        for c in &regions.centroids {
            pivots.push(CameraPose::looking_at(*pos, *c, fov_deg, resolution));
        }
    }
    let plan = ViewPlan {
        pivots,
        pivot_positions: positions,
        region_centroids: regions.centroids,
        model_center: aabb.center(),
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProgressiveSchedule {
    pub levels: usize,
    pub fov_start_deg: f64,
    pub fov_end_deg: f64,
    /// Training views per epoch at each level.
    pub views_per_level: Vec<usize>,
    /// Translation bound as a fraction of the camera-to-model distance.
    pub alpha: f64,
}

impl Default for ProgressiveSchedule {
    fn default() -> Self {
        Self::with_levels(5)
    }
}

impl ProgressiveSchedule {
    /// 90° → 20° over `levels` levels with `64 · 2^level` views each.
    pub fn with_levels(levels: usize) -> Self {
        ProgressiveSchedule {
            levels,
            fov_start_deg: 90.0,
            fov_end_deg: 20.0,
            views_per_level: (0..levels).map(|l| 64usize << l.min(20)).collect(),
            alpha: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("schedule: {m}")));
        if self.levels == 0 {
            return bad("at least one level required");
        }
        if !(self.fov_start_deg >= self.fov_end_deg && self.fov_end_deg > 0.0 && self.fov_start_deg < 180.0) {
            return bad("fov must decrease within (0, 180)");
        }
        if self.views_per_level.len() != self.levels {
            return bad("one view count per level required");
        }
        if self.views_per_level.windows(2).any(|w| w[1] < w[0]) || self.views_per_level.contains(&0) {
            return bad("views per level must be positive and nondecreasing");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Field of view at `level`, interpolated linearly from start to end.
pub fn schedule_fov(level: usize, schedule: &ProgressiveSchedule) -> Result<f64> {
    if level >= schedule.levels {
        return Err(Error::InvalidArgument(format!(
            "level {level} outside 0..{}",
            schedule.levels
        )));
    }
    if schedule.levels == 1 {
        return Ok(schedule.fov_start_deg);
    }
    let t = level as f64 / (schedule.levels - 1) as f64;
    Ok(schedule.fov_start_deg + t * (schedule.fov_end_deg - schedule.fov_start_deg))
}

/// Control points of the quadratic Bezier seeded at pivot position `seed`:
/// the seed and its two nearest other pivot positions (repeated when fewer
/// exist).
pub fn bezier_controls(positions: &[Vec3], seed: usize) -> [Vec3; 3] {
    let p0 = positions[seed];
    let mut others: Vec<usize> = (0..positions.len()).filter(|&i| i != seed).collect();
    others.sort_by(|&a, &b| {
        p0.distance(positions[a])
            .total_cmp(&p0.distance(positions[b]))
            .then(a.cmp(&b))
    });
    let p1 = others.first().map_or(p0, |&i| positions[i]);
    let p2 = others.get(1).map_or(p1, |&i| positions[i]);
    [p0, p1, p2]
}

pub fn bezier(c: &[Vec3; 3], t: f64) -> Vec3 {
    let s = 1.0 - t;
    c[0] * (s * s) + c[1] * (2.0 * s * t) + c[2] * (t * t)
}

/// The random draws behind one novel view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NovelViewDraw {
    pub position: usize,
    pub region: usize,
    pub t: f64,
    /// Translations along camera right and up, in units of `α · dist_cam`.
    pub shift: (f64, f64),
}

/// Deterministic novel view for a given draw.
pub fn novel_view(plan: &ViewPlan, draw: &NovelViewDraw, fov_deg: f64, alpha: f64) -> CameraPose {
    let controls = bezier_controls(&plan.pivot_positions, draw.position);
    let base = bezier(&controls, draw.t);
    let look_at = plan.region_centroids[draw.region];
    let resolution = plan.pivots[0].resolution;
    let cam = CameraPose::looking_at(base, look_at, fov_deg, resolution);
    let (right, up, _) = cam.basis();
    let dist = base.distance(plan.model_center);
    let position = base + right * (draw.shift.0 * alpha * dist) + up * (draw.shift.1 * alpha * dist);
    CameraPose::looking_at(position, look_at, fov_deg, resolution)
}

/// Samples the novel view for training iteration `index` of a run seeded
/// with `seed`.
pub fn sample_novel_view(
    plan: &ViewPlan,
    level: usize,
    schedule: &ProgressiveSchedule,
    seed: u64,
    index: u64,
) -> Result<(CameraPose, NovelViewDraw)> {
    if plan.pivots.is_empty() {
        return Err(Error::InvalidArgument("view plan is empty".into()));
    }
    let fov = schedule_fov(level, schedule)?;
    let mut g = rng::stream(seed, rng::tag::VIEW, index);
    let draw = NovelViewDraw {
        position: g.gen_range(0..plan.positions()),
        region: g.gen_range(0..plan.regions()),
        t: g.gen_range(0.0..=1.0),
        shift: (g.gen_range(-1.0..=1.0), g.gen_range(-1.0..=1.0)),
    };
    let mut pose = novel_view(plan, &draw, fov, schedule.alpha);
    if pose.validate().is_err() {
        // translated onto the look-at point; fall back to the untranslated curve point
        pose = novel_view(
            plan,
            &NovelViewDraw {
                shift: (0.0, 0.0),
                ..draw
            },
            fov,
            schedule.alpha,
        );
    }
    Ok((pose, draw))
}

/// Plan plus schedule as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub plan: ViewPlan,
    pub schedule: ProgressiveSchedule,
}

impl PlanFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: PlanFile = serde_json::from_str(&text)?;
        f.plan.validate()?;
        f.schedule.validate()?;
        Ok(f)
    }
}
