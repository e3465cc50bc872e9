mod common;

use meshstyle::field::{FieldConfig, NeuralTextureField};
use meshstyle::fixture::{cube_city, CubeCityConfig};
use meshstyle::image::Image;
use meshstyle::planner::plan_pivot_views;
use meshstyle::render::*;

fn city() -> meshstyle::fixture::CubeCity {
    cube_city(&CubeCityConfig {
        texture_size: 128,
        ..CubeCityConfig::default()
    })
    .unwrap()
}

#[test]
fn rasterizer_agrees_with_ray_casting() {
    let city = city();
    let scene = &city.scene;
    let plan = plan_pivot_views(scene, 5, 9, 0.35, 90.0, (96, 96), 0).unwrap();
    for cam in plan.pivots.iter().step_by(11) {
        let buf = rasterize(&scene.mesh, cam).unwrap();
        let oracle = common::raycast(&scene.mesh, cam);
        let n = oracle.len() as f64;
        let cov_oracle = oracle.iter().filter(|h| h.is_some()).count() as f64 / n;
        assert!(
            (buf.coverage() - cov_oracle).abs() <= 0.005,
            "{} vs {cov_oracle}",
            buf.coverage()
        );
        let mut agree = 0usize;
        let mut both = 0usize;
        for (i, hit) in oracle.iter().enumerate() {
            if let (Some((_, uv)), true) = (hit, buf.fg_mask[i]) {
                both += 1;
                if (uv[0] - buf.uv[i][0]).abs() < 1e-6 && (uv[1] - buf.uv[i][1]).abs() < 1e-6 {
                    agree += 1;
                }
            }
        }
        assert!(agree as f64 >= 0.995 * both as f64, "{agree} of {both} uvs agree");
    }
}

/// Mean foreground intensity of a field render.
fn mean_fg(render: &FieldRender) -> f64 {
    render.image.data().iter().sum::<f64>() / (3 * render.foreground_count()) as f64
}

#[test]
fn field_render_gradient_matches_finite_differences() {
    let city = city();
    let scene = &city.scene;
    let plan = plan_pivot_views(scene, 5, 9, 0.35, 90.0, (48, 48), 0).unwrap();
    let buf = rasterize(&scene.mesh, &plan.pivots[3]).unwrap();
    let mut field = NeuralTextureField::new(FieldConfig::small(), 5).unwrap();
    // move away from the symmetric initialization
    for (i, p) in field.params_mut().iter_mut().enumerate() {
        *p += 0.05 * ((i * 7919 % 101) as f32 / 101.0 - 0.5);
    }
    let r = render_from_field(&buf, &field);
    let n = (3 * r.foreground_count()) as f64;
    let g_img = Image::from_fn(48, 48, 3, |_, x, y| if buf.fg_mask[y * 48 + x] { 1.0 / n } else { 0.0 });
    let mut grad = field.zero_gradient();
    r.backward(&field, &g_img, &mut grad);
    let g = grad.as_slice();
    // last-layer parameters see no ReLU, so the loss is smooth in them
    let smooth = [g.len() - 1, g.len() - 40];
    // a grid entry moves many hidden units, so ReLU kinks inside the step
    // limit the finite-difference accuracy
    let mut touched: Vec<usize> = (0..g.len() - 200).filter(|&i| g[i] != 0.0).collect();
    touched.sort_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()));
    let grid = touched[touched.len() * 9 / 10];
    for (k, h, tol) in [(smooth[0], 1e-3f32, 1e-3), (smooth[1], 1e-3, 1e-3), (grid, 1e-4, 1e-2)] {
        let mut plus = field.clone();
        plus.params_mut()[k] += h;
        let mut minus = field.clone();
        minus.params_mut()[k] -= h;
        let dp = plus.params()[k] as f64 - minus.params()[k] as f64;
        let fd = (mean_fg(&render_from_field(&buf, &plus)) - mean_fg(&render_from_field(&buf, &minus))) / dp;
        let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs());
        assert!(g[k] != 0.0 && rel <= tol, "param {k}: analytic {} vs fd {fd}", g[k]);
    }
}

/// Content renders and field renders agree once the field fits the texture.
#[test]
fn distilled_field_renders_like_its_texture() {
    use meshstyle::field::{distill, DistillationConfig};
    let city = city();
    let scene = &city.scene;
    let mut field = NeuralTextureField::new(FieldConfig::default(), 0).unwrap();
    let cfg = DistillationConfig {
        steps: 1000,
        eval_every: 100,
        target_psnr: Some(40.0),
        ..DistillationConfig::default()
    };
    assert!(distill(&mut field, &scene.texture, &cfg).unwrap().reached_target);
    let plan = plan_pivot_views(scene, 5, 9, 0.35, 90.0, (128, 128), 0).unwrap();
    for cam in plan.pivots.iter().step_by(7) {
        let buf = rasterize(&scene.mesh, cam).unwrap();
        let content = render_content(&buf, &scene.texture);
        let rendered = render_from_field(&buf, &field);
        let n = rendered.foreground_count();
        if n == 0 {
            continue;
        }
        let diff = content
            .data()
            .iter()
            .zip(rendered.image.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / (3 * n) as f64;
        assert!(diff <= 2.0 / 255.0, "mean abs {} / 255", diff * 255.0);
    }
}
