mod common;

use common::{min_eigenvalue, numeric_grad, rel_err};
use meshstyle::features::FeatureExtractor;
use meshstyle::image::{Image, LabelMap};
use meshstyle::losses::*;
use meshstyle::scene::SemanticClassSet;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

#[test]
fn content_gradient_matches_finite_differences() {
    let fx = FeatureExtractor::default();
    let c = Image::random(8, 8, 3, 11);
    let z = Image::random(8, 8, 3, 12);
    let (_, g) = content_loss_with_grad(&c, &z, &fx, true).unwrap();
    let num = numeric_grad(&z, H, |z| content_loss(&c, z, &fx).unwrap());
    let e = rel_err(&g.unwrap(), &num);
    assert!(e <= TOL, "rel err {e}");
}

#[test]
fn global_style_gradient_matches_finite_differences() {
    let fx = FeatureExtractor::default();
    let s = Image::random(16, 16, 3, 13);
    let z = Image::random(8, 8, 3, 14);
    let mask: Vec<bool> = (0..64).map(|i| i % 8 < 6).collect();
    let (_, g) = global_style_loss_with_grad(&s, &z, Some(&mask), &fx, true).unwrap();
    let num = numeric_grad(&z, H, |z| global_style_loss(&s, z, Some(&mask), &fx).unwrap());
    let e = rel_err(&g.unwrap(), &num);
    assert!(e <= TOL, "rel err {e}");
}

#[test]
fn local_semantic_gradient_matches_finite_differences() {
    let fx = FeatureExtractor::default();
    let classes = SemanticClassSet::default();
    let s = Image::random(16, 16, 3, 15);
    let s_lab = LabelMap::from_fn(16, 16, |x, _| {
        if x < 8 {
            SemanticClassSet::SKY
        } else {
            SemanticClassSet::ROAD
        }
    });
    let z = Image::random(8, 8, 3, 16);
    let z_lab = LabelMap::from_fn(8, 8, |_, y| {
        if y < 4 {
            SemanticClassSet::WATER
        } else {
            SemanticClassSet::CAR
        }
    });
    let inputs = LocalStyleInputs {
        patch: &s,
        patch_labels: &s_lab,
        full: &s,
        full_labels: &s_lab,
        classes: &classes,
    };
    let (l, g) = local_semantic_loss_with_grad(&z, &z_lab, &inputs, &fx, true).unwrap();
    assert!(l.value > 0.0);
    let num = numeric_grad(&z, H, |z| local_semantic_loss(z, &z_lab, &inputs, &fx).unwrap().value);
    let e = rel_err(&g.unwrap(), &num);
    assert!(e <= TOL, "rel err {e}");
}

#[test]
fn photorealism_gradient_matches_finite_differences() {
    let c = Image::random(8, 8, 3, 17);
    let m = matting_laplacian(&c, matting::DEFAULT_EPS).unwrap();
    let z = Image::random(8, 8, 3, 18);
    let (_, g) = photorealism_loss_with_grad(&z, &m).unwrap();
    let num = numeric_grad(&z, H, |z| photorealism_loss(z, &m).unwrap());
    let e = rel_err(&g, &num);
    assert!(e <= TOL, "rel err {e}");
}

#[test]
fn edited_gradient_matches_finite_differences() {
    let s = Image::random(8, 8, 3, 19);
    let z = Image::random(8, 8, 3, 20);
    let (_, g) = edited_view_penalty_with_grad(&z, &s).unwrap();
    let num = numeric_grad(&z, H, |z| edited_view_penalty(z, &s).unwrap());
    assert!(rel_err(&g, &num) <= TOL);
}

#[test]
fn laplacian_is_psd_on_random_images() {
    for seed in 0..3 {
        let img = Image::random(16, 16, 3, 100 + seed);
        let m = matting_laplacian(&img, matting::DEFAULT_EPS).unwrap();
        let dense = m.to_dense();
        let ones = vec![1.0; 256];
        assert!(m.apply(&ones).iter().all(|v| v.abs() <= 1e-8));
        let lo = min_eigenvalue(&dense);
        assert!(lo >= -1e-8, "seed {seed}: min eigenvalue {lo}");
    }
}

/// Per-class statistics computed directly from hand-built feature maps.
#[test]
fn two_class_stats_match_brute_force() {
    let f = Image::from_fn(4, 4, 2, |c, x, y| ((c * 7 + x * 3 + y * 5) % 9) as f64 * 0.25);
    let lab: Vec<u8> = (0..16).map(|i| if i % 4 < 2 { 0 } else { 1 }).collect();
    let t = Image::from_fn(4, 4, 2, |c, x, y| ((c + x * y) % 4) as f64 * 0.5);
    let brute = |img: &Image, cls: u8| -> (Vec<f64>, Vec<f64>) {
        let mut mu = vec![];
        let mut sd = vec![];
        for c in 0..2 {
            let v: Vec<f64> = (0..16).filter(|&i| lab[i] == cls).map(|i| img.plane(c)[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            mu.push(m);
            sd.push((var + stats::SIGMA_EPS).sqrt());
        }
        (mu, sd)
    };
    let mut expect = 0.0;
    let mut got = 0.0;
    for cls in 0..2u8 {
        let (ma, sa) = brute(&f, cls);
        let (mb, sb) = brute(&t, cls);
        expect += (0..2)
            .map(|c| (ma[c] - mb[c]).powi(2) + (sa[c] - sb[c]).powi(2))
            .sum::<f64>()
            / 2.0;
        let mask: Vec<bool> = lab.iter().map(|&l| l == cls).collect();
        got += stats_loss(
            &channel_stats(&t, Some(&mask)).unwrap(),
            &channel_stats(&f, Some(&mask)).unwrap(),
        );
    }
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn water_without_style_reference_matches_sky() {
    let fx = FeatureExtractor::default();
    let classes = SemanticClassSet::default();
    let sky_style = Image::from_fn(32, 32, 3, |c, x, y| 0.2 + 0.1 * c as f64 + 0.01 * ((x * y) % 7) as f64);
    let sky_lab = LabelMap::filled(32, 32, SemanticClassSet::SKY);
    let z = Image::random(32, 32, 3, 21);
    let water = LabelMap::filled(32, 32, SemanticClassSet::WATER);
    let sky = LabelMap::filled(32, 32, SemanticClassSet::SKY);
    let inputs = LocalStyleInputs {
        patch: &sky_style,
        patch_labels: &sky_lab,
        full: &sky_style,
        full_labels: &sky_lab,
        classes: &classes,
    };
    let as_water = local_semantic_loss(&z, &water, &inputs, &fx).unwrap();
    let as_sky = local_semantic_loss(&z, &sky, &inputs, &fx).unwrap();
    assert!(as_water.value > 0.0);
    assert_eq!(as_water.value, as_sky.value);
    assert_eq!(as_water.no_reference, 0);
}

#[test]
fn unmatched_class_counts_no_reference() {
    let fx = FeatureExtractor::default();
    let classes = SemanticClassSet::default();
    let s = Image::random(16, 16, 3, 22);
    let road = LabelMap::filled(16, 16, SemanticClassSet::ROAD);
    let z = Image::random(16, 16, 3, 23);
    let window = LabelMap::filled(16, 16, SemanticClassSet::WINDOW);
    let inputs = LocalStyleInputs {
        patch: &s,
        patch_labels: &road,
        full: &s,
        full_labels: &road,
        classes: &classes,
    };
    let l = local_semantic_loss(&z, &window, &inputs, &fx).unwrap();
    assert_eq!(
        l,
        LocalLoss {
            value: 0.0,
            no_reference: 1
        }
    );
}
