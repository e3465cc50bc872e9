use meshstyle::embedding::LexiconEmbedding;
use meshstyle::features::FeatureExtractor;
use meshstyle::image::Image;
use meshstyle::metrics::*;
use proptest::prelude::*;

/// Direct SSIM: full 2D Gaussian window at every valid position, moments
/// computed per window.
fn ssim_direct(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let n = SSIM_WINDOW;
    let r = (n / 2) as f64;
    let mut k = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
            k[j * n + i] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ua, mut ub, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    let p = (y0 + j) * w + x0 + i;
                    let kw = k[j * n + i];
                    ua += kw * a[p];
                    ub += kw * b[p];
                    aa += kw * a[p] * a[p];
                    bb += kw * b[p] * b[p];
                    ab += kw * a[p] * b[p];
                }
            }
            let (va, vb, cov) = (aa - ua * ua, bb - ub * ub, ab - ua * ub);
            total += ((2.0 * ua * ub + c1) * (2.0 * cov + c2)) / ((ua * ua + ub * ub + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_window_evaluation() {
    let (w, h) = (31, 27);
    let a = Image::random(w, h, 1, 11);
    let b = a.map(|v| 0.7 * v + 0.1);
    let c = Image::random(w, h, 1, 12);
    for other in [&b, &c] {
        let fast = ssim(a.plane(0), other.plane(0), w, h);
        let slow = ssim_direct(a.plane(0), other.plane(0), w, h);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn masked_lpips_ignores_pixels_outside_the_mask() {
    let fx = FeatureExtractor::default();
    let (w, h) = (40, 32);
    let a = Image::random(w, h, 3, 1);
    let mask: Vec<bool> = (0..w * h).map(|i| (i % w) < w / 2).collect();
    let mut b = a.clone();
    for y in 0..h {
        for x in w / 2..w {
            for c in 0..3 {
                b.set(c, x, y, 1.0 - a.get(c, x, y));
            }
        }
    }
    assert_eq!(masked_lpips(&a, &a, &mask, &fx).unwrap(), 0.0);
    assert_eq!(masked_lpips(&a, &b, &mask, &fx).unwrap(), 0.0);
    assert!(perceptual_distance(&a, &b, &fx).unwrap() > 0.0);
    assert!(masked_lpips(&a, &b, &vec![false; w * h], &fx).is_err());
}

#[test]
fn report_averages_per_view_metrics() {
    let fx = FeatureExtractor::default();
    let em = LexiconEmbedding;
    let imgs: Vec<Image> = (0..4).map(|s| Image::random(32, 32, 3, s)).collect();
    let mask = vec![true; 32 * 32];
    let views = vec![
        EvalView {
            name: "a".into(),
            content: &imgs[0],
            stylized: &imgs[1],
            mask: &mask,
        },
        EvalView {
            name: "b".into(),
            content: &imgs[2],
            stylized: &imgs[3],
            mask: &mask,
        },
    ];
    let r = evaluate_views(&views, "a city at night", &fx, &em).unwrap();
    assert_eq!(r.view_count, 2);
    let mean = (r.per_view[0].essim + r.per_view[1].essim) / 2.0;
    assert!((r.essim - mean).abs() < 1e-15);
    assert!(evaluate_views(&[], "x", &fx, &em).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn essim_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
        let a = Image::random(20, 18, 3, s1);
        let b = Image::random(20, 18, 3, s2);
        let ab = essim(&a, &b).unwrap();
        prop_assert!((ab - essim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(essim(&a, &a).unwrap(), 1.0);
    }
}
