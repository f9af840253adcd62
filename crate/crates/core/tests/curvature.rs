use std::f64::consts::{PI, TAU};

use curvglyph::features::{
    arc_length, curvature_map, normalized_curvature, parametric_curvature, sobel_derivatives,
    ParametricCurve, DEFAULT_EPS,
};
use curvglyph::fixtures::{disc_boundary_band, render_disc};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn circle(r: f64, n: usize) -> ParametricCurve {
    ParametricCurve::from_fn(n, |t| (r * (TAU * t).cos(), r * (TAU * t).sin())).unwrap()
}

fn ellipse(n: usize) -> ParametricCurve {
    ParametricCurve::from_fn(n, |t| (3.0 * (TAU * t).cos(), 1.5 * (TAU * t).sin())).unwrap()
}

#[test]
fn analytic_circle_curvature_is_reciprocal_radius() {
    for r in [5.0, 8.0, 10.0] {
        for k in parametric_curvature(&circle(r, 2001)).unwrap() {
            assert!((k - 1.0 / r).abs() < 1e-3, "r={r}: {k}");
        }
    }
}

#[test]
fn rendered_disc_rim_curvature_near_reciprocal_radius() {
    for r in [5.0, 8.0, 10.0] {
        let img = render_disc(r, 14.0, 14.0);
        let kappa = curvature_map(&sobel_derivatives(&img), DEFAULT_EPS);
        let band = disc_boundary_band(r, 14.0, 14.0, 1.0);
        assert!(band.len() > 20);
        let mags: Vec<f64> = band.iter().map(|&i| kappa[i].abs()).collect();
        let m = median(mags);
        assert!((m * r - 1.0).abs() <= 0.25, "r={r}: median |κ| {m}");
        // Level curves of a bright disc bend toward the bright side; pixelized
        // stretches of the rim near the axes may read flat or slightly concave.
        assert!(band.iter().filter(|&&i| kappa[i] < 0.0).count() * 4 >= band.len() * 3);
    }
}

#[test]
fn circle_total_normalized_curvature_is_two_pi() {
    for r in [0.5, 5.0, 40.0] {
        let k = normalized_curvature(&circle(r, 4001)).unwrap();
        for v in k {
            assert!((v - TAU).abs() < 1e-3, "r={r}: {v}");
        }
    }
}

#[test]
fn normalized_curvature_is_similarity_invariant() {
    let base = ellipse(4001);
    let k0 = normalized_curvature(&base).unwrap();
    for (scale, angle) in [(3.0, PI / 6.0), (0.25, -1.0), (1.0, 2.5)] {
        let k1 = normalized_curvature(&base.transformed(scale, angle, 7.0, -2.0)).unwrap();
        for (a, b) in k0.iter().zip(&k1) {
            assert!((a - b).abs() < 1e-3, "scale {scale} angle {angle}: {a} vs {b}");
        }
        let l0 = arc_length(&base);
        let l1 = arc_length(&base.transformed(scale, angle, 0.0, 0.0));
        assert!((l1 / (scale * l0) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ellipse_curvature_is_not_constant() {
    let k = normalized_curvature(&ellipse(2001)).unwrap();
    let (lo, hi) = k
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi / lo > 4.0);
}
