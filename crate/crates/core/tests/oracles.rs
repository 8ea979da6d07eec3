//! Order-statistic routines against independent quadrature and sampling.

use mwm::normal;
use mwm::order_stats::{mvn_rectangle_prob, truncated_moment, IntegrationOptions};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `E[Z1^r ; Z <= b]` for a trivariate standard normal by nested quadrature.
///
/// Given `Z1 = z1`, `(Z2, Z3)` is bivariate normal; given also `Z2 = z2`, `Z3` is
/// normal, so the innermost integral is a normal cdf.
fn quadrature_moment(r: i32, b: [f64; 3], rho: &DMatrix<f64>) -> f64 {
    let (r12, r13, r23) = (rho[(0, 1)], rho[(0, 2)], rho[(1, 2)]);
    let c22 = 1.0 - r12 * r12;
    let c33 = 1.0 - r13 * r13;
    let c23 = r23 - r12 * r13;
    let s2 = c22.sqrt();
    let s3 = (c33 - c23 * c23 / c22).sqrt();
    let hi1 = b[0].min(9.0);
    simpson(
        |z1| {
            let (m2, m3) = (r12 * z1, r13 * z1);
            let inner = simpson(
                |z2| {
                    let m = m3 + c23 / c22 * (z2 - m2);
                    normal::pdf((z2 - m2) / s2) / s2 * normal::cdf((b[2] - m) / s3)
                },
                m2 - 9.0 * s2,
                b[1].min(m2 + 9.0 * s2),
                600,
            );
            z1.powi(r) * normal::pdf(z1) * inner
        },
        -9.0,
        hi1,
        600,
    )
}

fn corr3(r12: f64, r13: f64, r23: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0])
}

#[test]
fn truncated_moments_match_trivariate_quadrature() {
    let opts = IntegrationOptions::default().with_tol(1e-5);
    let cases = [
        (corr3(0.5, 0.3, -0.2), [0.4, -0.3, 1.1]),
        (corr3(0.5, 0.3, -0.2), [f64::INFINITY, -0.3, 1.1]),
        (corr3(0.9, 0.85, 0.8), [0.0, 0.5, -0.5]),
        (corr3(-0.6, 0.2, 0.1), [f64::INFINITY, 1.5, 0.2]),
        (corr3(0.3, -0.4, -0.5), [-1.0, 2.0, 0.7]),
    ];
    for (rho, b) in &cases {
        for r in 0..=2u8 {
            let got = truncated_moment(r, b, rho, &opts).unwrap();
            let want = quadrature_moment(r as i32, *b, rho);
            assert!((got - want).abs() < 1e-4, "r={r} b={b:?}: {got} vs {want}");
        }
    }
}

fn sample_correlation(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(k, k + 1, |_, _| StandardNormal.sample(rng));
    let c = &a * a.transpose();
    let d: Vec<f64> = (0..k).map(|i| c[(i, i)].sqrt()).collect();
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { c[(i, j)] / (d[i] * d[j]) })
}

#[test]
fn trivariate_rectangles_match_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = IntegrationOptions::default().with_tol(1e-5);
    let n = 1_000_000;
    for _ in 0..5 {
        let r = sample_correlation(3, &mut rng);
        let b: Vec<f64> = (0..3).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1.5 * z + 0.3
        }).collect();
        let got = mvn_rectangle_prob(&b, &r, &opts).unwrap();
        let l = r.clone().cholesky().unwrap().l();
        let mut hits = 0usize;
        for _ in 0..n {
            let xi: nalgebra::DVector<f64> = nalgebra::DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let z = &l * xi;
            if (0..3).all(|i| z[i] <= b[i]) {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((got - p).abs() < 4.0 * se + 1e-5, "b={b:?}: {got} vs sampled {p} (se {se:.1e})");
    }
}

#[test]
fn identity_correlation_gives_product_of_marginals() {
    let opts = IntegrationOptions::default();
    for k in 1..=8 {
        let b: Vec<f64> = (0..k).map(|i| if i == 3 { f64::INFINITY } else { -1.5 + 0.45 * i as f64 }).collect();
        let want: f64 = b.iter().map(|&x| normal::cdf(x)).product();
        let got = mvn_rectangle_prob(&b, &DMatrix::identity(k, k), &opts).unwrap();
        assert!((got - want).abs() < 1e-10, "k={k}: {got} vs {want}");
    }
}
