use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{path_rng, ShockDensity};
use crate::numeric::gauss_legendre_nodes;

/// Choice of the constant `J_n` in the asymptotic distortion bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZadorConstant {
    /// Known values or upper bounds: `1/12` on the line, the hexagonal
    /// constant `5/(36 sqrt 3)` in the plane, and the cubic-lattice `1/12`
    /// per coordinate above that.
    #[default]
    Upper,
    /// `n / (2 pi e)`, the large-dimension sphere-packing approximation.
    SphereApprox,
}

/// `J_n` scaled so the bound is in squared Euclidean distance (not per
/// coordinate).
pub fn zador_constant(n: u32, kind: ZadorConstant) -> f64 {
    let n_f = n as f64;
    match kind {
        ZadorConstant::SphereApprox => n_f / (2.0 * PI * E),
        ZadorConstant::Upper => match n {
            1 => 1.0 / 12.0,
            2 => 2.0 * 5.0 / (36.0 * 3f64.sqrt()),
            _ => n_f / 12.0,
        },
    }
}

/// Tensor-product quadrature box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZadorDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Gauss-Legendre panels per coordinate.
    pub panels: usize,
}

impl ZadorDomain {
    pub fn cube(n: usize, half_width: f64, panels: usize) -> Self {
        Self {
            lo: vec![-half_width; n],
            hi: vec![half_width; n],
            panels,
        }
    }
}

const MAX_TENSOR_NODES: usize = 20_000_000;

/// `K^{-2/n} J_n (int f^{n/(n+2)})^{(n+2)/n}` with the integral taken by
/// tensor quadrature over `domain`.
pub fn zador_bound(
    n_dim: u32,
    k: usize,
    f: &dyn Fn(&[f64]) -> f64,
    domain: &ZadorDomain,
    kind: ZadorConstant,
) -> Result<f64> {
    let n = n_dim as usize;
    if k == 0 || n == 0 {
        return Err(Error::RejectedInput("need K >= 1 and n >= 1".into()));
    }
    if domain.lo.len() != n || domain.hi.len() != n {
        return Err(Error::Dimension(format!("domain is not {n}-dimensional")));
    }
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|d| gauss_legendre_nodes(domain.lo[d], domain.hi[d], domain.panels))
        .collect();
    let per_axis = axes[0].0.len();
    let total = per_axis
        .checked_pow(n as u32)
        .filter(|t| *t <= MAX_TENSOR_NODES)
        .ok_or_else(|| Error::DomainTooWide(format!("{per_axis}^{n} quadrature nodes")))?;
    let a = n_dim as f64 / (n_dim as f64 + 2.0);
    let mut x = vec![0.0; n];
    let mut integral = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for d in 0..n {
            let i = rem % per_axis;
            rem /= per_axis;
            x[d] = axes[d].0[i];
            w *= axes[d].1[i];
        }
        let v = f(&x);
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::BoundUnavailable(format!("density is {v} at {x:?}")));
        }
        integral += w * v.powf(a);
    }
    if !integral.is_finite() {
        return Err(Error::BoundUnavailable("divergent integral".into()));
    }
    Ok((k as f64).powf(-2.0 / n_dim as f64) * zador_constant(n_dim, kind) * integral.powf(1.0 / a))
}

pub fn zador_bound_1d(
    k: usize,
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    kind: ZadorConstant,
) -> Result<f64> {
    let g = |x: &[f64]| f(x[0]);
    zador_bound(
        1,
        k,
        &g,
        &ZadorDomain {
            lo: vec![lo],
            hi: vec![hi],
            panels: 400,
        },
        kind,
    )
}

fn quantile(density: ShockDensity, p: f64) -> f64 {
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if density.cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Scalar quantizer of `density` trained by Lloyd iterations on `samples`
/// sorted draws, starting from the midpoint quantiles. Returns sorted
/// points.
pub fn train_scalar_quantizer(
    k: usize,
    samples: usize,
    seed: u64,
    density: ShockDensity,
) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..k)
        .map(|i| quantile(density, (i as f64 + 0.5) / k as f64))
        .collect();
    let mut rng = path_rng(seed, 0);
    let mut xs: Vec<f64> = (0..samples).map(|_| density.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(xs.len() + 1);
    prefix.push(0.0);
    for x in &xs {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + x);
    }
    for _ in 0..LLOYD_ROUNDS {
        let mut lo = 0;
        let mut moved = 0.0_f64;
        for j in 0..k {
            let hi = if j + 1 == k {
                xs.len()
            } else {
                let cut = 0.5 * (pts[j] + pts[j + 1]);
                xs.partition_point(|&x| x < cut)
            };
            if hi > lo {
                let c = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                moved = moved.max((c - pts[j]).abs());
                pts[j] = c;
            }
            lo = hi;
        }
        if moved < 1e-12 {
            break;
        }
    }
    pts
}

const LLOYD_ROUNDS: usize = 1000;

fn nearest(pts: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, p) in pts.iter().enumerate() {
        if (p - x).abs() < (pts[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Monte-Carlo mean squared distance to the nearest point.
pub fn scalar_distortion(pts: &[f64], samples: usize, seed: u64, density: ShockDensity) -> f64 {
    let mut rng = path_rng(seed, 1);
    let mut total = 0.0;
    for _ in 0..samples {
        let x = density.sample(&mut rng);
        let p = pts[nearest(pts, x)];
        total += (x - p) * (x - p);
    }
    total / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gauss_legendre, std_normal_pdf};

    fn normal_integral() -> f64 {
        // int phi^{1/3} = (2 pi)^{-1/6} sqrt(6 pi)
        (2.0 * PI).powf(-1.0 / 6.0) * (6.0 * PI).sqrt()
    }

    #[test]
    fn gaussian_bound_matches_closed_form() {
        let b = zador_bound_1d(1, &std_normal_pdf, -40.0, 40.0, ZadorConstant::SphereApprox)
            .unwrap();
        let expected = normal_integral().powi(3) / (2.0 * PI * E);
        assert!((b - expected).abs() < 1e-10 * expected);
        let quad = gauss_legendre(|x| std_normal_pdf(x).powf(1.0 / 3.0), -40.0, 40.0, 400);
        assert!((quad - normal_integral()).abs() < 1e-10);
    }

    #[test]
    fn doubling_k_divides_by_four() {
        for kind in [ZadorConstant::Upper, ZadorConstant::SphereApprox] {
            let a = zador_bound_1d(8, &std_normal_pdf, -12.0, 12.0, kind).unwrap();
            let b = zador_bound_1d(16, &std_normal_pdf, -12.0, 12.0, kind).unwrap();
            assert!((a / b - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_gaussian() {
        let f = |x: &[f64]| std_normal_pdf(x[0]) * std_normal_pdf(x[1]);
        let dom = ZadorDomain::cube(2, 12.0, 40);
        let b = zador_bound(2, 4, &f, &dom, ZadorConstant::SphereApprox).unwrap();
        // the integrand factorizes
        let int = (gauss_legendre(|x| std_normal_pdf(x).sqrt(), -12.0, 12.0, 40)).powi(2);
        let expected = 0.25 * (2.0 / (2.0 * PI * E)) * int * int;
        assert!((b - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn invalid_density_is_reported() {
        let f = |x: &[f64]| if x[0] > 0.0 { f64::INFINITY } else { 1.0 };
        let dom = ZadorDomain::cube(1, 1.0, 4);
        assert!(matches!(
            zador_bound(1, 2, &f, &dom, ZadorConstant::Upper),
            Err(Error::BoundUnavailable(_))
        ));
        assert!(matches!(
            zador_bound(6, 2, &f, &ZadorDomain::cube(6, 1.0, 10), ZadorConstant::Upper),
            Err(Error::DomainTooWide(_))
        ));
    }

    #[test]
    fn scalar_quantizer_is_symmetric_and_sorted() {
        let pts = train_scalar_quantizer(4, 200_000, 2, ShockDensity::StandardNormal);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        // Lloyd-Max 4-level quantizer of N(0,1): +-0.4528, +-1.5104
        assert!((pts[3] - 1.5104).abs() < 0.02);
        assert!((pts[2] - 0.4528).abs() < 0.02);
        assert!((pts[0] + pts[3]).abs() < 0.03);
        let d = scalar_distortion(&pts, 200_000, 5, ShockDensity::StandardNormal);
        assert!((d - 0.1175).abs() < 0.003, "{d}");
    }
}
