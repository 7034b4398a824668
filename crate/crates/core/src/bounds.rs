use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dp::StateGrids;
use crate::error::{Error, Result};
use crate::filter::{normalize, GriddedDensity, Kernels};
use crate::market::{ShockDensity, Utilities};
use crate::numeric::{double_factorial, gauss_legendre, unit_sphere_area};
use crate::quantizer::{project, zador_constant, ZadorConstant};

/// Figure quoted for the squared error bound of the reference configuration.
pub const REFERENCE_BOUND_FIGURE: f64 = 0.81;

/// `I_n = int_{-pi/2}^{pi/2} cos^n t dt`.
pub fn compute_in(n: u32) -> f64 {
    let n_i = n as i64;
    let ratio = double_factorial(n_i - 1) / double_factorial(n_i);
    if n.is_multiple_of(2) {
        PI * ratio
    } else {
        2.0 * ratio
    }
}

/// The closed-form tail constant `v_N` next to the polar reference value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VnReport {
    pub n: u32,
    pub p: f64,
    pub m0: f64,
    /// `2 pi / ((N - p)(N - 2)!!)` times the even/odd power factor.
    pub closed_form: f64,
    /// Set when the closed form is negative although it bounds a positive
    /// integral.
    pub sign_anomaly: bool,
    /// `Area(S^{N-1}) / (p - N)`.
    pub reference_constant: f64,
    /// `Area(S^{N-1}) M0^{N-p} / (p - N)`: the integral of `|x|^{-p}` over
    /// `|x| >= M0`.
    pub reference_tail: f64,
}

pub fn compute_vn(n: u32, p: f64, m0: f64) -> Result<VnReport> {
    if n < 2 {
        return Err(Error::RejectedInput(format!("v_N needs N >= 2, got {n}")));
    }
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(Error::RejectedInput(format!("M0 must be positive, got {m0}")));
    }
    if !(p > n as f64) {
        return Err(Error::DivergentTail { n, p });
    }
    let nf = n as f64;
    let base = 2.0 * PI / ((nf - p) * double_factorial(n as i64 - 2));
    let closed_form = if n.is_multiple_of(2) {
        base * (2.0 * PI).powf((nf - 2.0) / 2.0)
    } else {
        base * 2f64.powf((nf - 3.0) / 2.0) * PI.powf((nf - 3.0) / 2.0 + 1.0)
    };
    let reference_constant = tail_constant(n, p)?;
    Ok(VnReport {
        n,
        p,
        m0,
        closed_form,
        sign_anomaly: closed_form < 0.0,
        reference_constant,
        reference_tail: reference_constant * m0.powf(nf - p),
    })
}

/// `Area(S^{N-1}) / (p - N)`, valid for `N >= 1`.
pub fn tail_constant(n: u32, p: f64) -> Result<f64> {
    if n == 0 || !(p > n as f64) {
        return Err(Error::DivergentTail { n, p });
    }
    Ok(unit_sphere_area(n) / (p - n as f64))
}

/// `int_{[M0, inf)^2} |x|^{-p} dx` by tensor Gauss-Legendre quadrature.
/// Each axis is mapped onto `(0, 1]` by `x = M0 / tau^2`; symmetry halves the
/// square along its diagonal and the ray substitution `sig = tau w` makes the
/// integrand smooth at the corner.
pub fn quadrant_tail(p: f64, m0: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::DivergentTail { n: 2, p });
    }
    let f = |tau: f64, sig: f64| {
        let (t, s) = (tau * tau, sig * sig);
        if t == 0.0 || s == 0.0 {
            return 0.0;
        }
        4.0 * tau * sig * (t * s).powf(p - 2.0) / (t * t + s * s).powf(p / 2.0)
    };
    let inner = |tau: f64| tau * gauss_legendre(|w| f(tau, tau * w), 0.0, 1.0, 40);
    Ok(2.0 * m0.powf(2.0 - p) * gauss_legendre(inner, 0.0, 1.0, 40))
}

/// Model constants entering the error bound, estimated on the working
/// domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// `sqrt(sup_r int (Phi(z, r) / phi(r))^2 dz)`.
    pub l_phi: f64,
    /// Lipschitz constant of `y -> Psi(z, y)`, uniform in `z`.
    pub l_psi: f64,
    /// Lipschitz constant of `z -> rho_bar(z, r)` over codebook rows and
    /// return nodes.
    pub l_r: f64,
    /// Lipschitz constant of `x -> u_T(y, x)`.
    pub l_u: f64,
    /// `sup |u_T|`.
    pub l_u_b: f64,
    /// Tail envelope `rho_bar(z, r) <= a_z |r|^{-p}`.
    pub a_z: f64,
    pub p: f64,
    pub m0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundOptions {
    /// Cell count `n`; zero means the factor grid's cell count.
    pub cells: usize,
    /// Scale `M0` with `vol(B) <= (M0 / n)^K`; absent means the factor grid
    /// span.
    pub m0: Option<f64>,
    /// Subdivisions of each wealth cell for the Lipschitz estimate of `u_T`.
    pub wealth_refine: usize,
    /// Smallest `|r|` used by the tail fit.
    pub tail_min_abs_return: f64,
    pub zador: ZadorConstant,
    /// Estimate belief constants on unit-mass codebook rows.
    pub normalized_beliefs: bool,
    /// Tail exponent `p` of the standalone `v_N` table; must exceed 4.
    pub table_exponent: f64,
    /// Largest `n` in the standalone `I_n` table.
    pub table_max_n: u32,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            cells: 0,
            m0: None,
            wealth_refine: 4,
            tail_min_abs_return: 1.0,
            zador: ZadorConstant::Upper,
            normalized_beliefs: true,
            table_exponent: 5.0,
            table_max_n: 10,
        }
    }
}

impl BoundOptions {
    pub fn validate(&self) -> Result<()> {
        if self.wealth_refine == 0 {
            return Err(Error::InvalidParams("wealth_refine must be >= 1".into()));
        }
        if let Some(m0) = self.m0 {
            if !(m0 > 0.0 && m0.is_finite()) {
                return Err(Error::InvalidParams(format!("m0 must be positive, got {m0}")));
            }
        }
        if !(self.tail_min_abs_return > 0.0) {
            return Err(Error::InvalidParams("tail_min_abs_return must be positive".into()));
        }
        if !(self.table_exponent > 4.0 && self.table_exponent.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "table_exponent must exceed 4, got {}",
                self.table_exponent
            )));
        }
        Ok(())
    }

    /// Cell count and `M0` actually used on the kernels' grid.
    pub fn resolve(&self, k: &Kernels) -> (usize, f64) {
        let cells = if self.cells == 0 { k.grid().len() - 1 } else { self.cells };
        (cells, self.m0.unwrap_or_else(|| k.grid().span()))
    }
}

fn belief_rows(grids: &StateGrids, normalized: bool) -> Result<Vec<GriddedDensity>> {
    grids
        .codebook
        .alive()
        .map(|i| {
            let d = grids.codebook.density(i);
            if normalized {
                normalize(&d)
            } else {
                Ok(d)
            }
        })
        .collect()
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::DomainTooWide(format!("{name} estimate is {v}")))
    }
}

/// `sqrt(sup_j int (Phi(z, r_j) / phi(r_j))^2 dz)` over the factor grid.
pub fn estimate_l_phi(k: &Kernels, returns: &[f64]) -> f64 {
    let pts = k.grid().points();
    returns
        .iter()
        .map(|&r| {
            let sq: Vec<f64> = pts.iter().map(|&z| k.likelihood_ratio(z, r).powi(2)).collect();
            k.grid().integrate(&sq)
        })
        .fold(0.0_f64, f64::max)
        .sqrt()
}

/// Central-difference `sup |d Psi(z, y) / dy|` over grid pairs.
pub fn estimate_l_psi(k: &Kernels) -> f64 {
    let pts = k.grid().points();
    let h = 1e-5 * k.params().sigma_y;
    let mut sup = 0.0_f64;
    for &z in pts {
        for &y in pts {
            let d = (k.psi_kernel(z, y + h) - k.psi_kernel(z, y - h)) / (2.0 * h);
            sup = sup.max(d.abs());
        }
    }
    sup
}

/// Secant `sup |rho_bar(z_{i+1}, r) - rho_bar(z_i, r)| / (z_{i+1} - z_i)`.
pub fn estimate_l_r(k: &Kernels, rows: &[GriddedDensity], returns: &[f64]) -> f64 {
    let pts = k.grid().points();
    let mut sup = 0.0_f64;
    for row in rows {
        let pred = k.predict(row.values());
        for &r in returns {
            let bar: Vec<f64> = pts
                .iter()
                .zip(&pred)
                .map(|(&z, &v)| v * k.likelihood_ratio(z, r))
                .collect();
            for i in 1..pts.len() {
                sup = sup.max((bar[i] - bar[i - 1]).abs() / (pts[i] - pts[i - 1]));
            }
        }
    }
    sup
}

fn refined(x: &[f64], factor: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((x.len() - 1) * factor + 1);
    for w in x.windows(2) {
        for j in 0..factor {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
        }
    }
    out.extend(x.last());
    out
}

/// `(L_u, L_u_b)` over the factor grid and the wealth grid subdivided
/// `refine` times.
pub fn estimate_terminal_constants(
    u: &Utilities,
    y_grid: &[f64],
    x_grid: &[f64],
    refine: usize,
) -> (f64, f64) {
    u.terminal_bounds(y_grid, &refined(x_grid, refine.max(1)))
}

/// Log-log least-squares fit of `rho_bar(z, r)` against `|r|` over nodes with
/// `|r| >= r_min`: `p` is the weakest fitted decay, `a_z` the smallest
/// envelope constant valid at every node for that `p`.
pub fn fit_tail(
    k: &Kernels,
    rows: &[GriddedDensity],
    returns: &[f64],
    r_min: f64,
) -> Result<(f64, f64)> {
    let tail: Vec<f64> = returns.iter().copied().filter(|r| r.abs() >= r_min).collect();
    let lx: Vec<f64> = tail.iter().map(|r| r.abs().ln()).collect();
    let mean_x = lx.iter().sum::<f64>() / lx.len().max(1) as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mean_x).powi(2)).sum();
    if tail.len() < 2 || sxx <= 0.0 {
        return Err(Error::BoundUnavailable(format!(
            "tail fit needs two distinct |r| >= {r_min} among the return nodes"
        )));
    }
    let pts = k.grid().points();
    // ln rho_bar(z_i, r_j) for every row and grid point
    let mut curves: Vec<Vec<f64>> = Vec::new();
    for row in rows {
        let pred = k.predict(row.values());
        for (i, &z) in pts.iter().enumerate() {
            if pred[i] > 0.0 {
                let ln_pred = pred[i].ln();
                curves.push(
                    tail.iter()
                        .map(|&r| ln_pred + k.ln_phi_kernel(z, r) - k.params().eps_density.ln_pdf(r))
                        .collect(),
                );
            }
        }
    }
    if curves.is_empty() {
        return Err(Error::BoundUnavailable("no positive predicted mass".into()));
    }
    let mut p = f64::INFINITY;
    for ly in &curves {
        let mean_y = ly.iter().sum::<f64>() / ly.len() as f64;
        let sxy: f64 = lx.iter().zip(ly).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
        p = p.min(-sxy / sxx);
    }
    let ln_a = curves
        .iter()
        .flat_map(|ly| ly.iter().zip(&lx).map(|(y, x)| y + p * x))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((finite("a_z", ln_a.exp())?, finite("p", p)?))
}

pub fn estimate_lipschitz(
    k: &Kernels,
    grids: &StateGrids,
    u: &Utilities,
    opts: &BoundOptions,
) -> Result<LipschitzEstimates> {
    opts.validate()?;
    let rows = belief_rows(grids, opts.normalized_beliefs)?;
    let returns = grids.return_nodes.nodes();
    let (l_u, l_u_b) =
        estimate_terminal_constants(u, k.grid().points(), &grids.x_grid, opts.wealth_refine);
    let (a_z, p) = fit_tail(k, &rows, returns, opts.tail_min_abs_return)?;
    let (_, m0) = opts.resolve(k);
    Ok(LipschitzEstimates {
        l_phi: finite("L_Phi", estimate_l_phi(k, returns))?,
        l_psi: finite("L_Psi", estimate_l_psi(k))?,
        l_r: finite("L_R", estimate_l_r(k, &rows, returns))?,
        l_u: finite("L_u", l_u)?,
        l_u_b: finite("L_u_b", l_u_b)?,
        a_z,
        p,
        m0,
    })
}

/// `(int f^{a})` for `X = scale * e^R`, `R ~ phi`, by the change of
/// variables `x = scale e^s`.
pub fn lognormal_power_integral(scale: f64, a: f64, phi: ShockDensity) -> Result<f64> {
    if scale == 0.0 {
        return Ok(0.0);
    }
    let g = |s: f64| (a * phi.ln_pdf(s) + (1.0 - a) * s).exp();
    let narrow = gauss_legendre(g, -40.0, 40.0, 400);
    let wide = gauss_legendre(g, -80.0, 80.0, 800);
    if !(wide.is_finite() && (wide - narrow).abs() <= 1e-9 * wide.abs()) {
        return Err(Error::BoundUnavailable(
            "wealth density power integral diverges for this shock density".into(),
        ));
    }
    Ok(scale.powf(1.0 - a) * wide)
}

/// `int f_V^{a} dv` for `V = Phi(z, R) / phi(R)` with `R ~ phi` standard
/// normal, summing the density over both monotone branches of the Gaussian
/// bump `r -> V`.
pub fn likelihood_ratio_power_integral(mu: f64, sigma: f64, a: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::BoundUnavailable(format!(
            "likelihood ratio is not a bump for sigma = {sigma}"
        )));
    }
    let s2 = sigma * sigma;
    let qa = 0.5 - 0.5 / s2;
    let qb = mu / s2;
    let qc = -mu * mu / (2.0 * s2) - sigma.ln();
    let r_star = -qb / (2.0 * qa);
    let ln_peak = qc - qb * qb / (4.0 * qa);
    let phi = ShockDensity::StandardNormal;
    // s = w^3 smooths the s^{1-a} behaviour at the vertex
    let g = |w: f64| {
        let s = w * w * w;
        if s == 0.0 {
            return 0.0;
        }
        let both = phi.pdf(r_star + s) + phi.pdf(r_star - s);
        if both == 0.0 {
            return 0.0;
        }
        let ln_v = ln_peak + qa * s * s;
        let ln_jac = (2.0 * qa.abs() * s).ln() + ln_v;
        (a * both.ln() + (1.0 - a) * ln_jac).exp() * 3.0 * w * w
    };
    let upper = (r_star.abs() + 40.0).cbrt();
    let v = gauss_legendre(g, 0.0, upper, 400);
    if !v.is_finite() {
        return Err(Error::BoundUnavailable("belief density power integral".into()));
    }
    Ok(v)
}

/// Zador integrals `(int f^{N/(N+2)})^{(N+2)/N}` entering `C_{n,M0}` for a
/// single risky asset and scalar factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityIntegrals {
    /// Wealth law `pi x e^R`, maximized over the invested amount.
    pub wealth: f64,
    /// Law of `rho_bar(R)(z_k)`, maximized over grid points and codebook
    /// rows.
    pub belief: f64,
    pub n_assets: u32,
    pub factor_dim: u32,
}

pub fn density_integrals(
    k: &Kernels,
    grids: &StateGrids,
    opts: &BoundOptions,
) -> Result<DensityIntegrals> {
    let p = k.params();
    if p.eps_density != ShockDensity::StandardNormal {
        return Err(Error::BoundUnavailable(
            "belief density integral needs standard normal returns".into(),
        ));
    }
    let x_max = grids.x_grid.last().copied().unwrap_or(0.0);
    let pi_max = grids.control_fractions.iter().copied().fold(0.0_f64, f64::max);
    let wealth = lognormal_power_integral(pi_max * x_max, 1.0 / 3.0, p.eps_density)?.powi(3);
    let rows = belief_rows(grids, opts.normalized_beliefs)?;
    let pts = k.grid().points();
    let per_point: Vec<f64> = pts
        .iter()
        .map(|&z| likelihood_ratio_power_integral(p.mu(z), p.sigma(z), 1.0 / 3.0).map(|v| v.powi(3)))
        .collect::<Result<_>>()?;
    let mut belief = 0.0_f64;
    for row in &rows {
        let pred = k.predict(row.values());
        for (c, j) in pred.iter().zip(&per_point) {
            belief = belief.max(c * c * j);
        }
    }
    Ok(DensityIntegrals {
        wealth,
        belief,
        n_assets: 1,
        factor_dim: 1,
    })
}

/// The four summands of `C_{n,M0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CBreakdown {
    pub n: usize,
    pub m0: f64,
    /// `L_u n^{-2} J_1 (int f_X^{1/3})^3`.
    pub wealth_quantization: f64,
    /// `2 L_u_b L_R^2 sqrt(K) (M0 / n)^{K+1}`.
    pub cell_variation: f64,
    /// `4 L_u_b M0^K n^{-2/N} J_N (int f_max^{N/(N+2)})^{(N+2)/N}`.
    pub belief_quantization: f64,
    /// `2 L_u_b a_z v_N M0^{N-p} / (p - 1)` with the polar `v_N`.
    pub tail: f64,
    /// The closed-form `v_N` for the same `N` and `p` when `N >= 2`.
    pub closed_form_v_n: Option<f64>,
    pub total: f64,
}

pub fn compute_c(
    n: usize,
    m0: f64,
    est: &LipschitzEstimates,
    integrals: &DensityIntegrals,
    zador: ZadorConstant,
) -> Result<CBreakdown> {
    if n == 0 || !(m0 > 0.0) {
        return Err(Error::RejectedInput(format!("need n >= 1 and M0 > 0, got {n}, {m0}")));
    }
    let nn = integrals.n_assets;
    let kk = integrals.factor_dim;
    let nf = n as f64;
    let (big_n, big_k) = (nn as f64, kk as f64);
    let check = |name: &str, v: f64| {
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(Error::BoundUnavailable(format!("{name} term is {v}")))
        }
    };
    let wealth_quantization = check(
        "wealth quantization",
        est.l_u * nf.powi(-2) * zador_constant(1, zador) * integrals.wealth,
    )?;
    let cell_variation = check(
        "cell variation",
        2.0 * est.l_u_b * est.l_r * est.l_r * big_k.sqrt() * (m0 / nf).powf(big_k + 1.0),
    )?;
    let belief_quantization = check(
        "belief quantization",
        4.0 * est.l_u_b
            * m0.powf(big_k)
            * nf.powf(-2.0 / big_n)
            * zador_constant(nn, zador)
            * integrals.belief,
    )?;
    let v_ref = tail_constant(nn, est.p)?;
    let tail = if est.a_z == 0.0 || est.l_u_b == 0.0 {
        0.0
    } else {
        let ln = (2.0 * est.l_u_b * est.a_z * v_ref / (est.p - 1.0)).ln() + (big_n - est.p) * m0.ln();
        check("tail", ln.exp())?
    };
    let closed_form_v_n = if nn >= 2 {
        Some(compute_vn(nn, est.p, m0)?.closed_form)
    } else {
        None
    };
    Ok(CBreakdown {
        n,
        m0,
        wealth_quantization,
        cell_variation,
        belief_quantization,
        tail,
        closed_form_v_n,
        total: wealth_quantization + cell_variation + belief_quantization + tail,
    })
}

/// Composed error bound with every input and intermediate constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub horizon: usize,
    pub delta: f64,
    pub risk_free: f64,
    pub estimates: LipschitzEstimates,
    pub c: CBreakdown,
    /// `delta (1 - delta^T) / (1 - delta)`, or `T` when `delta = 1`.
    pub discount_sum: f64,
    pub l_t_1: f64,
    pub l_t_2: f64,
    pub dx2: f64,
    pub drho2: f64,
    pub quantization_term: f64,
    pub wealth_gap_term: f64,
    pub density_gap_term: f64,
    /// Bound on the squared value error.
    pub total: f64,
    /// `sqrt(total)`.
    pub abs_error_bound: f64,
    pub reference_figure: f64,
    /// Closed-form `v_N` against the polar constant for `N = 2, 3, 4` at the
    /// fitted `p` (dimensions with `p <= N` are skipped).
    pub v_n: Vec<VnReport>,
    pub v_n_sign_anomaly: bool,
}

pub fn compose_total_bound(
    horizon: usize,
    delta: f64,
    risk_free: f64,
    est: &LipschitzEstimates,
    c: &CBreakdown,
    dx2: f64,
    drho2: f64,
) -> BoundReport {
    let t = horizon as i32;
    let discount_sum = if delta == 1.0 {
        horizon as f64
    } else {
        delta * (1.0 - delta.powi(t)) / (1.0 - delta)
    };
    let scale = 2f64.powi(t + 1) * delta.powi(t);
    let l_t_1 = scale * est.l_u * est.l_u * (1.0 + risk_free).powi(t);
    let l_t_2 = scale * est.l_u_b * est.l_u_b * est.l_phi.powi(2 * t) * est.l_psi.powi(2 * t);
    let quantization_term = discount_sum * c.total;
    let wealth_gap_term = if dx2 == 0.0 { 0.0 } else { l_t_1 * dx2 };
    let density_gap_term = if drho2 == 0.0 { 0.0 } else { l_t_2 * drho2 };
    let total = quantization_term + wealth_gap_term + density_gap_term;
    let v_n: Vec<VnReport> = (2..=4).filter_map(|n| compute_vn(n, est.p, est.m0).ok()).collect();
    let v_n_sign_anomaly = v_n.iter().any(|v| v.sign_anomaly);
    BoundReport {
        horizon,
        delta,
        risk_free,
        estimates: *est,
        c: *c,
        discount_sum,
        l_t_1,
        l_t_2,
        dx2,
        drho2,
        quantization_term,
        wealth_gap_term,
        density_gap_term,
        total,
        abs_error_bound: total.sqrt(),
        reference_figure: REFERENCE_BOUND_FIGURE,
        v_n,
        v_n_sign_anomaly,
    }
}

/// End-to-end bound at the initial state `(x0, prior)` against its
/// projection onto the state grids.
pub fn evaluate_bound(
    k: &Kernels,
    grids: &StateGrids,
    u: &Utilities,
    prior: &GriddedDensity,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let est = estimate_lipschitz(k, grids, u, opts)?;
    let integrals = density_integrals(k, grids, opts)?;
    let (cells, m0) = opts.resolve(k);
    let c = compute_c(cells, m0, &est, &integrals, opts.zador)?;
    let p = k.params();
    let (ix, _) = grids.project_wealth(p.x0);
    let dx2 = (p.x0 - grids.x_grid[ix]).powi(2);
    let (_, hat) = project(prior, &grids.codebook)?;
    let (a, b) = if opts.normalized_beliefs {
        (normalize(prior)?, normalize(&hat)?)
    } else {
        (prior.clone(), hat)
    };
    let sq: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).collect();
    let drho2 = k.grid().integrate(&sq);
    Ok(compose_total_bound(p.horizon, p.delta, p.risk_free, &est, &c, dx2, drho2))
}

/// Constants that need no model run: `I_n`, the `v_N` comparison and the
/// planar quadrant tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantTables {
    /// `(n, I_n)` for `n = 1..=table_max_n`.
    pub i_n: Vec<(u32, f64)>,
    pub v_n: Vec<VnReport>,
    pub quadrant: QuadrantTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantTail {
    pub p: f64,
    pub m0: f64,
    /// `int_{[M0, inf)^2} |x|^{-p} dx`.
    pub quadrant: f64,
    /// `Area(S^1) M0^{2-p} / (p - 2)`, the full exterior of the disc.
    pub exterior: f64,
}

pub fn constant_tables(opts: &BoundOptions, m0: f64) -> Result<ConstantTables> {
    let p = opts.table_exponent;
    let i_n = (1..=opts.table_max_n).map(|n| (n, compute_in(n))).collect();
    let v_n = (2..=4).map(|n| compute_vn(n, p, m0)).collect::<Result<Vec<_>>>()?;
    Ok(ConstantTables {
        i_n,
        v_n,
        quadrant: QuadrantTail {
            p,
            m0,
            quadrant: quadrant_tail(p, m0)?,
            exterior: tail_constant(2, p)? * m0.powf(2.0 - p),
        },
    })
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
