//! Grid-based recursion for the unnormalized conditional density of the
//! hidden factor given observed log-returns.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ModelParams;
use crate::numeric::{gauss_legendre_nodes, gaussian_pdf, linspace, trapezoid_weights};

/// Observations whose shock density falls below this are rejected.
pub const SHOCK_DENSITY_FLOOR: f64 = 1e-300;

/// Strictly increasing grid on the factor axis with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl FactorGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Dimension("a factor grid needs at least two points".into()));
        }
        if points.iter().any(|z| !z.is_finite()) {
            return Err(Error::RejectedInput("grid points must be finite".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::RejectedInput("grid points must be strictly increasing".into()));
        }
        let weights = trapezoid_weights(&points);
        Ok(Self { points, weights })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(linspace(lo, hi, n))
    }

    /// Uniform grid on `[lo, hi]` with the given step (rounded to fit).
    pub fn with_step(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi > lo) {
            return Err(Error::RejectedInput(format!(
                "bad grid [{lo}, {hi}] step {step}"
            )));
        }
        let n = ((hi - lo) / step).round() as usize + 1;
        Self::uniform(lo, hi, n)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Per-cell widths.
    pub fn spacing(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing().into_iter().fold(0.0, f64::max)
    }

    pub fn span(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }

    /// Halves every cell.
    pub fn refine(&self) -> Self {
        let mut pts = Vec::with_capacity(2 * self.len() - 1);
        for w in self.points.windows(2) {
            pts.push(w[0]);
            pts.push(0.5 * (w[0] + w[1]));
        }
        pts.push(self.points[self.len() - 1]);
        Self::new(pts).expect("refinement of a valid grid is valid")
    }

    /// Scales the grid about its midpoint, keeping the point count.
    pub fn widen(&self, factor: f64) -> Self {
        let mid = 0.5 * (self.points[0] + self.points[self.len() - 1]);
        Self::new(self.points.iter().map(|z| mid + factor * (z - mid)).collect())
            .expect("positive widening of a valid grid is valid")
    }

    /// Trapezoid integral of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn same_as(&self, other: &FactorGrid) -> bool {
        std::ptr::eq(self, other) || self.points == other.points
    }
}

/// Unnormalized density sampled on a factor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    grid: Arc<FactorGrid>,
    values: Vec<f64>,
}

impl GriddedDensity {
    pub fn new(grid: Arc<FactorGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::RejectedInput(
                "density values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<FactorGrid>, f: F) -> Result<Self> {
        let values = grid.points().iter().map(|&z| f(z)).collect();
        Self::new(grid, values)
    }

    /// Gaussian density restricted to the grid (not renormalized).
    pub fn gaussian(grid: Arc<FactorGrid>, mean: f64, sd: f64) -> Result<Self> {
        Self::from_fn(grid, |z| gaussian_pdf(z, mean, sd))
    }

    pub fn grid(&self) -> &Arc<FactorGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|v| a * v).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "z,value")?;
        for (z, v) in self.grid.points().iter().zip(&self.values) {
            writeln!(w, "{z},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let parse = |msg: String| Error::Parse {
            file: "density csv".into(),
            msg,
        };
        let mut zs = Vec::new();
        let mut vs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "z,value" {
                    return Err(parse(format!("unexpected header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (z, v) = line
                .split_once(',')
                .ok_or_else(|| parse(format!("line {}: expected two columns", i + 1)))?;
            zs.push(z.trim().parse::<f64>().map_err(|e| parse(e.to_string()))?);
            vs.push(v.trim().parse::<f64>().map_err(|e| parse(e.to_string()))?);
        }
        Self::new(Arc::new(FactorGrid::new(zs)?), vs)
    }
}

/// Initial belief about the factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Gaussian { mean: f64, sd: f64 },
    /// The factor shock density itself.
    FactorShock,
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian { mean: 0.1, sd: 0.2 }
    }
}

impl Prior {
    pub fn density(&self, grid: Arc<FactorGrid>, p: &ModelParams) -> Result<GriddedDensity> {
        match *self {
            Prior::Gaussian { mean, sd } => GriddedDensity::gaussian(grid, mean, sd),
            Prior::FactorShock => GriddedDensity::from_fn(grid, |z| p.xi_density.pdf(z)),
        }
    }
}

/// Observation and transition kernels of the filter on a fixed grid, with
/// the transition integral precomputed as a matrix.
#[derive(Debug, Clone)]
pub struct Kernels {
    params: ModelParams,
    grid: Arc<FactorGrid>,
    /// Row `i`, column `j`: `Psi(z_i, z_j) * w_j`.
    transition: Vec<f64>,
}

impl Kernels {
    pub fn new(params: &ModelParams, grid: Arc<FactorGrid>) -> Self {
        let m = grid.len();
        let mut transition = vec![0.0; m * m];
        for i in 0..m {
            let z = grid.points()[i];
            for j in 0..m {
                let y = grid.points()[j];
                transition[i * m + j] = psi_kernel(params, z, y) * grid.weights()[j];
            }
        }
        Self {
            params: params.clone(),
            grid,
            transition,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &Arc<FactorGrid> {
        &self.grid
    }

    /// `ln Phi(z, r)`.
    #[inline]
    pub fn ln_phi_kernel(&self, z: f64, r: f64) -> f64 {
        ln_phi_kernel(&self.params, z, r)
    }

    /// `Phi(z, r)`: density of the log-return `r` given factor value `z`.
    #[inline]
    pub fn phi_kernel(&self, z: f64, r: f64) -> f64 {
        self.ln_phi_kernel(z, r).exp()
    }

    /// `Psi(z, y)`: transition density of the factor from `y` to `z`.
    #[inline]
    pub fn psi_kernel(&self, z: f64, y: f64) -> f64 {
        psi_kernel(&self.params, z, y)
    }

    #[inline]
    pub fn ln_psi_kernel(&self, z: f64, y: f64) -> f64 {
        ln_psi_kernel(&self.params, z, y)
    }

    /// `Phi(z, r) / phi(r)`, evaluated in log space.
    #[inline]
    pub fn likelihood_ratio(&self, z: f64, r: f64) -> f64 {
        (self.ln_phi_kernel(z, r) - self.params.eps_density.ln_pdf(r)).exp()
    }

    /// `z -> int Psi(z, y) rho(y) dy` on the grid (trapezoid rule).
    pub fn predict(&self, rho: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        (0..m)
            .map(|i| {
                let row = &self.transition[i * m..(i + 1) * m];
                row.iter().zip(rho).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Observation update applied to an already-predicted density.
    pub fn correct(&self, predicted: &[f64], r: f64) -> Result<Vec<f64>> {
        if self.params.eps_density.pdf(r) < SHOCK_DENSITY_FLOOR {
            return Err(Error::DegenerateObservation { r });
        }
        Ok(self
            .grid
            .points()
            .iter()
            .zip(predicted)
            .map(|(&z, &p)| self.likelihood_ratio(z, r) * p)
            .collect())
    }
}

#[inline]
fn ln_phi_kernel(p: &ModelParams, z: f64, r: f64) -> f64 {
    let s = p.sigma(z);
    p.eps_density.ln_pdf((r - p.mu(z)) / s) - s.ln()
}

#[inline]
fn ln_psi_kernel(p: &ModelParams, z: f64, y: f64) -> f64 {
    let mean = y + p.alpha * (p.y_bar - y);
    p.xi_density.ln_pdf((z - mean) / p.sigma_y) - p.sigma_y.ln()
}

#[inline]
fn psi_kernel(p: &ModelParams, z: f64, y: f64) -> f64 {
    ln_psi_kernel(p, z, y).exp()
}

/// One step of the unnormalized filter:
/// `rho_t(z) = Phi(z, r) / phi(r) * int Psi(z, y) rho_{t-1}(y) dy`.
pub fn filter_step(rho_prev: &GriddedDensity, r_log: f64, k: &Kernels) -> Result<GriddedDensity> {
    if !rho_prev.grid().same_as(k.grid()) {
        return Err(Error::Dimension("density and kernels live on different grids".into()));
    }
    let predicted = k.predict(rho_prev.values());
    let values = k.correct(&predicted, r_log)?;
    GriddedDensity::new(rho_prev.grid().clone(), values)
}

/// Rescales to unit trapezoid mass.
pub fn normalize(rho: &GriddedDensity) -> Result<GriddedDensity> {
    let mass = rho.mass();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::FilterCollapse);
    }
    rho.scaled(1.0 / mass)
}

/// `int f rho / int rho` on the grid.
pub fn conditional_expectation<F: Fn(f64) -> f64>(rho: &GriddedDensity, f: F) -> Result<f64> {
    let mass = rho.mass();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::FilterCollapse);
    }
    let grid = rho.grid();
    let num: f64 = grid
        .points()
        .iter()
        .zip(grid.weights())
        .zip(rho.values())
        .map(|((&z, &w), &v)| f(z) * v * w)
        .sum();
    Ok(num / mass)
}

/// `E[lambda_t^{-1} | past]` by double quadrature over `(Y(t), R(t))` drawn
/// from their physical conditional law given `Y(t-1) = y_prev`.
pub fn lambda_inverse_expectation_check(k: &Kernels, p: &ModelParams, y_prev: f64) -> f64 {
    const SD_COVER: f64 = 10.0;
    let center = y_prev + p.alpha * (p.y_bar - y_prev);
    // the factor range covers both the reference law and the transition law
    let sd_xi = p.xi_density.std_dev();
    let z_lo = (-SD_COVER * sd_xi).min(center - SD_COVER * p.sigma_y * sd_xi);
    let z_hi = (SD_COVER * sd_xi).max(center + SD_COVER * p.sigma_y * sd_xi);
    let (zs, wz) = gauss_legendre_nodes(z_lo, z_hi, 120);
    let mut total = 0.0;
    for (&z, &wzi) in zs.iter().zip(&wz) {
        let ln_psi = k.ln_psi_kernel(z, y_prev);
        let m = p.mu(z);
        let s = p.sigma(z);
        let sd = p.eps_density.std_dev();
        let lo = (-SD_COVER * sd).min(m - SD_COVER * s * sd);
        let hi = (SD_COVER * sd).max(m + SD_COVER * s * sd);
        let (rs, wr) = gauss_legendre_nodes(lo, hi, 80);
        let mut inner = 0.0;
        for (&r, &wri) in rs.iter().zip(&wr) {
            let ln_phi = k.ln_phi_kernel(z, r);
            let ln_lambda = ln_phi - p.eps_density.ln_pdf(r) + ln_psi - p.xi_density.ln_pdf(z);
            inner += wri * (ln_phi + ln_psi - ln_lambda).exp();
        }
        total += wzi * inner;
    }
    total
}
