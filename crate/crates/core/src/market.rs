//! Market dynamics: the hidden volatility factor, the risky asset, the wealth
//! recursion and the investor's utilities.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_ln_pdf, LN_SQRT_2PI};

/// Density of an i.i.d. shock sequence (`phi` for returns, `psi` for the factor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShockDensity {
    #[default]
    StandardNormal,
    /// Standard logistic, `e^{-x} / (1 + e^{-x})^2`.
    Logistic,
}

impl ShockDensity {
    pub fn ln_pdf(self, x: f64) -> f64 {
        match self {
            ShockDensity::StandardNormal => std_normal_ln_pdf(x),
            ShockDensity::Logistic => {
                let a = -x.abs();
                a - 2.0 * a.exp().ln_1p()
            }
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            ShockDensity::StandardNormal => std_normal_cdf(x),
            ShockDensity::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Standard deviation of the shock.
    pub fn std_dev(self) -> f64 {
        match self {
            ShockDensity::StandardNormal => 1.0,
            ShockDensity::Logistic => std::f64::consts::PI / 3f64.sqrt(),
        }
    }

    /// `sup |f'|`, used by the Lipschitz estimates as an analytic check.
    pub fn max_abs_derivative(self) -> f64 {
        match self {
            // attained at |x| = 1
            ShockDensity::StandardNormal => (-0.5 - LN_SQRT_2PI).exp(),
            // attained where e^{-x} = 2 - sqrt(3)
            ShockDensity::Logistic => 3f64.sqrt() / 18.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ShockDensity::StandardNormal => StandardNormal.sample(rng),
            ShockDensity::Logistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
        }
    }
}

/// Log-return drift `y -> mu(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
}

impl Drift {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Drift::Constant { value } => value,
            Drift::Linear { intercept, slope } => intercept + slope * y,
        }
    }
}

/// Log-return volatility `y -> sigma(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Volatility {
    Constant { value: f64 },
    /// `level * (1 - depth * exp(-y^2))`: lowest at `y = 0`, rising to `level`.
    GaussianDip { level: f64, depth: f64 },
}

impl Volatility {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Volatility::Constant { value } => value,
            Volatility::GaussianDip { level, depth } => level * (1.0 - depth * (-y * y).exp()),
        }
    }

    /// Global lower bound of sigma over the real line.
    pub fn floor(&self) -> f64 {
        match *self {
            Volatility::Constant { value } => value,
            Volatility::GaussianDip { level, depth } => level * (1.0 - depth.max(0.0)),
        }
    }
}

/// Market, factor and preference parameters for a single risky asset driven
/// by a scalar hidden factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Per-period risk-free rate.
    pub risk_free: f64,
    pub drift: Drift,
    pub volatility: Volatility,
    /// Mean-reversion speed of the factor.
    pub alpha: f64,
    /// Long-run factor level.
    pub y_bar: f64,
    pub sigma_y: f64,
    /// Idiosyncratic return shock density.
    pub eps_density: ShockDensity,
    /// Systemic factor shock density.
    pub xi_density: ShockDensity,
    pub delta: f64,
    pub horizon: usize,
    pub y0: f64,
    pub s0: f64,
    pub x0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            risk_free: 0.03,
            drift: Drift::Constant { value: 0.05 },
            volatility: Volatility::GaussianDip {
                level: 0.25,
                depth: 0.75,
            },
            alpha: 0.2,
            y_bar: 0.0,
            sigma_y: 0.2,
            eps_density: ShockDensity::StandardNormal,
            xi_density: ShockDensity::StandardNormal,
            delta: 0.95,
            horizon: 10,
            y0: 1.5,
            s0: 6.0,
            x0: 6.0,
        }
    }
}

impl ModelParams {
    #[inline]
    pub fn mu(&self, y: f64) -> f64 {
        self.drift.eval(y)
    }

    #[inline]
    pub fn sigma(&self, y: f64) -> f64 {
        self.volatility.eval(y)
    }

    /// Checks the parameter invariants; `grid` is the factor grid on which
    /// sigma must stay away from zero. Returns `(field, message)` pairs.
    pub fn check(&self, grid: &[f64]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut bad = |f: &str, m: String| out.push((f.to_string(), m));
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            bad("delta", format!("must lie in (0, 1], got {}", self.delta));
        }
        if self.horizon < 1 {
            bad("horizon", "must be at least 1".into());
        }
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            bad("sigma_y", format!("must be positive, got {}", self.sigma_y));
        }
        if !(self.risk_free > -1.0 && self.risk_free.is_finite()) {
            bad("risk_free", format!("must exceed -1, got {}", self.risk_free));
        }
        if !(self.s0 > 0.0) {
            bad("s0", format!("must be positive, got {}", self.s0));
        }
        if !(self.x0 >= 0.0 && self.x0.is_finite()) {
            bad("x0", format!("must be nonnegative, got {}", self.x0));
        }
        if !self.alpha.is_finite() || !self.y_bar.is_finite() || !self.y0.is_finite() {
            bad("alpha", "factor parameters must be finite".into());
        }
        let floor = self.volatility.floor();
        let grid_min = grid
            .iter()
            .map(|&y| self.sigma(y))
            .fold(f64::INFINITY, f64::min);
        if !(floor > 0.0) || !(grid_min > 0.0) {
            bad(
                "volatility",
                format!("must be bounded away from 0 (floor {floor}, grid min {grid_min})"),
            );
        }
        out
    }

    pub fn validate(&self, grid: &[f64]) -> Result<()> {
        let problems = self.check(grid);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(
                problems
                    .into_iter()
                    .map(|(f, m)| format!("{f}: {m}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }
}

/// Consumption utility `c -> u(c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsumptionUtility {
    /// `scale * (c / (shift + c))^power`
    Irra { scale: f64, shift: f64, power: f64 },
    Zero,
}

impl ConsumptionUtility {
    #[inline]
    pub fn eval(&self, c: f64) -> f64 {
        match *self {
            ConsumptionUtility::Irra {
                scale,
                shift,
                power,
            } => {
                let c = c.max(0.0);
                scale * (c / (shift + c)).powf(power)
            }
            ConsumptionUtility::Zero => 0.0,
        }
    }
}

/// Terminal utility `(y, x) -> u_T(y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalUtility {
    /// `(g e^{-y} x / (1 + g e^{-y} x))^power`
    Irra { gain: f64, power: f64 },
    Linear,
    Constant { value: f64 },
}

impl TerminalUtility {
    #[inline]
    pub fn eval(&self, y: f64, x: f64) -> f64 {
        match *self {
            TerminalUtility::Irra { gain, power } => {
                let a = gain * (-y).exp() * x.max(0.0);
                (a / (1.0 + a)).powf(power)
            }
            TerminalUtility::Linear => x,
            TerminalUtility::Constant { value } => value,
        }
    }
}

/// The investor's preferences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Utilities {
    pub consumption: ConsumptionUtility,
    pub terminal: TerminalUtility,
}

impl Default for Utilities {
    fn default() -> Self {
        Self {
            consumption: ConsumptionUtility::Irra {
                scale: 0.25,
                shift: 2.0,
                power: 0.5,
            },
            terminal: TerminalUtility::Irra {
                gain: 2.0,
                power: 0.5,
            },
        }
    }
}

impl Utilities {
    #[inline]
    pub fn u(&self, c: f64) -> f64 {
        self.consumption.eval(c)
    }

    #[inline]
    pub fn u_terminal(&self, y: f64, x: f64) -> f64 {
        self.terminal.eval(y, x)
    }

    /// `(L_u, L_u_b)`: secant Lipschitz constant of `x -> u_T(y, x)` along
    /// `x_grid` and `sup |u_T|`, both over `y_grid x x_grid`.
    pub fn terminal_bounds(&self, y_grid: &[f64], x_grid: &[f64]) -> (f64, f64) {
        let mut lip = 0.0_f64;
        let mut sup = 0.0_f64;
        for &y in y_grid {
            let vals: Vec<f64> = x_grid.iter().map(|&x| self.u_terminal(y, x)).collect();
            for v in &vals {
                sup = sup.max(v.abs());
            }
            for i in 1..x_grid.len() {
                let h = x_grid[i] - x_grid[i - 1];
                if h > 0.0 {
                    lip = lip.max((vals[i] - vals[i - 1]).abs() / h);
                }
            }
        }
        (lip, sup)
    }
}

/// One period of the factor: `y + alpha (y_bar - y) + sigma_Y xi`.
#[inline]
pub fn step_factor(y: f64, xi: f64, p: &ModelParams) -> f64 {
    y + p.alpha * (p.y_bar - y) + p.sigma_y * xi
}

/// One period of the risky asset. Returns `(new price, log-return)`.
pub fn step_price(s: f64, y_next: f64, eps: f64, p: &ModelParams) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return Err(Error::RejectedInput(format!("price must be positive, got {s}")));
    }
    let r_log = p.mu(y_next) + p.sigma(y_next) * eps;
    let s_next = s * r_log.exp();
    if !r_log.is_finite() || !s_next.is_finite() || s_next <= 0.0 {
        return Err(Error::RejectedInput(format!(
            "non-finite price step (s = {s}, y = {y_next}, eps = {eps})"
        )));
    }
    Ok((s_next, r_log))
}

const BUDGET_SLACK: f64 = 1e-12;

/// Next-period wealth given consumption `c`, risky allocations `pi` and
/// realized log-returns `r_log`; the remainder earns the risk-free rate.
pub fn wealth_transition(
    _t: usize,
    x: f64,
    c: f64,
    pi: &[f64],
    r_log: &[f64],
    p: &ModelParams,
) -> Result<f64> {
    if pi.len() != r_log.len() {
        return Err(Error::Dimension(format!(
            "{} allocations but {} returns",
            pi.len(),
            r_log.len()
        )));
    }
    let slack = BUDGET_SLACK * x.abs().max(1.0);
    if c < 0.0 || c > x + slack {
        return Err(Error::Admissibility(format!("consumption {c} outside [0, {x}]")));
    }
    if let Some(bad) = pi.iter().find(|&&v| v < 0.0) {
        return Err(Error::Admissibility(format!("negative allocation {bad}")));
    }
    let invested: f64 = pi.iter().sum();
    if invested > x - c + slack {
        return Err(Error::Admissibility(format!(
            "allocations {invested} exceed available wealth {}",
            x - c
        )));
    }
    let risky: f64 = pi.iter().zip(r_log).map(|(a, r)| a * r.exp()).sum();
    Ok(risky + (x - invested - c) * (1.0 + p.risk_free))
}

/// Zero-noise hook for hand-checkable paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShockMode {
    #[default]
    Random,
    Zero,
}

/// Independent RNG stream `stream` of the run seeded by `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `(xi, eps)` for one period, factor shock first.
pub fn draw_shocks<R: Rng + ?Sized>(rng: &mut R, p: &ModelParams, mode: ShockMode) -> (f64, f64) {
    match mode {
        ShockMode::Random => {
            let xi = p.xi_density.sample(rng);
            let eps = p.eps_density.sample(rng);
            (xi, eps)
        }
        ShockMode::Zero => (0.0, 0.0),
    }
}

/// A simulated trajectory of the factor and the risky price.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    /// `Y(0..=T)`
    pub y: Vec<f64>,
    /// `R^l(1..=T)`; `r_log[t - 1]` is the return over `[t - 1, t]`.
    pub r_log: Vec<f64>,
    /// `S(0..=T)`
    pub s: Vec<f64>,
}

impl PathSample {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,Y,R_log,S")?;
        for t in 0..self.y.len() {
            let r = if t == 0 {
                String::new()
            } else {
                self.r_log[t - 1].to_string()
            };
            writeln!(w, "{t},{},{r},{}", self.y[t], self.s[t])?;
        }
        Ok(())
    }
}

/// Simulates one path under the physical measure from an explicit RNG.
pub fn simulate_path_with<R: Rng + ?Sized>(
    p: &ModelParams,
    rng: &mut R,
    mode: ShockMode,
) -> Result<PathSample> {
    let n = p.horizon;
    let mut y = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut r_log = Vec::with_capacity(n);
    y.push(p.y0);
    s.push(p.s0);
    for t in 0..n {
        let (xi, eps) = draw_shocks(rng, p, mode);
        let y_next = step_factor(y[t], xi, p);
        let (s_next, r) = step_price(s[t], y_next, eps, p)?;
        y.push(y_next);
        s.push(s_next);
        r_log.push(r);
    }
    Ok(PathSample { y, r_log, s })
}

/// Simulates one path under the physical measure; deterministic in `seed`.
pub fn simulate_path(p: &ModelParams, seed: u64) -> Result<PathSample> {
    simulate_path_with(p, &mut path_rng(seed, 0), ShockMode::Random)
}

/// Draws log-returns under the reference measure, where returns are i.i.d.
/// with the shock density and independent of the factor (which is i.i.d.
/// with the factor shock density).
pub fn sample_reference_returns(p: &ModelParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = path_rng(seed, u64::MAX);
    (0..n)
        .map(|_| {
            let _factor = p.xi_density.sample(&mut rng);
            p.eps_density.sample(&mut rng)
        })
        .collect()
}

/// Physical-measure returns standardized with the realized factor,
/// `(R^l(t) - mu(Y(t))) / sigma(Y(t))`, pooled over `n_paths` paths.
pub fn standardized_returns(p: &ModelParams, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_paths * p.horizon);
    for i in 0..n_paths {
        let path = simulate_path_with(p, &mut path_rng(seed, i as u64), ShockMode::Random)?;
        for t in 1..=p.horizon {
            let y = path.y[t];
            out.push((path.r_log[t - 1] - p.mu(y)) / p.sigma(y));
        }
    }
    Ok(out)
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs())
    })
}

/// Asymptotic one-sample KS critical value at significance `alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn factor_step_examples() {
        assert!((step_factor(1.5, 0.0, &p()) - 1.2).abs() < 1e-15);
        assert_eq!(step_factor(0.0, 0.0, &p()), 0.0);
        assert!((step_factor(1.0, 1.0, &p()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn volatility_endpoints() {
        assert!((p().sigma(0.0) - 0.0625).abs() < 1e-15);
        let s = p().sigma(0.8);
        assert!((s - 0.25 * (1.0 - 0.75 * (-0.64f64).exp())).abs() < 1e-15);
        assert!((s - 0.1511).abs() < 1e-4);
    }

    #[test]
    fn zero_shock_price_step() {
        let (s, r) = step_price(6.0, 0.3, 0.0, &p()).unwrap();
        assert_eq!(r, 0.05);
        assert!((s - 6.0 * 0.05f64.exp()).abs() < 1e-14);
        assert!(step_price(0.0, 0.0, 0.0, &p()).is_err());
        assert!(step_price(1.0, 0.0, f64::INFINITY, &p()).is_err());
    }

    #[test]
    fn wealth_examples() {
        let q = p();
        assert_eq!(wealth_transition(0, 6.0, 0.0, &[6.0], &[0.0], &q).unwrap(), 6.0);
        assert_eq!(wealth_transition(0, 6.0, 6.0, &[0.0], &[0.0], &q).unwrap(), 0.0);
        let x = wealth_transition(0, 6.0, 1.0, &[2.0], &[0.05], &q).unwrap();
        assert!((x - (2.0 * 0.05f64.exp() + 3.0 * 1.03)).abs() < 1e-14);
        assert!((x - 5.19254).abs() < 1e-5);
        let bank = wealth_transition(0, 4.0, 0.0, &[0.0], &[0.3], &q).unwrap();
        assert_eq!(bank, 4.0 * 1.03);
    }

    #[test]
    fn wealth_rejects_inadmissible() {
        let q = p();
        assert!(matches!(
            wealth_transition(0, 6.0, 7.0, &[0.0], &[0.0], &q),
            Err(Error::Admissibility(_))
        ));
        assert!(wealth_transition(0, 6.0, 1.0, &[5.5], &[0.0], &q).is_err());
        assert!(wealth_transition(0, 6.0, 1.0, &[-0.5], &[0.0], &q).is_err());
        assert!(wealth_transition(0, 6.0, 1.0, &[1.0, 1.0], &[0.0], &q).is_err());
    }

    #[test]
    fn zero_noise_path_is_closed_form() {
        let q = p();
        let path = simulate_path_with(&q, &mut path_rng(1, 0), ShockMode::Zero).unwrap();
        for t in 0..=q.horizon {
            let closed = q.y0 * (1.0 - q.alpha).powi(t as i32)
                + q.y_bar * (1.0 - (1.0 - q.alpha).powi(t as i32));
            assert!((path.y[t] - closed).abs() < 1e-12);
            assert!((path.y[t] - 0.8f64.powi(t as i32) * 1.5).abs() < 1e-12);
        }
        for t in 1..=q.horizon {
            assert!((path.s[t] / path.s[t - 1] - 0.05f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn paths_are_deterministic_and_consistent() {
        let q = p();
        let a = simulate_path(&q, 42).unwrap();
        let b = simulate_path(&q, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.y.len(), q.horizon + 1);
        assert_eq!(a.r_log.len(), q.horizon);
        for t in 0..q.horizon {
            assert_eq!(a.s[t + 1], a.s[t] * a.r_log[t].exp());
            assert!(a.s[t + 1] > 0.0);
        }
        assert_ne!(a, simulate_path(&q, 43).unwrap());
    }

    #[test]
    fn return_mean_clt() {
        let mut q = p();
        q.y0 = 0.0;
        q.sigma_y = 1e-300; // factor pinned at zero
        q.horizon = 1;
        let n = 100_000;
        let mut sum = 0.0;
        let mut rng = path_rng(7, 0);
        for _ in 0..n {
            let path = simulate_path_with(&q, &mut rng, ShockMode::Random).unwrap();
            sum += path.r_log[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 0.05).abs() < 3.0 * 0.0625 / (n as f64).sqrt());
    }

    #[test]
    fn path_csv_layout() {
        let q = p();
        let path = simulate_path_with(&q, &mut path_rng(1, 0), ShockMode::Zero).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,Y,R_log,S"));
        assert_eq!(lines.next(), Some("0,1.5,,6"));
        assert_eq!(text.lines().count(), q.horizon + 2);
    }

    #[test]
    fn utilities_match_examples() {
        let u = Utilities::default();
        let v = u.u_terminal(1.5, 6.0);
        let a = 2.0 * (-1.5f64).exp() * 6.0;
        assert!((v - (a / (1.0 + a)).sqrt()).abs() < 1e-15);
        assert!((v - 0.8533).abs() < 1e-4);
        assert_eq!(u.u(0.0), 0.0);
        assert!((u.u(2.0) - 0.25 * 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn logistic_density_is_normalized() {
        let d = ShockDensity::Logistic;
        let mass = crate::numeric::gauss_legendre(|x| d.pdf(x), -40.0, 40.0, 200);
        assert!((mass - 1.0).abs() < 1e-10);
        assert!((d.cdf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parameter_checks() {
        let grid = crate::numeric::linspace(-1.5, 1.5, 61);
        assert!(p().validate(&grid).is_ok());
        let mut bad = p();
        bad.delta = 1.2;
        bad.volatility = Volatility::GaussianDip {
            level: 0.25,
            depth: 1.0,
        };
        let problems = bad.check(&grid);
        assert!(problems.iter().any(|(f, _)| f == "delta"));
        assert!(problems.iter().any(|(f, _)| f == "volatility"));
    }
}
