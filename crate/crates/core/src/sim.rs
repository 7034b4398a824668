//! Monte-Carlo evaluation of consumption/investment policies on simulated
//! physical-measure paths with the filter run online.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{evaluate_policy_step, DpOptions, PolicyTable, StateGrids};
use crate::error::{Error, Result};
use crate::filter::{filter_step, normalize, GriddedDensity, Kernels};
use crate::market::{
    draw_shocks, path_rng, step_factor, step_price, wealth_transition, ModelParams, ShockMode,
    Utilities,
};

/// Anything that maps `(t, wealth, belief)` to `(consumption, risky, row)`.
pub trait Policy: Sync {
    fn control(&self, t: usize, x: f64, rho: &GriddedDensity) -> Result<(f64, f64, Option<usize>)>;
}

/// The solved quantized policy.
pub struct SolvedPolicy<'a> {
    pub policy: &'a PolicyTable,
    pub grids: &'a StateGrids,
}

impl Policy for SolvedPolicy<'_> {
    fn control(&self, t: usize, x: f64, rho: &GriddedDensity) -> Result<(f64, f64, Option<usize>)> {
        let (c, pi, k) = evaluate_policy_step(t, x, rho, self.policy, self.grids)?;
        Ok((c, pi, Some(k)))
    }
}

/// Per-period `(c_frac, pi_frac)` of current wealth, ignoring beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPolicy {
    fractions: Vec<(f64, f64)>,
}

impl FixedPolicy {
    pub fn new(fractions: Vec<(f64, f64)>) -> Result<Self> {
        for (t, &(c, p)) in fractions.iter().enumerate() {
            if !(c >= 0.0 && p >= 0.0 && c + p <= 1.0 + 1e-12) {
                return Err(Error::Admissibility(format!(
                    "period {t}: fractions ({c}, {p}) are not feasible"
                )));
            }
        }
        Ok(Self { fractions })
    }

    pub fn constant(c: f64, pi: f64, horizon: usize) -> Result<Self> {
        Self::new(vec![(c, pi); horizon])
    }

    /// All wealth kept in the bank, nothing consumed.
    pub fn all_bank(horizon: usize) -> Self {
        Self::constant(0.0, 0.0, horizon).expect("feasible")
    }

    pub fn all_risky(horizon: usize) -> Self {
        Self::constant(0.0, 1.0, horizon).expect("feasible")
    }

    pub fn consume_fraction(frac: f64, horizon: usize) -> Result<Self> {
        Self::constant(frac, 0.0, horizon)
    }

    /// Everything consumed at time 0.
    pub fn consume_all_now(horizon: usize) -> Self {
        let mut f = vec![(0.0, 0.0); horizon];
        if let Some(first) = f.first_mut() {
            *first = (1.0, 0.0);
        }
        Self::new(f).expect("feasible")
    }
}

impl Policy for FixedPolicy {
    fn control(&self, t: usize, x: f64, _rho: &GriddedDensity) -> Result<(f64, f64, Option<usize>)> {
        let (c, p) = self.fractions.get(t).copied().unwrap_or((0.0, 0.0));
        let x = x.max(0.0);
        Ok((c * x, p * x, None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Rescale the online filter to unit mass before each policy lookup.
    pub normalize_filter: bool,
    pub shocks: ShockModeSetting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockModeSetting {
    #[default]
    Random,
    Zero,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            seed: 0,
            normalize_filter: false,
            shocks: ShockModeSetting::Random,
        }
    }
}

/// One simulated path under a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub path: usize,
    /// `x(0..=T)`
    pub wealth: Vec<f64>,
    pub consumption: Vec<f64>,
    pub risky: Vec<f64>,
    pub riskless: Vec<f64>,
    /// `r_log[t]` is the return realized over `[t, t+1]`.
    pub r_log: Vec<f64>,
    /// Codebook row used at each period, when the policy projects.
    pub row: Vec<Option<usize>>,
    /// `Y(0..=T)`
    pub factor: Vec<f64>,
    /// Realized discounted utility.
    pub utility: f64,
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub records: Vec<RolloutRecord>,
    /// Paths dropped because the filter lost all mass.
    pub collapsed: Vec<usize>,
}

fn run_path<P: Policy + ?Sized>(
    path: usize,
    policy: &P,
    prior: &GriddedDensity,
    k: &Kernels,
    u: &Utilities,
    dp: DpOptions,
    opts: &RolloutOptions,
) -> Result<Option<RolloutRecord>> {
    let p = k.params();
    let horizon = p.horizon;
    let mode = match opts.shocks {
        ShockModeSetting::Random => ShockMode::Random,
        ShockModeSetting::Zero => ShockMode::Zero,
    };
    let mut rng = path_rng(opts.seed, path as u64);
    let mut rec = RolloutRecord {
        path,
        wealth: vec![p.x0],
        consumption: Vec::with_capacity(horizon),
        risky: Vec::with_capacity(horizon),
        riskless: Vec::with_capacity(horizon),
        r_log: Vec::with_capacity(horizon),
        row: Vec::with_capacity(horizon),
        factor: vec![p.y0],
        utility: 0.0,
    };
    let mut rho = prior.clone();
    let mut s = p.s0;
    let mut disc = 1.0;
    for t in 0..horizon {
        let x = rec.wealth[t];
        let belief = if opts.normalize_filter {
            match normalize(&rho) {
                Ok(b) => b,
                Err(_) => return Ok(None),
            }
        } else {
            rho.clone()
        };
        let (c, pi, row) = policy.control(t, x, &belief)?;
        let (xi, eps) = draw_shocks(&mut rng, p, mode);
        let y_next = step_factor(rec.factor[t], xi, p);
        let (s_next, r) = step_price(s, y_next, eps, p)?;
        let x_next = wealth_transition(t, x, c, &[pi], &[r], p)?;
        rho = match filter_step(&rho, r, k) {
            Ok(next) if next.mass() > 0.0 && next.mass().is_finite() => next,
            _ => return Ok(None),
        };
        if !(t == 0 && dp.skip_initial_consumption) {
            rec.utility += disc * u.u(c);
        }
        disc *= p.delta;
        rec.consumption.push(c);
        rec.risky.push(pi);
        rec.riskless.push(x - c - pi);
        rec.r_log.push(r);
        rec.row.push(row);
        rec.factor.push(y_next);
        rec.wealth.push(x_next);
        s = s_next;
    }
    rec.utility += disc * u.u_terminal(rec.factor[horizon], rec.wealth[horizon]);
    Ok(Some(rec))
}

/// Simulates `n_paths` paths, path `i` on RNG stream `i` of `seed`.
pub fn rollout<P: Policy + ?Sized>(
    policy: &P,
    prior: &GriddedDensity,
    k: &Kernels,
    u: &Utilities,
    dp: DpOptions,
    opts: &RolloutOptions,
) -> Result<RolloutOutput> {
    if opts.n_paths == 0 {
        return Err(Error::RejectedInput("need at least one path".into()));
    }
    let results: Vec<Result<Option<RolloutRecord>>> = (0..opts.n_paths)
        .into_par_iter()
        .map(|i| run_path(i, policy, prior, k, u, dp, opts))
        .collect();
    let mut records = Vec::with_capacity(opts.n_paths);
    let mut collapsed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Some(rec) => records.push(rec),
            None => collapsed.push(i),
        }
    }
    Ok(RolloutOutput { records, collapsed })
}

/// Mean with its plain standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl UtilityEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Mean realized utility of a belief-independent rule.
pub fn fixed_policy_rollout(
    policy: &FixedPolicy,
    prior: &GriddedDensity,
    k: &Kernels,
    u: &Utilities,
    dp: DpOptions,
    opts: &RolloutOptions,
) -> Result<UtilityEstimate> {
    let out = rollout(policy, prior, k, u, dp, opts)?;
    if out.records.is_empty() {
        return Err(Error::FilterCollapse);
    }
    let v: Vec<f64> = out.records.iter().map(|r| r.utility).collect();
    Ok(UtilityEstimate::from_samples(&v))
}

pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub quantity: String,
    pub period: usize,
    /// `T-n`: `n` periods before the horizon.
    pub label: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSet {
    pub horizon: usize,
    pub histograms: Vec<Histogram>,
}

impl HistogramSet {
    pub fn get(&self, quantity: &str, period: usize) -> Option<&Histogram> {
        self.histograms
            .iter()
            .find(|h| h.quantity == quantity && h.period == period)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "quantity,period,label,bin,lo,hi,count")?;
        for h in &self.histograms {
            for (b, c) in h.counts.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{b},{},{},{c}",
                    h.quantity,
                    h.period,
                    h.label,
                    h.edges[b],
                    h.edges[b + 1]
                )?;
            }
        }
        Ok(())
    }
}

fn histogram(quantity: &str, period: usize, horizon: usize, values: &[f64], bins: usize) -> Histogram {
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    let top = if max > 0.0 { max } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|b| top * b as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v.max(0.0) / top) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    Histogram {
        quantity: quantity.into(),
        period,
        label: format!("T-{}", horizon - period),
        edges,
        counts,
    }
}

/// Per-period histograms of consumption, risky and riskless investment
/// and wealth, `bins` equal bins on `[0, max observed]`.
pub fn aggregate_with_bins(records: &[RolloutRecord], bins: usize) -> Result<HistogramSet> {
    if records.is_empty() || bins == 0 {
        return Err(Error::RejectedInput("need records and at least one bin".into()));
    }
    let horizon = records[0].consumption.len();
    let mut histograms = Vec::new();
    type Getter = fn(&RolloutRecord) -> &Vec<f64>;
    let series: [(&str, Getter, usize); 4] = [
        ("consumption", |r| &r.consumption, horizon),
        ("risky", |r| &r.risky, horizon),
        ("riskless", |r| &r.riskless, horizon),
        ("wealth", |r| &r.wealth, horizon + 1),
    ];
    for (name, get, periods) in series {
        for t in 0..periods {
            let vals: Vec<f64> = records.iter().map(|r| get(r)[t]).collect();
            histograms.push(histogram(name, t, horizon, &vals, bins));
        }
    }
    Ok(HistogramSet {
        horizon,
        histograms,
    })
}

pub fn aggregate(records: &[RolloutRecord]) -> Result<HistogramSet> {
    aggregate_with_bins(records, DEFAULT_BINS)
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Headline statistics of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub n_paths: usize,
    pub collapsed_paths: usize,
    pub median_consumption: Vec<f64>,
    pub median_first_two_consumption: f64,
    /// Quantiles 5, 25, 50, 75, 95 % of terminal wealth.
    pub terminal_wealth_quantiles: [f64; 5],
    pub mean_utility: UtilityEstimate,
    /// Wealth values above the top grid node seen in the rollout.
    pub wealth_saturation: usize,
    /// Clamped next-period wealth values counted by the solver.
    pub solver_saturation: u64,
}

pub fn summarize(out: &RolloutOutput, x_max: f64, solver_saturation: u64) -> Result<RolloutSummary> {
    let rec = &out.records;
    if rec.is_empty() {
        return Err(Error::RejectedInput("no records to summarize".into()));
    }
    let horizon = rec[0].consumption.len();
    let median_consumption = (0..horizon)
        .map(|t| quantile(&rec.iter().map(|r| r.consumption[t]).collect::<Vec<_>>(), 0.5))
        .collect();
    let first_two: Vec<f64> = rec
        .iter()
        .map(|r| r.consumption.iter().take(2).sum())
        .collect();
    let terminal: Vec<f64> = rec.iter().map(|r| r.wealth[horizon]).collect();
    let qs = [0.05, 0.25, 0.5, 0.75, 0.95].map(|q| quantile(&terminal, q));
    let utilities: Vec<f64> = rec.iter().map(|r| r.utility).collect();
    let wealth_saturation = rec
        .iter()
        .map(|r| r.wealth.iter().filter(|&&x| x > x_max).count())
        .sum();
    Ok(RolloutSummary {
        n_paths: rec.len() + out.collapsed.len(),
        collapsed_paths: out.collapsed.len(),
        median_consumption,
        median_first_two_consumption: quantile(&first_two, 0.5),
        terminal_wealth_quantiles: qs,
        mean_utility: UtilityEstimate::from_samples(&utilities),
        wealth_saturation,
        solver_saturation,
    })
}

pub fn write_records_csv<W: Write>(records: &[RolloutRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "path,t,wealth,consumption,risky,riskless,r_log,codebook_index,factor")?;
    for r in records {
        for t in 0..r.consumption.len() {
            let row = r.row[t].map(|k| k.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{t},{},{},{},{},{},{row},{}",
                r.path, r.wealth[t], r.consumption[t], r.risky[t], r.riskless[t], r.r_log[t], r.factor[t]
            )?;
        }
        let t = r.consumption.len();
        writeln!(w, "{},{t},{},,,,,,{}", r.path, r.wealth[t], r.factor[t])?;
    }
    Ok(())
}

/// `true` when `x(t+1)` follows from the recorded controls and return.
pub fn accounting_holds(rec: &RolloutRecord, p: &ModelParams) -> bool {
    (0..rec.consumption.len()).all(|t| {
        let x = rec.wealth[t];
        let (c, pi) = (rec.consumption[t], rec.risky[t]);
        let feasible = c >= 0.0 && pi >= 0.0 && c <= x + 1e-12 && c + pi <= x * (1.0 + 1e-12) + 1e-12;
        let next = wealth_transition(t, x, c, &[pi], &[rec.r_log[t]], p);
        feasible && next.is_ok_and(|v| (v - rec.wealth[t + 1]).abs() <= 1e-12 * v.abs().max(1.0))
    })
}
