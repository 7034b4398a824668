use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::QuantizationSet;
use crate::error::{Error, Result};
use crate::filter::{filter_step, normalize, GriddedDensity, Kernels};
use crate::market::{path_rng, simulate_path_with, ModelParams, PathSample, ShockMode};

/// Step sizes `beta_i = a / (b + i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSchedule {
    pub step_a: f64,
    pub step_b: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            step_a: 1.0,
            step_b: 10.0,
            iterations: 500,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_a > 0.0 && self.step_a.is_finite()) {
            return Err(Error::InvalidParams(format!("step_a must be positive, got {}", self.step_a)));
        }
        if !(self.step_b >= 0.0 && self.step_b.is_finite()) {
            return Err(Error::InvalidParams(format!("step_b must be >= 0, got {}", self.step_b)));
        }
        Ok(())
    }

    /// `beta_i`, with `i` counted from 1.
    pub fn step(&self, i: usize) -> f64 {
        self.step_a / (self.step_b + i as f64)
    }
}

/// Form of the increment applied to a codebook row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HVariant {
    /// `d rho_bar / d r * (rho_bar - q)`.
    #[default]
    Derivative,
    /// `rho_bar - q`.
    Clvq,
}

/// Which rows receive the increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScope {
    #[default]
    Winner,
    /// Every live row, each against the same propagated density.
    AllRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub h: HVariant,
    pub scope: UpdateScope,
    /// Finite-difference step for the derivative in `r`.
    pub fd_step: f64,
    /// Rescale each propagated density to unit mass before it is compared
    /// with the codebook.
    pub normalize_target: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            h: HVariant::default(),
            scope: UpdateScope::default(),
            fd_step: 1e-4,
            normalize_target: false,
        }
    }
}

/// `rho_bar(., r)` together with its central-difference derivative in `r`,
/// optionally both for the unit-mass version of `rho_bar`.
pub fn propagate_with_derivative(
    rho: &GriddedDensity,
    r: f64,
    k: &Kernels,
    h: f64,
    normalized: bool,
) -> Result<(GriddedDensity, Vec<f64>)> {
    let bar = filter_step(rho, r, k)?;
    let predicted = k.predict(rho.values());
    let mut up = k.correct(&predicted, r + h)?;
    let mut down = k.correct(&predicted, r - h)?;
    if !normalized {
        let d = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        return Ok((bar, d));
    }
    let grid = k.grid();
    for v in [&mut up, &mut down] {
        let m = grid.integrate(v);
        if !(m > 0.0) {
            return Err(Error::FilterCollapse);
        }
        v.iter_mut().for_each(|x| *x /= m);
    }
    let d = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    Ok((normalize(&bar)?, d))
}

/// Increment for row `row` given the propagated density and its derivative.
fn increment(q: &[f64], bar: &[f64], deriv: Option<&[f64]>) -> Vec<f64> {
    match deriv {
        Some(d) => (0..q.len()).map(|m| d[m] * (bar[m] - q[m])).collect(),
        None => (0..q.len()).map(|m| bar[m] - q[m]).collect(),
    }
}

/// Increment of the winning row for the pair `(rho_source, r_hat)`.
pub fn incremental_h(
    q: &QuantizationSet,
    winner: usize,
    r_hat: f64,
    rho_source: &GriddedDensity,
    k: &Kernels,
    opts: &TrainOptions,
) -> Result<Vec<f64>> {
    let (bar, d) =
        propagate_with_derivative(rho_source, r_hat, k, opts.fd_step, opts.normalize_target)?;
    let deriv = matches!(opts.h, HVariant::Derivative).then_some(d.as_slice());
    Ok(increment(q.row(winner), bar.values(), deriv))
}

/// Stream of `(belief density, fresh return)` training pairs.
pub trait DensitySource {
    fn next_pair(&mut self) -> Result<(GriddedDensity, f64)>;
}

/// Runs a filter along simulated physical-measure paths and emits
/// `(rho_{t-1}, R(t))`; a new path (own RNG stream) starts every horizon.
pub struct FilterPathSource {
    params: ModelParams,
    kernels: Arc<Kernels>,
    prior: GriddedDensity,
    seed: u64,
    normalize: bool,
    path_index: u64,
    path: Option<PathSample>,
    t: usize,
    rho: GriddedDensity,
}

impl FilterPathSource {
    pub fn new(kernels: Arc<Kernels>, prior: GriddedDensity, seed: u64, normalize: bool) -> Self {
        Self {
            params: kernels.params().clone(),
            kernels,
            rho: prior.clone(),
            prior,
            seed,
            normalize,
            path_index: 0,
            path: None,
            t: 0,
        }
    }

    fn start_path(&mut self) -> Result<()> {
        let mut rng = path_rng(self.seed, self.path_index);
        self.path_index += 1;
        self.path = Some(simulate_path_with(&self.params, &mut rng, ShockMode::Random)?);
        self.t = 0;
        self.rho = if self.normalize {
            normalize(&self.prior)?
        } else {
            self.prior.clone()
        };
        Ok(())
    }
}

impl DensitySource for FilterPathSource {
    fn next_pair(&mut self) -> Result<(GriddedDensity, f64)> {
        if self.path.is_none() || self.t >= self.params.horizon {
            self.start_path()?;
        }
        let r = self.path.as_ref().expect("path started").r_log[self.t];
        let out = (self.rho.clone(), r);
        let next = filter_step(&self.rho, r, &self.kernels)?;
        self.rho = match (self.normalize, normalize(&next)) {
            (true, Ok(n)) => n,
            (true, Err(_)) => {
                // collapsed filter: restart on the next call
                self.t = self.params.horizon;
                return Ok(out);
            }
            (false, _) => next,
        };
        self.t += 1;
        Ok(out)
    }
}

/// Always emits the same pair.
pub struct StationarySource {
    pub rho: GriddedDensity,
    pub r: f64,
}

impl DensitySource for StationarySource {
    fn next_pair(&mut self) -> Result<(GriddedDensity, f64)> {
        Ok((self.rho.clone(), self.r))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub codebook: QuantizationSet,
    /// Squared sup distance from each propagated sample to its winner,
    /// measured before the update.
    pub distortion: Vec<f64>,
    /// Rows that became identically zero during training.
    pub dead_rows: Vec<usize>,
}

/// Stochastic-gradient codebook training with clamping at zero.
pub fn train(
    q0: &QuantizationSet,
    schedule: &TrainingSchedule,
    source: &mut dyn DensitySource,
    k: &Kernels,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    schedule.validate()?;
    if !q0.grid().same_as(k.grid()) {
        return Err(Error::Dimension("codebook and kernels live on different grids".into()));
    }
    let mut q = q0.clone();
    let mut distortion = Vec::with_capacity(schedule.iterations);
    let mut dead_rows = Vec::new();
    for i in 0..schedule.iterations {
        let (rho, r) = source.next_pair()?;
        let (bar, d) =
            propagate_with_derivative(&rho, r, k, opts.fd_step, opts.normalize_target)?;
        let (winner, dist) = q
            .nearest(bar.values())
            .ok_or_else(|| Error::Invariant("codebook has no live rows".into()))?;
        distortion.push(dist * dist);
        let beta = schedule.step(i + 1);
        let deriv = matches!(opts.h, HVariant::Derivative).then_some(d.as_slice());
        let targets: Vec<usize> = match opts.scope {
            UpdateScope::Winner => vec![winner],
            UpdateScope::AllRows => q.alive().collect(),
        };
        for row in targets {
            let inc = increment(q.row(row), bar.values(), deriv);
            let values = &mut q.rows_mut()[row];
            for (v, h) in values.iter_mut().zip(&inc) {
                *v = (*v + beta * h).max(0.0);
            }
            if values.iter().all(|&v| v == 0.0) {
                q.mark_dead(row);
                dead_rows.push(row);
            }
        }
    }
    Ok(TrainOutput {
        codebook: q,
        distortion,
        dead_rows,
    })
}
