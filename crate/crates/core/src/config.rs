//! Run configuration: one TOML document holding every parameter a pipeline
//! stage reads.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::BoundOptions;
use crate::dp::{DpOptions, StateGrids};
use crate::error::{Error, Result};
use crate::filter::{FactorGrid, Prior};
use crate::market::{ModelParams, Utilities};
use crate::numeric::linspace;
use crate::quantizer::{
    build_initial_codebook, HVariant, QuantizationSet, ReturnNodeSet, TrainOptions,
    TrainingSchedule, UpdateScope,
};
use crate::sim::{RolloutOptions, ShockModeSetting, DEFAULT_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelParams,
    pub utilities: Utilities,
    pub prior: Prior,
    pub grids: GridConfig,
    pub quantizer: QuantizerConfig,
    pub dp: DpOptions,
    pub sim: SimConfig,
    pub bounds: BoundOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: ModelParams::default(),
            utilities: Utilities::default(),
            prior: Prior::default(),
            grids: GridConfig::default(),
            quantizer: QuantizerConfig::default(),
            dp: DpOptions::default(),
            sim: SimConfig::default(),
            bounds: BoundOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub factor_lo: f64,
    pub factor_hi: f64,
    pub factor_step: f64,
    /// Top wealth node; the wealth grid starts at 0.
    pub wealth_max: f64,
    pub wealth_step: f64,
    /// Number of equispaced fractions of wealth on `[0, 1]`.
    pub control_fractions: usize,
    /// Number of equispaced standardized-return nodes.
    pub return_nodes: usize,
    pub return_lo: f64,
    pub return_hi: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            factor_lo: -1.5,
            factor_hi: 1.5,
            factor_step: 0.05,
            wealth_max: 10.0,
            wealth_step: 0.25,
            control_fractions: 21,
            return_nodes: 21,
            return_lo: -3.0,
            return_hi: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerConfig {
    /// Means of the initial Gaussian rows.
    pub means: Vec<f64>,
    /// Standard deviations of the initial Gaussian rows.
    pub stds: Vec<f64>,
    pub step_a: f64,
    pub step_b: f64,
    pub iterations: usize,
    pub h: HVariant,
    pub scope: UpdateScope,
    pub fd_step: f64,
    pub normalize_target: bool,
    /// Rescale the training filter path to unit mass at every step.
    pub normalize_source: bool,
    pub prune_eps: f64,
    pub prune_trials: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        let s = TrainingSchedule::default();
        Self {
            means: linspace(-1.5, 1.5, 13),
            stds: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            step_a: s.step_a,
            step_b: s.step_b,
            iterations: s.iterations,
            h: t.h,
            scope: t.scope,
            fd_step: t.fd_step,
            normalize_target: t.normalize_target,
            normalize_source: false,
            prune_eps: 0.1,
            prune_trials: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_paths: usize,
    pub normalize_filter: bool,
    pub shocks: ShockModeSetting,
    pub histogram_bins: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        let r = RolloutOptions::default();
        Self {
            n_paths: r.n_paths,
            normalize_filter: r.normalize_filter,
            shocks: r.shocks,
            histogram_bins: DEFAULT_BINS,
        }
    }
}

/// Seeds handed to the stochastic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub train: u64,
    pub prune: u64,
    pub simulate: u64,
}

/// SplitMix64 finalizer applied to `seed + stage * golden`.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn steps(lo: f64, hi: f64, step: f64) -> Option<usize> {
    let n = (hi - lo) / step;
    ((n - n.round()).abs() < 1e-9 * n.max(1.0)).then_some(n.round() as usize)
}

impl RunConfig {
    /// Parses TOML, applies `key=value` overrides by dotted path, and
    /// validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(table).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(vec![format!("{path}: {}", e.inner().message())])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Copy with `output_dir` reset, so identical settings hash alike
    /// wherever they are written.
    pub fn portable(&self) -> RunConfig {
        RunConfig {
            output_dir: RunConfig::default().output_dir,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical TOML serialization of [`Self::portable`].
    pub fn sha256(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.portable().to_toml()?.as_bytes())))
    }

    /// Collects every violated invariant with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut bad = |f: &str, m: String| errs.push(format!("{f}: {m}"));
        let g = &self.grids;
        if !(g.factor_hi > g.factor_lo && g.factor_step > 0.0) {
            bad("grids.factor_step", "need factor_lo < factor_hi and a positive step".into());
        } else if steps(g.factor_lo, g.factor_hi, g.factor_step).is_none() {
            bad("grids.factor_step", "must divide factor_hi - factor_lo".into());
        }
        if !(g.wealth_max > 0.0 && g.wealth_step > 0.0) {
            bad("grids.wealth_step", "need positive wealth_max and wealth_step".into());
        } else if steps(0.0, g.wealth_max, g.wealth_step).is_none() {
            bad("grids.wealth_step", "must divide wealth_max".into());
        }
        if g.control_fractions < 2 {
            bad("grids.control_fractions", "need at least 2".into());
        }
        if g.return_nodes < 2 {
            bad("grids.return_nodes", "need at least 2".into());
        }
        if !(g.return_hi > g.return_lo) {
            bad("grids.return_hi", "must exceed return_lo".into());
        }
        if let Ok(fg) = self.factor_grid() {
            for (f, m) in self.model.check(fg.points()) {
                bad(&format!("model.{f}"), m);
            }
        }
        if let Prior::Gaussian { mean, sd } = self.prior {
            if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                bad("prior.sd", format!("must be positive, got {sd}"));
            }
        }
        let q = &self.quantizer;
        if q.means.is_empty() || q.means.iter().any(|m| !m.is_finite()) {
            bad("quantizer.means", "need at least one finite mean".into());
        }
        if q.stds.is_empty() || q.stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            bad("quantizer.stds", "need at least one positive std".into());
        }
        if let Err(e) = self.train_schedule(0).validate() {
            bad("quantizer", inner_message(e));
        }
        if q.iterations == 0 {
            bad("quantizer.iterations", "must be at least 1".into());
        }
        if !(q.fd_step > 0.0) {
            bad("quantizer.fd_step", format!("must be positive, got {}", q.fd_step));
        }
        if !(q.prune_eps >= 0.0 && q.prune_eps.is_finite()) {
            bad("quantizer.prune_eps", format!("must be nonnegative, got {}", q.prune_eps));
        }
        if self.sim.n_paths == 0 {
            bad("sim.n_paths", "must be at least 1".into());
        }
        if self.sim.histogram_bins == 0 {
            bad("sim.histogram_bins", "must be at least 1".into());
        }
        if let Err(e) = self.bounds.validate() {
            bad("bounds", inner_message(e));
        }
        if self.output_dir.as_os_str().is_empty() {
            bad("output_dir", "must not be empty".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        StageSeeds {
            master: self.seed,
            train: stage_seed(self.seed, 1),
            prune: stage_seed(self.seed, 2),
            simulate: stage_seed(self.seed, 3),
        }
    }

    pub fn factor_grid(&self) -> Result<Arc<FactorGrid>> {
        let g = &self.grids;
        Ok(Arc::new(FactorGrid::with_step(g.factor_lo, g.factor_hi, g.factor_step)?))
    }

    pub fn wealth_grid(&self) -> Vec<f64> {
        let g = &self.grids;
        let n = steps(0.0, g.wealth_max, g.wealth_step).unwrap_or(1) + 1;
        StateGrids::wealth_grid(g.wealth_max, n)
    }

    pub fn control_fractions(&self) -> Vec<f64> {
        linspace(0.0, 1.0, self.grids.control_fractions)
    }

    pub fn return_nodes(&self) -> Result<ReturnNodeSet> {
        let g = &self.grids;
        ReturnNodeSet::equispaced(g.return_nodes, g.return_lo, g.return_hi, self.model.eps_density)
    }

    pub fn initial_codebook(&self, grid: Arc<FactorGrid>) -> Result<QuantizationSet> {
        build_initial_codebook(&self.quantizer.means, &self.quantizer.stds, grid)
    }

    pub fn train_schedule(&self, seed: u64) -> TrainingSchedule {
        let q = &self.quantizer;
        TrainingSchedule {
            step_a: q.step_a,
            step_b: q.step_b,
            iterations: q.iterations,
            seed,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let q = &self.quantizer;
        TrainOptions {
            h: q.h,
            scope: q.scope,
            fd_step: q.fd_step,
            normalize_target: q.normalize_target,
        }
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions {
            n_paths: self.sim.n_paths,
            seed: self.stage_seeds().simulate,
            normalize_filter: self.sim.normalize_filter,
            shocks: self.sim.shocks,
        }
    }

    /// Solver grids around a given codebook.
    pub fn state_grids(&self, codebook: Arc<QuantizationSet>) -> Result<StateGrids> {
        StateGrids::new(
            self.wealth_grid(),
            codebook,
            self.return_nodes()?,
            self.control_fractions(),
        )
    }
}

fn inner_message(e: Error) -> String {
    match e {
        Error::InvalidParams(m) => m,
        other => other.to_string(),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path, &[])
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables. The value
/// is parsed as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let bad = |m: &str| Error::Config(vec![format!("override `{assignment}`: {m}")]);
    let (key, raw) = assignment.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment"));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, path) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| bad(&format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
