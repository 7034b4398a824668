//! Stage orchestration with persisted, hash-checked artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{constant_tables, evaluate_bound, BoundReport};
use crate::config::{hex, RunConfig, StageSeeds};
use crate::dp::{read_solution_csv, solve, StateGrids};
use crate::error::{Error, Result};
use crate::filter::{FactorGrid, GriddedDensity, Kernels};
use crate::quantizer::{
    essential_support_half_width, prune, train, FilterPathSource, QuantizationSet,
};
use crate::sim::{
    aggregate_with_bins, fixed_policy_rollout, rollout, summarize, write_records_csv, FixedPolicy,
    RolloutSummary, SolvedPolicy, UtilityEstimate,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    TrainQuantizer,
    Prune,
    Solve,
    Simulate,
    Bounds,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::TrainQuantizer,
        Stage::Prune,
        Stage::Solve,
        Stage::Simulate,
        Stage::Bounds,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainQuantizer => "train-quantizer",
            Stage::Prune => "prune",
            Stage::Solve => "solve",
            Stage::Simulate => "simulate",
            Stage::Bounds => "bounds",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose outputs this one reads, directly or transitively.
    pub fn ancestors(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            TrainQuantizer => &[],
            Prune => &[TrainQuantizer],
            Solve => &[TrainQuantizer, Prune],
            Bounds => &[TrainQuantizer, Prune, Solve],
            Simulate => &[TrainQuantizer, Prune, Solve],
            Report => &[TrainQuantizer, Prune, Solve, Simulate, Bounds],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the configuration sections the stage reads.
    pub fingerprint: String,
    pub outputs: Vec<String>,
}

/// Provenance of an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seeds: StageSeeds,
    pub stages: BTreeMap<Stage, StageRecord>,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::Parse {
            file: MANIFEST_FILE.into(),
            msg: e.to_string(),
        })
    }

    /// Names of listed files whose contents no longer match.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (name, hash) in &self.files {
            match std::fs::read(dir.join(name)) {
                Ok(bytes) if sha256_hex(&bytes) == *hash => {}
                _ => bad.push(name.clone()),
            }
        }
        Ok(bad)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub iterations: usize,
    pub rows: usize,
    pub dead_rows: Vec<usize>,
    pub support_half_width_initial: f64,
    pub support_half_width_trained: f64,
    /// Mean squared sup distance over the first and last tenth of training.
    pub distortion_head_mean: f64,
    pub distortion_tail_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStats {
    pub eps: f64,
    pub trials: usize,
    pub input_rows: usize,
    pub kept_rows: usize,
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub horizon: usize,
    pub wealth_nodes: usize,
    pub rows: usize,
    pub states_per_period: usize,
    /// `V_hat(0, x0, rho0)` after projecting both onto the grids.
    pub v0: f64,
    pub x0_index: usize,
    pub prior_row: usize,
    pub saturation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmarks {
    pub all_bank: UtilityEstimate,
    pub consume_fraction: UtilityEstimate,
    pub all_risky: UtilityEstimate,
    pub consume_fraction_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub summary: RolloutSummary,
    pub benchmarks: Benchmarks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsArtifact {
    pub report: BoundReport,
    pub v0: f64,
    /// `abs_error_bound / |v0|`.
    pub relative_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub training: TrainingStats,
    pub prune: PruneStats,
    pub solve: SolveStats,
    pub simulation: SimulationStats,
    pub bounds: BoundsArtifact,
}

/// Fraction consumed per period by the constant-consumption benchmark.
pub const BENCHMARK_CONSUME_FRACTION: f64 = 0.2;

pub struct Pipeline {
    cfg: RunConfig,
    dir: PathBuf,
    manifest: Manifest,
    grid: Arc<FactorGrid>,
    kernels: Arc<Kernels>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let grid = cfg.factor_grid()?;
        let kernels = Arc::new(Kernels::new(&cfg.model, grid.clone()));
        let fresh = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.sha256()?,
            seeds: cfg.stage_seeds(),
            stages: BTreeMap::new(),
            files: BTreeMap::new(),
        };
        let manifest = match Manifest::load(&dir)? {
            Some(old) => Manifest {
                stages: old.stages,
                files: old.files,
                ..fresh
            },
            None => fresh,
        };
        Ok(Self {
            cfg,
            dir,
            manifest,
            grid,
            kernels,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        let outputs = match stage {
            Stage::TrainQuantizer => self.train_quantizer()?,
            Stage::Prune => self.prune()?,
            Stage::Solve => self.solve()?,
            Stage::Simulate => self.simulate()?,
            Stage::Bounds => {
                let tables = self.constant_tables()?;
                match self.bounds() {
                    Ok(b) => vec![tables, b],
                    Err(e @ Error::MissingArtifact { .. }) => {
                        self.persist(vec![tables])?;
                        self.write_manifest()?;
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Stage::Report => self.report()?,
        };
        if let Some(old) = self.manifest.stages.remove(&stage) {
            for f in &old.outputs {
                self.manifest.files.remove(f);
            }
        }
        for s in Stage::ALL {
            if s.ancestors().contains(&stage) {
                self.manifest.stages.remove(&s);
            }
        }
        let names = self.persist(outputs)?;
        self.manifest.stages.insert(
            stage,
            StageRecord {
                fingerprint: self.fingerprint(stage),
                outputs: names,
            },
        );
        self.write_manifest()
    }

    fn persist(&mut self, outputs: Vec<(String, Vec<u8>)>) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for (name, bytes) in outputs {
            std::fs::write(self.dir.join(&name), &bytes)?;
            self.manifest.files.insert(name.clone(), sha256_hex(&bytes));
            names.push(name);
        }
        Ok(names)
    }

    fn write_manifest(&mut self) -> Result<()> {
        let config = self.cfg.portable().to_toml()?.into_bytes();
        std::fs::write(self.dir.join(CONFIG_FILE), &config)?;
        self.manifest
            .files
            .insert(CONFIG_FILE.into(), sha256_hex(&config));
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Hash of the configuration sections a stage reads, so that upstream
    /// artifacts can be checked against the current settings.
    fn fingerprint(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let v = match stage {
            Stage::TrainQuantizer => {
                serde_json::json!([c.seed, c.model, c.prior, c.grids, c.quantizer])
            }
            Stage::Prune => serde_json::json!([c.seed, c.quantizer]),
            Stage::Solve => serde_json::json!([c.model, c.utilities, c.grids, c.dp, c.prior]),
            Stage::Simulate => serde_json::json!([c.seed, c.sim]),
            Stage::Bounds => serde_json::json!([c.bounds]),
            Stage::Report => serde_json::json!([]),
        };
        sha256_hex(v.to_string().as_bytes())
    }

    /// Reads an upstream artifact after checking that it exists, matches its
    /// recorded hash, and was produced under the current settings.
    fn read_input(&self, stage: Stage, producer: Stage, file: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(file);
        let record = self.manifest.stages.get(&producer);
        if !path.exists() || record.is_none() {
            return Err(Error::MissingArtifact {
                stage: stage.name().into(),
                missing: file.into(),
                run_first: producer.name().into(),
            });
        }
        for &up in stage.ancestors() {
            match self.manifest.stages.get(&up) {
                None => {
                    return Err(Error::MissingArtifact {
                        stage: stage.name().into(),
                        missing: format!("current outputs of `{up}`"),
                        run_first: up.name().into(),
                    })
                }
                Some(r) if r.fingerprint != self.fingerprint(up) => {
                    return Err(Error::StaleArtifact {
                        file: file.into(),
                        run_first: up.name().into(),
                    })
                }
                Some(_) => {}
            }
        }
        let bytes = std::fs::read(&path)?;
        if self.manifest.files.get(file) != Some(&sha256_hex(&bytes)) {
            return Err(Error::ArtifactMismatch(file.into()));
        }
        Ok(bytes)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(
        &self,
        stage: Stage,
        producer: Stage,
        file: &str,
    ) -> Result<T> {
        let bytes = self.read_input(stage, producer, file)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            file: file.into(),
            msg: e.to_string(),
        })
    }

    fn read_codebook(&self, stage: Stage, producer: Stage, file: &str) -> Result<QuantizationSet> {
        let bytes = self.read_input(stage, producer, file)?;
        let q = QuantizationSet::read_csv(bytes.as_slice()).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                file: file.into(),
                msg,
            },
            other => other,
        })?;
        if !q.grid().same_as(&self.grid) {
            return Err(Error::StaleArtifact {
                file: file.into(),
                run_first: Stage::TrainQuantizer.name().into(),
            });
        }
        Ok(q)
    }

    fn prior(&self) -> Result<GriddedDensity> {
        self.cfg.prior.density(self.grid.clone(), &self.cfg.model)
    }

    fn solver_grids(&self, stage: Stage) -> Result<StateGrids> {
        let q = self.read_codebook(stage, Stage::Prune, "codebook_pruned.csv")?;
        self.cfg.state_grids(Arc::new(q))
    }

    fn train_quantizer(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let q0 = self.cfg.initial_codebook(self.grid.clone())?;
        let seeds = self.cfg.stage_seeds();
        let mut src = FilterPathSource::new(
            self.kernels.clone(),
            self.prior()?,
            seeds.train,
            self.cfg.quantizer.normalize_source,
        );
        let out = train(
            &q0,
            &self.cfg.train_schedule(seeds.train),
            &mut src,
            &self.kernels,
            &self.cfg.train_options(),
        )?;
        let d = &out.distortion;
        let tenth = (d.len() / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let stats = TrainingStats {
            iterations: d.len(),
            rows: out.codebook.len(),
            dead_rows: out.dead_rows.clone(),
            support_half_width_initial: essential_support_half_width(&q0, 0.01),
            support_half_width_trained: essential_support_half_width(&out.codebook, 0.01),
            distortion_head_mean: mean(&d[..tenth.min(d.len())]),
            distortion_tail_mean: mean(&d[d.len().saturating_sub(tenth)..]),
        };
        let mut trace = b"iteration,distortion\n".to_vec();
        for (i, v) in d.iter().enumerate() {
            writeln!(trace, "{},{v}", i + 1)?;
        }
        Ok(vec![
            ("codebook_initial.csv".into(), csv(|w| q0.write_csv(w))?),
            ("codebook_trained.csv".into(), csv(|w| out.codebook.write_csv(w))?),
            ("training_trace.csv".into(), trace),
            ("training.json".into(), json(&stats)?),
        ])
    }

    fn prune(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let q = self.read_codebook(Stage::Prune, Stage::TrainQuantizer, "codebook_trained.csv")?;
        let qc = &self.cfg.quantizer;
        let out = prune(&q, qc.prune_eps, qc.prune_trials, self.cfg.stage_seeds().prune)?;
        let stats = PruneStats {
            eps: qc.prune_eps,
            trials: qc.prune_trials,
            input_rows: q.len(),
            kept_rows: out.codebook.len(),
            kept: out.kept.clone(),
        };
        Ok(vec![
            ("codebook_pruned.csv".into(), csv(|w| out.codebook.write_csv(w))?),
            ("prune_log.csv".into(), csv(|w| out.write_log_csv(w))?),
            ("prune.json".into(), json(&stats)?),
        ])
    }

    fn solve(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let grids = self.solver_grids(Stage::Solve)?;
        let sol = solve(&grids, &self.kernels, &self.cfg.utilities, self.cfg.dp)?;
        let (x0_index, _) = grids.project_wealth(self.cfg.model.x0);
        let (prior_row, _) = grids
            .codebook
            .nearest(self.prior()?.values())
            .ok_or_else(|| Error::Invariant("codebook has no live rows".into()))?;
        let stats = SolveStats {
            horizon: self.cfg.model.horizon,
            wealth_nodes: grids.x_grid.len(),
            rows: grids.codebook.len(),
            states_per_period: grids.states_per_period(),
            v0: sol.values.get(0, x0_index, prior_row),
            x0_index,
            prior_row,
            saturation: sol.saturation,
        };
        Ok(vec![
            ("value_policy.csv".into(), csv(|w| sol.write_csv(&grids, w))?),
            ("solve.json".into(), json(&stats)?),
        ])
    }

    fn simulate(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let st = Stage::Simulate;
        let grids = self.solver_grids(st)?;
        let solved: SolveStats = self.read_json(st, Stage::Solve, "solve.json")?;
        let table = self.read_input(st, Stage::Solve, "value_policy.csv")?;
        let (_, policy) = read_solution_csv(table.as_slice(), &grids, self.cfg.model.horizon)?;
        let prior = self.prior()?;
        let (u, dp, opts) = (&self.cfg.utilities, self.cfg.dp, self.cfg.rollout_options());
        let k = &self.kernels;
        let policy = SolvedPolicy {
            policy: &policy,
            grids: &grids,
        };
        let out = rollout(&policy, &prior, k, u, dp, &opts)?;
        let x_max = *grids.x_grid.last().expect("nonempty grid");
        let summary = summarize(&out, x_max, solved.saturation)?;
        let hist = aggregate_with_bins(&out.records, self.cfg.sim.histogram_bins)?;
        let horizon = self.cfg.model.horizon;
        let frac = BENCHMARK_CONSUME_FRACTION;
        let benchmarks = Benchmarks {
            all_bank: fixed_policy_rollout(&FixedPolicy::all_bank(horizon), &prior, k, u, dp, &opts)?,
            consume_fraction: fixed_policy_rollout(
                &FixedPolicy::consume_fraction(frac, horizon)?,
                &prior,
                k,
                u,
                dp,
                &opts,
            )?,
            all_risky: fixed_policy_rollout(&FixedPolicy::all_risky(horizon), &prior, k, u, dp, &opts)?,
            consume_fraction_value: frac,
        };
        Ok(vec![
            ("rollout_records.csv".into(), csv(|w| write_records_csv(&out.records, w))?),
            ("histograms.csv".into(), csv(|w| hist.write_csv(w))?),
            ("simulation.json".into(), json(&SimulationStats { summary, benchmarks })?),
        ])
    }

    fn constant_tables(&self) -> Result<(String, Vec<u8>)> {
        let (_, m0) = self.cfg.bounds.resolve(&self.kernels);
        Ok(("constants.json".into(), json(&constant_tables(&self.cfg.bounds, m0)?)?))
    }

    fn bounds(&self) -> Result<(String, Vec<u8>)> {
        let solved: SolveStats = self.read_json(Stage::Bounds, Stage::Solve, "solve.json")?;
        let grids = self.solver_grids(Stage::Bounds)?;
        let report = evaluate_bound(
            &self.kernels,
            &grids,
            &self.cfg.utilities,
            &self.prior()?,
            &self.cfg.bounds,
        )?;
        let artifact = BoundsArtifact {
            relative_bound: report.abs_error_bound / solved.v0.abs(),
            v0: solved.v0,
            report,
        };
        Ok(("bounds.json".into(), json(&artifact)?))
    }

    fn report(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let st = Stage::Report;
        let r = RunReport {
            training: self.read_json(st, Stage::TrainQuantizer, "training.json")?,
            prune: self.read_json(st, Stage::Prune, "prune.json")?,
            solve: self.read_json(st, Stage::Solve, "solve.json")?,
            simulation: self.read_json(st, Stage::Simulate, "simulation.json")?,
            bounds: self.read_json(st, Stage::Bounds, "bounds.json")?,
        };
        let text = render_report(&r, &self.manifest.seeds);
        Ok(vec![
            ("report.json".into(), json(&r)?),
            ("report.md".into(), text.into_bytes()),
        ])
    }
}

fn csv<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn render_report(r: &RunReport, seeds: &StageSeeds) -> String {
    let s = &r.simulation.summary;
    let b = &r.simulation.benchmarks;
    let bd = &r.bounds.report;
    let q = s.terminal_wealth_quantiles;
    let mut out = String::new();
    let mut line = |l: String| {
        out.push_str(&l);
        out.push('\n');
    };
    line("# Run report".into());
    line(String::new());
    line(format!("Seeds: master {}, train {}, prune {}, simulate {}.", seeds.master, seeds.train, seeds.prune, seeds.simulate));
    line(String::new());
    line("## Quantizer".into());
    line(format!(
        "- {} rows trained for {} iterations; {} died.",
        r.training.rows,
        r.training.iterations,
        r.training.dead_rows.len()
    ));
    line(format!(
        "- Essential support half-width {:.3} -> {:.3}.",
        r.training.support_half_width_initial, r.training.support_half_width_trained
    ));
    line(format!(
        "- Mean squared sup distance {:.4e} (first tenth) -> {:.4e} (last tenth).",
        r.training.distortion_head_mean, r.training.distortion_tail_mean
    ));
    line(format!(
        "- Pruning at eps {} kept {} of {} rows.",
        r.prune.eps, r.prune.kept_rows, r.prune.input_rows
    ));
    line(String::new());
    line("## Solver".into());
    line(format!(
        "- {} states per period over {} periods; V0 = {:.6}.",
        r.solve.states_per_period, r.solve.horizon, r.solve.v0
    ));
    line(format!("- Saturated next-period wealth values: {}.", r.solve.saturation));
    line(String::new());
    line("## Simulation".into());
    line(format!("- {} paths, {} collapsed.", s.n_paths, s.collapsed_paths));
    let med: Vec<String> = s.median_consumption.iter().map(|c| format!("{c:.3}")).collect();
    line(format!("- Median consumption by period: {}.", med.join(", ")));
    line(format!(
        "- Median consumption over the first two periods: {:.4}.",
        s.median_first_two_consumption
    ));
    line(format!(
        "- Terminal wealth quantiles (5/25/50/75/95 %): {:.3} / {:.3} / {:.3} / {:.3} / {:.3}.",
        q[0], q[1], q[2], q[3], q[4]
    ));
    line(format!(
        "- Mean utility {:.4} +- {:.4}; all bank {:.4}, consume {} {:.4}, all risky {:.4}.",
        s.mean_utility.mean,
        s.mean_utility.std_err,
        b.all_bank.mean,
        b.consume_fraction_value,
        b.consume_fraction.mean,
        b.all_risky.mean
    ));
    line(String::new());
    line("## Error bound".into());
    line(format!(
        "- Squared bound {:.4e} (quantization {:.4e}, wealth gap {:.4e}, belief gap {:.4e}).",
        bd.total, bd.quantization_term, bd.wealth_gap_term, bd.density_gap_term
    ));
    line(format!(
        "- Absolute bound {:.4e}, {:.4e} relative to V0.",
        bd.abs_error_bound, r.bounds.relative_bound
    ));
    out
}

/// Runs the requested stages in pipeline order.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<Manifest> {
    let mut order: Vec<Stage> = stages.to_vec();
    order.sort();
    order.dedup();
    let mut p = Pipeline::new(cfg.clone())?;
    for s in order {
        p.run(s)?;
    }
    Ok(p.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        let o: Vec<String> = [
            "model.horizon=2",
            "grids.factor_step=0.25",
            "grids.wealth_step=2.5",
            "grids.control_fractions=3",
            "grids.return_nodes=5",
            "quantizer.means=[-1.0, 0.0, 1.0]",
            "quantizer.stds=[0.3, 0.6]",
            "quantizer.iterations=20",
            "quantizer.prune_trials=50",
            "sim.n_paths=20",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut cfg = RunConfig::from_toml_str("", &o).unwrap();
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()), Some(s));
        }
        assert_eq!(Stage::parse("all"), None);
    }

    #[test]
    fn bounds_on_fresh_directory_names_solve() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_pipeline(&tiny(dir.path()), &[Stage::Bounds]).unwrap_err();
        match e {
            Error::MissingArtifact { run_first, .. } => assert_eq!(run_first, "solve"),
            other => panic!("unexpected {other}"),
        }
        assert!(dir.path().join("constants.json").exists());
        let m = Manifest::load(dir.path()).unwrap().unwrap();
        assert!(m.files.contains_key("constants.json"));
    }

    #[test]
    fn downstream_stage_needs_upstream() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_pipeline(&tiny(dir.path()), &[Stage::Prune]).unwrap_err();
        assert!(e.to_string().contains("train-quantizer"), "{e}");
    }

    #[test]
    fn full_run_lists_every_output_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let m = run_pipeline(&cfg, &[Stage::TrainQuantizer, Stage::Prune]).unwrap();
        assert!(m.files.contains_key("codebook_pruned.csv"));
        let m = run_pipeline(&cfg, &Stage::ALL[2..]).unwrap();
        for f in [
            "codebook_initial.csv",
            "training_trace.csv",
            "prune_log.csv",
            "value_policy.csv",
            "rollout_records.csv",
            "histograms.csv",
            "simulation.json",
            "constants.json",
            "bounds.json",
            "report.json",
            "report.md",
            CONFIG_FILE,
        ] {
            assert!(m.files.contains_key(f), "{f} not listed");
        }
        assert!(m.verify(dir.path()).unwrap().is_empty());
        let on_disk = Manifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(on_disk, m);
        assert_eq!(on_disk.seeds, cfg.stage_seeds());
    }

    #[test]
    fn tampered_and_stale_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        run_pipeline(&cfg, &[Stage::TrainQuantizer, Stage::Prune]).unwrap();
        let path = dir.path().join("codebook_pruned.csv");
        let orig = std::fs::read(&path).unwrap();
        let mut bytes = orig.clone();
        bytes.extend_from_slice(b"\n");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            run_pipeline(&cfg, &[Stage::Solve]),
            Err(Error::ArtifactMismatch(_))
        ));
        std::fs::write(&path, orig).unwrap();
        let mut changed = cfg.clone();
        changed.model.alpha = 0.3;
        match run_pipeline(&changed, &[Stage::Solve]) {
            Err(Error::StaleArtifact { run_first, .. }) => assert_eq!(run_first, "train-quantizer"),
            other => panic!("unexpected {other:?}"),
        }
        let mut sim_only = cfg.clone();
        sim_only.sim.n_paths = 10;
        run_pipeline(&sim_only, &[Stage::Solve]).unwrap();
    }

    #[test]
    fn rerunning_upstream_invalidates_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        run_pipeline(&cfg, &Stage::ALL).unwrap();
        run_pipeline(&cfg, &[Stage::Solve]).unwrap();
        match run_pipeline(&cfg, &[Stage::Report]) {
            Err(Error::MissingArtifact { run_first, .. }) => assert_eq!(run_first, "simulate"),
            other => panic!("unexpected {other:?}"),
        }
        run_pipeline(&cfg, &[Stage::Simulate, Stage::Bounds, Stage::Report]).unwrap();
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run_pipeline(&tiny(a.path()), &Stage::ALL).unwrap();
        let mb = run_pipeline(&tiny(b.path()), &Stage::ALL).unwrap();
        assert_eq!(ma, mb);
    }
}
