//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use densq::bounds::{
    compute_in, compute_vn, evaluate_bound, quadrant_tail, tail_constant, BoundOptions,
};
use densq::config::RunConfig;
use densq::dp::{read_solution_csv, solve, DpOptions, StateGrids};
use densq::filter::{
    filter_step, lambda_inverse_expectation_check, normalize, FactorGrid, GriddedDensity, Kernels,
};
use densq::market::{
    ks_critical_value, ks_statistic, path_rng, standardized_returns, Drift, ModelParams,
    ShockDensity, Volatility,
};
use densq::numeric::{gauss_legendre, linspace, std_normal_cdf, std_normal_pdf, sup_distance};
use densq::pipeline::{run_pipeline, PruneStats, SimulationStats, SolveStats, Stage, TrainingStats};
use densq::quantizer::{
    build_initial_codebook, relative_l1, scalar_distortion, train_scalar_quantizer, zador_bound_1d,
    QuantizationSet, ReturnNodeSet, ZadorConstant,
};
use rand::Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{id:02}] {name}: {tag} ({detail})");
    assert!(pass, "{name}: {detail}");
}

/// Reference configuration run once through every stage.
fn reference() -> &'static (PathBuf, RunConfig) {
    static RUN: OnceLock<(PathBuf, RunConfig)> = OnceLock::new();
    RUN.get_or_init(|| run_into("reference"))
}

fn run_into(name: &str) -> (PathBuf, RunConfig) {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.clone();
    run_pipeline(&cfg, &Stage::ALL).expect("reference pipeline");
    (dir, cfg)
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(dir: &Path, file: &str) -> T {
    serde_json::from_slice(&std::fs::read(dir.join(file)).unwrap()).unwrap()
}

fn read_codebook(dir: &Path, file: &str) -> QuantizationSet {
    QuantizationSet::read_csv(std::fs::read(dir.join(file)).unwrap().as_slice()).unwrap()
}

#[test]
fn c01_volatility_endpoints() {
    let p = ModelParams::default();
    let (s0, s08) = (p.sigma(0.0), p.sigma(0.8));
    let pass = (s0 - 0.0625).abs() <= 1e-12 && (0.15..=0.16).contains(&s08);
    verdict(1, "volatility endpoints", pass, format!("sigma(0) = {s0}, sigma(0.8) = {s08:.5}"));
}

#[test]
fn c02_filter_matches_prediction_oracle() {
    let mut p = ModelParams::default();
    p.drift = Drift::Constant { value: 0.05 };
    p.volatility = Volatility::Constant { value: 0.2 };
    let grid = Arc::new(FactorGrid::uniform(-1.5, 1.5, 121).unwrap());
    let k = Kernels::new(&p, grid.clone());
    let rho = GriddedDensity::gaussian(grid.clone(), 0.1, 0.2).unwrap();
    let z = grid.points();
    // prediction integral by explicit trapezoid panels with a hand-coded kernel
    let kernel = |zi: f64, y: f64| {
        let m = y + p.alpha * (p.y_bar - y);
        (-0.5 * ((zi - m) / p.sigma_y).powi(2)).exp() / (p.sigma_y * (2.0 * PI).sqrt())
    };
    let oracle: Vec<f64> = z
        .iter()
        .map(|&zi| {
            (0..z.len() - 1)
                .map(|j| {
                    let h = z[j + 1] - z[j];
                    0.5 * h
                        * (kernel(zi, z[j]) * rho.values()[j]
                            + kernel(zi, z[j + 1]) * rho.values()[j + 1])
                })
                .sum()
        })
        .collect();
    let oracle = normalize(&GriddedDensity::new(grid.clone(), oracle).unwrap()).unwrap();
    let mut worst = 0.0_f64;
    for &r in &[-0.4, 0.0, 0.05, 0.3] {
        let out = normalize(&filter_step(&rho, r, &k).unwrap()).unwrap();
        worst = worst.max(sup_distance(out.values(), oracle.values()));
    }
    verdict(2, "filter oracle", worst <= 1e-8, format!("sup difference {worst:.2e}"));
}

#[test]
fn c03_filter_linearity() {
    let p = ModelParams::default();
    let grid = Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.05).unwrap());
    let k = Kernels::new(&p, grid.clone());
    let mut rng = path_rng(3, 0);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let mut dens = || {
            let (m, s) = (rng.random_range(-1.0..1.0), rng.random_range(0.1..0.8));
            let bump: f64 = rng.random_range(0.0..0.5);
            GriddedDensity::from_fn(grid.clone(), |z| {
                std_normal_pdf((z - m) / s) / s + bump * (1.0 + z.sin())
            })
            .unwrap()
        };
        let (a, b) = (dens(), dens());
        let (ca, cb) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let r = rng.random_range(-0.3..0.3);
        let mix: Vec<f64> =
            a.values().iter().zip(b.values()).map(|(x, y)| ca * x + cb * y).collect();
        let lhs = filter_step(&GriddedDensity::new(grid.clone(), mix).unwrap(), r, &k).unwrap();
        let (fa, fb) = (filter_step(&a, r, &k).unwrap(), filter_step(&b, r, &k).unwrap());
        let rhs: Vec<f64> =
            fa.values().iter().zip(fb.values()).map(|(x, y)| ca * x + cb * y).collect();
        worst = worst.max(sup_distance(lhs.values(), &rhs));
    }
    verdict(3, "filter linearity", worst <= 1e-12, format!("sup error {worst:.2e} over 100 pairs"));
}

#[test]
fn c04_likelihood_ratio_identity() {
    let p = ModelParams::default();
    let grid = Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.05).unwrap());
    let k = Kernels::new(&p, grid);
    let worst = linspace(-1.5, 1.5, 10)
        .into_iter()
        .map(|y| (lambda_inverse_expectation_check(&k, &p, y) - 1.0).abs())
        .fold(0.0, f64::max);
    verdict(4, "likelihood-ratio identity", worst <= 1e-3, format!("max |E - 1| = {worst:.2e}"));
}

#[test]
fn c05_reference_measure_ks() {
    let p = ModelParams::default();
    let draws = standardized_returns(&p, 1000, 11).unwrap();
    let d = ks_statistic(&draws, std_normal_cdf);
    let crit = ks_critical_value(draws.len(), 0.01);
    verdict(
        5,
        "reference-measure KS",
        draws.len() == 10_000 && d < crit,
        format!("n = {}, D = {d:.4}, critical {crit:.4}", draws.len()),
    );
}

#[test]
fn c06_quantizer_training() {
    let (dir, _) = reference();
    let stats: TrainingStats = read_json(dir, "training.json");
    let trace = std::fs::read_to_string(dir.join("training_trace.csv")).unwrap();
    let d: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let half = d.len() / 2;
    let lead = d[..half].iter().sum::<f64>() / half as f64;
    let trail = d[half..].iter().sum::<f64>() / (d.len() - half) as f64;
    let width = stats.support_half_width_trained;
    let shrinks = width < stats.support_half_width_initial && width <= 1.0;
    verdict(
        6,
        "quantizer training",
        trail <= lead && shrinks,
        format!(
            "distortion leading half {lead:.3e}, trailing half {trail:.3e}; \
             support half-width {:.2} -> {width:.2}",
            stats.support_half_width_initial
        ),
    );
}

#[test]
fn c07_pruning() {
    let (dir, cfg) = reference();
    let stats: PruneStats = read_json(dir, "prune.json");
    let trained = read_codebook(dir, "codebook_trained.csv");
    let log = std::fs::read_to_string(dir.join("prune_log.csv")).unwrap();
    let mut alive: Vec<usize> = trained
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
        .map(|(k, _)| k)
        .collect();
    let mut replay_ok = true;
    let mut removals = 0;
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (removed, survivor): (usize, usize) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        let d = relative_l1(trained.row(survivor), trained.row(removed));
        replay_ok &= alive.contains(&removed) && alive.contains(&survivor);
        replay_ok &= d < cfg.quantizer.prune_eps;
        alive.retain(|&k| k != removed);
        removals += 1;
    }
    replay_ok &= alive == stats.kept;
    let n = stats.kept_rows;
    verdict(
        7,
        "pruning",
        (15..=40).contains(&n) && replay_ok,
        format!(
            "{} -> {n} rows, {removals} logged removals, replay {}",
            stats.input_rows,
            if replay_ok { "consistent" } else { "inconsistent" }
        ),
    );
}

#[test]
fn c08_zador_inequality() {
    let mut lines = Vec::new();
    let mut pass = true;
    for k in [4usize, 8, 16] {
        let pts = train_scalar_quantizer(k, 200_000, k as u64, ShockDensity::StandardNormal);
        let mc = scalar_distortion(&pts, 1_000_000, 100 + k as u64, ShockDensity::StandardNormal);
        let bound =
            zador_bound_1d(k, &std_normal_pdf, -40.0, 40.0, ZadorConstant::Upper).unwrap();
        pass &= mc <= bound;
        lines.push(format!("K={k}: {mc:.5} <= {bound:.5}"));
    }
    verdict(8, "Zador inequality", pass, lines.join(", "));
}

#[test]
fn c09_state_count() {
    let (dir, _) = reference();
    let solved: SolveStats = read_json(dir, "solve.json");
    let pruned: PruneStats = read_json(dir, "prune.json");
    let expected = 41 * pruned.kept_rows;
    let pass = solved.wealth_nodes == 41
        && solved.rows == pruned.kept_rows
        && solved.states_per_period == expected
        && (pruned.kept_rows != 25 || expected == 1025);
    verdict(
        9,
        "state count",
        pass,
        format!("41 x {} = {} states per period", solved.rows, solved.states_per_period),
    );
}

#[test]
fn c10_value_monotone_in_wealth() {
    let (dir, cfg) = reference();
    let q = read_codebook(dir, "codebook_pruned.csv");
    let grids = cfg.state_grids(Arc::new(q)).unwrap();
    let table = std::fs::read(dir.join("value_policy.csv")).unwrap();
    let (v, _) = read_solution_csv(table.as_slice(), &grids, cfg.model.horizon).unwrap();
    let mut violations = 0;
    for t in 0..=v.horizon {
        for k in 0..v.n_rows {
            for i in 1..v.n_x {
                if v.get(t, i, k) < v.get(t, i - 1, k) {
                    violations += 1;
                }
            }
        }
    }
    verdict(10, "value monotone in wealth", violations == 0, format!("{violations} violations"));
}

#[test]
fn c11_dominance() {
    let (dir, _) = reference();
    let sim: SimulationStats = read_json(dir, "simulation.json");
    let solved: SolveStats = read_json(dir, "solve.json");
    let b = &sim.benchmarks;
    let pass = [&b.all_bank, &b.consume_fraction, &b.all_risky]
        .iter()
        .all(|e| e.mean <= solved.v0 + 3.0 * e.std_err);
    verdict(
        11,
        "dominance",
        pass,
        format!(
            "V0 {:.4}; all bank {:.4}, consume {:.4}, all risky {:.4}",
            solved.v0, b.all_bank.mean, b.consume_fraction.mean, b.all_risky.mean
        ),
    );
}

#[test]
fn c12_behavioral_reproduction() {
    let (dir, cfg) = reference();
    let sim: SimulationStats = read_json(dir, "simulation.json");
    let x0 = cfg.model.x0;
    let first_two = sim.summary.median_first_two_consumption;
    let terminal = sim.summary.terminal_wealth_quantiles[2];
    let pass = (0.4 * x0..=0.6 * x0).contains(&first_two) && terminal < 0.5;
    verdict(
        12,
        "behavioral reproduction",
        pass,
        format!(
            "median first-two consumption {first_two:.3} ({:.0}% of x0), \
             median terminal wealth {terminal:.3}",
            100.0 * first_two / x0
        ),
    );
}

#[test]
fn c13_wallis_and_tail_constants() {
    let worst = (0..=10u32)
        .map(|n| {
            let q = gauss_legendre(|t| t.cos().powi(n as i32), -PI / 2.0, PI / 2.0, 64);
            (compute_in(n) - q).abs()
        })
        .fold(0.0, f64::max);
    let vn: Vec<_> = (2..=4).map(|n| compute_vn(n, 5.0, 3.0).unwrap()).collect();
    let flagged = vn.iter().all(|v| v.sign_anomaly == (v.closed_form < 0.0));
    let shown: Vec<String> = vn
        .iter()
        .map(|v| format!("v_{} = {:.4} (anomaly {})", v.n, v.closed_form, v.sign_anomaly))
        .collect();
    verdict(
        13,
        "Wallis integrals and v_N",
        worst <= 1e-10 && flagged,
        format!("max |I_n - quadrature| {worst:.1e}; {}", shown.join(", ")),
    );
}

#[test]
fn c13_quadrant_tail_matches_sphere_formula() {
    let m0 = 3.0;
    let quad = quadrant_tail(3.0, m0).unwrap();
    let sphere = tail_constant(2, 3.0).unwrap() * m0.powf(-1.0);
    let rel = (quad - sphere).abs() / sphere;
    verdict(
        13,
        "quadrant tail vs sphere-area formula",
        rel <= 0.01,
        format!("quadrature {quad:.6}, sphere formula {sphere:.6}, relative gap {rel:.3}"),
    );
}

#[test]
fn c14_bound_holds_on_tiny_instance() {
    let mut p = ModelParams::default();
    p.horizon = 3;
    let grid = Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.05).unwrap());
    let k = Kernels::new(&p, grid.clone());
    let u = densq::market::Utilities::default();
    let dp = DpOptions::default();
    let coarse_q = build_initial_codebook(&[-0.5, 0.0, 0.5], &[0.3, 0.6], grid.clone()).unwrap();
    let fine_means = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0];
    let fine_q =
        build_initial_codebook(&fine_means, &[0.15, 0.3, 0.45, 0.6], grid.clone()).unwrap();
    let coarse = StateGrids::new(
        StateGrids::wealth_grid(10.0, 9),
        Arc::new(coarse_q.clone()),
        ReturnNodeSet::equispaced(21, -3.0, 3.0, p.eps_density).unwrap(),
        linspace(0.0, 1.0, 11),
    )
    .unwrap();
    let fine = StateGrids::new(
        StateGrids::wealth_grid(10.0, 33),
        Arc::new(fine_q.clone()),
        ReturnNodeSet::equispaced(81, -3.0, 3.0, p.eps_density).unwrap(),
        linspace(0.0, 1.0, 41),
    )
    .unwrap();
    let vc = solve(&coarse, &k, &u, dp).unwrap().values;
    let vf = solve(&fine, &k, &u, dp).unwrap().values;
    let prior = GriddedDensity::gaussian(grid, 0.1, 0.2).unwrap();
    let report = evaluate_bound(&k, &coarse, &u, &prior, &BoundOptions::default()).unwrap();
    // at grid states the wealth and belief gaps vanish
    let bound = report.quantization_term.sqrt();
    let mut worst = 0.0_f64;
    for kc in 0..coarse_q.len() {
        let kf = (0..fine_q.len())
            .find(|&j| sup_distance(fine_q.row(j), coarse_q.row(kc)) == 0.0)
            .expect("coarse row in fine codebook");
        for i in 0..9 {
            worst = worst.max((vf.get(0, 4 * i, kf) - vc.get(0, i, kc)).abs());
        }
    }
    verdict(
        14,
        "error bound on tiny instance",
        worst <= bound,
        format!(
            "max |V_fine - V_hat| {worst:.4} <= bound {bound:.4} (reference figure {}, not asserted)",
            report.reference_figure
        ),
    );
}

#[test]
fn c15_determinism() {
    let (dir, _) = reference();
    let (again, _) = run_into("rerun");
    let mut compared = 0;
    let mut differing = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if !(name.ends_with(".csv") || name.ends_with(".json")) {
            continue;
        }
        compared += 1;
        if std::fs::read(&path).unwrap() != std::fs::read(again.join(&name)).unwrap_or_default() {
            differing.push(name);
        }
    }
    verdict(
        15,
        "determinism",
        compared > 0 && differing.is_empty(),
        format!("{compared} CSV/JSON files compared, differing: {differing:?}"),
    );
}
