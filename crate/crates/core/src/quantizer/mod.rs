//! Density quantization sets: finite codebooks of grid functions onto which
//! filter densities are projected.

mod prune;
mod train;
mod zador;

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filter::{filter_step, FactorGrid, GriddedDensity, Kernels};
use crate::market::ShockDensity;
use crate::numeric::{gaussian_pdf, linspace, sup_distance};

pub use prune::{prune, relative_l1, PruneOutput, RemovalRecord};
pub use train::{
    incremental_h, propagate_with_derivative, train, DensitySource, FilterPathSource, HVariant,
    StationarySource, TrainOptions, TrainOutput, TrainingSchedule, UpdateScope,
};
pub use zador::{
    scalar_distortion, train_scalar_quantizer, zador_bound, zador_bound_1d, zador_constant,
    ZadorConstant, ZadorDomain,
};

/// Codebook of nonnegative grid functions, one row per density.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationSet {
    grid: Arc<FactorGrid>,
    rows: Vec<Vec<f64>>,
    dead: Vec<bool>,
}

impl QuantizationSet {
    pub fn new(grid: Arc<FactorGrid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (k, row) in rows.iter().enumerate() {
            if row.len() != grid.len() {
                return Err(Error::Dimension(format!(
                    "codebook row {k} has {} values, grid has {}",
                    row.len(),
                    grid.len()
                )));
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::RejectedInput(format!(
                    "codebook row {k} has negative or non-finite entries"
                )));
            }
        }
        let dead = rows.iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
        Ok(Self { grid, rows, dead })
    }

    pub fn grid(&self) -> &Arc<FactorGrid> {
        &self.grid
    }

    /// Number of rows, dead ones included.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.dead.iter().filter(|d| !**d).count()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_dead(&self, k: usize) -> bool {
        self.dead[k]
    }

    pub fn alive(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rows.len()).filter(move |&k| !self.dead[k])
    }

    pub fn density(&self, k: usize) -> GriddedDensity {
        GriddedDensity::new(self.grid.clone(), self.rows[k].clone())
            .expect("codebook rows are valid densities")
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.grid.integrate(&self.rows[k])
    }

    /// Sorted multiset of every codebook value.
    pub fn value_set(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.rows.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub(crate) fn rows_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.rows
    }

    pub(crate) fn mark_dead(&mut self, k: usize) {
        self.dead[k] = true;
    }

    /// New codebook made of the given rows, in order. Dead rows stay dead.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            rows: indices.iter().map(|&k| self.rows[k].clone()).collect(),
            dead: indices.iter().map(|&k| self.dead[k]).collect(),
        }
    }

    /// Live row nearest to `values` in the grid sup norm; ties go to the
    /// lowest index. Returns `(index, distance)`.
    pub fn nearest(&self, values: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for k in self.alive() {
            let d = sup_distance(values, &self.rows[k]);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((k, d));
            }
        }
        best
    }

    /// Live row nearest in the squared L2 norm on the grid (trapezoid).
    pub fn nearest_l2(&self, values: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for k in self.alive() {
            let d = l2_sq(&self.grid, values, &self.rows[k]);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((k, d));
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = self.grid.points().iter().map(|z| z.to_string()).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let parse = |msg: String| Error::Parse {
            file: "codebook csv".into(),
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| parse("empty file".into()))??;
        let points = parse_row(&header).map_err(parse)?;
        let grid = Arc::new(FactorGrid::new(points)?);
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(parse_row(&line).map_err(parse)?);
        }
        Self::new(grid, rows)
    }
}

fn parse_row(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

pub(crate) fn l2_sq(grid: &FactorGrid, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(grid.weights())
        .map(|((x, y), w)| (x - y).powi(2) * w)
        .sum()
}

/// Projection of `rho` onto the codebook in the grid sup norm.
pub fn project(rho: &GriddedDensity, q: &QuantizationSet) -> Result<(usize, GriddedDensity)> {
    if !rho.grid().same_as(q.grid()) {
        return Err(Error::Dimension("density and codebook live on different grids".into()));
    }
    let (k, _) = q
        .nearest(rho.values())
        .ok_or_else(|| Error::Invariant("codebook has no live rows".into()))?;
    Ok((k, q.density(k)))
}

/// The one-step density map used to generate codebook values; identical to
/// the filter recursion with `r` as the observation.
pub fn propagate_density(rho: &GriddedDensity, r: f64, k: &Kernels) -> Result<GriddedDensity> {
    filter_step(rho, r, k)
}

/// Discretized law of the log-return under the reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnNodeSet {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ReturnNodeSet {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::Dimension("return nodes and weights must match".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::RejectedInput("return nodes must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::RejectedInput("return weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::RejectedInput(format!("return weights sum to {total}")));
        }
        Ok(Self { nodes, weights })
    }

    /// `count` equispaced nodes on `[lo, hi]` weighted by the shock density
    /// times the spacing, renormalized to one.
    pub fn equispaced(count: usize, lo: f64, hi: f64, density: ShockDensity) -> Result<Self> {
        if count == 0 || (count > 1 && !(hi > lo)) {
            return Err(Error::RejectedInput(format!(
                "bad return node set: {count} nodes on [{lo}, {hi}]"
            )));
        }
        let nodes = linspace(lo, hi, count);
        let raw: Vec<f64> = nodes.iter().map(|&r| density.pdf(r)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Self::new(nodes, weights)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gaussian densities on the grid, one row per `(mean, std)` pair, means
/// varying slowest.
pub fn build_initial_codebook(
    means: &[f64],
    stds: &[f64],
    grid: Arc<FactorGrid>,
) -> Result<QuantizationSet> {
    if means.is_empty() || stds.is_empty() {
        return Err(Error::RejectedInput("need at least one mean and one std".into()));
    }
    if let Some(s) = stds.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::RejectedInput(format!("std must be positive, got {s}")));
    }
    let mut rows = Vec::with_capacity(means.len() * stds.len());
    for &m in means {
        for &s in stds {
            rows.push(grid.points().iter().map(|&z| gaussian_pdf(z, m, s)).collect());
        }
    }
    QuantizationSet::new(grid, rows)
}

/// Mean squared projection error of a sample of densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionReport {
    /// Mean squared sup-norm distance to the sup-norm projection.
    pub sup_sq: f64,
    /// Mean squared L2 (grid trapezoid) distance to the L2-nearest row.
    pub l2_sq: f64,
}

pub fn empirical_distortion(
    q: &QuantizationSet,
    samples: &[GriddedDensity],
) -> Result<DistortionReport> {
    if samples.is_empty() {
        return Err(Error::RejectedInput("no samples".into()));
    }
    let mut sup = 0.0;
    let mut l2 = 0.0;
    for s in samples {
        if !s.grid().same_as(q.grid()) {
            return Err(Error::Dimension("sample on a different grid".into()));
        }
        let (_, d) = q
            .nearest(s.values())
            .ok_or_else(|| Error::Invariant("codebook has no live rows".into()))?;
        sup += d * d;
        l2 += q.nearest_l2(s.values()).map(|(_, d)| d).unwrap_or(0.0);
    }
    let n = samples.len() as f64;
    Ok(DistortionReport {
        sup_sq: sup / n,
        l2_sq: l2 / n,
    })
}

/// Half-width of the smallest interval, symmetric about zero, outside of
/// which no live row exceeds `rel` times its own maximum.
pub fn essential_support_half_width(q: &QuantizationSet, rel: f64) -> f64 {
    let pts = q.grid().points();
    let mut half = 0.0_f64;
    for k in q.alive() {
        let row = q.row(k);
        let peak = row.iter().copied().fold(0.0, f64::max);
        for (z, v) in pts.iter().zip(row) {
            if *v > rel * peak {
                half = half.max(z.abs());
            }
        }
    }
    half
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ModelParams;
    use crate::numeric::std_normal_cdf;

    fn grid() -> Arc<FactorGrid> {
        Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.05).unwrap())
    }

    fn reference_means() -> Vec<f64> {
        (0..13).map(|i| -1.5 + 0.25 * i as f64).collect()
    }

    const REFERENCE_STDS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

    #[test]
    fn default_codebook_has_65_rows() {
        let q = build_initial_codebook(&reference_means(), &REFERENCE_STDS, grid()).unwrap();
        assert_eq!(q.len(), 65);
        assert_eq!(q.alive_count(), 65);
        assert_eq!(q.value_set().len(), 65 * 61);
    }

    #[test]
    fn single_row_is_standard_gaussian() {
        let g = grid();
        let q = build_initial_codebook(&[0.0], &[1.0], g.clone()).unwrap();
        for (z, v) in g.points().iter().zip(q.row(0)) {
            assert_eq!(*v, crate::numeric::std_normal_pdf(*z));
        }
    }

    #[test]
    fn row_mass_matches_erf_oracle() {
        let g = Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.005).unwrap());
        let q = build_initial_codebook(&[0.25], &[0.5], g).unwrap();
        let oracle = std_normal_cdf((1.5 - 0.25) / 0.5) - std_normal_cdf((-1.5 - 0.25) / 0.5);
        assert!((q.mass(0) - oracle).abs() < 1e-5);
    }

    #[test]
    fn initial_codebook_rejects_bad_input() {
        assert!(build_initial_codebook(&[], &[1.0], grid()).is_err());
        assert!(build_initial_codebook(&[0.0], &[0.0], grid()).is_err());
    }

    #[test]
    fn projection_examples() {
        let g = grid();
        let q = build_initial_codebook(&reference_means(), &REFERENCE_STDS, g.clone()).unwrap();
        let rho = q.density(3);
        let (k, row) = project(&rho, &q).unwrap();
        assert_eq!(k, 3);
        assert_eq!(row, rho);
        let again = project(&row, &q).unwrap();
        assert_eq!(again.0, k);

        let consts = QuantizationSet::new(
            g.clone(),
            (0..3).map(|c| vec![c as f64; g.len()]).collect(),
        )
        .unwrap();
        let flat = GriddedDensity::from_fn(g.clone(), |_| 1.4).unwrap();
        assert_eq!(project(&flat, &consts).unwrap().0, 1);
        // a zero row is dead and never selected
        assert!(consts.is_dead(0));
        let zero = GriddedDensity::from_fn(g, |_| 0.0).unwrap();
        assert_eq!(project(&zero, &consts).unwrap().0, 1);
    }

    #[test]
    fn projection_tie_goes_to_lowest_index() {
        let g = grid();
        let q = QuantizationSet::new(g.clone(), vec![vec![1.0; g.len()], vec![3.0; g.len()]])
            .unwrap();
        let mid = GriddedDensity::from_fn(g, |_| 2.0).unwrap();
        assert_eq!(project(&mid, &q).unwrap().0, 0);
    }

    #[test]
    fn projection_grid_mismatch() {
        let q = build_initial_codebook(&[0.0], &[1.0], grid()).unwrap();
        let other = Arc::new(FactorGrid::uniform(-1.0, 1.0, 11).unwrap());
        let rho = GriddedDensity::gaussian(other, 0.0, 1.0).unwrap();
        assert!(matches!(project(&rho, &q), Err(Error::Dimension(_))));
    }

    #[test]
    fn propagate_is_the_filter() {
        let p = ModelParams::default();
        let g = grid();
        let k = Kernels::new(&p, g.clone());
        let rho = GriddedDensity::gaussian(g, 0.1, 0.2).unwrap();
        let a = propagate_density(&rho, 0.03, &k).unwrap();
        let b = filter_step(&rho, 0.03, &k).unwrap();
        assert_eq!(a, b);
        let nodes = ReturnNodeSet::equispaced(21, -3.0, 3.0, p.eps_density).unwrap();
        let r = nodes.nodes()[12];
        let c = propagate_density(&rho, r, &k).unwrap();
        let pred = k.predict(rho.values());
        for (i, &z) in rho.grid().points().iter().enumerate() {
            let g_value = k.phi_kernel(z, r) / p.eps_density.pdf(r) * pred[i];
            assert!((c.values()[i] - g_value).abs() <= 1e-12 * g_value.max(1.0));
        }
    }

    #[test]
    fn return_nodes_weights() {
        let n = ReturnNodeSet::equispaced(21, -3.0, 3.0, ShockDensity::StandardNormal).unwrap();
        assert_eq!(n.len(), 21);
        assert!((n.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((n.nodes()[10]).abs() < 1e-15);
        assert!(ReturnNodeSet::new(vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(ReturnNodeSet::new(vec![0.0, 1.0], vec![0.4, 0.5]).is_err());
    }

    #[test]
    fn distortion_examples() {
        let g = grid();
        let q = build_initial_codebook(&[0.0, 0.5], &[0.3], g.clone()).unwrap();
        let members = vec![q.density(0), q.density(1)];
        let d = empirical_distortion(&q, &members).unwrap();
        assert_eq!(d.sup_sq, 0.0);
        assert_eq!(d.l2_sq, 0.0);

        let one = q.subset(&[0]);
        let sample = GriddedDensity::gaussian(g.clone(), 0.2, 0.4).unwrap();
        let d = empirical_distortion(&one, std::slice::from_ref(&sample)).unwrap();
        let hand = sup_distance(sample.values(), one.row(0));
        assert!((d.sup_sq - hand * hand).abs() < 1e-15);

        let mut rows = one.rows().to_vec();
        rows.push(sample.values().to_vec());
        let bigger = QuantizationSet::new(g, rows).unwrap();
        let d2 = empirical_distortion(&bigger, &[sample]).unwrap();
        assert!(d2.sup_sq <= d.sup_sq);
        assert!(empirical_distortion(&bigger, &[]).is_err());
    }

    #[test]
    fn codebook_csv_round_trip() {
        let q = build_initial_codebook(&[0.0, 0.5], &[0.3, 0.7], grid()).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let back = QuantizationSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn support_of_initial_codebook_is_the_whole_grid() {
        let q = build_initial_codebook(&reference_means(), &REFERENCE_STDS, grid()).unwrap();
        assert!((essential_support_half_width(&q, 0.01) - 1.5).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn projection_is_optimal(
            mean in -1.0f64..1.0,
            sd in 0.05f64..1.0,
            scale in 0.1f64..5.0,
        ) {
            let g = grid();
            let q = build_initial_codebook(&reference_means(), &REFERENCE_STDS, g.clone()).unwrap();
            let rho = GriddedDensity::gaussian(g, mean, sd).unwrap().scaled(scale).unwrap();
            let (_, row) = project(&rho, &q).unwrap();
            let best = sup_distance(rho.values(), row.values());
            for k in 0..q.len() {
                proptest::prop_assert!(best <= sup_distance(rho.values(), q.row(k)));
            }
        }
    }
}
