use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::QuantizationSet;
use crate::error::{Error, Result};
use crate::market::path_rng;

/// One removal: `removed` was within `relative_distance` of `survivor`.
/// Indices refer to the input codebook.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub trial: usize,
    pub removed: usize,
    pub survivor: usize,
    pub relative_distance: f64,
}

#[derive(Debug, Clone)]
pub struct PruneOutput {
    pub codebook: QuantizationSet,
    /// Input indices of the surviving rows, in order.
    pub kept: Vec<usize>,
    pub log: Vec<RemovalRecord>,
}

impl PruneOutput {
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "trial,removed,survivor,relative_distance")?;
        for r in &self.log {
            writeln!(w, "{},{},{},{}", r.trial, r.removed, r.survivor, r.relative_distance)?;
        }
        Ok(())
    }
}

/// `sum |a - b| / sum |a|`; infinite when `a` is zero.
pub fn relative_l1(a: &[f64], b: &[f64]) -> f64 {
    let den: f64 = a.iter().map(|v| v.abs()).sum();
    if den == 0.0 {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / den
}

/// Randomized duplicate removal: each trial draws an ordered pair of
/// surviving rows `(q1, q2)` and drops `q2` when it is within relative L1
/// distance `eps` of `q1`. Dead rows are discarded up front.
pub fn prune(q: &QuantizationSet, eps: f64, trials: usize, seed: u64) -> Result<PruneOutput> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParams(format!("eps must be >= 0, got {eps}")));
    }
    let mut survivors: Vec<usize> = q.alive().collect();
    let mut log = Vec::new();
    let mut rng = path_rng(seed, 0);
    for trial in 0..trials {
        let n = survivors.len();
        if n < 2 {
            break;
        }
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (survivors[i], survivors[j]);
        let d = relative_l1(q.row(a), q.row(b));
        if d < eps {
            survivors.remove(j);
            log.push(RemovalRecord {
                trial,
                removed: b,
                survivor: a,
                relative_distance: d,
            });
        }
    }
    if survivors.is_empty() {
        return Err(Error::PruningExhausted { eps });
    }
    Ok(PruneOutput {
        codebook: q.subset(&survivors),
        kept: survivors,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FactorGrid;
    use crate::quantizer::build_initial_codebook;
    use std::sync::Arc;

    fn grid() -> Arc<FactorGrid> {
        Arc::new(FactorGrid::with_step(-1.5, 1.5, 0.05).unwrap())
    }

    /// Replays the log and checks each removal against the rows alive then.
    fn replay(q: &QuantizationSet, out: &PruneOutput, eps: f64) -> bool {
        let mut alive: Vec<usize> = q.alive().collect();
        for r in &out.log {
            if !alive.contains(&r.survivor) || !alive.contains(&r.removed) {
                return false;
            }
            if !(relative_l1(q.row(r.survivor), q.row(r.removed)) < eps) {
                return false;
            }
            alive.retain(|&k| k != r.removed);
        }
        alive == out.kept
    }

    #[test]
    fn duplicates_collapse_to_one_each() {
        let base = build_initial_codebook(&[-0.5, 0.5], &[0.3], grid()).unwrap();
        let q = base.subset(&[0, 1, 0, 1, 0, 1, 0]);
        let out = prune(&q, 0.1, 2000, 4).unwrap();
        assert_eq!(out.codebook.len(), 2);
        assert!(replay(&q, &out, 0.1));
    }

    #[test]
    fn zero_eps_removes_nothing() {
        let base = build_initial_codebook(&[0.0], &[0.3], grid()).unwrap();
        let q = base.subset(&[0, 0, 0]);
        let out = prune(&q, 0.0, 500, 1).unwrap();
        assert_eq!(out.codebook.len(), 3);
        assert!(out.log.is_empty());
    }

    #[test]
    fn deterministic_in_seed() {
        let means: Vec<f64> = (0..13).map(|i| -1.5 + 0.25 * i as f64).collect();
        let q = build_initial_codebook(&means, &[0.1, 0.3, 0.5, 0.7, 0.9], grid()).unwrap();
        let a = prune(&q, 0.5, 5000, 9).unwrap();
        let b = prune(&q, 0.5, 5000, 9).unwrap();
        assert_eq!(a.kept, b.kept);
        assert_eq!(a.log, b.log);
        assert!(replay(&q, &a, 0.5));
    }

    #[test]
    fn log_csv_has_header() {
        let base = build_initial_codebook(&[0.0], &[0.3], grid()).unwrap();
        let out = prune(&base.subset(&[0, 0]), 0.1, 10, 0).unwrap();
        let mut buf = Vec::new();
        out.write_log_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("trial,removed,survivor,relative_distance\n"));
        assert_eq!(text.lines().count(), 2);
    }

    proptest::proptest! {
        #[test]
        fn removals_replay(
            means in proptest::collection::vec(-1.0f64..1.0, 2..12),
            eps in 0.0f64..1.5,
            seed in 0u64..100,
        ) {
            let q = build_initial_codebook(&means, &[0.3, 0.35], grid()).unwrap();
            let out = prune(&q, eps, 300, seed).unwrap();
            proptest::prop_assert!(replay(&q, &out, eps));
            proptest::prop_assert!(!out.kept.is_empty());
        }
    }
}
