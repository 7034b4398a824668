//! Backward dynamic programming on the quantized state space
//! (wealth node, codebook row).

use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{normalize, GriddedDensity, Kernels};
use crate::market::{wealth_transition, ModelParams, Utilities};
use crate::numeric::linspace;
use crate::quantizer::{propagate_density, QuantizationSet, ReturnNodeSet};

/// Every discretization the solver works on.
#[derive(Debug, Clone)]
pub struct StateGrids {
    pub x_grid: Vec<f64>,
    pub codebook: Arc<QuantizationSet>,
    pub return_nodes: ReturnNodeSet,
    /// Consumption and risky-investment fractions of current wealth.
    pub control_fractions: Vec<f64>,
}

impl StateGrids {
    pub fn new(
        x_grid: Vec<f64>,
        codebook: Arc<QuantizationSet>,
        return_nodes: ReturnNodeSet,
        control_fractions: Vec<f64>,
    ) -> Result<Self> {
        if x_grid.is_empty() || x_grid.windows(2).any(|w| w[1] <= w[0]) || x_grid[0] < 0.0 {
            return Err(Error::RejectedInput(
                "wealth grid must be nonempty, increasing and nonnegative".into(),
            ));
        }
        if control_fractions.is_empty()
            || control_fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::RejectedInput("control fractions must lie in [0, 1]".into()));
        }
        if codebook.alive_count() == 0 {
            return Err(Error::RejectedInput("codebook has no live rows".into()));
        }
        Ok(Self {
            x_grid,
            codebook,
            return_nodes,
            control_fractions,
        })
    }

    /// `n` equispaced wealth nodes on `[0, x_max]`.
    pub fn wealth_grid(x_max: f64, n: usize) -> Vec<f64> {
        linspace(0.0, x_max, n)
    }

    /// Feasible `(c_frac, pi_frac)` pairs, consumption-major ascending.
    pub fn controls(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &c in &self.control_fractions {
            for &p in &self.control_fractions {
                if c + p <= 1.0 + 1e-12 {
                    out.push((c, p));
                }
            }
        }
        out
    }

    pub fn states_per_period(&self) -> usize {
        self.x_grid.len() * self.codebook.len()
    }

    /// Nearest wealth node (ties to the lower node, clamped at both ends)
    /// and whether the value fell outside the grid.
    pub fn project_wealth(&self, x: f64) -> (usize, bool) {
        let g = &self.x_grid;
        let last = g.len() - 1;
        if x <= g[0] {
            return (0, x < g[0]);
        }
        if x >= g[last] {
            return (last, x > g[last]);
        }
        let hi = g.partition_point(|&v| v < x);
        let lo = hi - 1;
        if x - g[lo] <= g[hi] - x {
            (lo, false)
        } else {
            (hi, false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpOptions {
    /// Terminal value integrates `u_T` against the unit-mass version of the
    /// belief.
    pub normalized_terminal: bool,
    /// Count consumption utility from period 1 instead of period 0.
    pub skip_initial_consumption: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            normalized_terminal: true,
            skip_initial_consumption: false,
        }
    }
}

/// `V_hat(t, x_i, k)` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub horizon: usize,
    pub n_x: usize,
    pub n_rows: usize,
    values: Vec<f64>,
}

impl ValueTable {
    fn new(horizon: usize, n_x: usize, n_rows: usize) -> Self {
        Self {
            horizon,
            n_x,
            n_rows,
            values: vec![f64::NAN; (horizon + 1) * n_x * n_rows],
        }
    }

    #[inline]
    fn idx(&self, t: usize, i: usize, k: usize) -> usize {
        (t * self.n_x + i) * self.n_rows + k
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, k: usize) -> f64 {
        self.values[self.idx(t, i, k)]
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.n_x * self.n_rows;
        &self.values[t * n..(t + 1) * n]
    }
}

/// Optimal `(c_frac, pi_frac)` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub horizon: usize,
    pub n_x: usize,
    pub n_rows: usize,
    /// Always `"min_consumption_then_min_risky"`.
    pub tie_break: String,
    controls: Vec<(f64, f64)>,
}

impl PolicyTable {
    #[inline]
    pub fn get(&self, t: usize, i: usize, k: usize) -> (f64, f64) {
        self.controls[(t * self.n_x + i) * self.n_rows + k]
    }
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub values: ValueTable,
    pub policy: PolicyTable,
    /// `(row, return node) -> projected row`.
    pub transitions: Vec<Vec<usize>>,
    /// Masses of the propagated densities, same layout as `transitions`.
    pub transition_masses: Vec<Vec<f64>>,
    /// Next-period wealth values beyond the grid under the optimal
    /// controls, counted over states and return nodes.
    pub saturation: u64,
}

impl DpSolution {
    pub fn write_csv<W: Write>(&self, grids: &StateGrids, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,codebook_index,value,c_fraction,pi_fraction")?;
        let v = &self.values;
        for t in 0..=v.horizon {
            for i in 0..v.n_x {
                for k in 0..v.n_rows {
                    let x = grids.x_grid[i];
                    let val = v.get(t, i, k);
                    if t < v.horizon {
                        let (c, p) = self.policy.get(t, i, k);
                        writeln!(w, "{t},{x},{k},{val},{c},{p}")?;
                    } else {
                        writeln!(w, "{t},{x},{k},{val},,")?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads the tables written by [`DpSolution::write_csv`] for the given grids
/// and horizon.
pub fn read_solution_csv<R: BufRead>(
    r: R,
    grids: &StateGrids,
    horizon: usize,
) -> Result<(ValueTable, PolicyTable)> {
    let n_x = grids.x_grid.len();
    let n_rows = grids.codebook.len();
    let mut values = ValueTable::new(horizon, n_x, n_rows);
    let mut policy = PolicyTable {
        horizon,
        n_x,
        n_rows,
        tie_break: "min_consumption_then_min_risky".into(),
        controls: vec![(f64::NAN, f64::NAN); horizon * n_x * n_rows],
    };
    let bad = |line: usize, msg: &str| Error::Parse {
        file: "value_policy.csv".into(),
        msg: format!("line {line}: {msg}"),
    };
    let mut seen = 0;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line != "t,x,codebook_index,value,c_fraction,pi_fraction" {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(n + 1, "expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(n + 1, &e.to_string()));
        let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(n + 1, &e.to_string()));
        let (t, k) = (idx(f[0])?, idx(f[2])?);
        let x = num(f[1])?;
        let i = grids
            .x_grid
            .iter()
            .position(|&g| g == x)
            .ok_or_else(|| bad(n + 1, "wealth is not a grid node"))?;
        if t > horizon || k >= n_rows {
            return Err(bad(n + 1, "state outside the grids"));
        }
        let at = values.idx(t, i, k);
        values.values[at] = num(f[3])?;
        if t < horizon {
            policy.controls[at] = (num(f[4])?, num(f[5])?);
        }
        seen += 1;
    }
    if seen != (horizon + 1) * n_x * n_rows {
        return Err(bad(0, "table does not cover every state"));
    }
    Ok((values, policy))
}

/// `int u_T(z, x) rho(z) dz` by the trapezoid rule on the density's grid.
pub fn terminal_value(x: f64, rho: &GriddedDensity, u: &Utilities) -> f64 {
    let g = rho.grid();
    g.points()
        .iter()
        .zip(rho.values())
        .zip(g.weights())
        .map(|((&z, &v), &w)| u.u_terminal(z, x) * v * w)
        .sum()
}

/// Transition cache: projected row and mass for every (row, node).
pub fn transition_cache(
    grids: &StateGrids,
    k: &Kernels,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<f64>>)> {
    let q = &grids.codebook;
    let rows: Vec<Result<(Vec<usize>, Vec<f64>)>> = (0..q.len())
        .into_par_iter()
        .map(|row| {
            let rho = q.density(row);
            let mut idx = Vec::with_capacity(grids.return_nodes.len());
            let mut mass = Vec::with_capacity(grids.return_nodes.len());
            for &r in grids.return_nodes.nodes() {
                let next = propagate_density(&rho, r, k)?;
                let (j, _) = q
                    .nearest(next.values())
                    .ok_or_else(|| Error::Invariant("codebook has no live rows".into()))?;
                idx.push(j);
                mass.push(next.mass());
            }
            Ok((idx, mass))
        })
        .collect();
    let mut t = Vec::with_capacity(rows.len());
    let mut m = Vec::with_capacity(rows.len());
    for r in rows {
        let (a, b) = r?;
        t.push(a);
        m.push(b);
    }
    Ok((t, m))
}

/// Everything a backup needs besides the next-period slice.
pub struct BellmanContext<'a> {
    pub grids: &'a StateGrids,
    pub params: &'a ModelParams,
    pub utilities: &'a Utilities,
    pub transitions: &'a [Vec<usize>],
    pub options: DpOptions,
}

impl BellmanContext<'_> {
    /// `u(c) + delta * sum_j w_j V_hat(t+1, Proj x', transition(k, j))`
    /// for one control, plus the number of clamped wealth values.
    pub fn operand(
        &self,
        t: usize,
        i: usize,
        k: usize,
        control: (f64, f64),
        next: &[f64],
    ) -> Result<(f64, u64)> {
        let g = self.grids;
        let n_rows = g.codebook.len();
        let x = g.x_grid[i];
        let c = control.0 * x;
        let pi = control.1 * x;
        let mut expect = 0.0;
        let mut sat = 0;
        for (j, (&r, &w)) in g
            .return_nodes
            .nodes()
            .iter()
            .zip(g.return_nodes.weights())
            .enumerate()
        {
            let x_next = wealth_transition(t, x, c, &[pi], &[r], self.params)?;
            let (ix, clamped) = g.project_wealth(x_next);
            sat += clamped as u64;
            expect += w * next[ix * n_rows + self.transitions[k][j]];
        }
        let reward = if t == 0 && self.options.skip_initial_consumption {
            0.0
        } else {
            self.utilities.u(c)
        };
        Ok((reward + self.params.delta * expect, sat))
    }

    /// Best control at `(t, i, k)`; ties keep the earlier control.
    pub fn backup(
        &self,
        t: usize,
        i: usize,
        k: usize,
        controls: &[(f64, f64)],
        next: &[f64],
    ) -> Result<(f64, (f64, f64), u64)> {
        let mut best: Option<(f64, (f64, f64), u64)> = None;
        for &ctl in controls {
            let (v, sat) = self.operand(t, i, k, ctl, next)?;
            if best.is_none_or(|(b, _, _)| v > b) {
                best = Some((v, ctl, sat));
            }
        }
        best.ok_or_else(|| Error::Invariant("no feasible control".into()))
    }
}

/// Full backward recursion from `T` down to `0`.
pub fn solve(
    grids: &StateGrids,
    k: &Kernels,
    u: &Utilities,
    options: DpOptions,
) -> Result<DpSolution> {
    let p = k.params();
    if !grids.codebook.grid().same_as(k.grid()) {
        return Err(Error::Dimension("codebook and kernels live on different grids".into()));
    }
    let horizon = p.horizon;
    let n_x = grids.x_grid.len();
    let n_rows = grids.codebook.len();
    let (transitions, transition_masses) = transition_cache(grids, k)?;
    let mut values = ValueTable::new(horizon, n_x, n_rows);
    let mut policy = PolicyTable {
        horizon,
        n_x,
        n_rows,
        tie_break: "min_consumption_then_min_risky".into(),
        controls: vec![(0.0, 0.0); horizon * n_x * n_rows],
    };

    let densities: Vec<GriddedDensity> = (0..n_rows)
        .map(|row| {
            let d = grids.codebook.density(row);
            if options.normalized_terminal {
                normalize(&d).unwrap_or(d)
            } else {
                d
            }
        })
        .collect();
    for i in 0..n_x {
        for (row, d) in densities.iter().enumerate() {
            let v = terminal_value(grids.x_grid[i], d, u);
            if !v.is_finite() {
                return Err(Error::NumericalFailure {
                    t: horizon,
                    x: i,
                    k: row,
                    what: format!("terminal value {v}"),
                });
            }
            let idx = values.idx(horizon, i, row);
            values.values[idx] = v;
        }
    }

    let ctx = BellmanContext {
        grids,
        params: p,
        utilities: u,
        transitions: &transitions,
        options,
    };
    let controls = grids.controls();
    let mut saturation = 0;
    for t in (0..horizon).rev() {
        let next = values.slice(t + 1).to_vec();
        let out: Vec<Result<(f64, (f64, f64), u64)>> = (0..n_x * n_rows)
            .into_par_iter()
            .map(|s| ctx.backup(t, s / n_rows, s % n_rows, &controls, &next))
            .collect();
        for (s, r) in out.into_iter().enumerate() {
            let (v, ctl, sat) = r?;
            let (i, row) = (s / n_rows, s % n_rows);
            if !v.is_finite() {
                return Err(Error::NumericalFailure {
                    t,
                    x: i,
                    k: row,
                    what: format!("value {v}"),
                });
            }
            let idx = values.idx(t, i, row);
            values.values[idx] = v;
            policy.controls[idx] = ctl;
            saturation += sat;
        }
    }
    Ok(DpSolution {
        values,
        policy,
        transitions,
        transition_masses,
        saturation,
    })
}

/// Control for an arbitrary state: project `(x, rho)` and scale the stored
/// fractions by the actual wealth. Returns `(c, pi, row)`.
pub fn evaluate_policy_step(
    t: usize,
    x: f64,
    rho: &GriddedDensity,
    policy: &PolicyTable,
    grids: &StateGrids,
) -> Result<(f64, f64, usize)> {
    let (i, _) = grids.project_wealth(x);
    let (k, _) = grids
        .codebook
        .nearest(rho.values())
        .ok_or_else(|| Error::Invariant("codebook has no live rows".into()))?;
    let (cf, pf) = policy.get(t, i, k);
    let x = x.max(0.0);
    Ok((cf * x, pf * x, k))
}
