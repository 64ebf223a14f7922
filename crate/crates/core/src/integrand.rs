//! Tabulated integrands `f(xi, x)`, their expectations under discrete
//! measures, tail expectations, and the semicontinuity checks built on
//! neighbourhood limits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extreal::{lower_limit, upper_limit, ExtReal, TailStat};
use crate::report::{DiagnosticReport, Schedules, Stage, StageKind};
use crate::space::{DiscreteMeasure, MetricGrid, SpaceError};

#[derive(Debug, Error, PartialEq)]
pub enum IntegrandError {
    #[error("table has {got} values, expected {n_xi} x {n_x}")]
    Shape { n_xi: usize, n_x: usize, got: usize },
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("integrand sequence is empty")]
    Empty,
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Values `f(xi, x)` on `n_xi x n_x` grid points, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<ExtReal>>", into = "Vec<Vec<ExtReal>>")]
pub struct Integrand {
    n_xi: usize,
    n_x: usize,
    values: Vec<ExtReal>,
}

impl TryFrom<Vec<Vec<ExtReal>>> for Integrand {
    type Error = IntegrandError;
    fn try_from(rows: Vec<Vec<ExtReal>>) -> Result<Self, IntegrandError> {
        Integrand::from_rows(rows)
    }
}

impl From<Integrand> for Vec<Vec<ExtReal>> {
    fn from(f: Integrand) -> Self {
        f.values.chunks(f.n_x.max(1)).map(<[ExtReal]>::to_vec).collect()
    }
}

impl Integrand {
    pub fn new(n_xi: usize, n_x: usize, values: Vec<ExtReal>) -> Result<Self, IntegrandError> {
        if n_xi == 0 || n_x == 0 || values.len() != n_xi * n_x {
            return Err(IntegrandError::Shape { n_xi, n_x, got: values.len() });
        }
        Ok(Integrand { n_xi, n_x, values })
    }

    pub fn from_rows(rows: Vec<Vec<ExtReal>>) -> Result<Self, IntegrandError> {
        let n_xi = rows.len();
        let n_x = rows.first().map_or(0, Vec::len);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n_x {
                return Err(IntegrandError::Ragged { row, got: r.len(), expected: n_x });
            }
        }
        Self::new(n_xi, n_x, rows.into_iter().flatten().collect())
    }

    pub fn from_fn(n_xi: usize, n_x: usize, mut f: impl FnMut(usize, usize) -> ExtReal) -> Self {
        let mut values = Vec::with_capacity(n_xi * n_x);
        for i in 0..n_xi {
            for j in 0..n_x {
                values.push(f(i, j));
            }
        }
        Integrand { n_xi, n_x, values }
    }

    pub fn n_xi(&self) -> usize {
        self.n_xi
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn get(&self, xi: usize, x: usize) -> ExtReal {
        self.values[xi * self.n_x + x]
    }

    /// `x -> f(xi, x)`.
    pub fn row(&self, xi: usize) -> &[ExtReal] {
        &self.values[xi * self.n_x..(xi + 1) * self.n_x]
    }

    /// `xi -> f(xi, x)`.
    pub fn column(&self, x: usize) -> Vec<ExtReal> {
        (0..self.n_xi).map(|i| self.get(i, x)).collect()
    }

    pub fn values(&self) -> &[ExtReal] {
        &self.values
    }

    pub fn map(&self, mut g: impl FnMut(ExtReal) -> ExtReal) -> Self {
        Integrand { n_xi: self.n_xi, n_x: self.n_x, values: self.values.iter().map(|&v| g(v)).collect() }
    }

    /// Errors unless the table matches the given grids.
    pub fn check_on(&self, xi_grid: &MetricGrid, x_grid: &MetricGrid) -> Result<(), IntegrandError> {
        if self.n_xi != xi_grid.len() || self.n_x != x_grid.len() {
            return Err(IntegrandError::Shape { n_xi: xi_grid.len(), n_x: x_grid.len(), got: self.values.len() });
        }
        Ok(())
    }
}

/// Standalone tabulated integrand together with its grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedIntegrand {
    pub xi_grid: MetricGrid,
    pub x_grid: MetricGrid,
    pub values: Integrand,
}

impl TabulatedIntegrand {
    pub fn validate(&self) -> Result<(), IntegrandError> {
        self.values.check_on(&self.xi_grid, &self.x_grid)
    }
}

/// `E_p[f(., x)]` under the extended-arithmetic conventions: positive and
/// negative parts are integrated separately, and `inf - inf` resolves to
/// `+inf`. Zero-weight atoms contribute nothing.
pub fn expectation(f: &Integrand, p: &DiscreteMeasure, x: usize) -> ExtReal {
    ExtReal::integrate(p.iter().map(|(i, w)| (w, f.get(i, x))))
}

/// `x -> E_p[f(., x)]` over the whole decision grid.
pub fn expectation_fn(f: &Integrand, p: &DiscreteMeasure) -> Vec<ExtReal> {
    (0..f.n_x()).map(|x| expectation(f, p, x)).collect()
}

/// `E_p[f(., x) 1{f(., x) <= -k}]`, the mass of the lower tail beyond `-k`.
pub fn tail_expectation_below(f: &Integrand, p: &DiscreteMeasure, x: usize, k: f64) -> ExtReal {
    ExtReal::integrate(p.iter().map(|(i, w)| {
        let v = f.get(i, x);
        (w, if v <= ExtReal::of(-k) { v } else { ExtReal::ZERO })
    }))
}

/// `E_p[f(., x) 1{f(., x) >= k}]`.
pub fn tail_expectation_above(f: &Integrand, p: &DiscreteMeasure, x: usize, k: f64) -> ExtReal {
    ExtReal::integrate(p.iter().map(|(i, w)| {
        let v = f.get(i, x);
        (w, if v >= ExtReal::of(k) { v } else { ExtReal::ZERO })
    }))
}

fn clamp_tail(n: usize, t: usize) -> usize {
    t.min(n.saturating_sub(1))
}

/// Lower-limit surrogate of a nonempty sequence, with the tail start clamped
/// into range.
pub fn seq_lower(seq: &[ExtReal], tail_start: usize) -> TailStat {
    lower_limit(seq, clamp_tail(seq.len(), tail_start)).expect("nonempty sequence")
}

/// Upper-limit surrogate of a nonempty sequence.
pub fn seq_upper(seq: &[ExtReal], tail_start: usize) -> TailStat {
    upper_limit(seq, clamp_tail(seq.len(), tail_start)).expect("nonempty sequence")
}

fn radius(list: &[f64], k: usize) -> f64 {
    list[k.min(list.len() - 1)]
}

/// `nu -> min { h_nu(y) : d(y, x) <= r }`.
pub fn ball_min_sequence(grid: &MetricGrid, hs: &[Vec<ExtReal>], x: usize, r: f64) -> Vec<ExtReal> {
    let ball = grid.ball(x, r);
    hs.iter()
        .map(|h| ball.iter().map(|&y| h[y]).min().unwrap_or(ExtReal::PosInf))
        .collect()
}

/// `nu -> max { h_nu(y) : d(y, x) <= r }`.
pub fn ball_max_sequence(grid: &MetricGrid, hs: &[Vec<ExtReal>], x: usize, r: f64) -> Vec<ExtReal> {
    let ball = grid.ball(x, r);
    hs.iter()
        .map(|h| ball.iter().map(|&y| h[y]).max().unwrap_or(ExtReal::NegInf))
        .collect()
}

/// Joint lower limit of `h_nu(y)` as `nu -> inf` and `y -> x`: for each radius
/// the lower limit of the ball minima, then the largest over radii.
pub fn joint_lower_limit(
    grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    x: usize,
    eps: &[f64],
    tail_start: usize,
) -> TailStat {
    eps.iter()
        .map(|&r| seq_lower(&ball_min_sequence(grid, hs, x, r), tail_start))
        .max_by(|a, b| a.limit.cmp(&b.limit))
        .expect("nonempty radius schedule")
}

/// Joint upper limit, the mirror of [`joint_lower_limit`].
pub fn joint_upper_limit(
    grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    x: usize,
    eps: &[f64],
    tail_start: usize,
) -> TailStat {
    eps.iter()
        .map(|&r| seq_upper(&ball_max_sequence(grid, hs, x, r), tail_start))
        .min_by(|a, b| a.limit.cmp(&b.limit))
        .expect("nonempty radius schedule")
}

/// Joint lower limit of `f_nu(zeta, y)` as `nu -> inf`, `zeta -> xi`,
/// `y -> x`. The two radius lists are paired index by index.
#[allow(clippy::too_many_arguments)]
pub fn joint_lower_limit_integrand(
    xi_grid: &MetricGrid,
    x_grid: &MetricGrid,
    fs: &[Integrand],
    xi: usize,
    x: usize,
    xi_eps: &[f64],
    eps: &[f64],
    tail_start: usize,
) -> TailStat {
    let levels = xi_eps.len().max(eps.len());
    (0..levels)
        .map(|k| {
            let zb = xi_grid.ball(xi, radius(xi_eps, k));
            let yb = x_grid.ball(x, radius(eps, k));
            let seq: Vec<ExtReal> = fs
                .iter()
                .map(|f| {
                    zb.iter()
                        .flat_map(|&z| yb.iter().map(move |&y| f.get(z, y)))
                        .min()
                        .unwrap_or(ExtReal::PosInf)
                })
                .collect();
            seq_lower(&seq, tail_start)
        })
        .max_by(|a, b| a.limit.cmp(&b.limit))
        .expect("nonempty radius schedule")
}

/// Joint upper limit of `f_nu(zeta, y_nu)` as `nu -> inf`, `zeta -> xi`, along
/// a given sequence of decision points.
pub fn joint_upper_limit_along(
    xi_grid: &MetricGrid,
    fs: &[Integrand],
    xi: usize,
    path: &[usize],
    xi_eps: &[f64],
    tail_start: usize,
) -> TailStat {
    xi_eps
        .iter()
        .map(|&r| {
            let zb = xi_grid.ball(xi, r);
            let seq: Vec<ExtReal> = fs
                .iter()
                .zip(path)
                .map(|(f, &y)| zb.iter().map(|&z| f.get(z, y)).max().unwrap_or(ExtReal::NegInf))
                .collect();
            seq_upper(&seq, tail_start)
        })
        .min_by(|a, b| a.limit.cmp(&b.limit))
        .expect("nonempty radius schedule")
}

/// Lower regularization at the resolution of the smallest radius: the
/// minimum of `h` over the chain component of each point, where points at
/// most that radius apart are chained. A point isolated at that scale keeps
/// its own value. The result is below `h` and unchanged by reapplication.
pub fn lower_regularize(grid: &MetricGrid, h: &[ExtReal], eps: &[f64]) -> Vec<ExtReal> {
    let r = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let labels = grid.chain_components(r);
    let mut comp_min = vec![ExtReal::PosInf; grid.len()];
    for (i, &l) in labels.iter().enumerate() {
        comp_min[l] = comp_min[l].min(h[i]);
    }
    labels.iter().map(|&l| comp_min[l]).collect()
}

/// Lower semicontinuity at grid resolution: `h` agrees with its lower
/// regularization within `tol`.
pub fn check_lsc(grid: &MetricGrid, h: &[ExtReal], eps: &[f64], tol: f64) -> Stage {
    let reg = lower_regularize(grid, h, eps);
    let mut worst = ExtReal::PosInf;
    let mut witnesses = Vec::new();
    for (i, (&r, &v)) in reg.iter().zip(h).enumerate() {
        let gap = ExtReal::gap(r, v);
        worst = worst.min(gap);
        if !ExtReal::ge_tol(r, v, tol) {
            witnesses.push(format!("point {i}: regularized {r} below value {v}"));
        }
    }
    Stage::new("lower_semicontinuity", StageKind::Check, witnesses.is_empty())
        .with_values(ExtReal::ZERO, ExtReal::ZERO, worst)
        .with_witnesses(witnesses)
}

/// Equi-lower-semicontinuity of `zeta -> f_nu(zeta)` at each of `atoms`: for
/// every value level `e` some radius `delta` in the schedule keeps
/// `f_nu(zeta) > f_nu(xi) - e` on the open `delta`-ball for every tail index.
pub fn check_equi_lsc(
    xi_grid: &MetricGrid,
    family: &[Vec<ExtReal>],
    atoms: &[usize],
    levels: &[f64],
    sched: &Schedules,
) -> DiagnosticReport {
    let n = family.len();
    let t = sched.tail_start(n);
    let mut witnesses = Vec::new();
    for &xi in atoms {
        for &e in levels {
            let ok = sched.delta.iter().any(|&delta| {
                let ball: Vec<usize> =
                    (0..xi_grid.len()).filter(|&z| xi_grid.dist(xi, z) < delta).collect();
                family[t..].iter().all(|f| {
                    ball.iter()
                        .all(|&z| ExtReal::gap(f[z], f[xi]) > ExtReal::of(-e))
                })
            });
            if !ok {
                witnesses.push(format!("atom {xi}, level {e}: no scheduled radius works"));
            }
        }
    }
    let stage = Stage::new("equi_lower_semicontinuity", StageKind::Check, witnesses.is_empty())
        .with_witnesses(witnesses)
        .note(format!("tail start {t}"));
    DiagnosticReport::from_stages("equi_lsc", vec![stage], sched, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Below,
    Above,
}

/// `nu -> P({xi : f_nu(xi, x) <= f(xi, x) - e})` (or `>= f + e` for `Above`).
pub fn semiconvergence_in_probability(
    fs: &[Integrand],
    f: &Integrand,
    p: &DiscreteMeasure,
    x: usize,
    e: f64,
    dir: Direction,
) -> Vec<f64> {
    fs.iter()
        .map(|fnu| {
            p.iter()
                .filter(|&(i, _)| {
                    let g = ExtReal::gap(fnu.get(i, x), f.get(i, x));
                    match dir {
                        Direction::Below => g <= ExtReal::of(-e),
                        Direction::Above => g >= ExtReal::of(e),
                    }
                })
                .map(|(_, w)| w)
                .sum()
        })
        .collect()
}

/// Robust Lipschitz estimate: the 0.9-quantile of slopes between
/// nearest neighbours with finite values.
pub fn lipschitz_quantile(grid: &MetricGrid, h: &[ExtReal]) -> f64 {
    let n = grid.len();
    let mut slopes = Vec::new();
    if grid.is_sorted_line() {
        for i in 1..n {
            if let (Some(a), Some(b)) = (h[i - 1].finite(), h[i].finite()) {
                slopes.push((a - b).abs() / grid.dist(i - 1, i));
            }
        }
    } else {
        for i in 0..n {
            let dmin = (0..n).filter(|&j| j != i).map(|j| grid.dist(i, j)).fold(f64::INFINITY, f64::min);
            for j in 0..n {
                if j != i && grid.dist(i, j) <= dmin * (1.0 + 1e-9) {
                    if let (Some(a), Some(b)) = (h[i].finite(), h[j].finite()) {
                        slopes.push((a - b).abs() / grid.dist(i, j));
                    }
                }
            }
        }
    }
    if slopes.is_empty() {
        return 0.0;
    }
    slopes.sort_by(f64::total_cmp);
    let k = ((0.9 * slopes.len() as f64).ceil() as usize).clamp(1, slopes.len()) - 1;
    slopes[k]
}

/// Minorant condition for the decision point `x_bar` and radius `rho`:
/// `min(0, inf_{y near x_bar} f_nu(xi, y)) >= g_nu(xi)` for tail indices,
/// and `-inf < E_P[limsup g] <= liminf E_{P_nu}[g_nu]`.
#[allow(clippy::too_many_arguments)]
#[allow(clippy::needless_range_loop)]
pub fn check_minorant_condition(
    xi_grid: &MetricGrid,
    x_grid: &MetricGrid,
    fs: &[Integrand],
    gs: &[Vec<ExtReal>],
    ps: &[DiscreteMeasure],
    p: &DiscreteMeasure,
    x_bar: usize,
    rho: f64,
    sched: &Schedules,
) -> DiagnosticReport {
    let n = fs.len().min(gs.len()).min(ps.len());
    let t = sched.tail_start(n);
    let tol = sched.tol;
    let ball = x_grid.ball(x_bar, rho);
    let mut minorant_w = Vec::new();
    for nu in t..n {
        for xi in 0..xi_grid.len() {
            let inf = ball.iter().map(|&y| fs[nu].get(xi, y)).min().unwrap_or(ExtReal::PosInf);
            let lhs = inf.min(ExtReal::ZERO);
            if !ExtReal::ge_tol(lhs, gs[nu][xi], tol) {
                minorant_w.push(format!("index {nu}, sample point {xi}: {lhs} < {}", gs[nu][xi]));
            }
        }
    }
    let limsup_g: Vec<(f64, ExtReal)> = p
        .iter()
        .map(|(xi, w)| (w, joint_upper_limit(xi_grid, &gs[..n], xi, &sched.xi_eps, t).limit))
        .collect();
    let lhs = ExtReal::integrate(limsup_g);
    let eg: Vec<ExtReal> = (0..n)
        .map(|nu| ExtReal::integrate(ps[nu].iter().map(|(i, w)| (w, gs[nu][i]))))
        .collect();
    let rhs = seq_lower(&eg, t).limit;
    let finite = lhs > ExtReal::NegInf;
    let ineq = ExtReal::ge_tol(rhs, lhs, tol);
    let stages = vec![
        Stage::new("minorant", StageKind::Check, minorant_w.is_empty()).with_witnesses(minorant_w),
        Stage::new("minorant_finite", StageKind::Check, finite)
            .with_values(lhs, ExtReal::NegInf, ExtReal::gap(lhs, ExtReal::NegInf)),
        Stage::new("minorant_mean_bound", StageKind::Check, ineq)
            .with_values(rhs, lhs, ExtReal::gap(rhs, lhs))
            .with_witnesses(if ineq { vec![] } else { vec![format!("lower limit of means {rhs} below {lhs}")] }),
    ];
    DiagnosticReport::from_stages("minorant_condition", stages, sched, n)
}
