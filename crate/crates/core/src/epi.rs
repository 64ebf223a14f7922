//! Approximation schemes and the checks that expectation functions converge
//! in the epigraphical sense: lower bounds by two routes (envelopes, and weak
//! convergence with uniform integrability), recovery sequences, and the
//! Attouch-Wets distance between epigraphs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{pasch_hausdorff, EnvelopeError};
use crate::extreal::{vanishes, ExtReal};
use crate::integrand::{
    check_lsc, expectation, expectation_fn, joint_lower_limit, joint_lower_limit_integrand,
    joint_upper_limit_along, lipschitz_quantile, seq_lower, seq_upper, tail_expectation_above,
    tail_expectation_below, Integrand, IntegrandError,
};
use crate::report::{default_tol, DiagnosticReport, Schedules, Stage, StageKind};
use crate::space::{bounded_lipschitz_distance, dist_to_set, DiscreteMeasure, MetricGrid, SpaceError};

/// Threshold for the weak-convergence and uniform-integrability gates, which
/// concern quantities that must tend to zero rather than match a value.
pub const GATE_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EpiError {
    #[error("scheme has no approximating terms")]
    Empty,
    #[error("{integrands} integrands but {measures} measures")]
    Length { integrands: usize, measures: usize },
    #[error("function sequence has inconsistent lengths")]
    Shape,
    #[error("invalid schedules: {0}")]
    Schedule(String),
    #[error("point {0} is outside the decision grid")]
    Point(usize),
    #[error(transparent)]
    Integrand(#[from] IntegrandError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// A limit problem `(f, P)` and its approximations `(f_nu, P_nu)` on shared
/// grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximationScheme {
    pub xi_grid: MetricGrid,
    pub x_grid: MetricGrid,
    pub limit: Integrand,
    pub integrands: Vec<Integrand>,
    pub limit_measure: DiscreteMeasure,
    pub measures: Vec<DiscreteMeasure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedules: Option<Schedules>,
}

fn finite_spacing(g: &MetricGrid) -> f64 {
    let s = g.spacing();
    if s.is_finite() { s } else { 1.0 }
}

impl ApproximationScheme {
    pub fn validate(&self) -> Result<(), EpiError> {
        if self.integrands.is_empty() {
            return Err(EpiError::Empty);
        }
        if self.integrands.len() != self.measures.len() {
            return Err(EpiError::Length { integrands: self.integrands.len(), measures: self.measures.len() });
        }
        self.limit.check_on(&self.xi_grid, &self.x_grid)?;
        for f in &self.integrands {
            f.check_on(&self.xi_grid, &self.x_grid)?;
        }
        self.limit_measure.check_on(self.xi_grid.len())?;
        for m in &self.measures {
            m.check_on(self.xi_grid.len())?;
        }
        if let Some(s) = &self.schedules {
            s.validate().map_err(EpiError::Schedule)?;
        }
        Ok(())
    }

    pub fn n_terms(&self) -> usize {
        self.integrands.len()
    }

    /// Largest finite `|f|` over the limit measure's atoms, at least 1.
    pub fn data_scale(&self) -> f64 {
        let mut s: f64 = 1.0;
        for xi in self.limit_measure.atoms() {
            for v in self.limit.row(xi) {
                if let Some(a) = v.finite() {
                    s = s.max(a.abs());
                }
            }
        }
        s
    }

    /// Explicit schedules if present, otherwise defaults scaled to the grids
    /// and the limit expectation.
    pub fn schedules(&self) -> Schedules {
        if let Some(s) = &self.schedules {
            return s.clone();
        }
        let dx = finite_spacing(&self.x_grid);
        let lip = lipschitz_quantile(&self.x_grid, &self.limit_expectation());
        Schedules::defaults(dx, finite_spacing(&self.xi_grid), self.data_scale(), self.n_terms(), default_tol(dx, lip))
    }

    /// `nu -> (x -> E_{P_nu}[f_nu(., x)])`.
    pub fn expectation_seq(&self) -> Vec<Vec<ExtReal>> {
        self.integrands
            .par_iter()
            .zip(self.measures.par_iter())
            .map(|(f, p)| expectation_fn(f, p))
            .collect()
    }

    /// `x -> E_P[f(., x)]`.
    pub fn limit_expectation(&self) -> Vec<ExtReal> {
        expectation_fn(&self.limit, &self.limit_measure)
    }

    fn points_or_all(&self, points: Option<&[usize]>) -> Result<Vec<usize>, EpiError> {
        match points {
            None => Ok((0..self.x_grid.len()).collect()),
            Some(p) => {
                if let Some(&bad) = p.iter().find(|&&x| x >= self.x_grid.len()) {
                    return Err(EpiError::Point(bad));
                }
                Ok(p.to_vec())
            }
        }
    }
}

/// True when a nonnegative error sequence is within `tol` over the whole
/// tail, or provably heading to zero.
pub fn tends_to_zero(e: &[f64], tail_start: usize, tol: f64) -> bool {
    let t = tail_start.min(e.len().saturating_sub(1));
    if e[t..].iter().all(|v| *v <= tol) {
        return true;
    }
    e.iter().all(|v| v.is_finite()) && vanishes(e, tol).vanishes
}

fn worst_margin(m: &[ExtReal]) -> ExtReal {
    m.iter().copied().min().unwrap_or(ExtReal::PosInf)
}

fn check_seq_shape(hs: &[Vec<ExtReal>], n: usize) -> Result<(), EpiError> {
    if hs.is_empty() {
        return Err(EpiError::Empty);
    }
    if hs.iter().any(|h| h.len() != n) {
        return Err(EpiError::Shape);
    }
    Ok(())
}

/// The two halves of epi-convergence of `h_nu` to `h` on a grid:
/// the joint lower limit at every point is at least `h`, and a recovery
/// sequence inside the recovery radius reaches `h`.
fn epi_stages(grid: &MetricGrid, hs: &[Vec<ExtReal>], h: &[ExtReal], sched: &Schedules, kind: StageKind) -> Vec<Stage> {
    let n = hs.len();
    let t = sched.tail_start(n);
    let tol = sched.tol;
    let radius = sched.recovery_radius();
    let per_point: Vec<(ExtReal, Option<String>, Option<String>)> = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let ll = joint_lower_limit(grid, hs, x, &sched.eps, t);
            let margin = ExtReal::gap(ll.limit, h[x]);
            let lw = (!ExtReal::ge_tol(ll.limit, h[x], tol))
                .then(|| format!("point {x}: lower limit {} below {} (trend {:?})", ll.limit, h[x], ll.trend));
            let rw = recovery_failure(grid, hs, h, x, radius, t, tol);
            (margin, lw, rw)
        })
        .collect();
    let margins: Vec<ExtReal> = per_point.iter().map(|p| p.0).collect();
    let lw: Vec<String> = per_point.iter().filter_map(|p| p.1.clone()).collect();
    let rw: Vec<String> = per_point.iter().filter_map(|p| p.2.clone()).collect();
    vec![
        Stage::new("liminf_inequality", kind, lw.is_empty())
            .with_values(ExtReal::ZERO, ExtReal::ZERO, worst_margin(&margins))
            .with_witnesses(lw),
        Stage::new("recovery_sequence", kind, rw.is_empty())
            .with_witnesses(rw)
            .note(format!("recovery radius {radius}")),
    ]
}

fn recovery_failure(
    grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    h: &[ExtReal],
    x: usize,
    radius: f64,
    t: usize,
    tol: f64,
) -> Option<String> {
    let target = h[x];
    if target.is_pos_inf() {
        return None;
    }
    let ball = grid.ball(x, radius);
    if target.is_neg_inf() {
        let mins: Vec<ExtReal> = hs.iter().map(|hn| ball.iter().map(|&y| hn[y]).min().unwrap()).collect();
        let up = seq_upper(&mins, t);
        return (!up.limit.is_neg_inf()).then(|| format!("point {x}: values stay at {} instead of -inf", up.limit));
    }
    let errs: Vec<f64> = hs
        .iter()
        .map(|hn| ball.iter().map(|&y| ExtReal::abs_diff(hn[y], target)).fold(f64::INFINITY, f64::min))
        .collect();
    (!tends_to_zero(&errs, t, tol)).then(|| {
        format!("point {x}: best error over the tail {}", errs[t.min(errs.len() - 1)..].iter().copied().fold(0.0, f64::max))
    })
}

/// Epi-convergence of a sequence of grid functions to `h`.
pub fn check_epi_convergence(
    grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    h: &[ExtReal],
    sched: &Schedules,
) -> Result<DiagnosticReport, EpiError> {
    check_seq_shape(hs, grid.len())?;
    if h.len() != grid.len() {
        return Err(EpiError::Shape);
    }
    sched.validate().map_err(EpiError::Schedule)?;
    let stages = epi_stages(grid, hs, h, sched, StageKind::Check);
    Ok(DiagnosticReport::from_stages("epi_convergence", stages, sched, hs.len()))
}

/// Minimizers and minimum values of `h_nu` over the tail track those of `h`:
/// each tail argmin lies within one grid spacing of the limit's argmin set
/// (values within `tol` of the minimum), and the final minimum is within `tol`.
pub fn minimizer_transfer(grid: &MetricGrid, hs: &[Vec<ExtReal>], h: &[ExtReal], sched: &Schedules) -> Stage {
    let n = hs.len();
    let t = sched.tail_start(n);
    let tol = sched.tol;
    let min_h = h.iter().copied().min().unwrap();
    let argset: Vec<usize> = (0..h.len()).filter(|&i| ExtReal::ge_tol(min_h, h[i], tol)).collect();
    let reach = finite_spacing(grid) * (1.0 + 1e-9);
    let mut witnesses = Vec::new();
    for (nu, hn) in hs.iter().enumerate().skip(t) {
        let (m, at) = argmin(hn);
        if dist_to_set(grid, at, &argset) > reach {
            witnesses.push(format!("index {nu}: minimizer {at} (value {m}) far from the limit minimizers"));
        }
    }
    let (last_min, _) = argmin(&hs[n - 1]);
    let ok_val = ExtReal::approx_eq(last_min, min_h, tol);
    if !ok_val {
        witnesses.push(format!("final minimum {last_min} vs limit minimum {min_h}"));
    }
    Stage::new("minimizer_transfer", StageKind::Check, witnesses.is_empty())
        .with_values(last_min, min_h, ExtReal::gap(last_min, min_h))
        .with_witnesses(witnesses)
        .note(format!("limit argmin set has {} points", argset.len()))
}

/// First minimizer and minimum value of a grid function.
pub fn argmin(h: &[ExtReal]) -> (ExtReal, usize) {
    let mut best = (h[0], 0);
    for (i, &v) in h.iter().enumerate().skip(1) {
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

fn lower_bound_stage(
    scheme: &ApproximationScheme,
    es: &[Vec<ExtReal>],
    e: &[ExtReal],
    points: &[usize],
    sched: &Schedules,
) -> Stage {
    let t = sched.tail_start(es.len());
    let rows: Vec<(ExtReal, Option<String>)> = points
        .par_iter()
        .map(|&x| {
            let ll = joint_lower_limit(&scheme.x_grid, es, x, &sched.eps, t);
            let ok = ExtReal::ge_tol(ll.limit, e[x], sched.tol);
            (
                ExtReal::gap(ll.limit, e[x]),
                (!ok).then(|| format!("point {x}: lower limit {} below {} (trend {:?})", ll.limit, e[x], ll.trend)),
            )
        })
        .collect();
    let margins: Vec<ExtReal> = rows.iter().map(|r| r.0).collect();
    let w: Vec<String> = rows.into_iter().filter_map(|r| r.1).collect();
    Stage::new("expectation_lower_bound", StageKind::Conclusion, w.is_empty())
        .with_values(ExtReal::ZERO, ExtReal::ZERO, worst_margin(&margins))
        .with_witnesses(w)
}

fn finiteness_stage(scheme: &ApproximationScheme, es: &[Vec<ExtReal>], e: &[ExtReal], sched: &Schedules) -> Stage {
    let t = sched.tail_start(es.len());
    let anchor = (0..scheme.x_grid.len())
        .find(|&x| joint_lower_limit(&scheme.x_grid, es, x, &sched.eps, t).limit < ExtReal::PosInf);
    match anchor {
        None => Stage::new("limit_expectation_proper", StageKind::Conclusion, true)
            .note("no witness found: no grid point has a finite joint lower limit"),
        Some(x0) => {
            let bad: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_neg_inf())
                .map(|(x, _)| format!("point {x}: limit expectation is -inf"))
                .collect();
            Stage::new("limit_expectation_proper", StageKind::Conclusion, bad.is_empty())
                .with_witnesses(bad)
                .note(format!("finite joint lower limit at point {x0}"))
        }
    }
}

/// `x -> E_p[f_k(., x)]`, computing envelopes only for rows in the support.
pub fn envelope_expectation(x_grid: &MetricGrid, f: &Integrand, p: &DiscreteMeasure, kappa: f64) -> Result<Vec<ExtReal>, EpiError> {
    let rows: Vec<(f64, Vec<ExtReal>)> = p
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(i, w)| pasch_hausdorff(x_grid, f.row(i), kappa).map(|r| (w, r.values)))
        .collect::<Result<_, _>>()?;
    Ok((0..f.n_x())
        .map(|x| ExtReal::integrate(rows.iter().map(|(w, v)| (*w, v[x]))))
        .collect())
}

fn envelope_route_stages(
    scheme: &ApproximationScheme,
    subset: &[usize],
    sched: &Schedules,
) -> Result<Vec<Stage>, EpiError> {
    let n = scheme.n_terms();
    let t = sched.tail_start(n);
    let tol = sched.tol;
    let mut witnesses = Vec::new();
    let mut margins = Vec::new();
    for &k in &sched.kappa {
        let limit_k = envelope_expectation(&scheme.x_grid, &scheme.limit, &scheme.limit_measure, k)?;
        let seq_k: Vec<Vec<ExtReal>> = scheme
            .integrands
            .par_iter()
            .zip(scheme.measures.par_iter())
            .map(|(f, p)| envelope_expectation(&scheme.x_grid, f, p, k))
            .collect::<Result<_, _>>()?;
        for &x0 in subset {
            let seq: Vec<ExtReal> = seq_k.iter().map(|v| v[x0]).collect();
            let ll = seq_lower(&seq, t).limit;
            margins.push(ExtReal::gap(ll, limit_k[x0]));
            if limit_k[x0].is_neg_inf() {
                witnesses.push(format!("modulus {k}, point {x0}: limit envelope expectation is -inf"));
            } else if !ExtReal::ge_tol(ll, limit_k[x0], tol) {
                witnesses.push(format!("modulus {k}, point {x0}: lower limit {ll} below {}", limit_k[x0]));
            }
        }
    }
    let env = Stage::new("envelope_lower_bound", StageKind::Hypothesis, witnesses.is_empty())
        .with_values(ExtReal::ZERO, ExtReal::ZERO, worst_margin(&margins))
        .with_witnesses(witnesses)
        .note(format!("{} points, {} moduli", subset.len(), sched.kappa.len()));
    let mut lsc_w = Vec::new();
    for xi in scheme.limit_measure.atoms() {
        let s = check_lsc(&scheme.x_grid, scheme.limit.row(xi), &sched.eps, tol);
        lsc_w.extend(s.witnesses.into_iter().map(|w| format!("sample point {xi}, {w}")));
    }
    let lsc = Stage::new("limit_integrand_lsc", StageKind::Hypothesis, lsc_w.is_empty()).with_witnesses(lsc_w);
    Ok(vec![env, lsc])
}

/// Lower bound `liminf E_{P_nu}[f_nu(., x_nu)] >= E_P[f(., x)]` via envelope
/// expectations on a dense subset of decision points.
pub fn parametric_fatou_envelope_route(
    scheme: &ApproximationScheme,
    dense_subset: Option<&[usize]>,
) -> Result<DiagnosticReport, EpiError> {
    scheme.validate()?;
    let sched = scheme.schedules();
    sched.validate().map_err(EpiError::Schedule)?;
    let subset = scheme.points_or_all(dense_subset)?;
    let es = scheme.expectation_seq();
    let e = scheme.limit_expectation();
    let mut stages = envelope_route_stages(scheme, &subset, &sched)?;
    let all: Vec<usize> = (0..scheme.x_grid.len()).collect();
    stages.push(lower_bound_stage(scheme, &es, &e, &all, &sched));
    stages.push(finiteness_stage(scheme, &es, &e, &sched));
    Ok(DiagnosticReport::from_stages("fatou_envelope_route", stages, &sched, scheme.n_terms()))
}

/// Epi-convergence of expectation functions via the envelope route plus an
/// upper bound on a dense subset.
pub fn epi_convergence_expectations(
    scheme: &ApproximationScheme,
    dense_subset: Option<&[usize]>,
) -> Result<DiagnosticReport, EpiError> {
    scheme.validate()?;
    let sched = scheme.schedules();
    sched.validate().map_err(EpiError::Schedule)?;
    let subset = scheme.points_or_all(dense_subset)?;
    let es = scheme.expectation_seq();
    let e = scheme.limit_expectation();
    let t = sched.tail_start(es.len());
    let mut stages = envelope_route_stages(scheme, &subset, &sched)?;
    let mut w = Vec::new();
    for &x0 in &subset {
        let seq: Vec<ExtReal> = es.iter().map(|v| v[x0]).collect();
        let ul = seq_upper(&seq, t).limit;
        if !ExtReal::ge_tol(e[x0], ul, sched.tol) {
            w.push(format!("point {x0}: upper limit {ul} above {}", e[x0]));
        }
    }
    stages.push(Stage::new("upper_bound_on_dense_subset", StageKind::Hypothesis, w.is_empty()).with_witnesses(w));
    stages.extend(epi_stages(&scheme.x_grid, &es, &e, &sched, StageKind::Conclusion));
    Ok(DiagnosticReport::from_stages("epi_convergence_envelope_route", stages, &sched, scheme.n_terms()))
}

fn weak_convergence_stage(
    xi_grid: &MetricGrid,
    ps: &[DiscreteMeasure],
    p: &DiscreteMeasure,
    t: usize,
) -> Result<Stage, EpiError> {
    let d: Vec<f64> = ps
        .par_iter()
        .map(|q| bounded_lipschitz_distance(xi_grid, q, p))
        .collect::<Result<_, _>>()?;
    let v = vanishes(&d, GATE_TOL);
    let last = d.last().copied().unwrap_or(0.0);
    Ok(Stage::new("weak_convergence", StageKind::Hypothesis, tends_to_zero(&d, t, GATE_TOL))
        .with_values(ExtReal::of(last), ExtReal::ZERO, ExtReal::of(-last))
        .note(format!(
            "bounded-Lipschitz distances: first {:.3e}, last {last:.3e}, extrapolated {:?}",
            d.first().copied().unwrap_or(0.0),
            v.extrapolated
        )))
}

/// Lower-tail gate: with `a_nu(K)` the tail expectation below `-K`, the
/// lower limit at the largest scheduled `K` must be at least `-GATE_TOL`.
fn tail_gate(per_k: &[Vec<ExtReal>], t: usize, upper: bool) -> (bool, Vec<ExtReal>) {
    let lims: Vec<ExtReal> = per_k
        .iter()
        .map(|seq| if upper { seq_upper(seq, t).limit } else { seq_lower(seq, t).limit })
        .collect();
    let last = *lims.last().unwrap();
    let ok = if upper { ExtReal::ge_tol(ExtReal::ZERO, last, GATE_TOL) } else { ExtReal::ge_tol(last, ExtReal::ZERO, GATE_TOL) };
    (ok, lims)
}

fn fmt_trace(v: &[ExtReal]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn weak_route_stages(
    scheme: &ApproximationScheme,
    points: &[usize],
    sched: &Schedules,
    es: &[Vec<ExtReal>],
    e: &[ExtReal],
) -> Result<Vec<Stage>, EpiError> {
    let n = scheme.n_terms();
    let t = sched.tail_start(n);
    let mut stages = vec![weak_convergence_stage(&scheme.xi_grid, &scheme.measures, &scheme.limit_measure, t)?];

    let ui: Vec<Option<String>> = points
        .par_iter()
        .map(|&x| {
            let ball = scheme.x_grid.ball(x, crate::report::min_of(&sched.eps));
            let per_k: Vec<Vec<ExtReal>> = sched
                .k_levels
                .iter()
                .map(|&k| {
                    scheme
                        .integrands
                        .iter()
                        .zip(&scheme.measures)
                        .map(|(f, p)| ball.iter().map(|&y| tail_expectation_below(f, p, y, k)).min().unwrap())
                        .collect()
                })
                .collect();
            let (ok, lims) = tail_gate(&per_k, t, false);
            (!ok).then(|| format!("point {x}: tail lower limits by level [{}]", fmt_trace(&lims)))
        })
        .collect();
    let ui_w: Vec<String> = ui.into_iter().flatten().collect();
    stages.push(
        Stage::new("uniform_integrability_below", StageKind::Hypothesis, ui_w.is_empty())
            .with_witnesses(ui_w)
            .note(format!("levels {:?}", sched.k_levels)),
    );

    let atoms = scheme.limit_measure.atoms();
    let jl: Vec<Vec<String>> = points
        .par_iter()
        .map(|&x| {
            atoms
                .iter()
                .filter_map(|&xi| {
                    let ll = joint_lower_limit_integrand(
                        &scheme.xi_grid,
                        &scheme.x_grid,
                        &scheme.integrands,
                        xi,
                        x,
                        &sched.xi_eps,
                        &sched.eps,
                        t,
                    );
                    let v = scheme.limit.get(xi, x);
                    (!ExtReal::ge_tol(ll.limit, v, sched.tol))
                        .then(|| format!("sample point {xi}, point {x}: joint lower limit {} below {v}", ll.limit))
                })
                .collect()
        })
        .collect();
    let jl_w: Vec<String> = jl.into_iter().flatten().collect();
    stages.push(Stage::new("joint_lsc_at_atoms", StageKind::Hypothesis, jl_w.is_empty()).with_witnesses(jl_w));
    stages.push(lower_bound_stage(scheme, es, e, points, sched));
    Ok(stages)
}

/// Lower bound on expectations from weak convergence of the measures,
/// uniform integrability of the lower tails, and a joint lower
/// semicontinuity condition at the atoms of the limit measure.
pub fn fatou_weak(scheme: &ApproximationScheme, points: Option<&[usize]>) -> Result<DiagnosticReport, EpiError> {
    scheme.validate()?;
    let sched = scheme.schedules();
    sched.validate().map_err(EpiError::Schedule)?;
    let points = scheme.points_or_all(points)?;
    let es = scheme.expectation_seq();
    let e = scheme.limit_expectation();
    let stages = weak_route_stages(scheme, &points, &sched, &es, &e)?;
    Ok(DiagnosticReport::from_stages("fatou_weak", stages, &sched, scheme.n_terms()))
}

fn measure_expectation(h: &[ExtReal], p: &DiscreteMeasure) -> ExtReal {
    ExtReal::integrate(p.iter().map(|(i, w)| (w, h[i])))
}

fn scalar_tail(h: &[ExtReal], p: &DiscreteMeasure, k: f64, upper: bool) -> ExtReal {
    ExtReal::integrate(p.iter().map(|(i, w)| {
        let v = h[i];
        let hit = if upper { v >= ExtReal::of(k) } else { v <= ExtReal::of(-k) };
        (w, if hit { v } else { ExtReal::ZERO })
    }))
}

fn fatou_scalar(
    xi_grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    ps: &[DiscreteMeasure],
    p: &DiscreteMeasure,
    sched: &Schedules,
    upper: bool,
) -> Result<DiagnosticReport, EpiError> {
    check_seq_shape(hs, xi_grid.len())?;
    if ps.len() != hs.len() {
        return Err(EpiError::Length { integrands: hs.len(), measures: ps.len() });
    }
    p.check_on(xi_grid.len())?;
    sched.validate().map_err(EpiError::Schedule)?;
    let n = hs.len();
    let t = sched.tail_start(n);
    let mut stages = vec![weak_convergence_stage(xi_grid, ps, p, t)?];

    let per_k: Vec<Vec<ExtReal>> = sched
        .k_levels
        .iter()
        .map(|&k| hs.iter().zip(ps).map(|(h, q)| scalar_tail(h, q, k, upper)).collect())
        .collect();
    let (ok, lims) = tail_gate(&per_k, t, upper);
    let gate_name = if upper { "uniform_integrability_above" } else { "uniform_integrability_below" };
    stages.push(
        Stage::new(gate_name, StageKind::Hypothesis, ok)
            .with_values(*lims.last().unwrap(), ExtReal::ZERO, ExtReal::gap(*lims.last().unwrap(), ExtReal::ZERO))
            .note(format!("tail limits by level [{}]", fmt_trace(&lims))),
    );

    let means: Vec<ExtReal> = hs.iter().zip(ps).map(|(h, q)| measure_expectation(h, q)).collect();
    let joint: Vec<(f64, ExtReal)> = p
        .iter()
        .map(|(xi, w)| {
            let j = if upper {
                crate::integrand::joint_upper_limit(xi_grid, hs, xi, &sched.xi_eps, t).limit
            } else {
                joint_lower_limit(xi_grid, hs, xi, &sched.xi_eps, t).limit
            };
            (w, j)
        })
        .collect();
    let rhs = ExtReal::integrate(joint.iter().copied());
    let (lhs, ok, margin) = if upper {
        let l = seq_upper(&means, t).limit;
        (l, ExtReal::ge_tol(rhs, l, sched.tol), ExtReal::gap(rhs, l))
    } else {
        let l = seq_lower(&means, t).limit;
        (l, ExtReal::ge_tol(l, rhs, sched.tol), ExtReal::gap(l, rhs))
    };
    let concl = if upper { "mean_upper_bound" } else { "mean_lower_bound" };
    stages.push(
        Stage::new(concl, StageKind::Conclusion, ok)
            .with_values(lhs, rhs, margin)
            .with_witnesses(if ok { vec![] } else { vec![format!("limit of means {lhs} vs {rhs}")] }),
    );

    let (premise, part) = if upper {
        (lhs > ExtReal::NegInf, ExtReal::integrate(joint.iter().map(|&(w, v)| (w, v.minus_part()))))
    } else {
        (lhs < ExtReal::PosInf, ExtReal::integrate(joint.iter().map(|&(w, v)| (w, v.plus_part()))))
    };
    let dich_ok = !premise || part < ExtReal::PosInf;
    stages.push(
        Stage::new("integrability_dichotomy", StageKind::Conclusion, dich_ok)
            .note(format!("premise {premise}, integrated part {part}")),
    );
    Ok(DiagnosticReport::from_stages(
        if upper { "fatou_upper" } else { "fatou_extended" },
        stages,
        sched,
        n,
    ))
}

/// Fatou inequality for functions of the sample alone:
/// `liminf E_{P_nu}[h_nu] >= E_P[joint liminf h_nu]` under weak convergence
/// and uniformly integrable lower tails.
pub fn fatou_extended(
    xi_grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    ps: &[DiscreteMeasure],
    p: &DiscreteMeasure,
    sched: &Schedules,
) -> Result<DiagnosticReport, EpiError> {
    fatou_scalar(xi_grid, hs, ps, p, sched, false)
}

/// Mirror of [`fatou_extended`] for upper limits and upper tails.
pub fn fatou_upper(
    xi_grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    ps: &[DiscreteMeasure],
    p: &DiscreteMeasure,
    sched: &Schedules,
) -> Result<DiagnosticReport, EpiError> {
    fatou_scalar(xi_grid, hs, ps, p, sched, true)
}

/// Epi-convergence of expectation functions via weak convergence: the lower
/// bound of [`fatou_weak`] plus recovery sequences satisfying an upper-tail
/// gate and joint upper semicontinuity at the atoms. Recovery paths may be
/// supplied per decision point; otherwise the constant path is tried first,
/// then the best point of each term inside the recovery radius.
pub fn epi_convergence_weak(
    scheme: &ApproximationScheme,
    recovery: Option<&[Vec<usize>]>,
) -> Result<DiagnosticReport, EpiError> {
    scheme.validate()?;
    let sched = scheme.schedules();
    sched.validate().map_err(EpiError::Schedule)?;
    let n = scheme.n_terms();
    let t = sched.tail_start(n);
    if let Some(r) = recovery {
        if r.len() != scheme.x_grid.len() || r.iter().any(|p| p.len() != n) {
            return Err(EpiError::Shape);
        }
    }
    let all: Vec<usize> = (0..scheme.x_grid.len()).collect();
    let es = scheme.expectation_seq();
    let e = scheme.limit_expectation();
    let mut stages = weak_route_stages(scheme, &all, &sched, &es, &e)?;

    let atoms = scheme.limit_measure.atoms();
    let radius = sched.recovery_radius();
    let check_path = |x: usize, path: &[usize]| -> (bool, bool) {
        let per_k: Vec<Vec<ExtReal>> = sched
            .k_levels
            .iter()
            .map(|&k| {
                path.iter()
                    .enumerate()
                    .map(|(nu, &y)| tail_expectation_above(&scheme.integrands[nu], &scheme.measures[nu], y, k))
                    .collect()
            })
            .collect();
        let (ui_ok, _) = tail_gate(&per_k, t, true);
        let usc_ok = atoms.iter().all(|&xi| {
            let ul = joint_upper_limit_along(&scheme.xi_grid, &scheme.integrands, xi, path, &sched.xi_eps, t);
            ExtReal::ge_tol(scheme.limit.get(xi, x), ul.limit, sched.tol)
        });
        (ui_ok, usc_ok)
    };
    let results: Vec<Option<(bool, bool, String)>> = all
        .par_iter()
        .map(|&x| {
            if e[x].is_pos_inf() {
                return None;
            }
            let mut tried = Vec::new();
            if let Some(r) = recovery {
                tried.push(r[x].clone());
            } else {
                tried.push(vec![x; n]);
                let ball = scheme.x_grid.ball(x, radius);
                let searched: Vec<usize> = es
                    .iter()
                    .map(|v| {
                        *ball
                            .iter()
                            .min_by(|&&a, &&b| ExtReal::abs_diff(v[a], e[x]).total_cmp(&ExtReal::abs_diff(v[b], e[x])))
                            .unwrap()
                    })
                    .collect();
                tried.push(searched);
            }
            let mut best = (false, false);
            for path in &tried {
                let r = check_path(x, path);
                if r.0 && r.1 {
                    return Some((true, true, String::new()));
                }
                if (r.0 as u8 + r.1 as u8) > (best.0 as u8 + best.1 as u8) {
                    best = r;
                }
            }
            Some((best.0, best.1, format!("point {x}")))
        })
        .collect();
    let ui_w: Vec<String> = results.iter().flatten().filter(|r| !r.0).map(|r| r.2.clone()).collect();
    let usc_w: Vec<String> = results.iter().flatten().filter(|r| !r.1).map(|r| r.2.clone()).collect();
    stages.push(
        Stage::new("recovery_uniform_integrability_above", StageKind::Hypothesis, ui_w.is_empty()).with_witnesses(ui_w),
    );
    stages.push(Stage::new("recovery_joint_usc_at_atoms", StageKind::Hypothesis, usc_w.is_empty()).with_witnesses(usc_w));
    stages.extend(epi_stages(&scheme.x_grid, &es, &e, &sched, StageKind::Conclusion));
    Ok(DiagnosticReport::from_stages("epi_convergence_weak", stages, &sched, n))
}

/// Truncated Attouch-Wets distance between the epigraphs of two grid
/// functions: the largest difference of distances to the epigraphs over test
/// points `(x, a)` with `d(x, origin) <= rho` and `|a| <= rho`. The level grid
/// has step `(value range)/200`, kept within `[rho/100, rho]`. An empty epigraph sits at
/// infinite distance, which saturates the difference at `2 rho`.
pub fn attouch_wets_distance(
    grid: &MetricGrid,
    h1: &[ExtReal],
    h2: &[ExtReal],
    rho: f64,
    origin: usize,
) -> Result<f64, EpiError> {
    if h1.len() != grid.len() || h2.len() != grid.len() {
        return Err(EpiError::Shape);
    }
    if origin >= grid.len() {
        return Err(EpiError::Point(origin));
    }
    let pts = grid.ball(origin, rho);
    let finite: Vec<f64> = pts
        .iter()
        .flat_map(|&i| [h1[i], h2[i]])
        .filter_map(ExtReal::finite)
        .filter(|v| v.abs() <= rho)
        .collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let step = if range.is_finite() && range > 0.0 { (range / 200.0).clamp(rho / 100.0, rho) } else { rho / 100.0 };
    let levels = (2.0 * rho / step).floor() as usize;
    let alphas: Vec<f64> = (0..=levels).map(|k| -rho + step * k as f64).collect();
    // Neighbours in order of distance, so each search stops once no closer
    // epigraph point is possible.
    let dist_epi = |h: &[ExtReal], order: &[(f64, usize)], a: f64| -> f64 {
        let mut best = f64::INFINITY;
        for &(d, y) in order {
            if d >= best {
                break;
            }
            let dv = match h[y] {
                ExtReal::PosInf => continue,
                ExtReal::NegInf => 0.0,
                ExtReal::Finite(b) => (b - a).max(0.0),
            };
            best = best.min((d * d + dv * dv).sqrt());
        }
        best
    };
    let worst = pts
        .par_iter()
        .map(|&x| {
            let mut order: Vec<(f64, usize)> = (0..grid.len()).map(|y| (grid.dist(x, y), y)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut w: f64 = 0.0;
            for &a in &alphas {
                let d1 = dist_epi(h1, &order, a);
                let d2 = dist_epi(h2, &order, a);
                let diff = match (d1.is_finite(), d2.is_finite()) {
                    (true, true) => (d1 - d2).abs(),
                    (false, false) => 0.0,
                    _ => 2.0 * rho,
                };
                w = w.max(diff);
            }
            w
        })
        .collect::<Vec<f64>>();
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// Expected value of a grid function under a measure, exposed for callers
/// that work with single functions of the sample.
pub fn mean(h: &[ExtReal], p: &DiscreteMeasure) -> ExtReal {
    measure_expectation(h, p)
}

/// `E_{P_nu}[f_nu(., x)]` for one decision point over all terms.
pub fn expectation_trace(scheme: &ApproximationScheme, x: usize) -> Vec<ExtReal> {
    scheme.integrands.iter().zip(&scheme.measures).map(|(f, p)| expectation(f, p, x)).collect()
}
