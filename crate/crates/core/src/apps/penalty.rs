//! Exact penalty for an expectation constraint: minimize `x^2` subject to
//! `E[xi - x] <= 0`, replacing the constraint by `theta_nu * max(0, E_nu[xi - x])`
//! with sampled measures.

use serde::{Deserialize, Serialize};

use super::{require, substream, AppError, AppOutcome, TraceRow};
use crate::epi::{argmin, attouch_wets_distance, check_epi_convergence, epi_convergence_weak, tends_to_zero, ApproximationScheme};
use crate::extreal::ExtReal;
use crate::integrand::{expectation_fn, lipschitz_quantile, Integrand};
use crate::report::{default_tol, DiagnosticReport, Stage, StageKind};
use crate::space::{bounded_lipschitz_distance, DiscreteMeasure, MetricGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    /// Mean of the three-point distribution.
    pub mean: f64,
    /// Atoms sit at `mean - spread`, `mean`, `mean + spread`.
    pub spread: f64,
    pub weights: [f64; 3],
    pub lo: f64,
    pub hi: f64,
    pub spacing: f64,
    pub terms: usize,
    /// Term `nu` uses `sample_factor * nu^2` systematic draws.
    pub sample_factor: usize,
    pub theta_power: f64,
    /// Constraint values within this of zero count as the boundary.
    pub boundary_tol: f64,
    pub seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            mean: 0.0,
            spread: 1.0,
            weights: [0.3, 0.4, 0.3],
            lo: -2.0,
            hi: 2.0,
            spacing: 1.0 / 32.0,
            terms: 32,
            sample_factor: 64,
            theta_power: 1.0,
            boundary_tol: 1e-9,
            seed: 0,
        }
    }
}

impl PenaltyConfig {
    fn validate(&self) -> Result<(), AppError> {
        require(self.lo < self.hi, "lo must be below hi")?;
        require(self.spacing > 0.0 && self.spacing <= self.hi - self.lo, "spacing must be positive and fit the interval")?;
        require(self.spread > 0.0, "spread must be positive")?;
        require(self.terms >= 2, "terms must be at least 2")?;
        require(self.sample_factor >= 1, "sample_factor must be positive")?;
        require(self.theta_power > 0.0, "theta_power must be positive")?;
        require(self.weights.iter().all(|w| *w >= 0.0), "weights must be nonnegative")?;
        require(((self.weights.iter().sum::<f64>()) - 1.0).abs() <= 1e-12, "weights must sum to 1")
    }
}

/// Grid points whose constraint value is within `tol` of zero but which have
/// no strictly feasible neighbour.
pub fn constraint_qualification_failures(grid: &MetricGrid, constraint: &[ExtReal], tol: f64) -> Vec<usize> {
    let reach = grid.spacing() * 1.5;
    (0..grid.len())
        .filter(|&x| constraint[x].finite().is_some_and(|v| v.abs() <= tol))
        .filter(|&x| !grid.ball(x, reach).iter().any(|&y| constraint[y] < ExtReal::of(-tol)))
        .collect()
}

pub fn run(cfg: &PenaltyConfig) -> Result<AppOutcome, AppError> {
    cfg.validate()?;
    let n_pts = ((cfg.hi - cfg.lo) / cfg.spacing).round() as usize + 1;
    let x_grid = MetricGrid::uniform(cfg.lo, cfg.hi, n_pts)?;
    let atoms = [cfg.mean - cfg.spread, cfg.mean, cfg.mean + cfg.spread];
    let xi_grid = MetricGrid::line(&atoms)?;
    let p = DiscreteMeasure::new(vec![0, 1, 2], cfg.weights.to_vec())?;
    let n = cfg.terms;
    let ps: Vec<DiscreteMeasure> = (1..=n)
        .map(|nu| p.empirical_systematic(&mut substream(cfg.seed, nu as u64), cfg.sample_factor * nu * nu))
        .collect::<Result<_, _>>()?;
    let f = Integrand::from_fn(3, n_pts, |i, x| ExtReal::of(atoms[i] - x_grid.point(x)[0]));
    let scheme = ApproximationScheme {
        xi_grid: xi_grid.clone(),
        x_grid: x_grid.clone(),
        limit: f.clone(),
        integrands: vec![f.clone(); n],
        limit_measure: p.clone(),
        measures: ps.clone(),
        schedules: None,
    };
    let mut stages = Vec::new();

    let constraint = expectation_fn(&f, &p);
    let cq = constraint_qualification_failures(&x_grid, &constraint, cfg.boundary_tol);
    stages.push(
        Stage::new("constraint_qualification", StageKind::Hypothesis, cq.is_empty())
            .with_witnesses(cq.iter().map(|x| format!("boundary point {x} has no strictly feasible neighbour")).collect()),
    );
    let weak = epi_convergence_weak(&scheme, None)?;
    stages.extend(weak.prefixed_stages("constraint"));

    let theta: Vec<f64> = (1..=n).map(|nu| (nu as f64).powf(cfg.theta_power)).collect();
    stages.push(Stage::new("penalty_weight_increasing", StageKind::Hypothesis, theta.windows(2).all(|w| w[1] > w[0])));

    let xs: Vec<f64> = (0..n_pts).map(|i| x_grid.point(i)[0]).collect();
    let phi: Vec<ExtReal> = (0..n_pts)
        .map(|i| if constraint[i] <= ExtReal::ZERO { ExtReal::of(xs[i] * xs[i]) } else { ExtReal::PosInf })
        .collect();
    let cons_nu: Vec<Vec<ExtReal>> = scheme.expectation_seq();
    let phis: Vec<Vec<ExtReal>> = cons_nu
        .iter()
        .zip(&theta)
        .map(|(c, th)| {
            (0..n_pts)
                .map(|i| ExtReal::of(xs[i] * xs[i] + th * c[i].to_f64().max(0.0)))
                .collect()
        })
        .collect();
    let mut sched = scheme.schedules();
    sched.tol = default_tol(x_grid.spacing(), lipschitz_quantile(&x_grid, &phi));
    let t = sched.tail_start(n);
    let epi = check_epi_convergence(&x_grid, &phis, &phi, &sched)?;
    for mut s in epi.stages {
        s.kind = StageKind::Conclusion;
        s.name = format!("penalized.{}", s.name);
        stages.push(s);
    }

    // Recovery: strictly feasible points use themselves; boundary points use
    // the nearest strictly feasible neighbour when that does better.
    let mut rec_w = Vec::new();
    for x in 0..n_pts {
        if phi[x].is_pos_inf() {
            continue;
        }
        let mut candidates = vec![x];
        if constraint[x].finite().is_some_and(|v| v.abs() <= cfg.boundary_tol) {
            candidates.extend(x_grid.ball(x, x_grid.spacing() * 1.5).into_iter().filter(|&y| constraint[y] < ExtReal::ZERO));
        }
        let ok = candidates.iter().any(|&y| {
            let e: Vec<f64> = phis.iter().map(|ph| ExtReal::abs_diff(ph[y], phi[x])).collect();
            tends_to_zero(&e, t, sched.tol)
        });
        if !ok {
            rec_w.push(format!("point {x}"));
        }
    }
    stages.push(Stage::new("recovery_construction", StageKind::Check, rec_w.is_empty()).with_witnesses(rec_w));

    let origin = x_grid.nearest(&[0.0]);
    let mut trace = Vec::with_capacity(n);
    let mut violations = Vec::with_capacity(n);
    for nu in 0..n {
        let (val, at) = argmin(&phis[nu]);
        let viol = cons_nu[nu][at].to_f64().max(0.0);
        violations.push(viol);
        let mut row = TraceRow::new(nu + 1);
        row.estimate = Some(xs[at]);
        row.value = Some(val);
        row.violation = Some(viol);
        row.epi_distance = Some(attouch_wets_distance(&x_grid, &phis[nu], &phi, 2.0, origin)?);
        row.d_p = Some(bounded_lipschitz_distance(&xi_grid, &ps[nu], &p)?);
        trace.push(row);
    }
    let target = cfg.mean.max(0.0).clamp(cfg.lo, cfg.hi);
    let last = trace.last().unwrap().estimate.unwrap();
    let near = (last - target).abs() <= 2.0 * x_grid.spacing() + 1e-12;
    stages.push(
        Stage::new("minimizer_near_projection", StageKind::Conclusion, near)
            .with_values(ExtReal::of(last), ExtReal::of(target), ExtReal::of(-(last - target).abs()))
            .with_witnesses(if near { vec![] } else { vec![format!("final minimizer {last}, expected {target}")] }),
    );
    let final_viol = violations[n - 1];
    stages.push(
        Stage::new("violation_vanishes", StageKind::Conclusion, final_viol <= 1e-3 && tends_to_zero(&violations, t, 1e-3))
            .with_values(ExtReal::of(final_viol), ExtReal::ZERO, ExtReal::of(-final_viol)),
    );
    let report = DiagnosticReport::from_stages("penalty", stages, &sched, n).with_seed(cfg.seed);
    Ok(AppOutcome { report, trace, scheme })
}
