//! Smoothing a discontinuous objective by averaging it over shrinking balls,
//! with the averaging measure treated as a decision variable penalized by its
//! distance from the current mollifier.

use serde::{Deserialize, Serialize};

use super::{require, AppError, AppOutcome, TraceRow};
use crate::epi::{argmin, epi_convergence_weak, minimizer_transfer, tends_to_zero, ApproximationScheme, GATE_TOL};
use crate::extreal::{ExtReal, Trend};
use crate::integrand::{expectation_fn, joint_lower_limit, seq_lower, Integrand};
use crate::report::{DiagnosticReport, Stage, StageKind};
use crate::space::{bounded_lipschitz_distance, mollifier_family, DiscreteMeasure, MetricGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `x^2 + 1{x > 0}`
    StepQuadratic,
    /// `x^2`
    Quadratic,
    /// `(x^2 - 1/4)^2`, two global minimizers.
    DoubleWell,
}

impl Profile {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Profile::StepQuadratic => x * x + if x > 0.0 { 1.0 } else { 0.0 },
            Profile::Quadratic => x * x,
            Profile::DoubleWell => (x * x - 0.25).powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifyConfig {
    pub grid_points: usize,
    pub lo: f64,
    pub hi: f64,
    pub terms: usize,
    /// Radius of term `nu` is `radius_base^nu`.
    pub radius_base: f64,
    pub profile: Profile,
    /// `g_nu = g + perturbation / nu`.
    pub perturbation: f64,
    /// Weights `t` of the uniform component in `(1 - t) P_nu + t U`.
    pub mixing: Vec<f64>,
    /// Penalty weight `nu^theta_power`.
    pub theta_power: f64,
}

impl Default for MollifyConfig {
    fn default() -> Self {
        MollifyConfig {
            grid_points: 513,
            lo: -1.0,
            hi: 1.0,
            terms: 10,
            radius_base: 0.5,
            profile: Profile::StepQuadratic,
            perturbation: 0.0,
            mixing: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            theta_power: 1.0,
        }
    }
}

impl MollifyConfig {
    fn validate(&self) -> Result<(), AppError> {
        require(self.grid_points >= 3, "grid_points must be at least 3")?;
        require(self.lo < self.hi, "lo must be below hi")?;
        require(self.terms >= 2, "terms must be at least 2")?;
        require(self.radius_base > 0.0 && self.radius_base < 1.0, "radius_base must lie in (0, 1)")?;
        require(self.perturbation >= 0.0, "perturbation must be nonnegative")?;
        require(self.theta_power > 0.0, "theta_power must be positive")?;
        require(
            !self.mixing.is_empty() && self.mixing.iter().all(|t| (0.0..=1.0).contains(t)) && self.mixing[0] == 0.0,
            "mixing weights must lie in [0, 1] and start at 0",
        )
    }
}

pub fn run(cfg: &MollifyConfig) -> Result<AppOutcome, AppError> {
    cfg.validate()?;
    let x_grid = MetricGrid::uniform(cfg.lo, cfg.hi, cfg.grid_points)?;
    let n_x = x_grid.len();
    let dx = x_grid.spacing();
    let radii: Vec<f64> = (1..=cfg.terms).map(|nu| cfg.radius_base.powi(nu as i32)).collect();
    let reach = (radii[0] / dx).ceil() as isize;
    let offsets: Vec<f64> = (-reach..=reach).map(|k| k as f64 * dx).collect();
    let xi_grid = MetricGrid::line(&offsets)?;
    let center = reach as usize;
    let n_xi = offsets.len();

    let mut clamped = 0usize;
    let shifted: Vec<usize> = (0..n_xi)
        .flat_map(|k| (0..n_x).map(move |x| (k, x)))
        .map(|(k, x)| {
            let j = x as isize + k as isize - reach;
            let c = j.clamp(0, n_x as isize - 1);
            if c != j {
                clamped += 1;
            }
            c as usize
        })
        .collect();
    let g = |x: usize| cfg.profile.eval(x_grid.point(x)[0]);
    let limit = Integrand::from_fn(n_xi, n_x, |k, x| ExtReal::of(g(shifted[k * n_x + x])));
    let integrands: Vec<Integrand> = (1..=cfg.terms)
        .map(|nu| limit.map(|v| v.shift(cfg.perturbation / nu as f64)))
        .collect();
    let p = DiscreteMeasure::dirac(center);
    let ps = mollifier_family(&xi_grid, center, &radii)?;
    let mut scheme = ApproximationScheme {
        xi_grid: xi_grid.clone(),
        x_grid: x_grid.clone(),
        limit,
        integrands,
        limit_measure: p.clone(),
        measures: ps.clone(),
        schedules: None,
    };
    // The tail starts once the mollifier radius drops below the grid spacing.
    let resolved = radii.iter().position(|&r| r < dx).unwrap_or(cfg.terms - 2).min(cfg.terms - 2);
    let mut sched = scheme.schedules();
    sched.tail_start = Some(resolved);
    scheme.schedules = Some(sched.clone());
    let n = cfg.terms;
    let t = resolved;

    let mut stages = Vec::new();
    let gs: Vec<Vec<ExtReal>> = (1..=n)
        .map(|nu| (0..n_x).map(|x| ExtReal::of(g(x) + cfg.perturbation / nu as f64)).collect())
        .collect();
    let g_lim: Vec<ExtReal> = (0..n_x).map(|x| ExtReal::of(g(x))).collect();
    let lsc_w: Vec<String> = (0..n_x)
        .filter(|&x| !ExtReal::ge_tol(joint_lower_limit(&x_grid, &gs, x, &sched.eps, t).limit, g_lim[x], sched.tol))
        .map(|x| format!("point {x}"))
        .collect();
    stages.push(Stage::new("perturbation_lower_limit", StageKind::Hypothesis, lsc_w.is_empty()).with_witnesses(lsc_w));

    let theta: Vec<f64> = (1..=n).map(|nu| (nu as f64).powf(cfg.theta_power)).collect();
    let theta_ok = theta.windows(2).all(|w| w[1] > w[0]);
    stages.push(Stage::new("penalty_weight_increasing", StageKind::Hypothesis, theta_ok));
    let d_p: Vec<f64> = ps.iter().map(|q| bounded_lipschitz_distance(&xi_grid, q, &p)).collect::<Result<_, _>>()?;
    let weighted: Vec<f64> = d_p.iter().zip(&theta).map(|(d, th)| d * th).collect();
    stages.push(
        Stage::new("weighted_distance_vanishes", StageKind::Hypothesis, tends_to_zero(&weighted, t, GATE_TOL))
            .note(format!("last weighted distance {:.3e}", weighted[n - 1])),
    );

    let weak = epi_convergence_weak(&scheme, None)?;
    stages.extend(weak.prefixed_stages("expectations"));

    // phi_nu(x, t) on the product grid (x, t) with t in the mixing schedule.
    let u = DiscreteMeasure::uniform((0..n_xi).collect())?;
    let m = cfg.mixing.len();
    let mut penalty_w = Vec::new();
    let mut trace = Vec::with_capacity(n);
    let es = scheme.expectation_seq();
    let mut phis = Vec::with_capacity(n);
    let mut penalties: Vec<Vec<f64>> = vec![Vec::with_capacity(n); m];
    for nu in 0..n {
        let mut phi = Vec::with_capacity(n_x * m);
        let mut cols = Vec::with_capacity(m);
        for (j, &tm) in cfg.mixing.iter().enumerate() {
            let q = DiscreteMeasure::mixture(&ps[nu], &u, tm)?;
            let pen = theta[nu] * bounded_lipschitz_distance(&xi_grid, &q, &ps[nu])?;
            penalties[j].push(pen);
            cols.push((expectation_fn(&scheme.integrands[nu], &q), pen));
        }
        for x in 0..n_x {
            for (e, pen) in &cols {
                phi.push(e[x].shift(*pen));
            }
        }
        let (val, at) = argmin(&phi);
        let mut row = TraceRow::new(nu + 1);
        row.estimate = Some(x_grid.point(at / m)[0]);
        row.value = Some(val);
        row.d_p = Some(d_p[nu]);
        trace.push(row);
        phis.push(phi);
    }
    for (j, &tm) in cfg.mixing.iter().enumerate().skip(1) {
        if tm == 0.0 {
            continue;
        }
        let seq: Vec<ExtReal> = penalties[j].iter().map(|v| ExtReal::of(*v)).collect();
        let st = seq_lower(&seq, t);
        if !(st.limit.is_pos_inf() && st.trend == Trend::DivergingUp) {
            penalty_w.push(format!("mixing weight {tm}: penalty lower limit {} ({:?})", st.limit, st.trend));
        }
    }
    stages.push(
        Stage::new("off_limit_penalty_diverges", StageKind::Conclusion, penalty_w.is_empty())
            .with_witnesses(penalty_w)
            .note("the expectation part is bounded below, so a diverging penalty sends the objective to +inf"),
    );
    stages.push({
        let mut s = minimizer_transfer(&x_grid, &es, &g_lim, &sched);
        s.kind = StageKind::Conclusion;
        s
    });
    let mut report = DiagnosticReport::from_stages("mollify", stages, &sched, n);
    report = report.note(format!("clamped shifts: {clamped}"));
    Ok(AppOutcome { report, trace, scheme })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Verdict;

    #[test]
    fn small_grid_quadratic_passes() {
        let cfg = MollifyConfig { grid_points: 65, terms: 8, profile: Profile::Quadratic, ..MollifyConfig::default() };
        let out = run(&cfg).unwrap();
        assert_eq!(out.report.verdict, Verdict::Pass, "{:?}", out.report.witnesses);
        assert_eq!(out.trace.len(), 8);
    }

    #[test]
    fn rejects_bad_mixing() {
        let cfg = MollifyConfig { mixing: vec![0.5], ..MollifyConfig::default() };
        assert!(run(&cfg).is_err());
    }
}
