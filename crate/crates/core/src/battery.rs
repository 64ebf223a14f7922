//! Randomized instance generators, documented counterexamples and the
//! acceptance battery run by `epikit suite`.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::apps::{mollify, pde, penalty, sieve, substream, AppError};
use crate::envelope::{envelope_liminf_identity, interchange_inequality, pasch_hausdorff, pasch_hausdorff_direct};
use crate::epi::{
    check_epi_convergence, epi_convergence_expectations, epi_convergence_weak, fatou_extended, fatou_upper,
    fatou_weak, minimizer_transfer, parametric_fatou_envelope_route, ApproximationScheme, EpiError,
};
use crate::extreal::ExtReal;
use crate::integrand::{expectation, lipschitz_quantile, lower_regularize, Integrand};
use crate::report::{default_tol, DiagnosticReport, Schedules, StageKind, Verdict};
use crate::space::{DiscreteMeasure, MetricGrid};

/// Where infinite values go in a random grid function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfPattern {
    Finite,
    SomePosInf,
    AllPosInf,
    NegInf,
}

impl InfPattern {
    pub const ALL: [InfPattern; 4] = [InfPattern::Finite, InfPattern::SomePosInf, InfPattern::AllPosInf, InfPattern::NegInf];
}

/// Sorted line in `[0, 1]` with gaps drawn from `[0.05, 0.3]`, then rescaled
/// when the total length exceeds 1.
pub fn random_line<R: Rng + ?Sized>(rng: &mut R, n: usize) -> MetricGrid {
    let mut c = 0.0;
    let mut coords: Vec<f64> = (0..n)
        .map(|_| {
            let v = c;
            c += rng.random_range(0.05..0.3);
            v
        })
        .collect();
    let len = coords.last().copied().unwrap_or(0.0);
    if len > 1.0 {
        coords.iter_mut().for_each(|v| *v /= len);
    }
    MetricGrid::line(&coords).expect("increasing coordinates")
}

/// Points in the unit square, which forces the direct envelope route.
pub fn random_plane<R: Rng + ?Sized>(rng: &mut R, n: usize) -> MetricGrid {
    let pts = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    MetricGrid::euclidean(pts).expect("finite points")
}

pub fn random_function<R: Rng + ?Sized>(rng: &mut R, n: usize, pattern: InfPattern) -> Vec<ExtReal> {
    let mut h: Vec<ExtReal> = (0..n).map(|_| ExtReal::of(rng.random_range(-2.0..2.0))).collect();
    match pattern {
        InfPattern::Finite => {}
        InfPattern::SomePosInf => {
            for v in h.iter_mut() {
                if rng.random_bool(0.4) {
                    *v = ExtReal::PosInf;
                }
            }
            let keep = rng.random_range(0..n);
            if h[keep].is_pos_inf() {
                h[keep] = ExtReal::ZERO;
            }
        }
        InfPattern::AllPosInf => h.iter_mut().for_each(|v| *v = ExtReal::PosInf),
        InfPattern::NegInf => {
            let at = rng.random_range(0..n);
            h[at] = ExtReal::NegInf;
        }
    }
    h
}

pub fn random_measure<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DiscreteMeasure {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    DiscreteMeasure::from_dense(&raw.iter().map(|w| w / s).collect::<Vec<_>>()).expect("positive weights")
}

/// Measures `(1 - r^nu) P + r^nu Q` for `nu = 1..=n`.
pub fn geometric_measures(p: &DiscreteMeasure, q: &DiscreteMeasure, r: f64, n: usize) -> Vec<DiscreteMeasure> {
    (1..=n)
        .map(|nu| DiscreteMeasure::mixture(p, q, r.powi(nu as i32)).expect("weight in [0, 1]"))
        .collect()
}

/// A sequence of functions of the sample with its measures, converging at a
/// geometric rate.
#[derive(Debug, Clone)]
pub struct ScalarScheme {
    pub xi_grid: MetricGrid,
    pub hs: Vec<Vec<ExtReal>>,
    pub ps: Vec<DiscreteMeasure>,
    pub p: DiscreteMeasure,
}

impl ScalarScheme {
    pub fn schedules(&self) -> Schedules {
        let scale = self
            .p
            .atoms()
            .into_iter()
            .flat_map(|i| self.hs.iter().map(move |h| h[i]))
            .filter_map(ExtReal::finite)
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        Schedules::defaults(self.xi_grid.spacing(), self.xi_grid.spacing(), scale.max(1.0), self.hs.len(), 1e-6)
    }
}

/// `h_nu = h + s_nu r^nu g` with `s_nu` either `1` or `(-1)^nu`, and
/// `P_nu = (1 - r^nu) P + r^nu Q`.
pub fn random_scalar_scheme<R: Rng + ?Sized>(rng: &mut R, n_xi: usize, terms: usize) -> ScalarScheme {
    let xi_grid = random_line(rng, n_xi);
    let h: Vec<f64> = (0..n_xi).map(|_| rng.random_range(-2.0..2.0)).collect();
    let g: Vec<f64> = (0..n_xi).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r: f64 = rng.random_range(0.3..0.6);
    let alternate = rng.random_bool(0.5);
    let hs = (1..=terms)
        .map(|nu| {
            let s = if alternate && nu % 2 == 1 { -1.0 } else { 1.0 };
            let c = s * r.powi(nu as i32);
            (0..n_xi).map(|i| ExtReal::of(h[i] + c * g[i])).collect()
        })
        .collect();
    let support_len = rng.random_range(1..=n_xi);
    let mut atoms: Vec<usize> = (0..n_xi).collect();
    for i in (1..n_xi).rev() {
        atoms.swap(i, rng.random_range(0..=i));
    }
    atoms.truncate(support_len);
    atoms.sort_unstable();
    let raw: Vec<f64> = atoms.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let p = DiscreteMeasure::new(atoms, raw.iter().map(|w| w / s).collect()).expect("valid weights");
    let q = random_measure(rng, n_xi);
    let ps = geometric_measures(&p, &q, rng.random_range(0.3..0.6), terms);
    ScalarScheme { xi_grid, hs, ps, p }
}

/// Integrand scheme with quadratic slices `a (x - c)^2 + b`, perturbed by
/// `r^nu g`, optionally constrained to `x <= ub` on some slices.
pub fn random_integrand_scheme<R: Rng + ?Sized>(rng: &mut R, n_xi: usize, n_x: usize, terms: usize) -> ApproximationScheme {
    let xi_grid = random_line(rng, n_xi);
    let x_grid = MetricGrid::uniform(-1.0, 1.0, n_x).expect("valid grid");
    let a: Vec<f64> = (0..n_xi).map(|_| rng.random_range(0.2..2.0)).collect();
    let c: Vec<f64> = (0..n_xi).map(|_| rng.random_range(-0.8..0.8)).collect();
    let b: Vec<f64> = (0..n_xi).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ub: Vec<Option<f64>> = (0..n_xi)
        .map(|_| if rng.random_bool(0.2) { Some(rng.random_range(0.0..1.0)) } else { None })
        .collect();
    let g = Integrand::from_fn(n_xi, n_x, |_, _| ExtReal::of(rng.random_range(-1.0..1.0)));
    let xs: Vec<f64> = (0..n_x).map(|j| x_grid.point(j)[0]).collect();
    let base = |i: usize, j: usize| -> ExtReal {
        if ub[i].is_some_and(|u| xs[j] > u) {
            ExtReal::PosInf
        } else {
            ExtReal::of(a[i] * (xs[j] - c[i]).powi(2) + b[i])
        }
    };
    let limit = Integrand::from_fn(n_xi, n_x, base);
    let r: f64 = rng.random_range(0.3..0.6);
    let integrands = (1..=terms)
        .map(|nu| {
            let w = r.powi(nu as i32);
            Integrand::from_fn(n_xi, n_x, |i, j| base(i, j).shift(w * g.get(i, j).to_f64()))
        })
        .collect();
    let p = random_measure(rng, n_xi);
    let q = random_measure(rng, n_xi);
    let measures = geometric_measures(&p, &q, rng.random_range(0.3..0.6), terms);
    ApproximationScheme { xi_grid, x_grid, limit, integrands, limit_measure: p, measures, schedules: None }
}

/// Positive schemes that every checker must pass on every stage.
pub fn positive_schemes() -> Vec<(&'static str, ApproximationScheme)> {
    let xi_grid = MetricGrid::uniform(0.0, 1.0, 5).expect("grid");
    let x_grid = MetricGrid::uniform(-1.0, 1.0, 21).expect("grid");
    let f = Integrand::from_fn(5, 21, |i, j| {
        let x = x_grid.point(j)[0];
        let xi = xi_grid.point(i)[0];
        ExtReal::of((x - 0.5 * xi).powi(2) + xi)
    });
    let p = DiscreteMeasure::new(vec![0, 2, 4], vec![0.25, 0.5, 0.25]).expect("measure");
    let n = 32;
    let stationary = ApproximationScheme {
        xi_grid: xi_grid.clone(),
        x_grid: x_grid.clone(),
        limit: f.clone(),
        integrands: vec![f.clone(); n],
        limit_measure: p.clone(),
        measures: vec![p.clone(); n],
        schedules: None,
    };
    let shifted = ApproximationScheme {
        integrands: (1..=n).map(|nu| f.map(|v| v.shift(0.5f64.powi(nu as i32)))).collect(),
        ..stationary.clone()
    };
    let sampled = ApproximationScheme {
        measures: (1..=n)
            .map(|nu| p.empirical_systematic(&mut substream(11, nu as u64), 16 * nu * nu).expect("sample"))
            .collect(),
        ..stationary.clone()
    };
    vec![("stationary", stationary), ("vanishing_shift", shifted), ("systematic_samples", sampled)]
}

/// A construction meant to break one hypothesis or conclusion, with the
/// stages it is expected to fail.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub name: &'static str,
    pub report: DiagnosticReport,
    pub intended: Vec<&'static str>,
}

impl Counterexample {
    pub fn failed_stages(&self) -> Vec<String> {
        self.report.stages.iter().filter(|s| !s.passed && s.kind != StageKind::Info).map(|s| s.name.clone()).collect()
    }

    /// The failing stages are exactly the intended ones.
    pub fn trips_intended(&self) -> bool {
        let mut got = self.failed_stages();
        let mut want: Vec<String> = self.intended.iter().map(|s| s.to_string()).collect();
        got.sort();
        want.sort();
        got == want
    }
}

/// Mass `1/nu` escaping to a sample point with value `-nu`.
pub fn escaping_mass_scalar(terms: usize) -> ScalarScheme {
    let xi_grid = MetricGrid::uniform(0.0, 2.0, 3).expect("grid");
    let p = DiscreteMeasure::dirac(0);
    let q = DiscreteMeasure::dirac(2);
    let ps = (1..=terms).map(|nu| DiscreteMeasure::mixture(&p, &q, 1.0 / nu as f64).expect("weight")).collect();
    let hs = (1..=terms).map(|nu| vec![ExtReal::ZERO, ExtReal::ZERO, ExtReal::of(-(nu as f64))]).collect();
    ScalarScheme { xi_grid, hs, ps, p }
}

fn escaping_mass_scheme(terms: usize) -> ApproximationScheme {
    let xi_grid = MetricGrid::uniform(0.0, 2.0, 3).expect("grid");
    let x_grid = MetricGrid::uniform(-1.0, 1.0, 11).expect("grid");
    let xs: Vec<f64> = (0..11).map(|j| x_grid.point(j)[0]).collect();
    let limit = Integrand::from_fn(3, 11, |_, j| ExtReal::of(xs[j] * xs[j]));
    let p = DiscreteMeasure::dirac(0);
    let q = DiscreteMeasure::dirac(2);
    ApproximationScheme {
        xi_grid,
        x_grid,
        integrands: (1..=terms)
            .map(|nu| Integrand::from_fn(3, 11, |i, j| if i == 2 { ExtReal::of(-(nu as f64)) } else { ExtReal::of(xs[j] * xs[j]) }))
            .collect(),
        limit,
        limit_measure: p.clone(),
        measures: (1..=terms).map(|nu| DiscreteMeasure::mixture(&p, &q, 1.0 / nu as f64).expect("weight")).collect(),
        schedules: None,
    }
}

fn limsup_leg_scheme(terms: usize) -> ApproximationScheme {
    let (_, base) = positive_schemes().swap_remove(0);
    ApproximationScheme {
        integrands: (0..terms)
            .map(|_| Integrand::from_fn(5, 21, |i, j| if i == 2 { base.limit.get(i, j).shift(1.0) } else { base.limit.get(i, j) }))
            .collect(),
        measures: vec![base.limit_measure.clone(); terms],
        ..base
    }
}

pub fn counterexamples() -> Result<Vec<Counterexample>, EpiError> {
    let n = 64;
    let esc = escaping_mass_scalar(n);
    let sched = esc.schedules();
    let scheme = escaping_mass_scheme(n);
    let grid = MetricGrid::uniform(-1.0, 1.0, 21).expect("grid");
    let slope: Vec<ExtReal> = (0..21).map(|j| ExtReal::of(grid.point(j)[0])).collect();
    let vee: Vec<ExtReal> = slope.iter().map(|v| -ExtReal::of(v.to_f64().abs())).collect();
    let alternating: Vec<Vec<ExtReal>> = (1..=n)
        .map(|nu| slope.iter().map(|v| if nu % 2 == 0 { *v } else { -*v }).collect())
        .collect();
    let mut lin_sched = Schedules::defaults(grid.spacing(), 1.0, 1.0, n, default_tol(grid.spacing(), 1.0));
    lin_sched.recovery_radius = Some(0.0);
    let divergent: Vec<Vec<ExtReal>> = (1..=n)
        .map(|nu| (0..21).map(|j| if j == 10 { ExtReal::of(-(nu as f64)) } else { ExtReal::ZERO }).collect())
        .collect();
    Ok(vec![
        Counterexample {
            name: "escaping_mass_extended",
            report: fatou_extended(&esc.xi_grid, &esc.hs, &esc.ps, &esc.p, &sched)?,
            intended: vec!["uniform_integrability_below", "mean_lower_bound"],
        },
        Counterexample {
            name: "escaping_mass_envelope_route",
            report: parametric_fatou_envelope_route(&scheme, None)?,
            intended: vec!["envelope_lower_bound", "expectation_lower_bound"],
        },
        Counterexample {
            name: "escaping_mass_weak_route",
            report: fatou_weak(&scheme, None)?,
            intended: vec!["uniform_integrability_below", "expectation_lower_bound"],
        },
        Counterexample {
            name: "limsup_leg",
            report: epi_convergence_weak(&limsup_leg_scheme(n), None)?,
            intended: vec!["recovery_joint_usc_at_atoms", "recovery_sequence"],
        },
        Counterexample {
            name: "alternating_recovery",
            report: check_epi_convergence(&grid, &alternating, &vee, &lin_sched)?,
            intended: vec!["recovery_sequence"],
        },
        Counterexample {
            name: "divergent_point",
            report: envelope_liminf_identity(&grid, &divergent, 10, &lin_sched)?,
            intended: vec!["envelope_bounded_below_somewhere"],
        },
    ])
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    pub failures: usize,
    pub details: Vec<String>,
}

impl CriterionResult {
    fn new(id: u32, name: &str) -> Self {
        CriterionResult { id, name: name.to_string(), passed: true, instances: 0, failures: 0, details: Vec::new() }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            self.failures += 1;
            self.passed = false;
            if self.details.len() < 20 {
                self.details.push(detail());
            }
        }
    }

    fn note(&mut self, s: String) {
        self.details.push(s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub verdict: Verdict,
    pub criteria: Vec<CriterionResult>,
}

fn same_envelope(a: &[ExtReal], b: &[ExtReal]) -> bool {
    a.iter().zip(b).all(|(x, y)| ExtReal::same_kind(*x, *y) && (!x.is_finite() || ExtReal::abs_diff(*x, *y) <= 1e-12))
}

/// Fast envelope against the direct minimization.
pub fn envelope_correctness(seed: u64, instances: usize) -> CriterionResult {
    let mut c = CriterionResult::new(1, "envelope_matches_direct_minimization");
    let mut rng = substream(seed, 1);
    for k in 0..instances {
        let n = rng.random_range(1..=40);
        let grid = if k % 3 == 2 { random_plane(&mut rng, n) } else { random_line(&mut rng, n) };
        let h = random_function(&mut rng, n, InfPattern::ALL[k % 4]);
        let kappa = rng.random_range(0.0..8.0);
        let fast = pasch_hausdorff(&grid, &h, kappa).expect("valid input");
        let slow = pasch_hausdorff_direct(&grid, &h, kappa).expect("valid input");
        c.record(same_envelope(&fast.values, &slow.values), || format!("instance {k}: n = {n}, kappa = {kappa}"));
    }
    c
}

/// Monotonicity, Lipschitz bound, regularization identity and convergence
/// on minorized instances; emptiness equivalence on `+inf` patterns.
pub fn envelope_properties(seed: u64, instances: usize, patterns: usize) -> CriterionResult {
    let mut c = CriterionResult::new(2, "envelope_properties");
    let mut rng = substream(seed, 2);
    for k in 0..instances {
        let n = rng.random_range(2..=40);
        let grid = random_line(&mut rng, n);
        let pattern = if k % 2 == 0 { InfPattern::Finite } else { InfPattern::SomePosInf };
        let h = random_function(&mut rng, n, pattern);
        let scale = h.iter().filter_map(|v| v.finite()).fold(1.0_f64, |m, v| m.max(v.abs()));
        let sched = Schedules::defaults(grid.spacing(), 1.0, scale, 2, default_tol(grid.spacing(), lipschitz_quantile(&grid, &h)));
        let envs: Vec<Vec<ExtReal>> =
            sched.kappa.iter().map(|&kp| pasch_hausdorff(&grid, &h, kp).expect("valid").values).collect();
        let mono = envs.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a <= b))
            && envs.last().unwrap().iter().zip(&h).all(|(a, b)| a <= b);
        c.record(mono, || format!("instance {k}: not monotone in the modulus"));
        if pattern == InfPattern::Finite {
            let lip = sched.kappa.iter().zip(&envs).all(|(&kp, e)| {
                (0..n).all(|i| (0..n).all(|j| (e[i].to_f64() - e[j].to_f64()).abs() <= kp * grid.dist(i, j) + 1e-9))
            });
            c.record(lip, || format!("instance {k}: Lipschitz bound violated"));
        }
        let reg = lower_regularize(&grid, &h, &sched.eps);
        let same = sched.kappa.iter().zip(&envs).all(|(&kp, e)| {
            let er = pasch_hausdorff(&grid, &reg, kp).expect("valid").values;
            e.iter().zip(&er).all(|(a, b)| ExtReal::approx_eq(*a, *b, sched.tol))
        });
        c.record(same, || format!("instance {k}: envelope differs from envelope of regularization"));
        // Where the regularization is +inf the envelopes only get there in the limit.
        let top = envs.last().unwrap();
        let gap_ok = top.iter().zip(&reg).all(|(a, b)| b.is_pos_inf() || ExtReal::approx_eq(*a, *b, sched.tol));
        c.record(gap_ok, || format!("instance {k}: gap at the largest modulus above tolerance"));
    }
    for k in 0..patterns {
        let n = rng.random_range(1..=30);
        let grid = random_line(&mut rng, n);
        let pattern = if k % 3 == 0 { InfPattern::AllPosInf } else { InfPattern::SomePosInf };
        let h = random_function(&mut rng, n, pattern);
        let kappa = rng.random_range(0.0..8.0);
        let e = pasch_hausdorff(&grid, &h, kappa).expect("valid").values;
        let a = h.iter().all(|v| v.is_pos_inf());
        let b = e.iter().any(|v| v.is_pos_inf());
        let all = e.iter().all(|v| v.is_pos_inf());
        c.record(a == b && b == all, || format!("pattern {k}: emptiness equivalence broken ({a}, {b}, {all})"));
    }
    c
}

/// `E_p[f_k] <= (E_p f)_k`, with equality on point masses.
pub fn interchange(seed: u64, instances: usize) -> CriterionResult {
    let mut c = CriterionResult::new(3, "interchange_inequality");
    let mut rng = substream(seed, 3);
    for k in 0..instances {
        let n_x = rng.random_range(2..=30);
        let n_xi = rng.random_range(1..=8);
        let grid = random_line(&mut rng, n_x);
        let f = Integrand::from_fn(n_xi, n_x, |_, _| ExtReal::of(rng.random_range(-2.0..2.0)));
        let p = random_measure(&mut rng, n_xi);
        let kappa = rng.random_range(0.1..10.0);
        let r = interchange_inequality(&grid, &f, &p, kappa, 1e-9).expect("valid");
        c.record(r.verdict == Verdict::Pass, || format!("instance {k}: inequality violated"));
        let atom = rng.random_range(0..n_xi);
        let d = DiscreteMeasure::dirac(atom);
        let lhs: Vec<ExtReal> = {
            let fk = crate::envelope::envelope_of_integrand(&grid, &f, kappa).expect("valid");
            (0..n_x).map(|x| expectation(&fk, &d, x)).collect()
        };
        let ef: Vec<ExtReal> = (0..n_x).map(|x| expectation(&f, &d, x)).collect();
        let rhs = pasch_hausdorff(&grid, &ef, kappa).expect("valid").values;
        c.record(lhs == rhs, || format!("instance {k}: point mass gives no equality"));
    }
    c
}

fn stage_ok(r: &DiagnosticReport, name: &str) -> bool {
    r.stage(name).is_some_and(|s| s.passed)
}

/// Extended Fatou and its mirror on gated random schemes, plus the escaping
/// mass counterexample.
pub fn extended_fatou(seed: u64, instances: usize) -> Result<CriterionResult, EpiError> {
    let mut c = CriterionResult::new(4, "extended_fatou");
    let mut rng = substream(seed, 4);
    let mut gated = 0;
    for k in 0..instances {
        let n_xi = rng.random_range(2..=50);
        let s = random_scalar_scheme(&mut rng, n_xi, 64);
        let sched = s.schedules();
        let lo = fatou_extended(&s.xi_grid, &s.hs, &s.ps, &s.p, &sched)?;
        let hi = fatou_upper(&s.xi_grid, &s.hs, &s.ps, &s.p, &sched)?;
        c.record(stage_ok(&lo, "integrability_dichotomy") && stage_ok(&hi, "integrability_dichotomy"), || {
            format!("scheme {k}: dichotomy violated")
        });
        for r in [&lo, &hi] {
            if r.failed(StageKind::Hypothesis).is_empty() {
                gated += 1;
                let concl = r.stages.iter().find(|s| s.kind == StageKind::Conclusion).expect("conclusion stage");
                let margin = concl.margin.unwrap_or(ExtReal::PosInf);
                c.record(ExtReal::ge_tol(margin, ExtReal::ZERO, 1e-6), || format!("scheme {k}: {} margin {margin}", r.name));
            }
        }
    }
    c.note(format!("{gated} of {} runs passed the gates", 2 * instances));
    let esc = escaping_mass_scalar(64);
    let r = fatou_extended(&esc.xi_grid, &esc.hs, &esc.ps, &esc.p, &esc.schedules())?;
    let ok = !stage_ok(&r, "uniform_integrability_below") && !stage_ok(&r, "mean_lower_bound");
    c.record(ok, || "escaping mass passed the gate or the conclusion".into());
    Ok(c)
}

fn all_pass(r: &DiagnosticReport) -> bool {
    r.stages.iter().all(|s| s.passed || s.kind == StageKind::Info)
}

/// Envelope and weak routes agree on cross-eligible schemes; positive schemes
/// pass everywhere; each counterexample trips its intended stages.
pub fn checkers(seed: u64, eligible: usize) -> Result<CriterionResult, EpiError> {
    let mut c = CriterionResult::new(5, "checkers_sound_and_nonvacuous");
    let mut rng = substream(seed, 5);
    let mut found = 0;
    let mut tried = 0;
    while found < eligible && tried < 4 * eligible {
        tried += 1;
        let n_xi = rng.random_range(2..=6);
        let n_x = rng.random_range(5..=15);
        let s = random_integrand_scheme(&mut rng, n_xi, n_x, 32);
        let env = parametric_fatou_envelope_route(&s, None)?;
        let weak = fatou_weak(&s, None)?;
        if env.failed(StageKind::Hypothesis).is_empty() && weak.failed(StageKind::Hypothesis).is_empty() {
            found += 1;
            c.record(env.verdict == weak.verdict, || format!("scheme {tried}: {:?} vs {:?}", env.verdict, weak.verdict));
        }
    }
    c.record(found == eligible, || format!("only {found} cross-eligible schemes in {tried} draws"));
    for (name, s) in positive_schemes() {
        let reports = [
            parametric_fatou_envelope_route(&s, None)?,
            epi_convergence_expectations(&s, None)?,
            fatou_weak(&s, None)?,
            epi_convergence_weak(&s, None)?,
        ];
        for r in &reports {
            c.record(all_pass(r), || format!("{name}: {} failed {:?}", r.name, r.witnesses));
        }
    }
    for ce in counterexamples()? {
        c.record(ce.trips_intended(), || format!("{}: failed {:?}, intended {:?}", ce.name, ce.failed_stages(), ce.intended));
    }
    Ok(c)
}

/// Minimizers transfer on every scheme where an epi-convergence check passes.
pub fn minimizer_transfer_battery(seed: u64, instances: usize) -> Result<CriterionResult, EpiError> {
    let mut c = CriterionResult::new(6, "minimizer_transfer");
    let mut rng = substream(seed, 6);
    let mut schemes: Vec<ApproximationScheme> = positive_schemes().into_iter().map(|(_, s)| s).collect();
    for _ in 0..instances {
        let n_xi = rng.random_range(2..=6);
        let n_x = rng.random_range(5..=15);
        schemes.push(random_integrand_scheme(&mut rng, n_xi, n_x, 32));
    }
    let mut passing = 0;
    for (k, s) in schemes.iter().enumerate() {
        let weak = epi_convergence_weak(s, None)?;
        let env = epi_convergence_expectations(s, None)?;
        if weak.verdict != Verdict::Pass && env.verdict != Verdict::Pass {
            continue;
        }
        passing += 1;
        let st = minimizer_transfer(&s.x_grid, &s.expectation_seq(), &s.limit_expectation(), &s.schedules());
        c.record(st.passed, || format!("scheme {k}: {:?}", st.witnesses));
    }
    c.note(format!("{passing} of {} schemes epi-converge", schemes.len()));
    Ok(c)
}

pub fn mollifier(_seed: u64) -> Result<CriterionResult, AppError> {
    let mut c = CriterionResult::new(7, "mollifier_app");
    let cfg = mollify::MollifyConfig::default();
    let out = mollify::run(&cfg)?;
    let spacing = out.scheme.x_grid.spacing();
    let last = out.trace.last().expect("nonempty trace");
    let x = last.estimate.unwrap_or(f64::NAN);
    let v = last.value.map_or(f64::NAN, ExtReal::to_f64);
    c.record(x.abs() <= 2.0 * spacing + 1e-12, || format!("final minimizer {x}"));
    c.record(v.abs() <= 1e-3, || format!("final value {v}"));
    c.record(out.report.verdict == Verdict::Pass, || format!("verdict {:?}: {:?}", out.report.verdict, out.report.witnesses));
    Ok(c)
}

pub fn pde_app(seed: u64) -> Result<CriterionResult, AppError> {
    let mut c = CriterionResult::new(8, "pde_app");
    let orders = pde::observed_orders(&pde::PdeConfig::default().meshes);
    c.record(orders.iter().all(|o| *o >= 1.9), || format!("observed orders {orders:?}"));
    let mut decreasing = 0;
    for k in 0..10 {
        let out = pde::run(&pde::PdeConfig { seed: seed.wrapping_mul(10).wrapping_add(k), ..Default::default() })?;
        let aw: Vec<f64> = out.trace.iter().filter_map(|r| r.epi_distance).collect();
        if aw.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    c.record(decreasing >= 8, || format!("epi-distance decreasing for {decreasing} of 10 seeds"));
    c.note(format!("epi-distance decreasing for {decreasing} of 10 seeds"));
    Ok(c)
}

pub fn penalty_app(seed: u64) -> Result<CriterionResult, AppError> {
    let mut c = CriterionResult::new(9, "penalty_app");
    for mean in [-1.0, 0.0, 1.0] {
        let cfg = penalty::PenaltyConfig { mean, seed, ..Default::default() };
        let out = penalty::run(&cfg)?;
        let last = out.trace.last().expect("nonempty trace");
        let x = last.estimate.unwrap_or(f64::NAN);
        let target = mean.max(0.0);
        c.record((x - target).abs() <= 2.0 * cfg.spacing + 1e-12, || format!("mean {mean}: final minimizer {x}"));
        let viol = last.violation.unwrap_or(f64::NAN);
        c.record(viol <= 1e-3, || format!("mean {mean}: violation {viol}"));
    }
    let coarse = MetricGrid::uniform(-2.0, 2.0, 5).expect("grid");
    let cons = |m: f64| (0..5).map(|i| ExtReal::of(m - coarse.point(i)[0])).collect::<Vec<_>>();
    c.record(penalty::constraint_qualification_failures(&coarse, &cons(2.0), 1e-9) == vec![4], || {
        "edge boundary point not flagged".into()
    });
    c.record(penalty::constraint_qualification_failures(&coarse, &cons(1.0), 1e-9).is_empty(), || {
        "interior boundary point flagged".into()
    });
    Ok(c)
}

pub fn sieve_app(seed: u64) -> Result<CriterionResult, AppError> {
    let mut c = CriterionResult::new(10, "sieve_app");
    let cfg = sieve::SieveConfig { seeds: (1..=20).map(|k| seed.wrapping_mul(20).wrapping_add(k)).collect(), ..Default::default() };
    let out = sieve::run(&cfg)?;
    let err: Vec<f64> = out.trace.iter().filter_map(|r| r.estimate).collect();
    c.record(err.windows(2).all(|w| w[1] < w[0]), || format!("median errors {err:?}"));
    let wd = out.report.stage("weighted_distance_decreasing").is_some_and(|s| s.passed);
    c.record(wd, || "weighted distance does not decay".into());
    c.note(format!("median errors {err:?}"));
    Ok(c)
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Epi(#[from] EpiError),
    #[error(transparent)]
    App(#[from] AppError),
}

/// Criteria 1 to 10 at full size. Output depends only on `seed`.
pub fn run_suite(seed: u64) -> Result<SuiteReport, SuiteError> {
    let criteria = vec![
        envelope_correctness(seed, 500),
        envelope_properties(seed, 100, 200),
        interchange(seed, 200),
        extended_fatou(seed, 300)?,
        checkers(seed, 100)?,
        minimizer_transfer_battery(seed, 50)?,
        mollifier(seed)?,
        pde_app(seed)?,
        penalty_app(seed)?,
        sieve_app(seed)?,
    ];
    let verdict = if criteria.iter().all(|c| c.passed) { Verdict::Pass } else { Verdict::Fail };
    Ok(SuiteReport { seed, verdict, criteria })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_have_intended_shape() {
        let mut rng = substream(3, 0);
        let h = random_function(&mut rng, 12, InfPattern::SomePosInf);
        assert!(h.iter().any(|v| v.is_finite()));
        assert!(random_function(&mut rng, 5, InfPattern::AllPosInf).iter().all(|v| v.is_pos_inf()));
        assert!(random_function(&mut rng, 5, InfPattern::NegInf).iter().any(|v| v.is_neg_inf()));
    }

    #[test]
    fn generated_schemes_validate() {
        let mut rng = substream(5, 0);
        let s = random_integrand_scheme(&mut rng, 4, 9, 8);
        assert!(s.validate().is_ok());
        let sc = random_scalar_scheme(&mut rng, 7, 8);
        assert_eq!(sc.hs.len(), sc.ps.len());
    }

    #[test]
    fn counterexamples_trip_intended_stages() {
        for ce in counterexamples().unwrap() {
            assert!(ce.trips_intended(), "{}: failed {:?}", ce.name, ce.failed_stages());
        }
    }
}
