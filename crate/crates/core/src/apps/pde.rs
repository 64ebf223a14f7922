//! Discretized elliptic state equation with a random load: finite differences
//! on refining meshes approximate the exact solution operator.
//!
//! State: `-u'' = xi (sin(pi s) - x)` on `(0, 1)`, `u(0) = u(1) = 0`, so
//! `u = xi (sin(pi s)/pi^2 - x s(1 - s)/2)`. Objective: `int u^2 + w x^2`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require, substream, AppError, AppOutcome, TraceRow};
use crate::epi::{argmin, attouch_wets_distance, epi_convergence_weak, minimizer_transfer, ApproximationScheme};
use crate::extreal::ExtReal;
use crate::integrand::Integrand;
use crate::report::{DiagnosticReport, Stage, StageKind};
use crate::space::{bounded_lipschitz_distance, DiscreteMeasure, MetricGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    /// Interior node counts, increasing.
    pub meshes: Vec<usize>,
    /// Reference mesh width is the finest width divided by this.
    pub reference_refinement: usize,
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    pub control_lo: f64,
    pub control_hi: f64,
    pub control_points: usize,
    pub control_weight: f64,
    /// Mesh with `n` interior nodes draws `sample_factor * n^3` samples.
    pub sample_factor: usize,
    pub seed: u64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            meshes: vec![8, 16, 32, 64],
            reference_refinement: 4,
            atoms: vec![0.5, 1.0, 1.5],
            weights: vec![0.2, 0.5, 0.3],
            control_lo: 0.0,
            control_hi: 2.0,
            control_points: 41,
            control_weight: 0.1,
            sample_factor: 8,
            seed: 0,
        }
    }
}

impl PdeConfig {
    fn validate(&self) -> Result<(), AppError> {
        require(self.meshes.len() >= 2, "need at least two meshes")?;
        require(self.meshes.windows(2).all(|w| w[0] < w[1]) && self.meshes[0] >= 2, "meshes must increase from at least 2")?;
        require(self.reference_refinement >= 2, "reference_refinement must be at least 2")?;
        require(!self.atoms.is_empty() && self.atoms.len() == self.weights.len(), "atoms and weights must match")?;
        require(self.atoms.windows(2).all(|w| w[0] < w[1]), "atoms must increase")?;
        require(self.control_lo < self.control_hi && self.control_points >= 2, "bad control grid")?;
        require(self.control_weight >= 0.0, "control_weight must be nonnegative")?;
        require(self.sample_factor >= 1, "sample_factor must be positive")
    }
}

/// Solves the tridiagonal system `(2u_i - u_{i-1} - u_{i+1}) / h^2 = q_i` with
/// zero boundary values.
pub fn solve_dirichlet(q: &[f64]) -> Vec<f64> {
    let n = q.len();
    let h = 1.0 / (n + 1) as f64;
    let rhs: Vec<f64> = q.iter().map(|v| v * h * h).collect();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = -0.5;
    d[0] = rhs[0] / 2.0;
    for i in 1..n {
        let m = 2.0 + c[i - 1];
        c[i] = -1.0 / m;
        d[i] = (rhs[i] + d[i - 1]) / m;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = d[i] - c[i] * u[i + 1];
    }
    u
}

/// Mesh quantities: the two basis solutions and their trapezoid inner products.
struct Mesh {
    a: Vec<f64>,
    aa: f64,
    ab: f64,
    bb: f64,
}

impl Mesh {
    fn new(n: usize) -> Self {
        let h = 1.0 / (n + 1) as f64;
        let nodes: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let a = solve_dirichlet(&nodes.iter().map(|s| (PI * s).sin()).collect::<Vec<_>>());
        let b = solve_dirichlet(&vec![1.0; n]);
        let dot = |u: &[f64], v: &[f64]| h * u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
        Mesh { aa: dot(&a, &a), ab: dot(&a, &b), bb: dot(&b, &b), a }
    }

    /// `int u^2` for the state with sample `xi` and control `x`.
    fn energy(&self, xi: f64, x: f64) -> f64 {
        xi * xi * (self.aa - 2.0 * x * self.ab + x * x * self.bb)
    }
}

/// Largest nodal error of the discrete solution for the load `sin(pi s)`.
pub fn nodal_error(n: usize) -> f64 {
    let h = 1.0 / (n + 1) as f64;
    Mesh::new(n)
        .a
        .iter()
        .enumerate()
        .map(|(i, u)| (u - (PI * (i + 1) as f64 * h).sin() / (PI * PI)).abs())
        .fold(0.0, f64::max)
}

/// Observed convergence orders between consecutive meshes.
pub fn observed_orders(meshes: &[usize]) -> Vec<f64> {
    let errs: Vec<f64> = meshes.iter().map(|&n| nodal_error(n)).collect();
    meshes
        .windows(2)
        .zip(errs.windows(2))
        .map(|(m, e)| {
            let h0 = 1.0 / (m[0] + 1) as f64;
            let h1 = 1.0 / (m[1] + 1) as f64;
            (e[0] / e[1]).ln() / (h0 / h1).ln()
        })
        .collect()
}

pub fn run(cfg: &PdeConfig) -> Result<AppOutcome, AppError> {
    cfg.validate()?;
    let x_grid = MetricGrid::uniform(cfg.control_lo, cfg.control_hi, cfg.control_points)?;
    let xi_grid = MetricGrid::line(&cfg.atoms)?;
    let p = DiscreteMeasure::new((0..cfg.atoms.len()).collect(), cfg.weights.clone())?;
    let n_x = x_grid.len();
    let n_xi = cfg.atoms.len();
    let finest = *cfg.meshes.last().unwrap();
    let reference = Mesh::new(cfg.reference_refinement * (finest + 1) - 1);
    let w = cfg.control_weight;
    let table = |m: &Mesh| {
        Integrand::from_fn(n_xi, n_x, |i, x| {
            let c = x_grid.point(x)[0];
            ExtReal::of(m.energy(cfg.atoms[i], c) + w * c * c)
        })
    };
    let limit = table(&reference);
    let meshes: Vec<Mesh> = cfg.meshes.par_iter().map(|&n| Mesh::new(n)).collect();
    let integrands: Vec<Integrand> = meshes.iter().map(table).collect();
    let ps: Vec<DiscreteMeasure> = cfg
        .meshes
        .iter()
        .enumerate()
        .map(|(k, &n)| p.empirical_systematic(&mut substream(cfg.seed, k as u64 + 1), cfg.sample_factor * n * n * n))
        .collect::<Result<_, _>>()?;
    let scheme = ApproximationScheme {
        xi_grid: xi_grid.clone(),
        x_grid: x_grid.clone(),
        limit,
        integrands,
        limit_measure: p.clone(),
        measures: ps.clone(),
        schedules: None,
    };
    let sched = scheme.schedules();
    let n = cfg.meshes.len();
    let mut stages = Vec::new();

    let orders = observed_orders(&cfg.meshes);
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    stages.push(
        Stage::new("observed_order", StageKind::Check, min_order >= 1.9)
            .with_values(ExtReal::of(min_order), ExtReal::of(1.9), ExtReal::of(min_order - 1.9))
            .note(format!("orders {orders:?}")),
    );

    let discrepancy: Vec<f64> = scheme
        .integrands
        .iter()
        .map(|f| {
            f.values()
                .iter()
                .zip(scheme.limit.values())
                .map(|(a, b)| ExtReal::abs_diff(*a, *b))
                .fold(0.0, f64::max)
        })
        .collect();
    let cc_ok = discrepancy.windows(2).all(|d| d[1] < d[0]);
    stages.push(
        Stage::new("continuous_convergence", StageKind::Hypothesis, cc_ok)
            .note(format!("largest integrand discrepancy per mesh {discrepancy:?}")),
    );

    let weak = epi_convergence_weak(&scheme, None)?;
    stages.extend(weak.prefixed_stages("expectations"));

    let es = scheme.expectation_seq();
    let e = scheme.limit_expectation();
    stages.push({
        let mut s = minimizer_transfer(&x_grid, &es, &e, &sched);
        s.kind = StageKind::Conclusion;
        s
    });
    let origin = x_grid.nearest(&[0.0]);
    let mut trace = Vec::with_capacity(n);
    for (k, &mesh) in cfg.meshes.iter().enumerate() {
        let (val, at) = argmin(&es[k]);
        let mut row = TraceRow::new(mesh);
        row.estimate = Some(x_grid.point(at)[0]);
        row.value = Some(val);
        row.epi_distance = Some(attouch_wets_distance(&x_grid, &es[k], &e, 2.0, origin)?);
        row.d_p = Some(bounded_lipschitz_distance(&xi_grid, &ps[k], &p)?);
        trace.push(row);
    }
    let aw: Vec<f64> = trace.iter().map(|r| r.epi_distance.unwrap()).collect();
    stages.push(
        Stage::new("epi_distance_decreasing", StageKind::Check, aw.windows(2).all(|d| d[1] < d[0]))
            .note(format!("distances {aw:?}")),
    );
    let report = DiagnosticReport::from_stages("pde", stages, &sched, n).with_seed(cfg.seed);
    Ok(AppOutcome { report, trace, scheme })
}
