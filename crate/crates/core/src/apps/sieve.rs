//! Histogram sieve maximum likelihood on a fine grid of `[0, 1]`, with the
//! fitting measure allowed to move away from the empirical one at a price.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require, substream, AppError, AppOutcome, TraceRow};
use crate::epi::{epi_convergence_weak, ApproximationScheme};
use crate::extreal::ExtReal;
use crate::integrand::Integrand;
use crate::report::{DiagnosticReport, Schedules, Stage, StageKind};
use crate::space::{bounded_lipschitz_distance, set_converges, DiscreteMeasure, Metric, MetricGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    /// `2s` on `[0, 1]`.
    Ramp,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SieveConfig {
    /// Number of cell midpoints discretizing `[0, 1]`.
    pub grid_points: usize,
    pub density: Density,
    pub sample_sizes: Vec<usize>,
    /// Bins per sample size; `ceil(n^(1/3))` when absent.
    pub bins: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub mixing: Vec<f64>,
    /// Penalty weight `n^theta_power`.
    pub theta_power: f64,
    /// Use the true measure instead of samples.
    pub exact_measures: bool,
}

impl Default for SieveConfig {
    fn default() -> Self {
        SieveConfig {
            grid_points: 256,
            density: Density::Ramp,
            sample_sizes: vec![64, 256, 1024],
            bins: None,
            seeds: (1..=20).collect(),
            mixing: vec![0.0, 0.1, 0.25, 0.5],
            theta_power: 0.25,
            exact_measures: false,
        }
    }
}

impl SieveConfig {
    fn validate(&self) -> Result<(), AppError> {
        require(self.grid_points >= 2, "grid_points must be at least 2")?;
        require(!self.sample_sizes.is_empty(), "sample_sizes must be nonempty")?;
        require(self.sample_sizes.windows(2).all(|w| w[0] < w[1]), "sample_sizes must increase")?;
        require(self.sample_sizes[0] >= 1, "sample sizes must be positive")?;
        require(!self.seeds.is_empty(), "seeds must be nonempty")?;
        require(
            !self.mixing.is_empty() && self.mixing.iter().all(|t| (0.0..=1.0).contains(t)),
            "mixing weights must lie in [0, 1]",
        )?;
        require(self.theta_power >= 0.0, "theta_power must be nonnegative")?;
        if let Some(b) = &self.bins {
            require(b.len() == self.sample_sizes.len(), "bins must match sample_sizes")?;
            require(b.iter().all(|&k| k >= 1 && k <= self.grid_points), "bins must lie in [1, grid_points]")?;
        }
        Ok(())
    }

    pub fn bins(&self) -> Vec<usize> {
        self.bins
            .clone()
            .unwrap_or_else(|| self.sample_sizes.iter().map(|&n| (n as f64).cbrt().ceil() as usize).collect())
    }
}

/// Bin boundaries: bin `j` covers cells `floor(j M / b) .. floor((j + 1) M / b)`.
pub fn bin_edges(m: usize, b: usize) -> Vec<usize> {
    (0..=b).map(|j| j * m / b).collect()
}

/// Probability mass function of the best `b`-bin histogram for `q`: each bin
/// keeps its mass, spread evenly over its cells.
pub fn histogram_fit(q: &[f64], b: usize) -> Vec<f64> {
    let edges = bin_edges(q.len(), b);
    let mut out = vec![0.0; q.len()];
    for w in edges.windows(2) {
        let mass: f64 = q[w[0]..w[1]].iter().sum();
        let each = mass / (w[1] - w[0]) as f64;
        out[w[0]..w[1]].iter_mut().for_each(|v| *v = each);
    }
    out
}

/// `-sum q log x`, with `0 log 0 = 0`.
pub fn cross_entropy(q: &[f64], x: &[f64]) -> ExtReal {
    ExtReal::integrate(q.iter().zip(x).map(|(&w, &v)| (w, ExtReal::of(-v.ln()))))
}

/// L1 distance between the densities of two mass functions on `m` cells.
pub fn l1_density_error(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (m * x - m * y).abs()).sum::<f64>() / m
}

fn true_pmf(density: Density, m: usize) -> Vec<f64> {
    let mf = m as f64;
    match density {
        Density::Ramp => (0..m).map(|i| (2 * i + 1) as f64 / (mf * mf)).collect(),
        Density::Uniform => vec![1.0 / mf; m],
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// One fit: the estimate, the optimal value and `d(P_n, P)`.
struct Fit {
    estimate: Vec<f64>,
    value: ExtReal,
    d_p: f64,
}

fn fit(grid: &MetricGrid, p: &DiscreteMeasure, pn: &DiscreteMeasure, b: usize, theta: f64, mixing: &[f64]) -> Result<Fit, AppError> {
    let m = grid.len();
    let u = DiscreteMeasure::uniform((0..m).collect())?;
    let mut best: Option<(ExtReal, Vec<f64>)> = None;
    for &t in mixing {
        let q = DiscreteMeasure::mixture(pn, &u, t)?;
        let qd = q.dense(m);
        let x = histogram_fit(&qd, b);
        let value = cross_entropy(&qd, &x).shift(theta * bounded_lipschitz_distance(grid, &q, pn)?);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, x));
        }
    }
    let (value, estimate) = best.expect("mixing grid is nonempty");
    Ok(Fit { estimate, value, d_p: bounded_lipschitz_distance(grid, pn, p)? })
}

pub fn run(cfg: &SieveConfig) -> Result<AppOutcome, AppError> {
    cfg.validate()?;
    let m = cfg.grid_points;
    let mf = m as f64;
    let grid = MetricGrid::line(&(0..m).map(|i| (i as f64 + 0.5) / mf).collect::<Vec<_>>())?;
    let pmf = true_pmf(cfg.density, m);
    let p = DiscreteMeasure::from_dense(&pmf)?;
    let bins = cfg.bins();
    let thetas: Vec<f64> = cfg.sample_sizes.iter().map(|&n| (n as f64).powf(cfg.theta_power)).collect();
    let k = cfg.sample_sizes.len();

    // fits[s][nu]
    let fits: Vec<Vec<(Fit, DiscreteMeasure)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            cfg.sample_sizes
                .iter()
                .enumerate()
                .map(|(nu, &n)| {
                    let pn = if cfg.exact_measures {
                        p.clone()
                    } else {
                        p.empirical_iid(&mut substream(seed, nu as u64), n)?
                    };
                    Ok((fit(&grid, &p, &pn, bins[nu], thetas[nu], &cfg.mixing)?, pn))
                })
                .collect::<Result<Vec<_>, AppError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut med_err = Vec::with_capacity(k);
    let mut med_wd = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    for nu in 0..k {
        let mut errs: Vec<f64> = fits.iter().map(|f| l1_density_error(&f[nu].0.estimate, &pmf)).collect();
        let mut wd: Vec<f64> = fits.iter().map(|f| thetas[nu] * f[nu].0.d_p).collect();
        let mut vals: Vec<f64> = fits.iter().map(|f| f[nu].0.value.to_f64()).collect();
        let mut dps: Vec<f64> = fits.iter().map(|f| f[nu].0.d_p).collect();
        med_err.push(median(&mut errs));
        med_wd.push(median(&mut wd));
        let mut row = TraceRow::new(cfg.sample_sizes[nu]);
        row.estimate = Some(med_err[nu]);
        row.value = Some(ExtReal::of(median(&mut vals)));
        row.d_p = Some(median(&mut dps));
        trace.push(row);
    }

    let mut stages = Vec::new();
    stages.push(Stage::new("penalty_weight_increasing", StageKind::Hypothesis, thetas.windows(2).all(|w| w[1] > w[0])));
    stages.push(
        Stage::new("weighted_distance_decreasing", StageKind::Hypothesis, med_wd.windows(2).all(|w| w[1] < w[0]) || cfg.exact_measures)
            .note(format!("median weighted distances {med_wd:?}")),
    );

    // Dictionary of candidate estimates: the distinct sieve projections of the
    // truth, then the truth itself, under the L1 density metric.
    let mut dict: Vec<Vec<f64>> = Vec::new();
    let index_of = |x: Vec<f64>, dict: &mut Vec<Vec<f64>>| match dict.iter().position(|d| l1_density_error(d, &x) == 0.0) {
        Some(i) => i,
        None => {
            dict.push(x);
            dict.len() - 1
        }
    };
    let proj: Vec<usize> = bins.iter().map(|&b| index_of(histogram_fit(&pmf, b), &mut dict)).collect();
    let truth = index_of(pmf.clone(), &mut dict);
    let nd = dict.len();
    let dmat: Vec<Vec<f64>> = dict.iter().map(|a| dict.iter().map(|b| l1_density_error(a, b)).collect()).collect();
    let approx: Vec<f64> = proj.iter().map(|&j| dmat[j][truth]).collect();
    stages.push(
        Stage::new("sieve_approximation_decreasing", StageKind::Hypothesis, approx.windows(2).all(|w| w[1] <= w[0]))
            .note(format!("distances from the truth to each sieve {approx:?}")),
    );
    let x_grid = if nd == 1 {
        MetricGrid::line(&[0.0])?
    } else {
        MetricGrid::new((0..nd).map(|i| vec![i as f64]).collect(), Metric::Matrix(dmat))?
    };
    let sets: Vec<Vec<usize>> = proj.iter().map(|&j| vec![j]).collect();
    let set_eps: Vec<f64> = approx.iter().copied().filter(|d| *d > 0.0).collect();
    let set_eps = if set_eps.is_empty() { vec![1e-9] } else { set_eps };
    let sc = set_converges(&x_grid, &sets, &[truth], &set_eps, k - 1);
    for mut s in sc.prefixed_stages("sieve_sets") {
        s.kind = StageKind::Info;
        stages.push(s);
    }

    // Loss -log x(xi) plus the sieve indicator, under the first seed's measures.
    let f = Integrand::from_fn(m, nd, |i, x| ExtReal::of(-dict[x][i].ln()));
    let integrands: Vec<Integrand> = (0..k)
        .map(|nu| Integrand::from_fn(m, nd, |i, x| if sets[nu].contains(&x) { f.get(i, x) } else { ExtReal::PosInf }))
        .collect();
    let scheme = ApproximationScheme {
        xi_grid: grid.clone(),
        x_grid: x_grid.clone(),
        limit: f,
        integrands,
        limit_measure: p.clone(),
        measures: fits[0].iter().map(|(_, pn)| pn.clone()).collect(),
        schedules: None,
    };
    let sched: Schedules = scheme.schedules();
    if k >= 2 {
        let weak = epi_convergence_weak(&scheme, None)?;
        for mut s in weak.prefixed_stages("evidence") {
            s.kind = StageKind::Info;
            stages.push(s);
        }
    }

    let exact = cfg.exact_measures && approx[0] == 0.0;
    let err_ok = if exact {
        med_err.iter().all(|e| *e <= 1e-9)
    } else {
        med_err.windows(2).all(|w| w[1] < w[0])
    };
    stages.push(
        Stage::new("median_error_decreasing", StageKind::Conclusion, err_ok)
            .with_values(ExtReal::of(med_err[k - 1]), ExtReal::of(med_err[0]), ExtReal::of(med_err[0] - med_err[k - 1]))
            .note(format!("median L1 errors {med_err:?}")),
    );
    let report = DiagnosticReport::from_stages("sieve", stages, &sched, k).note(format!("seeds {:?}", cfg.seeds));
    Ok(AppOutcome { report, trace, scheme })
}
