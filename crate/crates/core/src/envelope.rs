//! Inf-convolution envelopes `h_k(x) = min_y { h(y) + k d(x, y) }`, the
//! largest `k`-Lipschitz minorants of a grid function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extreal::ExtReal;
use crate::integrand::{expectation, expectation_fn, joint_lower_limit, seq_lower, Integrand};
use crate::report::{DiagnosticReport, Schedules, Stage, StageKind};
use crate::space::{DiscreteMeasure, MetricGrid};

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("modulus must be finite and nonnegative, got {0}")]
    Modulus(f64),
    #[error("function has {got} values on a grid of {len} points")]
    Length { got: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub kappa: f64,
    pub values: Vec<ExtReal>,
    /// Minimizing point for each grid point, smallest index on ties; `None`
    /// when every value is `+inf`.
    pub attained_at: Vec<Option<usize>>,
    pub all_infinite: bool,
    /// The input takes `-inf` somewhere, so the envelope is `-inf` everywhere.
    pub has_neg_inf: bool,
}

/// Envelope of `h` with modulus `kappa`. Sorted one-dimensional grids use a
/// two-pass linear scan; other grids use the direct quadratic minimization.
pub fn pasch_hausdorff(grid: &MetricGrid, h: &[ExtReal], kappa: f64) -> Result<EnvelopeResult, EnvelopeError> {
    check_inputs(grid, h, kappa)?;
    if let Some(r) = degenerate(h, kappa) {
        return Ok(r);
    }
    let attained = if grid.is_sorted_line() { scan_line(grid, h, kappa) } else { brute_argmins(grid, h, kappa) };
    Ok(finish(grid, h, kappa, attained))
}

/// Direct `O(n^2)` envelope on any grid.
pub fn pasch_hausdorff_direct(grid: &MetricGrid, h: &[ExtReal], kappa: f64) -> Result<EnvelopeResult, EnvelopeError> {
    check_inputs(grid, h, kappa)?;
    if let Some(r) = degenerate(h, kappa) {
        return Ok(r);
    }
    Ok(finish(grid, h, kappa, brute_argmins(grid, h, kappa)))
}

fn check_inputs(grid: &MetricGrid, h: &[ExtReal], kappa: f64) -> Result<(), EnvelopeError> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(EnvelopeError::Modulus(kappa));
    }
    if h.len() != grid.len() {
        return Err(EnvelopeError::Length { got: h.len(), len: grid.len() });
    }
    Ok(())
}

fn degenerate(h: &[ExtReal], kappa: f64) -> Option<EnvelopeResult> {
    let n = h.len();
    if let Some(j) = h.iter().position(|v| v.is_neg_inf()) {
        return Some(EnvelopeResult {
            kappa,
            values: vec![ExtReal::NegInf; n],
            attained_at: vec![Some(j); n],
            all_infinite: false,
            has_neg_inf: true,
        });
    }
    if h.iter().all(|v| v.is_pos_inf()) {
        return Some(EnvelopeResult {
            kappa,
            values: vec![ExtReal::PosInf; n],
            attained_at: vec![None; n],
            all_infinite: true,
            has_neg_inf: false,
        });
    }
    None
}

fn finish(grid: &MetricGrid, h: &[ExtReal], kappa: f64, attained: Vec<usize>) -> EnvelopeResult {
    let values = attained
        .iter()
        .enumerate()
        .map(|(i, &j)| h[j].shift(kappa * grid.dist(i, j)))
        .collect();
    EnvelopeResult {
        kappa,
        values,
        attained_at: attained.into_iter().map(Some).collect(),
        all_infinite: false,
        has_neg_inf: false,
    }
}

fn brute_argmins(grid: &MetricGrid, h: &[ExtReal], kappa: f64) -> Vec<usize> {
    (0..h.len())
        .map(|i| {
            let mut best = (ExtReal::PosInf, usize::MAX);
            for (j, v) in h.iter().enumerate() {
                let c = v.shift(kappa * grid.dist(i, j));
                if best.1 == usize::MAX || c < best.0 {
                    best = (c, j);
                }
            }
            best.1
        })
        .collect()
}

/// Forward and backward passes carrying the best index from each side; the
/// candidate value is always recomputed from the original data.
fn scan_line(grid: &MetricGrid, h: &[ExtReal], kappa: f64) -> Vec<usize> {
    let n = h.len();
    let val = |i: usize, j: usize| h[j].shift(kappa * grid.dist(i, j));
    let mut left = vec![0usize; n];
    for i in 1..n {
        let carry = left[i - 1];
        left[i] = if val(i, carry) <= h[i] { carry } else { i };
    }
    let mut right = vec![n - 1; n];
    for i in (0..n - 1).rev() {
        let carry = right[i + 1];
        right[i] = if h[i] <= val(i, carry) { i } else { carry };
    }
    (0..n)
        .map(|i| if val(i, left[i]) <= val(i, right[i]) { left[i] } else { right[i] })
        .collect()
}

/// Row-wise envelope `(xi, x) -> f_k(xi, x)` of a tabulated integrand.
pub fn envelope_of_integrand(x_grid: &MetricGrid, f: &Integrand, kappa: f64) -> Result<Integrand, EnvelopeError> {
    let mut values = Vec::with_capacity(f.n_xi() * f.n_x());
    for xi in 0..f.n_xi() {
        values.extend(pasch_hausdorff(x_grid, f.row(xi), kappa)?.values);
    }
    Ok(Integrand::new(f.n_xi(), f.n_x(), values).expect("shape preserved"))
}

/// Envelope values of every function in a sequence.
pub fn envelopes_of_sequence(
    grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    kappa: f64,
) -> Result<Vec<Vec<ExtReal>>, EnvelopeError> {
    hs.iter().map(|h| pasch_hausdorff(grid, h, kappa).map(|r| r.values)).collect()
}

/// Compares the joint lower limit of `h_nu(y)` at `x` with the supremum over
/// scheduled moduli of the lower limits of `h_nu,k(x)`. Skipped (hypothesis
/// unverified) unless the smallest scheduled modulus gives a lower limit
/// above `-inf` at some point. Larger moduli only raise the envelope, but a
/// short prefix cannot show them diverging, so they are not used as anchors.
pub fn envelope_liminf_identity(
    grid: &MetricGrid,
    hs: &[Vec<ExtReal>],
    x: usize,
    sched: &Schedules,
) -> Result<DiagnosticReport, EnvelopeError> {
    let n = hs.len();
    let t = sched.tail_start(n);
    let mut per_kappa = Vec::with_capacity(sched.kappa.len());
    let mut anchor = None;
    for &k in &sched.kappa {
        let envs = envelopes_of_sequence(grid, hs, k)?;
        if per_kappa.is_empty() {
            anchor = (0..grid.len()).find_map(|x0| {
                let seq: Vec<ExtReal> = envs.iter().map(|e| e[x0]).collect();
                (seq_lower(&seq, t).limit > ExtReal::NegInf).then_some((k, x0))
            });
        }
        let seq: Vec<ExtReal> = envs.iter().map(|e| e[x]).collect();
        per_kappa.push(seq_lower(&seq, t).limit);
    }
    let hyp = match anchor {
        Some((k, x0)) => Stage::new("envelope_bounded_below_somewhere", StageKind::Hypothesis, true)
            .note(format!("modulus {k}, point {x0}")),
        None => Stage::new("envelope_bounded_below_somewhere", StageKind::Hypothesis, false)
            .with_witnesses(vec!["every scheduled envelope tends to -inf at every point".into()]),
    };
    let mut stages = vec![hyp];
    if anchor.is_some() {
        let lhs = joint_lower_limit(grid, hs, x, &sched.eps, t).limit;
        let rhs = per_kappa.iter().copied().max().unwrap_or(ExtReal::NegInf);
        let ok = ExtReal::approx_eq(lhs, rhs, sched.tol);
        let trace = per_kappa.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        stages.push(
            Stage::new("liminf_equals_envelope_supremum", StageKind::Conclusion, ok)
                .with_values(lhs, rhs, ExtReal::gap(lhs, rhs))
                .with_witnesses(if ok { vec![] } else { vec![format!("point {x}: {lhs} vs {rhs}")] })
                .note(format!("per-modulus lower limits: [{trace}]")),
        );
    }
    let mut r = DiagnosticReport::from_stages("envelope_liminf_identity", stages, sched, n);
    if anchor.is_none() {
        r = r.note("identity skipped: hypothesis unverified");
    }
    Ok(r)
}

/// Checks `E_p[f_k(., x)] <= (E_p f)_k(x)` at every decision point.
pub fn interchange_inequality(
    x_grid: &MetricGrid,
    f: &Integrand,
    p: &DiscreteMeasure,
    kappa: f64,
    tol: f64,
) -> Result<DiagnosticReport, EnvelopeError> {
    let fk = envelope_of_integrand(x_grid, f, kappa)?;
    let ef = expectation_fn(f, p);
    let rhs = pasch_hausdorff(x_grid, &ef, kappa)?.values;
    let mut worst = (ExtReal::PosInf, 0usize);
    let mut witnesses = Vec::new();
    for (x, r) in rhs.iter().enumerate() {
        let l = expectation(&fk, p, x);
        let g = ExtReal::gap(*r, l);
        if g < worst.0 {
            worst = (g, x);
        }
        if !ExtReal::ge_tol(*r, l, tol) {
            witnesses.push(format!("point {x}: {l} > {r}"));
        }
    }
    let x = worst.1;
    let stage = Stage::new("expectation_of_envelope_below_envelope_of_expectation", StageKind::Check, witnesses.is_empty())
        .with_values(rhs[x], expectation(&fk, p, x), worst.0)
        .with_witnesses(witnesses);
    let mut sched = Schedules::defaults(x_grid.spacing(), 1.0, 1.0, 1, tol);
    sched.kappa = vec![kappa];
    Ok(DiagnosticReport::from_stages("interchange_inequality", vec![stage], &sched, 1))
}
