//! Finite metric grids, discrete probability measures on them, the
//! bounded-Lipschitz distance between measures, and set limits.

use std::cmp::Ordering;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{DiagnosticReport, Schedules, Stage, StageKind};

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("grid has no points")]
    EmptyGrid,
    #[error("point {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("coordinate of point {0} is not finite")]
    NonFinite(usize),
    #[error("invalid distance matrix: {0}")]
    Metric(String),
    #[error("invalid measure: {0}")]
    Measure(String),
    #[error("support index {index} outside a grid of {len} points")]
    Mismatch { index: usize, len: usize },
    #[error("radii must be finite, positive and nonincreasing")]
    Radii,
    #[error("empty ball around point {center} at radius {radius}")]
    EmptyBall { center: usize, radius: f64 },
    #[error("operation needs a one-dimensional Euclidean grid")]
    NotOneDimensional,
    #[error("linear program failed: {0}")]
    Solver(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Explicit symmetric distance matrix.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    points: Vec<Vec<f64>>,
    #[serde(default)]
    metric: Metric,
}

/// Finite metric space: labelled points plus either the Euclidean metric on
/// their coordinates or an explicit distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDoc", into = "GridDoc")]
pub struct MetricGrid {
    points: Vec<Vec<f64>>,
    metric: Metric,
    sorted_line: bool,
}

impl TryFrom<GridDoc> for MetricGrid {
    type Error = SpaceError;
    fn try_from(d: GridDoc) -> Result<Self, SpaceError> {
        MetricGrid::new(d.points, d.metric)
    }
}

impl From<MetricGrid> for GridDoc {
    fn from(g: MetricGrid) -> Self {
        GridDoc { points: g.points, metric: g.metric }
    }
}

const BALL_SLACK: f64 = 1e-12;

impl MetricGrid {
    pub fn new(points: Vec<Vec<f64>>, metric: Metric) -> Result<Self, SpaceError> {
        if points.is_empty() {
            return Err(SpaceError::EmptyGrid);
        }
        let dim = points[0].len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(SpaceError::Dimension { index: i, got: p.len(), expected: dim });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(SpaceError::NonFinite(i));
            }
        }
        if let Metric::Matrix(m) = &metric {
            validate_matrix(m, points.len())?;
        }
        let sorted_line = matches!(metric, Metric::Euclidean)
            && dim == 1
            && points.windows(2).all(|w| w[0][0] < w[1][0]);
        Ok(MetricGrid { points, metric, sorted_line })
    }

    pub fn euclidean(points: Vec<Vec<f64>>) -> Result<Self, SpaceError> {
        Self::new(points, Metric::Euclidean)
    }

    /// One-dimensional grid from coordinates.
    pub fn line(coords: &[f64]) -> Result<Self, SpaceError> {
        Self::euclidean(coords.iter().map(|&c| vec![c]).collect())
    }

    /// `n` equally spaced points from `a` to `b` inclusive.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self, SpaceError> {
        if n == 0 {
            return Err(SpaceError::EmptyGrid);
        }
        if n == 1 {
            return Self::line(&[a]);
        }
        let h = (b - a) / (n - 1) as f64;
        let coords: Vec<f64> = (0..n)
            .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
            .collect();
        Self::line(&coords)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Coordinates of a one-dimensional Euclidean grid.
    pub fn coords_1d(&self) -> Option<Vec<f64>> {
        (matches!(self.metric, Metric::Euclidean) && self.dim() == 1)
            .then(|| self.points.iter().map(|p| p[0]).collect())
    }

    /// True for a one-dimensional Euclidean grid with strictly increasing
    /// coordinates.
    pub fn is_sorted_line(&self) -> bool {
        self.sorted_line
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.metric {
            Metric::Matrix(m) => m[i][j],
            Metric::Euclidean => {
                if self.sorted_line {
                    (self.points[i][0] - self.points[j][0]).abs()
                } else {
                    euclid(&self.points[i], &self.points[j])
                }
            }
        }
    }

    /// Smallest positive distance between two points (`+inf` for a single
    /// point).
    pub fn spacing(&self) -> f64 {
        let n = self.len();
        if self.sorted_line {
            return self
                .points
                .windows(2)
                .map(|w| w[1][0] - w[0][0])
                .fold(f64::INFINITY, f64::min);
        }
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let d = self.dist(i, j);
                if d > 0.0 && d < best {
                    best = d;
                }
            }
        }
        best
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        if self.sorted_line {
            return self.points[n - 1][0] - self.points[0][0];
        }
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(self.dist(i, j));
            }
        }
        best
    }

    /// Indices of the closed ball of radius `r` around point `i`, ascending.
    pub fn ball(&self, i: usize, r: f64) -> Vec<usize> {
        let r = r + BALL_SLACK * (1.0 + r);
        if self.sorted_line {
            let c = self.points[i][0];
            let lo = self.points.partition_point(|p| p[0] < c - r);
            let hi = self.points.partition_point(|p| p[0] <= c + r);
            return (lo..hi).collect();
        }
        (0..self.len()).filter(|&j| self.dist(i, j) <= r).collect()
    }

    /// Index of the point closest to the given coordinates (ties to the
    /// smallest index).
    pub fn nearest(&self, coords: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.points.iter().enumerate() {
            let d = euclid(p, coords);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Cartesian product with the Euclidean product metric; point `(i, j)`
    /// has index `i * other.len() + j`.
    pub fn product(&self, other: &MetricGrid) -> Result<MetricGrid, SpaceError> {
        if !matches!(self.metric, Metric::Euclidean) || !matches!(other.metric, Metric::Euclidean) {
            return Err(SpaceError::Metric("products need Euclidean factors".into()));
        }
        let mut pts = Vec::with_capacity(self.len() * other.len());
        for a in &self.points {
            for b in &other.points {
                let mut p = a.clone();
                p.extend_from_slice(b);
                pts.push(p);
            }
        }
        MetricGrid::euclidean(pts)
    }

    /// Labels of the components of the graph joining points at distance at
    /// most `eps`; labels are the smallest index in each component.
    pub fn chain_components(&self, eps: f64) -> Vec<usize> {
        let n = self.len();
        let mut label: Vec<usize> = (0..n).collect();
        if self.sorted_line {
            for i in 1..n {
                if self.dist(i - 1, i) <= eps + BALL_SLACK * (1.0 + eps) {
                    label[i] = label[i - 1];
                }
            }
            return label;
        }
        let mut seen = vec![false; n];
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(i) = stack.pop() {
                label[i] = s;
                for j in self.ball(i, eps) {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        label
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[allow(clippy::needless_range_loop)]
fn validate_matrix(m: &[Vec<f64>], n: usize) -> Result<(), SpaceError> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(SpaceError::Metric(format!("expected a {n}x{n} matrix")));
    }
    let scale = m.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    let slack = 1e-12 * (1.0 + scale);
    for i in 0..n {
        if m[i][i] != 0.0 {
            return Err(SpaceError::Metric(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let d = m[i][j];
            if !d.is_finite() || d < 0.0 {
                return Err(SpaceError::Metric(format!("entry ({i},{j}) is not a finite nonnegative number")));
            }
            if i != j && d == 0.0 {
                return Err(SpaceError::Metric(format!("points {i} and {j} coincide")));
            }
            if d != m[j][i] {
                return Err(SpaceError::Metric(format!("asymmetric at ({i},{j})")));
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if m[i][k] > m[i][j] + m[j][k] + slack {
                    return Err(SpaceError::Metric(format!("triangle inequality fails at ({i},{j},{k})")));
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureDoc {
    support: Vec<usize>,
    weights: Vec<f64>,
}

/// Probability measure with finite support, given by grid indices and
/// weights. Support is kept sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub struct DiscreteMeasure {
    support: Vec<usize>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureDoc> for DiscreteMeasure {
    type Error = SpaceError;
    fn try_from(d: MeasureDoc) -> Result<Self, SpaceError> {
        DiscreteMeasure::new(d.support, d.weights)
    }
}

impl From<DiscreteMeasure> for MeasureDoc {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureDoc { support: m.support, weights: m.weights }
    }
}

const MASS_TOL: f64 = 1e-12;

impl DiscreteMeasure {
    pub fn new(support: Vec<usize>, weights: Vec<f64>) -> Result<Self, SpaceError> {
        if support.len() != weights.len() {
            return Err(SpaceError::Measure("support and weights differ in length".into()));
        }
        if support.is_empty() {
            return Err(SpaceError::Measure("empty support".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SpaceError::Measure("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(SpaceError::Measure(format!("weights sum to {total}, not 1")));
        }
        let mut pairs: Vec<(usize, f64)> = support.into_iter().zip(weights).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SpaceError::Measure("repeated support index".into()));
        }
        let (support, weights) = pairs.into_iter().unzip();
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn dirac(i: usize) -> Self {
        DiscreteMeasure { support: vec![i], weights: vec![1.0] }
    }

    /// Uniform weights on the given (distinct) indices.
    pub fn uniform(support: Vec<usize>) -> Result<Self, SpaceError> {
        let n = support.len();
        Self::new(support, vec![1.0 / n as f64; n])
    }

    /// Measure from a dense weight vector; zero entries are dropped.
    pub fn from_dense(dense: &[f64]) -> Result<Self, SpaceError> {
        let (s, w): (Vec<usize>, Vec<f64>) = dense
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i, *w))
            .unzip();
        Self::new(s, w)
    }

    /// Empirical measure of a sample of grid indices.
    pub fn empirical(samples: &[usize]) -> Result<Self, SpaceError> {
        if samples.is_empty() {
            return Err(SpaceError::Measure("empty sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = samples.len() as f64;
        let mut support = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for s in sorted {
            if support.last() == Some(&s) {
                *counts.last_mut().unwrap() += 1;
            } else {
                support.push(s);
                counts.push(1);
            }
        }
        let weights = counts.into_iter().map(|c| c as f64 / n).collect();
        Self::new(support, weights)
    }

    /// `n` independent draws from this measure.
    pub fn sample_iid<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        let cdf = self.cdf();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let k = cdf.partition_point(|&c| c <= u).min(self.support.len() - 1);
                self.support[k]
            })
            .collect()
    }

    /// Empirical measure of `n` iid draws.
    pub fn empirical_iid<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Self, SpaceError> {
        Self::empirical(&self.sample_iid(rng, n))
    }

    /// Systematic resampling: one uniform offset, `n` evenly spaced
    /// positions. Each atom's count is within one of `n` times its weight.
    pub fn empirical_systematic<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
    ) -> Result<Self, SpaceError> {
        if n == 0 {
            return Err(SpaceError::Measure("empty sample".into()));
        }
        let u: f64 = rng.random();
        let nf = n as f64;
        let count_below = |c: f64| -> usize { ((nf * c - u).ceil().max(0.0) as usize).min(n) };
        let cdf = self.cdf();
        let mut prev = 0usize;
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for (k, &c) in cdf.iter().enumerate() {
            let upto = if k + 1 == cdf.len() { n } else { count_below(c) };
            let cnt = upto.saturating_sub(prev);
            prev = prev.max(upto);
            if cnt > 0 {
                support.push(self.support[k]);
                weights.push(cnt as f64 / nf);
            }
        }
        Self::new(support, weights)
    }

    /// `(1 - t) p + t q`.
    pub fn mixture(p: &Self, q: &Self, t: f64) -> Result<Self, SpaceError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(SpaceError::Measure(format!("mixing weight {t} outside [0, 1]")));
        }
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        let (mut a, mut b) = (0, 0);
        while a < p.support.len() || b < q.support.len() {
            let ia = p.support.get(a).copied().unwrap_or(usize::MAX);
            let ib = q.support.get(b).copied().unwrap_or(usize::MAX);
            match ia.cmp(&ib) {
                Ordering::Less => {
                    pairs.push((ia, (1.0 - t) * p.weights[a]));
                    a += 1;
                }
                Ordering::Greater => {
                    pairs.push((ib, t * q.weights[b]));
                    b += 1;
                }
                Ordering::Equal => {
                    pairs.push((ia, (1.0 - t) * p.weights[a] + t * q.weights[b]));
                    a += 1;
                    b += 1;
                }
            }
        }
        let (s, w) = pairs.into_iter().unzip();
        Self::new(s, w)
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(index, weight)` pairs in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    /// Indices carrying positive mass.
    pub fn atoms(&self) -> Vec<usize> {
        self.iter().filter(|(_, w)| *w > 0.0).map(|(i, _)| i).collect()
    }

    pub fn dense(&self, len: usize) -> Vec<f64> {
        let mut d = vec![0.0; len];
        for (i, w) in self.iter() {
            d[i] += w;
        }
        d
    }

    pub fn mass_at(&self, i: usize) -> f64 {
        self.support.binary_search(&i).map_or(0.0, |k| self.weights[k])
    }

    /// Errors unless every support index lies in a grid of `len` points.
    pub fn check_on(&self, len: usize) -> Result<(), SpaceError> {
        match self.support.iter().find(|&&i| i >= len) {
            Some(&index) => Err(SpaceError::Mismatch { index, len }),
            None => Ok(()),
        }
    }
}

/// Signed differences `p - q` on the union of supports, zeros dropped.
fn signed_difference(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = p.iter().collect();
    for (i, w) in q.iter() {
        match out.binary_search_by_key(&i, |e| e.0) {
            Ok(k) => out[k].1 -= w,
            Err(k) => out.insert(k, (i, -w)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}

fn canonical<'a>(p: &'a DiscreteMeasure, q: &'a DiscreteMeasure) -> (&'a DiscreteMeasure, &'a DiscreteMeasure) {
    let key = |m: &DiscreteMeasure| {
        m.iter().map(|(i, w)| (i, w.to_bits())).collect::<Vec<_>>()
    };
    if key(p) <= key(q) {
        (p, q)
    } else {
        (q, p)
    }
}

/// Bounded-Lipschitz distance `sup { E_p h - E_q h : |h| <= 1, Lip(h) <= 1 }`.
///
/// On a finite space this equals optimal transport with cost `min(d, 2)`. A
/// sorted line whose relevant atoms span at most 2 uses the closed-form CDF
/// integral; everything else solves the dual linear program.
pub fn bounded_lipschitz_distance(
    grid: &MetricGrid,
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
) -> Result<f64, SpaceError> {
    p.check_on(grid.len())?;
    q.check_on(grid.len())?;
    let (p, q) = canonical(p, q);
    let diff = signed_difference(p, q);
    if diff.is_empty() {
        return Ok(0.0);
    }
    if grid.is_sorted_line() {
        let lo = grid.point(diff[0].0)[0];
        let hi = grid.point(diff[diff.len() - 1].0)[0];
        if hi - lo <= 2.0 {
            return Ok(cdf_transport(grid, &diff));
        }
    }
    lp_route(grid, &diff)
}

/// The linear-programming route of [`bounded_lipschitz_distance`], exposed
/// for cross-checking.
pub fn bounded_lipschitz_lp(
    grid: &MetricGrid,
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
) -> Result<f64, SpaceError> {
    p.check_on(grid.len())?;
    q.check_on(grid.len())?;
    let (p, q) = canonical(p, q);
    let diff = signed_difference(p, q);
    if diff.is_empty() {
        return Ok(0.0);
    }
    lp_route(grid, &diff)
}

fn lp_route(grid: &MetricGrid, diff: &[(usize, f64)]) -> Result<f64, SpaceError> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = diff.iter().map(|&(_, c)| lp.add_var(c, (-1.0, 1.0))).collect();
    for a in 0..diff.len() {
        for b in 0..diff.len() {
            if a == b {
                continue;
            }
            let d = grid.dist(diff[a].0, diff[b].0);
            if d < 2.0 {
                lp.add_constraint([(vars[a], 1.0), (vars[b], -1.0)], ComparisonOp::Le, d);
            }
        }
    }
    let sol = lp.solve().map_err(|e| SpaceError::Solver(e.to_string()))?;
    Ok(sol.objective().max(0.0))
}

fn cdf_transport(grid: &MetricGrid, diff: &[(usize, f64)]) -> f64 {
    let mut acc = 0.0;
    let mut total = 0.0;
    for w in diff.windows(2) {
        acc += w[0].1;
        total += acc.abs() * (grid.point(w[1].0)[0] - grid.point(w[0].0)[0]);
    }
    total
}

/// Wasserstein-1 distance on a one-dimensional Euclidean grid, via the
/// integral of the absolute CDF difference.
pub fn wasserstein1_1d(
    grid: &MetricGrid,
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
) -> Result<f64, SpaceError> {
    let coords = grid.coords_1d().ok_or(SpaceError::NotOneDimensional)?;
    p.check_on(grid.len())?;
    q.check_on(grid.len())?;
    let (p, q) = canonical(p, q);
    let mut diff = signed_difference(p, q);
    diff.sort_by(|a, b| coords[a.0].total_cmp(&coords[b.0]));
    let mut acc = 0.0;
    let mut total = 0.0;
    for w in diff.windows(2) {
        acc += w[0].1;
        total += acc.abs() * (coords[w[1].0] - coords[w[0].0]);
    }
    Ok(total)
}

/// Uniform measures on the closed balls around `center` with the given
/// nonincreasing radii.
pub fn mollifier_family(
    grid: &MetricGrid,
    center: usize,
    radii: &[f64],
) -> Result<Vec<DiscreteMeasure>, SpaceError> {
    if center >= grid.len() {
        return Err(SpaceError::Mismatch { index: center, len: grid.len() });
    }
    if radii.iter().any(|r| !r.is_finite() || *r <= 0.0) || radii.windows(2).any(|w| w[1] > w[0]) {
        return Err(SpaceError::Radii);
    }
    radii
        .iter()
        .map(|&r| {
            let ball = grid.ball(center, r);
            if ball.is_empty() {
                return Err(SpaceError::EmptyBall { center, radius: r });
            }
            DiscreteMeasure::uniform(ball)
        })
        .collect()
}

/// Distance from point `x` to a set of grid points (`+inf` if empty).
pub fn dist_to_set(grid: &MetricGrid, x: usize, set: &[usize]) -> f64 {
    set.iter().map(|&y| grid.dist(x, y)).fold(f64::INFINITY, f64::min)
}

/// Sets from the tail start on; the start is clamped so the tail keeps the
/// last set.
fn tail_of(sets: &[Vec<usize>], tail_start: usize) -> &[Vec<usize>] {
    &sets[tail_start.min(sets.len().saturating_sub(1))..]
}

/// Points that, for every radius, lie within that radius of the sets for
/// infinitely many indices (read as: some index at or after the tail start).
pub fn outer_limit(grid: &MetricGrid, sets: &[Vec<usize>], eps: &[f64], tail_start: usize) -> Vec<usize> {
    let tail = tail_of(sets, tail_start);
    (0..grid.len())
        .filter(|&x| {
            eps.iter()
                .all(|&e| tail.iter().any(|s| dist_to_set(grid, x, s) <= e + BALL_SLACK * (1.0 + e)))
        })
        .collect()
}

/// Points that, for every radius, lie within that radius of the sets for all
/// sufficiently large indices (every index at or after the tail start).
pub fn inner_limit(grid: &MetricGrid, sets: &[Vec<usize>], eps: &[f64], tail_start: usize) -> Vec<usize> {
    let tail = tail_of(sets, tail_start);
    if tail.is_empty() {
        return Vec::new();
    }
    (0..grid.len())
        .filter(|&x| {
            eps.iter()
                .all(|&e| tail.iter().all(|s| dist_to_set(grid, x, s) <= e + BALL_SLACK * (1.0 + e)))
        })
        .collect()
}

/// Checks that a sequence of point sets converges to `target`: the target
/// sits inside the inner limit and the outer limit sits inside the target.
pub fn set_converges(
    grid: &MetricGrid,
    sets: &[Vec<usize>],
    target: &[usize],
    eps: &[f64],
    tail_start: usize,
) -> DiagnosticReport {
    let inner = inner_limit(grid, sets, eps, tail_start);
    let outer = outer_limit(grid, sets, eps, tail_start);
    let missing: Vec<String> = target
        .iter()
        .filter(|t| inner.binary_search(t).is_err())
        .map(|t| format!("target point {t} not in inner limit"))
        .collect();
    let extra: Vec<String> = outer
        .iter()
        .filter(|o| !target.contains(o))
        .map(|o| format!("outer-limit point {o} not in target"))
        .collect();
    let mut sched = Schedules::defaults(grid.spacing().min(1.0), 1.0, 1.0, sets.len(), 0.0);
    sched.eps = eps.to_vec();
    sched.tail_start = Some(tail_start);
    let stages = vec![
        Stage::new("target_within_inner_limit", StageKind::Check, missing.is_empty())
            .with_witnesses(missing)
            .note(format!("inner limit has {} points", inner.len())),
        Stage::new("outer_limit_within_target", StageKind::Check, extra.is_empty())
            .with_witnesses(extra)
            .note(format!("outer limit has {} points", outer.len())),
    ];
    DiagnosticReport::from_stages("set_convergence", stages, &sched, sets.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_grid_endpoints_exact() {
        let g = MetricGrid::uniform(-1.0, 1.0, 513).unwrap();
        assert_eq!(g.point(0)[0], -1.0);
        assert_eq!(g.point(512)[0], 1.0);
        assert_eq!(g.point(256)[0], 0.0);
        assert!(g.is_sorted_line());
        assert!((g.spacing() - 1.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_metric_validation() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        let bad = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]];
        assert!(matches!(MetricGrid::new(pts.clone(), Metric::Matrix(bad)), Err(SpaceError::Metric(_))));
        let asym = vec![vec![0.0, 1.0, 2.0], vec![1.5, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
        assert!(MetricGrid::new(pts.clone(), Metric::Matrix(asym)).is_err());
        let ok = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
        assert!(MetricGrid::new(pts, Metric::Matrix(ok)).is_ok());
    }

    #[test]
    fn ball_on_line_matches_scan() {
        let g = MetricGrid::uniform(0.0, 1.0, 11).unwrap();
        let h = MetricGrid::new(g.points().to_vec(), Metric::Euclidean).unwrap();
        let scan: Vec<usize> = (0..11).filter(|&j| (h.point(j)[0] - 0.5).abs() <= 0.2 + 1e-9).collect();
        assert_eq!(g.ball(5, 0.2), scan);
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![0, 1], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(vec![1, 1], vec![0.5, 0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![0], vec![f64::NAN]).is_err());
        let m = DiscreteMeasure::new(vec![3, 1], vec![0.25, 0.75]).unwrap();
        assert_eq!(m.support(), &[1, 3]);
        assert_eq!(m.mass_at(3), 0.25);
        assert_eq!(m.check_on(3), Err(SpaceError::Mismatch { index: 3, len: 3 }));
    }

    #[test]
    fn systematic_counts_within_one() {
        let p = DiscreteMeasure::new(vec![0, 1, 2], vec![0.3, 0.4, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 7, 64, 1000] {
            let e = p.empirical_systematic(&mut rng, n).unwrap();
            for i in 0..3 {
                assert!((e.mass_at(i) * n as f64 - p.mass_at(i) * n as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn dirac_distance_is_capped_distance() {
        let g = MetricGrid::uniform(0.0, 5.0, 6).unwrap();
        for (a, b, want) in [(0, 1, 1.0), (0, 2, 2.0), (0, 5, 2.0), (3, 3, 0.0)] {
            let d = bounded_lipschitz_distance(&g, &DiscreteMeasure::dirac(a), &DiscreteMeasure::dirac(b)).unwrap();
            assert!((d - want).abs() < 1e-9, "{a} {b} {d}");
        }
    }

    #[test]
    fn cdf_and_lp_routes_agree() {
        let g = MetricGrid::uniform(0.0, 1.0, 9).unwrap();
        let p = DiscreteMeasure::new(vec![0, 4, 8], vec![0.2, 0.5, 0.3]).unwrap();
        let q = DiscreteMeasure::new(vec![1, 2, 7], vec![0.6, 0.1, 0.3]).unwrap();
        let a = bounded_lipschitz_distance(&g, &p, &q).unwrap();
        let b = bounded_lipschitz_lp(&g, &p, &q).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} {b}");
        assert_eq!(a, bounded_lipschitz_distance(&g, &q, &p).unwrap());
    }

    #[test]
    fn mollifier_radii_validated() {
        let g = MetricGrid::uniform(-1.0, 1.0, 21).unwrap();
        assert_eq!(mollifier_family(&g, 10, &[0.1, 0.2]), Err(SpaceError::Radii));
        let f = mollifier_family(&g, 10, &[0.2, 0.1, 0.01]).unwrap();
        assert_eq!(f[0].support().len(), 5);
        assert_eq!(f[2].support(), &[10]);
    }

    #[test]
    fn alternating_sets_limits() {
        let g = MetricGrid::uniform(0.0, 1.0, 5).unwrap();
        let sets: Vec<Vec<usize>> = (0..20).map(|k| if k % 2 == 0 { vec![0] } else { vec![4] }).collect();
        assert_eq!(outer_limit(&g, &sets, &[0.1], 10), vec![0, 4]);
        assert!(inner_limit(&g, &sets, &[0.1], 10).is_empty());
        let r = set_converges(&g, &sets, &[0], &[0.1], 10);
        assert_eq!(r.verdict, crate::report::Verdict::Fail);
    }

    #[test]
    fn json_round_trip() {
        let g = MetricGrid::uniform(0.0, 1.0, 3).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<MetricGrid>(&s).unwrap(), g);
        let bad = r#"{"points":[[0.0]],"metric":"euclidean","extra":1}"#;
        assert!(serde_json::from_str::<MetricGrid>(bad).is_err());
        let m: DiscreteMeasure = serde_json::from_str(r#"{"support":[2,0],"weights":[0.5,0.5]}"#).unwrap();
        assert_eq!(m.support(), &[0, 2]);
    }
}
