//! Extended-real scalars and finite-prefix limit surrogates.
//!
//! [`ExtReal`] carries the integral conventions used throughout the crate:
//! `(+inf) - a = +inf` for every `a`, and `b - (+inf) = -inf` for finite `b`.
//! Weighted sums are always formed by splitting into positive and negative
//! parts first and combining them with [`ExtReal::sub_conv`] once at the end.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Neg};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtRealError {
    #[error("NaN is not an extended real")]
    NaN,
    #[error("empty sequence")]
    EmptySequence,
    #[error("tail start {start} is beyond sequence length {len}")]
    TailStart { start: usize, len: usize },
}

/// A point of `[-inf, +inf]`. Finite values are never NaN.
#[derive(Debug, Clone, Copy)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn new(v: f64) -> Result<Self, ExtRealError> {
        if v.is_nan() {
            Err(ExtRealError::NaN)
        } else if v == f64::INFINITY {
            Ok(ExtReal::PosInf)
        } else if v == f64::NEG_INFINITY {
            Ok(ExtReal::NegInf)
        } else {
            Ok(ExtReal::Finite(v))
        }
    }

    /// Infallible constructor for values produced by arithmetic that cannot
    /// yield NaN. Panics on NaN.
    pub fn of(v: f64) -> Self {
        Self::new(v).expect("NaN reached ExtReal::of")
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn is_pos_inf(self) -> bool {
        matches!(self, ExtReal::PosInf)
    }

    pub fn is_neg_inf(self) -> bool {
        matches!(self, ExtReal::NegInf)
    }

    /// `max(a, 0)`.
    pub fn plus_part(self) -> ExtReal {
        match self {
            ExtReal::NegInf => ExtReal::ZERO,
            ExtReal::Finite(v) => ExtReal::Finite(v.max(0.0)),
            ExtReal::PosInf => ExtReal::PosInf,
        }
    }

    /// `-min(a, 0)`.
    pub fn minus_part(self) -> ExtReal {
        match self {
            ExtReal::NegInf => ExtReal::PosInf,
            ExtReal::Finite(v) => ExtReal::Finite((-v).max(0.0)),
            ExtReal::PosInf => ExtReal::ZERO,
        }
    }

    /// `a - b` with `(+inf) - b = +inf` for all `b` and `a - (+inf) = -inf`
    /// for finite `a`. The remaining case `(-inf) - (-inf)` resolves to
    /// `+inf`, matching the `(+inf) + a = +inf` orientation of [`Add`].
    pub fn sub_conv(a: ExtReal, b: ExtReal) -> ExtReal {
        match (a, b) {
            (ExtReal::PosInf, _) => ExtReal::PosInf,
            (_, ExtReal::NegInf) => ExtReal::PosInf,
            (_, ExtReal::PosInf) => ExtReal::NegInf,
            (ExtReal::NegInf, ExtReal::Finite(_)) => ExtReal::NegInf,
            (ExtReal::Finite(x), ExtReal::Finite(y)) => ExtReal::of(x - y),
        }
    }

    /// Multiplication by a nonnegative weight, with `0 * (+-inf) = 0`.
    pub fn scale(self, w: f64) -> ExtReal {
        debug_assert!(w >= 0.0);
        if w == 0.0 {
            return ExtReal::ZERO;
        }
        match self {
            ExtReal::Finite(v) => ExtReal::of(v * w),
            inf => inf,
        }
    }

    /// `a + c` for a finite real shift.
    pub fn shift(self, c: f64) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::of(v + c),
            inf => inf,
        }
    }

    /// Integral of a function against nonnegative weights: the weighted sum of
    /// positive parts minus the weighted sum of negative parts. Zero weights
    /// contribute nothing even against infinite values.
    pub fn integrate<I>(terms: I) -> ExtReal
    where
        I: IntoIterator<Item = (f64, ExtReal)>,
    {
        let mut plus = 0.0_f64;
        let mut plus_inf = false;
        let mut minus = 0.0_f64;
        let mut minus_inf = false;
        for (w, v) in terms {
            if w == 0.0 {
                continue;
            }
            match v {
                ExtReal::PosInf => plus_inf = true,
                ExtReal::NegInf => minus_inf = true,
                ExtReal::Finite(x) if x >= 0.0 => plus += w * x,
                ExtReal::Finite(x) => minus += w * (-x),
            }
        }
        let plus = if plus_inf { ExtReal::PosInf } else { ExtReal::of(plus) };
        let minus = if minus_inf { ExtReal::PosInf } else { ExtReal::of(minus) };
        ExtReal::sub_conv(plus, minus)
    }

    /// Signed margin of the inequality `lhs >= rhs`. Equal infinities have
    /// margin zero.
    pub fn gap(lhs: ExtReal, rhs: ExtReal) -> ExtReal {
        match (lhs, rhs) {
            (ExtReal::PosInf, ExtReal::PosInf) | (ExtReal::NegInf, ExtReal::NegInf) => {
                ExtReal::ZERO
            }
            (ExtReal::PosInf, _) | (_, ExtReal::NegInf) => ExtReal::PosInf,
            (_, ExtReal::PosInf) | (ExtReal::NegInf, _) => ExtReal::NegInf,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::of(a - b),
        }
    }

    /// `lhs >= rhs - tol`, exact on infinite values.
    pub fn ge_tol(lhs: ExtReal, rhs: ExtReal, tol: f64) -> bool {
        match ExtReal::gap(lhs, rhs) {
            ExtReal::Finite(g) => g >= -tol,
            ExtReal::PosInf => true,
            ExtReal::NegInf => false,
        }
    }

    /// Same infinity, or finite values within `tol`.
    pub fn approx_eq(a: ExtReal, b: ExtReal, tol: f64) -> bool {
        match (a, b) {
            (ExtReal::Finite(x), ExtReal::Finite(y)) => (x - y).abs() <= tol,
            _ => a == b,
        }
    }

    /// Distance `|a - b|` where equal infinities are at distance zero.
    pub fn abs_diff(a: ExtReal, b: ExtReal) -> f64 {
        match (a, b) {
            (ExtReal::Finite(x), ExtReal::Finite(y)) => (x - y).abs(),
            _ if a == b => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// Same category (finite, `+inf`, `-inf`).
    pub fn same_kind(a: ExtReal, b: ExtReal) -> bool {
        a.is_finite() == b.is_finite() && a.is_pos_inf() == b.is_pos_inf()
    }
}

impl PartialEq for ExtReal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ExtReal {}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        use ExtReal::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Ordering::Equal,
            (NegInf, _) | (_, PosInf) => Ordering::Less,
            (_, NegInf) | (PosInf, _) => Ordering::Greater,
            (Finite(a), Finite(b)) => a.partial_cmp(b).expect("finite ExtReal is never NaN"),
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    /// `(+inf) + a = +inf` for every `a`; otherwise `-inf` absorbs finite values.
    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::PosInf, _) | (_, ExtReal::PosInf) => ExtReal::PosInf,
            (ExtReal::NegInf, _) | (_, ExtReal::NegInf) => ExtReal::NegInf,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::of(a + b),
        }
    }
}

impl Neg for ExtReal {
    type Output = ExtReal;

    fn neg(self) -> ExtReal {
        match self {
            ExtReal::NegInf => ExtReal::PosInf,
            ExtReal::Finite(v) => ExtReal::Finite(-v),
            ExtReal::PosInf => ExtReal::NegInf,
        }
    }
}

impl From<i32> for ExtReal {
    fn from(v: i32) -> Self {
        ExtReal::Finite(v as f64)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => f.write_str("-inf"),
            ExtReal::PosInf => f.write_str("+inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::NegInf => s.serialize_str("-inf"),
            ExtReal::PosInf => s.serialize_str("+inf"),
            ExtReal::Finite(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ExtVisitor;

        impl Visitor<'_> for ExtVisitor {
            type Value = ExtReal;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, \"+inf\" or \"-inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtReal, E> {
                ExtReal::new(v).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtReal, E> {
                Ok(ExtReal::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtReal, E> {
                Ok(ExtReal::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtReal, E> {
                match v {
                    "+inf" | "inf" => Ok(ExtReal::PosInf),
                    "-inf" => Ok(ExtReal::NegInf),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        d.deserialize_any(ExtVisitor)
    }
}

/// Infimum of `seq[tail_start..]`.
///
/// This is the finite-prefix stand-in for a lower limit: the tail infimum is
/// nondecreasing in the tail start and equals the lower limit once the
/// sequence has settled.
pub fn liminf_seq(seq: &[ExtReal], tail_start: usize) -> Result<ExtReal, ExtRealError> {
    check_tail(seq, tail_start)?;
    Ok(seq[tail_start..].iter().copied().min().expect("nonempty tail"))
}

/// Supremum of `seq[tail_start..]`.
pub fn limsup_seq(seq: &[ExtReal], tail_start: usize) -> Result<ExtReal, ExtRealError> {
    check_tail(seq, tail_start)?;
    Ok(seq[tail_start..].iter().copied().max().expect("nonempty tail"))
}

/// Largest tail infimum over a list of tail starts.
pub fn liminf_over_starts(seq: &[ExtReal], starts: &[usize]) -> Result<ExtReal, ExtRealError> {
    let mut best = None;
    for &s in starts {
        let v = liminf_seq(seq, s)?;
        best = Some(best.map_or(v, |b: ExtReal| b.max(v)));
    }
    best.ok_or(ExtRealError::EmptySequence)
}

fn check_tail(seq: &[ExtReal], tail_start: usize) -> Result<(), ExtRealError> {
    if seq.is_empty() {
        return Err(ExtRealError::EmptySequence);
    }
    if tail_start >= seq.len() {
        return Err(ExtRealError::TailStart { start: tail_start, len: seq.len() });
    }
    Ok(())
}

/// Default tail start for a prefix of `n` terms: the second half.
pub fn default_tail_start(n: usize) -> usize {
    n / 2
}

/// Shape of a finite prefix, read off three geometric blocks of indices
/// `[n/8, n/4)`, `[n/4, n/2)`, `[n/2, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    /// Fewer than eight terms.
    Insufficient,
    Settled,
    Decreasing,
    Increasing,
    /// Block increments do not shrink: the statistic heads to `-inf`.
    DivergingDown,
    /// Block increments do not shrink: the statistic heads to `+inf`.
    DivergingUp,
    Mixed,
}

/// Convergent power-law tails shrink block increments by `2^-p`; a ratio at or
/// above this is read as divergence.
const DIVERGENCE_RATIO: f64 = 0.95;
const MIN_TREND_TERMS: usize = 8;

fn blocks(n: usize) -> Option<[(usize, usize); 3]> {
    if n < MIN_TREND_TERMS {
        return None;
    }
    let b1 = n.div_ceil(8);
    let b2 = n.div_ceil(4);
    let b3 = n.div_ceil(2);
    Some([(b1, b2), (b2, b3), (b3, n)])
}

fn classify(m: [ExtReal; 3]) -> Trend {
    let [m1, m2, m3] = m;
    if m3.is_neg_inf() {
        return Trend::DivergingDown;
    }
    if m3.is_pos_inf() {
        return if m2.is_pos_inf() { Trend::Settled } else { Trend::DivergingUp };
    }
    let (Some(a), Some(b), Some(c)) = (m1.finite(), m2.finite(), m3.finite()) else {
        return Trend::Mixed;
    };
    let thr = 1e-9 * (1.0 + a.abs() + c.abs());
    let d1 = a - b;
    let d2 = b - c;
    if d2.abs() <= thr {
        return Trend::Settled;
    }
    if d1 > thr && d2 > thr {
        if d2 >= DIVERGENCE_RATIO * d1 {
            Trend::DivergingDown
        } else {
            Trend::Decreasing
        }
    } else if d1 < -thr && d2 < -thr {
        if -d2 >= DIVERGENCE_RATIO * -d1 {
            Trend::DivergingUp
        } else {
            Trend::Increasing
        }
    } else {
        Trend::Mixed
    }
}

/// Fraction of the last block increment that the two halves of the last
/// block must still move by for a divergent trend to stand.
const HALF_BLOCK_RATIO: f64 = 0.2;

/// A sequence that has settled inside the last block is not diverging, even
/// if its block minima moved by similar amounts before (oscillating tails
/// with two decay rates do this).
fn confirm_divergence(seq: &[ExtReal], bs: [(usize, usize); 3], trend: Trend) -> Trend {
    if !matches!(trend, Trend::DivergingDown | Trend::DivergingUp) {
        return trend;
    }
    let min = |lo: usize, hi: usize| seq[lo..hi].iter().copied().min().unwrap().finite();
    let (lo, hi) = bs[2];
    let mid = lo + (hi - lo) / 2;
    let (Some(m2), Some(m3), Some(h1), Some(h2)) = (min(bs[1].0, bs[1].1), min(lo, hi), min(lo, mid), min(mid, hi)) else {
        return trend;
    };
    let (step, half) = if trend == Trend::DivergingDown { (m2 - m3, h1 - h2) } else { (m3 - m2, h2 - h1) };
    if half >= HALF_BLOCK_RATIO * step {
        trend
    } else if trend == Trend::DivergingDown {
        Trend::Decreasing
    } else {
        Trend::Increasing
    }
}

/// Finite-prefix summary of a lower or upper limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailStat {
    /// Tail infimum (lower) or supremum (upper) from the tail start.
    pub tail: ExtReal,
    pub trend: Trend,
    /// `tail`, replaced by the matching infinity when the trend diverges.
    pub limit: ExtReal,
    pub prefix_len: usize,
}

/// Lower-limit surrogate: tail infimum, or `-inf`/`+inf` when the block
/// minima diverge and the tail is not constant.
pub fn lower_limit(seq: &[ExtReal], tail_start: usize) -> Result<TailStat, ExtRealError> {
    let tail = liminf_seq(seq, tail_start)?;
    let t = tail_start.min(seq.len() - 1);
    let constant_tail = seq.len() - t >= 2 && seq[t..].iter().all(|v| *v == seq[t]);
    let trend = match blocks(seq.len()) {
        None => Trend::Insufficient,
        // An eventually constant sequence has settled, whatever came before.
        Some(_) if constant_tail => Trend::Settled,
        Some(bs) => confirm_divergence(seq, bs, classify(bs.map(|(lo, hi)| seq[lo..hi].iter().copied().min().unwrap()))),
    };
    let limit = match trend {
        Trend::DivergingDown => ExtReal::NegInf,
        Trend::DivergingUp => ExtReal::PosInf,
        _ => tail,
    };
    Ok(TailStat { tail, trend, limit, prefix_len: seq.len() })
}

/// Upper-limit surrogate, the mirror of [`lower_limit`].
pub fn upper_limit(seq: &[ExtReal], tail_start: usize) -> Result<TailStat, ExtRealError> {
    let neg: Vec<ExtReal> = seq.iter().map(|v| -*v).collect();
    let s = lower_limit(&neg, tail_start)?;
    let trend = match s.trend {
        Trend::DivergingDown => Trend::DivergingUp,
        Trend::DivergingUp => Trend::DivergingDown,
        Trend::Decreasing => Trend::Increasing,
        Trend::Increasing => Trend::Decreasing,
        t => t,
    };
    Ok(TailStat { tail: -s.tail, trend, limit: -s.limit, prefix_len: s.prefix_len })
}

/// Evidence that a nonnegative sequence tends to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vanishing {
    pub vanishes: bool,
    /// Largest value over the final block (or the whole tail if short).
    pub last_block_max: f64,
    /// Aitken estimate of the limit of the block maxima when they decrease
    /// geometrically; `None` otherwise.
    pub extrapolated: Option<f64>,
}

/// Decides whether a nonnegative sequence tends to zero: either the final
/// block is already below `tol`, the block maxima decrease with shrinking
/// increments and their Aitken extrapolation is below `tol`, or each block
/// maximum is at most half the previous one (power-law decay on doubling
/// blocks).
pub fn vanishes(seq: &[f64], tol: f64) -> Vanishing {
    let n = seq.len();
    let Some(bs) = blocks(n) else {
        let start = default_tail_start(n);
        let last = seq[start..].iter().copied().fold(0.0, f64::max);
        let decreasing = seq.windows(2).all(|w| w[1] <= w[0]);
        return Vanishing {
            vanishes: last <= tol || (decreasing && n >= 2 && seq[n - 1] <= 0.5 * seq[0]),
            last_block_max: last,
            extrapolated: None,
        };
    };
    let m = bs.map(|(lo, hi)| seq[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let last = m[2];
    if last <= tol {
        return Vanishing { vanishes: true, last_block_max: last, extrapolated: None };
    }
    let d1 = m[0] - m[1];
    let d2 = m[1] - m[2];
    let extrapolated = if d1 > 0.0 && d2 > 0.0 && d2 < DIVERGENCE_RATIO * d1 {
        let r = d2 / d1;
        Some((m[2] - d2 * r / (1.0 - r)).max(0.0))
    } else {
        None
    };
    Vanishing {
        vanishes: extrapolated.is_some_and(|e| e <= tol.max(1e-3 * m[0]))
            || (m[1] <= 0.5 * m[0] && m[2] <= 0.5 * m[1]),
        last_block_max: last,
        extrapolated,
    }
}
