//! Diagnostic reports and the schedules that turn limit statements into
//! finite, reproducible checks.

use serde::{Deserialize, Serialize};

use crate::extreal::ExtReal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    HypothesisUnverified,
}

impl Verdict {
    /// CLI exit code for this verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
            Verdict::HypothesisUnverified => 3,
        }
    }

    /// Worst of several verdicts; hypothesis gaps rank above plain failures.
    pub fn combine<I: IntoIterator<Item = Verdict>>(vs: I) -> Verdict {
        let mut out = Verdict::Pass;
        for v in vs {
            out = match (out, v) {
                (Verdict::HypothesisUnverified, _) | (_, Verdict::HypothesisUnverified) => {
                    Verdict::HypothesisUnverified
                }
                (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
                _ => Verdict::Pass,
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Hypothesis,
    Conclusion,
    Check,
    /// Reported but never affects the verdict.
    Info,
}

/// One tested inequality (or family of inequalities) inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    pub passed: bool,
    pub lhs: Option<ExtReal>,
    pub rhs: Option<ExtReal>,
    /// Worst margin of `lhs >= rhs` (or `lhs <= rhs` for upper checks).
    pub margin: Option<ExtReal>,
    pub witnesses: Vec<String>,
    pub notes: Vec<String>,
}

impl Stage {
    pub fn new(name: &str, kind: StageKind, passed: bool) -> Self {
        Stage {
            name: name.to_string(),
            kind,
            passed,
            lhs: None,
            rhs: None,
            margin: None,
            witnesses: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_values(mut self, lhs: ExtReal, rhs: ExtReal, margin: ExtReal) -> Self {
        self.lhs = Some(lhs);
        self.rhs = Some(rhs);
        self.margin = Some(margin);
        self
    }

    pub fn with_witnesses(mut self, w: Vec<String>) -> Self {
        self.witnesses = w;
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    fn finalize(mut self) -> Self {
        if !self.passed && self.witnesses.is_empty() {
            self.witnesses.push(format!("stage {} failed", self.name));
        }
        self
    }
}

/// Record of a verified or violated statement, with everything needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub verdict: Verdict,
    pub lhs: Option<ExtReal>,
    pub rhs: Option<ExtReal>,
    pub margin: Option<ExtReal>,
    pub witnesses: Vec<String>,
    pub stages: Vec<Stage>,
    pub schedules_used: Schedules,
    pub prefix_len: usize,
    pub seed: Option<u64>,
    pub notes: Vec<String>,
}

impl DiagnosticReport {
    /// Assembles a report. Any failed hypothesis stage makes the verdict
    /// `HypothesisUnverified`; otherwise a failed conclusion or check stage
    /// makes it `Fail`.
    pub fn from_stages(
        name: &str,
        stages: Vec<Stage>,
        schedules: &Schedules,
        prefix_len: usize,
    ) -> Self {
        let stages: Vec<Stage> = stages.into_iter().map(Stage::finalize).collect();
        let hyp_ok = stages
            .iter()
            .filter(|s| s.kind == StageKind::Hypothesis)
            .all(|s| s.passed);
        let rest_ok = stages
            .iter()
            .filter(|s| matches!(s.kind, StageKind::Conclusion | StageKind::Check))
            .all(|s| s.passed);
        let verdict = if !hyp_ok {
            Verdict::HypothesisUnverified
        } else if !rest_ok {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        let headline = stages
            .iter()
            .rev()
            .find(|s| s.kind == StageKind::Conclusion && s.margin.is_some())
            .or_else(|| stages.iter().rev().find(|s| s.margin.is_some()));
        let (lhs, rhs, margin) = headline.map_or((None, None, None), |s| (s.lhs, s.rhs, s.margin));
        let witnesses = stages
            .iter()
            .filter(|s| !s.passed && s.kind != StageKind::Info)
            .flat_map(|s| s.witnesses.iter().map(move |w| format!("{}: {w}", s.name)))
            .collect();
        DiagnosticReport {
            name: name.to_string(),
            verdict,
            lhs,
            rhs,
            margin,
            witnesses,
            stages,
            schedules_used: schedules.clone(),
            prefix_len,
            seed: None,
            notes: Vec::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Names of failed stages of the given kind.
    pub fn failed(&self, kind: StageKind) -> Vec<&str> {
        self.stages
            .iter()
            .filter(|s| s.kind == kind && !s.passed)
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn conclusion_passed(&self) -> bool {
        self.stages
            .iter()
            .filter(|s| s.kind == StageKind::Conclusion)
            .all(|s| s.passed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    /// Prefixes stage names, for nesting one checker's stages in another.
    pub fn prefixed_stages(&self, prefix: &str) -> Vec<Stage> {
        self.stages
            .iter()
            .cloned()
            .map(|mut s| {
                s.name = format!("{prefix}.{}", s.name);
                s
            })
            .collect()
    }
}

/// Finite stand-ins for "every neighbourhood", "sufficiently large index",
/// "every modulus" and "every truncation level".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    /// Envelope moduli, increasing.
    pub kappa: Vec<f64>,
    /// Truncation levels for tail expectations, increasing.
    pub k_levels: Vec<f64>,
    /// Neighbourhood radii in the decision space, decreasing.
    pub eps: Vec<f64>,
    /// Neighbourhood radii in the sample space, decreasing.
    pub xi_eps: Vec<f64>,
    /// Candidate radii for equi-lower-semicontinuity, decreasing.
    pub delta: Vec<f64>,
    /// First index (0-based) of the tail; `None` means half the prefix.
    pub tail_start: Option<usize>,
    /// Radius searched for recovery sequences; `None` means the smallest `eps`.
    pub recovery_radius: Option<f64>,
    pub tol: f64,
}

impl Schedules {
    /// Defaults scaled to the grids and the data:
    /// kappa `{1, 2, ..., 2^10} x data_scale`, K levels `{1, 2, ...}` up to the
    /// tail start times `data_scale`, radii `{0.5, 0.25, 0.1, 0.05}` grid spacings.
    pub fn defaults(
        x_spacing: f64,
        xi_spacing: f64,
        data_scale: f64,
        n_terms: usize,
        tol: f64,
    ) -> Self {
        let scale = if data_scale.is_finite() && data_scale > 0.0 { data_scale } else { 1.0 };
        let kappa = (0..=10).map(|j| scale * f64::powi(2.0, j)).collect();
        let tail = (n_terms / 2).max(1);
        let kmax = (tail as f64).log2().floor().max(0.0) as i32;
        let k_levels = (0..=kmax).map(|j| scale * f64::powi(2.0, j)).collect();
        let fractions = [0.5, 0.25, 0.1, 0.05];
        Schedules {
            kappa,
            k_levels,
            eps: fractions.iter().map(|f| f * x_spacing).collect(),
            xi_eps: fractions.iter().map(|f| f * xi_spacing).collect(),
            delta: [4.0, 2.0, 1.5].iter().map(|f| f * xi_spacing).collect(),
            tail_start: None,
            recovery_radius: None,
            tol,
        }
    }

    pub fn tail_start(&self, n_terms: usize) -> usize {
        self.tail_start
            .unwrap_or(n_terms / 2)
            .min(n_terms.saturating_sub(1))
    }

    pub fn recovery_radius(&self) -> f64 {
        self.recovery_radius.unwrap_or_else(|| min_of(&self.eps))
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: &[f64]| -> Result<(), String> {
            if v.is_empty() {
                return Err(format!("{name} schedule is empty"));
            }
            if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(format!("{name} schedule must be finite and positive"));
            }
            Ok(())
        };
        positive("kappa", &self.kappa)?;
        positive("k_levels", &self.k_levels)?;
        positive("eps", &self.eps)?;
        positive("xi_eps", &self.xi_eps)?;
        positive("delta", &self.delta)?;
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err("tol must be finite and nonnegative".into());
        }
        if !self.kappa.windows(2).all(|w| w[0] <= w[1]) {
            return Err("kappa schedule must be nondecreasing".into());
        }
        if !self.k_levels.windows(2).all(|w| w[0] <= w[1]) {
            return Err("k_levels schedule must be nondecreasing".into());
        }
        Ok(())
    }
}

pub(crate) fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Default tolerance: float slack plus one grid spacing times a robust
/// Lipschitz estimate (the 0.9-quantile of neighbour slopes, so isolated
/// jumps do not inflate it).
pub fn default_tol(spacing: f64, lipschitz: f64) -> f64 {
    1e-6 + spacing * lipschitz
}
