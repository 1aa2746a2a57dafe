//! Classification of five-dimensional initial data against the ground-state
//! thresholds, and end-to-end experiments that confirm the classification
//! by simulation.
//!
//! The bootstrap argument works with `f(r) = a - r + b r^q`, which attains
//! its minimum at `γ = (bq)^{-1/(q-1)}`. With `a = E(u₀,v₀)`,
//! `b = 2 C_op Q(u₀,v₀)^{1/4}`, `q = 5/4` and `G(t) = K(u(t),v(t))`, the
//! energy identity and the sharp Gagliardo–Nirenberg inequality give
//! `f(G(t)) ≥ 0`, so G cannot cross γ.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolution::{detect_blowup, evolve, BlowupCause, BlowupVerdict, EvolveConfig, Monitors, TrajectoryRecord};
use crate::functionals::{charge, interaction, kinetic, scale, FieldPair};
use crate::ground_state::GroundStateResult;

/// Exponent of the bootstrap polynomial in five dimensions.
pub const Q_EXPONENT: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSetup {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
}

impl ComparisonSetup {
    pub fn new(a: f64, b: f64, q: f64) -> Result<Self> {
        let s = Self { a, b, q, delta1: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() {
            return Err(invalid("a", "must be finite"));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(invalid("b", format!("{} must be positive", self.b)));
        }
        if !(self.q.is_finite() && self.q > 1.0) {
            return Err(invalid("q", format!("{} must exceed 1", self.q)));
        }
        if let Some(d) = self.delta1 {
            if !(0.0..1.0).contains(&d) {
                return Err(invalid("delta1", format!("{d} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        (self.b * self.q).powf(-1.0 / (self.q - 1.0))
    }

    /// `(1 - 1/q) γ`, the bound on `a` under which `f(γ) < 0`.
    pub fn a_bound(&self) -> f64 {
        (1.0 - 1.0 / self.q) * self.gamma()
    }

    pub fn f(&self, r: f64) -> f64 {
        self.a - r + self.b * r.powf(self.q)
    }

    pub fn f_prime(&self, r: f64) -> f64 {
        -1.0 + self.b * self.q * r.powf(self.q - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComparisonVerdict {
    StaysBelow,
    StaysAbove,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub verdict: ComparisonVerdict,
    /// `G(t) ≥ (1 + δ₂) γ` for all t; only for STAYS_ABOVE.
    pub delta2: Option<f64>,
}

/// Where a continuous G with `f(G) ≥ 0` must stay, given G(0).
pub fn comparison_classify(setup: &ComparisonSetup, g0: f64) -> Result<ComparisonOutcome> {
    setup.validate()?;
    if !g0.is_finite() {
        return Err(invalid("G0", "must be finite"));
    }
    let gamma = setup.gamma();
    let indeterminate = ComparisonOutcome {
        verdict: ComparisonVerdict::Indeterminate,
        delta2: None,
    };
    if setup.a >= setup.a_bound() || g0 == gamma {
        return Ok(indeterminate);
    }
    if g0 < gamma {
        return Ok(ComparisonOutcome {
            verdict: ComparisonVerdict::StaysBelow,
            delta2: None,
        });
    }
    let margin_ok = setup.delta1.is_none_or(|d| setup.a < (1.0 - d) * setup.a_bound());
    Ok(ComparisonOutcome {
        verdict: ComparisonVerdict::StaysAbove,
        delta2: margin_ok.then(|| upper_root_margin(setup)),
    })
}

/// `r₊/γ - 1` for the root `r₊ > γ` of f, by bisection to 1e-10.
fn upper_root_margin(setup: &ComparisonSetup) -> f64 {
    let gamma = setup.gamma();
    let f = |d: f64| setup.f((1.0 + d) * gamma);
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Ground-state products and the bootstrap threshold for data of charge Q0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(rename = "EQ_star")]
    pub eq_star: f64,
    #[serde(rename = "KQ_star")]
    pub kq_star: f64,
    /// `(bq)^{-1/(q-1)}` with `b = 2 C_op Q0^{1/4}`.
    pub gamma: f64,
    /// `5 Q_gs² / Q0`.
    pub gamma_closed_form: f64,
    pub a_bound: f64,
    pub b: f64,
    pub q: f64,
}

pub fn thresholds(gs: &GroundStateResult, q0: f64) -> Result<Thresholds> {
    if gs.n != 5 {
        return Err(invalid(
            "n",
            format!("the thresholds are five-dimensional, got n = {}", gs.n),
        ));
    }
    if (gs.omega - 1.0).abs() > 1e-12 {
        return Err(invalid(
            "omega",
            format!("thresholds need the ω = 1 ground state, got {}", gs.omega),
        ));
    }
    if !(q0.is_finite() && q0 > 0.0) {
        return Err(invalid("Q0", format!("{q0} must be positive")));
    }
    let qgs = gs.values.q;
    let b = 2.0 * gs.c_op * q0.powf(0.25);
    let setup = ComparisonSetup::new(0.0, b, Q_EXPONENT)?;
    let gamma = setup.gamma();
    let gamma_closed_form = 5.0 * qgs * qgs / q0;
    if (gamma - gamma_closed_form).abs() > 1e-6 * gamma_closed_form {
        return Err(Error::Inconsistent(format!(
            "threshold routes disagree: (bq)^-4 = {gamma}, 5 Q_gs^2/Q0 = {gamma_closed_form}"
        )));
    }
    Ok(Thresholds {
        eq_star: gs.values.e * qgs,
        kq_star: gs.values.k * qgs,
        gamma,
        gamma_closed_form,
        a_bound: setup.a_bound(),
        b,
        q: Q_EXPONENT,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Global,
    BlowupCandidate,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Consistency {
    Agree,
    Disagree,
    OutsideTheorem,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub verdict: BlowupVerdict,
    pub t_detect: Option<f64>,
    pub cause: Option<BlowupCause>,
    pub completed: bool,
    pub steps: usize,
    pub step_halvings: usize,
    pub q_drift: f64,
    pub e_drift: f64,
    /// `max_t K(t) Q0 / KQ_star`.
    pub max_kq_ratio: f64,
    /// Smallest `f(G(t))` relative to `G(t)`; non-negative up to quadrature
    /// error when κ = 1/2.
    pub min_f_relative: Option<f64>,
    pub max_outer_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub kappa: f64,
    #[serde(rename = "Q0")]
    pub q0: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "EQ")]
    pub eq: f64,
    #[serde(rename = "KQ")]
    pub kq: f64,
    #[serde(rename = "EQ_star")]
    pub eq_star: f64,
    #[serde(rename = "KQ_star")]
    pub kq_star: f64,
    #[serde(rename = "EQ_ratio")]
    pub eq_ratio: f64,
    #[serde(rename = "KQ_ratio")]
    pub kq_ratio: f64,
    /// None for zero data.
    pub thresholds: Option<Thresholds>,
    pub classification: Classification,
    /// `1 - EQ/EQ_star` when positive.
    pub delta1: Option<f64>,
    pub comparison: Option<ComparisonOutcome>,
    pub simulation: Option<SimulationSummary>,
    pub consistency: Option<Consistency>,
}

/// Relative tolerance for treating KQ as equal to KQ_star.
const BOUNDARY_TOL: f64 = 1e-9;

pub fn classify_data(state: &FieldPair, gs: &GroundStateResult, kappa: f64) -> Result<DichotomyReport> {
    if state.dim() != 5 || gs.n != 5 {
        return Err(Error::GridMismatch(format!(
            "classification needs five-dimensional data and ground state, got n = {} and n = {}",
            state.dim(),
            gs.n
        )));
    }
    if (kappa - gs.kappa).abs() > 1e-12 {
        return Err(invalid(
            "kappa",
            format!("data at κ = {kappa} compared with a ground state at κ = {}", gs.kappa),
        ));
    }
    let q0 = charge(state);
    let k0 = kinetic(state, kappa)?;
    let e0 = k0 - 2.0 * interaction(state);
    let qgs = gs.values.q;
    let eq_star = gs.values.e * qgs;
    let kq_star = gs.values.k * qgs;
    let (eq, kq) = (e0 * q0, k0 * q0);

    let classification = if eq >= eq_star || (kq - kq_star).abs() <= BOUNDARY_TOL * kq_star {
        Classification::Indeterminate
    } else if kq < kq_star {
        Classification::Global
    } else {
        Classification::BlowupCandidate
    };

    let (thresholds, comparison) = if q0 > 0.0 {
        let th = thresholds(gs, q0)?;
        let setup = ComparisonSetup::new(e0, th.b, th.q)?;
        (Some(th), Some(comparison_classify(&setup, k0)?))
    } else {
        (None, None)
    };
    Ok(DichotomyReport {
        kappa,
        q0,
        e0,
        k0,
        eq,
        kq,
        eq_star,
        kq_star,
        eq_ratio: eq / eq_star,
        kq_ratio: kq / kq_star,
        thresholds,
        classification,
        delta1: (eq < eq_star).then(|| 1.0 - eq / eq_star),
        comparison,
        simulation: None,
        consistency: None,
    })
}

/// Initial data families for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "parameters", rename_all = "snake_case")]
pub enum DataFamily {
    /// `c·(φ, ψ)`.
    ScaledGroundState { scale_factor: f64 },
    /// `(A_u e^{-r²/w²}, A_v e^{-r²/w²})`.
    Gaussian {
        amplitude_u: f64,
        amplitude_v: f64,
        width: f64,
    },
}

fn default_evolve_nodes() -> usize {
    4096
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub data: DataFamily,
    #[serde(default)]
    pub evolve: EvolveConfig,
    /// Nodes of the evolution grid, which extends the ground-state grid at
    /// the same spacing.
    #[serde(default = "default_evolve_nodes")]
    pub evolve_num_nodes: usize,
}

/// Builds the initial data of `spec` on the extended evolution grid.
pub fn initial_data(spec: &ExperimentSpec, gs: &GroundStateResult) -> Result<FieldPair> {
    let nodes = spec.evolve_num_nodes.max(gs.grid().num_nodes());
    match spec.data {
        DataFamily::ScaledGroundState { scale_factor } => {
            if !scale_factor.is_finite() {
                return Err(invalid("scale_factor", "must be finite"));
            }
            if scale_factor == 0.0 {
                return Ok(FieldPair::zeros(Arc::new(gs.grid().extended(nodes)?)));
            }
            scale(&gs.state(), scale_factor, 1.0)?.extended(nodes)
        }
        DataFamily::Gaussian {
            amplitude_u,
            amplitude_v,
            width,
        } => {
            if !(width.is_finite() && width > 0.0) {
                return Err(invalid("width", format!("{width} must be positive")));
            }
            if !(amplitude_u.is_finite() && amplitude_v.is_finite()) {
                return Err(invalid("amplitude", "must be finite"));
            }
            let grid = Arc::new(gs.grid().extended(nodes)?);
            let g = move |a: f64| move |r: f64| Complex64::new(a * (-(r * r) / (width * width)).exp(), 0.0);
            Ok(FieldPair::from_fns(grid, g(amplitude_u), g(amplitude_v)))
        }
    }
}

fn consistency(classification: Classification, kappa: f64, verdict: BlowupVerdict) -> Consistency {
    let resonant = (kappa - 0.5).abs() <= 1e-12;
    match (classification, verdict) {
        (Classification::Indeterminate, _) => Consistency::OutsideTheorem,
        (Classification::BlowupCandidate, _) if !resonant => Consistency::OutsideTheorem,
        (Classification::Global, BlowupVerdict::Bounded) => Consistency::Agree,
        (Classification::BlowupCandidate, BlowupVerdict::Blowup) => Consistency::Agree,
        (Classification::Global, BlowupVerdict::Blowup) => Consistency::Disagree,
        (Classification::BlowupCandidate, BlowupVerdict::Bounded) => Consistency::Disagree,
        (_, BlowupVerdict::Inconclusive) => Consistency::Inconclusive,
    }
}

/// Classifies the data of `spec`, evolves it and attaches the verdict.
pub fn run_experiment(spec: &ExperimentSpec, gs: &GroundStateResult) -> Result<(DichotomyReport, TrajectoryRecord)> {
    spec.evolve.validate()?;
    let state = initial_data(spec, gs)?;
    let mut report = classify_data(&state, gs, spec.evolve.kappa)?;
    let record = evolve(&state, &spec.evolve, &Monitors::default())?;

    // GLOBAL data must also respect the a-priori bound pointwise.
    let k_bound =
        (report.classification == Classification::Global && report.q0 > 0.0).then(|| report.kq_star / report.q0);
    let detection = detect_blowup(&record, &spec.evolve, k_bound);
    let max_kq_ratio = record
        .k_series
        .iter()
        .map(|k| k * report.q0 / report.kq_star)
        .fold(0.0, f64::max);
    let min_f_relative = match (&report.thresholds, (spec.evolve.kappa - 0.5).abs() <= 1e-12) {
        (Some(th), true) => {
            let setup = ComparisonSetup::new(report.e0, th.b, th.q)?;
            record
                .k_series
                .iter()
                .filter(|&&k| k > 0.0)
                .map(|&k| setup.f(k) / k)
                .reduce(f64::min)
        }
        _ => None,
    };
    report.simulation = Some(SimulationSummary {
        verdict: detection.verdict,
        t_detect: detection.t_detect,
        cause: detection.cause,
        completed: record.completed,
        steps: record.steps,
        step_halvings: record.step_halvings,
        q_drift: record.q_drift(),
        e_drift: record.e_drift(),
        max_kq_ratio,
        min_f_relative,
        max_outer_fraction: record.max_outer_fraction,
        trajectory_csv: None,
        warnings: record.warnings.clone(),
    });
    report.consistency = Some(consistency(report.classification, spec.evolve.kappa, detection.verdict));
    Ok((report, record))
}

/// Runs independent experiments in parallel; results keep the input order.
pub fn run_batch(specs: &[ExperimentSpec], gs: &GroundStateResult) -> Vec<Result<(DichotomyReport, TrajectoryRecord)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| scope.spawn(move || run_experiment(spec, gs)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Inconsistent("experiment thread panicked".into())))
            })
            .collect()
    })
}
