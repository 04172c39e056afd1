//! Parameter and state types for the k-stage, n-strain model and the
//! right-hand side of its ODE system.
//!
//! Per strain `i` the system is
//!
//! ```text
//! x'      = phi(x) - x * sum_i beta_i m_i
//! y_1,i'  = beta_i x m_i - alpha_1,i y_1,i
//! y_j,i'  = gamma_{j-1},i y_{j-1},i - alpha_j,i y_j,i        (j = 2..k)
//! g_i'    = delta_i y_k,i - mu_g,i g_i
//! m_i'    = r_i gamma_k,i y_k,i - mu_m,i m_i - u beta_i x m_i
//! ```
//!
//! with `phi(x) = f(x) - mu_x x`. States are flattened as
//! `[x, y_1,1 .. y_k,1, g_1, m_1, y_1,2, ..., m_n]`.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::threshold::solve_xstar;

/// Number of sign samples used when checking the homeostasis hypothesis.
pub const HYPOTHESIS_SAMPLES: usize = 4096;

/// Erythrocyte recruitment `f(x)`; `phi(x) = f(x) - mu_x x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RecruitmentModel {
    /// `f(x) = lambda`.
    Constant { lambda: f64, mu_x: f64 },
    /// `f(x) = lambda + s x (1 - x / capacity)`.
    Logistic {
        lambda: f64,
        s: f64,
        capacity: f64,
        mu_x: f64,
    },
}

impl RecruitmentModel {
    pub fn mu_x(&self) -> f64 {
        match *self {
            Self::Constant { mu_x, .. } | Self::Logistic { mu_x, .. } => mu_x,
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Self::Constant { lambda, .. } | Self::Logistic { lambda, .. } => lambda,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { lambda, .. } => lambda,
            Self::Logistic {
                lambda, s, capacity, ..
            } => lambda + s * x * (1.0 - x / capacity),
        }
    }

    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::Logistic { s, capacity, .. } => s * (1.0 - 2.0 * x / capacity),
        }
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        self.f(x) - self.mu_x() * x
    }

    #[inline]
    pub fn dphi(&self, x: f64) -> f64 {
        self.df(x) - self.mu_x()
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let mut check = |name: &'static str, value: f64, strict: bool| {
            if !value.is_finite() {
                out.push(Violation::NonFinite {
                    name: name.into(),
                    value,
                });
            } else if strict && value <= 0.0 {
                out.push(Violation::NonPositiveParameter {
                    name: name.into(),
                    value,
                });
            } else if !strict && value < 0.0 {
                out.push(Violation::NegativeParameter {
                    name: name.into(),
                    value,
                });
            }
        };
        match *self {
            Self::Constant { lambda, mu_x } => {
                check("recruitment.lambda", lambda, true);
                check("recruitment.mu_x", mu_x, true);
            }
            Self::Logistic {
                lambda,
                s,
                capacity,
                mu_x,
            } => {
                check("recruitment.lambda", lambda, false);
                check("recruitment.s", s, false);
                check("recruitment.K", capacity, true);
                check("recruitment.mu_x", mu_x, true);
            }
        }
    }
}

/// Per-strain rate constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrainParams {
    /// Contact rate between erythrocytes and merozoites.
    pub beta: f64,
    /// Merozoites released per burst.
    pub r: f64,
    /// Stage transition rates `gamma_1..gamma_k`.
    pub gammas: Vec<f64>,
    /// Stage exit rates `alpha_1..alpha_k`.
    pub alphas: Vec<f64>,
    pub mu_m: f64,
    /// Gametocyte production rate.
    pub delta: f64,
    pub mu_g: f64,
}

impl StrainParams {
    pub fn stages(&self) -> usize {
        self.alphas.len()
    }

    /// `r * (gamma_1 ... gamma_k) / (alpha_1 ... alpha_k)`: merozoites
    /// eventually released per infected erythrocyte.
    pub fn merozoite_yield(&self) -> f64 {
        self.gammas
            .iter()
            .zip(&self.alphas)
            .fold(self.r, |acc, (g, a)| acc * (g / a))
    }

    fn violations(&self, index: usize, k: usize, out: &mut Vec<Violation>) {
        let mut check = |field: String, value: f64, strict: bool| {
            let name = format!("strain{}.{field}", index + 1);
            if !value.is_finite() {
                out.push(Violation::NonFinite { name, value });
            } else if strict && value <= 0.0 {
                out.push(Violation::NonPositiveParameter { name, value });
            } else if !strict && value < 0.0 {
                out.push(Violation::NegativeParameter { name, value });
            }
        };
        check("beta".into(), self.beta, true);
        check("r".into(), self.r, true);
        check("mu_m".into(), self.mu_m, true);
        check("delta".into(), self.delta, false);
        check("mu_g".into(), self.mu_g, true);
        for (j, &g) in self.gammas.iter().enumerate() {
            check(format!("gammas[{}]", j + 1), g, true);
        }
        for (j, &a) in self.alphas.iter().enumerate() {
            check(format!("alphas[{}]", j + 1), a, true);
        }
        for (field, len) in [("gammas", self.gammas.len()), ("alphas", self.alphas.len())] {
            if len != k {
                out.push(Violation::StageCountMismatch {
                    strain: index,
                    field,
                    expected: k,
                    found: len,
                });
            }
        }
    }
}

/// Full parameterization of the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    /// Number of infected-cell stages, shared by all strains.
    pub k: usize,
    /// Number of strains.
    pub n: usize,
    /// Merozoites absorbed per invasion.
    pub u: f64,
    pub recruitment: RecruitmentModel,
    pub strains: Vec<StrainParams>,
    pub include_gametocytes: bool,
}

impl ModelSpec {
    /// Builds a spec whose `k` and `n` are read from the strain list.
    pub fn new(u: f64, recruitment: RecruitmentModel, strains: Vec<StrainParams>) -> Self {
        let k = strains.first().map_or(0, StrainParams::stages);
        Self {
            k,
            n: strains.len(),
            u,
            recruitment,
            strains,
            include_gametocytes: true,
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout { k: self.k, n: self.n }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn strain(&self, i: usize) -> Result<&StrainParams> {
        self.strains.get(i).ok_or(Error::StrainIndex {
            index: i,
            n: self.strains.len(),
        })
    }

    /// Smallest rate constant of the system (1/day). Sets the natural time
    /// horizon for asymptotic checks.
    pub fn min_rate(&self) -> f64 {
        let mut rate = self.recruitment.mu_x();
        for s in &self.strains {
            rate = rate.min(s.mu_m);
            if self.include_gametocytes {
                rate = rate.min(s.mu_g);
            }
            for &v in s.alphas.iter().chain(&s.gammas) {
                rate = rate.min(v);
            }
        }
        rate
    }

    /// Checks parameter constraints and returns `x*` on success.
    pub fn validate(&self) -> Result<f64> {
        validate_spec(self).into_result()
    }
}

/// Index arithmetic for the flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub k: usize,
    pub n: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        1 + self.n * (self.k + 2)
    }

    /// First index of strain `i`'s block `(y_1..y_k, g, m)`.
    #[inline]
    pub fn block(&self, i: usize) -> usize {
        1 + i * (self.k + 2)
    }

    /// Index of `y_{j,i}` with `j` zero-based.
    #[inline]
    pub fn y(&self, i: usize, j: usize) -> usize {
        self.block(i) + j
    }

    #[inline]
    pub fn g(&self, i: usize) -> usize {
        self.block(i) + self.k
    }

    #[inline]
    pub fn m(&self, i: usize) -> usize {
        self.block(i) + self.k + 1
    }

    /// `z_i = (y_1..y_k, m)` gathered from a flat state.
    pub fn z(&self, state: &[f64], i: usize) -> Vec<f64> {
        let b = self.block(i);
        let mut z = state[b..b + self.k].to_vec();
        z.push(state[self.m(i)]);
        z
    }

    /// Largest parasite component (`y` and `m`, not `g`) of strain `i`.
    pub fn parasite_max(&self, state: &[f64], i: usize) -> f64 {
        let b = self.block(i);
        state[b..b + self.k].iter().copied().fold(state[self.m(i)], f64::max)
    }
}

/// One strain's compartment values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrainState {
    pub y: Vec<f64>,
    pub g: f64,
    pub m: f64,
}

/// Model state: uninfected erythrocytes plus one block per strain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemState {
    pub x: f64,
    pub strains: Vec<StrainState>,
}

impl SystemState {
    pub fn zeros(k: usize, n: usize) -> Self {
        Self {
            x: 0.0,
            strains: vec![
                StrainState {
                    y: vec![0.0; k],
                    g: 0.0,
                    m: 0.0
                };
                n
            ],
        }
    }

    /// Flattens in the canonical order.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.strains.iter().map(|s| s.y.len() + 2).sum::<usize>());
        out.push(self.x);
        for s in &self.strains {
            out.extend_from_slice(&s.y);
            out.push(s.g);
            out.push(s.m);
        }
        out
    }

    pub fn unpack(flat: &[f64], spec: &ModelSpec) -> Result<Self> {
        Self::unpack_layout(flat, spec.layout())
    }

    pub fn unpack_layout(flat: &[f64], layout: StateLayout) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: flat.len(),
            });
        }
        let strains = (0..layout.n)
            .map(|i| {
                let b = layout.block(i);
                StrainState {
                    y: flat[b..b + layout.k].to_vec(),
                    g: flat[layout.g(i)],
                    m: flat[layout.m(i)],
                }
            })
            .collect();
        Ok(Self { x: flat[0], strains })
    }

    fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        if self.strains.len() != spec.n {
            return Err(Error::DimensionMismatch {
                expected: spec.n,
                found: self.strains.len(),
            });
        }
        for s in &self.strains {
            if s.y.len() != spec.k {
                return Err(Error::DimensionMismatch {
                    expected: spec.k,
                    found: s.y.len(),
                });
            }
        }
        Ok(())
    }
}

/// A single violated constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NonPositiveParameter {
        name: String,
        value: f64,
    },
    NegativeParameter {
        name: String,
        value: f64,
    },
    NonFinite {
        name: String,
        value: f64,
    },
    EmptyModel {
        k: usize,
        n: usize,
    },
    StrainCountMismatch {
        expected: usize,
        found: usize,
    },
    StageCountMismatch {
        strain: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    /// `phi` changes sign more than once on the sampled range.
    NonUniqueRoot {
        sign_changes: usize,
    },
    NoRootInBracket,
    /// `phi(0) > 0` or `phi < 0` beyond the root fails.
    HypothesisViolated {
        x: f64,
        phi: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveParameter { name, value } => write!(f, "{name} = {value} must be > 0"),
            Self::NegativeParameter { name, value } => write!(f, "{name} = {value} must be >= 0"),
            Self::NonFinite { name, value } => write!(f, "{name} = {value} is not finite"),
            Self::EmptyModel { k, n } => write!(f, "k = {k} and n = {n} must both be >= 1"),
            Self::StrainCountMismatch { expected, found } => {
                write!(f, "model declares {expected} strains but {found} are given")
            }
            Self::StageCountMismatch {
                strain,
                field,
                expected,
                found,
            } => write!(
                f,
                "strain{}.{field} has {found} entries, expected k = {expected}",
                strain + 1
            ),
            Self::NonUniqueRoot { sign_changes } => {
                write!(
                    f,
                    "phi changes sign {sign_changes} times; the homeostatic root is not unique"
                )
            }
            Self::NoRootInBracket => write!(f, "phi has no positive root"),
            Self::HypothesisViolated { x, phi } => {
                write!(f, "phi({x}) = {phi} violates the homeostasis sign pattern")
            }
        }
    }
}

/// Outcome of [`validate_spec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub xstar: Option<f64>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty() && self.xstar.is_some()
    }

    pub fn into_result(self) -> Result<f64> {
        match (self.xstar, self.violations.is_empty()) {
            (Some(x), true) => Ok(x),
            _ => Err(Error::Invalid(self.violations)),
        }
    }
}

/// Checks positivity and shape constraints, then the homeostasis
/// hypothesis: a unique `x* > 0` with `phi > 0` on `[0, x*)` and `phi < 0`
/// beyond it, verified by sign sampling on `[0, 4 x*]`.
pub fn validate_spec(spec: &ModelSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if spec.k == 0 || spec.n == 0 {
        violations.push(Violation::EmptyModel { k: spec.k, n: spec.n });
    }
    if spec.strains.len() != spec.n {
        violations.push(Violation::StrainCountMismatch {
            expected: spec.n,
            found: spec.strains.len(),
        });
    }
    if !spec.u.is_finite() {
        violations.push(Violation::NonFinite {
            name: "u".into(),
            value: spec.u,
        });
    } else if spec.u < 0.0 {
        violations.push(Violation::NegativeParameter {
            name: "u".into(),
            value: spec.u,
        });
    }
    for (i, s) in spec.strains.iter().enumerate() {
        s.violations(i, spec.k, &mut violations);
    }

    let mut recruitment_issues = Vec::new();
    spec.recruitment.violations(&mut recruitment_issues);
    if !recruitment_issues.is_empty() {
        violations.extend(recruitment_issues);
        return ValidationReport {
            xstar: None,
            violations,
        };
    }

    let xstar = match solve_xstar(&spec.recruitment) {
        Ok(x) => x,
        Err(_) => {
            let phi0 = spec.recruitment.phi(0.0);
            if phi0 <= 0.0 {
                violations.push(Violation::HypothesisViolated { x: 0.0, phi: phi0 });
            } else {
                violations.push(Violation::NoRootInBracket);
            }
            return ValidationReport {
                xstar: None,
                violations,
            };
        }
    };
    violations.extend(hypothesis_violations(&spec.recruitment, xstar));
    ValidationReport {
        xstar: Some(xstar),
        violations,
    }
}

fn hypothesis_violations(recruitment: &RecruitmentModel, xstar: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let phi0 = recruitment.phi(0.0);
    if phi0 <= 0.0 {
        out.push(Violation::HypothesisViolated { x: 0.0, phi: phi0 });
    }
    let upper = 4.0 * xstar;
    let mut changes = 0;
    let mut last_sign = phi0.signum();
    let mut last = (0.0, phi0);
    for j in 1..=HYPOTHESIS_SAMPLES {
        let x = upper * j as f64 / HYPOTHESIS_SAMPLES as f64;
        let p = recruitment.phi(x);
        if p != 0.0 && last_sign != 0.0 && p.signum() != last_sign {
            changes += 1;
        }
        if p != 0.0 {
            last_sign = p.signum();
        }
        last = (x, p);
    }
    if changes > 1 {
        out.push(Violation::NonUniqueRoot { sign_changes: changes });
    }
    if last.1 >= 0.0 {
        out.push(Violation::HypothesisViolated { x: last.0, phi: last.1 });
    }
    out
}

/// Right-hand side on flat slices; no shape checks. `du.len()` must equal
/// `u.len()`.
pub fn rhs(spec: &ModelSpec, state: &[f64], du: &mut [f64]) {
    let layout = spec.layout();
    let k = spec.k;
    let x = state[0];
    let mut infection = 0.0;
    for (i, p) in spec.strains.iter().enumerate() {
        let b = layout.block(i);
        let m = state[layout.m(i)];
        let incidence = p.beta * x * m;
        infection += incidence;

        du[b] = incidence - p.alphas[0] * state[b];
        for j in 1..k {
            du[b + j] = p.gammas[j - 1] * state[b + j - 1] - p.alphas[j] * state[b + j];
        }
        let yk = state[b + k - 1];
        du[b + k] = if spec.include_gametocytes {
            p.delta * yk - p.mu_g * state[b + k]
        } else {
            0.0
        };
        du[b + k + 1] = p.r * p.gammas[k - 1] * yk - p.mu_m * m - spec.u * incidence;
    }
    du[0] = spec.recruitment.phi(x) - infection;
}

/// Per-component sum of absolute term magnitudes of the right-hand side.
/// Used to judge how much cancellation an equilibrium residual reflects.
pub fn rhs_term_scale(spec: &ModelSpec, state: &[f64]) -> Vec<f64> {
    let layout = spec.layout();
    let k = spec.k;
    let x = state[0];
    let mu_x = spec.recruitment.mu_x();
    let mut out = vec![0.0; state.len()];
    let mut infection = 0.0;
    for (i, p) in spec.strains.iter().enumerate() {
        let b = layout.block(i);
        let m = state[layout.m(i)];
        let incidence = (p.beta * x * m).abs();
        infection += incidence;
        out[b] = incidence + (p.alphas[0] * state[b]).abs();
        for j in 1..k {
            out[b + j] = (p.gammas[j - 1] * state[b + j - 1]).abs() + (p.alphas[j] * state[b + j]).abs();
        }
        let yk = state[b + k - 1];
        if spec.include_gametocytes {
            out[b + k] = (p.delta * yk).abs() + (p.mu_g * state[b + k]).abs();
        }
        out[b + k + 1] = (p.r * p.gammas[k - 1] * yk).abs() + (p.mu_m * m).abs() + spec.u * incidence;
    }
    out[0] = spec.recruitment.f(x).abs() + (mu_x * x).abs() + infection;
    out
}

/// Time derivative of `state`, returned in state shape.
pub fn vector_field(spec: &ModelSpec, state: &SystemState) -> Result<SystemState> {
    state.check_shape(spec)?;
    if spec.k == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    let flat = state.pack();
    let mut du = vec![0.0; flat.len()];
    rhs(spec, &flat, &mut du);
    SystemState::unpack(&du, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::running_spec;

    #[test]
    fn constant_recruitment_validates_with_closed_form_root() {
        let spec = running_spec();
        let report = validate_spec(&spec);
        assert!(report.is_ok(), "{:?}", report.violations);
        assert_eq!(report.xstar, Some(10.0));
    }

    #[test]
    fn zero_death_rate_is_rejected() {
        let mut spec = running_spec();
        spec.recruitment = RecruitmentModel::Constant { lambda: 1.0, mu_x: 0.0 };
        let report = validate_spec(&spec);
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::NonPositiveParameter { name, .. }] if name == "recruitment.mu_x"
        ));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn logistic_without_inflow_violates_hypothesis_at_zero() {
        let mut spec = running_spec();
        spec.recruitment = RecruitmentModel::Logistic {
            lambda: 0.0,
            s: 0.5,
            capacity: 20.0,
            mu_x: 0.1,
        };
        let report = validate_spec(&spec);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::HypothesisViolated { x, .. } if *x == 0.0)));
    }

    #[test]
    fn shape_errors_are_collected() {
        let mut spec = running_spec();
        spec.n = 2;
        spec.strains[0].alphas.push(1.0);
        spec.strains[0].beta = -1.0;
        let report = validate_spec(&spec);
        assert!(report.violations.len() >= 3, "{:?}", report.violations);
    }

    #[test]
    fn running_example_derivative() {
        let spec = running_spec();
        let state = SystemState {
            x: 10.0,
            strains: vec![StrainState {
                y: vec![0.0],
                g: 0.0,
                m: 1.0,
            }],
        };
        let d = vector_field(&spec, &state).unwrap();
        assert!((d.x - -2.0).abs() < 1e-14);
        assert!((d.strains[0].y[0] - 2.0).abs() < 1e-14);
        assert!((d.strains[0].m - -12.0).abs() < 1e-14);
    }

    #[test]
    fn pack_order_and_wrong_length() {
        let spec = running_spec();
        let state = SystemState {
            x: 1.0,
            strains: vec![StrainState {
                y: vec![2.0],
                g: 3.0,
                m: 4.0,
            }],
        };
        assert_eq!(state.pack(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            SystemState::unpack(&[1.0, 2.0, 3.0], &spec),
            Err(Error::DimensionMismatch { expected: 4, found: 3 })
        );
    }

    #[test]
    fn vector_field_rejects_wrong_stage_count() {
        let spec = running_spec();
        let state = SystemState::zeros(2, 1);
        assert!(matches!(
            vector_field(&spec, &state),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gametocytes_inert_when_disabled() {
        let mut spec = running_spec();
        spec.include_gametocytes = false;
        let state = SystemState {
            x: 5.0,
            strains: vec![StrainState {
                y: vec![1.0],
                g: 2.0,
                m: 1.0,
            }],
        };
        assert_eq!(vector_field(&spec, &state).unwrap().strains[0].g, 0.0);
    }
}
