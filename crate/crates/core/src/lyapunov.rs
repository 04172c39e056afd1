//! Lyapunov certificates and the three Lyapunov functions of the model:
//!
//! * clearance: `x* h(x/x*) + sum_i <c_i, z_i>`, decreasing when every `T0 <= 1`;
//! * endemic: `a xbar h(x/xbar) + sum_j b_j ybar_j h(y_j/ybar_j) + mbar h(m/mbar)`
//!   for one strain;
//! * multistrain: `T0_w V_endemic + a sum_{j != w} <c_j, z_j>` around the
//!   winner `w`.
//!
//! Here `h(s) = s - 1 - ln s` and `c_i = beta_i x* (-A0_i)^{-T} e_w`, so
//! `<c_i, z> = beta_i x* [(-A0_i)^{-1} z]_w`.

use serde::Serialize;

use crate::equilibria::{require_endemic_with_xstar, EndemicEquilibrium};
use crate::error::{Error, Result};
use crate::model::{rhs, ModelSpec, StrainParams, SystemState};
use crate::simulate::Trajectory;
use crate::threshold::{build_a0, t0, threshold_report_with_xstar, unit};

/// Coefficients `(a, b)` of the endemic Lyapunov function of one strain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCertificate {
    pub strain: usize,
    pub a: f64,
    /// Weights of `(y_1..y_k, m)`; the last entry is 1.
    pub b: Vec<f64>,
    pub xbar: f64,
    pub equilibrium: EndemicEquilibrium,
}

impl LyapunovCertificate {
    /// `|<b, e_1 - u e_w> - a|`, relative to `b_1`.
    pub fn kern1_residual(&self, u: f64) -> f64 {
        let last = self.b.len() - 1;
        let lhs = self.b[0] - u * self.b[last];
        (lhs - self.a).abs() / self.b[0].abs().max(self.a.abs())
    }

    /// Largest relative deviation of `b` from `a beta xbar (-A0)^{-T} e_w`,
    /// computed by an independent backward solve.
    pub fn kern2_residual(&self, strain: &StrainParams) -> Result<f64> {
        let k = self.b.len() - 1;
        let w = build_a0(strain, k).solve_neg_transpose(&unit(k + 1, k))?;
        let scale = self.a * strain.beta * self.xbar;
        Ok(self
            .b
            .iter()
            .zip(&w)
            .map(|(b, w)| (b - scale * w).abs() / b.abs())
            .fold(0.0, f64::max))
    }

    /// Largest relative residual of the chain relations
    /// `a + u = b_1`, `b_j alpha_j = gamma_j b_{j+1}`, `b_k alpha_k = r gamma_k`.
    pub fn coef1_residual(&self, strain: &StrainParams, u: f64) -> f64 {
        let k = self.b.len() - 1;
        let rel = |lhs: f64, rhs: f64| (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        let mut worst = rel(self.a + u, self.b[0]);
        for j in 0..k - 1 {
            worst = worst.max(rel(self.b[j] * strain.alphas[j], strain.gammas[j] * self.b[j + 1]));
        }
        worst.max(rel(
            self.b[k - 1] * strain.alphas[k - 1],
            strain.r * strain.gammas[k - 1] * self.b[k],
        ))
    }

    /// `||A0^T b + a beta xbar e_w||_inf / ||b||_inf`.
    pub fn linear_residual(&self, strain: &StrainParams) -> f64 {
        let k = self.b.len() - 1;
        let mut r = build_a0(strain, k).apply_transpose(&self.b);
        r[k] += self.a * strain.beta * self.xbar;
        let norm_b = self.b.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
        r.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())) / norm_b
    }
}

/// Builds the certificate for strain `i`: `a = mu_m / (beta xbar)` and `b`
/// from the chain relations starting at `b_{k+1} = 1`.
pub fn certificate(spec: &ModelSpec, i: usize) -> Result<LyapunovCertificate> {
    let xstar = spec.validate()?;
    certificate_with_xstar(spec, i, xstar)
}

pub(crate) fn certificate_with_xstar(spec: &ModelSpec, i: usize, xstar: f64) -> Result<LyapunovCertificate> {
    let equilibrium = require_endemic_with_xstar(spec, i, xstar)?;
    let p = spec.strain(i)?;
    let k = spec.k;
    let xbar = equilibrium.xbar;
    let mut b = vec![0.0; k + 1];
    b[k] = 1.0;
    b[k - 1] = p.r * p.gammas[k - 1] / p.alphas[k - 1];
    for j in (0..k - 1).rev() {
        b[j] = p.gammas[j] * b[j + 1] / p.alphas[j];
    }
    Ok(LyapunovCertificate {
        strain: i,
        a: p.mu_m / (p.beta * xbar),
        b,
        xbar,
        equilibrium,
    })
}

/// `beta x* [(-A0)^{-1} z]_w` for one strain.
pub fn v_dfe_component(strain: &StrainParams, xstar: f64, z: &[f64]) -> Result<f64> {
    let k = strain.stages();
    let w = build_a0(strain, k).solve_neg(z)?;
    Ok(strain.beta * xstar * w[k])
}

/// `h(s) = s - 1 - ln s`, accurate near `s = 1`.
#[inline]
fn h(s: f64) -> f64 {
    let d = s - 1.0;
    d - d.ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LyapunovKind {
    Clearance,
    Endemic { strain: usize },
    Multistrain { winner: usize },
}

/// A Lyapunov function bound to a model, evaluated on flat states.
#[derive(Debug, Clone)]
pub struct LyapunovFunction {
    spec: ModelSpec,
    kind: LyapunovKind,
    xstar: f64,
    /// `c_i = beta_i x* (-A0_i)^{-T} e_w` per strain.
    dfe_weights: Vec<Vec<f64>>,
    t0s: Vec<f64>,
    cert: Option<LyapunovCertificate>,
}

impl LyapunovFunction {
    pub fn clearance(spec: &ModelSpec) -> Result<Self> {
        let xstar = spec.validate()?;
        Self::build(spec, xstar, LyapunovKind::Clearance, None)
    }

    pub fn endemic(spec: &ModelSpec, i: usize) -> Result<Self> {
        let xstar = spec.validate()?;
        let cert = certificate_with_xstar(spec, i, xstar)?;
        Self::build(spec, xstar, LyapunovKind::Endemic { strain: i }, Some(cert))
    }

    /// Composite function around the strain with the strictly largest `T0`.
    pub fn multistrain(spec: &ModelSpec) -> Result<Self> {
        let xstar = spec.validate()?;
        let report = threshold_report_with_xstar(spec, xstar);
        if !report.generic {
            return Err(Error::NotGeneric);
        }
        let w = report.argmax_t0();
        let cert = certificate_with_xstar(spec, w, xstar)?;
        Self::build(spec, xstar, LyapunovKind::Multistrain { winner: w }, Some(cert))
    }

    /// Composite function around `cert.strain`, which must hold the strictly
    /// largest `T0`.
    pub fn multistrain_from(spec: &ModelSpec, cert: LyapunovCertificate) -> Result<Self> {
        let xstar = spec.validate()?;
        let report = threshold_report_with_xstar(spec, xstar);
        if !report.generic || report.argmax_t0() != cert.strain {
            return Err(Error::NotGeneric);
        }
        let w = cert.strain;
        Self::build(spec, xstar, LyapunovKind::Multistrain { winner: w }, Some(cert))
    }

    fn build(spec: &ModelSpec, xstar: f64, kind: LyapunovKind, cert: Option<LyapunovCertificate>) -> Result<Self> {
        let k = spec.k;
        let mut dfe_weights = Vec::with_capacity(spec.n);
        let mut t0s = Vec::with_capacity(spec.n);
        for p in &spec.strains {
            let mut c = build_a0(p, k).solve_neg_transpose(&unit(k + 1, k))?;
            for v in &mut c {
                *v *= p.beta * xstar;
            }
            dfe_weights.push(c);
            t0s.push(t0(p, xstar, spec.u));
        }
        Ok(Self {
            spec: spec.clone(),
            kind,
            xstar,
            dfe_weights,
            t0s,
            cert,
        })
    }

    pub fn kind(&self) -> LyapunovKind {
        self.kind
    }

    pub fn certificate(&self) -> Option<&LyapunovCertificate> {
        self.cert.as_ref()
    }

    fn check(&self, state: &[f64]) -> Result<()> {
        let dim = self.spec.dim();
        if state.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: state.len(),
            });
        }
        if !(state[0] > 0.0) {
            return Err(Error::DomainError("x must be positive"));
        }
        if let Some(cert) = &self.cert {
            let layout = self.spec.layout();
            let i = cert.strain;
            let b = layout.block(i);
            if state[b..b + self.spec.k].iter().any(|&v| !(v > 0.0)) || !(state[layout.m(i)] > 0.0) {
                return Err(Error::DomainError("strain compartments must be positive"));
            }
        }
        Ok(())
    }

    fn dfe_sum(&self, state: &[f64], skip: Option<usize>) -> f64 {
        let layout = self.spec.layout();
        (0..self.spec.n)
            .filter(|&i| Some(i) != skip)
            .map(|i| {
                let z = layout.z(state, i);
                self.dfe_weights[i].iter().zip(&z).map(|(c, z)| c * z).sum::<f64>()
            })
            .sum()
    }

    fn endemic_value(&self, cert: &LyapunovCertificate, state: &[f64]) -> f64 {
        let layout = self.spec.layout();
        let z = layout.z(state, cert.strain);
        let zbar = &cert.equilibrium.zbar;
        let mut v = cert.a * cert.xbar * h(state[0] / cert.xbar);
        for l in 0..z.len() {
            v += cert.b[l] * zbar[l] * h(z[l] / zbar[l]);
        }
        v
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        self.check(state)?;
        Ok(match (&self.kind, &self.cert) {
            (LyapunovKind::Clearance, _) => self.xstar * h(state[0] / self.xstar) + self.dfe_sum(state, None),
            (LyapunovKind::Endemic { .. }, Some(cert)) => self.endemic_value(cert, state),
            (LyapunovKind::Multistrain { winner }, Some(cert)) => {
                self.t0s[*winner] * self.endemic_value(cert, state) + cert.a * self.dfe_sum(state, Some(*winner))
            }
            _ => unreachable!("endemic kinds always carry a certificate"),
        })
    }

    /// Gradient with respect to the flat state (zero on `g` components).
    pub fn gradient(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check(state)?;
        let layout = self.spec.layout();
        let k = self.spec.k;
        let mut grad = vec![0.0; state.len()];
        let add_dfe = |grad: &mut [f64], i: usize, weight: f64| {
            let b = layout.block(i);
            let c = &self.dfe_weights[i];
            for j in 0..k {
                grad[b + j] += weight * c[j];
            }
            grad[layout.m(i)] += weight * c[k];
        };
        let add_endemic = |grad: &mut [f64], cert: &LyapunovCertificate, weight: f64| {
            let i = cert.strain;
            let b = layout.block(i);
            let zbar = &cert.equilibrium.zbar;
            grad[0] += weight * cert.a * (1.0 - cert.xbar / state[0]);
            for j in 0..k {
                grad[b + j] += weight * cert.b[j] * (1.0 - zbar[j] / state[b + j]);
            }
            grad[layout.m(i)] += weight * cert.b[k] * (1.0 - zbar[k] / state[layout.m(i)]);
        };
        match (&self.kind, &self.cert) {
            (LyapunovKind::Clearance, _) => {
                grad[0] = 1.0 - self.xstar / state[0];
                for i in 0..self.spec.n {
                    add_dfe(&mut grad, i, 1.0);
                }
            }
            (LyapunovKind::Endemic { .. }, Some(cert)) => add_endemic(&mut grad, cert, 1.0),
            (LyapunovKind::Multistrain { winner }, Some(cert)) => {
                add_endemic(&mut grad, cert, self.t0s[*winner]);
                for i in (0..self.spec.n).filter(|i| i != winner) {
                    add_dfe(&mut grad, i, cert.a);
                }
            }
            _ => unreachable!("endemic kinds always carry a certificate"),
        }
        Ok(grad)
    }

    /// `<grad V, F(state)>`.
    pub fn vdot_chain_rule(&self, state: &[f64]) -> Result<f64> {
        let grad = self.gradient(state)?;
        let mut du = vec![0.0; state.len()];
        rhs(&self.spec, state, &mut du);
        Ok(grad.iter().zip(&du).map(|(g, d)| g * d).sum())
    }

    /// Closed-form derivative along the flow, with the cancellations of the
    /// linear terms already carried out.
    pub fn vdot_analytic(&self, state: &[f64]) -> Result<f64> {
        self.check(state)?;
        let layout = self.spec.layout();
        let x = state[0];
        let phi = self.spec.recruitment.phi(x);
        Ok(match (&self.kind, &self.cert) {
            (LyapunovKind::Clearance, _) => {
                let mut v = (x - self.xstar) * phi / x;
                for (i, p) in self.spec.strains.iter().enumerate() {
                    v += p.beta * state[layout.m(i)] * x * (self.t0s[i] - 1.0);
                }
                v
            }
            (LyapunovKind::Endemic { strain }, Some(cert)) => {
                let others: f64 = self
                    .spec
                    .strains
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| j != strain)
                    .map(|(j, p)| p.beta * state[layout.m(j)])
                    .sum();
                self.endemic_own_part(cert, state, phi) - cert.a * (x - cert.xbar) * others
            }
            (LyapunovKind::Multistrain { winner }, Some(cert)) => {
                let tw = self.t0s[*winner];
                let mut v = tw * self.endemic_own_part(cert, state, phi);
                for (j, p) in self.spec.strains.iter().enumerate().filter(|(j, _)| j != winner) {
                    v += cert.a * p.beta * state[layout.m(j)] * x * (self.t0s[j] - tw);
                }
                v
            }
            _ => unreachable!("endemic kinds always carry a certificate"),
        })
    }

    /// `a (x - xbar) phi(x) / x - sum_l b_l (zbar_l / z_l) z_l'` for the
    /// certificate's strain, without the other strains' infection terms.
    fn endemic_own_part(&self, cert: &LyapunovCertificate, state: &[f64], phi: f64) -> f64 {
        let layout = self.spec.layout();
        let k = self.spec.k;
        let p = &self.spec.strains[cert.strain];
        let x = state[0];
        let bl = layout.block(cert.strain);
        let y = &state[bl..bl + k];
        let m = state[layout.m(cert.strain)];
        let zbar = &cert.equilibrium.zbar;
        let b = &cert.b;

        let mut ratio_terms = b[0] * zbar[0] * (p.beta * x * m / y[0] - p.alphas[0]);
        for j in 1..k {
            ratio_terms += b[j] * zbar[j] * (p.gammas[j - 1] * y[j - 1] / y[j] - p.alphas[j]);
        }
        ratio_terms += b[k] * zbar[k] * (p.r * p.gammas[k - 1] * y[k - 1] / m - p.mu_m - self.spec.u * p.beta * x);
        cert.a * (x - cert.xbar) * phi / x - ratio_terms
    }

    pub fn value_at(&self, state: &SystemState) -> Result<f64> {
        self.value(&state.pack())
    }
}

/// Clearance function at `state`.
pub fn v_clearance(spec: &ModelSpec, state: &SystemState) -> Result<f64> {
    LyapunovFunction::clearance(spec)?.value_at(state)
}

/// Endemic function of `cert.strain` at `state`, zero at the equilibrium.
pub fn v_endemic(spec: &ModelSpec, cert: &LyapunovCertificate, state: &SystemState) -> Result<f64> {
    let xstar = spec.validate()?;
    let kind = LyapunovKind::Endemic { strain: cert.strain };
    LyapunovFunction::build(spec, xstar, kind, Some(cert.clone()))?.value_at(state)
}

/// Composite function around `cert.strain`.
pub fn v_multistrain(spec: &ModelSpec, cert: &LyapunovCertificate, state: &SystemState) -> Result<f64> {
    LyapunovFunction::multistrain_from(spec, cert.clone())?.value_at(state)
}

/// The `k + 2` ratios `xbar/x`, `(x/xbar)(m/mbar)(ybar_1/y_1)`,
/// `(y_{j-1}/ybar_{j-1})(ybar_j/y_j)`, `(y_k/ybar_k)(mbar/m)`. Their product
/// is 1, so `k + 2 - sum` is nonpositive.
pub fn cycle_ratios(spec: &ModelSpec, cert: &LyapunovCertificate, state: &SystemState) -> Result<Vec<f64>> {
    let s = state.strains.get(cert.strain).ok_or(Error::StrainIndex {
        index: cert.strain,
        n: state.strains.len(),
    })?;
    let k = spec.k;
    if s.y.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: s.y.len(),
        });
    }
    if !(state.x > 0.0) || !(s.m > 0.0) || s.y.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DomainError("strain compartments must be positive"));
    }
    let ybar = cert.equilibrium.ybar();
    let mbar = cert.equilibrium.mbar();
    let mut out = Vec::with_capacity(k + 2);
    out.push(cert.xbar / state.x);
    out.push(state.x / cert.xbar * s.m / mbar * ybar[0] / s.y[0]);
    for j in 1..k {
        out.push(s.y[j - 1] / ybar[j - 1] * ybar[j] / s.y[j]);
    }
    out.push(s.y[k - 1] / ybar[k - 1] * mbar / s.m);
    Ok(out)
}

/// Derivative of the endemic function split as a negative quadratic in
/// `x - xbar` plus `r gamma_k ybar_k` times an arithmetic-geometric mean gap.
/// Covers the certificate's own strain; other strains add
/// `-a (x - xbar) sum_j beta_j m_j`. Constant recruitment only.
pub fn phi_dotvee(spec: &ModelSpec, cert: &LyapunovCertificate, state: &SystemState) -> Result<f64> {
    if !spec.recruitment.is_constant() {
        return Err(Error::UnsupportedRecruitment);
    }
    let ratios = cycle_ratios(spec, cert, state)?;
    let p = spec.strain(cert.strain)?;
    let k = spec.k;
    let (lambda, mu_x) = (spec.recruitment.lambda(), spec.recruitment.mu_x());
    let xbar = cert.xbar;
    let x = state.x;
    let quad = -(cert.b[0] * mu_x * xbar - spec.u * lambda) * (x - xbar).powi(2) / (x * xbar);
    let gap = (k + 2) as f64 - ratios.iter().sum::<f64>();
    Ok(quad + p.r * p.gammas[k - 1] * cert.equilibrium.ybar()[k - 1] * gap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreaseReport {
    /// `V` at each sample; `+inf` where the state lies on the boundary of
    /// the function's domain.
    pub values: Vec<f64>,
    /// Largest `V(t_{s+1}) - V(t_s)`.
    pub max_increase: f64,
    /// Sample index `s` where the largest increase starts.
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Decrease tolerance relative to `1 + max |V|`.
pub const DECREASE_RTOL: f64 = 1e-8;

/// Checks that `V` is nonincreasing along the samples of `trajectory` up to
/// `1e-8 (1 + max |V|)`. Samples outside the domain (a zero strain
/// compartment) count as `+inf`, the limit of `V` there.
pub fn verify_decrease(f: &LyapunovFunction, trajectory: &Trajectory) -> DecreaseReport {
    let values: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| f.value(s).unwrap_or(f64::INFINITY))
        .collect();
    let max_abs = values
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let tolerance = DECREASE_RTOL * (1.0 + max_abs);
    let mut max_increase = f64::NEG_INFINITY;
    let mut worst_index = None;
    for (s, pair) in values.windows(2).enumerate() {
        let inc = match (pair[0].is_finite(), pair[1].is_finite()) {
            (true, true) => pair[1] - pair[0],
            (true, false) => f64::INFINITY,
            (false, true) => f64::NEG_INFINITY,
            (false, false) => 0.0,
        };
        if inc > max_increase {
            max_increase = inc;
            worst_index = Some(s);
        }
    }
    if values.len() < 2 {
        max_increase = 0.0;
    }
    DecreaseReport {
        passed: max_increase <= tolerance,
        values,
        max_increase,
        worst_index,
        tolerance,
    }
}
