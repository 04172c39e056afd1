//! Disease-free and single-strain endemic equilibria in closed form.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{rhs, rhs_term_scale, ModelSpec, StrainState, SystemState};
use crate::threshold::{build_a0, invasion_direction, t0};

/// `(x*, 0, ..., 0)`.
pub fn dfe(spec: &ModelSpec) -> Result<SystemState> {
    let xstar = spec.validate()?;
    Ok(dfe_with_xstar(spec, xstar))
}

pub(crate) fn dfe_with_xstar(spec: &ModelSpec, xstar: f64) -> SystemState {
    let mut s = SystemState::zeros(spec.k, spec.n);
    s.x = xstar;
    s
}

/// Boundary equilibrium where only strain `strain` is present.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndemicEquilibrium {
    pub strain: usize,
    pub xbar: f64,
    /// `(y_1..y_k, m)` of the strain.
    pub zbar: Vec<f64>,
    /// Gametocyte level; zero when gametocytes are not modeled.
    pub gbar: f64,
    pub t0: f64,
    /// `max |vector_field|` at the equilibrium.
    pub residual_norm: f64,
    /// `max` over components of the summed absolute right-hand-side terms;
    /// the residual is judged relative to this.
    pub residual_scale: f64,
}

impl EndemicEquilibrium {
    pub fn ybar(&self) -> &[f64] {
        &self.zbar[..self.zbar.len() - 1]
    }

    pub fn mbar(&self) -> f64 {
        self.zbar[self.zbar.len() - 1]
    }

    /// Full state with every other strain at zero.
    pub fn to_state(&self, spec: &ModelSpec) -> SystemState {
        let mut s = SystemState::zeros(spec.k, spec.n);
        s.x = self.xbar;
        s.strains[self.strain] = StrainState {
            y: self.ybar().to_vec(),
            g: self.gbar,
            m: self.mbar(),
        };
        s
    }
}

/// Endemic equilibrium of strain `i`, or `None` when `T0 <= 1`.
pub fn endemic_equilibrium(spec: &ModelSpec, i: usize) -> Result<Option<EndemicEquilibrium>> {
    let xstar = spec.validate()?;
    endemic_with_xstar(spec, i, xstar)
}

/// Like [`endemic_equilibrium`] but reports absence as an error.
pub fn require_endemic(spec: &ModelSpec, i: usize) -> Result<EndemicEquilibrium> {
    let xstar = spec.validate()?;
    require_endemic_with_xstar(spec, i, xstar)
}

pub(crate) fn require_endemic_with_xstar(spec: &ModelSpec, i: usize, xstar: f64) -> Result<EndemicEquilibrium> {
    match endemic_with_xstar(spec, i, xstar)? {
        Some(ee) => Ok(ee),
        None => Err(Error::NoEndemicEquilibrium {
            strain: i,
            t0: t0(spec.strain(i)?, xstar, spec.u),
        }),
    }
}

pub(crate) fn endemic_with_xstar(spec: &ModelSpec, i: usize, xstar: f64) -> Result<Option<EndemicEquilibrium>> {
    let p = spec.strain(i)?;
    let threshold = t0(p, xstar, spec.u);
    if !(threshold > 1.0) {
        return Ok(None);
    }
    let k = spec.k;
    let xbar = p.mu_m / (p.beta * (p.merozoite_yield() - spec.u));
    let a0 = build_a0(p, k);
    let mut zbar = a0.solve_neg(&invasion_direction(k + 1, spec.u))?;
    let growth = spec.recruitment.phi(xbar);
    for v in &mut zbar {
        *v *= growth;
    }
    let gbar = if spec.include_gametocytes {
        p.delta / p.mu_g * zbar[k - 1]
    } else {
        0.0
    };
    let mut ee = EndemicEquilibrium {
        strain: i,
        xbar,
        zbar,
        gbar,
        t0: threshold,
        residual_norm: 0.0,
        residual_scale: 0.0,
    };
    let flat = ee.to_state(spec).pack();
    let mut du = vec![0.0; flat.len()];
    rhs(spec, &flat, &mut du);
    ee.residual_norm = du.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    ee.residual_scale = rhs_term_scale(spec, &flat).into_iter().fold(0.0, f64::max);
    Ok(Some(ee))
}
