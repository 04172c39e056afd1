//! Random model draws and dense linear-algebra oracles shared by the
//! integration tests.
#![allow(dead_code)]

use intrahost_core::threshold::build_a0;
use intrahost_core::{ModelSpec, RecruitmentModel, StrainParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut TestRng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Rate constants and stage ratios for one strain; `beta` is a placeholder
/// to be set from a target threshold.
pub fn draw_strain(rng: &mut TestRng, k: usize, rates: (f64, f64)) -> StrainParams {
    let alphas: Vec<f64> = (0..k).map(|_| log_uniform(rng, rates.0, rates.1)).collect();
    let gammas: Vec<f64> = alphas.iter().map(|a| a * rng.random_range(0.3..1.2)).collect();
    StrainParams {
        beta: 1.0,
        r: log_uniform(rng, 4.0, 40.0),
        gammas,
        alphas,
        mu_m: log_uniform(rng, rates.0, rates.1),
        delta: rng.random_range(0.0..1.0),
        mu_g: log_uniform(rng, rates.0, rates.1),
    }
}

pub fn draw_constant(rng: &mut TestRng, rates: (f64, f64)) -> RecruitmentModel {
    RecruitmentModel::Constant {
        lambda: log_uniform(rng, 0.5, 5.0),
        mu_x: log_uniform(rng, rates.0.max(0.02), rates.1.min(0.5)),
    }
}

/// Logistic recruitment with `s < mu_x` so that `alpha* > 0`.
pub fn draw_logistic(rng: &mut TestRng, rates: (f64, f64)) -> RecruitmentModel {
    let mu_x = log_uniform(rng, rates.0.max(0.02), rates.1.min(0.5));
    RecruitmentModel::Logistic {
        lambda: log_uniform(rng, 0.5, 5.0),
        s: mu_x * rng.random_range(0.0..0.9),
        capacity: log_uniform(rng, 5.0, 100.0),
        mu_x,
    }
}

pub fn draw_recruitment(rng: &mut TestRng, rates: (f64, f64), logistic_share: f64) -> RecruitmentModel {
    if rng.random_bool(logistic_share) {
        draw_logistic(rng, rates)
    } else {
        draw_constant(rng, rates)
    }
}

pub fn xstar_of(spec: &ModelSpec) -> f64 {
    spec.validate().expect("drawn spec must validate")
}

/// Sets `beta_i` so that `R0_i = target`. Needs `yield > u * target`.
pub fn set_r0(spec: &mut ModelSpec, i: usize, target: f64) -> bool {
    let xstar = xstar_of(spec);
    let p = &mut spec.strains[i];
    let rho = p.merozoite_yield();
    if rho <= spec.u * target {
        return false;
    }
    // R0 = rho B / (mu_m + u B) with B = beta x*
    let b = target * p.mu_m / (rho - spec.u * target);
    p.beta = b / xstar;
    true
}

/// Sets `beta_i` so that `T0_i = target`. Needs `yield > u`.
pub fn set_t0(spec: &mut ModelSpec, i: usize, target: f64) -> bool {
    let xstar = xstar_of(spec);
    let p = &mut spec.strains[i];
    let rho = p.merozoite_yield();
    if rho <= spec.u {
        return false;
    }
    p.beta = target * p.mu_m / ((rho - spec.u) * xstar);
    true
}

/// `-A0` of one strain as a dense matrix built entry by entry from the
/// parameters.
pub fn dense_neg_a0(p: &StrainParams) -> DMatrix<f64> {
    let k = p.stages();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    for j in 0..k {
        m[(j, j)] = p.alphas[j];
        if j > 0 {
            m[(j, j - 1)] = -p.gammas[j - 1];
        }
    }
    m[(k, k)] = p.mu_m;
    m[(k, k - 1)] = -p.r * p.gammas[k - 1];
    m
}

pub fn lu_solve(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    m.clone()
        .lu()
        .solve(&DVector::from_column_slice(v))
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

pub fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("nonsingular")
}

/// Sanity check that the crate's A0 agrees with the dense transcription.
pub fn a0_matches_dense(p: &StrainParams) -> bool {
    let a0 = build_a0(p, p.stages());
    let dense = dense_neg_a0(p);
    (0..a0.dim()).all(|i| (0..a0.dim()).all(|j| a0.get(i, j) == -dense[(i, j)]))
}

/// Second, independently written right-hand side used as a regression
/// oracle: loops over the equations in textbook order on a nested state.
pub fn reference_rhs(spec: &ModelSpec, x: f64, strains: &[(Vec<f64>, f64, f64)]) -> (f64, Vec<(Vec<f64>, f64, f64)>) {
    let mut dx = spec.recruitment.f(x) - spec.recruitment.mu_x() * x;
    let mut out = Vec::new();
    for (p, (y, g, m)) in spec.strains.iter().zip(strains) {
        dx -= p.beta * x * m;
        let mut dy = Vec::new();
        for j in 0..spec.k {
            let inflow = if j == 0 {
                p.beta * x * m
            } else {
                p.gammas[j - 1] * y[j - 1]
            };
            dy.push(inflow - p.alphas[j] * y[j]);
        }
        let dg = if spec.include_gametocytes {
            p.delta * y[spec.k - 1] - p.mu_g * g
        } else {
            0.0
        };
        let dm = p.r * p.gammas[spec.k - 1] * y[spec.k - 1] - p.mu_m * m - spec.u * p.beta * x * m;
        out.push((dy, dg, dm));
    }
    (dx, out)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
