//! Threshold analysis: the stage matrix `A0`, the homeostatic equilibrium
//! `x*`, the basic reproduction number `R0` and the competition threshold
//! `T0`.
//!
//! `A0` is lower bidiagonal, so every action of `(-A0)^{-1}` is a forward
//! substitution and every action of `(-A0)^{-T}` a backward one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, RecruitmentModel, StrainParams};

/// Relative gap below which the two largest thresholds count as tied.
pub const GENERICITY_TOL: f64 = 1e-9;

/// Grid size for maximizing `phi'` on `[0, x*]`.
const ALPHA_STAR_GRID: usize = 4096;

/// Dense `(k+1) x (k+1)` stage matrix of one strain: diagonal
/// `-alpha_1..-alpha_k, -mu_m`, subdiagonal `gamma_1..gamma_{k-1}, r gamma_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl StageMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn is_metzler(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) >= 0.0))
    }

    /// Nonzeros only on the diagonal and first subdiagonal.
    pub fn is_lower_bidiagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| j == i || j + 1 == i || self.get(i, j) == 0.0))
    }

    /// Eigenvalues of a triangular matrix: its diagonal.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `A0 - shift * e_w e_w^T`.
    pub fn with_last_diagonal_shift(&self, shift: f64) -> Self {
        let mut out = self.clone();
        let last = self.dim - 1;
        out.entries[last * self.dim + last] -= shift;
        out
    }

    /// Solves `(-A) w = v` by forward substitution.
    pub fn solve_neg(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut w = vec![0.0; self.dim];
        for i in 0..self.dim {
            let d = -self.get(i, i);
            if d == 0.0 || !d.is_finite() {
                return Err(Error::SingularMatrix);
            }
            let carry = if i > 0 { self.get(i, i - 1) * w[i - 1] } else { 0.0 };
            w[i] = (v[i] + carry) / d;
        }
        Ok(w)
    }

    /// Solves `(-A)^T w = v` by backward substitution.
    pub fn solve_neg_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut w = vec![0.0; self.dim];
        for i in (0..self.dim).rev() {
            let d = -self.get(i, i);
            if d == 0.0 || !d.is_finite() {
                return Err(Error::SingularMatrix);
            }
            let carry = if i + 1 < self.dim {
                self.get(i + 1, i) * w[i + 1]
            } else {
                0.0
            };
            w[i] = (v[i] + carry) / d;
        }
        Ok(w)
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// `A^T v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self.get(i, j) * v[i]).sum())
            .collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }
}

/// Unit vector `e_j` of dimension `dim`.
pub fn unit(dim: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[j] = 1.0;
    e
}

/// `e_1 - u e_w` in dimension `dim`.
pub(crate) fn invasion_direction(dim: usize, u: f64) -> Vec<f64> {
    let mut v = unit(dim, 0);
    v[dim - 1] -= u;
    v
}

pub fn build_a0(strain: &StrainParams, k: usize) -> StageMatrix {
    let dim = k + 1;
    let mut entries = vec![0.0; dim * dim];
    for j in 0..k {
        entries[j * dim + j] = -strain.alphas[j];
        if j > 0 {
            entries[j * dim + j - 1] = strain.gammas[j - 1];
        }
    }
    entries[k * dim + k] = -strain.mu_m;
    entries[k * dim + k - 1] = strain.r * strain.gammas[k - 1];
    StageMatrix { dim, entries }
}

pub fn neg_a0_solve(a0: &StageMatrix, v: &[f64]) -> Result<Vec<f64>> {
    a0.solve_neg(v)
}

/// Unique positive root of `phi`. Closed form for constant recruitment;
/// otherwise bracket by doubling, bisect, then polish with Newton.
pub fn solve_xstar(recruitment: &RecruitmentModel) -> Result<f64> {
    if let RecruitmentModel::Constant { lambda, mu_x } = *recruitment {
        if lambda > 0.0 && mu_x > 0.0 {
            return Ok(lambda / mu_x);
        }
        return Err(Error::NoRootInBracket);
    }
    let phi = |x| recruitment.phi(x);
    if !(phi(0.0) > 0.0) {
        return Err(Error::NoRootInBracket);
    }
    let mut lo = 0.0;
    let mut hi = (recruitment.lambda() / recruitment.mu_x()).max(1.0);
    while phi(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoRootInBracket);
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = if phi(lo).abs() < phi(hi).abs() { lo } else { hi };
    for _ in 0..3 {
        let d = recruitment.dphi(x);
        if d == 0.0 {
            break;
        }
        let next = x - phi(x) / d;
        if next.is_finite() && phi(next).abs() < phi(x).abs() {
            x = next;
        } else {
            break;
        }
    }
    Ok(x)
}

/// `R0 = r beta x* / (mu_m + u beta x*) * prod(gamma) / prod(alpha)`.
pub fn r0_closed_form(strain: &StrainParams, xstar: f64, u: f64) -> f64 {
    let bx = strain.beta * xstar;
    bx / (strain.mu_m + u * bx) * strain.merozoite_yield()
}

/// `R0 = beta x* <(-A*)^{-1} e_1, e_w>` with `A* = A0 - u beta x* e_w e_w^T`,
/// solving against `A*` directly.
pub fn r0_next_generation(strain: &StrainParams, xstar: f64, u: f64) -> Result<f64> {
    let k = strain.stages();
    let bx = strain.beta * xstar;
    let a_star = build_a0(strain, k).with_last_diagonal_shift(u * bx);
    let w = a_star.solve_neg(&unit(k + 1, 0))?;
    Ok(bx * w[k])
}

/// Same quantity via Sherman-Morrison: the rank-one update only rescales
/// the last row of `(-A0)^{-1}` by `mu_m / (mu_m + u beta x*)`.
pub fn r0_sherman_morrison(strain: &StrainParams, xstar: f64, u: f64) -> Result<f64> {
    let k = strain.stages();
    let bx = strain.beta * xstar;
    let a0 = build_a0(strain, k);
    let w = a0.solve_neg(&unit(k + 1, 0))?;
    let ew = a0.solve_neg(&unit(k + 1, k))?;
    let c = u * bx;
    // (M + c e e^T)^{-1} e_1 = w - c w_w / (1 + c e^T M^{-1} e) M^{-1} e
    let correction = c * w[k] / (1.0 + c * ew[k]);
    Ok(bx * (w[k] - correction * ew[k]))
}

/// `T0 = beta x* [r prod(gamma)/prod(alpha) - u] / mu_m`. May be `<= 0`.
pub fn t0(strain: &StrainParams, xstar: f64, u: f64) -> f64 {
    strain.beta * xstar * (strain.merozoite_yield() - u) / strain.mu_m
}

/// `T0 = beta x* <(-A0)^{-1} (e_1 - u e_w), e_w>` by a stage solve.
pub fn t0_stage_solve(strain: &StrainParams, xstar: f64, u: f64) -> Result<f64> {
    let k = strain.stages();
    let w = build_a0(strain, k).solve_neg(&invasion_direction(k + 1, u))?;
    Ok(strain.beta * xstar * w[k])
}

/// `alpha* = -max_{[0, x*]} phi'`.
pub fn alpha_star(recruitment: &RecruitmentModel, xstar: f64) -> f64 {
    if recruitment.is_constant() {
        return recruitment.mu_x();
    }
    let dphi = |x| recruitment.dphi(x);
    let step = xstar / ALPHA_STAR_GRID as f64;
    let (mut best_j, mut best) = (0, dphi(0.0));
    for j in 1..=ALPHA_STAR_GRID {
        let v = dphi(j as f64 * step);
        if v > best {
            best = v;
            best_j = j;
        }
    }
    let lo = (best_j.saturating_sub(1)) as f64 * step;
    let hi = ((best_j + 1).min(ALPHA_STAR_GRID)) as f64 * step;
    -golden_max(dphi, lo, hi).max(best)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() <= 1e-14 * (1.0 + b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrainThreshold {
    pub r0: f64,
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub xstar: f64,
    pub strains: Vec<StrainThreshold>,
    /// `max_i R0^i`.
    pub r0: f64,
    /// Zero-based index of the strain with the strictly largest `T0`, when
    /// `r0 > 1`.
    pub winner: Option<usize>,
    /// Whether the largest `T0` is strictly separated from the rest.
    pub generic: bool,
    pub alpha_star: f64,
}

impl ThresholdReport {
    pub fn t0s(&self) -> Vec<f64> {
        self.strains.iter().map(|s| s.t0).collect()
    }

    /// Index of the largest `T0` regardless of ties.
    pub fn argmax_t0(&self) -> usize {
        argmax(self.strains.iter().map(|s| s.t0))
    }

    pub fn argmax_r0(&self) -> usize {
        argmax(self.strains.iter().map(|s| s.r0))
    }

    /// Relative gap between the two largest thresholds (infinite for one strain).
    pub fn top_gap(&self) -> f64 {
        top_gap(&self.t0s())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn top_gap(t0s: &[f64]) -> f64 {
    if t0s.len() < 2 {
        return f64::INFINITY;
    }
    let mut sorted = t0s.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let scale = sorted[0].abs().max(sorted[1].abs());
    if scale == 0.0 {
        return 0.0;
    }
    (sorted[0] - sorted[1]) / scale
}

pub fn threshold_report(spec: &ModelSpec) -> Result<ThresholdReport> {
    let xstar = spec.validate()?;
    Ok(threshold_report_with_xstar(spec, xstar))
}

pub(crate) fn threshold_report_with_xstar(spec: &ModelSpec, xstar: f64) -> ThresholdReport {
    let strains: Vec<_> = spec
        .strains
        .iter()
        .map(|s| StrainThreshold {
            r0: r0_closed_form(s, xstar, spec.u),
            t0: t0(s, xstar, spec.u),
        })
        .collect();
    let r0 = strains.iter().map(|s| s.r0).fold(f64::NEG_INFINITY, f64::max);
    let t0s: Vec<f64> = strains.iter().map(|s| s.t0).collect();
    let generic = top_gap(&t0s) > GENERICITY_TOL;
    let winner = (r0 > 1.0 && generic).then(|| argmax(t0s.iter().copied()));
    ThresholdReport {
        xstar,
        strains,
        r0,
        winner,
        generic,
        alpha_star: alpha_star(&spec.recruitment, xstar),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{running_spec, strain};

    #[test]
    fn a0_transcription_k1() {
        let s = strain(0.2, 16.0, &[0.5], &[0.5], 10.0);
        assert_eq!(build_a0(&s, 1).rows(), vec![vec![-0.5, 0.0], vec![8.0, -10.0]]);
    }

    #[test]
    fn a0_transcription_k2() {
        let s = strain(1.0, 5.0, &[3.0, 4.0], &[1.0, 2.0], 6.0);
        let a0 = build_a0(&s, 2);
        assert_eq!(
            a0.rows(),
            vec![vec![-1.0, 0.0, 0.0], vec![3.0, -2.0, 0.0], vec![0.0, 20.0, -6.0]]
        );
        assert!(a0.is_metzler());
        assert!(a0.is_lower_bidiagonal());
        assert!(a0.eigenvalues().iter().all(|&l| l < 0.0));
    }

    #[test]
    fn neg_solve_known_vectors() {
        let s = strain(0.2, 16.0, &[0.5], &[0.5], 10.0);
        let a0 = build_a0(&s, 1);
        let w = neg_a0_solve(&a0, &[1.0, 0.0]).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-15 && (w[1] - 1.6).abs() < 1e-15);
        let w = neg_a0_solve(&a0, &[0.0, 1.0]).unwrap();
        assert_eq!(w[1], 0.1);
        assert!(matches!(
            neg_a0_solve(&a0, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_diagonal_is_reported() {
        let s = strain(0.2, 16.0, &[0.5], &[0.0], 10.0);
        assert_eq!(build_a0(&s, 1).solve_neg(&[1.0, 0.0]), Err(Error::SingularMatrix));
    }

    #[test]
    fn xstar_examples() {
        let c = |lambda, mu_x| RecruitmentModel::Constant { lambda, mu_x };
        assert_eq!(solve_xstar(&c(1.0, 0.1)).unwrap(), 10.0);
        assert!((solve_xstar(&c(2.5, 0.05)).unwrap() - 50.0).abs() < 1e-12);
        let logistic = RecruitmentModel::Logistic {
            lambda: 1.0,
            s: 0.05,
            capacity: 20.0,
            mu_x: 0.1,
        };
        let x = solve_xstar(&logistic).unwrap();
        // positive root of 1 - 0.05 x - 0.0025 x^2 by the quadratic formula: 10 (sqrt 5 - 1)
        let oracle = 12.360_679_774_997_898;
        assert!((x - oracle).abs() < 1e-12, "{x}");
        assert!(logistic.phi(x).abs() < 1e-12 * 1.0f64.max(0.1 * x));
    }

    #[test]
    fn r0_examples() {
        let s = strain(0.2, 16.0, &[0.5], &[0.5], 10.0);
        assert!((r0_closed_form(&s, 10.0, 1.0) - 8.0 / 3.0).abs() < 1e-14);
        assert!((r0_next_generation(&s, 10.0, 1.0).unwrap() - 8.0 / 3.0).abs() < 1e-10);
        let mut zero = s.clone();
        zero.beta = 0.0;
        assert_eq!(r0_closed_form(&zero, 10.0, 1.0), 0.0);
        // u = 0, gamma = alpha: r beta x* / mu_m
        assert!((r0_closed_form(&s, 10.0, 0.0) - 16.0 * 2.0 / 10.0).abs() < 1e-14);
    }

    #[test]
    fn sherman_morrison_matches_direct_solve() {
        let s = strain(0.7, 9.0, &[0.3, 1.2, 0.8], &[0.9, 0.4, 1.5], 3.0);
        for u in [0.0, 0.5, 1.0, 3.0] {
            let a = r0_next_generation(&s, 7.0, u).unwrap();
            let b = r0_sherman_morrison(&s, 7.0, u).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs(), "u={u}: {a} vs {b}");
        }
    }

    #[test]
    fn t0_examples() {
        let s = strain(0.2, 16.0, &[0.5], &[0.5], 10.0);
        assert!((t0(&s, 10.0, 1.0) - 3.0).abs() < 1e-14);
        assert!((t0_stage_solve(&s, 10.0, 1.0).unwrap() - 3.0).abs() < 1e-12);
        // u equal to the merozoite yield zeroes the threshold
        assert_eq!(t0(&s, 10.0, 16.0), 0.0);
        // u = 0: T0 = R0
        assert!((t0(&s, 10.0, 0.0) - r0_closed_form(&s, 10.0, 0.0)).abs() < 1e-14);
    }

    #[test]
    fn alpha_star_examples() {
        let c = RecruitmentModel::Constant { lambda: 1.0, mu_x: 0.1 };
        assert_eq!(alpha_star(&c, 10.0), 0.1);
        let c = RecruitmentModel::Constant { lambda: 7.0, mu_x: 2.0 };
        assert_eq!(alpha_star(&c, 3.5), 2.0);
        let logistic = RecruitmentModel::Logistic {
            lambda: 1.0,
            s: 0.05,
            capacity: 20.0,
            mu_x: 0.1,
        };
        let xs = solve_xstar(&logistic).unwrap();
        // dense-grid oracle
        let grid_max = (0..=100_000)
            .map(|j| logistic.dphi(xs * j as f64 / 100_000.0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((alpha_star(&logistic, xs) - -grid_max).abs() < 1e-12);
        assert!((alpha_star(&logistic, xs) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn logistic_without_growth_term_reduces_to_mu_x() {
        let r = RecruitmentModel::Logistic {
            lambda: 2.0,
            s: 0.0,
            capacity: 10.0,
            mu_x: 0.2,
        };
        let xs = solve_xstar(&r).unwrap();
        assert!((alpha_star(&r, xs) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn report_for_running_example() {
        let report = threshold_report(&running_spec()).unwrap();
        assert_eq!(report.xstar, 10.0);
        assert!((report.r0 - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.winner, Some(0));
        assert!(report.generic);
        assert_eq!(report.alpha_star, 0.1);
    }

    #[test]
    fn identical_strains_are_not_generic() {
        let mut spec = running_spec();
        spec.strains.push(spec.strains[0].clone());
        spec.n = 2;
        let report = threshold_report(&spec).unwrap();
        assert!(!report.generic);
        assert_eq!(report.winner, None);
    }

    #[test]
    fn subcritical_strains_have_no_winner() {
        let mut spec = running_spec();
        spec.strains[0].beta = 0.05;
        spec.strains.push(strain(0.01, 16.0, &[0.5], &[0.5], 10.0));
        spec.n = 2;
        let report = threshold_report(&spec).unwrap();
        assert!(report.r0 <= 1.0);
        assert!(report.generic);
        assert_eq!(report.winner, None);
    }
}
