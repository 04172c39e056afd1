//! Fixtures shared by the benchmarks.

use intrahost_core::{ModelSpec, RecruitmentModel, StrainParams};

/// `n` strains with `k` stages each, strain `i` slightly less transmissive
/// than strain `i - 1`.
pub fn fixture(k: usize, n: usize) -> ModelSpec {
    let strains = (0..n)
        .map(|i| StrainParams {
            beta: 0.2 / (1.0 + 0.1 * i as f64),
            r: 16.0,
            gammas: vec![0.5 * k as f64; k],
            alphas: vec![0.5 * k as f64; k],
            mu_m: 10.0,
            delta: 0.1,
            mu_g: 0.5,
        })
        .collect();
    ModelSpec::new(1.0, RecruitmentModel::Constant { lambda: 1.0, mu_x: 0.1 }, strains)
}
