//! Analysis and simulation of the k-stage, n-strain within-host parasite
//! model: erythrocytes `x`, infected-cell stages `y_1..y_k`, gametocytes `g`
//! and free merozoites `m` for each strain.
//!
//! The crate is organized bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`model`] | parameter/state types, validation, the vector field |
//! | [`threshold`] | stage matrix, `x*`, `R0` (two routes), `T0`, `alpha*` |
//! | [`equilibria`] | disease-free and endemic equilibria |
//! | [`lyapunov`] | certificates, Lyapunov functions and their derivatives |
//! | [`simulate`] | adaptive Dormand-Prince integration and trajectory checks |
//! | [`outcome`] | outcome prediction, experiments and parameter sweeps |
//!
//! ```
//! use intrahost_core::{threshold_report, ModelSpec, RecruitmentModel, StrainParams};
//!
//! let spec = ModelSpec::new(
//!     1.0,
//!     RecruitmentModel::Constant { lambda: 1.0, mu_x: 0.1 },
//!     vec![StrainParams {
//!         beta: 0.2,
//!         r: 16.0,
//!         gammas: vec![0.5],
//!         alphas: vec![0.5],
//!         mu_m: 10.0,
//!         delta: 0.0,
//!         mu_g: 1.0,
//!     }],
//! );
//! let report = threshold_report(&spec).unwrap();
//! assert!((report.r0 - 8.0 / 3.0).abs() < 1e-12);
//! assert_eq!(report.winner, Some(0));
//! ```
//!
//! Strain indices are zero-based throughout the API.

// `!(v > 0.0)` is used on purpose: it also rejects NaN. Index loops in the
// integrator touch several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod equilibria;
pub mod error;
pub mod lyapunov;
pub mod model;
pub mod outcome;
pub mod simulate;
pub mod threshold;

pub use equilibria::{dfe, endemic_equilibrium, require_endemic, EndemicEquilibrium};
pub use error::{Error, Result};
pub use lyapunov::{
    certificate, phi_dotvee, v_clearance, v_dfe_component, v_endemic, v_multistrain, verify_decrease, DecreaseReport,
    LyapunovCertificate, LyapunovFunction, LyapunovKind,
};
pub use model::{
    validate_spec, vector_field, ModelSpec, RecruitmentModel, StateLayout, StrainParams, StrainState, SystemState,
    ValidationReport, Violation,
};
pub use outcome::{
    check_amg_condition, check_scstab, inoculated_dfe, predict, run_experiment, sweep, ExperimentReport, MatchStatus,
    OutcomeKind, OutcomePrediction, ParamPath, SweepAxis, SweepCell, SweepOptions, SweepReport,
};
pub use simulate::{detect_extinction, integrate, steady_state_detect, IntegratorOptions, TerminalEvent, Trajectory};
pub use threshold::{threshold_report, StageMatrix, ThresholdReport};
