//! Outcome prediction from the thresholds, the sufficient stability
//! conditions, and prediction-versus-simulation experiments.

pub mod sweep;

use serde::Serialize;

use crate::equilibria::{dfe_with_xstar, endemic_with_xstar, require_endemic_with_xstar};
use crate::error::{Error, Result};
use crate::lyapunov::{verify_decrease, DecreaseReport, LyapunovFunction};
use crate::model::{ModelSpec, SystemState};
use crate::simulate::{detect_extinction, integrate, IntegratorOptions, TerminalEvent, Trajectory};
use crate::threshold::{t0, threshold_report_with_xstar, ThresholdReport};

pub use sweep::{sweep, ParamPath, SweepAxis, SweepCell, SweepOptions, SweepReport};

/// Relative tolerance for matching a terminal state against its prediction.
pub const MATCH_RTOL: f64 = 1e-3;

/// Merozoite level per strain in the default initial condition.
pub const DEFAULT_INOCULUM: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum OutcomeKind {
    Clearance,
    ExclusionWinner {
        strain: usize,
    },
    /// The largest thresholds tie; no single winner is predicted.
    NonGeneric,
    /// `strain` is predicted to win but the sufficient stability condition
    /// fails for it.
    InconclusiveStability {
        strain: usize,
    },
}

impl OutcomeKind {
    pub fn winner(&self) -> Option<usize> {
        match *self {
            Self::ExclusionWinner { strain } | Self::InconclusiveStability { strain } => Some(strain),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Clearance => "Clearance",
            Self::ExclusionWinner { .. } => "ExclusionWinner",
            Self::NonGeneric => "NonGeneric",
            Self::InconclusiveStability { .. } => "InconclusiveStability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomePrediction {
    pub kind: OutcomeKind,
    pub r0: f64,
    pub r0s: Vec<f64>,
    pub t0s: Vec<f64>,
    pub xstar: f64,
    /// Stability condition for the predicted winner; `None` without one.
    pub scstab_holds: Option<bool>,
    /// Only for single-strain, one-stage, `u = 1`, constant-recruitment models.
    pub amg_condition_holds: Option<bool>,
}

/// `u beta phi(xbar) <= alpha* mu_m` for strain `i`.
pub fn check_scstab(spec: &ModelSpec, i: usize) -> Result<bool> {
    let xstar = spec.validate()?;
    let report = threshold_report_with_xstar(spec, xstar);
    scstab_with_report(spec, i, &report)
}

fn scstab_with_report(spec: &ModelSpec, i: usize, report: &ThresholdReport) -> Result<bool> {
    let p = spec.strain(i)?;
    let ee = require_endemic_with_xstar(spec, i, report.xstar)?;
    Ok(spec.u * p.beta * spec.recruitment.phi(ee.xbar) <= report.alpha_star * p.mu_m)
}

/// `beta Lambda <= (sqrt(q) + sqrt(q - 1))^2 mu_x mu_m` with
/// `q = r gamma / alpha`, for models with one strain, one stage, `u = 1` and
/// constant recruitment. False when `q < 1`.
pub fn check_amg_condition(spec: &ModelSpec) -> Result<bool> {
    if spec.k != 1 || spec.n != 1 || spec.u != 1.0 {
        return Err(Error::WrongModelShape("requires k = 1, n = 1 and u = 1"));
    }
    if !spec.recruitment.is_constant() {
        return Err(Error::WrongModelShape("requires constant recruitment"));
    }
    spec.validate()?;
    let p = &spec.strains[0];
    Ok(amg_holds(
        p.beta,
        p.merozoite_yield(),
        spec.recruitment.lambda(),
        spec.recruitment.mu_x(),
        p.mu_m,
    ))
}

fn amg_holds(beta: f64, q: f64, lambda: f64, mu_x: f64, mu_m: f64) -> bool {
    if q < 1.0 {
        return false;
    }
    beta * lambda <= amg_multiplier(q) * mu_x * mu_m
}

/// `(sqrt(q) + sqrt(q - 1))^2`.
pub fn amg_multiplier(q: f64) -> f64 {
    (q.sqrt() + (q - 1.0).sqrt()).powi(2)
}

fn is_amg_shape(spec: &ModelSpec) -> bool {
    spec.k == 1 && spec.n == 1 && spec.u == 1.0 && spec.recruitment.is_constant()
}

pub fn predict(spec: &ModelSpec) -> Result<OutcomePrediction> {
    let xstar = spec.validate()?;
    let report = threshold_report_with_xstar(spec, xstar);
    predict_with_report(spec, &report)
}

pub(crate) fn predict_with_report(spec: &ModelSpec, report: &ThresholdReport) -> Result<OutcomePrediction> {
    let (kind, scstab_holds) = if report.r0 <= 1.0 {
        (OutcomeKind::Clearance, None)
    } else if !report.generic {
        (OutcomeKind::NonGeneric, None)
    } else {
        let w = report.argmax_t0();
        let holds = scstab_with_report(spec, w, report)?;
        let kind = if holds {
            OutcomeKind::ExclusionWinner { strain: w }
        } else {
            OutcomeKind::InconclusiveStability { strain: w }
        };
        (kind, Some(holds))
    };
    let amg_condition_holds = is_amg_shape(spec).then(|| {
        let p = &spec.strains[0];
        amg_holds(
            p.beta,
            p.merozoite_yield(),
            spec.recruitment.lambda(),
            spec.recruitment.mu_x(),
            p.mu_m,
        )
    });
    Ok(OutcomePrediction {
        kind,
        r0: report.r0,
        r0s: report.strains.iter().map(|s| s.r0).collect(),
        t0s: report.t0s(),
        xstar: report.xstar,
        scstab_holds,
        amg_condition_holds,
    })
}

/// Disease-free state plus `DEFAULT_INOCULUM` merozoites of every strain.
pub fn inoculated_dfe(spec: &ModelSpec) -> Result<SystemState> {
    let xstar = spec.validate()?;
    let mut s = dfe_with_xstar(spec, xstar);
    for st in &mut s.strains {
        st.m = DEFAULT_INOCULUM;
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchStatus {
    Matched,
    Mismatched,
    /// The start lies on a face the flow never leaves, outside the basin the
    /// prediction covers.
    InvariantFaceStart,
    /// Tied thresholds; nothing to compare.
    NotGeneric,
}

impl MatchStatus {
    /// Whether the run counts toward match statistics.
    pub fn counted(&self) -> bool {
        matches!(self, Self::Matched | Self::Mismatched)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub prediction: OutcomePrediction,
    pub status: MatchStatus,
    pub reason: Option<String>,
    pub extinct: Vec<bool>,
    /// Largest relative deviation of the terminal state from the predicted
    /// limit (`x*` for clearance, the winner's equilibrium otherwise).
    pub terminal_error: Option<f64>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub event: TerminalEvent,
    /// Decrease check of the Lyapunov function matching the prediction.
    pub decrease: Option<DecreaseReport>,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

impl ExperimentReport {
    pub fn matched(&self) -> bool {
        self.status == MatchStatus::Matched
    }
}

/// Integrates from `initial` over `opts.t_end` (steady-state stopping is
/// turned off so that losing strains get the full horizon to die out) and
/// compares the outcome against [`predict`].
pub fn run_experiment(spec: &ModelSpec, initial: &SystemState, opts: &IntegratorOptions) -> Result<ExperimentReport> {
    let xstar = spec.validate()?;
    let report = threshold_report_with_xstar(spec, xstar);
    let prediction = predict_with_report(spec, &report)?;
    let run_opts = IntegratorOptions {
        stop_at_steady_state: false,
        ..opts.clone()
    };
    let trajectory = integrate(spec, initial, &run_opts)?;
    let extinct = detect_extinction(&trajectory, spec, opts.extinction_eps);
    let final_state = trajectory.last_state().to_vec();
    let layout = spec.layout();
    let flat0 = initial.pack();
    let parasite_free = |i: usize| layout.parasite_max(&flat0, i) == 0.0;

    let mut reason = None;
    let mut terminal_error = None;
    let mut decrease = None;
    let status = if (0..spec.n).all(parasite_free) {
        MatchStatus::InvariantFaceStart
    } else {
        match prediction.kind {
            OutcomeKind::NonGeneric => MatchStatus::NotGeneric,
            OutcomeKind::Clearance => {
                let err = (final_state[0] - xstar).abs() / xstar;
                terminal_error = Some(err);
                decrease = LyapunovFunction::clearance(spec)
                    .ok()
                    .map(|f| verify_decrease(&f, &trajectory));
                if !extinct.iter().all(|&e| e) {
                    reason = Some(format!("strains not extinct: {:?}", survivors(&extinct)));
                    MatchStatus::Mismatched
                } else if err > MATCH_RTOL {
                    reason = Some(format!("x deviates from x* by {err:.3e} relative"));
                    MatchStatus::Mismatched
                } else {
                    MatchStatus::Matched
                }
            }
            OutcomeKind::ExclusionWinner { strain: w } | OutcomeKind::InconclusiveStability { strain: w } => {
                if parasite_free(w) {
                    MatchStatus::InvariantFaceStart
                } else {
                    let ee = endemic_with_xstar(spec, w, xstar)?.ok_or(Error::NoEndemicEquilibrium {
                        strain: w,
                        t0: t0(&spec.strains[w], xstar, spec.u),
                    })?;
                    let target = ee.to_state(spec).pack();
                    let mut idx: Vec<usize> = vec![0];
                    idx.extend((0..spec.k).map(|j| layout.y(w, j)));
                    idx.push(layout.m(w));
                    if spec.include_gametocytes {
                        idx.push(layout.g(w));
                    }
                    let scale = idx.iter().fold(0.0, |acc: f64, &i| acc.max(target[i].abs()));
                    let err = idx
                        .iter()
                        .map(|&i| {
                            let denom = if target[i] > 0.0 { target[i] } else { scale };
                            (final_state[i] - target[i]).abs() / denom
                        })
                        .fold(0.0, f64::max);
                    terminal_error = Some(err);
                    decrease = LyapunovFunction::multistrain(spec)
                        .ok()
                        .map(|f| verify_decrease(&f, &trajectory));
                    let losers_alive: Vec<usize> = (0..spec.n).filter(|&i| i != w && !extinct[i]).collect();
                    if !losers_alive.is_empty() {
                        reason = Some(format!("losing strains not extinct: {:?}", one_based(&losers_alive)));
                        MatchStatus::Mismatched
                    } else if err > MATCH_RTOL {
                        reason = Some(format!("winner deviates from its equilibrium by {err:.3e} relative"));
                        MatchStatus::Mismatched
                    } else {
                        MatchStatus::Matched
                    }
                }
            }
        }
    };

    Ok(ExperimentReport {
        prediction,
        status,
        reason,
        extinct,
        terminal_error,
        final_time: trajectory.final_time(),
        final_state,
        event: trajectory.event.clone(),
        decrease,
        trajectory,
    })
}

fn survivors(extinct: &[bool]) -> Vec<usize> {
    one_based(
        &extinct
            .iter()
            .enumerate()
            .filter(|(_, &e)| !e)
            .map(|(i, _)| i)
            .collect::<Vec<_>>(),
    )
}

fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|i| i + 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RecruitmentModel;
    use crate::testing::{running_spec, strain};

    fn two_strain() -> ModelSpec {
        // T0 = (3, 2): the second strain has beta lowered by a third.
        let mut spec = running_spec();
        spec.strains.push(strain(0.2 * 2.0 / 3.0, 16.0, &[0.5], &[0.5], 10.0));
        spec.n = 2;
        spec
    }

    #[test]
    fn scstab_examples() {
        let spec = running_spec();
        assert!(check_scstab(&spec, 0).unwrap());
        let mut no_absorb = spec.clone();
        no_absorb.u = 0.0;
        no_absorb.strains[0].beta = 50.0;
        assert!(check_scstab(&no_absorb, 0).unwrap());
        let mut sub = spec.clone();
        sub.strains[0].beta = 0.05;
        assert!(matches!(check_scstab(&sub, 0), Err(Error::NoEndemicEquilibrium { .. })));
    }

    #[test]
    fn scstab_constant_recruitment_simplification() {
        for &(beta, lambda, mu_x, mu_m, u) in &[
            (0.2, 1.0, 0.1, 10.0, 1.0),
            (3.0, 2.0, 0.3, 1.5, 2.0),
            (0.9, 5.0, 0.05, 0.7, 0.5),
        ] {
            let spec = ModelSpec::new(
                u,
                RecruitmentModel::Constant { lambda, mu_x },
                vec![strain(beta, 16.0, &[0.5], &[0.5], mu_m)],
            );
            let q: f64 = 16.0;
            let simplified = u * beta * lambda <= q / (q - u) * mu_x * mu_m;
            assert_eq!(check_scstab(&spec, 0).unwrap(), simplified);
        }
    }

    #[test]
    fn amg_condition_examples() {
        let spec = running_spec();
        assert!((amg_multiplier(16.0) - (4.0 + 15f64.sqrt()).powi(2)).abs() < 1e-12);
        assert!(check_amg_condition(&spec).unwrap());
        let mut big = spec.clone();
        big.strains[0].beta = 1e6;
        assert!(!check_amg_condition(&big).unwrap());
        assert!(matches!(
            check_amg_condition(&two_strain()),
            Err(Error::WrongModelShape(_))
        ));
    }

    #[test]
    fn predictions() {
        let mut sub = running_spec();
        sub.strains[0].beta = 0.05;
        assert_eq!(predict(&sub).unwrap().kind, OutcomeKind::Clearance);
        let p = predict(&two_strain()).unwrap();
        assert_eq!(p.kind, OutcomeKind::ExclusionWinner { strain: 0 });
        assert!((p.t0s[1] - 2.0).abs() < 1e-12);
        assert_eq!(p.amg_condition_holds, None);
        let mut tie = running_spec();
        tie.strains.push(tie.strains[0].clone());
        tie.n = 2;
        assert_eq!(predict(&tie).unwrap().kind, OutcomeKind::NonGeneric);
        assert_eq!(predict(&running_spec()).unwrap().amg_condition_holds, Some(true));
    }

    #[test]
    fn two_strain_experiment_matches() {
        let spec = two_strain();
        let initial = inoculated_dfe(&spec).unwrap();
        let opts = IntegratorOptions::with_horizon(&spec, 2000.0);
        let rep = run_experiment(&spec, &initial, &opts).unwrap();
        assert_eq!(rep.status, MatchStatus::Matched, "{:?}", rep.reason);
        assert_eq!(rep.extinct, vec![false, true]);
        assert!(rep.decrease.as_ref().unwrap().passed);
    }

    #[test]
    fn winner_on_invariant_face_is_skipped() {
        let spec = two_strain();
        let mut initial = inoculated_dfe(&spec).unwrap();
        initial.strains[0].m = 0.0;
        let opts = IntegratorOptions {
            t_end: 100.0,
            ..Default::default()
        };
        let rep = run_experiment(&spec, &initial, &opts).unwrap();
        assert_eq!(rep.status, MatchStatus::InvariantFaceStart);
        assert!(!rep.status.counted());
    }

    #[test]
    fn clearance_experiment_matches() {
        let mut spec = running_spec();
        spec.strains[0].beta = 0.05;
        let mut initial = inoculated_dfe(&spec).unwrap();
        initial.strains[0].y = vec![2.0];
        let opts = IntegratorOptions::with_horizon(&spec, 2000.0);
        let rep = run_experiment(&spec, &initial, &opts).unwrap();
        assert!(rep.matched(), "{:?}", rep.reason);
        assert!(rep.decrease.unwrap().passed);
    }
}
