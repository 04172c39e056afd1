//! Parameter sweeps over up to three axes, evaluated in parallel.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, RecruitmentModel};
use crate::outcome::{inoculated_dfe, predict_with_report, run_experiment, OutcomeKind};
use crate::simulate::IntegratorOptions;
use crate::threshold::threshold_report_with_xstar;

pub const MAX_AXES: usize = 3;
pub const MAX_CELLS: usize = 100_000;

/// Relative gap between the two largest `T0` below which a cell is reported
/// as a near tie.
pub const NEAR_TIE_GAP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StrainField {
    Beta,
    R,
    MuM,
    Delta,
    MuG,
    /// Zero-based stage index.
    Alpha(usize),
    Gamma(usize),
}

/// A scalar parameter addressed by a dotted path such as `u`,
/// `recruitment.lambda`, `strain2.beta` or `strain1.alphas[3]` (strain and
/// stage numbers are one-based in the text form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamPath {
    U,
    Lambda,
    MuX,
    S,
    Capacity,
    Strain { index: usize, field: StrainField },
}

impl FromStr for ParamPath {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let unknown = || Error::UnknownParameter(text.to_string());
        Ok(match text {
            "u" => Self::U,
            "recruitment.lambda" => Self::Lambda,
            "recruitment.mu_x" => Self::MuX,
            "recruitment.s" => Self::S,
            "recruitment.K" => Self::Capacity,
            _ => {
                let rest = text.strip_prefix("strain").ok_or_else(unknown)?;
                let (num, field) = rest.split_once('.').ok_or_else(unknown)?;
                let index: usize = num.parse().map_err(|_| unknown())?;
                if index == 0 {
                    return Err(unknown());
                }
                let stage = |prefix: &str| -> Option<usize> {
                    let inner = field.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')?;
                    inner.parse::<usize>().ok().filter(|&j| j >= 1).map(|j| j - 1)
                };
                let field = match field {
                    "beta" => StrainField::Beta,
                    "r" => StrainField::R,
                    "mu_m" => StrainField::MuM,
                    "delta" => StrainField::Delta,
                    "mu_g" => StrainField::MuG,
                    _ => {
                        if let Some(j) = stage("alphas") {
                            StrainField::Alpha(j)
                        } else if let Some(j) = stage("gammas") {
                            StrainField::Gamma(j)
                        } else {
                            return Err(unknown());
                        }
                    }
                };
                Self::Strain {
                    index: index - 1,
                    field,
                }
            }
        })
    }
}

impl fmt::Display for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::U => f.write_str("u"),
            Self::Lambda => f.write_str("recruitment.lambda"),
            Self::MuX => f.write_str("recruitment.mu_x"),
            Self::S => f.write_str("recruitment.s"),
            Self::Capacity => f.write_str("recruitment.K"),
            Self::Strain { index, field } => {
                let i = index + 1;
                match field {
                    StrainField::Beta => write!(f, "strain{i}.beta"),
                    StrainField::R => write!(f, "strain{i}.r"),
                    StrainField::MuM => write!(f, "strain{i}.mu_m"),
                    StrainField::Delta => write!(f, "strain{i}.delta"),
                    StrainField::MuG => write!(f, "strain{i}.mu_g"),
                    StrainField::Alpha(j) => write!(f, "strain{i}.alphas[{}]", j + 1),
                    StrainField::Gamma(j) => write!(f, "strain{i}.gammas[{}]", j + 1),
                }
            }
        }
    }
}

impl ParamPath {
    fn slot<'a>(&self, spec: &'a mut ModelSpec) -> Option<&'a mut f64> {
        match (*self, &mut spec.recruitment) {
            (Self::U, _) => Some(&mut spec.u),
            (Self::Lambda, RecruitmentModel::Constant { lambda, .. } | RecruitmentModel::Logistic { lambda, .. }) => {
                Some(lambda)
            }
            (Self::MuX, RecruitmentModel::Constant { mu_x, .. } | RecruitmentModel::Logistic { mu_x, .. }) => {
                Some(mu_x)
            }
            (Self::S, RecruitmentModel::Logistic { s, .. }) => Some(s),
            (Self::Capacity, RecruitmentModel::Logistic { capacity, .. }) => Some(capacity),
            (Self::S | Self::Capacity, RecruitmentModel::Constant { .. }) => None,
            (Self::Strain { index, field }, _) => {
                let p = spec.strains.get_mut(index)?;
                match field {
                    StrainField::Beta => Some(&mut p.beta),
                    StrainField::R => Some(&mut p.r),
                    StrainField::MuM => Some(&mut p.mu_m),
                    StrainField::Delta => Some(&mut p.delta),
                    StrainField::MuG => Some(&mut p.mu_g),
                    StrainField::Alpha(j) => p.alphas.get_mut(j),
                    StrainField::Gamma(j) => p.gammas.get_mut(j),
                }
            }
        }
    }

    /// Checks that the path addresses a parameter of `spec`.
    pub fn resolve(&self, spec: &ModelSpec) -> Result<f64> {
        let mut copy = spec.clone();
        self.slot(&mut copy)
            .map(|v| *v)
            .ok_or_else(|| Error::UnknownParameter(self.to_string()))
    }

    pub fn set(&self, spec: &mut ModelSpec, value: f64) -> Result<()> {
        let name = self.to_string();
        *self.slot(spec).ok_or(Error::UnknownParameter(name))? = value;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepAxis {
    pub path: ParamPath,
    pub values: Vec<f64>,
}

impl SweepAxis {
    /// `steps` evenly spaced values from `from` to `to` inclusive; a single
    /// step gives `[from]`.
    pub fn linspace(path: ParamPath, from: f64, to: f64, steps: usize) -> Self {
        let values = match steps {
            0 => Vec::new(),
            1 => vec![from],
            _ => (0..steps)
                .map(|j| {
                    if j == steps - 1 {
                        to
                    } else {
                        from + (to - from) * j as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        };
        Self { path, values }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Also run a simulation experiment per cell from the inoculated DFE.
    pub simulate: bool,
    /// Options for those experiments; `None` means defaults with a horizon of
    /// `2000 / min_rate` days for each cell.
    pub integrator: Option<IntegratorOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    /// Parameter values, one per axis.
    pub values: Vec<f64>,
    pub r0s: Vec<f64>,
    pub t0s: Vec<f64>,
    pub r0: f64,
    pub kind: Option<OutcomeKind>,
    pub near_tie: bool,
    /// Experiment outcome; `None` without simulation or when skipped.
    pub matched: Option<bool>,
    /// Validation or integration failure for this cell.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub axes: Vec<String>,
    pub cells: Vec<SweepCell>,
    /// Fraction of simulated, counted cells whose outcome matched.
    pub match_rate: Option<f64>,
    pub near_ties: usize,
}

/// Evaluates every cell of the grid spanned by `axes` (last axis fastest).
/// Rows come back in grid order regardless of scheduling.
pub fn sweep(template: &ModelSpec, axes: &[SweepAxis], opts: &SweepOptions) -> Result<SweepReport> {
    let cells: usize = axes.iter().map(|a| a.values.len()).product();
    if axes.len() > MAX_AXES || cells > MAX_CELLS {
        return Err(Error::BudgetExceeded {
            cells,
            limit: MAX_CELLS,
            axes: axes.len(),
        });
    }
    for a in axes {
        a.path.resolve(template)?;
    }
    let out: Vec<SweepCell> = (0..cells)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut values = vec![0.0; axes.len()];
            for (d, a) in axes.iter().enumerate().rev() {
                values[d] = a.values[rem % a.values.len()];
                rem /= a.values.len();
            }
            let mut spec = template.clone();
            for (a, &v) in axes.iter().zip(&values) {
                a.path.set(&mut spec, v).expect("path resolved above");
            }
            evaluate_cell(&spec, values, opts)
        })
        .collect();

    let counted: Vec<bool> = out.iter().filter_map(|c| c.matched).collect();
    let match_rate =
        (!counted.is_empty()).then(|| counted.iter().filter(|&&m| m).count() as f64 / counted.len() as f64);
    Ok(SweepReport {
        axes: axes.iter().map(|a| a.path.to_string()).collect(),
        near_ties: out.iter().filter(|c| c.near_tie).count(),
        cells: out,
        match_rate,
    })
}

fn evaluate_cell(spec: &ModelSpec, values: Vec<f64>, opts: &SweepOptions) -> SweepCell {
    let mut cell = SweepCell {
        values,
        r0s: Vec::new(),
        t0s: Vec::new(),
        r0: f64::NAN,
        kind: None,
        near_tie: false,
        matched: None,
        error: None,
    };
    let xstar = match spec.validate() {
        Ok(x) => x,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    let report = threshold_report_with_xstar(spec, xstar);
    cell.r0s = report.strains.iter().map(|s| s.r0).collect();
    cell.t0s = report.t0s();
    cell.r0 = report.r0;
    cell.near_tie = report.r0 > 1.0 && report.top_gap() < NEAR_TIE_GAP;
    match predict_with_report(spec, &report) {
        Ok(p) => cell.kind = Some(p.kind),
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    }
    if opts.simulate {
        let iopts = opts
            .integrator
            .clone()
            .unwrap_or_else(|| IntegratorOptions::with_horizon(spec, 2000.0));
        let result = inoculated_dfe(spec).and_then(|init| run_experiment(spec, &init, &iopts));
        match result {
            Ok(rep) if rep.status.counted() => cell.matched = Some(rep.matched()),
            Ok(_) => {}
            Err(e) => cell.error = Some(e.to_string()),
        }
    }
    cell
}
