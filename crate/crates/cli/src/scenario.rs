//! Scenario files: JSON documents describing a model, optional integrator
//! settings and an optional initial state.

use std::path::Path;

use intrahost_core::{
    inoculated_dfe, IntegratorOptions, ModelSpec, RecruitmentModel, StrainParams, StrainState, SystemState,
};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Default horizon in units of the slowest rate, `t_end = 2000 / min_rate`.
pub const DEFAULT_HORIZON: f64 = 2000.0;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelBlock,
    pub recruitment: RecruitmentBlock,
    pub strains: Vec<StrainBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialBlock>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub k: usize,
    pub n: usize,
    pub u: f64,
    #[serde(default = "yes")]
    pub include_gametocytes: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum RecruitmentBlock {
    Constant {
        lambda: f64,
        mu_x: f64,
    },
    Logistic {
        lambda: f64,
        mu_x: f64,
        s: f64,
        #[serde(rename = "K")]
        capacity: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StrainBlock {
    pub beta: f64,
    pub r: f64,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub mu_m: f64,
    pub delta: f64,
    pub mu_g: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extinction_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub x: f64,
    pub strains: Vec<InitialStrain>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStrain {
    pub y: Vec<f64>,
    pub g: f64,
    pub m: f64,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub spec: ModelSpec,
    pub options: IntegratorOptions,
    pub initial: SystemState,
}

impl Loaded {
    /// The scenario as one line of compact JSON, reparseable by [`parse`].
    pub fn echo(&self) -> String {
        serde_json::to_string(&self.scenario).expect("scenario serializes")
    }
}

pub fn load(path: &Path) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|f| match f {
        Failure::Parse(msg) => Failure::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str) -> Result<Loaded, Failure> {
    let scenario: Scenario = serde_json::from_str(text)
        .map_err(|e| Failure::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    resolve(scenario)
}

fn resolve(scenario: Scenario) -> Result<Loaded, Failure> {
    let recruitment = match scenario.recruitment {
        RecruitmentBlock::Constant { lambda, mu_x } => RecruitmentModel::Constant { lambda, mu_x },
        RecruitmentBlock::Logistic {
            lambda,
            mu_x,
            s,
            capacity,
        } => RecruitmentModel::Logistic {
            lambda,
            s,
            capacity,
            mu_x,
        },
    };
    let strains = scenario
        .strains
        .iter()
        .map(|s| StrainParams {
            beta: s.beta,
            r: s.r,
            gammas: s.gammas.clone(),
            alphas: s.alphas.clone(),
            mu_m: s.mu_m,
            delta: s.delta,
            mu_g: s.mu_g,
        })
        .collect();
    let spec = ModelSpec {
        k: scenario.model.k,
        n: scenario.model.n,
        u: scenario.model.u,
        recruitment,
        strains,
        include_gametocytes: scenario.model.include_gametocytes,
    };
    spec.validate().map_err(|e| Failure::Invalid(e.to_string()))?;

    let options = integrator_options(&spec, scenario.simulation.as_ref());
    options.validate().map_err(|e| Failure::Invalid(e.to_string()))?;

    let initial = match &scenario.initial {
        None => inoculated_dfe(&spec).map_err(|e| Failure::Invalid(e.to_string()))?,
        Some(block) => initial_state(&spec, block)?,
    };
    Ok(Loaded {
        scenario,
        spec,
        options,
        initial,
    })
}

/// Defaults with `t_end = DEFAULT_HORIZON / min_rate`, overridden by the
/// scenario's simulation block.
pub fn integrator_options(spec: &ModelSpec, block: Option<&SimulationBlock>) -> IntegratorOptions {
    let mut o = IntegratorOptions::with_horizon(spec, DEFAULT_HORIZON);
    if let Some(b) = block {
        if let Some(v) = b.t_end {
            o.t_end = v;
        }
        if let Some(v) = b.rtol {
            o.rtol = v;
        }
        if let Some(v) = b.atol {
            o.atol = v;
        }
        if let Some(v) = b.extinction_eps {
            o.extinction_eps = v;
        }
        if let Some(v) = b.samples {
            o.samples = v;
        }
    }
    o
}

fn initial_state(spec: &ModelSpec, block: &InitialBlock) -> Result<SystemState, Failure> {
    if block.strains.len() != spec.n {
        return Err(Failure::Invalid(format!(
            "initial state lists {} strains, model has {}",
            block.strains.len(),
            spec.n
        )));
    }
    let mut strains = Vec::with_capacity(spec.n);
    for (i, s) in block.strains.iter().enumerate() {
        if s.y.len() != spec.k {
            return Err(Failure::Invalid(format!(
                "initial state of strain {} has {} stages, model has {}",
                i + 1,
                s.y.len(),
                spec.k
            )));
        }
        strains.push(StrainState {
            y: s.y.clone(),
            g: s.g,
            m: s.m,
        });
    }
    let state = SystemState { x: block.x, strains };
    if state.pack().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Failure::Invalid("initial state must be finite and nonnegative".into()));
    }
    Ok(state)
}
