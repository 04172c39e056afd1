use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use intrahost_core::{
    check_scstab, endemic_equilibrium, integrate, predict, run_experiment, sweep as run_sweep, threshold_report, Error,
    MatchStatus, ModelSpec, OutcomeKind, OutcomePrediction, ParamPath, SweepAxis, SweepOptions, TerminalEvent,
};
use serde::Serialize;

use crate::scenario::{self, integrator_options, Loaded};
use crate::Failure;

fn invalid(e: Error) -> Failure {
    Failure::Invalid(e.to_string())
}

fn integrator(e: Error) -> Failure {
    match e {
        Error::InvalidOptions(_) | Error::DimensionMismatch { .. } | Error::Invalid(_) => invalid(e),
        other => Failure::Integrator(other.to_string()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Output(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_failure(e: io::Error) -> Failure {
    Failure::Output(e.to_string())
}

/// Outcome label with one-based strain numbers, e.g. `ExclusionWinner{1}`.
pub fn kind_label(kind: &OutcomeKind) -> String {
    match kind.winner() {
        Some(w) => format!("{}{{{}}}", kind.label(), w + 1),
        None => kind.label().to_string(),
    }
}

fn prediction_line(p: &OutcomePrediction) -> String {
    match p.kind {
        OutcomeKind::Clearance => format!("Clearance (R0 = {:.4} ≤ 1)", p.r0),
        OutcomeKind::NonGeneric => format!("NonGeneric (largest T0 = {:.4} is shared)", max(&p.t0s)),
        OutcomeKind::ExclusionWinner { strain } => {
            format!("{} (T0 = {:.4} is the largest)", kind_label(&p.kind), p.t0s[strain])
        }
        OutcomeKind::InconclusiveStability { strain } => format!(
            "{} (T0 = {:.4} is the largest but the stability condition fails)",
            kind_label(&p.kind),
            p.t0s[strain]
        ),
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "holds",
        Some(false) => "fails",
        None => "n/a",
    }
}

#[derive(Serialize)]
struct AnalyzeReport {
    xstar: f64,
    alpha_star: f64,
    r0: f64,
    strains: Vec<StrainReport>,
    amg_condition: Option<bool>,
    prediction: PredictionReport,
}

#[derive(Serialize)]
struct StrainReport {
    strain: usize,
    r0: f64,
    t0: f64,
    equilibrium: Option<EquilibriumReport>,
    scstab: Option<bool>,
}

#[derive(Serialize)]
struct EquilibriumReport {
    x: f64,
    y: Vec<f64>,
    g: f64,
    m: f64,
}

#[derive(Serialize)]
struct PredictionReport {
    kind: &'static str,
    winner: Option<usize>,
    label: String,
}

fn analyze_report(spec: &ModelSpec) -> Result<AnalyzeReport, Failure> {
    let thresholds = threshold_report(spec).map_err(invalid)?;
    let prediction = predict(spec).map_err(invalid)?;
    let mut strains = Vec::with_capacity(spec.n);
    for (i, t) in thresholds.strains.iter().enumerate() {
        let ee = endemic_equilibrium(spec, i).map_err(invalid)?;
        let scstab = match ee {
            Some(_) => Some(check_scstab(spec, i).map_err(invalid)?),
            None => None,
        };
        strains.push(StrainReport {
            strain: i + 1,
            r0: t.r0,
            t0: t.t0,
            equilibrium: ee.map(|e| EquilibriumReport {
                x: e.xbar,
                y: e.ybar().to_vec(),
                g: e.gbar,
                m: e.mbar(),
            }),
            scstab,
        });
    }
    Ok(AnalyzeReport {
        xstar: thresholds.xstar,
        alpha_star: thresholds.alpha_star,
        r0: thresholds.r0,
        strains,
        amg_condition: prediction.amg_condition_holds,
        prediction: PredictionReport {
            kind: prediction.kind.label(),
            winner: prediction.kind.winner().map(|w| w + 1),
            label: prediction_line(&prediction),
        },
    })
}

fn render_analyze(r: &AnalyzeReport) -> String {
    let mut s = String::new();
    let fmt_vec = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    let _ = writeln!(s, "x* = {:.4}", r.xstar);
    for st in &r.strains {
        let _ = write!(s, "strain {}: R0 = {:.4}, T0 = {:.4}, EE: ", st.strain, st.r0, st.t0);
        match &st.equilibrium {
            Some(e) => {
                let _ = write!(
                    s,
                    "x = {:.4}, y = [{}], g = {:.4}, m = {:.4}",
                    e.x,
                    fmt_vec(&e.y),
                    e.g,
                    e.m
                );
            }
            None => s.push_str("none"),
        }
        let _ = writeln!(s, ", SCstab: {}", flag(st.scstab));
    }
    let _ = writeln!(s, "R0 = {:.4}", r.r0);
    let _ = writeln!(s, "AMG condition: {}", flag(r.amg_condition));
    let _ = writeln!(s, "prediction: {}", r.prediction.label);
    s
}

pub fn analyze(path: &Path, json: Option<&Path>) -> Result<(), Failure> {
    let loaded = scenario::load(path)?;
    let report = analyze_report(&loaded.spec)?;
    print!("{}", render_analyze(&report));
    if let Some(p) = json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(p, text + "\n").map_err(|e| Failure::Output(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn trajectory_header(spec: &ModelSpec) -> String {
    let mut cols = vec!["t".to_string(), "x".to_string()];
    for i in 1..=spec.n {
        cols.extend((1..=spec.k).map(|j| format!("y_{j}_s{i}")));
        cols.push(format!("g_s{i}"));
        cols.push(format!("m_s{i}"));
    }
    cols.join(",")
}

fn event_json(event: &TerminalEvent) -> String {
    serde_json::to_string(event).expect("event serializes")
}

pub fn simulate(path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let loaded = scenario::load(path)?;
    let traj = integrate(&loaded.spec, &loaded.initial, &loaded.options).map_err(integrator)?;
    let mut w = output(out)?;
    writeln!(w, "# scenario {}", loaded.echo()).map_err(io_failure)?;
    writeln!(w, "{}", trajectory_header(&loaded.spec)).map_err(io_failure)?;
    let mut line = String::new();
    for (t, state) in traj.times.iter().zip(&traj.states) {
        line.clear();
        let _ = write!(line, "{t}");
        for v in state {
            let _ = write!(line, ",{v}");
        }
        writeln!(w, "{line}").map_err(io_failure)?;
    }
    writeln!(w, "# event {}", event_json(&traj.event)).map_err(io_failure)?;
    w.flush().map_err(io_failure)
}

pub fn verify(path: &Path) -> Result<(), Failure> {
    let Loaded {
        spec, options, initial, ..
    } = scenario::load(path)?;
    let rep = run_experiment(&spec, &initial, &options).map_err(integrator)?;
    println!("prediction: {}", prediction_line(&rep.prediction));
    if rep.status == MatchStatus::InvariantFaceStart {
        println!("skipped: the initial state lies on an invariant face outside the predicted basin (invariant face)");
        return Ok(());
    }
    println!("simulated to t = {} ({})", rep.final_time, event_json(&rep.event));
    let extinct: Vec<String> = rep
        .extinct
        .iter()
        .enumerate()
        .map(|(i, e)| format!("strain {}: {}", i + 1, if *e { "extinct" } else { "persists" }))
        .collect();
    println!("{}", extinct.join(", "));
    if let Some(err) = rep.terminal_error {
        println!("terminal relative error: {err:.3e}");
    }
    let mut problems = Vec::new();
    match rep.status {
        MatchStatus::Matched => println!("outcome: matched"),
        MatchStatus::NotGeneric => problems.push("tied thresholds; no generic prediction to confirm".to_string()),
        _ => problems.push(format!("outcome mismatch: {}", rep.reason.clone().unwrap_or_default())),
    }
    match &rep.decrease {
        Some(d) if d.passed => println!(
            "Lyapunov decrease: verified (largest step change {:.3e})",
            d.max_increase
        ),
        Some(d) => {
            problems.push(format!(
                "Lyapunov function increased by {:.3e} (tolerance {:.3e}) after sample {}",
                d.max_increase,
                d.tolerance,
                d.worst_index.unwrap_or(0)
            ));
        }
        None => problems.push("no Lyapunov function available for this prediction".to_string()),
    }
    if problems.is_empty() {
        println!("PASS");
        return Ok(());
    }
    if let Some(d) = &rep.decrease {
        eprintln!("# V samples");
        eprintln!("t,V");
        for (t, v) in rep.trajectory.times.iter().zip(&d.values) {
            eprintln!("{t},{v}");
        }
    }
    println!("FAIL");
    Err(Failure::Mismatch(problems.join("; ")))
}

pub fn sweep(
    path: &Path,
    param: &str,
    from: f64,
    to: f64,
    steps: usize,
    out: Option<&Path>,
    simulate: bool,
) -> Result<(), Failure> {
    let loaded = scenario::load(path)?;
    let spec = &loaded.spec;
    let param: ParamPath = param.parse().map_err(invalid)?;
    param.resolve(spec).map_err(invalid)?;
    if steps == 0 {
        return Err(Failure::Invalid("--steps must be at least 1".into()));
    }
    if !from.is_finite() || !to.is_finite() {
        return Err(Failure::Invalid("--from and --to must be finite".into()));
    }
    let opts = SweepOptions {
        simulate,
        integrator: loaded
            .scenario
            .simulation
            .as_ref()
            .map(|b| integrator_options(spec, Some(b))),
    };
    let axis = SweepAxis::linspace(param, from, to, steps);
    let report = run_sweep(spec, &[axis], &opts).map_err(invalid)?;

    let mut w = output(out)?;
    writeln!(w, "# scenario {}", loaded.echo()).map_err(io_failure)?;
    let mut header = vec![param.to_string()];
    header.extend((1..=spec.n).map(|i| format!("R0_s{i}")));
    header.extend((1..=spec.n).map(|i| format!("T0_s{i}")));
    header.push("prediction".into());
    if simulate {
        header.push("matched".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io_failure)?;
    for cell in &report.cells {
        let mut row: Vec<String> = cell.values.iter().map(|v| v.to_string()).collect();
        if cell.r0s.len() == spec.n {
            row.extend(cell.r0s.iter().map(|v| v.to_string()));
            row.extend(cell.t0s.iter().map(|v| v.to_string()));
        } else {
            row.extend(std::iter::repeat_n(String::new(), 2 * spec.n));
        }
        row.push(match (&cell.kind, &cell.error) {
            (Some(k), _) => kind_label(k),
            (None, Some(_)) => "invalid".into(),
            (None, None) => String::new(),
        });
        if simulate {
            row.push(cell.matched.map(|m| m.to_string()).unwrap_or_default());
        }
        writeln!(w, "{}", row.join(",")).map_err(io_failure)?;
    }
    if let Some(rate) = report.match_rate {
        writeln!(w, "# match rate {rate}").map_err(io_failure)?;
    }
    w.flush().map_err(io_failure)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let text = r#"{"model": {"k": 2, "n": 2, "u": 1},
            "recruitment": {"type": "constant", "lambda": 1, "mu_x": 0.1},
            "strains": [
                {"beta": 0.2, "r": 16, "gammas": [0.5, 0.5], "alphas": [0.5, 0.5], "mu_m": 10, "delta": 0.1, "mu_g": 0.5},
                {"beta": 0.1, "r": 16, "gammas": [0.5, 0.5], "alphas": [0.5, 0.5], "mu_m": 10, "delta": 0.1, "mu_g": 0.5}
            ]}"#;
        let l = scenario::parse(text).unwrap();
        assert_eq!(
            trajectory_header(&l.spec),
            "t,x,y_1_s1,y_2_s1,g_s1,m_s1,y_1_s2,y_2_s2,g_s2,m_s2"
        );
    }

    #[test]
    fn labels_are_one_based() {
        assert_eq!(
            kind_label(&OutcomeKind::ExclusionWinner { strain: 0 }),
            "ExclusionWinner{1}"
        );
        assert_eq!(kind_label(&OutcomeKind::Clearance), "Clearance");
    }
}
