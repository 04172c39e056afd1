//! Adaptive Dormand-Prince 5(4) integration with dense output, a
//! clamp-or-reject rule for negative undershoot, and steady-state and
//! extinction detection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{rhs, ModelSpec, SystemState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    /// Absolute tolerance for `x`. Parasite and gametocyte compartments use
    /// `min(atol, COMPARTMENT_ATOL_FACTOR * extinction_eps)` so that decay
    /// below the extinction level is resolved instead of drowning in
    /// error-control noise of size `atol`.
    pub atol: f64,
    /// Final time (days).
    pub t_end: f64,
    /// Upper bound on the step size (days).
    pub max_step: f64,
    /// Level below which a strain's `y` and `m` count as extinct.
    pub extinction_eps: f64,
    /// Steady state when `||F||_inf < steady_tol (1 + ||state||_inf)`.
    pub steady_tol: f64,
    /// Number of sampling intervals on `[0, t_end]`; `samples + 1` rows.
    pub samples: usize,
    /// Stop once the steady-state test has held over the last
    /// `steady_window` days of accepted steps.
    pub stop_at_steady_state: bool,
    /// `None` means `10 / min_rate`.
    pub steady_window: Option<f64>,
    /// Stop as soon as every strain is below `extinction_eps`.
    pub stop_on_extinction: bool,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            t_end: 1000.0,
            max_step: f64::INFINITY,
            extinction_eps: 1e-12,
            steady_tol: 1e-9,
            samples: 1000,
            stop_at_steady_state: true,
            steady_window: None,
            stop_on_extinction: false,
            max_steps: 50_000_000,
        }
    }
}

impl IntegratorOptions {
    /// Defaults with `t_end = horizon / min_rate`.
    pub fn with_horizon(spec: &ModelSpec, horizon: f64) -> Self {
        Self {
            t_end: horizon / spec.min_rate(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("t_end", self.t_end),
            ("max_step", self.max_step),
            ("extinction_eps", self.extinction_eps),
            ("steady_tol", self.steady_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidOptions(format!("{name} = {v} must be > 0")));
            }
        }
        if !self.t_end.is_finite() {
            return Err(Error::InvalidOptions("t_end must be finite".into()));
        }
        if let Some(w) = self.steady_window {
            if !(w >= 0.0) {
                return Err(Error::InvalidOptions(format!("steady_window = {w} must be >= 0")));
            }
        }
        if self.samples == 0 {
            return Err(Error::InvalidOptions("samples must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidOptions("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event")]
pub enum TerminalEvent {
    ReachedTEnd,
    SteadyState {
        t: f64,
    },
    /// Every listed strain fell below the extinction level.
    Extinction {
        t: f64,
        strains: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Steps rejected for undershooting below `-atol`.
    pub negativity_rejections: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Flat states, one per sample time.
    pub states: Vec<Vec<f64>>,
    pub event: TerminalEvent,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }
}

// Dormand-Prince 5(4) tableau. The right-hand side is autonomous, so the
// stage times are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Ratio between the compartment absolute tolerance and `extinction_eps`.
pub const COMPARTMENT_ATOL_FACTOR: f64 = 1e-3;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - PI_BETA * 0.75;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

/// Whether `F(state)` is small relative to the state.
pub fn steady_state_detect(spec: &ModelSpec, state: &[f64], steady_tol: f64) -> bool {
    let mut du = vec![0.0; state.len()];
    rhs(spec, state, &mut du);
    inf_norm(&du) < steady_tol * (1.0 + inf_norm(state))
}

/// Strain `i` is extinct when `max(y_i, m_i) < eps` at every sample in the
/// final 10% of the trajectory (at least one sample).
pub fn detect_extinction(trajectory: &Trajectory, spec: &ModelSpec, eps: f64) -> Vec<bool> {
    let layout = spec.layout();
    let len = trajectory.states.len();
    let tail = (len / 10).max(1).min(len);
    let window = &trajectory.states[len - tail..];
    (0..spec.n)
        .map(|i| window.iter().all(|s| layout.parasite_max(s, i) < eps))
        .collect()
}

/// Integrates from `t = 0` to `opts.t_end`, sampling at `samples + 1`
/// equally spaced times by dense output.
pub fn integrate(spec: &ModelSpec, initial: &SystemState, opts: &IntegratorOptions) -> Result<Trajectory> {
    opts.validate()?;
    let y0 = initial.pack();
    if y0.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: y0.len(),
        });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: 0.0 });
    }
    if y0.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidOptions("initial state must be nonnegative".into()));
    }
    Dopri::new(spec, opts).run(y0)
}

struct Dopri<'a> {
    spec: &'a ModelSpec,
    opts: &'a IntegratorOptions,
    n: usize,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    err: Vec<f64>,
    atol: Vec<f64>,
    stats: IntegratorStats,
}

impl<'a> Dopri<'a> {
    fn new(spec: &'a ModelSpec, opts: &'a IntegratorOptions) -> Self {
        let n = spec.dim();
        Self {
            spec,
            opts,
            n,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y1: vec![0.0; n],
            err: vec![0.0; n],
            atol: (0..n)
                .map(|i| {
                    if i == 0 {
                        opts.atol
                    } else {
                        opts.atol.min(COMPARTMENT_ATOL_FACTOR * opts.extinction_eps)
                    }
                })
                .collect(),
            stats: IntegratorStats::default(),
        }
    }

    fn f(&mut self, stage: usize, state_from_tmp: bool) {
        self.stats.evaluations += 1;
        let src = if state_from_tmp { &self.tmp } else { &self.y1 };
        rhs(self.spec, src, &mut self.k[stage]);
    }

    fn initial_step(&mut self, y: &[f64]) -> f64 {
        // Hairer-Norsett-Wanner starting step heuristic.
        let opts = self.opts;
        let sc: Vec<f64> = y.iter().zip(&self.atol).map(|(v, a)| a + opts.rtol * v.abs()).collect();
        let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        let d0 = rms(y);
        let d1 = rms(&self.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(opts.max_step).min(opts.t_end);
        for i in 0..self.n {
            self.tmp[i] = y[i] + h0 * self.k[0][i];
        }
        self.f(1, true);
        let diff: Vec<f64> = (0..self.n).map(|i| (self.k[1][i] - self.k[0][i]) / h0).collect();
        let d2 = rms(&diff);
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(opts.max_step).min(opts.t_end)
    }

    fn run(mut self, mut y: Vec<f64>) -> Result<Trajectory> {
        let opts = self.opts;
        let n = self.n;
        let t_end = opts.t_end;
        let sample_times: Vec<f64> = (0..=opts.samples)
            .map(|i| {
                if i == opts.samples {
                    t_end
                } else {
                    t_end * i as f64 / opts.samples as f64
                }
            })
            .collect();
        let mut times = vec![0.0];
        let mut states = vec![y.clone()];
        let mut next_sample = 1;

        let steady_window = opts.steady_window.unwrap_or(10.0 / self.spec.min_rate());
        let mut steady_since: Option<f64> = None;
        let layout = self.spec.layout();
        let all_extinct = |s: &[f64]| (0..layout.n).all(|i| layout.parasite_max(s, i) < opts.extinction_eps);

        rhs(self.spec, &y, &mut self.k[0]);
        self.stats.evaluations += 1;
        if opts.stop_on_extinction && all_extinct(&y) {
            return Ok(self.finish(
                times,
                states,
                TerminalEvent::Extinction {
                    t: 0.0,
                    strains: (0..layout.n).collect(),
                },
            ));
        }
        if opts.stop_at_steady_state && inf_norm(&self.k[0]) < opts.steady_tol * (1.0 + inf_norm(&y)) {
            steady_since = Some(0.0);
        }

        let mut t = 0.0;
        let mut h = self.initial_step(&y);
        let mut err_old: f64 = 1e-4;
        let mut last_rejected = false;
        let mut rcont = vec![vec![0.0; n]; 5];

        while t < t_end {
            if self.stats.accepted + self.stats.rejected >= opts.max_steps {
                return Err(Error::StepBudget {
                    t,
                    max_steps: opts.max_steps,
                });
            }
            h = h.min(opts.max_step);
            let last_step = t + h >= t_end || (t_end - t - h) <= 1e-12 * t_end;
            if last_step {
                h = t_end - t;
            }
            if h < 16.0 * f64::EPSILON * t.abs().max(1e-300) || h <= 0.0 {
                return Err(Error::StepSizeUnderflow { t, h });
            }

            self.stage(&y, h);
            let t_new = if last_step { t_end } else { t + h };

            if self.y1.iter().any(|v| !v.is_finite()) || self.k[6].iter().any(|v| !v.is_finite()) {
                self.stats.rejected += 1;
                h *= 0.25;
                last_rejected = true;
                if h < 16.0 * f64::EPSILON * t.abs().max(1e-300) {
                    return Err(Error::NonFiniteState { t });
                }
                continue;
            }

            let mut err = 0.0;
            for i in 0..n {
                let sc = self.atol[i] + opts.rtol * y[i].abs().max(self.y1[i].abs());
                err += (self.err[i] / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();

            if err > 1.0 {
                self.stats.rejected += 1;
                let fac = (SAFETY / err.powf(PI_ALPHA)).clamp(FAC_MIN, 1.0);
                h *= fac;
                last_rejected = true;
                continue;
            }

            // Negative undershoot: reject below -atol, clamp within it.
            if self.y1.iter().any(|&v| v < -opts.atol) {
                self.stats.rejected += 1;
                self.stats.negativity_rejections += 1;
                h *= 0.5;
                last_rejected = true;
                continue;
            }
            let mut clamped = false;
            for v in &mut self.y1 {
                if *v < 0.0 {
                    *v = 0.0;
                    clamped = true;
                }
            }
            if clamped {
                self.f(6, false);
            }

            // Dense output coefficients for [t, t_new].
            for i in 0..n {
                let dy = self.y1[i] - y[i];
                let bspl = h * self.k[0][i] - dy;
                rcont[0][i] = y[i];
                rcont[1][i] = dy;
                rcont[2][i] = bspl;
                rcont[3][i] = dy - h * self.k[6][i] - bspl;
                rcont[4][i] = h
                    * (D1 * self.k[0][i]
                        + D3 * self.k[2][i]
                        + D4 * self.k[3][i]
                        + D5 * self.k[4][i]
                        + D6 * self.k[5][i]
                        + D7 * self.k[6][i]);
            }

            self.stats.accepted += 1;
            while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                let ts = sample_times[next_sample];
                let theta = ((ts - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                let s: Vec<f64> = (0..n)
                    .map(|i| {
                        let v = rcont[0][i]
                            + theta
                                * (rcont[1][i] + theta1 * (rcont[2][i] + theta * (rcont[3][i] + theta1 * rcont[4][i])));
                        if ts == t_new {
                            self.y1[i]
                        } else {
                            v.max(0.0)
                        }
                    })
                    .collect();
                times.push(ts);
                states.push(s);
                next_sample += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut self.y1);
            self.k.swap(0, 6);

            if opts.stop_on_extinction && all_extinct(&y) {
                push_final(&mut times, &mut states, t, &y);
                let event = TerminalEvent::Extinction {
                    t,
                    strains: (0..layout.n).collect(),
                };
                return Ok(self.finish(times, states, event));
            }
            if opts.stop_at_steady_state {
                if inf_norm(&self.k[0]) < opts.steady_tol * (1.0 + inf_norm(&y)) {
                    let since = *steady_since.get_or_insert(t);
                    if t - since >= steady_window && t < t_end {
                        push_final(&mut times, &mut states, t, &y);
                        return Ok(self.finish(times, states, TerminalEvent::SteadyState { t }));
                    }
                } else {
                    steady_since = None;
                }
            }

            // PI step-size controller.
            let err_c = err.max(1e-10);
            let mut fac = SAFETY * err_old.powf(PI_BETA) / err_c.powf(PI_ALPHA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            err_old = err_c.max(1e-4);
            last_rejected = false;
            h *= fac;
        }

        let event = if opts.stop_at_steady_state && steady_since.is_some_and(|since| t_end - since >= steady_window) {
            TerminalEvent::SteadyState { t: t_end }
        } else {
            TerminalEvent::ReachedTEnd
        };
        Ok(self.finish(times, states, event))
    }

    fn finish(self, times: Vec<f64>, states: Vec<Vec<f64>>, event: TerminalEvent) -> Trajectory {
        Trajectory {
            times,
            states,
            event,
            stats: self.stats,
        }
    }

    /// Fills `k[1..7]`, `y1` (fifth-order solution) and `err`.
    fn stage(&mut self, y: &[f64], h: f64) {
        let n = self.n;
        macro_rules! combo {
            ($($c:expr => $s:expr),+) => {
                for i in 0..n {
                    self.tmp[i] = y[i] + h * (0.0 $(+ $c * self.k[$s][i])+);
                }
            };
        }
        combo!(A21 => 0);
        self.f(1, true);
        combo!(A31 => 0, A32 => 1);
        self.f(2, true);
        combo!(A41 => 0, A42 => 1, A43 => 2);
        self.f(3, true);
        combo!(A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        self.f(4, true);
        combo!(A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
        self.f(5, true);
        for i in 0..n {
            self.y1[i] = y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        self.f(6, false);
        for i in 0..n {
            self.err[i] = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
        }
    }
}

fn push_final(times: &mut Vec<f64>, states: &mut Vec<Vec<f64>>, t: f64, y: &[f64]) {
    if times.last().is_some_and(|&last| last >= t) {
        return;
    }
    times.push(t);
    states.push(y.to_vec());
}
