//! Parameter sweeps across the synchronization boundary, bisection of the
//! infinite-period bifurcation on the dynamics, and period-divergence fits.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{default_horizon, integrate, DynamicsError, IntegratorSettings, Outcome};
use crate::equilibrium::{branch_parameters, sync_frequency};
use crate::grid::{GridSpec, SystemState};
use crate::stability::check_criterion;

#[derive(Debug, Error)]
pub enum BifurcationError {
    #[error("invalid parameter '{0}' (expected K<i>, D<i> or A<i>, e.g. K2, D10)")]
    BadParameter(String),
    #[error("parameter {param} does not exist on an n = {n} grid")]
    ParameterOutOfRange { param: Parameter, n: usize },
    #[error("parameter value {value} makes the grid invalid: {reason}")]
    InvalidValue { value: f64, reason: String },
    #[error("same outcome ({outcome}) at both ends of [{lo}, {hi}]")]
    SameOutcomeAtEndpoints { lo: f64, hi: f64, outcome: &'static str },
    #[error("only {found} of the approach values produced a limit cycle; need at least {needed}")]
    InsufficientCyclePoints { found: usize, needed: usize },
    #[error("approach values must be positive and span at least two decades")]
    EpsilonRange,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A scalar grid parameter, with 1-based generator index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parameter {
    /// K_{1i}, spoke i in 2..=n.
    Coupling(usize),
    Damping(usize),
    Injection(usize),
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameter::Coupling(i) => write!(f, "K{i}"),
            Parameter::Damping(i) => write!(f, "D{i}"),
            Parameter::Injection(i) => write!(f, "A{i}"),
        }
    }
}

impl FromStr for Parameter {
    type Err = BifurcationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BifurcationError::BadParameter(s.to_string());
        let mut chars = s.chars();
        let kind = chars.next().ok_or_else(bad)?;
        let index: usize = chars.as_str().trim_start_matches([':', '_']).parse().map_err(|_| bad())?;
        match kind.to_ascii_uppercase() {
            'K' => Ok(Parameter::Coupling(index)),
            'D' => Ok(Parameter::Damping(index)),
            'A' => Ok(Parameter::Injection(index)),
            _ => Err(bad()),
        }
    }
}

impl Parameter {
    pub fn check(&self, spec: &GridSpec) -> Result<(), BifurcationError> {
        let ok = match *self {
            Parameter::Coupling(i) => (2..=spec.n).contains(&i),
            Parameter::Damping(i) | Parameter::Injection(i) => (1..=spec.n).contains(&i),
        };
        if ok {
            Ok(())
        } else {
            Err(BifurcationError::ParameterOutOfRange { param: *self, n: spec.n })
        }
    }

    pub fn get(&self, spec: &GridSpec) -> f64 {
        match *self {
            Parameter::Coupling(i) => spec.coupling[i - 2],
            Parameter::Damping(i) => spec.damping[i - 1],
            Parameter::Injection(i) => spec.injection[i - 1],
        }
    }

    /// Copy of `spec` with this parameter set to `value`, validated.
    pub fn apply(&self, spec: &GridSpec, value: f64) -> Result<GridSpec, BifurcationError> {
        self.check(spec)?;
        let mut out = spec.clone();
        match *self {
            Parameter::Coupling(i) => out.coupling[i - 2] = value,
            Parameter::Damping(i) => out.damping[i - 1] = value,
            Parameter::Injection(i) => out.injection[i - 1] = value,
        }
        out.validate().map_err(|e| BifurcationError::InvalidValue { value, reason: e.to_string() })
    }
}

/// How each sweep point picks its initial condition.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    /// Final state of the previous sweep value; the first value falls back
    /// to `ClosedForm`. Forces sequential execution.
    WarmStart { perturbation: f64 },
    /// [`closed_form_init`] at each value.
    ClosedForm { perturbation: f64 },
    Fixed(SystemState),
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::WarmStart { perturbation: 1e-3 }
    }
}

/// Principal closed-form point with every phase shifted by `perturbation`.
///
/// Past the threshold the branch parameters are clamped to [−1, 1], which
/// places the state at the ghost of the vanished saddle-node. Starting there
/// selects the slow cycle born at the bifurcation rather than a fast running
/// state that can coexist with it.
pub fn closed_form_init(spec: &GridSpec, perturbation: f64) -> SystemState {
    let mu = branch_parameters(spec);
    let clamp = |m: f64| m.clamp(-1.0, 1.0);
    let d1 = clamp(mu.hub()).asin();
    let mut phases = Vec::with_capacity(spec.n - 1);
    phases.push(d1);
    phases.extend((2..spec.n).map(|i| d1 - clamp(mu.get(i)).asin()));
    phases.iter_mut().for_each(|p| *p += perturbation);
    SystemState::new(phases, vec![sync_frequency(spec); spec.n])
}

/// Integration settings shared by every dynamics probe.
#[derive(Debug, Clone)]
pub struct ProbeSettings {
    pub integrator: IntegratorSettings,
    /// Horizon away from the threshold; defaults to [`default_horizon`].
    pub horizon: Option<f64>,
    /// Multiplier on the estimated near-threshold period.
    pub safety: f64,
    /// Cap on the near-threshold horizon in units of the slip time scale.
    pub cap: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings { integrator: IntegratorSettings::default(), horizon: None, safety: 20.0, cap: 2e4 }
    }
}

impl ProbeSettings {
    pub fn base_horizon(&self, spec: &GridSpec) -> f64 {
        self.horizon.unwrap_or_else(|| default_horizon(spec))
    }

    /// Horizon for a point at relative distance `eps` from the threshold:
    /// the slip period grows like ε^(−1/2).
    pub fn near_threshold_horizon(&self, spec: &GridSpec, eps: f64) -> f64 {
        let slip = spec.slip_time_scale();
        let scaled = (self.safety * TAU * slip / eps.max(f64::MIN_POSITIVE).sqrt()).min(self.cap * slip);
        self.base_horizon(spec).max(scaled)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// Smallest spoke criterion margin at this value.
    pub margin: f64,
    pub outcome: Result<Outcome, String>,
    pub final_state: Option<SystemState>,
}

impl SweepPoint {
    pub fn label(&self) -> &'static str {
        match &self.outcome {
            Ok(o) => o.label(),
            Err(_) => "error",
        }
    }

    pub fn period(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(Outcome::period)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: Parameter,
    pub points: Vec<SweepPoint>,
}

fn run_point(
    template: &GridSpec,
    param: Parameter,
    value: f64,
    init: Option<&SystemState>,
    perturbation: f64,
    probe: &ProbeSettings,
) -> SweepPoint {
    let spec = match param.apply(template, value) {
        Ok(s) => s,
        Err(e) => return SweepPoint { value, margin: f64::NAN, outcome: Err(e.to_string()), final_state: None },
    };
    let margin = check_criterion(&spec).min_margin();
    let init = init.cloned().unwrap_or_else(|| closed_form_init(&spec, perturbation));
    match integrate(&spec, &init, probe.base_horizon(&spec), &probe.integrator) {
        Ok(traj) => {
            let last = traj.final_state().clone();
            SweepPoint { value, margin, outcome: Ok(traj.outcome), final_state: Some(last) }
        }
        Err(e) => SweepPoint { value, margin, outcome: Err(e.to_string()), final_state: None },
    }
}

/// Integrates at each value and records the outcome; per-point failures are
/// recorded, not propagated.
pub fn sweep(
    template: &GridSpec,
    param: Parameter,
    values: &[f64],
    policy: &InitPolicy,
    probe: &ProbeSettings,
) -> Result<SweepResult, BifurcationError> {
    param.check(template)?;
    let points = match policy {
        InitPolicy::WarmStart { perturbation } => {
            let mut out: Vec<SweepPoint> = Vec::with_capacity(values.len());
            for &v in values {
                let prev = out.last().and_then(|p| p.final_state.as_ref());
                let point = run_point(template, param, v, prev, *perturbation, probe);
                out.push(point);
            }
            out
        }
        InitPolicy::ClosedForm { perturbation } => values
            .par_iter()
            .map(|&v| run_point(template, param, v, None, *perturbation, probe))
            .collect(),
        InitPolicy::Fixed(state) => {
            values.par_iter().map(|&v| run_point(template, param, v, Some(state), 0.0, probe)).collect()
        }
    };
    Ok(SweepResult { parameter: param, points })
}

/// Where the smallest criterion margin changes sign in [lo, hi], by bisection
/// on the closed-form criterion. `None` when it does not change sign.
pub fn analytic_threshold(template: &GridSpec, param: Parameter, lo: f64, hi: f64) -> Option<f64> {
    let margin = |v: f64| param.apply(template, v).ok().map(|s| check_criterion(&s).min_margin());
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let fa = margin(a)?;
    let fb = margin(b)?;
    if (fa > 0.0) == (fb > 0.0) {
        return None;
    }
    let a_positive = fa > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = margin(m)?;
        if (fm > 0.0) == a_positive {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Does the dynamics end on a limit cycle at this parameter value?
pub fn cycles_at(
    template: &GridSpec,
    param: Parameter,
    value: f64,
    eps: f64,
    probe: &ProbeSettings,
) -> Result<bool, BifurcationError> {
    let spec = param.apply(template, value)?;
    let init = closed_form_init(&spec, 1e-3);
    let traj = integrate(&spec, &init, probe.near_threshold_horizon(&spec, eps), &probe.integrator)?;
    Ok(traj.outcome.is_limit_cycle())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub critical: f64,
    /// Final interval.
    pub lo: f64,
    pub hi: f64,
    pub probes: usize,
    /// Closed-form threshold in the same interval, if the margin changes sign.
    pub analytic: Option<f64>,
}

impl Bracket {
    pub fn relative_error(&self) -> Option<f64> {
        self.analytic.map(|a| (self.critical - a).abs() / a.abs())
    }
}

/// Bisects on "limit cycle detected within the horizon" until the interval is
/// narrower than `rel_tol` relative to its midpoint.
pub fn bracket_threshold(
    template: &GridSpec,
    param: Parameter,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    probe: &ProbeSettings,
) -> Result<Bracket, BifurcationError> {
    param.check(template)?;
    let eps = rel_tol.max(1e-12);
    let cyc_lo = cycles_at(template, param, lo, eps, probe)?;
    let cyc_hi = cycles_at(template, param, hi, eps, probe)?;
    let mut probes = 2;
    if cyc_lo == cyc_hi {
        return Err(BifurcationError::SameOutcomeAtEndpoints {
            lo,
            hi,
            outcome: if cyc_lo { "limit_cycle" } else { "no_limit_cycle" },
        });
    }
    let (mut a, mut b) = (lo, hi);
    while (b - a).abs() > rel_tol * (0.5 * (a + b)).abs().max(f64::MIN_POSITIVE) {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        probes += 1;
        if cycles_at(template, param, m, eps, probe)? == cyc_lo {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(Bracket {
        critical: 0.5 * (a + b),
        lo: a,
        hi: b,
        probes,
        analytic: analytic_threshold(template, param, lo, hi),
    })
}

/// Which way from the critical value the cyclic side lies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// value = critical·(1 + ε)
    Above,
    /// value = critical·(1 − ε)
    Below,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Above => 1.0,
            Side::Below => -1.0,
        }
    }

    pub fn value(self, critical: f64, eps: f64) -> f64 {
        critical * (1.0 + self.sign() * eps)
    }
}

/// Picks the side on which the dynamics cycles at distance `eps`.
pub fn cyclic_side(
    template: &GridSpec,
    param: Parameter,
    critical: f64,
    eps: f64,
    probe: &ProbeSettings,
) -> Result<Side, BifurcationError> {
    for side in [Side::Above, Side::Below] {
        if cycles_at(template, param, side.value(critical, eps), eps, probe)? {
            return Ok(side);
        }
    }
    Err(BifurcationError::InsufficientCyclePoints { found: 0, needed: 1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    /// (ε, period) for every approach value that cycled.
    pub points: Vec<(f64, f64)>,
    /// Slope of ln T against ln ε.
    pub exponent: f64,
    /// exp(intercept): T ≈ prefactor · ε^exponent.
    pub prefactor: f64,
    /// Period strictly decreases as ε grows.
    pub monotone: bool,
}

/// Measures the limit-cycle period at `critical·(1 ± ε)` for each ε and fits
/// a power law.
pub fn period_scaling(
    template: &GridSpec,
    param: Parameter,
    critical: f64,
    side: Side,
    eps: &[f64],
    probe: &ProbeSettings,
) -> Result<ScalingFit, BifurcationError> {
    param.check(template)?;
    let (min, max) = eps.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if eps.iter().any(|&e| !(e > 0.0)) || max / min < 100.0 - 1e-9 {
        return Err(BifurcationError::EpsilonRange);
    }
    let measured: Vec<Result<Option<(f64, f64)>, BifurcationError>> = eps
        .par_iter()
        .map(|&e| {
            let spec = param.apply(template, side.value(critical, e))?;
            let init = closed_form_init(&spec, 1e-3);
            let traj = integrate(&spec, &init, probe.near_threshold_horizon(&spec, e), &probe.integrator)?;
            Ok(traj.outcome.period().map(|t| (e, t)))
        })
        .collect();
    let mut points = Vec::new();
    for m in measured {
        if let Some(p) = m? {
            points.push(p);
        }
    }
    let needed = 3.min(eps.len()).max(2);
    if points.len() < needed {
        return Err(BifurcationError::InsufficientCyclePoints { found: points.len(), needed });
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (slope, intercept) = least_squares(points.iter().map(|(e, t)| (e.ln(), t.ln())));
    let monotone = points.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(ScalingFit { points, exponent: slope, prefactor: intercept.exp(), monotone })
}

/// Ordinary least-squares line through (x, y); returns (slope, intercept).
fn least_squares(data: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let n = data.clone().count() as f64;
    let (sx, sy) = data.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = data.fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
