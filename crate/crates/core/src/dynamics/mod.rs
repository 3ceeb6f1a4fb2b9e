//! Reduced swing-equation vector field and trajectory integration.
//!
//! State layout is `[δ_1..δ_{n−1}, Δω_1..Δω_n]` with δ_n ≡ 0:
//!
//! ```text
//! δ̇_i  = Δω_i − Δω_n                                   i = 1..n−1
//! Δω̇_1 = (ω_R/2H_1)(−D_1Δω_1 + A_1 − Σ_j K_1j sin(δ_1 − δ_j))
//! Δω̇_i = (ω_R/2H_i)(−D_iΔω_i + A_i − K_1i sin(δ_i − δ_1))   i = 2..n
//! ```

pub mod detect;
pub mod integrator;

use std::f64::consts::TAU;

use thiserror::Error;

use crate::equilibrium::{self, EquilibriumError, EquilibriumSet};
use crate::grid::{GridError, GridSpec, SystemState};

pub use detect::{
    analyze_crossings, detect_convergence, detect_limit_cycle, ConvergenceMonitor, CycleInfo,
    CycleSettings,
};
pub use integrator::{builtin_registry, EmbeddedPair, IntegratorRegistry};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state dimension {found} does not match 2n-1 = {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("step size {h:e} underflowed at t = {t} (stiffness too severe at the requested tolerance)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("unknown integrator '{0}'")]
    UnknownMethod(String),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Grid(GridError),
}

impl From<GridError> for DynamicsError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::DimensionMismatch { expected, found } => DynamicsError::DimensionMismatch { expected, found },
            other => DynamicsError::Grid(other),
        }
    }
}

/// Spec-bound evaluator of the vector field with the per-generator rates
/// ω_R/2H_i precomputed.
#[derive(Debug, Clone)]
pub struct SwingSystem<'a> {
    spec: &'a GridSpec,
    rate: Vec<f64>,
}

impl<'a> SwingSystem<'a> {
    pub fn new(spec: &'a GridSpec) -> Self {
        let rate = spec.inertia.iter().map(|h| spec.omega_ref / (2.0 * h)).collect();
        SwingSystem { spec, rate }
    }

    pub fn spec(&self) -> &GridSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.state_dim()
    }

    /// Writes −D_iΔω_i + A_i − (coupling power of i) into `out`, i.e. m_i Δω̇_i.
    pub fn power_balance(&self, x: &[f64], out: &mut [f64]) {
        let n = self.spec.n;
        let freq = &x[n - 1..];
        let d1 = x[0];
        let mut hub = 0.0;
        for i in 2..=n {
            let di = if i < n { x[i - 1] } else { 0.0 };
            let k = self.spec.coupling[i - 2];
            let s = (d1 - di).sin();
            hub += k * s;
            out[i - 1] = -self.spec.damping[i - 1] * freq[i - 1] + self.spec.injection[i - 1] + k * s;
        }
        out[0] = -self.spec.damping[0] * freq[0] + self.spec.injection[0] - hub;
    }

    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.spec.n;
        let (dphase, dfreq) = dx.split_at_mut(n - 1);
        let freq = &x[n - 1..];
        for (i, d) in dphase.iter_mut().enumerate() {
            *d = freq[i] - freq[n - 1];
        }
        self.power_balance(x, dfreq);
        for (d, r) in dfreq.iter_mut().zip(&self.rate) {
            *d *= r;
        }
    }

    /// Max-norm of the fixed-point equations: phase rows in rad/s, frequency
    /// rows as power balance in per-unit.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let n = self.spec.n;
        let freq = &x[n - 1..];
        let mut r = freq[..n - 1].iter().map(|w| (w - freq[n - 1]).abs()).fold(0.0, f64::max);
        let mut bal = vec![0.0; n];
        self.power_balance(x, &mut bal);
        for b in bal {
            r = r.max(b.abs());
        }
        r
    }
}

/// Time derivative of `state` under the reduced swing equations.
pub fn vector_field(spec: &GridSpec, state: &SystemState) -> Result<Vec<f64>, DynamicsError> {
    state.check_dim(spec)?;
    let sys = SwingSystem::new(spec);
    let mut dx = vec![0.0; spec.state_dim()];
    sys.rhs(&state.to_vec(), &mut dx);
    Ok(dx)
}

/// Fixed-point residual of `state` (see [`SwingSystem::residual`]).
pub fn residual(spec: &GridSpec, state: &SystemState) -> Result<f64, DynamicsError> {
    state.check_dim(spec)?;
    Ok(SwingSystem::new(spec).residual(&state.to_vec()))
}

/// max(2000·τ_max, 200·τ_slip), s.
pub fn default_horizon(spec: &GridSpec) -> f64 {
    (2000.0 * spec.max_time_constant()).max(200.0 * spec.slip_time_scale())
}

/// 100 system time constants.
pub fn default_dwell(spec: &GridSpec) -> f64 {
    100.0 * spec.max_time_constant()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordPolicy {
    /// Every accepted step.
    EveryStep,
    /// Interpolated samples every `dt` seconds.
    Uniform(f64),
    /// Initial and final states only.
    Endpoints,
}

#[derive(Debug, Clone)]
pub struct IntegratorSettings {
    /// Registry name of the embedded pair.
    pub method: String,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: Option<f64>,
    /// Absolute lower bound on the step; falling below it is `StepUnderflow`.
    pub min_step: Option<f64>,
    pub max_step: Option<f64>,
    pub record: RecordPolicy,
    /// Stop as soon as the outcome is decided.
    pub stop_on_outcome: bool,
    /// Distance below which the state counts as at a fixed point: max phase
    /// offset plus max frequency offset over (1 + |Δω_sync|). Raised to
    /// 10·(rel_tol + abs_tol) if smaller.
    pub convergence_tol: f64,
    /// Dwell time for convergence; defaults to 100 time constants.
    pub dwell: Option<f64>,
    pub cycle: CycleSettings,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            method: "dopri5".into(),
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: None,
            min_step: None,
            max_step: None,
            record: RecordPolicy::Uniform(f64::INFINITY),
            stop_on_outcome: true,
            convergence_tol: 1e-6,
            dwell: None,
            cycle: CycleSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Stayed within tolerance of fixed point `point` from `time` on for the
    /// dwell period.
    ConvergedToFixedPoint { point: usize, time: f64 },
    LimitCycle(CycleInfo),
    Undecided { horizon: f64 },
}

impl Outcome {
    pub fn is_limit_cycle(&self) -> bool {
        matches!(self, Outcome::LimitCycle(_))
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Outcome::ConvergedToFixedPoint { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::ConvergedToFixedPoint { .. } => "converged",
            Outcome::LimitCycle(_) => "limit_cycle",
            Outcome::Undecided { .. } => "undecided",
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            Outcome::LimitCycle(c) => Some(c.period),
            _ => None,
        }
    }
}

/// Passage of reduced phase `coord` through the level 2π·`level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub coord: usize,
    pub level: i64,
    /// +1 when the phase increases through the level.
    pub direction: i8,
    pub time: f64,
    /// Full flat state at the crossing, interpolated.
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub times: Vec<f64>,
    /// Unwrapped states; use [`SystemState::wrapped`] for torus coordinates.
    pub states: Vec<SystemState>,
    pub crossings: Vec<Crossing>,
    pub outcome: Outcome,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn final_state(&self) -> &SystemState {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn window(&self, t0: f64, t1: f64) -> Window<'_> {
        let lo = self.times.partition_point(|&t| t < t0);
        let hi = self.times.partition_point(|&t| t <= t1);
        let clo = self.crossings.partition_point(|c| c.time < t0);
        let chi = self.crossings.partition_point(|c| c.time <= t1);
        Window {
            n: self.n,
            times: &self.times[lo..hi],
            states: &self.states[lo..hi],
            crossings: &self.crossings[clo..chi],
        }
    }

    pub fn full(&self) -> Window<'_> {
        Window { n: self.n, times: &self.times, states: &self.states, crossings: &self.crossings }
    }
}

/// Borrowed time slice of a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub n: usize,
    pub times: &'a [f64],
    pub states: &'a [SystemState],
    pub crossings: &'a [Crossing],
}

/// Integrates from `init` for `horizon` seconds with the built-in integrators.
pub fn integrate(
    spec: &GridSpec,
    init: &SystemState,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory, DynamicsError> {
    integrate_with(spec, init, horizon, settings, builtin_registry())
}

pub fn integrate_with(
    spec: &GridSpec,
    init: &SystemState,
    horizon: f64,
    settings: &IntegratorSettings,
    registry: &IntegratorRegistry,
) -> Result<Trajectory, DynamicsError> {
    init.check_dim(spec)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(DynamicsError::InvalidHorizon(horizon));
    }
    let pair = registry
        .get(&settings.method)
        .ok_or_else(|| DynamicsError::UnknownMethod(settings.method.clone()))?;
    let eq = equilibrium::enumerate_fixed_points(spec, equilibrium::DEFAULT_TOL)?;
    Integration::new(spec, pair.as_ref(), settings, &eq, horizon).run(init)
}

struct Integration<'a> {
    sys: SwingSystem<'a>,
    pair: &'a dyn EmbeddedPair,
    settings: &'a IntegratorSettings,
    eq: &'a EquilibriumSet,
    horizon: f64,
    dwell: f64,
}

impl<'a> Integration<'a> {
    fn new(
        spec: &'a GridSpec,
        pair: &'a dyn EmbeddedPair,
        settings: &'a IntegratorSettings,
        eq: &'a EquilibriumSet,
        horizon: f64,
    ) -> Self {
        let dwell = settings.dwell.unwrap_or_else(|| default_dwell(spec));
        Integration { sys: SwingSystem::new(spec), pair, settings, eq, horizon, dwell }
    }

    fn error_norm(&self, y: &[f64], y_new: &[f64], err: &[f64]) -> f64 {
        let phases = self.sys.spec().n - 1;
        let (rtol, atol) = (self.settings.rel_tol, self.settings.abs_tol);
        let mut norm: f64 = 0.0;
        for d in 0..y.len() {
            let mut mag = y[d].abs().max(y_new[d].abs());
            if d < phases {
                mag = mag.min(TAU);
            }
            let r = err[d].abs() / (atol + rtol * mag);
            if r.is_nan() {
                return f64::INFINITY;
            }
            norm = norm.max(r);
        }
        norm
    }

    fn initial_step(&self, y: &[f64], f: &[f64]) -> f64 {
        if let Some(h) = self.settings.initial_step {
            return h.min(self.horizon);
        }
        let sc = |v: f64| self.settings.abs_tol + self.settings.rel_tol * v.abs();
        let d0 = y.iter().map(|v| v.abs() / sc(*v)).fold(0.0, f64::max);
        let d1 = y.iter().zip(f).map(|(v, fv)| fv.abs() / sc(*v)).fold(0.0, f64::max);
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(self.horizon).min(self.settings.max_step.unwrap_or(f64::INFINITY))
    }

    fn run(&self, init: &SystemState) -> Result<Trajectory, DynamicsError> {
        let n = self.sys.spec().n;
        let dim = self.sys.dim();
        let settings = self.settings;
        let mut y = init.to_vec();
        let mut f = vec![0.0; dim];
        self.sys.rhs(&y, &mut f);
        if y.iter().chain(&f).any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState { t: 0.0 });
        }

        let mut traj = Trajectory {
            n,
            times: vec![0.0],
            states: vec![init.clone()],
            crossings: Vec::new(),
            outcome: Outcome::Undecided { horizon: self.horizon },
            stats: StepStats::default(),
        };
        let mut monitor = if self.eq.exists {
            // never ask for more than the step error control can deliver
            let tol = settings.convergence_tol.max(10.0 * (settings.rel_tol + settings.abs_tol));
            Some(ConvergenceMonitor::new(&self.eq.points, self.eq.delta_omega_sync, tol, self.dwell))
        } else {
            None
        };
        let mut converged = monitor.as_mut().and_then(|m| m.observe(0.0, &y, n));
        let mut cycle: Option<CycleInfo> = None;
        let mut next_sample = match settings.record {
            RecordPolicy::Uniform(dt) => dt,
            _ => f64::INFINITY,
        };

        let min_step = settings.min_step.unwrap_or(1e-14 * self.horizon.max(1.0));
        let max_step = settings.max_step.unwrap_or(f64::INFINITY);
        let q = self.pair.embedded_order().min(self.pair.order()) as f64;
        let mut h = self.initial_step(&y, &f);
        let mut ws = integrator::Workspace::default();
        let mut y_new = vec![0.0; dim];
        let mut f_new = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        let mut t = 0.0;
        let mut just_rejected = false;

        while t < self.horizon {
            if settings.stop_on_outcome && (converged.is_some() || cycle.is_some()) {
                break;
            }
            let last = self.horizon - t <= h * (1.0 + 1e-12);
            let step = if last { self.horizon - t } else { h };
            self.pair.step(&|x, dx| self.sys.rhs(x, dx), &y, &f, step, &mut ws, &mut y_new, &mut err, &mut f_new);
            let en = self.error_norm(&y, &y_new, &err);
            if en > 1.0 || !en.is_finite() {
                traj.stats.rejected += 1;
                let fac = if en.is_finite() { (0.9 * en.powf(-1.0 / (q + 1.0))).clamp(0.1, 0.9) } else { 0.1 };
                h = step * fac;
                just_rejected = true;
                if h < min_step {
                    return Err(DynamicsError::StepUnderflow { t, h });
                }
                continue;
            }
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { t: t + step });
            }
            traj.stats.accepted += 1;
            let t_new = if last { self.horizon } else { t + step };

            let seg = Segment { t0: t, t1: t_new, y0: &y, y1: &y_new, f0: &f, f1: &f_new };
            for c in seg.crossings(n) {
                let coord = c.coord;
                traj.crossings.push(c);
                if cycle.is_none() {
                    cycle = detect::trailing_cycle(&traj.crossings, coord, n, &settings.cycle);
                }
            }
            match settings.record {
                RecordPolicy::EveryStep => {
                    traj.times.push(t_new);
                    traj.states.push(SystemState::from_slice(n, &y_new)?);
                }
                RecordPolicy::Uniform(dt) => {
                    while next_sample <= t_new {
                        traj.times.push(next_sample);
                        traj.states.push(SystemState::from_slice(n, &seg.at(next_sample))?);
                        next_sample = next_sample_after(next_sample, dt);
                    }
                }
                RecordPolicy::Endpoints => {}
            }
            if let Some(m) = monitor.as_mut() {
                if let Some(hit) = m.observe(t_new, &y_new, n) {
                    converged.get_or_insert(hit);
                }
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut f, &mut f_new);
            let mut fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-1.0 / (q + 1.0))).clamp(0.2, 5.0) };
            if just_rejected {
                fac = fac.min(1.0);
            }
            just_rejected = false;
            if !last {
                h = (step * fac).min(max_step);
            }
        }

        if traj.times.last() != Some(&t) {
            traj.times.push(t);
            traj.states.push(SystemState::from_slice(n, &y)?);
        }
        traj.outcome = match (converged, cycle) {
            (Some((point, time)), _) => Outcome::ConvergedToFixedPoint { point, time },
            (None, Some(c)) => Outcome::LimitCycle(c),
            (None, None) => Outcome::Undecided { horizon: self.horizon },
        };
        Ok(traj)
    }
}

fn next_sample_after(prev: f64, dt: f64) -> f64 {
    // multiply rather than accumulate so sample times do not drift
    let k = (prev / dt).round() + 1.0;
    k * dt
}

/// One accepted step with cubic Hermite interpolation between its ends.
struct Segment<'s> {
    t0: f64,
    t1: f64,
    y0: &'s [f64],
    y1: &'s [f64],
    f0: &'s [f64],
    f1: &'s [f64],
}

impl Segment<'_> {
    fn component(&self, d: usize, theta: f64) -> f64 {
        let h = self.t1 - self.t0;
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y0[d] + h10 * h * self.f0[d] + h01 * self.y1[d] + h11 * h * self.f1[d]
    }

    fn at(&self, t: f64) -> Vec<f64> {
        let theta = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        (0..self.y0.len()).map(|d| self.component(d, theta)).collect()
    }

    /// Passages of each reduced phase through multiples of 2π.
    fn crossings(&self, n: usize) -> Vec<Crossing> {
        let mut out = Vec::new();
        for coord in 0..n - 1 {
            let a = (self.y0[coord] / TAU).floor() as i64;
            let b = (self.y1[coord] / TAU).floor() as i64;
            if a == b {
                continue;
            }
            let (levels, direction): (Vec<i64>, i8) =
                if b > a { ((a + 1..=b).collect(), 1) } else { ((b + 1..=a).rev().collect(), -1) };
            for level in levels {
                let target = level as f64 * TAU;
                let theta = self.solve(coord, target);
                let time = self.t0 + theta * (self.t1 - self.t0);
                let state = (0..self.y0.len()).map(|d| self.component(d, theta)).collect();
                out.push(Crossing { coord, level, direction, time, state });
            }
        }
        out.sort_by(|a, b| a.time.total_cmp(&b.time));
        out
    }

    fn solve(&self, coord: usize, target: f64) -> f64 {
        let g = |th: f64| self.component(coord, th) - target;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut glo = g(lo);
        if glo == 0.0 {
            return 0.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                return mid;
            }
            if (gm > 0.0) == (glo > 0.0) {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
