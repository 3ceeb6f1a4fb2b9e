//! Outcome classification: dwell-time convergence to an enumerated fixed
//! point, and periodic rotation detected on a Poincaré section.

use std::f64::consts::TAU;

use crate::equilibrium::{EquilibriumSet, FixedPoint};
use crate::grid::angle_distance;

use super::{Crossing, Window};

/// Tracks how long a trajectory has stayed near one fixed point.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor<'a> {
    points: &'a [FixedPoint],
    sync: f64,
    tol: f64,
    dwell: f64,
    entry: Option<(usize, f64)>,
}

impl<'a> ConvergenceMonitor<'a> {
    pub fn new(points: &'a [FixedPoint], sync: f64, tol: f64, dwell: f64) -> Self {
        ConvergenceMonitor { points, sync, tol, dwell, entry: None }
    }

    /// Index into `points` of the point within `tol` of `x`, if any.
    ///
    /// Frequency offsets are measured relative to 1 + |Δω_sync| so that a
    /// large common frequency does not push the integrator's own noise above
    /// the tolerance.
    pub fn nearest_within_tol(&self, x: &[f64], n: usize) -> Option<usize> {
        let scale = 1.0 + self.sync.abs();
        let freq = x[n - 1..].iter().map(|w| (w - self.sync).abs() / scale).fold(0.0, f64::max);
        if freq >= self.tol {
            return None;
        }
        let budget = self.tol - freq;
        // max-norm phase distance below the remaining budget
        self.points
            .iter()
            .position(|p| p.state.phases.iter().zip(&x[..n - 1]).all(|(a, b)| angle_distance(*a, *b) < budget))
    }

    /// Feeds one sample; returns `(point id, entry time)` once the dwell
    /// requirement is met.
    pub fn observe(&mut self, t: f64, x: &[f64], n: usize) -> Option<(usize, f64)> {
        match self.nearest_within_tol(x, n) {
            Some(idx) => {
                let id = self.points[idx].id;
                let entry = match self.entry {
                    Some((prev, t0)) if prev == id => t0,
                    _ => {
                        self.entry = Some((id, t));
                        t
                    }
                };
                (t - entry >= self.dwell).then_some((id, entry))
            }
            None => {
                self.entry = None;
                None
            }
        }
    }
}

/// First `(point id, entry time)` at which the window stays within `tol` of
/// an enumerated point for `dwell` seconds.
pub fn detect_convergence(window: Window<'_>, target: &EquilibriumSet, tol: f64, dwell: f64) -> Option<(usize, f64)> {
    if !target.exists {
        return None;
    }
    let mut monitor = ConvergenceMonitor::new(&target.points, target.delta_omega_sync, tol, dwell);
    window
        .times
        .iter()
        .zip(window.states)
        .find_map(|(&t, s)| monitor.observe(t, &s.to_vec(), window.n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSettings {
    /// Number of consecutive section intervals that must agree.
    pub min_periods: usize,
    /// Maximum (max − min)/mean over those intervals.
    pub spread: f64,
    /// Maximum distance of a winding number from the nearest integer.
    pub winding_defect: f64,
}

impl Default for CycleSettings {
    fn default() -> Self {
        CycleSettings { min_periods: 3, spread: 1e-4, winding_defect: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleInfo {
    /// Mean section-return time, s.
    pub period: f64,
    /// Reduced phase (0-based, δ_{coord+1}) carrying the section.
    pub section_coord: usize,
    /// Net 2π rotations per period of δ_1..δ_{n−1}.
    pub winding: Vec<i64>,
    /// Net 2π rotations per period of each line angle δ_i − δ_1, i = 2..n.
    pub line_winding: Vec<i64>,
    /// Relative spread of the intervals used.
    pub spread: f64,
}

/// Periodicity test on time-ordered section crossings of a single phase.
///
/// Uses the trailing `min_periods` intervals; the crossed levels must advance
/// by one in a fixed direction so that oscillation about a level is not
/// mistaken for rotation.
pub fn analyze_crossings(crossings: &[&Crossing], n: usize, settings: &CycleSettings) -> Option<CycleInfo> {
    let need = settings.min_periods + 1;
    if settings.min_periods == 0 || crossings.len() < need {
        return None;
    }
    let tail = &crossings[crossings.len() - need..];
    let dir = tail[1].level - tail[0].level;
    if dir.abs() != 1 {
        return None;
    }
    for w in tail.windows(2) {
        if w[1].level - w[0].level != dir || i64::from(w[1].direction) != dir {
            return None;
        }
    }
    let intervals: Vec<f64> = tail.windows(2).map(|w| w[1].time - w[0].time).collect();
    let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
    if mean <= 0.0 {
        return None;
    }
    let (lo, hi) = intervals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let spread = (hi - lo) / mean;
    if spread >= settings.spread {
        return None;
    }

    let a = &tail[need - 2].state;
    let b = &tail[need - 1].state;
    let to_int = |delta: f64| -> Option<i64> {
        let w = delta / TAU;
        let r = w.round();
        ((w - r).abs() < settings.winding_defect).then_some(r as i64)
    };
    let mut winding = Vec::with_capacity(n - 1);
    for d in 0..n - 1 {
        winding.push(to_int(b[d] - a[d])?);
    }
    let mut line_winding = Vec::with_capacity(n - 1);
    for i in 2..=n {
        let rel = |s: &[f64]| if i < n { s[i - 1] - s[0] } else { -s[0] };
        line_winding.push(to_int(rel(b) - rel(a))?);
    }
    Some(CycleInfo { period: mean, section_coord: tail[0].coord, winding, line_winding, spread })
}

/// Runs [`analyze_crossings`] on the latest crossings of `coord`.
pub(crate) fn trailing_cycle(all: &[Crossing], coord: usize, n: usize, settings: &CycleSettings) -> Option<CycleInfo> {
    let need = settings.min_periods + 1;
    let mut tail: Vec<&Crossing> = all.iter().rev().filter(|c| c.coord == coord).take(need).collect();
    tail.reverse();
    analyze_crossings(&tail, n, settings)
}

/// Period and winding numbers when the window ends on a periodic rotation.
///
/// The section is placed on the reduced phase with the largest net change
/// over the window.
pub fn detect_limit_cycle(window: Window<'_>, settings: &CycleSettings) -> Option<CycleInfo> {
    let n = window.n;
    if n < 2 {
        return None;
    }
    let rate = |coord: usize| -> f64 {
        match (window.states.first(), window.states.last()) {
            (Some(a), Some(b)) if window.states.len() > 1 => (b.phases[coord] - a.phases[coord]).abs(),
            _ => window.crossings.iter().filter(|c| c.coord == coord).count() as f64,
        }
    };
    let coord = (0..n - 1).max_by(|&a, &b| rate(a).total_cmp(&rate(b)))?;
    let own: Vec<&Crossing> = window.crossings.iter().filter(|c| c.coord == coord).collect();
    analyze_crossings(&own, n, settings)
}
