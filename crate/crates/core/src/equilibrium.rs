//! Synchronized fixed points in closed form, with a Newton refiner and a
//! brute-force grid scan that serve as independent cross-checks.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::SwingSystem;
use crate::grid::{GridSpec, SystemState};
use crate::stability;

/// Residual tolerance in per-unit power.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("closed-form point {id} has residual {residual:e} above tolerance {tol:e}")]
    ResidualExceeded { id: usize, residual: f64, tol: f64 },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian at Newton iterate {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("guess has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Common frequency deviation at synchrony, (Σ A_j)/(Σ D_j), rad/s.
pub fn sync_frequency(spec: &GridSpec) -> f64 {
    spec.total_injection() / spec.total_damping()
}

/// Branch parameters μ_i = (D_iΔω_sync − A_i)/K_{1i} for the spokes.
///
/// The hub phase is set by the reference spoke n, so μ_1 in the hub formula
/// is `spoke[n − 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParameters {
    pub spoke: Vec<f64>,
}

impl BranchParameters {
    /// μ for spoke generator `i` in 2..=n.
    pub fn get(&self, i: usize) -> f64 {
        self.spoke[i - 2]
    }

    /// μ_1, computed from node-n quantities.
    pub fn hub(&self) -> f64 {
        *self.spoke.last().expect("at least one spoke")
    }

    /// Necessary condition for synchronized modes: every |μ| ≤ 1.
    pub fn admissible(&self) -> bool {
        self.spoke.iter().all(|m| m.abs() <= 1.0)
    }
}

pub fn branch_parameters(spec: &GridSpec) -> BranchParameters {
    let sync = sync_frequency(spec);
    let spoke = (2..=spec.n)
        .map(|i| (spec.damping[i - 1] * sync - spec.injection[i - 1]) / spec.coupling[i - 2])
        .collect();
    BranchParameters { spoke }
}

/// Branch indices of a closed-form point: `k` for δ_1, `j[s]` for δ_{s+2}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Branch {
    pub k: u8,
    pub j: Vec<u8>,
}

impl Branch {
    /// Bit-packed id: bit 0 is k, bit s+1 is j[s].
    pub fn id(&self) -> usize {
        self.j.iter().enumerate().fold(self.k as usize, |acc, (s, &j)| acc | ((j as usize) << (s + 1)))
    }

    pub fn from_id(id: usize, free_spokes: usize) -> Branch {
        Branch { k: (id & 1) as u8, j: (0..free_spokes).map(|s| ((id >> (s + 1)) & 1) as u8).collect() }
    }

    /// All-principal branch: every line angle in (−π/2, π/2).
    pub fn is_principal(&self) -> bool {
        self.k == 0 && self.j.iter().all(|&j| j == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub id: usize,
    pub branch: Branch,
    /// Phases in [0, 2π), every Δω_i = Δω_sync.
    pub state: SystemState,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSet {
    pub delta_omega_sync: f64,
    pub mu: BranchParameters,
    pub points: Vec<FixedPoint>,
    pub exists: bool,
}

impl EquilibriumSet {
    pub fn point(&self, id: usize) -> Option<&FixedPoint> {
        self.points.iter().find(|p| p.id == id)
    }
}

/// All closed-form fixed points, each verified against the vector field.
pub fn enumerate_fixed_points(spec: &GridSpec, tol: f64) -> Result<EquilibriumSet, EquilibriumError> {
    let n = spec.n;
    let sync = sync_frequency(spec);
    let mu = branch_parameters(spec);
    if !mu.admissible() {
        return Ok(EquilibriumSet { delta_omega_sync: sync, mu, points: Vec::new(), exists: false });
    }
    let sys = SwingSystem::new(spec);
    let free = n - 2;
    let hub_asin = mu.hub().asin();
    let mut points = Vec::with_capacity(1 << (n - 1));
    for id in 0..(1usize << (n - 1)) {
        let branch = Branch::from_id(id, free);
        let d1 = if branch.k == 0 { hub_asin } else { PI - hub_asin };
        let mut phases = Vec::with_capacity(n - 1);
        phases.push(d1);
        for (s, &j) in branch.j.iter().enumerate() {
            let a = mu.get(s + 2).asin();
            phases.push(if j == 0 { d1 - a } else { d1 + a - PI });
        }
        let state = SystemState::new(phases, vec![sync; n]);
        let residual = sys.residual(&state.to_vec());
        if !(residual < tol) {
            return Err(EquilibriumError::ResidualExceeded { id, residual, tol });
        }
        points.push(FixedPoint { id, branch, state: state.wrapped(), residual });
    }
    Ok(EquilibriumSet { delta_omega_sync: sync, mu, points, exists: true })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    /// Converged point with phases in [0, 2π).
    pub state: SystemState,
    pub iterations: usize,
    pub residual: f64,
}

/// Newton iteration on the fixed-point equations, halving the step while the
/// residual increases.
pub fn refine_fixed_point(spec: &GridSpec, guess: &SystemState, tol: f64) -> Result<Refined, EquilibriumError> {
    if guess.check_dim(spec).is_err() {
        return Err(EquilibriumError::DimensionMismatch { expected: spec.state_dim(), found: guess.dim() });
    }
    let sys = SwingSystem::new(spec);
    let n = spec.n;
    let dim = spec.state_dim();
    let masses = spec.masses();
    let mut x = guess.to_vec();
    let mut r = sys.residual(&x);
    let mut g = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    for iteration in 0..=NEWTON_MAX_ITERS {
        if r < tol {
            let state = SystemState::from_slice(n, &x).expect("dimension checked").wrapped();
            return Ok(Refined { state, iterations: iteration, residual: r });
        }
        if iteration == NEWTON_MAX_ITERS || !r.is_finite() {
            break;
        }
        balance_equations(&sys, &x, &mut g);
        let mut jac = stability::jacobian_flat(spec, &x);
        for (row, m) in masses.iter().enumerate() {
            jac.row_mut(n - 1 + row).scale_mut(*m);
        }
        let rhs = -DVector::from_column_slice(&g);
        let step = jac.lu().solve(&rhs).ok_or(EquilibriumError::SingularJacobian { iteration })?;
        let mut lambda = 1.0;
        let mut best = (f64::INFINITY, 1.0);
        for _ in 0..20 {
            for d in 0..dim {
                trial[d] = x[d] + lambda * step[d];
            }
            let rt = sys.residual(&trial);
            if rt < best.0 {
                best = (rt, lambda);
            }
            if rt <= r {
                break;
            }
            lambda *= 0.5;
        }
        let lambda = best.1;
        for d in 0..dim {
            x[d] += lambda * step[d];
        }
        r = sys.residual(&x);
    }
    Err(EquilibriumError::NoConvergence { iterations: NEWTON_MAX_ITERS, residual: r })
}

/// Fixed-point equations in power units: phase rows Δω_i − Δω_n, frequency
/// rows m_iΔω̇_i.
fn balance_equations(sys: &SwingSystem<'_>, x: &[f64], g: &mut [f64]) {
    let n = sys.spec().n;
    let (phase, power) = g.split_at_mut(n - 1);
    for (i, p) in phase.iter_mut().enumerate() {
        *p = x[n - 1 + i] - x[2 * n - 2];
    }
    sys.power_balance(x, power);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings {
    /// Grid nodes per phase; step 2π/steps.
    pub steps: usize,
    pub tol: f64,
    /// Roots closer than this (torus distance) are merged.
    pub merge_distance: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings { steps: 200, tol: DEFAULT_TOL, merge_distance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub roots: Vec<SystemState>,
    /// Cells that could not be excluded by the Lipschitz bound.
    pub polished_cells: usize,
    pub total_cells: usize,
}

/// Brute-force root search over the phase torus at Δω = Δω_sync.
///
/// Each cell center is polished with [`refine_fixed_point`], except cells
/// where a balance equation's value at the center exceeds its Lipschitz
/// constant times the half-cell width, which proves the cell holds no root.
pub fn grid_scan(spec: &GridSpec, settings: &ScanSettings) -> ScanResult {
    let n = spec.n;
    let sync = sync_frequency(spec);
    let sys = SwingSystem::new(spec);
    let h = TAU / settings.steps as f64;
    // |∂r_i/∂δ| summed over phases, per balance row
    let mut lip = vec![0.0; n];
    lip[0] = 2.0 * spec.coupling.iter().sum::<f64>();
    for i in 2..=n {
        lip[i - 1] = if i < n { 2.0 } else { 1.0 } * spec.coupling[i - 2];
    }
    let bound: Vec<f64> = lip.iter().map(|l| l * 0.5 * h * 1.01 + 1e-12).collect();

    let dims = n - 1;
    let total = settings.steps.pow(dims as u32);
    let mut roots: Vec<SystemState> = Vec::new();
    let mut polished = 0;
    let mut x = vec![sync; 2 * n - 1];
    let mut bal = vec![0.0; n];
    let mut idx = vec![0usize; dims];
    for _ in 0..total {
        for d in 0..dims {
            x[d] = idx[d] as f64 * h;
        }
        sys.power_balance(&x, &mut bal);
        if bal.iter().zip(&bound).all(|(b, lim)| b.abs() <= *lim) {
            polished += 1;
            let guess = SystemState::from_slice(n, &x).expect("dimension");
            if let Ok(found) = refine_fixed_point(spec, &guess, settings.tol) {
                if !roots.iter().any(|r| r.torus_distance(&found.state) < settings.merge_distance) {
                    roots.push(found.state);
                }
            }
        }
        for d in 0..dims {
            idx[d] += 1;
            if idx[d] < settings.steps {
                break;
            }
            idx[d] = 0;
        }
    }
    roots.sort_by(|a, b| a.phases.partial_cmp(&b.phases).expect("finite phases"));
    ScanResult { roots, polished_cells: polished, total_cells: total }
}
