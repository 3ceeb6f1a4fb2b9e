//! Critical-coupling criterion, linear stability of the fixed points, the
//! energy function and the synchronization boundary in the (D_i, A_i) plane.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::equilibrium::{sync_frequency, EquilibriumSet};
use crate::grid::{GridSpec, SystemState};

/// Iteration cap handed to the Schur decomposition.
pub const EIGEN_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("state dimension {found} does not match 2n-1 = {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix has non-finite entries")]
    NonFiniteMatrix,
    #[error("no synchronized fixed points exist (some |mu| > 1)")]
    NoFixedPoints,
    #[error("criterion satisfied but {stable} points classified stable")]
    InconsistentWithCriterion { stable: usize },
    #[error("criterion not satisfied; spoke margins {margins:?}")]
    CriterionNotSatisfied { margins: Vec<f64> },
    #[error("generator {index} is not a spoke of an n = {n} grid")]
    NotASpoke { index: usize, n: usize },
    #[error("degenerate sums: damping of the other generators sums to {0}")]
    DegenerateSums(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    /// K_{1i} − |D_iΔω_sync − A_i| for spokes i = 2..n.
    pub margins: Vec<f64>,
    pub satisfied: bool,
}

impl CriterionReport {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Spoke generator indices (2..=n) with non-positive margin.
    pub fn violating_spokes(&self) -> Vec<usize> {
        self.margins.iter().enumerate().filter(|(_, m)| **m <= 0.0).map(|(s, _)| s + 2).collect()
    }
}

/// Unique stable synchronization holds iff every margin is strictly positive.
pub fn check_criterion(spec: &GridSpec) -> CriterionReport {
    let sync = sync_frequency(spec);
    let margins: Vec<f64> = (2..=spec.n)
        .map(|i| spec.coupling[i - 2] - (spec.damping[i - 1] * sync - spec.injection[i - 1]).abs())
        .collect();
    let satisfied = margins.iter().all(|m| *m > 0.0);
    CriterionReport { margins, satisfied }
}

/// Analytic Jacobian of the vector field at flat state `x`.
pub fn jacobian_flat(spec: &GridSpec, x: &[f64]) -> DMatrix<f64> {
    let n = spec.n;
    let dim = 2 * n - 1;
    let f0 = n - 1; // first frequency column/row
    let mut j = DMatrix::zeros(dim, dim);
    for p in 0..n - 1 {
        j[(p, f0 + p)] = 1.0;
        j[(p, f0 + n - 1)] -= 1.0;
    }
    let rate: Vec<f64> = spec.inertia.iter().map(|h| spec.omega_ref / (2.0 * h)).collect();
    let d1 = x[0];
    j[(f0, f0)] = -rate[0] * spec.damping[0];
    for i in 2..=n {
        let di = if i < n { x[i - 1] } else { 0.0 };
        let kc = spec.coupling[i - 2] * (d1 - di).cos();
        let row = f0 + i - 1;
        j[(f0, 0)] -= rate[0] * kc;
        j[(row, 0)] += rate[i - 1] * kc;
        if i < n {
            j[(f0, i - 1)] += rate[0] * kc;
            j[(row, i - 1)] -= rate[i - 1] * kc;
        }
        j[(row, row)] = -rate[i - 1] * spec.damping[i - 1];
    }
    j
}

pub fn jacobian(spec: &GridSpec, state: &SystemState) -> Result<DMatrix<f64>, StabilityError> {
    state
        .check_dim(spec)
        .map_err(|_| StabilityError::DimensionMismatch { expected: spec.state_dim(), found: state.dim() })?;
    Ok(jacobian_flat(spec, &state.to_vec()))
}

/// All eigenvalues of a dense real matrix, sorted by real part descending
/// (ties by imaginary part descending).
pub fn spectrum(m: &DMatrix<f64>) -> Result<Vec<Complex64>, StabilityError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(StabilityError::NonFiniteMatrix);
    }
    let balanced = balance(m);
    // Clusters of identical spokes give repeated eigenvalues that can stall
    // the deflation test at machine epsilon; relax it a little on failure.
    let schur = [f64::EPSILON, 1e-14, 1e-12]
        .iter()
        .find_map(|&eps| nalgebra::linalg::Schur::try_new(balanced.clone(), eps, EIGEN_MAX_ITERS))
        .ok_or(StabilityError::NoConvergence)?;
    let mut eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(eig)
}

/// Diagonal similarity D⁻¹MD with power-of-two scales that evens out row and
/// column norms, so the QR iteration is not dominated by the ω_R/2H rows.
fn balance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&k| k != i).map(|k| a[(k, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&k| k != i).map(|k| a[(i, k)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let (mut cc, s) = (c, c + r);
            while cc < r / 2.0 {
                cc *= 2.0;
                f *= 2.0;
            }
            while cc > 2.0 * r {
                cc /= 2.0;
                f /= 2.0;
            }
            let scaled = cc + r / f;
            if scaled < 0.95 * s {
                done = false;
                for k in 0..n {
                    a[(i, k)] /= f;
                    a[(k, i)] *= f;
                }
            }
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Unstable,
    Marginal,
}

impl Classification {
    pub fn from_max_real(max_re: f64, tol: f64) -> Self {
        if max_re < -tol {
            Classification::Stable
        } else if max_re > tol {
            Classification::Unstable
        } else {
            Classification::Marginal
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
            Classification::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointStability {
    pub id: usize,
    pub eigenvalues: Vec<Complex64>,
    pub max_real: f64,
    pub class: Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub criterion: CriterionReport,
    pub points: Vec<PointStability>,
    /// Id of the unique stable point when the criterion holds.
    pub stable_point: Option<usize>,
}

impl StabilityReport {
    pub fn stable_count(&self) -> usize {
        self.points.iter().filter(|p| p.class == Classification::Stable).count()
    }
}

/// Marginal band ±1e−9·ω_R.
pub fn default_marginal_tol(spec: &GridSpec) -> f64 {
    1e-9 * spec.omega_ref
}

pub fn classify_fixed_points(spec: &GridSpec, eq: &EquilibriumSet, tol: f64) -> Result<StabilityReport, StabilityError> {
    if !eq.exists {
        return Err(StabilityError::NoFixedPoints);
    }
    let criterion = check_criterion(spec);
    let mut points = Vec::with_capacity(eq.points.len());
    for p in &eq.points {
        let eigenvalues = spectrum(&jacobian(spec, &p.state)?)?;
        let max_real = eigenvalues.first().map(|e| e.re).unwrap_or(f64::NEG_INFINITY);
        points.push(PointStability { id: p.id, eigenvalues, max_real, class: Classification::from_max_real(max_real, tol) });
    }
    let stable: Vec<usize> = points.iter().filter(|p| p.class == Classification::Stable).map(|p| p.id).collect();
    if criterion.satisfied && stable.len() != 1 {
        return Err(StabilityError::InconsistentWithCriterion { stable: stable.len() });
    }
    let stable_point = (stable.len() == 1).then(|| stable[0]);
    Ok(StabilityReport { criterion, points, stable_point })
}

/// Energy function centred on a stable fixed point.
///
/// ```text
/// E = ½ Σ m_i (Δω_i − Δω_sync)² − Σ P_i (δ_i − δ^s_i) − Σ_j K_1j [cos(δ_1 − δ_j) − cos(δ^s_1 − δ^s_j)]
/// ```
///
/// with m_i = 2H_i/ω_R and P_i = A_i − D_iΔω_sync; phases are reduced (δ_n ≡ 0)
/// and must be unwrapped relative to `reference`. dE/dt = −Σ D_i(Δω_i − Δω_sync)².
#[derive(Debug, Clone)]
pub struct Lyapunov {
    masses: Vec<f64>,
    excess: Vec<f64>,
    coupling: Vec<f64>,
    sync: f64,
    reference: Vec<f64>,
    reference_cos: Vec<f64>,
}

impl Lyapunov {
    pub fn new(spec: &GridSpec, reference: &SystemState) -> Self {
        let sync = sync_frequency(spec);
        let n = spec.n;
        let excess = (0..n).map(|i| spec.injection[i] - spec.damping[i] * sync).collect();
        let reference = reference.phases.clone();
        let reference_cos = line_cosines(n, &reference);
        Lyapunov { masses: spec.masses(), excess, coupling: spec.coupling.clone(), sync, reference, reference_cos }
    }

    /// Uses the stable point of `eq`.
    pub fn at_stable_point(spec: &GridSpec, eq: &EquilibriumSet, stable_id: usize) -> Option<Self> {
        eq.point(stable_id).map(|p| Lyapunov::new(spec, &p.state))
    }

    pub fn energy(&self, state: &SystemState) -> f64 {
        let kinetic: f64 =
            0.5 * self.masses.iter().zip(&state.freq_dev).map(|(m, w)| m * (w - self.sync).powi(2)).sum::<f64>();
        let drive: f64 =
            self.excess.iter().zip(&state.phases).zip(&self.reference).map(|((p, d), s)| p * (d - s)).sum();
        let cos = line_cosines(self.masses.len(), &state.phases);
        let coupling: f64 =
            self.coupling.iter().zip(cos.iter().zip(&self.reference_cos)).map(|(k, (c, c0))| k * (c - c0)).sum();
        kinetic - drive - coupling
    }

    /// −Σ D_i (Δω_i − Δω_sync)², the exact time derivative along the flow.
    pub fn dissipation(&self, spec: &GridSpec, state: &SystemState) -> f64 {
        -spec.damping.iter().zip(&state.freq_dev).map(|(d, w)| d * (w - self.sync).powi(2)).sum::<f64>()
    }
}

/// cos(δ_1 − δ_j) for spokes j = 2..n with δ_n ≡ 0.
fn line_cosines(n: usize, phases: &[f64]) -> Vec<f64> {
    (2..=n).map(|j| (phases[0] - if j < n { phases[j - 1] } else { 0.0 }).cos()).collect()
}

pub fn lyapunov_energy(spec: &GridSpec, state: &SystemState, stable: &SystemState) -> f64 {
    Lyapunov::new(spec, stable).energy(state)
}

/// Adds `rho` to the absolute phase of generator `g` (1-based) in reduced
/// coordinates. Shifting the reference generator n is a shift of every other
/// phase by −rho.
pub fn perturb_generator_phase(state: &mut SystemState, g: usize, rho: f64) {
    let n = state.n();
    if g < n {
        state.phases[g - 1] += rho;
    } else {
        state.phases.iter_mut().for_each(|p| *p -= rho);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl SliceAxis {
    pub fn symmetric(half_width: f64, points: usize) -> Self {
        SliceAxis { lo: -half_width, hi: half_width, points }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.lo + step * k as f64).collect()
    }
}

/// E on the plane through the stable point spanned by a phase offset ρ of
/// one generator and a frequency offset σ of the same generator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySlice {
    pub generator: usize,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `energy[a][b]` at (rho[a], sigma[b]).
    pub energy: Vec<Vec<f64>>,
    /// ln E; `None` where E ≤ 0.
    pub log_energy: Vec<Vec<Option<f64>>>,
    /// Cells with E ≤ 0 other than (0, 0).
    pub nonpositive_off_minimum: usize,
}

impl EnergySlice {
    /// (ρ, σ) of the smallest energy on the grid.
    pub fn argmin(&self) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0, 0);
        for (a, row) in self.energy.iter().enumerate() {
            for (b, &e) in row.iter().enumerate() {
                if e < best.0 {
                    best = (e, a, b);
                }
            }
        }
        (self.rho[best.1], self.sigma[best.2])
    }
}

pub fn energy_slice(
    spec: &GridSpec,
    eq: &EquilibriumSet,
    generator: usize,
    rho: SliceAxis,
    sigma: SliceAxis,
) -> Result<EnergySlice, StabilityError> {
    let criterion = check_criterion(spec);
    if !criterion.satisfied {
        return Err(StabilityError::CriterionNotSatisfied { margins: criterion.margins });
    }
    if generator < 1 || generator > spec.n {
        return Err(StabilityError::NotASpoke { index: generator, n: spec.n });
    }
    let stable = eq.points.iter().find(|p| p.branch.is_principal()).ok_or(StabilityError::NoFixedPoints)?;
    let lyap = Lyapunov::new(spec, &stable.state);
    let rho_v = rho.values();
    let sigma_v = sigma.values();
    let mut energy = Vec::with_capacity(rho_v.len());
    let mut log_energy = Vec::with_capacity(rho_v.len());
    let mut nonpositive = 0;
    for &r in &rho_v {
        let mut row = Vec::with_capacity(sigma_v.len());
        let mut lrow = Vec::with_capacity(sigma_v.len());
        for &s in &sigma_v {
            let mut state = stable.state.clone();
            perturb_generator_phase(&mut state, generator, r);
            state.freq_dev[generator - 1] += s;
            let e = lyap.energy(&state);
            if e <= 0.0 && !(r == 0.0 && s == 0.0) {
                nonpositive += 1;
            }
            row.push(e);
            lrow.push((e > 0.0).then(|| e.ln()));
        }
        energy.push(row);
        log_energy.push(lrow);
    }
    Ok(EnergySlice { generator, rho: rho_v, sigma: sigma_v, energy, log_energy, nonpositive_off_minimum: nonpositive })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Where |A_i − D_iΔω_sync| = K_{1i} in the (D_i, A_i) plane; the stable
/// region is `lower.at(D) < A < upper.at(D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLines {
    pub spoke: usize,
    /// Σ_{j≠i} A_j.
    pub other_injection: f64,
    /// Σ_{j≠i} D_j.
    pub other_damping: f64,
    pub lower: Line,
    pub upper: Line,
}

impl BoundaryLines {
    pub fn contains(&self, d: f64, a: f64) -> bool {
        self.lower.at(d) < a && a < self.upper.at(d)
    }
}

/// Closed-form boundary lines for spoke `i` with every other parameter of
/// `spec` held fixed.
///
/// Δω_sync = (S_A + A_i)/(S_D + D_i), so D_iΔω_sync − A_i = (D_i S_A − A_i S_D)/(S_D + D_i)
/// and setting it to ±K gives A_i = ∓K + D_i (S_A ∓ K)/S_D.
pub fn stability_boundary(spec: &GridSpec, i: usize) -> Result<BoundaryLines, StabilityError> {
    if i < 2 || i > spec.n {
        return Err(StabilityError::NotASpoke { index: i, n: spec.n });
    }
    let sa = spec.total_injection() - spec.injection[i - 1];
    let sd = spec.total_damping() - spec.damping[i - 1];
    if !(sd > 0.0) {
        return Err(StabilityError::DegenerateSums(sd));
    }
    let k = spec.coupling[i - 2];
    Ok(BoundaryLines {
        spoke: i,
        other_injection: sa,
        other_damping: sd,
        lower: Line { intercept: -k, slope: (sa - k) / sd },
        upper: Line { intercept: k, slope: (sa + k) / sd },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::vector_field;
    use crate::equilibrium::{enumerate_fixed_points, DEFAULT_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn two_bus(k: f64) -> GridSpec {
        GridSpec {
            n: 2,
            omega_ref: 6283.0,
            inertia: vec![10.0, 1.0],
            damping: vec![1.0, 1.0],
            injection: vec![1.0, -1.0],
            coupling: vec![k],
        }
    }

    fn five_bus() -> GridSpec {
        GridSpec {
            n: 5,
            omega_ref: 377.0,
            inertia: vec![6.0, 0.3, 0.4, 0.5, 0.2],
            damping: vec![2.0, 0.3, 0.5, 0.4, 0.6],
            injection: vec![2.0, -0.5, -0.7, 0.3, -0.4],
            coupling: vec![2.5, 3.0, 1.8, 2.2],
        }
    }

    fn fd_jacobian(spec: &GridSpec, x: &[f64], step: f64) -> DMatrix<f64> {
        let dim = x.len();
        let mut j = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[c] += step;
            xm[c] -= step;
            let fp = vector_field(spec, &SystemState::from_slice(spec.n, &xp).unwrap()).unwrap();
            let fm = vector_field(spec, &SystemState::from_slice(spec.n, &xm).unwrap()).unwrap();
            for r in 0..dim {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
            }
        }
        j
    }

    #[test]
    fn unloaded_margins_equal_coupling() {
        let mut s = five_bus();
        s.injection = vec![0.0; 5];
        let c = check_criterion(&s);
        assert_eq!(c.margins, s.coupling);
        assert!(c.satisfied);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = five_bus();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..9).map(|d| if d < 4 { rng.random_range(-PI..PI) } else { rng.random_range(-2.0..2.0) }).collect();
            let ja = jacobian_flat(&spec, &x);
            let jf = fd_jacobian(&spec, &x, 1e-6);
            let scale = ja.amax().max(1.0);
            assert!((ja - jf).amax() / scale < 1e-6);
        }
    }

    #[test]
    fn decoupled_frequency_block_is_diagonal() {
        let mut spec = five_bus();
        spec.coupling = vec![0.0; 4];
        let j = jacobian_flat(&spec, &[0.3, -0.2, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for r in 4..9 {
            for c in 0..9 {
                let expected = if r == c { -spec.omega_ref / (2.0 * spec.inertia[r - 4]) * spec.damping[r - 4] } else { 0.0 };
                assert!((j[(r, c)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coupling_columns_antisymmetric_n3() {
        // with equal inertia the power-coupling rows sum to zero per phase column
        let spec = GridSpec {
            n: 3,
            omega_ref: 2.0,
            inertia: vec![1.0; 3],
            damping: vec![1.0; 3],
            injection: vec![0.0; 3],
            coupling: vec![1.3, 0.7],
        };
        let j = jacobian_flat(&spec, &[0.4, -0.9, 0.0, 0.0, 0.0]);
        for c in 0..2 {
            let s: f64 = (2..5).map(|r| j[(r, c)]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn spectrum_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0, -3.0]));
        let e = spectrum(&d).unwrap();
        let re: Vec<f64> = e.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![-1.0, -2.0, -3.0]);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = spectrum(&rot).unwrap();
        assert!((e[0] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
        assert!((e[1] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(spectrum(&bad), Err(StabilityError::NonFiniteMatrix)));
    }

    #[test]
    fn two_bus_classification() {
        let spec = two_bus(5.0);
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        let report = classify_fixed_points(&spec, &eq, default_marginal_tol(&spec)).unwrap();
        assert_eq!(report.points[0].class, Classification::Stable);
        assert_eq!(report.points[1].class, Classification::Unstable);
        assert_eq!(report.stable_point, Some(0));
        // oracle: det of the 3x3 Jacobian = product of eigenvalues
        for (p, ps) in eq.points.iter().zip(&report.points) {
            let det = jacobian(&spec, &p.state).unwrap().determinant();
            let prod = ps.eigenvalues.iter().fold(Complex64::new(1.0, 0.0), |a, z| a * z);
            assert!((prod.re - det).abs() < 1e-6 * det.abs().max(1.0));
        }
    }

    #[test]
    fn unloaded_pi_points_unstable() {
        let mut spec = five_bus();
        spec.injection = vec![0.0; 5];
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        let report = classify_fixed_points(&spec, &eq, default_marginal_tol(&spec)).unwrap();
        for (p, ps) in eq.points.iter().zip(&report.points) {
            let has_pi = p.state.phases.iter().any(|&d| (d - PI).abs() < 1e-9);
            let zero = p.state.phases.iter().all(|&d| d.abs() < 1e-9);
            if zero {
                assert_eq!(ps.class, Classification::Stable);
            } else {
                assert!(has_pi);
                assert_eq!(ps.class, Classification::Unstable, "point {}", p.id);
            }
        }
    }

    #[test]
    fn thin_margin_stays_stable() {
        let mut spec = two_bus(1.0);
        spec.coupling[0] = 1.0 + 1e-6;
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        let report = classify_fixed_points(&spec, &eq, default_marginal_tol(&spec)).unwrap();
        let stable = &report.points[0];
        assert_eq!(stable.class, Classification::Stable);
        assert!(stable.max_real < 0.0 && stable.max_real > -0.1, "{}", stable.max_real);
    }

    #[test]
    fn energy_reference_and_kinetic() {
        let spec = five_bus();
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        let s = &eq.points[0].state;
        let lyap = Lyapunov::new(&spec, s);
        assert_eq!(lyap.energy(s), 0.0);
        let v = [0.1, -0.2, 0.05, 0.3, -0.1];
        let mut moved = s.clone();
        for (w, dv) in moved.freq_dev.iter_mut().zip(v) {
            *w += dv;
        }
        let expected: f64 = 0.5 * spec.masses().iter().zip(v).map(|(m, dv)| m * dv * dv).sum::<f64>();
        assert!((lyap.energy(&moved) - expected).abs() < 1e-15);
    }

    #[test]
    fn energy_derivative_matches_dissipation() {
        // chain rule through the vector field against the closed form −ΣD u²
        let spec = five_bus();
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        let lyap = Lyapunov::new(&spec, &eq.points[0].state);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let st = SystemState::from_slice(5, &x).unwrap();
            let f = vector_field(&spec, &st).unwrap();
            let h = 1e-6;
            let fwd: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + h * b).collect();
            let bwd: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - h * b).collect();
            let de = (lyap.energy(&SystemState::from_slice(5, &fwd).unwrap())
                - lyap.energy(&SystemState::from_slice(5, &bwd).unwrap()))
                / (2.0 * h);
            let expected = lyap.dissipation(&spec, &st);
            assert!((de - expected).abs() < 1e-6 * expected.abs().max(1.0), "{de} vs {expected}");
        }
    }

    #[test]
    fn slice_minimum_at_origin() {
        let spec = five_bus();
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        let slice = energy_slice(&spec, &eq, 2, SliceAxis::symmetric(1.0, 41), SliceAxis::symmetric(1.0, 41)).unwrap();
        let (r, s) = slice.argmin();
        assert!(r.abs() < 1e-12 && s.abs() < 1e-12);
        assert!(slice.log_energy[20][20].is_none());
        assert_eq!(slice.nonpositive_off_minimum, 0);
    }

    #[test]
    fn slice_requires_criterion() {
        let spec = two_bus(0.5);
        let eq = enumerate_fixed_points(&spec, DEFAULT_TOL).unwrap();
        assert!(matches!(
            energy_slice(&spec, &eq, 2, SliceAxis::symmetric(1.0, 3), SliceAxis::symmetric(1.0, 3)),
            Err(StabilityError::CriterionNotSatisfied { .. })
        ));
    }

    #[test]
    fn boundary_symmetric_wedge() {
        let mut spec = five_bus();
        spec.injection = vec![0.0; 5];
        let b = stability_boundary(&spec, 3).unwrap();
        let sd = spec.total_damping() - spec.damping[2];
        let k = spec.coupling[1];
        for d in [0.1, 0.5, 2.0] {
            assert!((b.upper.at(d) - k * (1.0 + d / sd)).abs() < 1e-12);
            assert!((b.lower.at(d) + k * (1.0 + d / sd)).abs() < 1e-12);
        }
        assert!(matches!(stability_boundary(&spec, 1), Err(StabilityError::NotASpoke { .. })));
    }

    #[test]
    fn boundary_point_has_zero_margin() {
        let spec = five_bus();
        let i = 4;
        let b = stability_boundary(&spec, i).unwrap();
        for d in [0.1, 0.4, 1.3] {
            for line in [b.lower, b.upper] {
                let mut s = spec.clone();
                s.damping[i - 1] = d;
                s.injection[i - 1] = line.at(d);
                let m = check_criterion(&s).margins[i - 2];
                assert!(m.abs() < 1e-12, "margin {m}");
            }
        }
    }

    #[test]
    fn margins_ignore_inertia() {
        let spec = five_bus();
        assert_eq!(check_criterion(&spec), check_criterion(&spec.with_scaled_inertia(100.0)));
    }
}
