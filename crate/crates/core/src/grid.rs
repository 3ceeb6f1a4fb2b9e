//! Network description for a hub-and-spoke grid and its phase-space state.
//!
//! Generator indices in the public API are 1-based: the hub is generator 1 and
//! the spokes are generators 2..=n. Storage is 0-based.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Config schema identifier written into every grid file.
pub const GRID_FORMAT: &str = "hubsync-grid/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    OmegaRef,
    Inertia,
    Damping,
    Injection,
    Coupling,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::OmegaRef => "omega_ref",
            Field::Inertia => "inertia",
            Field::Damping => "damping",
            Field::Injection => "injection",
            Field::Coupling => "coupling",
        };
        f.write_str(s)
    }
}

/// A single invariant violation found by [`GridSpec::validate`].
///
/// `index` is the 1-based generator index (for `coupling` it is the spoke's
/// generator index, 2..=n; for `omega_ref` it is 0).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("too few generators: n = {n}, need at least 2")]
    TooFewGenerators { n: usize },
    #[error("{field}[{index}] must be positive, got {value}")]
    NonPositiveParameter { field: Field, index: usize, value: f64 },
    #[error("{field}[{index}] is not finite")]
    NonFinite { field: Field, index: usize },
    #[error("{field} has {found} entries, expected {expected}")]
    LengthMismatch { field: Field, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid grid ({} violation", self.violations.len())?;
        if self.violations.len() != 1 {
            f.write_str("s")?;
        }
        f.write_str(")")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("generator index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("state dimension {found} does not match 2n-1 = {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable description of the hub-and-spoke network.
///
/// Spoke-to-spoke couplings do not exist in this model; `coupling[s]` is the
/// hub line of generator `s + 2`, and K_{1i} = K_{i1}.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    /// Reference angular frequency, rad/s.
    pub omega_ref: f64,
    /// Inertia constants H_i, s.
    pub inertia: Vec<f64>,
    /// Damping D_i, per-unit power per rad/s.
    pub damping: Vec<f64>,
    /// Net power export A_i, per-unit (signed).
    pub injection: Vec<f64>,
    /// Hub-line couplings K_{1i} for i = 2..=n, per-unit.
    pub coupling: Vec<f64>,
}

impl GridSpec {
    /// Returns the spec unchanged if every invariant holds, otherwise every
    /// violation found.
    pub fn validate(self) -> Result<GridSpec, ValidationError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(ValidationError { violations })
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n < 2 {
            out.push(Violation::TooFewGenerators { n: self.n });
        }
        if !self.omega_ref.is_finite() {
            out.push(Violation::NonFinite { field: Field::OmegaRef, index: 0 });
        } else if self.omega_ref <= 0.0 {
            out.push(Violation::NonPositiveParameter {
                field: Field::OmegaRef,
                index: 0,
                value: self.omega_ref,
            });
        }
        let per_gen = [
            (Field::Inertia, &self.inertia, true),
            (Field::Damping, &self.damping, true),
            (Field::Injection, &self.injection, false),
        ];
        for (field, values, positive) in per_gen {
            if values.len() != self.n {
                out.push(Violation::LengthMismatch { field, expected: self.n, found: values.len() });
            }
            check_values(&mut out, field, values, 1, positive);
        }
        let spokes = self.n.saturating_sub(1);
        if self.coupling.len() != spokes {
            out.push(Violation::LengthMismatch {
                field: Field::Coupling,
                expected: spokes,
                found: self.coupling.len(),
            });
        }
        check_values(&mut out, Field::Coupling, &self.coupling, 2, true);
        out
    }

    /// m_i = 2 H_i / ω_R for 1-based generator `i`.
    pub fn effective_mass(&self, i: usize) -> Result<f64, GridError> {
        self.check_index(i)?;
        Ok(2.0 * self.inertia[i - 1] / self.omega_ref)
    }

    /// K_{1i} for spoke generator `i` in 2..=n.
    pub fn spoke_coupling(&self, i: usize) -> Result<f64, GridError> {
        if i < 2 || i > self.n {
            return Err(GridError::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(self.coupling[i - 2])
    }

    fn check_index(&self, i: usize) -> Result<(), GridError> {
        if i == 0 || i > self.n {
            Err(GridError::IndexOutOfRange { index: i, n: self.n })
        } else {
            Ok(())
        }
    }

    /// Dimension of the reduced state, 2n − 1.
    pub fn state_dim(&self) -> usize {
        2 * self.n - 1
    }

    pub fn masses(&self) -> Vec<f64> {
        self.inertia.iter().map(|h| 2.0 * h / self.omega_ref).collect()
    }

    /// Largest single-generator time constant 2H_i / (ω_R D_i), s.
    pub fn max_time_constant(&self) -> f64 {
        self.inertia
            .iter()
            .zip(&self.damping)
            .map(|(h, d)| 2.0 * h / (self.omega_ref * d))
            .fold(0.0, f64::max)
    }

    /// Largest phase-slip time scale D_i / K_{1i} over the spokes, s.
    pub fn slip_time_scale(&self) -> f64 {
        self.damping[1..]
            .iter()
            .zip(&self.coupling)
            .map(|(d, k)| d / k)
            .fold(0.0, f64::max)
    }

    pub fn total_injection(&self) -> f64 {
        self.injection.iter().sum()
    }

    pub fn total_damping(&self) -> f64 {
        self.damping.iter().sum()
    }

    /// Multiplies every inertia constant by `factor`.
    pub fn with_scaled_inertia(&self, factor: f64) -> GridSpec {
        let mut spec = self.clone();
        spec.inertia.iter_mut().for_each(|h| *h *= factor);
        spec
    }

    pub fn from_toml_str(text: &str) -> Result<GridSpec, GridError> {
        let file: GridFile = toml::from_str(text).map_err(|e| GridError::Config(e.to_string()))?;
        file.into_spec()
    }

    /// Canonical text form. `from_toml_str(to_toml_string())` reproduces the spec.
    pub fn to_toml_string(&self) -> String {
        let file = GridFile {
            format: GRID_FORMAT.to_string(),
            n: self.n,
            omega_ref_rad_per_s: Some(self.omega_ref),
            omega_ref_hz: None,
            inertia: self.inertia.clone(),
            damping: self.damping.clone(),
            injection: self.injection.clone(),
            coupling: self.coupling.clone(),
        };
        toml::to_string(&file).expect("grid file serializes")
    }

    /// Loads and validates a grid file.
    pub fn load(path: &Path) -> Result<GridSpec, GridError> {
        let text = std::fs::read_to_string(path)?;
        Ok(GridSpec::from_toml_str(&text)?.validate()?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

fn check_values(out: &mut Vec<Violation>, field: Field, values: &[f64], first: usize, positive: bool) {
    for (offset, &value) in values.iter().enumerate() {
        let index = first + offset;
        if !value.is_finite() {
            out.push(Violation::NonFinite { field, index });
        } else if positive && value <= 0.0 {
            out.push(Violation::NonPositiveParameter { field, index, value });
        }
    }
}

/// On-disk layout of a grid config.
///
/// `omega_ref_rad_per_s` and `omega_ref_hz` are alternatives; exactly one must
/// be present. Saving always writes rad/s.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    format: String,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega_ref_rad_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega_ref_hz: Option<f64>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
    injection: Vec<f64>,
    coupling: Vec<f64>,
}

impl GridFile {
    fn into_spec(self) -> Result<GridSpec, GridError> {
        if self.format != GRID_FORMAT {
            return Err(GridError::Config(format!(
                "unsupported format '{}', expected '{GRID_FORMAT}'",
                self.format
            )));
        }
        let omega_ref = match (self.omega_ref_rad_per_s, self.omega_ref_hz) {
            (Some(w), None) => w,
            (None, Some(hz)) => TAU * hz,
            (Some(_), Some(_)) => {
                return Err(GridError::Config(
                    "give either omega_ref_rad_per_s or omega_ref_hz, not both".into(),
                ))
            }
            (None, None) => {
                return Err(GridError::Config("missing omega_ref_rad_per_s".into()));
            }
        };
        Ok(GridSpec {
            n: self.n,
            omega_ref,
            inertia: self.inertia,
            damping: self.damping,
            injection: self.injection,
            coupling: self.coupling,
        })
    }
}

/// Point in the reduced phase space T^(n−1) × R^n.
///
/// `phases` holds δ_1..δ_{n−1} relative to generator n, unwrapped; δ_n ≡ 0 is
/// implicit. `freq_dev` holds Δω_1..Δω_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub phases: Vec<f64>,
    pub freq_dev: Vec<f64>,
}

impl SystemState {
    pub fn new(phases: Vec<f64>, freq_dev: Vec<f64>) -> Self {
        SystemState { phases, freq_dev }
    }

    pub fn n(&self) -> usize {
        self.freq_dev.len()
    }

    pub fn dim(&self) -> usize {
        self.phases.len() + self.freq_dev.len()
    }

    /// Flat layout `[δ_1..δ_{n−1}, Δω_1..Δω_n]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.phases);
        v.extend_from_slice(&self.freq_dev);
        v
    }

    pub fn from_slice(n: usize, x: &[f64]) -> Result<Self, GridError> {
        if n == 0 || x.len() != 2 * n - 1 {
            return Err(GridError::DimensionMismatch { expected: 2 * n.max(1) - 1, found: x.len() });
        }
        Ok(SystemState { phases: x[..n - 1].to_vec(), freq_dev: x[n - 1..].to_vec() })
    }

    pub fn wrapped_phases(&self) -> Vec<f64> {
        self.phases.iter().map(|&p| wrap_phase(p)).collect()
    }

    /// Same point with phases canonicalized into [0, 2π).
    pub fn wrapped(&self) -> SystemState {
        SystemState { phases: self.wrapped_phases(), freq_dev: self.freq_dev.clone() }
    }

    /// Phase distance on the torus (max-norm) plus frequency distance (max-norm).
    pub fn torus_distance(&self, other: &SystemState) -> f64 {
        let phase = self
            .phases
            .iter()
            .zip(&other.phases)
            .map(|(a, b)| angle_distance(*a, *b))
            .fold(0.0, f64::max);
        let freq = self
            .freq_dev
            .iter()
            .zip(&other.freq_dev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        phase + freq
    }

    pub fn check_dim(&self, spec: &GridSpec) -> Result<(), GridError> {
        if self.phases.len() + 1 != spec.n || self.freq_dev.len() != spec.n {
            return Err(GridError::DimensionMismatch { expected: spec.state_dim(), found: self.dim() });
        }
        Ok(())
    }
}

/// Canonical representative in [0, 2π).
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest distance between two angles on the circle, in [0, π].
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_phase(a - b);
    d.min(TAU - d)
}
