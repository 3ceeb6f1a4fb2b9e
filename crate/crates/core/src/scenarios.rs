//! Reference grids used by the tests, the acceptance suite and `configs/`.

use crate::grid::GridSpec;

/// Two generators, ω_R = 6283 rad/s, H = (10, 1), D = (1, 1), A = (1, −1).
///
/// Δω_sync = 0 and μ = 1/K, so the critical coupling is K = 1.
pub fn two_bus(coupling: f64) -> GridSpec {
    GridSpec {
        n: 2,
        omega_ref: 6283.0,
        inertia: vec![10.0, 1.0],
        damping: vec![1.0, 1.0],
        injection: vec![1.0, -1.0],
        coupling: vec![coupling],
    }
}

/// Ten-generator lunar grid: a fission-reactor hub, eight solid-state spokes
/// and a tenth spoke whose damping and injection are the free parameters.
///
/// Generators 1..=9 sum to Σ A = 24.56 and Σ D = 0.048; every spoke line has
/// K = 12.7.
pub fn lunar_ten(damping_n: f64, injection_n: f64) -> GridSpec {
    let mut inertia = vec![5.0];
    inertia.extend([0.05; 8]);
    inertia.push(0.002);
    let mut damping = vec![0.008];
    damping.extend([0.005; 8]);
    damping.push(damping_n);
    let mut injection = vec![20.0];
    injection.extend([0.57; 8]);
    injection.push(injection_n);
    GridSpec {
        n: 10,
        omega_ref: 6283.0,
        inertia,
        damping,
        injection,
        coupling: vec![12.7; 9],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lunar_sums() {
        let s = lunar_ten(0.01, 0.0);
        let sa: f64 = s.injection[..9].iter().sum();
        let sd: f64 = s.damping[..9].iter().sum();
        assert!((sa - 24.56).abs() < 1e-12);
        assert!((sd - 0.048).abs() < 1e-15);
        assert!(s.validate().is_ok());
    }
}
