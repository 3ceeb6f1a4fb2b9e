//! Explicit embedded Runge–Kutta pairs behind a common trait, plus a
//! name-keyed registry used to pick one at runtime.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

/// Right-hand side of an autonomous ODE, `f(y, dy)`.
pub type Rhs<'a> = dyn Fn(&[f64], &mut [f64]) + 'a;

/// Scratch buffers reused across steps.
#[derive(Debug, Default)]
pub struct Workspace {
    stages: Vec<Vec<f64>>,
    tmp: Vec<f64>,
}

impl Workspace {
    pub fn new(stages: usize, dim: usize) -> Self {
        Workspace { stages: vec![vec![0.0; dim]; stages], tmp: vec![0.0; dim] }
    }

    fn ensure(&mut self, stages: usize, dim: usize) {
        if self.stages.len() < stages || self.tmp.len() != dim {
            *self = Workspace::new(stages, dim);
        }
    }
}

/// One explicit embedded pair.
///
/// `step` advances `y` by `h` given `fy = f(y)`, writes the propagated
/// solution into `y_new`, the local error estimate into `err`, and `f(y_new)`
/// into `f_new`.
pub trait EmbeddedPair: Send + Sync {
    fn name(&self) -> &'static str;

    /// Order of the propagated solution.
    fn order(&self) -> u32;

    /// Order of the embedded (error-estimating) solution.
    fn embedded_order(&self) -> u32;

    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        f: &Rhs<'_>,
        y: &[f64],
        fy: &[f64],
        h: f64,
        ws: &mut Workspace,
        y_new: &mut [f64],
        err: &mut [f64],
        f_new: &mut [f64],
    );
}

/// Butcher tableau of an explicit pair. `e` holds b − b̂.
pub struct Tableau {
    pub name: &'static str,
    pub order: u32,
    pub embedded_order: u32,
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    pub e: &'static [f64],
    /// Last stage is evaluated at the propagated solution.
    pub fsal: bool,
}

impl EmbeddedPair for Tableau {
    fn name(&self) -> &'static str {
        self.name
    }

    fn order(&self) -> u32 {
        self.order
    }

    fn embedded_order(&self) -> u32 {
        self.embedded_order
    }

    fn step(
        &self,
        f: &Rhs<'_>,
        y: &[f64],
        fy: &[f64],
        h: f64,
        ws: &mut Workspace,
        y_new: &mut [f64],
        err: &mut [f64],
        f_new: &mut [f64],
    ) {
        let s = self.b.len();
        let dim = y.len();
        ws.ensure(s, dim);
        ws.stages[0].copy_from_slice(fy);
        for i in 1..s {
            let row = self.a[i];
            for d in 0..dim {
                let mut acc = 0.0;
                for (j, &aij) in row.iter().enumerate() {
                    if aij != 0.0 {
                        acc += aij * ws.stages[j][d];
                    }
                }
                ws.tmp[d] = y[d] + h * acc;
            }
            f(&ws.tmp, &mut ws.stages[i]);
        }
        for d in 0..dim {
            let mut acc = 0.0;
            let mut e = 0.0;
            for j in 0..s {
                acc += self.b[j] * ws.stages[j][d];
                e += self.e[j] * ws.stages[j][d];
            }
            y_new[d] = y[d] + h * acc;
            err[d] = h * e;
        }
        if self.fsal {
            f_new.copy_from_slice(&ws.stages[s - 1]);
        } else {
            f(y_new, f_new);
        }
    }
}

/// Dormand–Prince 5(4).
pub static DOPRI5: Tableau = Tableau {
    name: "dopri5",
    order: 5,
    embedded_order: 4,
    a: &[
        &[],
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b: &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    e: &[
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ],
    fsal: true,
};

/// Bogacki–Shampine 3(2).
pub static BS23: Tableau = Tableau {
    name: "bs23",
    order: 3,
    embedded_order: 2,
    a: &[&[], &[1.0 / 2.0], &[0.0, 3.0 / 4.0], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    e: &[2.0 / 9.0 - 7.0 / 24.0, 1.0 / 3.0 - 1.0 / 4.0, 4.0 / 9.0 - 1.0 / 3.0, -1.0 / 8.0],
    fsal: true,
};

/// Cash–Karp 5(4).
pub static CASH_KARP: Tableau = Tableau {
    name: "cash-karp",
    order: 5,
    embedded_order: 4,
    a: &[
        &[],
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0],
        &[-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0],
        &[1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0, 44275.0 / 110592.0, 253.0 / 4096.0],
    ],
    b: &[37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0, 0.0, 512.0 / 1771.0],
    e: &[
        37.0 / 378.0 - 2825.0 / 27648.0,
        0.0,
        250.0 / 621.0 - 18575.0 / 48384.0,
        125.0 / 594.0 - 13525.0 / 55296.0,
        -277.0 / 14336.0,
        512.0 / 1771.0 - 1.0 / 4.0,
    ],
    fsal: false,
};

/// Name-keyed set of available pairs.
#[derive(Clone, Default)]
pub struct IntegratorRegistry {
    entries: BTreeMap<&'static str, Arc<dyn EmbeddedPair>>,
}

impl IntegratorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(&DOPRI5));
        reg.register(Arc::new(&BS23));
        reg.register(Arc::new(&CASH_KARP));
        reg
    }

    /// Adds a pair, replacing any previous entry of the same name.
    pub fn register(&mut self, pair: Arc<dyn EmbeddedPair>) {
        self.entries.insert(pair.name(), pair);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn EmbeddedPair>> {
        self.entries.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

impl<T: EmbeddedPair + ?Sized> EmbeddedPair for &'static T {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn order(&self) -> u32 {
        (**self).order()
    }
    fn embedded_order(&self) -> u32 {
        (**self).embedded_order()
    }
    fn step(
        &self,
        f: &Rhs<'_>,
        y: &[f64],
        fy: &[f64],
        h: f64,
        ws: &mut Workspace,
        y_new: &mut [f64],
        err: &mut [f64],
        f_new: &mut [f64],
    ) {
        (**self).step(f, y, fy, h, ws, y_new, err, f_new)
    }
}

/// Process-wide registry with the built-in pairs.
pub fn builtin_registry() -> &'static IntegratorRegistry {
    static REG: OnceLock<IntegratorRegistry> = OnceLock::new();
    REG.get_or_init(IntegratorRegistry::with_builtins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consistency(t: &Tableau) {
        for (i, row) in t.a.iter().enumerate() {
            assert_eq!(row.len(), i, "{} row {i}", t.name);
        }
        let sb: f64 = t.b.iter().sum();
        assert!((sb - 1.0).abs() < 1e-14, "{}", t.name);
        let se: f64 = t.e.iter().sum();
        assert!(se.abs() < 1e-14, "{}", t.name);
        if t.fsal {
            let last = t.a[t.a.len() - 1];
            for (a, b) in last.iter().zip(t.b) {
                assert!((a - b).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn tableaus_consistent() {
        consistency(&DOPRI5);
        consistency(&BS23);
        consistency(&CASH_KARP);
    }

    /// Error after one step on y' = y scales as h^(order+1).
    #[test]
    fn observed_local_order() {
        let f = |y: &[f64], dy: &mut [f64]| dy[0] = y[0];
        for pair in builtin_registry().names().map(|n| builtin_registry().get(n).unwrap()) {
            let mut ws = Workspace::default();
            let local = |h: f64, ws: &mut Workspace| {
                let (mut yn, mut e, mut fnew) = ([0.0], [0.0], [0.0]);
                pair.step(&f, &[1.0], &[1.0], h, ws, &mut yn, &mut e, &mut fnew);
                (yn[0] - h.exp()).abs()
            };
            let e1 = local(0.1, &mut ws);
            let e2 = local(0.05, &mut ws);
            let observed = (e1 / e2).log2();
            assert!(
                (observed - (pair.order() + 1) as f64).abs() < 0.3,
                "{}: observed {observed}",
                pair.name()
            );
        }
    }

    #[test]
    fn registry_lookup() {
        let reg = builtin_registry();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, vec!["bs23", "cash-karp", "dopri5"]);
        assert!(reg.get("euler").is_none());
        assert_eq!(reg.get("dopri5").unwrap().order(), 5);
    }
}
