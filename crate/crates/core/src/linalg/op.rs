//! Matrix-free linear operators.
//!
//! `apply` must be a pure function of its input: deterministic and without
//! observable side effects (instrumentation counters excepted). Operators
//! flagged symmetric are expected to satisfy `<Ax, y> = <x, Ay>` to roundoff;
//! `symmetry_defect` probes this.

use std::sync::atomic::{AtomicUsize, Ordering};

pub trait LinearOp: Sync {
    fn dim(&self) -> usize;

    /// y := Op x
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn is_symmetric(&self) -> bool {
        true
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}

pub struct IdentityOp(pub usize);

impl LinearOp for IdentityOp {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

pub struct DiagOp(pub Vec<f64>);

impl LinearOp for DiagOp {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            y[i] = self.0[i] * x[i];
        }
    }
}

/// Closure-backed operator.
pub struct FnOp<F: Fn(&[f64], &mut [f64]) + Sync> {
    n: usize,
    symmetric: bool,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOp<F> {
    pub fn new(n: usize, symmetric: bool, f: F) -> Self {
        FnOp { n, symmetric, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOp for FnOp<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// `inner + shift * I`.
pub struct ShiftedOp<'a> {
    pub inner: &'a dyn LinearOp,
    pub shift: f64,
}

impl LinearOp for ShiftedOp<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.shift * xi;
        }
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
}

/// Counts applications of the wrapped operator.
pub struct CountingOp<'a> {
    inner: &'a dyn LinearOp,
    count: AtomicUsize,
}

impl<'a> CountingOp<'a> {
    pub fn new(inner: &'a dyn LinearOp) -> Self {
        CountingOp { inner, count: AtomicUsize::new(0) }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl LinearOp for CountingOp<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x, y);
    }

    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
}

/// Largest relative symmetry defect `|<Ax,y> - <x,Ay>| / (||Ax|| ||y||)`
/// over `probes` random pairs.
pub fn symmetry_defect(op: &dyn LinearOp, seed: u64, probes: usize) -> f64 {
    let n = op.dim();
    let mut worst = 0.0f64;
    for k in 0..probes {
        let x = crate::rng::gaussian_vector(seed, 2 * k as u64, n);
        let y = crate::rng::gaussian_vector(seed, 2 * k as u64 + 1, n);
        let ax = op.apply_vec(&x);
        let ay = op.apply_vec(&y);
        let lhs = crate::linalg::dot(&ax, &y);
        let rhs = crate::linalg::dot(&x, &ay);
        let scale = crate::linalg::norm2(&ax) * crate::linalg::norm2(&y);
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    worst
}
