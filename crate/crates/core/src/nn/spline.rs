//! Uniform cubic B-spline basis.

/// Uniform knot grid for cubic B-splines over `[lo, hi]` with `intervals` cells.
///
/// The knot vector is extended by three cells on each side, giving
/// `intervals + 3` basis functions. Basis `i` is supported on
/// `[lo + (i - 3)·h, lo + (i + 1)·h]`; every basis vanishes outside
/// `[lo - 3h, hi + 3h]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, intervals: usize) -> Self {
        assert!(hi > lo && intervals >= 1, "invalid spline grid");
        Self { lo, hi, intervals }
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + 3
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// Left end of the support of basis `i`.
    pub fn knot(&self, i: usize) -> f64 {
        self.lo + (i as f64 - 3.0) * self.step()
    }

    /// Writes all basis values at `x` into `out` (length `n_basis`).
    pub fn eval(&self, x: f64, out: &mut [f64]) {
        let h = self.step();
        for (i, o) in out.iter_mut().enumerate() {
            *o = cardinal((x - self.knot(i)) / h);
        }
    }

    /// Writes all basis derivatives at `x` into `out`.
    pub fn eval_deriv(&self, x: f64, out: &mut [f64]) {
        let h = self.step();
        for (i, o) in out.iter_mut().enumerate() {
            *o = cardinal_deriv((x - self.knot(i)) / h) / h;
        }
    }
}

/// Cardinal cubic B-spline supported on `[0, 4]`.
fn cardinal(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        (((-3.0 * u + 12.0) * u - 12.0) * u + 4.0) / 6.0
    } else if u < 3.0 {
        (((3.0 * u - 24.0) * u + 60.0) * u - 44.0) / 6.0
    } else {
        let v = 4.0 - u;
        v * v * v / 6.0
    }
}

fn cardinal_deriv(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        u * u / 2.0
    } else if u < 2.0 {
        (-9.0 * u * u + 24.0 * u - 12.0) / 6.0
    } else if u < 3.0 {
        (9.0 * u * u - 48.0 * u + 60.0) / 6.0
    } else {
        let v = 4.0 - u;
        -v * v / 2.0
    }
}
