//! Fixed-dimension vector arithmetic on plain `[f64; D]` arrays.
//!
//! Positions and velocities are bare arrays so that the rest of the crate can
//! stay generic over the spatial dimension (2 or 3) without pulling in a
//! linear-algebra dependency for what amounts to a handful of loops.

#[inline]
pub fn add<const D: usize>(a: [f64; D], b: [f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] + b[k];
    }
    out
}

#[inline]
pub fn sub<const D: usize>(a: [f64; D], b: [f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] - b[k];
    }
    out
}

#[inline]
pub fn scale<const D: usize>(a: [f64; D], s: f64) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] * s;
    }
    out
}

/// `a + t * b`, the workhorse of free streaming.
#[inline]
pub fn axpy<const D: usize>(a: [f64; D], t: f64, b: [f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] + t * b[k];
    }
    out
}

#[inline]
pub fn dot<const D: usize>(a: [f64; D], b: [f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn norm_sq<const D: usize>(a: [f64; D]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm<const D: usize>(a: [f64; D]) -> f64 {
    norm_sq(a).sqrt()
}

/// Unit vector along `a`, or `None` for (numerically) zero input.
#[inline]
pub fn unit<const D: usize>(a: [f64; D]) -> Option<[f64; D]> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

#[inline]
pub fn is_finite<const D: usize>(a: [f64; D]) -> bool {
    a.iter().all(|x| x.is_finite())
}
