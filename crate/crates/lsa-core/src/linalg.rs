//! Small dense kernels for the desk-scale models.
//!
//! Reductions use a fixed 8-lane accumulation order so results are
//! reproducible for a given build while still vectorizing.

use crate::scalar::Scalar;

/// Dot product of two equal-length slices.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
        acc[4] = acc[4] + x[4] * y[4];
        acc[5] = acc[5] + x[5] * y[5];
        acc[6] = acc[6] + x[6] * y[6];
        acc[7] = acc[7] + x[7] * y[7];
    }
    let mut tail = F::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + *x * *y;
    }
    let head = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    head + tail
}

/// `y += a * x` elementwise.
pub fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

/// `y *= a` elementwise.
pub fn scale<F: Scalar>(y: &mut [F], a: F) {
    for yi in y.iter_mut() {
        *yi = *yi * a;
    }
}

/// Sum of squares with the same accumulation order as [`dot`].
pub fn norm_sq<F: Scalar>(a: &[F]) -> F {
    dot(a, a)
}

/// In-place stable softmax; falls back to uniform on a degenerate input.
pub fn softmax_in_place<F: Scalar>(v: &mut [F]) {
    if v.is_empty() {
        return;
    }
    let mut max = v[0];
    for &x in v.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    if sum.is_finite() && sum > F::zero() {
        for x in v.iter_mut() {
            *x = *x / sum;
        }
    } else {
        let u = F::one() / F::fl(v.len() as f64);
        for x in v.iter_mut() {
            *x = u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.25 - 2.0).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn axpy_and_scale() {
        let mut y = vec![1.0f64, 2.0, 3.0];
        axpy(&mut y, 2.0, &[1.0, 0.0, -1.0]);
        assert_eq!(y, vec![3.0, 2.0, 1.0]);
        scale(&mut y, 0.5);
        assert_eq!(y, vec![1.5, 1.0, 0.5]);
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let mut v = vec![1.0f64, 3.0, 2.0];
        softmax_in_place(&mut v);
        let s: f64 = v.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(v[1] > v[2] && v[2] > v[0]);
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let mut v = vec![16667.0f64, 0.033];
        softmax_in_place(&mut v);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[0] > 0.999);
    }
}
