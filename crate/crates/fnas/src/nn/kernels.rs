//! Scalar and matrix kernels shared by the tape and the plain forward paths.
//!
//! Sampling runs without a tape for speed, while losses run on the tape. Both
//! paths must agree bit-for-bit (a sampled trajectory's log-prob is asserted
//! equal to the teacher-forced one), so they share these kernels and keep the
//! same accumulation order.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn sigmoid_grad_from_output(y: f64) -> f64 {
    y * (1.0 - y)
}

#[inline]
pub fn tanh_grad_from_output(y: f64) -> f64 {
    1.0 - y * y
}

/// softplus(x) = ln(1 + e^x), computed in the numerically stable branch form.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

/// PReLU with a scalar slope: x for x > 0, slope * x otherwise.
#[inline]
pub fn prelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// out[r] = sum_c m[r*cols + c] * x[c], accumulated in column order.
pub fn matvec_into(m: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

/// out[i] = x[i] - (max + ln sum exp(x - max)); log-probabilities of a softmax.
pub fn log_softmax_into(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in x {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_normalizes() {
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut lp = [0.0; 4];
        log_softmax_into(&x, &mut lp);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lp.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn matvec_matches_hand_computation() {
        // [[1,2],[3,4],[5,6]] * [10, 1]
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [10.0, 1.0];
        let mut out = [0.0; 3];
        matvec_into(&m, &x, 3, 2, &mut out);
        assert_eq!(out, [12.0, 34.0, 56.0]);
    }

    #[test]
    fn prelu_definition() {
        assert_eq!(prelu(-2.0, 0.25), -0.5);
        assert_eq!(prelu(3.0, 0.25), 3.0);
    }
}
