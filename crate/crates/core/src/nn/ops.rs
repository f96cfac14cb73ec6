//! Row-level kernels shared by forward, incremental decoding and backward.
//!
//! Matrices are row-major `[in, out]`. Every kernel visits elements in a fixed
//! order so a row computed alone matches the same row computed in a batch.

pub const LN_EPS: f64 = 1e-5;

/// `y = b + x W` for `W: [x.len(), y.len()]`.
pub fn linear(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let n = y.len();
    debug_assert_eq!(w.len(), x.len() * n);
    y.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n..(i + 1) * n];
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
}

/// Accumulates gradients of [`linear`]: `dx += W dy`, `dW += x dyᵀ`, `db += dy`.
pub fn linear_backward(x: &[f64], w: &[f64], dy: &[f64], dx: Option<&mut [f64]>, dw: &mut [f64], db: &mut [f64]) {
    let n = dy.len();
    for (d, g) in db.iter_mut().zip(dy) {
        *d += g;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut dw[i * n..(i + 1) * n];
        for (r, g) in row.iter_mut().zip(dy) {
            *r += xi * g;
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            let row = &w[i * n..(i + 1) * n];
            *d += row.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Layer norm of `x` into `y`; returns `(xhat, rstd)` for the backward pass.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], y: &mut [f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / libm::sqrt(var + LN_EPS);
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        y[i] = xhat[i] * gain[i] + bias[i];
    }
    rstd
}

/// Accumulates layer-norm gradients into `dx`, `dgain`, `dbias`.
pub fn layer_norm_backward(xhat: &[f64], rstd: f64, gain: &[f64], dy: &[f64], dx: &mut [f64], dgain: &mut [f64], dbias: &mut [f64]) {
    let n = xhat.len() as f64;
    let mut sum_g = 0.0;
    let mut sum_gx = 0.0;
    for i in 0..xhat.len() {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
        let g = dy[i] * gain[i];
        sum_g += g;
        sum_gx += g * xhat[i];
    }
    for i in 0..xhat.len() {
        let g = dy[i] * gain[i];
        dx[i] += rstd * (g - sum_g / n - xhat[i] * sum_gx / n);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place softmax; returns log of the normalizer (log-sum-exp).
pub fn softmax(z: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - m);
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
    m + libm::log(s)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut z = vec![1000.0, 999.0, -5.0];
        let lse = softmax(&mut z);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((lse - (1000.0 + (1.0 + (-1.0f64).exp() + (-1005.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn log_sigmoid_stable() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(log_sigmoid(800.0) == 0.0);
        assert!((sigmoid(2.0) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let x = [0.3, -1.2, 2.0, 0.7];
        let g = [1.1, 0.9, -0.5, 2.0];
        let b = [0.0, 0.1, 0.2, -0.3];
        let w = [0.5, -1.0, 0.25, 2.0];
        let loss = |x: &[f64]| {
            let mut y = [0.0; 4];
            let mut xh = [0.0; 4];
            layer_norm(x, &g, &b, &mut y, &mut xh);
            dot(&y, &w)
        };
        let mut y = [0.0; 4];
        let mut xh = [0.0; 4];
        let rstd = layer_norm(&x, &g, &b, &mut y, &mut xh);
        let mut dx = [0.0; 4];
        let (mut dg, mut db) = ([0.0; 4], [0.0; 4]);
        layer_norm_backward(&xh, rstd, &g, &w, &mut dx, &mut dg, &mut db);
        for i in 0..4 {
            let h = 1e-6;
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
