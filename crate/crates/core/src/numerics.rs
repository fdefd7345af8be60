//! Shared one-dimensional kernels: tridiagonal solves, gradients, the
//! transport step and its transpose, and the pathwise shift.

/// LU factorization of a tridiagonal matrix, reusable across right-hand sides.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tridiagonal {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    cprime: Vec<f64>,
}

impl Tridiagonal {
    fn factor(lower: Vec<f64>, diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        let mut inv_pivot = vec![0.0; n];
        let mut cprime = vec![0.0; n];
        let mut m = diag[0];
        inv_pivot[0] = 1.0 / m;
        if n > 1 {
            cprime[0] = upper[0] / m;
        }
        for i in 1..n {
            m = diag[i] - lower[i] * cprime[i - 1];
            inv_pivot[i] = 1.0 / m;
            if i + 1 < n {
                cprime[i] = upper[i] / m;
            }
        }
        Tridiagonal { lower, inv_pivot, cprime }
    }

    /// `(I − Δt L A)` with Neumann second differences: the forward operator.
    pub fn forward_diffusion(a: &[f64], dt: f64, dx: f64) -> Self {
        let n = a.len();
        let r = dt / (dx * dx);
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let nb = (i > 0) as usize + (i + 1 < n) as usize;
            diag[i] = 1.0 + r * nb as f64 * a[i];
            if i > 0 {
                lower[i] = -r * a[i - 1];
            }
            if i + 1 < n {
                upper[i] = -r * a[i + 1];
            }
        }
        Tridiagonal::factor(lower, &diag, &upper)
    }

    /// `(I − Δt A L)`, the transpose of [`Tridiagonal::forward_diffusion`].
    pub fn backward_diffusion(a: &[f64], dt: f64, dx: f64) -> Self {
        let n = a.len();
        let r = dt / (dx * dx);
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let nb = (i > 0) as usize + (i + 1 < n) as usize;
            diag[i] = 1.0 + r * nb as f64 * a[i];
            if i > 0 {
                lower[i] = -r * a[i];
            }
            if i + 1 < n {
                upper[i] = -r * a[i];
            }
        }
        Tridiagonal::factor(lower, &diag, &upper)
    }

    /// Solves in place.
    pub fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cprime[i] * x[i + 1];
        }
    }
}

/// Centered gradient with mirrored ghost nodes.
#[inline]
pub(crate) fn gradient(v: &[f64], dx: f64, out: &mut [f64]) {
    let n = v.len();
    let h = 0.5 / dx;
    out[0] = (v[1] - v[0]) * h;
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) * h;
    }
    out[n - 1] = (v[n - 1] - v[n - 2]) * h;
}

/// Explicit conservative transport step with the Rusanov flux
/// `F = ½(b_i μ_i + b_{i+1} μ_{i+1}) − ½α(μ_{i+1} − μ_i)` and zero flux at
/// both ends.
pub(crate) fn transport(mu: &[f64], b: &[f64], alpha: f64, ratio: f64, out: &mut [f64]) {
    let n = mu.len();
    out.copy_from_slice(mu);
    for i in 0..n - 1 {
        let f = 0.5 * (b[i] * mu[i] + b[i + 1] * mu[i + 1]) - 0.5 * alpha * (mu[i + 1] - mu[i]);
        let rf = ratio * f;
        out[i] -= rf;
        out[i + 1] += rf;
    }
}

/// Transpose of [`transport`] applied to a dual vector `w`.
pub(crate) fn transport_transpose(w: &[f64], b: &[f64], alpha: f64, ratio: f64, out: &mut [f64]) {
    let n = w.len();
    out.copy_from_slice(w);
    for i in 0..n - 1 {
        let jump = ratio * (w[i + 1] - w[i]);
        out[i] += 0.5 * (b[i] + alpha) * jump;
        out[i + 1] += 0.5 * (b[i + 1] - alpha) * jump;
    }
}

/// `out(x) = ρ(x − s·dx)` by linear interpolation, zero fill.
pub(crate) fn shift(rho: &[f64], s: f64, out: &mut [f64]) {
    let n = rho.len() as i64;
    let k = s.floor();
    let th = s - k;
    let k = k as i64;
    let get = |m: i64| if m >= 0 && m < n { rho[m as usize] } else { 0.0 };
    for (i, o) in out.iter_mut().enumerate() {
        let i = i as i64;
        *o = (1.0 - th) * get(i - k) + th * get(i - k - 1);
    }
}

/// Transpose of [`shift`].
pub(crate) fn shift_transpose(w: &[f64], s: f64, out: &mut [f64]) {
    let n = w.len() as i64;
    let k = s.floor();
    let th = s - k;
    let k = k as i64;
    let get = |m: i64| if m >= 0 && m < n { w[m as usize] } else { 0.0 };
    for (m, o) in out.iter_mut().enumerate() {
        let m = m as i64;
        *o = (1.0 - th) * get(m + k) + th * get(m + k + 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_apply(f: impl Fn(&[f64], &mut [f64]), n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let mut o = vec![0.0; n];
                f(&e, &mut o);
                o
            })
            .collect()
    }

    #[test]
    fn transport_transpose_is_exact() {
        let n = 7;
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let cols = dense_apply(|e, o| transport(e, &b, 1.2, 0.3, o), n);
        let rows = dense_apply(|e, o| transport_transpose(e, &b, 1.2, 0.3, o), n);
        for i in 0..n {
            for k in 0..n {
                assert!((cols[k][i] - rows[i][k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shift_transpose_is_exact() {
        let n = 9;
        for s in [-2.3, -0.5, 0.0, 0.25, 1.75] {
            let cols = dense_apply(|e, o| shift(e, s, o), n);
            let rows = dense_apply(|e, o| shift_transpose(e, s, o), n);
            for i in 0..n {
                for k in 0..n {
                    assert!((cols[k][i] - rows[i][k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn diffusion_pair_is_transposed_and_conservative() {
        let n = 6;
        let a: Vec<f64> = (0..n).map(|i| 0.5 + 0.1 * i as f64).collect();
        let f = Tridiagonal::forward_diffusion(&a, 0.1, 0.2);
        let b = Tridiagonal::backward_diffusion(&a, 0.1, 0.2);
        let inv_f = dense_apply(|e, o| { o.copy_from_slice(e); f.solve(o) }, n);
        let inv_b = dense_apply(|e, o| { o.copy_from_slice(e); b.solve(o) }, n);
        for i in 0..n {
            for k in 0..n {
                assert!((inv_f[k][i] - inv_b[i][k]).abs() < 1e-13);
            }
            assert!((inv_f[i].iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }
}
