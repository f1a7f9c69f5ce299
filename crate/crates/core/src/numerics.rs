//! Small dense helpers shared by the solvers: tridiagonal solves, cubic
//! splines, RK4 stepping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]` in place
/// (Thomas algorithm, no pivoting). `lower[0]` and `upper[n-1]` are ignored.
///
/// For M-matrices with nonnegative right-hand sides every intermediate is a
/// sum of nonnegative terms, so the result is exactly nonnegative.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = upper[0] / beta;
    rhs[0] /= beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / beta;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Implicit Neumann heat step `(I - nu dt Laplacian_h) y = rhs` on a uniform grid.
///
/// The matrix has zero column sums, so the solve conserves `sum(y)`.
pub fn implicit_neumann_diffusion(rhs: &mut [f64], nu: f64, dt: f64, dx: f64) {
    let n = rhs.len();
    if nu == 0.0 || n < 2 {
        return;
    }
    let r = nu * dt / (dx * dx);
    let lower: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -r }).collect();
    let upper: Vec<f64> = (0..n).map(|i| if i == n - 1 { 0.0 } else { -r }).collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                1.0 + r
            } else {
                1.0 + 2.0 * r
            }
        })
        .collect();
    solve_tridiagonal(&lower, &diag, &upper, rhs);
}

/// Boundary behaviour of a cubic spline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineEnd {
    /// Zero second derivative.
    Natural,
    /// Prescribed first derivative.
    Clamped(f64),
}

/// C2 cubic interpolant through `(knots[i], values[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(
        knots: Vec<f64>,
        values: Vec<f64>,
        left: SplineEnd,
        right: SplineEnd,
    ) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::InvalidArgument(
                "spline needs at least two knots and one value per knot".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0]))
            || knots.iter().chain(&values).any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "spline knots must be finite and strictly increasing".into(),
            ));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = (0..n - 1)
            .map(|i| (values[i + 1] - values[i]) / h[i])
            .collect();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        match left {
            SplineEnd::Natural => diag[0] = 1.0,
            SplineEnd::Clamped(s) => {
                diag[0] = 2.0 * h[0];
                upper[0] = h[0];
                rhs[0] = 6.0 * (slope[0] - s);
            }
        }
        for i in 1..n - 1 {
            lower[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            upper[i] = h[i];
            rhs[i] = 6.0 * (slope[i] - slope[i - 1]);
        }
        match right {
            SplineEnd::Natural => diag[n - 1] = 1.0,
            SplineEnd::Clamped(s) => {
                lower[n - 1] = h[n - 2];
                diag[n - 1] = 2.0 * h[n - 2];
                rhs[n - 1] = 6.0 * (s - slope[n - 2]);
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        Ok(Self {
            knots,
            values,
            second: rhs,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, x: f64) -> usize {
        let k = self.knots.partition_point(|t| *t <= x);
        k.clamp(1, self.knots.len() - 1) - 1
    }

    /// Value, first and second derivative at `x` (cubic extrapolation outside the knots).
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let i = self.segment(x);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let h = x1 - x0;
        let a = x1 - x;
        let b = x - x0;
        let c0 = y0 / h - m0 * h / 6.0;
        let c1 = y1 / h - m1 * h / 6.0;
        let value = m0 * a * a * a / (6.0 * h) + m1 * b * b * b / (6.0 * h) + c0 * a + c1 * b;
        let d1 = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - c0 + c1;
        let d2 = (m0 * a + m1 * b) / h;
        (value, d1, d2)
    }
}

/// One classical fourth-order Runge-Kutta step for `y' = f(y)`.
pub fn rk4_step<F>(y: &[f64], dt: f64, f: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(y)?;
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = f(&y2)?;
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = f(&y3)?;
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = f(&y4)?;
    Ok((0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Restarted GMRES for `A x = b` with `A` given as a matrix-free product.
///
/// Stops once `|b - A x|_2 <= tol`; returns the iterate and its residual norm.
pub fn gmres<A>(
    mut apply: A,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut residual = b.to_vec();
    let mut beta = norm(&residual);
    let mut used = 0;
    let m = restart.max(1);
    while beta > tol && used < max_iter {
        let mut basis: Vec<Vec<f64>> = vec![residual.iter().map(|c| c / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && used < max_iter {
            let mut w = apply(&basis[k])?;
            used += 1;
            for (i, q) in basis.iter().enumerate() {
                hess[i][k] = dot(&w, q);
                for (wc, qc) in w.iter_mut().zip(q) {
                    *wc -= hess[i][k] * qc;
                }
            }
            hess[k + 1][k] = norm(&w);
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let r = hess[k][k].hypot(hess[k + 1][k]);
            if r == 0.0 {
                break;
            }
            cs[k] = hess[k][k] / r;
            sn[k] = hess[k + 1][k] / r;
            hess[k][k] = r;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let h_next = {
                let mut t = 0.0;
                for c in &w {
                    t += c * c;
                }
                t.sqrt()
            };
            k += 1;
            if g[k].abs() <= tol || h_next == 0.0 {
                break;
            }
            basis.push(w.iter().map(|c| c / h_next).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xc, qc) in x.iter_mut().zip(&basis[j]) {
                *xc += yj * qc;
            }
        }
        let ax = apply(&x)?;
        used += 1;
        residual = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let new_beta = norm(&residual);
        if k == 0 || new_beta >= beta {
            beta = new_beta;
            break;
        }
        beta = new_beta;
    }
    Ok((x, beta))
}

/// Number of uniform steps of size at most `dt` that exactly cover `horizon`.
pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time step must be > 0, got {dt}"
        )));
    }
    Ok(((horizon / dt) - 1e-9).ceil().max(1.0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut b = [
            4.0 * x[0] - x[1],
            -x[0] + 4.0 * x[1] - x[2],
            -x[1] + 4.0 * x[2] - x[3],
            -x[2] + 4.0 * x[3],
        ];
        solve_tridiagonal(&lower, &diag, &upper, &mut b);
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn diffusion_conserves_sum_and_sign() {
        let mut y: Vec<f64> = (0..50).map(|i| if i == 3 { 10.0 } else { 0.0 }).collect();
        implicit_neumann_diffusion(&mut y, 0.7, 0.1, 0.05);
        assert!((y.iter().sum::<f64>() - 10.0).abs() < 1e-12);
        assert!(y.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn spline_reproduces_cubic() {
        let f = |x: f64| x * x * x - 2.0 * x + 1.0;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let knots: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = knots.iter().map(|x| f(*x)).collect();
        let s = CubicSpline::new(
            knots,
            values,
            SplineEnd::Clamped(df(0.0)),
            SplineEnd::Clamped(df(3.0)),
        )
        .unwrap();
        for x in [0.1, 0.77, 1.5, 2.9] {
            let (v, d, dd) = s.eval3(x);
            assert!((v - f(x)).abs() < 1e-12);
            assert!((d - df(x)).abs() < 1e-11);
            assert!((dd - 6.0 * x).abs() < 1e-10);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let a = |i: usize, j: usize| -> f64 {
            if i == j {
                3.0
            } else if j == i + 1 {
                -1.0
            } else if i == j + 2 {
                0.5
            } else {
                0.0
            }
        };
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mul = |v: &[f64]| -> Result<Vec<f64>> {
            Ok((0..n)
                .map(|i| (0..n).map(|j| a(i, j) * v[j]).sum())
                .collect())
        };
        let b = mul(&x_true).unwrap();
        let (x, res) = gmres(mul, &b, 1e-12, 8, 500).unwrap();
        assert!(res <= 1e-12);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rk4_exponential() {
        let mut f = |y: &[f64]| -> Result<Vec<f64>> { Ok(vec![-y[0]]) };
        let mut y = vec![1.0];
        for _ in 0..100 {
            y = rk4_step(&y, 0.01, &mut f).unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }
}
