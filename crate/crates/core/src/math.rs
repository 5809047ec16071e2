//! Numerical building blocks shared by the solvers: elementary functions
//! (routed through `libm` so `std` and `no_std` builds agree bitwise),
//! quadrature, interpolation, a tridiagonal solver, small least squares and
//! Monte Carlo summary statistics.

use alloc::vec;
use alloc::vec::Vec;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    if b == a {
        return 0.0;
    }
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Running integral `F(x_i) = int_a^{x_i} f` at the `n + 1` uniform nodes of
/// `[a, b]`, each sub-interval integrated by Simpson's rule on its midpoint.
pub fn cumulative_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if n == 0 {
        return out;
    }
    let h = (b - a) / n as f64;
    let mut left = f(a);
    for i in 0..n {
        let x0 = a + i as f64 * h;
        let x1 = if i + 1 == n { b } else { x0 + h };
        let mid = f(0.5 * (x0 + x1));
        let right = f(x1);
        out[i + 1] = out[i] + (x1 - x0) / 6.0 * (left + 4.0 * mid + right);
        left = right;
    }
    out
}

/// Index of the cell `[xs[i], xs[i+1]]` containing `x` and the local weight,
/// with flat extrapolation outside the table.
#[inline]
pub fn locate(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    debug_assert!(n >= 1);
    if n == 1 || x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 2, 1.0);
    }
    // partition_point gives the first node strictly greater than x
    let hi = xs.partition_point(|&v| v <= x).min(n - 1);
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    (lo, w)
}

/// Same as [`locate`] for a uniform grid starting at `x0` with spacing `dx`.
#[inline]
pub fn locate_uniform(x0: f64, dx: f64, n: usize, x: f64) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let s = (x - x0) / dx;
    if s <= 0.0 {
        return (0, 0.0);
    }
    let last = (n - 1) as f64;
    if s >= last {
        return (n - 2, 1.0);
    }
    let lo = (s as usize).min(n - 2);
    (lo, s - lo as f64)
}

pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.len() == 1 {
        return ys[0];
    }
    let (i, w) = locate(xs, x);
    ys[i] + w * (ys[i + 1] - ys[i])
}

/// Bilinear interpolation on a row-major table `values[i * zs.len() + j]`.
pub fn interp_bilinear(ts: &[f64], zs: &[f64], values: &[f64], t: f64, z: f64) -> f64 {
    let nz = zs.len();
    let (i, wt) = if ts.len() == 1 {
        (0, 0.0)
    } else {
        locate(ts, t)
    };
    let (j, wz) = if nz == 1 { (0, 0.0) } else { locate(zs, z) };
    let i1 = if ts.len() == 1 { i } else { i + 1 };
    let j1 = if nz == 1 { j } else { j + 1 };
    let v00 = values[i * nz + j];
    let v01 = values[i * nz + j1];
    let v10 = values[i1 * nz + j];
    let v11 = values[i1 * nz + j1];
    let a = v00 + wz * (v01 - v00);
    let b = v10 + wz * (v11 - v10);
    a + wt * (b - a)
}

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored. Solves in place into `rhs`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    if n == 0 {
        return true;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return false;
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return false;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    true
}

/// Solves the symmetric positive definite system `a x = b` (row-major `p x p`)
/// by Cholesky. Returns `None` when a pivot falls below `rel_tol` times the
/// largest diagonal entry, which is how rank deficiency shows up here.
pub fn cholesky_solve(a: &[f64], b: &[f64], p: usize, rel_tol: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= rel_tol * scale {
                    return None;
                }
                l[i * p + i] = sqrt(s);
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}

/// Sum in index order with Neumaier compensation. Used for every Monte Carlo
/// reduction so that the result does not depend on thread scheduling.
pub fn stable_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = stable_sum(xs.iter().copied()) / n as f64;
        if n == 1 {
            return McEstimate {
                mean,
                std_error: 0.0,
                n,
            };
        }
        let var = stable_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64;
        McEstimate {
            mean,
            std_error: sqrt(var / n as f64),
            n,
        }
    }

    /// `(mean - target) / std_error`, zero when both the gap and the error vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = self.mean - target;
        if self.std_error == 0.0 {
            if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(gap)
            }
        } else {
            gap / self.std_error
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 4);
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-14);
    }

    #[test]
    fn cumulative_simpson_matches_exponential() {
        let c = cumulative_simpson(|x| exp(-x), 0.0, 3.0, 60);
        for (i, v) in c.iter().enumerate() {
            let x = 3.0 * i as f64 / 60.0;
            // composite Simpson error <= x h^4 max|f''''| / 2880 ~ 6.5e-9 at h = 0.05
            assert!((v - (1.0 - exp(-x))).abs() < 7e-9);
        }
    }

    #[test]
    fn tridiagonal_solves_small_system() {
        let lower = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 0.0, 1.0];
        assert!(solve_tridiagonal(&lower, &diag, &upper, &mut rhs));
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cholesky_flags_rank_deficiency() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(cholesky_solve(&a, &[1.0, 1.0], 2, 1e-12).is_none());
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 1.0], 2, 1e-12).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn locate_handles_edges() {
        let xs = [0.0, 1.0, 2.0];
        assert_eq!(locate(&xs, -1.0), (0, 0.0));
        assert_eq!(locate(&xs, 5.0), (1, 1.0));
        let (i, w) = locate(&xs, 1.25);
        assert_eq!(i, 1);
        assert!((w - 0.25).abs() < 1e-15);
        assert_eq!(locate_uniform(0.0, 1.0, 3, 1.25).0, 1);
    }

    #[test]
    fn estimate_of_constant_samples_has_zero_error() {
        let e = McEstimate::from_samples(&[1.0; 2000]);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.z_score(1.0), 0.0);
    }
}
