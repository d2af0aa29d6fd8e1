//! Scalar functions over `libm` and small dense matrix helpers.
//!
//! Matrices are row-major `d×d` slices; entry `(i, j)` is `m[i * d + j]`.
//! Jacobians follow the (row = output, column = input) convention.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

#[inline]
pub fn tgamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    exp(-0.5 * z * z) / sqrt(2.0 * PI)
}

/// Standard normal CDF via `erfc`, accurate in both tails.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Density of `N(0, var)` at `z`.
#[inline]
pub fn gaussian_density(z: f64, var: f64) -> f64 {
    exp(-0.5 * z * z / var) / sqrt(2.0 * PI * var)
}

/// `P(lo ≤ N(mean, var) ≤ hi)`.
pub fn gaussian_interval_prob(mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let s = sqrt(var);
    let a = (lo - mean) / s;
    let b = (hi - mean) / s;
    // Evaluate in the tail where the subtraction keeps precision.
    if a > 0.0 {
        0.5 * (erfc(a / SQRT_2) - erfc(b / SQRT_2))
    } else if b < 0.0 {
        0.5 * (erfc(-b / SQRT_2) - erfc(-a / SQRT_2))
    } else {
        1.0 - 0.5 * erfc(-a / SQRT_2) - 0.5 * erfc(b / SQRT_2)
    }
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// `out = a · b` for `d×d` row-major matrices.
pub fn matmul(d: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

pub fn frobenius(m: &[f64]) -> f64 {
    sqrt(m.iter().map(|v| v * v).sum())
}

/// Determinant by Gaussian elimination with partial pivoting.
///
/// `d ≤ 2` is evaluated by the explicit formula so unit-triangular
/// matrices give exactly 1.
pub fn det(d: usize, m: &[f64]) -> f64 {
    match d {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            let mut a = m.to_vec();
            let mut det = 1.0;
            for c in 0..d {
                let p = (c..d)
                    .max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs()))
                    .unwrap_or(c);
                if a[p * d + c] == 0.0 {
                    return 0.0;
                }
                if p != c {
                    for k in 0..d {
                        a.swap(p * d + k, c * d + k);
                    }
                    det = -det;
                }
                let piv = a[c * d + c];
                det *= piv;
                for r in (c + 1)..d {
                    let f = a[r * d + c] / piv;
                    for k in c..d {
                        a[r * d + k] -= f * a[c * d + k];
                    }
                }
            }
            det
        }
    }
}

/// Solves `m · x = rhs` in place (Gauss–Jordan, partial pivoting).
/// Returns `false` for a numerically singular matrix.
pub fn solve(d: usize, m: &[f64], rhs: &mut [f64]) -> bool {
    let mut a = m.to_vec();
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs()))
            .unwrap_or(c);
        if a[p * d + c].abs() < 1e-300 {
            return false;
        }
        if p != c {
            for k in 0..d {
                a.swap(p * d + k, c * d + k);
            }
            rhs.swap(p, c);
        }
        let piv = a[c * d + c];
        for r in 0..d {
            if r == c {
                continue;
            }
            let f = a[r * d + c] / piv;
            if f != 0.0 {
                for k in c..d {
                    a[r * d + k] -= f * a[c * d + k];
                }
                rhs[r] -= f * rhs[c];
            }
        }
    }
    for c in 0..d {
        rhs[c] /= a[c * d + c];
    }
    true
}

/// Inverse of a `d×d` matrix, `None` when singular.
pub fn inverse(d: usize, m: &[f64]) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        if !solve(d, m, &mut col) {
            return None;
        }
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    Some(inv)
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_triangular_det_is_exact() {
        assert_eq!(det(2, &[1.0, 0.0, 12345.678, 1.0]), 1.0);
    }

    #[test]
    fn det_and_inverse_agree() {
        let m = [2.0, 1.0, 0.5, -1.0, 3.0, 0.25, 0.0, 1.5, 4.0];
        let inv = inverse(3, &m).unwrap();
        let mut prod = [0.0; 9];
        matmul(3, &m, &inv, &mut prod);
        for (p, e) in prod.iter().zip(identity(3)) {
            assert!((p - e).abs() < 1e-14);
        }
        let expect = 2.0 * (12.0 - 0.375) - 1.0 * (-4.0) + 0.5 * (-1.5);
        assert!((det(3, &m) - expect).abs() < 1e-12);
    }

    #[test]
    fn interval_prob_tails() {
        let p = gaussian_interval_prob(0.0, 1.0, -1.0, 1.0);
        assert!((p - 0.682_689_492_137_086).abs() < 1e-14);
        let tail = gaussian_interval_prob(0.0, 1.0, 8.0, 9.0);
        assert!(tail > 0.0 && tail < 1e-14);
    }
}
