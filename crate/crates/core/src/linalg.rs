//! Small linear-algebra helpers: jittered Cholesky and friends.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Base jitter added to the diagonal of every Gram matrix before factorization.
pub const BASE_JITTER: f64 = 1e-6;
/// Jitter ceiling; doubling stops once the next value would exceed this.
pub const MAX_JITTER: f64 = 1e-2;

/// Cholesky with escalating diagonal jitter.
///
/// Starts at [`BASE_JITTER`], doubles on failure, and errors once the jitter
/// would exceed [`MAX_JITTER`].
pub fn robust_cholesky(mat: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = mat.nrows();
    let mut jitter = BASE_JITTER;
    loop {
        let mut m = mat.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        jitter *= 2.0;
        if jitter > MAX_JITTER {
            return Err(Error::CholeskyFailure {
                max_jitter: MAX_JITTER,
            });
        }
    }
}

/// Sum of log-diagonal entries of a Cholesky factor, i.e. 0.5 * log det.
pub fn half_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// Solve L x = b for lower-triangular L.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve L^T x = b for lower-triangular L.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve L X = B column-by-column for lower-triangular L.
pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solve L^T X = B column-by-column for lower-triangular L.
pub fn solve_lower_transpose_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for j in (i + 1)..n {
                s -= l[(j, i)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Log of the Gamma function via the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = COEF[0];
        let t = x + 7.5;
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_recovers_after_jitter() {
        // Rank-deficient matrix: needs jitter to factor.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (chol, jitter) = robust_cholesky(&m).unwrap();
        assert!(jitter >= BASE_JITTER);
        let l = chol.l();
        let rec = &l * l.transpose();
        assert_relative_eq!(rec[(0, 0)], 1.0 + jitter, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_fails_on_negative_definite() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(robust_cholesky(&m).is_err());
    }

    #[test]
    fn triangular_solves_roundtrip() {
        let l = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.5, -1.0, 1.5]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = solve_lower(&l, &b);
        assert_relative_eq!((&l * &x - &b).norm(), 0.0, epsilon = 1e-12);
        let y = solve_lower_transpose(&l, &b);
        assert_relative_eq!((l.transpose() * &y - &b).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(5.0), 24.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(ln_gamma(10.5), 13.940_625_219_403_763, epsilon = 1e-9);
    }
}
