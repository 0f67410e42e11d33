//! Closed-form Gaussian KL divergences used by the bounds.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{solve_lower_mat, solve_lower_transpose_mat};

/// KL[ prod_n N(mu_n, v_n) || N(0, I) ] for diagonal q.
pub fn kl_diag_gaussians_to_std(means: &DVector<f64>, vars: &DVector<f64>) -> f64 {
    means
        .iter()
        .zip(vars.iter())
        .map(|(&m, &v)| 0.5 * (v + m * m - 1.0 - v.ln()))
        .sum()
}

/// KL[ N(m, L L^T) || N(0, K) ], given the Cholesky factor `lk` of K.
///
/// Returns the divergence plus the pieces needed for gradients:
/// (kl, K^{-1} m, K^{-1} S) where S = L L^T.
pub fn kl_full_gaussian_to_prior(
    m: &DVector<f64>,
    l: &DMatrix<f64>,
    lk: &DMatrix<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let dim = m.len() as f64;
    let s = l * l.transpose();
    // K^{-1} S and K^{-1} m via triangular solves.
    let ki_s = solve_lower_transpose_mat(lk, &solve_lower_mat(lk, &s));
    let ki_m_mat = solve_lower_transpose_mat(
        lk,
        &solve_lower_mat(lk, &DMatrix::from_column_slice(m.len(), 1, m.as_slice())),
    );
    let ki_m = DVector::from_column_slice(ki_m_mat.column(0).as_slice());
    let trace = ki_s.diagonal().sum();
    let maha = m.dot(&ki_m);
    let log_det_k = 2.0 * lk.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_s = 2.0 * l.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    let kl = 0.5 * (trace + maha - dim + log_det_k - log_det_s);
    (kl, ki_m, ki_s)
}
