//! Gaussian quadrature rules via the Golub-Welsch eigenvalue method.

use nalgebra::DMatrix;

fn golub_welsch(offdiag: &[f64], weight_total: f64) -> (Vec<f64>, Vec<f64>) {
    let n = offdiag.len() + 1;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (i, &b) in offdiag.iter().enumerate() {
        jac[(i, i + 1)] = b;
        jac[(i + 1, i)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let v0 = eig.eigenvectors[(0, k)];
            (node, weight_total * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Gauss-Hermite rule: integrates f(x) e^{-x^2} dx over the real line.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let offdiag: Vec<f64> = (1..n).map(|i| (i as f64 / 2.0).sqrt()).collect();
    golub_welsch(&offdiag, std::f64::consts::PI.sqrt())
}

/// Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let offdiag: Vec<f64> = (1..n)
        .map(|i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&offdiag, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_integrates_polynomials() {
        let (x, w) = gauss_hermite(16);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        // int e^{-x^2} dx = sqrt(pi)
        let m0: f64 = w.iter().sum();
        assert_relative_eq!(m0, sqrt_pi, max_relative = 1e-12);
        // int x^2 e^{-x^2} dx = sqrt(pi)/2
        let m2: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        assert_relative_eq!(m2, sqrt_pi / 2.0, max_relative = 1e-12);
        // E[x^4] under N(0, 1/2) scaling: int x^4 e^{-x^2} = 3 sqrt(pi)/4
        let m4: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(4)).sum();
        assert_relative_eq!(m4, 0.75 * sqrt_pi, max_relative = 1e-12);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(12);
        let m0: f64 = w.iter().sum();
        assert_relative_eq!(m0, 2.0, max_relative = 1e-12);
        let m2: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        assert_relative_eq!(m2, 2.0 / 3.0, max_relative = 1e-12);
        let m6: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(6)).sum();
        assert_relative_eq!(m6, 2.0 / 7.0, max_relative = 1e-12);
    }
}
