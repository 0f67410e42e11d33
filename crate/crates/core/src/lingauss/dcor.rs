//! Distance correlation and a permutation test of independence.

use rand::Rng;

use crate::seeds;

fn centered_distances(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = (v[i] - v[j]).abs();
        }
    }
    let mut row_mean = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        let s: f64 = d[i * n..(i + 1) * n].iter().sum();
        row_mean[i] = s / n as f64;
        grand += s;
    }
    grand /= (n * n) as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
    d
}

fn dcov_sq(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n * n {
        s += a[i] * b[i];
    }
    (s / (n * n) as f64).max(0.0)
}

fn dcov_sq_permuted(a: &[f64], b: &[f64], n: usize, perm: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let pi = perm[i] * n;
        let ai = i * n;
        for j in 0..n {
            s += a[ai + j] * b[pi + perm[j]];
        }
    }
    (s / (n * n) as f64).max(0.0)
}

/// Sample distance correlation of two univariate samples.
pub fn distance_correlation(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len().min(v.len());
    let a = centered_distances(&u[..n]);
    let b = centered_distances(&v[..n]);
    let dvar_a = dcov_sq(&a, &a, n);
    let dvar_b = dcov_sq(&b, &b, n);
    if dvar_a <= 0.0 || dvar_b <= 0.0 {
        return 0.0;
    }
    (dcov_sq(&a, &b, n) / (dvar_a * dvar_b).sqrt()).sqrt()
}

/// Permutation p-value for dependence measured by distance covariance.
/// Returns (observed dcor, p-value).
pub fn permutation_pvalue(u: &[f64], v: &[f64], n_perm: usize, seed: u64) -> (f64, f64) {
    let n = u.len().min(v.len());
    let a = centered_distances(&u[..n]);
    let b = centered_distances(&v[..n]);
    let observed = dcov_sq(&a, &b, n);
    let dvar_a = dcov_sq(&a, &a, n);
    let dvar_b = dcov_sq(&b, &b, n);
    let dcor = if dvar_a > 0.0 && dvar_b > 0.0 {
        (observed / (dvar_a * dvar_b).sqrt()).sqrt()
    } else {
        0.0
    };
    let mut rng = seeds::rng_from(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut exceed = 0usize;
    for _ in 0..n_perm {
        // Fisher-Yates shuffle.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        if dcov_sq_permuted(&a, &b, n, &perm) >= observed {
            exceed += 1;
        }
    }
    let p = (exceed + 1) as f64 / (n_perm + 1) as f64;
    (dcor, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn independent_samples_do_not_reject() {
        let mut rng = seeds::rng_from(21);
        let n = 300;
        let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, p) = permutation_pvalue(&u, &v, 199, 1);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn nonlinear_dependence_is_detected() {
        // Zero correlation but strong dependence: v = u^2.
        let mut rng = seeds::rng_from(22);
        let n = 300;
        let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = u.iter().map(|x| x * x).collect();
        let (dcor, p) = permutation_pvalue(&u, &v, 199, 2);
        assert!(dcor > 0.2, "dcor = {dcor}");
        assert!(p <= 0.01, "p = {p}");
    }
}
