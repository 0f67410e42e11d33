//! Hartigan dip statistic: the minimax uniform distance from the empirical
//! cdf to the closest unimodal cdf.
//!
//! Computed by bisection on the distance, with an exact feasibility check:
//! a unimodal cdf within distance eps exists iff for some mode position the
//! per-point value boxes admit a convex prefix (checked against the greatest
//! convex minorant of the upper bounds) and a concave suffix (least concave
//! majorant of the lower bounds).

/// Merged support point: value, counts below, counts up to and including.
struct StepPoint {
    x: f64,
    below: usize,
    upto: usize,
}

fn merge_ties(sorted: &[f64]) -> Vec<StepPoint> {
    let mut pts = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        pts.push(StepPoint {
            x: sorted[i],
            below: i,
            upto: j + 1,
        });
        i = j + 1;
    }
    pts
}

/// Is there a convex sequence through the boxes [lo, hi] at abscissae xs
/// (including a far-left anchor at height `anchor`)?
/// Feasible iff the greatest convex minorant of the upper bounds dominates
/// the lower bounds.
fn convex_feasible(xs: &[f64], lo: &[f64], hi: &[f64], anchor_x: f64, anchor_v: f64) -> bool {
    // Build the lower convex hull of (anchor, hi[0..k]) and check lo.
    // hull holds indices into a virtual array where index 0 is the anchor.
    let n = xs.len();
    let px = |i: usize| if i == 0 { anchor_x } else { xs[i - 1] };
    let pv = |i: usize| if i == 0 { anchor_v } else { hi[i - 1] };
    let mut hull: Vec<usize> = vec![0];
    for i in 1..=n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Remove b if it lies above segment (a, i).
            let cross = (pv(b) - pv(a)) * (px(i) - px(a)) - (pv(i) - pv(a)) * (px(b) - px(a));
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    // Evaluate the hull at every point and compare with lo.
    let mut seg = 0;
    for i in 1..=n {
        while seg + 1 < hull.len() && px(hull[seg + 1]) < px(i) {
            seg += 1;
        }
        let (a, b) = (hull[seg], hull[(seg + 1).min(hull.len() - 1)]);
        let value = if a == b || px(b) == px(a) {
            pv(a)
        } else {
            pv(a) + (pv(b) - pv(a)) * (px(i) - px(a)) / (px(b) - px(a))
        };
        if value < lo[i - 1] - 1e-12 {
            return false;
        }
    }
    true
}

/// Mirror image: concave sequence through boxes with a far-right anchor.
fn concave_feasible(xs: &[f64], lo: &[f64], hi: &[f64], anchor_x: f64, anchor_v: f64) -> bool {
    // Negate and reverse to reuse the convex check.
    let n = xs.len();
    let rxs: Vec<f64> = xs.iter().rev().map(|x| -x).collect();
    let rlo: Vec<f64> = hi.iter().rev().map(|v| -v).collect();
    let rhi: Vec<f64> = lo.iter().rev().map(|v| -v).collect();
    let _ = n;
    convex_feasible(&rxs, &rlo, &rhi, -anchor_x, -anchor_v)
}

fn feasible(pts: &[StepPoint], n: usize, eps: f64) -> bool {
    let m = pts.len();
    let nf = n as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    let lo: Vec<f64> = pts
        .iter()
        .map(|p| (p.upto as f64 / nf - eps).max(0.0))
        .collect();
    let hi: Vec<f64> = pts
        .iter()
        .map(|p| (p.below as f64 / nf + eps).min(1.0))
        .collect();
    if lo.iter().zip(&hi).any(|(l, h)| *l > *h + 1e-15) {
        return false;
    }
    let span = xs[m - 1] - xs[0] + 1.0;
    let far = 1e9 * span;
    // Mode between point c and c+1 (or at the extremes): convex through the
    // prefix [0..=c], concave through the suffix [c..m-1]; both share the
    // c-th box.
    for c in 0..m {
        let conv_ok = convex_feasible(&xs[..=c], &lo[..=c], &hi[..=c], xs[0] - far, 0.0);
        if !conv_ok {
            // Larger prefixes only add constraints, so no junction at or
            // beyond c can succeed either.
            return false;
        }
        let conc_ok = concave_feasible(&xs[c..], &lo[c..], &hi[c..], xs[m - 1] + far, 1.0);
        if conc_ok {
            return true;
        }
    }
    false
}

/// Dip statistic of a sample. Ties are allowed; order does not matter.
pub fn dip_statistic(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pts = merge_ties(&sorted);
    if pts.len() == 1 {
        // Single atom: already a unimodal cdf.
        return 0.5 / n as f64;
    }
    let mut lo = 0.5 / n as f64 - 1e-12;
    let mut hi = 0.5;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(&pts, n, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Monte-Carlo p-value against a uniform null, calibrated through the same
/// statistic.
pub fn dip_pvalue(values: &[f64], n_boot: usize, seed: u64) -> (f64, f64) {
    use rand::Rng;
    let observed = dip_statistic(values);
    let n = values.len();
    let mut rng = crate::seeds::rng_from(seed);
    let mut exceed = 0usize;
    for _ in 0..n_boot {
        let sample: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        if dip_statistic(&sample) >= observed {
            exceed += 1;
        }
    }
    let p = (exceed + 1) as f64 / (n_boot + 1) as f64;
    (observed, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_points_have_dip_one_quarter() {
        assert_relative_eq!(dip_statistic(&[0.0, 1.0]), 0.25, epsilon = 1e-9);
        assert_relative_eq!(dip_statistic(&[-5.0, 3.0]), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn equally_spaced_points_attain_the_lower_bound() {
        for n in [4usize, 8, 16] {
            let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let d = dip_statistic(&xs);
            assert_relative_eq!(d, 0.5 / n as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn dip_is_within_theoretical_bounds_and_affine_invariant() {
        let mut rng = crate::seeds::rng_from(44);
        for _ in 0..20 {
            let n = rng.random_range(5..60);
            let xs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let d = dip_statistic(&xs);
            assert!(d >= 0.5 / n as f64 - 1e-9);
            assert!(d <= 0.25 + 1e-9);
            let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
            assert_relative_eq!(d, dip_statistic(&ys), epsilon = 1e-9);
        }
    }

    #[test]
    fn separated_clusters_approach_one_quarter() {
        let mut rng = crate::seeds::rng_from(45);
        let mut xs = Vec::new();
        for _ in 0..50 {
            let e: f64 = StandardNormal.sample(&mut rng);
            xs.push(-5.0 + 0.01 * e);
        }
        for _ in 0..50 {
            let e: f64 = StandardNormal.sample(&mut rng);
            xs.push(5.0 + 0.01 * e);
        }
        let d = dip_statistic(&xs);
        assert!(d > 0.2, "dip = {d}");
    }

    #[test]
    fn unimodal_samples_have_small_dip_and_large_pvalue() {
        let mut rng = crate::seeds::rng_from(46);
        let xs: Vec<f64> = (0..150).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (d, p) = dip_pvalue(&xs, 99, 1);
        assert!(d < 0.05, "dip = {d}");
        assert!(p > 0.05, "p = {p}");
    }

    #[test]
    fn bimodal_samples_reject() {
        let mut rng = crate::seeds::rng_from(47);
        let mut xs = Vec::new();
        for _ in 0..75 {
            let e: f64 = StandardNormal.sample(&mut rng);
            xs.push(-2.0 + 0.3 * e);
        }
        for _ in 0..75 {
            let e: f64 = StandardNormal.sample(&mut rng);
            xs.push(2.0 + 0.3 * e);
        }
        let (_, p) = dip_pvalue(&xs, 99, 2);
        assert!(p <= 0.05, "p = {p}");
    }
}
