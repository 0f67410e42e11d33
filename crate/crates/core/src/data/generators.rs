//! Synthetic benchmark generators: ANM pairs, CE-Gauss-like and
//! CE-Multi-like families, and a small random-network family.
//!
//! GP sample paths are drawn with random Fourier features, which keeps
//! generation O(N) and bit-reproducible from the seed.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Direction};
use crate::error::Result;
use crate::seeds;

/// Stationary GP sample path approximated by random Fourier features.
#[derive(Debug, Clone)]
pub struct RffGp {
    omegas: Vec<Vec<f64>>,
    phases: Vec<f64>,
    amp: f64,
}

impl RffGp {
    pub fn sample<R: Rng>(
        rng: &mut R,
        lengthscales: &[f64],
        variance: f64,
        n_features: usize,
    ) -> Self {
        let mut omegas = Vec::with_capacity(n_features);
        let mut phases = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            let w: Vec<f64> = lengthscales
                .iter()
                .map(|l| {
                    let e: f64 = StandardNormal.sample(rng);
                    e / l
                })
                .collect();
            omegas.push(w);
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        Self {
            omegas,
            phases,
            amp: (2.0 * variance / n_features as f64).sqrt(),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.omegas
            .iter()
            .zip(&self.phases)
            .map(|(w, b)| {
                let dot: f64 = w.iter().zip(u).map(|(wi, ui)| wi * ui).sum();
                (dot + b).cos()
            })
            .sum::<f64>()
            * self.amp
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CauseDist {
    Gaussian,
    Uniform,
    GaussianMixture,
}

#[derive(Debug, Clone)]
pub enum AnmFunction {
    Identity,
    Tanh,
    Cubic,
    GpSample { lengthscale: f64, variance: f64 },
}

#[derive(Debug, Clone, Copy)]
pub enum NoiseSpec {
    None,
    Gaussian { std: f64 },
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone)]
pub struct AnmConfig {
    pub cause: CauseDist,
    pub function: AnmFunction,
    pub noise: NoiseSpec,
}

impl Default for AnmConfig {
    fn default() -> Self {
        Self {
            cause: CauseDist::Gaussian,
            function: AnmFunction::GpSample {
                lengthscale: 0.8,
                variance: 1.0,
            },
            noise: NoiseSpec::Gaussian { std: 0.2 },
        }
    }
}

/// The generating mechanism, exposed so tests can compute true residuals.
pub struct AnmParts {
    f: FittedFn,
}

enum FittedFn {
    Identity,
    Tanh,
    Cubic,
    Rff(RffGp),
}

impl AnmParts {
    pub fn f(&self, x: f64) -> f64 {
        match &self.f {
            FittedFn::Identity => x,
            FittedFn::Tanh => x.tanh(),
            FittedFn::Cubic => x * x * x,
            FittedFn::Rff(g) => g.eval(&[x]),
        }
    }
}

fn draw_cause<R: Rng>(rng: &mut R, dist: CauseDist, n: usize) -> Vec<f64> {
    match dist {
        CauseDist::Gaussian => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        CauseDist::Uniform => (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        CauseDist::GaussianMixture => {
            let centers = [-1.2, 0.4, 1.5];
            let stds = [0.4, 0.6, 0.3];
            (0..n)
                .map(|_| {
                    let k = rng.random_range(0..3);
                    let e: f64 = StandardNormal.sample(rng);
                    centers[k] + stds[k] * e
                })
                .collect()
        }
    }
}

fn draw_noise<R: Rng>(rng: &mut R, spec: NoiseSpec) -> f64 {
    match spec {
        NoiseSpec::None => 0.0,
        NoiseSpec::Gaussian { std } => {
            let e: f64 = StandardNormal.sample(rng);
            std * e
        }
        NoiseSpec::Uniform { half_width } => rng.random_range(-half_width..half_width),
    }
}

/// y = f(x) + noise with noise independent of x; labeled XtoY.
pub fn gen_anm(cfg: &AnmConfig, n: usize, seed: u64) -> Result<Dataset> {
    gen_anm_parts(cfg, n, seed).map(|(d, _)| d)
}

pub fn gen_anm_parts(cfg: &AnmConfig, n: usize, seed: u64) -> Result<(Dataset, AnmParts)> {
    let mut rng = seeds::rng_from(seed);
    let x = draw_cause(&mut rng, cfg.cause, n);
    let f = match &cfg.function {
        AnmFunction::Identity => FittedFn::Identity,
        AnmFunction::Tanh => FittedFn::Tanh,
        AnmFunction::Cubic => FittedFn::Cubic,
        AnmFunction::GpSample {
            lengthscale,
            variance,
        } => FittedFn::Rff(RffGp::sample(&mut rng, &[*lengthscale], *variance, 200)),
    };
    let parts = AnmParts { f };
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| parts.f(xi) + draw_noise(&mut rng, cfg.noise))
        .collect();
    let d = Dataset::new(format!("anm-{seed}"), x, y)?.with_label(Direction::XtoY);
    Ok((d, parts))
}

/// Random mixture-of-Gaussians noise source.
fn mixture_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let k = 3;
    let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let means: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
    let stds: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..1.2)).collect();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut comp = k - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    comp = j;
                    break;
                }
            }
            let e: f64 = StandardNormal.sample(rng);
            means[comp] + stds[comp] * e
        })
        .collect()
}

fn std_of(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// CE-Gauss-like pair: x = f_x(E1), y = f_y(x, E2) with mixture noise and GP
/// sample-path mechanisms.
pub fn gen_ce_gauss(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng_from(seed);
    let e1 = mixture_noise(&mut rng, n);
    let s1 = std_of(&e1).max(1e-6);
    let ell1 = rng.random_range(0.5..2.0) * s1;
    let fx = RffGp::sample(&mut rng, &[ell1], 1.0, 200);
    let x: Vec<f64> = e1.iter().map(|&e| fx.eval(&[e])).collect();

    let e2 = mixture_noise(&mut rng, n);
    let sx = std_of(&x).max(1e-6);
    let s2 = std_of(&e2).max(1e-6);
    let ellx = rng.random_range(0.5..2.0) * sx;
    let elle = rng.random_range(0.5..2.0) * s2;
    let fy = RffGp::sample(&mut rng, &[ellx, elle], 1.0, 200);
    let y: Vec<f64> = x
        .iter()
        .zip(&e2)
        .map(|(&xi, &ei)| fy.eval(&[xi, ei]))
        .collect();
    Dataset::new(format!("ce-gauss-{seed}"), x, y).map(|d| d.with_label(Direction::XtoY))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeMultiMode {
    PreAdditive,
    PostAdditive,
    PreMultiplicative,
    PostMultiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeMultiFunc {
    Linear,
    Polynomial,
}

/// CE-Multi-like pair with the stated noise composition. Polynomial degree
/// is at most 3 with random coefficients.
pub fn gen_ce_multi(
    mode: CeMultiMode,
    func: CeMultiFunc,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = seeds::rng_from(seed);
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let coeffs: Vec<f64> = match func {
        CeMultiFunc::Linear => {
            let slope_mag = rng.random_range(0.5..2.0);
            let slope = if rng.random_range(0.0..1.0) < 0.5 {
                slope_mag
            } else {
                -slope_mag
            };
            vec![rng.random_range(-1.0..1.0), slope]
        }
        CeMultiFunc::Polynomial => vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        ],
    };
    let f = |v: f64| -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(p, c)| c * v.powi(p as i32))
            .sum()
    };
    let noise_scale = rng.random_range(0.2..0.5);
    let noise = Normal::new(0.0, noise_scale).unwrap();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let e: f64 = noise.sample(&mut rng);
            match mode {
                CeMultiMode::PreAdditive => f(xi + e),
                CeMultiMode::PostAdditive => f(xi) + e,
                CeMultiMode::PreMultiplicative => f(xi * (1.0 + e)),
                CeMultiMode::PostMultiplicative => f(xi) * (1.0 + e),
            }
        })
        .collect();
    Dataset::new(format!("ce-multi-{seed}"), x, y).map(|d| d.with_label(Direction::XtoY))
}

/// CE-Net-like pair: a one-hidden-layer random feature map (width 20, tanh)
/// driven by the cause and a noise input. A desk-scale stand-in for randomly
/// initialized network mechanisms.
pub fn gen_ce_net(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng_from(seed);
    let x: Vec<f64> = match rng.random_range(0..3) {
        0 => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        1 => (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        _ => {
            let exp = Exp::new(1.0).unwrap();
            (0..n).map(|_| exp.sample(&mut rng) - 1.0).collect()
        }
    };
    const WIDTH: usize = 20;
    let a: Vec<f64> = (0..WIDTH).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..WIDTH).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..WIDTH).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..WIDTH)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e / (WIDTH as f64).sqrt()
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (0..WIDTH)
                .map(|j| v[j] * (a[j] * xi + c[j] * e + b[j]).tanh())
                .sum()
        })
        .collect();
    Dataset::new(format!("ce-net-{seed}"), x, y).map(|d| d.with_label(Direction::XtoY))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_anm_without_noise_is_exact() {
        let cfg = AnmConfig {
            cause: CauseDist::Gaussian,
            function: AnmFunction::Identity,
            noise: NoiseSpec::None,
        };
        let d = gen_anm(&cfg, 50, 1).unwrap();
        assert_eq!(d.x, d.y);
    }

    #[test]
    fn residuals_are_uncorrelated_with_cause() {
        let cfg = AnmConfig {
            cause: CauseDist::Gaussian,
            function: AnmFunction::GpSample {
                lengthscale: 0.8,
                variance: 1.0,
            },
            noise: NoiseSpec::Gaussian { std: 0.3 },
        };
        let (d, parts) = gen_anm_parts(&cfg, 10_000, 2).unwrap();
        let resid: Vec<f64> = d
            .x
            .iter()
            .zip(&d.y)
            .map(|(&x, &y)| y - parts.f(x))
            .collect();
        let mx = d.x.iter().sum::<f64>() / d.len() as f64;
        let mr = resid.iter().sum::<f64>() / d.len() as f64;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vr = 0.0;
        for (x, r) in d.x.iter().zip(&resid) {
            cov += (x - mx) * (r - mr);
            vx += (x - mx) * (x - mx);
            vr += (r - mr) * (r - mr);
        }
        let corr = cov / (vx.sqrt() * vr.sqrt());
        assert!(corr.abs() < 0.05, "corr = {corr}");
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let cfg = AnmConfig::default();
        assert_eq!(gen_anm(&cfg, 20, 7).unwrap(), gen_anm(&cfg, 20, 7).unwrap());
        assert_eq!(gen_ce_gauss(20, 7).unwrap(), gen_ce_gauss(20, 7).unwrap());
        assert_eq!(
            gen_ce_multi(CeMultiMode::PreAdditive, CeMultiFunc::Polynomial, 20, 7).unwrap(),
            gen_ce_multi(CeMultiMode::PreAdditive, CeMultiFunc::Polynomial, 20, 7).unwrap()
        );
        assert_eq!(gen_ce_net(20, 7).unwrap(), gen_ce_net(20, 7).unwrap());
    }

    #[test]
    fn ce_multi_degenerate_compositions() {
        // Post-additive linear with (almost) zero noise is an exact line:
        // check by regressing y on [1, x] and looking at residuals.
        let d = gen_ce_multi(CeMultiMode::PostAdditive, CeMultiFunc::Linear, 100, 3).unwrap();
        let n = d.len() as f64;
        let mx = d.x.iter().sum::<f64>() / n;
        let my = d.y.iter().sum::<f64>() / n;
        let sxx: f64 = d.x.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = d.x.iter().zip(&d.y).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let resid_var: f64 = d
            .x
            .iter()
            .zip(&d.y)
            .map(|(x, y)| {
                let pred = my + slope * (x - mx);
                (y - pred) * (y - pred)
            })
            .sum::<f64>()
            / n;
        // Residual variance equals the additive noise variance, well below
        // the signal variance.
        let vy: f64 = d.y.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n;
        assert!(resid_var < 0.5 * vy, "resid {resid_var} vs var {vy}");
    }

    #[test]
    fn ce_gauss_outputs_are_non_gaussian() {
        // Excess kurtosis deviates from zero on at least half the seeds.
        let mut hits = 0;
        let total = 50;
        for seed in 0..total {
            let d = gen_ce_gauss(2000, 1000 + seed).unwrap();
            let n = d.len() as f64;
            let m = d.y.iter().sum::<f64>() / n;
            let v = d.y.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
            let k = d.y.iter().map(|y| (y - m).powi(4)).sum::<f64>() / n / (v * v) - 3.0;
            if k.abs() > 0.1 {
                hits += 1;
            }
        }
        assert!(hits * 2 >= total, "only {hits}/{total} non-Gaussian");
    }
}
