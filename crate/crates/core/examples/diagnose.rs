// scratch: inspect the degenerate basin found by the optimizer
use bicausal::data::{gen_anm, normalize, AnmConfig, AnmFunction, CauseDist, NoiseSpec};
use bicausal::gp::*;
use bicausal::kernels::KernelSpec;
use bicausal::optimize::{fit, FitConfig, Schedule};
use bicausal::seeds;
use rand::Rng;

fn main() {
    let seed = seeds::derive(99, "anm-suite", 1);
    let mut rng = seeds::rng_from(seed);
    let cfg_anm = AnmConfig {
        cause: CauseDist::Gaussian,
        function: AnmFunction::GpSample { lengthscale: rng.random_range(0.4..1.2), variance: 1.0 },
        noise: NoiseSpec::Gaussian { std: rng.random_range(0.1..0.3) },
    };
    let raw = gen_anm(&cfg_anm, 200, seed).unwrap();
    let data = normalize(&raw).unwrap();
    let x = data.x_vector();
    let y = data.y_vector();
    let cfg = FitConfig {
        kind: ModelKind::ConditionalGplvm,
        bound: BoundMode::Collapsed,
        spec: KernelSpec::rbf_linear(2),
        m_inducing: 16,
        schedule: Schedule::abbreviated(600, 150),
        n_restarts: 5,
        seed: seeds::derive(seeds::derive(7, &raw.name, 0), "conditional", 0),
        parallel_restarts: false,
        check_gradient: false,
    };
    let r = fit(Some(&x), &y, &cfg).unwrap();
    println!("best elbo {:.3e}, per-restart {:?}", r.best_elbo, r.per_restart_elbos.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
    let h = &r.best_hyper;
    println!("log_noise = {:.2} (sigma2={:.3e})", h.log_noise_variance, h.noise_variance());
    for (i, t) in h.kernel.terms.iter().enumerate() {
        println!("term {i}: log_var {:.2}, log_ls {:?}", t.log_variance, t.log_lengthscales);
    }
    let s = &r.best_state;
    let mu_max = s.q_w_mean.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let lv_min = s.q_w_log_var.iter().cloned().fold(f64::INFINITY, f64::min);
    let z_max = s.z.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    println!("|q_mu|max {:.3e}, min logvar {:.2}, |Z|max {:.3e}", mu_max, lv_min, z_max);
    // re-evaluate collapsed and stochastic at this point
    let c = elbo_collapsed(ModelKind::ConditionalGplvm, Some(&x), &y, &cfg.spec, h, s);
    println!("collapsed re-eval: {:?}", c.map(|v| format!("{v:.4e}")));
    let qu = optimal_qu(ModelKind::ConditionalGplvm, Some(&x), &y, &cfg.spec, h, s);
    match qu {
        Ok(qu) => {
            let mut s2 = s.clone();
            s2.q_u = Some(qu);
            for sd in 0..3u64 {
                let st = elbo_stochastic(ModelKind::ConditionalGplvm, Some(&x), &y, &cfg.spec, h, &s2, 50, sd);
                println!("stochastic (50 samples, seed {sd}): {:?}", st.map(|v| format!("{v:.4e}")));
            }
        }
        Err(e) => println!("optimal_qu failed: {e}"),
    }
}
