// scratch: calibrate acceptance-suite schedules
use std::time::Instant;
use bicausal::data::{gen_anm, normalize, AnmConfig, AnmFunction, CauseDist, NoiseSpec};
use bicausal::decision::{decide, score_directions, ScoreConfig, ScoringMode};
use bicausal::gp::BoundMode;
use bicausal::optimize::Schedule;
use bicausal::seeds;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let bfgs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);
    let m: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let restarts: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5);
    let npairs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(6);

    let mut correct = 0;
    let total_start = Instant::now();
    for i in 0..npairs {
        let seed = seeds::derive(99, "anm-suite", i as u64);
        let mut rng = seeds::rng_from(seed);
        use rand::Rng;
        let cfg_anm = AnmConfig {
            cause: CauseDist::Gaussian,
            function: AnmFunction::GpSample { lengthscale: rng.random_range(0.4..1.2), variance: 1.0 },
            noise: NoiseSpec::Gaussian { std: rng.random_range(0.1..0.3) },
        };
        let raw = gen_anm(&cfg_anm, 200, seed).unwrap();
        let data = normalize(&raw).unwrap();
        let cfg = ScoreConfig {
            bound: BoundMode::Collapsed,
            m_inducing: m,
            schedule: Schedule::abbreviated(epochs, bfgs),
            n_restarts: restarts,
            seed: seeds::derive(7, &raw.name, 0),
            parallel: true,
        };
        let t0 = Instant::now();
        let (xy, yx) = score_directions(&data, &cfg).unwrap();
        let d = decide(&xy, &yx, ScoringMode::Joint, 1e-6).unwrap();
        let ok = d.log_margin > 0.0;
        if ok { correct += 1; }
        println!("pair {i}: margin {:+.2} {} ({:.1}s)  f_xy=({:.1},{:.1}) f_yx=({:.1},{:.1})",
            d.log_margin, if ok {"OK"} else {"WRONG"}, t0.elapsed().as_secs_f64(),
            xy.l_marg_cause, xy.l_cond_effect, yx.l_marg_cause, yx.l_cond_effect);
    }
    println!("{correct}/{npairs} correct, total {:.1}s", total_start.elapsed().as_secs_f64());
}
