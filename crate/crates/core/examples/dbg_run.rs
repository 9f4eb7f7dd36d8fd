use zopro_core::estimators::{DirectionMode, SmoothingConfig};
use zopro_core::graph::random_connected_graph;
use zopro_core::objectives::{make_logistic_problem, solve_reference};
use zopro_core::solvers::*;
use zopro_core::util::{derive_seed, seed_tag};

fn main() {
    for &(tau, mb) in &[(2.0f64, 30usize), (5.0, 30), (1.0, 30)] {
        let mut line = format!("tau={tau} mb={mb}: ");
        for seed in 0..4u64 {
            let graph = random_connected_graph(10, 4.0, derive_seed(seed, seed_tag::SCENARIO)).unwrap();
            let problem = make_logistic_problem(10, 5, 5, 1.0, derive_seed(seed, 77)).unwrap();
            let x_star = solve_reference(&problem, 1e-12).unwrap();
            let cfg = AlgoConfig {
                rho: 0.5, c_armijo: 0.1, shrink: 0.5, max_backtracks: mb,
                smoothing: SmoothingConfig { mu: 0.01, batch: 64, direction_mode: DirectionMode::FreshPerIteration, rng_seed: derive_seed(seed, 99) },
                d_policy: DPolicy::ScaledIdentity { tau },
                max_iterations: 2000, slope_mode: SlopeMode::GradientEstimate,
                stop: None, record_states: false, record_steps: false, record_trace: false,
            };
            let rec = run_zopro(&problem, &graph, &cfg, seed, &x_star).unwrap();
            let e = rec.avg_errors();
            let tail = &e[e.len()-200..];
            let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
            let rec2 = run_sopro(&problem, &graph, &cfg, seed, &x_star).unwrap();
            let e2 = rec2.avg_errors();
            line += &format!("[z500:{:.1e} z_tail:{:.1e} fb:{} | s_end:{:.1e}] ", e[499], tail_mean, rec.metadata.fallback_steps, e2.last().unwrap());
        }
        println!("{line}");
    }
}
