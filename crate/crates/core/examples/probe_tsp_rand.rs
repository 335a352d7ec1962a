use gnwm::envs::gen_tsp_instance;
use gnwm::tsp::{brute_force_optimal, nearest_neighbor, solve, RingSolverConfig};
use std::time::Instant;

fn main() {
    let c: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let lr: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let restarts: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut ok = 0;
    let trials = 20;
    let start = Instant::now();
    for seed in 0..trials {
        let inst = gen_tsp_instance(c, seed).unwrap();
        let cfg = RingSolverConfig {
            sigma_start: Some((2.5 * c as f64).ceil() * 0.3),
            steps,
            lambda0: 0.3,
            learning_rate: lr,
            restarts,
            seed,
            ..Default::default()
        };
        let r = solve(&inst, &cfg).unwrap();
        if c <= 10 {
            let bf = brute_force_optimal(&inst).unwrap();
            let ratio = r.tour.length / bf.length;
            if ratio <= 1.10 {
                ok += 1;
            }
            println!("seed {seed}: len {:.4} bf {:.4} ratio {ratio:.3}", r.tour.length, bf.length);
        } else {
            let nn = nearest_neighbor(&inst, 0);
            if r.tour.length <= nn.length {
                ok += 1;
            }
            println!("seed {seed}: len {:.4} nn {:.4}", r.tour.length, nn.length);
        }
    }
    println!(
        "C={c} steps={steps} lr={lr} restarts={restarts}: {ok}/{trials} pass, {:.1}s/ solve",
        start.elapsed().as_secs_f64() / trials as f64
    );
}
