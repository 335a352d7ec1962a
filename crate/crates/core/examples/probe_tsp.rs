use gnwm::envs::TspInstance;
use gnwm::tsp::{solve, RingSolverConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("square");
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let lambda0: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let sig_frac: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let ring_factor: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(2.5);
    let alpha_start: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let trials: u64 = std::env::var("TRIALS").ok().and_then(|s| s.parse().ok()).unwrap_or(20);

    let inst = match mode {
        "square" => TspInstance::unit_square_corners(),
        "circle" => TspInstance::circle(12, 0.4),
        _ => panic!("mode square|circle"),
    };
    let n = (ring_factor * inst.len() as f64).ceil() as usize;
    let target = match mode {
        "square" => 4.0,
        _ => 12.0 * 2.0 * 0.4 * (std::f64::consts::PI / 12.0).sin(),
    };
    let mut hits = 0;
    let mut lens = Vec::new();
    for seed in 0..trials {
        let cfg = RingSolverConfig {
            ring_factor,
            sigma_start: Some(n as f64 * sig_frac),
            sigma_end: 0.5,
            steps,
            lambda0,
            learning_rate: lr,
            restarts: 1,
            seed,
            alpha_start,
        };
        let r = solve(&inst, &cfg).unwrap();
        lens.push((r.tour.length * 1000.0).round() / 1000.0);
        if (r.tour.length - target).abs() < 1e-6 {
            hits += 1;
        }
    }
    println!("lens: {lens:?}");
    println!(
        "{mode} steps={steps} lr={lr} l0={lambda0} sigfrac={sig_frac} rf={ring_factor} a0={alpha_start}: {hits}/{trials} single-restart optimal"
    );
}
