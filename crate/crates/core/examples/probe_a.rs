use gnwm::config::{FlatConfig, TrainConfig};
use gnwm::dataset::{Dataset, Paradigm, Payload, VideoData};
use gnwm::envs::{gen_passive_video, BallWorldConfig};
use gnwm::eval;
use gnwm::trainer::{run_training, Trainer};
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let cfg = BallWorldConfig::default();
    let v = gen_passive_video(&cfg, 1200, seed).unwrap();
    let positions: Vec<(f64, f64)> = v.positions.clone();
    let ds = Dataset {
        paradigm: Paradigm::PassiveBall,
        seed,
        config_echo: String::new(),
        payload: Payload::Video(VideoData {
            frames: v.frames,
            actions: None,
            positions: v.positions.iter().map(|p| vec![*p]).collect(),
        }),
    };
    let mut flat = FlatConfig::empty();
    flat.set("epochs", epochs.to_string());
    flat.set("seed", seed.to_string());
    if let Ok(lr) = std::env::var("PROBE_LR") {
        flat.set("learning_rate", lr);
    }
    if let Ok(b) = std::env::var("PROBE_B") {
        flat.set("batch_size", b);
    }
    let tc = TrainConfig::from_flat(&flat, Paradigm::PassiveBall).unwrap();
    let trainer = Trainer::new(tc, &ds).unwrap();
    let start = Instant::now();
    let (t, log) = run_training(trainer, &ds, None).unwrap();
    let maps = eval::bmu_map(&t.params, &t.topo, &ds).unwrap();
    let util = maps[0].utilization();
    let topo_corr = eval::topographic_correlation(&maps[0], &positions, &t.topo);
    let last = log.rows.last().unwrap();
    println!(
        "seed={seed} epochs={epochs}: util={util} corr={:?} floor_pair={:.4} (target {:.4}) l_sim={:.4} wall={:.0}s",
        topo_corr.map(|c| (c.score * 1000.0).round() / 1000.0),
        last.l_collapse + last.l_wta,
        1.0 / 15.0,
        last.l_sim,
        start.elapsed().as_secs_f64()
    );
}
