use gnwm::config::{FlatConfig, TrainConfig};
use gnwm::dataset::{Dataset, Paradigm, Payload, VideoData};
use gnwm::envs::{gen_passive_video, BallWorldConfig};
use gnwm::trainer::{make_batches, Trainer};
use std::time::Instant;

fn main() {
    let cfg = BallWorldConfig::default();
    let v = gen_passive_video(&cfg, 1200, 0).unwrap();
    let ds = Dataset {
        paradigm: Paradigm::PassiveBall,
        seed: 0,
        config_echo: String::new(),
        payload: Payload::Video(VideoData {
            frames: v.frames,
            actions: None,
            positions: v.positions.iter().map(|p| vec![*p]).collect(),
        }),
    };
    let tc = TrainConfig::from_flat(&FlatConfig::empty(), Paradigm::PassiveBall).unwrap();
    let mut t = Trainer::new(tc, &ds).unwrap();
    let batches = make_batches(ds.transition_count(), 64, 0, 0).unwrap();
    let start = Instant::now();
    for b in batches.iter().take(6) {
        t.train_step(&ds, b, 1.0).unwrap();
    }
    let per_step = start.elapsed().as_secs_f64() / 6.0;
    println!("per-step: {:.3}s  per-epoch({} steps): {:.1}s  150 epochs: {:.1}min",
        per_step, batches.len(), per_step * batches.len() as f64,
        per_step * batches.len() as f64 * 150.0 / 60.0);
}
