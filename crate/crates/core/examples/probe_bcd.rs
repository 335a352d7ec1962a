use gnwm::config::{FlatConfig, TrainConfig};
use gnwm::dataset::{Dataset, Paradigm, Payload, VideoData};
use gnwm::envs::*;
use gnwm::eval;
use gnwm::trainer::{run_training, Trainer};
use std::time::Instant;

fn video_ds(paradigm: Paradigm, n: usize, seed: u64) -> Dataset {
    let cfg = BallWorldConfig::default();
    let payload = match paradigm {
        Paradigm::ActionBall => {
            let ep = gen_action_episode(&cfg, n, seed).unwrap();
            Payload::Video(VideoData {
                frames: ep.frames,
                actions: Some(ep.actions),
                positions: ep.positions.iter().map(|p| vec![*p]).collect(),
            })
        }
        Paradigm::TwoBall => {
            let v = gen_two_ball_video(&cfg, n, seed).unwrap();
            Payload::Video(VideoData {
                frames: v.frames,
                actions: None,
                positions: v.positions.iter().map(|p| vec![p[0], p[1]]).collect(),
            })
        }
        _ => unreachable!(),
    };
    Dataset { paradigm, seed, config_echo: String::new(), payload }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "B".into());
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(40);
    let start = Instant::now();
    let mut flat = FlatConfig::empty();
    flat.set("epochs", epochs.to_string());
    flat.set("seed", seed.to_string());
    for (env, key) in [
        ("PROBE_GAMMA", "gamma"),
        ("PROBE_LR", "learning_rate"),
        ("PROBE_SIGMA", "sigma"),
        ("PROBE_B", "batch_size"),
        ("PROBE_ALPHA", "alpha_start"),
    ] {
        if let Ok(v) = std::env::var(env) {
            flat.set(key, v);
        }
    }

    match which.as_str() {
        "B" => {
            let ds = video_ds(Paradigm::ActionBall, 1200, seed);
            let tc = TrainConfig::from_flat(&flat, Paradigm::ActionBall).unwrap();
            let (t, log) = run_training(Trainer::new(tc, &ds).unwrap(), &ds, None).unwrap();
            // held-out episode with a different seed
            let held = video_ds(Paradigm::ActionBall, 500, seed + 1000);
            let acc = eval::one_step_accuracy(&t.params, &t.topo, &held).unwrap();
            // imagination tree membership + inverse actions
            let maps = eval::bmu_map(&t.params, &t.topo, &ds).unwrap();
            let active: Vec<bool> = maps[0].frames_of_node.iter().map(|f| !f.is_empty()).collect();
            let latents = eval::frame_latents(&t.params, &t.topo, &ds, &[0]).unwrap();
            let tree = eval::imagination_tree(&t.params, &t.topo, &latents[0][0], 3).unwrap();
            let member = tree.nodes.iter().filter(|n| active[n.grid_node]).count() as f64
                / tree.nodes.len() as f64;
            // inverse action return rate over interior nodes
            let (mut inv_ok, mut inv_total) = (0, 0);
            for row in 2..13 {
                for col in 2..13 {
                    let node = row * 15 + col;
                    if !active[node] { continue; }
                    let p0 = gnwm::topology::LatentDistribution::one_hot(225, node).unwrap();
                    let right = eval::predict_next(&t.params, &t.topo, &[vec![p0]], Some(&[Action::Right])).unwrap();
                    let snapped = gnwm::topology::snap(&right[0][0]);
                    let back = eval::predict_next(&t.params, &t.topo, &[vec![snapped]], Some(&[Action::Left])).unwrap();
                    inv_total += 1;
                    if gnwm::topology::snap(&back[0][0]).argmax() == node { inv_ok += 1; }
                }
            }
            let last = log.rows.last().unwrap();
            println!("B seed={seed} epochs={epochs}: acc={acc:.3} tree_member={member:.3} inverse={inv_ok}/{inv_total} util={} floor_pair={:.4} wall={:.0}s",
                maps[0].utilization(), last.l_collapse + last.l_wta, start.elapsed().as_secs_f64());
        }
        "C" => {
            let ds = video_ds(Paradigm::TwoBall, 1200, seed);
            let tc = TrainConfig::from_flat(&flat, Paradigm::TwoBall).unwrap();
            let (t, _) = run_training(Trainer::new(tc, &ds).unwrap(), &ds, None).unwrap();
            let fr = eval::factorization_metrics(&t.params, &t.topo, &ds).unwrap();
            println!("C seed={seed} epochs={epochs}: matched=[{:.3},{:.3}] cross=[{:.3},{:.3}] wall={:.0}s",
                fr.matched[0], fr.matched[1], fr.cross[0], fr.cross[1], start.elapsed().as_secs_f64());
        }
        "D" => {
            let corpus = gen_grammar_corpus(seed, 1200).unwrap();
            let ds = Dataset { paradigm: Paradigm::Grammar, seed, config_echo: String::new(), payload: Payload::Grammar(corpus.clone()) };
            let tc = TrainConfig::from_flat(&flat, Paradigm::Grammar).unwrap();
            let (t, log) = run_training(Trainer::new(tc, &ds).unwrap(), &ds, None).unwrap();
            let sem = eval::semantic_clustering_metrics(&t.params, &t.topo, &corpus).unwrap();
            let last = log.rows.last().unwrap();
            println!("D seed={seed} epochs={epochs}: distinct={} ratio={:.3} intra={:.2} inter={:.2} floor_pair={:.4} wall={:.0}s",
                sem.distinct_bmus, sem.ratio, sem.intra_mean_dist, sem.inter_mean_dist,
                last.l_collapse + last.l_wta, start.elapsed().as_secs_f64());
        }
        _ => panic!("B|C|D"),
    }
}
