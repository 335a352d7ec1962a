//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (also appended to `<target-tmpdir>/acceptance.log`, with rollout
//! curves emitted next to it for inspection).
//!
//! Criterion 3's first arm (cosine-to-uniform < 0.5 with the expansion
//! force removed) is known-red:  the contraction loss is additively
//! separable across batch rows, so removing the expansion force leaves no
//! inter-row interaction that could concentrate the batch mean; see the
//! assertion message for the measured value.

mod common;

use common::{finite_diff, max_rel_error};
use gnwm::config::{FlatConfig, TrainConfig};
use gnwm::dataset::{Dataset, Paradigm, Payload, VideoData};
use gnwm::envs::*;
use gnwm::eval;
use gnwm::nets::ModelParams;
use gnwm::opt::{Adam, AdamConfig};
use gnwm::tensor::{Tape, Tensor};
use gnwm::thermo;
use gnwm::topology::{project, snap, GridTopology, LatentDistribution};
use gnwm::trainer::{run_training, Trainer};
use gnwm::tsp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

// Desk-run budgets for the trained criteria. Retinotopy is architectural,
// so utilization/correlation converge within a few epochs; these budgets
// additionally train quantization and dynamics to the asserted levels
// while keeping every run well under its stated runtime cap.
const A_EPOCHS: usize = 30;
const B_EPOCHS: usize = 60;
const C_EPOCHS: usize = 40;
const D_EPOCHS: usize = 300;
const D_GAMMA: f64 = 2.0;

fn artifacts_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).ok();
    dir
}

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "ACCEPTANCE {criterion:02} {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(artifacts_dir().join("acceptance.log"))
    {
        let _ = writeln!(f, "{line}");
    }
}

// ── datasets and training helpers ───────────────────────────────────────

fn passive_dataset(seed: u64, frames: usize) -> Dataset {
    let cfg = BallWorldConfig::default();
    let v = gen_passive_video(&cfg, frames, seed).unwrap();
    Dataset {
        paradigm: Paradigm::PassiveBall,
        seed,
        config_echo: String::new(),
        payload: Payload::Video(VideoData {
            frames: v.frames,
            actions: None,
            positions: v.positions.iter().map(|p| vec![*p]).collect(),
        }),
    }
}

fn action_dataset(seed: u64, steps: usize) -> Dataset {
    let cfg = BallWorldConfig::default();
    let ep = gen_action_episode(&cfg, steps, seed).unwrap();
    Dataset {
        paradigm: Paradigm::ActionBall,
        seed,
        config_echo: String::new(),
        payload: Payload::Video(VideoData {
            frames: ep.frames,
            actions: Some(ep.actions),
            positions: ep.positions.iter().map(|p| vec![*p]).collect(),
        }),
    }
}

fn two_ball_dataset(seed: u64, frames: usize) -> Dataset {
    let cfg = BallWorldConfig::default();
    let v = gen_two_ball_video(&cfg, frames, seed).unwrap();
    Dataset {
        paradigm: Paradigm::TwoBall,
        seed,
        config_echo: String::new(),
        payload: Payload::Video(VideoData {
            frames: v.frames,
            actions: None,
            positions: v.positions.iter().map(|p| vec![p[0], p[1]]).collect(),
        }),
    }
}

fn grammar_dataset(seed: u64, len: usize) -> Dataset {
    Dataset {
        paradigm: Paradigm::Grammar,
        seed,
        config_echo: String::new(),
        payload: Payload::Grammar(gen_grammar_corpus(seed, len).unwrap()),
    }
}

fn desk_config(paradigm: Paradigm, seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::from_flat(&FlatConfig::empty(), paradigm).unwrap();
    cfg.seed = seed;
    cfg.epochs = epochs;
    cfg.snapshot_cadence = 0;
    cfg
}

struct TrainedB {
    params: ModelParams,
    topo: GridTopology,
    train_data: Dataset,
}

fn trained_b() -> &'static TrainedB {
    static MODEL: OnceLock<TrainedB> = OnceLock::new();
    MODEL.get_or_init(|| {
        let ds = action_dataset(0, 1200);
        let cfg = desk_config(Paradigm::ActionBall, 0, B_EPOCHS);
        let trainer = Trainer::new(cfg, &ds).unwrap();
        let (trainer, _) = run_training(trainer, &ds, None).unwrap();
        TrainedB { params: trainer.params, topo: trainer.topo, train_data: ds }
    })
}

// ── criterion 1: gradient correctness ───────────────────────────────────

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;

    // elementwise, reductions, shapes: one composite graph exercises every
    // remaining op; conv and projection ops get dedicated graphs
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rand_vec =
            |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.3..1.5)).collect() };

        // composite: add/sub/mul/div/min/scale/add_scalar/relu/matmul/
        // transpose/reshape/roll/dot/mean_axis0/mean_all/sum_all/
        // add_row_broadcast
        let av = rand_vec(&mut rng, 12);
        let bv = rand_vec(&mut rng, 12);
        let cv = rand_vec(&mut rng, 4);
        let composite = |a_in: &[f64], b_in: &[f64], c_in: &[f64]| -> (f64, Option<(Vec<f64>, Vec<f64>, Vec<f64>)>) {
            let mut t = Tape::new();
            let a = t.leaf(a_in.to_vec(), vec![3, 4], true).unwrap();
            let b = t.leaf(b_in.to_vec(), vec![3, 4], true).unwrap();
            let c = t.leaf(c_in.to_vec(), vec![4], true).unwrap();
            let s = t.add(a, b).unwrap();
            let d = t.sub(s, b).unwrap();
            let m = t.mul(d, b).unwrap();
            let q = t.div(m, b).unwrap();
            // keep min's operands separated so no FD step crosses a tie
            let a9 = t.scale(a, 0.9);
            let mn = t.min(q, a9).unwrap();
            let sc = t.scale(mn, 1.3);
            let sh = t.add_scalar(sc, 0.2);
            let rl = t.relu(sh);
            let rb = t.add_row_broadcast(rl, c).unwrap();
            let tr = t.transpose(rb).unwrap(); // [4,3]
            let mm = t.matmul(tr, rb).unwrap(); // [4,4]
            let rs = t.reshape(mm, vec![2, 8]).unwrap();
            let ro = t.roll_rows(rs, 1).unwrap();
            let dr = t.dot_rows(rs, ro).unwrap();
            let ma = t.mean_axis0(rs).unwrap();
            let s1 = t.sum_all(ma);
            let m1 = t.mean_all(dr);
            let tot = t.add(s1, m1).unwrap();
            let loss_v = t.values(tot)[0];
            let grads = if t.grad(a).is_none() {
                t.backward(tot).unwrap();
                Some((
                    t.grad(a).unwrap().to_vec(),
                    t.grad(b).unwrap().to_vec(),
                    t.grad(c).unwrap().to_vec(),
                ))
            } else {
                None
            };
            (loss_v, grads)
        };
        let (_, grads) = composite(&av, &bv, &cv);
        let (ga, gb, gc) = grads.unwrap();
        let fd_a = finite_diff(&av, 1e-5, |x| composite(x, &bv, &cv).0);
        let fd_b = finite_diff(&bv, 1e-5, |x| composite(&av, x, &cv).0);
        let fd_c = finite_diff(&cv, 1e-5, |x| composite(&av, &bv, x).0);
        let e_comp = max_rel_error(&ga, &fd_a).max(max_rel_error(&gb, &fd_b)).max(max_rel_error(&gc, &fd_c));
        if std::env::var("ACC_DEBUG").is_ok() { eprintln!("seed {seed} composite {e_comp:.2e}"); }
        worst = worst.max(e_comp);

        // conv2d (input, kernel, bias) + avgpool + crop + concat + softmax/l2
        let xv = rand_vec(&mut rng, 2 * 2 * 6 * 6);
        let kv: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-0.5..0.5)).collect();
        let bv2: Vec<f64> = (0..3).map(|_| rng.random_range(-0.2..0.2)).collect();
        let conv_graph = |x_in: &[f64], k_in: &[f64], b_in: &[f64], want_grads: bool| {
            let mut t = Tape::new();
            let x = t.leaf(x_in.to_vec(), vec![2, 2, 6, 6], true).unwrap();
            let k = t.leaf(k_in.to_vec(), vec![3, 2, 3, 3], true).unwrap();
            let b = t.leaf(b_in.to_vec(), vec![3], true).unwrap();
            let y = t.conv2d_same(x, k, Some(b)).unwrap();
            let cat = t.concat_channels(y, y).unwrap();
            let cr = t.crop_center(cat, 4, 4).unwrap();
            let pl = t.avg_pool2(cr).unwrap();
            let fl = t.reshape(pl, vec![2 * 6, 4]).unwrap();
            let sm = t.softmax_rows(fl).unwrap();
            let l2 = t.l2_normalize_rows(sm).unwrap();
            let dr = t.dot_rows(sm, l2).unwrap();
            let loss = t.sum_all(dr);
            let v = t.values(loss)[0];
            if want_grads {
                t.backward(loss).unwrap();
                (v, Some((t.grad(x).unwrap().to_vec(), t.grad(k).unwrap().to_vec(), t.grad(b).unwrap().to_vec())))
            } else {
                (v, None)
            }
        };
        let (_, g) = conv_graph(&xv, &kv, &bv2, true);
        let (gx, gk, gb2) = g.unwrap();
        let fd_x = finite_diff(&xv, 1e-5, |v| conv_graph(v, &kv, &bv2, false).0);
        let fd_k = finite_diff(&kv, 1e-5, |v| conv_graph(&xv, v, &bv2, false).0);
        let fd_b2 = finite_diff(&bv2, 1e-5, |v| conv_graph(&xv, &kv, v, false).0);
        let e_conv = max_rel_error(&gx, &fd_x).max(max_rel_error(&gk, &fd_k)).max(max_rel_error(&gb2, &fd_b2));
        if std::env::var("ACC_DEBUG").is_ok() { eprintln!("seed {seed} conv {e_conv:.2e}"); }
        worst = worst.max(e_conv);

        // circular conv
        let rv = rand_vec(&mut rng, 2 * 8);
        let kernel = vec![0.1, 0.25, 0.3, 0.25, 0.1];
        let ring_graph = |x_in: &[f64], want: bool| {
            let mut t = Tape::new();
            let x = t.leaf(x_in.to_vec(), vec![2, 8], true).unwrap();
            let k = t.leaf(kernel.clone(), vec![5], false).unwrap();
            let y = t.conv1d_circular(x, k).unwrap();
            let sq = t.mul(y, y).unwrap();
            let loss = t.sum_all(sq);
            let v = t.values(loss)[0];
            if want {
                t.backward(loss).unwrap();
                (v, Some(t.grad(x).unwrap().to_vec()))
            } else {
                (v, None)
            }
        };
        let (_, gr) = ring_graph(&rv, true);
        let fd_r = finite_diff(&rv, 1e-5, |v| ring_graph(v, false).0);
        worst = worst.max(max_rel_error(&gr.unwrap(), &fd_r));

        // the full unified-objective pipeline over both branches' raw
        // logits: smear -> project per branch, then the three-term loss
        let d = 9;
        let topo = GridTopology::planar(3, 3, 0.5).unwrap();
        let pl = rand_vec(&mut rng, 4 * d);
        let zl = rand_vec(&mut rng, 4 * d);
        let full = |p_in: &[f64], z_in: &[f64], want: bool| {
            let mut t = Tape::new();
            let praw = t.leaf(p_in.to_vec(), vec![4, 1, 3, 3], true).unwrap();
            let zraw = t.leaf(z_in.to_vec(), vec![4, 1, 3, 3], true).unwrap();
            let psm = topo.smear(&mut t, praw).unwrap();
            let zsm = topo.smear(&mut t, zraw).unwrap();
            let pf = t.reshape(psm, vec![4, d]).unwrap();
            let zf = t.reshape(zsm, vec![4, d]).unwrap();
            let p = project(&mut t, pf).unwrap();
            let z = project(&mut t, zf).unwrap();
            let g = thermo::thermo_graph(&mut t, p, z, 1.0, 0.5).unwrap();
            let v = t.values(g.total)[0];
            if want {
                t.backward(g.total).unwrap();
                (v, Some((t.grad(praw).unwrap().to_vec(), t.grad(zraw).unwrap().to_vec())))
            } else {
                (v, None)
            }
        };
        let (_, g) = full(&pl, &zl, true);
        let (gp, gz) = g.unwrap();
        let fd_p = finite_diff(&pl, 1e-5, |v| full(v, &zl, false).0);
        let fd_z = finite_diff(&zl, 1e-5, |v| full(&pl, v, false).0);
        worst = worst.max(max_rel_error(&gp, &fd_p)).max(max_rel_error(&gz, &fd_z));
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && elapsed < 60.0;
    report(
        1,
        "gradient correctness",
        pass,
        &format!("max rel. error {worst:.2e} over 10 seeds, {elapsed:.1}s"),
    );
    assert!(worst <= 1e-4, "max relative error {worst} exceeds 1e-4");
    assert!(elapsed < 60.0, "gradient checks took {elapsed}s");
}

// ── criteria 2 and 3: loss floor and ablations ──────────────────────────

#[derive(Clone, Copy)]
enum FloorMode {
    Full,
    WtaOnly,
    CollapseOnly,
}

/// Direct optimization over free logits through the fixed smear+project
/// pipeline on a 4x4 grid (D=16): Adam lr 0.15, betas (0.9, 0.99),
/// logits init U(-1,1), seed 1, 2000 steps.
fn floor_optimization(mode: FloorMode, steps: usize) -> (f64, f64, f64) {
    let (b, d) = (64, 16);
    let topo = GridTopology::planar(4, 4, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut logits =
        Tensor::param((0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect(), vec![b, d]).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: 0.15, beta2: 0.99, ..Default::default() }, &[b * d]);
    let mut best_pair = f64::INFINITY;
    let mut last_cos = 0.0;
    let mut last_l1 = 0.0;
    for _ in 0..steps {
        let mut tape = Tape::new();
        let x = tape.param(&logits);
        let grid = tape.reshape(x, vec![b, 1, 4, 4]).unwrap();
        let sm = topo.smear(&mut tape, grid).unwrap();
        let flat = tape.reshape(sm, vec![b, d]).unwrap();
        let p = project(&mut tape, flat).unwrap();
        let g = thermo::thermo_graph(&mut tape, p, p, 1.0, 0.0).unwrap();
        let loss = match mode {
            FloorMode::Full => g.total,
            FloorMode::WtaOnly => g.wta,
            FloorMode::CollapseOnly => g.collapse,
        };
        tape.backward(loss).unwrap();
        let grad = tape.grad(x).unwrap().to_vec();
        let mut params = [logits];
        adam.step(&mut params, &[Some(&grad)]);
        logits = params.into_iter().next().unwrap();

        let pv = tape.values(p);
        let mean = thermo::batch_mean(pv, pv, d).unwrap();
        let lc = thermo::collapse_loss(&mean).unwrap();
        let lw = thermo::wta_loss(&mean);
        best_pair = best_pair.min(lc + lw);
        last_cos = 1.0 - lc;
        last_l1 = pv.iter().map(|v| v.abs()).sum::<f64>() / b as f64;
    }
    (best_pair, last_cos, last_l1)
}

#[test]
fn criterion_02_loss_floor() {
    let start = Instant::now();
    // analytic: D distinct one-hots attain the floor exactly
    let mut analytic_ok = true;
    for d in [4usize, 16, 225] {
        let mut batch = Vec::with_capacity(d * d);
        for i in 0..d {
            let mut row = vec![0.0; d];
            row[i] = 1.0;
            batch.extend(row);
        }
        let r = thermo::total_loss(&batch, &batch, d, 1.0, 0.5).unwrap();
        let err = (r.l_collapse + r.l_wta - thermo::theoretical_floor(d)).abs();
        if err > 1e-9 {
            analytic_ok = false;
        }
    }

    let (best, _, _) = floor_optimization(FloorMode::Full, 2000);
    let elapsed = start.elapsed().as_secs_f64();
    let target = 0.25 * 1.02;
    let pass = analytic_ok && best <= target && elapsed < 60.0;
    report(
        2,
        "loss floor",
        pass,
        &format!("analytic exact: {analytic_ok}; optimization best {best:.4} vs {target:.4}; {elapsed:.1}s"),
    );
    assert!(analytic_ok, "analytic floor violated");
    assert!(best <= target, "optimization reached {best}, needs <= {target}");
    assert!(elapsed < 60.0, "floor optimization took {elapsed}s");
}

#[test]
fn criterion_03_ablation_inseparability() {
    let (_, cos_full, l1_full) = floor_optimization(FloorMode::Full, 2000);
    let (_, cos_wta, _) = floor_optimization(FloorMode::WtaOnly, 2000);
    let (_, _, l1_col) = floor_optimization(FloorMode::CollapseOnly, 2000);
    let blur_floor = 0.8 * 4.0; // 0.8 * sqrt(16)

    let arm1 = cos_wta < 0.5;
    let arm2 = cos_full > 0.98;
    let arm3 = l1_col > blur_floor;
    let arm4 = l1_full < 1.5;
    report(
        3,
        "ablation inseparability",
        arm1 && arm2 && arm3 && arm4,
        &format!(
            "no-expansion cosine {cos_wta:.3} (<0.5 {}); full cosine {cos_full:.4} (>0.98 {}); no-contraction L1 {l1_col:.2} (>{blur_floor:.1} {}); full L1 {l1_full:.3} (<1.5 {})",
            pf(arm1),
            pf(arm2),
            pf(arm3),
            pf(arm4)
        ),
    );
    assert!(arm2, "full loss cosine {cos_full} fell below 0.98");
    assert!(arm3, "collapse-only mean row L1 {l1_col} not above {blur_floor}");
    assert!(arm4, "full loss mean row L1 {l1_full} not below 1.5");
    // Known-red: the contraction loss is additively separable across rows,
    // so removing the expansion force leaves each row sharpening at its
    // initial argmax and the batch mean stays near-uniform; no optimizer
    // or schedule drives the cosine below 0.5 in this free-logit setting.
    assert!(
        arm1,
        "no-expansion ablation cosine is {cos_wta:.3}, not < 0.5 (row-separable contraction cannot concentrate the batch mean)"
    );
}

fn pf(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "VIOLATED"
    }
}

// ── criterion 4: paradigm A ─────────────────────────────────────────────

#[test]
fn criterion_04_paradigm_a_utilization_and_topography() {
    let mut passes = 0;
    let mut details = Vec::new();
    let mut max_seed_time = 0.0f64;
    for seed in 0..5u64 {
        let t0 = Instant::now();
        let ds = passive_dataset(seed, 1200);
        let cfg = desk_config(Paradigm::PassiveBall, seed, A_EPOCHS);
        let trainer = Trainer::new(cfg, &ds).unwrap();
        let (trainer, _) = run_training(trainer, &ds, None).unwrap();
        let maps = eval::bmu_map(&trainer.params, &trainer.topo, &ds).unwrap();
        let util = maps[0].utilization();
        let positions: Vec<(f64, f64)> =
            ds.video().unwrap().positions.iter().map(|p| p[0]).collect();
        let corr = eval::topographic_correlation(&maps[0], &positions, &trainer.topo)
            .map(|t| t.score)
            .unwrap_or(0.0);
        let seed_time = t0.elapsed().as_secs_f64();
        max_seed_time = max_seed_time.max(seed_time);
        let ok = (110..=220).contains(&util) && corr >= 0.6;
        if ok {
            passes += 1;
        }
        details.push(format!("seed {seed}: util {util}, corr {corr:.3} ({seed_time:.0}s)"));
    }
    let pass = passes >= 3 && max_seed_time <= 600.0;
    report(
        4,
        "paradigm A utilization + topography",
        pass,
        &format!("{passes}/5 seeds in band; {}", details.join("; ")),
    );
    assert!(passes >= 3, "only {passes}/5 seeds passed: {details:?}");
    assert!(max_seed_time <= 600.0, "a seed took {max_seed_time}s (> 10 min)");
}

// ── criterion 5: paradigm B ─────────────────────────────────────────────

#[test]
fn criterion_05_paradigm_b_prediction_and_tree() {
    let model = trained_b();
    // one-step accuracy on 500 held-out transitions
    let held = action_dataset(1000, 500);
    let acc = eval::one_step_accuracy(&model.params, &model.topo, &held).unwrap();

    // active set from the training distribution
    let maps = eval::bmu_map(&model.params, &model.topo, &model.train_data).unwrap();
    let active: Vec<bool> = maps[0].frames_of_node.iter().map(|f| !f.is_empty()).collect();

    // depth-3 trees from five dataset starts; pooled membership
    let mut in_set = 0usize;
    let mut total = 0usize;
    for start in [0usize, 250, 500, 750, 1000] {
        let p0 = &eval::frame_latents(&model.params, &model.topo, &model.train_data, &[start])
            .unwrap()[0][0];
        let tree = eval::imagination_tree(&model.params, &model.topo, p0, 3).unwrap();
        total += tree.nodes.len();
        in_set += tree.nodes.iter().filter(|n| active[n.grid_node]).count();
    }
    let membership = in_set as f64 / total as f64;

    // inverse actions over interior active nodes
    let (mut inv_ok, mut inv_total) = (0, 0);
    for row in 1..14 {
        for col in 1..14 {
            let node = row * 15 + col;
            if !active[node] {
                continue;
            }
            let p0 = LatentDistribution::one_hot(225, node).unwrap();
            let right = eval::predict_next(&model.params, &model.topo, &[vec![p0]], Some(&[Action::Right]))
                .unwrap();
            let mid = snap(&right[0][0]);
            let back = eval::predict_next(&model.params, &model.topo, &[vec![mid]], Some(&[Action::Left]))
                .unwrap();
            inv_total += 1;
            if snap(&back[0][0]).argmax() == node {
                inv_ok += 1;
            }
        }
    }
    let inv_rate = inv_ok as f64 / inv_total.max(1) as f64;

    let pass = acc >= 0.90 && membership >= 0.95 && inv_rate >= 0.80;
    report(
        5,
        "paradigm B prediction + imagination tree",
        pass,
        &format!(
            "one-step acc {acc:.3} (>=0.90); tree membership {membership:.3} (>=0.95); inverse-action {inv_rate:.3} over {inv_total} interior nodes (>=0.80)"
        ),
    );
    assert!(acc >= 0.90, "one-step accuracy {acc}");
    assert!(membership >= 0.95, "tree membership {membership}");
    assert!(inv_rate >= 0.80, "inverse-action return {inv_rate}");
}

// ── criterion 6: rollout stability ──────────────────────────────────────

#[test]
fn criterion_06_rollout_stability() {
    let model = trained_b();
    let p0 = eval::frame_latents(&model.params, &model.topo, &model.train_data, &[0]).unwrap()
        [0]
    .clone();
    let policy = [Action::Up, Action::Right, Action::Down, Action::Left];

    let snapped =
        eval::rollout(&model.params, &model.topo, p0.clone(), Some(&policy), 100, true).unwrap();
    let free =
        eval::rollout(&model.params, &model.topo, p0, Some(&policy), 100, false).unwrap();
    std::fs::write(artifacts_dir().join("rollout_snap.csv"), snapped.to_csv()).unwrap();
    std::fs::write(artifacts_dir().join("rollout_nosnap.csv"), free.to_csv()).unwrap();

    let d = 225.0f64;
    let expect_std = (1.0 / d - 1.0 / (d * d)).sqrt();
    let mut constant = true;
    for stat in &snapped.stats[1..] {
        if stat.max_entry != 1.0
            || stat.l1_norm != 1.0
            || (stat.entry_std - expect_std).abs() > 1e-12
        {
            constant = false;
        }
    }
    let drift = free.stats.last().unwrap().max_entry < free.stats[1].max_entry;
    let pass = constant && drift;
    report(
        6,
        "rollout stability",
        pass,
        &format!(
            "snapped peakedness exactly constant over 100 steps: {constant} (std {expect_std:.4}); unsnapped max entry {:.4} -> {:.4} (drift {drift}); curves in {}",
            free.stats[1].max_entry,
            free.stats.last().unwrap().max_entry,
            artifacts_dir().display()
        ),
    );
    assert!(constant, "snapped rollout statistics drifted");
    assert!(drift, "unsnapped rollout did not lose peakedness");
}

// ── criterion 7: paradigm C ─────────────────────────────────────────────

#[test]
fn criterion_07_paradigm_c_factorization() {
    let mut passes = 0;
    let mut details = Vec::new();
    for seed in 0..5u64 {
        let ds = two_ball_dataset(seed, 1200);
        let cfg = desk_config(Paradigm::TwoBall, seed, C_EPOCHS);
        let trainer = Trainer::new(cfg, &ds).unwrap();
        let (trainer, _) = run_training(trainer, &ds, None).unwrap();
        let fr = eval::factorization_metrics(&trainer.params, &trainer.topo, &ds).unwrap();
        let ok = fr.matched[0] >= 0.6
            && fr.matched[1] >= 0.6
            && fr.cross[0] <= 0.3
            && fr.cross[1] <= 0.3;
        if ok {
            passes += 1;
        }
        details.push(format!(
            "seed {seed}: matched [{:.2},{:.2}] cross [{:.2},{:.2}]",
            fr.matched[0], fr.matched[1], fr.cross[0], fr.cross[1]
        ));
    }
    let pass = passes >= 3;
    report(
        7,
        "paradigm C dual-channel factorization",
        pass,
        &format!("{passes}/5 seeds; {}", details.join("; ")),
    );
    assert!(passes >= 3, "only {passes}/5 seeds factorized: {details:?}");
}

// ── criterion 8: paradigm D ─────────────────────────────────────────────

#[test]
fn criterion_08_paradigm_d_semantics() {
    let mut passes = 0;
    let mut details = Vec::new();
    for seed in 0..5u64 {
        let ds = grammar_dataset(seed, 1200);
        let mut cfg = desk_config(Paradigm::Grammar, seed, D_EPOCHS);
        cfg.gamma = D_GAMMA;
        let trainer = Trainer::new(cfg, &ds).unwrap();
        let (trainer, _) = run_training(trainer, &ds, None).unwrap();
        let sem =
            eval::semantic_clustering_metrics(&trainer.params, &trainer.topo, ds.grammar().unwrap())
                .unwrap();
        let ok = sem.distinct_bmus == 40 && sem.ratio < 0.7;
        if ok {
            passes += 1;
        }
        details.push(format!(
            "seed {seed}: distinct {} ratio {:.3}",
            sem.distinct_bmus, sem.ratio
        ));
    }
    let pass = passes >= 3;
    report(
        8,
        "paradigm D semantic topology",
        pass,
        &format!("{passes}/5 seeds; {}", details.join("; ")),
    );
    assert!(passes >= 3, "only {passes}/5 seeds clustered: {details:?}");
}

// ── criterion 9: TSP ────────────────────────────────────────────────────

#[test]
fn criterion_09_tsp() {
    // validity fuzz: 200 short solves across sizes and seeds
    let mut valid = true;
    let mut fuzz_rng = ChaCha8Rng::seed_from_u64(7);
    for run in 0..200u64 {
        let c = fuzz_rng.random_range(4..=30);
        let inst = gen_tsp_instance(c, run).unwrap();
        let cfg = tsp::RingSolverConfig { steps: 60, restarts: 1, seed: run, ..Default::default() };
        let tour = tsp::solve(&inst, &cfg).unwrap().tour;
        let mut seen = vec![false; c];
        for &i in &tour.order {
            if i >= c || seen[i] {
                valid = false;
            } else {
                seen[i] = true;
            }
        }
        if tour.order.len() != c {
            valid = false;
        }
    }

    // square fixture: optimal in >= 9 of 10 restarts
    let square = TspInstance::unit_square_corners();
    let sq_cfg = tsp::RingSolverConfig { steps: 1500, restarts: 10, seed: 0, ..Default::default() };
    let sq = tsp::solve(&square, &sq_cfg).unwrap();
    let sq_hits = sq.restarts.iter().filter(|r| (r.length - 4.0).abs() < 1e-6).count();

    // 12-city circle: analytic optimum within 1e-6, best of 5
    let circle = TspInstance::circle(12, 0.4);
    let target = 12.0 * 2.0 * 0.4 * (std::f64::consts::PI / 12.0).sin();
    let ci_cfg = tsp::RingSolverConfig { steps: 1500, restarts: 5, seed: 0, ..Default::default() };
    let ci = tsp::solve(&circle, &ci_cfg).unwrap();
    let circle_ok = (ci.tour.length - target).abs() < 1e-6;

    // C=8 vs brute force: within 10% on >= 80% of 20 seeds, best of 5
    let mut c8 = 0;
    for seed in 0..20u64 {
        let inst = gen_tsp_instance(8, seed).unwrap();
        let cfg = tsp::RingSolverConfig { steps: 1500, restarts: 5, seed, ..Default::default() };
        let got = tsp::solve(&inst, &cfg).unwrap().tour.length;
        let best = tsp::brute_force_optimal(&inst).unwrap().length;
        if got <= best * 1.10 {
            c8 += 1;
        }
    }

    // C=30 vs nearest neighbor on >= 50% of 20 seeds, best of 5
    let mut c30 = 0;
    let mut max_solve = 0.0f64;
    for seed in 0..20u64 {
        let inst = gen_tsp_instance(30, seed).unwrap();
        let cfg = tsp::RingSolverConfig { restarts: 5, seed, ..Default::default() };
        let t0 = Instant::now();
        let got = tsp::solve(&inst, &cfg).unwrap().tour.length;
        max_solve = max_solve.max(t0.elapsed().as_secs_f64());
        if got <= tsp::nearest_neighbor(&inst, 0).length {
            c30 += 1;
        }
    }

    let pass =
        valid && sq_hits >= 9 && circle_ok && c8 >= 16 && c30 >= 10 && max_solve <= 120.0;
    report(
        9,
        "elastic ring TSP",
        pass,
        &format!(
            "validity fuzz 200/200 {}; square {sq_hits}/10 restarts optimal; circle {} (len {:.6} vs {target:.6}); C=8 {c8}/20 within 10% of brute force; C=30 {c30}/20 <= nearest-neighbor; max 30-city solve {max_solve:.0}s",
            pf(valid),
            pf(circle_ok),
            ci.tour.length
        ),
    );
    assert!(valid, "an invalid permutation escaped the solver");
    assert!(sq_hits >= 9, "square optimal in only {sq_hits}/10 restarts");
    assert!(circle_ok, "circle length {} vs {target}", ci.tour.length);
    assert!(c8 >= 16, "C=8 within 10% on only {c8}/20 seeds");
    assert!(c30 >= 10, "C=30 beat nearest-neighbor on only {c30}/20 seeds");
    assert!(max_solve <= 120.0, "a 30-city solve took {max_solve}s");
}

// ── criterion 10: determinism ───────────────────────────────────────────

fn run_cli(args: &[&str]) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_gnwm"))
        .args(args)
        .output()
        .expect("spawn gnwm");
    assert!(out.status.success(), "gnwm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn full_pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let data = root.join("data");
    let run = root.join("run");
    let ev = root.join("eval");
    let ro = root.join("roll");
    let tr = root.join("tree");
    let ts = root.join("tsp");
    run_cli(&["gen", "--paradigm", "B", "--steps", "60", "--seed", "5", "--out", data.to_str().unwrap()]);
    run_cli(&[
        "train", "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--out", run.to_str().unwrap(), "--epochs", "3", "--batch-size", "8", "--sigma", "1.0",
    ]);
    run_cli(&[
        "eval", "--checkpoint", run.join("model.gnwm").to_str().unwrap(),
        "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--out", ev.to_str().unwrap(), "--sigma", "1.0",
    ]);
    run_cli(&[
        "rollout", "--checkpoint", run.join("model.gnwm").to_str().unwrap(),
        "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--out", ro.to_str().unwrap(), "--steps", "20", "--snap", "--sigma", "1.0",
    ]);
    run_cli(&[
        "tree", "--checkpoint", run.join("model.gnwm").to_str().unwrap(),
        "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--out", tr.to_str().unwrap(), "--depth", "2", "--sigma", "1.0",
    ]);
    run_cli(&["tsp", "--cities", "8", "--seed", "3", "--restarts", "2", "--out", ts.to_str().unwrap()]);

    let mut artifacts = Vec::new();
    for dir in [&data, &run, &ev, &ro, &tr, &ts] {
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(root).unwrap().display().to_string();
            let bytes = std::fs::read(&p).unwrap();
            artifacts.push((rel, bytes));
        }
    }
    artifacts
}

#[test]
fn criterion_10_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = full_pipeline(dir_a.path());
    let b = full_pipeline(dir_b.path());
    assert_eq!(a.len(), b.len());
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        if name_a.ends_with("manifest.json") {
            // identical except the wall-time field
            let strip = |s: &str| -> String {
                s.lines().filter(|l| !l.contains("wall_time_seconds")).collect::<Vec<_>>().join("\n")
            };
            let (sa, sb) = (
                strip(&String::from_utf8_lossy(bytes_a)),
                strip(&String::from_utf8_lossy(bytes_b)),
            );
            if sa != sb {
                mismatches.push(name_a.clone());
            }
        } else {
            compared += 1;
            if bytes_a != bytes_b {
                mismatches.push(name_a.clone());
            }
        }
    }
    let pass = mismatches.is_empty();
    report(
        10,
        "bit-identical reruns",
        pass,
        &format!(
            "{compared} artifacts byte-identical across gen/train/eval/rollout/tree/tsp; manifests identical modulo wall time{}",
            if pass { String::new() } else { format!("; mismatches: {mismatches:?}") }
        ),
    );
    assert!(pass, "non-deterministic artifacts: {mismatches:?}");
}

// ── post-training behavioral probes (op-level oracles, not criteria) ────

/// Shared trained paradigm-A model (seed 0) for behavioral probes.
fn trained_a() -> &'static (ModelParams, GridTopology, Dataset) {
    static MODEL: OnceLock<(ModelParams, GridTopology, Dataset)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let ds = passive_dataset(0, 1200);
        let cfg = desk_config(Paradigm::PassiveBall, 0, A_EPOCHS);
        let trainer = Trainer::new(cfg, &ds).unwrap();
        let (trainer, _) = run_training(trainer, &ds, None).unwrap();
        (trainer.params, trainer.topo, ds)
    })
}

#[test]
fn encoder_translation_equivariance_after_training() {
    // translating the ball by one encoder-stride unit (2 px) moves the
    // argmax of the smeared-projected output by one grid cell
    let model = trained_b();
    let cfg = BallWorldConfig::default();
    let mut hits = 0;
    let mut total = 0;
    for gy in 3..12 {
        for gx in 3..12 {
            // place the ball at the center of grid cell (gy, gx): the
            // crop offset is 1 px, cells are 2 px
            let pos = (1.0 + 2.0 * gx as f64 + 0.5, 1.0 + 2.0 * gy as f64 + 0.5);
            let shifted = (pos.0 + 2.0, pos.1);
            let mut frames = Vec::new();
            for p in [pos, shifted] {
                let mut f = Frame::zeros(3, 32, 32);
                render_ball(&mut f, p, cfg.ball_radius, WHITE);
                frames.push(f);
            }
            let mut vals = Vec::new();
            for f in &frames {
                vals.extend(f.pixels.iter().map(|p| *p as f64));
            }
            let latents =
                eval::encode_inputs(&model.params, &model.topo, vals, vec![2, 3, 32, 32]).unwrap();
            let a = latents[0][0].argmax();
            let b = latents[1][0].argmax();
            total += 1;
            if b == a + 1 {
                hits += 1;
            }
        }
    }
    let rate = hits as f64 / total as f64;
    assert!(rate >= 0.9, "translation equivariance rate {rate:.3} over {total} positions");
}

#[test]
fn trained_predictor_shifts_one_hots_toward_the_action() {
    // argmax(project(smear(predict(onehot(n), Right)))) is the node right
    // of n for >= 90% of interior active nodes
    let model = trained_b();
    let maps = eval::bmu_map(&model.params, &model.topo, &model.train_data).unwrap();
    let active: Vec<bool> = maps[0].frames_of_node.iter().map(|f| !f.is_empty()).collect();
    let mut hits = 0;
    let mut total = 0;
    for row in 1..14 {
        for col in 1..13 {
            let node = row * 15 + col;
            if !active[node] || !active[node + 1] {
                continue;
            }
            let p0 = LatentDistribution::one_hot(225, node).unwrap();
            let next =
                eval::predict_next(&model.params, &model.topo, &[vec![p0]], Some(&[Action::Right]))
                    .unwrap();
            total += 1;
            if snap(&next[0][0]).argmax() == node + 1 {
                hits += 1;
            }
        }
    }
    let rate = hits as f64 / total.max(1) as f64;
    assert!(rate >= 0.9, "Right shifted correctly for {hits}/{total} interior nodes");
}

#[test]
fn passive_predictor_moves_mass_along_the_motion_direction() {
    // the action-free paradigm-A predictor still displaces the argmax in
    // the sign of the ground-truth velocity
    let (params, topo, ds) = trained_a();
    let video = ds.video().unwrap();
    let n = video.frames.len() - 1;
    let indices: Vec<usize> = (0..n).step_by(13).collect();
    let latents = eval::frame_latents(params, topo, ds, &indices).unwrap();
    let (mut agree_x, mut agree_y, mut moved_x, mut moved_y) = (0, 0, 0, 0);
    for (k, &i) in indices.iter().enumerate() {
        let state = latents[k].clone();
        let pred = eval::predict_next(params, topo, &[state], None).unwrap();
        let from = latents[k][0].argmax();
        let to = snap(&pred[0][0]).argmax();
        let (fr, fc) = (from / 15, from % 15);
        let (tr, tc) = (to / 15, to % 15);
        // true velocity sign at frame i from ground truth
        let dx_true = video.positions[i + 1][0].0 - video.positions[i][0].0;
        let dy_true = video.positions[i + 1][0].1 - video.positions[i][0].1;
        let dc = tc as i64 - fc as i64;
        let dr = tr as i64 - fr as i64;
        if dc != 0 {
            moved_x += 1;
            if (dc > 0) == (dx_true > 0.0) {
                agree_x += 1;
            }
        }
        if dr != 0 {
            moved_y += 1;
            if (dr > 0) == (dy_true > 0.0) {
                agree_y += 1;
            }
        }
    }
    let rate_x = agree_x as f64 / moved_x.max(1) as f64;
    let rate_y = agree_y as f64 / moved_y.max(1) as f64;
    assert!(
        moved_x + moved_y > 10,
        "predictor never moved the argmax ({moved_x}, {moved_y})"
    );
    assert!(
        rate_x > 0.5 && rate_y > 0.5,
        "motion-direction agreement x {rate_x:.2} ({moved_x} moves), y {rate_y:.2} ({moved_y} moves)"
    );
}

#[test]
fn two_hundred_steps_reduce_sim_loss_on_paradigm_b() {
    // smoke run: 200 optimizer steps lower l_sim below its step-1 value
    // for at least 9 of 10 seeds
    let mut wins = 0;
    for seed in 0..10u64 {
        let ds = action_dataset(100 + seed, 1200);
        let mut cfg = desk_config(Paradigm::ActionBall, seed, 1);
        cfg.alpha = gnwm::config::AlphaSchedule::Constant(1.0);
        let mut trainer = Trainer::new(cfg, &ds).unwrap();
        let mut first = None;
        let mut last = 0.0;
        'outer: for epoch in 0.. {
            let batches =
                gnwm::trainer::make_batches(ds.transition_count(), 64, seed, epoch).unwrap();
            for batch in &batches {
                let report = trainer.train_step(&ds, batch, 1.0).unwrap();
                if first.is_none() {
                    first = Some(report.l_sim);
                }
                last = report.l_sim;
                if trainer.step >= 200 {
                    break 'outer;
                }
            }
        }
        if last < first.unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 9, "l_sim fell below its step-1 value for only {wins}/10 seeds");
}
