//! End-to-end CLI checks through the real binary: artifact emission,
//! formats, exit codes, and rerun determinism on desk-tiny configs.

use std::path::Path;
use std::process::Command;

fn gnwm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnwm"))
}

fn run_ok(args: &[&str]) {
    let out = gnwm().args(args).output().expect("spawn gnwm");
    assert!(
        out.status.success(),
        "gnwm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(args: &[&str]) -> i32 {
    gnwm().args(args).output().expect("spawn gnwm").status.code().unwrap_or(-1)
}

#[test]
fn gen_writes_container_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    run_ok(&["gen", "--paradigm", "A", "--frames", "24", "--seed", "3", "--out", out.to_str().unwrap()]);
    let ds = gnwm::dataset::Dataset::load(&out.join("dataset.gnwm")).unwrap();
    assert_eq!(ds.paradigm, gnwm::dataset::Paradigm::PassiveBall);
    assert_eq!(ds.video().unwrap().frames.len(), 24);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));
    assert!(manifest.contains("config_echo"));
}

#[test]
fn gen_missing_paradigm_is_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnwm()
        .args(["gen", "--out", dir.path().join("x").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("paradigm"), "stderr: {err}");
}

#[test]
fn gen_bad_paradigm_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        exit_code(&["gen", "--paradigm", "Q", "--out", dir.path().join("x").to_str().unwrap()]),
        2
    );
}

#[test]
fn gen_tsp_writes_instance_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    run_ok(&["gen", "--paradigm", "tsp", "--cities", "12", "--seed", "5", "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(out.join("instance.txt")).unwrap();
    assert_eq!(text.lines().count(), 12);
    let inst = gnwm::tsp::instance_from_text(&text).unwrap();
    assert_eq!(inst.len(), 12);
}

#[test]
fn gen_pgm_export_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let pgm = dir.path().join("pgm");
    run_ok(&[
        "gen", "--paradigm", "A", "--frames", "4", "--seed", "1",
        "--out", out.to_str().unwrap(), "--pgm-dir", pgm.to_str().unwrap(),
    ]);
    for i in 0..4 {
        assert!(pgm.join(format!("frame_{i:05}.pgm")).exists());
    }
}

fn tiny_train(dir: &Path, seed: &str) -> (String, String) {
    let data = dir.join(format!("data{seed}"));
    let run = dir.join(format!("run{seed}"));
    run_ok(&["gen", "--paradigm", "B", "--steps", "40", "--seed", seed, "--out", data.to_str().unwrap()]);
    run_ok(&[
        "train",
        "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--out", run.to_str().unwrap(),
        "--epochs", "2",
        "--batch-size", "8",
        "--sigma", "1.0",
        "--seed", seed,
    ]);
    (data.display().to_string(), run.display().to_string())
}

#[test]
fn train_emits_metrics_checkpoint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = tiny_train(dir.path(), "7");
    let run = Path::new(&run);
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,epoch,l_collapse,l_wta,l_sim,l_total,alpha,gamma,util"));
    assert!(metrics.lines().count() > 2);
    assert!(run.join("model.gnwm").exists());
    assert!(run.join("manifest.json").exists());
    let (params, _) = gnwm::nets::load_checkpoint(&run.join("model.gnwm")).unwrap();
    assert!(params.spec.action_conditioned);
}

#[test]
fn rerun_same_seed_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run1) = tiny_train(dir.path(), "9");
    let dir2 = tempfile::tempdir().unwrap();
    let (_, run2) = tiny_train(dir2.path(), "9");
    let m1 = std::fs::read(Path::new(&run1).join("metrics.csv")).unwrap();
    let m2 = std::fs::read(Path::new(&run2).join("metrics.csv")).unwrap();
    assert_eq!(m1, m2);
    let c1 = std::fs::read(Path::new(&run1).join("model.gnwm")).unwrap();
    let c2 = std::fs::read(Path::new(&run2).join("model.gnwm")).unwrap();
    assert_eq!(c1, c2);
}

#[test]
fn eval_rollout_tree_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = tiny_train(dir.path(), "11");
    let data = Path::new(&data).join("dataset.gnwm");
    let ckpt = Path::new(&run).join("model.gnwm");
    let eval_out = dir.path().join("eval");
    run_ok(&[
        "eval",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--dataset", data.to_str().unwrap(),
        "--out", eval_out.to_str().unwrap(),
        "--sigma", "1.0",
    ]);
    let report = std::fs::read_to_string(eval_out.join("report.txt")).unwrap();
    assert!(report.contains("grid_utilization = "));
    assert!(report.contains("one_step_accuracy = "));
    assert!(eval_out.join("prototypes_ch0.pgm").exists());

    let roll_out = dir.path().join("roll");
    run_ok(&[
        "rollout",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--dataset", data.to_str().unwrap(),
        "--out", roll_out.to_str().unwrap(),
        "--steps", "6",
        "--snap",
        "--sigma", "1.0",
    ]);
    let csv = std::fs::read_to_string(roll_out.join("rollout.csv")).unwrap();
    assert!(csv.starts_with("step,l1_norm,max_entry,entry_std"));
    assert_eq!(csv.lines().count(), 8); // header + step 0 + 6 steps
    for line in csv.lines().skip(2) {
        let max_entry: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(max_entry, 1.0); // snapped states are exactly one-hot
    }

    let tree_out = dir.path().join("tree");
    run_ok(&[
        "tree",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--dataset", data.to_str().unwrap(),
        "--out", tree_out.to_str().unwrap(),
        "--depth", "2",
        "--sigma", "1.0",
    ]);
    let txt = std::fs::read_to_string(tree_out.join("tree.txt")).unwrap();
    assert!(txt.contains("nodes = 21")); // 1 + 4 + 16
    let svg = std::fs::read_to_string(tree_out.join("tree.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn tree_depth_arithmetic_matches_four_ary() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = tiny_train(dir.path(), "13");
    let tree_out = dir.path().join("tree3");
    run_ok(&[
        "tree",
        "--checkpoint", Path::new(&run).join("model.gnwm").to_str().unwrap(),
        "--dataset", Path::new(&data).join("dataset.gnwm").to_str().unwrap(),
        "--out", tree_out.to_str().unwrap(),
        "--depth", "3",
        "--sigma", "1.0",
    ]);
    let txt = std::fs::read_to_string(tree_out.join("tree.txt")).unwrap();
    assert!(txt.contains("nodes = 85")); // 1 + 4 + 16 + 64
}

#[test]
fn tsp_command_solves_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tsp");
    run_ok(&[
        "tsp", "--cities", "6", "--seed", "2", "--restarts", "2",
        "--out", out.to_str().unwrap(),
    ]);
    let tour = std::fs::read_to_string(out.join("tour.txt")).unwrap();
    let mut order: Vec<usize> =
        tour.lines().take(6).map(|l| l.parse().unwrap()).collect();
    order.sort_unstable();
    assert_eq!(order, vec![0, 1, 2, 3, 4, 5]);
    assert!(tour.contains("length = "));
    assert!(out.join("tour.svg").exists());
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("nearest_neighbor_length"));
}

#[test]
fn io_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        exit_code(&[
            "train",
            "--dataset", "/nonexistent/data.gnwm",
            "--out", dir.path().join("x").to_str().unwrap(),
        ]),
        4
    );
    // corrupt checkpoint
    let bad = dir.path().join("bad.gnwm");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let data = dir.path().join("d");
    run_ok(&["gen", "--paradigm", "A", "--frames", "4", "--out", data.to_str().unwrap()]);
    assert_eq!(
        exit_code(&[
            "eval",
            "--checkpoint", bad.to_str().unwrap(),
            "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
            "--out", dir.path().join("e").to_str().unwrap(),
        ]),
        4
    );
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(exit_code(&["bogus-subcommand"]), 2);
    let dir = tempfile::tempdir().unwrap();
    // batch size 1 violates the batch-mean invariant
    let data = dir.path().join("d");
    run_ok(&["gen", "--paradigm", "A", "--frames", "8", "--out", data.to_str().unwrap()]);
    assert_eq!(
        exit_code(&[
            "train",
            "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
            "--out", dir.path().join("r").to_str().unwrap(),
            "--batch-size", "1",
        ]),
        2
    );
}

#[test]
fn kernel_dump_flag_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    run_ok(&["gen", "--paradigm", "A", "--frames", "12", "--out", data.to_str().unwrap()]);
    let kcsv = dir.path().join("kernel.csv");
    run_ok(&[
        "train",
        "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--out", dir.path().join("r").to_str().unwrap(),
        "--epochs", "1",
        "--batch-size", "4",
        "--sigma", "1.5",
        "--dump-kernel", kcsv.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&kcsv).unwrap();
    assert_eq!(text.lines().count(), 9); // sigma 1.5 -> 9x9 kernel
    let first_row_sum: f64 = text.lines().next().unwrap().split(',').map(|v| v.parse::<f64>().unwrap()).sum();
    assert!(first_row_sum > 0.0);
}

#[test]
fn resume_flag_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    run_ok(&["gen", "--paradigm", "A", "--frames", "24", "--seed", "4", "--out", data.to_str().unwrap()]);
    // constant alpha so the 2-epoch prefix sees the same schedule values
    // as the first 2 epochs of the 4-epoch run
    let cfg = dir.path().join("train.cfg");
    std::fs::write(
        &cfg,
        "alpha_schedule = constant\nalpha_start = 1.0\nbatch_size = 8\nsigma = 1.0\n",
    )
    .unwrap();
    let full = dir.path().join("full");
    run_ok(&[
        "train", "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
        "--out", full.to_str().unwrap(), "--epochs", "4",
    ]);
    // interrupted run: 2 epochs, then resume to 4 with the same config
    let half = dir.path().join("half");
    run_ok(&[
        "train", "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
        "--out", half.to_str().unwrap(), "--epochs", "2",
    ]);
    let resumed = dir.path().join("resumed");
    run_ok(&[
        "train", "--dataset", data.join("dataset.gnwm").to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
        "--out", resumed.to_str().unwrap(), "--epochs", "4",
        "--resume", half.join("model.gnwm").to_str().unwrap(),
    ]);
    let a = std::fs::read(full.join("model.gnwm")).unwrap();
    let b = std::fs::read(resumed.join("model.gnwm")).unwrap();
    assert_eq!(a, b);
}
