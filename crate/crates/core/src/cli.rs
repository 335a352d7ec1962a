//! Command-line interface: dataset generation, training, evaluation,
//! rollouts, imagination trees, and TSP solving, with deterministic
//! artifact emission.
//!
//! Every command writes its artifacts into an output directory together
//! with exactly one `manifest.json` recording the command echo, resolved
//! config, seed, code version, paths, and wall time. Rerunning a command
//! with the same config and seed reproduces every artifact bit-identically
//! (the manifest's wall-time field is the one documented exception).
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numeric abort,
//! 4 I/O or malformed-input error.

use crate::config::{ConfigError, FlatConfig, TrainConfig};
use crate::dataset::{Dataset, Paradigm, Payload, VideoData};
use crate::envs::{self, Action, BallWorldConfig};
use crate::eval;
use crate::nets;
use crate::render;
use crate::topology::GridTopology;
use crate::trainer::{self, TrainError, Trainer};
use crate::tsp;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(
    name = "gnwm",
    version,
    about = "Grid-quantized neural world model: data generation, training, evaluation, and elastic ring TSP solving"
)]
pub struct Cli {
    /// Cap on worker threads for parallel sections (TSP restarts,
    /// batch-parallel convolutions).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset container (paradigms A-D) or a TSP instance.
    Gen {
        /// A, B, C, D, or tsp. Overrides the config file's `paradigm`.
        #[arg(long)]
        paradigm: Option<String>,
        /// Flat key-value config file; flags override file values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (dataset.gnwm or instance.txt plus manifest).
        #[arg(long)]
        out: PathBuf,
        /// Frame count for paradigms A and C.
        #[arg(long)]
        frames: Option<usize>,
        /// Action-step count for paradigm B.
        #[arg(long)]
        steps: Option<usize>,
        /// Token count for paradigm D.
        #[arg(long)]
        sequence_length: Option<usize>,
        /// City count for tsp.
        #[arg(long)]
        cities: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also export every frame as a PGM image into this directory.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Dump the fixed smearing kernel as CSV to this path.
        #[arg(long)]
        dump_kernel: Option<PathBuf>,
    },
    /// Post-training analysis: utilization, prototypes, topographic
    /// correlation, factorization or semantic clustering.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        dump_kernel: Option<PathBuf>,
    },
    /// Autoregressive rollout from a dataset frame.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Horizon length.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Snap to the argmax one-hot between steps.
        #[arg(long)]
        snap: bool,
        /// Action policy for action-conditioned models, e.g. "RRUL";
        /// cycled over the horizon. Defaults to cycling U,R,D,L.
        #[arg(long)]
        actions: Option<String>,
        /// Index of the dataset frame used as the initial state.
        #[arg(long, default_value_t = 0)]
        start_frame: usize,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Exhaustive action-conditioned imagination tree.
    Tree {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        start_frame: usize,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Solve a TSP instance with the elastic ring.
    Tsp {
        /// Plain-text instance (one `x y` per line). Omit to generate one.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// City count when generating.
        #[arg(long)]
        cities: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

// ── Error-to-exit-code mapping ──────────────────────────────────────────

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<envs::EnvError> for CliError {
    fn from(e: envs::EnvError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::dataset::DatasetError> for CliError {
    fn from(e: crate::dataset::DatasetError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<nets::NetError> for CliError {
    fn from(e: nets::NetError) -> Self {
        match e {
            nets::NetError::Io(io) => CliError::Io(io.to_string()),
            nets::NetError::BadCheckpoint { .. } => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        match e {
            eval::EvalError::Net(n) => n.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<tsp::TspError> for CliError {
    fn from(e: tsp::TspError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<crate::topology::TopologyError> for CliError {
    fn from(e: crate::topology::TopologyError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NumericAbort { .. } => CliError::Numeric(e.to_string()),
            TrainError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

// ── Run manifest ────────────────────────────────────────────────────────

/// Provenance record written atomically at the end of every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_echo: String,
    /// Verbatim config file text when one was given.
    pub raw_config: Option<String>,
    pub seed: u64,
    pub code_version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(e.to_string()))?;
        let tmp = dir.join("manifest.json.tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, dir.join("manifest.json"))?;
        Ok(())
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<FlatConfig, CliError> {
    match path {
        None => Ok(FlatConfig::empty()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(FlatConfig::parse(&text)?)
        }
    }
}

fn ball_config(cfg: &FlatConfig) -> Result<BallWorldConfig, CliError> {
    Ok(BallWorldConfig {
        frame_size: cfg.usize_or("frame_size", 32)?,
        ball_radius: cfg.f64_or("ball_radius", 3.0)?,
        action_step: cfg.f64_or("action_step", 2.0)?,
        velocity: (cfg.f64_or("velocity_x", 1.37)?, cfg.f64_or("velocity_y", 0.93)?),
    })
}

fn parse_actions(s: &str) -> Result<Vec<Action>, CliError> {
    s.chars()
        .map(|c| match c.to_ascii_uppercase() {
            'U' => Ok(Action::Up),
            'D' => Ok(Action::Down),
            'L' => Ok(Action::Left),
            'R' => Ok(Action::Right),
            other => Err(CliError::Usage(format!("bad action character {other:?} (use U/D/L/R)"))),
        })
        .collect()
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // best effort; a pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let argv: Vec<String> = std::env::args().collect();
    match dispatch(cli.command, &argv.join(" ")) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, command_echo: &str) -> Result<(), CliError> {
    let start = Instant::now();
    match command {
        Command::Gen { paradigm, config, out, frames, steps, sequence_length, cities, seed, pgm_dir } => {
            let mut cfg = load_config(&config)?;
            let raw = config.as_ref().map(|_| cfg.raw_text.clone());
            if let Some(p) = paradigm {
                cfg.set("paradigm", p);
            }
            if let Some(v) = frames {
                cfg.set("frames", v.to_string());
            }
            if let Some(v) = steps {
                cfg.set("steps", v.to_string());
            }
            if let Some(v) = sequence_length {
                cfg.set("sequence_length", v.to_string());
            }
            if let Some(v) = cities {
                cfg.set("cities", v.to_string());
            }
            if let Some(v) = seed {
                cfg.set("seed", v.to_string());
            }
            cmd_gen(&cfg, raw, &out, pgm_dir.as_deref(), command_echo, start)
        }
        Command::Train {
            dataset,
            config,
            out,
            seed,
            epochs,
            batch_size,
            learning_rate,
            sigma,
            resume,
            dump_kernel,
        } => {
            let mut cfg = load_config(&config)?;
            let raw = config.as_ref().map(|_| cfg.raw_text.clone());
            if let Some(v) = seed {
                cfg.set("seed", v.to_string());
            }
            if let Some(v) = epochs {
                cfg.set("epochs", v.to_string());
            }
            if let Some(v) = batch_size {
                cfg.set("batch_size", v.to_string());
            }
            if let Some(v) = learning_rate {
                cfg.set("learning_rate", v.to_string());
            }
            if let Some(v) = sigma {
                cfg.set("sigma", v.to_string());
            }
            cmd_train(&cfg, raw, &dataset, &out, resume.as_deref(), dump_kernel.as_deref(), command_echo, start)
        }
        Command::Eval { checkpoint, dataset, out, sigma, dump_kernel } => {
            cmd_eval(&checkpoint, &dataset, &out, sigma, dump_kernel.as_deref(), command_echo, start)
        }
        Command::Rollout { checkpoint, dataset, out, steps, snap, actions, start_frame, sigma } => {
            cmd_rollout(&checkpoint, &dataset, &out, steps, snap, actions.as_deref(), start_frame, sigma, command_echo, start)
        }
        Command::Tree { checkpoint, dataset, out, depth, start_frame, sigma } => {
            cmd_tree(&checkpoint, &dataset, &out, depth, start_frame, sigma, command_echo, start)
        }
        Command::Tsp { instance, cities, seed, restarts, config, out } => {
            let mut cfg = load_config(&config)?;
            let raw = config.as_ref().map(|_| cfg.raw_text.clone());
            if let Some(v) = cities {
                cfg.set("cities", v.to_string());
            }
            if let Some(v) = seed {
                cfg.set("seed", v.to_string());
            }
            if let Some(v) = restarts {
                cfg.set("restarts", v.to_string());
            }
            cmd_tsp(&cfg, raw, instance.as_deref(), &out, command_echo, start)
        }
    }
}

// ── gen ─────────────────────────────────────────────────────────────────

fn cmd_gen(
    cfg: &FlatConfig,
    raw_config: Option<String>,
    out: &Path,
    pgm_dir: Option<&Path>,
    command_echo: &str,
    start: Instant,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let seed = cfg.u64_or("seed", 0)?;
    let tag = cfg
        .get("paradigm")
        .ok_or(CliError::Usage(ConfigError::MissingKey { key: "paradigm" }.to_string()))?;

    if tag.eq_ignore_ascii_case("tsp") {
        let c = cfg.usize_or("cities", 30)?;
        let instance = envs::gen_tsp_instance(c, seed)?;
        let path = out.join("instance.txt");
        std::fs::write(&path, tsp::instance_to_text(&instance))?;
        RunManifest {
            command: command_echo.to_string(),
            config_echo: cfg.canonical_text(),
            raw_config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: vec![],
            outputs: vec![path.display().to_string()],
            wall_time_seconds: start.elapsed().as_secs_f64(),
        }
        .write(out)?;
        return Ok(());
    }

    let paradigm = Paradigm::from_letter(tag)
        .ok_or_else(|| CliError::Usage(format!("paradigm must be A, B, C, D, or tsp, got {tag:?}")))?;
    let ball = ball_config(cfg)?;
    let payload = match paradigm {
        Paradigm::PassiveBall => {
            let n = cfg.usize_or("frames", 1200)?;
            let v = envs::gen_passive_video(&ball, n, seed)?;
            Payload::Video(VideoData {
                frames: v.frames,
                actions: None,
                positions: v.positions.iter().map(|p| vec![*p]).collect(),
            })
        }
        Paradigm::ActionBall => {
            let n = cfg.usize_or("steps", 1200)?;
            let ep = envs::gen_action_episode(&ball, n, seed)?;
            Payload::Video(VideoData {
                frames: ep.frames,
                actions: Some(ep.actions),
                positions: ep.positions.iter().map(|p| vec![*p]).collect(),
            })
        }
        Paradigm::TwoBall => {
            let n = cfg.usize_or("frames", 1200)?;
            let v = envs::gen_two_ball_video(&ball, n, seed)?;
            Payload::Video(VideoData {
                frames: v.frames,
                actions: None,
                positions: v.positions.iter().map(|p| vec![p[0], p[1]]).collect(),
            })
        }
        Paradigm::Grammar => {
            let n = cfg.usize_or("sequence_length", 1200)?;
            Payload::Grammar(envs::gen_grammar_corpus(seed, n)?)
        }
    };
    let dataset =
        Dataset { paradigm, seed, config_echo: cfg.canonical_text(), payload };
    let ds_path = out.join("dataset.gnwm");
    dataset.save(&ds_path)?;
    let mut outputs = vec![ds_path.display().to_string()];

    if let Some(dir) = pgm_dir {
        std::fs::create_dir_all(dir)?;
        if let Some(video) = dataset.video() {
            for (i, frame) in video.frames.iter().enumerate() {
                let p = dir.join(format!("frame_{i:05}.pgm"));
                crate::dataset::write_pgm(frame, &p)?;
            }
            outputs.push(format!("{} ({} frames)", dir.display(), video.frames.len()));
        }
    }

    RunManifest {
        command: command_echo.to_string(),
        config_echo: cfg.canonical_text(),
        raw_config,
        seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![],
        outputs,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &FlatConfig,
    raw_config: Option<String>,
    dataset_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    dump_kernel: Option<&Path>,
    command_echo: &str,
    start: Instant,
) -> Result<(), CliError> {
    let dataset = Dataset::load(dataset_path)?;
    let tc = TrainConfig::from_flat(cfg, dataset.paradigm)?;
    std::fs::create_dir_all(out)?;
    let trainer = match resume {
        Some(ckpt) => Trainer::resume(tc, &dataset, ckpt)?,
        None => Trainer::new(tc, &dataset)?,
    };
    if let Some(path) = dump_kernel {
        std::fs::write(path, trainer.topo.kernel_csv())?;
    }
    let seed = trainer.config.seed;
    let result = trainer::run_training(trainer, &dataset, Some(out));
    let (trainer, _log) = match result {
        Ok(v) => v,
        Err(e @ TrainError::NumericAbort { .. }) => {
            // diagnostic dump, then exit 3
            std::fs::write(out.join("abort.txt"), format!("{e}\n"))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let _ = trainer;
    RunManifest {
        command: command_echo.to_string(),
        config_echo: cfg.canonical_text(),
        raw_config,
        seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![dataset_path.display().to_string()],
        outputs: vec![
            out.join("model.gnwm").display().to_string(),
            out.join("metrics.csv").display().to_string(),
        ],
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}

fn load_model(
    checkpoint: &Path,
    sigma: Option<f64>,
) -> Result<(nets::ModelParams, GridTopology), CliError> {
    let (params, _) = nets::load_checkpoint(checkpoint)?;
    let topo = GridTopology::planar(params.spec.grid_h, params.spec.grid_w, sigma.unwrap_or(1.5))?;
    Ok((params, topo))
}

// ── eval ────────────────────────────────────────────────────────────────

fn cmd_eval(
    checkpoint: &Path,
    dataset_path: &Path,
    out: &Path,
    sigma: Option<f64>,
    dump_kernel: Option<&Path>,
    command_echo: &str,
    start: Instant,
) -> Result<(), CliError> {
    let dataset = Dataset::load(dataset_path)?;
    let (params, topo) = load_model(checkpoint, sigma)?;
    std::fs::create_dir_all(out)?;
    if let Some(path) = dump_kernel {
        std::fs::write(path, topo.kernel_csv())?;
    }
    let mut report = String::new();
    let mut outputs = Vec::new();

    let maps = eval::bmu_map(&params, &topo, &dataset)?;
    let util = eval::grid_utilization(&params, &topo, &dataset)?;
    let _ = writeln!(report, "paradigm = {}", dataset.paradigm.letter());
    let _ = writeln!(report, "grid_utilization = {util}");
    for (c, map) in maps.iter().enumerate() {
        let _ = writeln!(report, "channel_{c}_utilization = {}", map.utilization());
    }

    match dataset.paradigm {
        Paradigm::Grammar => {
            let corpus = dataset.grammar().unwrap();
            let sem = eval::semantic_clustering_metrics(&params, &topo, corpus)?;
            let _ = writeln!(report, "distinct_bmus = {}", sem.distinct_bmus);
            let _ = writeln!(report, "intra_mean_dist = {:.6}", sem.intra_mean_dist);
            let _ = writeln!(report, "inter_mean_dist = {:.6}", sem.inter_mean_dist);
            let _ = writeln!(report, "intra_inter_ratio = {:.6}", sem.ratio);
        }
        Paradigm::TwoBall => {
            let fr = eval::factorization_metrics(&params, &topo, &dataset)?;
            let _ = writeln!(report, "channel_ball_assignment = {},{}", fr.assignment[0], fr.assignment[1]);
            let _ = writeln!(report, "matched_corr = {:.6},{:.6}", fr.matched[0], fr.matched[1]);
            let _ = writeln!(report, "cross_corr = {:.6},{:.6}", fr.cross[0], fr.cross[1]);
        }
        _ => {
            let video = dataset.video().unwrap();
            let positions: Vec<(f64, f64)> = video.positions.iter().map(|p| p[0]).collect();
            match eval::topographic_correlation(&maps[0], &positions, &topo) {
                Ok(t) => {
                    let _ = writeln!(report, "topographic_score = {:.6}", t.score);
                    let _ = writeln!(report, "topographic_rho_x = {:.6}", t.rho_x);
                    let _ = writeln!(report, "topographic_rho_y = {:.6}", t.rho_y);
                    let _ = writeln!(report, "topographic_symmetry = {}", t.symmetry);
                }
                Err(e) => {
                    let _ = writeln!(report, "topographic_score = unavailable ({e})");
                }
            }
            if dataset.paradigm == Paradigm::ActionBall {
                let acc = eval::one_step_accuracy(&params, &topo, &dataset)?;
                let _ = writeln!(report, "one_step_accuracy = {acc:.6}");
            }
        }
    }

    // prototype montage per channel (video datasets)
    if dataset.video().is_some() {
        for (c, map) in maps.iter().enumerate() {
            let protos = eval::prototype_states(map, &dataset)?;
            let pgm = render::montage_pgm(&protos, params.spec.grid_h, params.spec.grid_w);
            let path = out.join(format!("prototypes_ch{c}.pgm"));
            std::fs::write(&path, pgm)?;
            outputs.push(path.display().to_string());
        }
    }

    let report_path = out.join("report.txt");
    std::fs::write(&report_path, &report)?;
    outputs.push(report_path.display().to_string());

    RunManifest {
        command: command_echo.to_string(),
        config_echo: String::new(),
        raw_config: None,
        seed: params.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![checkpoint.display().to_string(), dataset_path.display().to_string()],
        outputs,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}

// ── rollout ─────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn cmd_rollout(
    checkpoint: &Path,
    dataset_path: &Path,
    out: &Path,
    steps: usize,
    snap: bool,
    actions: Option<&str>,
    start_frame: usize,
    sigma: Option<f64>,
    command_echo: &str,
    start: Instant,
) -> Result<(), CliError> {
    let dataset = Dataset::load(dataset_path)?;
    let (params, topo) = load_model(checkpoint, sigma)?;
    std::fs::create_dir_all(out)?;
    let p0 = initial_state(&params, &topo, &dataset, start_frame)?;
    let policy = rollout_policy(&params, actions)?;
    let trace = eval::rollout(&params, &topo, p0, policy.as_deref(), steps, snap)?;
    let csv_path = out.join("rollout.csv");
    std::fs::write(&csv_path, trace.to_csv())?;

    let mut report = String::new();
    let _ = writeln!(report, "steps = {steps}");
    let _ = writeln!(report, "snapping = {snap}");
    let first = trace.stats[1.min(trace.stats.len() - 1)];
    let last = trace.stats.last().unwrap();
    let _ = writeln!(report, "step1_max_entry = {:.9}", first.max_entry);
    let _ = writeln!(report, "final_max_entry = {:.9}", last.max_entry);
    let _ = writeln!(report, "final_entry_std = {:.9}", last.entry_std);
    let _ = writeln!(report, "final_l1_norm = {:.9}", last.l1_norm);
    let report_path = out.join("report.txt");
    std::fs::write(&report_path, &report)?;

    RunManifest {
        command: command_echo.to_string(),
        config_echo: String::new(),
        raw_config: None,
        seed: params.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![checkpoint.display().to_string(), dataset_path.display().to_string()],
        outputs: vec![csv_path.display().to_string(), report_path.display().to_string()],
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}

fn initial_state(
    params: &nets::ModelParams,
    topo: &GridTopology,
    dataset: &Dataset,
    start_frame: usize,
) -> Result<Vec<crate::topology::LatentDistribution>, CliError> {
    match dataset.paradigm {
        Paradigm::Grammar => {
            let corpus = dataset.grammar().unwrap();
            let word = corpus.sequence.get(start_frame).copied().unwrap_or(0) as usize;
            let latents = eval::word_latents(params, topo, corpus)?;
            Ok(latents[word].clone())
        }
        _ => {
            let n = dataset.video().map(|v| v.frames.len()).unwrap_or(0);
            if start_frame >= n {
                return Err(CliError::Usage(format!(
                    "start frame {start_frame} out of range for {n} frames"
                )));
            }
            let latents = eval::frame_latents(params, topo, dataset, &[start_frame])?;
            Ok(latents.into_iter().next().unwrap())
        }
    }
}

fn rollout_policy(
    params: &nets::ModelParams,
    actions: Option<&str>,
) -> Result<Option<Vec<Action>>, CliError> {
    if params.spec.action_conditioned {
        match actions {
            Some(s) => Ok(Some(parse_actions(s)?)),
            None => Ok(Some(vec![Action::Up, Action::Right, Action::Down, Action::Left])),
        }
    } else {
        if actions.is_some() {
            return Err(CliError::Usage("this model takes no actions".into()));
        }
        Ok(None)
    }
}

// ── tree ────────────────────────────────────────────────────────────────

fn cmd_tree(
    checkpoint: &Path,
    dataset_path: &Path,
    out: &Path,
    depth: usize,
    start_frame: usize,
    sigma: Option<f64>,
    command_echo: &str,
    start: Instant,
) -> Result<(), CliError> {
    let dataset = Dataset::load(dataset_path)?;
    let (params, topo) = load_model(checkpoint, sigma)?;
    if !params.spec.action_conditioned {
        return Err(CliError::Usage("imagination trees need an action-conditioned model".into()));
    }
    std::fs::create_dir_all(out)?;
    let p0 = initial_state(&params, &topo, &dataset, start_frame)?;
    let tree = eval::imagination_tree(&params, &topo, &p0[0], depth)?;

    let svg_path = out.join("tree.svg");
    std::fs::write(&svg_path, tree.to_svg(&topo))?;
    let mut text = String::new();
    let _ = writeln!(text, "root = {}", tree.root);
    let _ = writeln!(text, "depth = {}", tree.depth);
    let _ = writeln!(text, "nodes = {}", tree.nodes.len());
    for (i, n) in tree.nodes.iter().enumerate() {
        let _ = writeln!(
            text,
            "{i}: parent={} action={} grid_node={} depth={}",
            n.parent.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            n.action.map(|a| "UDLR".chars().nth(a.id() as usize).unwrap().to_string()).unwrap_or_else(|| "-".into()),
            n.grid_node,
            n.depth
        );
    }
    let txt_path = out.join("tree.txt");
    std::fs::write(&txt_path, text)?;

    RunManifest {
        command: command_echo.to_string(),
        config_echo: String::new(),
        raw_config: None,
        seed: params.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![checkpoint.display().to_string(), dataset_path.display().to_string()],
        outputs: vec![svg_path.display().to_string(), txt_path.display().to_string()],
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}

// ── tsp ─────────────────────────────────────────────────────────────────

fn cmd_tsp(
    cfg: &FlatConfig,
    raw_config: Option<String>,
    instance_path: Option<&Path>,
    out: &Path,
    command_echo: &str,
    start: Instant,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let seed = cfg.u64_or("seed", 0)?;
    let (instance, input_desc) = match instance_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            (tsp::instance_from_text(&text)?, p.display().to_string())
        }
        None => {
            let c = cfg.usize_or("cities", 30)?;
            (envs::gen_tsp_instance(c, seed)?, format!("generated C={c} seed={seed}"))
        }
    };
    let solver = tsp::RingSolverConfig {
        ring_factor: cfg.f64_or("ring_factor", 2.5)?,
        sigma_start: cfg.get_parsed::<f64>("sigma_start", "a real number")?,
        sigma_end: cfg.f64_or("sigma_end", 0.5)?,
        steps: cfg.usize_or("tsp_steps", 3000)?,
        lambda0: cfg.f64_or("lambda0", 0.3)?,
        learning_rate: cfg.f64_or("tsp_learning_rate", 0.03)?,
        restarts: cfg.usize_or("restarts", 5)?,
        seed,
        alpha_start: cfg.f64_or("alpha_start", 3.0)?,
    };
    let report = tsp::solve(&instance, &solver)?;

    let tour_path = out.join("tour.txt");
    std::fs::write(&tour_path, tsp::tour_to_text(&report.tour))?;
    let svg_path = out.join("tour.svg");
    std::fs::write(&svg_path, tsp::tour_svg(&instance, &report.tour))?;

    let mut text = String::new();
    let _ = writeln!(text, "cities = {}", instance.len());
    let _ = writeln!(text, "ring_size = {}", report.ring_size);
    let _ = writeln!(text, "best_restart = {}", report.best_restart);
    let _ = writeln!(text, "length = {:.12}", report.tour.length);
    let nn = tsp::nearest_neighbor(&instance, 0);
    let _ = writeln!(text, "nearest_neighbor_length = {:.12}", nn.length);
    for r in &report.restarts {
        let _ = writeln!(
            text,
            "restart_{} = length {:.12}, thermo {:.6}, elastic {:.6}, distinct_nodes {}",
            r.restart, r.length, r.final_thermo, r.final_elastic, r.distinct_nodes
        );
    }
    let report_path = out.join("report.txt");
    std::fs::write(&report_path, text)?;

    RunManifest {
        command: command_echo.to_string(),
        config_echo: cfg.canonical_text(),
        raw_config,
        seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![input_desc],
        outputs: vec![
            tour_path.display().to_string(),
            svg_path.display().to_string(),
            report_path.display().to_string(),
        ],
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(())
}
