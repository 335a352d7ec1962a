//! Training loop: epoch-shuffled batches, the two-branch forward pass,
//! alpha heating, optimizer updates, metrics logging, and checkpointing.
//!
//! Branch layout per step (one shared encoder binding serves both):
//!   prediction p: encode(x_t) -> smear -> project -> predict(+action)
//!                 -> smear -> project
//!   target     z: encode(x_{t+1}) -> smear -> project
//!
//! The predictor branch never sees the next frame and the target branch
//! never sees the action; gradients reach the encoder through both
//! branches every step (no stop-gradient, no target copy).
//!
//! Thermodynamic terms are computed independently per grid channel and
//! averaged, so a dual-grid model balances each channel's occupancy on its
//! own.

use crate::config::TrainConfig;
use crate::dataset::{Dataset, Paradigm, Payload};
use crate::envs::Action;
use crate::eval;
use crate::nets::{self, ModelParams, ModelSpec, ParamBinding};
use crate::opt::{Adam, AdamConfig};
use crate::tensor::{Tape, TensorError, Var};
use crate::thermo::{self, ThermoLossReport};
use crate::topology::{GridTopology, TopologyError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::Write;
use std::path::Path;

pub type TrainResult<T> = Result<T, TrainError>;

#[derive(Debug)]
pub enum TrainError {
    DatasetTooSmall { transitions: usize, batch: usize },
    WrongDataset { expected: Paradigm, got: Paradigm },
    /// Loss went non-finite or under the analytic floor; both indicate a
    /// bug, never a recoverable state. Diagnostics identify the batch and
    /// the parameter state.
    NumericAbort { step: u64, batch: Vec<usize>, params_checksum: u64, detail: String },
    Net(nets::NetError),
    Eval(eval::EvalError),
    Topology(TopologyError),
    Thermo(thermo::ThermoError),
    Tensor(TensorError),
    Io(std::io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::DatasetTooSmall { transitions, batch } => {
                write!(f, "dataset has {transitions} transitions, fewer than batch size {batch}")
            }
            TrainError::WrongDataset { expected, got } => {
                write!(f, "config paradigm {} but dataset is {}", expected.letter(), got.letter())
            }
            TrainError::NumericAbort { step, batch, params_checksum, detail } => write!(
                f,
                "numeric abort at step {step}: {detail} (batch {batch:?}, params checksum {params_checksum:#018x})",
            ),
            TrainError::Net(e) => write!(f, "{e}"),
            TrainError::Eval(e) => write!(f, "{e}"),
            TrainError::Topology(e) => write!(f, "{e}"),
            TrainError::Thermo(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<nets::NetError> for TrainError {
    fn from(e: nets::NetError) -> Self {
        TrainError::Net(e)
    }
}

impl From<eval::EvalError> for TrainError {
    fn from(e: eval::EvalError) -> Self {
        TrainError::Eval(e)
    }
}

impl From<TopologyError> for TrainError {
    fn from(e: TopologyError) -> Self {
        TrainError::Topology(e)
    }
}

impl From<thermo::ThermoError> for TrainError {
    fn from(e: thermo::ThermoError) -> Self {
        TrainError::Thermo(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

// ── Batching ────────────────────────────────────────────────────────────

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    // splitmix-style mix so (seed, epoch) streams are independent
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Epoch-shuffled transition indices, all used once, short tail dropped.
pub fn make_batches(
    n_transitions: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> TrainResult<Vec<Vec<usize>>> {
    if n_transitions < batch_size {
        return Err(TrainError::DatasetTooSmall { transitions: n_transitions, batch: batch_size });
    }
    let mut idx: Vec<usize> = (0..n_transitions).collect();
    idx.shuffle(&mut epoch_rng(seed, epoch));
    Ok(idx.chunks_exact(batch_size).map(|c| c.to_vec()).collect())
}

// ── Forward pipeline pieces ─────────────────────────────────────────────

/// smear -> per-channel project; returns (rows [B*grids, D] grouped by
/// channel-major order, grid view [B, grids, H, W]).
pub fn smear_project(
    tape: &mut Tape,
    topo: &GridTopology,
    spec: &ModelSpec,
    logits: Var,
) -> TrainResult<(Var, Var)> {
    let smeared = topo.smear(tape, logits)?;
    let b = tape.shape(smeared)[0];
    let d = spec.d();
    // project each channel's rows independently: [B, C, H, W] rows are
    // (b, c) pairs; flattening to [B*C, D] keeps channels separable
    let flat = tape.reshape(smeared, vec![b * spec.grids, d])?;
    let rows = crate::topology::project(tape, flat)?;
    let grid = tape.reshape(rows, vec![b, spec.grids, spec.grid_h, spec.grid_w])?;
    Ok((rows, grid))
}

/// Per-channel thermodynamic losses averaged over channels.
///
/// `p_rows`/`z_rows` are [B*grids, D] with rows ordered (b, c); channel c's
/// rows are the stride-`grids` subsequence starting at c.
fn channelwise_thermo(
    tape: &mut Tape,
    spec: &ModelSpec,
    p_rows: Var,
    z_rows: Var,
    b: usize,
    alpha: f64,
    gamma: f64,
) -> TrainResult<(Var, ThermoLossReport)> {
    let grids = spec.grids;
    let d = spec.d();
    if grids == 1 {
        let g = thermo::thermo_graph(tape, p_rows, z_rows, alpha, gamma)?;
        let report = g.report(tape, alpha, gamma);
        return Ok((g.total, report));
    }
    // split channels via transpose of the (b, c) row grid
    let mut totals = Vec::with_capacity(grids);
    let mut acc = ThermoLossReport {
        l_collapse: 0.0,
        l_wta: 0.0,
        l_sim: 0.0,
        l_total: 0.0,
        alpha,
        gamma,
    };
    let p_bc = tape.reshape(p_rows, vec![b, grids * d])?;
    let z_bc = tape.reshape(z_rows, vec![b, grids * d])?;
    for c in 0..grids {
        // gather channel c rows: use matmul with a selection matrix is
        // wasteful; instead reshape + crop via CropCenter is not exact for
        // channel slicing, so select with a constant projection matrix
        // [grids*d, d] that keeps channel c.
        let mut sel = vec![0.0; grids * d * d];
        for j in 0..d {
            sel[(c * d + j) * d + j] = 1.0;
        }
        let sel_var = tape.constant(sel, vec![grids * d, d])?;
        let pc = tape.matmul(p_bc, sel_var)?;
        let zc = tape.matmul(z_bc, sel_var)?;
        let g = thermo::thermo_graph(tape, pc, zc, alpha, gamma)?;
        let r = g.report(tape, alpha, gamma);
        acc.l_collapse += r.l_collapse / grids as f64;
        acc.l_wta += r.l_wta / grids as f64;
        acc.l_sim += r.l_sim / grids as f64;
        acc.l_total += r.l_total / grids as f64;
        totals.push(g.total);
    }
    let mut sum = totals[0];
    for t in &totals[1..] {
        sum = tape.add(sum, *t)?;
    }
    let total = tape.scale(sum, 1.0 / grids as f64);
    Ok((total, acc))
}

/// Batch input gathering: frames to [B, 3, S, S] values (f64), or grammar
/// embeddings to [B, 32].
fn gather_inputs(dataset: &Dataset, batch: &[usize], next: bool) -> (Vec<f64>, Vec<usize>) {
    match &dataset.payload {
        Payload::Video(v) => {
            let f0 = &v.frames[0];
            let (c, h, w) = (f0.channels, f0.height, f0.width);
            let mut out = Vec::with_capacity(batch.len() * c * h * w);
            for &i in batch {
                let f = &v.frames[if next { i + 1 } else { i }];
                out.extend(f.pixels.iter().map(|p| *p as f64));
            }
            (out, vec![batch.len(), c, h, w])
        }
        Payload::Grammar(g) => {
            let mut out = Vec::with_capacity(batch.len() * crate::envs::GRAMMAR_EMBED_DIM);
            for &i in batch {
                let w = g.sequence[if next { i + 1 } else { i }] as usize;
                out.extend_from_slice(g.embedding(w));
            }
            (out, vec![batch.len(), crate::envs::GRAMMAR_EMBED_DIM])
        }
    }
}

fn gather_actions(dataset: &Dataset, batch: &[usize]) -> Option<Vec<Action>> {
    match &dataset.payload {
        Payload::Video(v) => v.actions.as_ref().map(|acts| batch.iter().map(|&i| acts[i]).collect()),
        Payload::Grammar(_) => None,
    }
}

// ── Training state ──────────────────────────────────────────────────────

pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub topo: GridTopology,
    pub adam: Adam,
    /// Global step counter across epochs (and resumes).
    pub step: u64,
    pub start_epoch: usize,
}

/// One metrics row per optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub l_collapse: f64,
    pub l_wta: f64,
    pub l_sim: f64,
    pub l_total: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Grid utilization snapshot; populated at cadence boundaries and on
    /// the final row.
    pub util: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str =
        "step,epoch,l_collapse,l_wta,l_sim,l_total,alpha,gamma,util";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                r.step,
                r.epoch,
                r.l_collapse,
                r.l_wta,
                r.l_sim,
                r.l_total,
                r.alpha,
                r.gamma,
                r.util.map(|u| u.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

pub fn model_spec_for(config: &TrainConfig, dataset: &Dataset) -> ModelSpec {
    let encoder = match dataset.paradigm {
        Paradigm::Grammar => nets::EncoderKind::Mlp { in_dim: crate::envs::GRAMMAR_EMBED_DIM },
        _ => nets::EncoderKind::Retinotopic,
    };
    let frame_size = dataset.frame_geometry().map(|(_, h, _)| h).unwrap_or(0);
    ModelSpec {
        encoder,
        grids: dataset.paradigm.grids(),
        grid_h: config.grid_h,
        grid_w: config.grid_w,
        frame_size,
        action_conditioned: dataset.paradigm.action_conditioned(),
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> TrainResult<Self> {
        if config.paradigm != dataset.paradigm {
            return Err(TrainError::WrongDataset { expected: config.paradigm, got: dataset.paradigm });
        }
        let spec = model_spec_for(&config, dataset);
        let params = ModelParams::init(spec, config.seed)?;
        let topo = GridTopology::planar(config.grid_h, config.grid_w, config.sigma)?;
        let adam = Adam::new(
            AdamConfig { lr: config.learning_rate, ..Default::default() },
            &params.sizes(),
        );
        Ok(Trainer { config, params, topo, adam, step: 0, start_epoch: 0 })
    }

    /// Alpha for the current global step given the total step budget.
    fn alpha_at(&self, total_steps: u64) -> f64 {
        let progress = if total_steps <= 1 {
            1.0
        } else {
            self.step as f64 / total_steps as f64
        };
        self.config.alpha.at(progress)
    }

    /// Forward both branches, backward, optimizer update, grads zeroed (a
    /// fresh tape per step starts from zero; the explicit call documents
    /// the contract).
    pub fn train_step(
        &mut self,
        dataset: &Dataset,
        batch: &[usize],
        alpha: f64,
    ) -> TrainResult<ThermoLossReport> {
        let spec = self.params.spec;
        let mut tape = Tape::new();
        tape.zero_grads();
        let binding: ParamBinding = self.params.bind(&mut tape);

        // prediction branch: current frame (+ action) only
        let (x_vals, x_shape) = gather_inputs(dataset, batch, false);
        let x_t = tape.leaf(x_vals, x_shape, false)?;
        let enc_t = nets::encode(&mut tape, &self.params, &binding, x_t)?;
        let (_, p_grid) = smear_project(&mut tape, &self.topo, &spec, enc_t)?;
        let actions = gather_actions(dataset, batch);
        let pred_logits =
            nets::predict(&mut tape, &self.params, &binding, p_grid, actions.as_deref())?;
        let (p_rows, _) = smear_project(&mut tape, &self.topo, &spec, pred_logits)?;

        // target branch: next frame only, same encoder binding
        let (z_vals, z_shape) = gather_inputs(dataset, batch, true);
        let x_next = tape.leaf(z_vals, z_shape, false)?;
        let enc_next = nets::encode(&mut tape, &self.params, &binding, x_next)?;
        let (z_rows, _) = smear_project(&mut tape, &self.topo, &spec, enc_next)?;

        let (total, report) = channelwise_thermo(
            &mut tape,
            &spec,
            p_rows,
            z_rows,
            batch.len(),
            alpha,
            self.config.gamma,
        )?;

        let floor = thermo::theoretical_floor(spec.d());
        let bad_floor = report.l_collapse + report.l_wta < floor - 1e-6;
        if !report.l_total.is_finite() || bad_floor {
            return Err(TrainError::NumericAbort {
                step: self.step,
                batch: batch.to_vec(),
                params_checksum: self.params.checksum(),
                detail: if bad_floor {
                    format!("thermo pair {} below floor {floor}", report.l_collapse + report.l_wta)
                } else {
                    "non-finite loss".into()
                },
            });
        }

        tape.backward(total)?;
        let grads = binding.grads(&tape);
        let mut tensors: Vec<crate::tensor::Tensor> =
            self.params.tensors.iter().map(|(_, t)| t.clone()).collect();
        self.adam.step(&mut tensors, &grads);
        for ((_, dst), src) in self.params.tensors.iter_mut().zip(tensors) {
            *dst = src;
        }
        self.step += 1;
        Ok(report)
    }

    fn adam_extras(&self) -> nets::ExtraArrays {
        let mut extras: nets::ExtraArrays = vec![(
            "trainer.state".into(),
            vec![3],
            vec![self.adam.t as f64, self.step as f64, self.start_epoch as f64],
        )];
        for (i, (name, _)) in self.params.tensors.iter().enumerate() {
            extras.push((format!("adam.m.{name}"), vec![self.adam.m[i].len()], self.adam.m[i].clone()));
            extras.push((format!("adam.v.{name}"), vec![self.adam.v[i].len()], self.adam.v[i].clone()));
        }
        extras
    }

    /// Restore a trainer mid-run from a checkpoint written by `run_training`.
    pub fn resume(config: TrainConfig, dataset: &Dataset, ckpt: &Path) -> TrainResult<Self> {
        let (params, extras) = nets::load_checkpoint(ckpt)?;
        let topo = GridTopology::planar(config.grid_h, config.grid_w, config.sigma)?;
        let mut adam = Adam::new(
            AdamConfig { lr: config.learning_rate, ..Default::default() },
            &params.sizes(),
        );
        let mut step = 0u64;
        let mut start_epoch = 0usize;
        for (name, _, values) in &extras {
            if name == "trainer.state" {
                adam.t = values[0] as u64;
                step = values[1] as u64;
                start_epoch = values[2] as usize;
            } else if let Some(pname) = name.strip_prefix("adam.m.") {
                if let Some(i) = params.tensors.iter().position(|(n, _)| n == pname) {
                    adam.m[i] = values.clone();
                }
            } else if let Some(pname) = name.strip_prefix("adam.v.") {
                if let Some(i) = params.tensors.iter().position(|(n, _)| n == pname) {
                    adam.v[i] = values.clone();
                }
            }
        }
        if config.paradigm != dataset.paradigm {
            return Err(TrainError::WrongDataset { expected: config.paradigm, got: dataset.paradigm });
        }
        Ok(Trainer { config, params, topo, adam, step, start_epoch })
    }
}

/// Full deterministic run. Checkpoints land in `out_dir` (when given) at the
/// snapshot cadence as `ckpt_epoch_NNNN.gnwm` plus a final `model.gnwm`;
/// metrics flush per epoch to `metrics.csv`.
pub fn run_training(
    trainer: Trainer,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> TrainResult<(Trainer, MetricsLog)> {
    run_training_until(trainer, dataset, out_dir, None)
}

/// `run_training` with an interruption point: stop after `stop_after`
/// epochs while keeping the full config's schedules, as a mid-run kill
/// would.
pub fn run_training_until(
    mut trainer: Trainer,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    stop_after: Option<usize>,
) -> TrainResult<(Trainer, MetricsLog)> {
    let n = dataset.transition_count();
    let batches_per_epoch = make_batches(n, trainer.config.batch_size, trainer.config.seed, 0)?.len();
    let total_steps = (batches_per_epoch * trainer.config.epochs) as u64;
    let mut log = MetricsLog::default();
    let mut csv: Option<std::fs::File> = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{}", MetricsLog::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };
    let mut flushed = 0usize;

    let end_epoch = stop_after.unwrap_or(trainer.config.epochs).min(trainer.config.epochs);
    for epoch in trainer.start_epoch..end_epoch {
        let batches = make_batches(n, trainer.config.batch_size, trainer.config.seed, epoch)?;
        for batch in &batches {
            let alpha = trainer.alpha_at(total_steps);
            let report = trainer.train_step(dataset, batch, alpha)?;
            log.rows.push(MetricsRow {
                step: trainer.step,
                epoch,
                l_collapse: report.l_collapse,
                l_wta: report.l_wta,
                l_sim: report.l_sim,
                l_total: report.l_total,
                alpha: report.alpha,
                gamma: report.gamma,
                util: None,
            });
        }
        let cadence = trainer.config.snapshot_cadence;
        let is_last = epoch + 1 == end_epoch;
        if (cadence > 0 && (epoch + 1) % cadence == 0) || is_last {
            let util = eval::grid_utilization(&trainer.params, &trainer.topo, dataset)?;
            if let Some(row) = log.rows.last_mut() {
                row.util = Some(util);
            }
            if let Some(dir) = out_dir {
                trainer.start_epoch = epoch + 1;
                let extras = trainer.adam_extras();
                let name = if is_last {
                    "model.gnwm".to_string()
                } else {
                    format!("ckpt_epoch_{:04}.gnwm", epoch + 1)
                };
                nets::save_checkpoint(&dir.join(name), &trainer.params, &extras)?;
            }
        }
        if let Some(f) = csv.as_mut() {
            for row in &log.rows[flushed..] {
                writeln!(
                    f,
                    "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                    row.step,
                    row.epoch,
                    row.l_collapse,
                    row.l_wta,
                    row.l_sim,
                    row.l_total,
                    row.alpha,
                    row.gamma,
                    row.util.map(|u| u.to_string()).unwrap_or_default()
                )?;
            }
            f.flush()?;
            flushed = log.rows.len();
        }
    }
    Ok((trainer, log))
}
