//! Post-training analysis over frozen parameters: BMU maps, grid
//! utilization, prototype dictionaries, topographic rank correlations,
//! autoregressive rollouts with and without grid snapping, one-step action
//! accuracy, imagination trees, dual-channel factorization, and semantic
//! clustering.
//!
//! Everything here is a pure function of (params, dataset): repeat runs are
//! identical.

use crate::dataset::{Dataset, Paradigm};
use crate::envs::{Action, Frame, GrammarCorpus, GRAMMAR_VOCAB};
use crate::nets::{self, ModelParams, NetError};
use crate::render::Svg;
use crate::tensor::{Tape, TensorError};
use crate::topology::{project, snap, GridTopology, LatentDistribution, TopologyError};
use std::fmt;

pub type EvalResult<T> = Result<T, EvalError>;

const EVAL_BATCH: usize = 64;
/// Exhaustive 4-ary trees are capped at this depth.
pub const TREE_DEPTH_CAP: usize = 8;

#[derive(Debug)]
pub enum EvalError {
    WrongParadigm { expected: &'static str, got: char },
    TooFewFrames { got: usize, min: usize },
    TreeTooDeep { depth: usize, cap: usize },
    EmptySet { what: &'static str },
    Net(NetError),
    Topology(TopologyError),
    Tensor(TensorError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::WrongParadigm { expected, got } => {
                write!(f, "needs a {expected} dataset, got paradigm {got}")
            }
            EvalError::TooFewFrames { got, min } => {
                write!(f, "needs at least {min} distinct frames, got {got}")
            }
            EvalError::TreeTooDeep { depth, cap } => {
                write!(f, "tree depth {depth} exceeds cap {cap}")
            }
            EvalError::EmptySet { what } => write!(f, "{what} is empty"),
            EvalError::Net(e) => write!(f, "{e}"),
            EvalError::Topology(e) => write!(f, "{e}"),
            EvalError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<NetError> for EvalError {
    fn from(e: NetError) -> Self {
        EvalError::Net(e)
    }
}

impl From<TopologyError> for EvalError {
    fn from(e: TopologyError) -> Self {
        EvalError::Topology(e)
    }
}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Tensor(e)
    }
}

// ── Forward helpers (inference only) ────────────────────────────────────

/// encode -> smear -> project for a batch of raw inputs; returns per-input,
/// per-channel distributions.
pub fn encode_inputs(
    params: &ModelParams,
    topo: &GridTopology,
    values: Vec<f64>,
    shape: Vec<usize>,
) -> EvalResult<Vec<Vec<LatentDistribution>>> {
    let b = shape[0];
    let spec = params.spec;
    let d = spec.d();
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let x = tape.leaf(values, shape, false)?;
    let logits = nets::encode(&mut tape, params, &binding, x)?;
    let smeared = topo.smear(&mut tape, logits)?;
    let flat = tape.reshape(smeared, vec![b * spec.grids, d])?;
    let rows = project(&mut tape, flat)?;
    let rv = tape.values(rows);
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut per_channel = Vec::with_capacity(spec.grids);
        for c in 0..spec.grids {
            let start = (i * spec.grids + c) * d;
            per_channel.push(LatentDistribution::new(rv[start..start + d].to_vec())?);
        }
        out.push(per_channel);
    }
    Ok(out)
}

fn frames_to_values(frames: &[&Frame]) -> (Vec<f64>, Vec<usize>) {
    let f0 = frames[0];
    let mut vals = Vec::with_capacity(frames.len() * f0.channels * f0.height * f0.width);
    for f in frames {
        vals.extend(f.pixels.iter().map(|p| *p as f64));
    }
    (vals, vec![frames.len(), f0.channels, f0.height, f0.width])
}

/// Per-frame, per-channel latents for a set of frame indices.
pub fn frame_latents(
    params: &ModelParams,
    topo: &GridTopology,
    dataset: &Dataset,
    indices: &[usize],
) -> EvalResult<Vec<Vec<LatentDistribution>>> {
    let video = dataset
        .video()
        .ok_or(EvalError::WrongParadigm { expected: "video", got: dataset.paradigm.letter() })?;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let frames: Vec<&Frame> = chunk.iter().map(|&i| &video.frames[i]).collect();
        let (vals, shape) = frames_to_values(&frames);
        out.extend(encode_inputs(params, topo, vals, shape)?);
    }
    Ok(out)
}

/// Latents of the 40 vocabulary words.
pub fn word_latents(
    params: &ModelParams,
    topo: &GridTopology,
    corpus: &GrammarCorpus,
) -> EvalResult<Vec<Vec<LatentDistribution>>> {
    let mut vals = Vec::with_capacity(GRAMMAR_VOCAB * crate::envs::GRAMMAR_EMBED_DIM);
    for w in 0..GRAMMAR_VOCAB {
        vals.extend_from_slice(corpus.embedding(w));
    }
    encode_inputs(params, topo, vals, vec![GRAMMAR_VOCAB, crate::envs::GRAMMAR_EMBED_DIM])
}

/// One prediction step: projected per-channel state (+ optional action)
/// -> next per-channel state. Batched over states.
pub fn predict_next(
    params: &ModelParams,
    topo: &GridTopology,
    states: &[Vec<LatentDistribution>],
    actions: Option<&[Action]>,
) -> EvalResult<Vec<Vec<LatentDistribution>>> {
    let spec = params.spec;
    let d = spec.d();
    let b = states.len();
    let mut vals = Vec::with_capacity(b * spec.grids * d);
    for per_channel in states {
        for ch in per_channel {
            vals.extend_from_slice(ch.values());
        }
    }
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let latent = tape.leaf(vals, vec![b, spec.grids, spec.grid_h, spec.grid_w], false)?;
    let logits = nets::predict(&mut tape, params, &binding, latent, actions)?;
    let smeared = topo.smear(&mut tape, logits)?;
    let flat = tape.reshape(smeared, vec![b * spec.grids, d])?;
    let rows = project(&mut tape, flat)?;
    let rv = tape.values(rows);
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut per_channel = Vec::with_capacity(spec.grids);
        for c in 0..spec.grids {
            let start = (i * spec.grids + c) * d;
            per_channel.push(LatentDistribution::new(rv[start..start + d].to_vec())?);
        }
        out.push(per_channel);
    }
    Ok(out)
}

// ── BMU maps and prototypes ─────────────────────────────────────────────

/// Winner-take-all assignment of every frame to its best matching unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BmuAssignment {
    /// Winning node per frame.
    pub node_of_frame: Vec<usize>,
    /// Frame indices grouped per node; length = D.
    pub frames_of_node: Vec<Vec<usize>>,
}

impl BmuAssignment {
    pub fn from_nodes(nodes: Vec<usize>, d: usize) -> Self {
        let mut frames_of_node = vec![Vec::new(); d];
        for (f, n) in nodes.iter().enumerate() {
            frames_of_node[*n].push(f);
        }
        BmuAssignment { node_of_frame: nodes, frames_of_node }
    }

    /// Nodes with at least one assigned frame.
    pub fn utilization(&self) -> usize {
        self.frames_of_node.iter().filter(|v| !v.is_empty()).count()
    }
}

/// Per-channel BMU maps over every frame of a video dataset (or every word
/// of a grammar corpus).
pub fn bmu_map(
    params: &ModelParams,
    topo: &GridTopology,
    dataset: &Dataset,
) -> EvalResult<Vec<BmuAssignment>> {
    let spec = params.spec;
    let latents = match dataset.paradigm {
        Paradigm::Grammar => word_latents(params, topo, dataset.grammar().unwrap())?,
        _ => {
            let n = dataset.video().map(|v| v.frames.len()).unwrap_or(0);
            let indices: Vec<usize> = (0..n).collect();
            frame_latents(params, topo, dataset, &indices)?
        }
    };
    let d = spec.d();
    let mut per_channel: Vec<Vec<usize>> = vec![Vec::with_capacity(latents.len()); spec.grids];
    for per_frame in &latents {
        for (c, dist) in per_frame.iter().enumerate() {
            per_channel[c].push(snap(dist).argmax());
        }
    }
    Ok(per_channel.into_iter().map(|nodes| BmuAssignment::from_nodes(nodes, d)).collect())
}

/// Distinct active nodes across all channels.
pub fn grid_utilization(
    params: &ModelParams,
    topo: &GridTopology,
    dataset: &Dataset,
) -> EvalResult<usize> {
    let maps = bmu_map(params, topo, dataset)?;
    let d = params.spec.d();
    let mut active = vec![false; d];
    for m in &maps {
        for (n, frames) in m.frames_of_node.iter().enumerate() {
            if !frames.is_empty() {
                active[n] = true;
            }
        }
    }
    Ok(active.iter().filter(|a| **a).count())
}

/// Per-node pixel-mean frame; inactive nodes are `None`.
pub fn prototype_states(assignment: &BmuAssignment, dataset: &Dataset) -> EvalResult<Vec<Option<Frame>>> {
    let video = dataset
        .video()
        .ok_or(EvalError::WrongParadigm { expected: "video", got: dataset.paradigm.letter() })?;
    let mut out = Vec::with_capacity(assignment.frames_of_node.len());
    for frames in &assignment.frames_of_node {
        if frames.is_empty() {
            out.push(None);
            continue;
        }
        let f0 = &video.frames[frames[0]];
        let mut acc = vec![0.0f64; f0.pixels.len()];
        for &fi in frames {
            for (a, p) in acc.iter_mut().zip(&video.frames[fi].pixels) {
                *a += *p as f64;
            }
        }
        let inv = 1.0 / frames.len() as f64;
        let pixels: Vec<f32> = acc.iter().map(|a| (a * inv) as f32).collect();
        out.push(Some(Frame { channels: f0.channels, height: f0.height, width: f0.width, pixels }));
    }
    Ok(out)
}

// ── Rank correlation ────────────────────────────────────────────────────

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling. Zero when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// The 8 symmetries of a square grid applied to (row, col).
fn apply_symmetry(sym: usize, row: usize, col: usize, g: usize) -> (usize, usize) {
    let (r, c) = match sym % 4 {
        0 => (row, col),
        1 => (col, g - 1 - row),
        2 => (g - 1 - row, g - 1 - col),
        _ => (g - 1 - col, row),
    };
    if sym >= 4 {
        (r, g - 1 - c)
    } else {
        (r, c)
    }
}

/// Topographic correlation report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoCorrelation {
    /// Best (rho_x + rho_y)/2 over the grid symmetries.
    pub score: f64,
    pub rho_x: f64,
    pub rho_y: f64,
    pub symmetry: usize,
}

/// Spearman correlation between ball position and BMU grid coordinates,
/// maximized over the 8 planar grid symmetries (4 for non-square grids).
pub fn topographic_correlation(
    assignment: &BmuAssignment,
    positions: &[(f64, f64)],
    topo: &GridTopology,
) -> EvalResult<TopoCorrelation> {
    let (h, w) = match topo {
        GridTopology::Planar2d { height, width, .. } => (*height, *width),
        GridTopology::Ring1d { .. } => {
            return Err(EvalError::WrongParadigm { expected: "planar topology", got: 'R' })
        }
    };
    let n = assignment.node_of_frame.len();
    if n != positions.len() {
        return Err(EvalError::TooFewFrames { got: positions.len(), min: n });
    }
    let mut distinct = assignment.node_of_frame.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 10 {
        return Err(EvalError::TooFewFrames { got: distinct.len(), min: 10 });
    }
    let xs: Vec<f64> = positions.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = positions.iter().map(|p| p.1).collect();
    let sym_count = if h == w { 8 } else { 4 };
    let mut best = TopoCorrelation { score: f64::NEG_INFINITY, rho_x: 0.0, rho_y: 0.0, symmetry: 0 };
    for sym in 0..sym_count {
        let mut rows = Vec::with_capacity(n);
        let mut cols = Vec::with_capacity(n);
        for &node in &assignment.node_of_frame {
            let (r0, c0) = (node / w, node % w);
            let (r, c) = if h == w {
                apply_symmetry(sym, r0, c0, h)
            } else {
                // non-square: axis flips only
                match sym {
                    0 => (r0, c0),
                    1 => (h - 1 - r0, c0),
                    2 => (r0, w - 1 - c0),
                    _ => (h - 1 - r0, w - 1 - c0),
                }
            };
            rows.push(r as f64);
            cols.push(c as f64);
        }
        let rho_x = spearman(&xs, &cols);
        let rho_y = spearman(&ys, &rows);
        let score = 0.5 * (rho_x + rho_y);
        if score > best.score {
            best = TopoCorrelation { score, rho_x, rho_y, symmetry: sym };
        }
    }
    Ok(best)
}

// ── Rollouts ────────────────────────────────────────────────────────────

/// Per-state peakedness statistics (averaged over grid channels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutStat {
    pub l1_norm: f64,
    pub max_entry: f64,
    pub entry_std: f64,
}

/// Ordered latent states of an autoregressive rollout; `states[0]` is the
/// initial state. With snapping on, every state after step 0 is exactly
/// one-hot.
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub snapping: bool,
    pub states: Vec<Vec<LatentDistribution>>,
    pub stats: Vec<RolloutStat>,
}

impl RolloutTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,l1_norm,max_entry,entry_std\n");
        for (i, s) in self.stats.iter().enumerate() {
            out.push_str(&format!("{i},{:.17e},{:.17e},{:.17e}\n", s.l1_norm, s.max_entry, s.entry_std));
        }
        out
    }
}

fn stat_of(per_channel: &[LatentDistribution]) -> RolloutStat {
    let n = per_channel.len() as f64;
    let mut s = RolloutStat { l1_norm: 0.0, max_entry: 0.0, entry_std: 0.0 };
    for ch in per_channel {
        s.l1_norm += ch.l1_norm() / n;
        s.max_entry += ch.max_entry() / n;
        s.entry_std += ch.entry_std() / n;
    }
    s
}

/// Iterate predict -> smear -> project, snapping between steps iff
/// `snapping`. `policy` entries are cycled; `None` for passive models.
pub fn rollout(
    params: &ModelParams,
    topo: &GridTopology,
    p0: Vec<LatentDistribution>,
    policy: Option<&[Action]>,
    steps: usize,
    snapping: bool,
) -> EvalResult<RolloutTrace> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut stats = Vec::with_capacity(steps + 1);
    stats.push(stat_of(&p0));
    states.push(p0);
    for t in 0..steps {
        let action = policy.map(|p| {
            if p.is_empty() {
                panic!("empty policy");
            } else {
                vec![p[t % p.len()]]
            }
        });
        let current = states.last().unwrap().clone();
        let next = predict_next(params, topo, &[current], action.as_deref())?
            .into_iter()
            .next()
            .unwrap();
        let next = if snapping { next.iter().map(snap).collect() } else { next };
        stats.push(stat_of(&next));
        states.push(next);
    }
    Ok(RolloutTrace { snapping, states, stats })
}

// ── One-step accuracy ───────────────────────────────────────────────────

/// Fraction of agreeing node predictions.
pub fn node_agreement(pred_nodes: &[usize], target_nodes: &[usize]) -> EvalResult<f64> {
    if pred_nodes.is_empty() || pred_nodes.len() != target_nodes.len() {
        return Err(EvalError::EmptySet { what: "transition set" });
    }
    let hits = pred_nodes.iter().zip(target_nodes).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred_nodes.len() as f64)
}

/// One-step BMU prediction accuracy over every transition of an
/// action-conditioned dataset: argmax of the predicted next latent vs the
/// BMU of the encoded true next frame (channel 0).
pub fn one_step_accuracy(
    params: &ModelParams,
    topo: &GridTopology,
    dataset: &Dataset,
) -> EvalResult<f64> {
    if dataset.paradigm != Paradigm::ActionBall {
        return Err(EvalError::WrongParadigm {
            expected: "action-conditioned",
            got: dataset.paradigm.letter(),
        });
    }
    let video = dataset.video().unwrap();
    let n = dataset.transition_count();
    if n == 0 {
        return Err(EvalError::EmptySet { what: "transition set" });
    }
    let all: Vec<usize> = (0..video.frames.len()).collect();
    let latents = frame_latents(params, topo, dataset, &all)?;
    let actions = video.actions.as_ref().unwrap();
    let mut pred_nodes = Vec::with_capacity(n);
    let mut target_nodes = Vec::with_capacity(n);
    for chunk_start in (0..n).step_by(EVAL_BATCH) {
        let chunk_end = (chunk_start + EVAL_BATCH).min(n);
        let states: Vec<Vec<LatentDistribution>> =
            (chunk_start..chunk_end).map(|i| latents[i].clone()).collect();
        let acts: Vec<Action> = (chunk_start..chunk_end).map(|i| actions[i]).collect();
        let preds = predict_next(params, topo, &states, Some(&acts))?;
        for (off, pred) in preds.iter().enumerate() {
            pred_nodes.push(pred[0].argmax());
            target_nodes.push(latents[chunk_start + off + 1][0].argmax());
        }
    }
    node_agreement(&pred_nodes, &target_nodes)
}

// ── Imagination trees ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    /// Index into `ImaginationTree::nodes`; the root has no parent.
    pub parent: Option<usize>,
    /// Action taken from the parent; `None` at the root.
    pub action: Option<Action>,
    /// Grid node of the (snapped) state.
    pub grid_node: usize,
    pub depth: usize,
}

/// Exhaustive 4-ary unroll of the action predictor with snapping between
/// levels. Fully deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ImaginationTree {
    pub root: usize,
    pub depth: usize,
    pub nodes: Vec<TreeNode>,
}

pub fn imagination_tree(
    params: &ModelParams,
    topo: &GridTopology,
    p0: &LatentDistribution,
    depth: usize,
) -> EvalResult<ImaginationTree> {
    if depth > TREE_DEPTH_CAP {
        return Err(EvalError::TreeTooDeep { depth, cap: TREE_DEPTH_CAP });
    }
    let root_state = snap(p0);
    let root = root_state.argmax();
    let mut nodes = vec![TreeNode { parent: None, action: None, grid_node: root, depth: 0 }];
    let mut frontier: Vec<(usize, LatentDistribution)> = vec![(0, root_state)];
    for level in 1..=depth {
        let mut next_frontier = Vec::with_capacity(frontier.len() * 4);
        // expand the whole level as one batch per action
        for action in Action::ALL {
            let states: Vec<Vec<LatentDistribution>> =
                frontier.iter().map(|(_, s)| vec![s.clone()]).collect();
            let acts = vec![action; states.len()];
            let preds = predict_next(params, topo, &states, Some(&acts))?;
            for ((parent_idx, _), pred) in frontier.iter().zip(preds) {
                let snapped = snap(&pred[0]);
                let idx = nodes.len();
                nodes.push(TreeNode {
                    parent: Some(*parent_idx),
                    action: Some(action),
                    grid_node: snapped.argmax(),
                    depth: level,
                });
                next_frontier.push((idx, snapped));
            }
        }
        frontier = next_frontier;
    }
    Ok(ImaginationTree { root, depth, nodes })
}

impl ImaginationTree {
    /// Children of node `i` in expansion order.
    pub fn children(&self, i: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent == Some(i))
            .map(|(j, _)| j)
            .collect()
    }

    /// SVG render: grid lattice with edges per action.
    pub fn to_svg(&self, topo: &GridTopology) -> String {
        let (h, w) = match topo {
            GridTopology::Planar2d { height, width, .. } => (*height, *width),
            GridTopology::Ring1d { nodes, .. } => (1, *nodes),
        };
        let cell = 28.0;
        let mut svg = Svg::new(w as f64 * cell + 40.0, h as f64 * cell + 40.0);
        let center = |node: usize| -> (f64, f64) {
            let (r, c) = (node / w, node % w);
            (20.0 + (c as f64 + 0.5) * cell, 20.0 + (r as f64 + 0.5) * cell)
        };
        for node in 0..h * w {
            let (x, y) = center(node);
            svg.circle(x, y, 2.0, "#dddddd");
        }
        let colors = ["#d62728", "#2ca02c", "#1f77b4", "#ff7f0e"];
        for n in &self.nodes {
            if let (Some(p), Some(a)) = (n.parent, n.action) {
                let (x1, y1) = center(self.nodes[p].grid_node);
                let (x2, y2) = center(n.grid_node);
                svg.line(x1, y1, x2, y2, colors[a.id() as usize], 1.2);
                let (x, y) = center(n.grid_node);
                svg.circle(x, y, 3.0, colors[a.id() as usize]);
            }
        }
        let (rx, ry) = center(self.root);
        svg.circle(rx, ry, 5.0, "black");
        svg.text(4.0, 12.0, 10.0, &format!("depth {} tree from node {}", self.depth, self.root));
        svg.finish()
    }
}

// ── Factorization (paradigm C) ──────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationReport {
    /// ball index assigned to each channel (channel -> ball).
    pub assignment: [usize; 2],
    /// Matched topographic score per channel.
    pub matched: [f64; 2],
    /// Cross score per channel (same channel, the other ball).
    pub cross: [f64; 2],
}

/// Per-channel topographic correlations against each ball, with the 2x2
/// assignment solved for maximal total matched correlation.
pub fn factorization_metrics(
    params: &ModelParams,
    topo: &GridTopology,
    dataset: &Dataset,
) -> EvalResult<FactorizationReport> {
    if dataset.paradigm != Paradigm::TwoBall || params.spec.grids != 2 {
        return Err(EvalError::WrongParadigm { expected: "two-ball dual-grid", got: dataset.paradigm.letter() });
    }
    let video = dataset.video().unwrap();
    let maps = bmu_map(params, topo, dataset)?;
    let mut corr = [[0.0f64; 2]; 2];
    for (c, map) in maps.iter().enumerate() {
        for ball in 0..2 {
            let positions: Vec<(f64, f64)> = video.positions.iter().map(|p| p[ball]).collect();
            corr[c][ball] = topographic_correlation(map, &positions, topo)?.score;
        }
    }
    let straight = corr[0][0] + corr[1][1];
    let swapped = corr[0][1] + corr[1][0];
    let assignment = if straight >= swapped { [0, 1] } else { [1, 0] };
    Ok(FactorizationReport {
        assignment,
        matched: [corr[0][assignment[0]], corr[1][assignment[1]]],
        cross: [corr[0][1 - assignment[0]], corr[1][1 - assignment[1]]],
    })
}

// ── Semantic clustering (paradigm D) ────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticReport {
    pub distinct_bmus: usize,
    pub intra_mean_dist: f64,
    pub inter_mean_dist: f64,
    /// intra / inter; small means rigid category clustering.
    pub ratio: f64,
}

/// Mean pairwise grid distance within vs across categories, computed from
/// the word -> node assignment.
pub fn semantic_metrics_from_nodes(
    nodes: &[usize],
    categories: &[crate::envs::WordCategory],
    grid_w: usize,
) -> SemanticReport {
    let mut distinct = nodes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let coord = |n: usize| ((n / grid_w) as f64, (n % grid_w) as f64);
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let (ri, ci) = coord(nodes[i]);
            let (rj, cj) = coord(nodes[j]);
            let d = ((ri - rj).powi(2) + (ci - cj).powi(2)).sqrt();
            if categories[i] == categories[j] {
                intra.0 += d;
                intra.1 += 1;
            } else {
                inter.0 += d;
                inter.1 += 1;
            }
        }
    }
    let intra_mean = intra.0 / intra.1.max(1) as f64;
    let inter_mean = inter.0 / inter.1.max(1) as f64;
    SemanticReport {
        distinct_bmus: distinct.len(),
        intra_mean_dist: intra_mean,
        inter_mean_dist: inter_mean,
        ratio: if inter_mean > 0.0 { intra_mean / inter_mean } else { f64::INFINITY },
    }
}

pub fn semantic_clustering_metrics(
    params: &ModelParams,
    topo: &GridTopology,
    corpus: &GrammarCorpus,
) -> EvalResult<SemanticReport> {
    let latents = word_latents(params, topo, corpus)?;
    let nodes: Vec<usize> = latents.iter().map(|per| per[0].argmax()).collect();
    Ok(semantic_metrics_from_nodes(&nodes, &corpus.categories, params.spec.grid_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::WordCategory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spearman_perfect_and_null() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * 2.0 + 1.0).collect();
        assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-12);
        let yr: Vec<f64> = xs.iter().rev().cloned().collect();
        assert!((spearman(&xs, &yr) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&xs, &vec![3.0; 100]), 0.0);
    }

    #[test]
    fn spearman_handles_ties() {
        let xs = vec![1.0, 1.0, 2.0, 2.0, 3.0];
        let ys = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let rho = spearman(&xs, &ys);
        assert!(rho > 0.85 && rho <= 1.0);
    }

    #[test]
    fn topographic_correlation_of_oracle_assignment_is_one() {
        // node = quantized position on a 10x10 grid
        let topo = GridTopology::planar(10, 10, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut positions = Vec::new();
        let mut nodes = Vec::new();
        for _ in 0..500 {
            let x: f64 = rng.random_range(0.0..10.0);
            let y: f64 = rng.random_range(0.0..10.0);
            positions.push((x, y));
            nodes.push((y as usize).min(9) * 10 + (x as usize).min(9));
        }
        let assignment = BmuAssignment::from_nodes(nodes, 100);
        let t = topographic_correlation(&assignment, &positions, &topo).unwrap();
        assert!(t.score > 0.95, "score {}", t.score);
    }

    #[test]
    fn topographic_correlation_survives_grid_rotation() {
        let topo = GridTopology::planar(10, 10, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut positions = Vec::new();
        let mut nodes = Vec::new();
        for _ in 0..500 {
            let x: f64 = rng.random_range(0.0..10.0);
            let y: f64 = rng.random_range(0.0..10.0);
            positions.push((x, y));
            // rotated oracle: node grid is the 90-degree rotation of space
            let (r0, c0) = ((y as usize).min(9), (x as usize).min(9));
            let (r, c) = (c0, 9 - r0);
            nodes.push(r * 10 + c);
        }
        let assignment = BmuAssignment::from_nodes(nodes, 100);
        let t = topographic_correlation(&assignment, &positions, &topo).unwrap();
        assert!(t.score > 0.95, "score {}", t.score);
    }

    #[test]
    fn random_assignment_has_low_correlation() {
        let topo = GridTopology::planar(10, 10, 0.5).unwrap();
        let mut pass = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let positions: Vec<(f64, f64)> =
                (0..1000).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
            let nodes: Vec<usize> = (0..1000).map(|_| rng.random_range(0..100)).collect();
            let assignment = BmuAssignment::from_nodes(nodes, 100);
            let t = topographic_correlation(&assignment, &positions, &topo).unwrap();
            if t.score.abs() < 0.2 {
                pass += 1;
            }
        }
        assert!(pass >= 19, "only {pass}/20 null assignments below 0.2");
    }

    #[test]
    fn too_few_distinct_frames_is_an_error() {
        let topo = GridTopology::planar(10, 10, 0.5).unwrap();
        let assignment = BmuAssignment::from_nodes(vec![5; 50], 100);
        let positions = vec![(1.0, 1.0); 50];
        assert!(matches!(
            topographic_correlation(&assignment, &positions, &topo),
            Err(EvalError::TooFewFrames { .. })
        ));
    }

    #[test]
    fn node_agreement_oracle_copy_is_exactly_one() {
        let nodes: Vec<usize> = (0..500).map(|i| i % 41).collect();
        assert_eq!(node_agreement(&nodes, &nodes).unwrap(), 1.0);
        assert!(node_agreement(&[], &[]).is_err());
    }

    #[test]
    fn semantic_metrics_corner_clusters_have_small_ratio() {
        // categories pinned to the 4 corners of a 15x15 grid
        let mut nodes = Vec::new();
        let mut cats = Vec::new();
        let corners = [(0usize, 0usize), (0, 12), (12, 0), (12, 12)];
        for (cat, (r0, c0)) in corners.iter().enumerate() {
            for k in 0..10 {
                let (dr, dc) = (k / 3, k % 3);
                nodes.push((r0 + dr) * 15 + c0 + dc);
                cats.push(WordCategory::CYCLE[cat]);
            }
        }
        let rep = semantic_metrics_from_nodes(&nodes, &cats, 15);
        assert!(rep.ratio < 0.3, "ratio {}", rep.ratio);
        assert_eq!(rep.distinct_bmus, 40);
    }

    #[test]
    fn semantic_metrics_random_assignment_ratio_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ratios = Vec::new();
        for _ in 0..20 {
            let nodes: Vec<usize> = (0..40).map(|_| rng.random_range(0..225)).collect();
            let cats: Vec<WordCategory> =
                (0..40).map(|w| WordCategory::CYCLE[w / 10]).collect();
            ratios.push(semantic_metrics_from_nodes(&nodes, &cats, 15).ratio);
        }
        let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.15, "mean ratio {mean}");
    }

    #[test]
    fn utilization_counts_active_nodes() {
        let a = BmuAssignment::from_nodes(vec![0, 0, 3, 7, 7, 7], 16);
        assert_eq!(a.utilization(), 3);
        assert_eq!(a.frames_of_node[7], vec![3, 4, 5]);
    }
}
