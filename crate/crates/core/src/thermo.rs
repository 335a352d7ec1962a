//! The three-term thermodynamic objective.
//!
//! Expansion (collapse loss) pulls the normalized batch mean toward the
//! uniform constant c = 1/sqrt(D); contraction (WTA loss) penalizes the
//! unnormalized batch mean's overlap with c, i.e. the mean row L1 norm;
//! predictive alignment rewards row-wise inner products between prediction
//! and target. The joint minimum of expansion + contraction is 1/sqrt(D),
//! attained exactly when rows are one-hot and uniformly spread.
//!
//! Every loss is evaluated against the fixed constant c rather than pairwise
//! sample distances or covariance matrices, so computation touches each
//! batch row once: linear in both B and D.

use crate::tensor::{Tape, TensorError, Var};
use std::fmt;

pub type ThermoResult<T> = Result<T, ThermoError>;

#[derive(Debug, Clone, PartialEq)]
pub enum ThermoError {
    EmptyBatch,
    /// p and z batches disagree in size.
    BatchMismatch { p: usize, z: usize },
    /// The batch mean vanished (collapse loss undefined).
    ZeroMean,
    /// Row length does not divide the flat data length.
    BadLayout { len: usize, dim: usize },
    Tensor(TensorError),
}

impl fmt::Display for ThermoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThermoError::EmptyBatch => write!(f, "batch must contain at least one row"),
            ThermoError::BatchMismatch { p, z } => {
                write!(f, "prediction batch has {p} rows but target batch has {z}")
            }
            ThermoError::ZeroMean => write!(f, "batch mean is zero; collapse loss undefined"),
            ThermoError::BadLayout { len, dim } => {
                write!(f, "flat length {len} is not a multiple of row dim {dim}")
            }
            ThermoError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ThermoError {}

impl From<TensorError> for ThermoError {
    fn from(e: TensorError) -> Self {
        ThermoError::Tensor(e)
    }
}

/// Per-batch loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoLossReport {
    pub l_collapse: f64,
    pub l_wta: f64,
    pub l_sim: f64,
    pub l_total: f64,
    pub alpha: f64,
    pub gamma: f64,
}

/// Floor of the expansion + contraction pair: 1/sqrt(D).
pub fn theoretical_floor(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

fn check_rows(p: &[f64], z: &[f64], d: usize) -> ThermoResult<usize> {
    if d == 0 || p.len() % d != 0 {
        return Err(ThermoError::BadLayout { len: p.len(), dim: d });
    }
    if z.len() % d != 0 {
        return Err(ThermoError::BadLayout { len: z.len(), dim: d });
    }
    let (bp, bz) = (p.len() / d, z.len() / d);
    if bp != bz {
        return Err(ThermoError::BatchMismatch { p: bp, z: bz });
    }
    if bp == 0 {
        return Err(ThermoError::EmptyBatch);
    }
    Ok(bp)
}

/// Unnormalized global batch mean: mean over rows of (p + z) / 2.
pub fn batch_mean(p: &[f64], z: &[f64], d: usize) -> ThermoResult<Vec<f64>> {
    let b = check_rows(p, z, d)?;
    let mut mean = vec![0.0; d];
    for r in 0..b {
        for j in 0..d {
            mean[j] += 0.5 * (p[r * d + j] + z[r * d + j]);
        }
    }
    for m in mean.iter_mut() {
        *m /= b as f64;
    }
    Ok(mean)
}

/// Expansion force: 1 - <mean/||mean||, c>. Zero iff the mean is uniform.
pub fn collapse_loss(mean: &[f64]) -> ThermoResult<f64> {
    let d = mean.len() as f64;
    let norm: f64 = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ThermoError::ZeroMean);
    }
    let c = 1.0 / d.sqrt();
    let dot: f64 = mean.iter().map(|v| v / norm * c).sum();
    Ok(1.0 - dot)
}

/// Contraction force: <mean, c> = ||mean||_1 / sqrt(D) for nonnegative rows.
pub fn wta_loss(mean: &[f64]) -> f64 {
    let c = 1.0 / (mean.len() as f64).sqrt();
    mean.iter().map(|v| v * c).sum()
}

/// Predictive alignment: 1 - mean row-wise inner product.
pub fn sim_loss(p: &[f64], z: &[f64], d: usize) -> ThermoResult<f64> {
    let b = check_rows(p, z, d)?;
    let mut acc = 0.0;
    for r in 0..b {
        let pr = &p[r * d..(r + 1) * d];
        let zr = &z[r * d..(r + 1) * d];
        acc += pr.iter().zip(zr).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(1.0 - acc / b as f64)
}

/// Unified objective: alpha * (collapse + wta) + gamma * sim, with every
/// component reported.
pub fn total_loss(
    p: &[f64],
    z: &[f64],
    d: usize,
    alpha: f64,
    gamma: f64,
) -> ThermoResult<ThermoLossReport> {
    let mean = batch_mean(p, z, d)?;
    let l_collapse = collapse_loss(&mean)?;
    let l_wta = wta_loss(&mean);
    let l_sim = sim_loss(p, z, d)?;
    Ok(ThermoLossReport {
        l_collapse,
        l_wta,
        l_sim,
        l_total: alpha * (l_collapse + l_wta) + gamma * l_sim,
        alpha,
        gamma,
    })
}

/// Tape handles for the loss components, for metrics readout.
#[derive(Debug, Clone, Copy)]
pub struct ThermoGraph {
    pub total: Var,
    pub collapse: Var,
    pub wta: Var,
    pub sim: Var,
}

/// Builds the unified objective on the tape over projected batches
/// `p`, `z` of shape [B, D]. Gradients flow through BOTH branches; there is
/// no stop-gradient or target copy anywhere in this graph.
pub fn thermo_graph(
    tape: &mut Tape,
    p: Var,
    z: Var,
    alpha: f64,
    gamma: f64,
) -> ThermoResult<ThermoGraph> {
    let sp = tape.shape(p).to_vec();
    let sz = tape.shape(z).to_vec();
    if sp.len() != 2 || sz.len() != 2 || sp != sz {
        return Err(ThermoError::Tensor(TensorError::ShapeMismatch {
            op: "thermo_graph",
            left: sp,
            right: sz,
        }));
    }
    let d = sp[1];
    let c_val = 1.0 / (d as f64).sqrt();
    let c = tape.constant(vec![c_val; d], vec![d])?;

    let sum_pz = tape.add(p, z)?;
    let halves = tape.scale(sum_pz, 0.5);
    let mean_vec = tape.mean_axis0(halves)?;
    let mean_l2 = tape.l2_normalize_rows(mean_vec)?;

    let cos = tape.mul(mean_l2, c)?;
    let cos_sum = tape.sum_all(cos);
    let one = tape.scalar(1.0);
    let collapse = tape.sub(one, cos_sum)?;

    let overlap = tape.mul(mean_vec, c)?;
    let wta = tape.sum_all(overlap);

    let dots = tape.dot_rows(p, z)?;
    let mean_dot = tape.mean_all(dots);
    let one2 = tape.scalar(1.0);
    let sim = tape.sub(one2, mean_dot)?;

    let pair = tape.add(collapse, wta)?;
    let heat = tape.scale(pair, alpha);
    let aligned = tape.scale(sim, gamma);
    let total = tape.add(heat, aligned)?;

    Ok(ThermoGraph { total, collapse, wta, sim })
}

impl ThermoGraph {
    /// Read the component values into a report.
    pub fn report(&self, tape: &Tape, alpha: f64, gamma: f64) -> ThermoLossReport {
        ThermoLossReport {
            l_collapse: tape.values(self.collapse)[0],
            l_wta: tape.values(self.wta)[0],
            l_sim: tape.values(self.sim)[0],
            l_total: tape.values(self.total)[0],
            alpha,
            gamma,
        }
    }
}
