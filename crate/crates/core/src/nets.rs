//! Encoders and the action-conditioned spatial transition predictor.
//!
//! The visual encoder is fully convolutional — no dense bottleneck — so the
//! latent grid stays geometrically locked to the input: convolutions at
//! native resolution, then a center crop to 2G x 2G and a stride-2 average
//! pool down to the G x G logit grid. The abstract-sequence variant swaps
//! the conv stack for a small MLP onto the same grid. The predictor is also
//! purely convolutional; a discrete action enters as 4 constant one-hot
//! planes concatenated onto the latent grid, so the learned shift applies
//! identically at every grid location.
//!
//! One parameter set serves both the current-frame and next-frame encoder
//! branches: `bind` hands out a single set of tape handles, never a copy.

use crate::envs::Action;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;

pub type NetResult<T> = Result<T, NetError>;

#[derive(Debug)]
pub enum NetError {
    /// Input shape does not match what the spec expects.
    BadInput { expected: String, got: Vec<usize> },
    /// Geometry that the crop/pool path cannot produce.
    BadGeometry { reason: String },
    /// Checkpoint file problems.
    BadCheckpoint { reason: String },
    Io(io::Error),
    Tensor(TensorError),
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::BadInput { expected, got } => {
                write!(f, "expected input {expected}, got {got:?}")
            }
            NetError::BadGeometry { reason } => write!(f, "{reason}"),
            NetError::BadCheckpoint { reason } => write!(f, "bad checkpoint: {reason}"),
            NetError::Io(e) => write!(f, "{e}"),
            NetError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for NetError {}

impl From<TensorError> for NetError {
    fn from(e: TensorError) -> Self {
        NetError::Tensor(e)
    }
}

impl From<io::Error> for NetError {
    fn from(e: io::Error) -> Self {
        NetError::Io(e)
    }
}

// Encoder conv stack: kernel sizes and channel widths.
pub const ENC_CONV1_K: usize = 5;
pub const ENC_CONV2_K: usize = 3;
pub const ENC_CONV3_K: usize = 3;
pub const ENC_HIDDEN: usize = 16;
pub const MLP_HIDDEN: usize = 128;
pub const PRED_HIDDEN: usize = 32;
pub const PRED_K: usize = 3;
pub const ACTION_CHANNELS: usize = 4;

/// Which encoder maps inputs onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// Conv stack over [B, 3, S, S] frames; S must equal 2*G + 2 or more
    /// (center crop to 2G, stride-2 pool to G).
    Retinotopic,
    /// Dense 32 -> 128 -> D for abstract embeddings.
    Mlp { in_dim: usize },
}

/// Full model layout: encoder kind, grid geometry, number of independent
/// grids (output channels), and whether the predictor is action-conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub grids: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub frame_size: usize,
    pub action_conditioned: bool,
}

impl ModelSpec {
    pub fn node_count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Latent dimension per grid channel.
    pub fn d(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// True when any layer is dense; visual paradigms must be fully
    /// convolutional.
    pub fn has_dense_layer(&self) -> bool {
        matches!(self.encoder, EncoderKind::Mlp { .. })
    }

    pub fn validate(&self) -> NetResult<()> {
        if self.grids == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(NetError::BadGeometry { reason: "empty grid".into() });
        }
        if let EncoderKind::Retinotopic = self.encoder {
            if self.frame_size < 2 * self.grid_h.max(self.grid_w) {
                return Err(NetError::BadGeometry {
                    reason: format!(
                        "frame {} cannot pool down to {}x{} (needs >= 2x)",
                        self.frame_size, self.grid_h, self.grid_w
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order plus the spec they belong to.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub seed: u64,
    pub tensors: Vec<(String, Tensor)>,
}

fn layer_shapes(spec: &ModelSpec) -> Vec<(String, Vec<usize>, usize)> {
    // (name, shape, fan_in)
    let mut out = Vec::new();
    match spec.encoder {
        EncoderKind::Retinotopic => {
            out.push((
                "enc.conv1.w".into(),
                vec![ENC_HIDDEN, 3, ENC_CONV1_K, ENC_CONV1_K],
                3 * ENC_CONV1_K * ENC_CONV1_K,
            ));
            out.push(("enc.conv1.b".into(), vec![ENC_HIDDEN], 1));
            out.push((
                "enc.conv2.w".into(),
                vec![ENC_HIDDEN, ENC_HIDDEN, ENC_CONV2_K, ENC_CONV2_K],
                ENC_HIDDEN * ENC_CONV2_K * ENC_CONV2_K,
            ));
            out.push(("enc.conv2.b".into(), vec![ENC_HIDDEN], 1));
            out.push((
                "enc.conv3.w".into(),
                vec![spec.grids, ENC_HIDDEN, ENC_CONV3_K, ENC_CONV3_K],
                ENC_HIDDEN * ENC_CONV3_K * ENC_CONV3_K,
            ));
            out.push(("enc.conv3.b".into(), vec![spec.grids], 1));
        }
        EncoderKind::Mlp { in_dim } => {
            out.push(("enc.fc1.w".into(), vec![in_dim, MLP_HIDDEN], in_dim));
            out.push(("enc.fc1.b".into(), vec![MLP_HIDDEN], 1));
            out.push(("enc.fc2.w".into(), vec![MLP_HIDDEN, spec.d() * spec.grids], MLP_HIDDEN));
            out.push(("enc.fc2.b".into(), vec![spec.d() * spec.grids], 1));
        }
    }
    let pred_in = spec.grids + if spec.action_conditioned { ACTION_CHANNELS } else { 0 };
    out.push((
        "pred.conv1.w".into(),
        vec![PRED_HIDDEN, pred_in, PRED_K, PRED_K],
        pred_in * PRED_K * PRED_K,
    ));
    out.push(("pred.conv1.b".into(), vec![PRED_HIDDEN], 1));
    out.push((
        "pred.conv2.w".into(),
        vec![spec.grids, PRED_HIDDEN, PRED_K, PRED_K],
        PRED_HIDDEN * PRED_K * PRED_K,
    ));
    out.push(("pred.conv2.b".into(), vec![spec.grids], 1));
    out
}

impl ModelParams {
    /// Fan-in-scaled uniform init in +-sqrt(1/fan_in); biases start at zero.
    /// Deterministic under seed.
    pub fn init(spec: ModelSpec, seed: u64) -> NetResult<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for (name, shape, fan_in) in layer_shapes(&spec) {
            let n: usize = shape.iter().product();
            let values = if name.ends_with(".b") {
                vec![0.0; n]
            } else {
                let s = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-s..s)).collect()
            };
            tensors.push((name, Tensor::param(values, shape)?));
        }
        Ok(ModelParams { spec, seed, tensors })
    }

    /// All-zero parameters, for analytic tests.
    pub fn zeros(spec: ModelSpec) -> NetResult<Self> {
        spec.validate()?;
        let tensors = layer_shapes(&spec)
            .into_iter()
            .map(|(name, shape, _)| {
                let n = shape.iter().product();
                Ok((name, Tensor::param(vec![0.0; n], shape)?))
            })
            .collect::<NetResult<Vec<_>>>()?;
        Ok(ModelParams { spec, seed: 0, tensors })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Insert every parameter onto a tape once; the one binding serves all
    /// branches that use the model in that graph.
    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        let vars = self.tensors.iter().map(|(_, t)| tape.param(t)).collect();
        ParamBinding { vars }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tensors.iter().map(|(_, t)| t.numel()).collect()
    }

    /// FNV-1a over the little-endian parameter bytes, for diagnostics.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (_, t) in &self.tensors {
            for v in &t.values {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Tape handles for one bound parameter set, parallel to
/// `ModelParams::tensors`.
#[derive(Debug, Clone)]
pub struct ParamBinding {
    pub vars: Vec<Var>,
}

impl ParamBinding {
    fn var(&self, params: &ModelParams, name: &str) -> Var {
        let idx = params
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[idx]
    }

    /// Gradients read back off the tape, parallel to the parameter order.
    pub fn grads<'t>(&self, tape: &'t Tape) -> Vec<Option<&'t [f64]>> {
        self.vars.iter().map(|v| tape.grad(*v)).collect()
    }
}

/// Raw logits over the topology for a batch of inputs; pre-smearing.
///
/// Retinotopic: input [B, 3, S, S] -> [B, grids, G, G].
/// Mlp: input [B, in_dim] -> [B, grids, G, G] (reshaped from the dense head).
pub fn encode(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &ParamBinding,
    input: Var,
) -> NetResult<Var> {
    let spec = &params.spec;
    match spec.encoder {
        EncoderKind::Retinotopic => {
            let s = tape.shape(input).to_vec();
            let fs = spec.frame_size;
            if s.len() != 4 || s[1] != 3 || s[2] != fs || s[3] != fs {
                return Err(NetError::BadInput { expected: format!("[B, 3, {fs}, {fs}]"), got: s });
            }
            let w1 = binding.var(params, "enc.conv1.w");
            let b1 = binding.var(params, "enc.conv1.b");
            let h1 = tape.conv2d_same(input, w1, Some(b1))?;
            let h1 = tape.relu(h1);
            let w2 = binding.var(params, "enc.conv2.w");
            let b2 = binding.var(params, "enc.conv2.b");
            let h2 = tape.conv2d_same(h1, w2, Some(b2))?;
            let h2 = tape.relu(h2);
            let w3 = binding.var(params, "enc.conv3.w");
            let b3 = binding.var(params, "enc.conv3.b");
            let h3 = tape.conv2d_same(h2, w3, Some(b3))?;
            // geometry: S x S -> center-crop 2G x 2G -> stride-2 avg pool -> G x G
            let cropped = tape.crop_center(h3, 2 * spec.grid_h, 2 * spec.grid_w)?;
            Ok(tape.avg_pool2(cropped)?)
        }
        EncoderKind::Mlp { in_dim } => {
            let s = tape.shape(input).to_vec();
            if s.len() != 2 || s[1] != in_dim {
                return Err(NetError::BadInput { expected: format!("[B, {in_dim}]"), got: s });
            }
            let b = s[0];
            let w1 = binding.var(params, "enc.fc1.w");
            let b1 = binding.var(params, "enc.fc1.b");
            let h = tape.matmul(input, w1)?;
            let h = tape.add_row_broadcast(h, b1)?;
            let h = tape.relu(h);
            let w2 = binding.var(params, "enc.fc2.w");
            let b2 = binding.var(params, "enc.fc2.b");
            let o = tape.matmul(h, w2)?;
            let o = tape.add_row_broadcast(o, b2)?;
            Ok(tape.reshape(o, vec![b, spec.grids, spec.grid_h, spec.grid_w])?)
        }
    }
}

/// One-hot action broadcast over the grid: 4 channels, the action's channel
/// all ones, the rest zero.
pub fn broadcast_action(action: Action, h: usize, w: usize) -> Vec<f64> {
    let mut planes = vec![0.0; ACTION_CHANNELS * h * w];
    let c = action.id() as usize;
    planes[c * h * w..(c + 1) * h * w].fill(1.0);
    planes
}

/// Raw next-step logits from the projected latent grid.
///
/// `latent` is [B, grids, H, W] — the projected distribution reshaped onto
/// the grid, not raw logits. Actions are required iff the spec is
/// action-conditioned.
pub fn predict(
    tape: &mut Tape,
    params: &ModelParams,
    binding: &ParamBinding,
    latent: Var,
    actions: Option<&[Action]>,
) -> NetResult<Var> {
    let spec = &params.spec;
    let s = tape.shape(latent).to_vec();
    if s.len() != 4 || s[1] != spec.grids || s[2] != spec.grid_h || s[3] != spec.grid_w {
        return Err(NetError::BadInput {
            expected: format!("[B, {}, {}, {}]", spec.grids, spec.grid_h, spec.grid_w),
            got: s,
        });
    }
    let b = s[0];
    let input = match (spec.action_conditioned, actions) {
        (true, Some(acts)) => {
            if acts.len() != b {
                return Err(NetError::BadInput {
                    expected: format!("{b} actions"),
                    got: vec![acts.len()],
                });
            }
            let mut planes = Vec::with_capacity(b * ACTION_CHANNELS * spec.grid_h * spec.grid_w);
            for a in acts {
                planes.extend(broadcast_action(*a, spec.grid_h, spec.grid_w));
            }
            let avar = tape.constant(
                planes,
                vec![b, ACTION_CHANNELS, spec.grid_h, spec.grid_w],
            )?;
            tape.concat_channels(latent, avar)?
        }
        (false, None) => latent,
        (true, None) => {
            return Err(NetError::BadInput { expected: "actions for action-conditioned predictor".into(), got: vec![] })
        }
        (false, Some(_)) => {
            return Err(NetError::BadInput { expected: "no actions for passive predictor".into(), got: vec![] })
        }
    };
    let w1 = binding.var(params, "pred.conv1.w");
    let b1 = binding.var(params, "pred.conv1.b");
    let h = tape.conv2d_same(input, w1, Some(b1))?;
    let h = tape.relu(h);
    let w2 = binding.var(params, "pred.conv2.w");
    let b2 = binding.var(params, "pred.conv2.b");
    Ok(tape.conv2d_same(h, w2, Some(b2))?)
}

// ── Checkpoint format ───────────────────────────────────────────────────
//
// Binary layout, little-endian throughout:
//   magic            8 bytes  "GNWMCKPT"
//   version          u32      currently 1
//   seed             u64
//   spec echo        u32 length + JSON bytes (ModelSpec)
//   tensor count     u32
//   offset table     per tensor:
//       name         u32 length + UTF-8 bytes
//       ndim         u32, then u32 per dim
//       offset       u64   (bytes from start of the data section)
//       count        u64   (number of f64 values)
//   data section     f64 values, back to back
//
// Extra named arrays (optimizer moments, step counters) may follow the
// model tensors in the table; loaders that only want weights skip them.

const CKPT_MAGIC: &[u8; 8] = b"GNWMCKPT";
const CKPT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> NetResult<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| NetError::BadCheckpoint { reason: "non-UTF8 string".into() })
}

/// Extra named f64 arrays stored alongside the weights (optimizer state,
/// counters).
pub type ExtraArrays = Vec<(String, Vec<usize>, Vec<f64>)>;

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    extras: &ExtraArrays,
) -> NetResult<()> {
    let spec_echo = serde_json::to_string(&params.spec)
        .map_err(|e| NetError::BadCheckpoint { reason: e.to_string() })?;
    let mut entries: Vec<(&str, &[usize], &[f64])> = params
        .tensors
        .iter()
        .map(|(n, t)| (n.as_str(), t.shape.as_slice(), t.values.as_slice()))
        .collect();
    for (n, s, v) in extras {
        entries.push((n.as_str(), s.as_slice(), v.as_slice()));
    }

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    write_u32(&mut buf, CKPT_VERSION)?;
    write_u64(&mut buf, params.seed)?;
    write_str(&mut buf, &spec_echo)?;
    write_u32(&mut buf, entries.len() as u32)?;
    let mut offset = 0u64;
    for (name, shape, values) in &entries {
        write_str(&mut buf, name)?;
        write_u32(&mut buf, shape.len() as u32)?;
        for d in *shape {
            write_u32(&mut buf, *d as u32)?;
        }
        write_u64(&mut buf, offset)?;
        write_u64(&mut buf, values.len() as u64)?;
        offset += (values.len() * 8) as u64;
    }
    for (_, _, values) in &entries {
        for v in *values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // atomic: write sibling temp file, then rename
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> NetResult<(ModelParams, ExtraArrays)> {
    let bytes = std::fs::read(path)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(NetError::BadCheckpoint { reason: "bad magic".into() });
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(NetError::BadCheckpoint { reason: format!("unsupported version {version}") });
    }
    let seed = read_u64(&mut r)?;
    let spec_echo = read_str(&mut r)?;
    let spec: ModelSpec = serde_json::from_str(&spec_echo)
        .map_err(|e| NetError::BadCheckpoint { reason: format!("spec echo: {e}") })?;
    let count = read_u32(&mut r)? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let offset = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        table.push((name, shape, offset, n));
    }
    let data_start = bytes.len() - r.len();
    let mut arrays: ExtraArrays = Vec::with_capacity(count);
    for (name, shape, offset, n) in table {
        let start = data_start + offset;
        let end = start + n * 8;
        if end > bytes.len() {
            return Err(NetError::BadCheckpoint { reason: format!("{name}: data out of range") });
        }
        let mut values = Vec::with_capacity(n);
        for chunk in bytes[start..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        arrays.push((name, shape, values));
    }

    // split model tensors (leading, in spec order) from extras
    let expected = layer_shapes(&spec);
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, shape, _) in &expected {
        let found = arrays
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| NetError::BadCheckpoint { reason: format!("missing tensor {name}") })?;
        let (n, s, v) = arrays.remove(found);
        if &s != shape {
            return Err(NetError::BadCheckpoint {
                reason: format!("{n}: shape {s:?} != expected {shape:?}"),
            });
        }
        tensors.push((n, Tensor::param(v, s)?));
    }
    Ok((ModelParams { spec, seed, tensors }, arrays))
}
