//! Grid topology: fixed Gaussian smearing kernels, topological smearing over
//! a 2D grid or a 1D ring, projection onto the simplex/sphere intersection,
//! and inference-time grid snapping.
//!
//! The smear is a *structural* convolution with a fixed normalized kernel:
//! it participates in the gradient graph but its kernel is never learned.
//! The projection order is fixed: raw logits -> smear -> softmax -> L2.

use crate::tensor::{Tape, TensorError, Var};
use std::fmt;

pub type TopologyResult<T> = Result<T, TopologyError>;

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyError {
    /// Kernel width must be strictly positive.
    BadSigma { sigma: f64 },
    /// Logit tensor shape does not match the topology.
    ShapeMismatch { expected: String, got: Vec<usize> },
    /// Projection input contained NaN or infinity.
    NonFiniteInput,
    /// Node index outside the grid.
    IndexOutOfRange { index: usize, nodes: usize },
    /// A vector failed the latent-distribution invariants.
    InvalidDistribution { reason: String },
    Tensor(TensorError),
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::BadSigma { sigma } => write!(f, "sigma must be > 0, got {sigma}"),
            TopologyError::ShapeMismatch { expected, got } => {
                write!(f, "expected logits shaped {expected}, got {got:?}")
            }
            TopologyError::NonFiniteInput => write!(f, "projection input must be finite"),
            TopologyError::IndexOutOfRange { index, nodes } => {
                write!(f, "node index {index} out of range for {nodes} nodes")
            }
            TopologyError::InvalidDistribution { reason } => {
                write!(f, "invalid latent distribution: {reason}")
            }
            TopologyError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TopologyError {}

impl From<TensorError> for TopologyError {
    fn from(e: TensorError) -> Self {
        TopologyError::Tensor(e)
    }
}

/// Odd kernel side length for a given sigma: int(6*sigma) | 1.
pub fn kernel_size(sigma: f64) -> usize {
    (6.0 * sigma) as usize | 1
}

/// Normalized 2D Gaussian on the integer offset grid, side k = int(6*sigma)|1.
pub fn build_gaussian_kernel_2d(sigma: f64) -> TopologyResult<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(TopologyError::BadSigma { sigma });
    }
    let k = kernel_size(sigma);
    let half = (k / 2) as isize;
    let mut kernel = Vec::with_capacity(k * k);
    let mut sum = 0.0;
    for y in -half..=half {
        for x in -half..=half {
            let v = (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push(v);
            sum += v;
        }
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    Ok(kernel)
}

/// Normalized 1D Gaussian; k clamped to the largest odd length <= n.
pub fn build_gaussian_kernel_1d(sigma: f64, n: usize) -> TopologyResult<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(TopologyError::BadSigma { sigma });
    }
    let mut k = kernel_size(sigma);
    if k > n {
        k = if n % 2 == 1 { n } else { n - 1 };
    }
    let half = (k / 2) as isize;
    let mut kernel = Vec::with_capacity(k);
    let mut sum = 0.0;
    for x in -half..=half {
        let v = (-((x * x) as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    Ok(kernel)
}

/// Grid geometry plus its fixed smearing kernel.
#[derive(Debug, Clone)]
pub enum GridTopology {
    /// H x W planar grid; smearing uses zero "same" padding, so boundary
    /// rows lose a little mass to the outside. That matches the reference
    /// smearing pipeline and is accepted.
    Planar2d { height: usize, width: usize, sigma: f64, kernel: Vec<f64>, k: usize },
    /// Closed ring of N nodes; smearing wraps, conserving mass exactly.
    Ring1d { nodes: usize, sigma: f64, kernel: Vec<f64>, k: usize },
}

/// Node address on a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeCoord {
    Planar { row: usize, col: usize },
    Ring { pos: usize },
}

impl GridTopology {
    pub fn planar(height: usize, width: usize, sigma: f64) -> TopologyResult<Self> {
        let kernel = build_gaussian_kernel_2d(sigma)?;
        let k = kernel_size(sigma);
        Ok(GridTopology::Planar2d { height, width, sigma, kernel, k })
    }

    pub fn ring(nodes: usize, sigma: f64) -> TopologyResult<Self> {
        let kernel = build_gaussian_kernel_1d(sigma, nodes)?;
        let k = kernel.len();
        Ok(GridTopology::Ring1d { nodes, sigma, kernel, k })
    }

    /// Total node count D.
    pub fn node_count(&self) -> usize {
        match self {
            GridTopology::Planar2d { height, width, .. } => height * width,
            GridTopology::Ring1d { nodes, .. } => *nodes,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            GridTopology::Planar2d { sigma, .. } | GridTopology::Ring1d { sigma, .. } => *sigma,
        }
    }

    pub fn kernel(&self) -> &[f64] {
        match self {
            GridTopology::Planar2d { kernel, .. } | GridTopology::Ring1d { kernel, .. } => kernel,
        }
    }

    /// Row-major coordinates of a flat node index.
    pub fn node_coords(&self, index: usize) -> TopologyResult<NodeCoord> {
        let d = self.node_count();
        if index >= d {
            return Err(TopologyError::IndexOutOfRange { index, nodes: d });
        }
        Ok(match self {
            GridTopology::Planar2d { width, .. } => {
                NodeCoord::Planar { row: index / width, col: index % width }
            }
            GridTopology::Ring1d { .. } => NodeCoord::Ring { pos: index },
        })
    }

    pub fn coords_to_index(&self, coord: NodeCoord) -> TopologyResult<usize> {
        let index = match (self, coord) {
            (GridTopology::Planar2d { height, width, .. }, NodeCoord::Planar { row, col }) => {
                if row >= *height || col >= *width {
                    return Err(TopologyError::IndexOutOfRange {
                        index: row * width + col,
                        nodes: height * width,
                    });
                }
                row * width + col
            }
            (GridTopology::Ring1d { nodes, .. }, NodeCoord::Ring { pos }) => {
                if pos >= *nodes {
                    return Err(TopologyError::IndexOutOfRange { index: pos, nodes: *nodes });
                }
                pos
            }
            _ => {
                return Err(TopologyError::InvalidDistribution {
                    reason: "coordinate kind does not match topology kind".into(),
                })
            }
        };
        Ok(index)
    }

    /// Topological smearing: convolve logits with the fixed Gaussian kernel.
    ///
    /// Planar topologies take `[B, C, H, W]` (each channel smeared
    /// independently with the same kernel); rings take `[B, N]`.
    /// The output stays in the gradient graph.
    pub fn smear(&self, tape: &mut Tape, logits: Var) -> TopologyResult<Var> {
        match self {
            GridTopology::Planar2d { height, width, kernel, k, .. } => {
                let s = tape.shape(logits).to_vec();
                if s.len() != 4 || s[2] != *height || s[3] != *width {
                    return Err(TopologyError::ShapeMismatch {
                        expected: format!("[B, C, {height}, {width}]"),
                        got: s,
                    });
                }
                let (b, c) = (s[0], s[1]);
                let merged = tape.reshape(logits, vec![b * c, 1, *height, *width])?;
                let kvar = tape.constant(kernel.clone(), vec![1, 1, *k, *k])?;
                let smeared = tape.conv2d_same(merged, kvar, None)?;
                Ok(tape.reshape(smeared, s)?)
            }
            GridTopology::Ring1d { nodes, kernel, .. } => {
                let s = tape.shape(logits).to_vec();
                if s.len() != 2 || s[1] != *nodes {
                    return Err(TopologyError::ShapeMismatch {
                        expected: format!("[B, {nodes}]"),
                        got: s,
                    });
                }
                let kvar = tape.constant(kernel.clone(), vec![kernel.len()])?;
                Ok(tape.conv1d_circular(logits, kvar)?)
            }
        }
    }

    /// Kernel dump as CSV rows (one grid row per line; a single line for rings).
    pub fn kernel_csv(&self) -> String {
        let mut out = String::new();
        match self {
            GridTopology::Planar2d { kernel, k, .. } => {
                for row in kernel.chunks(*k) {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
            GridTopology::Ring1d { kernel, .. } => {
                let cells: Vec<String> = kernel.iter().map(|v| format!("{v:.17e}")).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        out
    }
}

/// Simplex-and-sphere projection: row-wise softmax followed by row-wise L2
/// normalization. Rows of the output are nonnegative, unit-L2, with L1 norm
/// in [1, sqrt(D)]. Errors on non-finite input.
pub fn project(tape: &mut Tape, smeared_logits: Var) -> TopologyResult<Var> {
    if tape.values(smeared_logits).iter().any(|v| !v.is_finite()) {
        return Err(TopologyError::NonFiniteInput);
    }
    let s = tape.softmax_rows(smeared_logits)?;
    Ok(tape.l2_normalize_rows(s)?)
}

/// A D-vector on the intersection of the nonnegative orthant, the softmax
/// simplex image, and the unit L2 sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    values: Vec<f64>,
}

impl LatentDistribution {
    /// Validates the invariants: unit L2 norm (1e-6), nonnegative entries,
    /// L1 norm within [1, sqrt(D)] (1e-6 slack).
    pub fn new(values: Vec<f64>) -> TopologyResult<Self> {
        let d = values.len();
        if d == 0 {
            return Err(TopologyError::InvalidDistribution { reason: "empty vector".into() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TopologyError::InvalidDistribution { reason: "non-finite entry".into() });
        }
        if let Some(v) = values.iter().find(|v| **v < -1e-9) {
            return Err(TopologyError::InvalidDistribution {
                reason: format!("negative entry {v}"),
            });
        }
        let l2: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (l2 - 1.0).abs() > 1e-6 {
            return Err(TopologyError::InvalidDistribution {
                reason: format!("L2 norm {l2} not within 1e-6 of 1"),
            });
        }
        let l1: f64 = values.iter().map(|v| v.abs()).sum();
        let upper = (d as f64).sqrt();
        if !(1.0 - 1e-6..=upper + 1e-6).contains(&l1) {
            return Err(TopologyError::InvalidDistribution {
                reason: format!("L1 norm {l1} outside [1, sqrt({d})]"),
            });
        }
        Ok(LatentDistribution { values })
    }

    /// Exact one-hot at `index`.
    pub fn one_hot(d: usize, index: usize) -> TopologyResult<Self> {
        if index >= d {
            return Err(TopologyError::IndexOutOfRange { index, nodes: d });
        }
        let mut values = vec![0.0; d];
        values[index] = 1.0;
        Ok(LatentDistribution { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat index of the maximal entry; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Population standard deviation of the entries.
    pub fn entry_std(&self) -> f64 {
        let d = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / d;
        (self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d).sqrt()
    }
}

/// Flat argmax with lowest-index tie-breaking.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        if *v > best_v {
            best_v = *v;
            best = i;
        }
    }
    best
}

/// Inference-time grid snapping: replace a distribution by the exact one-hot
/// at its argmax. Idempotent; ties break to the lowest flat index.
pub fn snap(p: &LatentDistribution) -> LatentDistribution {
    LatentDistribution::one_hot(p.len(), p.argmax()).expect("argmax in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_sizes_follow_formula() {
        assert_eq!(kernel_size(1.5), 9);
        assert_eq!(kernel_size(1.0), 7);
        assert_eq!(kernel_size(0.5), 3);
    }

    #[test]
    fn kernel_2d_normalized_for_various_sigma() {
        for sigma in [0.5, 1.5, 3.0] {
            let k = build_gaussian_kernel_2d(sigma).unwrap();
            let sum: f64 = k.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sigma={sigma}");
            assert!(k.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn kernel_2d_deterministic() {
        let a = build_gaussian_kernel_2d(1.5).unwrap();
        let b = build_gaussian_kernel_2d(1.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_2d_rejects_nonpositive_sigma() {
        assert!(build_gaussian_kernel_2d(0.0).is_err());
        assert!(build_gaussian_kernel_2d(-1.0).is_err());
    }

    #[test]
    fn kernel_1d_degenerate_sigma_gives_identity() {
        let k = build_gaussian_kernel_1d(0.3, 50).unwrap();
        assert_eq!(k, vec![1.0]);
    }

    #[test]
    fn kernel_1d_symmetric_and_normalized() {
        let k = build_gaussian_kernel_1d(1.5, 50).unwrap();
        assert_eq!(k.len(), 9);
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for i in 0..4 {
            assert!((k[i] - k[8 - i]).abs() < 1e-15);
        }
        assert!(k[4] > k[3]);
    }

    #[test]
    fn kernel_1d_clamps_to_ring() {
        let k = build_gaussian_kernel_1d(3.0, 8) .unwrap();
        assert_eq!(k.len(), 7); // int(18)|1 = 19 clamped to largest odd <= 8
    }

    #[test]
    fn smear_delta_reproduces_kernel_bump() {
        let topo = GridTopology::planar(9, 9, 0.5).unwrap();
        let mut tape = Tape::new();
        let mut logits = vec![0.0; 81];
        logits[4 * 9 + 4] = 1.0;
        let x = tape.leaf(logits, vec![1, 1, 9, 9], false).unwrap();
        let y = topo.smear(&mut tape, x).unwrap();
        let kernel = topo.kernel();
        let out = tape.values(y);
        for dy in 0..3 {
            for dx in 0..3 {
                let v = out[(3 + dy) * 9 + 3 + dx];
                assert!((v - kernel[(2 - dy) * 3 + (2 - dx)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smear_uniform_on_ring_stays_uniform() {
        let topo = GridTopology::ring(12, 1.0).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.5; 12], vec![1, 12], false).unwrap();
        let y = topo.smear(&mut tape, x).unwrap();
        for v in tape.values(y) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn smear_is_linear() {
        let topo = GridTopology::planar(6, 6, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xv: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let yv: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (2.5, -0.7);
        let run = |v: Vec<f64>| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(v, vec![1, 1, 6, 6], false).unwrap();
            let y = topo.smear(&mut tape, x).unwrap();
            tape.values(y).to_vec()
        };
        let combo: Vec<f64> = xv.iter().zip(&yv).map(|(x, y)| a * x + b * y).collect();
        let lhs = run(combo);
        let sx = run(xv);
        let sy = run(yv);
        for i in 0..36 {
            assert!((lhs[i] - (a * sx[i] + b * sy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn smear_ring_gradient_of_sum_is_one() {
        let topo = GridTopology::ring(8, 0.8).unwrap();
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = tape.leaf(xv, vec![1, 8], true).unwrap();
        let y = topo.smear(&mut tape, x).unwrap();
        let l = tape.sum_all(y);
        tape.backward(l).unwrap();
        for g in tape.grad(x).unwrap() {
            assert!((g - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn smear_rejects_mismatched_shape() {
        let topo = GridTopology::planar(4, 4, 0.5).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.0; 9], vec![1, 1, 3, 3], false).unwrap();
        assert!(matches!(topo.smear(&mut tape, x), Err(TopologyError::ShapeMismatch { .. })));
    }

    #[test]
    fn project_zero_logits_gives_inverse_sqrt_d() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.0; 4], vec![1, 4], false).unwrap();
        let p = project(&mut tape, x).unwrap();
        for v in tape.values(p) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn project_saturated_logits_approach_one_hot() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1000.0, 0.0, 0.0, 0.0], vec![1, 4], false).unwrap();
        let p = project(&mut tape, x).unwrap();
        let v = tape.values(p);
        assert!((v[0] - 1.0).abs() < 1e-9);
        let l1: f64 = v.iter().sum();
        assert!((l1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn project_rejects_nan() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![f64::NAN, 0.0], vec![1, 2], false).unwrap();
        assert!(matches!(project(&mut tape, x), Err(TopologyError::NonFiniteInput)));
    }

    #[test]
    fn project_output_satisfies_invariants_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let d = rng.random_range(2..32);
            let logits: Vec<f64> = (0..d).map(|_| rng.random_range(-30.0..30.0)).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(logits, vec![1, d], false).unwrap();
            let p = project(&mut tape, x).unwrap();
            LatentDistribution::new(tape.values(p).to_vec()).unwrap();
        }
    }

    #[test]
    fn snap_takes_clear_argmax_and_is_idempotent() {
        let p = LatentDistribution::new(vec![0.1 / (0.82f64).sqrt(), 0.9 / (0.82f64).sqrt()])
            .unwrap();
        let s = snap(&p);
        assert_eq!(s.values(), &[0.0, 1.0]);
        assert_eq!(snap(&s), s);
    }

    #[test]
    fn snap_breaks_ties_to_lowest_index() {
        let p = LatentDistribution::new(vec![0.5; 4]).unwrap();
        assert_eq!(snap(&p).values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn snap_project_preserves_strong_peaks() {
        // adjacent nodes with a >=10 logit margin keep their argmax through
        // smear + project
        let topo = GridTopology::planar(7, 7, 1.0).unwrap();
        for hot in [3 * 7 + 3, 3 * 7 + 4] {
            let mut logits = vec![0.0; 49];
            logits[hot] = 10.0;
            logits[if hot == 3 * 7 + 3 { 3 * 7 + 4 } else { 3 * 7 + 3 }] = 0.0;
            let mut tape = Tape::new();
            let x = tape.leaf(logits.clone(), vec![1, 1, 7, 7], false).unwrap();
            let sm = topo.smear(&mut tape, x).unwrap();
            let flat = tape.reshape(sm, vec![1, 49]).unwrap();
            let p = project(&mut tape, flat).unwrap();
            let dist = LatentDistribution::new(tape.values(p).to_vec()).unwrap();
            assert_eq!(snap(&dist).argmax(), argmax(&logits));
        }
    }

    #[test]
    fn node_coords_row_major_round_trip() {
        let topo = GridTopology::planar(15, 15, 1.5).unwrap();
        assert_eq!(topo.node_coords(0).unwrap(), NodeCoord::Planar { row: 0, col: 0 });
        assert_eq!(topo.node_coords(16).unwrap(), NodeCoord::Planar { row: 1, col: 1 });
        for i in 0..225 {
            let c = topo.node_coords(i).unwrap();
            assert_eq!(topo.coords_to_index(c).unwrap(), i);
        }
        assert!(topo.node_coords(225).is_err());
    }

    proptest! {
        #[test]
        fn project_l1_bounds_hold(logits in proptest::collection::vec(-20.0f64..20.0, 2..24)) {
            let d = logits.len();
            let mut tape = Tape::new();
            let x = tape.leaf(logits, vec![1, d], false).unwrap();
            let p = project(&mut tape, x).unwrap();
            let l1: f64 = tape.values(p).iter().sum();
            prop_assert!(l1 >= 1.0 - 1e-9);
            prop_assert!(l1 <= (d as f64).sqrt() + 1e-9);
        }

        #[test]
        fn snap_idempotent_on_projected_rows(logits in proptest::collection::vec(-5.0f64..5.0, 4..16)) {
            let d = logits.len();
            let mut tape = Tape::new();
            let x = tape.leaf(logits, vec![1, d], false).unwrap();
            let p = project(&mut tape, x).unwrap();
            let dist = LatentDistribution::new(tape.values(p).to_vec()).unwrap();
            let once = snap(&dist);
            prop_assert_eq!(snap(&once), once);
        }
    }
}
