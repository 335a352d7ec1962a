//! Elastic ring TSP solver: a 1D circular topology trained with the same
//! expansion/contraction equilibrium as the 2D grids, plus an elastic
//! tension term that pulls ring-adjacent soft centroids together in the
//! plane.
//!
//! The kernel width anneals geometrically (simulated-annealing style) and
//! the tension weight decays proportionally to it: early, wide smearing and
//! strong tension untangle the global tour shape; late, narrow smearing and
//! weak tension let the thermodynamic forces snap node assignments onto
//! exact cities. Restarts run in parallel and are merged by (length,
//! restart index), so the result is deterministic.

use crate::envs::TspInstance;
use crate::opt::{Adam, AdamConfig};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::thermo;
use crate::topology::{argmax, GridTopology, TopologyError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;

pub type TspResult<T> = Result<T, TspError>;

#[derive(Debug)]
pub enum TspError {
    BadConfig { reason: String },
    TooManyCities { got: usize, max: usize },
    Tensor(TensorError),
    Topology(TopologyError),
    Thermo(thermo::ThermoError),
}

impl fmt::Display for TspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TspError::BadConfig { reason } => write!(f, "bad solver config: {reason}"),
            TspError::TooManyCities { got, max } => {
                write!(f, "brute force supports at most {max} cities, got {got}")
            }
            TspError::Tensor(e) => write!(f, "{e}"),
            TspError::Topology(e) => write!(f, "{e}"),
            TspError::Thermo(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TspError {}

impl From<TensorError> for TspError {
    fn from(e: TensorError) -> Self {
        TspError::Tensor(e)
    }
}

impl From<TopologyError> for TspError {
    fn from(e: TopologyError) -> Self {
        TspError::Topology(e)
    }
}

impl From<thermo::ThermoError> for TspError {
    fn from(e: thermo::ThermoError) -> Self {
        TspError::Thermo(e)
    }
}

const MLP_HIDDEN: usize = 64;
const CENTROID_EPS: f64 = 1e-6;

/// Ring solver schedule and budget.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSolverConfig {
    /// Ring size N = ceil(ring_factor * C); must give N > C.
    pub ring_factor: f64,
    /// Initial kernel width; `None` means 0.3 * N.
    pub sigma_start: Option<f64>,
    pub sigma_end: f64,
    pub steps: usize,
    /// Elastic weight at sigma_start; decays proportionally to sigma.
    pub lambda0: f64,
    pub learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Heating peak: alpha ramps from this down to 1 over the first fifth
    /// of the schedule, boosting the expansion force while assignments are
    /// still soft.
    pub alpha_start: f64,
}

impl Default for RingSolverConfig {
    fn default() -> Self {
        RingSolverConfig {
            ring_factor: 2.5,
            sigma_start: None,
            sigma_end: 0.5,
            steps: 3000,
            lambda0: 0.3,
            learning_rate: 0.03,
            restarts: 5,
            seed: 0,
            alpha_start: 3.0,
        }
    }
}

impl RingSolverConfig {
    pub fn ring_size(&self, cities: usize) -> usize {
        (self.ring_factor * cities as f64).ceil() as usize
    }

    fn validate(&self, cities: usize) -> TspResult<()> {
        let n = self.ring_size(cities);
        if n <= cities {
            return Err(TspError::BadConfig {
                reason: format!("ring size {n} must exceed city count {cities}"),
            });
        }
        let s0 = self.sigma_start.unwrap_or(0.3 * n as f64);
        if !(self.sigma_end > 0.0) || self.sigma_end >= s0 {
            return Err(TspError::BadConfig {
                reason: format!("need 0 < sigma_end ({}) < sigma_start ({s0})", self.sigma_end),
            });
        }
        if self.steps < 2 || self.restarts == 0 {
            return Err(TspError::BadConfig { reason: "steps >= 2 and restarts >= 1".into() });
        }
        Ok(())
    }
}

/// Visiting permutation with its closed-tour length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
}

pub fn tour_length(order: &[usize], instance: &TspInstance) -> f64 {
    let c = order.len();
    let mut total = 0.0;
    for i in 0..c {
        let (x1, y1) = instance.cities[order[i]];
        let (x2, y2) = instance.cities[order[(i + 1) % c]];
        total += ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
    }
    total
}

fn is_permutation(order: &[usize], c: usize) -> bool {
    let mut seen = vec![false; c];
    if order.len() != c {
        return false;
    }
    for &i in order {
        if i >= c || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

// ── Oracles and baselines ───────────────────────────────────────────────

/// Exhaustive optimum for C <= 10: first city fixed, reversed duplicates
/// skipped, (C-1)!/2 tours examined.
pub fn brute_force_optimal(instance: &TspInstance) -> TspResult<Tour> {
    let c = instance.len();
    if c > 10 {
        return Err(TspError::TooManyCities { got: c, max: 10 });
    }
    let mut rest: Vec<usize> = (1..c).collect();
    let mut best = Tour { order: (0..c).collect(), length: tour_length(&(0..c).collect::<Vec<_>>(), instance) };
    permute(&mut rest, 0, &mut |perm| {
        if perm[0] > perm[c - 2] {
            return; // orientation duplicate
        }
        let mut order = Vec::with_capacity(c);
        order.push(0);
        order.extend_from_slice(perm);
        let len = tour_length(&order, instance);
        if len < best.length {
            best = Tour { order, length: len };
        }
    });
    Ok(best)
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Classic greedy nearest-neighbor tour from a start city.
pub fn nearest_neighbor(instance: &TspInstance, start: usize) -> Tour {
    let c = instance.len();
    let mut visited = vec![false; c];
    let mut order = Vec::with_capacity(c);
    let mut current = start;
    visited[current] = true;
    order.push(current);
    for _ in 1..c {
        let (cx, cy) = instance.cities[current];
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, (x, y)) in instance.cities.iter().enumerate() {
            if !visited[j] {
                let d = (cx - x).powi(2) + (cy - y).powi(2);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        order.push(best);
        current = best;
    }
    let length = tour_length(&order, instance);
    Tour { order, length }
}

// ── The differentiable solver ───────────────────────────────────────────

struct RingNet {
    params: Vec<Tensor>,
}

impl RingNet {
    fn init(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |rows: usize, cols: usize, fan_in: usize| -> Tensor {
            let s = (1.0 / fan_in as f64).sqrt();
            let vals = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
            Tensor::param(vals, vec![rows, cols]).unwrap()
        };
        let w1 = mk(2, MLP_HIDDEN, 2);
        let w2 = mk(MLP_HIDDEN, n, MLP_HIDDEN);
        // random first bias so every city, centered or not, activates some
        // hidden units and stays trainable
        let b1_vals: Vec<f64> = (0..MLP_HIDDEN).map(|_| rng.random_range(-0.35..0.35)).collect();
        let b1 = Tensor::param(b1_vals, vec![MLP_HIDDEN]).unwrap();
        let b2 = Tensor::param(vec![0.0; n], vec![n]).unwrap();
        RingNet { params: vec![w1, b1, w2, b2] }
    }

    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|t| tape.param(t)).collect()
    }
}

/// cities -> MLP -> circular smear (current sigma) -> project. Returns the
/// per-city assignment distributions (rows) plus the smeared logits they
/// came from.
pub fn ring_forward(
    tape: &mut Tape,
    vars: &[Var],
    cities: Var,
    topo: &GridTopology,
) -> TspResult<(Var, Var)> {
    let h = tape.matmul(cities, vars[0])?;
    let h = tape.add_row_broadcast(h, vars[1])?;
    let h = tape.relu(h);
    let logits = tape.matmul(h, vars[2])?;
    let logits = tape.add_row_broadcast(logits, vars[3])?;
    let smeared = topo.smear(tape, logits)?;
    let assign = crate::topology::project(tape, smeared)?;
    Ok((assign, smeared))
}

/// Elastic band energy on the ring's node positions.
///
/// Each ring node's position is the city average under a softmax over
/// cities (a column softmax of the smeared logits), so every node has a
/// well-defined, bounded-weight position and the closed chain of node
/// positions is the elastic band: sum_j ||y_j - y_{j+1}||^2.
///
/// This is the tension the solver optimizes; the per-city centroid variant
/// [`elastic_penalty`] has unbounded 1/occupancy gradients on near-empty
/// nodes, which destabilize the shared encoder as soon as the tension
/// weight is large enough to matter.
pub fn band_penalty(tape: &mut Tape, smeared_logits: Var, cities: Var) -> TspResult<Var> {
    let lt = tape.transpose(smeared_logits)?; // [N, C]
    let w = tape.softmax_rows(lt)?; // rows sum to 1 over cities
    let y = tape.matmul(w, cities)?; // [N, 2] band positions
    let y_next = tape.roll_rows(y, 1)?;
    let diff = tape.sub(y, y_next)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum_all(sq))
}

/// Elastic tension over soft per-node centroids mu_j = sum_i a_ij city_i /
/// (m_j + eps), penalized by occupancy-weighted squared distance between
/// ring-adjacent centroids: sum_j min(m_j, m_{j+1}) ||mu_j - mu_{j+1}||^2.
/// The weighting keeps empty ring segments silent.
///
/// Diagnostic / reporting form; the solver's optimized tension is
/// [`band_penalty`], whose gradients stay bounded on near-empty nodes.
pub fn elastic_penalty(tape: &mut Tape, assignments: Var, cities: Var) -> TspResult<Var> {
    let shape = tape.shape(cities).to_vec();
    let c = shape[0];
    let at = tape.transpose(assignments)?; // [N, C]
    let ones = tape.constant(vec![1.0; c], vec![c, 1])?;
    let m = tape.matmul(at, ones)?; // occupancy [N, 1]
    let m_eps = tape.add_scalar(m, CENTROID_EPS);

    let mut axis_terms = Vec::with_capacity(2);
    for axis in 0..2 {
        let coords: Vec<f64> = tape.values(cities).iter().skip(axis).step_by(2).cloned().collect();
        let col = tape.constant(coords, vec![c, 1])?;
        let numer = tape.matmul(at, col)?;
        let mu = tape.div(numer, m_eps)?;
        let mu_next = tape.roll_rows(mu, 1)?;
        let diff = tape.sub(mu, mu_next)?;
        axis_terms.push(tape.mul(diff, diff)?);
    }
    let sq = tape.add(axis_terms[0], axis_terms[1])?;
    let m_next = tape.roll_rows(m, 1)?;
    let weight = tape.min(m, m_next)?;
    let weighted = tape.mul(weight, sq)?;
    Ok(tape.sum_all(weighted))
}

/// Argmax assignment extraction: cities sorted by ring node; ties on one
/// node are ordered by projection onto the local ring tangent (the
/// direction between the two neighboring soft centroids), with city index
/// as the final fallback.
pub fn extract_tour(assignments: &[f64], n: usize, instance: &TspInstance) -> Tour {
    let c = instance.len();
    let nodes: Vec<usize> = (0..c).map(|i| argmax(&assignments[i * n..(i + 1) * n])).collect();

    // soft centroids and occupancies for tangent estimation
    let mut occupancy = vec![0.0; n];
    let mut centroid = vec![(0.0, 0.0); n];
    for i in 0..c {
        for j in 0..n {
            let a = assignments[i * n + j];
            occupancy[j] += a;
            centroid[j].0 += a * instance.cities[i].0;
            centroid[j].1 += a * instance.cities[i].1;
        }
    }
    for j in 0..n {
        centroid[j].0 /= occupancy[j] + CENTROID_EPS;
        centroid[j].1 /= occupancy[j] + CENTROID_EPS;
    }

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        nodes[a].cmp(&nodes[b]).then_with(|| {
            let j = nodes[a];
            let prev = centroid[(j + n - 1) % n];
            let next = centroid[(j + 1) % n];
            let tangent = (next.0 - prev.0, next.1 - prev.1);
            let pa = instance.cities[a].0 * tangent.0 + instance.cities[a].1 * tangent.1;
            let pb = instance.cities[b].0 * tangent.0 + instance.cities[b].1 * tangent.1;
            pa.partial_cmp(&pb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        })
    });
    let length = tour_length(&order, instance);
    Tour { order, length }
}

/// Per-restart diagnostics.
#[derive(Debug, Clone)]
pub struct RestartReport {
    pub restart: usize,
    pub length: f64,
    pub final_thermo: f64,
    pub final_elastic: f64,
    pub distinct_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub tour: Tour,
    pub best_restart: usize,
    pub ring_size: usize,
    pub restarts: Vec<RestartReport>,
}

fn child_seed(seed: u64, lane: u64) -> u64 {
    let mut z = seed ^ lane.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn solve_one(
    instance: &TspInstance,
    config: &RingSolverConfig,
    n: usize,
    restart: usize,
) -> TspResult<(Tour, RestartReport)> {
    let c = instance.len();
    let sigma0 = config.sigma_start.unwrap_or(0.3 * n as f64);
    let net = RingNet::init(n, child_seed(config.seed, restart as u64));
    let mut net = net;
    let sizes: Vec<usize> = net.params.iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(AdamConfig { lr: config.learning_rate, ..Default::default() }, &sizes);
    // center on the cloud mean so the net never sees a degenerate
    // all-zero input and the encoder starts from a symmetric view
    let (mx, my) = {
        let inv = 1.0 / c as f64;
        instance.cities.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * inv, a.1 + p.1 * inv))
    };
    let city_values: Vec<f64> =
        instance.cities.iter().flat_map(|(x, y)| [x - mx, y - my]).collect();

    let mut final_assign = vec![0.0; c * n];
    let mut final_thermo = f64::NAN;
    let mut final_elastic = f64::NAN;
    for step in 0..config.steps {
        let f = step as f64 / (config.steps - 1) as f64;
        let sigma = sigma0 * (config.sigma_end / sigma0).powf(f);
        let lambda = config.lambda0 * sigma / sigma0;
        let alpha = if f < 0.2 {
            config.alpha_start + (1.0 - config.alpha_start) * (f / 0.2)
        } else {
            1.0
        };
        let topo = GridTopology::ring(n, sigma)?;

        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let cities = tape.constant(city_values.clone(), vec![c, 2])?;
        let (assign, smeared) = ring_forward(&mut tape, &vars, cities, &topo)?;
        let g = thermo::thermo_graph(&mut tape, assign, assign, alpha, 0.0)?;
        let elastic = band_penalty(&mut tape, smeared, cities)?;
        let scaled = tape.scale(elastic, lambda);
        let loss = tape.add(g.total, scaled)?;

        let loss_v = tape.values(loss)[0];
        if !loss_v.is_finite() {
            // freeze at the last good state; extraction below still yields
            // a valid permutation
            break;
        }
        tape.backward(loss)?;
        let grads: Vec<Option<&[f64]>> = vars.iter().map(|v| tape.grad(*v)).collect();
        adam.step(&mut net.params, &grads);

        if step + 1 == config.steps {
            final_assign.copy_from_slice(tape.values(assign));
            final_thermo = tape.values(g.total)[0];
            final_elastic = tape.values(elastic)[0];
        }
    }
    // final forward with the end-of-schedule parameters and kernel
    let topo = GridTopology::ring(n, config.sigma_end)?;
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let cities = tape.constant(city_values.clone(), vec![c, 2])?;
    let (assign, _) = ring_forward(&mut tape, &vars, cities, &topo)?;
    final_assign.copy_from_slice(tape.values(assign));

    let tour = extract_tour(&final_assign, n, instance);
    let mut distinct: Vec<usize> =
        (0..c).map(|i| argmax(&final_assign[i * n..(i + 1) * n])).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let report = RestartReport {
        restart,
        length: tour.length,
        final_thermo,
        final_elastic,
        distinct_nodes: distinct.len(),
    };
    Ok((tour, report))
}

/// Best-of-restarts solve; always returns a valid permutation. Restarts run
/// in parallel; the merge is by (length, restart index).
pub fn solve(instance: &TspInstance, config: &RingSolverConfig) -> TspResult<SolveReport> {
    let c = instance.len();
    config.validate(c)?;
    let n = config.ring_size(c);
    let results: Vec<TspResult<(Tour, RestartReport)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| solve_one(instance, config, n, r))
        .collect();
    let mut tours = Vec::with_capacity(config.restarts);
    let mut reports = Vec::with_capacity(config.restarts);
    for r in results {
        let (tour, report) = r?;
        debug_assert!(is_permutation(&tour.order, c));
        tours.push(tour);
        reports.push(report);
    }
    let best = (0..tours.len())
        .min_by(|&a, &b| {
            tours[a]
                .length
                .partial_cmp(&tours[b].length)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
        .unwrap();
    Ok(SolveReport { tour: tours[best].clone(), best_restart: best, ring_size: n, restarts: reports })
}

// ── Instance text format ────────────────────────────────────────────────

/// One `x y` pair per line.
pub fn instance_to_text(instance: &TspInstance) -> String {
    let mut out = String::new();
    for (x, y) in &instance.cities {
        out.push_str(&format!("{x:.17} {y:.17}\n"));
    }
    out
}

pub fn instance_from_text(text: &str) -> TspResult<TspInstance> {
    let mut cities = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let x: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TspError::BadConfig { reason: format!("line {}: bad x", i + 1) })?;
        let y: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TspError::BadConfig { reason: format!("line {}: bad y", i + 1) })?;
        cities.push((x, y));
    }
    if cities.len() < 3 {
        return Err(TspError::BadConfig { reason: "need at least 3 cities".into() });
    }
    Ok(TspInstance { cities })
}

/// Tour text: one city index per line, then `length = L`.
pub fn tour_to_text(tour: &Tour) -> String {
    let mut out = String::new();
    for i in &tour.order {
        out.push_str(&format!("{i}\n"));
    }
    out.push_str(&format!("length = {:.12}\n", tour.length));
    out
}

/// SVG of cities, final soft ring centroids, and the tour cycle.
pub fn tour_svg(instance: &TspInstance, tour: &Tour) -> String {
    let scale = 400.0;
    let pad = 20.0;
    let mut svg = crate::render::Svg::new(scale + 2.0 * pad, scale + 2.0 * pad);
    let pt = |x: f64, y: f64| (pad + x * scale, pad + (1.0 - y) * scale);
    let points: Vec<(f64, f64)> =
        tour.order.iter().map(|&i| pt(instance.cities[i].0, instance.cities[i].1)).collect();
    svg.polyline(&points, "#1f77b4", 1.5, true);
    for (x, y) in &instance.cities {
        let (px, py) = pt(*x, *y);
        svg.circle(px, py, 3.0, "#d62728");
    }
    svg.text(pad, 14.0, 11.0, &format!("length {:.4}", tour.length));
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::gen_tsp_instance;

    #[test]
    fn tour_length_square() {
        let sq = TspInstance::unit_square_corners();
        assert!((tour_length(&[0, 1, 2, 3], &sq) - 4.0).abs() < 1e-12);
        // crossing diagonal order is longer
        assert!(tour_length(&[0, 2, 1, 3], &sq) > 4.0);
    }

    #[test]
    fn brute_force_square_and_triangle() {
        let sq = TspInstance::unit_square_corners();
        let best = brute_force_optimal(&sq).unwrap();
        assert!((best.length - 4.0).abs() < 1e-12);
        let tri = TspInstance { cities: vec![(0.0, 0.0), (1.0, 0.0), (0.5, 0.8)] };
        let t = brute_force_optimal(&tri).unwrap();
        // all 3-city tours have the same length
        assert!((t.length - tour_length(&[0, 2, 1], &tri)).abs() < 1e-12);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let i = gen_tsp_instance(11, 0).unwrap();
        assert!(matches!(brute_force_optimal(&i), Err(TspError::TooManyCities { .. })));
    }

    #[test]
    fn nearest_neighbor_from_corner_is_optimal_on_square() {
        let sq = TspInstance::unit_square_corners();
        let t = nearest_neighbor(&sq, 0);
        assert!((t.length - 4.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_never_worse_than_nearest_neighbor() {
        for seed in 0..50 {
            let i = gen_tsp_instance(8, seed).unwrap();
            let bf = brute_force_optimal(&i).unwrap();
            let nn = nearest_neighbor(&i, 0);
            assert!(bf.length <= nn.length + 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn elastic_penalty_degenerate_and_unit_cases() {
        // all cities at one point -> penalty 0
        let mut tape = Tape::new();
        let a = tape.leaf(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![2, 3], false).unwrap();
        let cities = tape.leaf(vec![0.3, 0.7, 0.3, 0.7], vec![2, 2], false).unwrap();
        let p = elastic_penalty(&mut tape, a, cities).unwrap();
        assert!(tape.values(p)[0].abs() < 1e-9);

        // two adjacent occupied nodes with unit occupancy and centroids d
        // apart contribute d^2; pairs flanking the empty node have zero
        // weight
        let mut tape = Tape::new();
        let a = tape.leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec![2, 3], false).unwrap();
        let cities = tape.leaf(vec![0.0, 0.0, 0.6, 0.0], vec![2, 2], false).unwrap();
        let p = elastic_penalty(&mut tape, a, cities).unwrap();
        let v = tape.values(p)[0];
        assert!((v - 0.36).abs() < 1e-3, "penalty {v}");
    }

    #[test]
    fn elastic_penalty_prefers_angular_order_on_circle() {
        let inst = TspInstance::circle(12, 0.4);
        let n = 12;
        let eval_order = |order: &[usize]| -> f64 {
            let mut tape = Tape::new();
            let mut a = vec![0.0; 12 * n];
            for (slot, &city) in order.iter().enumerate() {
                a[city * n + slot] = 1.0;
            }
            let av = tape.leaf(a, vec![12, n], false).unwrap();
            let cities_v: Vec<f64> = inst.cities.iter().flat_map(|(x, y)| [*x, *y]).collect();
            let cv = tape.leaf(cities_v, vec![12, 2], false).unwrap();
            let p = elastic_penalty(&mut tape, av, cv).unwrap();
            tape.values(p)[0]
        };
        let ordered: Vec<usize> = (0..12).collect();
        let shuffled = vec![0, 6, 2, 8, 4, 10, 1, 7, 3, 9, 5, 11];
        assert!(eval_order(&ordered) < eval_order(&shuffled));
    }

    #[test]
    fn elastic_penalty_gradient_matches_finite_differences() {
        let inst = gen_tsp_instance(5, 9).unwrap();
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<f64> = (0..5 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cities_v: Vec<f64> = inst.cities.iter().flat_map(|(x, y)| [*x, *y]).collect();
        let run = |lv: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let l = tape.leaf(lv.to_vec(), vec![5, n], false).unwrap();
            let a = tape.softmax_rows(l).unwrap();
            let cv = tape.leaf(cities_v.clone(), vec![5, 2], false).unwrap();
            let p = elastic_penalty(&mut tape, a, cv).unwrap();
            tape.values(p)[0]
        };
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone(), vec![5, n], true).unwrap();
        let a = tape.softmax_rows(l).unwrap();
        let cv = tape.leaf(cities_v.clone(), vec![5, 2], false).unwrap();
        let p = elastic_penalty(&mut tape, a, cv).unwrap();
        tape.backward(p).unwrap();
        let analytic = tape.grad(l).unwrap().to_vec();
        let eps = 1e-6;
        let mut work = logits.clone();
        for i in 0..logits.len() {
            let orig = work[i];
            work[i] = orig + eps;
            let fp = run(&work);
            work[i] = orig - eps;
            let fm = run(&work);
            work[i] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-4,
                "grad mismatch at {i}: {} vs {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn extract_tour_reads_off_perfect_assignment() {
        let inst = TspInstance::circle(6, 0.4);
        let n = 9;
        let mut a = vec![0.0; 6 * n];
        // city i on node i+2 in order
        for i in 0..6 {
            a[i * n + i + 2] = 1.0;
        }
        let tour = extract_tour(&a, n, &inst);
        assert_eq!(tour.order, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn extract_tour_tie_break_is_deterministic() {
        let inst = TspInstance { cities: vec![(0.1, 0.5), (0.9, 0.5), (0.5, 0.5)] };
        let n = 4;
        // all three cities on node 1; neighbors empty -> tangent degenerate
        // -> fallback to city index
        let mut a = vec![0.0; 3 * n];
        for i in 0..3 {
            a[i * n + 1] = 1.0;
        }
        let t1 = extract_tour(&a, n, &inst);
        let t2 = extract_tour(&a, n, &inst);
        assert_eq!(t1.order, t2.order);
        assert!(is_permutation(&t1.order, 3));
    }

    #[test]
    fn ring_forward_untrained_is_valid_and_heavy_smoothing_is_uniform() {
        let inst = gen_tsp_instance(6, 1).unwrap();
        let n = 15;
        let net = RingNet::init(n, 3);
        let cities_v: Vec<f64> = inst.cities.iter().flat_map(|(x, y)| [*x, *y]).collect();
        for (sigma, check_uniform) in [(0.3, false), (n as f64 / 6.0, true)] {
            let topo = GridTopology::ring(n, sigma).unwrap();
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let cv = tape.leaf(cities_v.clone(), vec![6, 2], false).unwrap();
            let (a, _) = ring_forward(&mut tape, &vars, cv, &topo).unwrap();
            let vals = tape.values(a);
            assert!(vals.iter().all(|v| v.is_finite() && *v >= 0.0));
            for row in vals.chunks(n) {
                let l2: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((l2 - 1.0).abs() < 1e-9);
                if check_uniform {
                    let target = 1.0 / (n as f64).sqrt();
                    for v in row {
                        assert!((v - target).abs() < 0.05, "not near-uniform: {v} vs {target}");
                    }
                }
            }
        }
    }

    #[test]
    fn solver_finds_square_corners() {
        let inst = TspInstance::unit_square_corners();
        let cfg = RingSolverConfig { steps: 800, restarts: 2, seed: 1, ..Default::default() };
        let report = solve(&inst, &cfg).unwrap();
        assert!(is_permutation(&report.tour.order, 4));
        assert!((report.tour.length - 4.0).abs() < 1e-9, "length {}", report.tour.length);
    }

    #[test]
    fn solver_always_returns_valid_permutations() {
        for (c, seed) in [(4usize, 0u64), (7, 1), (12, 2), (20, 3)] {
            let inst = gen_tsp_instance(c, seed).unwrap();
            let cfg = RingSolverConfig { steps: 150, restarts: 1, seed, ..Default::default() };
            let report = solve(&inst, &cfg).unwrap();
            assert!(is_permutation(&report.tour.order, c), "C={c} seed={seed}");
        }
    }

    #[test]
    fn instance_text_round_trip() {
        let inst = gen_tsp_instance(30, 77).unwrap();
        let text = instance_to_text(&inst);
        let back = instance_from_text(&text).unwrap();
        assert_eq!(back.cities.len(), 30);
        for (a, b) in inst.cities.iter().zip(&back.cities) {
            assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15);
        }
        assert!(instance_from_text("0.1 0.2\n0.3 0.4\n").is_err());
    }
}
