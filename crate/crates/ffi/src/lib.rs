//! C ABI over the gnwm library.
//!
//! Conventions:
//! - Every fallible function returns a [`GnwmStatus`]; outputs go through
//!   caller-allocated pointers.
//! - Topologies are opaque handles created by `gnwm_topology_*` and
//!   released with `gnwm_topology_free`.
//! - A thread-local message describing the most recent error is available
//!   via `gnwm_last_error_message`.
//!
//! The matching header `include/gnwm.h` is generated by cbindgen at build
//! time.

use gnwm::envs::TspInstance;
use gnwm::tensor::Tape;
use gnwm::thermo;
use gnwm::topology::{argmax, project, GridTopology};
use gnwm::tsp::{self, RingSolverConfig};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnwmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericError = 3,
    IoError = 4,
}

/// Thermodynamic loss breakdown.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GnwmThermoReport {
    pub l_collapse: f64,
    pub l_wta: f64,
    pub l_sim: f64,
    pub l_total: f64,
}

/// Opaque grid topology handle.
pub struct GnwmTopology {
    inner: GridTopology,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: GnwmStatus, msg: impl Into<String>) -> GnwmStatus {
    set_error(msg);
    status
}

/// Copy the most recent error message for this thread into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be null (then only
/// the length is returned).
#[no_mangle]
pub unsafe extern "C" fn gnwm_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gnwm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Analytic floor of the expansion + contraction pair: 1/sqrt(d).
#[no_mangle]
pub extern "C" fn gnwm_theoretical_floor(d: usize) -> f64 {
    thermo::theoretical_floor(d)
}

/// Odd smearing-kernel side length for a given sigma.
#[no_mangle]
pub extern "C" fn gnwm_kernel_size(sigma: f64) -> usize {
    gnwm::topology::kernel_size(sigma)
}

/// Thermodynamic losses over projected batches `p`, `z` (row-major
/// [batch x d], rows already on the simplex/sphere intersection).
///
/// # Safety
/// `p` and `z` must point to `batch * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnwm_thermo_loss(
    p: *const f64,
    z: *const f64,
    batch: usize,
    d: usize,
    alpha: f64,
    gamma: f64,
    out: *mut GnwmThermoReport,
) -> GnwmStatus {
    if p.is_null() || z.is_null() || out.is_null() {
        return fail(GnwmStatus::NullPointer, "null pointer argument");
    }
    if batch == 0 || d == 0 {
        return fail(GnwmStatus::InvalidArgument, "batch and d must be positive");
    }
    let ps = std::slice::from_raw_parts(p, batch * d);
    let zs = std::slice::from_raw_parts(z, batch * d);
    match thermo::total_loss(ps, zs, d, alpha, gamma) {
        Ok(r) => {
            *out = GnwmThermoReport {
                l_collapse: r.l_collapse,
                l_wta: r.l_wta,
                l_sim: r.l_sim,
                l_total: r.l_total,
            };
            GnwmStatus::Ok
        }
        Err(e) => fail(GnwmStatus::NumericError, e.to_string()),
    }
}

/// New planar grid topology with its fixed Gaussian kernel. Returns null on
/// invalid arguments.
#[no_mangle]
pub extern "C" fn gnwm_topology_new_planar(
    height: usize,
    width: usize,
    sigma: f64,
) -> *mut GnwmTopology {
    match GridTopology::planar(height, width, sigma) {
        Ok(inner) => Box::into_raw(Box::new(GnwmTopology { inner })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// New 1D ring topology. Returns null on invalid arguments.
#[no_mangle]
pub extern "C" fn gnwm_topology_new_ring(nodes: usize, sigma: f64) -> *mut GnwmTopology {
    match GridTopology::ring(nodes, sigma) {
        Ok(inner) => Box::into_raw(Box::new(GnwmTopology { inner })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Node count D of a topology; 0 for null handles.
#[no_mangle]
pub extern "C" fn gnwm_topology_node_count(topo: *const GnwmTopology) -> usize {
    if topo.is_null() {
        return 0;
    }
    unsafe { (*topo).inner.node_count() }
}

/// Release a topology handle.
///
/// # Safety
/// `topo` must be a pointer from `gnwm_topology_new_*`, passed at most once.
#[no_mangle]
pub unsafe extern "C" fn gnwm_topology_free(topo: *mut GnwmTopology) {
    if !topo.is_null() {
        drop(Box::from_raw(topo));
    }
}

/// Topological smearing followed by the simplex/sphere projection.
///
/// `logits` and `out` are row-major [batch x D] where D is the topology's
/// node count; rows of `out` are nonnegative with unit L2 norm.
///
/// # Safety
/// `logits` and `out` must point to `batch * D` doubles.
#[no_mangle]
pub unsafe extern "C" fn gnwm_smear_project(
    topo: *const GnwmTopology,
    logits: *const f64,
    batch: usize,
    out: *mut f64,
) -> GnwmStatus {
    if topo.is_null() || logits.is_null() || out.is_null() {
        return fail(GnwmStatus::NullPointer, "null pointer argument");
    }
    let topo = &(*topo).inner;
    let d = topo.node_count();
    if batch == 0 {
        return fail(GnwmStatus::InvalidArgument, "batch must be positive");
    }
    let input = std::slice::from_raw_parts(logits, batch * d).to_vec();
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<Vec<f64>, String> {
        let mut tape = Tape::new();
        let shape = match topo {
            GridTopology::Planar2d { height, width, .. } => vec![batch, 1, *height, *width],
            GridTopology::Ring1d { .. } => vec![batch, d],
        };
        let x = tape.leaf(input, shape, false).map_err(|e| e.to_string())?;
        let smeared = topo.smear(&mut tape, x).map_err(|e| e.to_string())?;
        let flat = tape.reshape(smeared, vec![batch, d]).map_err(|e| e.to_string())?;
        let rows = project(&mut tape, flat).map_err(|e| e.to_string())?;
        Ok(tape.values(rows).to_vec())
    }));
    match result {
        Ok(Ok(values)) => {
            std::ptr::copy_nonoverlapping(values.as_ptr(), out, batch * d);
            GnwmStatus::Ok
        }
        Ok(Err(msg)) => fail(GnwmStatus::NumericError, msg),
        Err(_) => fail(GnwmStatus::NumericError, "internal panic"),
    }
}

/// Index of the one-hot that grid snapping would produce (argmax, ties to
/// the lowest index).
///
/// # Safety
/// `p` must point to `d` doubles; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnwm_snap_index(
    p: *const f64,
    d: usize,
    out_index: *mut usize,
) -> GnwmStatus {
    if p.is_null() || out_index.is_null() {
        return fail(GnwmStatus::NullPointer, "null pointer argument");
    }
    if d == 0 {
        return fail(GnwmStatus::InvalidArgument, "d must be positive");
    }
    let row = std::slice::from_raw_parts(p, d);
    if row.iter().any(|v| !v.is_finite()) {
        return fail(GnwmStatus::NumericError, "non-finite entry");
    }
    *out_index = argmax(row);
    GnwmStatus::Ok
}

/// Solve a Euclidean TSP instance with the elastic ring.
///
/// `coords` is row-major [n_cities x 2] in the unit square. The visiting
/// permutation lands in `out_order` (length `n_cities`) and the closed tour
/// length in `out_length`. `steps == 0` or `restarts == 0` select the
/// defaults (3000 / 5).
///
/// # Safety
/// `coords` must point to `2 * n_cities` doubles; `out_order` to
/// `n_cities` usize slots; `out_length` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnwm_tsp_solve(
    coords: *const f64,
    n_cities: usize,
    restarts: usize,
    steps: usize,
    seed: u64,
    out_order: *mut usize,
    out_length: *mut f64,
) -> GnwmStatus {
    if coords.is_null() || out_order.is_null() || out_length.is_null() {
        return fail(GnwmStatus::NullPointer, "null pointer argument");
    }
    if n_cities < 3 {
        return fail(GnwmStatus::InvalidArgument, "need at least 3 cities");
    }
    let raw = std::slice::from_raw_parts(coords, 2 * n_cities);
    let cities: Vec<(f64, f64)> = raw.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    let instance = TspInstance { cities };
    let config = RingSolverConfig {
        restarts: if restarts == 0 { 5 } else { restarts },
        steps: if steps == 0 { 3000 } else { steps },
        seed,
        ..Default::default()
    };
    let result = catch_unwind(AssertUnwindSafe(|| tsp::solve(&instance, &config)));
    match result {
        Ok(Ok(report)) => {
            std::ptr::copy_nonoverlapping(report.tour.order.as_ptr(), out_order, n_cities);
            *out_length = report.tour.length;
            GnwmStatus::Ok
        }
        Ok(Err(e)) => fail(GnwmStatus::InvalidArgument, e.to_string()),
        Err(_) => fail(GnwmStatus::NumericError, "internal panic"),
    }
}

/// Run a full training job from files: a dataset container plus an optional
/// flat config, writing checkpoints and metrics into `out_dir`.
///
/// # Safety
/// Paths must be NUL-terminated UTF-8 strings; `config_path` may be null.
#[no_mangle]
pub unsafe extern "C" fn gnwm_train_file(
    dataset_path: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
) -> GnwmStatus {
    if dataset_path.is_null() || out_dir.is_null() {
        return fail(GnwmStatus::NullPointer, "null pointer argument");
    }
    let parse = |p: *const c_char| -> Result<String, GnwmStatus> {
        CStr::from_ptr(p)
            .to_str()
            .map(|s| s.to_string())
            .map_err(|_| GnwmStatus::InvalidArgument)
    };
    let ds_path = match parse(dataset_path) {
        Ok(s) => s,
        Err(s) => return fail(s, "non-UTF8 dataset path"),
    };
    let out = match parse(out_dir) {
        Ok(s) => s,
        Err(s) => return fail(s, "non-UTF8 output path"),
    };
    let flat = if config_path.is_null() {
        gnwm::config::FlatConfig::empty()
    } else {
        let cfg_path = match parse(config_path) {
            Ok(s) => s,
            Err(s) => return fail(s, "non-UTF8 config path"),
        };
        let text = match std::fs::read_to_string(&cfg_path) {
            Ok(t) => t,
            Err(e) => return fail(GnwmStatus::IoError, e.to_string()),
        };
        match gnwm::config::FlatConfig::parse(&text) {
            Ok(c) => c,
            Err(e) => return fail(GnwmStatus::InvalidArgument, e.to_string()),
        }
    };
    let dataset = match gnwm::dataset::Dataset::load(Path::new(&ds_path)) {
        Ok(d) => d,
        Err(e) => return fail(GnwmStatus::IoError, e.to_string()),
    };
    let tc = match gnwm::config::TrainConfig::from_flat(&flat, dataset.paradigm) {
        Ok(t) => t,
        Err(e) => return fail(GnwmStatus::InvalidArgument, e.to_string()),
    };
    let trainer = match gnwm::trainer::Trainer::new(tc, &dataset) {
        Ok(t) => t,
        Err(e) => return fail(GnwmStatus::InvalidArgument, e.to_string()),
    };
    match gnwm::trainer::run_training(trainer, &dataset, Some(Path::new(&out))) {
        Ok(_) => GnwmStatus::Ok,
        Err(e @ gnwm::trainer::TrainError::NumericAbort { .. }) => {
            fail(GnwmStatus::NumericError, e.to_string())
        }
        Err(gnwm::trainer::TrainError::Io(e)) => fail(GnwmStatus::IoError, e.to_string()),
        Err(e) => fail(GnwmStatus::InvalidArgument, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_non_empty() {
        let v = unsafe { CStr::from_ptr(gnwm_version()) };
        assert!(!v.to_str().unwrap().is_empty());
    }

    #[test]
    fn floor_matches_library() {
        assert_eq!(gnwm_theoretical_floor(225), 1.0 / 15.0);
        assert_eq!(gnwm_kernel_size(1.5), 9);
    }

    #[test]
    fn thermo_loss_matches_library_and_rejects_null() {
        let d = 4;
        let mut p = vec![0.0; 2 * d];
        p[0] = 1.0;
        p[d + 1] = 1.0;
        let mut out = GnwmThermoReport { l_collapse: 0.0, l_wta: 0.0, l_sim: 0.0, l_total: 0.0 };
        let status = unsafe { gnwm_thermo_loss(p.as_ptr(), p.as_ptr(), 2, d, 1.0, 0.5, &mut out) };
        assert_eq!(status, GnwmStatus::Ok);
        let reference = thermo::total_loss(&p, &p, d, 1.0, 0.5).unwrap();
        assert_eq!(out.l_total, reference.l_total);
        let status =
            unsafe { gnwm_thermo_loss(std::ptr::null(), p.as_ptr(), 2, d, 1.0, 0.5, &mut out) };
        assert_eq!(status, GnwmStatus::NullPointer);
        let mut buf = [0 as c_char; 64];
        let n = unsafe { gnwm_last_error_message(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);
    }

    #[test]
    fn topology_handles_round_trip() {
        let topo = gnwm_topology_new_planar(4, 4, 0.8);
        assert!(!topo.is_null());
        assert_eq!(gnwm_topology_node_count(topo), 16);
        let logits = vec![0.0f64; 16];
        let mut out = vec![0.0f64; 16];
        let status = unsafe { gnwm_smear_project(topo, logits.as_ptr(), 1, out.as_mut_ptr()) };
        assert_eq!(status, GnwmStatus::Ok);
        let l2: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((l2 - 1.0).abs() < 1e-9);
        for v in &out {
            assert!((v - 0.25).abs() < 1e-9);
        }
        unsafe { gnwm_topology_free(topo) };
        assert!(gnwm_topology_new_planar(4, 4, -1.0).is_null());
    }

    #[test]
    fn snap_index_picks_argmax() {
        let p = [0.1, 0.7, 0.2, 0.0];
        let mut idx = usize::MAX;
        let status = unsafe { gnwm_snap_index(p.as_ptr(), 4, &mut idx) };
        assert_eq!(status, GnwmStatus::Ok);
        assert_eq!(idx, 1);
    }

    #[test]
    fn tsp_solve_square_via_ffi() {
        let coords = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let mut order = vec![0usize; 4];
        let mut length = 0.0f64;
        let status = unsafe {
            gnwm_tsp_solve(coords.as_ptr(), 4, 3, 1000, 7, order.as_mut_ptr(), &mut length)
        };
        assert_eq!(status, GnwmStatus::Ok);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!((length - 4.0).abs() < 1e-6, "length {length}");
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gnwm.h"))
            .expect("header generated by build.rs");
        for symbol in [
            "GnwmStatus",
            "GnwmThermoReport",
            "GnwmTopology",
            "gnwm_version",
            "gnwm_theoretical_floor",
            "gnwm_thermo_loss",
            "gnwm_topology_new_planar",
            "gnwm_topology_new_ring",
            "gnwm_smear_project",
            "gnwm_snap_index",
            "gnwm_tsp_solve",
            "gnwm_train_file",
            "gnwm_last_error_message",
        ] {
            assert!(header.contains(symbol), "header missing {symbol}");
        }
    }
}
