//! C ABI for honion-core.
//!
//! Every fallible call returns a [`HonionStatus`]; on failure the message is
//! available from [`honion_last_error`] on the same thread. Graphs and
//! detection results are opaque handles released with their `_free`
//! function. Strings returned through `char **` are owned by the caller and
//! released with [`honion_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use honion_core::detector::DetectorConfig;
use honion_core::graph::{build_graph, AttributionGraph, GraphFile};
use honion_core::pipeline::{self, DetectionReport, MethodChoice};
use honion_core::planner;
use honion_core::ring::{self, ServiceId};
use honion_core::simulator::{run_simulation, SimulationConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HonionStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Graph = 5,
    Detect = 6,
    Simulation = 7,
    OutOfRange = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HonionMethod {
    Greedy = 0,
    Exact = 1,
}

/// Opaque attribution graph.
pub struct HonionGraph {
    inner: AttributionGraph,
}

/// Opaque result of one detection run.
pub struct HonionDetection {
    inner: DetectionReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &honion_core::Error) -> HonionStatus {
    use honion_core::Error as E;
    match e {
        E::Ring(_) | E::Planner(_) | E::Input(_) => HonionStatus::InvalidArgument,
        E::Records(honion_core::records::JsonlError::Io { .. }) => HonionStatus::Io,
        E::Records(_) => HonionStatus::Parse,
        E::Simulation(_) => HonionStatus::Simulation,
        E::Graph(_) => HonionStatus::Graph,
        E::Detect(_) => HonionStatus::Detect,
        E::Collector(_) | E::Report(_) => HonionStatus::Io,
    }
}

struct Failure(HonionStatus, String);

impl From<honion_core::Error> for Failure {
    fn from(e: honion_core::Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HonionStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HonionStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HonionStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HonionStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HonionStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(HonionStatus::InvalidArgument, "string contains NUL".into()))
}

fn parse_err(e: serde_json::Error) -> Failure {
    Failure(HonionStatus::Parse, e.to_string())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn honion_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn honion_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Batch size reaching `fraction` of `n_hsdirs` (nearest integer).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_required_honions(n_hsdirs: u64, fraction: f64, out: *mut u64) -> HonionStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = planner::required_honions(n_hsdirs, fraction).map_err(honion_core::Error::from)?;
        Ok(())
    })
}

/// Expected fraction of relays hosting at least one of `m` honions.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_coverage_probability(n_hsdirs: u64, m: u64, out: *mut f64) -> HonionStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = planner::coverage_probability(n_hsdirs, m).map_err(honion_core::Error::from)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn honion_time_period(unix_time: u64, permanent_id_byte: u8) -> u32 {
    ring::compute_time_period(unix_time, permanent_id_byte)
}

/// Writes the 20-byte descriptor-id. `cookie` may be NULL or point to 16 bytes.
///
/// # Safety
/// `identifier` must point to 10 bytes and `out` to 20 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn honion_descriptor_id(
    identifier: *const u8,
    time_period: u32,
    cookie: *const u8,
    replica: u8,
    out: *mut u8,
) -> HonionStatus {
    guard(|| {
        if identifier.is_null() {
            return Err(null("identifier"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if replica > 1 {
            return Err(Failure(HonionStatus::InvalidArgument, format!("replica {replica} not in {{0, 1}}")));
        }
        let id = ServiceId(*(identifier as *const [u8; 10]));
        let cookie = (!cookie.is_null()).then(|| &*(cookie as *const [u8; 16]));
        let d = ring::compute_descriptor_id(&id, time_period, cookie, replica);
        ptr::copy_nonoverlapping(d.value.as_bytes().as_ptr(), out, 20);
        Ok(())
    })
}

/// Writes the 16-character onion address plus a terminating NUL.
///
/// # Safety
/// `identifier` must point to 10 bytes and `out` to 17 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn honion_onion_address(identifier: *const u8, out: *mut c_char) -> HonionStatus {
    guard(|| {
        if identifier.is_null() {
            return Err(null("identifier"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let addr = ServiceId(*(identifier as *const [u8; 10])).onion_address();
        ptr::copy_nonoverlapping(addr.as_ptr() as *const c_char, out, addr.len());
        *out.add(addr.len()) = 0;
        Ok(())
    })
}

/// Runs a simulation from a JSON configuration and writes its artifacts to `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn honion_simulate(config_json: *const c_char, out_dir: *const c_char) -> HonionStatus {
    guard(|| {
        let cfg: SimulationConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(parse_err)?;
        let dir = str_arg(out_dir, "out_dir")?;
        let output = run_simulation(&cfg).map_err(honion_core::Error::from)?;
        output.write_to_dir(Path::new(dir)).map_err(honion_core::Error::from)?;
        Ok(())
    })
}

/// Builds the attribution graph of a run directory (placements.jsonl and visits.jsonl).
///
/// # Safety
/// `run_dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_graph_from_run_dir(run_dir: *const c_char, out: *mut *mut HonionGraph) -> HonionStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let run = pipeline::load_run(Path::new(str_arg(run_dir, "run_dir")?))?;
        let g = build_graph(&run.placements, &run.visits).map_err(honion_core::Error::from)?;
        *out = Box::into_raw(Box::new(HonionGraph { inner: g }));
        Ok(())
    })
}

/// Loads a graph from the JSON written by `honion build-graph`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_graph_from_json(json: *const c_char, out: *mut *mut HonionGraph) -> HonionStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let file: GraphFile = serde_json::from_str(str_arg(json, "json")?).map_err(parse_err)?;
        let g = AttributionGraph::from_file(file).map_err(honion_core::Error::from)?;
        *out = Box::into_raw(Box::new(HonionGraph { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn honion_graph_hsdir_count(g: *const HonionGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.hsdirs().len())
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn honion_graph_instance_count(g: *const HonionGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.instances().len())
}

/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn honion_graph_edge_count(g: *const HonionGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.edge_count())
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn honion_graph_free(g: *mut HonionGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Finds an explaining set. `component_cap` bounds the components solved
/// exactly; 0 selects the default. Larger components fall back to greedy.
///
/// # Safety
/// `g` must be a live graph handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_detect(
    g: *const HonionGraph,
    method: HonionMethod,
    component_cap: usize,
    out: *mut *mut HonionDetection,
) -> HonionStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mut cfg = DetectorConfig::default();
        if component_cap > 0 {
            cfg.component_cap = component_cap;
        }
        let choice = match method {
            HonionMethod::Greedy => MethodChoice::Greedy,
            HonionMethod::Exact => MethodChoice::Exact,
        };
        let report = pipeline::detect(&g.inner, choice, &cfg, false)?;
        *out = Box::into_raw(Box::new(HonionDetection { inner: report }));
        Ok(())
    })
}

unsafe fn result_of<'a>(d: *const HonionDetection) -> Option<&'a honion_core::detector::DetectionResult> {
    d.as_ref().and_then(|d| d.inner.results.first())
}

/// Number of relays in the explaining set.
///
/// # Safety
/// `d` must be NULL or a live detection handle.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_size(d: *const HonionDetection) -> usize {
    result_of(d).map_or(0, |r| r.size())
}

/// # Safety
/// `d` must be NULL or a live detection handle.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_lower_bound(d: *const HonionDetection) -> usize {
    result_of(d).map_or(0, |r| r.lower_bound)
}

/// # Safety
/// `d` must be NULL or a live detection handle.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_proven_optimal(d: *const HonionDetection) -> bool {
    result_of(d).is_some_and(|r| r.proven_optimal)
}

/// Writes the 40-hex-digit fingerprint of relay `index` plus a NUL.
///
/// # Safety
/// `d` must be a live detection handle and `out` must have 41 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_fingerprint(
    d: *const HonionDetection,
    index: usize,
    out: *mut c_char,
) -> HonionStatus {
    guard(|| {
        let r = result_of(d).ok_or_else(|| null("detection"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let relay = r.explaining_set.get(index).ok_or_else(|| {
            Failure(HonionStatus::OutOfRange, format!("index {index} >= {}", r.size()))
        })?;
        let hex = relay.fingerprint.to_string();
        ptr::copy_nonoverlapping(hex.as_ptr() as *const c_char, out, hex.len());
        *out.add(hex.len()) = 0;
        Ok(())
    })
}

/// Label of relay `index`; free with `honion_string_free`.
///
/// # Safety
/// `d` must be a live detection handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_label(
    d: *const HonionDetection,
    index: usize,
    out: *mut *mut c_char,
) -> HonionStatus {
    guard(|| {
        let r = result_of(d).ok_or_else(|| null("detection"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let relay = r.explaining_set.get(index).ok_or_else(|| {
            Failure(HonionStatus::OutOfRange, format!("index {index} >= {}", r.size()))
        })?;
        *out = into_c_string(relay.label.clone())?;
        Ok(())
    })
}

/// Full detection report (results and ranked suspects) as JSON; free with
/// `honion_string_free`.
///
/// # Safety
/// `d` must be a live detection handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_to_json(d: *const HonionDetection, out: *mut *mut c_char) -> HonionStatus {
    guard(|| {
        let d = d.as_ref().ok_or_else(|| null("detection"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = into_c_string(serde_json::to_string(&d.inner).map_err(parse_err)?)?;
        Ok(())
    })
}

/// # Safety
/// `d` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn honion_detection_free(d: *mut HonionDetection) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}
