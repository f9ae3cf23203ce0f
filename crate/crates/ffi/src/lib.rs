//! C interface to a finished cogmap output directory.
//!
//! Every function returns a [`CogmapStatus`]. On failure a message is kept
//! per thread and can be read with [`cogmap_last_error`]. Strings handed out
//! by the library must be released with [`cogmap_string_free`], engines with
//! [`cogmap_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cogmap::error::Error;
use cogmap::pipeline::{Artifacts, PipelineError};
use cogmap::query::QueryError;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CogmapStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// The output directory lacks a stage the call needs.
    MissingArtifact = 3,
    Io = 4,
    /// A query did not parse or named no known term.
    InvalidQuery = 5,
    UnknownTerm = 6,
    /// A term of the wrong kind, or a construct with no tasks.
    InvalidArgument = 7,
    Internal = 8,
    Panic = 9,
}

/// Loaded artifacts. Opaque to C; safe to share across threads for reads.
pub struct CogmapEngine {
    artifacts: Artifacts,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn query_status(e: &QueryError) -> CogmapStatus {
    match e {
        QueryError::UnknownTerm { .. } | QueryError::UnknownId(_) => CogmapStatus::UnknownTerm,
        QueryError::WrongKind { .. } | QueryError::EmptyHyperedges(_) | QueryError::BadTopK => {
            CogmapStatus::InvalidArgument
        }
        _ => CogmapStatus::InvalidQuery,
    }
}

fn error_status(e: &Error) -> CogmapStatus {
    match e {
        Error::Pipeline(PipelineError::MissingUpstream { .. }) => CogmapStatus::MissingArtifact,
        Error::Io { .. } => CogmapStatus::Io,
        Error::Query(q) => query_status(q),
        _ => CogmapStatus::Internal,
    }
}

struct Failure(CogmapStatus, String);

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        Failure(query_status(&e), e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(error_status(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status and last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CogmapStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CogmapStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CogmapStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CogmapStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CogmapStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn engine_arg<'a>(p: *const CogmapEngine) -> Result<&'a CogmapEngine, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(CogmapStatus::NullArgument, "engine is null".into()))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(CogmapStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(CogmapStatus::Internal, "result contains a nul byte".into()))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cogmap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cogmap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the artifacts in `output_dir` into a new engine.
///
/// # Safety
/// `output_dir` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cogmap_engine_open(output_dir: *const c_char, out: *mut *mut CogmapEngine) -> CogmapStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = str_arg(output_dir, "output_dir")?;
        let artifacts = Artifacts::load(Path::new(dir))?;
        *out = Box::into_raw(Box::new(CogmapEngine { artifacts }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`cogmap_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cogmap_engine_free(engine: *mut CogmapEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cogmap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Ranks tasks for a query such as `"attention + memory - inhibition"`.
/// Writes `{"query": ..., "results": [{"term": ..., "score": ...}]}`.
///
/// # Safety
/// Pointers must be valid; `text` nul-terminated. Free `*out_json` with
/// [`cogmap_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cogmap_query(
    engine: *const CogmapEngine,
    text: *const c_char,
    top_k: usize,
    out_json: *mut *mut c_char,
) -> CogmapStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let e = engine_arg(engine)?;
        let text = str_arg(text, "text")?;
        let (_, results) = e.artifacts.query(text, top_k)?;
        *out_json = to_c_string(cogmap::query::results_json(text, &results).to_string())?;
        Ok(())
    })
}

/// Builds a task battery covering `n` constructs given by id or name.
/// Writes `{"constructs", "tasks", "edges", "total_distance"}` as JSON.
///
/// # Safety
/// `constructs` must point to `n` nul-terminated strings. Free `*out_json`
/// with [`cogmap_string_free`].
#[no_mangle]
pub unsafe extern "C" fn cogmap_battery(
    engine: *const CogmapEngine,
    constructs: *const *const c_char,
    n: usize,
    out_json: *mut *mut c_char,
) -> CogmapStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let e = engine_arg(engine)?;
        if constructs.is_null() && n > 0 {
            return Err(Failure(CogmapStatus::NullArgument, "constructs is null".into()));
        }
        let names: Vec<&str> = (0..n)
            .map(|i| str_arg(*constructs.add(i), "construct"))
            .collect::<Result<_, _>>()?;
        let battery = e.artifacts.battery(&names)?;
        let json = serde_json::to_string(&battery).map_err(|err| Failure(CogmapStatus::Internal, err.to_string()))?;
        *out_json = to_c_string(json)?;
        Ok(())
    })
}

/// Jensen-Shannon divergence between two terms, in bits.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cogmap_task_distance(
    engine: *const CogmapEngine,
    a: *const c_char,
    b: *const c_char,
    out: *mut f64,
) -> CogmapStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = engine_arg(engine)?;
        *out = e.artifacts.distance(str_arg(a, "a")?, str_arg(b, "b")?)?;
        Ok(())
    })
}

/// Jaccard overlap of two constructs' hyperedges.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cogmap_hypernomy(
    engine: *const CogmapEngine,
    c1: *const c_char,
    c2: *const c_char,
    out: *mut f64,
) -> CogmapStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = engine_arg(engine)?;
        let a = e.artifacts.resolve(str_arg(c1, "c1")?)?;
        let b = e.artifacts.resolve(str_arg(c2, "c2")?)?;
        *out = e
            .artifacts
            .hypergraph
            .hypernomy(&a, &b)
            .map_err(|err| Failure(CogmapStatus::InvalidArgument, err.to_string()))?;
        Ok(())
    })
}

/// Number of hyperedges containing a task.
///
/// # Safety
/// Pointers must be valid; `task` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cogmap_task_impurity(
    engine: *const CogmapEngine,
    task: *const c_char,
    out: *mut usize,
) -> CogmapStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = engine_arg(engine)?;
        let t = e.artifacts.resolve(str_arg(task, "task")?)?;
        *out = e
            .artifacts
            .hypergraph
            .task_impurity(&t)
            .map_err(|err| Failure(CogmapStatus::InvalidArgument, err.to_string()))?;
        Ok(())
    })
}
