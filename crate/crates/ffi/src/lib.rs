//! C interface: stories, a reading engine (story runtime + Director) and trained
//! classifiers behind opaque handles.
//!
//! Every fallible call returns a [`PifStatus`]; on failure the message is available
//! from [`pif_last_error`] on the same thread until the next failure. Strings handed
//! out through `char **` parameters are owned by the caller and released with
//! [`pif_string_free`]. Handles are not thread-safe; use one per thread or lock.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pif::classify::{Class, PipelineModel, RankStrategy};
use pif::director::DirectorConfig;
use pif::features::FeatureVector;
use pif::session::{load_model, Engine, ReaderAction};
use pif::story::{lint, parse, StoryGraph, StorySource, Value};
use pif::transport::{Sample, StreamInfo};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PifStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The story has errors; the message lists them with line numbers.
    ParseError = 3,
    /// The engine refused a reader action (debounce, bad choice index).
    Rejected = 4,
    Io = 5,
    /// The model file is unreadable or does not match what was asked of it.
    Model = 6,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 7,
    NotFound = 8,
    /// A bug inside the library; the handle involved should be freed.
    Internal = 99,
}

/// Classification of one feature vector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PifPrediction {
    /// True for the model's first class (see [`pif_model_class_label`]).
    pub is_class_a: bool,
    /// Discriminant score; class A at 0 and above.
    pub score: f64,
    pub posterior_a: f64,
}

/// A parsed story.
pub struct PifStory {
    graph: StoryGraph,
}

/// A reading engine over one story, fed by a single state stream whose channels
/// are the keys given at creation.
pub struct PifEngine {
    engine: Engine,
    n_keys: usize,
}

/// A trained classifier.
pub struct PifModel {
    model: PipelineModel,
    names: Vec<CString>,
    labels: [CString; 2],
}

struct Failure {
    status: PifStatus,
    message: String,
}

impl Failure {
    fn new(status: PifStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    // interior NULs would truncate the message; replace them
    let c = CString::new(message.replace('\0', "\u{FFFD}")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PifStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PifStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.message);
            e.status
        }
        Err(_) => {
            set_error("internal error (panic)");
            PifStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(PifStatus::NullArgument, format!("`{what}` is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` is NULL or a NUL-terminated string that outlives `'a`.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PifStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\u{FFFD}")).unwrap_or_default().into_raw()
}

/// # Safety
/// `out` is NULL or valid for a pointer write.
unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    non_null(out, what)?;
    out.write(value);
    Ok(())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pif_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none failed yet.
/// Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pif_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` is NULL or came from this library and has not been freed.
#[no_mangle]
pub unsafe extern "C" fn pif_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- stories ----

fn parse_story(source: &StorySource) -> Result<*mut PifStory, Failure> {
    let graph = parse(source).map_err(|e| Failure::new(PifStatus::ParseError, e.to_string()))?;
    Ok(Box::into_raw(Box::new(PifStory { graph })))
}

/// Parse story markup held in memory.
///
/// # Safety
/// `source` is a NUL-terminated string; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_story_parse(source: *const c_char, out: *mut *mut PifStory) -> PifStatus {
    guard(|| {
        non_null(out, "out")?;
        let story = parse_story(&StorySource::inline(text(source, "source")?))?;
        put(out, story, "out")
    })
}

/// Read and parse a story file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_story_load(path: *const c_char, out: *mut *mut PifStory) -> PifStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = text(path, "path")?;
        let source = StorySource::from_file(path).map_err(|e| Failure::new(PifStatus::Io, format!("{path}: {e}")))?;
        put(out, parse_story(&source)?, "out")
    })
}

/// Lint findings as a JSON array of `{severity, line, col, message}`.
///
/// # Safety
/// `story` is a live handle; `out_json` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_story_lint(story: *const PifStory, out_json: *mut *mut c_char) -> PifStatus {
    guard(|| {
        non_null(story, "story")?;
        non_null(out_json, "out_json")?;
        let findings = lint(&(*story).graph);
        let json = serde_json::to_string(&findings).map_err(|e| Failure::new(PifStatus::Internal, e.to_string()))?;
        put(out_json, owned_string(json), "out_json")
    })
}

/// # Safety
/// `story` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pif_story_free(story: *mut PifStory) {
    if !story.is_null() {
        drop(Box::from_raw(story));
    }
}

// ---- engine ----

/// Start a reading engine at time `t0` (seconds, caller's clock). The story is
/// copied; the story handle may be freed afterwards. `state_keys` name the values
/// passed to [`pif_engine_push_state`], e.g. `"arousal"` feeds `phys_arousal` and
/// the tag-scoped `phys_<tag>_arousal`.
///
/// # Safety
/// `story` is a live handle; `state_keys` points to `n_keys` NUL-terminated strings;
/// `out` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_new(
    story: *const PifStory,
    state_keys: *const *const c_char,
    n_keys: usize,
    debounce_s: f64,
    t0: f64,
    out: *mut *mut PifEngine,
) -> PifStatus {
    guard(|| {
        non_null(story, "story")?;
        non_null(out, "out")?;
        if n_keys > 0 {
            non_null(state_keys, "state_keys")?;
        }
        if !(debounce_s.is_finite() && debounce_s >= 0.0 && t0.is_finite()) {
            return Err(Failure::new(
                PifStatus::InvalidArgument,
                "debounce_s must be finite and ≥ 0, t0 finite",
            ));
        }
        let mut keys = Vec::with_capacity(n_keys);
        for i in 0..n_keys {
            let k = text(*state_keys.add(i), "state_keys[i]")?;
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Failure::new(
                    PifStatus::InvalidArgument,
                    format!("state key `{k}` must be a non-empty identifier"),
                ));
            }
            keys.push(k);
        }
        let stream = StreamInfo::signal("state", "ffi-state", &keys, 0.0);
        let engine = Engine::new(
            (*story).graph.clone(),
            DirectorConfig::default(),
            None,
            vec![stream],
            debounce_s,
            t0,
        );
        put(out, Box::into_raw(Box::new(PifEngine { engine, n_keys })), "out")
    })
}

/// # Safety
/// `engine` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_free(engine: *mut PifEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Feed one state sample: `values[i]` for the i-th key given at creation.
/// `changed` (nullable) receives whether any `phys_*` variable was written.
///
/// # Safety
/// `engine` is a live handle; `values` points to `n` doubles; `changed` is NULL or
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_push_state(
    engine: *mut PifEngine,
    t: f64,
    values: *const f64,
    n: usize,
    changed: *mut bool,
) -> PifStatus {
    guard(|| {
        non_null(engine, "engine")?;
        let e = &mut *engine;
        if n != e.n_keys {
            return Err(Failure::new(
                PifStatus::InvalidArgument,
                format!("{n} values for {} state keys", e.n_keys),
            ));
        }
        if n > 0 {
            non_null(values, "values")?;
        }
        let v = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(values, n).to_vec()
        };
        if !t.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(Failure::new(PifStatus::InvalidArgument, "time and values must be finite"));
        }
        let c = e.engine.on_sample(0, &Sample::values(t, v));
        if !changed.is_null() {
            changed.write(c);
        }
        Ok(())
    })
}

unsafe fn reader_action(engine: *mut PifEngine, t: f64, action: ReaderAction) -> PifStatus {
    guard(|| {
        non_null(engine, "engine")?;
        if !t.is_finite() {
            return Err(Failure::new(PifStatus::InvalidArgument, "time must be finite"));
        }
        (*engine)
            .engine
            .on_reader(t, action)
            .map(drop)
            .map_err(|e| Failure::new(PifStatus::Rejected, e.to_string()))
    })
}

/// Turn the page at time `t`.
///
/// # Safety
/// `engine` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_advance(engine: *mut PifEngine, t: f64) -> PifStatus {
    reader_action(engine, t, ReaderAction::Advance)
}

/// Take displayed choice `index` (0-based) at time `t`.
///
/// # Safety
/// `engine` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_choose(engine: *mut PifEngine, t: f64, index: usize) -> PifStatus {
    reader_action(engine, t, ReaderAction::Choose { index })
}

/// The current page as the JSON `page` message of the reader protocol.
///
/// # Safety
/// `engine` is a live handle; `out_json` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_page(engine: *const PifEngine, out_json: *mut *mut c_char) -> PifStatus {
    guard(|| {
        non_null(engine, "engine")?;
        non_null(out_json, "out_json")?;
        let json = serde_json::to_string(&(*engine).engine.page())
            .map_err(|e| Failure::new(PifStatus::Internal, e.to_string()))?;
        put(out_json, owned_string(json), "out_json")
    })
}

/// Value of a story variable as the story sees it; booleans read as 0 or 1.
///
/// # Safety
/// `engine` is a live handle; `name` is a NUL-terminated string; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_variable(engine: *const PifEngine, name: *const c_char, out: *mut f64) -> PifStatus {
    guard(|| {
        non_null(engine, "engine")?;
        let name = text(name, "name")?;
        let value = match (*engine).engine.story_state().variables.get(name) {
            Some(Value::Number(v)) => v,
            Some(Value::Bool(b)) => f64::from(u8::from(b)),
            None => return Err(Failure::new(PifStatus::NotFound, format!("no variable `{name}`"))),
        };
        put(out, value, "out")
    })
}

/// True once the story has ended; false for NULL.
///
/// # Safety
/// `engine` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_finished(engine: *const PifEngine) -> bool {
    !engine.is_null() && (*engine).engine.finished()
}

/// Markers emitted since the last call, as a JSON array of `{"t": s, "label": "TAG_START:X"}`.
///
/// # Safety
/// `engine` is a live handle; `out_json` is valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_engine_take_markers(engine: *mut PifEngine, out_json: *mut *mut c_char) -> PifStatus {
    guard(|| {
        non_null(engine, "engine")?;
        non_null(out_json, "out_json")?;
        let markers: Vec<_> = (*engine)
            .engine
            .take_markers()
            .into_iter()
            .map(|(t, m)| serde_json::json!({"t": t, "label": m.label()}))
            .collect();
        put(out_json, owned_string(serde_json::Value::from(markers).to_string()), "out_json")
    })
}

// ---- models ----

/// Load a model written by `pif train`. `construct` (nullable) must match the
/// construct it was trained for.
///
/// # Safety
/// `path` is a NUL-terminated string, `construct` NULL or one; `out` is valid for a
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn pif_model_load(
    path: *const c_char,
    construct: *const c_char,
    out: *mut *mut PifModel,
) -> PifStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = Path::new(text(path, "path")?);
        let model = if construct.is_null() {
            let s = std::fs::read_to_string(path)
                .map_err(|e| Failure::new(PifStatus::Io, format!("{}: {e}", path.display())))?;
            PipelineModel::from_json(&s).map_err(|e| Failure::new(PifStatus::Model, format!("{}: {e}", path.display())))?
        } else {
            load_model(text(construct, "construct")?, path).map_err(|e| {
                let status = if matches!(e, pif::session::SessionError::Io { .. }) {
                    PifStatus::Io
                } else {
                    PifStatus::Model
                };
                Failure::new(status, e.to_string())
            })?
        };
        let c = |s: &str| CString::new(s).map_err(|_| Failure::new(PifStatus::Model, "NUL in model strings"));
        let names = model.registry.names.iter().map(|n| c(n)).collect::<Result<_, _>>()?;
        let labels = [c(&model.construct.class_a)?, c(&model.construct.class_b)?];
        put(out, Box::into_raw(Box::new(PifModel { model, names, labels })), "out")
    })
}

/// # Safety
/// `model` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pif_model_free(model: *mut PifModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of features the model expects; 0 for NULL.
///
/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pif_model_feature_count(model: *const PifModel) -> usize {
    if model.is_null() {
        0
    } else {
        let m = &*model;
        m.names.len()
    }
}

/// Name of feature `i`, owned by the model; NULL when out of range.
///
/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pif_model_feature_name(model: *const PifModel, i: usize) -> *const c_char {
    if model.is_null() {
        return std::ptr::null();
    }
    let m = &*model;
    m.names.get(i).map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Label of class A (`is_class_a`) or B, owned by the model; NULL for NULL.
///
/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pif_model_class_label(model: *const PifModel, is_class_a: bool) -> *const c_char {
    if model.is_null() {
        return std::ptr::null();
    }
    let m = &*model;
    m.labels[usize::from(!is_class_a)].as_ptr()
}

/// Classify one window's features, in the order of [`pif_model_feature_name`],
/// ranked against the model's training population. NaN marks a missing value.
///
/// # Safety
/// `model` is a live handle; `values` points to `n` doubles; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pif_model_classify(
    model: *const PifModel,
    values: *const f64,
    n: usize,
    out: *mut PifPrediction,
) -> PifStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        if n != m.names.len() {
            return Err(Failure::new(
                PifStatus::InvalidArgument,
                format!("{n} values for {} features", m.names.len()),
            ));
        }
        if n > 0 {
            non_null(values, "values")?;
        }
        let values = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(values, n)
                .iter()
                .map(|v| (!v.is_nan()).then_some(*v))
                .collect()
        };
        let fv = FeatureVector {
            values,
            subject: String::new(),
            label: None,
            span: (0.0, 0.0),
        };
        let p = m
            .model
            .predict(&fv, &[], RankStrategy::PopulationQuantile)
            .map_err(|e| Failure::new(PifStatus::InvalidArgument, e.to_string()))?;
        put(
            out,
            PifPrediction {
                is_class_a: p.class == Class::A,
                score: p.score,
                posterior_a: p.posterior_a,
            },
            "out",
        )
    })
}
