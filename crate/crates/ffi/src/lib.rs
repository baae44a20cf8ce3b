//! C ABI over the pipeline: run stages from a configuration handle and
//! predict with a trained model handle.
//!
//! Every fallible call returns a [`CavenetStatus`]. On failure the message
//! is kept per thread and read with [`cavenet_last_error`]. Handles are
//! opaque; free them with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cavenet::cli::{load_model, run, Command};
use cavenet::config::RunConfig;
use cavenet::fusion::{CaveNet, Execution};
use cavenet::tensor::Tensor;
use cavenet::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CavenetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    MissingArtifact = 4,
    Shape = 5,
    InvalidArgument = 6,
    Io = 7,
    Format = 8,
    Untrained = 9,
    EmptyDataset = 10,
    NonFinite = 11,
    UnknownClass = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

impl CavenetStatus {
    fn of(e: &Error) -> Self {
        match e.kind() {
            "config" => Self::Config,
            "missing_artifact" => Self::MissingArtifact,
            "shape" => Self::Shape,
            "io" => Self::Io,
            "format" => Self::Format,
            "untrained" => Self::Untrained,
            "empty_dataset" => Self::EmptyDataset,
            "non_finite" => Self::NonFinite,
            "unknown_class" => Self::UnknownClass,
            _ => Self::InvalidArgument,
        }
    }
}

/// Run configuration being assembled from the C side.
pub struct CavenetConfig {
    inner: RunConfig,
}

/// A trained, fused model loaded from an output directory.
pub struct CavenetModel {
    net: CaveNet,
    side: usize,
    classes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: CavenetStatus, msg: impl Into<String>) -> CavenetStatus {
    set_error(msg);
    status
}

/// Runs `f` with panics turned into [`CavenetStatus::Panic`] and library
/// errors recorded as the last error.
fn guard(f: impl FnOnce() -> Result<(), (CavenetStatus, String)>) -> CavenetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CavenetStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(CavenetStatus::Panic, "internal panic"),
    }
}

fn lib(e: Error) -> (CavenetStatus, String) {
    (CavenetStatus::of(&e), e.to_string())
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, (CavenetStatus, String)> {
    if s.is_null() {
        return Err((CavenetStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (CavenetStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn null(what: &str) -> (CavenetStatus, String) {
    (CavenetStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cavenet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cavenet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fresh configuration holding every default.
#[no_mangle]
pub extern "C" fn cavenet_config_new() -> *mut CavenetConfig {
    Box::into_raw(Box::new(CavenetConfig {
        inner: RunConfig::default(),
    }))
}

/// Loads `key = value` lines from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cavenet_config_load(path: *const c_char, out: *mut *mut CavenetConfig) -> CavenetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let inner = RunConfig::load(Path::new(path)).map_err(lib)?;
        *out = Box::into_raw(Box::new(CavenetConfig { inner }));
        Ok(())
    })
}

/// Sets one key. Unknown keys are a [`CavenetStatus::Config`] error.
///
/// # Safety
/// `config` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cavenet_config_set(
    config: *mut CavenetConfig,
    key: *const c_char,
    value: *const c_char,
) -> CavenetStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        let (key, value) = (str_arg(key, "key")?, str_arg(value, "value")?);
        config.inner.set(key, value).map_err(lib)
    })
}

/// # Safety
/// `config` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn cavenet_config_free(config: *mut CavenetConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one pipeline stage by its command name, e.g. `"gen-data"`.
///
/// # Safety
/// `config` must come from this library and `command` be a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn cavenet_run(config: *const CavenetConfig, command: *const c_char) -> CavenetStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let cmd = Command::parse(str_arg(command, "command")?).map_err(lib)?;
        run(cmd, &config.inner).map(drop).map_err(lib)
    })
}

/// Loads the fused model from the checkpoints under the configured output
/// directory.
///
/// # Safety
/// `config` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cavenet_model_load(
    config: *const CavenetConfig,
    out: *mut *mut CavenetModel,
) -> CavenetStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let net = load_model(&config.inner).map_err(lib)?;
        let cbam = net.cbam.as_ref().ok_or_else(|| lib(Error::Untrained("cbam".into())))?;
        let (side, classes) = (cbam.config().side, cbam.classes());
        *out = Box::into_raw(Box::new(CavenetModel { net, side, classes }));
        Ok(())
    })
}

/// Side length of the square images the model expects.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cavenet_model_side(model: *const CavenetModel) -> usize {
    model.as_ref().map_or(0, |m| m.side)
}

/// Number of classes in each probability row.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cavenet_model_classes(model: *const CavenetModel) -> usize {
    model.as_ref().map_or(0, |m| m.classes)
}

/// Fused class probabilities for `count` images.
///
/// `pixels` holds `count * 3 * side * side` values in `[0, 1]`, channel
/// planes in row-major order per image. `probs` receives `count * classes`
/// values and `labels`, when not null, `count` argmax classes.
///
/// # Safety
/// Buffers must be valid for the lengths given.
#[no_mangle]
pub unsafe extern "C" fn cavenet_model_predict(
    model: *const CavenetModel,
    pixels: *const f64,
    pixels_len: usize,
    count: usize,
    probs: *mut f64,
    probs_len: usize,
    labels: *mut usize,
) -> CavenetStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() || probs.is_null() {
            return Err(null("buffer"));
        }
        let per = 3 * model.side * model.side;
        if count == 0 || pixels_len != count * per {
            return Err((
                CavenetStatus::Shape,
                format!("{pixels_len} pixels for {count} images of {per} values"),
            ));
        }
        if probs_len < count * model.classes {
            return Err((
                CavenetStatus::BufferTooSmall,
                format!("probs holds {probs_len}, need {}", count * model.classes),
            ));
        }
        let src = std::slice::from_raw_parts(pixels, pixels_len);
        let images = src
            .chunks_exact(per)
            .map(|c| Tensor::new(vec![3, model.side, model.side], c.to_vec()))
            .collect::<cavenet::Result<Vec<_>>>()
            .map_err(lib)?;
        let refs: Vec<&Tensor> = images.iter().collect();
        let pred = model.net.predict(&refs, Execution::Parallel).map_err(lib)?;
        std::slice::from_raw_parts_mut(probs, count * model.classes).copy_from_slice(pred.probs.data());
        if !labels.is_null() {
            std::slice::from_raw_parts_mut(labels, count).copy_from_slice(&pred.labels);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn cavenet_model_free(model: *mut CavenetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
