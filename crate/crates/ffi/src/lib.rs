//! C ABI over the inference pipeline, the overlap metric and the phantom
//! generator.
//!
//! Every function returns a [`MissStatus`]. On failure the message is kept
//! per thread and read with [`miss_last_error_message`]. Handles are opaque
//! and must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mi_sseg::checkpoint::CheckpointReader;
use mi_sseg::data::{make_synthetic_pair, normalize, Domain, PhantomParams, SegMask};
use mi_sseg::pipeline::InferencePipeline;
use mi_sseg::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Load = 5,
    Checkpoint = 6,
    Validation = 7,
    Generation = 8,
    Internal = 9,
    Panic = 10,
}

impl From<&Error> for MissStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => MissStatus::Dimension,
            Error::Config(_) => MissStatus::Config,
            Error::Load { .. } | Error::Io(_) | Error::Image(_) => MissStatus::Load,
            Error::Checkpoint(_) | Error::KeyMismatch { .. } | Error::Json(_) => MissStatus::Checkpoint,
            Error::Validation(_) => MissStatus::Validation,
            Error::Generation(_) => MissStatus::Generation,
            _ => MissStatus::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (MissStatus, String)>) -> MissStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MissStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MissStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MissStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (MissStatus, String) {
    (MissStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (MissStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MissStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn miss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn miss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque inference pipeline handle.
pub struct MissPipeline {
    inner: InferencePipeline,
}

/// Loads a pipeline from a segmentation archive and, when `style_path` is not
/// null, a style archive. Only the translator weights of the style archive
/// are read.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn miss_pipeline_load(
    style_path: *const c_char,
    sseg_path: *const c_char,
    out: *mut *mut MissPipeline,
) -> MissStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let sseg = CheckpointReader::open(path_arg(sseg_path, "sseg_path")?).map_err(lib_err)?;
        let style = if style_path.is_null() {
            None
        } else {
            Some(CheckpointReader::open(path_arg(style_path, "style_path")?).map_err(lib_err)?)
        };
        let inner = InferencePipeline::load(style.as_ref(), &sseg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MissPipeline { inner }));
        Ok(())
    })
}

/// Side length of the square images the pipeline accepts, or 0 for null.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn miss_pipeline_input_resolution(p: *const MissPipeline) -> usize {
    p.as_ref()
        .map_or(0, |p| p.inner.sseg().config().encoder.input_resolution)
}

/// Side length of the masks the pipeline produces, or 0 for null.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn miss_pipeline_output_resolution(p: *const MissPipeline) -> usize {
    p.as_ref().map_or(0, |p| {
        p.inner
            .output_resolution(p.inner.sseg().config().encoder.input_resolution)
    })
}

/// Segments one row-major `height × width` image. Raw intensities are
/// min-max normalized first. Writes `out_len` labels, which must equal the
/// squared output resolution.
///
/// # Safety
/// `pixels` must hold `height · width` floats and `out_labels` `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn miss_pipeline_infer(
    p: *const MissPipeline,
    pixels: *const f32,
    height: usize,
    width: usize,
    out_labels: *mut u8,
    out_len: usize,
) -> MissStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| (MissStatus::InvalidArgument, "image size overflows".to_string()))?;
        let raw = std::slice::from_raw_parts(pixels, n);
        let img = normalize(raw, height, width, Domain::Dti).map_err(lib_err)?.image;
        let mask = p.inner.infer(&img).map_err(lib_err)?;
        let labels = mask.labels();
        if labels.len() != out_len {
            return Err((
                MissStatus::Dimension,
                format!("output buffer holds {out_len} labels, mask has {}", labels.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out_labels, out_len).copy_from_slice(labels);
        Ok(())
    })
}

/// Releases a pipeline handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle from [`miss_pipeline_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn miss_pipeline_free(p: *mut MissPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Dice overlap of two binary label arrays of length `len` (nonzero is
/// foreground). Two empty masks score 1.
///
/// # Safety
/// `pred` and `gt` must hold `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn miss_dsc(pred: *const u8, gt: *const u8, len: usize, out: *mut f64) -> MissStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() || out.is_null() {
            return Err(null("pred, gt or out"));
        }
        let binary = |p: *const u8| {
            let labels = std::slice::from_raw_parts(p, len).iter().map(|&v| u8::from(v != 0)).collect();
            SegMask::new(1, len, labels, 2).map_err(lib_err)
        };
        *out = mi_sseg::eval::dsc(&binary(pred)?, &binary(gt)?).map_err(lib_err)?;
        Ok(())
    })
}

/// Renders phantom `seed` at `resolution` with default parameters. Each
/// output buffer must hold `resolution²` elements.
///
/// # Safety
/// Output pointers must be writable for `resolution²` elements.
#[no_mangle]
pub unsafe extern "C" fn miss_synthetic_pair(
    seed: u64,
    resolution: usize,
    out_a: *mut f32,
    out_b: *mut f32,
    out_mask: *mut u8,
) -> MissStatus {
    guard(|| {
        if out_a.is_null() || out_b.is_null() || out_mask.is_null() {
            return Err(null("output buffer"));
        }
        let params = PhantomParams {
            resolution,
            ..PhantomParams::default()
        };
        let pair = make_synthetic_pair(seed, &params).map_err(lib_err)?;
        let n = resolution * resolution;
        std::slice::from_raw_parts_mut(out_a, n).copy_from_slice(pair.image_a.pixels());
        std::slice::from_raw_parts_mut(out_b, n).copy_from_slice(pair.image_b.pixels());
        std::slice::from_raw_parts_mut(out_mask, n).copy_from_slice(pair.mask.labels());
        Ok(())
    })
}
