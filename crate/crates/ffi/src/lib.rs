//! C ABI over `dv3-core`.
//!
//! Every fallible function returns a [`Dv3Status`]. On failure the message
//! is kept per thread and can be read with [`dv3_last_error`]. Objects are
//! opaque handles released by their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dv3_core::cli::adapt_inputs;
use dv3_core::net::{load_model, MultiStreamModel, StreamInputs};
use dv3_core::pipeline::{extract_path, Extracted, PipelineConfig};
use dv3_core::pointset::{read_pointset, write_pointset, DvPointSet};
use dv3_core::rankpool::approx_coeffs;
use dv3_core::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dv3Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// The input holds no usable data, e.g. an empty proposal region.
    Data = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A normalized point set with per-point motion channels.
pub struct Dv3PointSet(DvPointSet);

/// Motion and appearance point sets extracted from one clip.
pub struct Dv3Extraction {
    motion: Dv3PointSet,
    appearance: Vec<Dv3PointSet>,
}

impl From<Extracted> for Dv3Extraction {
    fn from(x: Extracted) -> Self {
        Self {
            motion: Dv3PointSet(x.motion),
            appearance: x.appearance.into_iter().map(Dv3PointSet).collect(),
        }
    }
}

/// A trained classifier.
pub struct Dv3Model(MultiStreamModel<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(Dv3Status, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Io { .. } => Dv3Status::Io,
            Error::Image { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Parse(_) => Dv3Status::Format,
            Error::ZeroFrames | Error::EmptyRegion | Error::OutOfView => Dv3Status::Data,
            _ => Dv3Status::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: Dv3Status, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

/// Runs `f`, records any failure or panic and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Dv3Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Dv3Status::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            Dv3Status::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(Dv3Status::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(Dv3Status::InvalidArgument, format!("{what} is not valid UTF-8")),
    }
}

unsafe fn optional_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(Dv3Status::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .map_or_else(|| fail(Dv3Status::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn out_buffer<'a, T>(p: *mut T, len: usize, needed: usize) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return fail(
            Dv3Status::BufferTooSmall,
            format!("buffer holds {len} values, {needed} needed"),
        );
    }
    if p.is_null() {
        return fail(Dv3Status::NullPointer, "output buffer is null");
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dv3_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dv3_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Writes the `frames` approximate rank pooling coefficients into `out`.
///
/// # Safety
/// `out` must point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dv3_approx_coeffs(frames: usize, out: *mut f64, len: usize) -> Dv3Status {
    guard(|| {
        if frames == 0 {
            return fail(Dv3Status::InvalidArgument, "frames must be positive");
        }
        let buf = out_buffer(out, len, frames)?;
        buf.copy_from_slice(&approx_coeffs(frames));
        Ok(())
    })
}

/// Reads a DV3P point set file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv3_pointset_read(path: *const c_char, out: *mut *mut Dv3PointSet) -> Dv3Status {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let path = path_arg(path, "path")?;
        let ps = read_pointset(&path)?;
        *slot = Box::into_raw(Box::new(Dv3PointSet(ps)));
        Ok(())
    })
}

/// Writes a point set to a DV3P file.
///
/// # Safety
/// `ps` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn dv3_pointset_write(ps: *const Dv3PointSet, path: *const c_char) -> Dv3Status {
    guard(|| {
        let ps = handle(ps, "point set")?;
        let path = path_arg(path, "path")?;
        write_pointset(&path, &ps.0)?;
        Ok(())
    })
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `ps` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dv3_pointset_len(ps: *const Dv3PointSet) -> usize {
    ps.as_ref().map_or(0, |p| p.0.len())
}

/// Motion channels per point; 0 for a null handle.
///
/// # Safety
/// `ps` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dv3_pointset_channels(ps: *const Dv3PointSet) -> usize {
    ps.as_ref().map_or(0, |p| p.0.channels)
}

/// Copies `len × 3` coordinates and `len × channels` motion values,
/// row-major. Either buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold the stated number of writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dv3_pointset_copy(
    ps: *const Dv3PointSet,
    coords: *mut f64,
    coords_len: usize,
    motion: *mut f64,
    motion_len: usize,
) -> Dv3Status {
    guard(|| {
        let ps = &handle(ps, "point set")?.0;
        if !coords.is_null() {
            let buf = out_buffer(coords, coords_len, ps.len() * 3)?;
            for (dst, src) in buf.chunks_exact_mut(3).zip(&ps.coords) {
                dst.copy_from_slice(src);
            }
        }
        if !motion.is_null() {
            let buf = out_buffer(motion, motion_len, ps.motion.len())?;
            buf.copy_from_slice(&ps.motion);
        }
        Ok(())
    })
}

/// # Safety
/// `ps` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dv3_pointset_free(ps: *mut Dv3PointSet) {
    if !ps.is_null() {
        drop(Box::from_raw(ps));
    }
}

/// Runs the extraction pipeline on a depth clip (`.d16` file or PNG
/// directory). `bbox_path` and `config_path` may be null.
///
/// # Safety
/// Paths must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv3_extract(
    clip_path: *const c_char,
    bbox_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut Dv3Extraction,
) -> Dv3Status {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let clip = path_arg(clip_path, "clip path")?;
        let bbox = optional_path(bbox_path, "bbox path")?;
        let cfg = match optional_path(config_path, "config path")? {
            Some(p) => PipelineConfig::load(&p)?,
            None => PipelineConfig::default(),
        };
        let x = extract_path(&clip, bbox.as_deref(), &cfg)?;
        *slot = Box::into_raw(Box::new(Dv3Extraction::from(x)));
        Ok(())
    })
}

/// Motion point set owned by the extraction; valid until it is freed.
///
/// # Safety
/// `ex` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dv3_extraction_motion(ex: *const Dv3Extraction) -> *const Dv3PointSet {
    ex.as_ref().map_or(ptr::null(), |e| &e.motion as *const Dv3PointSet)
}

/// Number of appearance point sets.
///
/// # Safety
/// `ex` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dv3_extraction_appearance_count(ex: *const Dv3Extraction) -> usize {
    ex.as_ref().map_or(0, |e| e.appearance.len())
}

/// Appearance point set `index`, or null when out of range.
///
/// # Safety
/// `ex` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dv3_extraction_appearance(ex: *const Dv3Extraction, index: usize) -> *const Dv3PointSet {
    ex.as_ref()
        .and_then(|e| e.appearance.get(index))
        .map_or(ptr::null(), |p| p as *const Dv3PointSet)
}

/// # Safety
/// `ex` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dv3_extraction_free(ex: *mut Dv3Extraction) {
    if !ex.is_null() {
        drop(Box::from_raw(ex));
    }
}

/// Loads a DV3M checkpoint.
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv3_model_load(path: *const c_char, out: *mut *mut Dv3Model) -> Dv3Status {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let path = path_arg(path, "path")?;
        let model = load_model(&path)?;
        *slot = Box::into_raw(Box::new(Dv3Model(model)));
        Ok(())
    })
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dv3_model_classes(model: *const Dv3Model) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_classes())
}

/// Classifies an extraction. Writes the class index to `class_out` and,
/// when `probs` is non-null, the class probabilities.
///
/// # Safety
/// Handles must come from this library; `class_out` must be writable;
/// a non-null `probs` must hold `probs_len` floats.
#[no_mangle]
pub unsafe extern "C" fn dv3_model_predict(
    model: *const Dv3Model,
    ex: *const Dv3Extraction,
    class_out: *mut usize,
    probs: *mut f32,
    probs_len: usize,
) -> Dv3Status {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let ex = handle(ex, "extraction")?;
        let slot = out_slot(class_out, "class_out")?;
        let inputs = StreamInputs {
            motion: Some(ex.motion.0.clone()),
            appearance: ex.appearance.iter().map(|a| a.0.clone()).collect(),
        };
        let inputs = match adapt_inputs(&inputs, &model.arch) {
            Ok(i) => i,
            Err(e) => return fail(Dv3Status::InvalidArgument, format!("{e:#}")),
        };
        let output = model.forward(&inputs, 0)?;
        let p = output.probs.to_vec();
        let best = p.iter().enumerate().fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
        if !probs.is_null() {
            out_buffer(probs, probs_len, p.len())?.copy_from_slice(&p);
        }
        *slot = best;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dv3_model_free(model: *mut Dv3Model) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
