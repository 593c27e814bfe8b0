//! C ABI over the `racl` detector.
//!
//! Objects cross the boundary as opaque handles; every fallible call returns
//! a [`RaclStatus`] and leaves a message retrievable with
//! [`racl_last_error`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use racl::audio::{fix_length, prepare, AudioClip, SampleLabel};
use racl::config::{check_hash, RunConfig};
use racl::features::Extractor;
use racl::model::{Checkpoint, Detector};
use racl::reconstruct::Reconstructor;
use racl::RaclError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaclStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Shape = 6,
    Numeric = 7,
    Undefined = 8,
    Panic = 9,
}

impl From<&RaclError> for RaclStatus {
    fn from(e: &RaclError) -> Self {
        match e {
            RaclError::MissingFile { .. } | RaclError::Io { .. } => RaclStatus::Io,
            RaclError::MalformedHeader { .. }
            | RaclError::UnsupportedEncoding { .. }
            | RaclError::Manifest { .. }
            | RaclError::Checkpoint(_) => RaclStatus::Format,
            RaclError::Config(_) | RaclError::ConfigMismatch { .. } => RaclStatus::Config,
            RaclError::Shape(_) | RaclError::EmptyInput => RaclStatus::Shape,
            RaclError::Numeric(_) | RaclError::DegeneratePower { .. } => RaclStatus::Numeric,
            RaclError::UndefinedEer(_) => RaclStatus::Undefined,
        }
    }
}

/// Loaded detector: frozen extractor, trained parameters and the config
/// they were trained under.
pub struct RaclDetector {
    detector: Detector,
    config: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn guard(f: impl FnOnce() -> Result<(), (RaclStatus, String)>) -> RaclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RaclStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RaclStatus::Panic
        }
    }
}

fn lift(e: RaclError) -> (RaclStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(name: &str) -> (RaclStatus, String) {
    (RaclStatus::NullArgument, format!("{name} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, (RaclStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (RaclStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (RaclStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], (RaclStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn racl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn racl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens a checkpoint. `config_path` may be null, in which case
/// `config.json` next to the checkpoint is used if present, else defaults.
/// The checkpoint must have been written under the same config.
///
/// # Safety
/// Path arguments must be null or valid NUL-terminated strings; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn racl_detector_open(
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut RaclDetector,
) -> RaclStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt_path = path_arg(checkpoint_path, "checkpoint_path")?;
        let config = if config_path.is_null() {
            match ckpt_path.parent().map(|d| d.join("config.json")).filter(|p| p.exists()) {
                Some(p) => RunConfig::load(&p).map_err(lift)?,
                None => RunConfig::default(),
            }
        } else {
            RunConfig::load(path_arg(config_path, "config_path")?).map_err(lift)?
        };
        config.validate().map_err(lift)?;
        let ckpt = Checkpoint::load(ckpt_path).map_err(lift)?;
        check_hash(&ckpt_path.display().to_string(), &config.hash_hex(), &ckpt.config_hash_hex()).map_err(lift)?;
        let extractor = Extractor::new(&config.features, config.audio.sample_rate).map_err(lift)?;
        let detector = Detector::new(extractor, ckpt.params).map_err(lift)?;
        *out = Box::into_raw(Box::new(RaclDetector { detector, config }));
        Ok(())
    })
}

/// Releases a detector. Null is ignored.
///
/// # Safety
/// `detector` must be null or a handle from [`racl_detector_open`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn racl_detector_free(detector: *mut RaclDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Embedding width of the detector, or 0 for a null handle.
///
/// # Safety
/// `detector` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn racl_detector_embedding_dim(detector: *const RaclDetector) -> usize {
    detector.as_ref().map_or(0, |d| d.detector.params.embedding_dim())
}

/// Working sample rate of the detector, or 0 for a null handle.
///
/// # Safety
/// `detector` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn racl_detector_sample_rate(detector: *const RaclDetector) -> u32 {
    detector.as_ref().map_or(0, |d| d.config.audio.sample_rate)
}

/// Scores one mono clip. The clip is resampled and length-normalized
/// first. `score_out` receives the spoof probability; `embedding_out` may be
/// null, otherwise it must hold exactly `embedding_len` =
/// [`racl_detector_embedding_dim`] values.
///
/// # Safety
/// `samples` must point to `len` readable values; output pointers must be
/// valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn racl_detector_score(
    detector: *const RaclDetector,
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    score_out: *mut f64,
    embedding_out: *mut f64,
    embedding_len: usize,
) -> RaclStatus {
    guard(|| {
        let d = detector.as_ref().ok_or_else(|| null("detector"))?;
        if score_out.is_null() {
            return Err(null("score_out"));
        }
        if sample_rate == 0 {
            return Err((RaclStatus::InvalidArgument, "sample_rate must be positive".into()));
        }
        let x = slice_arg(samples, len, "samples")?;
        if !embedding_out.is_null() && embedding_len != d.detector.params.embedding_dim() {
            return Err((
                RaclStatus::Shape,
                format!(
                    "embedding buffer holds {embedding_len} values, detector produces {}",
                    d.detector.params.embedding_dim()
                ),
            ));
        }
        let clip = AudioClip::new(x.to_vec(), sample_rate, SampleLabel::BonaFide, "ffi");
        let clip = prepare(&clip, d.config.audio.sample_rate, d.config.audio.target_len).map_err(lift)?;
        let scored = d.detector.score(&clip).map_err(lift)?;
        *score_out = scored.score;
        if !embedding_out.is_null() {
            out_slice(embedding_out, embedding_len, "embedding_out")?
                .iter_mut()
                .zip(scored.embedding.iter())
                .for_each(|(o, v)| *o = *v);
        }
        Ok(())
    })
}

/// Equal error rate in percent of spoof-probability scores.
///
/// # Safety
/// Score pointers must be valid for their lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn racl_eer(
    bona: *const f64,
    n_bona: usize,
    spoof: *const f64,
    n_spoof: usize,
    out: *mut f64,
) -> RaclStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = slice_arg(bona, n_bona, "bona")?;
        let s = slice_arg(spoof, n_spoof, "spoof")?;
        *out = racl::eval::eer(b, s).map_err(lift)?;
        Ok(())
    })
}

/// Truncates or circularly pads `len` samples into `out` (`target_len`
/// values).
///
/// # Safety
/// `samples` must hold `len` values and `out` room for `target_len`.
#[no_mangle]
pub unsafe extern "C" fn racl_fix_length(
    samples: *const f64,
    len: usize,
    out: *mut f64,
    target_len: usize,
) -> RaclStatus {
    guard(|| {
        let x = slice_arg(samples, len, "samples")?;
        let o = out_slice(out, target_len, "out")?;
        let clip = AudioClip::new(x.to_vec(), 1, SampleLabel::BonaFide, "ffi");
        let fixed = fix_length(&clip, target_len).map_err(lift)?;
        o.copy_from_slice(&fixed.samples);
        Ok(())
    })
}

/// Mel round-trip reconstruction with the default analysis settings. Output
/// has the input length.
///
/// # Safety
/// `samples` must hold `len` values and `out` room for `len`.
#[no_mangle]
pub unsafe extern "C" fn racl_reconstruct(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    seed: u64,
    out: *mut f64,
) -> RaclStatus {
    guard(|| {
        let x = slice_arg(samples, len, "samples")?;
        let o = out_slice(out, len, "out")?;
        let rec = Reconstructor::new(&Default::default(), sample_rate).map_err(lift)?;
        let clip = AudioClip::new(x.to_vec(), sample_rate, SampleLabel::BonaFide, "ffi");
        let y = rec.reconstruct_clip(&clip, seed).map_err(lift)?;
        o.copy_from_slice(&y.samples);
        Ok(())
    })
}
