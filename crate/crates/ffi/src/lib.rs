//! C ABI over the reenactment engine.
//!
//! A session owns a loaded checkpoint and its dataset. Every call returns an
//! [`MgfrStatus`]; on failure the message is kept per thread and read back
//! with [`mgfr_last_error`]. Images cross the boundary as interleaved 8-bit
//! RGB, row-major, `3 · size · size` bytes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mgfr::face::{disentangled_driving, interpolate_params, Coefficients, DriveMode};
use mgfr::harness::pipeline::dataset_for;
use mgfr::harness::{load_checkpoint, Generator, Model};
use mgfr::synth::{Dataset, Image};
use mgfr::tensor::no_grad;
use mgfr::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgfrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    UnsupportedVersion = 5,
    BufferTooSmall = 6,
    Runtime = 7,
    Panic = 8,
}

/// Which driving components a reenactment transfers.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgfrDriveMode {
    Both = 0,
    Pose = 1,
    Expression = 2,
}

/// Static facts about an open session.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MgfrInfo {
    pub image_size: usize,
    pub frame_count: usize,
    pub identities: usize,
    pub frames_per_identity: usize,
}

/// Opaque handle to a loaded model and dataset.
pub struct MgfrSession {
    model: Model,
    dataset: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MgfrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MgfrStatus::Io,
            Error::Format { .. } | Error::MissingParameter(_) | Error::Image(_) => {
                MgfrStatus::Format
            }
            Error::UnsupportedVersion { .. } => MgfrStatus::UnsupportedVersion,
            Error::InvalidArgument { .. } | Error::Config(_) | Error::ShapeMismatch { .. } => {
                MgfrStatus::InvalidArgument
            }
            _ => MgfrStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure message and converts panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MgfrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MgfrStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {what}"));
            MgfrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MgfrStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for reads.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(MgfrStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Some(PathBuf::from(s)))
}

/// # Safety
/// `session` is null or a live handle from [`mgfr_session_open`].
unsafe fn session_ref<'a>(session: *const MgfrSession) -> Result<&'a MgfrSession, Failure> {
    unsafe { session.as_ref() }.ok_or_else(|| null("session"))
}

impl MgfrSession {
    fn frame(&self, i: usize) -> Result<usize, Failure> {
        if i < self.dataset.frames.len() {
            Ok(i)
        } else {
            Err(Failure(
                MgfrStatus::InvalidArgument,
                format!(
                    "frame {i} out of range (dataset has {})",
                    self.dataset.frames.len()
                ),
            ))
        }
    }

    fn render(&self, source: usize, driving: &Coefficients) -> Result<Image, Failure> {
        let s = &self.dataset.frames[source];
        let img = no_grad(|| {
            let stacked = Generator::stacked_input(&self.dataset.basis, &s.coefficients, driving)?;
            Image::from_tensor(
                &self
                    .model
                    .generator
                    .forward(&s.image.to_tensor(), &[stacked])?,
            )
        })?;
        Ok(img)
    }
}

/// # Safety
/// `out` is null or valid for `len` byte writes.
unsafe fn write_rgb(img: &Image, out: *mut u8, len: usize) -> Result<(), Failure> {
    let plane = img.height * img.width;
    let need = 3 * plane;
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err(Failure(
            MgfrStatus::BufferTooSmall,
            format!("output buffer holds {len} bytes, need {need}"),
        ));
    }
    let planar = img.to_u8();
    let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
    for p in 0..plane {
        for ch in 0..3 {
            dst[3 * p + ch] = planar[ch * plane + p];
        }
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mgfr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message length
/// plus one. Returns 0 when the last call succeeded.
///
/// # Safety
/// `buf` is null or valid for `len` byte writes.
#[no_mangle]
pub unsafe extern "C" fn mgfr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            let dst = unsafe { std::slice::from_raw_parts_mut(buf.cast::<u8>(), n) };
            dst.copy_from_slice(&bytes[..n]);
            dst[n - 1] = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint and the dataset at `dataset_dir`. A null `dataset_dir`
/// regenerates the dataset described by the checkpoint's configuration.
///
/// # Safety
/// `checkpoint` is a NUL-terminated path; `dataset_dir` is null or one;
/// `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mgfr_session_open(
    checkpoint: *const c_char,
    dataset_dir: *const c_char,
    out: *mut *mut MgfrSession,
) -> MgfrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = std::ptr::null_mut() };
        let ckpt =
            unsafe { path_arg(checkpoint, "checkpoint") }?.ok_or_else(|| null("checkpoint"))?;
        let model = load_checkpoint(&ckpt)?;
        let dataset = match unsafe { path_arg(dataset_dir, "dataset_dir") }? {
            Some(dir) => Dataset::load(&dir)?,
            None => dataset_for(&model.config)?,
        };
        if dataset.meta.height != model.config.image_size {
            return Err(Failure(
                MgfrStatus::InvalidArgument,
                format!(
                    "dataset images are {} px, model expects {}",
                    dataset.meta.height, model.config.image_size
                ),
            ));
        }
        unsafe { *out = Box::into_raw(Box::new(MgfrSession { model, dataset })) };
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` is null or a handle from [`mgfr_session_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mgfr_session_free(session: *mut MgfrSession) {
    if !session.is_null() {
        drop(unsafe { Box::from_raw(session) });
    }
}

/// # Safety
/// `session` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mgfr_session_info(
    session: *const MgfrSession,
    out: *mut MgfrInfo,
) -> MgfrStatus {
    guard(|| {
        let s = unsafe { session_ref(session) }?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = MgfrInfo {
            image_size: s.model.config.image_size,
            frame_count: s.dataset.frames.len(),
            identities: s.dataset.meta.identities,
            frames_per_identity: s.dataset.meta.frames_per_identity,
        };
        Ok(())
    })
}

/// Reenacts frame `driving` from frame `source`, transferring the components
/// selected by `mode`, into `out` (`len ≥ 3 · size²`).
///
/// # Safety
/// `session` is a live handle; `out` is valid for `len` byte writes.
#[no_mangle]
pub unsafe extern "C" fn mgfr_reenact(
    session: *const MgfrSession,
    source: usize,
    driving: usize,
    mode: MgfrDriveMode,
    out: *mut u8,
    len: usize,
) -> MgfrStatus {
    guard(|| {
        let s = unsafe { session_ref(session) }?;
        let (src, drv) = (s.frame(source)?, s.frame(driving)?);
        let mode = match mode {
            MgfrDriveMode::Both => DriveMode::Both,
            MgfrDriveMode::Pose => DriveMode::Pose,
            MgfrDriveMode::Expression => DriveMode::Expression,
        };
        let f = &s.dataset.frames;
        let target = disentangled_driving(&f[src].coefficients, &f[drv].coefficients, mode);
        unsafe { write_rgb(&s.render(src, &target)?, out, len) }
    })
}

/// Reenacts with pose and expression blended from `source` (`alpha = 0`) to
/// `driving` (`alpha = 1`).
///
/// # Safety
/// `session` is a live handle; `out` is valid for `len` byte writes.
#[no_mangle]
pub unsafe extern "C" fn mgfr_interpolate(
    session: *const MgfrSession,
    source: usize,
    driving: usize,
    alpha: f64,
    out: *mut u8,
    len: usize,
) -> MgfrStatus {
    guard(|| {
        let s = unsafe { session_ref(session) }?;
        let (src, drv) = (s.frame(source)?, s.frame(driving)?);
        let f = &s.dataset.frames;
        let target = interpolate_params(&f[src].coefficients, &f[drv].coefficients, alpha)?;
        unsafe { write_rgb(&s.render(src, &target)?, out, len) }
    })
}

/// Copies dataset frame `index` into `out`.
///
/// # Safety
/// `session` is a live handle; `out` is valid for `len` byte writes.
#[no_mangle]
pub unsafe extern "C" fn mgfr_frame(
    session: *const MgfrSession,
    index: usize,
    out: *mut u8,
    len: usize,
) -> MgfrStatus {
    guard(|| {
        let s = unsafe { session_ref(session) }?;
        let i = s.frame(index)?;
        unsafe { write_rgb(&s.dataset.frames[i].image, out, len) }
    })
}
