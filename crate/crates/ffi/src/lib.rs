//! C interface to pointrefine.
//!
//! Objects cross the boundary as opaque handles created by `pr_*_new` or
//! `pr_*_load` and released with the matching `pr_*_free`. Every fallible
//! call returns a [`PrStatus`]; on failure the message is kept per thread
//! and can be copied out with [`pr_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pointrefine::cloudbuild::{Mask, ProbabilityVolume};
use pointrefine::evalsynth::{dice, hd95};
use pointrefine::network::{Network, NetworkSpec};
use pointrefine::pipeline::{infer, InferenceConfig};
use pointrefine::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Dimension = 6,
    EmptyCloud = 7,
    InsufficientPoints = 8,
    UndefinedMetric = 9,
    State = 10,
    NonFiniteLoss = 11,
    Panic = 12,
}

/// Probability volume handle.
pub struct PrVolume(ProbabilityVolume);

/// Binary mask handle.
pub struct PrMask {
    mask: Mask,
    spacing: [f64; 3],
}

/// Trained network handle.
pub struct PrNetwork(Network);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PrStatus {
    match e {
        Error::Dimension(_) => PrStatus::Dimension,
        Error::Input(_) | Error::Usage(_) => PrStatus::InvalidArgument,
        Error::State(_) => PrStatus::State,
        Error::Config(_) => PrStatus::Config,
        Error::EmptyCloud { .. } => PrStatus::EmptyCloud,
        Error::InsufficientPoints { .. } => PrStatus::InsufficientPoints,
        Error::UndefinedMetric(_) => PrStatus::UndefinedMetric,
        Error::NonFiniteLoss { .. } => PrStatus::NonFiniteLoss,
        Error::Format { .. } => PrStatus::Format,
        Error::Io(_) | Error::File { .. } => PrStatus::Io,
    }
}

struct Failure(PrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PrStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            PrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PrStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn triple<T: Copy>(p: *const T, what: &str) -> Result<[T; 3], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(p, 3);
    Ok([s[0], s[1], s[2]])
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn get<'a, T>(h: *const T, what: &str) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity`. Returns the full message length in bytes, so a
/// return value `>= capacity` means the copy was truncated.
///
/// # Safety
/// `buffer` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pr_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buffer.cast::<u8>(), n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a volume from `len` values in x-fastest order.
///
/// # Safety
/// `shape` and `spacing` must point to three elements, `values` to `len`.
#[no_mangle]
pub unsafe extern "C" fn pr_volume_new(
    shape: *const usize,
    spacing: *const f64,
    values: *const f64,
    len: usize,
    out: *mut *mut PrVolume,
) -> PrStatus {
    guard(|| {
        let v = ProbabilityVolume::new(triple(shape, "shape")?, triple(spacing, "spacing")?, slice_arg(values, len, "values")?.to_vec())?;
        put(out, PrVolume(v))
    })
}

/// Reads a `.raw` volume with its `.meta` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_volume_load(path: *const c_char, out: *mut *mut PrVolume) -> PrStatus {
    guard(|| put(out, PrVolume(ProbabilityVolume::load(&path_arg(path)?)?)))
}

/// # Safety
/// `volume` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_volume_free(volume: *mut PrVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Builds a mask from `len` bytes (zero is background) in x-fastest order.
///
/// # Safety
/// `shape` and `spacing` must point to three elements, `values` to `len`.
#[no_mangle]
pub unsafe extern "C" fn pr_mask_new(
    shape: *const usize,
    spacing: *const f64,
    values: *const u8,
    len: usize,
    out: *mut *mut PrMask,
) -> PrStatus {
    guard(|| {
        let shape = triple(shape, "shape")?;
        let spacing = triple(spacing, "spacing")?;
        let values = slice_arg(values, len, "values")?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(Failure(
                PrStatus::Dimension,
                format!("{} mask values for shape {shape:?}", values.len()),
            ));
        }
        let mask = Mask {
            shape,
            values: values.iter().map(|&v| v != 0).collect(),
        };
        put(out, PrMask { mask, spacing })
    })
}

/// Number of foreground voxels, or 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_mask_count(mask: *const PrMask) -> usize {
    mask.as_ref().map_or(0, |m| m.mask.count())
}

/// Writes the mask as 0/1 bytes in x-fastest order into `dst`.
///
/// # Safety
/// `mask` must be a live handle; `dst` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pr_mask_copy(mask: *const PrMask, dst: *mut u8, len: usize) -> PrStatus {
    guard(|| {
        let m = get(mask, "mask")?;
        if len != m.mask.values.len() {
            return Err(Failure(
                PrStatus::Dimension,
                format!("buffer of {len} bytes for {} voxels", m.mask.values.len()),
            ));
        }
        if dst.is_null() {
            return Err(null("destination"));
        }
        let out = std::slice::from_raw_parts_mut(dst, len);
        for (o, &v) in out.iter_mut().zip(&m.mask.values) {
            *o = u8::from(v);
        }
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_mask_free(mask: *mut PrMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Loads a trained network checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_network_load(path: *const c_char, out: *mut *mut PrNetwork) -> PrStatus {
    guard(|| put(out, PrNetwork(Network::load(&path_arg(path)?)?)))
}

/// Freshly initialized network; `reduced` selects the 512-point variant.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_network_new(reduced: bool, seed: u64, out: *mut *mut PrNetwork) -> PrStatus {
    guard(|| {
        let spec = if reduced { NetworkSpec::reduced() } else { NetworkSpec::standard() };
        put(out, PrNetwork(Network::new(spec, seed)?))
    })
}

/// Trainable scalar count, or 0 for a null handle.
///
/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_network_parameter_count(network: *const PrNetwork) -> usize {
    network.as_ref().map_or(0, |n| n.0.parameter_count())
}

/// Saves the network to a checkpoint file.
///
/// # Safety
/// `network` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pr_network_save(network: *const PrNetwork, path: *const c_char) -> PrStatus {
    guard(|| Ok(get(network, "network")?.0.save(&path_arg(path)?)?))
}

/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pr_network_free(network: *mut PrNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Refines `volume`: thresholds at `theta`, classifies with `repetitions`
/// majority-voted passes, and returns the refined segmentation.
///
/// # Safety
/// `network` and `volume` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_refine(
    network: *const PrNetwork,
    volume: *const PrVolume,
    repetitions: usize,
    theta: f64,
    seed: u64,
    out: *mut *mut PrMask,
) -> PrStatus {
    guard(|| {
        let net = get(network, "network")?;
        let vol = get(volume, "volume")?;
        let config = InferenceConfig {
            repetitions,
            theta,
            seed,
            ..InferenceConfig::default()
        };
        let result = infer(&vol.0, &net.0, &config)?;
        put(
            out,
            PrMask {
                mask: result.refined,
                spacing: vol.0.spacing(),
            },
        )
    })
}

/// Dice coefficient of two masks of equal shape.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_dice(a: *const PrMask, b: *const PrMask, out: *mut f64) -> PrStatus {
    guard(|| {
        let v = dice(&get(a, "a")?.mask, &get(b, "b")?.mask)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// 95th-percentile Hausdorff distance in mm, using the spacing of `a`.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_hd95(a: *const PrMask, b: *const PrMask, out: *mut f64) -> PrStatus {
    guard(|| {
        let a = get(a, "a")?;
        let v = hd95(&a.mask, &get(b, "b")?.mask, a.spacing)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
