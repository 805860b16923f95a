//! C ABI over `mrdiff`.
//!
//! Every fallible function returns an [`MrdStatus`]. On failure the message
//! is kept per thread and can be read with [`mrd_last_error`]. Objects are
//! opaque handles released with their `_free` function. Images are planar
//! `f32` buffers of shape `channels × height × width` with values in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mrdiff::pipeline::LoadedModel;
use mrdiff::sampling::SampleConfig;
use mrdiff::toolkit::{avg_gradient, bicubic_resize, psnr, ssim};
use mrdiff::{Error, NoiseSchedule, ScheduleShape, Tensor};

/// Result of an API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrdStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

/// Shape of the per-step rate λ_t.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrdScheduleShape {
    /// Linear ramp with `λ_T / λ_1 = 10`.
    Linear = 0,
    Constant = 1,
}

/// Opaque noise schedule.
pub struct MrdSchedule(NoiseSchedule);

/// Opaque trained denoiser loaded from a checkpoint.
pub struct MrdModel(LoadedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MrdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => MrdStatus::InvalidArgument,
            Error::Io { .. } => MrdStatus::Io,
            Error::Checkpoint(_) | Error::Config(_) | Error::Image { .. } | Error::Csv(_) => MrdStatus::Format,
            Error::IndexOutOfRange { .. } => MrdStatus::InvalidArgument,
            Error::SingularVariance | Error::CannotStep | Error::NonFinite(_) => MrdStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MrdStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(MrdStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MrdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MrdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MrdStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn image(ptr: *const f32, channels: usize, h: usize, w: usize, what: &str) -> Result<Tensor<f32>, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if channels == 0 || h == 0 || w == 0 {
        return Err(invalid(format!("{what}: empty image {channels}x{h}x{w}")));
    }
    let len = channels.checked_mul(h).and_then(|v| v.checked_mul(w)).ok_or_else(|| invalid("image too large"))?;
    let data = std::slice::from_raw_parts(ptr, len).to_vec();
    Ok(Tensor::from_vec([1, channels, h, w], data)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mrd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn mrd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a schedule with `steps` steps and stationary deviation `delta`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mrd_schedule_new(
    steps: usize,
    delta: f64,
    shape: MrdScheduleShape,
    out: *mut *mut MrdSchedule,
) -> MrdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let shape = match shape {
            MrdScheduleShape::Linear => ScheduleShape::default(),
            MrdScheduleShape::Constant => ScheduleShape::Constant,
        };
        let s = NoiseSchedule::build(steps, delta, shape)?;
        *out = Box::into_raw(Box::new(MrdSchedule(s)));
        Ok(())
    })
}

/// # Safety
/// `schedule` must come from [`mrd_schedule_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mrd_schedule_free(schedule: *mut MrdSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Number of steps, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mrd_schedule_steps(schedule: *const MrdSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.steps())
}

unsafe fn schedule_query(
    schedule: *const MrdSchedule,
    out: *mut f64,
    f: impl FnOnce(&NoiseSchedule) -> mrdiff::Result<f64>,
) -> MrdStatus {
    guard(|| {
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        let out = out_ref(out, "out")?;
        *out = f(&s.0)?;
        Ok(())
    })
}

/// Mean decay `exp(−λ̄_t)` at step `t`.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mrd_schedule_mean_coeff(schedule: *const MrdSchedule, t: usize, out: *mut f64) -> MrdStatus {
    schedule_query(schedule, out, |s| s.mean_coeff(t))
}

/// Marginal variance `n_t` at step `t`.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mrd_schedule_variance(schedule: *const MrdSchedule, t: usize, out: *mut f64) -> MrdStatus {
    schedule_query(schedule, out, |s| s.variance(t))
}

/// Weights `(a_t, b_t)` of the one-step posterior mean
/// `a_t (x_t − μ) + b_t (x_0 − μ) + μ`.
///
/// # Safety
/// `schedule` must be a live handle; `a` and `b` writable.
#[no_mangle]
pub unsafe extern "C" fn mrd_schedule_posterior_coeffs(
    schedule: *const MrdSchedule,
    t: usize,
    a: *mut f64,
    b: *mut f64,
) -> MrdStatus {
    guard(|| {
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        let (a, b) = (out_ref(a, "a")?, out_ref(b, "b")?);
        (*a, *b) = s.0.posterior_coeffs(t)?;
        Ok(())
    })
}

/// Loads a trained model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mrd_model_load(path: *const c_char, out: *mut *mut MrdModel) -> MrdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let model = LoadedModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MrdModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mrd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mrd_model_free(model: *mut MrdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upscaling factor, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mrd_model_scale(model: *const MrdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.model.config.scale())
}

/// Super-resolves a `3 × height × width` image into `out`, which must hold
/// `3 × (height·r) × (width·r)` values. `steps = 0` uses every schedule step.
///
/// # Safety
/// `model` must be a live handle; `lr` readable and `out` writable for the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mrd_model_upscale(
    model: *const MrdModel,
    lr: *const f32,
    height: usize,
    width: usize,
    steps: usize,
    deterministic: bool,
    seed: u64,
    out: *mut f32,
    out_len: usize,
) -> MrdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = image(lr, 3, height, width, "lr")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = m.0.model.config.scale();
        let want = 3 * height * r * width * r;
        if out_len != want {
            return Err(invalid(format!("out_len is {out_len}, expected {want}")));
        }
        let cfg = SampleConfig { steps: (steps > 0).then_some(steps), stochastic: !deterministic, seed };
        let sr = m.0.upscale(&v, &cfg)?;
        std::slice::from_raw_parts_mut(out, want).copy_from_slice(sr.data());
        Ok(())
    })
}

/// Bicubic resize of a planar image to `out_height × out_width`.
///
/// # Safety
/// `src` readable for `channels·height·width` values and `dst` writable for
/// `channels·out_height·out_width` values.
#[no_mangle]
pub unsafe extern "C" fn mrd_bicubic_resize(
    src: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    dst: *mut f32,
    out_height: usize,
    out_width: usize,
) -> MrdStatus {
    guard(|| {
        let img = image(src, channels, height, width, "src")?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let out = bicubic_resize(&img, out_height, out_width)?;
        std::slice::from_raw_parts_mut(dst, out.numel()).copy_from_slice(out.data());
        Ok(())
    })
}

unsafe fn pair_metric(
    a: *const f32,
    b: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
    f: impl FnOnce(&Tensor<f32>, &Tensor<f32>) -> mrdiff::Result<f64>,
) -> MrdStatus {
    guard(|| {
        let x = image(a, channels, height, width, "a")?;
        let y = image(b, channels, height, width, "b")?;
        let out = out_ref(out, "out")?;
        *out = f(&x, &y)?;
        Ok(())
    })
}

/// PSNR in dB between two images of equal shape; 99 for identical inputs.
///
/// # Safety
/// `a` and `b` readable for `channels·height·width` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mrd_psnr(
    a: *const f32,
    b: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    peak: f64,
    out: *mut f64,
) -> MrdStatus {
    pair_metric(a, b, channels, height, width, out, |x, y| psnr(x, y, peak))
}

/// Mean SSIM on luminance. `channels` must be 1 or 3.
///
/// # Safety
/// As [`mrd_psnr`].
#[no_mangle]
pub unsafe extern "C" fn mrd_ssim(
    a: *const f32,
    b: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> MrdStatus {
    pair_metric(a, b, channels, height, width, out, ssim)
}

/// Average gradient: mean of `sqrt((dx² + dy²) / 2)` over luminance.
///
/// # Safety
/// `img` readable for `channels·height·width` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mrd_avg_gradient(
    img: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> MrdStatus {
    guard(|| {
        let x = image(img, channels, height, width, "img")?;
        let out = out_ref(out, "out")?;
        *out = avg_gradient(&x)?;
        Ok(())
    })
}
