//! C ABI over the phasestream library.
//!
//! Objects cross the boundary as opaque handles created by `ps_*_new`/`ps_*_load`
//! functions and released with the matching `ps_*_free`. Every fallible call returns a
//! [`PsStatus`]; the message of the last failure on the calling thread is available
//! through [`ps_last_error_message`]. Tensors are 32-bit float, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use phasestream::gabor::{make_bank, ComplexFilterBank};
use phasestream::motion::{
    load_frames, phase_image, temporal_derivative, temporal_phase_derivative, DerivativeKind, MotionInput, VideoClip,
};
use phasestream::net::Model;
use phasestream::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    RejectedInput = 2,
    Config = 3,
    Ingestion = 4,
    Oracle = 5,
    Training = 6,
    Format = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsDerivative {
    Gray = 0,
    Rgb = 1,
}

pub struct PsTensor(Tensor<f32>);
pub struct PsBank(ComplexFilterBank);
pub struct PsClip(VideoClip<f32>);
pub struct PsModel(Model<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_last_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

struct Failure(PsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::RejectedInput(_) => PsStatus::RejectedInput,
            Error::Config(_) => PsStatus::Config,
            Error::Ingestion { .. } | Error::Image(_) => PsStatus::Ingestion,
            Error::Oracle { .. } => PsStatus::Oracle,
            Error::Training { .. } => PsStatus::Training,
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => PsStatus::Format,
            Error::Io(_) => PsStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside phasestream");
            PsStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PsStatus::RejectedInput, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn stack_maps(maps: &[MotionInput<f32>]) -> Result<Tensor<f32>, Failure> {
    let data: Vec<Tensor<f32>> = maps.iter().map(|m| m.data.clone()).collect();
    Ok(Tensor::stack(&data)?)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated
/// to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Creates a tensor of the given shape from `len` floats.
///
/// # Safety
/// `shape` must point to `ndim` values and `data` to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_new(
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guard(|| {
        if shape.is_null() || (data.is_null() && len > 0) {
            return Err(null("shape or data"));
        }
        let shape = std::slice::from_raw_parts(shape, ndim).to_vec();
        let values = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(data, len).to_vec() };
        emit(out, PsTensor(Tensor::from_vec(&shape, values)?))
    })
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_ndim(t: *const PsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.shape().len())
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_len(t: *const PsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.data().len())
}

/// Writes the shape into `out`, which must hold `ndim` values.
///
/// # Safety
/// `t` must be a live tensor handle and `out` point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_shape(t: *const PsTensor, out: *mut usize, cap: usize) -> PsStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        let s = t.0.shape();
        if out.is_null() || cap < s.len() {
            return Err(Failure(PsStatus::RejectedInput, format!("shape needs {} slots", s.len())));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), out, s.len());
        Ok(())
    })
}

/// Copies the tensor's values into `out`, which must hold `ps_tensor_len` floats.
///
/// # Safety
/// `t` must be a live tensor handle and `out` point to `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_copy_data(t: *const PsTensor, out: *mut f32, cap: usize) -> PsStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        let d = t.0.data();
        if out.is_null() || cap < d.len() {
            return Err(Failure(PsStatus::RejectedInput, format!("data needs {} slots", d.len())));
        }
        ptr::copy_nonoverlapping(d.as_ptr(), out, d.len());
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_free(t: *mut PsTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Builds a named Gabor bank preset: `quadrature24`, `perpendicular24`,
/// `quadrature96` or `perpendicular96`.
///
/// # Safety
/// `name` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_preset(name: *const c_char, out: *mut *mut PsBank) -> PsStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_string_lossy();
        let spec = phasestream::experiments::bank_preset(&name)?;
        emit(out, PsBank(make_bank(&spec)?))
    })
}

/// # Safety
/// `b` must be a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_len(b: *const PsBank) -> usize {
    b.as_ref().map_or(0, |b| b.0.len())
}

/// # Safety
/// `b` must be a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_kernel_size(b: *const PsBank) -> usize {
    b.as_ref().map_or(0, |b| b.0.kernel_size())
}

/// Real and imaginary parts of kernel `index` as two `[k, k]` tensors.
///
/// # Safety
/// `b` must be a live bank handle; `real` and `imag` writable handle slots.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_kernel(
    b: *const PsBank,
    index: usize,
    real: *mut *mut PsTensor,
    imag: *mut *mut PsTensor,
) -> PsStatus {
    guard(|| {
        let b = as_ref(b, "bank")?;
        let k = b
            .0
            .kernels
            .get(index)
            .ok_or_else(|| Failure(PsStatus::RejectedInput, format!("kernel {index} out of range")))?;
        emit(real, PsTensor(k.real.cast()))?;
        emit(imag, PsTensor(k.imag.cast()))
    })
}

/// # Safety
/// `b` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_free(b: *mut PsBank) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Loads a clip from a directory of PGM/PPM/PNG frames.
///
/// # Safety
/// `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_load(dir: *const c_char, out: *mut *mut PsClip) -> PsStatus {
    guard(|| emit(out, PsClip(load_frames(path_arg(dir)?)?)))
}

/// Builds a clip from a `[T, C, H, W]` tensor.
///
/// # Safety
/// `frames` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_from_tensor(frames: *const PsTensor, out: *mut *mut PsClip) -> PsStatus {
    guard(|| {
        let t = &as_ref(frames, "frames")?.0;
        if t.shape().len() != 4 {
            return Err(Failure(PsStatus::RejectedInput, "frames must be [T, C, H, W]".into()));
        }
        let per = t.shape()[1..].iter().product::<usize>();
        let list = t
            .data()
            .chunks(per.max(1))
            .map(|c| Tensor::from_vec(&t.shape()[1..], c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        emit(out, PsClip(VideoClip::new(list, None)?))
    })
}

/// # Safety
/// `c` must be a live clip handle.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_len(c: *const PsClip) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_free(c: *mut PsClip) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Forward temporal differences of a clip as `[T-1, C', H, W]`.
///
/// # Safety
/// `c` must be a live clip handle.
#[no_mangle]
pub unsafe extern "C" fn ps_temporal_derivative(
    c: *const PsClip,
    kind: PsDerivative,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guard(|| {
        let c = as_ref(c, "clip")?;
        let kind = match kind {
            PsDerivative::Gray => DerivativeKind::Gray,
            PsDerivative::Rgb => DerivativeKind::Rgb,
        };
        emit(out, PsTensor(stack_maps(&temporal_derivative(&c.0, kind)?)?))
    })
}

/// Wrapped phase differences under a quadrature bank as `[T-1, F, H, W]`.
///
/// # Safety
/// `c` and `b` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn ps_temporal_phase_derivative(
    c: *const PsClip,
    b: *const PsBank,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guard(|| {
        let c = as_ref(c, "clip")?;
        let b = as_ref(b, "bank")?;
        emit(out, PsTensor(stack_maps(&temporal_phase_derivative(&c.0, &b.0, false)?)?))
    })
}

/// Phase of one `[C, H, W]` frame under every kernel of a bank, as `[F, H, W]`.
///
/// # Safety
/// `frame` and `b` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn ps_phase_image(
    frame: *const PsTensor,
    b: *const PsBank,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guard(|| {
        let f = as_ref(frame, "frame")?;
        let b = as_ref(b, "bank")?;
        emit(out, PsTensor(phase_image(&f.0, &b.0)?))
    })
}

/// Loads a model checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ps_model_load(path: *const c_char, out: *mut *mut PsModel) -> PsStatus {
    guard(|| emit(out, PsModel(Model::load(path_arg(path)?)?)))
}

/// # Safety
/// `m` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_num_classes(m: *const PsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.config.n_classes)
}

/// Inference-mode logits `[N, classes]` for an `[N, C, H, W]` input.
///
/// # Safety
/// `m` and `input` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn ps_model_predict(
    m: *mut PsModel,
    input: *const PsTensor,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guard(|| {
        let m = as_mut(m, "model")?;
        let x = as_ref(input, "input")?;
        emit(out, PsTensor(m.0.predict(&x.0)?))
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(m: *mut PsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
