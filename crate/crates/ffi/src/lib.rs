//! C ABI over the `strokesynth` engine.
//!
//! Volumes and stacks are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`SsStatus`]; on failure
//! [`ss_last_error`] returns a message owned by the calling thread, valid
//! until that thread's next call into this library. Panics never cross the
//! boundary; they surface as `SS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use strokesynth::cli::generate::sample_stream;
use strokesynth::morphology::BinaryMask;
use strokesynth::niftio::{read_nifti, reorient_ras, write_nifti, NiftiType};
use strokesynth::postproc::{entropy_map, pl_threshold, LogitStack};
use strokesynth::segmetrics::{compute_metrics, evaluate_case, Hd95Mode};
use strokesynth::synthgen::config::GenConfig;
use strokesynth::synthgen::{generate_sample_with, SampleOptions};
use strokesynth::{Error, Grid, PosteriorStack, Volume};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    GridMismatch = 5,
    Config = 6,
    Numeric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsDtype {
    Uint8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsHd95Mode {
    Pooled = 0,
    MaxOfSides = 1,
}

/// Per-case lesion metrics; `avd` in cm³, `hd95` in mm.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SsMetricReport {
    pub dice: f64,
    pub hd95: f64,
    pub avd: f64,
    pub ald: u64,
    pub lf1: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Opaque 3-D scalar volume.
pub struct SsVolume(Volume);

/// Opaque ordered list of channel volumes on one grid.
pub struct SsStack(Vec<Volume>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SsStatus::Io,
            Error::BadMagic(_)
            | Error::UnsupportedDatatype(_)
            | Error::Truncated { .. }
            | Error::BadHeader(_)
            | Error::Json(_)
            | Error::Csv(_) => SsStatus::Format,
            Error::GridMismatch(_) | Error::DisjointExtents => SsStatus::GridMismatch,
            Error::Config(_) | Error::Manifest { .. } => SsStatus::Config,
            Error::SingularTransform { .. } | Error::ZeroVariance { .. } | Error::DegenerateOrientation => {
                SsStatus::Numeric
            }
            _ => SsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SsStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(SsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsStatus::Ok
        }
        Ok(Err(Failure(s, m))) => {
            set_error(&m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {m}"));
            SsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn triple(p: *const f64, default: f64) -> [f64; 3] {
    if p.is_null() {
        [default; 3]
    } else {
        [*p, *p.add(1), *p.add(2)]
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread; empty after success.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a volume of shape `dims[0..3]` (x fastest). `data` may be null
/// for zeros, otherwise it must hold the product of `dims` values.
/// `spacing` and `origin` may be null (1 mm, zero).
///
/// # Safety
/// Non-null pointers must be valid for the documented number of elements.
#[no_mangle]
pub unsafe extern "C" fn ss_volume_new(
    dims: *const usize,
    data: *const f64,
    spacing: *const f64,
    origin: *const f64,
    out: *mut *mut SsVolume,
) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let shape = [*dims, *dims.add(1), *dims.add(2)];
        let grid = Grid::new(shape)
            .with_spacing(triple(spacing, 1.0))
            .with_origin(triple(origin, 0.0));
        grid.validate()?;
        let n = grid.len();
        let values = if data.is_null() {
            vec![0.0; n]
        } else {
            std::slice::from_raw_parts(data, n).to_vec()
        };
        *out = boxed(SsVolume(Volume::new(grid, values)?));
        Ok(())
    })
}

/// Releases a volume; null is ignored.
///
/// # Safety
/// `v` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_volume_free(v: *mut SsVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Writes the shape into `dims[0..3]`.
///
/// # Safety
/// `dims` must hold three elements.
#[no_mangle]
pub unsafe extern "C" fn ss_volume_shape(v: *const SsVolume, dims: *mut usize) -> SsStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        for (a, &n) in v.0.shape().iter().enumerate() {
            *dims.add(a) = n;
        }
        Ok(())
    })
}

/// Borrowed pointer to the voxel values (x fastest) and their count. The
/// pointer stays valid until the volume is freed.
///
/// # Safety
/// `v`, `data` and `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_volume_data(
    v: *const SsVolume,
    data: *mut *const f64,
    len: *mut usize,
) -> SsStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        *out_ptr(data, "data")? = v.0.data().as_ptr();
        *out_ptr(len, "len")? = v.0.len();
        Ok(())
    })
}

/// Mutable variant of [`ss_volume_data`].
///
/// # Safety
/// `v`, `data` and `len` must be valid; no other reference may alias `v`.
#[no_mangle]
pub unsafe extern "C" fn ss_volume_data_mut(
    v: *mut SsVolume,
    data: *mut *mut f64,
    len: *mut usize,
) -> SsStatus {
    guard(|| {
        let v = v.as_mut().ok_or_else(|| null("volume"))?;
        *out_ptr(len, "len")? = v.0.len();
        *out_ptr(data, "data")? = v.0.data_mut().as_mut_ptr();
        Ok(())
    })
}

/// Reads a `.nii` or `.nii.gz` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_nifti_read(path: *const c_char, out: *mut *mut SsVolume) -> SsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (v, _) = read_nifti(c_str(path, "path")?)?;
        *out = boxed(SsVolume(v));
        Ok(())
    })
}

/// Writes a volume; a `.gz` suffix selects gzip.
///
/// # Safety
/// `v` must be valid and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ss_nifti_write(v: *const SsVolume, path: *const c_char, dtype: SsDtype) -> SsStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        let t = match dtype {
            SsDtype::Uint8 => NiftiType::Uint8,
            SsDtype::Int16 => NiftiType::Int16,
            SsDtype::Int32 => NiftiType::Int32,
            SsDtype::Float32 => NiftiType::Float32,
            SsDtype::Float64 => NiftiType::Float64,
        };
        write_nifti(&v.0, c_str(path, "path")?, t)?;
        Ok(())
    })
}

/// New volume with voxel axes permuted and flipped towards RAS.
///
/// # Safety
/// `v` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_reorient_ras(v: *const SsVolume, out: *mut *mut SsVolume) -> SsStatus {
    guard(|| {
        let v = borrow(v, "volume")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(SsVolume(reorient_ras(&v.0)?));
        Ok(())
    })
}

fn mask(v: &Volume) -> BinaryMask {
    v.map(|x| x != 0.0)
}

/// Lesion metrics of `pred` against `gt` (non-zero voxels are lesion).
/// With `prepare` set, both masks are first resampled onto the shared
/// 1 mm evaluation grid; otherwise they must share a grid.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_metrics(
    pred: *const SsVolume,
    gt: *const SsVolume,
    mode: SsHd95Mode,
    prepare: bool,
    out: *mut SsMetricReport,
) -> SsStatus {
    guard(|| {
        let (p, g) = (mask(&borrow(pred, "pred")?.0), mask(&borrow(gt, "gt")?.0));
        let out = out_ptr(out, "out")?;
        let mode = match mode {
            SsHd95Mode::Pooled => Hd95Mode::Pooled,
            SsHd95Mode::MaxOfSides => Hd95Mode::MaxOfSides,
        };
        let r = if prepare {
            evaluate_case(&p, &g, "", "", mode)?
        } else {
            compute_metrics(&p, &g, "", "", mode)?
        };
        *out = SsMetricReport {
            dice: r.dice,
            hd95: r.hd95,
            avd: r.avd,
            ald: r.ald,
            lf1: r.lf1,
            tpr: r.tpr,
            fpr: r.fpr,
        };
        Ok(())
    })
}

/// Pseudo-label confidence threshold `1.5 / channels`; NaN for zero.
#[no_mangle]
pub extern "C" fn ss_pl_threshold(channels: usize) -> f64 {
    if channels == 0 {
        f64::NAN
    } else {
        pl_threshold(channels)
    }
}

/// Creates an empty stack.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stack_new(out: *mut *mut SsStack) -> SsStatus {
    guard(|| {
        *out_ptr(out, "out")? = boxed(SsStack(Vec::new()));
        Ok(())
    })
}

/// Releases a stack; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_stack_free(s: *mut SsStack) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Appends a copy of `v`; it must share the grid of existing channels.
///
/// # Safety
/// `s` and `v` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stack_push(s: *mut SsStack, v: *const SsVolume) -> SsStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| null("stack"))?;
        let v = borrow(v, "volume")?;
        if let Some(first) = s.0.first() {
            first.ensure_same_grid(&v.0, "stack channel")?;
        }
        s.0.push(v.0.clone());
        Ok(())
    })
}

/// Number of channels; 0 for null.
///
/// # Safety
/// `s` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stack_len(s: *const SsStack) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Copy of channel `index` as a new volume.
///
/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stack_channel(s: *const SsStack, index: usize, out: *mut *mut SsVolume) -> SsStatus {
    guard(|| {
        let s = borrow(s, "stack")?;
        let out = out_ptr(out, "out")?;
        let v = s
            .0
            .get(index)
            .ok_or_else(|| invalid(format!("channel {index} of {}", s.0.len())))?;
        *out = boxed(SsVolume(v.clone()));
        Ok(())
    })
}

/// Voxelwise Shannon entropy (nats) of a stack of class probabilities.
///
/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_entropy(s: *const SsStack, out: *mut *mut SsVolume) -> SsStatus {
    guard(|| {
        let s = borrow(s, "stack")?;
        let out = out_ptr(out, "out")?;
        let p = LogitStack::new(s.0.clone())?;
        *out = boxed(SsVolume(entropy_map(&p)));
        Ok(())
    })
}

/// Renders one synthetic image/label pair.
///
/// `healthy` holds one posterior volume per class, named by
/// `class_names[0..len]`; `lesion` is a mask (non-zero inside).
/// `config_toml` may be null for defaults. The draws are those of sample
/// `index` under master `seed`, matching the command-line generator.
///
/// # Safety
/// All non-null pointers must be valid; `class_names` must hold one
/// NUL-terminated string per stack channel.
#[no_mangle]
pub unsafe extern "C" fn ss_generate_sample(
    healthy: *const SsStack,
    class_names: *const *const c_char,
    lesion: *const SsVolume,
    config_toml: *const c_char,
    seed: u64,
    index: u64,
    out_image: *mut *mut SsVolume,
    out_label: *mut *mut SsVolume,
) -> SsStatus {
    guard(|| {
        let h = borrow(healthy, "healthy")?;
        let l = borrow(lesion, "lesion")?;
        let out_image = out_ptr(out_image, "out_image")?;
        let out_label = out_ptr(out_label, "out_label")?;
        if class_names.is_null() {
            return Err(null("class_names"));
        }
        let names = (0..h.0.len())
            .map(|i| c_str(*class_names.add(i), "class name").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = if config_toml.is_null() {
            GenConfig::default()
        } else {
            GenConfig::from_toml(c_str(config_toml, "config_toml")?)?
        };
        let stack = PosteriorStack::new(names, h.0.clone())?;
        let s = sample_stream(seed, index);
        let g = generate_sample_with(&stack, &mask(&l.0), &cfg, &s, SampleOptions { keep_soft: false })?;
        *out_image = boxed(SsVolume(g.image));
        *out_label = boxed(SsVolume(g.label.map(f64::from)));
        Ok(())
    })
}
