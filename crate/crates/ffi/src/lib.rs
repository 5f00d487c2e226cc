//! C interface to `tns`.
//!
//! Every fallible call returns a [`TnsStatus`]; on failure the message is
//! available from [`tns_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/results of calls and released by their
//! `*_free` function. Null handles are rejected, never dereferenced.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use tns::coarsegrain2d::{self, ObservableRequest};
use tns::coarsegrain3d;
use tns::lattice::{TnsConfig, Variant};
use tns::models::IsingSpec;
use tns::skeleton::BoundaryMode;
use tns::tensor::{self, DenseTensor};
use tns::TnsError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TnsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    ResourceLimit = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TnsVariant {
    Standard = 0,
    Modified = 1,
}

/// Coarse-graining settings.
pub struct TnsConfigHandle(TnsConfig);

/// A labelled dense tensor.
pub struct TnsTensorHandle(DenseTensor);

/// Outcome of a free-energy run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TnsFreeEnergy {
    pub log_z: f64,
    pub log_z_per_site: f64,
    pub free_energy_per_site: f64,
    pub seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &TnsError) -> TnsStatus {
    match e {
        TnsError::Argument(_) => TnsStatus::InvalidArgument,
        TnsError::Shape(_) => TnsStatus::ShapeMismatch,
        TnsError::Resource(_) => TnsStatus::ResourceLimit,
        TnsError::Numerical(_) => TnsStatus::Numerical,
        TnsError::Io(_) | TnsError::Json(_) => TnsStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Tns(TnsError),
}

impl From<TnsError> for Fail {
    fn from(e: TnsError) -> Self {
        Fail::Tns(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TnsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TnsStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            TnsStatus::NullPointer
        }
        Ok(Err(Fail::Tns(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            TnsStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn hmut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn cstr<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Tns(TnsError::Argument(format!("{what} is not UTF-8"))))
}

unsafe fn strings(p: *const *const c_char, n: usize, what: &'static str) -> Result<Vec<String>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    slice::from_raw_parts(p, n).iter().map(|&s| cstr(s, what).map(str::to_owned)).collect()
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    let slot = hmut(out, "out")?;
    *slot = Box::into_raw(Box::new(v));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// configuration

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tns_config_new(chi: usize, out: *mut *mut TnsConfigHandle) -> TnsStatus {
    guard(|| {
        let cfg = TnsConfig::with_chi(chi);
        cfg.validate()?;
        put(out, TnsConfigHandle(cfg))
    })
}

/// # Safety
/// `cfg` must be null or a live handle from [`tns_config_new`].
#[no_mangle]
pub unsafe extern "C" fn tns_config_free(cfg: *mut TnsConfigHandle) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// `variant` takes a [`TnsVariant`] value; anything else is rejected.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tns_config_set_variant(cfg: *mut TnsConfigHandle, variant: i32) -> TnsStatus {
    guard(|| {
        let cfg = hmut(cfg, "cfg")?;
        cfg.0.variant = match variant {
            v if v == TnsVariant::Standard as i32 => Variant::Standard,
            v if v == TnsVariant::Modified as i32 => Variant::Modified,
            v => return Err(TnsError::Argument(format!("unknown variant {v}")).into()),
        };
        Ok(())
    })
}

/// Boundary treatment: `rank == 0` is exact, otherwise a rank cut.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tns_config_set_boundary_rank(cfg: *mut TnsConfigHandle, rank: usize) -> TnsStatus {
    guard(|| {
        hmut(cfg, "cfg")?.0.boundary = Some(if rank == 0 { BoundaryMode::Exact } else { BoundaryMode::Rank(rank) });
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tns_config_set_seed(cfg: *mut TnsConfigHandle, seed: u64) -> TnsStatus {
    guard(|| {
        hmut(cfg, "cfg")?.0.als.rng_seed = seed;
        Ok(())
    })
}

// runs

fn uniform_spec(dim: usize, l: u32, beta: f64, field: f64) -> Result<IsingSpec, Fail> {
    let spec = IsingSpec::uniform(dim, l, beta).with_field(field);
    spec.validate()?;
    Ok(spec)
}

/// Free energy of the uniform ferromagnet on a `2^l` periodic lattice.
///
/// # Safety
/// `cfg` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tns_free_energy(
    cfg: *const TnsConfigHandle,
    dim: usize,
    l: u32,
    beta: f64,
    field: f64,
    out: *mut TnsFreeEnergy,
) -> TnsStatus {
    guard(|| {
        let cfg = &href(cfg, "cfg")?.0;
        let out = hmut(out, "out")?;
        let spec = uniform_spec(dim, l, beta, field)?;
        let r = match dim {
            2 => coarsegrain2d::run_free_energy(&spec, cfg)?,
            _ => coarsegrain3d::run_free_energy_3d(&spec, cfg)?,
        };
        *out = TnsFreeEnergy {
            log_z: r.log_z.log_abs(),
            log_z_per_site: r.log_z_per_site,
            free_energy_per_site: r.free_energy_per_site,
            seconds: r.seconds,
        };
        Ok(())
    })
}

/// Internal energy and magnetization per site at zero field, the latter
/// through a symmetry-breaking field `m_field > 0`. Either output may be null.
///
/// # Safety
/// `cfg` must be a live handle; non-null outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tns_observables(
    cfg: *const TnsConfigHandle,
    dim: usize,
    l: u32,
    beta: f64,
    m_field: f64,
    out_u: *mut f64,
    out_m: *mut f64,
) -> TnsStatus {
    guard(|| {
        let cfg = &href(cfg, "cfg")?.0;
        let spec = uniform_spec(dim, l, beta, 0.0)?;
        let req = ObservableRequest {
            internal_energy: !out_u.is_null(),
            magnetization_field: (!out_m.is_null()).then_some(m_field),
        };
        let r = match dim {
            2 => coarsegrain2d::run_observables(&spec, cfg, &req)?,
            _ => coarsegrain3d::run_observables_3d(&spec, cfg, &req)?,
        };
        if let (Some(u), Some(p)) = (r.internal_energy, out_u.as_mut()) {
            *p = u;
        }
        if let (Some(m), Some(p)) = (r.magnetization, out_m.as_mut()) {
            *p = m;
        }
        Ok(())
    })
}

/// ln Z per site of the infinite square lattice.
#[no_mangle]
pub extern "C" fn tns_onsager_log_z_per_site(beta: f64) -> f64 {
    tns::reference::onsager_log_z_per_site(beta)
}

// tensors

/// Copies `data` (row-major, last leg fastest) into a new tensor.
///
/// # Safety
/// `shape` and `legs` must hold `rank` entries, `data` the product of the
/// shape, and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tns_tensor_new(
    rank: usize,
    shape: *const usize,
    data: *const f64,
    legs: *const *const c_char,
    out: *mut *mut TnsTensorHandle,
) -> TnsStatus {
    guard(|| {
        if rank > 0 && shape.is_null() {
            return Err(Fail::Null("shape"));
        }
        let shape: Vec<usize> = if rank == 0 { Vec::new() } else { slice::from_raw_parts(shape, rank).to_vec() };
        let legs = strings(legs, rank, "legs")?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| TnsError::Argument("tensor size overflows".into()))?;
        if n > 0 && data.is_null() {
            return Err(Fail::Null("data"));
        }
        let data = if n == 0 { Vec::new() } else { slice::from_raw_parts(data, n).to_vec() };
        put(out, TnsTensorHandle(DenseTensor::new(shape, data, legs)?))
    })
}

/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn tns_tensor_free(t: *mut TnsTensorHandle) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of legs, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn tns_tensor_rank(t: *const TnsTensorHandle) -> usize {
    t.as_ref().map_or(0, |t| t.0.rank())
}

/// Number of entries, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn tns_tensor_len(t: *const TnsTensorHandle) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Writes the shape into `buf`, which must hold `cap >= rank` entries.
///
/// # Safety
/// `t` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn tns_tensor_shape(t: *const TnsTensorHandle, buf: *mut usize, cap: usize) -> TnsStatus {
    guard(|| {
        let t = &href(t, "tensor")?.0;
        copy_out(t.shape(), buf, cap)
    })
}

/// Writes the entries into `buf`, which must hold `cap >= len` values.
///
/// # Safety
/// `t` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn tns_tensor_data(t: *const TnsTensorHandle, buf: *mut f64, cap: usize) -> TnsStatus {
    guard(|| {
        let t = &href(t, "tensor")?.0;
        copy_out(t.data(), buf, cap)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(TnsError::Argument(format!("buffer holds {cap}, need {}", src.len())).into());
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Contracts leg `legs_a[i]` of `a` with `legs_b[i]` of `b` for each of the
/// `n_pairs` pairs. Free legs of `a` come first in the result.
///
/// # Safety
/// `a`, `b` must be live handles, the leg arrays hold `n_pairs` strings and
/// `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tns_contract(
    a: *const TnsTensorHandle,
    b: *const TnsTensorHandle,
    n_pairs: usize,
    legs_a: *const *const c_char,
    legs_b: *const *const c_char,
    out: *mut *mut TnsTensorHandle,
) -> TnsStatus {
    guard(|| {
        let (a, b) = (&href(a, "a")?.0, &href(b, "b")?.0);
        let la = strings(legs_a, n_pairs, "legs_a")?;
        let lb = strings(legs_b, n_pairs, "legs_b")?;
        let pairs: Vec<(&str, &str)> = la.iter().zip(&lb).map(|(x, y)| (x.as_str(), y.as_str())).collect();
        put(out, TnsTensorHandle(tensor::contract(a, b, &pairs)?))
    })
}
