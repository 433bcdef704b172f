//! C ABI over `povm_forge`.
//!
//! Objects cross the boundary as opaque handles created by `pf_*_new`-style
//! constructors and released with the matching `pf_*_free`. Every fallible
//! call returns a [`PfStatus`]; on failure a message is stored per thread and
//! can be fetched with [`pf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use povm_forge::detector::DetectorSpec;
use povm_forge::probe::{DEFAULT_REP_RATE, DEFAULT_WAVELENGTH};
use povm_forge::{
    build_problem, exact_dataset, mean_photon_to_power, reconstruct, sample_dataset, Error, PovmSet, ProbeSet,
    ReconstructedPovm, TomographyDataset,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    DimensionMismatch = 4,
    Refused = 5,
    Parse = 6,
    Io = 7,
    /// The reconstruction finished without meeting its stopping rule. The
    /// handle is still written.
    NotConverged = 8,
    Panic = 99,
}

/// Diagonal POVM set.
pub struct PfPovm {
    inner: PovmSet,
}

/// Probe ensemble with per-probe outcome frequencies.
pub struct PfDataset {
    inner: TomographyDataset,
}

/// Reconstructed POVM with solver metadata.
pub struct PfReconstruction {
    inner: ReconstructedPovm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PfStatus {
    match err {
        Error::Domain(_) => PfStatus::Domain,
        Error::DimensionMismatch { .. } => PfStatus::DimensionMismatch,
        Error::Refused(_) => PfStatus::Refused,
        Error::Parse(_) | Error::Csv(_) | Error::Json(_) => PfStatus::Parse,
        Error::Io(_) => PfStatus::Io,
    }
}

fn fail(status: PfStatus, msg: impl Into<String>) -> PfStatus {
    set_error(msg.into());
    status
}

/// Runs `body`, mapping library errors and panics to status codes.
fn guard(body: impl FnOnce() -> Result<PfStatus, (PfStatus, String)>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(PfStatus::Panic, "internal panic"),
    }
}

fn lib<T>(r: povm_forge::Result<T>) -> Result<T, (PfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PfStatus, String)> {
    // SAFETY: callers pass either null or a pointer obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| (PfStatus::NullPointer, format!("{what} is null")))
}

fn out_slice<'a>(out: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], (PfStatus, String)> {
    if out.is_null() {
        return Err((PfStatus::NullPointer, "output buffer is null".into()));
    }
    if len != needed {
        return Err((
            PfStatus::DimensionMismatch,
            format!("output buffer holds {len} values, {needed} needed"),
        ));
    }
    // SAFETY: the caller guarantees `out` points to `len` writable doubles.
    Ok(unsafe { std::slice::from_raw_parts_mut(out, len) })
}

fn in_slice<'a>(data: *const f64, len: usize) -> Result<&'a [f64], (PfStatus, String)> {
    if data.is_null() {
        return Err((PfStatus::NullPointer, "input array is null".into()));
    }
    // SAFETY: the caller guarantees `data` points to `len` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(data, len) })
}

/// Rejects a null output slot and clears a valid one, so callers see null on
/// every failure path.
fn clear_out<T>(out: *mut *mut T) -> Result<(), (PfStatus, String)> {
    if out.is_null() {
        return Err((PfStatus::NullPointer, "output handle is null".into()));
    }
    // SAFETY: `out` is non-null and points to writable storage for a pointer.
    unsafe { *out = ptr::null_mut() };
    Ok(())
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), (PfStatus, String)> {
    clear_out(out)?;
    // SAFETY: checked non-null above.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a detector POVM from a spec string such as `apd:0.5`,
/// `tmd:0.5,0.5/0.1` or `builtin:paper-tmd-8bin,0.48`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_povm_from_spec(spec: *const c_char, truncation: usize, out: *mut *mut PfPovm) -> PfStatus {
    guard(|| {
        clear_out(out)?;
        if spec.is_null() {
            return Err((PfStatus::NullPointer, "spec is null".into()));
        }
        // SAFETY: non-null and NUL-terminated per the contract above.
        let text = unsafe { CStr::from_ptr(spec) }
            .to_str()
            .map_err(|_| (PfStatus::InvalidUtf8, "spec is not UTF-8".to_string()))?;
        let parsed: DetectorSpec = lib(text.parse())?;
        let model = lib(parsed.build(truncation, None))?;
        store(out, PfPovm { inner: model.povm })?;
        Ok(PfStatus::Ok)
    })
}

/// # Safety
/// `povm` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_povm_free(povm: *mut PfPovm) {
    if !povm.is_null() {
        // SAFETY: allocated by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(povm) });
    }
}

/// Number of outcomes, or 0 for a null handle.
///
/// # Safety
/// `povm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_povm_outcomes(povm: *const PfPovm) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { povm.as_ref() }.map_or(0, |p| p.inner.outcomes())
}

/// Highest photon number `N`; diagonals have `N + 1` entries. 0 for null.
///
/// # Safety
/// `povm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_povm_truncation(povm: *const PfPovm) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { povm.as_ref() }.map_or(0, |p| p.inner.truncation())
}

/// Copies the diagonal of element `outcome` into `out[0..len]`, where `len`
/// must equal `truncation + 1`.
///
/// # Safety
/// `povm` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_povm_diag(povm: *const PfPovm, outcome: usize, out: *mut f64, len: usize) -> PfStatus {
    guard(|| {
        let povm = &non_null(povm, "povm")?.inner;
        let element = lib(povm.element(outcome))?;
        out_slice(out, len, element.diag.len())?.copy_from_slice(&element.diag);
        Ok(PfStatus::Ok)
    })
}

/// Simulates a dataset for `count` probes with mean photon numbers `means`
/// at the default laser parameters. `shots == 0` gives exact probabilities.
///
/// # Safety
/// `povm` must be a live handle, `means` must hold `count` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_simulate(
    povm: *const PfPovm,
    means: *const f64,
    count: usize,
    shots: u64,
    seed: u64,
    out: *mut *mut PfDataset,
) -> PfStatus {
    guard(|| {
        clear_out(out)?;
        let povm = &non_null(povm, "povm")?.inner;
        let probes = lib(ProbeSet::from_mean_photons(in_slice(means, count)?, DEFAULT_WAVELENGTH, DEFAULT_REP_RATE))?;
        let dataset = if shots == 0 {
            lib(exact_dataset(povm, &probes))?
        } else {
            lib(sample_dataset(povm, &probes, shots, seed))?
        };
        store(out, PfDataset { inner: dataset })?;
        Ok(PfStatus::Ok)
    })
}

/// # Safety
/// `dataset` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_free(dataset: *mut PfDataset) {
    if !dataset.is_null() {
        // SAFETY: allocated by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_probes(dataset: *const PfDataset) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { dataset.as_ref() }.map_or(0, |d| d.inner.probes.len())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_outcomes(dataset: *const PfDataset) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { dataset.as_ref() }.map_or(0, |d| d.inner.outcomes())
}

/// Copies the frequency table row-major (probe-major) into `out[0..len]`,
/// `len = probes × outcomes`.
///
/// # Safety
/// `dataset` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_frequencies(dataset: *const PfDataset, out: *mut f64, len: usize) -> PfStatus {
    guard(|| {
        let freqs = &non_null(dataset, "dataset")?.inner.frequencies;
        let buf = out_slice(out, len, freqs.len())?;
        for (k, row) in freqs.row_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                buf[k * freqs.ncols() + j] = v;
            }
        }
        Ok(PfStatus::Ok)
    })
}

/// Reconstructs a POVM with `dimension` photon-number entries per element.
/// On [`PfStatus::NotConverged`] the best iterate is still written to `out`.
///
/// # Safety
/// `dataset` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_reconstruct(
    dataset: *const PfDataset,
    dimension: usize,
    smoothing: f64,
    out: *mut *mut PfReconstruction,
) -> PfStatus {
    guard(|| {
        clear_out(out)?;
        let dataset = &non_null(dataset, "dataset")?.inner;
        let problem = lib(build_problem(dataset, dimension, smoothing))?;
        let rec = lib(reconstruct(&problem))?;
        let converged = rec.converged;
        store(out, PfReconstruction { inner: rec })?;
        if converged {
            Ok(PfStatus::Ok)
        } else {
            set_error("solver stopped before convergence".into());
            Ok(PfStatus::NotConverged)
        }
    })
}

/// # Safety
/// `rec` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_reconstruction_free(rec: *mut PfReconstruction) {
    if !rec.is_null() {
        // SAFETY: allocated by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(rec) });
    }
}

/// Copies the reconstructed POVM into a new handle owned by the caller.
///
/// # Safety
/// `rec` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_reconstruction_povm(rec: *const PfReconstruction, out: *mut *mut PfPovm) -> PfStatus {
    guard(|| {
        clear_out(out)?;
        let rec = &non_null(rec, "reconstruction")?.inner;
        store(out, PfPovm { inner: rec.povm.clone() })?;
        Ok(PfStatus::Ok)
    })
}

/// RMS residual of the fit, or NaN for a null handle.
///
/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_reconstruction_residual(rec: *const PfReconstruction) -> f64 {
    // SAFETY: null or live per the contract.
    unsafe { rec.as_ref() }.map_or(f64::NAN, |r| r.inner.residual)
}

/// # Safety
/// `rec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_reconstruction_iterations(rec: *const PfReconstruction) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { rec.as_ref() }.map_or(0, |r| r.inner.iterations)
}

/// Average optical power in watts for a probe of mean photon number
/// `mean_photon` per pulse.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_mean_photon_to_power(
    mean_photon: f64,
    wavelength_m: f64,
    rep_rate_hz: f64,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        let power = lib(mean_photon_to_power(mean_photon, wavelength_m, rep_rate_hz))?;
        if out.is_null() {
            return Err((PfStatus::NullPointer, "output is null".into()));
        }
        // SAFETY: non-null and writable per the contract.
        unsafe { *out = power };
        Ok(PfStatus::Ok)
    })
}
