//! C ABI over `sqfn-core`.
//!
//! Every function returns an [`SqfnStatus`]; on failure the message is kept in
//! a thread-local slot readable with [`sqfn_last_error`]. Handles are opaque and
//! must be released with the matching `*_free`. Output buffers are caller-owned
//! and their length is checked against the required size.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sqfn_core::lab::{emit_reports, fit_kernel_envelopes, run_theorem_a_suite, RunConfig};
use sqfn_core::semigroup::{heat_kernel, poisson_subordinated, spectral_decompose};
use sqfn_core::squarefn::SquareFunction;
use sqfn_core::{BanachSurrogate, Error, Grid, KernelMatrix, OperatorMatrix, PotentialKind, PotentialProfile, SpectralDecomposition, SquareFunctionConfig, VectorField};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Domain = 10,
    Argument = 11,
    Resource = 12,
    Numeric = 13,
    Consistency = 14,
    Config = 15,
    Fit = 16,
    NonFinite = 17,
    Io = 18,
    Serialization = 19,
    Panic = 99,
}

impl From<&Error> for SqfnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => Self::Domain,
            Error::Argument(_) => Self::Argument,
            Error::Resource(_) => Self::Resource,
            Error::Numeric(_) => Self::Numeric,
            Error::Consistency(_) => Self::Consistency,
            Error::Config(_) => Self::Config,
            Error::Fit(_) => Self::Fit,
            Error::NonFinite(_) => Self::NonFinite,
            Error::Io(_) => Self::Io,
            Error::Json(_) | Error::Csv(_) => Self::Serialization,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|b| *b != 0));
    });
}

struct Fail(SqfnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(SqfnStatus::from(&e), e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Fail>;

fn guard(body: impl FnOnce() -> FfiResult) -> SqfnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            SqfnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside sqfn");
            SqfnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SqfnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> FfiResult<&'a mut [f64]> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(SqfnStatus::BufferTooSmall, format!("{what} holds {len} values, {need} needed")));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, need) })
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn path<'a>(p: *const c_char, what: &str) -> FfiResult<&'a Path> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Fail(SqfnStatus::InvalidUtf8, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> FfiResult {
    if out.is_null() {
        return Err(null(what));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Opaque box grid.
pub struct SqfnGrid(Grid);

/// Opaque potential sampled on a grid, with its critical-radius table.
pub struct SqfnPotential {
    grid: Grid,
    profile: PotentialProfile,
}

/// Opaque spectral decomposition of `L = -Δ + V`.
pub struct SqfnOperator {
    dec: SpectralDecomposition,
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sqfn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(e.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        e.len()
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn sqfn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sqfn_grid_new(dim: usize, half_width: f64, points_per_axis: usize, out: *mut *mut SqfnGrid) -> SqfnStatus {
    guard(|| unsafe { put(out, SqfnGrid(Grid::new(dim, half_width, points_per_axis)?), "out") })
}

/// # Safety
/// `grid` must be null or a handle from [`sqfn_grid_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqfn_grid_free(grid: *mut SqfnGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Number of grid nodes, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqfn_grid_node_count(grid: *const SqfnGrid) -> usize {
    unsafe { grid.as_ref() }.map_or(0, |g| g.0.node_count())
}

/// Writes the `dim` coordinates of node `index`.
///
/// # Safety
/// `grid` must be live; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sqfn_grid_node(grid: *const SqfnGrid, index: usize, out: *mut f64, len: usize) -> SqfnStatus {
    guard(|| {
        let g = &unsafe { deref(grid, "grid") }?.0;
        if index >= g.node_count() {
            return Err(Fail(SqfnStatus::Domain, format!("node {index} of {}", g.node_count())));
        }
        let out = unsafe { out_slice(out, len, g.dim(), "out") }?;
        g.node_into(index, out);
        Ok(())
    })
}

/// `V = c |x|^beta` (`beta = 0` gives a constant) with reverse-Hölder
/// exponent `s`. Computes the critical-radius table.
///
/// # Safety
/// `grid` must be live; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sqfn_potential_power(grid: *const SqfnGrid, c: f64, beta: f64, s: f64, out: *mut *mut SqfnPotential) -> SqfnStatus {
    guard(|| {
        let g = unsafe { deref(grid, "grid") }?.0.clone();
        let kind = if beta == 0.0 { PotentialKind::Constant(c) } else { PotentialKind::Power { c, beta } };
        let profile = PotentialProfile::new(&g, kind, s)?.with_rho(&g)?;
        unsafe { put(out, SqfnPotential { grid: g, profile }, "out") }
    })
}

/// Potential from one nonnegative value per grid node.
///
/// # Safety
/// `grid` must be live; `values` valid for `len` doubles; `out` for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sqfn_potential_table(
    grid: *const SqfnGrid,
    values: *const f64,
    len: usize,
    s: f64,
    out: *mut *mut SqfnPotential,
) -> SqfnStatus {
    guard(|| {
        let g = unsafe { deref(grid, "grid") }?.0.clone();
        let v = unsafe { in_slice(values, len, "values") }?;
        if len != g.node_count() {
            return Err(Fail(SqfnStatus::Argument, format!("{len} values for {} nodes", g.node_count())));
        }
        let profile = PotentialProfile::new(&g, PotentialKind::Table(v.to_vec()), s)?.with_rho(&g)?;
        unsafe { put(out, SqfnPotential { grid: g, profile }, "out") }
    })
}

/// # Safety
/// `potential` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqfn_potential_free(potential: *mut SqfnPotential) {
    if !potential.is_null() {
        drop(unsafe { Box::from_raw(potential) });
    }
}

/// Critical radius at every node.
///
/// # Safety
/// `potential` must be live; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sqfn_potential_rho(potential: *const SqfnPotential, out: *mut f64, len: usize) -> SqfnStatus {
    guard(|| {
        let p = unsafe { deref(potential, "potential") }?;
        let rho = p.profile.rho_table()?;
        unsafe { out_slice(out, len, rho.len(), "out") }?.copy_from_slice(rho);
        Ok(())
    })
}

/// Assembles and diagonalizes the discrete operator; fails with
/// `SQFN_STATUS_RESOURCE` above `node_cap` nodes.
///
/// # Safety
/// `potential` must be live; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn sqfn_operator_new(potential: *const SqfnPotential, node_cap: usize, out: *mut *mut SqfnOperator) -> SqfnStatus {
    guard(|| {
        let p = unsafe { deref(potential, "potential") }?;
        let op = OperatorMatrix::assemble(&p.grid, p.profile.values(), node_cap)?;
        unsafe { put(out, SqfnOperator { dec: spectral_decompose(&op)? }, "out") }
    })
}

/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqfn_operator_free(op: *mut SqfnOperator) {
    if !op.is_null() {
        drop(unsafe { Box::from_raw(op) });
    }
}

/// Ascending eigenvalues.
///
/// # Safety
/// `op` must be live; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sqfn_operator_eigenvalues(op: *const SqfnOperator, out: *mut f64, len: usize) -> SqfnStatus {
    guard(|| {
        let lam = unsafe { deref(op, "op") }?.dec.eigenvalues();
        unsafe { out_slice(out, len, lam.len(), "out") }?.copy_from_slice(lam);
        Ok(())
    })
}

fn write_kernel(k: &KernelMatrix, out: &mut [f64]) {
    let n = k.size();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = k.get(i, j);
        }
    }
}

/// Heat kernel `e^{-tL}(x, y)` as a row-major N×N matrix.
///
/// # Safety
/// `op` must be live; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sqfn_heat_kernel(op: *const SqfnOperator, t: f64, out: *mut f64, len: usize) -> SqfnStatus {
    guard(|| {
        let dec = &unsafe { deref(op, "op") }?.dec;
        let n = dec.len();
        let out = unsafe { out_slice(out, len, n * n, "out") }?;
        write_kernel(&heat_kernel(dec, t)?, out);
        Ok(())
    })
}

/// Poisson kernel `e^{-t√L}(x, y)` by subordination with `n_quad` nodes.
///
/// # Safety
/// `op` must be live; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sqfn_poisson_kernel(op: *const SqfnOperator, t: f64, n_quad: usize, out: *mut f64, len: usize) -> SqfnStatus {
    guard(|| {
        let dec = &unsafe { deref(op, "op") }?.dec;
        let n = dec.len();
        let out = unsafe { out_slice(out, len, n * n, "out") }?;
        write_kernel(&poisson_subordinated(dec, t, n_quad)?, out);
        Ok(())
    })
}

/// Square function `g^{L,q}` of an `n`-component field in `l^r_n`
/// (`r = INFINITY` allowed). `field` is node-major, length `N * n`;
/// `out` receives one value per node.
///
/// # Safety
/// `op` must be live; `field` valid for `field_len` doubles, `out` for `len`.
#[no_mangle]
pub unsafe extern "C" fn sqfn_g_function(
    op: *const SqfnOperator,
    q: f64,
    r: f64,
    n: usize,
    field: *const f64,
    field_len: usize,
    out: *mut f64,
    len: usize,
) -> SqfnStatus {
    guard(|| {
        let dec = &unsafe { deref(op, "op") }?.dec;
        let x = BanachSurrogate::new(r, n)?;
        let f = VectorField::new(n, unsafe { in_slice(field, field_len, "field") }?.to_vec())?;
        let out = unsafe { out_slice(out, len, dec.len(), "out") }?;
        let g = SquareFunction::new(&SquareFunctionConfig::new(q), dec)?.g(&f, &x)?;
        out.copy_from_slice(&g);
        Ok(())
    })
}

/// Runs the boundedness suite and envelope fits of a JSON run config and
/// writes `report.json`, `tables/` and `log.txt` into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sqfn_run(config_path: *const c_char, out_dir: *const c_char) -> SqfnStatus {
    guard(|| {
        let cfg = RunConfig::from_path(unsafe { path(config_path, "config_path") }?)?;
        let out = unsafe { path(out_dir, "out_dir") }?;
        let mut bundle = run_theorem_a_suite(&cfg)?.to_bundle(&cfg)?;
        bundle.merge(fit_kernel_envelopes(&cfg)?.to_bundle()?);
        emit_reports(&bundle, out)?;
        Ok(())
    })
}
