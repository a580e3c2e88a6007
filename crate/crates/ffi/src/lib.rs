//! C ABI over `polybesov`.
//!
//! Every function returns a [`PbStatus`]; results go through out-pointers.
//! Objects are opaque handles created by `pb_surface_load`, `pb_field_*` and
//! `pb_bem_assemble`, and released with the matching `pb_*_free`. After a status
//! other than `PB_STATUS_OK`, `pb_last_error_message` describes the failure on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use polybesov::approx::{predicted_rate, NTermPlan};
use polybesov::bem::{assemble, solve_rhs, DoubleLayerSystem, QuadConfig, SolveOptions};
use polybesov::cli::{load_surface, parse_basis, parse_function};
use polybesov::error::{ApproxError, BemError, Error, SpacesError, SurfaceError, WaveletError};
use polybesov::spaces::{besov_norm, BesovSpec};
use polybesov::surface::PolyhedralSurface;
use polybesov::wavelet::{analyze, AnalyzeOptions, CoefficientField};

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotAdmissible = 3,
    Divergent = 4,
    Io = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

/// Polyhedral surface.
pub struct PbSurface(PolyhedralSurface);

/// Wavelet coefficients of one function.
pub struct PbField(CoefficientField);

/// Assembled double layer system.
pub struct PbBemSystem(DoubleLayerSystem);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PbStatus {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Wavelet(WaveletError::Io(_)) => PbStatus::Io,
        Error::Surface(SurfaceError::Parse(_)) => PbStatus::Io,
        Error::Spaces(SpacesError::NotAdmissible { .. }) => PbStatus::NotAdmissible,
        Error::Approx(ApproxError::Spaces(SpacesError::NotAdmissible { .. })) => PbStatus::NotAdmissible,
        Error::Spaces(SpacesError::Divergent { .. }) => PbStatus::Divergent,
        Error::Bem(BemError::Singular | BemError::NoConvergence(_)) => PbStatus::Numerical,
        _ => PbStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (PbStatus, String)>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PbStatus::Panic
        }
    }
}

fn lib<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, (PbStatus, String)> {
    r.map_err(|e| {
        let e = e.into();
        (status_of(&e), e.to_string())
    })
}

fn null(what: &str) -> (PbStatus, String) {
    (PbStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (PbStatus, String) {
    (PbStatus::InvalidArgument, msg)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PbStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (PbStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Report schema version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_schema_version() -> *const c_char {
    c"1.0.0".as_ptr()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated).
/// `needed` receives the buffer size required, including the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn pb_last_error_message(buf: *mut c_char, len: usize, needed: *mut usize) -> PbStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let bytes = msg.as_bytes_with_nul();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len();
    }
    if buf.is_null() || len < bytes.len() {
        return PbStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    PbStatus::Ok
}

/// Loads a surface: `cube`, `fichera` or a path to a JSON description.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out_surface` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_surface_load(name: *const c_char, out_surface: *mut *mut PbSurface) -> PbStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let slot = out(out_surface, "out_surface")?;
        let s = lib(load_surface(name))?;
        *slot = Box::into_raw(Box::new(PbSurface(s)));
        Ok(())
    })
}

/// # Safety
/// `surface` must come from `pb_surface_load` and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pb_surface_free(surface: *mut PbSurface) {
    if !surface.is_null() {
        drop(Box::from_raw(surface));
    }
}

/// # Safety
/// Handles and out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_surface_num_patches(surface: *const PbSurface, out_count: *mut usize) -> PbStatus {
    guard(|| {
        let s = obj(surface, "surface")?;
        *out(out_count, "out_count")? = s.0.num_patches();
        Ok(())
    })
}

/// Analyzes a built-in model function (`vertex:N,BETA`, `edge:N,BETA`, `exp:VX,VY,VZ`,
/// `const:C`, `edgedist:N1,N2,BETA,INNER,OUTER`) up to level `level`.
/// `basis` is `haar` or `linear`.
///
/// # Safety
/// Strings must be NUL-terminated; handles and out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn pb_field_analyze_model(
    surface: *const PbSurface,
    model: *const c_char,
    basis: *const c_char,
    level: u32,
    out_field: *mut *mut PbField,
) -> PbStatus {
    guard(|| {
        let s = &obj(surface, "surface")?.0;
        let f = lib(parse_function(s, str_arg(model, "model")?))?;
        let b = lib(parse_basis(str_arg(basis, "basis")?))?;
        let slot = out(out_field, "out_field")?;
        let field = lib(analyze(s, |p| f.value(p), &b, level, &AnalyzeOptions::default()))?;
        *slot = Box::into_raw(Box::new(PbField(field)));
        Ok(())
    })
}

/// Reads a coefficient dump written by `pb_field_save` or the CLI.
///
/// # Safety
/// `path` must be NUL-terminated; `out_field` valid.
#[no_mangle]
pub unsafe extern "C" fn pb_field_load(path: *const c_char, out_field: *mut *mut PbField) -> PbStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let slot = out(out_field, "out_field")?;
        let f = lib(CoefficientField::load(Path::new(p)))?;
        *slot = Box::into_raw(Box::new(PbField(f)));
        Ok(())
    })
}

/// # Safety
/// `field` must be a valid handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pb_field_save(field: *const PbField, path: *const c_char) -> PbStatus {
    guard(|| {
        let f = obj(field, "field")?;
        lib(f.0.save(Path::new(str_arg(path, "path")?)))
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pb_field_free(field: *mut PbField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of wavelet coefficients (generators excluded).
///
/// # Safety
/// Handle and out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_field_num_wavelets(field: *const PbField, out_count: *mut usize) -> PbStatus {
    guard(|| {
        let f = obj(field, "field")?;
        *out(out_count, "out_count")? = f.0.num_wavelets();
        Ok(())
    })
}

/// Besov-type norm with parameters `(alpha, p, q)`; pass `INFINITY` for infinite indices.
///
/// # Safety
/// Handles and out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_besov_norm(
    surface: *const PbSurface,
    field: *const PbField,
    alpha: f64,
    p: f64,
    q: f64,
    out_value: *mut f64,
) -> PbStatus {
    guard(|| {
        let s = obj(surface, "surface")?;
        let f = obj(field, "field")?;
        let slot = out(out_value, "out_value")?;
        *slot = lib(besov_norm(&s.0, &f.0, &BesovSpec::new(alpha, p, q)))?.value;
        Ok(())
    })
}

/// Best `n`-term errors in the `(alpha, p, p)` sequence norm for each entry of `ns`.
///
/// # Safety
/// `ns` and `out_errors` must point to `count` elements each.
#[no_mangle]
pub unsafe extern "C" fn pb_nterm_errors(
    field: *const PbField,
    alpha: f64,
    p: f64,
    ns: *const usize,
    count: usize,
    out_errors: *mut f64,
) -> PbStatus {
    guard(|| {
        let f = obj(field, "field")?;
        if count > 0 && (ns.is_null() || out_errors.is_null()) {
            return Err(null("ns or out_errors"));
        }
        let plan = lib(NTermPlan::new(&f.0, &BesovSpec::new(alpha, p, p)))?;
        for i in 0..count {
            *out_errors.add(i) = plan.error(*ns.add(i));
        }
        Ok(())
    })
}

/// Predicted best n-term exponent for a source `(a0, p0, q0)` and a target `(a1, p1, p1)`.
///
/// # Safety
/// `out_rate` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_predicted_rate(
    a0: f64,
    p0: f64,
    q0: f64,
    a1: f64,
    p1: f64,
    out_rate: *mut f64,
) -> PbStatus {
    guard(|| {
        let slot = out(out_rate, "out_rate")?;
        *slot = lib(predicted_rate(&BesovSpec::new(a0, p0, q0), &BesovSpec::new(a1, p1, p1)))?;
        Ok(())
    })
}

/// Assembles the double layer Galerkin matrix with `4^level` cells per patch.
///
/// # Safety
/// Handle and out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_bem_assemble(
    surface: *const PbSurface,
    level: u32,
    out_system: *mut *mut PbBemSystem,
) -> PbStatus {
    guard(|| {
        let s = obj(surface, "surface")?;
        let slot = out(out_system, "out_system")?;
        let sys = lib(assemble(&s.0, level, &QuadConfig::default()))?;
        *slot = Box::into_raw(Box::new(PbBemSystem(sys)));
        Ok(())
    })
}

/// # Safety
/// `system` must come from `pb_bem_assemble`; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pb_bem_free(system: *mut PbBemSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Number of cells (unknowns).
///
/// # Safety
/// Handle and out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn pb_bem_len(system: *const PbBemSystem, out_len: *mut usize) -> PbStatus {
    guard(|| {
        let s = obj(system, "system")?;
        *out(out_len, "out_len")? = s.0.len();
        Ok(())
    })
}

/// Solves with right-hand side given by one value of `g` per cell (cell order as in the
/// density CSV). Writes the density and the relative residual.
///
/// # Safety
/// `cell_values` and `out_density` must point to `len` elements; `out_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn pb_bem_solve(
    system: *const PbBemSystem,
    cell_values: *const f64,
    len: usize,
    out_density: *mut f64,
    out_residual: *mut f64,
) -> PbStatus {
    guard(|| {
        let sys = &obj(system, "system")?.0;
        if cell_values.is_null() || out_density.is_null() {
            return Err(null("cell_values or out_density"));
        }
        if len != sys.len() {
            return Err(invalid(format!("expected {} cell values, got {len}", sys.len())));
        }
        let g = std::slice::from_raw_parts(cell_values, len);
        let b: Vec<f64> = g.iter().zip(&sys.cells).map(|(v, c)| v * c.area).collect();
        let sol = lib(solve_rhs(sys, &b, &SolveOptions::default()))?;
        std::ptr::copy_nonoverlapping(sol.density.as_ptr(), out_density, len);
        if let Some(r) = out_residual.as_mut() {
            *r = sol.residual;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn version_string() {
        let v = unsafe { CStr::from_ptr(pb_schema_version()) };
        assert_eq!(v.to_str().unwrap(), polybesov::report::report_schema_version());
    }

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            assert_eq!(pb_surface_load(ptr::null(), ptr::null_mut()), PbStatus::NullPointer);
            let mut n = 0;
            assert_eq!(pb_surface_num_patches(ptr::null(), &mut n), PbStatus::NullPointer);
            pb_surface_free(ptr::null_mut());
        }
    }

    #[test]
    fn status_mapping() {
        let e: Error = SpacesError::NotAdmissible { alpha: 0.0, p: 1.0, q: 1.0 }.into();
        assert_eq!(status_of(&e), PbStatus::NotAdmissible);
        let e: Error = BemError::Singular.into();
        assert_eq!(status_of(&e), PbStatus::Numerical);
    }
}
