//! C ABI over `lfpp-core`.
//!
//! Objects are opaque handles returned through out-pointers and released
//! with the matching `lfpp_*_free`. Every fallible
//! call returns an `LfppStatus`; on failure the message is available from
//! `lfpp_last_error` on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lfpp_core::conformal::Region;
use lfpp_core::experiments::{self, ExperimentConfig};
use lfpp_core::gff::{add_scalar, heat_mollify, localized_mollify, sample_gff};
use lfpp_core::grid::{GridField, GridSpec};
use lfpp_core::lfpp::{build_graph, build_graph_valid, MetricGraph};
use lfpp_core::scaling::ScalingTable;
use lfpp_core::Error;
use num_complex::Complex64;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfppStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Precondition = 3,
    Io = 4,
    Format = 5,
    Computation = 6,
    Panic = 7,
}

/// Mollifier selection for `lfpp_field_mollify`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfppKernel {
    Heat = 0,
    Localized = 1,
}

/// Opaque lattice field.
pub struct LfppField(GridField);

/// Opaque LFPP graph.
pub struct LfppGraph(MetricGraph);

/// Opaque scaling table.
pub struct LfppTable(ScalingTable);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LfppStatus {
    match e {
        Error::Precondition(_) | Error::Domain(_) | Error::TableRange(_) => LfppStatus::Precondition,
        Error::InvalidGrid(_) | Error::SpecMismatch | Error::EmptyRegion(_) | Error::Config { .. } | Error::MissingKey(_) => {
            LfppStatus::InvalidArgument
        }
        Error::Io(_) => LfppStatus::Io,
        Error::Format(_) | Error::Csv(_) | Error::Json(_) => LfppStatus::Format,
        Error::InvalidNodes(_) | Error::Inversion(_) => LfppStatus::Computation,
    }
}

struct Fail(LfppStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LfppStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfppStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            LfppStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LfppStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(LfppStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = v;
    Ok(())
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lfpp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lfpp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sample a whole-plane GFF approximation on an `nx` by `ny` lattice.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_sample(
    nx: usize,
    ny: usize,
    spacing: f64,
    origin_x: f64,
    origin_y: f64,
    torus_factor: f64,
    seed: u64,
    out: *mut *mut LfppField,
) -> LfppStatus {
    guard(|| {
        let spec = GridSpec::new(nx, ny, spacing, Complex64::new(origin_x, origin_y))?;
        put(out, LfppField(sample_gff(&spec, torus_factor, seed)?))
    })
}

/// Constant field.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_constant(
    nx: usize,
    ny: usize,
    spacing: f64,
    origin_x: f64,
    origin_y: f64,
    value: f64,
    out: *mut *mut LfppField,
) -> LfppStatus {
    guard(|| {
        let spec = GridSpec::new(nx, ny, spacing, Complex64::new(origin_x, origin_y))?;
        put(out, LfppField(GridField::constant(spec, value)))
    })
}

/// Field from row-major `values` of length `nx * ny`.
///
/// # Safety
/// `values` must point to `nx * ny` readable doubles and `out` to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_from_values(
    nx: usize,
    ny: usize,
    spacing: f64,
    origin_x: f64,
    origin_y: f64,
    values: *const f64,
    out: *mut *mut LfppField,
) -> LfppStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let spec = GridSpec::new(nx, ny, spacing, Complex64::new(origin_x, origin_y))?;
        let v = std::slice::from_raw_parts(values, spec.len()).to_vec();
        put(out, LfppField(GridField::new(spec, v, lfpp_core::grid::FieldKind::Deterministic)?))
    })
}

/// Load an LFP1 snapshot.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_load(path: *const c_char, out: *mut *mut LfppField) -> LfppStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, LfppField(GridField::load(&p)?))
    })
}

/// Write an LFP1 snapshot.
///
/// # Safety
/// `field` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_save(field: *const LfppField, path: *const c_char) -> LfppStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let p = path_arg(path, "path")?;
        Ok(f.0.save(&p)?)
    })
}

/// Lattice dimensions.
///
/// # Safety
/// `field` must be a live handle; `nx` and `ny` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_dims(field: *const LfppField, nx: *mut usize, ny: *mut usize) -> LfppStatus {
    guard(|| {
        let f = deref(field, "field")?;
        put_value(nx, f.0.spec.nx)?;
        put_value(ny, f.0.spec.ny)
    })
}

/// Copy the row-major values into `buf`; invalid nodes are written as NaN.
///
/// # Safety
/// `field` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_values(field: *const LfppField, buf: *mut f64, len: usize) -> LfppStatus {
    guard(|| {
        let f = deref(field, "field")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != f.0.values.len() {
            return Err(Fail(LfppStatus::InvalidArgument, format!("buffer holds {len} values, field has {}", f.0.values.len())));
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for ((d, v), ok) in dst.iter_mut().zip(&f.0.values).zip(&f.0.valid) {
            *d = if *ok { *v } else { f64::NAN };
        }
        Ok(())
    })
}

/// Mollify `field` at scale `eps` into a new handle.
///
/// # Safety
/// `field` must be a live handle and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_mollify(
    field: *const LfppField,
    eps: f64,
    kernel: LfppKernel,
    out: *mut *mut LfppField,
) -> LfppStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let m = match kernel {
            LfppKernel::Heat => heat_mollify(&f.0, eps)?,
            LfppKernel::Localized => localized_mollify(&f.0, eps)?,
        };
        put(out, LfppField(m))
    })
}

/// `field + c` as a new handle.
///
/// # Safety
/// `field` must be a live handle and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_add_scalar(field: *const LfppField, c: f64, out: *mut *mut LfppField) -> LfppStatus {
    guard(|| {
        let f = deref(field, "field")?;
        put(out, LfppField(add_scalar(&f.0, c)))
    })
}

/// # Safety
/// `field` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lfpp_field_free(field: *mut LfppField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// LFPP graph of an already mollified field. A positive `radius` restricts
/// the graph to the open disk about `(center_x, center_y)`; otherwise every
/// margin-safe node is used.
///
/// # Safety
/// `field` must be a live handle and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_graph_build(
    field: *const LfppField,
    xi: f64,
    center_x: f64,
    center_y: f64,
    radius: f64,
    out: *mut *mut LfppGraph,
) -> LfppStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let g = if radius > 0.0 {
            build_graph(&f.0, &Region::disk(Complex64::new(center_x, center_y), radius), xi)?
        } else {
            build_graph_valid(&f.0, xi)?
        };
        put(out, LfppGraph(g))
    })
}

/// Raw LFPP distance between the nodes nearest `z` and `w`; `+inf` when
/// they are disconnected.
///
/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfpp_graph_distance(
    graph: *const LfppGraph,
    zx: f64,
    zy: f64,
    wx: f64,
    wy: f64,
    out: *mut f64,
) -> LfppStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let r = g.0.distance(Complex64::new(zx, zy), Complex64::new(wx, wy))?;
        put_value(out, r.raw.value().unwrap_or(f64::INFINITY))
    })
}

/// Raw distance around the closed annulus `A_{r1,r2}(x)`.
///
/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfpp_graph_around(graph: *const LfppGraph, x: f64, y: f64, r1: f64, r2: f64, out: *mut f64) -> LfppStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let r = g.0.distance_around_annulus(Complex64::new(x, y), r1, r2)?;
        put_value(out, r.raw.value().unwrap_or(f64::INFINITY))
    })
}

/// # Safety
/// `graph` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lfpp_graph_free(graph: *mut LfppGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Read a scaling-table CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lfpp_table_read(path: *const c_char, out: *mut *mut LfppTable) -> LfppStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, LfppTable(ScalingTable::read_csv(&p)?))
    })
}

/// Interpolated `a_eps`.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfpp_table_a(table: *const LfppTable, eps: f64, out: *mut f64) -> LfppStatus {
    guard(|| {
        let t = deref(table, "table")?;
        put_value(out, t.0.a(eps)?)
    })
}

/// Fit the exponent, store it in the table and write it to `q_hat`.
///
/// # Safety
/// `table` must be a live handle and `q_hat` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfpp_table_fit(table: *mut LfppTable, seed: u64, q_hat: *mut f64) -> LfppStatus {
    guard(|| {
        let t = table.as_mut().ok_or_else(|| null("table"))?;
        let fit = t.0.fit_exponent(seed)?;
        t.0.q_hat = Some(fit.q_hat);
        put_value(q_hat, fit.q_hat)
    })
}

/// # Safety
/// `table` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lfpp_table_free(table: *mut LfppTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Run a named experiment. `config` may be NULL for the defaults; when
/// `report_path` is not NULL the JSON report is written there. `passed`
/// receives 1 when every check passed and 0 otherwise.
///
/// # Safety
/// String arguments must be NUL-terminated or NULL where allowed; `passed`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfpp_experiment_run(
    name: *const c_char,
    config: *const c_char,
    report_path: *const c_char,
    passed: *mut i32,
) -> LfppStatus {
    guard(|| {
        let name = path_arg(name, "name")?;
        let cfg = if config.is_null() { ExperimentConfig::from_toml("")? } else { ExperimentConfig::load(&path_arg(config, "config")?)? };
        let rep = experiments::run(&name.to_string_lossy(), &cfg)?;
        if !report_path.is_null() {
            rep.write_json(&path_arg(report_path, "report_path")?)?;
        }
        put_value(passed, i32::from(rep.passed()))
    })
}
