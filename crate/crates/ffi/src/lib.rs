//! C ABI for cdpinn.
//!
//! Networks and tangent kernels are opaque handles created and released
//! through this API. Every fallible call returns a [`CdpinnStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`cdpinn_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cdpinn::fdm::solve_central;
use cdpinn::net::MLPParams;
use cdpinn::ntk::{assemble_kernel, convergence_rate, eig_sym, KernelSpectrum, TangentKernel};
use cdpinn::problems::{Kind1D, Problem1D};
use cdpinn::trainer::{classify_outcome, eval_grid, train, Label, SampleSet, Schedule, EVAL_POINTS};
use cdpinn::transform::AffineTransform;
use cdpinn::Error;
use ndarray::Array2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdpinnStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Shape = 3,
    Domain = 4,
    Sampling = 5,
    Numeric = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdpinnProblem {
    Primary = 0,
    Forced = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdpinnLabel {
    Accurate = 0,
    OppositeFlow = 1,
    Linear = 2,
}

/// A tanh network.
pub struct CdpinnNet {
    params: MLPParams,
}

/// A tangent kernel together with its eigen-decomposition.
pub struct CdpinnKernel {
    kernel: TangentKernel,
    spectrum: KernelSpectrum,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CdpinnStatus {
    match e {
        Error::Config(_) => CdpinnStatus::Config,
        Error::Shape(_) => CdpinnStatus::Shape,
        Error::Domain(_) => CdpinnStatus::Domain,
        Error::Sampling(_) => CdpinnStatus::Sampling,
        Error::Numeric { .. } => CdpinnStatus::Numeric,
        Error::Io(_) | Error::Csv(_) => CdpinnStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Small(usize),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CdpinnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdpinnStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CdpinnStatus::NullPointer
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("output buffer too small, need {need} entries"));
            CdpinnStatus::BufferTooSmall
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CdpinnStatus::Panic
        }
    }
}

unsafe fn read<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, cap: usize, values: &[f64]) -> Result<(), Fail> {
    if values.len() > cap {
        return Err(Fail::Small(values.len()));
    }
    if out.is_null() && !values.is_empty() {
        return Err(Fail::Null("out"));
    }
    if !values.is_empty() {
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

unsafe fn transform(scale: *const f64, shift: *const f64, dim: usize) -> Result<AffineTransform, Fail> {
    if scale.is_null() && shift.is_null() {
        return Ok(AffineTransform::identity(dim));
    }
    let a = read(scale, dim, "scale")?.to_vec();
    let b = read(shift, dim, "shift")?.to_vec();
    Ok(AffineTransform::new(a, b)?)
}

fn problem(kind: CdpinnProblem, eps: f64) -> Result<Problem1D, Error> {
    match kind {
        CdpinnProblem::Primary => Problem1D::new(eps, Kind1D::Primary),
        CdpinnProblem::Forced => Problem1D::new(eps, Kind1D::Forced),
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cdpinn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Xavier-initialized network with layer sizes `dims[0..n_dims]`.
///
/// # Safety
/// `dims` must point to `n_dims` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_new(
    dims: *const usize,
    n_dims: usize,
    seed: u64,
    out: *mut *mut CdpinnNet,
) -> CdpinnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let dims = read(dims, n_dims, "dims")?;
        let params = MLPParams::init_xavier(dims, seed)?;
        *out = Box::into_raw(Box::new(CdpinnNet { params }));
        Ok(())
    })
}

/// Network from the text parameter format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_from_text(text: *const c_char, out: *mut *mut CdpinnNet) -> CdpinnStatus {
    guard(|| {
        if text.is_null() {
            return Err(Fail::Null("text"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Error::Config("parameter text is not UTF-8".into()))?;
        let params: MLPParams = s.parse()?;
        *out = Box::into_raw(Box::new(CdpinnNet { params }));
        Ok(())
    })
}

/// Text form of the parameters; release with [`cdpinn_string_free`].
/// Returns NULL if `net` is NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_to_text(net: *const CdpinnNet) -> *mut c_char {
    if net.is_null() {
        set_error("null pointer: net".into());
        return ptr::null_mut();
    }
    CString::new((*net).params.to_text()).map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `net` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_free(net: *mut CdpinnNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of trainable parameters, 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_num_params(net: *const CdpinnNet) -> usize {
    net.as_ref().map_or(0, |n| n.params.num_params())
}

/// Input dimension, 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_input_dim(net: *const CdpinnNet) -> usize {
    net.as_ref().map_or(0, |n| n.params.input_dim())
}

/// Evaluate `net(a * (x + b))` at `n_points` row-major points.
/// `scale`/`shift` hold one entry per input coordinate; pass both NULL
/// for the identity.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes: `x` holds
/// `n_points * input_dim` values and `out` at least `n_points`.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_net_forward(
    net: *const CdpinnNet,
    scale: *const f64,
    shift: *const f64,
    x: *const f64,
    n_points: usize,
    out: *mut f64,
) -> CdpinnStatus {
    guard(|| {
        let net = net.as_ref().ok_or(Fail::Null("net"))?;
        let d = net.params.input_dim();
        let t = transform(scale, shift, d)?;
        let xs = read(x, n_points * d, "x")?;
        let pts = Array2::from_shape_vec((n_points, d), xs.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        let y = net.params.forward_with(&t, &pts)?;
        write_out(out, n_points, &y)
    })
}

/// Central FDM solution on `n` intervals; writes `n + 1` nodal values.
///
/// # Safety
/// `out` must hold at least `cap` values.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_fdm_solve(
    kind: CdpinnProblem,
    epsilon: f64,
    n: usize,
    out: *mut f64,
    cap: usize,
) -> CdpinnStatus {
    guard(|| {
        let sol = solve_central(&problem(kind, epsilon)?, n)?;
        write_out(out, cap, &sol.values)
    })
}

/// Train `net` in place as the corrector of the reduced 1D solution on the
/// lattice `k / res_div`, then classify `u_0 + c` on the evaluation grid.
///
/// # Safety
/// `net` must be a live 1-input handle; `scale`/`shift` each NULL or one
/// value; `final_loss` and `label` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_train_reduced(
    net: *mut CdpinnNet,
    kind: CdpinnProblem,
    epsilon: f64,
    scale: *const f64,
    shift: *const f64,
    res_div: usize,
    adam_epochs: usize,
    lbfgs_epochs: usize,
    final_loss: *mut f64,
    label: *mut CdpinnLabel,
) -> CdpinnStatus {
    guard(|| {
        let net = net.as_mut().ok_or(Fail::Null("net"))?;
        let p = problem(kind, epsilon)?;
        let t = transform(scale, shift, 1)?;
        let samples = SampleSet::reduced(&p, res_div)?;
        let report = train(net.params.clone(), &t, &samples, &Schedule::new(adam_epochs, lbfgs_epochs))?;
        let grid = eval_grid(EVAL_POINTS);
        let pts = Array2::from_shape_vec((grid.len(), 1), grid.clone()).map_err(|e| Error::Shape(e.to_string()))?;
        let c = report.params.forward_with(&t, &pts)?;
        let approx: Vec<f64> = grid.iter().zip(&c).map(|(&x, c)| p.reduced(x) + c).collect();
        let outcome = classify_outcome(&approx, &p)?;
        net.params = report.params;
        if let Some(l) = final_loss.as_mut() {
            *l = report.final_loss.total;
        }
        if let Some(l) = label.as_mut() {
            *l = match outcome.label {
                Label::Accurate => CdpinnLabel::Accurate,
                Label::OppositeFlow => CdpinnLabel::OppositeFlow,
                Label::Linear => CdpinnLabel::Linear,
            };
        }
        Ok(())
    })
}

/// Tangent kernel of `net` on reduced-mode samples `k / res_div`, with its
/// eigen-decomposition.
///
/// # Safety
/// `net` must be a live 1-input handle, `scale`/`shift` NULL or one value
/// each, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_kernel_reduced(
    net: *const CdpinnNet,
    kind: CdpinnProblem,
    epsilon: f64,
    scale: *const f64,
    shift: *const f64,
    res_div: usize,
    out: *mut *mut CdpinnKernel,
) -> CdpinnStatus {
    guard(|| {
        let net = net.as_ref().ok_or(Fail::Null("net"))?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let t = transform(scale, shift, 1)?;
        let samples = SampleSet::reduced(&problem(kind, epsilon)?, res_div)?;
        let kernel = assemble_kernel(&net.params, &t, &samples)?;
        let spectrum = eig_sym(&kernel.k)?;
        *out = Box::into_raw(Box::new(CdpinnKernel { kernel, spectrum }));
        Ok(())
    })
}

/// # Safety
/// `k` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_kernel_free(k: *mut CdpinnKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Number of observables `N = N_u + N_r`, 0 for NULL.
///
/// # Safety
/// `k` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_kernel_size(k: *const CdpinnKernel) -> usize {
    k.as_ref().map_or(0, |k| k.kernel.n())
}

/// `Tr(K_uu)`, `Tr(K_rr)` and the convergence rate `Tr(K) / N`.
///
/// # Safety
/// `k` must be a live handle; the outputs NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_kernel_traces(
    k: *const CdpinnKernel,
    tr_uu: *mut f64,
    tr_rr: *mut f64,
    rate: *mut f64,
) -> CdpinnStatus {
    guard(|| {
        let k = k.as_ref().ok_or(Fail::Null("kernel"))?;
        if let Some(v) = tr_uu.as_mut() {
            *v = k.kernel.tr_uu();
        }
        if let Some(v) = tr_rr.as_mut() {
            *v = k.kernel.tr_rr();
        }
        if let Some(v) = rate.as_mut() {
            *v = convergence_rate(&k.kernel);
        }
        Ok(())
    })
}

/// Eigenvalues in descending order, clipped at zero.
///
/// # Safety
/// `k` must be a live handle and `out` hold at least `cap` values.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_kernel_eigenvalues(k: *const CdpinnKernel, out: *mut f64, cap: usize) -> CdpinnStatus {
    guard(|| {
        let k = k.as_ref().ok_or(Fail::Null("kernel"))?;
        write_out(out, cap, &k.spectrum.eigenvalues())
    })
}

/// Row-major `N x N` kernel matrix.
///
/// # Safety
/// `k` must be a live handle and `out` hold at least `cap` values.
#[no_mangle]
pub unsafe extern "C" fn cdpinn_kernel_matrix(k: *const CdpinnKernel, out: *mut f64, cap: usize) -> CdpinnStatus {
    guard(|| {
        let k = k.as_ref().ok_or(Fail::Null("kernel"))?;
        let v: Vec<f64> = k.kernel.k.iter().copied().collect();
        write_out(out, cap, &v)
    })
}
