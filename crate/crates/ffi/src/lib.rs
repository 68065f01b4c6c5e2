//! C ABI over the pinnflow engine.
//!
//! Every fallible call returns a [`PfStatus`]; on anything but `Ok` a
//! description is available from [`pf_last_error`] on the same thread.
//! Models are opaque handles released with [`pf_model_free`].
//! Arrays are row-major `double` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pinnflow::diffengine::input_derivatives_batch;
use pinnflow::error::Error;
use pinnflow::mlp::{Checkpoint, Mlp, NetworkParams};
use pinnflow::physics::{collocation_residuals, PhysicsRegime, StressModel};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Numeric = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// 2-D incompressible flow; `re` is the Reynolds number.
pub const PF_PHYSICS_NS2D: u32 = 0;
/// 3-D, ten outputs including learned stresses; `re` is the Reynolds number.
pub const PF_PHYSICS_RANS3D: u32 = 1;
/// 3-D with stresses fixed at zero (four outputs).
pub const PF_PHYSICS_RANS3D_ZERO_STRESS: u32 = 2;
/// 3-D, ten outputs, viscosity taken from the model's learned coefficient; `re` is ignored.
pub const PF_PHYSICS_RANS3D_INVERSE: u32 = 3;
/// Inverse problem with zero stresses (four outputs); `re` is ignored.
pub const PF_PHYSICS_RANS3D_INVERSE_ZERO_STRESS: u32 = 4;

/// A trained network loaded from a checkpoint.
pub struct PfModel {
    net: Mlp,
    params: NetworkParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> PfStatus {
    match e {
        Error::Config(_) | Error::Empty(_) | Error::Validation(_) => PfStatus::Config,
        Error::Dimension { .. } => PfStatus::Dimension,
        Error::NonFinite(_) | Error::DegenerateGradient(_) | Error::UndefinedMetric(_) => PfStatus::Numeric,
        Error::Parse { .. } => PfStatus::Parse,
        Error::Io { .. } => PfStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PfStatus>) -> PfStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PfStatus::Panic
        }
    }
}

fn fail(e: Error) -> PfStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> PfStatus {
    set_error(format!("{what} is null"));
    PfStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PfStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        PfStatus::InvalidArgument
    })
}

unsafe fn model_ref<'a>(m: *const PfModel) -> Result<&'a PfModel, PfStatus> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn points(x: *const f64, n: usize, width: usize) -> Result<Vec<Vec<f64>>, PfStatus> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if x.is_null() {
        return Err(null("points"));
    }
    let flat = std::slice::from_raw_parts(x, n * width);
    Ok(flat.chunks(width).map(<[f64]>::to_vec).collect())
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], PfStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next pinnflow call on this thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new model handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_model_load(path: *const c_char, out: *mut *mut PfModel) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = Checkpoint::load(Path::new(path)).map_err(fail)?;
        let net = Mlp::new(ck.config).map_err(fail)?;
        net.check_params(&ck.params).map_err(fail)?;
        *out = Box::into_raw(Box::new(PfModel { net, params: ck.params }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`pf_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pf_model_free(model: *mut PfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input and output widths of the network.
///
/// # Safety
/// `model` must be a live handle; `n_inputs` and `n_outputs` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pf_model_dims(model: *const PfModel, n_inputs: *mut usize, n_outputs: *mut usize) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if n_inputs.is_null() || n_outputs.is_null() {
            return Err(null("output"));
        }
        *n_inputs = m.net.config().n_inputs;
        *n_outputs = m.net.config().n_outputs;
        Ok(())
    })
}

/// The learned PDE coefficient. `Config` when the model carries none.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_model_coefficient(model: *const PfModel, out: *mut f64) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        match m.params.coefficient {
            Some(c) => {
                *out = c;
                Ok(())
            }
            None => Err(fail(Error::config("model has no learned coefficient"))),
        }
    })
}

/// Network outputs at `n` points. `x` holds `n × n_inputs` values and `out`
/// receives `n × n_outputs`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_model_forward(model: *const PfModel, x: *const f64, n: usize, out: *mut f64) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let cfg = m.net.config();
        let pts = points(x, n, cfg.n_inputs)?;
        let dst = out_slice(out, n * cfg.n_outputs, "out")?;
        for (p, row) in pts.iter().zip(dst.chunks_mut(cfg.n_outputs)) {
            row.copy_from_slice(&m.net.forward(&m.params, p).map_err(fail)?);
        }
        Ok(())
    })
}

/// Outputs with first and pure second input partials at `n` points.
///
/// `values` receives `n × n_outputs`; `first` and `second` receive
/// `n × n_outputs × n_inputs`, indexed `[point][output][input]`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_model_input_derivatives(
    model: *const PfModel,
    x: *const f64,
    n: usize,
    values: *mut f64,
    first: *mut f64,
    second: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (ni, no) = (m.net.config().n_inputs, m.net.config().n_outputs);
        let pts = points(x, n, ni)?;
        let vals = out_slice(values, n * no, "values")?;
        let d1 = out_slice(first, n * no * ni, "first")?;
        let d2 = out_slice(second, n * no * ni, "second")?;
        let bundles = input_derivatives_batch(&m.net, &m.params, &pts).map_err(fail)?;
        for (r, b) in bundles.iter().enumerate() {
            vals[r * no..(r + 1) * no].copy_from_slice(&b.values);
            for k in 0..no {
                let at = (r * no + k) * ni;
                d1[at..at + ni].copy_from_slice(&b.first[k]);
                d2[at..at + ni].copy_from_slice(&b.second[k]);
            }
        }
        Ok(())
    })
}

fn regime(physics: u32, re: f64) -> Result<PhysicsRegime, PfStatus> {
    Ok(match physics {
        PF_PHYSICS_NS2D => PhysicsRegime::Ns2d { re },
        PF_PHYSICS_RANS3D => PhysicsRegime::Rans3d {
            re,
            stresses: StressModel::Learned,
        },
        PF_PHYSICS_RANS3D_ZERO_STRESS => PhysicsRegime::Rans3d {
            re,
            stresses: StressModel::Zero,
        },
        PF_PHYSICS_RANS3D_INVERSE => PhysicsRegime::Rans3dInverse {
            stresses: StressModel::Learned,
        },
        PF_PHYSICS_RANS3D_INVERSE_ZERO_STRESS => PhysicsRegime::Rans3dInverse {
            stresses: StressModel::Zero,
        },
        other => {
            set_error(format!("unknown physics code {other}"));
            return Err(PfStatus::InvalidArgument);
        }
    })
}

/// Number of residual components per point for a physics code: the momentum
/// equations followed by continuity. Zero for an unknown code.
#[no_mangle]
pub extern "C" fn pf_residual_width(physics: u32) -> usize {
    match physics {
        PF_PHYSICS_NS2D => 3,
        PF_PHYSICS_RANS3D..=PF_PHYSICS_RANS3D_INVERSE_ZERO_STRESS => 4,
        _ => 0,
    }
}

/// PDE residuals of the model at `n` points; `out` receives
/// `n × pf_residual_width(physics)` values.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_model_residuals(
    model: *const PfModel,
    physics: u32,
    re: f64,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let reg = regime(physics, re)?;
        let w = pf_residual_width(physics);
        let pts = points(x, n, reg.n_inputs())?;
        let dst = out_slice(out, n * w, "out")?;
        let res = collocation_residuals(&m.net, &m.params, &pts, &reg).map_err(fail)?;
        for (r, row) in res.iter().zip(dst.chunks_mut(w)) {
            row.copy_from_slice(&r.components());
        }
        Ok(())
    })
}

/// Relative L2 error ‖pred − truth‖ / ‖truth‖ over `n` values.
///
/// # Safety
/// `pred` and `truth` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pf_relative_l2(pred: *const f64, truth: *const f64, n: usize, out: *mut f64) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n > 0 && (pred.is_null() || truth.is_null()) {
            return Err(null("input"));
        }
        let (p, t) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(pred, n), std::slice::from_raw_parts(truth, n))
        };
        *out = pinnflow::eval::relative_l2(p, t).map_err(fail)?;
        Ok(())
    })
}

/// Runs a command-line invocation in-process (`argv[0]` is the program
/// name) and returns its exit code: 0 success, 1 usage error, 2 runtime
/// failure, -1 for bad arguments to this function.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pf_run_cli(argc: c_int, argv: *const *const c_char) -> c_int {
    set_error("");
    if argv.is_null() || argc < 1 {
        set_error("argv is empty");
        return -1;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for i in 0..argc as usize {
        match str_arg(*argv.add(i), "argument") {
            Ok(s) => args.push(s.to_string()),
            Err(_) => return -1,
        }
    }
    catch_unwind(|| pinnflow::cli::main_with_args(args)).unwrap_or_else(|_| {
        set_error("panic during command");
        2
    })
}
