//! C ABI over the `uivi` engine.
//!
//! Every function returns a [`UiviStatus`]. On failure the message is kept per
//! thread and can be read with [`uivi_last_error_message`]. Objects are opaque
//! handles created by `*_new`-style functions and released with the matching
//! `*_free`; passing a null handle to a `*_free` function is a no-op.
//!
//! Handles are not synchronized. Use one handle from one thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use uivi::checkpoint;
use uivi::estimator::elbo_gradient;
use uivi::evaluation::elbo_estimate;
use uivi::optimizer::{OptimizerConfig, RmsProp};
use uivi::runner::{rng_stream, run_experiment, RunConfig, SeededRng};
use uivi::targets::{GaussianTarget, TargetModel, ToyTarget};
use uivi::{Error, HmcConfig, SemiImplicitQ};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UiviStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Unsupported = 5,
    Quadrature = 6,
    Parse = 7,
    Config = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for UiviStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => UiviStatus::DimensionMismatch,
            Error::NonFinite(_) => UiviStatus::NonFinite,
            Error::InvalidArgument(_) => UiviStatus::InvalidArgument,
            Error::Unsupported(_) => UiviStatus::Unsupported,
            Error::Quadrature(_) => UiviStatus::Quadrature,
            Error::Parse { .. } => UiviStatus::Parse,
            Error::Config(_) => UiviStatus::Config,
            Error::Io { .. } => UiviStatus::Io,
        }
    }
}

struct Failure {
    status: UiviStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            status: UiviStatus::from(&e),
            message: e.to_string(),
        }
    }
}

fn fail(status: UiviStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UiviStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            UiviStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("internal panic");
            UiviStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(UiviStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(UiviStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(UiviStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(UiviStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(fail(UiviStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(UiviStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(fail(UiviStatus::NullPointer, format!("{what} is null")));
    }
    p.write(value);
    Ok(())
}

fn need(len: usize, required: usize, what: &str) -> Result<(), Failure> {
    if len < required {
        Err(fail(
            UiviStatus::BufferTooSmall,
            format!("{what} holds {len} values, {required} needed"),
        ))
    } else {
        Ok(())
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---------------------------------------------------------------------------

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uivi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or `""` after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn uivi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---------------------------------------------------------------------------

/// Seeded random-number generator.
pub struct UiviRng(SeededRng);

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn uivi_rng_new(seed: u64, out: *mut *mut UiviRng) -> UiviStatus {
    guard(|| unsafe { self::out(out, boxed(UiviRng(rng_stream(seed, 0))), "out") })
}

/// # Safety
/// `rng` must be null or a handle from [`uivi_rng_new`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn uivi_rng_free(rng: *mut UiviRng) {
    release(rng);
}

// ---------------------------------------------------------------------------

/// Semi-implicit variational family.
pub struct UiviFamily(SemiImplicitQ);

/// ReLU network `eps_dim -> hidden... -> z_dim` with Xavier weights and every
/// conditional standard deviation set to `init_scale`.
///
/// # Safety
/// `hidden` must point to `n_hidden` values (or be null when `n_hidden` is 0);
/// `rng` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_new_mlp(
    eps_dim: usize,
    z_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    init_scale: f64,
    rng: *mut UiviRng,
    out: *mut *mut UiviFamily,
) -> UiviStatus {
    guard(|| unsafe {
        let widths: &[usize] = if n_hidden == 0 {
            &[]
        } else if hidden.is_null() {
            return Err(fail(UiviStatus::NullPointer, "hidden is null"));
        } else {
            std::slice::from_raw_parts(hidden, n_hidden)
        };
        let rng = handle_mut(rng, "rng")?;
        let q = SemiImplicitQ::with_mlp(eps_dim, z_dim, widths, init_scale, &mut rng.0)?;
        self::out(out, boxed(UiviFamily(q)), "out")
    })
}

/// The conjugate family `eps ~ N(0, 1)`, `z | eps ~ N(a eps, sigma^2)`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_linear_gaussian(a: f64, sigma: f64, out: *mut *mut UiviFamily) -> UiviStatus {
    guard(|| unsafe {
        let q = SemiImplicitQ::linear_gaussian(a, sigma)?;
        self::out(out, boxed(UiviFamily(q)), "out")
    })
}

/// Loads a checkpoint written by [`uivi_family_save`] or a training run.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_load(path: *const c_char, out: *mut *mut UiviFamily) -> UiviStatus {
    guard(|| unsafe {
        let path = PathBuf::from(string(path, "path")?);
        let q = checkpoint::load(&path)?;
        self::out(out, boxed(UiviFamily(q)), "out")
    })
}

/// # Safety
/// `family` must be valid; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_save(family: *const UiviFamily, path: *const c_char) -> UiviStatus {
    guard(|| unsafe {
        let q = handle(family, "family")?;
        let path = PathBuf::from(string(path, "path")?);
        checkpoint::save(&q.0, &path)?;
        Ok(())
    })
}

/// # Safety
/// `family` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_free(family: *mut UiviFamily) {
    release(family);
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_dims(
    family: *const UiviFamily,
    eps_dim: *mut usize,
    z_dim: *mut usize,
    num_params: *mut usize,
) -> UiviStatus {
    guard(|| unsafe {
        let q = &handle(family, "family")?.0;
        out(eps_dim, q.eps_dim(), "eps_dim")?;
        out(z_dim, q.z_dim(), "z_dim")?;
        out(num_params, q.num_params(), "num_params")
    })
}

/// Copies the flat parameter vector (network, then raw scales) into `params`.
///
/// # Safety
/// `params` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_get_params(family: *const UiviFamily, params: *mut f64, len: usize) -> UiviStatus {
    guard(|| unsafe {
        let flat = handle(family, "family")?.0.params_flat();
        need(len, flat.len(), "params")?;
        slice_mut(params, len, "params")?[..flat.len()].copy_from_slice(&flat);
        Ok(())
    })
}

/// # Safety
/// `params` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_set_params(family: *mut UiviFamily, params: *const f64, len: usize) -> UiviStatus {
    guard(|| unsafe {
        let q = handle_mut(family, "family")?;
        q.0.set_params_flat(slice(params, len, "params")?)?;
        Ok(())
    })
}

/// Writes `n` draws row-major into `z` (`n * z_dim` values).
///
/// # Safety
/// `z` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_sample(
    family: *const UiviFamily,
    rng: *mut UiviRng,
    n: usize,
    z: *mut f64,
    len: usize,
) -> UiviStatus {
    guard(|| unsafe {
        let q = &handle(family, "family")?.0;
        let rng = handle_mut(rng, "rng")?;
        let d = q.z_dim();
        need(len, n * d, "z")?;
        let buf = slice_mut(z, len, "z")?;
        for row in buf.chunks_exact_mut(d.max(1)).take(n) {
            row.copy_from_slice(&q.sample(&mut rng.0)?.z);
        }
        Ok(())
    })
}

/// Monte Carlo estimate of `log q(z)` from `m` mixing draws.
///
/// # Safety
/// `z` must point to `z_len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_family_log_density(
    family: *const UiviFamily,
    z: *const f64,
    z_len: usize,
    m: usize,
    rng: *mut UiviRng,
    out: *mut f64,
) -> UiviStatus {
    guard(|| unsafe {
        let q = &handle(family, "family")?.0;
        let rng = handle_mut(rng, "rng")?;
        let v = q.marginal_logdensity_estimate(slice(z, z_len, "z")?, m, &mut rng.0)?;
        self::out(out, v, "out")
    })
}

// ---------------------------------------------------------------------------

enum TargetKind {
    Toy(ToyTarget),
    Gaussian(GaussianTarget),
}

/// Unnormalized log density `log p(x, z)`.
pub struct UiviTarget(TargetKind);

impl UiviTarget {
    fn model(&self) -> &dyn TargetModel {
        match &self.0 {
            TargetKind::Toy(t) => t,
            TargetKind::Gaussian(t) => t,
        }
    }
}

/// Toy 2-D target by name: `banana`, `multimodal` or `x-shaped`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_target_toy(name: *const c_char, out: *mut *mut UiviTarget) -> UiviStatus {
    guard(|| unsafe {
        let t = ToyTarget::from_name(&string(name, "name")?)?;
        self::out(out, boxed(UiviTarget(TargetKind::Toy(t))), "out")
    })
}

/// Diagonal Gaussian `N(mean, diag(std^2))`.
///
/// # Safety
/// `mean` and `std` must each point to `dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_target_gaussian(
    mean: *const f64,
    std: *const f64,
    dim: usize,
    out: *mut *mut UiviTarget,
) -> UiviStatus {
    guard(|| unsafe {
        let t = GaussianTarget::new(slice(mean, dim, "mean")?.to_vec(), slice(std, dim, "std")?.to_vec())?;
        self::out(out, boxed(UiviTarget(TargetKind::Gaussian(t))), "out")
    })
}

/// # Safety
/// `target` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uivi_target_free(target: *mut UiviTarget) {
    release(target);
}

/// # Safety
/// `target` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_target_dim(target: *const UiviTarget, out: *mut usize) -> UiviStatus {
    guard(|| unsafe { self::out(out, handle(target, "target")?.model().dim(), "out") })
}

/// Log density at `z`; also writes the gradient when `grad` is non-null.
///
/// # Safety
/// `z` must point to `len` values; `grad`, if non-null, to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uivi_target_log_joint(
    target: *const UiviTarget,
    z: *const f64,
    len: usize,
    value: *mut f64,
    grad: *mut f64,
) -> UiviStatus {
    guard(|| unsafe {
        let t = handle(target, "target")?.model();
        let z = slice(z, len, "z")?;
        if grad.is_null() {
            out(value, t.log_joint(z)?, "value")
        } else {
            let (v, g) = t.log_joint_and_grad(z)?;
            slice_mut(grad, len, "grad")?.copy_from_slice(&g);
            out(value, v, "value")
        }
    })
}

// ---------------------------------------------------------------------------

/// ELBO estimate with `n_outer` draws and `m` mixing draws for `log q`.
///
/// # Safety
/// All handles and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_elbo_estimate(
    target: *const UiviTarget,
    family: *const UiviFamily,
    n_outer: usize,
    m: usize,
    rng: *mut UiviRng,
    value: *mut f64,
    std_error: *mut f64,
) -> UiviStatus {
    guard(|| unsafe {
        let t = handle(target, "target")?.model();
        let q = &handle(family, "family")?.0;
        let rng = handle_mut(rng, "rng")?;
        let e = elbo_estimate(t, q, n_outer, m, &mut rng.0)?;
        out(value, e.value, "value")?;
        out(std_error, e.std_error, "std_error")
    })
}

/// Unbiased ELBO gradient (ascent direction) averaged over `samples` draws,
/// using the default reverse-conditional sampler; writes `num_params` values.
///
/// # Safety
/// `grad` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn uivi_elbo_gradient(
    target: *const UiviTarget,
    family: *const UiviFamily,
    samples: usize,
    rng: *mut UiviRng,
    grad: *mut f64,
    len: usize,
) -> UiviStatus {
    guard(|| unsafe {
        let t = handle(target, "target")?.model();
        let q = &handle(family, "family")?.0;
        let rng = handle_mut(rng, "rng")?;
        need(len, q.num_params(), "grad")?;
        let hmc = HmcConfig::for_eps_dim(q.eps_dim());
        let g = elbo_gradient(t, q, samples, &hmc, &mut rng.0)?.grad.flatten();
        slice_mut(grad, len, "grad")?[..g.len()].copy_from_slice(&g);
        Ok(())
    })
}

// ---------------------------------------------------------------------------

/// RMSProp ascent state for one family.
pub struct UiviOptimizer(RmsProp);

/// # Safety
/// `family` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn uivi_optimizer_new(
    family: *const UiviFamily,
    eta_net: f64,
    eta_scale: f64,
    decay_every: usize,
    decay_factor: f64,
    out: *mut *mut UiviOptimizer,
) -> UiviStatus {
    guard(|| unsafe {
        let q = &handle(family, "family")?.0;
        let cfg = OptimizerConfig {
            eta_net,
            eta_scale,
            decay_every,
            decay_factor,
        };
        let opt = RmsProp::for_family(cfg, q)?;
        self::out(out, boxed(UiviOptimizer(opt)), "out")
    })
}

/// Applies one ascent step with `grad` (`num_params` values) to `family`.
///
/// # Safety
/// `grad` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn uivi_optimizer_step(
    optimizer: *mut UiviOptimizer,
    family: *mut UiviFamily,
    grad: *const f64,
    len: usize,
) -> UiviStatus {
    guard(|| unsafe {
        let opt = handle_mut(optimizer, "optimizer")?;
        let q = handle_mut(family, "family")?;
        let mut theta = q.0.params_flat();
        opt.0.step(&mut theta, slice(grad, len, "grad")?)?;
        q.0.set_params_flat(&theta)?;
        Ok(())
    })
}

/// # Safety
/// `optimizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uivi_optimizer_free(optimizer: *mut UiviOptimizer) {
    release(optimizer);
}

// ---------------------------------------------------------------------------

/// Runs a full experiment from a TOML configuration file. A relative
/// `output_dir` in the file is resolved against the file's directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uivi_run_experiment(config_path: *const c_char) -> UiviStatus {
    guard(|| unsafe {
        let path = PathBuf::from(string(config_path, "config_path")?);
        let mut cfg = RunConfig::load(&path)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        run_experiment(&cfg)?;
        Ok(())
    })
}
