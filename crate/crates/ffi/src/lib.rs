//! C ABI for `momo-core`.
//!
//! Every fallible function returns a [`MomoStatus`]; on failure the message
//! is available from [`momo_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Buffers are
//! row-major `f64` arrays whose lengths are implied by the dimension
//! arguments.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use momo_core::attention::{
    causal_linear_attention, causal_momentum_attention, linear_attention, momentum_attention, softmax_attention,
    MomentumConfig, RecurrentState,
};
use momo_core::feature_maps::FeatureMap;
use momo_core::hb_optim::{self, QuadraticProblem};
use momo_core::numerics::{DenseMatrix, SequenceBatch};
use momo_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomoStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Config = 3,
    Numerical = 4,
    Domain = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomoFeatureMap {
    EluPlusOne = 0,
    Identity = 1,
    Exp = 2,
}

impl From<MomoFeatureMap> for FeatureMap {
    fn from(f: MomoFeatureMap) -> Self {
        match f {
            MomoFeatureMap::EluPlusOne => FeatureMap::EluPlusOne,
            MomoFeatureMap::Identity => FeatureMap::Identity,
            MomoFeatureMap::Exp => FeatureMap::Exp,
        }
    }
}

/// Recurrent attention state (opaque).
pub struct MomoRecurrentState(RecurrentState<f64>);

/// Quadratic `½xᵀAx + xᵀb` (opaque).
pub struct MomoQuadratic(QuadraticProblem);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MomoStatus {
    match e {
        Error::Dimension(_) | Error::Shape(_) => MomoStatus::Dimension,
        Error::Config(_) | Error::Parse(_) => MomoStatus::Config,
        Error::Numerical(_) | Error::Convergence(_) | Error::Divergence { .. } | Error::EstimateUndefined => {
            MomoStatus::Numerical
        }
        Error::Domain(_) | Error::Symmetry(_) => MomoStatus::Domain,
        _ => MomoStatus::Internal,
    }
}

struct Fail(MomoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MomoStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MomoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MomoStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MomoStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn momo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Zero state for keys of length `key_dim` and values of length `value_dim`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn momo_recurrent_state_new(key_dim: usize, value_dim: usize, out: *mut *mut MomoRecurrentState) -> MomoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if key_dim == 0 || value_dim == 0 {
            return Err(Fail(MomoStatus::Dimension, "state dimensions must be positive".into()));
        }
        *out = Box::into_raw(Box::new(MomoRecurrentState(RecurrentState::new(key_dim, value_dim))));
        Ok(())
    })
}

/// # Safety
/// `state` must be null or come from [`momo_recurrent_state_new`] and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn momo_recurrent_state_free(state: *mut MomoRecurrentState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Tokens consumed so far; 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn momo_recurrent_state_index(state: *const MomoRecurrentState) -> usize {
    state.as_ref().map_or(0, |s| s.0.index)
}

/// Scalars held by the state, `2·D·D_v + D`; 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn momo_recurrent_state_aux_elements(state: *const MomoRecurrentState) -> usize {
    state.as_ref().map_or(0, |s| s.0.aux_elements())
}

/// One causal linear attention step. `q`, `k` have `key_dim` entries, `v`
/// and `out` have `value_dim`.
///
/// # Safety
/// `state` must be a live handle and the buffers valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn momo_recurrent_state_step_linear(
    state: *mut MomoRecurrentState,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    feature_map: MomoFeatureMap,
    eps: f64,
    out: *mut f64,
) -> MomoStatus {
    guard(|| {
        let st = state.as_mut().ok_or_else(|| null("state"))?;
        let (d, dv) = (st.0.key_dim(), st.0.value_dim());
        let o = st.0.step_linear(slice(q, d, "q")?, slice(k, d, "k")?, slice(v, dv, "v")?, feature_map.into(), eps)?;
        slice_mut(out, dv, "out")?.copy_from_slice(&o);
        Ok(())
    })
}

/// One causal momentum attention step with momentum `beta` and step `gamma`.
///
/// # Safety
/// As [`momo_recurrent_state_step_linear`].
#[no_mangle]
pub unsafe extern "C" fn momo_recurrent_state_step_momentum(
    state: *mut MomoRecurrentState,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    beta: f64,
    gamma: f64,
    feature_map: MomoFeatureMap,
    eps: f64,
    out: *mut f64,
) -> MomoStatus {
    guard(|| {
        let st = state.as_mut().ok_or_else(|| null("state"))?;
        let (d, dv) = (st.0.key_dim(), st.0.value_dim());
        let cfg = MomentumConfig::with_momentum(beta, gamma);
        let o = st.0.step_momentum(slice(q, d, "q")?, slice(k, d, "k")?, slice(v, dv, "v")?, &cfg, feature_map.into(), eps)?;
        slice_mut(out, dv, "out")?.copy_from_slice(&o);
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomoAttentionKind {
    Softmax = 0,
    Linear = 1,
    Momentum = 2,
}

/// Batch attention over `batch` sequences of `len` tokens. `q`, `k` are
/// `batch·len·d`, `v` and `out` are `batch·len·dv`. `beta`, `gamma` are read
/// only for `MOMO_ATTENTION_KIND_MOMENTUM`; `feature_map` and `eps` are
/// ignored for softmax.
///
/// # Safety
/// Buffers must be valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn momo_attention(
    kind: MomoAttentionKind,
    causal: bool,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    batch: usize,
    len: usize,
    d: usize,
    dv: usize,
    beta: f64,
    gamma: f64,
    feature_map: MomoFeatureMap,
    eps: f64,
    out: *mut f64,
) -> MomoStatus {
    guard(|| {
        let mk = |p, w, name| -> Result<SequenceBatch, Fail> {
            let n = batch.checked_mul(len).and_then(|x| x.checked_mul(w)).ok_or_else(|| Fail(MomoStatus::Dimension, "size overflow".into()))?;
            Ok(SequenceBatch::from_vec(batch, len, w, slice(p, n, name)?.to_vec())?)
        };
        let (qb, kb, vb) = (mk(q, d, "q")?, mk(k, d, "k")?, mk(v, dv, "v")?);
        let fm: FeatureMap = feature_map.into();
        let cfg = MomentumConfig::with_momentum(beta, gamma);
        let res = match (kind, causal) {
            (MomoAttentionKind::Softmax, c) => softmax_attention(&qb, &kb, &vb, c)?,
            (MomoAttentionKind::Linear, true) => causal_linear_attention(&qb, &kb, &vb, fm, eps)?,
            (MomoAttentionKind::Linear, false) => linear_attention(&qb, &kb, &vb, fm, eps)?,
            (MomoAttentionKind::Momentum, true) => causal_momentum_attention(&qb, &kb, &vb, &cfg, fm, eps)?,
            (MomoAttentionKind::Momentum, false) => momentum_attention(&qb, &kb, &vb, &cfg, fm, eps)?,
        };
        slice_mut(out, res.data().len(), "out")?.copy_from_slice(res.data());
        Ok(())
    })
}

/// `(1 − √(γν))²`; `MOMO_STATUS_DOMAIN` unless `γν ∈ (0, 1]`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn momo_optimal_momentum(nu: f64, gamma: f64, out: *mut f64) -> MomoStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = hb_optim::optimal_momentum(nu, gamma)?;
        Ok(())
    })
}

/// Adaptive momentum from two gradients of length `len`, projected to
/// `[0, 1 − delta]`.
///
/// # Safety
/// Gradient buffers valid for `len` reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn momo_adaptive_momentum_value(
    grad_k: *const f64,
    grad_km1: *const f64,
    len: usize,
    delta: f64,
    out: *mut f64,
) -> MomoStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = hb_optim::adaptive_momentum_value(slice(grad_k, len, "grad_k")?, slice(grad_km1, len, "grad_km1")?, delta);
        Ok(())
    })
}

/// Quadratic with `d×d` row-major symmetric positive-definite `a` and `b`.
///
/// # Safety
/// `a` valid for `d·d` reads, `b` for `d`, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn momo_quadratic_new(a: *const f64, b: *const f64, d: usize, out: *mut *mut MomoQuadratic) -> MomoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let am = DenseMatrix::from_vec(d, d, slice(a, d * d, "a")?.to_vec())?;
        let p = QuadraticProblem::new(am, slice(b, d, "b")?.to_vec())?;
        *out = Box::into_raw(Box::new(MomoQuadratic(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or come from [`momo_quadratic_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn momo_quadratic_free(p: *mut MomoQuadratic) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Smallest and largest eigenvalue of `A`.
///
/// # Safety
/// `p` a live handle, `nu` and `ell` valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn momo_quadratic_spectrum(p: *const MomoQuadratic, nu: *mut f64, ell: *mut f64) -> MomoStatus {
    guard(|| {
        let q = p.as_ref().ok_or_else(|| null("problem"))?;
        *nu.as_mut().ok_or_else(|| null("nu"))? = q.0.nu();
        *ell.as_mut().ok_or_else(|| null("ell"))? = q.0.ell();
        Ok(())
    })
}

/// Heavy ball from `x0` for `iters` steps; writes `‖xᵏ − x*‖` for
/// `k = 0..=iters` into `dist_out` (length `iters + 1`).
///
/// # Safety
/// `p` a live handle, `x0` valid for `d` reads, `dist_out` for `iters + 1` writes.
#[no_mangle]
pub unsafe extern "C" fn momo_heavy_ball_run(
    p: *const MomoQuadratic,
    x0: *const f64,
    gamma: f64,
    beta: f64,
    iters: usize,
    dist_out: *mut f64,
) -> MomoStatus {
    guard(|| {
        let q = p.as_ref().ok_or_else(|| null("problem"))?;
        let trace = hb_optim::run_heavy_ball(&q.0, slice(x0, q.0.dim(), "x0")?, gamma, beta, iters)?;
        slice_mut(dist_out, iters + 1, "dist_out")?.copy_from_slice(&trace.dist_to_opt);
        Ok(())
    })
}
