//! C ABI over the `ordpol` core: ordinal distribution kernels, policies behind opaque
//! handles and the tint environment.
//!
//! Every fallible function returns an [`OrdpolStatus`]; on failure the message is available
//! from [`ordpol_last_error`] on the same thread. Panics are caught at the boundary and
//! reported as `ORDPOL_STATUS_PANIC`. Handles must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ordpol::approx::ScoreKind;
use ordpol::dist::{ordinal_log_prob_grad, ordinal_pmf, Thresholds};
use ordpol::env::{Environment, TintEnv, TintEnvConfig};
use ordpol::policy::{Action, ActionDist, Family, Policy, PolicySpec};
use ordpol::rng::{stream, Stream};
use ordpol::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrdpolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Constraint = 3,
    Dimension = 4,
    Numerical = 5,
    Contract = 6,
    Checkpoint = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque policy handle.
pub struct OrdpolPolicy {
    inner: Policy,
}

/// Opaque tint environment handle.
pub struct OrdpolTintEnv {
    inner: TintEnv,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> OrdpolStatus {
    match e {
        Error::InvalidParameter { .. } | Error::Config { .. } | Error::Io { .. } => {
            OrdpolStatus::InvalidArgument
        }
        Error::Constraint(_) => OrdpolStatus::Constraint,
        Error::Dimension { .. } => OrdpolStatus::Dimension,
        Error::Numerical(_) => OrdpolStatus::Numerical,
        Error::Contract(_) => OrdpolStatus::Contract,
        Error::Checkpoint(_) => OrdpolStatus::Checkpoint,
    }
}

struct Fail(OrdpolStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OrdpolStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OrdpolStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OrdpolStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ordpol");
            OrdpolStatus::Panic
        }
    }
}

/// `(ptr, len)` as a slice; a null pointer is only accepted with `len == 0`.
unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn too_small(needed: usize, got: usize) -> Fail {
    Fail(
        OrdpolStatus::BufferTooSmall,
        format!("buffer holds {got} values, {needed} are needed"),
    )
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to
/// `cap − 1` bytes) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ordpol_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ordpol_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Writes the `n_tau + 1` class probabilities of the cumulative-logit model with strictly
/// increasing cut points `tau` and latent score `score`.
///
/// # Safety
/// `tau` must be valid for `n_tau` reads and `probs` for `n_probs` writes.
#[no_mangle]
pub unsafe extern "C" fn ordpol_ordinal_pmf(
    tau: *const f64,
    n_tau: usize,
    score: f64,
    probs: *mut f64,
    n_probs: usize,
) -> OrdpolStatus {
    guard(|| {
        let tau = input(tau, n_tau, "tau")?;
        let out = output(probs, n_probs, "probs")?;
        let pmf = ordinal_pmf(tau, score)?;
        if out.len() < pmf.classes() {
            return Err(too_small(pmf.classes(), out.len()));
        }
        out[..pmf.classes()].copy_from_slice(pmf.probs());
        Ok(())
    })
}

/// Log-probability of class `action` (0-based) and its gradient with respect to the score and
/// the unconstrained threshold parameters `raw` (first cut point, then log-gaps).
///
/// # Safety
/// `raw` must be valid for `n_raw` reads, `d_raw` for `n_raw` writes, and the scalar outputs
/// must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ordpol_ordinal_log_prob_grad(
    raw: *const f64,
    n_raw: usize,
    score: f64,
    action: usize,
    log_prob: *mut f64,
    d_score: *mut f64,
    d_raw: *mut f64,
) -> OrdpolStatus {
    guard(|| {
        let raw = input(raw, n_raw, "raw")?;
        let d = output(d_raw, n_raw, "d_raw")?;
        let lp = handle_mut(log_prob, "log_prob")?;
        let ds = handle_mut(d_score, "d_score")?;
        let th = Thresholds::from_raw(raw.to_vec())?;
        let g = ordinal_log_prob_grad(&th, score, action)?;
        *lp = g.log_prob;
        *ds = g.d_score;
        d.copy_from_slice(&g.d_raw);
        Ok(())
    })
}

fn torso_kind(code: u32) -> Result<ScoreKind, Fail> {
    match code {
        0 => Ok(ScoreKind::Linear),
        1 => Ok(ScoreKind::Mlp2),
        _ => Err(Fail(
            OrdpolStatus::InvalidArgument,
            format!("torso must be 0 (linear) or 1 (mlp2), got {code}"),
        )),
    }
}

unsafe fn new_policy(
    family: Family,
    obs_dim: usize,
    torso: u32,
    hidden: usize,
    seed: u64,
    out: *mut *mut OrdpolPolicy,
) -> OrdpolStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = PolicySpec {
            family,
            torso: torso_kind(torso)?,
            hidden,
            obs_dim,
        };
        let inner = Policy::new(spec, &mut stream(seed, Stream::Init))?;
        *out = Box::into_raw(Box::new(OrdpolPolicy { inner }));
        Ok(())
    })
}

/// Creates a single-dimension ordinal policy. `torso` is 0 for linear, 1 for a two-layer MLP
/// with `hidden` units; `seed` drives the initialization.
///
/// # Safety
/// `out` must be a valid pointer; the handle it receives must be freed with
/// [`ordpol_policy_free`].
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_new_ordinal(
    classes: usize,
    obs_dim: usize,
    torso: u32,
    hidden: usize,
    seed: u64,
    out: *mut *mut OrdpolPolicy,
) -> OrdpolStatus {
    let family = Family::Ordinal {
        classes,
        action_dims: 1,
    };
    new_policy(family, obs_dim, torso, hidden, seed, out)
}

/// Creates a softmax policy; see [`ordpol_policy_new_ordinal`].
///
/// # Safety
/// As for [`ordpol_policy_new_ordinal`].
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_new_softmax(
    classes: usize,
    obs_dim: usize,
    torso: u32,
    hidden: usize,
    seed: u64,
    out: *mut *mut OrdpolPolicy,
) -> OrdpolStatus {
    new_policy(
        Family::Softmax { classes },
        obs_dim,
        torso,
        hidden,
        seed,
        out,
    )
}

/// Restores a policy from a checkpoint blob.
///
/// # Safety
/// `bytes` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_from_blob(
    bytes: *const u8,
    len: usize,
    out: *mut *mut OrdpolPolicy,
) -> OrdpolStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let inner = Policy::from_blob(slice::from_raw_parts(bytes, len))?;
        *out = Box::into_raw(Box::new(OrdpolPolicy { inner }));
        Ok(())
    })
}

/// Serializes a policy. `written` receives the blob size; when `cap` is too small nothing is
/// copied and `ORDPOL_STATUS_BUFFER_TOO_SMALL` is returned, so a first call with `cap = 0`
/// queries the size.
///
/// # Safety
/// `policy` must be a live handle, `buf` valid for `cap` writes and `written` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_to_blob(
    policy: *const OrdpolPolicy,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> OrdpolStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let w = handle_mut(written, "written")?;
        let blob = p.inner.to_blob();
        *w = blob.len();
        if cap < blob.len() {
            return Err(Fail(
                OrdpolStatus::BufferTooSmall,
                format!("blob needs {} bytes, buffer holds {cap}", blob.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(blob.as_ptr(), buf, blob.len());
        Ok(())
    })
}

/// Number of entries of the flat parameter vector, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_num_params(policy: *const OrdpolPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.inner.num_params())
}

/// Copies the flat parameter vector into `params`.
///
/// # Safety
/// `policy` must be a live handle and `params` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_get_params(
    policy: *const OrdpolPolicy,
    params: *mut f64,
    len: usize,
) -> OrdpolStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let out = output(params, len, "params")?;
        let theta = p.inner.params();
        if out.len() < theta.len() {
            return Err(too_small(theta.len(), out.len()));
        }
        out[..theta.len()].copy_from_slice(&theta);
        Ok(())
    })
}

/// Replaces the flat parameter vector; `len` must equal the parameter count.
///
/// # Safety
/// `policy` must be a live handle and `params` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_set_params(
    policy: *mut OrdpolPolicy,
    params: *const f64,
    len: usize,
) -> OrdpolStatus {
    guard(|| {
        let p = handle_mut(policy, "policy")?;
        let theta = input(params, len, "params")?;
        p.inner.set_params(theta)?;
        Ok(())
    })
}

fn single_pmf(p: &Policy, obs: &[f64]) -> Result<ordpol::dist::Pmf, Fail> {
    match p.distribution(obs)? {
        ActionDist::Categorical(mut pmfs) if pmfs.len() == 1 => Ok(pmfs.remove(0)),
        _ => Err(Fail(
            OrdpolStatus::InvalidArgument,
            "only single-dimension discrete policies are supported here".into(),
        )),
    }
}

/// Writes the action probabilities at observation `obs`.
///
/// # Safety
/// `policy` must be a live handle, `obs` valid for `obs_len` reads and `probs` for `n_probs`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_probs(
    policy: *const OrdpolPolicy,
    obs: *const f64,
    obs_len: usize,
    probs: *mut f64,
    n_probs: usize,
) -> OrdpolStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let s = input(obs, obs_len, "obs")?;
        let out = output(probs, n_probs, "probs")?;
        let pmf = single_pmf(&p.inner, s)?;
        if out.len() < pmf.classes() {
            return Err(too_small(pmf.classes(), out.len()));
        }
        out[..pmf.classes()].copy_from_slice(pmf.probs());
        Ok(())
    })
}

/// Maps a caller-supplied uniform `u ∈ [0, 1)` to an action by inverse CDF.
///
/// # Safety
/// `policy` must be a live handle, `obs` valid for `obs_len` reads and `action` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_sample(
    policy: *const OrdpolPolicy,
    obs: *const f64,
    obs_len: usize,
    u: f64,
    action: *mut usize,
) -> OrdpolStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        let s = input(obs, obs_len, "obs")?;
        let a = handle_mut(action, "action")?;
        if !(0.0..1.0).contains(&u) {
            return Err(Fail(
                OrdpolStatus::InvalidArgument,
                format!("u = {u} is outside [0, 1)"),
            ));
        }
        *a = single_pmf(&p.inner, s)?.quantile(u);
        Ok(())
    })
}

/// Releases a policy handle; null is ignored.
///
/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ordpol_policy_free(policy: *mut OrdpolPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Creates a tint environment from a JSON config (null for defaults) and a seed.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a valid pointer and
/// the handle it receives must be freed with [`ordpol_tint_env_free`].
#[no_mangle]
pub unsafe extern "C" fn ordpol_tint_env_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut OrdpolTintEnv,
) -> OrdpolStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_json.is_null() {
            TintEnvConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Fail(OrdpolStatus::InvalidArgument, "config is not UTF-8".into()))?;
            serde_json::from_str(text)
                .map_err(|e| Fail(OrdpolStatus::InvalidArgument, format!("config: {e}")))?
        };
        let inner = TintEnv::new(config, seed)?;
        *out = Box::into_raw(Box::new(OrdpolTintEnv { inner }));
        Ok(())
    })
}

/// Observation length of the environment, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ordpol_tint_env_obs_dim(env: *const OrdpolTintEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.obs_dim())
}

/// Starts a new episode and writes the first observation.
///
/// # Safety
/// `env` must be a live handle and `obs` valid for `obs_len` writes.
#[no_mangle]
pub unsafe extern "C" fn ordpol_tint_env_reset(
    env: *mut OrdpolTintEnv,
    obs: *mut f64,
    obs_len: usize,
) -> OrdpolStatus {
    guard(|| {
        let e = handle_mut(env, "env")?;
        let out = output(obs, obs_len, "obs")?;
        let s = e.inner.reset()?;
        if out.len() < s.len() {
            return Err(too_small(s.len(), out.len()));
        }
        out[..s.len()].copy_from_slice(&s);
        Ok(())
    })
}

/// Applies class `action` (0-based) and writes the next observation, reward, end-of-episode
/// flag and whether the wearer reacted.
///
/// # Safety
/// `env` must be a live handle, `obs` valid for `obs_len` writes and the scalar outputs valid
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn ordpol_tint_env_step(
    env: *mut OrdpolTintEnv,
    action: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut bool,
    reacted: *mut bool,
) -> OrdpolStatus {
    guard(|| {
        let e = handle_mut(env, "env")?;
        let out = output(obs, obs_len, "obs")?;
        let r = handle_mut(reward, "reward")?;
        let d = handle_mut(done, "done")?;
        let re = handle_mut(reacted, "reacted")?;
        if out.len() < e.inner.obs_dim() {
            return Err(too_small(e.inner.obs_dim(), out.len()));
        }
        let tr = e.inner.step(&Action::discrete(action))?;
        out[..tr.observation.len()].copy_from_slice(&tr.observation);
        *r = tr.reward;
        *d = tr.done;
        *re = tr.info.reacted;
        Ok(())
    })
}

/// Releases an environment handle; null is ignored.
///
/// # Safety
/// `env` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ordpol_tint_env_free(env: *mut OrdpolTintEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}
