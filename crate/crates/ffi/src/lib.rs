//! C ABI over `puma_lab`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`PumaStatus`]; on failure `puma_last_error` yields a message
//! for the calling thread. Masked positions are passed as the id `vocab`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use puma_lab::analysis::{chernoff_information, verify_marginal_agreement, VerifyMode};
use puma_lab::chains::{trajectory_distance, UnmaskStepMap};
use puma_lab::dist::{build_zm, TabularDistribution, ZmSpec};
use puma_lab::learner::{KSchedule, PumaTrainer, TabularMDM};
use puma_lab::oracle::exact_posterior;
use puma_lab::policy::{PolicyKind, PolicySpec, SelectCount};
use puma_lab::sequence::{MaskedSequence, Vocab};
use puma_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PumaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ImpossibleContext = 3,
    StateSpaceTooLarge = 4,
    Parse = 5,
    Io = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PumaPolicy {
    MaxProb = 0,
    Margin = 1,
    NegEntropy = 2,
    Random = 3,
    Positional = 4,
}

impl From<PumaPolicy> for PolicyKind {
    fn from(p: PumaPolicy) -> Self {
        match p {
            PumaPolicy::MaxProb => PolicyKind::MaxProb,
            PumaPolicy::Margin => PolicyKind::Margin,
            PumaPolicy::NegEntropy => PolicyKind::NegEntropy,
            PumaPolicy::Random => PolicyKind::Random,
            PumaPolicy::Positional => PolicyKind::Positional,
        }
    }
}

/// Opaque data distribution.
pub struct PumaDist(TabularDistribution);

/// Opaque tabular learner.
pub struct PumaModel(TabularMDM);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PumaStatus {
    match e {
        Error::ImpossibleContext(_) => PumaStatus::ImpossibleContext,
        Error::StateSpaceTooLarge { .. } => PumaStatus::StateSpaceTooLarge,
        Error::Parse { .. } => PumaStatus::Parse,
        Error::Io(_) => PumaStatus::Io,
        _ => PumaStatus::InvalidArgument,
    }
}

struct Fail(PumaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PumaStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PumaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PumaStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            PumaStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a>(p: *mut f64, cap: usize, need: usize) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null("output buffer"));
    }
    if cap < need {
        return Err(Fail(PumaStatus::BufferTooSmall, format!("output buffer holds {cap} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn write<T>(p: *mut T, v: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null("output pointer"));
    }
    p.write(v);
    Ok(())
}

unsafe fn masked(ids: *const u32, len: usize, vocab: Vocab) -> Result<MaskedSequence, Fail> {
    Ok(MaskedSequence::from_ids(slice(ids, len, "ids")?.to_vec(), vocab)?)
}

/// Copy the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn puma_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Build the `Z_m` family with identity layout (latents, then `Y`).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn puma_dist_zm(m: u32, d: usize, eta: f64, theta: u32, out: *mut *mut PumaDist) -> PumaStatus {
    guard(|| {
        let dist = build_zm(&ZmSpec::new(m, d, eta, theta))?;
        write(out, Box::into_raw(Box::new(PumaDist(dist))))
    })
}

/// Build a distribution from `n` sequences (`tokens` is `n * len`,
/// row-major) with positive weights `probs`, normalized to sum to one.
///
/// # Safety
/// `tokens` must hold `n * len` values, `probs` `n` values, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn puma_dist_table(
    len: usize,
    vocab: u32,
    tokens: *const u32,
    probs: *const f64,
    n: usize,
    out: *mut *mut PumaDist,
) -> PumaStatus {
    guard(|| {
        let total = n.checked_mul(len).ok_or_else(|| Fail(PumaStatus::InvalidArgument, "size overflow".into()))?;
        let toks = slice(tokens, total, "tokens")?;
        let ps = slice(probs, n, "probs")?;
        let support = ps.iter().enumerate().map(|(r, &p)| (toks[r * len..(r + 1) * len].to_vec(), p)).collect();
        let dist = TabularDistribution::build(len, Vocab::new(vocab)?, support)?;
        write(out, Box::into_raw(Box::new(PumaDist(dist))))
    })
}

/// # Safety
/// `dist` must come from a `puma_dist_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn puma_dist_free(dist: *mut PumaDist) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Sequence length of `dist`, or 0 for null.
///
/// # Safety
/// `dist` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn puma_dist_len(dist: *const PumaDist) -> usize {
    dist.as_ref().map_or(0, |d| d.0.len())
}

/// Vocabulary size of `dist` (the mask id), or 0 for null.
///
/// # Safety
/// `dist` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn puma_dist_vocab(dist: *const PumaDist) -> u32 {
    dist.as_ref().map_or(0, |d| d.0.vocab().size())
}

/// Exact `p(x0^i = · | z)` into `out` (`vocab` values).
///
/// # Safety
/// `ids` must hold `len` values and `out` `cap` values.
#[no_mangle]
pub unsafe extern "C" fn puma_exact_posterior(
    dist: *const PumaDist,
    ids: *const u32,
    len: usize,
    index: usize,
    out: *mut f64,
    cap: usize,
) -> PumaStatus {
    guard(|| {
        let d = &dist.as_ref().ok_or_else(|| null("dist"))?.0;
        let z = masked(ids, len, d.vocab())?;
        let c = exact_posterior(d, &z, index)?;
        out_slice(out, cap, c.probs().len())?.copy_from_slice(c.probs());
        Ok(())
    })
}

/// `C(P, Q)` for two laws over `n` outcomes.
///
/// # Safety
/// `p` and `q` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn puma_chernoff_information(p: *const f64, q: *const f64, n: usize, out: *mut f64) -> PumaStatus {
    guard(|| {
        let c = chernoff_information(slice(p, n, "p")?, slice(q, n, "q")?)?;
        write(out, c)
    })
}

/// Exact marginal agreement check with a fixed selection count. Writes the
/// largest TV over grid steps and whether it is below tolerance.
///
/// # Safety
/// `out_max_tv` and `out_passed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn puma_verify_marginal(
    dist: *const PumaDist,
    policy: PumaPolicy,
    count: usize,
    k: usize,
    out_max_tv: *mut f64,
    out_passed: *mut bool,
) -> PumaStatus {
    guard(|| {
        let d = &dist.as_ref().ok_or_else(|| null("dist"))?.0;
        let spec = PolicySpec::new(policy.into()).with_count(SelectCount::Fixed(count));
        let rep = verify_marginal_agreement(d, &spec, k, VerifyMode::Exact)?;
        write(out_max_tv, rep.max_tv)?;
        write(out_passed, rep.passed())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn puma_model_new(len: usize, vocab: u32, learning_rate: f64, out: *mut *mut PumaModel) -> PumaStatus {
    guard(|| {
        let m = TabularMDM::new(len, Vocab::new(vocab)?, learning_rate)?;
        write(out, Box::into_raw(Box::new(PumaModel(m))))
    })
}

/// # Safety
/// `model` must come from `puma_model_new`/`puma_model_load` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn puma_model_free(model: *mut PumaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model probabilities at masked position `index` of `ids`.
///
/// # Safety
/// `ids` must hold `len` values and `out` `cap` values.
#[no_mangle]
pub unsafe extern "C" fn puma_model_forward(
    model: *const PumaModel,
    ids: *const u32,
    len: usize,
    index: usize,
    out: *mut f64,
    cap: usize,
) -> PumaStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let z = masked(ids, len, m.vocab())?;
        let table = m.forward(&z);
        let row = table
            .get(index)
            .ok_or_else(|| Fail(PumaStatus::InvalidArgument, format!("position {index} is not masked")))?;
        out_slice(out, cap, row.probs().len())?.copy_from_slice(row.probs());
        Ok(())
    })
}

/// Run `steps` PUMA iterations (batch `batch`, max-prob staged chains,
/// `K = L`) on `dist`. Writes the mean loss of the last step.
///
/// # Safety
/// Handles must be live; `out_loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn puma_model_train_puma(
    model: *mut PumaModel,
    dist: *const PumaDist,
    steps: u64,
    batch: usize,
    seed: u64,
    out_loss: *mut f64,
) -> PumaStatus {
    guard(|| {
        let m = &mut model.as_mut().ok_or_else(|| null("model"))?.0;
        let d = &dist.as_ref().ok_or_else(|| null("dist"))?.0;
        let policy = PolicySpec::default().with_count(SelectCount::Staged);
        let mut rng = puma_lab::rng::derive(seed, "ffi/train", 0);
        let mut trainer = PumaTrainer::new(d, policy, KSchedule::fixed(d.len()), batch, 0, &mut rng)?;
        let mut loss = f64::NAN;
        for _ in 0..steps {
            loss = trainer.step(m, d, &mut rng)?.loss;
        }
        if !out_loss.is_null() {
            out_loss.write(loss);
        }
        Ok(())
    })
}

unsafe fn read_path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PumaStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Save `model` in its text format.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn puma_model_save(model: *const PumaModel, path: *const c_char) -> PumaStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let p = read_path(path)?;
        std::fs::write(p, m.to_text()).map_err(|e| Fail(PumaStatus::Io, format!("{p}: {e}")))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn puma_model_load(path: *const c_char, out: *mut *mut PumaModel) -> PumaStatus {
    guard(|| {
        let p = read_path(path)?;
        let text = std::fs::read_to_string(p).map_err(|e| Fail(PumaStatus::Io, format!("{p}: {e}")))?;
        let m = TabularMDM::from_text(&text)?;
        write(out, Box::into_raw(Box::new(PumaModel(m))))
    })
}

/// Mean absolute difference of two per-position reveal-step maps.
///
/// # Safety
/// `a` and `b` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn puma_trajectory_distance(a: *const usize, b: *const usize, len: usize, out: *mut f64) -> PumaStatus {
    guard(|| {
        let a = UnmaskStepMap(slice(a, len, "a")?.to_vec());
        let b = UnmaskStepMap(slice(b, len, "b")?.to_vec());
        write(out, trajectory_distance(&a, &b)?)
    })
}
