//! C ABI over `fedsel`.
//!
//! Every function returns a [`FedselStatus`]. On failure a message is kept
//! per thread and can be read with [`fedsel_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Panics are caught and reported as
//! [`FedselStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fedsel::bandit::{ClientSelector, Observation, Scheme, SelectionConfig};
use fedsel::estimator::{self, CompositionVector};
use fedsel::experiment::{self, ExperimentConfig, SeedRun};
use fedsel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Construction = 4,
    Config = 5,
    Parse = 6,
    Io = 7,
    /// The caller's buffer is too small; the required length was reported.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Experiment configuration.
pub struct FedselConfig(ExperimentConfig);

/// Results of [`fedsel_run`]: one run per configured seed.
pub struct FedselResults(Vec<SeedRun>);

/// Stateful client selector.
pub struct FedselSelector {
    inner: ClientSelector,
    num_classes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(FedselStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => FedselStatus::Shape,
            Error::InvalidArgument(_) => FedselStatus::InvalidArgument,
            Error::Construction(_) => FedselStatus::Construction,
            Error::Config(_) => FedselStatus::Config,
            Error::Parse { .. } => FedselStatus::Parse,
            Error::Io { .. } => FedselStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FedselStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FedselStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedselStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            FedselStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(FedselStatus::NullPointer, format!("{name} is null")))
}

unsafe fn reference_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(FedselStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    reference_mut(p, name)
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    let p = reference(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(slice::from_raw_parts(reference(p, name)?, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    Ok(slice::from_raw_parts_mut(reference_mut(p, name)?, len))
}

/// Copies `text` plus a terminating NUL into `buf`. `needed` always
/// receives the full length including the NUL.
unsafe fn write_text(
    text: &str,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> Result<(), Failure> {
    let len = text.len() + 1;
    if !needed.is_null() {
        *needed = len;
    }
    if cap < len {
        return Err(Failure(
            FedselStatus::BufferTooSmall,
            format!("buffer holds {cap} bytes, {len} needed"),
        ));
    }
    let dst = output(buf.cast::<u8>(), cap, "buf")?;
    dst[..text.len()].copy_from_slice(text.as_bytes());
    dst[text.len()] = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fedsel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a configuration holding the defaults.
///
/// # Safety
/// `out_config` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_config_new(out_config: *mut *mut FedselConfig) -> FedselStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        *slot = Box::into_raw(Box::new(FedselConfig(ExperimentConfig::default())));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`fedsel_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedsel_config_free(config: *mut FedselConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Sets one `key=value` option, using the same keys as the config file.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fedsel_config_set(
    config: *mut FedselConfig,
    key: *const c_char,
    value: *const c_char,
) -> FedselStatus {
    guard(|| {
        let cfg = reference_mut(config, "config")?;
        cfg.0.set(string(key, "key")?, string(value, "value")?)?;
        Ok(())
    })
}

/// Applies a `key=value` configuration file.
///
/// # Safety
/// `config` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedsel_config_apply_file(
    config: *mut FedselConfig,
    path: *const c_char,
) -> FedselStatus {
    guard(|| {
        let cfg = reference_mut(config, "config")?;
        cfg.0.apply_file(Path::new(string(path, "path")?))?;
        Ok(())
    })
}

/// Writes the resolved configuration text into `buf`.
///
/// # Safety
/// `config` must be a live handle; `buf` must hold `cap` bytes; `needed`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn fedsel_config_dump(
    config: *const FedselConfig,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> FedselStatus {
    guard(|| {
        let cfg = reference(config, "config")?;
        write_text(&cfg.0.to_config_string(), buf, cap, needed)
    })
}

/// Runs every configured seed.
///
/// # Safety
/// `config` must be a live handle; `out_results` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_run(
    config: *const FedselConfig,
    out_results: *mut *mut FedselResults,
) -> FedselStatus {
    guard(|| {
        let cfg = reference(config, "config")?;
        let slot = out(out_results, "out_results")?;
        let runs = experiment::run_experiment(&cfg.0)?;
        *slot = Box::into_raw(Box::new(FedselResults(runs)));
        Ok(())
    })
}

/// # Safety
/// `results` must come from [`fedsel_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedsel_results_free(results: *mut FedselResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

fn run_at(results: &FedselResults, run: usize) -> Result<&SeedRun, Failure> {
    results
        .0
        .get(run)
        .ok_or_else(|| invalid(format!("run {run} out of range ({} runs)", results.0.len())))
}

/// # Safety
/// `results` must be a live handle; `out_count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_results_num_runs(
    results: *const FedselResults,
    out_count: *mut usize,
) -> FedselStatus {
    guard(|| {
        *out(out_count, "out_count")? = reference(results, "results")?.0.len();
        Ok(())
    })
}

/// Seed and number of logged rounds (warm-up included) of run `run`.
///
/// # Safety
/// `results` must be a live handle; the out pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_results_run_info(
    results: *const FedselResults,
    run: usize,
    out_seed: *mut u64,
    out_rounds: *mut usize,
) -> FedselStatus {
    guard(|| {
        let r = run_at(reference(results, "results")?, run)?;
        *out(out_seed, "out_seed")? = r.seed;
        *out(out_rounds, "out_rounds")? = r.metrics.len();
        Ok(())
    })
}

/// Copies the per-round test accuracies of run `run` into `buf`.
///
/// # Safety
/// `results` must be a live handle; `buf` must hold `cap` doubles;
/// `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn fedsel_results_accuracy(
    results: *const FedselResults,
    run: usize,
    buf: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> FedselStatus {
    guard(|| {
        let r = run_at(reference(results, "results")?, run)?;
        let n = r.metrics.len();
        if !needed.is_null() {
            *needed = n;
        }
        if cap < n {
            return Err(Failure(
                FedselStatus::BufferTooSmall,
                format!("buffer holds {cap} values, {n} needed"),
            ));
        }
        let dst = output(buf, n, "buf")?;
        dst.iter_mut()
            .zip(&r.metrics)
            .for_each(|(d, m)| *d = m.test_accuracy);
        Ok(())
    })
}

/// First round of run `run` reaching `target` accuracy. `out_reached` is set
/// to 0 and `out_round` left untouched when the target is never reached.
///
/// # Safety
/// `results` must be a live handle; the out pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_results_rounds_to_target(
    results: *const FedselResults,
    run: usize,
    target: f64,
    out_reached: *mut u8,
    out_round: *mut u64,
) -> FedselStatus {
    guard(|| {
        let r = run_at(reference(results, "results")?, run)?;
        let reached = out(out_reached, "out_reached")?;
        match experiment::rounds_to_target(&r.metrics, target) {
            Some(round) => {
                *out(out_round, "out_round")? = round;
                *reached = 1;
            }
            None => *reached = 0,
        }
        Ok(())
    })
}

/// Writes the metrics CSV for all runs.
///
/// # Safety
/// `results` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedsel_results_write_metrics(
    results: *const FedselResults,
    path: *const c_char,
) -> FedselStatus {
    guard(|| {
        let r = reference(results, "results")?;
        let path = Path::new(string(path, "path")?);
        experiment::emit_metrics(r.0.iter().flat_map(|run| &run.metrics), path)?;
        Ok(())
    })
}

/// Creates a selector. `scheme` is `"cucb"`, `"greedy"` or `"random"`.
///
/// # Safety
/// `scheme` must be a NUL-terminated string; `out_selector` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_selector_new(
    num_clients: usize,
    budget: usize,
    alpha: f64,
    rho: f64,
    scheme: *const c_char,
    num_classes: usize,
    seed: u64,
    out_selector: *mut *mut FedselSelector,
) -> FedselStatus {
    guard(|| {
        let slot = out(out_selector, "out_selector")?;
        let scheme: Scheme = string(scheme, "scheme")?.parse()?;
        let cfg = SelectionConfig {
            num_clients,
            budget,
            alpha,
            rho,
            scheme,
        };
        let inner = ClientSelector::new(cfg, num_classes, seed)?;
        *slot = Box::into_raw(Box::new(FedselSelector { inner, num_classes }));
        Ok(())
    })
}

/// # Safety
/// `selector` must come from [`fedsel_selector_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedsel_selector_free(selector: *mut FedselSelector) {
    if !selector.is_null() {
        drop(Box::from_raw(selector));
    }
}

/// Picks the next client set and writes its ids into `out_ids`.
/// `out_warm_up` may be null.
///
/// # Safety
/// `selector` must be a live handle; `out_ids` must hold `cap` entries;
/// `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_selector_select(
    selector: *mut FedselSelector,
    out_ids: *mut usize,
    cap: usize,
    out_len: *mut usize,
    out_warm_up: *mut u8,
) -> FedselStatus {
    guard(|| {
        let sel = reference_mut(selector, "selector")?;
        let len = out(out_len, "out_len")?;
        // budget bounds every selection, so check before advancing time
        let budget = sel.inner.config().budget;
        if cap < budget {
            *len = budget;
            return Err(Failure(
                FedselStatus::BufferTooSmall,
                format!("buffer holds {cap} ids, up to {budget} needed"),
            ));
        }
        let selection = sel.inner.select()?;
        output(out_ids, cap, "out_ids")?[..selection.clients.len()]
            .copy_from_slice(&selection.clients);
        *len = selection.clients.len();
        if !out_warm_up.is_null() {
            *out_warm_up = u8::from(selection.warm_up);
        }
        Ok(())
    })
}

/// Feeds back the round's results. `compositions` is `count` rows of
/// `num_classes` values; row `i` and `scaled_rewards[i]` belong to
/// `client_ids[i]`. `selected` lists the clients that were played.
///
/// # Safety
/// `selector` must be a live handle; every array must hold the stated
/// number of elements.
#[no_mangle]
pub unsafe extern "C" fn fedsel_selector_observe(
    selector: *mut FedselSelector,
    selected: *const usize,
    num_selected: usize,
    client_ids: *const usize,
    compositions: *const f64,
    scaled_rewards: *const f64,
    count: usize,
) -> FedselStatus {
    guard(|| {
        let sel = reference_mut(selector, "selector")?;
        let c = sel.num_classes;
        let selected = input(selected, num_selected, "selected")?;
        let ids = input(client_ids, count, "client_ids")?;
        let comps = input(compositions, count * c, "compositions")?;
        let rewards = input(scaled_rewards, count, "scaled_rewards")?;
        let observations = ids
            .iter()
            .zip(comps.chunks(c.max(1)))
            .zip(rewards)
            .map(|((&client_id, row), &scaled_reward)| {
                Ok(Observation {
                    client_id,
                    composition: CompositionVector::new(row.to_vec())?,
                    scaled_reward,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        sel.inner.observe(selected, &observations)?;
        Ok(())
    })
}

/// Composition estimate from `n` squared gradient norms, written to `out`
/// (`n` values). `out_saturated` may be null.
///
/// # Safety
/// `norms` and `out_ratios` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fedsel_composition_estimate(
    norms: *const f64,
    n: usize,
    beta: f64,
    out_ratios: *mut f64,
    out_saturated: *mut u8,
) -> FedselStatus {
    guard(|| {
        let g = input(norms, n, "norms")?;
        let dst = output(out_ratios, n, "out_ratios")?;
        let est = estimator::composition_estimate(g, beta)?;
        dst.copy_from_slice(est.composition.as_slice());
        if !out_saturated.is_null() {
            *out_saturated = u8::from(est.saturated);
        }
        Ok(())
    })
}

/// KL divergence of a composition from uniform.
///
/// # Safety
/// `ratios` must hold `n` doubles; `out_kl` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_kl_to_uniform(
    ratios: *const f64,
    n: usize,
    out_kl: *mut f64,
) -> FedselStatus {
    guard(|| {
        let r = CompositionVector::new(input(ratios, n, "ratios")?.to_vec())?;
        *out(out_kl, "out_kl")? = estimator::kl_to_uniform(&r);
        Ok(())
    })
}

/// `1 / max(KL, epsilon)` for a composition.
///
/// # Safety
/// `ratios` must hold `n` doubles; `out_reward` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedsel_client_reward(
    ratios: *const f64,
    n: usize,
    epsilon: f64,
    out_reward: *mut f64,
) -> FedselStatus {
    guard(|| {
        let r = CompositionVector::new(input(ratios, n, "ratios")?.to_vec())?;
        *out(out_reward, "out_reward")? = estimator::client_reward(&r, epsilon);
        Ok(())
    })
}
