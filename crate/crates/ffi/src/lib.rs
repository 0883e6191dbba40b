//! C ABI over the framepress engine.
//!
//! Concepts map one-to-one onto the Rust crate: an opaque [`FpEngine`] wraps
//! a cache bank plus its rotary tables; calls return an [`FpStatus`] code and
//! structured results as heap-allocated JSON strings. Every failing call
//! stores a message readable through [`fp_last_error`] (thread-local, valid
//! until the same thread's next call into this library).
//!
//! Handles are not synchronized: one engine must not be used from two
//! threads at once. All strings crossing the boundary are UTF-8 and
//! NUL-terminated; strings returned by this library must be released with
//! [`fp_string_free`].

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Deserialize;

use framepress::cache::CacheBank;
use framepress::policy::{policy_step, CompressionReport};
use framepress::rope::{build_frequencies, DimSplit, TokenPosition};
use framepress::simulator::{derive_rng, rollout, summarize, RolloutOptions, StreamModel};
use framepress::{CachePolicyConfig, Error};

/// Tag word separating compression randomness from any other derived stream.
const POLICY_STREAM: u64 = 4;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Rejected configuration (bad JSON, unknown field, invalid budget).
    Config = 3,
    /// The engine refused the operation at runtime.
    Runtime = 4,
    /// An internal invariant failed; the engine may be inconsistent.
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: std::cell::RefCell<CString> =
        std::cell::RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::default());
}

fn status_of(err: &Error) -> FpStatus {
    if err.is_config() {
        FpStatus::Config
    } else {
        FpStatus::Runtime
    }
}

fn fail(status: FpStatus, msg: &str) -> FpStatus {
    set_error(msg);
    status
}

fn fail_with(err: Error) -> FpStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Runs `f` with panics converted to [`FpStatus::Panic`].
fn guarded(f: impl FnOnce() -> FpStatus) -> FpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(FpStatus::Panic, "internal panic crossed the C boundary"),
    }
}

/// # Safety: `ptr` must be NULL or a NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, FpStatus> {
    if ptr.is_null() {
        return Err(fail(FpStatus::NullPointer, &format!("{name} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(FpStatus::InvalidUtf8, &format!("{name} is not UTF-8")))
}

fn out_string(dst: *mut *mut c_char, text: String) -> FpStatus {
    if dst.is_null() {
        return FpStatus::Ok; // caller opted out of the payload
    }
    match CString::new(text.replace('\0', " ")) {
        Ok(cstring) => {
            unsafe { *dst = cstring.into_raw() };
            FpStatus::Ok
        }
        Err(_) => fail(FpStatus::Runtime, "payload could not be NUL-terminated"),
    }
}

/// Geometry and policy of one engine, parsed from JSON. Unknown keys are
/// rejected; omitted keys take these defaults.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EngineConfig {
    cache: CachePolicyConfig,
    num_layers: usize,
    num_heads: usize,
    head_dim: usize,
    rope_base: f64,
    seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            cache: CachePolicyConfig::default(),
            num_layers: 1,
            num_heads: 1,
            head_dim: 64,
            rope_base: 10_000.0,
            seed: 0,
        }
    }
}

/// Opaque engine handle: the caches of one model under one policy.
pub struct FpEngine {
    bank: CacheBank,
    num_heads: usize,
    head_dim: usize,
    seed: u64,
    /// Bumped per compress call so each one draws fresh policy randomness.
    invocations: u64,
}

impl FpEngine {
    fn row_width(&self) -> usize {
        self.num_heads * self.head_dim
    }
}

unsafe fn engine_arg<'a>(engine: *const FpEngine) -> Result<&'a FpEngine, FpStatus> {
    engine
        .as_ref()
        .ok_or_else(|| fail(FpStatus::NullPointer, "engine is NULL"))
}

unsafe fn engine_arg_mut<'a>(engine: *mut FpEngine) -> Result<&'a mut FpEngine, FpStatus> {
    engine
        .as_mut()
        .ok_or_else(|| fail(FpStatus::NullPointer, "engine is NULL"))
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the current thread's most recent failure, or an empty string.
/// The pointer stays valid until this thread's next call into the library;
/// do not free it.
#[no_mangle]
pub extern "C" fn fp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `text` must be a pointer previously returned through an out-parameter of
/// this library, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fp_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Creates an engine from a JSON config:
/// `{"cache": {...}, "num_layers": L, "num_heads": H, "head_dim": D,
///   "rope_base": B, "seed": S}` — all keys optional.
/// On success writes the handle to `out_engine`.
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out_engine` must point to
/// writable memory. The handle must be released with [`fp_engine_free`].
#[no_mangle]
pub unsafe extern "C" fn fp_engine_new(
    config_json: *const c_char,
    out_engine: *mut *mut FpEngine,
) -> FpStatus {
    guarded(|| {
        if out_engine.is_null() {
            return fail(FpStatus::NullPointer, "out_engine is NULL");
        }
        let text = match str_arg(config_json, "config_json") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let config: EngineConfig = match serde_json::from_str(text) {
            Ok(config) => config,
            Err(err) => return fail_with(err.into()),
        };
        let split = match DimSplit::default_for(config.head_dim) {
            Ok(split) => split,
            Err(err) => return fail_with(err),
        };
        let freqs = match build_frequencies(config.head_dim, split, config.rope_base) {
            Ok(freqs) => freqs,
            Err(err) => return fail_with(err),
        };
        let bank = match CacheBank::new(
            config.cache.clone(),
            freqs,
            config.num_layers,
            config.num_heads,
        ) {
            Ok(bank) => bank,
            Err(err) => return fail_with(err),
        };
        let engine = Box::new(FpEngine {
            bank,
            num_heads: config.num_heads,
            head_dim: config.head_dim,
            seed: config.seed,
            invocations: 0,
        });
        *out_engine = Box::into_raw(engine);
        FpStatus::Ok
    })
}

/// Releases an engine handle. NULL is a no-op.
///
/// # Safety
/// `engine` must come from [`fp_engine_new`] and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_free(engine: *mut FpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of independent caches the engine maintains (layers, or
/// layers x heads under per-head selection).
///
/// # Safety
/// `engine` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_cache_count(
    engine: *const FpEngine,
    out_count: *mut usize,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if out_count.is_null() {
            return fail(FpStatus::NullPointer, "out_count is NULL");
        }
        *out_count = engine.bank.cache_count();
        FpStatus::Ok
    })
}

/// Tokens currently held by each cache.
///
/// # Safety
/// `engine` must be a live handle; `out_tokens` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_token_count(
    engine: *const FpEngine,
    out_tokens: *mut usize,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if out_tokens.is_null() {
            return fail(FpStatus::NullPointer, "out_tokens is NULL");
        }
        *out_tokens = engine.bank.token_count();
        FpStatus::Ok
    })
}

/// Frame-equivalents currently held (token count divided by frame size,
/// rounded up).
///
/// # Safety
/// `engine` must be a live handle; `out_frames` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_frame_count(
    engine: *const FpEngine,
    out_frames: *mut usize,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if out_frames.is_null() {
            return fail(FpStatus::NullPointer, "out_frames is NULL");
        }
        *out_frames = match engine.bank.cache(0) {
            Some(cache) => cache.frame_equivalents(),
            None => 0,
        };
        FpStatus::Ok
    })
}

/// True once the window has filled to the compression trigger.
///
/// # Safety
/// `engine` must be a live handle; `out_due` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_trigger_due(
    engine: *const FpEngine,
    out_due: *mut bool,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if out_due.is_null() {
            return fail(FpStatus::NullPointer, "out_due is NULL");
        }
        *out_due = engine.bank.trigger_due();
        FpStatus::Ok
    })
}

/// Appends one chunk to every cache of `layer`.
///
/// `keys`, `values` and `queries` each hold `rows * num_heads * head_dim`
/// floats, row-major; `positions` holds `rows * 3` unsigned ints as
/// `(frame, h, w)` triples. Keys and queries arrive raw and are
/// position-embedded inside; values pass through untouched. Chunks must
/// continue the frame timeline, and every layer must receive the same chunk
/// before the next one starts.
///
/// # Safety
/// `engine` must be a live handle and the four arrays must be readable at
/// the lengths above.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_append_chunk(
    engine: *mut FpEngine,
    layer: usize,
    rows: usize,
    keys: *const f32,
    values: *const f32,
    queries: *const f32,
    positions: *const u32,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg_mut(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if rows == 0 {
            return fail(FpStatus::Config, "rows must be at least 1");
        }
        for (ptr, name) in [(keys, "keys"), (values, "values"), (queries, "queries")] {
            if ptr.is_null() {
                return fail(FpStatus::NullPointer, &format!("{name} is NULL"));
            }
        }
        if positions.is_null() {
            return fail(FpStatus::NullPointer, "positions is NULL");
        }

        let width = engine.row_width();
        let to_rows = |ptr: *const f32| -> Vec<Vec<f32>> {
            let flat = std::slice::from_raw_parts(ptr, rows * width);
            flat.chunks_exact(width).map(|row| row.to_vec()).collect()
        };
        let keys = to_rows(keys);
        let values = to_rows(values);
        let queries = to_rows(queries);
        let positions: Vec<TokenPosition> = std::slice::from_raw_parts(positions, rows * 3)
            .chunks_exact(3)
            .map(|p| TokenPosition::new(p[0], p[1], p[2]))
            .collect();

        match engine
            .bank
            .append_layer_chunk(layer, &keys, &values, &queries, &positions)
        {
            Ok(()) => FpStatus::Ok,
            Err(err) => fail_with(err),
        }
    })
}

/// Runs the configured compression policy on every cache of `layer`, if the
/// window has reached its trigger. `denoise_queries` may be NULL when
/// `denoise_rows` is 0; otherwise it holds `denoise_rows * num_heads *
/// head_dim` raw floats that are position-embedded against the cache's next
/// frames before scoring.
///
/// When `out_reports_json` is non-NULL it receives a JSON array with one
/// entry per cache of the layer: a report object, or `null` when the window
/// was still below the trigger. Free it with [`fp_string_free`].
///
/// # Safety
/// `engine` must be a live handle; buffers must be readable at the stated
/// lengths; `out_reports_json`, when non-NULL, must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_compress(
    engine: *mut FpEngine,
    layer: usize,
    denoise_queries: *const f32,
    denoise_rows: usize,
    out_reports_json: *mut *mut c_char,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg_mut(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if denoise_rows > 0 && denoise_queries.is_null() {
            return fail(FpStatus::NullPointer, "denoise_queries is NULL");
        }
        let width = engine.row_width();
        let head_dim = engine.head_dim;
        let denoise_full: Vec<Vec<f32>> = if denoise_rows == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(denoise_queries, denoise_rows * width)
                .chunks_exact(width)
                .map(|row| row.to_vec())
                .collect()
        };

        let indices = engine.bank.layer_cache_indices(layer);
        if indices.end > engine.bank.cache_count() {
            return fail_with(Error::IndexOutOfRange {
                index: layer,
                len: engine.bank.num_layers(),
            });
        }

        let cfg = engine.bank.config().clone();
        let freqs = engine.bank.frequencies().clone();
        let seed = engine.seed;
        let invocation = engine.invocations;
        engine.invocations += 1;

        let mut reports: Vec<Option<CompressionReport>> = Vec::new();
        for ci in indices {
            let (_, head) = engine.bank.cache_identity(ci);
            let recent_rows: Vec<Vec<f32>> = engine
                .bank
                .recent_queries(ci)
                .iter()
                .flat_map(|fq| fq.rows.iter().cloned())
                .collect();
            let denoise_rows: Vec<Vec<f32>> = match head {
                Some(h) => denoise_full
                    .iter()
                    .map(|row| row[h * head_dim..(h + 1) * head_dim].to_vec())
                    .collect(),
                None => denoise_full.clone(),
            };
            let mut rng = derive_rng(seed, ci as u64, invocation, POLICY_STREAM);
            let cache = engine.bank.cache_mut(ci).expect("index in range");
            match policy_step(cache, &recent_rows, &denoise_rows, &cfg, &freqs, &mut rng, 0) {
                Ok(report) => reports.push(report),
                Err(err) => return fail_with(err),
            }
        }

        match serde_json::to_string(&reports) {
            Ok(json) => out_string(out_reports_json, json),
            Err(err) => fail_with(err.into()),
        }
    })
}

/// Serializes the engine's full state (policy config plus every cache) to
/// JSON. Free the string with [`fp_string_free`].
///
/// # Safety
/// `engine` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_engine_export_json(
    engine: *const FpEngine,
    out_json: *mut *mut c_char,
) -> FpStatus {
    guarded(|| {
        let engine = match engine_arg(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        if out_json.is_null() {
            return fail(FpStatus::NullPointer, "out_json is NULL");
        }
        let state = serde_json::json!({
            "config": engine.bank.config(),
            "caches": engine.bank.caches(),
        });
        match serde_json::to_string(&state) {
            Ok(json) => out_string(out_json, json),
            Err(err) => fail_with(err.into()),
        }
    })
}

/// Simulation run config, mirroring the CLI's file format.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    model: StreamModel,
    cache: CachePolicyConfig,
    chunks: usize,
    seeds: Vec<u64>,
    oracle: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: StreamModel::default(),
            cache: CachePolicyConfig::default(),
            chunks: 40,
            seeds: Vec::new(),
            oracle: false,
        }
    }
}

/// Runs one synthetic rollout per seed and writes a JSON array of
/// `{"seed": ..., "summary": {...}}` rows to `out_summary_json`. The config
/// follows the CLI's format: `{"model": {...}, "cache": {...}, "chunks": N,
/// "seeds": [...], "oracle": bool}`, all keys optional. Free the result
/// with [`fp_string_free`].
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out_summary_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fp_simulate(
    config_json: *const c_char,
    out_summary_json: *mut *mut c_char,
) -> FpStatus {
    guarded(|| {
        if out_summary_json.is_null() {
            return fail(FpStatus::NullPointer, "out_summary_json is NULL");
        }
        let text = match str_arg(config_json, "config_json") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let config: SimulateConfig = match serde_json::from_str(text) {
            Ok(config) => config,
            Err(err) => return fail_with(err.into()),
        };
        if config.chunks == 0 {
            return fail(FpStatus::Config, "chunks must be at least 1");
        }
        let seeds = if config.seeds.is_empty() {
            vec![config.model.seed]
        } else {
            config.seeds.clone()
        };

        let mut rows = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let model = StreamModel {
                seed,
                ..config.model.clone()
            };
            let output = match rollout(
                &model,
                &config.cache,
                config.chunks,
                RolloutOptions {
                    oracle: config.oracle,
                },
            ) {
                Ok(output) => output,
                Err(err) => return fail_with(err),
            };
            rows.push(serde_json::json!({
                "seed": seed,
                "summary": summarize(&output, &config.cache),
            }));
        }
        match serde_json::to_string(&rows) {
            Ok(json) => out_string(out_summary_json, json),
            Err(err) => fail_with(err.into()),
        }
    })
}
