//! Exercises the C ABI from Rust, then compiles and runs the C smoke
//! program against the generated header and the built static library.

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use framepress_ffi::{
    fp_engine_append_chunk, fp_engine_compress, fp_engine_export_json, fp_engine_free,
    fp_engine_new, fp_engine_token_count, fp_engine_trigger_due, fp_last_error, fp_simulate,
    fp_string_free, FpEngine, FpStatus,
};

const SMALL_CONFIG: &str = r#"{
  "cache": {"sink_frames": 1, "budget_frames": 3, "recent_frames": 1,
            "max_window_frames": 5, "tokens_per_frame": 4, "chunk_frames": 1},
  "num_layers": 1, "num_heads": 1, "head_dim": 16, "seed": 9
}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fp_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn take_string(ptr: *mut std::ffi::c_char) -> String {
    assert!(!ptr.is_null());
    let text = unsafe { CStr::from_ptr(ptr) }.to_string_lossy().into_owned();
    unsafe { fp_string_free(ptr) };
    text
}

fn new_engine(config: &str) -> *mut FpEngine {
    let config = CString::new(config).unwrap();
    let mut engine = ptr::null_mut();
    let status = unsafe { fp_engine_new(config.as_ptr(), &mut engine) };
    assert_eq!(status, FpStatus::Ok, "{}", last_error());
    engine
}

/// Appends one 4-token frame; rows cycle small deterministic patterns.
fn append_frame(engine: *mut FpEngine, frame: u32) {
    let rows = 4;
    let dim = 16;
    let keys: Vec<f32> = (0..rows * dim).map(|i| 0.25 * (i % 7) as f32 - 0.5).collect();
    let values: Vec<f32> = (0..rows * dim).map(|_| frame as f32 + 0.5).collect();
    let queries: Vec<f32> = (0..rows * dim).map(|i| 0.125 * (i % 5) as f32).collect();
    let positions: Vec<u32> = (0..rows as u32)
        .flat_map(|t| [frame, t / 2, t % 2])
        .collect();
    let status = unsafe {
        fp_engine_append_chunk(
            engine,
            0,
            rows,
            keys.as_ptr(),
            values.as_ptr(),
            queries.as_ptr(),
            positions.as_ptr(),
        )
    };
    assert_eq!(status, FpStatus::Ok, "frame {frame}: {}", last_error());
}

#[test]
fn engine_lifecycle_and_compression() {
    let engine = new_engine(SMALL_CONFIG);

    let mut fired = Vec::new();
    for frame in 0..6 {
        append_frame(engine, frame);
        let mut reports = ptr::null_mut();
        let status = unsafe { fp_engine_compress(engine, 0, ptr::null(), 0, &mut reports) };
        assert_eq!(status, FpStatus::Ok, "{}", last_error());
        let rows: Vec<Option<serde_json::Value>> =
            serde_json::from_str(&take_string(reports)).unwrap();
        assert_eq!(rows.len(), 1);
        if let Some(report) = &rows[0] {
            fired.push((frame, report["pre_size"].as_u64(), report["post_size"].as_u64()));
        }
    }
    // Trigger is 5 frames of 4 tokens; only the append that reaches 20
    // tokens compresses, down to the 3-frame budget.
    assert_eq!(fired, vec![(4, Some(20), Some(12))]);

    let mut tokens = 0usize;
    assert_eq!(
        unsafe { fp_engine_token_count(engine, &mut tokens) },
        FpStatus::Ok
    );
    assert_eq!(tokens, 16, "12 after compression plus one more frame");

    let mut due = true;
    assert_eq!(unsafe { fp_engine_trigger_due(engine, &mut due) }, FpStatus::Ok);
    assert!(!due);

    let mut state = ptr::null_mut();
    assert_eq!(
        unsafe { fp_engine_export_json(engine, &mut state) },
        FpStatus::Ok
    );
    let state: serde_json::Value = serde_json::from_str(&take_string(state)).unwrap();
    assert_eq!(state["config"]["budget_frames"], 3);
    assert_eq!(state["caches"].as_array().unwrap().len(), 1);

    unsafe { fp_engine_free(engine) };
}

#[test]
fn error_paths_set_status_and_message() {
    let mut engine = ptr::null_mut();
    assert_eq!(
        unsafe { fp_engine_new(ptr::null(), &mut engine) },
        FpStatus::NullPointer
    );
    assert!(last_error().contains("config_json"));

    let bad = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { fp_engine_new(bad.as_ptr(), &mut engine) },
        FpStatus::Config
    );
    assert!(!last_error().is_empty());

    let unknown = CString::new(r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(
        unsafe { fp_engine_new(unknown.as_ptr(), &mut engine) },
        FpStatus::Config
    );

    let inverted =
        CString::new(r#"{"cache": {"sink_frames": 9, "budget_frames": 3}}"#).unwrap();
    assert_eq!(
        unsafe { fp_engine_new(inverted.as_ptr(), &mut engine) },
        FpStatus::Config
    );
    assert!(last_error().contains("sink_frames"), "{}", last_error());

    let mut tokens = 0usize;
    assert_eq!(
        unsafe { fp_engine_token_count(ptr::null(), &mut tokens) },
        FpStatus::NullPointer
    );

    let engine = new_engine(SMALL_CONFIG);
    // Zero rows and out-of-range layers are rejected before touching buffers.
    let status = unsafe {
        fp_engine_append_chunk(engine, 0, 0, ptr::null(), ptr::null(), ptr::null(), ptr::null())
    };
    assert_eq!(status, FpStatus::Config);
    append_frame(engine, 0);
    let mut reports = ptr::null_mut();
    assert_eq!(
        unsafe { fp_engine_compress(engine, 7, ptr::null(), 0, &mut reports) },
        FpStatus::Runtime,
        "layer out of range"
    );
    unsafe { fp_engine_free(engine) };

    unsafe {
        fp_engine_free(ptr::null_mut());
        fp_string_free(ptr::null_mut());
    }
}

#[test]
fn simulate_matches_native_rollout() {
    let config = r#"{
      "model": {"tokens_per_frame": 4, "chunk_frames": 1, "head_dim": 16,
                "num_heads": 1, "num_layers": 1},
      "cache": {"sink_frames": 1, "budget_frames": 3, "recent_frames": 1,
                "max_window_frames": 5, "tokens_per_frame": 4, "chunk_frames": 1},
      "chunks": 12,
      "seeds": [3, 4],
      "oracle": true
    }"#;
    let cstr = CString::new(config).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { fp_simulate(cstr.as_ptr(), &mut out) };
    assert_eq!(status, FpStatus::Ok, "{}", last_error());
    let rows: Vec<serde_json::Value> = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(rows.len(), 2);

    // The same run through the Rust API must serialize identically.
    let parsed: serde_json::Value = serde_json::from_str(config).unwrap();
    let cache: framepress::CachePolicyConfig =
        serde_json::from_value(parsed["cache"].clone()).unwrap();
    for (row, &seed) in rows.iter().zip(&[3u64, 4]) {
        assert_eq!(row["seed"], seed);
        let model = framepress::StreamModel {
            seed,
            ..serde_json::from_value(parsed["model"].clone()).unwrap()
        };
        let output = framepress::rollout(
            &model,
            &cache,
            12,
            framepress::RolloutOptions { oracle: true },
        )
        .unwrap();
        let native = serde_json::to_value(framepress::simulator::summarize(&output, &cache)).unwrap();
        assert_eq!(row["summary"], native);
    }
}

#[test]
fn c_smoke_program_compiles_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(
        header_dir.join("framepress.h").is_file(),
        "build script generates the header"
    );

    // target/<profile>/ from this test binary's own location
    // (target/<profile>/deps/abi-<hash>).
    let exe = std::env::current_exe().unwrap();
    let lib_dir: PathBuf = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let staticlib = lib_dir.join("libframepress_ffi.a");
    assert!(staticlib.is_file(), "missing {staticlib:?}");

    let tmp = tempfile::tempdir().unwrap();
    let binary = tmp.path().join("smoke");
    let compile = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror"])
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(&header_dir)
        .arg("-L")
        .arg(&lib_dir)
        .args(["-lframepress_ffi", "-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&binary)
        .output()
        .expect("cc runs");
    assert!(
        compile.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&binary).output().expect("smoke binary runs");
    assert!(
        run.status.success(),
        "smoke failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
