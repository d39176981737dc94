use std::ffi::{CStr, CString};
use std::ptr;

use stepguard_ffi::*;

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    stg_string_free(s);
    out
}

fn last_error() -> String {
    let p = stg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn bundled_replay_round_trip() {
    unsafe {
        assert_eq!(stg_bundled_count(), 12);
        let mut s = ptr::null_mut();
        assert_eq!(stg_scenario_bundled(8, &mut s), StgStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(stg_replay(s, StgConfig::FeaCom, &mut json), StgStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(report["valid_steps"], 9);
        assert_eq!(report["end_status"], "success");
        stg_scenario_free(s);
        assert!(stg_last_error().is_null());
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut s = ptr::null_mut();
        let bad = CString::new("{not json").unwrap();
        assert_eq!(stg_scenario_from_json(bad.as_ptr(), &mut s), StgStatus::InvalidInput);
        assert!(s.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(stg_scenario_from_json(ptr::null(), &mut s), StgStatus::NullArgument);
        assert!(last_error().contains("json"));
        assert_eq!(stg_scenario_bundled(99, &mut s), StgStatus::InvalidInput);
        let mut json = ptr::null_mut();
        assert_eq!(stg_replay(ptr::null(), StgConfig::Baseline, &mut json), StgStatus::NullArgument);
        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(stg_scenario_from_json(invalid.as_ptr().cast(), &mut s), StgStatus::InvalidUtf8);
        stg_string_free(ptr::null_mut());
        stg_scenario_free(ptr::null_mut());
        stg_memory_free(ptr::null_mut());
    }
}

#[test]
fn redact_then_restore() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(stg_memory_new(&mut m), StgStatus::Ok);
        let instr = CString::new("Log in with username bob_k and password hunter22").unwrap();
        let mut red = ptr::null_mut();
        assert_eq!(stg_redact(m, instr.as_ptr(), 0, &mut red), StgStatus::Ok);
        let red = take(red);
        assert!(!red.contains("hunter22") && !red.contains("bob_k"), "{red}");
        let name = red.split('{').nth(2).and_then(|t| t.split('}').next()).unwrap();
        let cmd = CString::new(format!("Enter {{{name}}} into the password field")).unwrap();
        let (mut restored, mut unknown) = (ptr::null_mut(), 7usize);
        assert_eq!(stg_restore(m, cmd.as_ptr(), &mut restored, &mut unknown), StgStatus::Ok);
        assert_eq!(unknown, 0);
        assert!(take(restored).contains("hunter22"));
        stg_memory_free(m);
    }
}

#[test]
fn file_memory_persists() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("mem.json").to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(stg_memory_open(path.as_ptr(), &mut m), StgStatus::Ok);
        let instr = CString::new("Pay with {{card:4111111111111111}}").unwrap();
        let mut red = ptr::null_mut();
        assert_eq!(stg_redact(m, instr.as_ptr(), 0, &mut red), StgStatus::Ok);
        stg_string_free(red);
        stg_memory_free(m);

        let mut again = ptr::null_mut();
        assert_eq!(stg_memory_open(path.as_ptr(), &mut again), StgStatus::Ok);
        let cmd = CString::new("Enter {card} into the card field").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(stg_restore(again, cmd.as_ptr(), &mut out, ptr::null_mut()), StgStatus::Ok);
        assert!(take(out).contains("4111111111111111"));
        stg_memory_free(again);
    }
}

#[test]
fn codec_and_metrics() {
    unsafe {
        let mut r = StgStructuredResult { kind: StgResultKind::Feasibility, bit: 9, bbox: [0; 4] };
        let text = b"<s_completeness> 1 </s_completeness>";
        assert_eq!(stg_codec_parse(text.as_ptr(), text.len(), &mut r), StgStatus::Ok);
        assert_eq!((r.kind, r.bit), (StgResultKind::Completeness, 1));
        let bad = b"<nope>1</nope>";
        assert_eq!(stg_codec_parse(bad.as_ptr(), bad.len(), &mut r), StgStatus::InvalidInput);

        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [1u8, 0, 1, 1];
        let mut m = StgMetrics { accuracy: 0.0, average_precision: 0.0, f1: 0.0, has_positive: 0 };
        assert_eq!(stg_compute_metrics(scores.as_ptr(), labels.as_ptr(), 4, &mut m), StgStatus::Ok);
        assert!((m.average_precision - (1.0 + 2.0 / 3.0 + 0.75) / 3.0).abs() < 1e-12);
        assert_eq!(m.has_positive, 1);
        let none = [0u8; 4];
        assert_eq!(stg_compute_metrics(scores.as_ptr(), none.as_ptr(), 4, &mut m), StgStatus::Ok);
        assert!(m.f1.is_nan() && m.has_positive == 0);
        assert_eq!(stg_compute_metrics(scores.as_ptr(), labels.as_ptr(), 0, &mut m), StgStatus::InvalidInput);
    }
}

#[test]
fn header_is_in_sync() {
    let header = include_str!("../include/stepguard.h");
    for sym in [
        "stg_last_error",
        "stg_string_free",
        "stg_scenario_from_json",
        "stg_scenario_bundled",
        "stg_replay",
        "stg_memory_open",
        "stg_redact",
        "stg_restore",
        "stg_codec_parse",
        "stg_compute_metrics",
        "typedef struct StgScenario StgScenario",
        "STG_STATUS_PRIVACY_VIOLATION = 4",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"stepguard.h\"\nint main(void) { StgScenario *s = 0; return stg_scenario_bundled(0, &s) == STG_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
