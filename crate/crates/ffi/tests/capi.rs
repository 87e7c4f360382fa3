use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use glucoach_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Engine(*mut GcEngine);

impl Engine {
    fn bundled() -> Self {
        Engine(gc_engine_new())
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        unsafe { gc_engine_free(self.0) }
    }
}

fn recommend(
    engine: &Engine,
    phase: GcPhase,
    ctx: GcContext,
    bg: i64,
    before: i64,
    min: u32,
    kcal: f64,
) -> (GcStatus, Option<(GcRecommendation, String)>) {
    let mut out = GcRecommendation {
        band: GcBand::Low,
        action: GcAction::Block,
        reward_promised: false,
        advises_hydration: false,
        advises_doctor: false,
        message: ptr::null_mut(),
    };
    let status = unsafe { gc_recommend(engine.0, phase, ctx, bg, before, min, kcal, &mut out) };
    if status != GcStatus::Ok {
        return (status, None);
    }
    let text = unsafe { CStr::from_ptr(out.message) }
        .to_str()
        .unwrap()
        .to_string();
    unsafe { gc_string_free(out.message) };
    out.message = ptr::null_mut();
    (status, Some((out, text)))
}

#[test]
fn classify_bands() {
    let engine = Engine::bundled();
    let cases = [
        (69, GcContext::Fasting, GcBand::Low),
        (70, GcContext::Fasting, GcBand::Normal),
        (130, GcContext::Fasting, GcBand::Normal),
        (131, GcContext::Fasting, GcBand::High),
        (180, GcContext::Fasting, GcBand::High),
        (181, GcContext::Fasting, GcBand::CriticallyHigh),
        (181, GcContext::PostMeal, GcBand::Elevated),
        (250, GcContext::PreMeal, GcBand::Elevated),
        (251, GcContext::PreMeal, GcBand::CriticallyHigh),
    ];
    for (value, ctx, want) in cases {
        let mut band = GcBand::Low;
        assert_eq!(
            unsafe { gc_classify(engine.0, value, ctx, &mut band) },
            GcStatus::Ok
        );
        assert_eq!(band, want, "{value} {ctx:?}");
    }
}

#[test]
fn classify_rejects_out_of_window() {
    let engine = Engine::bundled();
    let mut band = GcBand::Normal;
    for value in [0, -5, 601] {
        assert_eq!(
            unsafe { gc_classify(engine.0, value, GcContext::Fasting, &mut band) },
            GcStatus::RejectedReading
        );
        assert!(last_error().contains("rejected reading"));
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut band = GcBand::Normal;
    assert_eq!(
        unsafe { gc_classify(ptr::null(), 100, GcContext::Fasting, &mut band) },
        GcStatus::NullArgument
    );
    let engine = Engine::bundled();
    assert_eq!(
        unsafe { gc_classify(engine.0, 100, GcContext::Fasting, ptr::null_mut()) },
        GcStatus::NullArgument
    );
    let mut balance = 0;
    assert_eq!(
        unsafe { gc_ledger_balance(ptr::null(), 1, &mut balance) },
        GcStatus::NullArgument
    );
    unsafe {
        gc_engine_free(ptr::null_mut());
        gc_ledger_free(ptr::null_mut());
        gc_string_free(ptr::null_mut());
    }
}

#[test]
fn pre_exercise_recommendation() {
    let engine = Engine::bundled();
    let (status, out) = recommend(
        &engine,
        GcPhase::PreExercise,
        GcContext::Fasting,
        95,
        0,
        0,
        0.0,
    );
    assert_eq!(status, GcStatus::Ok);
    let (rec, text) = out.unwrap();
    assert_eq!(rec.band, GcBand::Normal);
    assert_eq!(rec.action, GcAction::AllowLight);
    assert!(rec.reward_promised);
    assert!(text.starts_with("Great job! Start your exercise session with light intensity"));
}

#[test]
fn post_exercise_recommendation_renders_values() {
    let engine = Engine::bundled();
    let (status, out) = recommend(
        &engine,
        GcPhase::PostExercise,
        GcContext::PreMeal,
        110,
        140,
        35,
        150.0,
    );
    assert_eq!(status, GcStatus::Ok);
    let (rec, text) = out.unwrap();
    assert_eq!(rec.action, GcAction::AllowLightToModerate);
    assert!(rec.advises_hydration);
    assert!(text.contains("dropped to 30 mg/dL after 35 min"), "{text}");
    assert!(text.contains("150"), "{text}");
    assert!(!text.contains('{'));
}

#[test]
fn post_exercise_rejects_bad_session() {
    let engine = Engine::bundled();
    let (status, _) = recommend(
        &engine,
        GcPhase::PostExercise,
        GcContext::Fasting,
        110,
        140,
        30,
        -1.0,
    );
    assert_eq!(status, GcStatus::InvalidArgument);
    let (status, _) = recommend(
        &engine,
        GcPhase::PostExercise,
        GcContext::Fasting,
        110,
        700,
        30,
        10.0,
    );
    assert_eq!(status, GcStatus::RejectedReading);
}

#[test]
fn engine_from_json_round_trip_and_errors() {
    let json = CString::new(include_str!("../../core/data/rules.json")).unwrap();
    let mut engine = ptr::null_mut();
    assert_eq!(
        unsafe { gc_engine_from_json(json.as_ptr(), &mut engine) },
        GcStatus::Ok
    );
    assert!(!engine.is_null());
    let engine = Engine(engine);
    let mut band = GcBand::Low;
    assert_eq!(
        unsafe { gc_classify(engine.0, 300, GcContext::PreMeal, &mut band) },
        GcStatus::Ok
    );
    assert_eq!(band, GcBand::CriticallyHigh);

    let bad = CString::new("{\"rules\": []}").unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(
        unsafe { gc_engine_from_json(bad.as_ptr(), &mut other) },
        GcStatus::ParseError
    );
    assert!(other.is_null());
    assert!(!last_error().is_empty());

    let invalid_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { gc_engine_from_json(invalid_utf8.as_ptr().cast(), &mut other) },
        GcStatus::InvalidUtf8
    );
}

#[test]
fn evaluate_bundled_corpus() {
    let engine = Engine::bundled();
    let corpus = CString::new(include_str!("../../core/data/scenarios.jsonl")).unwrap();
    let (mut p, mut e) = (0.0, 0.0);
    assert_eq!(
        unsafe { gc_evaluate_corpus(engine.0, corpus.as_ptr(), &mut p, &mut e) },
        GcStatus::Ok
    );
    assert!((p - 90.0).abs() < 1e-9, "{p}");
    assert!((e - 92.0).abs() < 1e-9, "{e}");
    assert!(p <= e);

    let empty = CString::new("").unwrap();
    assert_eq!(
        unsafe { gc_evaluate_corpus(engine.0, empty.as_ptr(), &mut p, &mut e) },
        GcStatus::ParseError
    );
}

#[test]
fn ledger_rejects_duplicates() {
    let ledger = gc_ledger_new();
    let reason = CString::new("exercise_kcal").unwrap();
    let src = CString::new("exercise:1").unwrap();
    unsafe {
        assert_eq!(
            gc_ledger_append(ledger, 7, 1_700_000_000, 15, reason.as_ptr(), src.as_ptr()),
            GcStatus::Ok
        );
        assert_eq!(
            gc_ledger_append(ledger, 7, 1_700_000_100, 15, reason.as_ptr(), src.as_ptr()),
            GcStatus::Duplicate
        );
        // Same source under another user is a distinct award.
        assert_eq!(
            gc_ledger_append(ledger, 8, 1_700_000_000, 4, reason.as_ptr(), src.as_ptr()),
            GcStatus::Ok
        );
        let area = CString::new("area_goal:exercise").unwrap();
        let day = CString::new("day:2024-03-04").unwrap();
        assert_eq!(
            gc_ledger_append(ledger, 7, 1_700_000_000, 3, area.as_ptr(), day.as_ptr()),
            GcStatus::Ok
        );
        let unknown = CString::new("bonus").unwrap();
        assert_eq!(
            gc_ledger_append(ledger, 7, 0, 1, unknown.as_ptr(), day.as_ptr()),
            GcStatus::InvalidArgument
        );

        let mut balance = 0;
        assert_eq!(gc_ledger_balance(ledger, 7, &mut balance), GcStatus::Ok);
        assert_eq!(balance, 18);
        assert_eq!(gc_ledger_balance(ledger, 8, &mut balance), GcStatus::Ok);
        assert_eq!(balance, 4);
        assert_eq!(gc_ledger_len(ledger), 3);
        gc_ledger_free(ledger);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/glucoach.h");
    let text = std::fs::read_to_string(header).expect("header generated by build.rs");
    for symbol in [
        "gc_engine_new",
        "gc_engine_free",
        "gc_classify",
        "gc_recommend",
        "gc_evaluate_corpus",
        "gc_ledger_append",
        "gc_ledger_balance",
        "gc_string_free",
        "gc_last_error",
        "typedef struct GcEngine GcEngine;",
    ] {
        assert!(text.contains(symbol), "missing {symbol}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(status.success());
}
