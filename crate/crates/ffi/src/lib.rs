//! C ABI over the glucoach engine.
//!
//! Handles are opaque and owned by the caller: every `*_new` has a matching
//! `*_free`. Strings returned through out-parameters are heap-allocated and
//! released with [`gc_string_free`]. Every fallible function returns a
//! [`GcStatus`]; on failure [`gc_last_error`] describes the cause.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use chrono::{DateTime, Utc};
use glucoach::domain::{DomainError, GlycemicBand, MealContext, UserId};
use glucoach::evaluation::{evaluate, parse_corpus};
use glucoach::recommend::{ExerciseAction, Phase, RecommendError};
use glucoach::rewards::{RewardEntry, RewardLedger, RewardReason};
use glucoach::{GlucoseReading, RuleTable};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    RejectedReading = 4,
    Duplicate = 5,
    ParseError = 6,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcContext {
    Fasting = 0,
    PreMeal = 1,
    PostMeal = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcBand {
    Low = 0,
    Normal = 1,
    High = 2,
    Elevated = 3,
    CriticallyHigh = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcPhase {
    PreExercise = 0,
    PostExercise = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcAction {
    Block = 0,
    AllowLight = 1,
    AllowModerate = 2,
    AllowLightToModerate = 3,
    WarnBlock = 4,
}

/// Output of [`gc_recommend`]. `message` is owned by the caller.
#[repr(C)]
#[derive(Debug)]
pub struct GcRecommendation {
    pub band: GcBand,
    pub action: GcAction,
    pub reward_promised: bool,
    pub advises_hydration: bool,
    pub advises_doctor: bool,
    pub message: *mut c_char,
}

/// Opaque rule engine.
pub struct GcEngine {
    table: RuleTable,
}

/// Opaque append-only reward ledger.
pub struct GcLedger {
    ledger: RewardLedger,
}

impl From<GcContext> for MealContext {
    fn from(c: GcContext) -> Self {
        match c {
            GcContext::Fasting => MealContext::Fasting,
            GcContext::PreMeal => MealContext::PreMeal,
            GcContext::PostMeal => MealContext::PostMeal,
        }
    }
}

impl From<GlycemicBand> for GcBand {
    fn from(b: GlycemicBand) -> Self {
        match b {
            GlycemicBand::Low => GcBand::Low,
            GlycemicBand::Normal => GcBand::Normal,
            GlycemicBand::High => GcBand::High,
            GlycemicBand::Elevated => GcBand::Elevated,
            GlycemicBand::CriticallyHigh => GcBand::CriticallyHigh,
        }
    }
}

impl From<ExerciseAction> for GcAction {
    fn from(a: ExerciseAction) -> Self {
        match a {
            ExerciseAction::Block => GcAction::Block,
            ExerciseAction::AllowLight => GcAction::AllowLight,
            ExerciseAction::AllowModerate => GcAction::AllowModerate,
            ExerciseAction::AllowLightToModerate => GcAction::AllowLightToModerate,
            ExerciseAction::WarnBlock => GcAction::WarnBlock,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn fail(status: GcStatus, message: impl Into<String>) -> GcStatus {
    set_error(message);
    status
}

fn guarded(f: impl FnOnce() -> GcStatus) -> GcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(GcStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, GcStatus> {
    if p.is_null() {
        return Err(fail(GcStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(GcStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn domain_status(e: &DomainError) -> GcStatus {
    match e {
        DomainError::RejectedReading { .. } => fail(GcStatus::RejectedReading, e.to_string()),
        _ => fail(GcStatus::InvalidArgument, e.to_string()),
    }
}

/// Message for the last failed call on this thread. Valid until the next call
/// on the same thread; never null.
#[no_mangle]
pub extern "C" fn gc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Engine with the bundled rule table and default band thresholds.
#[no_mangle]
pub extern "C" fn gc_engine_new() -> *mut GcEngine {
    Box::into_raw(Box::new(GcEngine {
        table: RuleTable::bundled(),
    }))
}

/// Engine from a rule-table JSON document.
#[no_mangle]
pub unsafe extern "C" fn gc_engine_from_json(
    json: *const c_char,
    out: *mut *mut GcEngine,
) -> GcStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GcStatus::NullArgument, "out is null");
        }
        let json = match str_arg(json, "json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match RuleTable::from_json(json) {
            Ok(table) => {
                *out = Box::into_raw(Box::new(GcEngine { table }));
                GcStatus::Ok
            }
            Err(e) => fail(GcStatus::ParseError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gc_engine_free(engine: *mut GcEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

#[no_mangle]
pub unsafe extern "C" fn gc_classify(
    engine: *const GcEngine,
    value_mg_dl: i64,
    context: GcContext,
    out: *mut GcBand,
) -> GcStatus {
    guarded(|| {
        let (Some(engine), false) = (engine.as_ref(), out.is_null()) else {
            return fail(GcStatus::NullArgument, "engine or out is null");
        };
        let thresholds = engine.table.thresholds();
        let band = thresholds
            .check_reading(value_mg_dl)
            .and_then(|v| thresholds.classify(v, context.into()));
        match band {
            Ok(band) => {
                *out = band.into();
                GcStatus::Ok
            }
            Err(e) => domain_status(&e),
        }
    })
}

/// Recommendation for a reading. For `PostExercise`, `bg_mg_dl` is the
/// post-exercise reading and `bg_before`, `duration_min` and `kcal` describe
/// the session; they are ignored for `PreExercise`.
#[no_mangle]
pub unsafe extern "C" fn gc_recommend(
    engine: *const GcEngine,
    phase: GcPhase,
    context: GcContext,
    bg_mg_dl: i64,
    bg_before: i64,
    duration_min: u32,
    kcal: f64,
    out: *mut GcRecommendation,
) -> GcStatus {
    guarded(|| {
        let (Some(engine), false) = (engine.as_ref(), out.is_null()) else {
            return fail(GcStatus::NullArgument, "engine or out is null");
        };
        let table = &engine.table;
        let at = DateTime::<Utc>::UNIX_EPOCH;
        let reading = match GlucoseReading::new(
            UserId(0),
            bg_mg_dl,
            context.into(),
            at,
            table.thresholds(),
        ) {
            Ok(r) => r,
            Err(e) => return domain_status(&e),
        };
        let result = match phase {
            GcPhase::PreExercise => table.recommend(Phase::PreExercise, &reading, None),
            GcPhase::PostExercise => {
                let before = match GlucoseReading::new(
                    UserId(0),
                    bg_before,
                    context.into(),
                    at,
                    table.thresholds(),
                ) {
                    Ok(r) => r,
                    Err(e) => return domain_status(&e),
                };
                let session = glucoach::domain::ExerciseSession {
                    user_id: UserId(0),
                    started_at: at,
                    duration_min,
                    steps: 0,
                    kcal_burned: kcal,
                    bg_before: Some(before),
                    bg_after: Some(reading.clone()),
                };
                if let Err(e) = session.validate() {
                    return domain_status(&e);
                }
                table.recommend(Phase::PostExercise, &reading, Some(&session))
            }
        };
        match result {
            Ok(rec) => {
                let message = CString::new(rec.rendered_message.replace('\0', " "))
                    .expect("nul bytes removed");
                *out = GcRecommendation {
                    band: rec.key.band.into(),
                    action: rec.action.into(),
                    reward_promised: rec.reward_promised,
                    advises_hydration: rec.advises_hydration,
                    advises_doctor: rec.advises_doctor,
                    message: message.into_raw(),
                };
                GcStatus::Ok
            }
            Err(RecommendError::Reading(e)) => domain_status(&e),
            Err(e) => fail(GcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Scores a JSON-lines scenario corpus. Percentages are written to the out-parameters.
#[no_mangle]
pub unsafe extern "C" fn gc_evaluate_corpus(
    engine: *const GcEngine,
    corpus_jsonl: *const c_char,
    proficiency_pct: *mut f64,
    efficiency_pct: *mut f64,
) -> GcStatus {
    guarded(|| {
        let Some(engine) = engine.as_ref() else {
            return fail(GcStatus::NullArgument, "engine is null");
        };
        if proficiency_pct.is_null() || efficiency_pct.is_null() {
            return fail(GcStatus::NullArgument, "output pointer is null");
        }
        let text = match str_arg(corpus_jsonl, "corpus_jsonl") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let report = parse_corpus(text).and_then(|scenarios| evaluate(&engine.table, &scenarios));
        match report {
            Ok(report) => {
                *proficiency_pct = report.proficiency_pct;
                *efficiency_pct = report.efficiency_pct;
                GcStatus::Ok
            }
            Err(e) => fail(GcStatus::ParseError, e.to_string()),
        }
    })
}

#[no_mangle]
pub extern "C" fn gc_ledger_new() -> *mut GcLedger {
    Box::into_raw(Box::new(GcLedger {
        ledger: RewardLedger::new(),
    }))
}

#[no_mangle]
pub unsafe extern "C" fn gc_ledger_free(ledger: *mut GcLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Appends an award. `reason` is `exercise_kcal`, `in_range_check` or
/// `area_goal:<area>`; `earned_at_unix` is seconds since the epoch.
/// Returns `Duplicate` when (user, reason, source_ref) was already awarded.
#[no_mangle]
pub unsafe extern "C" fn gc_ledger_append(
    ledger: *mut GcLedger,
    user_id: i64,
    earned_at_unix: i64,
    points: u32,
    reason: *const c_char,
    source_ref: *const c_char,
) -> GcStatus {
    guarded(|| {
        let Some(ledger) = ledger.as_mut() else {
            return fail(GcStatus::NullArgument, "ledger is null");
        };
        let (reason, source_ref) =
            match (str_arg(reason, "reason"), str_arg(source_ref, "source_ref")) {
                (Ok(r), Ok(s)) => (r, s),
                (Err(status), _) | (_, Err(status)) => return status,
            };
        let reason: RewardReason = match reason.parse() {
            Ok(r) => r,
            Err(e) => return domain_status(&e),
        };
        let Some(earned_at) = DateTime::<Utc>::from_timestamp(earned_at_unix, 0) else {
            return fail(GcStatus::InvalidArgument, "earned_at_unix out of range");
        };
        let entry = RewardEntry {
            user_id: UserId(user_id),
            earned_at,
            points,
            reason,
            source_ref: source_ref.to_string(),
        };
        match ledger.ledger.append(entry) {
            Ok(_) => GcStatus::Ok,
            Err(e) => fail(GcStatus::Duplicate, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn gc_ledger_balance(
    ledger: *const GcLedger,
    user_id: i64,
    out: *mut u64,
) -> GcStatus {
    guarded(|| {
        let (Some(ledger), false) = (ledger.as_ref(), out.is_null()) else {
            return fail(GcStatus::NullArgument, "ledger or out is null");
        };
        *out = ledger.ledger.balance(UserId(user_id));
        GcStatus::Ok
    })
}

/// Number of entries in the ledger, across all users.
#[no_mangle]
pub unsafe extern "C" fn gc_ledger_len(ledger: *const GcLedger) -> usize {
    ledger.as_ref().map_or(0, |l| l.ledger.len())
}
