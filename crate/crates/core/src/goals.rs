//! Goal validation, knowledge-gap education, reminders and daily adherence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    text_enum, DomainError, ExerciseSession, GlucoseReading, MealRecord, MedicationEvent, UserId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdherenceArea {
    BgMonitoring,
    Medication,
    Diet,
    Exercise,
}

text_enum!(AdherenceArea, "adherence area", {
    BgMonitoring => "bg_monitoring",
    Medication => "medication",
    Diet => "diet",
    Exercise => "exercise",
});

/// One boolean per adherence area; all four are always present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaFlags {
    pub bg_monitoring: bool,
    pub medication: bool,
    pub diet: bool,
    pub exercise: bool,
}

impl AreaFlags {
    pub fn all(value: bool) -> Self {
        Self {
            bg_monitoring: value,
            medication: value,
            diet: value,
            exercise: value,
        }
    }

    pub fn get(&self, area: AdherenceArea) -> bool {
        match area {
            AdherenceArea::BgMonitoring => self.bg_monitoring,
            AdherenceArea::Medication => self.medication,
            AdherenceArea::Diet => self.diet,
            AdherenceArea::Exercise => self.exercise,
        }
    }

    pub fn set(&mut self, area: AdherenceArea, value: bool) {
        match area {
            AdherenceArea::BgMonitoring => self.bg_monitoring = value,
            AdherenceArea::Medication => self.medication = value,
            AdherenceArea::Diet => self.diet = value,
            AdherenceArea::Exercise => self.exercise = value,
        }
    }

    pub fn count(&self) -> usize {
        AdherenceArea::ALL.iter().filter(|a| self.get(**a)).count()
    }

    pub fn areas_where(&self, value: bool) -> impl Iterator<Item = AdherenceArea> + '_ {
        AdherenceArea::ALL
            .iter()
            .copied()
            .filter(move |a| self.get(*a) == value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BgTarget {
    pub low: u32,
    pub high: u32,
}

impl BgTarget {
    pub fn contains(&self, value_mg_dl: u32) -> bool {
        (self.low..=self.high).contains(&value_mg_dl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    pub user_id: UserId,
    pub bg_target: BgTarget,
    pub daily_steps: u32,
    pub daily_kcal_burn: f64,
    #[serde(default)]
    pub medication_times: Vec<NaiveTime>,
    #[serde(default)]
    pub diet_log_required: bool,
    pub effective_from: NaiveDate,
}

impl GoalSet {
    /// Goals used before a user has set any.
    pub fn default_for(user_id: UserId, effective_from: NaiveDate) -> Self {
        Self {
            user_id,
            bg_target: DEFAULT_BG_TARGET,
            daily_steps: 6000,
            daily_kcal_burn: 200.0,
            medication_times: Vec::new(),
            diet_log_required: false,
            effective_from,
        }
    }
}

pub const DEFAULT_BG_TARGET: BgTarget = BgTarget { low: 70, high: 130 };

/// Acceptable goal ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalBounds {
    pub bg_min: u32,
    pub bg_max: u32,
    pub steps_min: u32,
    pub steps_max: u32,
    pub kcal_min: f64,
    pub kcal_max: f64,
}

impl Default for GoalBounds {
    fn default() -> Self {
        Self {
            bg_min: 70,
            bg_max: 180,
            steps_min: 1000,
            steps_max: 30_000,
            kcal_min: 50.0,
            kcal_max: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GoalValidation {
    Accepted {
        goals: GoalSet,
    },
    /// The proposal was out of bounds; `recommended` is the nearest goal that is not.
    Corrected {
        recommended: GoalSet,
        reasons: Vec<String>,
    },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GoalError {
    #[error("invalid goal: {reason}")]
    Structural {
        reason: String,
        recommended: Box<GoalSet>,
    },
}

pub fn validate_goals(
    proposed: &GoalSet,
    bounds: &GoalBounds,
) -> Result<GoalValidation, GoalError> {
    let mut recommended = proposed.clone();
    let mut reasons = Vec::new();

    let target = proposed.bg_target;
    let structural = if target.low >= target.high {
        Some(format!(
            "BG target low ({}) must be below high ({})",
            target.low, target.high
        ))
    } else if !proposed.daily_kcal_burn.is_finite() {
        Some("daily kcal burn must be a number".to_string())
    } else {
        None
    };
    if let Some(reason) = structural {
        recommended.bg_target = DEFAULT_BG_TARGET;
        if !recommended.daily_kcal_burn.is_finite() {
            recommended.daily_kcal_burn = bounds.kcal_min;
        }
        clamp_activity(&mut recommended, bounds, &mut Vec::new());
        return Err(GoalError::Structural {
            reason,
            recommended: Box::new(recommended),
        });
    }

    let mut low = target.low.clamp(bounds.bg_min, bounds.bg_max);
    let mut high = target.high.clamp(bounds.bg_min, bounds.bg_max);
    if low >= high {
        // Both ends clamped onto the same bound.
        if high == bounds.bg_max {
            low = high - 1;
        } else {
            high = low + 1;
        }
    }
    if (low, high) != (target.low, target.high) {
        reasons.push(format!(
            "BG target must lie within [{}, {}] mg/dL",
            bounds.bg_min, bounds.bg_max
        ));
        recommended.bg_target = BgTarget { low, high };
    }
    clamp_activity(&mut recommended, bounds, &mut reasons);

    if reasons.is_empty() {
        Ok(GoalValidation::Accepted {
            goals: proposed.clone(),
        })
    } else {
        Ok(GoalValidation::Corrected {
            recommended,
            reasons,
        })
    }
}

fn clamp_activity(goals: &mut GoalSet, bounds: &GoalBounds, reasons: &mut Vec<String>) {
    let steps = goals.daily_steps.clamp(bounds.steps_min, bounds.steps_max);
    if steps != goals.daily_steps {
        reasons.push(format!(
            "daily steps must lie within [{}, {}]",
            bounds.steps_min, bounds.steps_max
        ));
        goals.daily_steps = steps;
    }
    let kcal = goals
        .daily_kcal_burn
        .clamp(bounds.kcal_min, bounds.kcal_max);
    if kcal != goals.daily_kcal_burn {
        reasons.push(format!(
            "daily kcal burn must lie within [{}, {}]",
            bounds.kcal_min, bounds.kcal_max
        ));
        goals.daily_kcal_burn = kcal;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSurvey {
    pub user_id: UserId,
    pub knows: AreaFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EducationIntervention {
    pub area: AdherenceArea,
    pub content_key: String,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("education catalog could not be read: {0}")]
    Io(#[from] std::io::Error),
    #[error("education catalog is not a flat JSON object of strings: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("education catalog has no entry for '{0}'")]
    MissingKey(String),
}

const BUNDLED_EDUCATION: &str = include_str!("../data/education.json");

/// Flat key to text document of education copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EducationCatalog {
    entries: BTreeMap<String, String>,
}

impl EducationCatalog {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_EDUCATION).expect("bundled education catalog is complete")
    }

    pub fn from_json(json: &str) -> Result<Self, CatalogError> {
        let entries: BTreeMap<String, String> = serde_json::from_str(json)?;
        let catalog = Self { entries };
        for area in AdherenceArea::ALL {
            let key = Self::key_for(*area);
            if !catalog.entries.contains_key(&key) {
                return Err(CatalogError::MissingKey(key));
            }
        }
        Ok(catalog)
    }

    pub fn from_path(path: &Path) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn key_for(area: AdherenceArea) -> String {
        format!("education.{area}")
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// One intervention per area the user does not yet know, in area order.
pub fn education_gate(survey: &KnowledgeSurvey) -> Vec<EducationIntervention> {
    survey
        .knows
        .areas_where(false)
        .map(|area| EducationIntervention {
            area,
            content_key: EducationCatalog::key_for(area),
        })
        .collect()
}

/// Minimum gap, in days, between the last log and a reminder and between two reminders.
pub const REMINDER_INTERVAL_DAYS: i64 = 3;

/// Whether an area is due a reminder today.
///
/// A missing `last_log` counts from `effective_from`, the date the goals took effect.
pub fn reminder_due(
    last_log: Option<NaiveDate>,
    last_reminder: Option<NaiveDate>,
    effective_from: NaiveDate,
    today: NaiveDate,
) -> bool {
    let since_log = (today - last_log.unwrap_or(effective_from)).num_days();
    let since_reminder = last_reminder.map_or(i64::MAX, |r| (today - r).num_days());
    since_log >= REMINDER_INTERVAL_DAYS && since_reminder >= REMINDER_INTERVAL_DAYS
}

/// Everything logged by one user on one (UTC) date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayLogs {
    pub readings: Vec<GlucoseReading>,
    pub sessions: Vec<ExerciseSession>,
    pub meals: Vec<MealRecord>,
    pub medications: Vec<MedicationEvent>,
    /// Daily total from the step source, when one was imported.
    pub imported_steps: Option<u32>,
}

impl DayLogs {
    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
            && self.sessions.is_empty()
            && self.meals.is_empty()
            && self.medications.is_empty()
            && self.imported_steps.is_none()
    }

    /// Larger of the imported total and the sum over sessions.
    pub fn total_steps(&self) -> u32 {
        let from_sessions: u32 = self.sessions.iter().map(|s| s.steps).sum();
        self.imported_steps.unwrap_or(0).max(from_sessions)
    }

    pub fn total_kcal_burned(&self) -> f64 {
        self.sessions.iter().map(|s| s.kcal_burned).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyLogStatus {
    pub user_id: UserId,
    pub date: NaiveDate,
    pub logged: AreaFlags,
    pub goals_met: AreaFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdherencePolicy {
    /// A dose counts as on time within this many minutes of its scheduled time.
    pub medication_window_minutes: i64,
}

impl Default for AdherencePolicy {
    fn default() -> Self {
        Self {
            medication_window_minutes: 60,
        }
    }
}

/// Scores a user-day against the goals in effect.
///
/// Areas with nothing to do (no medication schedule, diet logging not
/// required) count as logged and met, but only on a day with some log.
pub fn evaluate_day(
    user_id: UserId,
    date: NaiveDate,
    logs: &DayLogs,
    goals: &GoalSet,
    policy: &AdherencePolicy,
) -> DailyLogStatus {
    let any_log = !logs.is_empty();
    let mut logged = AreaFlags::default();
    let mut met = AreaFlags::default();

    logged.bg_monitoring = !logs.readings.is_empty();
    met.bg_monitoring = logged.bg_monitoring
        && logs
            .readings
            .iter()
            .all(|r| goals.bg_target.contains(r.value_mg_dl));

    logged.exercise = !logs.sessions.is_empty() || logs.imported_steps.is_some();
    met.exercise = logged.exercise
        && (logs.total_steps() >= goals.daily_steps
            || logs.total_kcal_burned() >= goals.daily_kcal_burn);

    logged.medication =
        !logs.medications.is_empty() || (goals.medication_times.is_empty() && any_log);
    let window = Duration::minutes(policy.medication_window_minutes);
    met.medication = logged.medication
        && goals.medication_times.iter().all(|time| {
            let due = DateTime::<Utc>::from_naive_utc_and_offset(date.and_time(*time), Utc);
            logs.medications.iter().any(|m| {
                m.taken_at
                    .is_some_and(|taken| taken >= due - window && taken <= due + window)
            })
        });

    logged.diet = !logs.meals.is_empty() || (!goals.diet_log_required && any_log);
    met.diet = logged.diet;

    DailyLogStatus {
        user_id,
        date,
        logged,
        goals_met: met,
    }
}

impl fmt::Display for BgTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.low, self.high)
    }
}

impl std::str::FromStr for BgTarget {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::Invalid {
            field: "bg_target",
            reason: format!("expected LOW-HIGH, got '{s}'"),
        };
        let (low, high) = s.trim().split_once('-').ok_or_else(bad)?;
        Ok(BgTarget {
            low: low.trim().parse().map_err(|_| bad())?,
            high: high.trim().parse().map_err(|_| bad())?,
        })
    }
}
