//! Reward points: exercise calories, daily area goals, in-range checks.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{DomainError, ExerciseSession, GlucoseReading, UserId};
use crate::goals::{AdherenceArea, BgTarget, DailyLogStatus};
use crate::recommend::ExerciseAction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSchedule {
    pub kcal_per_point: f64,
    /// Points per adherence area met on a day.
    pub area_bonus: u32,
    pub in_range_check_bonus: u32,
    /// In-range bonuses awarded per day at most.
    pub in_range_daily_cap: u32,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        Self {
            kcal_per_point: 10.0,
            area_bonus: 3,
            in_range_check_bonus: 2,
            in_range_daily_cap: 3,
        }
    }
}

impl RewardSchedule {
    pub fn validate(&self) -> Result<(), DomainError> {
        let ok = self.kcal_per_point > 0.0
            && self.kcal_per_point.is_finite()
            && self.area_bonus > 0
            && self.in_range_check_bonus > 0
            && self.in_range_daily_cap > 0;
        if ok {
            Ok(())
        } else {
            Err(DomainError::Invalid {
                field: "schedule",
                reason: format!("every schedule value must be > 0: {self:?}"),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RewardReason {
    ExerciseKcal,
    AreaGoal(AdherenceArea),
    InRangeCheck,
}

impl fmt::Display for RewardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardReason::ExerciseKcal => f.write_str("exercise_kcal"),
            RewardReason::AreaGoal(area) => write!(f, "area_goal:{area}"),
            RewardReason::InRangeCheck => f.write_str("in_range_check"),
        }
    }
}

impl FromStr for RewardReason {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exercise_kcal" => Ok(RewardReason::ExerciseKcal),
            "in_range_check" => Ok(RewardReason::InRangeCheck),
            other => match other.strip_prefix("area_goal:") {
                Some(area) => Ok(RewardReason::AreaGoal(area.parse()?)),
                None => Err(DomainError::UnknownVariant {
                    kind: "reward reason",
                    value: other.to_string(),
                }),
            },
        }
    }
}

impl Serialize for RewardReason {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RewardReason {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub user_id: UserId,
    pub earned_at: DateTime<Utc>,
    pub points: u32,
    pub reason: RewardReason,
    /// Identifies the record that triggered the award; unique per reason.
    pub source_ref: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("reward already granted for {reason} '{source_ref}'")]
    Duplicate {
        reason: RewardReason,
        source_ref: String,
    },
}

/// Append-only record of awarded points.
#[derive(Debug, Clone, Default)]
pub struct RewardLedger {
    entries: Vec<RewardEntry>,
    granted: HashSet<(UserId, RewardReason, String)>,
}

impl RewardLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry, refusing a second award for the same reason and source.
    pub fn append(&mut self, entry: RewardEntry) -> Result<usize, LedgerError> {
        let key = (entry.user_id, entry.reason, entry.source_ref.clone());
        if self.granted.contains(&key) {
            return Err(LedgerError::Duplicate {
                reason: entry.reason,
                source_ref: entry.source_ref,
            });
        }
        self.granted.insert(key);
        self.entries.push(entry);
        Ok(self.entries.len() - 1)
    }

    pub fn balance(&self, user: UserId) -> u64 {
        self.entries_for(user).map(|e| u64::from(e.points)).sum()
    }

    pub fn entries_for(&self, user: UserId) -> impl Iterator<Item = &RewardEntry> + '_ {
        self.entries.iter().filter(move |e| e.user_id == user)
    }

    pub fn entries(&self) -> &[RewardEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, user: UserId, reason: RewardReason, source_ref: &str) -> bool {
        self.granted
            .contains(&(user, reason, source_ref.to_string()))
    }
}

/// Calorie points for a session; zero when the pre-exercise advice blocked exercise.
pub fn exercise_points(
    session: &ExerciseSession,
    governing_action: Option<ExerciseAction>,
    schedule: &RewardSchedule,
) -> u32 {
    if governing_action.is_some_and(|a| !a.permits_exercise()) {
        return 0;
    }
    kcal_points(session.kcal_burned, schedule)
}

pub(crate) fn kcal_points(kcal: f64, schedule: &RewardSchedule) -> u32 {
    if !(kcal > 0.0) {
        return 0;
    }
    // Nudge keeps exact multiples (0.3 / 0.1) from flooring one short.
    (kcal / schedule.kcal_per_point + 1e-9).floor() as u32
}

pub fn daily_area_points(status: &DailyLogStatus, schedule: &RewardSchedule) -> u32 {
    schedule.area_bonus * status.goals_met.count() as u32
}

pub fn in_range_bonus(
    readings: &[GlucoseReading],
    target: BgTarget,
    schedule: &RewardSchedule,
) -> u32 {
    let in_range = readings
        .iter()
        .filter(|r| target.contains(r.value_mg_dl))
        .count() as u32;
    schedule.in_range_check_bonus * in_range.min(schedule.in_range_daily_cap)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::domain::MealContext;
    use crate::goals::AreaFlags;

    fn session(kcal: f64) -> ExerciseSession {
        ExerciseSession {
            user_id: UserId(1),
            started_at: DateTime::<Utc>::UNIX_EPOCH,
            duration_min: 30,
            steps: 0,
            kcal_burned: kcal,
            bg_before: None,
            bg_after: None,
        }
    }

    fn entry(points: u32, source: &str) -> RewardEntry {
        RewardEntry {
            user_id: UserId(1),
            earned_at: DateTime::<Utc>::UNIX_EPOCH,
            points,
            reason: RewardReason::ExerciseKcal,
            source_ref: source.into(),
        }
    }

    #[test]
    fn exercise_point_examples() {
        let schedule = RewardSchedule::default();
        assert_eq!(exercise_points(&session(150.0), None, &schedule), 15);
        assert_eq!(exercise_points(&session(0.0), None, &schedule), 0);
        assert_eq!(exercise_points(&session(149.6), None, &schedule), 14);
        let tenth = RewardSchedule {
            kcal_per_point: 0.1,
            ..schedule
        };
        assert_eq!(exercise_points(&session(0.3), None, &tenth), 3);
    }

    #[test]
    fn no_points_against_advice() {
        let schedule = RewardSchedule::default();
        let s = session(150.0);
        assert_eq!(
            exercise_points(&s, Some(ExerciseAction::Block), &schedule),
            0
        );
        assert_eq!(
            exercise_points(&s, Some(ExerciseAction::WarnBlock), &schedule),
            0
        );
        assert_eq!(
            exercise_points(&s, Some(ExerciseAction::AllowLight), &schedule),
            15
        );
    }

    #[test]
    fn area_point_examples() {
        let schedule = RewardSchedule {
            area_bonus: 5,
            ..RewardSchedule::default()
        };
        let mut status = DailyLogStatus {
            user_id: UserId(1),
            date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            logged: AreaFlags::all(true),
            goals_met: AreaFlags::all(true),
        };
        assert_eq!(daily_area_points(&status, &schedule), 20);
        status.goals_met = AreaFlags::all(false);
        assert_eq!(daily_area_points(&status, &schedule), 0);
        status.goals_met.diet = true;
        status.goals_met.exercise = true;
        assert_eq!(daily_area_points(&status, &schedule), 10);
    }

    #[test]
    fn in_range_examples() {
        let schedule = RewardSchedule::default();
        let target = BgTarget { low: 70, high: 130 };
        let reading = |v| GlucoseReading {
            user_id: UserId(1),
            value_mg_dl: v,
            context: MealContext::Fasting,
            taken_at: DateTime::<Utc>::UNIX_EPOCH,
        };
        assert_eq!(
            in_range_bonus(&[reading(100), reading(110)], target, &schedule),
            4
        );
        let five: Vec<_> = (0..5).map(|i| reading(90 + i)).collect();
        assert_eq!(in_range_bonus(&five, target, &schedule), 6);
        assert_eq!(in_range_bonus(&[], target, &schedule), 0);
        assert_eq!(in_range_bonus(&[reading(200)], target, &schedule), 0);
    }

    #[test]
    fn ledger_examples() {
        let mut ledger = RewardLedger::new();
        ledger.append(entry(15, "a")).unwrap();
        assert_eq!(ledger.balance(UserId(1)), 15);
        assert!(matches!(
            ledger.append(entry(15, "a")),
            Err(LedgerError::Duplicate { .. })
        ));
        assert_eq!(ledger.balance(UserId(1)), 15);
        ledger.append(entry(20, "b")).unwrap();
        ledger.append(entry(4, "c")).unwrap();
        assert_eq!(ledger.balance(UserId(1)), 39);
        assert_eq!(ledger.balance(UserId(2)), 0);
        assert_eq!(ledger.len(), 3);
    }

    #[test]
    fn same_source_different_reason_is_allowed() {
        let mut ledger = RewardLedger::new();
        ledger.append(entry(1, "day:2024-01-01")).unwrap();
        let mut area = entry(3, "day:2024-01-01");
        area.reason = RewardReason::AreaGoal(AdherenceArea::Diet);
        ledger.append(area).unwrap();
        assert_eq!(ledger.balance(UserId(1)), 4);
    }

    #[test]
    fn reason_text_roundtrip() {
        let reasons = [
            RewardReason::ExerciseKcal,
            RewardReason::InRangeCheck,
            RewardReason::AreaGoal(AdherenceArea::BgMonitoring),
        ];
        for reason in reasons {
            assert_eq!(reason.to_string().parse::<RewardReason>().unwrap(), reason);
        }
        assert!("area_goal:sleep".parse::<RewardReason>().is_err());
        assert!(RewardSchedule::default().validate().is_ok());
        assert!(RewardSchedule {
            area_bonus: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
