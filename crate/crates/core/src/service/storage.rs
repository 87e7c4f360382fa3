//! Storage interface shared by the in-memory and SQLite backends.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::UserHistory;
use crate::domain::{
    ExerciseSession, GlucoseReading, HealthProfile, MealRecord, MedicationEvent, UserId,
    UserProfile,
};
use crate::goals::{AdherenceArea, GoalSet};
use crate::rewards::RewardEntry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("storage backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewUser {
    pub nickname: String,
    pub email: String,
    pub password_hash: String,
    pub registered_at: DateTime<Utc>,
    pub health: Option<HealthProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredUser {
    pub profile: UserProfile,
    pub password_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseTag {
    Before,
    After,
}

impl ExerciseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ExerciseTag::Before => "before",
            ExerciseTag::After => "after",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reminder {
    pub user_id: UserId,
    pub area: AdherenceArea,
    pub sent_on: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsWrite {
    Inserted,
    Unchanged,
}

/// A stored BG row, optionally tied to an exercise session.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingRow {
    pub id: i64,
    pub reading: GlucoseReading,
    pub exercise: Option<(i64, ExerciseTag)>,
}

/// A stored session without its readings (those live in `bg_records`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseRow {
    pub id: i64,
    pub session: ExerciseSession,
}

/// Narrow persistence interface. Writes between `begin` and `commit` are
/// atomic; `rollback` discards them.
pub trait Storage: Send {
    fn begin(&mut self) -> Result<(), StorageError>;
    fn commit(&mut self) -> Result<(), StorageError>;
    fn rollback(&mut self);

    fn insert_user(&mut self, user: &NewUser) -> Result<UserId, StorageError>;
    fn user(&self, id: UserId) -> Result<Option<StoredUser>, StorageError>;
    /// Looks a user up by nickname or email.
    fn user_by_login(&self, login: &str) -> Result<Option<StoredUser>, StorageError>;
    fn users(&self) -> Result<Vec<StoredUser>, StorageError>;

    fn insert_goals(&mut self, goals: &GoalSet) -> Result<(), StorageError>;
    /// Goal sets in insertion order.
    fn goals(&self, user: UserId) -> Result<Vec<GoalSet>, StorageError>;

    fn insert_reading(
        &mut self,
        reading: &GlucoseReading,
        exercise: Option<(i64, ExerciseTag)>,
    ) -> Result<i64, StorageError>;
    /// Fails with `Conflict` when `client_key` was already used by this user.
    fn insert_exercise(
        &mut self,
        session: &ExerciseSession,
        client_key: Option<&str>,
    ) -> Result<i64, StorageError>;
    fn insert_meal(&mut self, meal: &MealRecord) -> Result<i64, StorageError>;
    fn insert_medication(&mut self, event: &MedicationEvent) -> Result<i64, StorageError>;
    /// Fails with `Conflict` when the date already holds a different count.
    fn put_steps(
        &mut self,
        user: UserId,
        date: NaiveDate,
        steps: u32,
    ) -> Result<StepsWrite, StorageError>;

    /// Returns `false`, writing nothing, when (user, reason, source_ref) exists.
    fn insert_reward(&mut self, entry: &RewardEntry) -> Result<bool, StorageError>;
    fn rewards(&self, user: UserId) -> Result<Vec<RewardEntry>, StorageError>;
    /// Balance computed by the backend itself, independent of `rewards`.
    fn reward_sum(&self, user: UserId) -> Result<u64, StorageError>;

    fn insert_reminder(&mut self, reminder: &Reminder) -> Result<(), StorageError>;
    fn reminders(&self, user: UserId) -> Result<Vec<Reminder>, StorageError>;

    fn readings(&self, user: UserId) -> Result<Vec<ReadingRow>, StorageError>;
    fn exercises(&self, user: UserId) -> Result<Vec<ExerciseRow>, StorageError>;
    fn meals(&self, user: UserId) -> Result<Vec<MealRecord>, StorageError>;
    fn medications(&self, user: UserId) -> Result<Vec<MedicationEvent>, StorageError>;
    fn steps(&self, user: UserId) -> Result<BTreeMap<NaiveDate, u32>, StorageError>;

    fn history(&self, user: UserId) -> Result<UserHistory, StorageError> {
        let readings = self.readings(user)?;
        let mut sessions = self.exercises(user)?;
        for row in &readings {
            let Some((exercise_id, tag)) = row.exercise else {
                continue;
            };
            if let Some(ex) = sessions.iter_mut().find(|e| e.id == exercise_id) {
                match tag {
                    ExerciseTag::Before => ex.session.bg_before = Some(row.reading.clone()),
                    ExerciseTag::After => ex.session.bg_after = Some(row.reading.clone()),
                }
            }
        }
        Ok(UserHistory {
            user_id: user,
            readings: readings.into_iter().map(|r| r.reading).collect(),
            sessions: sessions.into_iter().map(|e| e.session).collect(),
            meals: self.meals(user)?,
            medications: self.medications(user)?,
            steps: self.steps(user)?,
            rewards: self.rewards(user)?,
        })
    }
}

/// Strips the readings off a session before it is stored.
pub(crate) fn bare_session(session: &ExerciseSession) -> ExerciseSession {
    ExerciseSession {
        bg_before: None,
        bg_after: None,
        ..session.clone()
    }
}
