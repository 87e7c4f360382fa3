//! In-memory storage for tests and one-shot CLI runs.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::storage::{
    bare_session, ExerciseRow, ExerciseTag, NewUser, ReadingRow, Reminder, StepsWrite, Storage,
    StorageError, StoredUser,
};
use crate::domain::{
    ExerciseSession, GlucoseReading, MealRecord, MedicationEvent, UserId, UserProfile,
};
use crate::goals::GoalSet;
use crate::rewards::{RewardEntry, RewardLedger};

#[derive(Debug, Clone, Default)]
struct State {
    users: Vec<StoredUser>,
    goals: Vec<GoalSet>,
    readings: Vec<ReadingRow>,
    exercises: Vec<(ExerciseRow, Option<String>)>,
    meals: Vec<MealRecord>,
    medications: Vec<MedicationEvent>,
    steps: BTreeMap<(UserId, NaiveDate), u32>,
    ledger: RewardLedger,
    reminders: Vec<Reminder>,
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    state: State,
    snapshot: Option<State>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn require_user(&self, id: UserId) -> Result<(), StorageError> {
        if self.state.users.iter().any(|u| u.profile.user_id == id) {
            Ok(())
        } else {
            Err(StorageError::UnknownUser(id))
        }
    }
}

impl Storage for MemoryStore {
    fn begin(&mut self) -> Result<(), StorageError> {
        if self.snapshot.is_some() {
            return Err(StorageError::Backend("transaction already open".into()));
        }
        self.snapshot = Some(self.state.clone());
        Ok(())
    }

    fn commit(&mut self) -> Result<(), StorageError> {
        self.snapshot = None;
        Ok(())
    }

    fn rollback(&mut self) {
        if let Some(state) = self.snapshot.take() {
            self.state = state;
        }
    }

    fn insert_user(&mut self, user: &NewUser) -> Result<UserId, StorageError> {
        let taken = self
            .state
            .users
            .iter()
            .any(|u| u.profile.nickname == user.nickname || u.profile.email == user.email);
        if taken {
            return Err(StorageError::Conflict(
                "nickname or email already registered".into(),
            ));
        }
        let id = UserId(self.state.users.len() as i64 + 1);
        self.state.users.push(StoredUser {
            profile: UserProfile {
                user_id: id,
                nickname: user.nickname.clone(),
                email: user.email.clone(),
                registered_at: user.registered_at,
                health: user.health.clone(),
            },
            password_hash: user.password_hash.clone(),
        });
        Ok(id)
    }

    fn user(&self, id: UserId) -> Result<Option<StoredUser>, StorageError> {
        Ok(self
            .state
            .users
            .iter()
            .find(|u| u.profile.user_id == id)
            .cloned())
    }

    fn user_by_login(&self, login: &str) -> Result<Option<StoredUser>, StorageError> {
        Ok(self
            .state
            .users
            .iter()
            .find(|u| u.profile.nickname == login || u.profile.email == login)
            .cloned())
    }

    fn users(&self) -> Result<Vec<StoredUser>, StorageError> {
        Ok(self.state.users.clone())
    }

    fn insert_goals(&mut self, goals: &GoalSet) -> Result<(), StorageError> {
        self.require_user(goals.user_id)?;
        self.state.goals.push(goals.clone());
        Ok(())
    }

    fn goals(&self, user: UserId) -> Result<Vec<GoalSet>, StorageError> {
        Ok(self
            .state
            .goals
            .iter()
            .filter(|g| g.user_id == user)
            .cloned()
            .collect())
    }

    fn insert_reading(
        &mut self,
        reading: &GlucoseReading,
        exercise: Option<(i64, ExerciseTag)>,
    ) -> Result<i64, StorageError> {
        self.require_user(reading.user_id)?;
        let id = self.state.readings.len() as i64 + 1;
        self.state.readings.push(ReadingRow {
            id,
            reading: reading.clone(),
            exercise,
        });
        Ok(id)
    }

    fn insert_exercise(
        &mut self,
        session: &ExerciseSession,
        client_key: Option<&str>,
    ) -> Result<i64, StorageError> {
        self.require_user(session.user_id)?;
        if let Some(key) = client_key {
            let used = self.state.exercises.iter().any(|(row, k)| {
                row.session.user_id == session.user_id && k.as_deref() == Some(key)
            });
            if used {
                return Err(StorageError::Conflict(format!(
                    "idempotency key '{key}' already used"
                )));
            }
        }
        let id = self.state.exercises.len() as i64 + 1;
        self.state.exercises.push((
            ExerciseRow {
                id,
                session: bare_session(session),
            },
            client_key.map(str::to_string),
        ));
        Ok(id)
    }

    fn insert_meal(&mut self, meal: &MealRecord) -> Result<i64, StorageError> {
        self.require_user(meal.user_id)?;
        self.state.meals.push(meal.clone());
        Ok(self.state.meals.len() as i64)
    }

    fn insert_medication(&mut self, event: &MedicationEvent) -> Result<i64, StorageError> {
        self.require_user(event.user_id)?;
        self.state.medications.push(event.clone());
        Ok(self.state.medications.len() as i64)
    }

    fn put_steps(
        &mut self,
        user: UserId,
        date: NaiveDate,
        steps: u32,
    ) -> Result<StepsWrite, StorageError> {
        self.require_user(user)?;
        match self.state.steps.get(&(user, date)) {
            Some(existing) if *existing == steps => Ok(StepsWrite::Unchanged),
            Some(existing) => Err(StorageError::Conflict(format!(
                "{date} already holds {existing} steps"
            ))),
            None => {
                self.state.steps.insert((user, date), steps);
                Ok(StepsWrite::Inserted)
            }
        }
    }

    fn insert_reward(&mut self, entry: &RewardEntry) -> Result<bool, StorageError> {
        self.require_user(entry.user_id)?;
        Ok(self.state.ledger.append(entry.clone()).is_ok())
    }

    fn rewards(&self, user: UserId) -> Result<Vec<RewardEntry>, StorageError> {
        Ok(self.state.ledger.entries_for(user).cloned().collect())
    }

    fn reward_sum(&self, user: UserId) -> Result<u64, StorageError> {
        Ok(self.state.ledger.balance(user))
    }

    fn insert_reminder(&mut self, reminder: &Reminder) -> Result<(), StorageError> {
        self.require_user(reminder.user_id)?;
        if !self.state.reminders.contains(reminder) {
            self.state.reminders.push(reminder.clone());
        }
        Ok(())
    }

    fn reminders(&self, user: UserId) -> Result<Vec<Reminder>, StorageError> {
        Ok(self
            .state
            .reminders
            .iter()
            .filter(|r| r.user_id == user)
            .cloned()
            .collect())
    }

    fn readings(&self, user: UserId) -> Result<Vec<ReadingRow>, StorageError> {
        Ok(self
            .state
            .readings
            .iter()
            .filter(|r| r.reading.user_id == user)
            .cloned()
            .collect())
    }

    fn exercises(&self, user: UserId) -> Result<Vec<ExerciseRow>, StorageError> {
        Ok(self
            .state
            .exercises
            .iter()
            .filter(|(row, _)| row.session.user_id == user)
            .map(|(row, _)| row.clone())
            .collect())
    }

    fn meals(&self, user: UserId) -> Result<Vec<MealRecord>, StorageError> {
        Ok(self
            .state
            .meals
            .iter()
            .filter(|m| m.user_id == user)
            .cloned()
            .collect())
    }

    fn medications(&self, user: UserId) -> Result<Vec<MedicationEvent>, StorageError> {
        Ok(self
            .state
            .medications
            .iter()
            .filter(|m| m.user_id == user)
            .cloned()
            .collect())
    }

    fn steps(&self, user: UserId) -> Result<BTreeMap<NaiveDate, u32>, StorageError> {
        Ok(self
            .state
            .steps
            .iter()
            .filter(|((u, _), _)| *u == user)
            .map(|((_, d), s)| (*d, *s))
            .collect())
    }
}
