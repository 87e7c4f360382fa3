//! Application operations over a [`Storage`] backend.
//!
//! Every write runs inside one storage transaction while holding the store
//! lock, so writes for a user are applied one at a time and reads see a
//! consistent snapshot. The HTTP layer and bulk replay both go through here.

use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::auth::{hash_password, verify_password, SessionToken, Sessions, LOCKED_HASH};
use super::storage::{ExerciseTag, NewUser, Reminder, StepsWrite, Storage, StorageError};
use crate::analytics::{
    dashboard_series, export_csv, DashboardSeries, DateRange, Granularity, UserHistory,
};
use crate::config::Config;
use crate::connectors::{
    import_steps, FoodCatalog, NutritionError, NutritionLookup, RemoteNutrition, RowError,
};
use crate::domain::{
    kcal_from_steps, BandThresholds, DomainError, ExerciseSession, GlucoseReading, GlycemicBand,
    HealthProfile, MealContext, MealRecord, MedicationEvent, UserId, UserProfile,
};
use crate::goals::{
    education_gate, evaluate_day, reminder_due, AdherenceArea, AdherencePolicy, AreaFlags,
    BgTarget, DailyLogStatus, EducationCatalog, GoalBounds, GoalError, GoalSet, GoalValidation,
    KnowledgeSurvey,
};
use crate::recommend::{Phase, RecommendError, Recommendation, RuleTable};
use crate::rewards::{exercise_points, RewardEntry, RewardReason, RewardSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("missing or expired session")]
    Unauthorized,
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Goal(#[from] GoalError),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("setup: {0}")]
    Setup(String),
}

impl From<DomainError> for ServiceError {
    fn from(e: DomainError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<RecommendError> for ServiceError {
    fn from(e: RecommendError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<StorageError> for ServiceError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::Conflict(m) => ServiceError::Conflict(m),
            StorageError::UnknownUser(_) => ServiceError::NotFound(e.to_string()),
            StorageError::Backend(m) => ServiceError::Storage(m),
        }
    }
}

impl From<NutritionError> for ServiceError {
    fn from(e: NutritionError) -> Self {
        match e {
            NutritionError::EmptyQuery => ServiceError::Validation(e.to_string()),
            NutritionError::NotFound(_) => ServiceError::NotFound(e.to_string()),
            NutritionError::Catalog { .. } => ServiceError::Storage(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterRequest {
    pub nickname: String,
    pub email: String,
    pub password: String,
    #[serde(default)]
    pub health: Option<HealthProfile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoginRequest {
    /// Nickname or email.
    pub login: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingInput {
    pub value: i64,
    pub context: MealContext,
    #[serde(default)]
    pub taken_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingOutcome {
    pub id: i64,
    pub reading: GlucoseReading,
    pub band: GlycemicBand,
    pub recommendation: Recommendation,
    pub rewards: Vec<RewardEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExerciseInput {
    pub started_at: DateTime<Utc>,
    pub duration_min: u32,
    #[serde(default)]
    pub steps: u32,
    /// Derived from steps when absent.
    #[serde(default)]
    pub kcal_burned: Option<f64>,
    /// Defaults to `started_at` when its `taken_at` is absent.
    #[serde(default)]
    pub bg_before: Option<ReadingInput>,
    /// Defaults to the end of the session when its `taken_at` is absent.
    #[serde(default)]
    pub bg_after: Option<ReadingInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExerciseOutcome {
    pub id: i64,
    pub session: ExerciseSession,
    pub pre_exercise: Recommendation,
    pub recommendation: Recommendation,
    pub rewards: Vec<RewardEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MealInput {
    #[serde(default)]
    pub eaten_at: Option<DateTime<Utc>>,
    pub description: String,
    /// Looked up from the food catalog when absent.
    #[serde(default)]
    pub kcal: Option<f64>,
    /// Serving size for catalog lookups; 100 g when absent.
    #[serde(default)]
    pub grams: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MealOutcome {
    pub id: i64,
    pub meal: MealRecord,
    pub matched_name: Option<String>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationInput {
    pub name: String,
    pub scheduled_at: DateTime<Utc>,
    #[serde(default)]
    pub taken_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalsInput {
    pub bg_target: BgTarget,
    pub daily_steps: u32,
    pub daily_kcal_burn: f64,
    #[serde(default)]
    pub medication_times: Vec<NaiveTime>,
    #[serde(default)]
    pub diet_log_required: bool,
    /// Today when absent.
    #[serde(default)]
    pub effective_from: Option<NaiveDate>,
}

impl GoalsInput {
    pub fn from_goals(goals: &GoalSet) -> Self {
        Self {
            bg_target: goals.bg_target,
            daily_steps: goals.daily_steps,
            daily_kcal_burn: goals.daily_kcal_burn,
            medication_times: goals.medication_times.clone(),
            diet_log_required: goals.diet_log_required,
            effective_from: Some(goals.effective_from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepsImportOutcome {
    pub inserted: usize,
    pub unchanged: usize,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloseDayOutcome {
    pub status: DailyLogStatus,
    pub rewards: Vec<RewardEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardsView {
    pub user_id: UserId,
    pub balance: u64,
    pub entries: Vec<RewardEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DueReminder {
    pub area: AdherenceArea,
    pub last_log: Option<NaiveDate>,
    pub sent_on: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EducationItem {
    pub area: AdherenceArea,
    pub content_key: String,
    pub text: String,
}

/// Inputs for a stateless what-if recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationQuery {
    pub phase: Phase,
    pub context: MealContext,
    pub bg: i64,
    #[serde(default)]
    pub bg_before: Option<i64>,
    #[serde(default)]
    pub duration_min: Option<u32>,
    #[serde(default)]
    pub kcal: Option<f64>,
}

pub struct App<S> {
    store: Mutex<S>,
    engine: RuleTable,
    education: EducationCatalog,
    nutrition: NutritionLookup,
    sessions: Sessions,
    schedule: RewardSchedule,
    bounds: GoalBounds,
    policy: AdherencePolicy,
    kcal_per_step: f64,
}

fn end_of_day(date: NaiveDate) -> DateTime<Utc> {
    DateTime::from_naive_utc_and_offset(date.and_hms_opt(23, 59, 59).expect("valid time"), Utc)
}

impl<S: Storage> App<S> {
    /// Builds the app from config, loading any rule/food/education files it names.
    /// The remote nutrition source is taken from the environment.
    pub fn new(store: S, config: &Config) -> Result<Self, ServiceError> {
        config.validate()?;
        let setup = |e: &dyn std::fmt::Display| ServiceError::Setup(e.to_string());
        let engine = match &config.rules_path {
            Some(path) => RuleTable::from_path(path).map_err(|e| setup(&e))?,
            None => RuleTable::bundled(),
        }
        .with_thresholds(config.thresholds);
        let catalog = match &config.foods_path {
            Some(path) => FoodCatalog::from_path(path).map_err(|e| setup(&e))?,
            None => FoodCatalog::bundled(),
        };
        let education = match &config.education_path {
            Some(path) => EducationCatalog::from_path(path).map_err(|e| setup(&e))?,
            None => EducationCatalog::bundled(),
        };
        let remote = RemoteNutrition::from_env(config.nutrition_timeout());
        Ok(Self {
            store: Mutex::new(store),
            engine,
            education,
            nutrition: NutritionLookup::new(catalog, remote),
            sessions: Sessions::new(chrono::Duration::minutes(config.session_ttl_minutes)),
            schedule: config.schedule,
            bounds: config.goal_bounds,
            policy: config.adherence,
            kcal_per_step: config.kcal_per_step,
        })
    }

    pub fn with_nutrition(mut self, nutrition: NutritionLookup) -> Self {
        self.nutrition = nutrition;
        self
    }

    pub fn engine(&self) -> &RuleTable {
        &self.engine
    }

    pub fn thresholds(&self) -> &BandThresholds {
        self.engine.thresholds()
    }

    pub fn schedule(&self) -> &RewardSchedule {
        &self.schedule
    }

    fn lock(&self) -> MutexGuard<'_, S> {
        self.store
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn write<R>(
        &self,
        f: impl FnOnce(&mut S) -> Result<R, ServiceError>,
    ) -> Result<R, ServiceError> {
        let mut store = self.lock();
        store.begin()?;
        match f(&mut store) {
            Ok(value) => {
                if let Err(e) = store.commit() {
                    store.rollback();
                    return Err(e.into());
                }
                Ok(value)
            }
            Err(e) => {
                store.rollback();
                Err(e)
            }
        }
    }

    fn read<R>(&self, f: impl FnOnce(&S) -> Result<R, ServiceError>) -> Result<R, ServiceError> {
        f(&self.lock())
    }

    /// Runs `f` against the raw store, e.g. for audit queries.
    pub fn with_store<R>(&self, f: impl FnOnce(&S) -> R) -> R {
        f(&self.lock())
    }

    pub fn into_store(self) -> S {
        self.store
            .into_inner()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn register(
        &self,
        req: &RegisterRequest,
        now: DateTime<Utc>,
    ) -> Result<UserProfile, ServiceError> {
        if req.password.chars().count() < 8 {
            return Err(ServiceError::Validation(
                "password must have at least 8 characters".into(),
            ));
        }
        if let Some(health) = &req.health {
            health.validate()?;
        }
        let hash = hash_password(&req.password);
        self.insert_user(&req.nickname, &req.email, hash, now, req.health.clone())
    }

    /// Creates an account that cannot log in, for bulk replay.
    pub fn register_locked(
        &self,
        nickname: &str,
        email: &str,
        registered_at: DateTime<Utc>,
    ) -> Result<UserProfile, ServiceError> {
        self.insert_user(
            nickname,
            email,
            LOCKED_HASH.to_string(),
            registered_at,
            None,
        )
    }

    fn insert_user(
        &self,
        nickname: &str,
        email: &str,
        password_hash: String,
        registered_at: DateTime<Utc>,
        health: Option<HealthProfile>,
    ) -> Result<UserProfile, ServiceError> {
        let nickname = nickname.trim();
        let email = email.trim();
        if nickname.is_empty() || nickname.len() > 64 || nickname.contains(char::is_whitespace) {
            return Err(ServiceError::Validation(
                "nickname must be 1-64 characters without whitespace".into(),
            ));
        }
        if nickname.contains('@') {
            return Err(ServiceError::Validation(
                "nickname must not contain '@'".into(),
            ));
        }
        let valid_email = email
            .split_once('@')
            .is_some_and(|(local, domain)| !local.is_empty() && domain.contains('.'));
        if !valid_email || email.len() > 254 {
            return Err(ServiceError::Validation(format!(
                "'{email}' is not an email address"
            )));
        }
        let user = NewUser {
            nickname: nickname.to_string(),
            email: email.to_string(),
            password_hash,
            registered_at,
            health,
        };
        self.write(|store| {
            let id = store.insert_user(&user)?;
            Ok(UserProfile {
                user_id: id,
                nickname: user.nickname.clone(),
                email: user.email.clone(),
                registered_at: user.registered_at,
                health: user.health.clone(),
            })
        })
    }

    pub fn login(
        &self,
        req: &LoginRequest,
        now: DateTime<Utc>,
    ) -> Result<SessionToken, ServiceError> {
        let user = self.read(|store| Ok(store.user_by_login(req.login.trim())?))?;
        match user {
            Some(user) if verify_password(&req.password, &user.password_hash) => {
                Ok(self.sessions.issue(user.profile.user_id, now))
            }
            _ => Err(ServiceError::Unauthorized),
        }
    }

    pub fn authenticate(&self, token: &str, now: DateTime<Utc>) -> Result<UserId, ServiceError> {
        self.sessions
            .resolve(token, now)
            .ok_or(ServiceError::Unauthorized)
    }

    pub fn profile(&self, user: UserId) -> Result<UserProfile, ServiceError> {
        self.read(|store| {
            store
                .user(user)?
                .map(|u| u.profile)
                .ok_or_else(|| ServiceError::NotFound(format!("unknown user {user}")))
        })
    }

    pub fn user_by_login(&self, login: &str) -> Result<Option<UserProfile>, ServiceError> {
        self.read(|store| Ok(store.user_by_login(login)?.map(|u| u.profile)))
    }

    pub fn users(&self) -> Result<Vec<UserProfile>, ServiceError> {
        self.read(|store| Ok(store.users()?.into_iter().map(|u| u.profile).collect()))
    }

    pub fn goals_for(&self, user: UserId, date: NaiveDate) -> Result<GoalSet, ServiceError> {
        self.read(|store| goals_in_effect(store, user, date))
    }

    /// Validates and, when accepted, stores a new goal set.
    pub fn put_goals(
        &self,
        user: UserId,
        input: &GoalsInput,
        today: NaiveDate,
    ) -> Result<GoalValidation, ServiceError> {
        let mut medication_times = input.medication_times.clone();
        medication_times.sort();
        medication_times.dedup();
        let proposed = GoalSet {
            user_id: user,
            bg_target: input.bg_target,
            daily_steps: input.daily_steps,
            daily_kcal_burn: input.daily_kcal_burn,
            medication_times,
            diet_log_required: input.diet_log_required,
            effective_from: input.effective_from.unwrap_or(today),
        };
        let outcome = crate::goals::validate_goals(&proposed, &self.bounds)?;
        if let GoalValidation::Accepted { goals } = &outcome {
            self.write(|store| {
                require_user(store, user)?;
                Ok(store.insert_goals(goals)?)
            })?;
        }
        Ok(outcome)
    }

    pub fn add_reading(
        &self,
        user: UserId,
        input: &ReadingInput,
        now: DateTime<Utc>,
    ) -> Result<ReadingOutcome, ServiceError> {
        let reading = GlucoseReading::new(
            user,
            input.value,
            input.context,
            input.taken_at.unwrap_or(now),
            self.thresholds(),
        )?;
        let band = self.engine.classify(&reading)?;
        let recommendation = self.engine.recommend(Phase::PreExercise, &reading, None)?;
        self.write(|store| {
            require_user(store, user)?;
            let id = store.insert_reading(&reading, None)?;
            let rewards = self
                .award_in_range(store, &reading, id)?
                .into_iter()
                .collect();
            Ok(ReadingOutcome {
                id,
                reading: reading.clone(),
                band,
                recommendation: recommendation.clone(),
                rewards,
            })
        })
    }

    fn award_in_range(
        &self,
        store: &mut S,
        reading: &GlucoseReading,
        id: i64,
    ) -> Result<Option<RewardEntry>, ServiceError> {
        let date = reading.taken_at.date_naive();
        let goals = goals_in_effect(store, reading.user_id, date)?;
        if !goals.bg_target.contains(reading.value_mg_dl) {
            return Ok(None);
        }
        let awarded_today = store
            .rewards(reading.user_id)?
            .iter()
            .filter(|e| e.reason == RewardReason::InRangeCheck && e.earned_at.date_naive() == date)
            .count();
        if awarded_today >= self.schedule.in_range_daily_cap as usize {
            return Ok(None);
        }
        let entry = RewardEntry {
            user_id: reading.user_id,
            earned_at: reading.taken_at,
            points: self.schedule.in_range_check_bonus,
            reason: RewardReason::InRangeCheck,
            source_ref: format!("reading:{id}"),
        };
        Ok(store.insert_reward(&entry)?.then_some(entry))
    }

    pub fn add_exercise(
        &self,
        user: UserId,
        input: &ExerciseInput,
        idempotency_key: Option<&str>,
    ) -> Result<ExerciseOutcome, ServiceError> {
        let (Some(before), Some(after)) = (&input.bg_before, &input.bg_after) else {
            return Err(ServiceError::Validation(
                "an exercise session needs both bg_before and bg_after readings".into(),
            ));
        };
        let ended_at = input.started_at + chrono::Duration::minutes(i64::from(input.duration_min));
        let t = self.thresholds();
        let before = GlucoseReading::new(
            user,
            before.value,
            before.context,
            before.taken_at.unwrap_or(input.started_at),
            t,
        )?;
        let after = GlucoseReading::new(
            user,
            after.value,
            after.context,
            after.taken_at.unwrap_or(ended_at),
            t,
        )?;
        let session = ExerciseSession {
            user_id: user,
            started_at: input.started_at,
            duration_min: input.duration_min,
            steps: input.steps,
            kcal_burned: input
                .kcal_burned
                .unwrap_or_else(|| kcal_from_steps(input.steps, self.kcal_per_step)),
            bg_before: Some(before.clone()),
            bg_after: Some(after.clone()),
        };
        session.validate()?;
        let pre_exercise = self.engine.recommend(Phase::PreExercise, &before, None)?;
        let recommendation = self
            .engine
            .recommend(Phase::PostExercise, &after, Some(&session))?;
        let key = idempotency_key.map(str::trim).filter(|k| !k.is_empty());

        self.write(|store| {
            require_user(store, user)?;
            let id = store.insert_exercise(&session, key)?;
            let mut rewards = Vec::new();
            let before_id = store.insert_reading(&before, Some((id, ExerciseTag::Before)))?;
            rewards.extend(self.award_in_range(store, &before, before_id)?);
            let after_id = store.insert_reading(&after, Some((id, ExerciseTag::After)))?;
            rewards.extend(self.award_in_range(store, &after, after_id)?);
            let points = exercise_points(&session, Some(pre_exercise.action), &self.schedule);
            if points > 0 {
                let entry = RewardEntry {
                    user_id: user,
                    earned_at: session.started_at,
                    points,
                    reason: RewardReason::ExerciseKcal,
                    source_ref: format!("exercise:{id}"),
                };
                if store.insert_reward(&entry)? {
                    rewards.push(entry);
                }
            }
            Ok(ExerciseOutcome {
                id,
                session: session.clone(),
                pre_exercise: pre_exercise.clone(),
                recommendation: recommendation.clone(),
                rewards,
            })
        })
    }

    pub async fn add_meal(
        &self,
        user: UserId,
        input: &MealInput,
        now: DateTime<Utc>,
    ) -> Result<MealOutcome, ServiceError> {
        if input.description.trim().is_empty() {
            return Err(ServiceError::Validation(
                "meal description must not be empty".into(),
            ));
        }
        let (kcal, matched_name, warning) = match input.kcal {
            Some(kcal) => (kcal, None, None),
            None => {
                let grams = input.grams.unwrap_or(100.0);
                if !(grams > 0.0 && grams.is_finite()) {
                    return Err(ServiceError::Validation(format!(
                        "grams must be > 0, got {grams}"
                    )));
                }
                let found = self.nutrition.lookup_food(&input.description).await?;
                (
                    found.record.kcal_for(grams),
                    Some(found.record.matched_name),
                    found.warning,
                )
            }
        };
        let meal = MealRecord {
            user_id: user,
            eaten_at: input.eaten_at.unwrap_or(now),
            description: input.description.trim().to_string(),
            kcal,
        };
        meal.validate()?;
        self.write(|store| {
            require_user(store, user)?;
            let id = store.insert_meal(&meal)?;
            Ok(MealOutcome {
                id,
                meal: meal.clone(),
                matched_name: matched_name.clone(),
                warning: warning.clone(),
            })
        })
    }

    pub fn add_medication(
        &self,
        user: UserId,
        input: &MedicationInput,
    ) -> Result<i64, ServiceError> {
        let event = MedicationEvent {
            user_id: user,
            scheduled_at: input.scheduled_at,
            taken_at: input.taken_at,
            name: input.name.trim().to_string(),
        };
        event.validate()?;
        self.write(|store| {
            require_user(store, user)?;
            Ok(store.insert_medication(&event)?)
        })
    }

    pub fn add_steps(
        &self,
        user: UserId,
        date: NaiveDate,
        steps: i64,
    ) -> Result<StepsWrite, ServiceError> {
        let steps = u32::try_from(steps)
            .map_err(|_| ServiceError::Validation(format!("step count {steps} out of range")))?;
        self.write(|store| {
            require_user(store, user)?;
            Ok(store.put_steps(user, date, steps)?)
        })
    }

    /// Imports a `date,steps` export. Bad or conflicting rows are reported and skipped.
    pub fn import_steps(
        &self,
        user: UserId,
        csv: &str,
    ) -> Result<StepsImportOutcome, ServiceError> {
        let parsed =
            import_steps(csv.as_bytes()).map_err(|e| ServiceError::Validation(e.to_string()))?;
        let mut errors = parsed.errors;
        self.write(|store| {
            require_user(store, user)?;
            let (mut inserted, mut unchanged) = (0, 0);
            for (i, row) in parsed.rows.iter().enumerate() {
                match store.put_steps(user, row.date, row.steps) {
                    Ok(StepsWrite::Inserted) => inserted += 1,
                    Ok(StepsWrite::Unchanged) => unchanged += 1,
                    Err(StorageError::Conflict(message)) => errors.push(RowError {
                        line: i as u64 + 2,
                        message,
                    }),
                    Err(e) => return Err(e.into()),
                }
            }
            errors.sort_by_key(|e| e.line);
            Ok(StepsImportOutcome {
                inserted,
                unchanged,
                errors: std::mem::take(&mut errors),
            })
        })
    }

    /// Scores a finished day and awards the area bonuses it earned.
    pub fn close_day(
        &self,
        user: UserId,
        date: NaiveDate,
    ) -> Result<CloseDayOutcome, ServiceError> {
        self.write(|store| {
            require_user(store, user)?;
            let logs = store.history(user)?.day_logs(date);
            let goals = goals_in_effect(store, user, date)?;
            let status = evaluate_day(user, date, &logs, &goals, &self.policy);
            let mut rewards = Vec::new();
            for area in status.goals_met.areas_where(true) {
                let entry = RewardEntry {
                    user_id: user,
                    earned_at: end_of_day(date),
                    points: self.schedule.area_bonus,
                    reason: RewardReason::AreaGoal(area),
                    source_ref: format!("day:{date}"),
                };
                if store.insert_reward(&entry)? {
                    rewards.push(entry);
                }
            }
            Ok(CloseDayOutcome { status, rewards })
        })
    }

    /// Reminders for `today`, recording any newly due ones. Calling again on
    /// the same day returns the same list.
    pub fn due_reminders(
        &self,
        user: UserId,
        today: NaiveDate,
    ) -> Result<Vec<DueReminder>, ServiceError> {
        self.write(|store| {
            require_user(store, user)?;
            let history = store.history(user)?;
            let goals = goals_in_effect(store, user, today)?;
            let sent = store.reminders(user)?;
            let mut due = Vec::new();
            for area in AdherenceArea::ALL.iter().copied() {
                let last_log = history.last_log(area, today);
                let sent_today = sent.iter().any(|r| r.area == area && r.sent_on == today);
                let last_reminder = sent
                    .iter()
                    .filter(|r| r.area == area && r.sent_on < today)
                    .map(|r| r.sent_on)
                    .max();
                if sent_today || reminder_due(last_log, last_reminder, goals.effective_from, today)
                {
                    store.insert_reminder(&Reminder {
                        user_id: user,
                        area,
                        sent_on: today,
                    })?;
                    due.push(DueReminder {
                        area,
                        last_log,
                        sent_on: today,
                    });
                }
            }
            Ok(due)
        })
    }

    pub fn education(
        &self,
        user: UserId,
        knows: AreaFlags,
    ) -> Result<Vec<EducationItem>, ServiceError> {
        self.profile(user)?;
        Ok(education_gate(&KnowledgeSurvey {
            user_id: user,
            knows,
        })
        .into_iter()
        .map(|i| EducationItem {
            text: self
                .education
                .text(&i.content_key)
                .unwrap_or_default()
                .to_string(),
            area: i.area,
            content_key: i.content_key,
        })
        .collect())
    }

    /// Stateless engine query; nothing is stored.
    pub fn recommendation(&self, q: &RecommendationQuery) -> Result<Recommendation, ServiceError> {
        let at = DateTime::<Utc>::UNIX_EPOCH;
        let t = self.thresholds();
        let reading = GlucoseReading::new(UserId(0), q.bg, q.context, at, t)?;
        match q.phase {
            Phase::PreExercise => Ok(self.engine.recommend(Phase::PreExercise, &reading, None)?),
            Phase::PostExercise => {
                let before = q.bg_before.ok_or_else(|| {
                    ServiceError::Validation("post_exercise needs bg_before".into())
                })?;
                let session = ExerciseSession {
                    user_id: UserId(0),
                    started_at: at,
                    duration_min: q.duration_min.unwrap_or(0),
                    steps: 0,
                    kcal_burned: q.kcal.unwrap_or(0.0),
                    bg_before: Some(GlucoseReading::new(UserId(0), before, q.context, at, t)?),
                    bg_after: Some(reading.clone()),
                };
                session.validate()?;
                Ok(self
                    .engine
                    .recommend(Phase::PostExercise, &reading, Some(&session))?)
            }
        }
    }

    pub fn rewards(&self, user: UserId) -> Result<RewardsView, ServiceError> {
        self.read(|store| {
            require_user(store, user)?;
            let entries = store.rewards(user)?;
            Ok(RewardsView {
                user_id: user,
                balance: entries.iter().map(|e| u64::from(e.points)).sum(),
                entries,
            })
        })
    }

    /// Balance as summed by the storage backend.
    pub fn audited_balance(&self, user: UserId) -> Result<u64, ServiceError> {
        self.read(|store| Ok(store.reward_sum(user)?))
    }

    pub fn history(&self, user: UserId) -> Result<UserHistory, ServiceError> {
        self.read(|store| {
            require_user(store, user)?;
            Ok(store.history(user)?)
        })
    }

    pub fn histories(&self) -> Result<Vec<UserHistory>, ServiceError> {
        self.read(|store| {
            store
                .users()?
                .iter()
                .map(|u| Ok(store.history(u.profile.user_id)?))
                .collect()
        })
    }

    /// Dashboard series; the range defaults to the user's recorded span.
    pub fn dashboard(
        &self,
        user: UserId,
        range: Option<DateRange>,
        granularity: Granularity,
        today: NaiveDate,
    ) -> Result<DashboardSeries, ServiceError> {
        let history = self.history(user)?;
        let range = range
            .or_else(|| history.span())
            .unwrap_or_else(|| DateRange::new(today, today));
        check_range(range)?;
        Ok(dashboard_series(&history, range, granularity))
    }

    /// Analytics CSV for every user, in user order.
    pub fn export(
        &self,
        range: DateRange,
        granularity: Granularity,
    ) -> Result<String, ServiceError> {
        check_range(range)?;
        let series: Vec<DashboardSeries> = self
            .histories()?
            .iter()
            .map(|h| dashboard_series(h, range, granularity))
            .collect();
        Ok(export_csv(&series))
    }
}

fn check_range(range: DateRange) -> Result<(), ServiceError> {
    if range.is_empty() {
        return Err(ServiceError::Validation(format!(
            "range end {} is before start {}",
            range.end, range.start
        )));
    }
    if range.len_days() > 3660 {
        return Err(ServiceError::Validation(
            "range is limited to 3660 days".into(),
        ));
    }
    Ok(())
}

fn require_user<S: Storage>(store: &S, user: UserId) -> Result<UserProfile, ServiceError> {
    store
        .user(user)?
        .map(|u| u.profile)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown user {user}")))
}

/// Latest goal set effective on `date`; defaults from the registration date otherwise.
fn goals_in_effect<S: Storage>(
    store: &S,
    user: UserId,
    date: NaiveDate,
) -> Result<GoalSet, ServiceError> {
    let all = store.goals(user)?;
    let best = all
        .iter()
        .enumerate()
        .filter(|(_, g)| g.effective_from <= date)
        .max_by_key(|(i, g)| (g.effective_from, *i))
        .map(|(_, g)| g.clone());
    match best {
        Some(goals) => Ok(goals),
        None => {
            let profile = require_user(store, user)?;
            Ok(GoalSet::default_for(
                user,
                profile.registered_at.date_naive(),
            ))
        }
    }
}
