//! File-backed storage on SQLite.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveTime, SecondsFormat, Utc};
use rusqlite::{ffi, params, Connection, OptionalExtension, Row};

use super::storage::{
    bare_session, ExerciseRow, ExerciseTag, NewUser, ReadingRow, Reminder, StepsWrite, Storage,
    StorageError, StoredUser,
};
use crate::domain::{
    ExerciseSession, GlucoseReading, MealRecord, MedicationEvent, UserId, UserProfile,
};
use crate::goals::{BgTarget, GoalSet};
use crate::rewards::RewardEntry;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS users (
    id            INTEGER PRIMARY KEY,
    nickname      TEXT NOT NULL UNIQUE,
    email         TEXT NOT NULL UNIQUE,
    password_hash TEXT NOT NULL,
    registered_at TEXT NOT NULL,
    health        TEXT
);
CREATE TABLE IF NOT EXISTS goals (
    id                INTEGER PRIMARY KEY,
    user_id           INTEGER NOT NULL REFERENCES users(id),
    bg_low            INTEGER NOT NULL,
    bg_high           INTEGER NOT NULL,
    daily_steps       INTEGER NOT NULL,
    daily_kcal_burn   REAL NOT NULL,
    medication_times  TEXT NOT NULL,
    diet_log_required INTEGER NOT NULL,
    effective_from    TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS exercise_records (
    id           INTEGER PRIMARY KEY,
    user_id      INTEGER NOT NULL REFERENCES users(id),
    started_at   TEXT NOT NULL,
    duration_min INTEGER NOT NULL,
    steps        INTEGER NOT NULL,
    kcal_burned  REAL NOT NULL,
    client_key   TEXT,
    UNIQUE (user_id, client_key)
);
CREATE TABLE IF NOT EXISTS bg_records (
    id           INTEGER PRIMARY KEY,
    user_id      INTEGER NOT NULL REFERENCES users(id),
    value        INTEGER NOT NULL,
    context      TEXT NOT NULL,
    taken_at     TEXT NOT NULL,
    exercise_id  INTEGER REFERENCES exercise_records(id),
    exercise_tag TEXT CHECK (exercise_tag IN ('before', 'after'))
);
CREATE TABLE IF NOT EXISTS diet_records (
    id          INTEGER PRIMARY KEY,
    user_id     INTEGER NOT NULL REFERENCES users(id),
    eaten_at    TEXT NOT NULL,
    description TEXT NOT NULL,
    kcal        REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS medication_records (
    id           INTEGER PRIMARY KEY,
    user_id      INTEGER NOT NULL REFERENCES users(id),
    name         TEXT NOT NULL,
    scheduled_at TEXT NOT NULL,
    taken_at     TEXT
);
CREATE TABLE IF NOT EXISTS step_records (
    user_id INTEGER NOT NULL REFERENCES users(id),
    date    TEXT NOT NULL,
    steps   INTEGER NOT NULL,
    PRIMARY KEY (user_id, date)
);
CREATE TABLE IF NOT EXISTS reward_entries (
    id         INTEGER PRIMARY KEY,
    user_id    INTEGER NOT NULL REFERENCES users(id),
    earned_at  TEXT NOT NULL,
    points     INTEGER NOT NULL CHECK (points >= 0),
    reason     TEXT NOT NULL,
    source_ref TEXT NOT NULL,
    UNIQUE (user_id, reason, source_ref)
);
CREATE TABLE IF NOT EXISTS reminders (
    id      INTEGER PRIMARY KEY,
    user_id INTEGER NOT NULL REFERENCES users(id),
    area    TEXT NOT NULL,
    sent_on TEXT NOT NULL,
    UNIQUE (user_id, area, sent_on)
);
";

pub struct SqliteStore {
    conn: Connection,
}

fn backend(e: impl std::fmt::Display) -> StorageError {
    StorageError::Backend(e.to_string())
}

fn ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_ts(text: &str) -> rusqlite::Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| {
            rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
        })
}

fn parse_text<T>(text: &str) -> rusqlite::Result<T>
where
    T: std::str::FromStr,
    T::Err: std::error::Error + Send + Sync + 'static,
{
    text.parse().map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> rusqlite::Result<T> {
    serde_json::from_str(text).map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
    })
}

/// Maps constraint failures onto the storage error vocabulary.
fn write_error(e: rusqlite::Error, user: UserId, conflict: &str) -> StorageError {
    if let rusqlite::Error::SqliteFailure(err, _) = &e {
        match err.extended_code {
            ffi::SQLITE_CONSTRAINT_FOREIGNKEY => return StorageError::UnknownUser(user),
            ffi::SQLITE_CONSTRAINT_UNIQUE | ffi::SQLITE_CONSTRAINT_PRIMARYKEY => {
                return StorageError::Conflict(conflict.to_string())
            }
            _ => {}
        }
    }
    backend(e)
}

fn user_row(row: &Row<'_>) -> rusqlite::Result<StoredUser> {
    let health: Option<String> = row.get(5)?;
    Ok(StoredUser {
        profile: UserProfile {
            user_id: UserId(row.get(0)?),
            nickname: row.get(1)?,
            email: row.get(2)?,
            registered_at: parse_ts(&row.get::<_, String>(4)?)?,
            health: health.as_deref().map(parse_json).transpose()?,
        },
        password_hash: row.get(3)?,
    })
}

const USER_COLUMNS: &str = "id, nickname, email, password_hash, registered_at, health";

impl SqliteStore {
    pub fn open(path: &Path) -> Result<Self, StorageError> {
        Self::init(Connection::open(path).map_err(backend)?)
    }

    pub fn open_in_memory() -> Result<Self, StorageError> {
        Self::init(Connection::open_in_memory().map_err(backend)?)
    }

    fn init(conn: Connection) -> Result<Self, StorageError> {
        conn.execute_batch("PRAGMA foreign_keys = ON;")
            .map_err(backend)?;
        conn.execute_batch(SCHEMA).map_err(backend)?;
        Ok(Self { conn })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    fn collect<T>(
        &self,
        sql: &str,
        user: UserId,
        map: impl FnMut(&Row<'_>) -> rusqlite::Result<T>,
    ) -> Result<Vec<T>, StorageError> {
        let mut stmt = self.conn.prepare_cached(sql).map_err(backend)?;
        let rows = stmt.query_map(params![user.0], map).map_err(backend)?;
        rows.collect::<Result<_, _>>().map_err(backend)
    }
}

impl Storage for SqliteStore {
    fn begin(&mut self) -> Result<(), StorageError> {
        self.conn.execute_batch("BEGIN IMMEDIATE").map_err(backend)
    }

    fn commit(&mut self) -> Result<(), StorageError> {
        self.conn.execute_batch("COMMIT").map_err(backend)
    }

    fn rollback(&mut self) {
        if !self.conn.is_autocommit() {
            let _ = self.conn.execute_batch("ROLLBACK");
        }
    }

    fn insert_user(&mut self, user: &NewUser) -> Result<UserId, StorageError> {
        let health = user
            .health
            .as_ref()
            .map(serde_json::to_string)
            .transpose()
            .map_err(backend)?;
        self.conn
            .execute(
                "INSERT INTO users (nickname, email, password_hash, registered_at, health)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    user.nickname,
                    user.email,
                    user.password_hash,
                    ts(&user.registered_at),
                    health
                ],
            )
            .map_err(|e| write_error(e, UserId(0), "nickname or email already registered"))?;
        Ok(UserId(self.conn.last_insert_rowid()))
    }

    fn user(&self, id: UserId) -> Result<Option<StoredUser>, StorageError> {
        self.conn
            .query_row(
                &format!("SELECT {USER_COLUMNS} FROM users WHERE id = ?1"),
                params![id.0],
                user_row,
            )
            .optional()
            .map_err(backend)
    }

    fn user_by_login(&self, login: &str) -> Result<Option<StoredUser>, StorageError> {
        self.conn
            .query_row(
                &format!("SELECT {USER_COLUMNS} FROM users WHERE nickname = ?1 OR email = ?1 ORDER BY id LIMIT 1"),
                params![login],
                user_row,
            )
            .optional()
            .map_err(backend)
    }

    fn users(&self) -> Result<Vec<StoredUser>, StorageError> {
        let mut stmt = self
            .conn
            .prepare(&format!("SELECT {USER_COLUMNS} FROM users ORDER BY id"))
            .map_err(backend)?;
        let rows = stmt.query_map([], user_row).map_err(backend)?;
        rows.collect::<Result<_, _>>().map_err(backend)
    }

    fn insert_goals(&mut self, goals: &GoalSet) -> Result<(), StorageError> {
        let times = serde_json::to_string(&goals.medication_times).map_err(backend)?;
        self.conn
            .execute(
                "INSERT INTO goals (user_id, bg_low, bg_high, daily_steps, daily_kcal_burn,
                                    medication_times, diet_log_required, effective_from)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                params![
                    goals.user_id.0,
                    goals.bg_target.low,
                    goals.bg_target.high,
                    goals.daily_steps,
                    goals.daily_kcal_burn,
                    times,
                    goals.diet_log_required,
                    goals.effective_from.to_string(),
                ],
            )
            .map_err(|e| write_error(e, goals.user_id, "goal conflict"))?;
        Ok(())
    }

    fn goals(&self, user: UserId) -> Result<Vec<GoalSet>, StorageError> {
        self.collect(
            "SELECT bg_low, bg_high, daily_steps, daily_kcal_burn, medication_times,
                    diet_log_required, effective_from
             FROM goals WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                let times: Vec<NaiveTime> = parse_json(&row.get::<_, String>(4)?)?;
                Ok(GoalSet {
                    user_id: user,
                    bg_target: BgTarget {
                        low: row.get(0)?,
                        high: row.get(1)?,
                    },
                    daily_steps: row.get(2)?,
                    daily_kcal_burn: row.get(3)?,
                    medication_times: times,
                    diet_log_required: row.get(5)?,
                    effective_from: parse_text::<NaiveDate>(&row.get::<_, String>(6)?)?,
                })
            },
        )
    }

    fn insert_reading(
        &mut self,
        reading: &GlucoseReading,
        exercise: Option<(i64, ExerciseTag)>,
    ) -> Result<i64, StorageError> {
        self.conn
            .execute(
                "INSERT INTO bg_records (user_id, value, context, taken_at, exercise_id, exercise_tag)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![
                    reading.user_id.0,
                    reading.value_mg_dl,
                    reading.context.as_str(),
                    ts(&reading.taken_at),
                    exercise.map(|(id, _)| id),
                    exercise.map(|(_, tag)| tag.as_str()),
                ],
            )
            .map_err(|e| write_error(e, reading.user_id, "reading conflict"))?;
        Ok(self.conn.last_insert_rowid())
    }

    fn insert_exercise(
        &mut self,
        session: &ExerciseSession,
        client_key: Option<&str>,
    ) -> Result<i64, StorageError> {
        let s = bare_session(session);
        self.conn
            .execute(
                "INSERT INTO exercise_records (user_id, started_at, duration_min, steps, kcal_burned, client_key)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![s.user_id.0, ts(&s.started_at), s.duration_min, s.steps, s.kcal_burned, client_key],
            )
            .map_err(|e| {
                write_error(
                    e,
                    s.user_id,
                    &format!("idempotency key '{}' already used", client_key.unwrap_or_default()),
                )
            })?;
        Ok(self.conn.last_insert_rowid())
    }

    fn insert_meal(&mut self, meal: &MealRecord) -> Result<i64, StorageError> {
        self.conn
            .execute(
                "INSERT INTO diet_records (user_id, eaten_at, description, kcal) VALUES (?1, ?2, ?3, ?4)",
                params![meal.user_id.0, ts(&meal.eaten_at), meal.description, meal.kcal],
            )
            .map_err(|e| write_error(e, meal.user_id, "meal conflict"))?;
        Ok(self.conn.last_insert_rowid())
    }

    fn insert_medication(&mut self, event: &MedicationEvent) -> Result<i64, StorageError> {
        self.conn
            .execute(
                "INSERT INTO medication_records (user_id, name, scheduled_at, taken_at) VALUES (?1, ?2, ?3, ?4)",
                params![event.user_id.0, event.name, ts(&event.scheduled_at), event.taken_at.as_ref().map(ts)],
            )
            .map_err(|e| write_error(e, event.user_id, "medication conflict"))?;
        Ok(self.conn.last_insert_rowid())
    }

    fn put_steps(
        &mut self,
        user: UserId,
        date: NaiveDate,
        steps: u32,
    ) -> Result<StepsWrite, StorageError> {
        let existing: Option<u32> = self
            .conn
            .query_row(
                "SELECT steps FROM step_records WHERE user_id = ?1 AND date = ?2",
                params![user.0, date.to_string()],
                |row| row.get(0),
            )
            .optional()
            .map_err(backend)?;
        match existing {
            Some(e) if e == steps => Ok(StepsWrite::Unchanged),
            Some(e) => Err(StorageError::Conflict(format!(
                "{date} already holds {e} steps"
            ))),
            None => {
                self.conn
                    .execute(
                        "INSERT INTO step_records (user_id, date, steps) VALUES (?1, ?2, ?3)",
                        params![user.0, date.to_string(), steps],
                    )
                    .map_err(|e| write_error(e, user, "steps conflict"))?;
                Ok(StepsWrite::Inserted)
            }
        }
    }

    fn insert_reward(&mut self, entry: &RewardEntry) -> Result<bool, StorageError> {
        let changed = self
            .conn
            .execute(
                "INSERT OR IGNORE INTO reward_entries (user_id, earned_at, points, reason, source_ref)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    entry.user_id.0,
                    ts(&entry.earned_at),
                    entry.points,
                    entry.reason.to_string(),
                    entry.source_ref,
                ],
            )
            .map_err(|e| write_error(e, entry.user_id, "reward conflict"))?;
        Ok(changed == 1)
    }

    fn rewards(&self, user: UserId) -> Result<Vec<RewardEntry>, StorageError> {
        self.collect(
            "SELECT earned_at, points, reason, source_ref FROM reward_entries WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                Ok(RewardEntry {
                    user_id: user,
                    earned_at: parse_ts(&row.get::<_, String>(0)?)?,
                    points: row.get(1)?,
                    reason: parse_text(&row.get::<_, String>(2)?)?,
                    source_ref: row.get(3)?,
                })
            },
        )
    }

    fn reward_sum(&self, user: UserId) -> Result<u64, StorageError> {
        self.conn
            .query_row(
                "SELECT COALESCE(SUM(points), 0) FROM reward_entries WHERE user_id = ?1",
                params![user.0],
                |row| row.get::<_, i64>(0),
            )
            .map(|sum| sum as u64)
            .map_err(backend)
    }

    fn insert_reminder(&mut self, reminder: &Reminder) -> Result<(), StorageError> {
        self.conn
            .execute(
                "INSERT OR IGNORE INTO reminders (user_id, area, sent_on) VALUES (?1, ?2, ?3)",
                params![
                    reminder.user_id.0,
                    reminder.area.as_str(),
                    reminder.sent_on.to_string()
                ],
            )
            .map_err(|e| write_error(e, reminder.user_id, "reminder conflict"))?;
        Ok(())
    }

    fn reminders(&self, user: UserId) -> Result<Vec<Reminder>, StorageError> {
        self.collect(
            "SELECT area, sent_on FROM reminders WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                Ok(Reminder {
                    user_id: user,
                    area: parse_text(&row.get::<_, String>(0)?)?,
                    sent_on: parse_text(&row.get::<_, String>(1)?)?,
                })
            },
        )
    }

    fn readings(&self, user: UserId) -> Result<Vec<ReadingRow>, StorageError> {
        self.collect(
            "SELECT id, value, context, taken_at, exercise_id, exercise_tag
             FROM bg_records WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                let exercise_id: Option<i64> = row.get(4)?;
                let tag: Option<String> = row.get(5)?;
                let exercise = match (exercise_id, tag.as_deref()) {
                    (Some(id), Some("before")) => Some((id, ExerciseTag::Before)),
                    (Some(id), Some("after")) => Some((id, ExerciseTag::After)),
                    _ => None,
                };
                Ok(ReadingRow {
                    id: row.get(0)?,
                    reading: GlucoseReading {
                        user_id: user,
                        value_mg_dl: row.get(1)?,
                        context: parse_text(&row.get::<_, String>(2)?)?,
                        taken_at: parse_ts(&row.get::<_, String>(3)?)?,
                    },
                    exercise,
                })
            },
        )
    }

    fn exercises(&self, user: UserId) -> Result<Vec<ExerciseRow>, StorageError> {
        self.collect(
            "SELECT id, started_at, duration_min, steps, kcal_burned
             FROM exercise_records WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                Ok(ExerciseRow {
                    id: row.get(0)?,
                    session: ExerciseSession {
                        user_id: user,
                        started_at: parse_ts(&row.get::<_, String>(1)?)?,
                        duration_min: row.get(2)?,
                        steps: row.get(3)?,
                        kcal_burned: row.get(4)?,
                        bg_before: None,
                        bg_after: None,
                    },
                })
            },
        )
    }

    fn meals(&self, user: UserId) -> Result<Vec<MealRecord>, StorageError> {
        self.collect(
            "SELECT eaten_at, description, kcal FROM diet_records WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                Ok(MealRecord {
                    user_id: user,
                    eaten_at: parse_ts(&row.get::<_, String>(0)?)?,
                    description: row.get(1)?,
                    kcal: row.get(2)?,
                })
            },
        )
    }

    fn medications(&self, user: UserId) -> Result<Vec<MedicationEvent>, StorageError> {
        self.collect(
            "SELECT name, scheduled_at, taken_at FROM medication_records WHERE user_id = ?1 ORDER BY id",
            user,
            |row| {
                let taken: Option<String> = row.get(2)?;
                Ok(MedicationEvent {
                    user_id: user,
                    name: row.get(0)?,
                    scheduled_at: parse_ts(&row.get::<_, String>(1)?)?,
                    taken_at: taken.as_deref().map(parse_ts).transpose()?,
                })
            },
        )
    }

    fn steps(&self, user: UserId) -> Result<BTreeMap<NaiveDate, u32>, StorageError> {
        let rows = self.collect(
            "SELECT date, steps FROM step_records WHERE user_id = ?1 ORDER BY date",
            user,
            |row| {
                Ok((
                    parse_text::<NaiveDate>(&row.get::<_, String>(0)?)?,
                    row.get::<_, u32>(1)?,
                ))
            },
        )?;
        Ok(rows.into_iter().collect())
    }
}
