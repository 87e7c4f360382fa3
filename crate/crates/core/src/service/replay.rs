//! Bulk replay of a multi-user activity log.
//!
//! CSV with header `date,user,kind,field1,field2,field3`. `date` is RFC 3339
//! or `YYYY-MM-DD` (midnight UTC). `user` is a nickname; unknown nicknames are
//! registered on first use as `<nickname>@replay.invalid` with login disabled.
//!
//! | kind         | field1        | field2                 | field3                |
//! |--------------|---------------|------------------------|-----------------------|
//! | `register`   | email         |                        |                       |
//! | `reading`    | mg/dL         | context                | `before`, `after` or empty |
//! | `exercise`   | duration min  | steps                  | kcal (empty: from steps) |
//! | `meal`       | description   | kcal (empty: lookup)   | grams (empty: 100)    |
//! | `medication` | name          | taken_at (empty: missed) |                     |
//! | `steps`      | daily steps   |                        |                       |
//! | `goal`       | key           | value                  |                       |
//! | `close_day`  |               |                        |                       |
//!
//! A `reading` tagged `before`/`after` is held until the user's next
//! `exercise` row, which stores both with the session. For `medication` the
//! row date is the scheduled time. Goal keys: `bg_target` (`70-130`),
//! `daily_steps`, `daily_kcal_burn`, `medication_times` (`08:00;20:00`),
//! `diet_log_required` (`true`/`false`); each goal row starts a new goal set
//! effective from the row date.
//!
//! Bad rows are reported with their line number and skipped.

use std::collections::HashMap;
use std::io::Read;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::app::{
    App, ExerciseInput, GoalsInput, MealInput, MedicationInput, ReadingInput, ServiceError,
};
use super::storage::{ExerciseTag, Storage};
use crate::domain::{MealContext, UserId};
use crate::goals::{BgTarget, GoalValidation};

pub const REPLAY_HEADER: [&str; 6] = ["date", "user", "kind", "field1", "field2", "field3"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub date: String,
    pub user: String,
    pub kind: String,
    #[serde(default)]
    pub field1: String,
    #[serde(default)]
    pub field2: String,
    #[serde(default)]
    pub field3: String,
}

impl ReplayRow {
    pub fn new(
        date: impl Into<String>,
        user: impl Into<String>,
        kind: &str,
        fields: [&str; 3],
    ) -> Self {
        Self {
            date: date.into(),
            user: user.into(),
            kind: kind.to_string(),
            field1: fields[0].to_string(),
            field2: fields[1].to_string(),
            field3: fields[2].to_string(),
        }
    }
}

/// Writes rows, header included.
pub fn write_replay_csv(rows: &[ReplayRow]) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    for row in rows {
        out.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(out.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub rows: usize,
    pub applied: usize,
    pub users_created: usize,
    pub issues: Vec<ReplayIssue>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(
        "replay log must start with the header `date,user,kind,field1,field2,field3`, found `{0}`"
    )]
    Header(String),
    #[error("replay log could not be read: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayOp {
    Register {
        email: String,
    },
    Reading {
        input: ReadingInput,
        tag: Option<ExerciseTag>,
    },
    Exercise {
        duration_min: u32,
        steps: u32,
        kcal: Option<f64>,
    },
    Meal(MealInput),
    Medication(MedicationInput),
    Steps {
        date: NaiveDate,
        steps: i64,
    },
    Goal {
        key: GoalKey,
        value: String,
    },
    CloseDay {
        date: NaiveDate,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalKey {
    BgTarget,
    DailySteps,
    DailyKcalBurn,
    MedicationTimes,
    DietLogRequired,
}

pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, String> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map(|d| DateTime::from_naive_utc_and_offset(d.and_time(NaiveTime::MIN), Utc))
        .map_err(|_| format!("bad date '{text}' (want RFC 3339 or YYYY-MM-DD)"))
}

fn number<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, String> {
    text.trim()
        .parse()
        .map_err(|_| format!("bad {what} '{text}'"))
}

fn optional<T: std::str::FromStr>(text: &str, what: &str) -> Result<Option<T>, String> {
    if text.trim().is_empty() {
        Ok(None)
    } else {
        number(text, what).map(Some)
    }
}

/// Parses one row into the operation it describes.
pub fn parse_row(row: &ReplayRow) -> Result<(DateTime<Utc>, ReplayOp), String> {
    let at = parse_timestamp(&row.date)?;
    let (f1, f2, f3) = (row.field1.trim(), row.field2.trim(), row.field3.trim());
    let op = match row.kind.trim() {
        "register" => ReplayOp::Register {
            email: f1.to_string(),
        },
        "reading" => ReplayOp::Reading {
            input: ReadingInput {
                value: number(f1, "mg/dL value")?,
                context: f2.parse::<MealContext>().map_err(|e| e.to_string())?,
                taken_at: Some(at),
            },
            tag: match f3 {
                "" => None,
                "before" => Some(ExerciseTag::Before),
                "after" => Some(ExerciseTag::After),
                other => {
                    return Err(format!(
                        "bad exercise tag '{other}' (want before, after or empty)"
                    ))
                }
            },
        },
        "exercise" => ReplayOp::Exercise {
            duration_min: number(f1, "duration")?,
            steps: optional(f2, "step count")?.unwrap_or(0),
            kcal: optional(f3, "kcal")?,
        },
        "meal" => ReplayOp::Meal(MealInput {
            eaten_at: Some(at),
            description: f1.to_string(),
            kcal: optional(f2, "kcal")?,
            grams: optional(f3, "grams")?,
        }),
        "medication" => ReplayOp::Medication(MedicationInput {
            name: f1.to_string(),
            scheduled_at: at,
            taken_at: if f2.is_empty() {
                None
            } else {
                Some(parse_timestamp(f2)?)
            },
        }),
        "steps" => ReplayOp::Steps {
            date: at.date_naive(),
            steps: number(f1, "step count")?,
        },
        "goal" => ReplayOp::Goal {
            key: match f1 {
                "bg_target" => GoalKey::BgTarget,
                "daily_steps" => GoalKey::DailySteps,
                "daily_kcal_burn" => GoalKey::DailyKcalBurn,
                "medication_times" => GoalKey::MedicationTimes,
                "diet_log_required" => GoalKey::DietLogRequired,
                other => return Err(format!("unknown goal key '{other}'")),
            },
            value: f2.to_string(),
        },
        "close_day" => ReplayOp::CloseDay {
            date: at.date_naive(),
        },
        other => return Err(format!("unknown kind '{other}'")),
    };
    Ok((at, op))
}

fn apply_goal(input: &mut GoalsInput, key: GoalKey, value: &str) -> Result<(), String> {
    match key {
        GoalKey::BgTarget => {
            input.bg_target = value.parse::<BgTarget>().map_err(|e| e.to_string())?
        }
        GoalKey::DailySteps => input.daily_steps = number(value, "daily_steps")?,
        GoalKey::DailyKcalBurn => input.daily_kcal_burn = number(value, "daily_kcal_burn")?,
        GoalKey::MedicationTimes => {
            input.medication_times = value
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    NaiveTime::parse_from_str(t, "%H:%M").map_err(|_| format!("bad time '{t}'"))
                })
                .collect::<Result<_, _>>()?;
        }
        GoalKey::DietLogRequired => input.diet_log_required = number(value, "diet_log_required")?,
    }
    Ok(())
}

#[derive(Default)]
struct Pending {
    before: Option<(u64, ReadingInput)>,
    after: Option<(u64, ReadingInput)>,
}

struct Replayer<'a, S> {
    app: &'a App<S>,
    users: HashMap<String, UserId>,
    pending: HashMap<UserId, Pending>,
    summary: ReplaySummary,
}

impl<S: Storage> Replayer<'_, S> {
    fn user(
        &mut self,
        nickname: &str,
        at: DateTime<Utc>,
        email: Option<&str>,
    ) -> Result<UserId, ServiceError> {
        if let Some(id) = self.users.get(nickname) {
            return Ok(*id);
        }
        let id = match self.app.user_by_login(nickname)? {
            Some(profile) => profile.user_id,
            None => {
                let email =
                    email.map_or_else(|| format!("{nickname}@replay.invalid"), str::to_string);
                self.summary.users_created += 1;
                self.app.register_locked(nickname, &email, at)?.user_id
            }
        };
        self.users.insert(nickname.to_string(), id);
        Ok(id)
    }

    async fn apply(&mut self, line: u64, row: &ReplayRow) -> Result<(), String> {
        let (at, op) = parse_row(row)?;
        let nickname = row.user.trim();
        let email = match &op {
            ReplayOp::Register { email } => Some(email.as_str()),
            _ => None,
        };
        let user = self.user(nickname, at, email).map_err(|e| e.to_string())?;
        let app = self.app;
        match op {
            ReplayOp::Register { .. } => {}
            ReplayOp::Reading { input, tag: None } => {
                app.add_reading(user, &input, at)
                    .map_err(|e| e.to_string())?;
            }
            ReplayOp::Reading {
                input,
                tag: Some(tag),
            } => {
                let pending = self.pending.entry(user).or_default();
                let slot = match tag {
                    ExerciseTag::Before => &mut pending.before,
                    ExerciseTag::After => &mut pending.after,
                };
                if let Some((earlier, _)) = slot.replace((line, input)) {
                    self.summary.issues.push(ReplayIssue {
                        line: earlier,
                        message: format!(
                            "{} reading superseded before any exercise row",
                            tag.as_str()
                        ),
                    });
                }
            }
            ReplayOp::Exercise {
                duration_min,
                steps,
                kcal,
            } => {
                let pending = self.pending.remove(&user).unwrap_or_default();
                let input = ExerciseInput {
                    started_at: at,
                    duration_min,
                    steps,
                    kcal_burned: kcal,
                    bg_before: pending.before.map(|(_, r)| r),
                    bg_after: pending.after.map(|(_, r)| r),
                };
                app.add_exercise(user, &input, None)
                    .map_err(|e| e.to_string())?;
            }
            ReplayOp::Meal(input) => {
                app.add_meal(user, &input, at)
                    .await
                    .map_err(|e| e.to_string())?;
            }
            ReplayOp::Medication(input) => {
                app.add_medication(user, &input)
                    .map_err(|e| e.to_string())?;
            }
            ReplayOp::Steps { date, steps } => {
                app.add_steps(user, date, steps)
                    .map_err(|e| e.to_string())?;
            }
            ReplayOp::Goal { key, value } => {
                let date = at.date_naive();
                let current = app.goals_for(user, date).map_err(|e| e.to_string())?;
                let mut input = GoalsInput::from_goals(&current);
                input.effective_from = Some(date);
                apply_goal(&mut input, key, &value)?;
                match app
                    .put_goals(user, &input, date)
                    .map_err(|e| e.to_string())?
                {
                    GoalValidation::Accepted { .. } => {}
                    GoalValidation::Corrected { reasons, .. } => {
                        return Err(format!("goal rejected: {}", reasons.join("; ")));
                    }
                }
            }
            ReplayOp::CloseDay { date } => {
                app.close_day(user, date).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

/// Replays a log through `app`, row by row, in file order.
pub async fn replay<S: Storage, R: Read>(
    app: &App<S>,
    reader: R,
) -> Result<ReplaySummary, ReplayError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != REPLAY_HEADER {
        return Err(ReplayError::Header(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut replayer = Replayer {
        app,
        users: HashMap::new(),
        pending: HashMap::new(),
        summary: ReplaySummary::default(),
    };
    for record in csv.records() {
        replayer.summary.rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                replayer.summary.issues.push(ReplayIssue {
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let outcome = if record.len() == REPLAY_HEADER.len() {
            match record.deserialize::<ReplayRow>(Some(&header)) {
                Ok(row) => replayer.apply(line, &row).await,
                Err(e) => Err(e.to_string()),
            }
        } else {
            Err(format!(
                "expected {} fields, found {}",
                REPLAY_HEADER.len(),
                record.len()
            ))
        };
        match outcome {
            Ok(()) => replayer.summary.applied += 1,
            Err(message) => replayer.summary.issues.push(ReplayIssue { line, message }),
        }
    }
    let mut leftovers: Vec<ReplayIssue> = replayer
        .pending
        .values()
        .flat_map(|p| [p.before.as_ref(), p.after.as_ref()])
        .flatten()
        .map(|(line, _)| ReplayIssue {
            line: *line,
            message: "tagged reading never followed by an exercise row".into(),
        })
        .collect();
    leftovers.sort_by_key(|i| i.line);
    replayer.summary.issues.extend(leftovers);
    Ok(replayer.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: &str, fields: [&str; 3]) -> ReplayRow {
        ReplayRow::new("2024-03-01T08:00:00Z", "ana", kind, fields)
    }

    #[test]
    fn parses_each_kind() {
        let (at, op) = parse_row(&row("reading", ["95", "fasting", ""])).unwrap();
        assert_eq!(at.to_rfc3339(), "2024-03-01T08:00:00+00:00");
        assert!(matches!(op, ReplayOp::Reading { tag: None, ref input } if input.value == 95));
        assert!(matches!(
            parse_row(&row("reading", ["150", "post_meal", "before"]))
                .unwrap()
                .1,
            ReplayOp::Reading {
                tag: Some(ExerciseTag::Before),
                ..
            }
        ));
        assert_eq!(
            parse_row(&row("exercise", ["35", "4000", ""])).unwrap().1,
            ReplayOp::Exercise {
                duration_min: 35,
                steps: 4000,
                kcal: None
            }
        );
        assert!(
            matches!(parse_row(&row("meal", ["white rice", "", "150"])).unwrap().1, ReplayOp::Meal(m) if m.grams == Some(150.0) && m.kcal.is_none())
        );
        assert!(
            matches!(parse_row(&row("medication", ["metformin", "", ""])).unwrap().1, ReplayOp::Medication(m) if m.taken_at.is_none())
        );
        assert!(matches!(
            parse_row(&row("goal", ["bg_target", "80-140", ""]))
                .unwrap()
                .1,
            ReplayOp::Goal {
                key: GoalKey::BgTarget,
                ..
            }
        ));
        let day = ReplayRow::new("2024-03-02", "ana", "close_day", ["", "", ""]);
        assert_eq!(
            parse_row(&day).unwrap().1,
            ReplayOp::CloseDay {
                date: NaiveDate::from_ymd_opt(2024, 3, 2).unwrap()
            }
        );
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_row(&row("nap", ["", "", ""])).is_err());
        assert!(parse_row(&row("reading", ["x", "fasting", ""])).is_err());
        assert!(parse_row(&row("reading", ["90", "brunch", ""])).is_err());
        assert!(parse_row(&row("reading", ["90", "fasting", "during"])).is_err());
        assert!(parse_row(&row("goal", ["mood", "1", ""])).is_err());
        assert!(parse_row(&ReplayRow::new(
            "yesterday",
            "ana",
            "close_day",
            ["", "", ""]
        ))
        .is_err());
    }

    #[test]
    fn goal_values() {
        let mut input = GoalsInput {
            bg_target: BgTarget { low: 70, high: 130 },
            daily_steps: 6000,
            daily_kcal_burn: 200.0,
            medication_times: vec![],
            diet_log_required: false,
            effective_from: None,
        };
        apply_goal(&mut input, GoalKey::MedicationTimes, "08:00; 20:00").unwrap();
        assert_eq!(input.medication_times.len(), 2);
        apply_goal(&mut input, GoalKey::DietLogRequired, "true").unwrap();
        assert!(input.diet_log_required);
        assert!(apply_goal(&mut input, GoalKey::MedicationTimes, "8am").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("meal", ["Rice, white", "", "150"])];
        let text = write_replay_csv(&rows);
        assert!(text.starts_with("date,user,kind,field1,field2,field3\n"));
        assert!(text.contains("\"Rice, white\""));
    }
}
