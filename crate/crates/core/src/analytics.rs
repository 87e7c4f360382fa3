//! Weekly and per-user aggregates, dashboard series and the analytics CSV.
//!
//! Every average is a mean over "entries". Glucose metrics have one entry per
//! reading; all other metrics have one entry per day with data (the day's
//! total). A bucket without entries is [`Aggregate::NoData`], never zero.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    text_enum, ExerciseSession, GlucoseReading, MealRecord, MedicationEvent, UserId,
};
use crate::goals::{AdherenceArea, DayLogs};
use crate::rewards::RewardEntry;

pub const STUDY_WINDOW_DAYS: u32 = 21;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("a week must span exactly 7 days, got {0}")]
    NotAWeek(i64),
    #[error(
        "a {STUDY_WINDOW_DAYS}-day window holds at most {STUDY_WINDOW_DAYS} daily values, got {0}"
    )]
    WindowOverflow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Aggregate {
    NoData,
    Mean { value: f64, n: usize },
}

impl Aggregate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Aggregate::NoData => None,
            Aggregate::Mean { value, .. } => Some(*value),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Aggregate::NoData => 0,
            Aggregate::Mean { n, .. } => *n,
        }
    }

    fn mean_of(values: impl IntoIterator<Item = f64>) -> Self {
        let (sum, n) = values
            .into_iter()
            .fold((0.0, 0usize), |(sum, n), v| (sum + v, n + 1));
        if n == 0 {
            Aggregate::NoData
        } else {
            Aggregate::Mean {
                value: sum / n as f64,
                n,
            }
        }
    }
}

/// Inclusive date range; `end < start` is an empty range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    /// `days` consecutive days starting at `start`.
    pub fn starting(start: NaiveDate, days: u32) -> Self {
        Self {
            start,
            end: start + Duration::days(i64::from(days) - 1),
        }
    }

    pub fn len_days(&self) -> i64 {
        ((self.end - self.start).num_days() + 1).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Daily,
    Weekly,
    Monthly,
}

text_enum!(Granularity, "granularity", {
    Daily => "daily",
    Weekly => "weekly",
    Monthly => "monthly",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bg,
    BgBefore,
    BgAfter,
    ExerciseMin,
    KcalIn,
    KcalOut,
    Steps,
    Points,
}

text_enum!(Metric, "metric", {
    Bg => "bg",
    BgBefore => "bg_before",
    BgAfter => "bg_after",
    ExerciseMin => "exercise_min",
    KcalIn => "kcal_in",
    KcalOut => "kcal_out",
    Steps => "steps",
    Points => "points",
});

/// Mean of the entries dated inside `week`, which must be 7 days long.
pub fn weekly_average(
    entries: &[(NaiveDate, f64)],
    week: DateRange,
) -> Result<Aggregate, AnalyticsError> {
    if week.len_days() != 7 {
        return Err(AnalyticsError::NotAWeek(week.len_days()));
    }
    Ok(bucket_mean(entries, week))
}

fn bucket_mean(entries: &[(NaiveDate, f64)], range: DateRange) -> Aggregate {
    Aggregate::mean_of(
        entries
            .iter()
            .filter(|(date, _)| range.contains(*date))
            .map(|(_, v)| *v),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Sum over the window divided by 21 whether or not every day has data.
    PaperLiteral,
    /// Sum divided by the number of days that have data.
    PerEntry,
}

/// Average of up to 21 daily values. An empty window is `NoData` in both modes.
pub fn user_average_21(
    daily_values: &[f64],
    mode: WindowMode,
) -> Result<Aggregate, AnalyticsError> {
    let n = daily_values.len();
    if n > STUDY_WINDOW_DAYS as usize {
        return Err(AnalyticsError::WindowOverflow(n));
    }
    if n == 0 {
        return Ok(Aggregate::NoData);
    }
    let sum: f64 = daily_values.iter().sum();
    let denominator = match mode {
        WindowMode::PaperLiteral => f64::from(STUDY_WINDOW_DAYS),
        WindowMode::PerEntry => n as f64,
    };
    Ok(Aggregate::Mean {
        value: sum / denominator,
        n,
    })
}

/// Every stored record of one user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserHistory {
    pub user_id: UserId,
    pub readings: Vec<GlucoseReading>,
    pub sessions: Vec<ExerciseSession>,
    pub meals: Vec<MealRecord>,
    pub medications: Vec<MedicationEvent>,
    pub steps: BTreeMap<NaiveDate, u32>,
    pub rewards: Vec<RewardEntry>,
}

fn daily_totals(items: impl IntoIterator<Item = (NaiveDate, f64)>) -> Vec<(NaiveDate, f64)> {
    let mut totals = BTreeMap::new();
    for (date, value) in items {
        *totals.entry(date).or_insert(0.0) += value;
    }
    totals.into_iter().collect()
}

impl UserHistory {
    pub fn new(user_id: UserId) -> Self {
        Self {
            user_id,
            ..Self::default()
        }
    }

    pub fn entries(&self, metric: Metric) -> Vec<(NaiveDate, f64)> {
        let session_day = |s: &ExerciseSession| s.started_at.date_naive();
        match metric {
            Metric::Bg => self
                .readings
                .iter()
                .map(|r| (r.taken_at.date_naive(), f64::from(r.value_mg_dl)))
                .collect(),
            Metric::BgBefore => self
                .sessions
                .iter()
                .filter_map(|s| {
                    s.bg_before
                        .as_ref()
                        .map(|r| (session_day(s), f64::from(r.value_mg_dl)))
                })
                .collect(),
            Metric::BgAfter => self
                .sessions
                .iter()
                .filter_map(|s| {
                    s.bg_after
                        .as_ref()
                        .map(|r| (session_day(s), f64::from(r.value_mg_dl)))
                })
                .collect(),
            Metric::ExerciseMin => daily_totals(
                self.sessions
                    .iter()
                    .map(|s| (session_day(s), f64::from(s.duration_min))),
            ),
            Metric::KcalIn => {
                daily_totals(self.meals.iter().map(|m| (m.eaten_at.date_naive(), m.kcal)))
            }
            Metric::KcalOut => daily_totals(
                self.sessions
                    .iter()
                    .map(|s| (session_day(s), s.kcal_burned)),
            ),
            Metric::Steps => {
                let mut days: BTreeMap<NaiveDate, DayLogs> = BTreeMap::new();
                for s in &self.sessions {
                    days.entry(session_day(s))
                        .or_default()
                        .sessions
                        .push(s.clone());
                }
                for (date, steps) in &self.steps {
                    days.entry(*date).or_default().imported_steps = Some(*steps);
                }
                days.into_iter()
                    .map(|(date, logs)| (date, f64::from(logs.total_steps())))
                    .collect()
            }
            Metric::Points => daily_totals(
                self.rewards
                    .iter()
                    .map(|e| (e.earned_at.date_naive(), f64::from(e.points))),
            ),
        }
    }

    pub fn day_logs(&self, date: NaiveDate) -> DayLogs {
        DayLogs {
            readings: self
                .readings
                .iter()
                .filter(|r| r.taken_at.date_naive() == date)
                .cloned()
                .collect(),
            sessions: self
                .sessions
                .iter()
                .filter(|s| s.started_at.date_naive() == date)
                .cloned()
                .collect(),
            meals: self
                .meals
                .iter()
                .filter(|m| m.eaten_at.date_naive() == date)
                .cloned()
                .collect(),
            medications: self
                .medications
                .iter()
                .filter(|m| m.scheduled_at.date_naive() == date)
                .cloned()
                .collect(),
            imported_steps: self.steps.get(&date).copied(),
        }
    }

    /// Most recent date on or before `today` with a log in `area`.
    pub fn last_log(&self, area: AdherenceArea, today: NaiveDate) -> Option<NaiveDate> {
        let dates: Vec<NaiveDate> = match area {
            AdherenceArea::BgMonitoring => self
                .readings
                .iter()
                .map(|r| r.taken_at.date_naive())
                .collect(),
            AdherenceArea::Medication => self
                .medications
                .iter()
                .map(|m| m.scheduled_at.date_naive())
                .collect(),
            AdherenceArea::Diet => self.meals.iter().map(|m| m.eaten_at.date_naive()).collect(),
            AdherenceArea::Exercise => self
                .sessions
                .iter()
                .map(|s| s.started_at.date_naive())
                .chain(self.steps.keys().copied())
                .collect(),
        };
        dates.into_iter().filter(|d| *d <= today).max()
    }

    /// First and last dates carrying any record.
    pub fn span(&self) -> Option<DateRange> {
        let dates = self
            .readings
            .iter()
            .map(|r| r.taken_at.date_naive())
            .chain(self.sessions.iter().map(|s| s.started_at.date_naive()))
            .chain(self.meals.iter().map(|m| m.eaten_at.date_naive()))
            .chain(self.medications.iter().map(|m| m.scheduled_at.date_naive()))
            .chain(self.steps.keys().copied())
            .chain(self.rewards.iter().map(|e| e.earned_at.date_naive()));
        let (min, max) = dates.fold(
            (None, None),
            |(lo, hi): (Option<NaiveDate>, Option<NaiveDate>), d| {
                (
                    Some(lo.map_or(d, |l| l.min(d))),
                    Some(hi.map_or(d, |h| h.max(d))),
                )
            },
        );
        Some(DateRange::new(min?, max?))
    }
}

/// Bucket spans for a range. Weeks are anchored at `range.start`; months are
/// calendar months clipped to the range.
pub fn buckets(range: DateRange, granularity: Granularity) -> Vec<DateRange> {
    let mut out = Vec::new();
    let mut start = range.start;
    while start <= range.end {
        let natural_end = match granularity {
            Granularity::Daily => start,
            Granularity::Weekly => start + Duration::days(6),
            Granularity::Monthly => {
                let (y, m) = if start.month() == 12 {
                    (start.year() + 1, 1)
                } else {
                    (start.year(), start.month() + 1)
                };
                NaiveDate::from_ymd_opt(y, m, 1).expect("first of month") - Duration::days(1)
            }
        };
        let end = natural_end.min(range.end);
        out.push(DateRange::new(start, end));
        start = end + Duration::days(1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardSeries {
    pub user_id: UserId,
    pub granularity: Granularity,
    pub range: DateRange,
    pub buckets: Vec<DateRange>,
    /// One aggregate per bucket, per metric.
    pub series: BTreeMap<Metric, Vec<Aggregate>>,
}

pub fn dashboard_series(
    history: &UserHistory,
    range: DateRange,
    granularity: Granularity,
) -> DashboardSeries {
    let spans = buckets(range, granularity);
    let series = Metric::ALL
        .iter()
        .map(|metric| {
            let entries = history.entries(*metric);
            let values = spans
                .iter()
                .map(|span| bucket_mean(&entries, *span))
                .collect();
            (*metric, values)
        })
        .collect();
    DashboardSeries {
        user_id: history.user_id,
        granularity,
        range,
        buckets: spans,
        series,
    }
}

pub const ANALYTICS_CSV_HEADER: &str = "user_id,bucket_start,metric,value,n";

fn format_value(value: f64) -> String {
    // Shortest round-trip form; no trailing noise, stable across runs.
    format!("{value}")
}

/// Writes one CSV row per user, bucket and metric.
pub fn export_csv(series: &[DashboardSeries]) -> String {
    let mut out = String::new();
    out.push_str(ANALYTICS_CSV_HEADER);
    out.push('\n');
    for s in series {
        for (i, span) in s.buckets.iter().enumerate() {
            for metric in Metric::ALL {
                let agg = s.series[metric][i];
                let value = agg.value().map(format_value).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    s.user_id,
                    span.start,
                    metric,
                    value,
                    agg.n()
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyStats {
    pub week_index: u32,
    pub start: NaiveDate,
    pub avg_bg_before: Aggregate,
    pub avg_bg_after: Aggregate,
    pub avg_reward_points: Aggregate,
    pub avg_exercise_min: Aggregate,
}

/// Pooled weekly means over every user, weeks anchored at `start`.
pub fn study_weekly_stats(
    histories: &[UserHistory],
    start: NaiveDate,
    weeks: u32,
) -> Vec<WeeklyStats> {
    let pooled = |metric| -> Vec<(NaiveDate, f64)> {
        histories.iter().flat_map(|h| h.entries(metric)).collect()
    };
    let before = pooled(Metric::BgBefore);
    let after = pooled(Metric::BgAfter);
    let points = pooled(Metric::Points);
    let minutes = pooled(Metric::ExerciseMin);
    (0..weeks)
        .map(|i| {
            let week = DateRange::starting(start + Duration::days(7 * i64::from(i)), 7);
            let avg =
                |entries: &[(NaiveDate, f64)]| weekly_average(entries, week).expect("7-day range");
            WeeklyStats {
                week_index: i + 1,
                start: week.start,
                avg_bg_before: avg(&before),
                avg_bg_after: avg(&after),
                avg_reward_points: avg(&points),
                avg_exercise_min: avg(&minutes),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub user_id: UserId,
    pub mode: WindowMode,
    pub avg_bg_before: Aggregate,
    pub avg_bg_after: Aggregate,
    pub avg_reward_points: Aggregate,
    pub avg_exercise_min: Aggregate,
}

/// Per-user 21-day averages over daily values.
pub fn user_stats(history: &UserHistory, window_start: NaiveDate, mode: WindowMode) -> UserStats {
    let window = DateRange::starting(window_start, STUDY_WINDOW_DAYS);
    let daily = |metric| -> Vec<f64> {
        let mut by_day: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
        for (date, value) in history.entries(metric) {
            if window.contains(date) {
                let slot = by_day.entry(date).or_insert((0.0, 0));
                slot.0 += value;
                slot.1 += 1;
            }
        }
        // Glucose days average their readings; other metrics are already daily totals.
        by_day.values().map(|(sum, n)| sum / *n as f64).collect()
    };
    let avg = |metric| user_average_21(&daily(metric), mode).expect("window is 21 days");
    UserStats {
        user_id: history.user_id,
        mode,
        avg_bg_before: avg(Metric::BgBefore),
        avg_bg_after: avg(Metric::BgAfter),
        avg_reward_points: avg(Metric::Points),
        avg_exercise_min: avg(Metric::ExerciseMin),
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregate::NoData => f.write_str("no data"),
            Aggregate::Mean { value, n } => write!(f, "{value:.1} (n={n})"),
        }
    }
}
