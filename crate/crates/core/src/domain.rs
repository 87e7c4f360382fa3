//! Shared domain types and the glycemic band classifier.

use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Surrogate key for a registered user.
#[derive(
    Debug, Default, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct UserId(pub i64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("rejected reading: {value} mg/dL is outside the sensor window [{min}, {max}]")]
    RejectedReading { value: i64, min: u32, max: u32 },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown {kind} '{value}'")]
    UnknownVariant { kind: &'static str, value: String },
}

macro_rules! text_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::domain::DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err($crate::domain::DomainError::UnknownVariant {
                        kind: $kind,
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}
pub(crate) use text_enum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MealContext {
    Fasting,
    PreMeal,
    PostMeal,
}

text_enum!(MealContext, "meal context", {
    Fasting => "fasting",
    PreMeal => "pre_meal",
    PostMeal => "post_meal",
});

/// Glycemic band, ordered from lowest to highest glucose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlycemicBand {
    Low,
    Normal,
    High,
    /// Only produced for pre/post-meal readings in (180, 250].
    Elevated,
    CriticallyHigh,
}

text_enum!(GlycemicBand, "glycemic band", {
    Low => "low",
    Normal => "normal",
    High => "high",
    Elevated => "elevated",
    CriticallyHigh => "critically_high",
});

impl GlycemicBand {
    /// Bands reachable for a given meal context, in ascending order.
    pub fn reachable(context: MealContext) -> &'static [GlycemicBand] {
        match context {
            MealContext::Fasting => &[
                GlycemicBand::Low,
                GlycemicBand::Normal,
                GlycemicBand::High,
                GlycemicBand::CriticallyHigh,
            ],
            MealContext::PreMeal | MealContext::PostMeal => GlycemicBand::ALL,
        }
    }
}

/// Band seams in mg/dL. Every threshold the classifier uses lives here.
///
/// Lower seams are inclusive (`low` is `[min, normal_from)`), upper seams are
/// inclusive tops (`normal` is `[normal_from, normal_max]`, `high` is
/// `(normal_max, high_max]` and so on).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandThresholds {
    pub reading_min: u32,
    pub reading_max: u32,
    pub normal_from: u32,
    pub normal_max: u32,
    pub high_max: u32,
    /// Top of `elevated` for pre/post-meal readings; fasting goes straight
    /// from `high` to `critically_high`.
    pub elevated_max: u32,
}

impl Default for BandThresholds {
    fn default() -> Self {
        Self {
            reading_min: 1,
            reading_max: 600,
            normal_from: 70,
            normal_max: 130,
            high_max: 180,
            elevated_max: 250,
        }
    }
}

impl BandThresholds {
    pub fn validate(&self) -> Result<(), DomainError> {
        let ordered = self.reading_min >= 1
            && self.reading_min < self.normal_from
            && self.normal_from <= self.normal_max
            && self.normal_max < self.high_max
            && self.high_max < self.elevated_max
            && self.elevated_max < self.reading_max;
        if ordered {
            Ok(())
        } else {
            Err(DomainError::Invalid {
                field: "thresholds",
                reason: format!("seams must be strictly ascending: {self:?}"),
            })
        }
    }

    pub fn check_reading(&self, value: i64) -> Result<u32, DomainError> {
        if value < i64::from(self.reading_min) || value > i64::from(self.reading_max) {
            return Err(DomainError::RejectedReading {
                value,
                min: self.reading_min,
                max: self.reading_max,
            });
        }
        Ok(value as u32)
    }

    pub fn classify(&self, value: u32, context: MealContext) -> Result<GlycemicBand, DomainError> {
        let value = self.check_reading(i64::from(value))?;
        let band = if value < self.normal_from {
            GlycemicBand::Low
        } else if value <= self.normal_max {
            GlycemicBand::Normal
        } else if value <= self.high_max {
            GlycemicBand::High
        } else {
            match context {
                MealContext::Fasting => GlycemicBand::CriticallyHigh,
                MealContext::PreMeal | MealContext::PostMeal if value <= self.elevated_max => {
                    GlycemicBand::Elevated
                }
                MealContext::PreMeal | MealContext::PostMeal => GlycemicBand::CriticallyHigh,
            }
        };
        Ok(band)
    }
}

/// Classifies a reading with the default seams.
pub fn classify_bg(value: u32, context: MealContext) -> Result<GlycemicBand, DomainError> {
    BandThresholds::default().classify(value, context)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Other,
}

text_enum!(Gender, "gender", {
    Male => "male",
    Female => "female",
    Other => "other",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseStatus {
    Sedentary,
    Occasional,
    Regular,
}

text_enum!(ExerciseStatus, "exercise status", {
    Sedentary => "sedentary",
    Occasional => "occasional",
    Regular => "regular",
});

/// Health details collected at registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthProfile {
    pub age: u32,
    pub gender: Gender,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub exercise_status: ExerciseStatus,
}

impl HealthProfile {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(1..=120).contains(&self.age) {
            return Err(invalid("age", format!("{} not in [1, 120]", self.age)));
        }
        if !(self.height_cm > 50.0 && self.height_cm < 250.0) {
            return Err(invalid(
                "height_cm",
                format!("{} not in (50, 250)", self.height_cm),
            ));
        }
        if !(self.weight_kg > 20.0 && self.weight_kg < 300.0) {
            return Err(invalid(
                "weight_kg",
                format!("{} not in (20, 300)", self.weight_kg),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub nickname: String,
    pub email: String,
    pub registered_at: DateTime<Utc>,
    /// Absent for accounts created by bulk replay, which carries no profile data.
    pub health: Option<HealthProfile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlucoseReading {
    pub user_id: UserId,
    pub value_mg_dl: u32,
    pub context: MealContext,
    pub taken_at: DateTime<Utc>,
}

impl GlucoseReading {
    pub fn new(
        user_id: UserId,
        value_mg_dl: i64,
        context: MealContext,
        taken_at: DateTime<Utc>,
        thresholds: &BandThresholds,
    ) -> Result<Self, DomainError> {
        let value_mg_dl = thresholds.check_reading(value_mg_dl)?;
        Ok(Self {
            user_id,
            value_mg_dl,
            context,
            taken_at,
        })
    }
}

/// Default energy cost of one step.
pub const DEFAULT_KCAL_PER_STEP: f64 = 0.04;

pub fn kcal_from_steps(steps: u32, kcal_per_step: f64) -> f64 {
    f64::from(steps) * kcal_per_step
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseSession {
    pub user_id: UserId,
    pub started_at: DateTime<Utc>,
    pub duration_min: u32,
    pub steps: u32,
    pub kcal_burned: f64,
    pub bg_before: Option<GlucoseReading>,
    pub bg_after: Option<GlucoseReading>,
}

impl ExerciseSession {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.kcal_burned >= 0.0 && self.kcal_burned.is_finite()) {
            return Err(invalid(
                "kcal_burned",
                format!("{} must be >= 0", self.kcal_burned),
            ));
        }
        if self.duration_min == 0 && self.steps != 0 {
            return Err(invalid(
                "steps",
                "a zero-minute session cannot have steps".into(),
            ));
        }
        Ok(())
    }

    /// BG change across the session; negative when glucose rose.
    pub fn bg_drop(&self) -> Option<i64> {
        match (&self.bg_before, &self.bg_after) {
            (Some(before), Some(after)) => {
                Some(i64::from(before.value_mg_dl) - i64::from(after.value_mg_dl))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealRecord {
    pub user_id: UserId,
    pub eaten_at: DateTime<Utc>,
    pub description: String,
    pub kcal: f64,
}

impl MealRecord {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.kcal >= 0.0 && self.kcal.is_finite()) {
            return Err(invalid("kcal", format!("{} must be >= 0", self.kcal)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationEvent {
    pub user_id: UserId,
    pub scheduled_at: DateTime<Utc>,
    pub taken_at: Option<DateTime<Utc>>,
    pub name: String,
}

impl MedicationEvent {
    pub fn validate(&self) -> Result<(), DomainError> {
        if let Some(taken) = self.taken_at {
            if taken < self.scheduled_at - Duration::hours(24) {
                return Err(invalid(
                    "taken_at",
                    "more than 24h before the scheduled dose".into(),
                ));
            }
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty".into()));
        }
        Ok(())
    }
}

fn invalid(field: &'static str, reason: String) -> DomainError {
    DomainError::Invalid { field, reason }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_and_two_examples() {
        assert_eq!(
            classify_bg(65, MealContext::Fasting).unwrap(),
            GlycemicBand::Low
        );
        assert_eq!(
            classify_bg(70, MealContext::Fasting).unwrap(),
            GlycemicBand::Normal
        );
        assert_eq!(
            classify_bg(200, MealContext::PostMeal).unwrap(),
            GlycemicBand::Elevated
        );
        assert_eq!(
            classify_bg(300, MealContext::PostMeal).unwrap(),
            GlycemicBand::CriticallyHigh
        );
        assert_eq!(
            classify_bg(150, MealContext::Fasting).unwrap(),
            GlycemicBand::High
        );
    }

    #[test]
    fn seams() {
        use GlycemicBand::*;
        use MealContext::*;
        let cases = [
            (69, Fasting, Low),
            (130, Fasting, Normal),
            (131, Fasting, High),
            (180, Fasting, High),
            (181, Fasting, CriticallyHigh),
            (250, Fasting, CriticallyHigh),
            (180, PreMeal, High),
            (181, PreMeal, Elevated),
            (250, PostMeal, Elevated),
            (251, PostMeal, CriticallyHigh),
        ];
        for (value, context, band) in cases {
            assert_eq!(
                classify_bg(value, context).unwrap(),
                band,
                "{value} {context}"
            );
        }
    }

    #[test]
    fn out_of_window_rejected() {
        assert!(matches!(
            classify_bg(0, MealContext::Fasting),
            Err(DomainError::RejectedReading { value: 0, .. })
        ));
        assert!(classify_bg(601, MealContext::PreMeal).is_err());
        assert!(classify_bg(1, MealContext::PreMeal).is_ok());
        assert!(classify_bg(600, MealContext::PreMeal).is_ok());
    }

    #[test]
    fn fasting_never_elevated_and_meal_contexts_agree() {
        for value in 1..=600 {
            let fasting = classify_bg(value, MealContext::Fasting).unwrap();
            assert_ne!(fasting, GlycemicBand::Elevated);
            assert_eq!(
                classify_bg(value, MealContext::PreMeal).unwrap(),
                classify_bg(value, MealContext::PostMeal).unwrap()
            );
        }
    }

    #[test]
    fn thresholds_must_ascend() {
        let broken = BandThresholds {
            high_max: 120,
            ..BandThresholds::default()
        };
        assert!(broken.validate().is_err());
        assert!(BandThresholds::default().validate().is_ok());
    }

    #[test]
    fn profile_bounds() {
        let mut profile = HealthProfile {
            age: 60,
            gender: Gender::Female,
            height_cm: 160.0,
            weight_kg: 70.0,
            exercise_status: ExerciseStatus::Occasional,
        };
        assert!(profile.validate().is_ok());
        profile.age = 0;
        assert!(profile.validate().is_err());
        profile.age = 60;
        profile.height_cm = 250.0;
        assert!(profile.validate().is_err());
    }

    #[test]
    fn session_drop_and_zero_duration() {
        let at = DateTime::<Utc>::UNIX_EPOCH;
        let reading = |v| GlucoseReading {
            user_id: UserId(1),
            value_mg_dl: v,
            context: MealContext::Fasting,
            taken_at: at,
        };
        let mut session = ExerciseSession {
            user_id: UserId(1),
            started_at: at,
            duration_min: 0,
            steps: 10,
            kcal_burned: 0.4,
            bg_before: Some(reading(140)),
            bg_after: Some(reading(150)),
        };
        assert!(session.validate().is_err());
        session.duration_min = 5;
        assert!(session.validate().is_ok());
        assert_eq!(session.bg_drop(), Some(-10));
        assert_eq!(kcal_from_steps(1000, DEFAULT_KCAL_PER_STEP), 40.0);
    }

    #[test]
    fn enum_text_roundtrip() {
        for context in MealContext::ALL {
            assert_eq!(context.as_str().parse::<MealContext>().unwrap(), *context);
        }
        assert!("brunch".parse::<MealContext>().is_err());
    }
}
