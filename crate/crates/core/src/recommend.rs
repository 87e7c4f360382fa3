//! Exercise guidance decision table.
//!
//! The table is loaded from a versioned JSON rules document and is checked
//! for totality on load: every reachable `(phase, context, band)` key must
//! have exactly one rule.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    text_enum, BandThresholds, DomainError, ExerciseSession, GlucoseReading, GlycemicBand,
    MealContext,
};

pub const RULES_FORMAT_VERSION: u32 = 1;

const BUNDLED_RULES: &str = include_str!("../data/rules.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreExercise,
    PostExercise,
}

text_enum!(Phase, "phase", {
    PreExercise => "pre_exercise",
    PostExercise => "post_exercise",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseAction {
    /// Exercise forbidden.
    Block,
    AllowLight,
    AllowModerate,
    AllowLightToModerate,
    /// Exercise forbidden; check ketones and see a doctor.
    WarnBlock,
}

text_enum!(ExerciseAction, "exercise action", {
    Block => "block",
    AllowLight => "allow_light",
    AllowModerate => "allow_moderate",
    AllowLightToModerate => "allow_light_to_moderate",
    WarnBlock => "warn_block",
});

impl ExerciseAction {
    pub fn permits_exercise(self) -> bool {
        !matches!(self, ExerciseAction::Block | ExerciseAction::WarnBlock)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleKey {
    pub phase: Phase,
    pub context: MealContext,
    pub band: GlycemicBand,
}

impl fmt::Display for RuleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.phase, self.context, self.band)
    }
}

impl RuleKey {
    /// Every key the classifier can produce.
    pub fn reachable() -> Vec<RuleKey> {
        let mut keys = Vec::new();
        for &phase in Phase::ALL {
            for &context in MealContext::ALL {
                for &band in GlycemicBand::reachable(context) {
                    keys.push(RuleKey {
                        phase,
                        context,
                        band,
                    });
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationRule {
    pub phase: Phase,
    pub context: MealContext,
    pub band: GlycemicBand,
    pub action: ExerciseAction,
    pub template: String,
    pub promises_reward: bool,
    pub advises_hydration: bool,
    pub advises_doctor: bool,
}

impl RecommendationRule {
    pub fn key(&self) -> RuleKey {
        RuleKey {
            phase: self.phase,
            context: self.context,
            band: self.band,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub key: RuleKey,
    pub rendered_message: String,
    pub action: ExerciseAction,
    pub reward_promised: bool,
    pub advises_hydration: bool,
    pub advises_doctor: bool,
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("rules file could not be read: {0}")]
    Io(#[from] std::io::Error),
    #[error("rules file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported rules format version {found} (expected {RULES_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("duplicate rule for {0}")]
    Duplicate(RuleKey),
    #[error("no rule for reachable key {0}")]
    Missing(RuleKey),
    #[error("rule {0} can never be selected (fasting readings are never `elevated`)")]
    Unreachable(RuleKey),
    #[error("rule {key}: {reason}")]
    Invalid { key: RuleKey, reason: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error(transparent)]
    Reading(#[from] DomainError),
    #[error("incomplete input: {0}")]
    Incomplete(&'static str),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("no value supplied for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
}

/// Values substituted into post-exercise templates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MessageValues {
    pub bg_drop: Option<i64>,
    pub duration_min: Option<u32>,
    pub kcal: Option<f64>,
}

pub const PLACEHOLDERS: [&str; 3] = ["bg_drop", "duration_min", "kcal"];

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .bytes()
                        .all(|b| b.is_ascii_alphanumeric() || b == b'_') =>
            {
                out.push(Piece::Text(&rest[..open]));
                out.push(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    out.push(Piece::Text(rest));
    out
}

fn placeholders_in(template: &str) -> Vec<&str> {
    pieces(template)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(name),
            Piece::Text(_) => None,
        })
        .collect()
}

/// Rounds half away from zero and drops the fraction.
fn round_half_up(value: f64) -> i64 {
    value.round() as i64
}

pub fn render_message(template: &str, values: &MessageValues) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 16);
    for piece in pieces(template) {
        match piece {
            Piece::Text(text) => out.push_str(text),
            Piece::Slot(name) => {
                let missing = || TemplateError::MissingValue(name.to_string());
                let text = match name {
                    "bg_drop" => values.bg_drop.ok_or_else(missing)?.to_string(),
                    "duration_min" => values.duration_min.ok_or_else(missing)?.to_string(),
                    "kcal" => round_half_up(values.kcal.ok_or_else(missing)?).to_string(),
                    other => return Err(TemplateError::UnknownPlaceholder(other.to_string())),
                };
                out.push_str(&text);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RulesDocument {
    version: u32,
    rules: Vec<RecommendationRule>,
}

/// Immutable, totality-checked decision table.
#[derive(Debug, Clone)]
pub struct RuleTable {
    rules: BTreeMap<RuleKey, RecommendationRule>,
    thresholds: BandThresholds,
}

impl RuleTable {
    /// The rules shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_RULES).expect("bundled rules pass the totality check")
    }

    pub fn from_json(json: &str) -> Result<Self, RulesError> {
        let doc: RulesDocument = serde_json::from_str(json)?;
        if doc.version != RULES_FORMAT_VERSION {
            return Err(RulesError::Version { found: doc.version });
        }
        Self::from_rules(doc.rules)
    }

    pub fn from_path(path: &Path) -> Result<Self, RulesError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_rules(rules: Vec<RecommendationRule>) -> Result<Self, RulesError> {
        let mut table = BTreeMap::new();
        for rule in rules {
            let key = rule.key();
            if !GlycemicBand::reachable(key.context).contains(&key.band) {
                return Err(RulesError::Unreachable(key));
            }
            check_rule(&rule)?;
            if table.insert(key, rule).is_some() {
                return Err(RulesError::Duplicate(key));
            }
        }
        for key in RuleKey::reachable() {
            if !table.contains_key(&key) {
                return Err(RulesError::Missing(key));
            }
        }
        Ok(Self {
            rules: table,
            thresholds: BandThresholds::default(),
        })
    }

    pub fn with_thresholds(mut self, thresholds: BandThresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn thresholds(&self) -> &BandThresholds {
        &self.thresholds
    }

    /// All rules in key order.
    pub fn rule_table(&self) -> Vec<RecommendationRule> {
        self.rules.values().cloned().collect()
    }

    pub fn rule(&self, key: RuleKey) -> &RecommendationRule {
        // Totality is checked at construction.
        &self.rules[&key]
    }

    pub fn to_json(&self) -> String {
        let doc = RulesDocument {
            version: RULES_FORMAT_VERSION,
            rules: self.rule_table(),
        };
        serde_json::to_string_pretty(&doc).expect("rules serialize")
    }

    pub fn classify(&self, reading: &GlucoseReading) -> Result<GlycemicBand, DomainError> {
        self.thresholds
            .classify(reading.value_mg_dl, reading.context)
    }

    /// Picks the rule for the reading and renders its message.
    ///
    /// For `PostExercise` the reading is the post-exercise measurement and
    /// `session` must carry `bg_before`; the drop is `bg_before - reading`.
    pub fn recommend(
        &self,
        phase: Phase,
        reading: &GlucoseReading,
        session: Option<&ExerciseSession>,
    ) -> Result<Recommendation, RecommendError> {
        let band = self.classify(reading)?;
        let key = RuleKey {
            phase,
            context: reading.context,
            band,
        };
        let rule = self.rule(key);
        let values = match phase {
            Phase::PreExercise => MessageValues::default(),
            Phase::PostExercise => {
                let session = session.ok_or(RecommendError::Incomplete(
                    "post-exercise recommendation needs the exercise session",
                ))?;
                let before = session
                    .bg_before
                    .as_ref()
                    .ok_or(RecommendError::Incomplete(
                        "exercise session has no pre-exercise reading",
                    ))?;
                MessageValues {
                    bg_drop: Some(i64::from(before.value_mg_dl) - i64::from(reading.value_mg_dl)),
                    duration_min: Some(session.duration_min),
                    kcal: Some(session.kcal_burned),
                }
            }
        };
        Ok(Recommendation {
            key,
            rendered_message: render_message(&rule.template, &values)?,
            action: rule.action,
            reward_promised: rule.promises_reward,
            advises_hydration: rule.advises_hydration,
            advises_doctor: rule.advises_doctor,
        })
    }
}

fn check_rule(rule: &RecommendationRule) -> Result<(), RulesError> {
    let key = rule.key();
    let invalid = |reason: String| RulesError::Invalid { key, reason };
    for name in placeholders_in(&rule.template) {
        if !PLACEHOLDERS.contains(&name) {
            return Err(invalid(format!("unknown placeholder {{{name}}}")));
        }
        if rule.phase == Phase::PreExercise {
            return Err(invalid(format!(
                "placeholder {{{name}}} in a pre-exercise template"
            )));
        }
    }
    if rule.promises_reward && !rule.action.permits_exercise() {
        return Err(invalid("reward promised on a blocking action".into()));
    }
    if rule.template.trim().is_empty() {
        return Err(invalid("empty template".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use chrono::{DateTime, Utc};

    use super::*;
    use crate::domain::UserId;

    fn reading(value: u32, context: MealContext) -> GlucoseReading {
        GlucoseReading {
            user_id: UserId(1),
            value_mg_dl: value,
            context,
            taken_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    fn session(before: u32, context: MealContext, minutes: u32, kcal: f64) -> ExerciseSession {
        ExerciseSession {
            user_id: UserId(1),
            started_at: DateTime::<Utc>::UNIX_EPOCH,
            duration_min: minutes,
            steps: 0,
            kcal_burned: kcal,
            bg_before: Some(reading(before, context)),
            bg_after: None,
        }
    }

    #[test]
    fn render_examples() {
        let values = MessageValues {
            bg_drop: Some(12),
            ..Default::default()
        };
        assert_eq!(
            render_message("BG dropped to {bg_drop} mg/dL", &values).unwrap(),
            "BG dropped to 12 mg/dL"
        );
        assert_eq!(
            render_message("no placeholders", &MessageValues::default()).unwrap(),
            "no placeholders"
        );
        let kcal = MessageValues {
            kcal: Some(149.6),
            ..Default::default()
        };
        assert_eq!(render_message("{kcal} kcal", &kcal).unwrap(), "150 kcal");
        assert_eq!(
            render_message(
                "{kcal}",
                &MessageValues {
                    kcal: Some(149.5),
                    ..Default::default()
                }
            )
            .unwrap(),
            "150"
        );
    }

    #[test]
    fn render_errors() {
        assert_eq!(
            render_message("{kcal} kcal", &MessageValues::default()),
            Err(TemplateError::MissingValue("kcal".into()))
        );
        assert_eq!(
            render_message("{mood}", &MessageValues::default()),
            Err(TemplateError::UnknownPlaceholder("mood".into()))
        );
        // Braces that are not placeholders pass through.
        assert_eq!(
            render_message("a { b } {}", &MessageValues::default()).unwrap(),
            "a { b } {}"
        );
    }

    #[test]
    fn negative_drop_rendered_with_sign() {
        let values = MessageValues {
            bg_drop: Some(-7),
            ..Default::default()
        };
        assert_eq!(render_message("{bg_drop}", &values).unwrap(), "-7");
    }

    #[test]
    fn table_has_28_unique_rules() {
        let rules = RuleTable::bundled().rule_table();
        assert_eq!(rules.len(), 28);
        let mut keys: Vec<_> = rules.iter().map(RecommendationRule::key).collect();
        keys.dedup();
        assert_eq!(keys.len(), 28);
        assert!(rules
            .iter()
            .filter(|r| r.context == MealContext::Fasting)
            .all(|r| r.band != GlycemicBand::Elevated));
    }

    #[test]
    fn pre_and_post_meal_share_content() {
        let table = RuleTable::bundled();
        for &phase in Phase::ALL {
            for &band in GlycemicBand::ALL {
                let pre = table.rule(RuleKey {
                    phase,
                    context: MealContext::PreMeal,
                    band,
                });
                let post = table.rule(RuleKey {
                    phase,
                    context: MealContext::PostMeal,
                    band,
                });
                assert_eq!(pre.template, post.template);
                assert_eq!(pre.action, post.action);
            }
        }
    }

    #[test]
    fn recommend_examples() {
        let table = RuleTable::bundled();
        let low = table
            .recommend(Phase::PreExercise, &reading(65, MealContext::Fasting), None)
            .unwrap();
        assert_eq!(low.action, ExerciseAction::Block);
        assert!(low
            .rendered_message
            .contains("avoid exercise and consult a healthcare professional"));

        let normal = table
            .recommend(
                Phase::PreExercise,
                &reading(100, MealContext::Fasting),
                None,
            )
            .unwrap();
        assert_eq!(normal.action, ExerciseAction::AllowLight);
        assert!(normal.reward_promised);

        let elevated = table
            .recommend(
                Phase::PreExercise,
                &reading(200, MealContext::PostMeal),
                None,
            )
            .unwrap();
        assert_eq!(elevated.action, ExerciseAction::AllowLightToModerate);
        assert!(elevated.rendered_message.contains("avoid intense activity"));

        let post = table
            .recommend(
                Phase::PostExercise,
                &reading(148, MealContext::Fasting),
                Some(&session(160, MealContext::Fasting, 30, 150.0)),
            )
            .unwrap();
        assert_eq!(post.action, ExerciseAction::AllowModerate);
        for needle in ["12", "30", "150"] {
            assert!(
                post.rendered_message.contains(needle),
                "{}",
                post.rendered_message
            );
        }
        assert!(!post.rendered_message.contains('{'));
    }

    #[test]
    fn post_exercise_needs_session() {
        let table = RuleTable::bundled();
        let r = reading(120, MealContext::PreMeal);
        assert!(matches!(
            table.recommend(Phase::PostExercise, &r, None),
            Err(RecommendError::Incomplete(_))
        ));
        let mut s = session(140, MealContext::PreMeal, 20, 80.0);
        s.bg_before = None;
        assert!(matches!(
            table.recommend(Phase::PostExercise, &r, Some(&s)),
            Err(RecommendError::Incomplete(_))
        ));
    }

    #[test]
    fn blocked_bands_still_render_post_messages() {
        let table = RuleTable::bundled();
        let rec = table
            .recommend(
                Phase::PostExercise,
                &reading(60, MealContext::PreMeal),
                Some(&session(90, MealContext::PreMeal, 25, 101.2)),
            )
            .unwrap();
        assert_eq!(rec.action, ExerciseAction::Block);
        assert!(rec
            .rendered_message
            .contains("dropped to 30 mg/dL after 25 min"));
        assert!(rec.rendered_message.contains("Burned calories: 101 kcal"));
    }

    #[test]
    fn loader_rejects_gaps_duplicates_and_bad_placeholders() {
        let mut rules = RuleTable::bundled().rule_table();
        let dropped = rules.pop().unwrap();
        assert!(
            matches!(RuleTable::from_rules(rules.clone()), Err(RulesError::Missing(k)) if k == dropped.key())
        );

        let mut dup = rules.clone();
        dup.push(rules[0].clone());
        dup.push(dropped.clone());
        assert!(matches!(
            RuleTable::from_rules(dup),
            Err(RulesError::Duplicate(_))
        ));

        let mut unreachable = rules.clone();
        unreachable.push(dropped.clone());
        let mut fasting_elevated = unreachable[0].clone();
        fasting_elevated.context = MealContext::Fasting;
        fasting_elevated.band = GlycemicBand::Elevated;
        unreachable.push(fasting_elevated);
        assert!(matches!(
            RuleTable::from_rules(unreachable),
            Err(RulesError::Unreachable(_))
        ));

        let mut pre_slot = rules.clone();
        pre_slot.push(dropped);
        let idx = pre_slot
            .iter()
            .position(|r| r.phase == Phase::PreExercise)
            .unwrap();
        pre_slot[idx].template.push_str(" {kcal}");
        assert!(matches!(
            RuleTable::from_rules(pre_slot),
            Err(RulesError::Invalid { .. })
        ));
    }

    #[test]
    fn json_roundtrip_and_version_check() {
        let table = RuleTable::bundled();
        let json = table.to_json();
        let again = RuleTable::from_json(&json).unwrap();
        assert_eq!(again.rule_table(), table.rule_table());
        let bumped = json.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            RuleTable::from_json(&bumped),
            Err(RulesError::Version { found: 2 })
        ));
    }
}
