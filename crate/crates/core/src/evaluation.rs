//! Scenario-based scoring of the recommendation engine.
//!
//! Each scenario carries the clinician's expected action and band. A scenario
//! scores +1 when the engine agrees, -1 when the engine picks a different
//! action, and 0 when the action agrees but the recommendation is not
//! specific: either the band differs, or the exact same rendered message was
//! produced for another scenario that expected a different outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ExerciseSession, GlucoseReading, GlycemicBand, MealContext, UserId};
use crate::recommend::{ExerciseAction, Phase, Recommendation, RuleTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSession {
    pub bg_before: u32,
    pub duration_min: u32,
    pub kcal_burned: f64,
    #[serde(default)]
    pub steps: u32,
}

/// One line of a scenario corpus. For post-exercise scenarios `bg` is the
/// post-exercise reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub phase: Phase,
    pub context: MealContext,
    pub bg: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<ScenarioSession>,
    pub expected_action: ExerciseAction,
    pub expected_band: GlycemicBand,
}

impl Scenario {
    fn expected(&self) -> (ExerciseAction, GlycemicBand) {
        (self.expected_action, self.expected_band)
    }

    pub fn run(&self, engine: &RuleTable) -> Result<Recommendation, String> {
        let epoch = DateTime::<Utc>::UNIX_EPOCH;
        let reading =
            GlucoseReading::new(UserId(0), self.bg, self.context, epoch, engine.thresholds())
                .map_err(|e| e.to_string())?;
        let session = match (&self.session, self.phase) {
            (Some(s), _) => Some(ExerciseSession {
                user_id: UserId(0),
                started_at: epoch,
                duration_min: s.duration_min,
                steps: s.steps,
                kcal_burned: s.kcal_burned,
                bg_before: Some(
                    GlucoseReading::new(
                        UserId(0),
                        i64::from(s.bg_before),
                        self.context,
                        epoch,
                        engine.thresholds(),
                    )
                    .map_err(|e| format!("session bg_before: {e}"))?,
                ),
                bg_after: Some(reading.clone()),
            }),
            (None, Phase::PostExercise) => {
                return Err("post-exercise scenario without a session".into())
            }
            (None, Phase::PreExercise) => None,
        };
        engine
            .recommend(self.phase, &reading, session.as_ref())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Score {
    Deviates,
    NonSpecific,
    Matches,
}

impl Score {
    pub fn value(self) -> i8 {
        match self {
            Score::Deviates => -1,
            Score::NonSpecific => 0,
            Score::Matches => 1,
        }
    }
}

impl From<Score> for i8 {
    fn from(score: Score) -> i8 {
        score.value()
    }
}

impl TryFrom<i8> for Score {
    type Error = String;

    fn try_from(value: i8) -> Result<Self, Self::Error> {
        match value {
            -1 => Ok(Score::Deviates),
            0 => Ok(Score::NonSpecific),
            1 => Ok(Score::Matches),
            other => Err(format!("score must be -1, 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario_id: String,
    pub score: Score,
    pub engine_action: ExerciseAction,
    pub engine_band: GlycemicBand,
    pub note: String,
}

/// Rendered message to the expected outcomes of every scenario that produced it.
pub type OutputIndex = BTreeMap<String, BTreeSet<(ExerciseAction, GlycemicBand)>>;

pub fn score_scenario(
    scenario: &Scenario,
    output: &Recommendation,
    index: &OutputIndex,
) -> ScenarioScore {
    let engine_band = output.key.band;
    let (score, note) = if output.action != scenario.expected_action {
        (
            Score::Deviates,
            format!(
                "expected {}, engine advised {}",
                scenario.expected_action, output.action
            ),
        )
    } else if index
        .get(&output.rendered_message)
        .is_some_and(|outcomes| outcomes.iter().any(|o| *o != scenario.expected()))
    {
        (
            Score::NonSpecific,
            "identical recommendation produced for a scenario with a different expected outcome"
                .to_string(),
        )
    } else if engine_band != scenario.expected_band {
        (
            Score::NonSpecific,
            format!(
                "action agrees but band is {engine_band}, expected {}",
                scenario.expected_band
            ),
        )
    } else {
        (Score::Matches, String::new())
    };
    ScenarioScore {
        scenario_id: scenario.id.clone(),
        score,
        engine_action: output.action,
        engine_band,
        note,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("no scores to evaluate")]
    Empty,
}

pub fn proficiency(scores: &[ScenarioScore]) -> Result<f64, EvaluationError> {
    if scores.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let sum: i64 = scores.iter().map(|s| i64::from(s.score.value())).sum();
    Ok(100.0 * sum as f64 / scores.len() as f64)
}

pub fn efficiency(scores: &[ScenarioScore]) -> Result<f64, EvaluationError> {
    if scores.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let matches = scores.iter().filter(|s| s.score == Score::Matches).count();
    Ok(100.0 * matches as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScenario {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scores: Vec<ScenarioScore>,
    pub skipped: Vec<SkippedScenario>,
    pub proficiency_pct: f64,
    pub efficiency_pct: f64,
}

impl EvaluationReport {
    pub fn count(&self, score: Score) -> usize {
        self.scores.iter().filter(|s| s.score == score).count()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus could not be read: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus contains no scorable scenarios")]
    Empty,
}

/// Parses a JSON-lines corpus. Blank lines are ignored.
pub fn parse_corpus(text: &str) -> Result<Vec<(usize, Scenario)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scenario: Scenario = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, scenario));
    }
    Ok(out)
}

/// Scores every scenario. The duplicate-output index is built over the whole
/// corpus before any scenario is scored.
pub fn evaluate(
    engine: &RuleTable,
    scenarios: &[(usize, Scenario)],
) -> Result<EvaluationReport, CorpusError> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for (line, scenario) in scenarios {
        match scenario.run(engine) {
            Ok(output) => runs.push((scenario, output)),
            Err(reason) => skipped.push(SkippedScenario {
                line: *line,
                id: scenario.id.clone(),
                reason,
            }),
        }
    }
    let mut index = OutputIndex::new();
    for (scenario, output) in &runs {
        index
            .entry(output.rendered_message.clone())
            .or_default()
            .insert(scenario.expected());
    }
    let scores: Vec<ScenarioScore> = runs
        .iter()
        .map(|(scenario, output)| score_scenario(scenario, output, &index))
        .collect();
    if scores.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(EvaluationReport {
        proficiency_pct: proficiency(&scores).expect("non-empty"),
        efficiency_pct: efficiency(&scores).expect("non-empty"),
        scores,
        skipped,
    })
}

pub fn run_corpus(engine: &RuleTable, path: &Path) -> Result<EvaluationReport, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    evaluate(engine, &parse_corpus(&text)?)
}

pub const BUNDLED_CORPUS: &str = include_str!("../data/scenarios.jsonl");

/// One scenario per rule of the table, labelled with the rule's own outcome.
/// Sessions differ per scenario so no two rendered messages coincide.
pub fn corpus_from_rules(engine: &RuleTable) -> Vec<Scenario> {
    let t = engine.thresholds();
    let representative = |band: GlycemicBand, context: MealContext| -> u32 {
        match band {
            GlycemicBand::Low => t.normal_from - 10,
            GlycemicBand::Normal => (t.normal_from + t.normal_max) / 2,
            GlycemicBand::High => (t.normal_max + t.high_max) / 2 + 1,
            GlycemicBand::Elevated => (t.high_max + t.elevated_max) / 2,
            GlycemicBand::CriticallyHigh if context == MealContext::Fasting => t.high_max + 20,
            GlycemicBand::CriticallyHigh => t.elevated_max + 30,
        }
    };
    engine
        .rule_table()
        .iter()
        .enumerate()
        .map(|(i, rule)| {
            let bg = representative(rule.band, rule.context);
            let session = (rule.phase == Phase::PostExercise).then(|| ScenarioSession {
                bg_before: bg + 5 + i as u32,
                duration_min: 10 + i as u32,
                kcal_burned: 40.0 + 7.0 * i as f64,
                steps: 0,
            });
            Scenario {
                id: format!("rule-{i:02}-{}-{}-{}", rule.phase, rule.context, rule.band),
                phase: rule.phase,
                context: rule.context,
                bg: i64::from(bg),
                session,
                expected_action: rule.action,
                expected_band: rule.band,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(id: &str, s: Score) -> ScenarioScore {
        ScenarioScore {
            scenario_id: id.into(),
            score: s,
            engine_action: ExerciseAction::Block,
            engine_band: GlycemicBand::Low,
            note: String::new(),
        }
    }

    fn scenario(
        phase: Phase,
        context: MealContext,
        bg: i64,
        action: ExerciseAction,
        band: GlycemicBand,
    ) -> Scenario {
        Scenario {
            id: format!("{phase}-{context}-{bg}"),
            phase,
            context,
            bg,
            session: None,
            expected_action: action,
            expected_band: band,
        }
    }

    #[test]
    fn metric_examples() {
        let mut scores: Vec<_> = (0..46)
            .map(|i| score(&i.to_string(), Score::Matches))
            .collect();
        scores.extend((0..3).map(|i| score(&format!("z{i}"), Score::NonSpecific)));
        scores.push(score("m", Score::Deviates));
        assert_eq!(proficiency(&scores).unwrap(), 90.0);
        assert_eq!(efficiency(&scores).unwrap(), 92.0);

        let all: Vec<_> = (0..10)
            .map(|i| score(&i.to_string(), Score::Matches))
            .collect();
        assert_eq!(proficiency(&all).unwrap(), 100.0);
        assert_eq!(efficiency(&all).unwrap(), 100.0);

        let mixed = [
            score("a", Score::Matches),
            score("b", Score::Matches),
            score("c", Score::NonSpecific),
            score("d", Score::Deviates),
        ];
        assert_eq!(proficiency(&mixed).unwrap(), 25.0);
        assert_eq!(efficiency(&mixed).unwrap(), 50.0);
        assert_eq!(proficiency(&[]), Err(EvaluationError::Empty));
        assert_eq!(efficiency(&[]), Err(EvaluationError::Empty));
    }

    #[test]
    fn scoring_examples() {
        let engine = RuleTable::bundled();
        let low = scenario(
            Phase::PreExercise,
            MealContext::Fasting,
            65,
            ExerciseAction::Block,
            GlycemicBand::Low,
        );
        let report = evaluate(&engine, &[(1, low)]).unwrap();
        assert_eq!(report.scores[0].score, Score::Matches);

        let wrong = scenario(
            Phase::PreExercise,
            MealContext::Fasting,
            65,
            ExerciseAction::AllowLight,
            GlycemicBand::Low,
        );
        let report = evaluate(&engine, &[(1, wrong)]).unwrap();
        assert_eq!(report.scores[0].score, Score::Deviates);
    }

    #[test]
    fn identical_output_for_different_expectations_scores_zero() {
        let engine = RuleTable::bundled();
        let session = |before| ScenarioSession {
            bg_before: before,
            duration_min: 30,
            kcal_burned: 150.0,
            steps: 0,
        };
        // Fasting 131-180 and meal 71-130 share post-exercise wording.
        let mut fasting = scenario(
            Phase::PostExercise,
            MealContext::Fasting,
            148,
            ExerciseAction::AllowModerate,
            GlycemicBand::High,
        );
        fasting.session = Some(session(160));
        let mut meal = scenario(
            Phase::PostExercise,
            MealContext::PreMeal,
            110,
            ExerciseAction::AllowLightToModerate,
            GlycemicBand::Normal,
        );
        meal.session = Some(session(122));
        let report = evaluate(&engine, &[(1, fasting.clone()), (2, meal)]).unwrap();
        assert!(
            report.scores.iter().all(|s| s.score == Score::NonSpecific),
            "{report:?}"
        );

        // Same wording but different numbers is specific again.
        let mut other = scenario(
            Phase::PostExercise,
            MealContext::PreMeal,
            110,
            ExerciseAction::AllowLightToModerate,
            GlycemicBand::Normal,
        );
        other.session = Some(session(125));
        let report = evaluate(&engine, &[(1, fasting), (2, other)]).unwrap();
        assert!(report.scores.iter().all(|s| s.score == Score::Matches));
    }

    #[test]
    fn duplicate_output_with_same_expectation_is_fine() {
        let engine = RuleTable::bundled();
        let a = scenario(
            Phase::PreExercise,
            MealContext::PreMeal,
            100,
            ExerciseAction::AllowLightToModerate,
            GlycemicBand::Normal,
        );
        let b = scenario(
            Phase::PreExercise,
            MealContext::PostMeal,
            100,
            ExerciseAction::AllowLightToModerate,
            GlycemicBand::Normal,
        );
        let report = evaluate(&engine, &[(1, a), (2, b)]).unwrap();
        assert_eq!(report.count(Score::Matches), 2);
    }

    #[test]
    fn band_disagreement_scores_zero() {
        let engine = RuleTable::bundled();
        let s = scenario(
            Phase::PreExercise,
            MealContext::PreMeal,
            200,
            ExerciseAction::AllowLightToModerate,
            GlycemicBand::Normal,
        );
        let report = evaluate(&engine, &[(1, s)]).unwrap();
        assert_eq!(report.scores[0].score, Score::NonSpecific);
    }

    #[test]
    fn malformed_scenarios_are_skipped() {
        let engine = RuleTable::bundled();
        let out_of_range = scenario(
            Phase::PreExercise,
            MealContext::Fasting,
            0,
            ExerciseAction::Block,
            GlycemicBand::Low,
        );
        let no_session = scenario(
            Phase::PostExercise,
            MealContext::Fasting,
            100,
            ExerciseAction::AllowLight,
            GlycemicBand::Normal,
        );
        let good = scenario(
            Phase::PreExercise,
            MealContext::Fasting,
            100,
            ExerciseAction::AllowLight,
            GlycemicBand::Normal,
        );
        let report = evaluate(&engine, &[(1, out_of_range), (2, no_session), (3, good)]).unwrap();
        assert_eq!(report.scores.len(), 1);
        assert_eq!(report.skipped.len(), 2);
        assert_eq!(report.skipped[1].line, 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "\n{\"id\":\"a\",\"phase\":\"pre_exercise\",\"context\":\"fasting\",\"bg\":90,\"expected_action\":\"allow_light\",\"expected_band\":\"normal\"}\n{oops}\n";
        match parse_corpus(text) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            evaluate(&RuleTable::bundled(), &parse_corpus("").unwrap()),
            Err(CorpusError::Empty)
        ));
    }

    #[test]
    fn corpus_from_rules_scores_full_marks() {
        let engine = RuleTable::bundled();
        let corpus: Vec<_> = corpus_from_rules(&engine).into_iter().enumerate().collect();
        assert_eq!(corpus.len(), 28);
        let report = evaluate(&engine, &corpus).unwrap();
        assert_eq!(report.efficiency_pct, 100.0);
        assert_eq!(report.proficiency_pct, 100.0);
    }

    #[test]
    fn score_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Score::Deviates).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Score>("1").unwrap(), Score::Matches);
        assert!(serde_json::from_str::<Score>("2").is_err());
    }
}
