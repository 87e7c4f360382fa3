//! Incentive-based diabetes self-management engine.
//!
//! Classifies glucose readings into bands, recommends exercise from a
//! decision table, validates goals, awards reward points, aggregates
//! analytics and scores the engine against scenario corpora. The
//! [`service`] module wraps all of it in an HTTP/JSON API with storage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod connectors;
pub mod domain;
pub mod evaluation;
pub mod goals;
pub mod recommend;
pub mod rewards;
pub mod service;

pub use domain::{classify_bg, GlucoseReading, GlycemicBand, MealContext, UserId};
pub use recommend::{ExerciseAction, Phase, Recommendation, RuleTable};
