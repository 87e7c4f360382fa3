//! Glucometer line protocol.
//!
//! Newline-delimited UTF-8. A connection first authenticates with
//! `AUTH <session-token>`, then sends one reading per line:
//!
//! ```text
//! GLU <ISO-8601 timestamp> <mg/dL integer> <fasting|pre_meal|post_meal>
//! ```
//!
//! Every non-blank line gets exactly one reply line, `ACK` or `NAK`. A bad
//! line is refused and the stream continues.

use std::fmt;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::domain::{BandThresholds, DomainError, GlucoseReading, MealContext, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reply {
    Ack,
    Nak,
}

impl Reply {
    pub fn as_str(self) -> &'static str {
        match self {
            Reply::Ack => "ACK",
            Reply::Nak => "NAK",
        }
    }
}

impl fmt::Display for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LineError {
    #[error("unknown command '{0}'")]
    UnknownCommand(String),
    #[error("expected `GLU <timestamp> <mg/dL> <context>`, got {0} fields")]
    FieldCount(usize),
    #[error("bad timestamp '{0}'")]
    Timestamp(String),
    #[error("bad glucose value '{0}'")]
    Value(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("device has not authenticated")]
    Unauthenticated,
    #[error("unknown device token")]
    BadToken,
}

/// A parsed `GLU` line, not yet attributed to a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GluLine {
    pub taken_at: DateTime<Utc>,
    pub value_mg_dl: u32,
    pub context: MealContext,
}

pub fn parse_glu_line(line: &str, thresholds: &BandThresholds) -> Result<GluLine, LineError> {
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    match fields.first() {
        Some(&"GLU") => {}
        Some(other) => return Err(LineError::UnknownCommand((*other).to_string())),
        None => return Err(LineError::FieldCount(0)),
    }
    if fields.len() != 4 {
        return Err(LineError::FieldCount(fields.len()));
    }
    let taken_at = DateTime::parse_from_rfc3339(fields[1])
        .map_err(|_| LineError::Timestamp(fields[1].to_string()))?
        .with_timezone(&Utc);
    let value: i64 = fields[2]
        .parse()
        .map_err(|_| LineError::Value(fields[2].to_string()))?;
    let value_mg_dl = thresholds.check_reading(value)?;
    let context = fields[3].parse()?;
    Ok(GluLine {
        taken_at,
        value_mg_dl,
        context,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineOutcome {
    pub reply: Reply,
    pub reading: Option<GlucoseReading>,
    pub error: Option<LineError>,
}

impl LineOutcome {
    fn ack(reading: Option<GlucoseReading>) -> Self {
        Self {
            reply: Reply::Ack,
            reading,
            error: None,
        }
    }

    fn nak(error: LineError) -> Self {
        Self {
            reply: Reply::Nak,
            reading: None,
            error: Some(error),
        }
    }
}

/// Per-connection protocol state.
#[derive(Debug, Clone)]
pub struct GlucometerSession {
    user: Option<UserId>,
    thresholds: BandThresholds,
}

impl GlucometerSession {
    pub fn new(thresholds: BandThresholds) -> Self {
        Self {
            user: None,
            thresholds,
        }
    }

    /// A session already bound to a user, e.g. a trusted local pipe.
    pub fn authenticated(user: UserId, thresholds: BandThresholds) -> Self {
        Self {
            user: Some(user),
            thresholds,
        }
    }

    pub fn user(&self) -> Option<UserId> {
        self.user
    }

    /// Handles one line. Blank lines produce no reply.
    pub fn handle_line<F>(&mut self, line: &str, resolve_token: F) -> Option<LineOutcome>
    where
        F: FnOnce(&str) -> Option<UserId>,
    {
        let line = line.trim();
        if line.is_empty() {
            return None;
        }
        if let Some(rest) = line.strip_prefix("AUTH") {
            let token = rest.trim();
            if token.is_empty() || !rest.starts_with(char::is_whitespace) {
                return Some(LineOutcome::nak(LineError::BadToken));
            }
            return Some(match resolve_token(token) {
                Some(user) => {
                    self.user = Some(user);
                    LineOutcome::ack(None)
                }
                None => LineOutcome::nak(LineError::BadToken),
            });
        }
        let parsed = match parse_glu_line(line, &self.thresholds) {
            Ok(p) => p,
            Err(e) => return Some(LineOutcome::nak(e)),
        };
        let Some(user_id) = self.user else {
            return Some(LineOutcome::nak(LineError::Unauthenticated));
        };
        Some(LineOutcome::ack(Some(GlucoseReading {
            user_id,
            value_mg_dl: parsed.value_mg_dl,
            context: parsed.context,
            taken_at: parsed.taken_at,
        })))
    }
}

/// Runs a whole stream for an already-authenticated user.
pub fn glucometer_feed<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    user: UserId,
    thresholds: BandThresholds,
) -> Vec<LineOutcome> {
    let mut session = GlucometerSession::authenticated(user, thresholds);
    lines
        .into_iter()
        .filter_map(|line| session.handle_line(line, |_| None))
        .collect()
}
