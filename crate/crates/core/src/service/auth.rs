//! Password hashing and bearer sessions.

use std::collections::HashMap;
use std::sync::Mutex;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::UserId;

/// Hash stored for accounts that cannot log in (bulk-replayed users).
pub const LOCKED_HASH: &str = "!";

pub fn hash_password(password: &str) -> String {
    let mut salt = [0u8; 16];
    rand::rng().fill(&mut salt);
    let salt = SaltString::encode_b64(&salt).expect("16-byte salt encodes");
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .expect("argon2 with default params hashes")
        .to_string()
}

pub fn verify_password(password: &str, stored: &str) -> bool {
    PasswordHash::new(stored).is_ok_and(|hash| {
        Argon2::default()
            .verify_password(password.as_bytes(), &hash)
            .is_ok()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct Sessions {
    ttl: Duration,
    live: Mutex<HashMap<String, (UserId, DateTime<Utc>)>>,
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            live: Mutex::new(HashMap::new()),
        }
    }

    pub fn issue(&self, user_id: UserId, now: DateTime<Utc>) -> SessionToken {
        let mut bytes = [0u8; 32];
        rand::rng().fill(&mut bytes);
        let token = hex::encode(bytes);
        let expires_at = now + self.ttl;
        self.live
            .lock()
            .expect("session map lock")
            .insert(token.clone(), (user_id, expires_at));
        SessionToken {
            token,
            user_id,
            expires_at,
        }
    }

    /// The token's user, or `None` when unknown or expired. Expired tokens are dropped.
    pub fn resolve(&self, token: &str, now: DateTime<Utc>) -> Option<UserId> {
        let mut live = self.live.lock().expect("session map lock");
        match live.get(token) {
            Some((user, expires_at)) if now < *expires_at => Some(*user),
            Some(_) => {
                live.remove(token);
                None
            }
            None => None,
        }
    }
}
