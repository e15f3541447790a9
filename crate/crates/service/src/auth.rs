//! Local credential file, lockout and bearer sessions shared by every endpoint.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    pub username: String,
    pub role: String,
    pub salt: String,
    /// Hex SHA-256 of `salt:secret`.
    pub hash: String,
}

impl UserEntry {
    pub fn new(username: &str, role: &str, secret: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        let salt = hex::encode(salt);
        UserEntry { username: username.into(), role: role.into(), hash: hash_secret(&salt, secret), salt }
    }

    fn verify(&self, secret: &str) -> bool {
        hash_secret(&self.salt, secret) == self.hash
    }
}

pub fn hash_secret(salt: &str, secret: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(b":");
    h.update(secret.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct UserFile {
    #[serde(default)]
    pub users: Vec<UserEntry>,
}

impl UserFile {
    pub fn load(path: &Path) -> anyhow::Result<UserFile> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user: String,
    pub role: String,
    pub expires: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("bad credentials")]
    BadCredentials,
    #[error("account locked after repeated failures")]
    Locked,
    #[error("missing or unknown session token")]
    InvalidToken,
    #[error("session expired")]
    Expired,
}

#[derive(Debug)]
pub struct AuthService {
    users: BTreeMap<String, UserEntry>,
    sessions: Mutex<HashMap<String, Session>>,
    failures: Mutex<HashMap<String, u32>>,
    ttl: Duration,
    lockout_after: u32,
}

impl AuthService {
    pub fn new(users: Vec<UserEntry>, ttl_secs: i64, lockout_after: u32) -> Self {
        AuthService {
            users: users.into_iter().map(|u| (u.username.clone(), u)).collect(),
            sessions: Mutex::default(),
            failures: Mutex::default(),
            ttl: Duration::seconds(ttl_secs),
            lockout_after,
        }
    }

    pub fn role_of(&self, user: &str) -> Option<&str> {
        self.users.get(user).map(|u| u.role.as_str())
    }

    pub fn usernames(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    /// Once `lockout_after` consecutive failures accumulate the account stays
    /// locked, even for the right secret, until the service restarts.
    pub fn authenticate(&self, username: &str, secret: &str, now: DateTime<Utc>) -> Result<Session, AuthError> {
        let user = self.users.get(username).ok_or(AuthError::BadCredentials)?;
        let mut failures = self.failures.lock();
        let count = failures.entry(username.to_string()).or_default();
        if self.lockout_after > 0 && *count >= self.lockout_after {
            return Err(AuthError::Locked);
        }
        if !user.verify(secret) {
            *count += 1;
            return Err(AuthError::BadCredentials);
        }
        *count = 0;
        drop(failures);

        let mut raw = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut raw);
        let session =
            Session { token: hex::encode(raw), user: user.username.clone(), role: user.role.clone(), expires: now + self.ttl };
        self.sessions.lock().insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn validate(&self, token: &str, now: DateTime<Utc>) -> Result<Session, AuthError> {
        let mut sessions = self.sessions.lock();
        let s = sessions.get(token).ok_or(AuthError::InvalidToken)?;
        if now >= s.expires {
            sessions.remove(token);
            return Err(AuthError::Expired);
        }
        Ok(s.clone())
    }

    pub fn logout(&self, token: &str) -> bool {
        self.sessions.lock().remove(token).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svc() -> AuthService {
        AuthService::new(vec![UserEntry::new("ana", "analyst", "s3cret")], 60, 3)
    }

    #[test]
    fn round_trip_and_expiry() {
        let a = svc();
        let t0 = Utc::now();
        let s = a.authenticate("ana", "s3cret", t0).unwrap();
        assert_eq!(a.validate(&s.token, t0 + Duration::seconds(59)).unwrap().role, "analyst");
        assert_eq!(a.validate(&s.token, t0 + Duration::seconds(60)), Err(AuthError::Expired));
        assert_eq!(a.validate(&s.token, t0), Err(AuthError::InvalidToken));
    }

    #[test]
    fn lockout_after_consecutive_failures() {
        let a = svc();
        let now = Utc::now();
        assert_eq!(a.authenticate("ana", "x", now), Err(AuthError::BadCredentials));
        assert!(a.authenticate("ana", "s3cret", now).is_ok());
        for _ in 0..3 {
            assert_eq!(a.authenticate("ana", "x", now), Err(AuthError::BadCredentials));
        }
        assert_eq!(a.authenticate("ana", "s3cret", now), Err(AuthError::Locked));
        assert_eq!(a.authenticate("nobody", "s3cret", now), Err(AuthError::BadCredentials));
    }
}
