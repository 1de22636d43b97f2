//! Accounts, password hashing and scoped bearer tokens.

use std::collections::HashMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::events::unix_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Status,
    #[default]
    Control,
}

#[derive(Debug, Clone)]
pub struct Account {
    pub account_id: String,
    pub email: String,
    password_hash: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub account_id: Option<String>,
    /// Restricts the session to one robot (diag sessions).
    pub robot: Option<String>,
    pub scope: Scope,
    pub expires: Instant,
    pub expires_at: u64,
}

impl Session {
    pub fn expired(&self) -> bool {
        Instant::now() >= self.expires
    }
}

pub fn hash_password(password: &str) -> Result<String, ApiError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(ApiError::internal)
}

pub fn verify_password(password: &str, hash: &str) -> bool {
    PasswordHash::new(hash)
        .map(|h| Argon2::default().verify_password(password.as_bytes(), &h).is_ok())
        .unwrap_or(false)
}

/// Verified against when the email is unknown, so both paths cost one KDF run.
fn dummy_hash() -> &'static str {
    static HASH: OnceLock<String> = OnceLock::new();
    HASH.get_or_init(|| hash_password("not-a-real-password").expect("hashing works"))
}

#[derive(Default)]
pub struct Accounts {
    by_email: HashMap<String, Account>,
    next: u64,
}

impl Accounts {
    pub fn register(&mut self, email: &str, password_hash: String) -> Result<&Account, ApiError> {
        let key = email.to_ascii_lowercase();
        if self.by_email.contains_key(&key) {
            return Err(ApiError::Conflict("email already registered".into()));
        }
        self.next += 1;
        let account = Account {
            account_id: format!("acc-{}", self.next),
            email: email.to_string(),
            password_hash,
            created_at: unix_ms(),
        };
        Ok(self.by_email.entry(key).or_insert(account))
    }

    pub fn contains(&self, email: &str) -> bool {
        self.by_email.contains_key(&email.to_ascii_lowercase())
    }

    /// Password hash to check against; the dummy hash for unknown emails.
    pub fn credentials(&self, email: &str) -> (Option<String>, String) {
        match self.by_email.get(&email.to_ascii_lowercase()) {
            Some(a) => (Some(a.account_id.clone()), a.password_hash.clone()),
            None => (None, dummy_hash().to_string()),
        }
    }
}

/// Checks a login attempt. Unknown emails and wrong passwords are indistinguishable.
pub fn check_login(candidate: (Option<String>, String), password: &str) -> Result<String, ApiError> {
    let (account, hash) = candidate;
    let ok = verify_password(password, &hash);
    match account {
        Some(id) if ok => Ok(id),
        _ => Err(ApiError::BadCredentials),
    }
}

type Digest32 = [u8; 32];

fn digest(token: &str) -> Digest32 {
    Sha256::digest(token.as_bytes()).into()
}

/// Issued tokens, keyed by their SHA-256 so the table never holds bearer secrets.
#[derive(Default)]
pub struct Sessions {
    by_digest: HashMap<Digest32, Session>,
}

impl Sessions {
    pub fn issue(&mut self, account_id: Option<String>, robot: Option<String>, scope: Scope, ttl: Duration) -> (String, Session) {
        self.by_digest.retain(|_, s| !s.expired());
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        let token = URL_SAFE_NO_PAD.encode(bytes);
        let session = Session {
            account_id,
            robot,
            scope,
            expires: Instant::now() + ttl,
            expires_at: unix_ms() + ttl.as_millis() as u64,
        };
        self.by_digest.insert(digest(&token), session.clone());
        (token, session)
    }

    pub fn lookup(&mut self, token: &str) -> Result<Session, ApiError> {
        let key = digest(token);
        match self.by_digest.get(&key) {
            Some(s) if !s.expired() => Ok(s.clone()),
            Some(_) => {
                self.by_digest.remove(&key);
                Err(ApiError::Unauthorized)
            }
            None => Err(ApiError::Unauthorized),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn password_round_trip() {
        let h = hash_password("hunter22").unwrap();
        assert!(h.starts_with("$argon2id$"));
        assert!(!h.contains("hunter22"));
        assert!(verify_password("hunter22", &h));
        assert!(!verify_password("hunter23", &h));
        assert!(!verify_password("x", "garbage"));
    }

    #[test]
    fn login_failures_look_alike() {
        let mut accounts = Accounts::default();
        let h = hash_password("pw-123456").unwrap();
        accounts.register("a@b.c", h).unwrap();
        assert!(accounts.register("A@B.C", "x".into()).is_err());
        let wrong = check_login(accounts.credentials("a@b.c"), "nope").unwrap_err();
        let unknown = check_login(accounts.credentials("z@b.c"), "nope").unwrap_err();
        assert_eq!(wrong.to_string(), unknown.to_string());
        assert_eq!(check_login(accounts.credentials("a@b.c"), "pw-123456").unwrap(), "acc-1");
    }

    #[test]
    fn tokens_are_256_bit_url_safe_and_expire() {
        let mut s = Sessions::default();
        let (t, _) = s.issue(Some("a".into()), None, Scope::Control, Duration::from_secs(60));
        assert_eq!(URL_SAFE_NO_PAD.decode(&t).unwrap().len(), 32);
        assert!(t.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'));
        assert_eq!(s.lookup(&t).unwrap().scope, Scope::Control);
        assert!(s.lookup("nope").is_err());

        let (t, _) = s.issue(None, None, Scope::Status, Duration::ZERO);
        assert!(matches!(s.lookup(&t), Err(ApiError::Unauthorized)));
    }
}
