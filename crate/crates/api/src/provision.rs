//! Per-robot credentials derived from the provisioning secret.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;

type HmacSha256 = Hmac<Sha256>;

fn tag(secret: &[u8], label: &str, id: &str) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac takes keys of any length");
    mac.update(label.as_bytes());
    mac.update(b":");
    mac.update(id.as_bytes());
    mac.finalize().into_bytes().into()
}

/// Twelve hex digits in groups of four, e.g. `3F2A-91BC-07D4`.
pub fn activation_code(secret: &[u8], robot_identifier: &str) -> String {
    let t = tag(secret, "activate", robot_identifier);
    t[..6]
        .chunks(2)
        .map(|c| format!("{:02X}{:02X}", c[0], c[1]))
        .collect::<Vec<_>>()
        .join("-")
}

pub fn diag_key(secret: &[u8], robot_identifier: &str) -> String {
    URL_SAFE_NO_PAD.encode(tag(secret, "diag", robot_identifier))
}

/// Case and separator insensitive, constant time over the normalized code.
pub fn activation_matches(expected: &str, given: &str) -> bool {
    let norm = |s: &str| -> String {
        s.chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_uppercase())
            .collect()
    };
    constant_time_eq(&norm(expected), &norm(given))
}

pub fn constant_time_eq(a: &str, b: &str) -> bool {
    a.as_bytes().ct_eq(b.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub robot_identifier: String,
    pub activation_code: String,
    pub diag_key: String,
}

impl Credentials {
    pub fn derive(secret: &[u8], robot_identifier: &str) -> Self {
        Self {
            robot_identifier: robot_identifier.to_string(),
            activation_code: activation_code(secret, robot_identifier),
            diag_key: diag_key(secret, robot_identifier),
        }
    }
}
