//! Accounts, sessions, the follow graph and ledger address assignment.

use argon2::{Algorithm, Argon2, Params, Version};
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::Serialize;
use subtle::ConstantTimeEq;

use crate::config::KdfParams;
use crate::crypto::{sha256, Hash32, Keypair};
use crate::error::{Error, LedgerError, MediaError, Result};
use crate::lang::{self, LanguageCode};
use crate::ledger::payload::RegistrationPayload;
use crate::ledger::{Address, TxKind};
use crate::node::{simulated_crash, CrashPoint, Node};
use crate::now_ms;

pub const MIN_PASSWORD_CHARS: usize = 8;
const SALT_LEN: usize = 16;
const KEY_LEN: usize = 32;

/// Ledger address of a 32-byte public key: the last 20 bytes of its SHA-256.
pub fn address_of(public_key: &[u8; 32]) -> Address {
    let digest = sha256(public_key);
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest[12..]);
    Address(out)
}

/// Like [`address_of`], for keys of unchecked length.
pub fn derive_address(public_key: &[u8]) -> Result<Address, LedgerError> {
    let key: &[u8; 32] = public_key.try_into().map_err(|_| LedgerError::BadKeyLength(public_key.len()))?;
    Ok(address_of(key))
}

pub fn validate_username(name: &str) -> Result<()> {
    let ok_len = (3..=32).contains(&name.len());
    let ok_chars = name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_');
    if !ok_len || !ok_chars {
        return Err(Error::Validation("username must be 3-32 characters of [A-Za-z0-9_]".into()));
    }
    Ok(())
}

fn argon2(kdf: &KdfParams) -> Result<Argon2<'static>> {
    let params = Params::new(kdf.memory_kib, kdf.iterations, kdf.parallelism, Some(KEY_LEN))
        .map_err(|e| Error::Validation(format!("bad KDF parameters: {e}")))?;
    Ok(Argon2::new(Algorithm::Argon2id, Version::V0x13, params))
}

fn derive_key(kdf: &KdfParams, password: &str, salt: &[u8]) -> Result<[u8; KEY_LEN]> {
    let mut out = [0u8; KEY_LEN];
    argon2(kdf)?
        .hash_password_into(password.as_bytes(), salt, &mut out)
        .map_err(|e| Error::Validation(format!("password hashing failed: {e}")))?;
    Ok(out)
}

/// Hashes `password` with a fresh random salt into a self-describing record
/// `argon2id$v=19$m=<kib>,t=<iters>,p=<lanes>$<salt hex>$<key hex>`.
pub fn hash_password(password: &str, kdf: &KdfParams) -> Result<String> {
    let salt: [u8; SALT_LEN] = rand::random();
    let key = derive_key(kdf, password, &salt)?;
    Ok(format!(
        "argon2id$v=19$m={},t={},p={}${}${}",
        kdf.memory_kib,
        kdf.iterations,
        kdf.parallelism,
        hex::encode(salt),
        hex::encode(key)
    ))
}

fn parse_record(record: &str) -> Option<(KdfParams, Vec<u8>, Vec<u8>)> {
    let mut parts = record.split('$');
    if parts.next()? != "argon2id" || parts.next()? != "v=19" {
        return None;
    }
    let mut kdf = KdfParams::default();
    for kv in parts.next()?.split(',') {
        let (k, v) = kv.split_once('=')?;
        let v: u32 = v.parse().ok()?;
        match k {
            "m" => kdf.memory_kib = v,
            "t" => kdf.iterations = v,
            "p" => kdf.parallelism = v,
            _ => return None,
        }
    }
    let salt = hex::decode(parts.next()?).ok()?;
    let key = hex::decode(parts.next()?).ok()?;
    if parts.next().is_some() || salt.len() < SALT_LEN || key.len() != KEY_LEN {
        return None;
    }
    Some((kdf, salt, key))
}

/// Constant-time check of `password` against a record from [`hash_password`].
pub fn verify_password(password: &str, record: &str) -> bool {
    let Some((kdf, salt, expected)) = parse_record(record) else {
        return false;
    };
    match derive_key(&kdf, password, &salt) {
        Ok(key) => key.ct_eq(&expected[..]).into(),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserProfile {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub user_id: [u8; 16],
    pub username: String,
    pub default_lang: LanguageCode,
    pub picture_ref: Option<String>,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub public_key: [u8; 32],
    pub address: Address,
    pub created_at: u64,
    #[serde(serialize_with = "crate::hexfmt::option::serialize")]
    pub registration_tx: Option<Hash32>,
}

/// A profile together with the signing key the node holds for it.
#[derive(Debug, Clone)]
pub struct Account {
    pub profile: UserProfile,
    seed: [u8; 32],
}

impl Account {
    pub fn keypair(&self) -> Keypair {
        Keypair::from_seed(&self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub user_id: [u8; 16],
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FollowEdge {
    pub follower: String,
    pub followee: String,
    pub since: u64,
}

/// Recognized profile picture formats, by magic bytes.
pub fn sniff_image(bytes: &[u8]) -> Option<(&'static str, &'static str)> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(("png", "image/png"))
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(("jpg", "image/jpeg"))
    } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
        Some(("gif", "image/gif"))
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        Some(("webp", "image/webp"))
    } else {
        None
    }
}

pub(crate) const ACCOUNT_COLUMNS: &str =
    "user_id, username, default_lang, picture_ref, public_key, address, created_at, reg_tx, signing_seed";

pub(crate) fn blob<const N: usize>(row: &Row<'_>, idx: usize) -> rusqlite::Result<[u8; N]> {
    let v: Vec<u8> = row.get(idx)?;
    v.try_into().map_err(|v: Vec<u8>| {
        rusqlite::Error::FromSqlConversionFailure(idx, rusqlite::types::Type::Blob, format!("expected {N} bytes, got {}", v.len()).into())
    })
}

pub(crate) fn account_from_row(row: &Row<'_>) -> rusqlite::Result<Account> {
    let lang_tag: String = row.get(2)?;
    let default_lang = lang::resolve(&lang_tag).map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(2, rusqlite::types::Type::Text, Box::new(e))
    })?;
    let reg_tx: Option<Vec<u8>> = row.get(7)?;
    Ok(Account {
        profile: UserProfile {
            user_id: blob(row, 0)?,
            username: row.get(1)?,
            default_lang,
            picture_ref: row.get(3)?,
            public_key: blob(row, 4)?,
            address: Address(blob(row, 5)?),
            created_at: row.get::<_, i64>(6)? as u64,
            registration_tx: reg_tx.and_then(|v| v.try_into().ok()),
        },
        seed: blob(row, 8)?,
    })
}

pub(crate) fn account_where(conn: &Connection, clause: &str, param: &dyn rusqlite::ToSql) -> Result<Option<Account>> {
    let sql = format!("SELECT {ACCOUNT_COLUMNS} FROM users WHERE {clause}");
    Ok(conn.query_row(&sql, [param], account_from_row).optional()?)
}

fn is_unique_violation(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::ConstraintViolation)
}

impl Node {
    /// Creates an account, its keypair, and its on-ledger registration.
    pub fn register(&self, username: &str, password: &str, default_lang: &str) -> Result<UserProfile> {
        validate_username(username)?;
        if password.chars().count() < MIN_PASSWORD_CHARS {
            return Err(Error::WeakPassword);
        }
        let default_lang = lang::resolve(default_lang)?;
        let lower = username.to_lowercase();
        if account_where(&self.store.db(), "username_lc = ?1", &lower)?.is_some() {
            return Err(Error::UsernameTaken);
        }

        let record = hash_password(password, &self.config.kdf)?;
        let keypair = Keypair::generate();
        let public_key = keypair.public_key();
        let user_id: [u8; 16] = rand::random();
        let created_at = now_ms();
        let inserted = self.store.db().execute(
            "INSERT INTO users (user_id, username, username_lc, password_record, default_lang,
                                signing_seed, public_key, address, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            params![
                &user_id[..],
                username,
                lower,
                record,
                default_lang.code(),
                &keypair.seed()[..],
                &public_key[..],
                &address_of(&public_key).0[..],
                created_at as i64
            ],
        );
        match inserted {
            Ok(_) => {}
            Err(e) if is_unique_violation(&e) => return Err(Error::UsernameTaken),
            Err(e) => return Err(e.into()),
        }
        if self.crash_here(CrashPoint::AfterAccountRow) {
            return Err(simulated_crash());
        }

        let payload = RegistrationPayload { user_id, username: username.to_string(), default_lang };
        match self.submit(TxKind::Registration, payload.encode(), &keypair) {
            Ok(receipt) => {
                self.store.db().execute(
                    "UPDATE users SET reg_tx = ?1 WHERE user_id = ?2",
                    params![&receipt.tx_hash[..], &user_id[..]],
                )?;
            }
            Err(e) => {
                self.store.db().execute("DELETE FROM users WHERE user_id = ?1", [&user_id[..]])?;
                return Err(e);
            }
        }
        self.account(&user_id).map(|a| a.profile)
    }

    /// Verifies credentials and issues a session. Unknown users and wrong
    /// passwords are indistinguishable, including in timing.
    pub fn login(&self, username: &str, password: &str) -> Result<Session> {
        let lower = username.to_lowercase();
        let found: Option<([u8; 16], String)> = self
            .store
            .db()
            .query_row(
                "SELECT user_id, password_record FROM users WHERE username_lc = ?1",
                [&lower],
                |r| Ok((blob(r, 0)?, r.get(1)?)),
            )
            .optional()?;
        let Some((user_id, record)) = found else {
            let _ = verify_password(password, &self.dummy_password_record);
            return Err(Error::InvalidCredentials);
        };
        if !verify_password(password, &record) {
            return Err(Error::InvalidCredentials);
        }
        let token: [u8; 32] = rand::random();
        let expires_at = now_ms() + self.config.session_ttl.as_millis() as u64;
        self.store.db().execute(
            "INSERT INTO sessions (token_hash, user_id, expires_at) VALUES (?1, ?2, ?3)",
            params![&sha256(&token)[..], &user_id[..], expires_at as i64],
        )?;
        self.session_started(&sha256(&token));
        Ok(Session { token: hex::encode(token), user_id, expires_at })
    }

    /// Resolves a bearer token to its account; expired sessions are rejected.
    pub fn authenticate(&self, token: &str) -> Result<Account> {
        let raw = crate::hexfmt::parse::<32>(token.trim()).map_err(|_| Error::Unauthorized)?;
        let conn = self.store.db();
        let user_id: Option<Vec<u8>> = conn
            .query_row(
                "SELECT user_id FROM sessions WHERE token_hash = ?1 AND expires_at > ?2",
                params![&sha256(&raw)[..], now_ms() as i64],
                |r| r.get(0),
            )
            .optional()?;
        let user_id = user_id.ok_or(Error::Unauthorized)?;
        account_where(&conn, "user_id = ?1", &user_id)?.ok_or(Error::Unauthorized)
    }

    pub fn account(&self, user_id: &[u8; 16]) -> Result<Account> {
        account_where(&self.store.db(), "user_id = ?1", &&user_id[..])?
            .ok_or_else(|| Error::UnknownUser(hex::encode(user_id)))
    }

    pub fn account_by_username(&self, username: &str) -> Result<Account> {
        account_where(&self.store.db(), "username_lc = ?1", &username.to_lowercase())?
            .ok_or_else(|| Error::UnknownUser(username.to_string()))
    }

    pub fn set_default_lang(&self, user: &Account, tag: &str) -> Result<UserProfile> {
        let l = lang::resolve(tag)?;
        self.store.db().execute(
            "UPDATE users SET default_lang = ?1 WHERE user_id = ?2",
            params![l.code(), &user.profile.user_id[..]],
        )?;
        self.account(&user.profile.user_id).map(|a| a.profile)
    }

    /// Stores a profile picture (PNG, JPEG, GIF or WebP) in the blob store.
    pub fn set_picture(&self, user: &Account, bytes: &[u8]) -> Result<UserProfile> {
        let max = self.config.max_picture_bytes;
        if bytes.len() > max {
            return Err(MediaError::TooLarge { len: bytes.len(), max }.into());
        }
        let (ext, _) = sniff_image(bytes).ok_or(Error::UnsupportedImage)?;
        let pending = self.store.put_pending_blob(bytes, ext)?;
        let old: Option<String> = {
            let conn = self.store.db();
            let old = conn.query_row(
                "SELECT picture_ref FROM users WHERE user_id = ?1",
                [&user.profile.user_id[..]],
                |r| r.get(0),
            )?;
            conn.execute(
                "UPDATE users SET picture_ref = ?1 WHERE user_id = ?2",
                params![pending.blob_ref(), &user.profile.user_id[..]],
            )?;
            old
        };
        pending.commit();
        if let Some(old) = old {
            self.store.delete_blob_if_unreferenced(&old)?;
        }
        self.account(&user.profile.user_id).map(|a| a.profile)
    }

    /// The account's picture bytes and MIME type, if one was set.
    pub fn picture(&self, user: &Account) -> Result<Option<(Vec<u8>, &'static str)>> {
        let Some(blob_ref) = &user.profile.picture_ref else {
            return Ok(None);
        };
        let bytes = self.store.get_blob(blob_ref)?;
        let mime = sniff_image(&bytes).map(|(_, m)| m).unwrap_or("application/octet-stream");
        Ok(Some((bytes, mime)))
    }

    /// Follows `followee`; repeating an existing follow returns the same edge.
    pub fn follow(&self, follower: &Account, followee: &str) -> Result<FollowEdge> {
        let target = self.account_by_username(followee)?;
        if target.profile.user_id == follower.profile.user_id {
            return Err(Error::SelfFollow);
        }
        let conn = self.store.db();
        conn.execute(
            "INSERT OR IGNORE INTO follows (follower, followee, since) VALUES (?1, ?2, ?3)",
            params![&follower.profile.user_id[..], &target.profile.user_id[..], now_ms() as i64],
        )?;
        let since: i64 = conn.query_row(
            "SELECT since FROM follows WHERE follower = ?1 AND followee = ?2",
            params![&follower.profile.user_id[..], &target.profile.user_id[..]],
            |r| r.get(0),
        )?;
        Ok(FollowEdge {
            follower: follower.profile.username.clone(),
            followee: target.profile.username,
            since: since as u64,
        })
    }

    /// Removes a follow edge; returns whether one existed.
    pub fn unfollow(&self, follower: &Account, followee: &str) -> Result<bool> {
        let target = self.account_by_username(followee)?;
        let n = self.store.db().execute(
            "DELETE FROM follows WHERE follower = ?1 AND followee = ?2",
            params![&follower.profile.user_id[..], &target.profile.user_id[..]],
        )?;
        Ok(n > 0)
    }

    /// Usernames followed by `user`, alphabetically.
    pub fn followees(&self, user: &Account) -> Result<Vec<String>> {
        let conn = self.store.db();
        let mut stmt = conn.prepare(
            "SELECT u.username FROM follows f JOIN users u ON u.user_id = f.followee
             WHERE f.follower = ?1 ORDER BY u.username_lc",
        )?;
        let names = stmt
            .query_map([&user.profile.user_id[..]], |r| r.get(0))?
            .collect::<rusqlite::Result<Vec<String>>>()?;
        Ok(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_golden_vectors() {
        assert_eq!(address_of(&[0u8; 32]).to_string(), "0x8e9f8e20089714856ee233b3902a591d0d5f2925");
        assert_eq!(address_of(&[1u8; 32]).to_string(), "0xf1130b7ded7ec2f7f5e1d30bd9d521f015363793");
        assert!(matches!(derive_address(&[0u8; 31]), Err(LedgerError::BadKeyLength(31))));
        assert_eq!(derive_address(&[0u8; 32]).unwrap(), address_of(&[0u8; 32]));
    }

    #[test]
    fn distinct_keys_distinct_addresses() {
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            assert!(seen.insert(address_of(&Keypair::generate().public_key())));
        }
    }

    #[test]
    fn username_rules() {
        for ok in ["abc", "maria", "A_1", &"x".repeat(32)] {
            validate_username(ok).unwrap();
        }
        for bad in ["a", "ab", "has space", "naïve", &"x".repeat(33), "semi;colon"] {
            assert!(validate_username(bad).is_err(), "{bad}");
        }
    }

    const FAST: KdfParams = KdfParams { memory_kib: 64, iterations: 1, parallelism: 1 };

    #[test]
    fn password_records() {
        let rec = hash_password("s3cure-pw", &FAST).unwrap();
        assert!(rec.starts_with("argon2id$v=19$m=64,t=1,p=1$"));
        assert!(!rec.contains("s3cure-pw"));
        assert!(verify_password("s3cure-pw", &rec));
        assert!(!verify_password("s3cure-pX", &rec));
        assert_ne!(rec, hash_password("s3cure-pw", &FAST).unwrap(), "salts differ");
        assert!(!verify_password("s3cure-pw", "argon2id$v=19$m=64$00$00"));
        assert!(!verify_password("s3cure-pw", ""));
    }

    #[test]
    fn image_sniffing() {
        assert_eq!(sniff_image(b"\x89PNG\r\n\x1a\n....").unwrap().0, "png");
        assert_eq!(sniff_image(&[0xFF, 0xD8, 0xFF, 0xE0]).unwrap().0, "jpg");
        assert_eq!(sniff_image(b"GIF89a..").unwrap().0, "gif");
        assert_eq!(sniff_image(b"RIFF\0\0\0\0WEBPVP8 ").unwrap().0, "webp");
        assert!(sniff_image(b"RIFF\0\0\0\0WAVEfmt ").is_none());
        assert!(sniff_image(b"").is_none());
    }
}
