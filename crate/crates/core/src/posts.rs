//! Voice posts: ingestion, lazy per-language translation, timelines and
//! transaction details.

use std::sync::Arc;
use std::time::Instant;

use rusqlite::{params, OptionalExtension, Row};
use serde::Serialize;

use crate::crypto::{sha256, Hash32};
use crate::error::{Error, LedgerError, Result};
use crate::identity::{blob, Account};
use crate::lang::{self, LanguageCode};
use crate::ledger::payload::{PostPayload, TranslationPayload};
use crate::ledger::{format_eth, Address, Payload, Receipt, TxKind, TxLookup, MAX_PAYLOAD_LEN};
use crate::media::{audio_hash, parse_wav, WavLimits};
use crate::metrics::Stage;
use crate::node::{simulated_crash, CrashPoint, Node};

pub const DEFAULT_PAGE: usize = 20;
pub const MAX_PAGE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PostTimings {
    pub asr_ms: f64,
    pub ledger_commit_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoicePost {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub post_id: [u8; 16],
    pub author: String,
    pub author_address: Address,
    pub lang: LanguageCode,
    pub audio_ref: String,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub audio_hash: Hash32,
    pub transcript: String,
    pub created_at: u64,
    pub tx: Receipt,
    pub timings: PostTimings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AudioSource {
    Original,
    Translated { engine_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TranslationTimings {
    pub translate_text_ms: f64,
    pub synth_speech_ms: f64,
    pub ledger_commit_ms: f64,
}

/// A post as presented to one viewer, in the viewer's language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedItem {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub post_id: [u8; 16],
    pub author: String,
    pub author_address: Address,
    pub original_lang: LanguageCode,
    pub created_at: u64,
    pub viewer_lang: LanguageCode,
    pub text_for_viewer: String,
    pub transcript: String,
    pub audio_source: AudioSource,
    pub audio_url: String,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub post_tx: Hash32,
    #[serde(serialize_with = "crate::hexfmt::option::serialize")]
    pub translation_tx: Option<Hash32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translation_error: Option<String>,
    /// Present when this request performed the translation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<TranslationTimings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelinePage {
    pub items: Vec<FeedItem>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxDetails {
    pub kind: TxKind,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub tx_hash: Hash32,
    pub block_height: u64,
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub block_hash: Hash32,
    pub sender_address: Address,
    pub lang: LanguageCode,
    pub text: String,
    pub timestamp_ms: u64,
    pub gas_used: u64,
    pub cost_wei: String,
    pub cost_eth: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PostTxDetails {
    #[serde(serialize_with = "crate::hexfmt::serialize")]
    pub post_id: [u8; 16],
    pub post_tx: TxDetails,
    pub translation_tx: Option<TxDetails>,
}

impl TryFrom<&TxLookup> for TxDetails {
    type Error = Error;

    fn try_from(lookup: &TxLookup) -> Result<Self> {
        let tx = &lookup.transaction;
        let (lang, text) = match Payload::decode(tx.kind, &tx.payload) {
            Ok(Payload::Post(p)) => (p.lang, p.text),
            Ok(Payload::Translation(t)) => (t.lang, t.text),
            Ok(Payload::Registration(_)) | Err(_) => {
                return Err(LedgerError::Corrupt {
                    height: lookup.block_height,
                    reason: "transaction payload does not describe a post".into(),
                }
                .into())
            }
        };
        Ok(TxDetails {
            kind: tx.kind,
            tx_hash: tx.hash(),
            block_height: lookup.block_height,
            block_hash: lookup.block_hash,
            sender_address: tx.sender,
            lang,
            text,
            timestamp_ms: tx.timestamp_ms,
            gas_used: lookup.gas_used,
            cost_wei: lookup.cost_wei.to_string(),
            cost_eth: format_eth(lookup.cost_wei),
        })
    }
}

pub fn parse_post_id(s: &str) -> Result<[u8; 16]> {
    crate::hexfmt::parse::<16>(s).map_err(|_| Error::UnknownPost)
}

/// Opaque pagination token: created_at(u64 BE) ‖ post_id, hex-encoded.
fn encode_cursor(created_at: u64, post_id: &[u8; 16]) -> String {
    let mut raw = created_at.to_be_bytes().to_vec();
    raw.extend_from_slice(post_id);
    hex::encode(raw)
}

fn decode_cursor(s: &str) -> Result<(u64, [u8; 16])> {
    let raw = crate::hexfmt::parse::<24>(s).map_err(|_| Error::BadCursor)?;
    let created_at = u64::from_be_bytes(raw[..8].try_into().expect("8 bytes"));
    if created_at > i64::MAX as u64 {
        return Err(Error::BadCursor);
    }
    Ok((created_at, raw[8..].try_into().expect("16 bytes")))
}

#[derive(Debug, Clone)]
struct PostRow {
    post_id: [u8; 16],
    author: String,
    author_address: Address,
    lang: LanguageCode,
    audio_ref: String,
    audio_hash: Hash32,
    transcript: String,
    created_at: u64,
    tx_hash: Hash32,
}

const POST_COLUMNS: &str = "p.post_id, u.username, u.address, p.lang, p.audio_ref, p.audio_hash,
     p.transcript, p.created_at, p.tx_hash
     FROM posts p JOIN users u ON u.user_id = p.author";

fn lang_at(row: &Row<'_>, idx: usize) -> rusqlite::Result<LanguageCode> {
    let tag: String = row.get(idx)?;
    lang::resolve(&tag)
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(idx, rusqlite::types::Type::Text, Box::new(e)))
}

fn post_from_row(row: &Row<'_>) -> rusqlite::Result<PostRow> {
    Ok(PostRow {
        post_id: blob(row, 0)?,
        author: row.get(1)?,
        author_address: Address(blob(row, 2)?),
        lang: lang_at(row, 3)?,
        audio_ref: row.get(4)?,
        audio_hash: blob(row, 5)?,
        transcript: row.get(6)?,
        created_at: row.get::<_, i64>(7)? as u64,
        tx_hash: blob(row, 8)?,
    })
}

#[derive(Debug, Clone)]
struct TranslationRow {
    text: String,
    audio_ref: Option<String>,
    engine_id: String,
    tx_hash: Hash32,
}

fn audio_url(post_id: &[u8; 16], lang: LanguageCode) -> String {
    format!("/api/v1/posts/{}/audio?lang={}", hex::encode(post_id), lang.code())
}

/// Limits for re-reading audio that was validated on ingestion.
const STORED_AUDIO: WavLimits = WavLimits { max_bytes: usize::MAX, max_duration_ms: u64::MAX / 1000 };

impl Node {
    /// Ingests a voice post: parse, transcribe, store the audio, then log
    /// the transcript on the ledger. The ledger transaction is the commit
    /// point; nothing is left behind if an earlier step fails.
    pub fn create_post(&self, author: &Account, wav: &[u8], lang: Option<&str>) -> Result<VoicePost> {
        let audio = parse_wav(wav, &self.config.wav_limits())?;
        let lang = match lang.map(str::trim).filter(|t| !t.is_empty()) {
            Some(tag) => lang::resolve(tag)?,
            None => author.profile.default_lang,
        };
        let started = Instant::now();
        let heard = self.engine.asr(&audio, lang)?;
        let asr_ms = self.metrics.record_since(Stage::Asr, started);

        let post_id: [u8; 16] = rand::random();
        let audio_hash = audio_hash(wav);
        let payload = PostPayload { post_id, lang, audio_hash, text: heard.text.clone() }.encode();
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(LedgerError::PayloadTooLarge { len: payload.len(), max: MAX_PAYLOAD_LEN }.into());
        }

        let pending = self.store.put_pending_blob(wav, "wav")?;
        if self.crash_here(CrashPoint::AfterBlobWrite) {
            std::mem::forget(pending);
            return Err(simulated_crash());
        }
        let (receipt, ledger_commit_ms) = self.submit_timed(TxKind::Post, payload, &author.keypair())?;
        // From here on the ledger references the audio: keep it even if the
        // row below fails to land; startup recovery rebuilds the row.
        let audio_ref = pending.blob_ref().to_string();
        pending.commit();
        if self.crash_here(CrashPoint::AfterLedgerCommit) {
            return Err(simulated_crash());
        }

        let created_at = self.ledger.get_transaction(&receipt.tx_hash)?.transaction.timestamp_ms;
        self.store.db().execute(
            "INSERT INTO posts (post_id, author, lang, audio_ref, audio_hash, transcript, created_at,
                                tx_hash, block_height, block_hash, gas_used, cost_wei)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12)",
            params![
                &post_id[..],
                &author.profile.user_id[..],
                lang.code(),
                audio_ref,
                &audio_hash[..],
                heard.text,
                created_at as i64,
                &receipt.tx_hash[..],
                receipt.block_height as i64,
                &receipt.block_hash[..],
                receipt.gas_used as i64,
                receipt.cost_wei.to_string()
            ],
        )?;
        Ok(VoicePost {
            post_id,
            author: author.profile.username.clone(),
            author_address: author.profile.address,
            lang,
            audio_ref,
            audio_hash,
            transcript: heard.text,
            created_at,
            tx: receipt,
            timings: PostTimings { asr_ms, ledger_commit_ms },
        })
    }

    fn post_row(&self, post_id: &[u8; 16]) -> Result<PostRow> {
        self.store
            .db()
            .query_row(&format!("SELECT {POST_COLUMNS} WHERE p.post_id = ?1"), [&post_id[..]], post_from_row)
            .optional()?
            .ok_or(Error::UnknownPost)
    }

    fn translation_row(&self, post_id: &[u8; 16], lang: LanguageCode) -> Result<Option<TranslationRow>> {
        Ok(self
            .store
            .db()
            .query_row(
                "SELECT text, audio_ref, engine_id, tx_hash FROM translations
                 WHERE post_id = ?1 AND target_lang = ?2",
                params![&post_id[..], lang.code()],
                |r| {
                    Ok(TranslationRow {
                        text: r.get(0)?,
                        audio_ref: r.get(1)?,
                        engine_id: r.get(2)?,
                        tx_hash: blob(r, 3)?,
                    })
                },
            )
            .optional()?)
    }

    /// Languages a post has been translated into so far.
    pub fn translation_languages(&self, post_id: &[u8; 16]) -> Result<Vec<LanguageCode>> {
        let conn = self.store.db();
        let mut stmt =
            conn.prepare("SELECT target_lang FROM translations WHERE post_id = ?1 ORDER BY target_lang")?;
        let langs = stmt.query_map([&post_id[..]], |r| lang_at(r, 0))?.collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(langs)
    }

    fn original_audio(&self, post: &PostRow) -> Result<Vec<u8>> {
        let bytes = self.store.get_blob(&post.audio_ref)?;
        if sha256(&bytes) != post.audio_hash {
            return Err(crate::error::StoreError::CorruptBlob(post.audio_ref.clone()).into());
        }
        Ok(bytes)
    }

    /// Returns the translation of `post` into `lang`, creating it at most
    /// once no matter how many callers ask concurrently.
    fn ensure_translation(
        &self,
        post: &PostRow,
        lang: LanguageCode,
    ) -> Result<(TranslationRow, Option<TranslationTimings>)> {
        if let Some(tr) = self.translation_row(&post.post_id, lang)? {
            if tr.audio_ref.is_some() {
                return Ok((tr, None));
            }
        }
        let key = (post.post_id, lang);
        let slot = self.flights.lock().expect("flights poisoned").entry(key).or_default().clone();
        let result = {
            let _turn = slot.lock().expect("flight poisoned");
            self.translate_exclusive(post, lang)
        };
        drop(slot);
        let mut flights = self.flights.lock().expect("flights poisoned");
        if flights.get(&key).is_some_and(|s| Arc::strong_count(s) == 1) {
            flights.remove(&key);
        }
        result
    }

    /// Body of [`ensure_translation`]; the caller holds the (post, lang) slot.
    fn translate_exclusive(
        &self,
        post: &PostRow,
        lang: LanguageCode,
    ) -> Result<(TranslationRow, Option<TranslationTimings>)> {
        let existing = self.translation_row(&post.post_id, lang)?;
        if let Some(tr) = &existing {
            if tr.audio_ref.is_some() {
                return Ok((tr.clone(), None));
            }
        }
        let original = parse_wav(&self.original_audio(post)?, &STORED_AUDIO)?;

        let started = Instant::now();
        let text = match &existing {
            Some(tr) => tr.text.clone(),
            None => self.engine.t2tt(&post.transcript, post.lang, lang)?,
        };
        let translate_text_ms = self.metrics.record_since(Stage::TranslateText, started);
        let started = Instant::now();
        let speech = self.engine.s2st(&original, post.lang, lang)?.to_bytes();
        let synth_speech_ms = self.metrics.record_since(Stage::SynthSpeech, started);
        let pending = self.store.put_pending_blob(&speech, "wav")?;
        let audio_ref = pending.blob_ref().to_string();

        if let Some(mut tr) = existing {
            // Recovered from the ledger without audio: only the audio is new.
            self.store.db().execute(
                "UPDATE translations SET audio_ref = ?1 WHERE post_id = ?2 AND target_lang = ?3",
                params![audio_ref, &post.post_id[..], lang.code()],
            )?;
            pending.commit();
            tr.audio_ref = Some(audio_ref);
            let timings = TranslationTimings { translate_text_ms, synth_speech_ms, ledger_commit_ms: 0.0 };
            return Ok((tr, Some(timings)));
        }

        let engine_id = self.engine.descriptor().engine_id;
        let payload = TranslationPayload { post_id: post.post_id, lang, engine_id: engine_id.clone(), text: text.clone() };
        let (receipt, ledger_commit_ms) =
            self.submit_timed(TxKind::Translation, payload.encode(), self.store.translator_key())?;
        pending.commit();
        let created_at = self.ledger.get_transaction(&receipt.tx_hash)?.transaction.timestamp_ms;
        self.store.db().execute(
            "INSERT INTO translations (post_id, target_lang, text, audio_ref, engine_id, created_at,
                                       tx_hash, block_height, block_hash, gas_used, cost_wei)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
            params![
                &post.post_id[..],
                lang.code(),
                text,
                audio_ref,
                engine_id,
                created_at as i64,
                &receipt.tx_hash[..],
                receipt.block_height as i64,
                &receipt.block_hash[..],
                receipt.gas_used as i64,
                receipt.cost_wei.to_string()
            ],
        )?;
        let tr = TranslationRow { text, audio_ref: Some(audio_ref), engine_id, tx_hash: receipt.tx_hash };
        Ok((tr, Some(TranslationTimings { translate_text_ms, synth_speech_ms, ledger_commit_ms })))
    }

    fn feed_item(&self, post: &PostRow, viewer_lang: LanguageCode) -> FeedItem {
        let mut item = FeedItem {
            post_id: post.post_id,
            author: post.author.clone(),
            author_address: post.author_address,
            original_lang: post.lang,
            created_at: post.created_at,
            viewer_lang,
            text_for_viewer: post.transcript.clone(),
            transcript: post.transcript.clone(),
            audio_source: AudioSource::Original,
            audio_url: audio_url(&post.post_id, post.lang),
            post_tx: post.tx_hash,
            translation_tx: None,
            translation_error: None,
            timings: None,
        };
        if viewer_lang == post.lang {
            return item;
        }
        match self.ensure_translation(post, viewer_lang) {
            Ok((tr, timings)) => {
                item.text_for_viewer = tr.text;
                item.audio_source = AudioSource::Translated { engine_id: tr.engine_id };
                item.audio_url = audio_url(&post.post_id, viewer_lang);
                item.translation_tx = Some(tr.tx_hash);
                item.timings = timings;
            }
            Err(e) => {
                log::warn!("translation of post {} into {} failed: {e}", hex::encode(post.post_id), viewer_lang);
                item.translation_error = Some(e.to_string());
            }
        }
        item
    }

    /// Presents a post in `viewer_lang`, translating it on first request.
    /// A failed translation yields the original with `translation_error`.
    pub fn resolve_for_viewer(&self, post_id: &[u8; 16], viewer_lang: LanguageCode) -> Result<FeedItem> {
        let post = self.post_row(post_id)?;
        Ok(self.feed_item(&post, viewer_lang))
    }

    /// Posts by accounts `viewer` follows, newest first (ties by post id),
    /// each presented in `lang` (default: the viewer's language).
    pub fn timeline(
        &self,
        viewer: &Account,
        cursor: Option<&str>,
        limit: Option<usize>,
        lang: Option<LanguageCode>,
    ) -> Result<TimelinePage> {
        let limit = limit.unwrap_or(DEFAULT_PAGE);
        if !(1..=MAX_PAGE).contains(&limit) {
            return Err(Error::Validation(format!("limit must be between 1 and {MAX_PAGE}")));
        }
        let after = cursor.filter(|c| !c.is_empty()).map(decode_cursor).transpose()?;
        let (after_ts, after_id) = match after {
            Some((ts, id)) => (Some(ts as i64), id.to_vec()),
            None => (None, Vec::new()),
        };
        let mut rows = {
            let conn = self.store.db();
            let mut stmt = conn.prepare(&format!(
                "SELECT {POST_COLUMNS}
                 JOIN follows f ON f.followee = p.author AND f.follower = ?1
                 WHERE ?2 IS NULL OR p.created_at < ?2 OR (p.created_at = ?2 AND p.post_id > ?3)
                 ORDER BY p.created_at DESC, p.post_id ASC
                 LIMIT ?4"
            ))?;
            let rows = stmt
                .query_map(
                    params![&viewer.profile.user_id[..], after_ts, after_id, (limit + 1) as i64],
                    post_from_row,
                )?
                .collect::<rusqlite::Result<Vec<_>>>()?;
            rows
        };
        let next_cursor = if rows.len() > limit {
            rows.truncate(limit);
            rows.last().map(|p| encode_cursor(p.created_at, &p.post_id))
        } else {
            None
        };
        let lang = lang.unwrap_or(viewer.profile.default_lang);
        let items = rows.iter().map(|p| self.feed_item(p, lang)).collect();
        Ok(TimelinePage { items, next_cursor })
    }

    /// Audio for a post: the original recording when `lang` is absent or the
    /// post's own language, otherwise the synthesized translation.
    pub fn post_audio(&self, post_id: &[u8; 16], lang: Option<LanguageCode>) -> Result<Vec<u8>> {
        let post = self.post_row(post_id)?;
        match lang {
            None => self.original_audio(&post),
            Some(l) if l == post.lang => self.original_audio(&post),
            Some(l) => {
                let (tr, _) = self.ensure_translation(&post, l)?;
                Ok(self.store.get_blob(tr.audio_ref.as_deref().expect("translation has audio"))?)
            }
        }
    }

    /// Ledger coordinates and text of a post, plus those of its translation
    /// into `lang` when one exists.
    pub fn transaction_details(&self, post_id: &[u8; 16], lang: Option<LanguageCode>) -> Result<PostTxDetails> {
        let post = self.post_row(post_id)?;
        let post_tx = TxDetails::try_from(&self.ledger.get_transaction(&post.tx_hash)?)?;
        let translation_tx = match lang.filter(|l| *l != post.lang) {
            Some(l) => match self.translation_row(post_id, l)? {
                Some(tr) => Some(TxDetails::try_from(&self.ledger.get_transaction(&tr.tx_hash)?)?),
                None => None,
            },
            None => None,
        };
        Ok(PostTxDetails { post_id: *post_id, post_tx, translation_tx })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_round_trip_and_rejection() {
        let id = [7u8; 16];
        let c = encode_cursor(1_700_000_000_123, &id);
        assert_eq!(c.len(), 48);
        assert_eq!(decode_cursor(&c).unwrap(), (1_700_000_000_123, id));
        for bad in ["", "zz", &c[..46], &format!("{c}00"), &format!("ff{}", &c[2..])] {
            assert!(matches!(decode_cursor(bad), Err(Error::BadCursor)), "{bad}");
        }
    }

    #[test]
    fn post_ids_parse_or_are_unknown() {
        assert_eq!(parse_post_id(&"ab".repeat(16)).unwrap(), [0xab; 16]);
        assert!(matches!(parse_post_id("nope"), Err(Error::UnknownPost)));
    }
}
