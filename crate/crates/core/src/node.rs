//! The node: one store, one ledger and one speech engine behind the account,
//! post and timeline operations.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rusqlite::{params, OptionalExtension};
use serde::Serialize;

use crate::config::{EngineConfig, Mode, NodeConfig};
use crate::crypto::{Hash32, Keypair};
use crate::engine::{EngineDescriptor, ExternalEngine, MockEngine, SpeechEngine};
use crate::error::{Error, Result};
use crate::identity::{account_from_row, hash_password, ACCOUNT_COLUMNS};
use crate::lang::LanguageCode;
use crate::ledger::payload::{PostPayload, RegistrationPayload, TranslationPayload};
use crate::ledger::{Ledger, Payload, Receipt, TxKind};
use crate::metrics::{Metrics, Stage};
use crate::storage::{init_store, Store};
use crate::now_ms;

/// Points at which a test can make an operation stop dead, leaving on disk
/// exactly what a process kill at that moment would.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CrashPoint {
    None = 0,
    /// `create_post`: audio blob written, nothing committed.
    AfterBlobWrite = 1,
    /// `create_post`: ledger transaction committed, no post row yet.
    AfterLedgerCommit = 2,
    /// `register`: account row written, no registration transaction yet.
    AfterAccountRow = 3,
}

pub(crate) type FlightKey = ([u8; 16], LanguageCode);

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub mode: String,
    /// Number of blocks in the chain, genesis included.
    pub height: u64,
    pub engine_id: String,
    pub languages: usize,
}

/// What startup reconciliation repaired.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub expired_sessions: usize,
    pub posts_restored: usize,
    pub translations_restored: usize,
    pub registrations_completed: usize,
    pub orphan_blobs_removed: usize,
}

pub struct Node {
    pub(crate) config: NodeConfig,
    pub(crate) store: Store,
    pub(crate) ledger: Ledger,
    pub(crate) engine: Arc<dyn SpeechEngine>,
    pub(crate) metrics: Metrics,
    pub(crate) flights: Mutex<HashMap<FlightKey, Arc<Mutex<()>>>>,
    pub(crate) dummy_password_record: String,
    fresh_sessions: Mutex<HashMap<Hash32, Instant>>,
    crash_point: AtomicU8,
    recovery: RecoveryReport,
}

const MAX_TRACKED_LOGINS: usize = 10_000;

pub(crate) fn simulated_crash() -> Error {
    Error::Store(std::io::Error::other("simulated crash").into())
}

impl Node {
    /// Opens the node described by `config`, starting its configured engine.
    pub fn open(config: NodeConfig) -> Result<Self> {
        let engine: Arc<dyn SpeechEngine> = match &config.engine {
            EngineConfig::Mock => Arc::new(MockEngine::new()),
            EngineConfig::External(path) => Arc::new(ExternalEngine::spawn_lenient(path, config.engine_timeout)),
        };
        Self::open_with_engine(config, engine)
    }

    /// Opens the node with an explicitly supplied engine.
    pub fn open_with_engine(config: NodeConfig, engine: Arc<dyn SpeechEngine>) -> Result<Self> {
        let store = init_store(&config.data_dir)?;
        let ledger = Ledger::open(store.layout().chain(), config.gas_schedule(), config.block_policy)?;
        let dummy_password_record = hash_password("not a real password", &config.kdf)?;
        let mut node = Node {
            config,
            store,
            ledger,
            engine,
            metrics: Metrics::default(),
            flights: Mutex::default(),
            dummy_password_record,
            fresh_sessions: Mutex::default(),
            crash_point: AtomicU8::new(CrashPoint::None as u8),
            recovery: RecoveryReport::default(),
        };
        node.recovery = node.recover()?;
        if node.recovery != RecoveryReport::default() {
            log::info!("startup recovery: {:?}", node.recovery);
        }
        Ok(node)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn engine_descriptor(&self) -> EngineDescriptor {
        self.engine.descriptor()
    }

    pub fn recovery_report(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn health(&self) -> Health {
        let d = self.engine.descriptor();
        Health {
            status: "ok",
            mode: self.config.mode.to_string(),
            height: self.ledger.block_count(),
            engine_id: d.engine_id,
            languages: d.languages.len(),
        }
    }

    pub fn is_emergency(&self) -> bool {
        self.config.mode == Mode::Emergency
    }

    #[doc(hidden)]
    pub fn inject_crash(&self, point: CrashPoint) {
        self.crash_point.store(point as u8, Ordering::SeqCst);
    }

    /// True (once) when a crash was injected at `point`.
    pub(crate) fn crash_here(&self, point: CrashPoint) -> bool {
        self.crash_point
            .compare_exchange(point as u8, CrashPoint::None as u8, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    /// Commits a transaction, recording commit latency and cost.
    pub(crate) fn submit(&self, kind: TxKind, payload: Vec<u8>, signer: &Keypair) -> Result<Receipt> {
        self.submit_timed(kind, payload, signer).map(|(r, _)| r)
    }

    pub(crate) fn submit_timed(&self, kind: TxKind, payload: Vec<u8>, signer: &Keypair) -> Result<(Receipt, f64)> {
        let started = Instant::now();
        let receipt = self.ledger.submit_tx(kind, payload, signer)?;
        let ms = self.metrics.record_since(Stage::LedgerCommit, started);
        self.metrics.record_cost(kind, receipt.cost_wei);
        Ok((receipt, ms))
    }

    pub(crate) fn session_started(&self, token_hash: &Hash32) {
        let mut fresh = self.fresh_sessions.lock().expect("sessions poisoned");
        if fresh.len() >= MAX_TRACKED_LOGINS {
            fresh.clear();
        }
        fresh.insert(*token_hash, Instant::now());
    }

    /// Records login-to-timeline latency the first time a session's
    /// timeline is served.
    pub fn timeline_served(&self, token: &str) {
        let Ok(raw) = crate::hexfmt::parse::<32>(token.trim()) else {
            return;
        };
        let started = self.fresh_sessions.lock().expect("sessions poisoned").remove(&crate::crypto::sha256(&raw));
        if let Some(started) = started {
            self.metrics.record_since(Stage::LoginToTimeline, started);
        }
    }

    /// Brings records and blobs back in line with the ledger after an
    /// interrupted run: the ledger is authoritative for what happened.
    fn recover(&self) -> Result<RecoveryReport> {
        let mut report = RecoveryReport {
            expired_sessions: self
                .store
                .db()
                .execute("DELETE FROM sessions WHERE expires_at <= ?1", [now_ms() as i64])?,
            ..Default::default()
        };

        for lookup in self.ledger.transactions_of_kind(TxKind::Registration) {
            let Ok(Payload::Registration(RegistrationPayload { user_id, .. })) =
                Payload::decode(TxKind::Registration, &lookup.transaction.payload)
            else {
                continue;
            };
            report.registrations_completed += self.store.db().execute(
                "UPDATE users SET reg_tx = ?1 WHERE user_id = ?2 AND reg_tx IS NULL",
                params![&lookup.transaction.hash()[..], &user_id[..]],
            )?;
        }
        let unregistered = {
            let conn = self.store.db();
            let mut stmt = conn.prepare(&format!("SELECT {ACCOUNT_COLUMNS} FROM users WHERE reg_tx IS NULL"))?;
            let rows = stmt.query_map([], account_from_row)?.collect::<rusqlite::Result<Vec<_>>>()?;
            rows
        };
        for account in unregistered {
            let p = &account.profile;
            let payload = RegistrationPayload {
                user_id: p.user_id,
                username: p.username.clone(),
                default_lang: p.default_lang,
            };
            let receipt = self.submit(TxKind::Registration, payload.encode(), &account.keypair())?;
            self.store.db().execute(
                "UPDATE users SET reg_tx = ?1 WHERE user_id = ?2",
                params![&receipt.tx_hash[..], &p.user_id[..]],
            )?;
            report.registrations_completed += 1;
        }

        for lookup in self.ledger.transactions_of_kind(TxKind::Post) {
            let tx_hash = lookup.transaction.hash();
            let conn = self.store.db();
            let known: Option<i64> = conn
                .query_row("SELECT 1 FROM posts WHERE tx_hash = ?1", [&tx_hash[..]], |r| r.get(0))
                .optional()?;
            if known.is_some() {
                continue;
            }
            let Ok(Payload::Post(PostPayload { post_id, lang, audio_hash, text })) =
                Payload::decode(TxKind::Post, &lookup.transaction.payload)
            else {
                log::warn!("post transaction {} has an undecodable payload", hex::encode(tx_hash));
                continue;
            };
            let author: Option<Vec<u8>> = conn
                .query_row("SELECT user_id FROM users WHERE address = ?1", [&lookup.transaction.sender.0[..]], |r| {
                    r.get(0)
                })
                .optional()?;
            let audio_ref = format!("{}.wav", hex::encode(audio_hash));
            let (Some(author), true) = (author, self.store.blobs().exists(&audio_ref)) else {
                log::error!("cannot restore post {}: author or audio missing", hex::encode(post_id));
                continue;
            };
            conn.execute(
                "INSERT INTO posts (post_id, author, lang, audio_ref, audio_hash, transcript, created_at,
                                    tx_hash, block_height, block_hash, gas_used, cost_wei)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12)",
                params![
                    &post_id[..],
                    author,
                    lang.code(),
                    audio_ref,
                    &audio_hash[..],
                    text,
                    lookup.transaction.timestamp_ms as i64,
                    &tx_hash[..],
                    lookup.block_height as i64,
                    &lookup.block_hash[..],
                    lookup.gas_used as i64,
                    lookup.cost_wei.to_string()
                ],
            )?;
            report.posts_restored += 1;
        }

        for lookup in self.ledger.transactions_of_kind(TxKind::Translation) {
            let tx_hash = lookup.transaction.hash();
            let Ok(Payload::Translation(TranslationPayload { post_id, lang, engine_id, text })) =
                Payload::decode(TxKind::Translation, &lookup.transaction.payload)
            else {
                continue;
            };
            // Audio is re-synthesized on first request.
            report.translations_restored += self.store.db().execute(
                "INSERT OR IGNORE INTO translations (post_id, target_lang, text, audio_ref, engine_id, created_at,
                                                     tx_hash, block_height, block_hash, gas_used, cost_wei)
                 SELECT ?1, ?2, ?3, NULL, ?4, ?5, ?6, ?7, ?8, ?9, ?10
                 WHERE EXISTS (SELECT 1 FROM posts WHERE post_id = ?1)",
                params![
                    &post_id[..],
                    lang.code(),
                    text,
                    engine_id,
                    lookup.transaction.timestamp_ms as i64,
                    &tx_hash[..],
                    lookup.block_height as i64,
                    &lookup.block_hash[..],
                    lookup.gas_used as i64,
                    lookup.cost_wei.to_string()
                ],
            )?;
        }

        report.orphan_blobs_removed = self.store.sweep_orphan_blobs()?;
        Ok(report)
    }
}
