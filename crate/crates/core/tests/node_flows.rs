use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, Barrier};
use std::time::Duration;

use proptest::prelude::*;
use vnode_core::config::KdfParams;
use vnode_core::engine::{EngineDescriptor, MockEngine, SpeechEngine, TranscriptionResult};
use vnode_core::error::EngineError;
use vnode_core::identity::Account;
use vnode_core::lang::{self, LanguageCode};
use vnode_core::ledger::{Payload, TxKind};
use vnode_core::media::{parse_wav, WavAudio, WavLimits, TRANSCRIPT_CHUNK};
use vnode_core::node::CrashPoint;
use vnode_core::posts::AudioSource;
use vnode_core::{Error, Node, NodeConfig};

const PASSWORD: &str = "correct horse";

fn config(dir: &Path) -> NodeConfig {
    NodeConfig {
        data_dir: dir.to_path_buf(),
        kdf: KdfParams { memory_kib: 64, iterations: 1, parallelism: 1 },
        ..NodeConfig::default()
    }
}

fn open(dir: &Path) -> Node {
    Node::open(config(dir)).expect("node opens")
}

fn wav(text: &str) -> Vec<u8> {
    let mut audio = WavAudio::new(16_000, 1, (0..1600).map(|i| (i % 200) as i16).collect()).unwrap();
    audio.set_transcript(text);
    audio.to_bytes()
}

fn user(node: &Node, name: &str, lang: &str) -> Account {
    node.register(name, PASSWORD, lang).unwrap();
    let session = node.login(name, PASSWORD).unwrap();
    node.authenticate(&session.token).unwrap()
}

fn lang(tag: &str) -> LanguageCode {
    lang::resolve(tag).unwrap()
}

fn translation_txs(node: &Node, post_id: &[u8; 16], target: LanguageCode) -> usize {
    node.ledger()
        .transactions_of_kind(TxKind::Translation)
        .iter()
        .filter(|l| match Payload::decode(TxKind::Translation, &l.transaction.payload) {
            Ok(Payload::Translation(t)) => t.post_id == *post_id && t.lang == target,
            _ => false,
        })
        .count()
}

#[test]
fn translated_delivery_and_original_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let node = open(dir.path());
    let author = user(&node, "alice", "eng");
    let french = user(&node, "bruno", "fra");
    let english = user(&node, "carol", "eng");
    node.follow(&french, "alice").unwrap();
    node.follow(&english, "alice").unwrap();

    let original = wav("water is available at the school");
    let post = node.create_post(&author, &original, None).unwrap();
    assert_eq!(post.transcript, "water is available at the school");
    assert_eq!(post.lang, lang("eng"));

    let page = node.timeline(&french, None, None, None).unwrap();
    let item = &page.items[0];
    assert_eq!(item.text_for_viewer, "[fra] water is available at the school");
    assert!(matches!(item.audio_source, AudioSource::Translated { .. }));
    let speech = node.post_audio(&post.post_id, Some(lang("fra"))).unwrap();
    let speech = parse_wav(&speech, &WavLimits::default()).unwrap();
    assert_eq!(speech.chunk(TRANSCRIPT_CHUNK).unwrap(), item.text_for_viewer.as_bytes());
    assert_eq!(translation_txs(&node, &post.post_id, lang("fra")), 1);

    let before = node.ledger().transactions_of_kind(TxKind::Translation).len();
    let page = node.timeline(&english, None, None, None).unwrap();
    assert_eq!(page.items[0].audio_source, AudioSource::Original);
    assert_eq!(node.post_audio(&post.post_id, Some(lang("eng"))).unwrap(), original);
    assert_eq!(node.ledger().transactions_of_kind(TxKind::Translation).len(), before);

    let details = node.transaction_details(&post.post_id, Some(lang("fra"))).unwrap();
    assert_eq!(details.post_tx.text, post.transcript);
    assert_eq!(details.post_tx.sender_address, author.profile.address);
    assert_eq!(details.translation_tx.unwrap().text, "[fra] water is available at the school");
    assert!(node.ledger().verify_all().unwrap().ok);
}

#[test]
fn account_errors() {
    let dir = tempfile::tempdir().unwrap();
    let node = open(dir.path());
    let a = user(&node, "dana", "eng");
    assert!(matches!(node.register("dana", PASSWORD, "eng"), Err(Error::UsernameTaken)));
    assert!(matches!(node.register("eve", "short", "eng"), Err(Error::WeakPassword)));
    assert!(matches!(node.register("x", PASSWORD, "eng"), Err(Error::Validation(_))));
    assert!(matches!(node.register("frank", PASSWORD, "klingon"), Err(Error::Lang(_))));
    assert!(matches!(node.login("dana", "wrong password"), Err(Error::InvalidCredentials)));
    assert!(matches!(node.login("nobody", PASSWORD), Err(Error::InvalidCredentials)));
    assert!(matches!(node.authenticate("00"), Err(Error::Unauthorized)));
    assert!(matches!(node.follow(&a, "dana"), Err(Error::SelfFollow)));
    assert!(matches!(node.follow(&a, "ghost"), Err(Error::UnknownUser(_))));
    assert!(matches!(node.create_post(&a, &wav("hi"), Some("zzz")), Err(Error::Lang(_))));
    let mut silent = WavAudio::new(16_000, 1, vec![0; 160]).unwrap().to_bytes();
    assert!(matches!(node.create_post(&a, &silent, None), Err(Error::Engine(EngineError::NoTranscriptChunk))));
    silent.truncate(10);
    assert!(matches!(node.create_post(&a, &silent, None), Err(Error::Media(_))));
}

#[test]
fn follow_is_idempotent_and_unfollow_hides_posts() {
    let dir = tempfile::tempdir().unwrap();
    let node = open(dir.path());
    let a = user(&node, "author", "eng");
    let f = user(&node, "follower", "eng");
    node.follow(&f, "author").unwrap();
    node.follow(&f, "author").unwrap();
    assert_eq!(node.followees(&f).unwrap(), vec!["author".to_string()]);
    node.create_post(&a, &wav("one"), None).unwrap();
    assert_eq!(node.timeline(&f, None, None, None).unwrap().items.len(), 1);
    assert!(node.unfollow(&f, "author").unwrap());
    assert!(!node.unfollow(&f, "author").unwrap());
    assert!(node.timeline(&f, None, None, None).unwrap().items.is_empty());
}

#[test]
fn pagination_walks_every_post_once() {
    let dir = tempfile::tempdir().unwrap();
    let node = open(dir.path());
    let a = user(&node, "poster", "eng");
    let f = user(&node, "reader", "eng");
    node.follow(&f, "poster").unwrap();
    for i in 0..7 {
        node.create_post(&a, &wav(&format!("post {i}")), None).unwrap();
    }
    let mut seen = Vec::new();
    let mut cursor = None;
    loop {
        let page = node.timeline(&f, cursor.as_deref(), Some(3), None).unwrap();
        assert!(page.items.len() <= 3);
        seen.extend(page.items.iter().map(|i| (i.created_at, i.transcript.clone())));
        match page.next_cursor {
            Some(c) => cursor = Some(c),
            None => break,
        }
    }
    assert_eq!(seen.len(), 7);
    assert!(seen.windows(2).all(|w| w[0].0 >= w[1].0), "newest first");
    assert_eq!(seen.iter().map(|s| &s.1).collect::<HashSet<_>>().len(), 7);

    assert!(matches!(node.timeline(&f, Some("zz"), None, None), Err(Error::BadCursor)));
    assert!(matches!(node.timeline(&f, None, Some(0), None), Err(Error::Validation(_))));
    assert!(matches!(node.timeline(&f, None, Some(51), None), Err(Error::Validation(_))));
}

#[test]
fn concurrent_first_requests_translate_once() {
    let dir = tempfile::tempdir().unwrap();
    let node = Arc::new(open(dir.path()));
    let a = user(&node, "speaker", "eng");
    for round in 0..5 {
        let post = node.create_post(&a, &wav(&format!("round {round}")), None).unwrap();
        let barrier = Arc::new(Barrier::new(10));
        let handles: Vec<_> = (0..10)
            .map(|_| {
                let (node, barrier) = (node.clone(), barrier.clone());
                std::thread::spawn(move || {
                    barrier.wait();
                    node.resolve_for_viewer(&post.post_id, lang("deu")).unwrap().text_for_viewer
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), format!("[deu] round {round}"));
        }
        assert_eq!(translation_txs(&node, &post.post_id, lang("deu")), 1);
        assert_eq!(node.translation_languages(&post.post_id).unwrap(), vec![lang("deu")]);
    }
}

#[test]
fn restart_preserves_reads() {
    let dir = tempfile::tempdir().unwrap();
    let (token, post_id, page_before, tx_before, audio_before) = {
        let node = open(dir.path());
        let a = user(&node, "maria", "spa");
        node.register("lina", PASSWORD, "cmn").unwrap();
        let token = node.login("lina", PASSWORD).unwrap().token;
        let f = node.authenticate(&token).unwrap();
        node.follow(&f, "maria").unwrap();
        let post = node.create_post(&a, &wav("hola a todos"), None).unwrap();
        node.timeline(&f, None, None, None).unwrap();
        let page = serde_json::to_string(&node.timeline(&f, None, None, None).unwrap()).unwrap();
        let tx = serde_json::to_string(&node.transaction_details(&post.post_id, Some(lang("cmn"))).unwrap()).unwrap();
        let audio = node.post_audio(&post.post_id, Some(lang("cmn"))).unwrap();
        (token, post.post_id, page, tx, audio)
    };
    let node = open(dir.path());
    assert_eq!(node.recovery_report(), &Default::default());
    let f = node.authenticate(&token).expect("sessions survive restart");
    assert_eq!(serde_json::to_string(&node.timeline(&f, None, None, None).unwrap()).unwrap(), page_before);
    assert_eq!(
        serde_json::to_string(&node.transaction_details(&post_id, Some(lang("cmn"))).unwrap()).unwrap(),
        tx_before
    );
    assert_eq!(node.post_audio(&post_id, Some(lang("cmn"))).unwrap(), audio_before);
}

#[test]
fn crash_before_commit_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    {
        let node = open(dir.path());
        let a = user(&node, "ana", "por");
        let blocks = node.ledger().block_count();
        node.inject_crash(CrashPoint::AfterBlobWrite);
        assert!(node.create_post(&a, &wav("ola"), None).is_err());
        assert_eq!(node.ledger().block_count(), blocks);
    }
    let node = open(dir.path());
    assert_eq!(node.recovery_report().orphan_blobs_removed, 1);
    assert_eq!(node.recovery_report().posts_restored, 0);
    assert_eq!(std::fs::read_dir(node.store().layout().blobs()).unwrap().count(), 0);
}

#[test]
fn crash_after_commit_restores_post() {
    let dir = tempfile::tempdir().unwrap();
    let original = wav("the bridge is closed");
    {
        let node = open(dir.path());
        let a = user(&node, "omar", "eng");
        let f = user(&node, "yuki", "jpn");
        node.follow(&f, "omar").unwrap();
        node.inject_crash(CrashPoint::AfterLedgerCommit);
        assert!(node.create_post(&a, &original, None).is_err());
    }
    let node = open(dir.path());
    assert_eq!(node.recovery_report().posts_restored, 1);
    assert_eq!(node.recovery_report().orphan_blobs_removed, 0);
    let token = node.login("yuki", PASSWORD).unwrap().token;
    let f = node.authenticate(&token).unwrap();
    let page = node.timeline(&f, None, None, None).unwrap();
    assert_eq!(page.items.len(), 1);
    assert_eq!(page.items[0].text_for_viewer, "[jpn] the bridge is closed");
    assert_eq!(node.post_audio(&page.items[0].post_id, None).unwrap(), original);
}

#[test]
fn translation_rows_recovered_from_ledger_regain_audio() {
    let dir = tempfile::tempdir().unwrap();
    let (post_id, text) = {
        let node = open(dir.path());
        let a = user(&node, "ines", "eng");
        let post = node.create_post(&a, &wav("meet at noon"), None).unwrap();
        let text = node.resolve_for_viewer(&post.post_id, lang("ita")).unwrap().text_for_viewer;
        // Lose the record layer's translation row; the ledger still has it.
        node.store().db().execute("DELETE FROM translations", []).unwrap();
        (post.post_id, text)
    };
    let node = open(dir.path());
    assert_eq!(node.recovery_report().translations_restored, 1);
    let txs = node.ledger().transactions_of_kind(TxKind::Translation).len();
    let item = node.resolve_for_viewer(&post_id, lang("ita")).unwrap();
    assert_eq!(item.text_for_viewer, text);
    let speech = parse_wav(&node.post_audio(&post_id, Some(lang("ita"))).unwrap(), &WavLimits::default()).unwrap();
    assert_eq!(speech.chunk(TRANSCRIPT_CHUNK).unwrap(), text.as_bytes());
    assert_eq!(node.ledger().transactions_of_kind(TxKind::Translation).len(), txs, "no second transaction");
}

#[test]
fn crash_after_account_row_completes_registration() {
    let dir = tempfile::tempdir().unwrap();
    {
        let node = open(dir.path());
        node.inject_crash(CrashPoint::AfterAccountRow);
        assert!(node.register("kofi", PASSWORD, "eng").is_err());
    }
    let node = open(dir.path());
    assert_eq!(node.recovery_report().registrations_completed, 1);
    let account = node.account_by_username("kofi").unwrap();
    let reg = account.profile.registration_tx.expect("registration recorded");
    assert_eq!(node.ledger().get_transaction(&reg).unwrap().transaction.kind, TxKind::Registration);
}

#[test]
fn sessions_expire() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NodeConfig { session_ttl: Duration::from_secs(1), ..config(dir.path()) };
    let token = {
        let node = Node::open(cfg.clone()).unwrap();
        node.register("tomas", PASSWORD, "ces").unwrap();
        let token = node.login("tomas", PASSWORD).unwrap().token;
        node.authenticate(&token).unwrap();
        std::thread::sleep(Duration::from_millis(1100));
        assert!(matches!(node.authenticate(&token), Err(Error::Unauthorized)));
        token
    };
    let node = Node::open(cfg).unwrap();
    assert_eq!(node.recovery_report().expired_sessions, 1);
    assert!(matches!(node.authenticate(&token), Err(Error::Unauthorized)));
}

/// Mock engine whose speech services are down.
struct Offline(MockEngine);

impl SpeechEngine for Offline {
    fn descriptor(&self) -> EngineDescriptor {
        self.0.descriptor()
    }
    fn asr(&self, audio: &WavAudio, lang: LanguageCode) -> Result<TranscriptionResult, EngineError> {
        if audio.transcript().is_some_and(|t| t.is_ok_and(|t| t.starts_with("down"))) {
            return Err(EngineError::Unavailable("asr offline".into()));
        }
        self.0.asr(audio, lang)
    }
    fn t2tt(&self, _: &str, _: LanguageCode, _: LanguageCode) -> Result<String, EngineError> {
        Err(EngineError::Unavailable("translation offline".into()))
    }
    fn s2st(&self, _: &WavAudio, _: LanguageCode, _: LanguageCode) -> Result<WavAudio, EngineError> {
        Err(EngineError::Unavailable("synthesis offline".into()))
    }
}

#[test]
fn engine_outage_degrades_gracefully() {
    let dir = tempfile::tempdir().unwrap();
    let node = Node::open_with_engine(config(dir.path()), Arc::new(Offline(MockEngine::new()))).unwrap();
    let a = user(&node, "sam", "eng");
    let blocks = node.ledger().block_count();
    let err = node.create_post(&a, &wav("down again"), None).unwrap_err();
    assert_eq!(err.code(), "engine_unavailable");
    assert_eq!(node.ledger().block_count(), blocks);
    assert_eq!(std::fs::read_dir(node.store().layout().blobs()).unwrap().count(), 0);

    let post = node.create_post(&a, &wav("all fine"), None).unwrap();
    let item = node.resolve_for_viewer(&post.post_id, lang("fra")).unwrap();
    assert_eq!(item.audio_source, AudioSource::Original);
    assert_eq!(item.text_for_viewer, "all fine");
    assert!(item.translation_error.is_some());
    assert_eq!(node.post_audio(&post.post_id, Some(lang("fra"))).unwrap_err().code(), "engine_unavailable");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pages_partition_the_timeline(n in 0usize..9, limit in 1usize..5) {
        let dir = tempfile::tempdir().unwrap();
        let node = open(dir.path());
        let a = user(&node, "writer", "eng");
        let f = user(&node, "viewer", "eng");
        node.follow(&f, "writer").unwrap();
        for i in 0..n {
            node.create_post(&a, &wav(&format!("p{i}")), None).unwrap();
        }
        let full = node.timeline(&f, None, Some(50), None).unwrap().items;
        prop_assert_eq!(full.len(), n);
        let mut paged = Vec::new();
        let mut cursor = None;
        loop {
            let page = node.timeline(&f, cursor.as_deref(), Some(limit), None).unwrap();
            paged.extend(page.items);
            match page.next_cursor {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
        prop_assert_eq!(paged, full);
    }
}
