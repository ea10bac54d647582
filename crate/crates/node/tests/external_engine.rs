mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use common::{config, wav, PASSWORD};
use vnode_core::config::EngineConfig;
use vnode_core::engine::{Capability, ExternalEngine, MockEngine, SpeechEngine};
use vnode_core::error::EngineError;
use vnode_core::lang;
use vnode_core::media::{parse_wav, WavAudio, WavLimits};
use vnode_core::{Node, NodeConfig};

/// An executable that runs the bundled mock engine over the plugin protocol.
fn plugin(dir: &Path) -> PathBuf {
    let path = dir.join("mock-engine.sh");
    std::fs::write(&path, format!("#!/bin/sh\nexec '{}' engine-mock\n", env!("CARGO_BIN_EXE_vnode"))).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

#[test]
fn external_mock_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let external = ExternalEngine::spawn(plugin(dir.path()), Duration::from_secs(20)).unwrap();
    let local = MockEngine::new();
    assert_eq!(external.descriptor(), local.descriptor());
    assert!(external.descriptor().capabilities.contains(&Capability::S2st));

    let eng = lang::resolve("eng").unwrap();
    let swh = lang::resolve("swh").unwrap();
    let mut audio = WavAudio::new(22_050, 2, (0..4410).map(|i| (i % 300) as i16).collect()).unwrap();
    audio.set_transcript("clean water at the clinic");
    assert_eq!(external.asr(&audio, eng).unwrap(), local.asr(&audio, eng).unwrap());
    assert_eq!(external.t2tt("hello", eng, swh).unwrap(), local.t2tt("hello", eng, swh).unwrap());
    assert_eq!(external.s2st(&audio, eng, swh).unwrap(), local.s2st(&audio, eng, swh).unwrap());

    let silent = WavAudio::new(16_000, 1, vec![0; 16]).unwrap();
    assert!(matches!(external.asr(&silent, eng), Err(EngineError::NoTranscriptChunk)));
    // The engine keeps serving after an error reply.
    assert_eq!(external.t2tt("again", eng, swh).unwrap(), "[swh] again");
}

#[test]
fn node_runs_on_external_engine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NodeConfig {
        engine: EngineConfig::External(plugin(dir.path())),
        ..config(&dir.path().join("store"))
    };
    cfg.validate().unwrap();
    let node = Arc::new(Node::open(cfg).unwrap());
    assert_eq!(node.health().engine_id, "mock-1");
    node.register("amani", PASSWORD, "swh").unwrap();
    node.register("jonas", PASSWORD, "deu").unwrap();
    let amani = node.authenticate(&node.login("amani", PASSWORD).unwrap().token).unwrap();
    let jonas = node.authenticate(&node.login("jonas", PASSWORD).unwrap().token).unwrap();
    node.follow(&jonas, "amani").unwrap();
    let post = node.create_post(&amani, &wav("maji safi"), None).unwrap();
    let page = node.timeline(&jonas, None, None, None).unwrap();
    assert_eq!(page.items[0].text_for_viewer, "[deu] maji safi");
    let speech = node.post_audio(&post.post_id, Some(lang::resolve("deu").unwrap())).unwrap();
    let speech = parse_wav(&speech, &WavLimits::default()).unwrap();
    assert_eq!(speech.transcript().unwrap().unwrap(), "[deu] maji safi");
}

#[test]
fn unreachable_engine_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("dies.sh");
    std::fs::write(&script, "#!/bin/sh\nexit 3\n").unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let engine = ExternalEngine::spawn_lenient(&script, Duration::from_secs(5));
    let audio = WavAudio::new(16_000, 1, vec![0; 16]).unwrap();
    let err = engine.asr(&audio, lang::resolve("eng").unwrap()).unwrap_err();
    assert!(matches!(err, EngineError::Unavailable(_) | EngineError::Protocol(_)), "{err:?}");
}
