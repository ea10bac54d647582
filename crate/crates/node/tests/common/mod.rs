//! Shared fixtures for the node's integration tests.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use tokio::sync::oneshot;
use vnode_core::config::KdfParams;
use vnode_core::media::WavAudio;
use vnode_core::{Node, NodeConfig};

pub const PASSWORD: &str = "correct horse";

/// Config for tests: cheap password hashing, everything else default.
pub fn config(dir: &Path) -> NodeConfig {
    NodeConfig {
        data_dir: dir.to_path_buf(),
        kdf: KdfParams { memory_kib: 64, iterations: 1, parallelism: 1 },
        ..NodeConfig::default()
    }
}

/// A WAV of `millis` length carrying `text` as its transcript.
pub fn wav_ms(text: &str, millis: u32) -> Vec<u8> {
    let frames = 16 * millis as usize;
    let mut audio = WavAudio::new(16_000, 1, (0..frames).map(|i| ((i * 37) % 4000) as i16).collect()).unwrap();
    audio.set_transcript(text);
    audio.to_bytes()
}

pub fn wav(text: &str) -> Vec<u8> {
    wav_ms(text, 100)
}

/// The HTTP API served in-process on an ephemeral port.
pub struct TestServer {
    pub addr: SocketAddr,
    pub node: Arc<Node>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(config: NodeConfig) -> Self {
        Self::start_with(Arc::new(Node::open(config).expect("node opens")))
    }

    pub fn start_with(node: Arc<Node>) -> Self {
        let (shutdown, stop) = oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let served = node.clone();
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Runtime::new().unwrap();
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                vnode::api::serve(served, listener, async {
                    let _ = stop.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().expect("server started");
        TestServer { addr, node, shutdown: Some(shutdown), thread: Some(thread) }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn api(&self, path: &str) -> String {
        format!("http://{}/api/v1{}", self.addr, path)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(s) = self.shutdown.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
