use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex, RwLock};
use std::time::Duration;

use super::wire::{self, Handshake, Op, Request, Response};
use super::{Capability, EngineDescriptor, SpeechEngine, TranscriptionResult};
use crate::error::{EngineError, MediaError};
use crate::lang::{self, LanguageCode};
use crate::media::{parse_wav, WavAudio, WavLimits};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Engine ids are recorded in translation payloads behind a one-byte length.
const MAX_ENGINE_ID_LEN: usize = 64;

struct Process {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    replies: mpsc::Receiver<io::Result<Vec<u8>>>,
}

impl Process {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A speech engine living in a child process, driven over the
/// length-prefixed protocol in [`wire`]. The process is spawned lazily and
/// respawned after any failure; requests are serialized.
pub struct ExternalEngine {
    program: PathBuf,
    timeout: Duration,
    descriptor: RwLock<EngineDescriptor>,
    process: Mutex<Option<Process>>,
    next_id: AtomicU64,
}

fn descriptor_from(hello: Handshake) -> Result<EngineDescriptor, EngineError> {
    if hello.engine_id.trim().is_empty() || hello.engine_id.len() > MAX_ENGINE_ID_LEN {
        return Err(EngineError::Protocol(format!(
            "handshake engine_id must be 1..={MAX_ENGINE_ID_LEN} bytes"
        )));
    }
    let mut languages = std::collections::BTreeSet::new();
    for tag in &hello.languages {
        match lang::resolve(tag) {
            Ok(l) => {
                languages.insert(l);
            }
            Err(_) => log::warn!("engine {} offers unknown language {tag:?}; ignored", hello.engine_id),
        }
    }
    Ok(EngineDescriptor {
        engine_id: hello.engine_id,
        capabilities: hello.capabilities.into_iter().collect(),
        languages,
    })
}

/// Maps an engine-reported error message back onto the error it names, so
/// remote failures classify the same way as in-process ones.
fn remote_error(message: String) -> EngineError {
    if message == EngineError::NoTranscriptChunk.to_string() {
        return EngineError::NoTranscriptChunk;
    }
    if let Some(code) = message.strip_prefix("engine does not support language ") {
        return EngineError::UnsupportedLanguage(code.to_string());
    }
    EngineError::Failed(message)
}

impl ExternalEngine {
    /// Spawns `program` and waits for its handshake.
    pub fn spawn(program: impl AsRef<Path>, timeout: Duration) -> Result<Self, EngineError> {
        let engine = Self::unstarted(program, timeout);
        let process = engine.start()?;
        *engine.process.lock().expect("engine process poisoned") = Some(process);
        Ok(engine)
    }

    /// Like [`spawn`](Self::spawn), but a failed start is not fatal: calls
    /// report the engine unavailable until a respawn succeeds.
    pub fn spawn_lenient(program: impl AsRef<Path>, timeout: Duration) -> Self {
        let engine = Self::unstarted(program, timeout);
        match engine.start() {
            Ok(p) => *engine.process.lock().expect("engine process poisoned") = Some(p),
            Err(e) => log::warn!("external engine {} not started: {e}", engine.program.display()),
        }
        engine
    }

    fn unstarted(program: impl AsRef<Path>, timeout: Duration) -> Self {
        ExternalEngine {
            program: program.as_ref().to_path_buf(),
            timeout,
            descriptor: RwLock::new(EngineDescriptor {
                engine_id: "external".into(),
                capabilities: Default::default(),
                languages: Default::default(),
            }),
            process: Mutex::new(None),
            next_id: AtomicU64::new(1),
        }
    }

    fn start(&self) -> Result<Process, EngineError> {
        let mut child = Command::new(&self.program)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EngineError::Unavailable(format!("{}: {e}", self.program.display())))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, replies) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let msg = match wire::read_frame(&mut reader) {
                    Ok(Some(body)) => Ok(body),
                    Ok(None) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "engine closed its output")),
                    Err(e) => Err(e),
                };
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        let process = Process { child, stdin, replies };
        let hello = match Self::receive(&process, self.timeout) {
            Ok(body) => serde_json::from_slice::<Handshake>(&body)
                .map_err(|e| EngineError::Protocol(format!("bad handshake: {e}")))
                .and_then(descriptor_from),
            Err(e) => Err(e),
        };
        match hello {
            Ok(d) => {
                *self.descriptor.write().expect("descriptor poisoned") = d;
                Ok(process)
            }
            Err(e) => {
                process.kill();
                Err(e)
            }
        }
    }

    fn receive(process: &Process, timeout: Duration) -> Result<Vec<u8>, EngineError> {
        match process.replies.recv_timeout(timeout) {
            Ok(Ok(body)) => Ok(body),
            Ok(Err(e)) => Err(EngineError::Unavailable(e.to_string())),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                Err(EngineError::Unavailable(format!("no reply within {timeout:?}")))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(EngineError::Unavailable("engine process exited".into()))
            }
        }
    }

    fn call(&self, mut req: Request) -> Result<Response, EngineError> {
        let mut slot = self.process.lock().expect("engine process poisoned");
        if slot.is_none() {
            *slot = Some(self.start()?);
        }
        let process = slot.as_mut().expect("started");
        req.id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let outcome = wire::write_message(&mut process.stdin, &req)
            .map_err(|e| EngineError::Unavailable(e.to_string()))
            .and_then(|()| Self::receive(process, self.timeout))
            .and_then(|body| {
                serde_json::from_slice::<Response>(&body)
                    .map_err(|e| EngineError::Protocol(format!("bad response: {e}")))
            })
            .and_then(|resp| {
                if resp.id != req.id {
                    Err(EngineError::Protocol(format!("response id {} for request {}", resp.id, req.id)))
                } else {
                    Ok(resp)
                }
            });
        match outcome {
            Ok(resp) if resp.ok => Ok(resp),
            Ok(resp) => Err(remote_error(resp.error.unwrap_or_else(|| "unspecified failure".into()))),
            Err(e) => {
                // The stream is in an unknown state; start afresh next time.
                if let Some(p) = slot.take() {
                    p.kill();
                }
                Err(e)
            }
        }
    }

    fn check(&self, cap: Capability, langs: &[LanguageCode]) -> Result<(), EngineError> {
        if self.process.lock().expect("engine process poisoned").is_none() {
            let p = self.start()?;
            *self.process.lock().expect("engine process poisoned") = Some(p);
        }
        self.descriptor.read().expect("descriptor poisoned").require(cap, langs)
    }

    fn request(op: Op, src: LanguageCode, dst: LanguageCode) -> Request {
        Request { id: 0, op, src: src.code().into(), dst: dst.code().into(), text: None, audio_b64: None }
    }
}

impl Drop for ExternalEngine {
    fn drop(&mut self) {
        if let Ok(mut slot) = self.process.lock() {
            if let Some(p) = slot.take() {
                p.kill();
            }
        }
    }
}

fn decode_wav(b64: Option<String>) -> Result<WavAudio, EngineError> {
    let bytes = wire::decode_audio(&b64.ok_or_else(|| EngineError::Protocol("response lacks audio_b64".into()))?)?;
    parse_wav(&bytes, &WavLimits { max_bytes: wire::MAX_MESSAGE_LEN, max_duration_ms: u64::MAX / 1000 })
        .map_err(|e: MediaError| EngineError::Protocol(format!("engine returned bad audio: {e}")))
}

impl SpeechEngine for ExternalEngine {
    fn descriptor(&self) -> EngineDescriptor {
        self.descriptor.read().expect("descriptor poisoned").clone()
    }

    fn asr(&self, audio: &WavAudio, lang: LanguageCode) -> Result<TranscriptionResult, EngineError> {
        self.check(Capability::Asr, &[lang])?;
        let mut req = Self::request(Op::Asr, lang, lang);
        req.audio_b64 = Some(wire::encode_audio(&audio.to_bytes()));
        let resp = self.call(req)?;
        let confidence = resp.confidence.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(EngineError::Protocol(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(TranscriptionResult {
            text: resp.text.ok_or_else(|| EngineError::Protocol("response lacks text".into()))?,
            lang,
            confidence,
            audio_duration_ms: audio.duration_ms(),
        })
    }

    fn t2tt(&self, text: &str, src: LanguageCode, dst: LanguageCode) -> Result<String, EngineError> {
        self.check(Capability::T2tt, &[src, dst])?;
        let mut req = Self::request(Op::T2tt, src, dst);
        req.text = Some(text.to_string());
        self.call(req)?.text.ok_or_else(|| EngineError::Protocol("response lacks text".into()))
    }

    fn s2st(&self, audio: &WavAudio, src: LanguageCode, dst: LanguageCode) -> Result<WavAudio, EngineError> {
        self.check(Capability::S2st, &[src, dst])?;
        let mut req = Self::request(Op::S2st, src, dst);
        req.audio_b64 = Some(wire::encode_audio(&audio.to_bytes()));
        decode_wav(self.call(req)?.audio_b64)
    }
}

impl std::fmt::Debug for ExternalEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEngine")
            .field("program", &self.program)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}
