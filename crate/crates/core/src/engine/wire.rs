//! Length-prefixed JSON protocol spoken with external engine processes over
//! their standard streams. Each message is `len(u32 BE) ‖ UTF-8 JSON`.
//!
//! The engine speaks first with a [`Handshake`]; afterwards the node sends
//! [`Request`]s and the engine answers each with a [`Response`] carrying the
//! same `id`. Audio travels as base64-encoded WAV file bytes.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Capability, SpeechEngine};
use crate::error::EngineError;
use crate::lang;
use crate::media::{parse_wav, WavLimits};

pub const MAX_MESSAGE_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub engine_id: String,
    pub capabilities: Vec<Capability>,
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Asr,
    T2tt,
    S2st,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn failure(id: u64, error: impl ToString) -> Self {
        Response {
            id,
            ok: false,
            text: None,
            audio_b64: None,
            confidence: None,
            error: Some(error.to_string()),
        }
    }
}

pub fn write_message<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    if body.len() > MAX_MESSAGE_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "message too large"));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Reads one raw message body; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_MESSAGE_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "message too large"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn read_message<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R) -> io::Result<Option<T>> {
    match read_frame(r)? {
        None => Ok(None),
        Some(body) => serde_json::from_slice(&body)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}

pub fn encode_audio(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_audio(b64: &str) -> Result<Vec<u8>, EngineError> {
    B64.decode(b64).map_err(|e| EngineError::Protocol(format!("bad audio_b64: {e}")))
}

fn handle(engine: &dyn SpeechEngine, req: Request) -> Response {
    let id = req.id;
    let result = (|| -> Result<Response, EngineError> {
        let src = lang::resolve(&req.src).map_err(|_| EngineError::UnsupportedLanguage(req.src.clone()))?;
        let dst = lang::resolve(&req.dst).map_err(|_| EngineError::UnsupportedLanguage(req.dst.clone()))?;
        let audio = || -> Result<_, EngineError> {
            let b64 = req.audio_b64.as_deref().ok_or_else(|| EngineError::Protocol("missing audio_b64".into()))?;
            Ok(parse_wav(&decode_audio(b64)?, &WavLimits { max_bytes: MAX_MESSAGE_LEN, max_duration_ms: u64::MAX / 1000 })?)
        };
        let mut resp = Response { id, ok: true, text: None, audio_b64: None, confidence: None, error: None };
        match req.op {
            Op::Asr => {
                let r = engine.asr(&audio()?, src)?;
                resp.text = Some(r.text);
                resp.confidence = Some(r.confidence);
            }
            Op::T2tt => {
                let text = req.text.as_deref().ok_or_else(|| EngineError::Protocol("missing text".into()))?;
                resp.text = Some(engine.t2tt(text, src, dst)?);
            }
            Op::S2st => {
                let out = engine.s2st(&audio()?, src, dst)?;
                resp.audio_b64 = Some(encode_audio(&out.to_bytes()));
            }
        }
        Ok(resp)
    })();
    result.unwrap_or_else(|e| Response::failure(id, e))
}

/// Runs the engine side of the protocol until the peer closes the stream.
pub fn serve<R: Read, W: Write>(engine: &dyn SpeechEngine, mut input: R, mut output: W) -> io::Result<()> {
    let d = engine.descriptor();
    write_message(
        &mut output,
        &Handshake {
            engine_id: d.engine_id,
            capabilities: d.capabilities.into_iter().collect(),
            languages: d.languages.iter().map(|l| l.code().to_string()).collect(),
        },
    )?;
    while let Some(body) = read_frame(&mut input)? {
        let resp = match serde_json::from_slice::<Request>(&body) {
            Ok(req) => handle(engine, req),
            Err(e) => {
                let id = serde_json::from_slice::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                Response::failure(id, format!("malformed request: {e}"))
            }
        };
        write_message(&mut output, &resp)?;
    }
    Ok(())
}
