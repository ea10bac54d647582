use super::{Capability, EngineDescriptor, SpeechEngine, TranscriptionResult};
use crate::error::EngineError;
use crate::lang::{supported_languages, LanguageCode};
use crate::media::{synth_tone, ToneParams, WavAudio};

/// Deterministic stand-in for ML inference. Transcripts travel inside the
/// audio as a `txts` chunk; translation prefixes the target code; speech
/// synthesis emits a tone derived from the translated text.
#[derive(Debug, Clone)]
pub struct MockEngine {
    descriptor: EngineDescriptor,
    tone: ToneParams,
}

impl Default for MockEngine {
    fn default() -> Self {
        Self {
            descriptor: EngineDescriptor {
                engine_id: "mock-1".into(),
                capabilities: [Capability::Asr, Capability::T2tt, Capability::S2st].into(),
                languages: supported_languages().iter().copied().collect(),
            },
            tone: ToneParams::default(),
        }
    }
}

impl MockEngine {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SpeechEngine for MockEngine {
    fn descriptor(&self) -> EngineDescriptor {
        self.descriptor.clone()
    }

    fn asr(&self, audio: &WavAudio, lang: LanguageCode) -> Result<TranscriptionResult, EngineError> {
        self.descriptor.require(Capability::Asr, &[lang])?;
        let text = audio.transcript().ok_or(EngineError::NoTranscriptChunk)??;
        Ok(TranscriptionResult {
            text: text.to_string(),
            lang,
            confidence: 1.0,
            audio_duration_ms: audio.duration_ms(),
        })
    }

    fn t2tt(&self, text: &str, src: LanguageCode, dst: LanguageCode) -> Result<String, EngineError> {
        self.descriptor.require(Capability::T2tt, &[src, dst])?;
        if src == dst {
            return Ok(text.to_string());
        }
        Ok(format!("[{}] {text}", dst.code()))
    }

    fn s2st(
        &self,
        audio: &WavAudio,
        src: LanguageCode,
        dst: LanguageCode,
    ) -> Result<WavAudio, EngineError> {
        self.descriptor.require(Capability::S2st, &[src, dst])?;
        let heard = self.asr(audio, src)?;
        let translated = self.t2tt(&heard.text, src, dst)?;
        Ok(synth_tone(&translated, &self.tone))
    }
}
