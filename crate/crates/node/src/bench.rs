//! Benchmark harness: drives full post → translate cycles through the
//! public API and reports stage percentiles next to reference figures.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use vnode_core::lang::{self, LanguageCode};
use vnode_core::ledger::TxKind;
use vnode_core::media::WavAudio;
use vnode_core::metrics::{Metrics, MetricsReport, Stage, StageTiming};
use vnode_core::now_ms;

use crate::client::{Client, ClientError, ClientResult};

/// Published reference figures, shown for context only.
pub const REFERENCE_END_TO_END_MS: f64 = 7_800.0;
pub const REFERENCE_LEDGER_COMMIT_MS: f64 = 1_200.0;

const BENCH_PASSWORD: &str = "bench-password-1";
const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LangPair {
    pub src: LanguageCode,
    pub dst: LanguageCode,
}

impl std::str::FromStr for LangPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected src:dst, got {s:?}"))?;
        let src = lang::resolve(a).map_err(|e| e.to_string())?;
        let dst = lang::resolve(b).map_err(|e| e.to_string())?;
        Ok(LangPair { src, dst })
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub posts: usize,
    pub pairs: Vec<LangPair>,
    /// Length of each generated post, in seconds of audio.
    pub wav_seconds: u32,
}

#[derive(Debug, Serialize)]
pub struct BenchOutcome {
    pub cycles: usize,
    pub failures: usize,
    /// Cycles whose delivered text differed from the expected translation.
    pub text_mismatches: usize,
    pub report: MetricsReport,
    #[serde(skip)]
    pub samples: Vec<StageTiming>,
}

/// A synthetic post of `seconds` length carrying `text` as its transcript.
pub fn bench_wav(text: &str, seconds: u32) -> Vec<u8> {
    let frames = (SAMPLE_RATE * seconds) as usize;
    let samples = (0..frames).map(|i| (((i as f64) * 0.05).sin() * 8_000.0) as i16).collect();
    let mut audio = WavAudio::new(SAMPLE_RATE, 1, samples).expect("fixed format is valid");
    audio.set_transcript(text);
    audio.to_bytes()
}

struct PairSession {
    pair: LangPair,
    author: Client,
    follower: Client,
}

fn setup_pair(server: &str, pair: LangPair, tag: &str, metrics: &Metrics) -> ClientResult<PairSession> {
    let author_name = format!("b{tag}a");
    let follower_name = format!("b{tag}f");
    let mut author = Client::new(server)?;
    author.register(&author_name, BENCH_PASSWORD, pair.src.code())?;
    author.login(&author_name, BENCH_PASSWORD)?;
    let mut follower = Client::new(server)?;
    follower.register(&follower_name, BENCH_PASSWORD, pair.dst.code())?;
    follower.login(&follower_name, BENCH_PASSWORD)?;
    let logged_in = Instant::now();
    follower.timeline(None, None, None)?;
    metrics.record_since(Stage::LoginToTimeline, logged_in);
    follower.follow(&author_name)?;
    Ok(PairSession { pair, author, follower })
}

fn record_ms(metrics: &Metrics, stage: Stage, value: &Value) {
    if let Some(ms) = value.as_f64() {
        metrics.record_stage(StageTiming { stage, duration_ms: ms, at: now_ms() });
    }
}

fn record_cost(metrics: &Metrics, kind: TxKind, receipt_cost: &Value) {
    if let Some(wei) = receipt_cost.as_u64() {
        metrics.record_cost(kind, wei as u128);
    } else if let Some(wei) = receipt_cost.as_str().and_then(|s| s.parse().ok()) {
        metrics.record_cost(kind, wei);
    }
}

/// One cycle; returns whether the delivered text matched expectations.
fn run_cycle(s: &PairSession, index: usize, seconds: u32, metrics: &Metrics) -> ClientResult<bool> {
    let text = format!("bench message number {index}");
    let wav = bench_wav(&text, seconds);
    let started = Instant::now();
    let post = s.author.post(wav, Some(s.pair.src.code()))?;
    let post_id = post["post_id"].as_str().unwrap_or_default().to_string();
    let item = s.follower.transcript(&post_id, Some(s.pair.dst.code()))?;
    s.follower.audio(&post_id, Some(s.pair.dst.code()))?;
    metrics.record_since(Stage::EndToEnd, started);

    record_ms(metrics, Stage::Asr, &post["timings"]["asr_ms"]);
    record_ms(metrics, Stage::LedgerCommit, &post["timings"]["ledger_commit_ms"]);
    record_cost(metrics, TxKind::Post, &post["tx"]["cost_wei"]);
    let timings = &item["timings"];
    if !timings.is_null() {
        record_ms(metrics, Stage::TranslateText, &timings["translate_text_ms"]);
        record_ms(metrics, Stage::SynthSpeech, &timings["synth_speech_ms"]);
        record_ms(metrics, Stage::LedgerCommit, &timings["ledger_commit_ms"]);
    }
    let expected =
        if s.pair.src == s.pair.dst { text } else { format!("[{}] {text}", s.pair.dst.code()) };
    Ok(item["text_for_viewer"].as_str() == Some(expected.as_str()))
}

/// Runs `options.posts` cycles against the node at `server`, rotating
/// through the language pairs. Failed cycles are counted, not fatal.
pub fn run(server: &str, options: &BenchOptions) -> Result<BenchOutcome, ClientError> {
    let metrics = Metrics::default();
    let mut sessions = Vec::new();
    if options.posts > 0 {
        let run_tag = now_ms() % 10_000_000_000;
        for (i, pair) in options.pairs.iter().enumerate() {
            sessions.push(setup_pair(server, *pair, &format!("{run_tag}_{i}"), &metrics)?);
        }
    }
    let (mut failures, mut text_mismatches) = (0, 0);
    for i in 0..options.posts {
        let session = &sessions[i % sessions.len()];
        match run_cycle(session, i, options.wav_seconds, &metrics) {
            Ok(true) => {}
            Ok(false) => text_mismatches += 1,
            Err(e) => {
                log::warn!("bench cycle {i} failed: {e}");
                failures += 1;
            }
        }
    }
    Ok(BenchOutcome {
        cycles: options.posts,
        failures,
        text_mismatches,
        report: metrics.report(),
        samples: metrics.samples(),
    })
}

/// Side-by-side table of our numbers against the published reference.
pub fn reference_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>7} {:>10} {:>10} {:>14}", "stage", "count", "p50_ms", "p95_ms", "reference_ms");
    for stage in Stage::ALL {
        let Some(s) = report.stages.get(&stage) else { continue };
        let reference = match stage {
            Stage::EndToEnd => format!("{REFERENCE_END_TO_END_MS:.0}"),
            Stage::LedgerCommit => format!("{REFERENCE_LEDGER_COMMIT_MS:.0}"),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<18} {:>7} {:>10.2} {:>10.2} {:>14}",
            stage.as_str(),
            s.count,
            s.p50_ms,
            s.p95_ms,
            reference
        );
    }
    let _ = writeln!(out, "reference values are published figures for context only; they are not targets");
    out
}

/// Writes raw samples as CSV with header `stage,duration_ms,at`.
pub fn write_dump(path: &Path, samples: &[StageTiming]) -> std::io::Result<()> {
    let mut csv = String::from("stage,duration_ms,at\n");
    for s in samples {
        let _ = writeln!(csv, "{},{},{}", s.stage.as_str(), s.duration_ms, s.at);
    }
    std::fs::write(path, csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vnode_core::media::{parse_wav, WavLimits};

    #[test]
    fn pair_parsing() {
        let p: LangPair = "eng:fra".parse().unwrap();
        assert_eq!((p.src.code(), p.dst.code()), ("eng", "fra"));
        assert!("eng".parse::<LangPair>().is_err());
        assert!("eng:xxx".parse::<LangPair>().is_err());
    }

    #[test]
    fn wav_has_requested_length_and_text() {
        let bytes = bench_wav("hello there", 5);
        let audio = parse_wav(&bytes, &WavLimits::default()).unwrap();
        assert_eq!(audio.duration_ms(), 5_000);
        assert_eq!(audio.transcript().unwrap().unwrap(), "hello there");
    }

    #[test]
    fn dump_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let samples = vec![StageTiming { stage: Stage::Asr, duration_ms: 1.5, at: 7 }];
        write_dump(&path, &samples).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "stage,duration_ms,at\nasr,1.5,7\n");
    }

    #[test]
    fn table_labels_reference() {
        let m = Metrics::default();
        m.record_stage(StageTiming { stage: Stage::LedgerCommit, duration_ms: 3.0, at: 0 });
        let t = reference_table(&m.report());
        assert!(t.contains("ledger_commit") && t.contains("1200") && t.contains("context only"));
        assert!(!t.contains("end_to_end"));
    }
}
