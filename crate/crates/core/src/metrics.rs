//! Stage-level latency instrumentation with nearest-rank percentiles, and
//! mean ledger cost per transaction kind.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ledger::TxKind;

pub const DEFAULT_RING_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Asr,
    TranslateText,
    SynthSpeech,
    LedgerCommit,
    EndToEnd,
    LoginToTimeline,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Asr,
        Stage::TranslateText,
        Stage::SynthSpeech,
        Stage::LedgerCommit,
        Stage::EndToEnd,
        Stage::LoginToTimeline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Asr => "asr",
            Stage::TranslateText => "translate_text",
            Stage::SynthSpeech => "synth_speech",
            Stage::LedgerCommit => "ledger_commit",
            Stage::EndToEnd => "end_to_end",
            Stage::LoginToTimeline => "login_to_timeline",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub duration_ms: f64,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostStats {
    pub count: u64,
    /// Decimal string: wei amounts can exceed what JSON numbers carry exactly.
    pub mean_cost_wei: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window: String,
    pub stages: BTreeMap<Stage, StageStats>,
    pub cost: BTreeMap<TxKind, CostStats>,
}

/// Nearest-rank percentile of `sorted` (ascending, nonempty): the smallest
/// value with at least `p`% of samples at or below it.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of no samples");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Summary statistics over raw samples; `None` when there are none.
pub fn summarize(samples: &[f64]) -> Option<StageStats> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(StageStats {
        count: sorted.len(),
        p50_ms: nearest_rank(&sorted, 50.0),
        p95_ms: nearest_rank(&sorted, 95.0),
        mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

#[derive(Default)]
struct Inner {
    rings: BTreeMap<Stage, VecDeque<StageTiming>>,
    costs: BTreeMap<TxKind, (u64, u128)>,
}

/// Bounded in-memory recorder, safe to share between request handlers.
pub struct Metrics {
    capacity: usize,
    inner: Mutex<Inner>,
}

impl Default for Metrics {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_RING_CAPACITY)
    }
}

impl Metrics {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Metrics { capacity, inner: Mutex::default() }
    }

    pub fn record_stage(&self, timing: StageTiming) {
        let duration_ms = if timing.duration_ms.is_finite() { timing.duration_ms.max(0.0) } else { 0.0 };
        let mut inner = self.inner.lock().expect("metrics poisoned");
        let ring = inner.rings.entry(timing.stage).or_default();
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        ring.push_back(StageTiming { duration_ms, ..timing });
    }

    /// Records the time elapsed since `started` for `stage`; returns it in ms.
    pub fn record_since(&self, stage: Stage, started: Instant) -> f64 {
        let duration_ms = started.elapsed().as_secs_f64() * 1000.0;
        self.record_stage(StageTiming { stage, duration_ms, at: crate::now_ms() });
        duration_ms
    }

    pub fn record_cost(&self, kind: TxKind, cost_wei: u128) {
        let mut inner = self.inner.lock().expect("metrics poisoned");
        let entry = inner.costs.entry(kind).or_default();
        entry.0 += 1;
        entry.1 += cost_wei;
    }

    /// Raw samples currently held, oldest first within each stage.
    pub fn samples(&self) -> Vec<StageTiming> {
        let inner = self.inner.lock().expect("metrics poisoned");
        inner.rings.values().flatten().copied().collect()
    }

    pub fn report(&self) -> MetricsReport {
        let inner = self.inner.lock().expect("metrics poisoned");
        let stages = inner
            .rings
            .iter()
            .filter_map(|(stage, ring)| {
                let durations: Vec<f64> = ring.iter().map(|t| t.duration_ms).collect();
                summarize(&durations).map(|s| (*stage, s))
            })
            .collect();
        let cost = inner
            .costs
            .iter()
            .map(|(kind, &(count, sum))| {
                (*kind, CostStats { count, mean_cost_wei: (sum / u128::from(count.max(1))).to_string() })
            })
            .collect();
        MetricsReport { window: "since_start".into(), stages, cost }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(stage: Stage, ms: f64) -> StageTiming {
        StageTiming { stage, duration_ms: ms, at: 0 }
    }

    #[test]
    fn median_of_three() {
        let m = Metrics::default();
        for v in [10.0, 30.0, 20.0] {
            m.record_stage(at(Stage::Asr, v));
        }
        let r = m.report();
        let asr = &r.stages[&Stage::Asr];
        assert_eq!((asr.count, asr.p50_ms, asr.p95_ms, asr.mean_ms), (3, 20.0, 30.0, 20.0));
        assert!(!r.stages.contains_key(&Stage::SynthSpeech));
    }

    #[test]
    fn ring_evicts_oldest() {
        let m = Metrics::default();
        for i in 0..=DEFAULT_RING_CAPACITY {
            m.record_stage(at(Stage::LedgerCommit, i as f64));
        }
        let s = m.samples();
        assert_eq!(s.len(), DEFAULT_RING_CAPACITY);
        assert_eq!(s[0].duration_ms, 1.0);
        assert_eq!(m.report().stages[&Stage::LedgerCommit].count, DEFAULT_RING_CAPACITY);
    }

    #[test]
    fn nearest_rank_reference_points() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0), 19.0);
        assert_eq!(nearest_rank(&v, 50.0), 10.0);
        assert_eq!(nearest_rank(&[7.0], 95.0), 7.0);
        assert_eq!(nearest_rank(&v, 100.0), 20.0);
    }

    #[test]
    fn mean_cost_per_kind() {
        let m = Metrics::default();
        m.record_cost(TxKind::Post, 3_588_000_000_000);
        m.record_cost(TxKind::Post, 3_588_000_000_002);
        let r = m.report();
        assert_eq!(r.cost[&TxKind::Post].mean_cost_wei, "3588000000001");
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["cost"]["post"]["count"], 2);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }

    proptest! {
        #[test]
        fn p50_never_exceeds_p95(v in proptest::collection::vec(0.0f64..1e6, 1..200)) {
            let s = summarize(&v).unwrap();
            prop_assert!(s.p50_ms <= s.p95_ms);
            prop_assert_eq!(s.count, v.len());
        }
    }
}
