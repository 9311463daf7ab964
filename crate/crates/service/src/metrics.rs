use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use shelfid_core::pipeline::Timings;

/// Samples kept per stage for the p95; the count and mean cover everything.
pub const WINDOW: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub count: u64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub checkouts: u64,
    pub checkout_errors: u64,
    pub stages: BTreeMap<String, StageSummary>,
}

#[derive(Debug, Default)]
struct Series {
    count: u64,
    sum: f64,
    recent: VecDeque<f64>,
}

impl Series {
    fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        if self.recent.len() == WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(v);
    }

    fn summary(&self) -> StageSummary {
        let mut v: Vec<f64> = self.recent.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        StageSummary {
            count: self.count,
            mean_ms: if self.count == 0 { 0.0 } else { self.sum / self.count as f64 },
            p95_ms: percentile(&v, 0.95),
        }
    }
}

/// Nearest-rank percentile of sorted `v`; 0 when empty.
pub fn percentile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let rank = (q * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

#[derive(Debug, Default)]
struct Inner {
    checkouts: u64,
    errors: u64,
    stages: BTreeMap<&'static str, Series>,
}

#[derive(Debug, Default)]
pub struct Metrics {
    inner: Mutex<Inner>,
}

pub const STAGES: [&str; 6] = ["detect", "crop", "embed", "search", "overhead", "total"];

impl Metrics {
    pub fn record_checkout(&self, t: &Timings) {
        let values = [t.detect_ms, t.crop_ms, t.embed_ms, t.search_ms, t.overhead_ms(), t.total_ms];
        let mut inner = self.inner.lock().unwrap();
        inner.checkouts += 1;
        for (name, v) in STAGES.iter().zip(values) {
            inner.stages.entry(name).or_default().push(v);
        }
    }

    pub fn record_error(&self) {
        self.inner.lock().unwrap().errors += 1;
    }

    pub fn report(&self) -> MetricsReport {
        let inner = self.inner.lock().unwrap();
        MetricsReport {
            checkouts: inner.checkouts,
            checkout_errors: inner.errors,
            stages: STAGES
                .iter()
                .map(|s| {
                    let summary = inner.stages.get(s).map(Series::summary).unwrap_or(StageSummary {
                        count: 0,
                        mean_ms: 0.0,
                        p95_ms: 0.0,
                    });
                    (s.to_string(), summary)
                })
                .collect(),
        }
    }
}
