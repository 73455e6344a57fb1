//! Latency recording, percentiles, SLO windows and report export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::SimError;

/// Nearest-rank percentile: the value at rank `ceil(p/100 × n)` in ascending order.
///
/// Returns `None` for an empty sample set. `samples` need not be sorted.
pub fn percentile(samples: &[u64], p: f64) -> Option<u64> {
    if samples.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Some(percentile_sorted(&sorted, p))
}

pub fn percentile_sorted(sorted: &[u64], p: f64) -> u64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// End-to-end latencies of one deployment, split into post-warmup totals and the open window.
#[derive(Debug, Clone, Default)]
pub struct LatencyRecorder {
    pub warmup: SimTime,
    samples: Vec<u64>,
    window: Vec<u64>,
    pub completed_total: u64,
}

impl LatencyRecorder {
    pub fn new(warmup: SimTime) -> Self {
        Self {
            warmup,
            ..Self::default()
        }
    }

    pub fn record(&mut self, completion: SimTime, latency: SimTime) {
        self.completed_total += 1;
        self.window.push(latency.micros());
        if completion >= self.warmup {
            self.samples.push(latency.micros());
        }
    }

    /// Closes the current measurement window, returning its samples.
    pub fn take_window(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.window)
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    pub fn mean_us(&self) -> Option<f64> {
        (!self.samples.is_empty())
            .then(|| self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64)
    }
}

/// Percentile of one closed measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub start: SimTime,
    pub end: SimTime,
    pub percentile_us: Option<u64>,
    /// Requests still queued when the window closed.
    pub backlog: usize,
}

impl WindowPoint {
    /// A window with no completions complies only if nothing was left waiting.
    pub fn complies(&self, slo_us: f64) -> bool {
        match self.percentile_us {
            Some(p) => p as f64 <= slo_us,
            None => self.backlog == 0,
        }
    }
}

/// Seconds from `step` until the windowed percentile drops to the SLO and
/// stays there for at least two consecutive windows. `None` means unmet.
pub fn time_to_meet_slo(windows: &[WindowPoint], step: SimTime, slo_us: f64) -> Option<f64> {
    let after: Vec<&WindowPoint> = windows.iter().filter(|w| w.start >= step).collect();
    after
        .windows(2)
        .find(|pair| pair.iter().all(|w| w.complies(slo_us)))
        .map(|pair| (pair[0].start - step).as_secs_f64())
}

/// Fraction of windows meeting the SLO; `None` when there are no windows.
pub fn slo_attainment(windows: &[WindowPoint], slo_us: f64) -> Option<f64> {
    if windows.is_empty() {
        return None;
    }
    let ok = windows.iter().filter(|w| w.complies(slo_us)).count();
    Some(ok as f64 / windows.len() as f64)
}

/// One line of `summary.csv`; column order is the file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub deployment: String,
    pub replicas_final: usize,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub slo_ms: f64,
    pub slo_attainment: Option<f64>,
    pub throughput_rps: f64,
    pub throttle_events: u64,
    pub creq_seconds: f64,
    pub util_seconds: f64,
    pub bill_resource: f64,
    pub bill_utilization: f64,
    pub bill_performance: Option<f64>,
}

/// One line of `timeseries.csv`. Deployment rows leave the node columns empty and vice versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub t_s: f64,
    pub deployment: Option<String>,
    pub replicas: Option<usize>,
    pub total_creq_m: Option<u64>,
    pub util_m: Option<f64>,
    pub p99_ms_window: Option<f64>,
    pub node_id: Option<String>,
    pub node_util: Option<f64>,
}

/// One line of `actions.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t_s: f64,
    pub deployment: String,
    pub action: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub workload: String,
    pub stage: usize,
    pub deployment: String,
    pub request: u64,
    pub arrival_us: u64,
    pub service_start_us: u64,
    pub completion_us: u64,
    pub latency_us: u64,
    pub execution_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: u64,
    pub deployment: String,
    pub pod: usize,
    pub cpu_us: f64,
    pub throttled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloStep {
    pub deployment: String,
    pub step_s: f64,
    /// `None` is written as `unmet`.
    #[serde(with = "unmet")]
    pub time_to_meet_s: Option<f64>,
}

mod unmet {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("unmet"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Text(t) if t == "unmet" => Ok(None),
            Raw::Text(t) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

/// Post-action overage snapshot for actions triggered by an SLO breach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverageCheck {
    pub t_s: f64,
    pub deployment: String,
    pub util_m: f64,
    pub creq_total_m: u64,
}

impl OverageCheck {
    pub fn overage_m(&self) -> f64 {
        self.util_m - self.creq_total_m as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentReport {
    pub summary: SummaryRow,
    pub mean_ms: Option<f64>,
    pub completed: u64,
    pub actions: usize,
    pub failed_actions: usize,
    /// CPU actually consumed, priced at the base rate.
    pub consumed_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub workload: String,
    pub arrivals: u64,
    pub completed: u64,
    pub in_flight: u64,
    pub p50_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub mean_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    /// Σ per-pod cumulative CPU in work units, including removed pods.
    pub pod_cpu_work: u64,
    /// Σ per-node busy time in work units.
    pub node_busy_work: u64,
    /// Control ticks at which every node's Σcreq was verified against capacity.
    #[serde(default)]
    pub gatekeeping_checks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub seed: u64,
    pub duration_s: f64,
    pub deployments: Vec<DeploymentReport>,
    pub workloads: Vec<WorkloadReport>,
    pub timeseries: Vec<TimeseriesRow>,
    pub actions: Vec<ActionRecord>,
    pub slo_steps: Vec<SloStep>,
    pub overage_checks: Vec<OverageCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requests: Vec<RequestRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periods: Vec<PeriodRecord>,
    pub conservation: Conservation,
}

impl MetricsReport {
    pub fn deployment(&self, id: &str) -> Option<&DeploymentReport> {
        self.deployments.iter().find(|d| d.summary.deployment == id)
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.deployments.iter().map(|d| d.summary.clone()).collect()
    }

    pub fn time_to_meet(&self, deployment: &str) -> Vec<Option<f64>> {
        self.slo_steps
            .iter()
            .filter(|s| s.deployment == deployment)
            .map(|s| s.time_to_meet_s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

/// Column names of a row type, so empty files still carry a header.
pub trait CsvRecord: Serialize {
    const HEADERS: &'static [&'static str];
}

macro_rules! csv_record {
    ($ty:ty, [$($col:literal),* $(,)?]) => {
        impl CsvRecord for $ty {
            const HEADERS: &'static [&'static str] = &[$($col),*];
        }
    };
}

csv_record!(
    SummaryRow,
    [
        "deployment",
        "replicas_final",
        "p50_ms",
        "p95_ms",
        "p99_ms",
        "slo_ms",
        "slo_attainment",
        "throughput_rps",
        "throttle_events",
        "creq_seconds",
        "util_seconds",
        "bill_resource",
        "bill_utilization",
        "bill_performance",
    ]
);
csv_record!(
    TimeseriesRow,
    [
        "t_s",
        "deployment",
        "replicas",
        "total_creq_m",
        "util_m",
        "p99_ms_window",
        "node_id",
        "node_util"
    ]
);
csv_record!(ActionRecord, ["t_s", "deployment", "action", "reason"]);
csv_record!(
    RequestRecord,
    [
        "workload",
        "stage",
        "deployment",
        "request",
        "arrival_us",
        "service_start_us",
        "completion_us",
        "latency_us",
        "execution_us",
    ]
);
csv_record!(
    PeriodRecord,
    ["period", "deployment", "pod", "cpu_us", "throttled"]
);
csv_record!(SloStep, ["deployment", "step_s", "time_to_meet_s"]);

pub fn write_csv<T: CsvRecord>(path: &Path, rows: &[T]) -> Result<(), SimError> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(err) => SimError::io(path, err),
        other => SimError::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    w.write_record(T::HEADERS).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SimError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| SimError::io(path, std::io::Error::other(e.to_string())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| SimError::io(path, std::io::Error::other(e.to_string())))
}

/// Writes `summary.csv`, `timeseries.csv` and `actions.log` (plus `requests.csv`,
/// `periods.csv` and `slo_steps.csv` when non-empty), or `report.json` with `actions.log`.
pub fn export(report: &MetricsReport, format: ExportFormat, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    match format {
        ExportFormat::Csv => {
            write_csv(&dir.join("summary.csv"), &report.summary_rows())?;
            write_csv(&dir.join("timeseries.csv"), &report.timeseries)?;
            if !report.requests.is_empty() {
                write_csv(&dir.join("requests.csv"), &report.requests)?;
            }
            if !report.periods.is_empty() {
                write_csv(&dir.join("periods.csv"), &report.periods)?;
            }
            if !report.slo_steps.is_empty() {
                write_csv(&dir.join("slo_steps.csv"), &report.slo_steps)?;
            }
        }
        ExportFormat::Json => {
            let path = dir.join("report.json");
            let text = serde_json::to_string_pretty(report)
                .map_err(|e| SimError::Invariant(format!("report serialization: {e}")))?;
            fs::write(&path, text + "\n").map_err(|e| SimError::io(&path, e))?;
        }
    }
    write_csv(&dir.join("actions.log"), &report.actions)
}

pub fn read_json_report(path: &Path) -> Result<MetricsReport, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| SimError::io(path, std::io::Error::other(e.to_string())))
}
