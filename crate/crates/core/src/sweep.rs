//! Parameter sweeps (cheapest setting that meets an attainment target) and run comparisons.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::metrics::{CsvRecord, MetricsReport};
use crate::scenario::ScenarioConfig;
use crate::sim::run;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Knob {
    Clim,
    Creq,
    Cputhresh,
    TCong,
}

impl FromStr for Knob {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clim" => Ok(Knob::Clim),
            "creq" => Ok(Knob::Creq),
            "cputhresh" => Ok(Knob::Cputhresh),
            "t-cong" => Ok(Knob::TCong),
            other => Err(format!(
                "unknown knob {other:?} (expected clim, creq, cputhresh or t-cong)"
            )),
        }
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Knob::Clim => "clim",
            Knob::Creq => "creq",
            Knob::Cputhresh => "cputhresh",
            Knob::TCong => "t-cong",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub knob: Knob,
    pub grid: Vec<f64>,
    /// Minimum SLO attainment a point needs to count as feasible.
    pub slo_target: f64,
    /// Deployment the knob applies to; defaults to the first one the knob fits.
    pub deployment: Option<String>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        if self.grid.is_empty() {
            errs.push("sweep grid must not be empty".to_string());
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            errs.push("sweep grid must be sorted ascending without duplicates".to_string());
        }
        if !(0.0..=1.0).contains(&self.slo_target) {
            errs.push(format!(
                "slo target must be in [0, 1], got {}",
                self.slo_target
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub creq_seconds: f64,
    pub slo_attainment: Option<f64>,
    pub p99_ms: Option<f64>,
    pub meets_target: bool,
}

impl CsvRecord for SweepPoint {
    const HEADERS: &'static [&'static str] = &[
        "value",
        "creq_seconds",
        "slo_attainment",
        "p99_ms",
        "meets_target",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub knob: Knob,
    pub deployment: String,
    pub points: Vec<SweepPoint>,
    /// Index of the feasible point with the least creq-seconds.
    pub best: Option<usize>,
}

impl SweepReport {
    pub fn best_point(&self) -> Option<&SweepPoint> {
        self.best.map(|i| &self.points[i])
    }
}

fn target_deployment(
    cfg: &ScenarioConfig,
    knob: Knob,
    wanted: Option<&str>,
) -> Result<usize, SimError> {
    if let Some(id) = wanted {
        return cfg
            .deployments
            .iter()
            .position(|d| d.id == id)
            .ok_or_else(|| SimError::config(format!("sweep: unknown deployment {id:?}")));
    }
    let fits = |kind: &str| match knob {
        Knob::Cputhresh => kind.starts_with("hpa"),
        Knob::TCong => kind == "yaas",
        Knob::Clim | Knob::Creq => true,
    };
    cfg.deployments
        .iter()
        .position(|d| fits(&cfg.policy_for(d).kind))
        .ok_or_else(|| SimError::config(format!("sweep: no deployment the {knob} knob applies to")))
}

/// Copy of `cfg` with `knob` set to `value` on deployment `dep`. Policy knobs get a private policy entry.
pub fn apply_knob(
    cfg: &ScenarioConfig,
    knob: Knob,
    dep: usize,
    value: f64,
) -> Result<ScenarioConfig, SimError> {
    let mut out = cfg.clone();
    let id = out.deployments[dep].id.clone();
    match knob {
        Knob::Clim => out.deployments[dep].clim_m = Some(value.round() as u64),
        Knob::Creq => out.deployments[dep].creq_m = value.round() as u64,
        Knob::Cputhresh | Knob::TCong => {
            let mut policy = out.policy_for(&out.deployments[dep]);
            match knob {
                Knob::Cputhresh if policy.kind.starts_with("hpa") => policy.hpa.threshold = value,
                Knob::TCong if policy.kind == "yaas" => policy.yaas.t_cong = value,
                _ => {
                    return Err(SimError::config(format!(
                        "knob {knob} does not apply to deployment {id} (policy {})",
                        policy.kind
                    )))
                }
            }
            let name = format!("{id}/sweep");
            out.policies.insert(name.clone(), policy);
            out.deployments[dep].policy = Some(name);
        }
    }
    out.validate()?;
    Ok(out)
}

/// Runs every grid point with the scenario's seed, in parallel, reporting in grid order.
pub fn sweep(cfg: &ScenarioConfig, spec: &SweepSpec) -> Result<SweepReport, SimError> {
    spec.validate()?;
    let dep = target_deployment(cfg, spec.knob, spec.deployment.as_deref())?;
    let id = cfg.deployments[dep].id.clone();
    let configs = spec
        .grid
        .iter()
        .map(|&v| apply_knob(cfg, spec.knob, dep, v))
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<MetricsReport> = configs.par_iter().map(run).collect::<Result<_, _>>()?;
    let points: Vec<SweepPoint> = spec
        .grid
        .iter()
        .zip(&reports)
        .map(|(&value, r)| {
            let s = &r.deployment(&id).expect("deployment in report").summary;
            SweepPoint {
                value,
                creq_seconds: s.creq_seconds,
                slo_attainment: s.slo_attainment,
                p99_ms: s.p99_ms,
                meets_target: s.slo_attainment.is_some_and(|a| a >= spec.slo_target),
            }
        })
        .collect();
    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.meets_target)
        .min_by(|(i, a), (j, b)| a.creq_seconds.total_cmp(&b.creq_seconds).then(i.cmp(j)))
        .map(|(i, _)| i);
    Ok(SweepReport {
        knob: spec.knob,
        deployment: id,
        points,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub deployment: String,
    pub p99_ms_a: Option<f64>,
    pub p99_ms_b: Option<f64>,
    pub slo_attainment_a: Option<f64>,
    pub slo_attainment_b: Option<f64>,
    pub creq_seconds_a: Option<f64>,
    pub creq_seconds_b: Option<f64>,
    pub bill_resource_a: Option<f64>,
    pub bill_resource_b: Option<f64>,
    pub bill_utilization_a: Option<f64>,
    pub bill_utilization_b: Option<f64>,
    pub bill_performance_a: Option<f64>,
    pub bill_performance_b: Option<f64>,
    pub actions_a: Option<usize>,
    pub actions_b: Option<usize>,
}

impl CsvRecord for CompareRow {
    const HEADERS: &'static [&'static str] = &[
        "deployment",
        "p99_ms_a",
        "p99_ms_b",
        "slo_attainment_a",
        "slo_attainment_b",
        "creq_seconds_a",
        "creq_seconds_b",
        "bill_resource_a",
        "bill_resource_b",
        "bill_utilization_a",
        "bill_utilization_b",
        "bill_performance_a",
        "bill_performance_b",
        "actions_a",
        "actions_b",
    ];
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub a: MetricsReport,
    pub b: MetricsReport,
    pub rows: Vec<CompareRow>,
}

/// Runs two scenarios that share workloads and seed, and lines their deployments up side by side.
pub fn compare(a: &ScenarioConfig, b: &ScenarioConfig) -> Result<Comparison, SimError> {
    let mut errs = Vec::new();
    if a.seed != b.seed {
        errs.push(format!("compare: seeds differ ({} vs {})", a.seed, b.seed));
    }
    if a.workloads != b.workloads {
        errs.push("compare: scenarios do not share the same workloads".to_string());
    }
    if !errs.is_empty() {
        return Err(SimError::Config(errs));
    }
    let (ra, rb) = rayon::join(|| run(a), || run(b));
    let (ra, rb) = (ra?, rb?);
    let mut ids: Vec<String> = ra
        .deployments
        .iter()
        .map(|d| d.summary.deployment.clone())
        .collect();
    for d in &rb.deployments {
        if !ids.contains(&d.summary.deployment) {
            ids.push(d.summary.deployment.clone());
        }
    }
    let rows = ids
        .into_iter()
        .map(|id| {
            let x = ra.deployment(&id);
            let y = rb.deployment(&id);
            CompareRow {
                p99_ms_a: x.and_then(|d| d.summary.p99_ms),
                p99_ms_b: y.and_then(|d| d.summary.p99_ms),
                slo_attainment_a: x.and_then(|d| d.summary.slo_attainment),
                slo_attainment_b: y.and_then(|d| d.summary.slo_attainment),
                creq_seconds_a: x.map(|d| d.summary.creq_seconds),
                creq_seconds_b: y.map(|d| d.summary.creq_seconds),
                bill_resource_a: x.map(|d| d.summary.bill_resource),
                bill_resource_b: y.map(|d| d.summary.bill_resource),
                bill_utilization_a: x.map(|d| d.summary.bill_utilization),
                bill_utilization_b: y.map(|d| d.summary.bill_utilization),
                bill_performance_a: x.and_then(|d| d.summary.bill_performance),
                bill_performance_b: y.and_then(|d| d.summary.bill_performance),
                actions_a: x.map(|d| d.actions),
                actions_b: y.map(|d| d.actions),
                deployment: id,
            }
        })
        .collect();
    Ok(Comparison { a: ra, b: rb, rows })
}
