//! Scenario files: a single JSON document describing topology, deployments,
//! workloads, policies and billing, plus optional named variants.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autoscaler::{policy_names, PolicyConfig};
use crate::billing::perf_rate_fn_names;
use crate::cfs::{Millicores, PodSpec};
use crate::cluster::{placement_names, placement_strategy, Cluster, NodeSpec};
use crate::engine::SimTime;
use crate::error::SimError;
use crate::workload::{load_trace, ArrivalProcess, ChainStage};

pub const SCHEMA: &str = "cfs-sim/v1";

fn default_period_ms() -> u64 {
    100
}
fn default_tick_s() -> f64 {
    1.0
}
fn default_warmup_s() -> f64 {
    10.0
}
fn default_node_window_s() -> f64 {
    15.0
}
fn default_placement() -> String {
    "least-allocated".into()
}
fn default_one() -> u32 {
    1
}
fn default_percentile() -> f64 {
    99.0
}
fn default_base_rate() -> f64 {
    1.0
}
fn default_rate_fn() -> String {
    "inverse".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_period_ms")]
    pub period_ms: u64,
    /// Metrics tick: measurement windows, billing accrual and timeseries rows.
    #[serde(default = "default_tick_s")]
    pub tick_s: f64,
    #[serde(default = "default_warmup_s")]
    pub warmup_s: f64,
    /// Trailing window for the per-tick SLO percentile; defaults to one tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slo_window_s: Option<f64>,
    /// Window for node utilization N.
    #[serde(default = "default_node_window_s")]
    pub node_window_s: f64,
    #[serde(default = "default_placement")]
    pub placement: String,
    #[serde(default)]
    pub migration_downtime_ms: u64,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub nodes: Vec<NodeConfig>,
    pub deployments: Vec<DeploymentConfig>,
    pub workloads: Vec<WorkloadConfig>,
    #[serde(default)]
    pub policies: BTreeMap<String, PolicyConfig>,
    #[serde(default)]
    pub billing: BillingConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub record_requests: bool,
    #[serde(default)]
    pub record_periods: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub cores: u32,
    /// Expands into `count` nodes named `<id>-0`, `<id>-1`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloConfig {
    pub ms: f64,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub id: String,
    pub creq_m: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clim_m: Option<u64>,
    #[serde(default = "default_one")]
    pub parallelism: u32,
    #[serde(default = "default_one")]
    pub replicas: u32,
    pub slo: SloConfig,
    /// Key into `policies`, or a bare policy kind with default parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    /// Initial replicas go to these nodes round-robin instead of the placement strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub id: String,
    pub arrival: ArrivalProcess,
    pub stages: Vec<ChainStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BillingConfig {
    #[serde(default = "default_base_rate")]
    pub base_rate_per_core_hour: f64,
    #[serde(default = "default_rate_fn")]
    pub perf_rate_fn: String,
    /// Deployments billed under the performance scheme. Empty means every YAAS deployment.
    #[serde(default)]
    pub performance: Vec<String>,
}

impl Default for BillingConfig {
    fn default() -> Self {
        Self {
            base_rate_per_core_hour: default_base_rate(),
            perf_rate_fn: default_rate_fn(),
            performance: Vec::new(),
        }
    }
}

/// RFC 7386 merge patch, except that arrays of objects carrying an `id` are merged entry by entry.
///
/// Patch entries with an unknown id are appended; an entry `{"id": x, "remove": true}` deletes `x`.
pub fn merge_patch(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                if v.is_null() {
                    b.remove(k);
                } else {
                    merge_patch(b.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        (Value::Array(b), Value::Array(p)) if keyed(b) && keyed(p) => {
            for entry in p {
                let id = &entry["id"];
                let pos = b.iter().position(|e| &e["id"] == id);
                let remove = entry
                    .get("remove")
                    .and_then(Value::as_bool)
                    .unwrap_or(false);
                match (pos, remove) {
                    (Some(i), true) => {
                        b.remove(i);
                    }
                    (Some(i), false) => merge_patch(&mut b[i], entry),
                    (None, false) => b.push(entry.clone()),
                    (None, true) => {}
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn keyed(items: &[Value]) -> bool {
    !items.is_empty()
        && items
            .iter()
            .all(|v| v.get("id").is_some_and(Value::is_string))
}

/// Splits `file.scn#variant` into path and variant.
pub fn split_variant(spec: &str) -> (&str, Option<&str>) {
    match spec.rsplit_once('#') {
        Some((path, v)) if !v.is_empty() => (path, Some(v)),
        _ => (spec, None),
    }
}

/// Variant names declared by a scenario file.
pub fn variant_names(path: &Path) -> Result<Vec<String>, SimError> {
    let doc = read_document(path)?;
    Ok(doc
        .get("variants")
        .and_then(Value::as_object)
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default())
}

fn read_document(path: &Path) -> Result<Value, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SimError::config(format!("{}: {e}", path.display())))
}

/// Reads, patches, deserializes and validates a scenario. Trace files resolve relative to the scenario.
pub fn parse_scenario(path: &Path, variant: Option<&str>) -> Result<ScenarioConfig, SimError> {
    let mut doc = read_document(path)?;
    let variants = doc.as_object_mut().and_then(|m| m.remove("variants"));
    if let Some(name) = variant {
        let patch = variants.as_ref().and_then(|v| v.get(name)).ok_or_else(|| {
            SimError::config(format!("{}: no variant named {name:?}", path.display()))
        })?;
        merge_patch(&mut doc, patch);
    }
    let mut cfg: ScenarioConfig = serde_json::from_value(doc)
        .map_err(|e| SimError::config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for w in &mut cfg.workloads {
        if let ArrivalProcess::Trace {
            times_us,
            file: Some(f),
            ..
        } = &mut w.arrival
        {
            *times_us = load_trace(&dir.join(&*f))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig, SimError> {
    let cfg: ScenarioConfig =
        serde_json::from_str(text).map_err(|e| SimError::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn period(&self) -> SimTime {
        SimTime::from_millis(self.period_ms)
    }

    pub fn tick(&self) -> SimTime {
        SimTime::from_secs_f64(self.tick_s)
    }

    pub fn slo_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.slo_window_s.unwrap_or(self.tick_s))
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn node_specs(&self) -> Vec<NodeSpec> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match n.count {
                None => out.push(NodeSpec {
                    id: n.id.clone(),
                    cores: n.cores,
                }),
                Some(c) => out.extend((0..c).map(|k| NodeSpec {
                    id: format!("{}-{k}", n.id),
                    cores: n.cores,
                })),
            }
        }
        out
    }

    /// Policy bound to a deployment: a named entry in `policies`, a bare kind, or `none`.
    pub fn policy_for(&self, dep: &DeploymentConfig) -> PolicyConfig {
        match &dep.policy {
            None => PolicyConfig::new("none"),
            Some(name) => self
                .policies
                .get(name)
                .cloned()
                .unwrap_or_else(|| PolicyConfig::new(name)),
        }
    }

    pub fn pod_spec(&self, index: usize) -> PodSpec {
        let d = &self.deployments[index];
        PodSpec {
            creq: Millicores(d.creq_m),
            clim: d.clim_m.map(Millicores),
            parallelism: d.parallelism,
            deployment: index,
        }
    }

    /// Deployments billed under the performance scheme.
    pub fn performance_billed(&self) -> BTreeSet<String> {
        if self.billing.performance.is_empty() {
            self.deployments
                .iter()
                .filter(|d| self.policy_for(d).kind == "yaas")
                .map(|d| d.id.clone())
                .collect()
        } else {
            self.billing.performance.iter().cloned().collect()
        }
    }

    /// Collects every problem with the scenario.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs = Vec::new();
        if self.schema != SCHEMA {
            errs.push(format!("schema must be {SCHEMA:?}, got {:?}", self.schema));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            errs.push(format!("duration_s must be >= 0, got {}", self.duration_s));
        }
        if self.period_ms == 0 {
            errs.push("period_ms must be > 0".into());
        }
        if !(self.tick_s > 0.0) {
            errs.push("tick_s must be > 0".into());
        }
        if !(self.warmup_s >= 0.0) {
            errs.push("warmup_s must be >= 0".into());
        }
        if self.slo_window_s.is_some_and(|w| !(w > 0.0)) {
            errs.push("slo_window_s must be > 0".into());
        }
        if !(self.node_window_s > 0.0) {
            errs.push("node_window_s must be > 0".into());
        }
        if !placement_names().contains(&self.placement.as_str()) {
            errs.push(format!(
                "unknown placement {:?} (known: {})",
                self.placement,
                placement_names().join(", ")
            ));
        }

        let specs = self.node_specs();
        if specs.is_empty() {
            errs.push("at least one node is required".into());
        }
        let mut node_ids = BTreeSet::new();
        for n in &specs {
            if n.cores == 0 {
                errs.push(format!("node {}: cores must be >= 1", n.id));
            }
            if !node_ids.insert(n.id.as_str()) {
                errs.push(format!("duplicate node id {:?}", n.id));
            }
        }

        for (name, p) in &self.policies {
            errs.extend(
                p.validate()
                    .into_iter()
                    .map(|e| format!("policy {name}: {e}")),
            );
            if self.tick_s > 0.0 {
                let tick = self.tick().micros().max(1);
                if p.sync_period().micros() % tick != 0 {
                    errs.push(format!(
                        "policy {name}: sync_period_s {} is not a multiple of tick_s {}",
                        p.sync_period_s, self.tick_s
                    ));
                }
            }
        }

        if self.deployments.is_empty() {
            errs.push("at least one deployment is required".into());
        }
        let mut dep_ids = BTreeSet::new();
        for d in &self.deployments {
            let at = format!("deployment {}", d.id);
            if !dep_ids.insert(d.id.as_str()) {
                errs.push(format!("duplicate deployment id {:?}", d.id));
            }
            if d.creq_m < 1 {
                errs.push(format!("{at}: creq_m must be >= 1"));
            }
            if let Some(l) = d.clim_m {
                if l < d.creq_m {
                    errs.push(format!("{at}: clim_m {l} is below creq_m {} (a limit must be at least the request)", d.creq_m));
                }
            }
            if d.parallelism < 1 {
                errs.push(format!("{at}: parallelism must be >= 1"));
            }
            if d.replicas < 1 {
                errs.push(format!("{at}: replicas must be >= 1"));
            }
            if !(d.slo.ms > 0.0) {
                errs.push(format!("{at}: slo.ms must be > 0"));
            }
            if !(d.slo.percentile > 0.0 && d.slo.percentile <= 100.0) {
                errs.push(format!("{at}: slo.percentile must be in (0, 100]"));
            }
            if let Some(p) = &d.policy {
                if !self.policies.contains_key(p) && !policy_names().contains(&p.as_str()) {
                    errs.push(format!("{at}: unknown policy {p:?}"));
                }
            }
            for n in d.nodes.iter().flatten() {
                if !node_ids.contains(n.as_str()) {
                    errs.push(format!("{at}: unknown node {n:?}"));
                }
            }
            if d.nodes.as_ref().is_some_and(|n| n.is_empty()) {
                errs.push(format!("{at}: nodes, when given, must not be empty"));
            }
        }

        let mut wl_ids = BTreeSet::new();
        for w in &self.workloads {
            let at = format!("workload {}", w.id);
            if !wl_ids.insert(w.id.as_str()) {
                errs.push(format!("duplicate workload id {:?}", w.id));
            }
            errs.extend(
                w.arrival
                    .validate()
                    .into_iter()
                    .map(|e| format!("{at}: {e}")),
            );
            if w.stages.is_empty() {
                errs.push(format!("{at}: stages must not be empty"));
            }
            for s in &w.stages {
                if !dep_ids.contains(s.deployment.as_str()) {
                    errs.push(format!("{at}: unknown deployment {:?}", s.deployment));
                }
                errs.extend(
                    s.demand
                        .validate()
                        .into_iter()
                        .map(|e| format!("{at}: {e}")),
                );
            }
        }

        if !(self.billing.base_rate_per_core_hour >= 0.0) {
            errs.push("billing.base_rate_per_core_hour must be >= 0".into());
        }
        if !perf_rate_fn_names().contains(&self.billing.perf_rate_fn.as_str()) {
            errs.push(format!(
                "unknown billing.perf_rate_fn {:?} (known: {})",
                self.billing.perf_rate_fn,
                perf_rate_fn_names().join(", ")
            ));
        }
        for id in &self.billing.performance {
            match self.deployments.iter().find(|d| &d.id == id) {
                None => errs.push(format!("billing.performance: unknown deployment {id:?}")),
                Some(d) if self.policy_for(d).kind != "yaas" => errs.push(format!(
                    "billing.performance: deployment {id:?} is not managed by yaas"
                )),
                _ => {}
            }
        }

        if errs.is_empty() {
            if let Err(e) = self.initial_cluster() {
                match e {
                    SimError::Config(more) => errs.extend(more),
                    other => return Err(other),
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(errs))
        }
    }

    /// Places every initial replica. Returns the cluster and each deployment's pod ids.
    pub fn initial_cluster(&self) -> Result<(Cluster, Vec<Vec<usize>>), SimError> {
        let specs = self.node_specs();
        let index: BTreeMap<&str, usize> = specs
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut cluster = Cluster::new(specs.clone(), self.period());
        let strategy = placement_strategy(&self.placement)
            .ok_or_else(|| SimError::config(format!("unknown placement {:?}", self.placement)))?;
        let mut errs = Vec::new();
        let mut pods = Vec::new();
        for (i, d) in self.deployments.iter().enumerate() {
            let mut ids = Vec::new();
            for k in 0..d.replicas as usize {
                let spec = self.pod_spec(i);
                let placed = match &d.nodes {
                    Some(pin) => {
                        let node = index[pin[k % pin.len()].as_str()];
                        cluster
                            .place_on(spec, node)
                            .map_err(|_| format!("node {}", specs[node].id))
                    }
                    None => cluster
                        .place_pod(spec, strategy.as_ref())
                        .map(|(p, _)| p)
                        .map_err(|_| "any node".to_string()),
                };
                match placed {
                    Ok(p) => ids.push(p),
                    Err(where_) => errs.push(format!(
                        "deployment {} replica {k} ({}m) does not fit on {where_}: sum of requests would exceed capacity",
                        d.id, d.creq_m
                    )),
                }
            }
            pods.push(ids);
        }
        if errs.is_empty() {
            Ok((cluster, pods))
        } else {
            Err(SimError::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "schema": "cfs-sim/v1",
            "seed": 1,
            "duration_s": 5,
            "nodes": [{"id": "n0", "cores": 1}],
            "deployments": [{"id": "app", "creq_m": 500, "slo": {"ms": 50}}],
            "workloads": [{
                "id": "w",
                "arrival": {"kind": "poisson", "rate": 10},
                "stages": [{"deployment": "app", "demand": {"kind": "constant", "us": 10000}}]
            }]
        })
    }

    fn errors(v: Value) -> Vec<String> {
        match parse_scenario_str(&v.to_string()) {
            Err(SimError::Config(e)) => e,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_scenario_parses() {
        let cfg = parse_scenario_str(&minimal().to_string()).unwrap();
        assert_eq!(cfg.period(), SimTime::from_millis(100));
        assert_eq!(cfg.placement, "least-allocated");
        assert_eq!(cfg.policy_for(&cfg.deployments[0]).kind, "none");
    }

    #[test]
    fn limit_below_request_is_rejected() {
        let mut v = minimal();
        v["deployments"][0]["clim_m"] = json!(400);
        let errs = errors(v);
        assert!(
            errs.iter()
                .any(|e| e.contains("clim_m 400 is below creq_m 500")),
            "{errs:?}"
        );
    }

    #[test]
    fn oversized_initial_placement_is_rejected() {
        let mut v = minimal();
        v["deployments"][0]["replicas"] = json!(3);
        let errs = errors(v);
        assert!(
            errs.iter()
                .any(|e| e.contains("replica 2") && e.contains("exceed capacity")),
            "{errs:?}"
        );
    }

    #[test]
    fn all_errors_reported() {
        let mut v = minimal();
        v["schema"] = json!("v0");
        v["deployments"][0]["clim_m"] = json!(1);
        v["workloads"][0]["stages"][0]["deployment"] = json!("ghost");
        v["placement"] = json!("random");
        assert!(errors(v).len() >= 4);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = minimal();
        v["deployments"][0]["cpu"] = json!(1);
        assert!(!errors(v).is_empty());
    }

    #[test]
    fn merge_patch_by_id() {
        let mut base = json!({"seed": 1, "deployments": [{"id": "a", "creq_m": 1, "clim_m": 2}, {"id": "b", "creq_m": 3}]});
        merge_patch(
            &mut base,
            &json!({"seed": 2, "deployments": [{"id": "a", "clim_m": null}, {"id": "c", "creq_m": 4}, {"id": "b", "remove": true}]}),
        );
        assert_eq!(
            base,
            json!({"seed": 2, "deployments": [{"id": "a", "creq_m": 1}, {"id": "c", "creq_m": 4}]})
        );
    }

    #[test]
    fn plain_arrays_are_replaced() {
        let mut base = json!({"grid": [1, 2, 3]});
        merge_patch(&mut base, &json!({"grid": [4]}));
        assert_eq!(base, json!({"grid": [4]}));
    }

    #[test]
    fn variant_selection() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = minimal();
        v["variants"] = json!({"limited": {"deployments": [{"id": "app", "clim_m": 600}]}});
        let path = dir.path().join("s.scn");
        fs::write(&path, v.to_string()).unwrap();
        assert_eq!(
            parse_scenario(&path, None).unwrap().deployments[0].clim_m,
            None
        );
        assert_eq!(
            parse_scenario(&path, Some("limited")).unwrap().deployments[0].clim_m,
            Some(600)
        );
        assert_eq!(
            parse_scenario(&path, Some("nope")).unwrap_err().exit_code(),
            1
        );
        assert_eq!(variant_names(&path).unwrap(), vec!["limited".to_string()]);
    }

    #[test]
    fn split_variant_suffix() {
        assert_eq!(split_variant("a.scn#x"), ("a.scn", Some("x")));
        assert_eq!(split_variant("a.scn"), ("a.scn", None));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert_eq!(
            parse_scenario(Path::new("/nonexistent/x.scn"), None)
                .unwrap_err()
                .exit_code(),
            3
        );
    }

    #[test]
    fn sync_period_must_align_with_tick() {
        let mut v = minimal();
        v["tick_s"] = json!(2.0);
        v["policies"] = json!({"p": {"kind": "hpa", "sync_period_s": 15}});
        v["deployments"][0]["policy"] = json!("p");
        assert!(errors(v).iter().any(|e| e.contains("not a multiple")));
    }

    #[test]
    fn performance_billing_requires_yaas() {
        let mut v = minimal();
        v["billing"] = json!({"performance": ["app"]});
        assert!(errors(v).iter().any(|e| e.contains("not managed by yaas")));
    }
}
