//! Control policies evaluated at fixed control ticks.
//!
//! Every policy implements [`ScalingPolicy`] and is registered by name in
//! [`POLICIES`]; scenarios pick one per deployment with `"kind": "<name>"`.

mod hpa;
mod yaas;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use hpa::{hpa_decide, Hpa, HpaRatio};
pub use yaas::{yaas_decide, Yaas};

use crate::cfs::{Millicores, PodId, PodSpec};
use crate::cluster::{Cluster, DeploymentState, PlacementStrategy, Slo};
use crate::engine::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpaConfig {
    /// cputhresh as a fraction of creq.
    #[serde(default = "HpaConfig::default_threshold")]
    pub threshold: f64,
    #[serde(default = "HpaConfig::default_max_replicas")]
    pub max_replicas: usize,
    #[serde(default = "one")]
    pub min_replicas: usize,
    /// Scale down once per-replica utilization falls to `threshold × creq × downscale_hysteresis`.
    #[serde(default = "HpaConfig::default_hysteresis")]
    pub downscale_hysteresis: f64,
    #[serde(default = "one_u32")]
    pub cooldown: u32,
}

impl HpaConfig {
    fn default_threshold() -> f64 {
        0.7
    }
    fn default_max_replicas() -> usize {
        10
    }
    fn default_hysteresis() -> f64 {
        0.5
    }
}

impl Default for HpaConfig {
    fn default() -> Self {
        Self {
            threshold: Self::default_threshold(),
            max_replicas: Self::default_max_replicas(),
            min_replicas: 1,
            downscale_hysteresis: Self::default_hysteresis(),
            cooldown: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YaasConfig {
    /// δ: how far above the SLO the observed percentile may go before acting.
    #[serde(default = "YaasConfig::default_slo_margin")]
    pub slo_margin: f64,
    /// Node utilization above which a node counts as congested.
    #[serde(default = "YaasConfig::default_t_cong")]
    pub t_cong: f64,
    #[serde(default = "YaasConfig::default_downscale_factor")]
    pub downscale_factor: f64,
    #[serde(default = "YaasConfig::default_cooldown")]
    pub cooldown: u32,
    #[serde(default = "YaasConfig::default_min_creq")]
    pub min_creq_m: u64,
    #[serde(default = "YaasConfig::default_max_replicas")]
    pub max_replicas: usize,
}

impl YaasConfig {
    fn default_slo_margin() -> f64 {
        0.05
    }
    fn default_t_cong() -> f64 {
        0.8
    }
    fn default_downscale_factor() -> f64 {
        0.7
    }
    fn default_cooldown() -> u32 {
        4
    }
    fn default_min_creq() -> u64 {
        10
    }
    fn default_max_replicas() -> usize {
        20
    }
}

impl Default for YaasConfig {
    fn default() -> Self {
        Self {
            slo_margin: Self::default_slo_margin(),
            t_cong: Self::default_t_cong(),
            downscale_factor: Self::default_downscale_factor(),
            cooldown: Self::default_cooldown(),
            min_creq_m: Self::default_min_creq(),
            max_replicas: Self::default_max_replicas(),
        }
    }
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

fn default_sync_period() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Registry name: `none`, `hpa`, `hpa-ratio` or `yaas`.
    pub kind: String,
    #[serde(default = "default_sync_period")]
    pub sync_period_s: f64,
    /// Utilization averaging window; defaults to the sync period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub util_window_s: Option<f64>,
    /// Latency percentile window; defaults to the sync period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_window_s: Option<f64>,
    #[serde(default)]
    pub hpa: HpaConfig,
    #[serde(default)]
    pub yaas: YaasConfig,
}

impl PolicyConfig {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            sync_period_s: default_sync_period(),
            util_window_s: None,
            latency_window_s: None,
            hpa: HpaConfig::default(),
            yaas: YaasConfig::default(),
        }
    }

    pub fn sync_period(&self) -> SimTime {
        SimTime::from_secs_f64(self.sync_period_s)
    }

    pub fn util_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.util_window_s.unwrap_or(self.sync_period_s))
    }

    pub fn latency_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.latency_window_s.unwrap_or(self.sync_period_s))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if policy_names().iter().all(|n| *n != self.kind) {
            errs.push(format!(
                "unknown policy kind {:?} (known: {})",
                self.kind,
                policy_names().join(", ")
            ));
        }
        if !(self.sync_period_s > 0.0) {
            errs.push("sync_period_s must be > 0".into());
        }
        if !(self.hpa.threshold > 0.0) {
            errs.push("hpa.threshold must be > 0".into());
        }
        if self.hpa.min_replicas < 1 || self.hpa.max_replicas < self.hpa.min_replicas {
            errs.push("hpa replica bounds must satisfy 1 <= min <= max".into());
        }
        if self.hpa.cooldown < 1 || self.yaas.cooldown < 1 {
            errs.push("cooldown must be >= 1 tick".into());
        }
        if !(self.yaas.t_cong > 0.0 && self.yaas.t_cong <= 1.0) {
            errs.push(format!(
                "yaas.t_cong must be in (0, 1], got {}",
                self.yaas.t_cong
            ));
        }
        if !(self.yaas.downscale_factor < 1.0 && self.yaas.downscale_factor > 0.0) {
            errs.push("yaas.downscale_factor must be in (0, 1)".into());
        }
        if self.yaas.slo_margin < 0.0 {
            errs.push("yaas.slo_margin must be >= 0".into());
        }
        if self.yaas.min_creq_m < 1 || self.yaas.max_replicas < 1 {
            errs.push("yaas.min_creq_m and yaas.max_replicas must be >= 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScalingAction {
    AddReplica { creq: Millicores },
    RemoveReplica { pod: PodId },
    SetCreq { per_replica: Millicores },
    Migrate { pod: PodId, dest: usize },
    NoOp,
}

impl ScalingAction {
    pub fn label(&self) -> &'static str {
        match self {
            ScalingAction::AddReplica { .. } => "AddReplica",
            ScalingAction::RemoveReplica { .. } => "RemoveReplica",
            ScalingAction::SetCreq { .. } => "SetCreq",
            ScalingAction::Migrate { .. } => "Migrate",
            ScalingAction::NoOp => "NoOp",
        }
    }
}

impl fmt::Display for ScalingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingAction::AddReplica { creq } => write!(f, "AddReplica({creq})"),
            ScalingAction::RemoveReplica { pod } => write!(f, "RemoveReplica(pod {pod})"),
            ScalingAction::SetCreq { per_replica } => write!(f, "SetCreq({per_replica})"),
            ScalingAction::Migrate { pod, dest } => write!(f, "Migrate(pod {pod} -> node {dest})"),
            ScalingAction::NoOp => f.write_str("NoOp"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: ScalingAction,
    pub reason: String,
    /// Raised in response to an SLO breach (checked for overage discipline).
    pub slo_triggered: bool,
}

impl Decision {
    pub fn new(action: ScalingAction, reason: impl Into<String>) -> Self {
        Self {
            action,
            reason: reason.into(),
            slo_triggered: false,
        }
    }

    pub fn noop(reason: impl Into<String>) -> Self {
        Self::new(ScalingAction::NoOp, reason)
    }

    fn slo(mut self) -> Self {
        self.slo_triggered = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaView {
    pub pod: PodId,
    pub node: usize,
    pub creq: Millicores,
    pub util_m: f64,
}

/// What a policy sees of one deployment at a control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentView {
    pub id: String,
    pub template: PodSpec,
    pub replicas: Vec<ReplicaView>,
    /// Windowed utilization U summed over replicas, in millicores.
    pub util_m: f64,
    /// Windowed latency at the SLO percentile.
    pub latency_ms: Option<f64>,
    pub backlog: usize,
    pub slo: Slo,
}

impl DeploymentView {
    pub fn total_creq(&self) -> Millicores {
        Millicores(self.replicas.iter().map(|r| r.creq.0).sum())
    }

    /// U − Σcreq.
    pub fn overage_m(&self) -> f64 {
        self.util_m - self.total_creq().0 as f64
    }

    pub fn breaches(&self, margin: f64) -> bool {
        match self.latency_ms {
            Some(l) => l > self.slo.latency_ms * (1.0 + margin),
            None => self.backlog > 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView {
    pub capacity: Millicores,
    pub allocated: Millicores,
    /// Windowed utilization N.
    pub utilization: f64,
}

impl NodeView {
    pub fn from_cluster(cluster: &Cluster) -> Vec<NodeView> {
        cluster
            .nodes
            .iter()
            .map(|n| NodeView {
                capacity: n.capacity(),
                allocated: n.allocated,
                utilization: n.utilization,
            })
            .collect()
    }
}

pub trait ScalingPolicy: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn config(&self) -> &PolicyConfig;
    fn cooldown(&self) -> u32;
    fn decide(&self, dep: &DeploymentView, nodes: &[NodeView]) -> Vec<Decision>;

    /// Node utilization a performance-based bill is priced at; `None` if the policy cannot be billed that way.
    fn billing_target(&self) -> Option<f64> {
        None
    }
}

/// Never acts.
#[derive(Debug)]
pub struct Static {
    cfg: PolicyConfig,
}

impl ScalingPolicy for Static {
    fn name(&self) -> &'static str {
        "none"
    }

    fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    fn cooldown(&self) -> u32 {
        1
    }

    fn decide(&self, _dep: &DeploymentView, _nodes: &[NodeView]) -> Vec<Decision> {
        vec![Decision::noop("static policy")]
    }
}

type PolicyCtor = fn(PolicyConfig) -> Box<dyn ScalingPolicy>;

pub const POLICIES: &[(&str, PolicyCtor)] = &[
    ("none", |cfg| Box::new(Static { cfg })),
    ("hpa", |cfg| Box::new(Hpa::new(cfg))),
    ("hpa-ratio", |cfg| Box::new(HpaRatio::new(cfg))),
    ("yaas", |cfg| Box::new(Yaas::new(cfg))),
];

pub fn policy_names() -> Vec<&'static str> {
    POLICIES.iter().map(|(n, _)| *n).collect()
}

pub fn build_policy(cfg: &PolicyConfig) -> Result<Box<dyn ScalingPolicy>, Vec<String>> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(errs);
    }
    let ctor = POLICIES
        .iter()
        .find(|(n, _)| *n == cfg.kind)
        .map(|(_, c)| c)
        .expect("validated kind");
    Ok(ctor(cfg.clone()))
}

/// Applies one action to the cluster. `Err` carries the rejection reason; the cluster is left unchanged.
pub fn apply_action(
    cluster: &mut Cluster,
    dep: &mut DeploymentState,
    action: &ScalingAction,
    placement: &dyn PlacementStrategy,
    now: SimTime,
    migration_downtime: SimTime,
) -> Result<(), String> {
    match action {
        ScalingAction::NoOp => Ok(()),
        ScalingAction::AddReplica { creq } => {
            let mut spec = dep.template.clone();
            spec.creq = *creq;
            if let Some(lim) = spec.clim {
                spec.clim = Some(lim.max(*creq));
            }
            let (pod, _) = cluster
                .place_pod(spec, placement)
                .map_err(|e| e.to_string())?;
            dep.replicas.push(pod);
            Ok(())
        }
        ScalingAction::RemoveReplica { pod } => {
            if dep.replicas.len() <= 1 {
                return Err("cannot remove the last replica".into());
            }
            let Some(pos) = dep.replicas.iter().position(|p| p == pod) else {
                return Err(format!("pod {pod} is not a replica of {}", dep.id));
            };
            let rt = cluster
                .remove_pod(*pod)
                .ok_or_else(|| format!("pod {pod} not placed"))?;
            dep.replicas.remove(pos);
            dep.retired_cpu += rt.cumulative_cpu;
            dep.retired_throttle_events += rt.throttle_events;
            // unfinished work moves to the surviving replicas
            for req in rt.queue {
                let target = crate::workload::round_robin(&dep.replicas, &mut dep.rr_cursor)
                    .expect("replicas remain");
                cluster
                    .pod_mut(target)
                    .expect("live replica")
                    .queue
                    .push_back(req);
            }
            Ok(())
        }
        ScalingAction::SetCreq { per_replica } => {
            let mut delta = vec![0i64; cluster.nodes.len()];
            for &pod in &dep.replicas {
                let node = cluster.node_of(pod).ok_or("replica not placed")?;
                let cur = cluster.pod(pod).ok_or("replica not placed")?.spec.creq.0 as i64;
                delta[node] += per_replica.0 as i64 - cur;
            }
            for (n, d) in delta.iter().enumerate() {
                let node = &cluster.nodes[n];
                if node.allocated.0 as i64 + d > node.capacity().0 as i64 {
                    return Err(format!("node {} cannot absorb +{d}m", node.spec.id));
                }
            }
            // shrink first so in-node moves never transiently overbook
            let mut order = dep.replicas.clone();
            order.sort_by_key(|&p| cluster.pod(p).map(|rt| rt.spec.creq.0 < per_replica.0));
            for pod in order {
                cluster
                    .set_creq(pod, *per_replica)
                    .map_err(|e| e.to_string())?;
            }
            dep.template.creq = *per_replica;
            Ok(())
        }
        ScalingAction::Migrate { pod, dest } => cluster
            .migrate_pod(*pod, *dest, now, migration_downtime)
            .map_err(|e| e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{CounterWindow, LeastAllocated, NodeSpec};

    fn cluster(cores: &[u32]) -> Cluster {
        let specs = cores
            .iter()
            .enumerate()
            .map(|(i, &c)| NodeSpec {
                id: format!("n{i}"),
                cores: c,
            })
            .collect();
        Cluster::new(specs, SimTime::from_millis(100))
    }

    fn deployment(cluster: &mut Cluster, creq: u64, replicas: &[usize]) -> DeploymentState {
        let template = PodSpec {
            creq: Millicores(creq),
            clim: None,
            parallelism: 1,
            deployment: 0,
        };
        let pods = replicas
            .iter()
            .map(|&n| cluster.place_on(template.clone(), n).unwrap())
            .collect();
        DeploymentState {
            id: "d".into(),
            template,
            replicas: pods,
            slo: Slo {
                latency_ms: 20.0,
                percentile: 99.0,
            },
            policy: 0,
            rr_cursor: 0,
            retired_cpu: 0,
            retired_throttle_events: 0,
            cpu_window: CounterWindow::default(),
        }
    }

    #[test]
    fn add_replica_when_it_fits() {
        let mut c = cluster(&[1, 1]);
        let mut d = deployment(&mut c, 400, &[0]);
        apply_action(
            &mut c,
            &mut d,
            &ScalingAction::AddReplica {
                creq: Millicores(400),
            },
            &LeastAllocated,
            SimTime::ZERO,
            SimTime::ZERO,
        )
        .unwrap();
        assert_eq!(d.replicas.len(), 2);
        assert_eq!(c.node_of(d.replicas[1]), Some(1));
    }

    #[test]
    fn set_creq_beyond_spare_is_rejected() {
        let mut c = cluster(&[1]);
        let mut d = deployment(&mut c, 400, &[0]);
        c.place_on(
            PodSpec {
                creq: Millicores(500),
                clim: None,
                parallelism: 1,
                deployment: 1,
            },
            0,
        )
        .unwrap();
        let err = apply_action(
            &mut c,
            &mut d,
            &ScalingAction::SetCreq {
                per_replica: Millicores(600),
            },
            &LeastAllocated,
            SimTime::ZERO,
            SimTime::ZERO,
        );
        assert!(err.is_err());
        assert_eq!(c.nodes[0].allocated, Millicores(900));
        assert!(c.gatekeeping_violations().is_empty());
    }

    #[test]
    fn migrate_moves_allocation() {
        let mut c = cluster(&[1, 1]);
        let mut d = deployment(&mut c, 700, &[0]);
        let pod = d.replicas[0];
        apply_action(
            &mut c,
            &mut d,
            &ScalingAction::Migrate { pod, dest: 1 },
            &LeastAllocated,
            SimTime::ZERO,
            SimTime::ZERO,
        )
        .unwrap();
        assert_eq!(c.nodes[0].allocated, Millicores(0));
        assert_eq!(c.nodes[1].allocated, Millicores(700));
    }

    #[test]
    fn remove_replica_requeues_work() {
        use crate::cfs::Request;
        let mut c = cluster(&[2]);
        let mut d = deployment(&mut c, 400, &[0, 0]);
        let victim = d.replicas[1];
        for i in 0..3 {
            c.pod_mut(victim).unwrap().queue.push_back(Request::new(
                i,
                0,
                0,
                SimTime::ZERO,
                SimTime::ZERO,
                10,
            ));
        }
        apply_action(
            &mut c,
            &mut d,
            &ScalingAction::RemoveReplica { pod: victim },
            &LeastAllocated,
            SimTime::ZERO,
            SimTime::ZERO,
        )
        .unwrap();
        assert_eq!(d.replicas.len(), 1);
        assert_eq!(c.pod(d.replicas[0]).unwrap().queue.len(), 3);
        assert_eq!(c.nodes[0].allocated, Millicores(400));
        let last = d.replicas[0];
        assert!(apply_action(
            &mut c,
            &mut d,
            &ScalingAction::RemoveReplica { pod: last },
            &LeastAllocated,
            SimTime::ZERO,
            SimTime::ZERO
        )
        .is_err());
    }

    #[test]
    fn registry_builds_every_policy() {
        for name in policy_names() {
            let p = build_policy(&PolicyConfig::new(name)).unwrap();
            assert_eq!(p.name(), name);
        }
        assert!(build_policy(&PolicyConfig::new("vpa")).is_err());
    }

    #[test]
    fn config_validation_collects_all_errors() {
        let mut cfg = PolicyConfig::new("yaas");
        cfg.yaas.t_cong = 1.5;
        cfg.yaas.downscale_factor = 1.0;
        cfg.yaas.cooldown = 0;
        assert_eq!(cfg.validate().len(), 3);
    }
}
