//! Nodes, request-sum gate-keeping, placement and migration.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cfs::{CpuNode, Millicores, PodId, PodRuntime, PodSpec, WORK_PER_CPU_US};
use crate::engine::SimTime;
use crate::error::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub cores: u32,
}

impl NodeSpec {
    pub fn capacity(&self) -> Millicores {
        Millicores(self.cores as u64 * 1000)
    }
}

/// Timestamped samples of a monotone counter, for windowed averages.
#[derive(Debug, Clone, Default)]
pub struct CounterWindow {
    samples: VecDeque<(SimTime, u64)>,
}

impl CounterWindow {
    pub fn record(&mut self, t: SimTime, value: u64, keep: SimTime) {
        self.samples.push_back((t, value));
        // keep one sample at or before t - keep so the full window stays answerable
        while self.samples.len() > 2 && self.samples[1].0 + keep <= t {
            self.samples.pop_front();
        }
    }

    /// Average increase per microsecond over the last `window`, ending at the latest sample.
    ///
    /// Uses the newest sample at least `window` old, or the oldest one available.
    pub fn rate(&self, window: SimTime) -> f64 {
        let Some(&(t_end, v_end)) = self.samples.back() else {
            return 0.0;
        };
        let start = self
            .samples
            .iter()
            .rev()
            .find(|(t, _)| *t + window <= t_end)
            .or_else(|| self.samples.front())
            .copied();
        match start {
            Some((t0, v0)) if t_end > t0 => (v_end - v0) as f64 / (t_end - t0).micros() as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub spec: NodeSpec,
    pub cpu: CpuNode,
    pub allocated: Millicores,
    pub busy_window: CounterWindow,
    /// Windowed utilization N as of the last control tick.
    pub utilization: f64,
}

impl NodeState {
    pub fn new(spec: NodeSpec, period: SimTime) -> Self {
        let cpu = CpuNode::new(spec.cores, period);
        Self {
            spec,
            cpu,
            allocated: Millicores(0),
            busy_window: CounterWindow::default(),
            utilization: 0.0,
        }
    }

    pub fn capacity(&self) -> Millicores {
        self.spec.capacity()
    }

    pub fn spare(&self) -> Millicores {
        Millicores(self.capacity().0.saturating_sub(self.allocated.0))
    }

    /// Gate-keeping: the sum of requests on a node never exceeds its capacity.
    pub fn admits(&self, creq: Millicores) -> bool {
        self.allocated.0 + creq.0 <= self.capacity().0
    }

    /// N over `window`: accrued CPU divided by capacity-time.
    pub fn node_utilization(&self, window: SimTime) -> f64 {
        if window.micros() == 0 {
            return 0.0;
        }
        self.busy_window.rate(window) / (self.spec.cores as f64 * WORK_PER_CPU_US as f64)
    }
}

/// Gate-keeping check. On success `allocated` grows by `spec.creq`.
pub fn admit_pod(node: &mut NodeState, spec: &PodSpec) -> bool {
    if node.admits(spec.creq) {
        node.allocated.0 += spec.creq.0;
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementError {
    NoFit { creq: Millicores },
}

impl fmt::Display for PlacementError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacementError::NoFit { creq } => write!(f, "no node admits a pod requesting {creq}"),
        }
    }
}

/// Orders candidate nodes for a new pod. The first admitting node wins.
pub trait PlacementStrategy: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn candidates(&self, nodes: &[NodeState]) -> Vec<usize>;
}

#[derive(Debug, Default)]
pub struct FirstFit;

impl PlacementStrategy for FirstFit {
    fn name(&self) -> &'static str {
        "first-fit"
    }

    fn candidates(&self, nodes: &[NodeState]) -> Vec<usize> {
        (0..nodes.len()).collect()
    }
}

#[derive(Debug, Default)]
pub struct LeastAllocated;

impl PlacementStrategy for LeastAllocated {
    fn name(&self) -> &'static str {
        "least-allocated"
    }

    fn candidates(&self, nodes: &[NodeState]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..nodes.len()).collect();
        // compare allocated/capacity by cross-multiplication to stay exact
        idx.sort_by(|&a, &b| {
            let (na, nb) = (&nodes[a], &nodes[b]);
            (na.allocated.0 as u128 * nb.capacity().0 as u128)
                .cmp(&(nb.allocated.0 as u128 * na.capacity().0 as u128))
                .then(a.cmp(&b))
        });
        idx
    }
}

#[derive(Debug, Default)]
pub struct LeastUtilized;

impl PlacementStrategy for LeastUtilized {
    fn name(&self) -> &'static str {
        "least-utilized"
    }

    fn candidates(&self, nodes: &[NodeState]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..nodes.len()).collect();
        idx.sort_by(|&a, &b| {
            nodes[a]
                .utilization
                .total_cmp(&nodes[b].utilization)
                .then(a.cmp(&b))
        });
        idx
    }
}

type StrategyCtor = fn() -> Box<dyn PlacementStrategy>;

const PLACEMENT_STRATEGIES: &[(&str, StrategyCtor)] = &[
    ("first-fit", || Box::new(FirstFit)),
    ("least-allocated", || Box::new(LeastAllocated)),
    ("least-utilized", || Box::new(LeastUtilized)),
];

pub fn placement_names() -> Vec<&'static str> {
    PLACEMENT_STRATEGIES.iter().map(|(n, _)| *n).collect()
}

pub fn placement_strategy(name: &str) -> Option<Box<dyn PlacementStrategy>> {
    PLACEMENT_STRATEGIES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slo {
    pub latency_ms: f64,
    pub percentile: f64,
}

#[derive(Debug, Clone)]
pub struct DeploymentState {
    pub id: String,
    pub template: PodSpec,
    pub replicas: Vec<PodId>,
    pub slo: Slo,
    pub policy: usize,
    pub rr_cursor: usize,
    /// CPU work of replicas that no longer exist.
    pub retired_cpu: u64,
    pub retired_throttle_events: u64,
    pub cpu_window: CounterWindow,
}

#[derive(Debug)]
pub struct Cluster {
    pub nodes: Vec<NodeState>,
    pod_node: BTreeMap<PodId, usize>,
    next_pod: PodId,
}

impl Cluster {
    pub fn new(specs: Vec<NodeSpec>, period: SimTime) -> Self {
        Self {
            nodes: specs
                .into_iter()
                .map(|s| NodeState::new(s, period))
                .collect(),
            pod_node: BTreeMap::new(),
            next_pod: 0,
        }
    }

    pub fn node_of(&self, pod: PodId) -> Option<usize> {
        self.pod_node.get(&pod).copied()
    }

    pub fn pod(&self, pod: PodId) -> Option<&PodRuntime> {
        self.nodes[self.node_of(pod)?].cpu.pod(pod)
    }

    pub fn pod_mut(&mut self, pod: PodId) -> Option<&mut PodRuntime> {
        let n = self.node_of(pod)?;
        self.nodes[n].cpu.pod_mut(pod)
    }

    pub fn pod_ids(&self) -> impl Iterator<Item = PodId> + '_ {
        self.pod_node.keys().copied()
    }

    /// Places a new pod on a specific node, subject to gate-keeping.
    pub fn place_on(&mut self, spec: PodSpec, node: usize) -> Result<PodId, PlacementError> {
        let creq = spec.creq;
        let target = self
            .nodes
            .get_mut(node)
            .ok_or(PlacementError::NoFit { creq })?;
        if !admit_pod(target, &spec) {
            return Err(PlacementError::NoFit { creq });
        }
        let id = self.next_pod;
        self.next_pod += 1;
        target.cpu.pods.push(PodRuntime::new(id, spec));
        self.pod_node.insert(id, node);
        Ok(id)
    }

    /// First node in strategy order that admits the pod.
    pub fn choose_node(&self, creq: Millicores, strategy: &dyn PlacementStrategy) -> Option<usize> {
        strategy
            .candidates(&self.nodes)
            .into_iter()
            .find(|&n| self.nodes[n].admits(creq))
    }

    pub fn place_pod(
        &mut self,
        spec: PodSpec,
        strategy: &dyn PlacementStrategy,
    ) -> Result<(PodId, usize), PlacementError> {
        let node = self
            .choose_node(spec.creq, strategy)
            .ok_or(PlacementError::NoFit { creq: spec.creq })?;
        let id = self.place_on(spec, node)?;
        Ok((id, node))
    }

    /// Removes a pod, releasing its request. Returns its runtime state.
    pub fn remove_pod(&mut self, pod: PodId) -> Option<PodRuntime> {
        let n = self.pod_node.remove(&pod)?;
        let node = &mut self.nodes[n];
        let pos = node.cpu.pods.iter().position(|p| p.id == pod)?;
        let rt = node.cpu.pods.remove(pos);
        node.allocated.0 -= rt.spec.creq.0;
        Some(rt)
    }

    /// Moves a pod with its queue to `dest`. Aborts, leaving the pod in place, if `dest` does not admit it.
    pub fn migrate_pod(
        &mut self,
        pod: PodId,
        dest: usize,
        now: SimTime,
        downtime: SimTime,
    ) -> Result<(), SimError> {
        let src = self
            .node_of(pod)
            .ok_or_else(|| SimError::Invariant(format!("unknown pod {pod}")))?;
        if src == dest {
            return Ok(());
        }
        let creq = self.pod(pod).map(|p| p.spec.creq).unwrap_or_default();
        if dest >= self.nodes.len() || !self.nodes[dest].admits(creq) {
            return Err(SimError::config(format!(
                "node {dest} does not admit pod {pod} ({creq})"
            )));
        }
        let mut rt = self.remove_pod(pod).expect("pod located above");
        if downtime.micros() > 0 {
            rt.paused_until = Some(now + downtime);
        }
        // Quota accounting follows the pod; periods share phase across nodes.
        self.nodes[dest].allocated.0 += rt.spec.creq.0;
        self.nodes[dest].cpu.pods.push(rt);
        self.pod_node.insert(pod, dest);
        Ok(())
    }

    /// Changes a pod's request if its node admits the difference.
    pub fn set_creq(&mut self, pod: PodId, creq: Millicores) -> Result<(), SimError> {
        let n = self
            .node_of(pod)
            .ok_or_else(|| SimError::Invariant(format!("unknown pod {pod}")))?;
        let node = &mut self.nodes[n];
        let current = node.cpu.pod(pod).expect("indexed pod").spec.creq;
        let after = node.allocated.0 - current.0 + creq.0;
        if after > node.capacity().0 {
            return Err(SimError::config(format!(
                "node {} cannot raise pod {pod} to {creq}: {after}m > {}",
                node.spec.id,
                node.capacity()
            )));
        }
        let rt = node.cpu.pod_mut(pod).expect("indexed pod");
        if let Some(lim) = rt.spec.clim {
            if lim < creq {
                rt.spec.clim = Some(creq);
            }
        }
        rt.spec.creq = creq;
        node.allocated = Millicores(after);
        Ok(())
    }

    /// Nodes whose request sum exceeds capacity (should always be empty).
    pub fn gatekeeping_violations(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter_map(|n| {
                let sum: u64 = n.cpu.pods.iter().map(|p| p.spec.creq.0).sum();
                (sum > n.capacity().0 || sum != n.allocated.0).then(|| {
                    format!(
                        "node {}: sum creq {sum}m, booked {}, capacity {}",
                        n.spec.id,
                        n.allocated,
                        n.capacity()
                    )
                })
            })
            .collect()
    }

    /// Total CPU work accrued on all nodes.
    pub fn total_busy(&self) -> u64 {
        self.nodes.iter().map(|n| n.cpu.busy).sum()
    }
}
