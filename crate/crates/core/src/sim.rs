//! Event loop tying the CPU model, cluster, workloads, policies, billing and metrics together.
//!
//! Between events the cluster runs at constant per-pod rates. The loop jumps
//! to the earliest of the next queued event and every node's next
//! breakpoint, integrates service over the gap, forwards completed requests,
//! then fires the events due at that instant in sequence order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::autoscaler::{
    apply_action, build_policy, DeploymentView, NodeView, ReplicaView, ScalingAction, ScalingPolicy,
};
use crate::billing::{accrue, perf_rate_fn, BillRecord, BillingSnapshot, RateCard, Scheme};
use crate::cfs::{work_to_cpu_us, Completion, PodId, Request};
use crate::cluster::{
    placement_strategy, Cluster, CounterWindow, DeploymentState, PlacementStrategy, Slo,
};
use crate::engine::{EventKind, EventQueue, EventRecord, RngStream, SimTime};
use crate::error::SimError;
use crate::metrics::{
    percentile, slo_attainment, time_to_meet_slo, ActionRecord, Conservation, DeploymentReport,
    LatencyRecorder, MetricsReport, OverageCheck, PeriodRecord, RequestRecord, SloStep, SummaryRow,
    TimeseriesRow, WindowPoint, WorkloadReport,
};
use crate::scenario::ScenarioConfig;
use crate::workload::{round_robin, stream_id, ArrivalGenerator, DemandSampler};

pub const REPORT_SCHEMA: &str = "cfs-sim/report-v1";

/// Work units per µs that make one millicore.
const WORK_PER_MILLICORE_US: f64 = 1000.0;

struct WorkloadRt {
    id: String,
    generator: ArrivalGenerator,
    samplers: Vec<DemandSampler>,
    stages: Vec<usize>,
    arrivals: u64,
    completed: u64,
    end_to_end: LatencyRecorder,
}

struct DeploymentRt {
    latency: LatencyRecorder,
    /// (completion, latency µs) inside the policy's latency window.
    recent: VecDeque<(SimTime, u64)>,
    /// (completion, latency µs) inside the SLO measurement window.
    slo_recent: VecDeque<(SimTime, u64)>,
    windows: Vec<WindowPoint>,
    cpu_at_last_tick: u64,
    util_m: f64,
    resource: BillRecord,
    utilization: BillRecord,
    performance: Option<BillRecord>,
    evaluations: u64,
    last_action_eval: Option<u64>,
    actions: usize,
    failed_actions: usize,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    end: SimTime,
    period: SimTime,
    tick: SimTime,
    warmup: SimTime,
    node_window: SimTime,
    slo_window: SimTime,
    keep: SimTime,
    downtime: SimTime,
    queue: EventQueue,
    cluster: Cluster,
    deps: Vec<DeploymentState>,
    deps_rt: Vec<DeploymentRt>,
    policies: Vec<Box<dyn ScalingPolicy>>,
    placement: Box<dyn PlacementStrategy>,
    card: RateCard,
    workloads: Vec<WorkloadRt>,
    pod_windows: BTreeMap<PodId, CounterWindow>,
    next_request: u64,
    last_tick: SimTime,
    period_index: u64,
    gate_checks: u64,
    timeseries: Vec<TimeseriesRow>,
    actions: Vec<ActionRecord>,
    overage_checks: Vec<OverageCheck>,
    requests: Vec<RequestRecord>,
    periods: Vec<PeriodRecord>,
}

/// Runs a validated scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.run_to_end()?;
    sim.report()
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        let (cluster, pods) = cfg.initial_cluster()?;
        let placement = placement_strategy(&cfg.placement)
            .ok_or_else(|| SimError::config(format!("unknown placement {:?}", cfg.placement)))?;
        let rate_fn = perf_rate_fn(&cfg.billing.perf_rate_fn).ok_or_else(|| {
            SimError::config(format!(
                "unknown perf_rate_fn {:?}",
                cfg.billing.perf_rate_fn
            ))
        })?;
        let card = RateCard::new(cfg.billing.base_rate_per_core_hour, rate_fn);
        let performance = cfg.performance_billed();

        let mut policies = Vec::new();
        let mut deps = Vec::new();
        let mut deps_rt = Vec::new();
        let mut keep = SimTime::from_secs_f64(cfg.node_window_s);
        let warmup = SimTime::from_secs_f64(cfg.warmup_s);
        for (i, d) in cfg.deployments.iter().enumerate() {
            let policy = build_policy(&cfg.policy_for(d)).map_err(SimError::Config)?;
            keep = keep
                .max(policy.config().util_window())
                .max(policy.config().latency_window());
            let perf = if performance.contains(&d.id) {
                if policy.billing_target().is_none() {
                    return Err(SimError::config(format!(
                        "performance billing needs a yaas-managed deployment, {} is not",
                        d.id
                    )));
                }
                Some(BillRecord::new(&d.id, Scheme::Performance))
            } else {
                None
            };
            deps.push(DeploymentState {
                id: d.id.clone(),
                template: cfg.pod_spec(i),
                replicas: pods[i].clone(),
                slo: Slo {
                    latency_ms: d.slo.ms,
                    percentile: d.slo.percentile,
                },
                policy: i,
                rr_cursor: 0,
                retired_cpu: 0,
                retired_throttle_events: 0,
                cpu_window: CounterWindow::default(),
            });
            deps_rt.push(DeploymentRt {
                latency: LatencyRecorder::new(warmup),
                recent: VecDeque::new(),
                slo_recent: VecDeque::new(),
                windows: Vec::new(),
                cpu_at_last_tick: 0,
                util_m: 0.0,
                resource: BillRecord::new(&d.id, Scheme::Resource),
                utilization: BillRecord::new(&d.id, Scheme::Utilization),
                performance: perf,
                evaluations: 0,
                last_action_eval: None,
                actions: 0,
                failed_actions: 0,
            });
            policies.push(policy);
        }

        let index: BTreeMap<&str, usize> = cfg
            .deployments
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect();
        let workloads = cfg
            .workloads
            .iter()
            .map(|w| WorkloadRt {
                id: w.id.clone(),
                generator: ArrivalGenerator::new(
                    w.arrival.clone(),
                    RngStream::new(cfg.seed, stream_id(&format!("{}/arrival", w.id))),
                ),
                samplers: w
                    .stages
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        DemandSampler::new(
                            s.demand.clone(),
                            RngStream::new(cfg.seed, stream_id(&format!("{}/stage{k}", w.id))),
                        )
                    })
                    .collect(),
                stages: w
                    .stages
                    .iter()
                    .map(|s| index[s.deployment.as_str()])
                    .collect(),
                arrivals: 0,
                completed: 0,
                end_to_end: LatencyRecorder::new(warmup),
            })
            .collect();

        let tick = cfg.tick();
        Ok(Self {
            end: cfg.duration(),
            period: cfg.period(),
            tick,
            warmup,
            node_window: SimTime::from_secs_f64(cfg.node_window_s),
            slo_window: cfg.slo_window(),
            keep: keep.max(cfg.slo_window()) + tick,
            downtime: SimTime::from_millis(cfg.migration_downtime_ms),
            queue: EventQueue::new(),
            cluster,
            deps,
            deps_rt,
            policies,
            placement,
            card,
            workloads,
            pod_windows: BTreeMap::new(),
            next_request: 0,
            last_tick: SimTime::ZERO,
            period_index: 0,
            gate_checks: 0,
            timeseries: Vec::new(),
            actions: Vec::new(),
            overage_checks: Vec::new(),
            requests: Vec::new(),
            periods: Vec::new(),
            cfg,
        })
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        let end = self.end;
        for w in 0..self.workloads.len() {
            if let Some(t) = self.workloads[w].generator.next_arrival(SimTime::ZERO)? {
                if t < end {
                    self.queue.schedule(t, EventKind::Arrival, w)?;
                }
            }
        }
        if self.period <= end {
            self.queue
                .schedule(self.period, EventKind::PeriodBoundary, 0)?;
        }
        if self.tick <= end {
            self.queue.schedule(self.tick, EventKind::ControlTick, 0)?;
        }
        self.queue.schedule(end, EventKind::End, 0)?;

        loop {
            let now = self.queue.now();
            while let Some(ev) = self.queue.pop_due(now) {
                self.handle(ev)?;
            }
            if now >= end {
                break;
            }
            let rates: Vec<Vec<u64>> = self
                .cluster
                .nodes
                .iter()
                .map(|n| n.cpu.rates(now))
                .collect();
            let period_end =
                SimTime((now.micros() / self.period.micros() + 1) * self.period.micros());
            let mut t = self.queue.peek_due().unwrap_or(end).min(end);
            for (node, r) in self.cluster.nodes.iter().zip(&rates) {
                t = t.min(node.cpu.next_breakpoint(r, now, period_end, None));
            }
            if t <= now {
                return Err(SimError::Invariant(format!("no progress at {now}")));
            }
            let mut done = Vec::new();
            for (node, r) in self.cluster.nodes.iter_mut().zip(&rates) {
                done.extend(node.cpu.advance(r, now, t - now)?);
            }
            self.queue.advance_to(t)?;
            for c in done {
                self.on_completion(c, t)?;
            }
        }
        if self.queue.now() > self.last_tick {
            self.accrue_bills(self.queue.now())?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: EventRecord) -> Result<(), SimError> {
        match ev.kind {
            EventKind::Arrival => self.on_arrival(ev.target),
            EventKind::PeriodBoundary => self.on_period_boundary(),
            EventKind::ControlTick => self.on_control_tick(),
            EventKind::Breakpoint | EventKind::End => Ok(()),
        }
    }

    fn dispatch(&mut self, dep: usize, req: Request) -> Result<(), SimError> {
        let d = &mut self.deps[dep];
        let pod = round_robin(&d.replicas, &mut d.rr_cursor)
            .ok_or_else(|| SimError::Invariant(format!("deployment {} has no replicas", d.id)))?;
        self.cluster
            .pod_mut(pod)
            .ok_or_else(|| SimError::Invariant(format!("replica {pod} of {} is not placed", d.id)))?
            .queue
            .push_back(req);
        Ok(())
    }

    fn on_arrival(&mut self, w: usize) -> Result<(), SimError> {
        let now = self.queue.now();
        let wl = &mut self.workloads[w];
        let demand = wl.samplers[0].sample();
        let req = Request::new(self.next_request, w, 0, now, now, demand);
        self.next_request += 1;
        wl.arrivals += 1;
        let dep = wl.stages[0];
        if let Some(t) = wl.generator.next_arrival(now)? {
            if t < self.end {
                self.queue.schedule(t, EventKind::Arrival, w)?;
            }
        }
        self.dispatch(dep, req)
    }

    fn on_completion(&mut self, c: Completion, now: SimTime) -> Result<(), SimError> {
        let req = c.request;
        let w = req.workload;
        let dep = self.workloads[w].stages[req.stage];
        let latency = req.latency().unwrap_or_default();
        let rt = &mut self.deps_rt[dep];
        rt.latency.record(now, latency);
        rt.recent.push_back((now, latency.micros()));
        rt.slo_recent.push_back((now, latency.micros()));
        if self.cfg.metrics.record_requests {
            self.requests.push(RequestRecord {
                workload: self.workloads[w].id.clone(),
                stage: req.stage,
                deployment: self.deps[dep].id.clone(),
                request: req.id,
                arrival_us: req.arrival.micros(),
                service_start_us: req.service_start.unwrap_or(now).micros(),
                completion_us: now.micros(),
                latency_us: latency.micros(),
                execution_us: req.execution_time().unwrap_or_default().micros(),
            });
        }
        let wl = &mut self.workloads[w];
        let next = req.stage + 1;
        if next < wl.stages.len() {
            let demand = wl.samplers[next].sample();
            let fwd = Request::new(req.id, w, next, req.origin, now, demand);
            let dep = wl.stages[next];
            return self.dispatch(dep, fwd);
        }
        wl.completed += 1;
        wl.end_to_end.record(now, now - req.origin);
        Ok(())
    }

    fn on_period_boundary(&mut self) -> Result<(), SimError> {
        let now = self.queue.now();
        for node in &mut self.cluster.nodes {
            if self.cfg.metrics.record_periods {
                for p in &node.cpu.pods {
                    self.periods.push(PeriodRecord {
                        period: self.period_index,
                        deployment: self.deps[p.spec.deployment].id.clone(),
                        pod: p.id,
                        cpu_us: work_to_cpu_us(p.consumed_in_period),
                        throttled: p.throttled,
                    });
                }
            }
            node.cpu.on_period_boundary();
        }
        self.period_index += 1;
        let next = now + self.period;
        if next <= self.end {
            self.queue.schedule(next, EventKind::PeriodBoundary, 0)?;
        }
        Ok(())
    }

    fn deployment_cpu(&self, d: usize) -> u64 {
        let dep = &self.deps[d];
        dep.retired_cpu
            + dep
                .replicas
                .iter()
                .filter_map(|&p| self.cluster.pod(p))
                .map(|p| p.cumulative_cpu)
                .sum::<u64>()
    }

    fn backlog(&self, d: usize) -> usize {
        self.deps[d]
            .replicas
            .iter()
            .filter_map(|&p| self.cluster.pod(p))
            .map(|p| p.queue.len())
            .sum()
    }

    fn total_creq(&self, d: usize) -> u64 {
        self.deps[d]
            .replicas
            .iter()
            .filter_map(|&p| self.cluster.pod(p))
            .map(|p| p.spec.creq.0)
            .sum()
    }

    /// Charges every deployment for `[last_tick, now)` at the requests held and CPU consumed over it.
    fn accrue_bills(&mut self, now: SimTime) -> Result<(), SimError> {
        let interval = now - self.last_tick;
        if interval.micros() == 0 {
            return Ok(());
        }
        for d in 0..self.deps.len() {
            let cpu = self.deployment_cpu(d);
            let creq = self.total_creq(d);
            let target = self.policies[d].billing_target();
            let rt = &mut self.deps_rt[d];
            let util_m = (cpu - rt.cpu_at_last_tick) as f64
                / interval.micros() as f64
                / WORK_PER_MILLICORE_US;
            rt.cpu_at_last_tick = cpu;
            let snap = BillingSnapshot {
                creq_m: creq as f64,
                util_m,
                n_target: target,
            };
            let secs = interval.as_secs_f64();
            accrue(&mut rt.resource, secs, &snap, &self.card)?;
            accrue(&mut rt.utilization, secs, &snap, &self.card)?;
            if let Some(perf) = rt.performance.as_mut() {
                accrue(perf, secs, &snap, &self.card)?;
            }
        }
        Ok(())
    }

    fn on_control_tick(&mut self) -> Result<(), SimError> {
        let now = self.queue.now();
        let keep = self.keep;
        for node in &mut self.cluster.nodes {
            node.busy_window.record(now, node.cpu.busy, keep);
            node.utilization = node.node_utilization(self.node_window);
        }
        let live: Vec<(PodId, u64)> = self
            .cluster
            .pod_ids()
            .map(|p| (p, self.cluster.pod(p).map_or(0, |r| r.cumulative_cpu)))
            .collect();
        self.pod_windows
            .retain(|p, _| live.iter().any(|(q, _)| q == p));
        for (p, cpu) in live {
            self.pod_windows
                .entry(p)
                .or_default()
                .record(now, cpu, keep);
        }

        let mut p99_window = Vec::with_capacity(self.deps.len());
        for d in 0..self.deps.len() {
            let cpu = self.deployment_cpu(d);
            let backlog = self.backlog(d);
            let cfg = self.policies[d].config();
            let (util_window, latency_window) = (cfg.util_window(), cfg.latency_window());
            let dep = &mut self.deps[d];
            dep.cpu_window.record(now, cpu, keep);
            let rt = &mut self.deps_rt[d];
            rt.util_m = dep.cpu_window.rate(util_window) / WORK_PER_MILLICORE_US;
            rt.latency.take_window();
            while rt
                .slo_recent
                .front()
                .is_some_and(|&(t, _)| t + self.slo_window <= now)
            {
                rt.slo_recent.pop_front();
            }
            let samples: Vec<u64> = rt.slo_recent.iter().map(|&(_, l)| l).collect();
            rt.windows.push(WindowPoint {
                start: now.saturating_sub(self.slo_window),
                end: now,
                percentile_us: percentile(&samples, dep.slo.percentile),
                backlog,
            });
            p99_window.push(percentile(&samples, 99.0));
            while rt
                .recent
                .front()
                .is_some_and(|&(t, _)| t + latency_window <= now)
            {
                rt.recent.pop_front();
            }
        }

        self.accrue_bills(now)?;
        let violations = self.cluster.gatekeeping_violations();
        if !violations.is_empty() {
            return Err(SimError::Invariant(format!(
                "gate-keeping violated at {now}: {}",
                violations.join("; ")
            )));
        }
        self.gate_checks += 1;

        for d in 0..self.deps.len() {
            let sync = self.policies[d].config().sync_period().micros();
            if sync > 0 && now.micros().is_multiple_of(sync) {
                self.evaluate_policy(d, now)?;
            }
        }

        let t_s = now.as_secs_f64();
        for (d, p99) in p99_window.into_iter().enumerate() {
            self.timeseries.push(TimeseriesRow {
                t_s,
                deployment: Some(self.deps[d].id.clone()),
                replicas: Some(self.deps[d].replicas.len()),
                total_creq_m: Some(self.total_creq(d)),
                util_m: Some(self.deps_rt[d].util_m),
                p99_ms_window: p99.map(|us| us as f64 / 1000.0),
                node_id: None,
                node_util: None,
            });
        }
        for node in &self.cluster.nodes {
            self.timeseries.push(TimeseriesRow {
                t_s,
                deployment: None,
                replicas: None,
                total_creq_m: None,
                util_m: None,
                p99_ms_window: None,
                node_id: Some(node.spec.id.clone()),
                node_util: Some(node.utilization),
            });
        }

        self.last_tick = now;
        let next = now + self.tick;
        if next <= self.end {
            self.queue.schedule(next, EventKind::ControlTick, 0)?;
        }
        Ok(())
    }

    fn view(&self, d: usize) -> DeploymentView {
        let dep = &self.deps[d];
        let cfg = self.policies[d].config();
        let util_window = cfg.util_window();
        let replicas = dep
            .replicas
            .iter()
            .filter_map(|&pod| {
                let rt = self.cluster.pod(pod)?;
                Some(ReplicaView {
                    pod,
                    node: self.cluster.node_of(pod)?,
                    creq: rt.spec.creq,
                    util_m: self
                        .pod_windows
                        .get(&pod)
                        .map_or(0.0, |w| w.rate(util_window) / WORK_PER_MILLICORE_US),
                })
            })
            .collect();
        let recent: Vec<u64> = self.deps_rt[d].recent.iter().map(|&(_, l)| l).collect();
        DeploymentView {
            id: dep.id.clone(),
            template: dep.template.clone(),
            replicas,
            util_m: self.deps_rt[d].util_m,
            latency_ms: percentile(&recent, dep.slo.percentile).map(|us| us as f64 / 1000.0),
            backlog: self.backlog(d),
            slo: dep.slo,
        }
    }

    fn evaluate_policy(&mut self, d: usize, now: SimTime) -> Result<(), SimError> {
        let cooldown = self.policies[d].cooldown() as u64;
        let rt = &mut self.deps_rt[d];
        rt.evaluations += 1;
        if rt
            .last_action_eval
            .is_some_and(|last| rt.evaluations - last < cooldown)
        {
            return Ok(());
        }
        let view = self.view(d);
        let nodes = NodeView::from_cluster(&self.cluster);
        let decisions = self.policies[d].decide(&view, &nodes);
        let t_s = now.as_secs_f64();
        let mut acted = false;
        let mut slo_acted = false;
        for dec in decisions {
            if dec.action == ScalingAction::NoOp {
                if dec.slo_triggered {
                    self.actions.push(ActionRecord {
                        t_s,
                        deployment: view.id.clone(),
                        action: dec.action.to_string(),
                        reason: dec.reason,
                    });
                }
                continue;
            }
            let res = apply_action(
                &mut self.cluster,
                &mut self.deps[d],
                &dec.action,
                self.placement.as_ref(),
                now,
                self.downtime,
            );
            match res {
                Ok(()) => {
                    acted = true;
                    slo_acted |= dec.slo_triggered;
                    self.deps_rt[d].actions += 1;
                    self.actions.push(ActionRecord {
                        t_s,
                        deployment: view.id.clone(),
                        action: dec.action.to_string(),
                        reason: dec.reason,
                    });
                }
                Err(e) => {
                    self.deps_rt[d].failed_actions += 1;
                    self.actions.push(ActionRecord {
                        t_s,
                        deployment: view.id.clone(),
                        action: dec.action.to_string(),
                        reason: format!("failed: {e}; {}", dec.reason),
                    });
                    break;
                }
            }
        }
        if acted {
            self.deps_rt[d].last_action_eval = Some(self.deps_rt[d].evaluations);
        }
        if slo_acted {
            self.overage_checks.push(OverageCheck {
                t_s,
                deployment: view.id.clone(),
                util_m: view.util_m,
                creq_total_m: self.total_creq(d),
            });
        }
        Ok(())
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn report(&self) -> Result<MetricsReport, SimError> {
        let duration_s = self.end.as_secs_f64();
        let mut deployments = Vec::new();
        for (d, dep) in self.deps.iter().enumerate() {
            let rt = &self.deps_rt[d];
            let samples = rt.latency.samples();
            let ms = |p: f64| percentile(samples, p).map(|us| us as f64 / 1000.0);
            let slo_us = dep.slo.latency_ms * 1000.0;
            let measured: Vec<WindowPoint> = rt
                .windows
                .iter()
                .filter(|w| w.start >= self.warmup)
                .copied()
                .collect();
            let throttle_events = dep.retired_throttle_events
                + dep
                    .replicas
                    .iter()
                    .filter_map(|&p| self.cluster.pod(p))
                    .map(|p| p.throttle_events)
                    .sum::<u64>();
            let completed = rt.latency.completed_total;
            deployments.push(DeploymentReport {
                summary: SummaryRow {
                    deployment: dep.id.clone(),
                    replicas_final: dep.replicas.len(),
                    p50_ms: ms(50.0),
                    p95_ms: ms(95.0),
                    p99_ms: ms(99.0),
                    slo_ms: dep.slo.latency_ms,
                    slo_attainment: slo_attainment(&measured, slo_us),
                    throughput_rps: if duration_s > 0.0 {
                        completed as f64 / duration_s
                    } else {
                        0.0
                    },
                    throttle_events,
                    creq_seconds: rt.resource.creq_seconds,
                    util_seconds: rt.resource.util_seconds,
                    bill_resource: rt.resource.accrued,
                    bill_utilization: rt.utilization.accrued,
                    bill_performance: rt.performance.as_ref().map(|b| b.accrued),
                },
                mean_ms: rt.latency.mean_us().map(|us| us / 1000.0),
                completed,
                actions: rt.actions,
                failed_actions: rt.failed_actions,
                consumed_cost: rt.resource.util_seconds / 3600.0 * self.card.base_rate,
            });
        }

        let mut in_flight = vec![0u64; self.workloads.len()];
        for node in &self.cluster.nodes {
            for pod in &node.cpu.pods {
                for req in &pod.queue {
                    in_flight[req.workload] += 1;
                }
            }
        }
        let mut workloads = Vec::new();
        for (w, wl) in self.workloads.iter().enumerate() {
            if wl.completed + in_flight[w] != wl.arrivals {
                return Err(SimError::Invariant(format!(
                    "workload {}: {} completed + {} in flight != {} arrivals",
                    wl.id, wl.completed, in_flight[w], wl.arrivals
                )));
            }
            let samples = wl.end_to_end.samples();
            workloads.push(WorkloadReport {
                workload: wl.id.clone(),
                arrivals: wl.arrivals,
                completed: wl.completed,
                in_flight: in_flight[w],
                p50_ms: percentile(samples, 50.0).map(|us| us as f64 / 1000.0),
                p99_ms: percentile(samples, 99.0).map(|us| us as f64 / 1000.0),
                mean_ms: wl.end_to_end.mean_us().map(|us| us / 1000.0),
            });
        }

        let mut slo_steps = Vec::new();
        for (w, wc) in self.cfg.workloads.iter().enumerate() {
            let steps = wc.arrival.load_steps();
            let mut seen = BTreeSet::new();
            for &d in &self.workloads[w].stages {
                if !seen.insert(d) {
                    continue;
                }
                let slo_us = self.deps[d].slo.latency_ms * 1000.0;
                for &step in &steps {
                    slo_steps.push(SloStep {
                        deployment: self.deps[d].id.clone(),
                        step_s: step.as_secs_f64(),
                        time_to_meet_s: time_to_meet_slo(&self.deps_rt[d].windows, step, slo_us),
                    });
                }
            }
        }

        let pod_cpu_work = self.deps.iter().map(|d| d.retired_cpu).sum::<u64>()
            + self
                .cluster
                .nodes
                .iter()
                .flat_map(|n| &n.cpu.pods)
                .map(|p| p.cumulative_cpu)
                .sum::<u64>();
        let conservation = Conservation {
            pod_cpu_work,
            node_busy_work: self.cluster.total_busy(),
            gatekeeping_checks: self.gate_checks,
        };
        if conservation.pod_cpu_work != conservation.node_busy_work {
            return Err(SimError::Invariant(format!(
                "CPU conservation broken: pods {} != nodes {}",
                conservation.pod_cpu_work, conservation.node_busy_work
            )));
        }

        Ok(MetricsReport {
            schema: REPORT_SCHEMA.into(),
            seed: self.cfg.seed,
            duration_s,
            deployments,
            workloads,
            timeseries: self.timeseries.clone(),
            actions: self.actions.clone(),
            slo_steps,
            overage_checks: self.overage_checks.clone(),
            requests: self.requests.clone(),
            periods: self.periods.clone(),
            conservation,
        })
    }
}
