//! Fluid proportional-share CPU model with per-period quota enforcement.
//!
//! Rates are fixed-point micro-cores and CPU work is tracked in micro-core
//! microseconds, so every schedule whose rates are multiples of 1e-6 core is
//! reproduced to the exact microsecond. Breakpoints round up to the next whole
//! microsecond; the work applied in the final microsecond of a completion is
//! clamped to what the request still needed.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::SimError;

/// Rate resolution: one core equals this many rate units.
pub const MICROCORES_PER_CORE: u64 = 1_000_000;
/// Work units per microsecond of single-core CPU time.
pub const WORK_PER_CPU_US: u64 = MICROCORES_PER_CORE;

/// Default CFS bandwidth period.
pub const DEFAULT_PERIOD: SimTime = SimTime::from_millis(100);

/// CPU allocation in millicores (1000 m = one core).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Millicores(pub u64);

impl Millicores {
    pub fn as_microcores(self) -> u64 {
        self.0 * (MICROCORES_PER_CORE / 1000)
    }

    pub fn as_cores_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Quota in work units for one period of `period` length.
    pub fn quota_work(self, period: SimTime) -> u64 {
        // L/1000 cores × period µs × WORK_PER_CPU_US
        self.0 * period.micros() * (WORK_PER_CPU_US / 1000)
    }
}

impl std::fmt::Display for Millicores {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}m", self.0)
    }
}

pub fn work_to_cpu_us(work: u64) -> f64 {
    work as f64 / WORK_PER_CPU_US as f64
}

pub type PodId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodSpec {
    /// Shares weight R.
    pub creq: Millicores,
    /// Quota L; `None` means unlimited.
    pub clim: Option<Millicores>,
    pub parallelism: u32,
    pub deployment: usize,
}

impl PodSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.creq.0 < 1 {
            return Err("creq must be at least 1m".into());
        }
        if self.parallelism < 1 {
            return Err("parallelism must be at least 1".into());
        }
        if let Some(lim) = self.clim {
            if lim < self.creq {
                return Err(format!(
                    "clim {lim} is below creq {}; a limit must be >= the request",
                    self.creq
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub workload: usize,
    pub stage: usize,
    /// Arrival at the first stage of the chain.
    pub origin: SimTime,
    /// Arrival at this stage.
    pub arrival: SimTime,
    pub demand_us: u64,
    /// Outstanding work units.
    pub remaining: u64,
    pub service_start: Option<SimTime>,
    pub completion: Option<SimTime>,
}

impl Request {
    pub fn new(
        id: u64,
        workload: usize,
        stage: usize,
        origin: SimTime,
        arrival: SimTime,
        demand_us: u64,
    ) -> Self {
        Self {
            id,
            workload,
            stage,
            origin,
            arrival,
            demand_us,
            remaining: demand_us * WORK_PER_CPU_US,
            service_start: None,
            completion: None,
        }
    }

    pub fn latency(&self) -> Option<SimTime> {
        self.completion.map(|c| c - self.arrival)
    }

    pub fn execution_time(&self) -> Option<SimTime> {
        match (self.completion, self.service_start) {
            (Some(c), Some(s)) => Some(c - s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PodRuntime {
    pub id: PodId,
    pub spec: PodSpec,
    pub queue: VecDeque<Request>,
    pub consumed_in_period: u64,
    pub throttled: bool,
    pub cumulative_cpu: u64,
    pub throttle_events: u64,
    /// Service is suspended until this instant (migration downtime).
    pub paused_until: Option<SimTime>,
}

impl PodRuntime {
    pub fn new(id: PodId, spec: PodSpec) -> Self {
        Self {
            id,
            spec,
            queue: VecDeque::new(),
            consumed_in_period: 0,
            throttled: false,
            cumulative_cpu: 0,
            throttle_events: 0,
            paused_until: None,
        }
    }

    pub fn active_count(&self) -> usize {
        self.queue.len().min(self.spec.parallelism as usize)
    }

    fn is_paused(&self, now: SimTime) -> bool {
        self.paused_until.is_some_and(|t| t > now)
    }

    pub fn is_runnable(&self, now: SimTime) -> bool {
        !self.throttled && !self.is_paused(now) && !self.queue.is_empty()
    }

    pub fn quota_remaining(&self, period: SimTime) -> Option<u64> {
        self.spec
            .clim
            .map(|l| l.quota_work(period).saturating_sub(self.consumed_in_period))
    }
}

/// Water-filling allocation of `cores` among runnable entities.
///
/// Each entry is `(weight, cap)` with the cap in micro-cores. Unassigned
/// capacity is split in proportion to weight among uncapped entries; entries
/// whose share reaches their cap are frozen there and the excess redistributed.
/// The result sums to `min(cores, Σcaps)` exactly, leftover rate units from
/// integer division going to the entries with the largest fractional share.
pub fn allocate_rates(runnable: &[(u64, u64)], cores: u32) -> Vec<u64> {
    let mut rates = vec![0u64; runnable.len()];
    let mut open: Vec<usize> = (0..runnable.len()).filter(|&i| runnable[i].1 > 0).collect();
    let mut avail = cores as u64 * MICROCORES_PER_CORE;

    while !open.is_empty() && avail > 0 {
        let total_w: u128 = open.iter().map(|&i| runnable[i].0 as u128).sum();
        let saturated: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&i| avail as u128 * runnable[i].0 as u128 >= runnable[i].1 as u128 * total_w)
            .collect();
        if saturated.is_empty() {
            let mut given = 0u64;
            let mut fractions = Vec::with_capacity(open.len());
            for &i in &open {
                let num = avail as u128 * runnable[i].0 as u128;
                let share = (num / total_w) as u64;
                rates[i] = share;
                given += share;
                fractions.push((num % total_w, i));
            }
            // Largest remainder first, lower index on ties.
            fractions.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in fractions.iter().take((avail - given) as usize) {
                rates[i] += 1;
            }
            return rates;
        }
        for &i in &saturated {
            rates[i] = runnable[i].1;
            avail -= runnable[i].1;
        }
        open.retain(|i| !saturated.contains(i));
    }
    rates
}

/// Splits `total` into `n` near-equal parts, the first `total % n` one larger.
fn split_even(total: u64, n: usize) -> impl Iterator<Item = u64> {
    let n64 = n as u64;
    let base = total / n64;
    let extra = (total % n64) as usize;
    (0..n).map(move |k| base + u64::from(k < extra))
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Earliest instant at which the rate assignment changes.
///
/// `rates` is aligned with `pods`; zero means the pod is not being served.
pub fn next_breakpoint(
    pods: &[PodRuntime],
    rates: &[u64],
    now: SimTime,
    period: SimTime,
    period_end: SimTime,
    next_arrival: Option<SimTime>,
) -> SimTime {
    let mut bp = period_end;
    if let Some(a) = next_arrival {
        bp = bp.min(a);
    }
    for (pod, &rate) in pods.iter().zip(rates) {
        if let Some(p) = pod.paused_until.filter(|&p| p > now) {
            if !pod.queue.is_empty() {
                bp = bp.min(p);
            }
        }
        if rate == 0 {
            continue;
        }
        if let Some(q) = pod.quota_remaining(period) {
            bp = bp.min(now + SimTime(ceil_div(q, rate).max(1)));
        }
        let active = pod.active_count();
        for (req, req_rate) in pod.queue.iter().take(active).zip(split_even(rate, active)) {
            if req_rate > 0 {
                bp = bp.min(now + SimTime(ceil_div(req.remaining, req_rate).max(1)));
            }
        }
    }
    bp
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub pod: PodId,
    pub request: Request,
}

/// CPU side of one node: the pods it hosts and its accrued busy time.
#[derive(Debug, Clone)]
pub struct CpuNode {
    pub cores: u32,
    pub period: SimTime,
    pub pods: Vec<PodRuntime>,
    /// Total work accrued by all pods ever hosted here.
    pub busy: u64,
}

impl CpuNode {
    pub fn new(cores: u32, period: SimTime) -> Self {
        Self {
            cores,
            period,
            pods: Vec::new(),
            busy: 0,
        }
    }

    pub fn pod(&self, id: PodId) -> Option<&PodRuntime> {
        self.pods.iter().find(|p| p.id == id)
    }

    pub fn pod_mut(&mut self, id: PodId) -> Option<&mut PodRuntime> {
        self.pods.iter_mut().find(|p| p.id == id)
    }

    /// Instantaneous per-pod rates (micro-cores), aligned with `self.pods`.
    pub fn rates(&self, now: SimTime) -> Vec<u64> {
        let runnable: Vec<usize> = (0..self.pods.len())
            .filter(|&i| self.pods[i].is_runnable(now))
            .collect();
        let input: Vec<(u64, u64)> = runnable
            .iter()
            .map(|&i| {
                let p = &self.pods[i];
                (p.spec.creq.0, p.active_count() as u64 * MICROCORES_PER_CORE)
            })
            .collect();
        let alloc = allocate_rates(&input, self.cores);
        let mut rates = vec![0u64; self.pods.len()];
        for (k, &i) in runnable.iter().enumerate() {
            rates[i] = alloc[k];
        }
        rates
    }

    pub fn next_breakpoint(
        &self,
        rates: &[u64],
        now: SimTime,
        period_end: SimTime,
        next_arrival: Option<SimTime>,
    ) -> SimTime {
        next_breakpoint(
            &self.pods,
            rates,
            now,
            self.period,
            period_end,
            next_arrival,
        )
    }

    /// Integrates service over `[now, now + dt)` at constant `rates`.
    ///
    /// Returns requests completed at `now + dt`, stamped and dequeued.
    pub fn advance(
        &mut self,
        rates: &[u64],
        now: SimTime,
        dt: SimTime,
    ) -> Result<Vec<Completion>, SimError> {
        let mut done = Vec::new();
        if dt.micros() == 0 {
            return Ok(done);
        }
        let end = now + dt;
        let period = self.period;
        for (pod, &rate) in self.pods.iter_mut().zip(rates) {
            if rate == 0 {
                continue;
            }
            let active = pod.active_count();
            let full = rate * dt.micros();
            let budget = match pod.quota_remaining(period) {
                Some(q) => full.min(q),
                None => full,
            };
            let quota_bound = budget < full;
            let shares: Vec<u64> = if quota_bound {
                split_even(budget, active).collect()
            } else {
                split_even(rate, active).map(|r| r * dt.micros()).collect()
            };
            let mut applied_total = 0u64;
            for (k, (req, share)) in pod.queue.iter_mut().take(active).zip(shares).enumerate() {
                req.service_start.get_or_insert(now);
                let req_rate = split_even(rate, active).nth(k).unwrap_or(0);
                if share > req.remaining + req_rate {
                    return Err(SimError::Invariant(format!(
                        "pod {} request {} overshot its completion by more than 1us (remaining {}, step work {})",
                        pod.id, req.id, req.remaining, share
                    )));
                }
                let applied = share.min(req.remaining);
                req.remaining -= applied;
                applied_total += applied;
                if req.remaining == 0 {
                    req.completion = Some(end);
                }
            }
            pod.consumed_in_period += applied_total;
            pod.cumulative_cpu += applied_total;
            self.busy += applied_total;
            if let Some(q) = pod.spec.clim.map(|l| l.quota_work(period)) {
                if pod.consumed_in_period > q {
                    return Err(SimError::Invariant(format!(
                        "pod {} consumed {} work units, quota is {}",
                        pod.id, pod.consumed_in_period, q
                    )));
                }
                if pod.consumed_in_period == q && !pod.throttled {
                    pod.throttled = true;
                    pod.throttle_events += 1;
                }
            }
            let mut k = 0;
            while k < pod.queue.len().min(active) {
                if pod.queue[k].remaining == 0 {
                    let request = pod.queue.remove(k).expect("index in range");
                    done.push(Completion {
                        pod: pod.id,
                        request,
                    });
                } else {
                    k += 1;
                }
            }
        }
        Ok(done)
    }

    /// Resets per-period quota accounting. Returns each pod's consumption in the closing period.
    pub fn on_period_boundary(&mut self) -> Vec<(PodId, u64)> {
        self.pods
            .iter_mut()
            .map(|p| {
                let used = p.consumed_in_period;
                p.consumed_in_period = 0;
                p.throttled = false;
                (p.id, used)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CORE: u64 = MICROCORES_PER_CORE;

    fn spec(creq: u64, clim: Option<u64>, par: u32) -> PodSpec {
        PodSpec {
            creq: Millicores(creq),
            clim: clim.map(Millicores),
            parallelism: par,
            deployment: 0,
        }
    }

    fn req(id: u64, at: SimTime, demand_ms: u64) -> Request {
        Request::new(id, 0, 0, at, at, demand_ms * 1000)
    }

    /// Drives a single node from `start` to `end`, handling period boundaries.
    fn drive(node: &mut CpuNode, start: SimTime, end: SimTime) -> Vec<Completion> {
        let mut now = start;
        let mut out = Vec::new();
        while now < end {
            let rates = node.rates(now);
            let period_end =
                SimTime((now.micros() / node.period.micros() + 1) * node.period.micros());
            let bp = node.next_breakpoint(&rates, now, period_end, None).min(end);
            out.extend(node.advance(&rates, now, bp - now).unwrap());
            now = bp;
            if now.micros().is_multiple_of(node.period.micros()) {
                node.on_period_boundary();
            }
        }
        out
    }

    #[test]
    fn shares_split_40_60() {
        assert_eq!(
            allocate_rates(&[(400, CORE), (600, CORE)], 1),
            vec![400_000, 600_000]
        );
    }

    #[test]
    fn parallelism_caps_single_pod() {
        assert_eq!(allocate_rates(&[(100, CORE)], 4), vec![CORE]);
    }

    #[test]
    fn water_filling_hand_oracle() {
        assert_eq!(
            allocate_rates(&[(1, CORE), (1, 4 * CORE), (2, 4 * CORE)], 4),
            vec![CORE, CORE, 2 * CORE]
        );
    }

    #[test]
    fn water_filling_redistributes_excess() {
        // 3 cores: equal weights would give 1.5 each, pod 0 capped at 0.5 so pod 1 takes 2.5.
        assert_eq!(
            allocate_rates(&[(1, CORE / 2), (1, 3 * CORE)], 3),
            vec![CORE / 2, 5 * CORE / 2]
        );
    }

    #[test]
    fn empty_runnable_set() {
        assert!(allocate_rates(&[], 2).is_empty());
    }

    #[test]
    fn spec_rejects_limit_below_request() {
        assert!(spec(500, Some(400), 1).validate().is_err());
        assert!(spec(500, Some(500), 1).validate().is_ok());
        assert!(spec(0, None, 1).validate().is_err());
    }

    #[test]
    fn breakpoint_quota_precedes_completion() {
        // Sole pod, quota 60 ms, 52 ms consumed at t=52 ms, 18 ms left on the request.
        let mut pod = PodRuntime::new(0, spec(600, Some(600), 1));
        pod.consumed_in_period = 52_000 * WORK_PER_CPU_US;
        let mut r = req(0, SimTime::ZERO, 26);
        r.remaining = 18_000 * WORK_PER_CPU_US;
        pod.queue.push_back(r);
        let bp = next_breakpoint(
            &[pod],
            &[CORE],
            SimTime::from_millis(52),
            DEFAULT_PERIOD,
            SimTime::from_millis(100),
            None,
        );
        assert_eq!(bp, SimTime::from_millis(60));
    }

    #[test]
    fn breakpoint_unlimited_completion() {
        let mut pod = PodRuntime::new(0, spec(1000, None, 1));
        pod.queue.push_back(req(0, SimTime::ZERO, 5));
        let bp = next_breakpoint(
            &[pod],
            &[CORE],
            SimTime::ZERO,
            DEFAULT_PERIOD,
            SimTime::from_millis(100),
            None,
        );
        assert_eq!(bp, SimTime::from_millis(5));
    }

    #[test]
    fn breakpoint_idle_waits_for_arrival() {
        let pod = PodRuntime::new(0, spec(1000, None, 1));
        let bp = next_breakpoint(
            &[pod],
            &[0],
            SimTime::ZERO,
            DEFAULT_PERIOD,
            SimTime::from_millis(100),
            Some(SimTime::from_millis(40)),
        );
        assert_eq!(bp, SimTime::from_millis(40));
    }

    fn fig2a(clim: Option<u64>) -> Vec<Completion> {
        let mut node = CpuNode::new(1, DEFAULT_PERIOD);
        let mut pod = PodRuntime::new(0, spec(600, clim, 1));
        for i in 0..3 {
            pod.queue.push_back(req(i, SimTime::ZERO, 26));
        }
        node.pods.push(pod);
        drive(&mut node, SimTime::ZERO, SimTime::from_millis(300))
    }

    #[test]
    fn throttled_third_request_takes_66ms() {
        let done = fig2a(Some(600));
        let at: Vec<u64> = done
            .iter()
            .map(|c| c.request.completion.unwrap().micros())
            .collect();
        assert_eq!(at, vec![26_000, 52_000, 118_000]);
        assert_eq!(
            done[2].request.execution_time(),
            Some(SimTime::from_millis(66))
        );
    }

    #[test]
    fn unlimited_back_to_back() {
        let done = fig2a(None);
        let at: Vec<u64> = done
            .iter()
            .map(|c| c.request.completion.unwrap().micros())
            .collect();
        assert_eq!(at, vec![26_000, 52_000, 78_000]);
    }

    #[test]
    fn quota_queues_fourth_request() {
        let mut node = CpuNode::new(1, DEFAULT_PERIOD);
        let mut pod = PodRuntime::new(0, spec(300, Some(300), 1));
        for i in 0..4 {
            pod.queue.push_back(req(i, SimTime::ZERO, 10));
        }
        node.pods.push(pod);
        let done = drive(&mut node, SimTime::ZERO, SimTime::from_millis(200));
        let at: Vec<u64> = done
            .iter()
            .map(|c| c.request.completion.unwrap().micros())
            .collect();
        assert_eq!(at, vec![10_000, 20_000, 30_000, 110_000]);
        assert_eq!(done[3].request.latency(), Some(SimTime::from_millis(110)));
        assert_eq!(node.pods[0].throttle_events, 1);
    }

    #[test]
    fn multithreaded_quota_is_cumulative() {
        // Four workers sharing a 60 ms quota on 4 cores: 15 ms each before the pod stalls.
        let mut node = CpuNode::new(4, DEFAULT_PERIOD);
        let mut pod = PodRuntime::new(0, spec(600, Some(600), 4));
        for i in 0..4 {
            pod.queue.push_back(req(i, SimTime::ZERO, 20));
        }
        node.pods.push(pod);
        let done = drive(&mut node, SimTime::ZERO, SimTime::from_millis(200));
        assert_eq!(node.pods[0].throttle_events, 1);
        assert!(done
            .iter()
            .all(|c| c.request.completion == Some(SimTime::from_millis(105))));
    }

    #[test]
    fn period_boundary_resumes_throttled_pod() {
        let mut node = CpuNode::new(1, DEFAULT_PERIOD);
        let mut pod = PodRuntime::new(0, spec(100, Some(100), 1));
        pod.queue.push_back(req(0, SimTime::ZERO, 50));
        node.pods.push(pod);
        drive(&mut node, SimTime::ZERO, SimTime::from_millis(99));
        assert!(node.pods[0].throttled);
        assert!(!node.pods[0].is_runnable(SimTime::from_millis(99)));
        node.on_period_boundary();
        assert!(node.pods[0].is_runnable(SimTime::from_millis(100)));
        assert_eq!(node.pods[0].consumed_in_period, 0);
    }

    #[test]
    fn idle_boundary_resets_counters() {
        let mut node = CpuNode::new(1, DEFAULT_PERIOD);
        let mut pod = PodRuntime::new(0, spec(100, None, 1));
        pod.consumed_in_period = 7;
        node.pods.push(pod);
        assert_eq!(node.on_period_boundary(), vec![(0, 7)]);
        assert_eq!(node.pods[0].consumed_in_period, 0);
        assert!(CpuNode::new(2, DEFAULT_PERIOD)
            .on_period_boundary()
            .is_empty());
    }

    #[test]
    fn overshooting_step_is_fatal() {
        let mut node = CpuNode::new(1, DEFAULT_PERIOD);
        let mut pod = PodRuntime::new(0, spec(1000, None, 1));
        pod.queue.push_back(req(0, SimTime::ZERO, 5));
        node.pods.push(pod);
        let rates = node.rates(SimTime::ZERO);
        let err = node
            .advance(&rates, SimTime::ZERO, SimTime::from_millis(6))
            .unwrap_err();
        assert!(matches!(err, SimError::Invariant(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn allocation_is_work_conserving(
                entries in prop::collection::vec((1u64..5000, 1u64..5), 0..8),
                cores in 1u32..9,
            ) {
                let input: Vec<(u64, u64)> = entries.iter().map(|&(w, c)| (w, c * CORE)).collect();
                let rates = allocate_rates(&input, cores);
                let total: u64 = rates.iter().sum();
                let caps: u64 = input.iter().map(|e| e.1).sum();
                prop_assert_eq!(total, caps.min(cores as u64 * CORE));
                for (r, e) in rates.iter().zip(&input) {
                    prop_assert!(*r <= e.1);
                }
            }

            /// A continuously backlogged, unthrottled pod gets at least its
            /// proportional floor over each whole period.
            #[test]
            fn proportional_floor_holds(
                creqs in prop::collection::vec(1u64..2000, 1..5),
                demands_ms in prop::collection::vec(0u64..150, 1..5),
                cores in 1u32..4,
            ) {
                let n = creqs.len().min(demands_ms.len());
                let mut node = CpuNode::new(cores, DEFAULT_PERIOD);
                for i in 0..n {
                    let mut pod = PodRuntime::new(i, spec(creqs[i], None, 2));
                    // pod 0 is backlogged; the rest carry arbitrary demand
                    let d = if i == 0 { 1_000 } else { demands_ms[i] };
                    if d > 0 {
                        pod.queue.push_back(req(i as u64 * 10, SimTime::ZERO, d));
                        pod.queue.push_back(req(i as u64 * 10 + 1, SimTime::ZERO, d));
                    }
                    node.pods.push(pod);
                }
                drive(&mut node, SimTime::ZERO, DEFAULT_PERIOD);
                let total_creq: u64 = creqs[..n].iter().sum();
                let floor = creqs[0] as u128 * cores as u128 * DEFAULT_PERIOD.micros() as u128 * WORK_PER_CPU_US as u128 / total_creq as u128;
                let floor = floor.min(2 * DEFAULT_PERIOD.micros() as u128 * WORK_PER_CPU_US as u128);
                // integer splitting may lose under one rate unit per breakpoint
                let slack = 64 * DEFAULT_PERIOD.micros() as u128;
                prop_assert!(node.pods[0].cumulative_cpu as u128 + slack >= floor,
                    "accrued {} floor {}", node.pods[0].cumulative_cpu, floor);
            }

            #[test]
            fn quota_never_exceeded(clim in 1u64..2000, demand in 1u64..400, par in 1u32..4) {
                let mut node = CpuNode::new(2, DEFAULT_PERIOD);
                let mut pod = PodRuntime::new(0, spec(clim.min(1000), Some(clim.max(clim.min(1000))), par));
                for i in 0..3 {
                    pod.queue.push_back(req(i, SimTime::ZERO, demand));
                }
                node.pods.push(pod);
                let quota = Millicores(clim.max(clim.min(1000))).quota_work(DEFAULT_PERIOD);
                let mut now = SimTime::ZERO;
                let end = SimTime::from_millis(500);
                while now < end {
                    let rates = node.rates(now);
                    let pe = SimTime((now.micros() / 100_000 + 1) * 100_000);
                    let bp = node.next_breakpoint(&rates, now, pe, None).min(end);
                    node.advance(&rates, now, bp - now).unwrap();
                    prop_assert!(node.pods[0].consumed_in_period <= quota);
                    now = bp;
                    if now.micros().is_multiple_of(100_000) {
                        node.on_period_boundary();
                    }
                }
            }
        }
    }
}
