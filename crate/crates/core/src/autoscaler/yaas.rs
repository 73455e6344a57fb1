//! Overage-driven vertical scaling with request-conserving replica splits,
//! congestion migration and eager downscale.
//!
//! Decision ladder, first match wins:
//!
//! 1. SLO breached (percentile above `SLO × (1 + δ)`):
//!    * positive overage: raise every replica to `U / n`, or if the hosting
//!      nodes cannot absorb that, add a replica and split `U` over `n + 1`;
//!    * overage already zero or negative: migrate off a congested node if one
//!      hosts a replica, otherwise add a replica and split the current total.
//! 2. A replica sits on a node with `N > T_cong`: migrate it to the least
//!    utilized node that admits it and would end up less loaded.
//! 3. `U < downscale_factor × Σcreq`: shrink requests to `U / n`.
//! 4. Otherwise nothing.

use super::{
    Decision, DeploymentView, NodeView, PolicyConfig, ReplicaView, ScalingAction, ScalingPolicy,
};
use crate::cfs::Millicores;

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

/// Allocation on each node if every replica is set to `per_replica`.
fn allocation_after_set(dep: &DeploymentView, nodes: &[NodeView], per_replica: u64) -> Vec<i64> {
    let mut alloc: Vec<i64> = nodes.iter().map(|n| n.allocated.0 as i64).collect();
    for r in &dep.replicas {
        alloc[r.node] += per_replica as i64 - r.creq.0 as i64;
    }
    alloc
}

fn fits(nodes: &[NodeView], alloc: &[i64]) -> bool {
    nodes
        .iter()
        .zip(alloc)
        .all(|(n, &a)| a <= n.capacity.0 as i64)
}

/// Split `total` over `n + 1` replicas if the shrunk set plus one new replica can be placed.
fn split(
    dep: &DeploymentView,
    nodes: &[NodeView],
    cfg: &PolicyConfig,
    total: u64,
    why: &str,
) -> Vec<Decision> {
    let n = dep.replicas.len();
    if n + 1 > cfg.yaas.max_replicas {
        return vec![Decision::noop(format!("{why}; at max replicas"))];
    }
    let per = ceil_div(total, n as u64 + 1).max(cfg.yaas.min_creq_m);
    let alloc = allocation_after_set(dep, nodes, per);
    let room = nodes
        .iter()
        .zip(&alloc)
        .any(|(node, &a)| a + per as i64 <= node.capacity.0 as i64);
    if !fits(nodes, &alloc) || !room {
        return vec![Decision::noop(format!("{why}; capacity exhausted"))];
    }
    let reason = format!("{why}; split {total}m over {} replicas", n + 1);
    vec![
        Decision::new(
            ScalingAction::SetCreq {
                per_replica: Millicores(per),
            },
            reason.clone(),
        ),
        Decision::new(
            ScalingAction::AddReplica {
                creq: Millicores(per),
            },
            reason,
        ),
    ]
}

/// Replica on the most congested node above `t_cong`, with a destination that relieves it.
fn migration(
    dep: &DeploymentView,
    nodes: &[NodeView],
    t_cong: f64,
) -> Option<(ReplicaView, usize)> {
    let mut victims: Vec<&ReplicaView> = dep
        .replicas
        .iter()
        .filter(|r| nodes[r.node].utilization > t_cong)
        .collect();
    victims.sort_by(|a, b| {
        nodes[b.node]
            .utilization
            .total_cmp(&nodes[a.node].utilization)
            .then(a.pod.cmp(&b.pod))
    });
    for victim in victims {
        let src_n = nodes[victim.node].utilization;
        let mut dests: Vec<usize> = (0..nodes.len())
            .filter(|&d| d != victim.node)
            .filter(|&d| nodes[d].allocated.0 + victim.creq.0 <= nodes[d].capacity.0)
            .filter(|&d| {
                nodes[d].utilization + victim.util_m / (nodes[d].capacity.0 as f64) < src_n
            })
            .collect();
        dests.sort_by(|&a, &b| {
            nodes[a]
                .utilization
                .total_cmp(&nodes[b].utilization)
                .then(a.cmp(&b))
        });
        if let Some(&d) = dests.first() {
            return Some((victim.clone(), d));
        }
    }
    None
}

pub fn yaas_decide(dep: &DeploymentView, nodes: &[NodeView], cfg: &PolicyConfig) -> Vec<Decision> {
    let y = &cfg.yaas;
    let n = dep.replicas.len().max(1) as u64;
    let util = dep.util_m.max(0.0).ceil() as u64;
    let total_creq = dep.total_creq().0;
    let lat = dep
        .latency_ms
        .map_or("none".to_string(), |l| format!("{l:.1}ms"));

    if dep.breaches(y.slo_margin) {
        let why = format!(
            "p{} {lat} > SLO {}ms",
            dep.slo.percentile, dep.slo.latency_ms
        );
        if util > total_creq {
            let per = ceil_div(util, n);
            let alloc = allocation_after_set(dep, nodes, per);
            if fits(nodes, &alloc) {
                return vec![Decision::new(
                    ScalingAction::SetCreq {
                        per_replica: Millicores(per),
                    },
                    format!("{why}; zero overage {}m", util - total_creq),
                )
                .slo()];
            }
            return split(dep, nodes, cfg, util, &why)
                .into_iter()
                .map(Decision::slo)
                .collect();
        }
        if let Some((victim, dest)) = migration(dep, nodes, y.t_cong) {
            return vec![Decision::new(
                ScalingAction::Migrate {
                    pod: victim.pod,
                    dest,
                },
                format!(
                    "{why}; node N {:.2} > T_cong {}",
                    nodes[victim.node].utilization, y.t_cong
                ),
            )
            .slo()];
        }
        return split(dep, nodes, cfg, total_creq.max(util), &why)
            .into_iter()
            .map(Decision::slo)
            .collect();
    }

    if let Some((victim, dest)) = migration(dep, nodes, y.t_cong) {
        return vec![Decision::new(
            ScalingAction::Migrate {
                pod: victim.pod,
                dest,
            },
            format!(
                "node N {:.2} > T_cong {}",
                nodes[victim.node].utilization, y.t_cong
            ),
        )];
    }

    if (util as f64) < y.downscale_factor * total_creq as f64 {
        let raw = ceil_div(util, n);
        if raw < y.min_creq_m && n > 1 {
            if let Some(last) = dep.replicas.last() {
                return vec![Decision::new(
                    ScalingAction::RemoveReplica { pod: last.pod },
                    format!("util {util}m needs fewer than {n} replicas"),
                )];
            }
        }
        let per = raw.max(y.min_creq_m);
        if per * n < total_creq {
            return vec![Decision::new(
                ScalingAction::SetCreq {
                    per_replica: Millicores(per),
                },
                format!("util {util}m < {} x creq {total_creq}m", y.downscale_factor),
            )];
        }
    }
    vec![Decision::noop(format!(
        "p{} {lat} within SLO",
        dep.slo.percentile
    ))]
}

#[derive(Debug)]
pub struct Yaas {
    cfg: PolicyConfig,
}

impl Yaas {
    pub fn new(cfg: PolicyConfig) -> Self {
        Self { cfg }
    }
}

impl ScalingPolicy for Yaas {
    fn name(&self) -> &'static str {
        "yaas"
    }

    fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    fn cooldown(&self) -> u32 {
        self.cfg.yaas.cooldown
    }

    fn decide(&self, dep: &DeploymentView, nodes: &[NodeView]) -> Vec<Decision> {
        yaas_decide(dep, nodes, &self.cfg)
    }

    fn billing_target(&self) -> Option<f64> {
        Some(self.cfg.yaas.t_cong)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfs::PodSpec;
    use crate::cluster::Slo;

    fn node(cap: u64, alloc: u64, n: f64) -> NodeView {
        NodeView {
            capacity: Millicores(cap),
            allocated: Millicores(alloc),
            utilization: n,
        }
    }

    fn view(replicas: &[(usize, u64)], util: f64, latency: Option<f64>) -> DeploymentView {
        DeploymentView {
            id: "d".into(),
            template: PodSpec {
                creq: Millicores(replicas[0].1),
                clim: None,
                parallelism: 1,
                deployment: 0,
            },
            replicas: replicas
                .iter()
                .enumerate()
                .map(|(i, &(node, creq))| ReplicaView {
                    pod: i,
                    node,
                    creq: Millicores(creq),
                    util_m: util / replicas.len() as f64,
                })
                .collect(),
            util_m: util,
            latency_ms: latency,
            backlog: 0,
            slo: Slo {
                latency_ms: 20.0,
                percentile: 99.0,
            },
        }
    }

    fn cfg() -> PolicyConfig {
        PolicyConfig::new("yaas")
    }

    #[test]
    fn overage_is_util_minus_request() {
        let d = view(&[(0, 1500)], 2000.0, None);
        assert_eq!(d.overage_m(), 500.0);
        let d = view(&[(0, 1500)], 1000.0, None);
        assert_eq!(d.overage_m(), -500.0);
    }

    #[test]
    fn breach_with_headroom_raises_request_to_util() {
        let d = view(&[(0, 600)], 900.0, Some(40.0));
        let out = yaas_decide(&d, &[node(2000, 600, 0.5)], &cfg());
        assert_eq!(out.len(), 1);
        assert_eq!(
            out[0].action,
            ScalingAction::SetCreq {
                per_replica: Millicores(900)
            }
        );
        assert!(out[0].slo_triggered);
    }

    #[test]
    fn breach_without_headroom_splits_and_conserves_total() {
        // 1 replica, creq 900m, U 900m, its node full; a second node has room.
        let d = view(&[(0, 900)], 900.0, Some(40.0));
        let nodes = [node(1000, 1000, 0.5), node(1000, 0, 0.0)];
        let out = yaas_decide(&d, &nodes, &cfg());
        let actions: Vec<_> = out.iter().map(|d| d.action.clone()).collect();
        assert_eq!(
            actions,
            vec![
                ScalingAction::SetCreq {
                    per_replica: Millicores(450)
                },
                ScalingAction::AddReplica {
                    creq: Millicores(450)
                }
            ]
        );
        assert!(out.iter().all(|d| d.slo_triggered));
        // post-action total equals pre-action U
        assert_eq!(450 * 2, 900);
    }

    #[test]
    fn positive_overage_on_full_node_splits_util() {
        let d = view(&[(0, 500)], 900.0, Some(40.0));
        let nodes = [node(1000, 1000, 1.0), node(1000, 0, 0.0)];
        let out = yaas_decide(&d, &nodes, &cfg());
        assert_eq!(
            out[0].action,
            ScalingAction::SetCreq {
                per_replica: Millicores(450)
            }
        );
        assert_eq!(
            out[1].action,
            ScalingAction::AddReplica {
                creq: Millicores(450)
            }
        );
    }

    #[test]
    fn no_capacity_anywhere_is_noop() {
        let d = view(&[(0, 500)], 900.0, Some(40.0));
        let out = yaas_decide(&d, &[node(1000, 1000, 1.0)], &cfg());
        assert_eq!(out[0].action, ScalingAction::NoOp);
        assert!(out[0].reason.contains("capacity exhausted"));
    }

    #[test]
    fn slight_violation_within_margin_does_not_act() {
        let d = view(&[(0, 500)], 500.0, Some(20.9));
        assert_eq!(
            yaas_decide(&d, &[node(1000, 500, 0.5)], &cfg())[0].action,
            ScalingAction::NoOp
        );
    }

    #[test]
    fn eager_downscale_to_util() {
        let d = view(&[(0, 1000)], 400.0, Some(5.0));
        let out = yaas_decide(&d, &[node(4000, 1000, 0.2)], &cfg());
        assert_eq!(
            out[0].action,
            ScalingAction::SetCreq {
                per_replica: Millicores(400)
            }
        );
        assert!(!out[0].slo_triggered);
    }

    #[test]
    fn congested_node_triggers_migration() {
        let d = view(&[(0, 500)], 500.0, Some(5.0));
        let nodes = [
            node(1000, 1000, 0.95),
            node(1000, 0, 0.1),
            node(1000, 0, 0.05),
        ];
        let out = yaas_decide(&d, &nodes, &cfg());
        assert_eq!(out[0].action, ScalingAction::Migrate { pod: 0, dest: 2 });
    }

    #[test]
    fn migration_needs_relief() {
        // destination would end up hotter than the source
        let d = view(&[(0, 500)], 500.0, Some(5.0));
        let nodes = [node(1000, 1000, 0.85), node(1000, 0, 0.5)];
        assert_eq!(
            yaas_decide(&d, &nodes, &cfg())[0].action,
            ScalingAction::NoOp
        );
    }

    #[test]
    fn tiny_util_removes_replica() {
        let d = view(&[(0, 200), (0, 200), (0, 200)], 12.0, Some(2.0));
        let out = yaas_decide(&d, &[node(4000, 600, 0.1)], &cfg());
        assert_eq!(out[0].action, ScalingAction::RemoveReplica { pod: 2 });
    }

    #[test]
    fn steady_state_is_fixed_point() {
        let d = view(&[(0, 500)], 480.0, Some(10.0));
        assert_eq!(
            yaas_decide(&d, &[node(4000, 500, 0.3)], &cfg())[0].action,
            ScalingAction::NoOp
        );
    }
}
