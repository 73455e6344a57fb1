use super::{Decision, DeploymentView, NodeView, PolicyConfig, ScalingAction, ScalingPolicy};

/// Threshold HPA: one replica with the template request per trigger.
pub fn hpa_decide(dep: &DeploymentView, cfg: &PolicyConfig) -> Decision {
    let n = dep.replicas.len().max(1);
    let creq = dep.template.creq.0 as f64;
    let per_replica = dep.util_m / n as f64;
    let trigger = cfg.hpa.threshold * creq;
    if per_replica >= trigger && n < cfg.hpa.max_replicas {
        return Decision::new(
            ScalingAction::AddReplica {
                creq: dep.template.creq,
            },
            format!("per-replica util {per_replica:.1}m >= {trigger:.1}m"),
        );
    }
    if per_replica <= trigger * cfg.hpa.downscale_hysteresis && n > cfg.hpa.min_replicas {
        if let Some(last) = dep.replicas.last() {
            return Decision::new(
                ScalingAction::RemoveReplica { pod: last.pod },
                format!(
                    "per-replica util {per_replica:.1}m <= {:.1}m",
                    trigger * cfg.hpa.downscale_hysteresis
                ),
            );
        }
    }
    Decision::noop(format!("per-replica util {per_replica:.1}m within band"))
}

#[derive(Debug)]
pub struct Hpa {
    cfg: PolicyConfig,
}

impl Hpa {
    pub fn new(cfg: PolicyConfig) -> Self {
        Self { cfg }
    }
}

impl ScalingPolicy for Hpa {
    fn name(&self) -> &'static str {
        "hpa"
    }

    fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    fn cooldown(&self) -> u32 {
        self.cfg.hpa.cooldown
    }

    fn decide(&self, dep: &DeploymentView, _nodes: &[NodeView]) -> Vec<Decision> {
        vec![hpa_decide(dep, &self.cfg)]
    }
}

/// Production-style ratio rule: desired = ceil(n × util / (threshold × creq)).
#[derive(Debug)]
pub struct HpaRatio {
    cfg: PolicyConfig,
}

impl HpaRatio {
    pub fn new(cfg: PolicyConfig) -> Self {
        Self { cfg }
    }
}

impl ScalingPolicy for HpaRatio {
    fn name(&self) -> &'static str {
        "hpa-ratio"
    }

    fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    fn cooldown(&self) -> u32 {
        self.cfg.hpa.cooldown
    }

    fn decide(&self, dep: &DeploymentView, _nodes: &[NodeView]) -> Vec<Decision> {
        let n = dep.replicas.len().max(1);
        let target = self.cfg.hpa.threshold * dep.template.creq.0 as f64;
        let desired = ((dep.util_m / target).ceil() as usize)
            .clamp(self.cfg.hpa.min_replicas, self.cfg.hpa.max_replicas);
        if desired > n {
            let reason = format!("util {:.1}m wants {desired} replicas", dep.util_m);
            return (n..desired)
                .map(|_| {
                    Decision::new(
                        ScalingAction::AddReplica {
                            creq: dep.template.creq,
                        },
                        reason.clone(),
                    )
                })
                .collect();
        }
        let per_replica = dep.util_m / n as f64;
        if desired < n && per_replica <= target * self.cfg.hpa.downscale_hysteresis {
            if let Some(last) = dep.replicas.last() {
                return vec![Decision::new(
                    ScalingAction::RemoveReplica { pod: last.pod },
                    format!("util {:.1}m wants {desired} replicas", dep.util_m),
                )];
            }
        }
        vec![Decision::noop("at desired replica count")]
    }
}
