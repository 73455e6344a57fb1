//! Resource-, utilization- and performance-based bills.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Price multiplier as a function of the node utilization a tenant needs.
///
/// Implementations must be non-increasing on (0, 1] with `multiplier(1.0) == 1.0`.
pub trait PerfRateFn: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn multiplier(&self, n_target: f64) -> f64;
}

/// 1/N: a half-empty node costs exactly the capacity it leaves idle.
#[derive(Debug, Default)]
pub struct InverseUtilization;

impl PerfRateFn for InverseUtilization {
    fn name(&self) -> &'static str {
        "inverse"
    }

    fn multiplier(&self, n_target: f64) -> f64 {
        1.0 / n_target.clamp(f64::MIN_POSITIVE, 1.0)
    }
}

/// Utilization-independent pricing.
#[derive(Debug, Default)]
pub struct Flat;

impl PerfRateFn for Flat {
    fn name(&self) -> &'static str {
        "flat"
    }

    fn multiplier(&self, _n_target: f64) -> f64 {
        1.0
    }
}

type RateFnCtor = fn() -> Box<dyn PerfRateFn>;

const RATE_FNS: &[(&str, RateFnCtor)] = &[
    ("inverse", || Box::new(InverseUtilization)),
    ("flat", || Box::new(Flat)),
];

pub fn perf_rate_fn(name: &str) -> Option<Box<dyn PerfRateFn>> {
    RATE_FNS.iter().find(|(n, _)| *n == name).map(|(_, c)| c())
}

pub fn perf_rate_fn_names() -> Vec<&'static str> {
    RATE_FNS.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug)]
pub struct RateCard {
    /// Currency per core-hour.
    pub base_rate: f64,
    pub perf_rate: Box<dyn PerfRateFn>,
}

impl RateCard {
    pub fn new(base_rate: f64, perf_rate: Box<dyn PerfRateFn>) -> Self {
        Self {
            base_rate,
            perf_rate,
        }
    }
}

impl Default for RateCard {
    fn default() -> Self {
        Self::new(1.0, Box::new(InverseUtilization))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Resource,
    Utilization,
    Performance,
}

/// What a deployment held and used over one accrual interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BillingSnapshot {
    pub creq_m: f64,
    pub util_m: f64,
    /// Node utilization the bound policy targets; present only for YAAS deployments.
    pub n_target: Option<f64>,
}

/// Price of one scheme for a snapshot, in currency per hour.
pub trait BillingScheme: fmt::Debug + Send + Sync {
    fn scheme(&self) -> Scheme;
    fn hourly(&self, snap: &BillingSnapshot, card: &RateCard) -> Result<f64, SimError>;
}

#[derive(Debug)]
pub struct ResourceBased;

impl BillingScheme for ResourceBased {
    fn scheme(&self) -> Scheme {
        Scheme::Resource
    }

    fn hourly(&self, snap: &BillingSnapshot, card: &RateCard) -> Result<f64, SimError> {
        Ok(snap.creq_m / 1000.0 * card.base_rate)
    }
}

#[derive(Debug)]
pub struct UtilizationBased;

impl BillingScheme for UtilizationBased {
    fn scheme(&self) -> Scheme {
        Scheme::Utilization
    }

    fn hourly(&self, snap: &BillingSnapshot, card: &RateCard) -> Result<f64, SimError> {
        Ok(snap.util_m / 1000.0 * card.base_rate)
    }
}

/// Autoscaler-set requests, priced up by how empty a node must be kept.
#[derive(Debug)]
pub struct PerformanceBased;

impl BillingScheme for PerformanceBased {
    fn scheme(&self) -> Scheme {
        Scheme::Performance
    }

    fn hourly(&self, snap: &BillingSnapshot, card: &RateCard) -> Result<f64, SimError> {
        let n = snap.n_target.ok_or_else(|| {
            SimError::config("performance billing needs a YAAS-managed deployment")
        })?;
        Ok(snap.creq_m / 1000.0 * card.base_rate * card.perf_rate.multiplier(n))
    }
}

pub fn scheme_impl(scheme: Scheme) -> Box<dyn BillingScheme> {
    match scheme {
        Scheme::Resource => Box::new(ResourceBased),
        Scheme::Utilization => Box::new(UtilizationBased),
        Scheme::Performance => Box::new(PerformanceBased),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillRecord {
    pub deployment: String,
    pub scheme: Scheme,
    pub accrued: f64,
    /// Core-seconds of requested CPU.
    pub creq_seconds: f64,
    /// Core-seconds of consumed CPU.
    pub util_seconds: f64,
}

impl BillRecord {
    pub fn new(deployment: impl Into<String>, scheme: Scheme) -> Self {
        Self {
            deployment: deployment.into(),
            scheme,
            accrued: 0.0,
            creq_seconds: 0.0,
            util_seconds: 0.0,
        }
    }
}

/// Adds one interval of charges to `record`.
pub fn accrue(
    record: &mut BillRecord,
    interval_s: f64,
    snap: &BillingSnapshot,
    card: &RateCard,
) -> Result<(), SimError> {
    if !(interval_s > 0.0) {
        return Err(SimError::Invariant(format!(
            "accrual interval must be > 0, got {interval_s}"
        )));
    }
    let hourly = scheme_impl(record.scheme).hourly(snap, card)?;
    record.accrued += hourly * interval_s / 3600.0;
    record.creq_seconds += snap.creq_m / 1000.0 * interval_s;
    record.util_seconds += snap.util_m / 1000.0 * interval_s;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploitReport {
    pub deployment: String,
    pub consumed_cost: f64,
    pub resource_bill: f64,
    pub performance_bill: Option<f64>,
    /// Consumed cost over the resource bill; above 1 means the tenant is under-billed.
    pub resource_ratio: f64,
    pub performance_ratio: Option<f64>,
}

/// Compares what a deployment burned against what each scheme charged.
pub fn exploit_gap(
    deployment: &str,
    consumed_cost: f64,
    resource_bill: f64,
    performance_bill: Option<f64>,
) -> ExploitReport {
    let ratio = |bill: f64| {
        if bill > 0.0 {
            consumed_cost / bill
        } else {
            f64::INFINITY
        }
    };
    ExploitReport {
        deployment: deployment.to_string(),
        consumed_cost,
        resource_bill,
        performance_bill,
        resource_ratio: ratio(resource_bill),
        performance_ratio: performance_bill.map(ratio),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(creq: f64, util: f64, n: Option<f64>) -> BillingSnapshot {
        BillingSnapshot {
            creq_m: creq,
            util_m: util,
            n_target: n,
        }
    }

    #[test]
    fn resource_unit_definition() {
        let mut r = BillRecord::new("a", Scheme::Resource);
        accrue(
            &mut r,
            3600.0,
            &snap(1000.0, 0.0, None),
            &RateCard::default(),
        )
        .unwrap();
        assert!((r.accrued - 1.0).abs() < 1e-12);
        assert!((r.creq_seconds - 3600.0).abs() < 1e-9);
    }

    #[test]
    fn performance_inverse_at_half() {
        let mut r = BillRecord::new("a", Scheme::Performance);
        accrue(
            &mut r,
            3600.0,
            &snap(1000.0, 0.0, Some(0.5)),
            &RateCard::default(),
        )
        .unwrap();
        assert!((r.accrued - 2.0).abs() < 1e-12);
    }

    #[test]
    fn performance_without_yaas_is_config_error() {
        let mut r = BillRecord::new("a", Scheme::Performance);
        let err = accrue(&mut r, 1.0, &snap(1000.0, 0.0, None), &RateCard::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn utilization_scales_with_consumption() {
        let card = RateCard::default();
        let mut spin = BillRecord::new("spin", Scheme::Utilization);
        let mut lean = BillRecord::new("lean", Scheme::Utilization);
        accrue(&mut spin, 60.0, &snap(100.0, 2000.0, None), &card).unwrap();
        accrue(&mut lean, 60.0, &snap(100.0, 500.0, None), &card).unwrap();
        assert!((spin.accrued / lean.accrued - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fns_are_monotone_and_anchored() {
        for name in perf_rate_fn_names() {
            let f = perf_rate_fn(name).unwrap();
            assert_eq!(f.multiplier(1.0), 1.0);
            let grid: Vec<f64> = (1..=100).map(|k| k as f64 / 100.0).collect();
            for w in grid.windows(2) {
                assert!(f.multiplier(w[0]) >= f.multiplier(w[1]), "{name}");
            }
        }
        assert!(perf_rate_fn("surge").is_none());
    }

    #[test]
    fn exploit_ratio_is_consumed_over_billed() {
        // 10m requested, 900m consumed
        let r = exploit_gap("x", 0.9, 0.01, Some(0.95));
        assert!((r.resource_ratio - 90.0).abs() < 1e-9);
        assert!(r.performance_ratio.unwrap() <= 1.0);
        assert!(exploit_gap("y", 0.4, 0.5, None).resource_ratio <= 1.0);
    }

    #[test]
    fn zero_interval_rejected() {
        let mut r = BillRecord::new("a", Scheme::Resource);
        assert!(accrue(&mut r, 0.0, &snap(1.0, 1.0, None), &RateCard::default()).is_err());
    }
}
