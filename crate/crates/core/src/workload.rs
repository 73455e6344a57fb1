//! Open-loop request generation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, SimTime, StreamRng};
use crate::error::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalProcess {
    Poisson {
        rate: f64,
    },
    /// Fixed gap; the first arrival lands at `start_us` (default: one interval in).
    Deterministic {
        interval_us: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start_us: Option<u64>,
    },
    /// Explicit timestamps, each delivering `batch` requests at once.
    Trace {
        #[serde(default)]
        times_us: Vec<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<String>,
        #[serde(default = "one")]
        batch: u32,
    },
    /// Piecewise-constant Poisson rate.
    Step {
        segments: Vec<StepSegment>,
    },
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSegment {
    pub start_s: f64,
    pub rate: f64,
}

impl ArrivalProcess {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match self {
            ArrivalProcess::Poisson { rate } => {
                if !(*rate > 0.0) {
                    errs.push(format!("poisson rate must be > 0, got {rate}"));
                }
            }
            ArrivalProcess::Deterministic { interval_us, .. } => {
                if *interval_us == 0 {
                    errs.push("deterministic interval must be > 0".into());
                }
            }
            ArrivalProcess::Trace {
                times_us,
                file,
                batch,
            } => {
                if file.is_some() && !times_us.is_empty() {
                    errs.push("trace takes either times_us or file, not both".into());
                }
                if times_us.windows(2).any(|w| w[0] >= w[1]) {
                    errs.push("trace times must be strictly increasing".into());
                }
                if *batch == 0 {
                    errs.push("trace batch must be >= 1".into());
                }
            }
            ArrivalProcess::Step { segments } => {
                if segments.is_empty() {
                    errs.push("step process needs at least one segment".into());
                } else if segments[0].start_s != 0.0 {
                    errs.push("first step segment must start at 0 s".into());
                }
                if segments.windows(2).any(|w| w[0].start_s >= w[1].start_s) {
                    errs.push("step segment starts must be strictly increasing".into());
                }
                if segments
                    .iter()
                    .any(|s| !(s.rate >= 0.0) || !s.rate.is_finite())
                {
                    errs.push("step rates must be finite and >= 0".into());
                }
            }
        }
        errs
    }

    /// Times at which the offered rate changes (excluding t = 0).
    pub fn load_steps(&self) -> Vec<SimTime> {
        match self {
            ArrivalProcess::Step { segments } => segments
                .iter()
                .skip(1)
                .map(|s| SimTime::from_secs_f64(s.start_s))
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Reads a one-column text file of microsecond timestamps. Blank lines and `#` comments are skipped.
pub fn load_trace(path: &Path) -> Result<Vec<u64>, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let mut times = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t = line.parse::<u64>().map_err(|e| {
            SimError::config(format!(
                "{}:{}: bad timestamp {line:?}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        times.push(t);
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::config(format!(
            "{}: trace times must be strictly increasing",
            path.display()
        )));
    }
    Ok(times)
}

#[derive(Debug, Clone)]
pub struct ArrivalGenerator {
    process: ArrivalProcess,
    rng: StreamRng,
    cursor: usize,
    pending_batch: u32,
    started: bool,
}

impl ArrivalGenerator {
    /// Trace files must already be resolved into `times_us`.
    pub fn new(process: ArrivalProcess, stream: RngStream) -> Self {
        Self {
            process,
            rng: stream.generator(),
            cursor: 0,
            pending_batch: 0,
            started: false,
        }
    }

    /// Next arrival after `now`, or `None` once the process is exhausted.
    ///
    /// Batched trace entries return the same instant repeatedly; everything else is strictly later than `now`
    /// except the very first trace or deterministic arrival, which may coincide with t = 0.
    pub fn next_arrival(&mut self, now: SimTime) -> Result<Option<SimTime>, SimError> {
        let first = !self.started;
        self.started = true;
        match &self.process {
            ArrivalProcess::Poisson { rate } => {
                let gap = self.rng.sample_exponential(*rate)?;
                Ok(Some(now + gap))
            }
            ArrivalProcess::Deterministic {
                interval_us,
                start_us,
            } => {
                if first {
                    Ok(Some(SimTime(start_us.unwrap_or(*interval_us)).max(now)))
                } else {
                    Ok(Some(now + SimTime(*interval_us)))
                }
            }
            ArrivalProcess::Trace {
                times_us, batch, ..
            } => {
                if self.pending_batch > 0 {
                    self.pending_batch -= 1;
                    return Ok(Some(now));
                }
                while let Some(&t) = times_us.get(self.cursor) {
                    self.cursor += 1;
                    if SimTime(t) >= now {
                        self.pending_batch = batch - 1;
                        return Ok(Some(SimTime(t)));
                    }
                }
                Ok(None)
            }
            ArrivalProcess::Step { segments } => {
                let mut t = now;
                loop {
                    let idx = segments
                        .iter()
                        .rposition(|s| SimTime::from_secs_f64(s.start_s) <= t)
                        .unwrap_or(0);
                    let seg_end = segments
                        .get(idx + 1)
                        .map(|s| SimTime::from_secs_f64(s.start_s));
                    let rate = segments[idx].rate;
                    if rate <= 0.0 {
                        match seg_end {
                            Some(e) => {
                                t = e;
                                continue;
                            }
                            None => return Ok(None),
                        }
                    }
                    let cand = t + self.rng.sample_exponential(rate)?;
                    match seg_end {
                        // memoryless: restart the draw at the boundary with the new rate
                        Some(e) if cand >= e => t = e,
                        _ => return Ok(Some(cand)),
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceDemand {
    Constant { us: u64 },
    Exponential { mean_us: f64 },
    Empirical { us: Vec<u64> },
}

impl ServiceDemand {
    pub fn validate(&self) -> Vec<String> {
        match self {
            ServiceDemand::Constant { us } if *us == 0 => {
                vec!["constant demand must be > 0 us".into()]
            }
            ServiceDemand::Exponential { mean_us } if !(*mean_us > 0.0) => {
                vec!["exponential demand mean must be > 0".into()]
            }
            ServiceDemand::Empirical { us } if us.is_empty() || us.contains(&0) => {
                vec!["empirical demand needs positive samples".into()]
            }
            _ => Vec::new(),
        }
    }

    pub fn mean_us(&self) -> f64 {
        match self {
            ServiceDemand::Constant { us } => *us as f64,
            ServiceDemand::Exponential { mean_us } => *mean_us,
            ServiceDemand::Empirical { us } => us.iter().sum::<u64>() as f64 / us.len() as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemandSampler {
    demand: ServiceDemand,
    rng: StreamRng,
}

impl DemandSampler {
    pub fn new(demand: ServiceDemand, stream: RngStream) -> Self {
        Self {
            demand,
            rng: stream.generator(),
        }
    }

    /// CPU time in µs, always > 0.
    pub fn sample(&mut self) -> u64 {
        match &self.demand {
            ServiceDemand::Constant { us } => *us,
            ServiceDemand::Exponential { mean_us } => self.rng.sample_exponential_mean(*mean_us),
            ServiceDemand::Empirical { us } => us[self.rng.index(us.len())],
        }
    }
}

/// Ordered stages a request visits. End-to-end latency runs from first arrival to last completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceChain {
    pub stages: Vec<ChainStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStage {
    pub deployment: String,
    pub demand: ServiceDemand,
}

/// Round-robin replica choice.
pub fn round_robin<T: Copy>(replicas: &[T], cursor: &mut usize) -> Option<T> {
    if replicas.is_empty() {
        return None;
    }
    let pick = replicas[*cursor % replicas.len()];
    *cursor = (*cursor + 1) % replicas.len();
    Some(pick)
}

/// Stable 64-bit FNV-1a, used to derive RNG stream ids from entity names.
pub fn stream_id(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(process: ArrivalProcess, n: usize) -> Vec<u64> {
        let mut g = ArrivalGenerator::new(process, RngStream::new(3, 1));
        let mut now = SimTime::ZERO;
        let mut out = Vec::new();
        for _ in 0..n {
            match g.next_arrival(now).unwrap() {
                Some(t) => {
                    out.push(t.micros());
                    now = t;
                }
                None => break,
            }
        }
        out
    }

    #[test]
    fn deterministic_from_zero() {
        let got = draw(
            ArrivalProcess::Deterministic {
                interval_us: 33_333,
                start_us: None,
            },
            3,
        );
        assert_eq!(got, vec![33_333, 66_666, 99_999]);
    }

    #[test]
    fn poisson_mean_gap() {
        let n = 100_000;
        let got = draw(ArrivalProcess::Poisson { rate: 30.0 }, n);
        let mean = *got.last().unwrap() as f64 / n as f64;
        assert!((mean - 33_333.33).abs() / 33_333.33 < 0.01, "mean {mean}");
    }

    #[test]
    fn step_uses_segment_rate() {
        let p = ArrivalProcess::Step {
            segments: vec![
                StepSegment {
                    start_s: 0.0,
                    rate: 10.0,
                },
                StepSegment {
                    start_s: 60.0,
                    rate: 12.5,
                },
            ],
        };
        assert_eq!(p.load_steps(), vec![SimTime::from_secs(60)]);
        let times = draw(p, 200_000);
        let before = times.iter().filter(|&&t| t < 60_000_000).count() as f64;
        let after = times
            .iter()
            .filter(|&&t| (60_000_000..10_060_000_000).contains(&t))
            .count() as f64;
        assert!((before / 60.0 - 10.0).abs() < 1.5, "{before}");
        assert!((after / 10_000.0 - 12.5).abs() < 0.2, "{after}");
    }

    #[test]
    fn step_zero_rate_segment_is_silent() {
        let p = ArrivalProcess::Step {
            segments: vec![
                StepSegment {
                    start_s: 0.0,
                    rate: 0.0,
                },
                StepSegment {
                    start_s: 2.0,
                    rate: 100.0,
                },
            ],
        };
        let times = draw(p, 5);
        assert!(times.iter().all(|&t| t > 2_000_000));
    }

    #[test]
    fn trace_batches_and_ends() {
        let got = draw(
            ArrivalProcess::Trace {
                times_us: vec![0, 50],
                file: None,
                batch: 2,
            },
            10,
        );
        assert_eq!(got, vec![0, 0, 50, 50]);
    }

    #[test]
    fn trace_validation() {
        let bad = ArrivalProcess::Trace {
            times_us: vec![5, 5],
            file: None,
            batch: 1,
        };
        assert_eq!(bad.validate().len(), 1);
    }

    #[test]
    fn trace_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        std::fs::write(&p, "# arrivals\n0\n1500\n\n9000\n").unwrap();
        assert_eq!(load_trace(&p).unwrap(), vec![0, 1500, 9000]);
        std::fs::write(&p, "10\n3\n").unwrap();
        assert!(load_trace(&p).is_err());
    }

    #[test]
    fn round_robin_alternates() {
        let mut cur = 0;
        let picks: Vec<_> = (0..5)
            .map(|_| round_robin(&[7, 9], &mut cur).unwrap())
            .collect();
        assert_eq!(picks, vec![7, 9, 7, 9, 7]);
        assert_eq!(round_robin::<u8>(&[], &mut cur), None);
    }

    #[test]
    fn offered_load_converges() {
        // Poisson(λ) × Constant(d) offers λ·d millicores.
        let n = 100_000;
        let times = draw(ArrivalProcess::Poisson { rate: 50.0 }, n);
        let mut demand =
            DemandSampler::new(ServiceDemand::Constant { us: 8_000 }, RngStream::new(3, 2));
        let work: u64 = (0..n).map(|_| demand.sample()).sum();
        let offered_m = work as f64 / *times.last().unwrap() as f64 * 1000.0;
        assert!((offered_m - 400.0).abs() / 400.0 < 0.01, "{offered_m}");
    }

    #[test]
    fn exponential_demand_positive_with_mean() {
        let mut s = DemandSampler::new(
            ServiceDemand::Exponential { mean_us: 10_000.0 },
            RngStream::new(1, 1),
        );
        let xs: Vec<u64> = (0..100_000).map(|_| s.sample()).collect();
        assert!(xs.iter().all(|&x| x > 0));
        let mean = xs.iter().sum::<u64>() as f64 / xs.len() as f64;
        assert!((mean - 10_000.0).abs() < 150.0, "{mean}");
    }

    #[test]
    fn stream_ids_are_stable() {
        assert_eq!(stream_id(""), 0xcbf2_9ce4_8422_2325);
        assert_ne!(stream_id("a/arrival"), stream_id("b/arrival"));
    }
}
