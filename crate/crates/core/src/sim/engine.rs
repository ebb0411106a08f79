use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{Hop, TrafficNetwork};
use super::pattern::TrafficPattern;
use super::phase::PhaseCombination;
use super::SimError;
use crate::design::DecodedSchedule;
use crate::seed;

const LANES: usize = 12;
const DURATION_TOLERANCE: f64 = 1e-6;

/// Simulation timing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Simulated seconds.
    pub horizon: u32,
    /// Seconds between waiting-vehicle samples.
    pub sample_interval: u32,
    /// Signal cycle length c, seconds.
    pub cycle_time: f64,
    /// Minimum green per phase, seconds.
    pub min_green: f64,
    /// Standard deviation of the additive Gaussian observation noise.
    pub noise_std: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { horizon: 1800, sample_interval: 60, cycle_time: 180.0, min_green: 30.0, noise_std: 0.0 }
    }
}

impl SimConfig {
    /// Checks the config for a combination of `phases` phases.
    pub fn validate(&self, phases: usize) -> Result<(), SimError> {
        if self.horizon == 0 || self.sample_interval == 0 {
            return Err(SimError::Config("horizon and sample interval must be positive".into()));
        }
        if self.horizon % self.sample_interval != 0 {
            return Err(SimError::Config(format!(
                "horizon {} is not a multiple of the sample interval {}",
                self.horizon, self.sample_interval
            )));
        }
        if !(self.min_green >= 0.0 && self.cycle_time.is_finite()) {
            return Err(SimError::Config("cycle time and minimum green must be finite and non-negative".into()));
        }
        if self.cycle_time <= self.min_green * phases as f64 {
            return Err(SimError::Config(format!(
                "cycle time {} must exceed {phases} x minimum green {}",
                self.cycle_time, self.min_green
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SimError::Config(format!("noise std {} must be finite and >= 0", self.noise_std)));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.horizon / self.sample_interval) as usize
    }
}

/// Outcome of one simulation run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    /// Total queued vehicles at the end of each sample interval.
    pub waiting_samples: Vec<u64>,
    pub total_generated: u64,
    pub total_arrived: u64,
    pub in_network_at_end: u64,
}

/// A phase combination together with its green durations.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalTiming {
    pub combination: PhaseCombination,
    pub durations: Vec<f64>,
}

#[derive(Debug)]
struct Transit {
    ready: f64,
    seq: u64,
    vehicle: u32,
    hop: u32,
}

impl PartialEq for Transit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Transit {}

impl PartialOrd for Transit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Transit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ready.total_cmp(&other.ready).then(self.seq.cmp(&other.seq))
    }
}

/// Runs the pattern through the network under a decoded schedule.
pub fn simulate(
    network: &TrafficNetwork,
    schedule: &DecodedSchedule,
    pattern: &TrafficPattern,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    let timings: Vec<SignalTiming> = schedule
        .plans
        .iter()
        .map(|plan| SignalTiming { combination: plan.combination.combination(), durations: plan.durations.clone() })
        .collect();
    simulate_plans(network, &timings, pattern, config)
}

/// Like [`simulate`], with explicit phase combinations per intersection.
///
/// One-second steps. Within second `t`: vehicles departing in `[t, t+1)` are
/// released onto their first link; vehicles whose link traversal ends before
/// `t+1` join their movement queue (or leave the network after the last
/// intersection); then every green movement gains `1/headway` discharge credit
/// and releases queued vehicles FIFO while the credit is at least one.
/// Credit is dropped on red and capped at one while a queue is empty.
pub fn simulate_plans(
    network: &TrafficNetwork,
    timings: &[SignalTiming],
    pattern: &TrafficPattern,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    let intersections = network.intersection_count();
    if timings.len() != intersections {
        return Err(SimError::Schedule(format!(
            "schedule covers {} intersections, network has {intersections}",
            timings.len()
        )));
    }
    let mut cumulative = Vec::with_capacity(intersections);
    for (i, timing) in timings.iter().enumerate() {
        config.validate(timing.combination.len())?;
        if timing.durations.len() != timing.combination.len() {
            return Err(SimError::Schedule(format!(
                "intersection {i}: {} durations for {} phases",
                timing.durations.len(),
                timing.combination.len()
            )));
        }
        if timing.durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(SimError::Schedule(format!("intersection {i}: invalid duration in {:?}", timing.durations)));
        }
        let sum: f64 = timing.durations.iter().sum();
        if (sum - config.cycle_time).abs() > DURATION_TOLERANCE {
            return Err(SimError::Schedule(format!(
                "intersection {i}: durations sum to {sum}, cycle time is {}",
                config.cycle_time
            )));
        }
        let ends: Vec<f64> = timing
            .durations
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        cumulative.push(ends);
    }
    let horizon = config.horizon as f64;
    pattern.validate_vehicles(network, horizon)?;

    let mut route_ids = BTreeMap::new();
    let mut routes: Vec<Vec<Hop>> = Vec::new();
    let mut vehicle_route = Vec::with_capacity(pattern.vehicles.len());
    for v in &pattern.vehicles {
        let id = match route_ids.get(&(v.origin, v.destination)) {
            Some(&id) => id,
            None => {
                routes.push(network.route(v.origin, v.destination)?);
                route_ids.insert((v.origin, v.destination), routes.len() - 1);
                routes.len() - 1
            }
        };
        vehicle_route.push(id);
    }

    let link = network.link_travel_time();
    let credit_rate = 1.0 / network.saturation_headway();
    let mut queues: Vec<VecDeque<(u32, u32)>> = vec![VecDeque::new(); intersections * LANES];
    let mut credit = vec![0.0f64; intersections * LANES];
    let mut transit: BinaryHeap<Reverse<Transit>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut next_vehicle = 0usize;
    let mut generated = 0u64;
    let mut arrived = 0u64;
    let mut queued = 0u64;
    let mut waiting_samples = Vec::with_capacity(config.sample_count());

    for second in 0..config.horizon {
        let t = second as f64;
        let step_end = t + 1.0;

        while let Some(v) = pattern.vehicles.get(next_vehicle).filter(|v| v.departure < step_end) {
            transit.push(Reverse(Transit { ready: v.departure + link, seq, vehicle: next_vehicle as u32, hop: 0 }));
            seq += 1;
            generated += 1;
            next_vehicle += 1;
        }

        while transit.peek().is_some_and(|Reverse(tr)| tr.ready < step_end) {
            let Reverse(tr) = transit.pop().expect("peeked");
            let route = &routes[vehicle_route[tr.vehicle as usize]];
            match route.get(tr.hop as usize) {
                None => arrived += 1,
                Some(hop) => {
                    let lane = hop.approach.index() * 3 + hop.movement.index();
                    queues[hop.intersection * LANES + lane].push_back((tr.vehicle, tr.hop));
                    queued += 1;
                }
            }
        }

        for (i, timing) in timings.iter().enumerate() {
            let position = t % config.cycle_time;
            let ends = &cumulative[i];
            let active = ends.iter().position(|&end| position < end).unwrap_or(ends.len() - 1);
            let phase = &timing.combination.phases()[active];
            for lane in 0..LANES {
                let slot = i * LANES + lane;
                if !phase.permits_lane(lane) {
                    credit[slot] = 0.0;
                    continue;
                }
                credit[slot] += credit_rate;
                let queue = &mut queues[slot];
                while credit[slot] >= 1.0 {
                    let Some((vehicle, hop)) = queue.pop_front() else { break };
                    credit[slot] -= 1.0;
                    queued -= 1;
                    transit.push(Reverse(Transit { ready: t + link, seq, vehicle, hop: hop + 1 }));
                    seq += 1;
                }
                if queue.is_empty() {
                    credit[slot] = credit[slot].min(1.0);
                }
            }
        }

        if (second + 1) % config.sample_interval == 0 {
            waiting_samples.push(queued);
        }
    }

    let in_queues: u64 = queues.iter().map(|q| q.len() as u64).sum();
    debug_assert_eq!(in_queues, queued);
    Ok(SimResult {
        waiting_samples,
        total_generated: generated,
        total_arrived: arrived,
        in_network_at_end: in_queues + transit.len() as u64,
    })
}

/// Negated mean of the waiting samples plus Gaussian noise drawn from `seed`.
pub fn congestion_measure(result: &SimResult, noise_std: f64, seed: u64) -> Result<f64, SimError> {
    if result.waiting_samples.is_empty() {
        return Err(SimError::Config("no waiting samples recorded".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(SimError::Config(format!("noise std {noise_std} must be finite and >= 0")));
    }
    let mean = result.waiting_samples.iter().map(|&w| w as f64).sum::<f64>() / result.waiting_samples.len() as f64;
    let noise = if noise_std > 0.0 {
        Normal::new(0.0, noise_std).expect("valid std").sample(&mut seed::rng(seed))
    } else {
        0.0
    };
    Ok(-mean + noise)
}
