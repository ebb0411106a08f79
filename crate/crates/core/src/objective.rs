//! Traffic simulation as a black-box objective over designs.

use crate::dataset::TaskSource;
use crate::design::{decode, Design};
use crate::sim::{congestion_measure, simulate, SimConfig, SimError, TrafficNetwork, TrafficPattern};

/// One traffic pattern on one network.
#[derive(Clone, Debug)]
pub struct TrafficTask {
    pub network: TrafficNetwork,
    pub pattern: TrafficPattern,
    pub sim: SimConfig,
}

impl TrafficTask {
    /// Decodes `x`, simulates, and returns the (possibly noisy) congestion
    /// measure. Larger is better.
    pub fn evaluate(&self, x: &Design, noise_seed: u64) -> Result<f64, SimError> {
        evaluate_design(&self.network, &self.pattern, &self.sim, x, noise_seed)
    }
}

fn evaluate_design(
    network: &TrafficNetwork,
    pattern: &TrafficPattern,
    sim: &SimConfig,
    x: &Design,
    noise_seed: u64,
) -> Result<f64, SimError> {
    if x.space.intersections != network.intersection_count() {
        return Err(SimError::Config(format!(
            "design has {} intersections, network has {}",
            x.space.intersections,
            network.intersection_count()
        )));
    }
    let schedule = decode(x, sim)?;
    let result = simulate(network, &schedule, pattern, sim)?;
    congestion_measure(&result, sim.noise_std, noise_seed)
}

/// Several patterns sharing a network and simulator settings.
#[derive(Clone, Debug)]
pub struct TrafficTasks {
    pub network: TrafficNetwork,
    pub patterns: Vec<TrafficPattern>,
    pub sim: SimConfig,
}

impl TrafficTasks {
    pub fn task(&self, index: usize) -> TrafficTask {
        TrafficTask { network: self.network.clone(), pattern: self.patterns[index].clone(), sim: self.sim.clone() }
    }
}

impl TaskSource for TrafficTasks {
    type Error = SimError;

    fn n_tasks(&self) -> usize {
        self.patterns.len()
    }

    fn pattern_seed(&self, task: usize) -> u64 {
        self.patterns[task].seed
    }

    fn evaluate(&self, task: usize, x: &Design, noise_seed: u64) -> Result<f64, SimError> {
        evaluate_design(&self.network, &self.patterns[task], &self.sim, x, noise_seed)
    }
}
