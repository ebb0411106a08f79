use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use super::network::{Direction, TrafficNetwork};
use super::SimError;
use crate::seed;

/// Sum of the four directional arrival rates, in vehicles per second.
pub const TOTAL_RATE: f64 = 0.1;
pub const MIN_RATE: f64 = 0.01;
pub const MAX_RATE: f64 = 0.1;

/// Order of the rates in [`TrafficPattern::rates`]: north→south, south→north,
/// east→west, west→east, each named by origin side.
const RATE_ORIGINS: [Direction; 4] = [Direction::North, Direction::South, Direction::East, Direction::West];

/// One vehicle movement: origin node, destination node, departure time (s).
/// Serialized as a `[origin, destination, t]` triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Vehicle {
    pub origin: usize,
    pub destination: usize,
    pub departure: f64,
}

impl From<(usize, usize, f64)> for Vehicle {
    fn from((origin, destination, departure): (usize, usize, f64)) -> Self {
        Self { origin, destination, departure }
    }
}

impl From<Vehicle> for (usize, usize, f64) {
    fn from(v: Vehicle) -> Self {
        (v.origin, v.destination, v.departure)
    }
}

/// Directional arrival rates plus the vehicle list they realised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficPattern {
    pub seed: u64,
    /// λ_NS, λ_SN, λ_EW, λ_WE in vehicles per second.
    pub rates: [f64; 4],
    /// Sorted by departure time.
    pub vehicles: Vec<Vehicle>,
}

impl TrafficPattern {
    /// Checks the rate constraints, ordering, horizon and node ids.
    pub fn validate(&self, network: &TrafficNetwork, horizon: f64) -> Result<(), SimError> {
        let sum: f64 = self.rates.iter().sum();
        if (sum - TOTAL_RATE).abs() > 1e-12 {
            return Err(SimError::Pattern(format!("rates sum to {sum}, expected {TOTAL_RATE}")));
        }
        if let Some(r) = self.rates.iter().find(|r| !(MIN_RATE..=MAX_RATE).contains(*r)) {
            return Err(SimError::Pattern(format!("rate {r} outside [{MIN_RATE}, {MAX_RATE}]")));
        }
        self.validate_vehicles(network, horizon)
    }

    pub(crate) fn validate_vehicles(&self, network: &TrafficNetwork, horizon: f64) -> Result<(), SimError> {
        for (i, v) in self.vehicles.iter().enumerate() {
            if !(v.departure >= 0.0 && v.departure < horizon) {
                return Err(SimError::Pattern(format!(
                    "vehicle {i} departs at {} outside [0, {horizon})",
                    v.departure
                )));
            }
            network.boundary(v.origin)?;
            network.boundary(v.destination)?;
        }
        if self.vehicles.windows(2).any(|w| w[0].departure > w[1].departure) {
            return Err(SimError::Pattern("vehicles are not sorted by departure time".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SimError> {
        Ok(crate::io::to_canonical_json(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Draws the four directional rates uniformly from the slice of the simplex
/// `{Σλ = 0.1, 0.01 ≤ λ ≤ 0.1}` by rejection.
fn sample_rates<R: rand::Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        // Normalised i.i.d. exponentials are uniform on the simplex.
        let e: [f64; 4] = std::array::from_fn(|_| Exp1.sample(rng));
        let total: f64 = e.iter().sum();
        let mut rates = e.map(|v| TOTAL_RATE * v / total);
        if rates.iter().any(|&r| r < MIN_RATE) {
            continue;
        }
        // Put the rounding residue on the largest rate so the sum is 0.1 to
        // the last bit where possible.
        let residue = TOTAL_RATE - rates.iter().sum::<f64>();
        let largest = (0..4).fold(0, |best, i| if rates[i] > rates[best] { i } else { best });
        rates[largest] += residue;
        return rates;
    }
}

/// Generates a random traffic pattern over `[0, horizon)`.
///
/// Each direction has one Poisson stream per corridor (boundary column for
/// north/south traffic, boundary row for east/west), carrying an even share of
/// the directional rate. Destinations are drawn uniformly among the exits on
/// the opposite side.
pub fn sample_pattern(network: &TrafficNetwork, horizon: f64, seed: u64) -> Result<TrafficPattern, SimError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::Pattern(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = seed::rng(seed);
    let rates = sample_rates(&mut rng);

    let mut vehicles = Vec::new();
    for (&origin_side, &rate) in RATE_ORIGINS.iter().zip(&rates) {
        let corridors = network.corridors(origin_side);
        let exits: Vec<usize> = network
            .boundary_nodes()
            .iter()
            .filter(|n| n.side == origin_side.opposite())
            .map(|n| n.id)
            .collect();
        let gap = Exp::new(rate / corridors as f64).expect("positive rate");
        for corridor in 0..corridors {
            let origin = network.boundary_id(origin_side, corridor).expect("corridor has a boundary node");
            let mut t = 0.0;
            loop {
                t += gap.sample(&mut rng);
                if t >= horizon {
                    break;
                }
                let destination = exits[rng.random_range(0..exits.len())];
                vehicles.push(Vehicle { origin, destination, departure: t });
            }
        }
    }
    vehicles.sort_by(|a, b| a.departure.total_cmp(&b.departure));
    Ok(TrafficPattern { seed, rates, vehicles })
}

/// Permutes departure times across vehicles, keeping every (origin,
/// destination) pair and the multiset of departure times, then re-sorts.
pub fn shuffle_pattern(pattern: &TrafficPattern, seed: u64) -> Result<TrafficPattern, SimError> {
    if pattern.vehicles.is_empty() {
        return Err(SimError::Pattern("cannot shuffle a pattern without vehicles".into()));
    }
    let mut rng = seed::rng(seed);
    let mut times: Vec<f64> = pattern.vehicles.iter().map(|v| v.departure).collect();
    times.shuffle(&mut rng);
    let mut vehicles: Vec<Vehicle> = pattern
        .vehicles
        .iter()
        .zip(times)
        .map(|(v, departure)| Vehicle { departure, ..*v })
        .collect();
    vehicles.sort_by(|a, b| a.departure.total_cmp(&b.departure));
    Ok(TrafficPattern { seed: pattern.seed, rates: pattern.rates, vehicles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TrafficNetwork {
        TrafficNetwork::grid(2, 2).unwrap()
    }

    #[test]
    fn rates_respect_constraints() {
        let p = sample_pattern(&grid(), 1800.0, 7).unwrap();
        assert!((p.rates.iter().sum::<f64>() - 0.1).abs() <= 1e-12);
        assert!(p.rates.iter().all(|r| (0.01..=0.1).contains(r)));
        p.validate(&grid(), 1800.0).unwrap();
    }

    #[test]
    fn vehicle_count_matches_poisson_mean() {
        // 200 seeds; the total count per pattern is Poisson(0.1 * 1800 = 180).
        let g = grid();
        let n = 200;
        let mean = (0..n)
            .map(|s| sample_pattern(&g, 1800.0, seed::derive(7, &[s])).unwrap().vehicles.len() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 180.0).abs() < 3.0 * 180f64.sqrt(), "mean {mean}");
    }

    #[test]
    fn per_stream_counts_within_three_standard_errors() {
        // For each OD direction, compare counts with λ·horizon pattern by
        // pattern: the differences have mean zero and variance λ·horizon.
        let g = grid();
        let horizon = 1800.0;
        let seeds = 150u64;
        for dir in 0..4 {
            let (mut diff, mut var) = (0.0, 0.0);
            for s in 0..seeds {
                let p = sample_pattern(&g, horizon, s).unwrap();
                let side = RATE_ORIGINS[dir];
                let count = p.vehicles.iter().filter(|v| g.boundary(v.origin).unwrap().side == side).count();
                diff += count as f64 - p.rates[dir] * horizon;
                var += p.rates[dir] * horizon;
            }
            assert!(diff.abs() < 3.0 * var.sqrt(), "direction {dir}: diff {diff}, sd {}", var.sqrt());
        }
    }

    #[test]
    fn destinations_are_on_the_opposite_side() {
        let g = TrafficNetwork::grid(3, 2).unwrap();
        let p = sample_pattern(&g, 1800.0, 3).unwrap();
        for v in &p.vehicles {
            let o = g.boundary(v.origin).unwrap();
            let d = g.boundary(v.destination).unwrap();
            assert_eq!(o.side.opposite(), d.side);
        }
    }

    #[test]
    fn shuffle_preserves_multisets() {
        let p = TrafficPattern {
            seed: 0,
            rates: [0.025; 4],
            vehicles: vec![
                Vehicle { origin: 0, destination: 5, departure: 1.5 },
                Vehicle { origin: 2, destination: 7, departure: 10.0 },
                Vehicle { origin: 4, destination: 1, departure: 20.25 },
            ],
        };
        let q = shuffle_pattern(&p, 1).unwrap();
        assert_eq!(q.vehicles.len(), 3);
        let mut od_p: Vec<_> = p.vehicles.iter().map(|v| (v.origin, v.destination)).collect();
        let mut od_q: Vec<_> = q.vehicles.iter().map(|v| (v.origin, v.destination)).collect();
        od_p.sort();
        od_q.sort();
        assert_eq!(od_p, od_q);
        let mut t_p: Vec<_> = p.vehicles.iter().map(|v| v.departure.to_bits()).collect();
        let mut t_q: Vec<_> = q.vehicles.iter().map(|v| v.departure.to_bits()).collect();
        t_p.sort();
        t_q.sort();
        assert_eq!(t_p, t_q);
        assert!(q.vehicles.windows(2).all(|w| w[0].departure <= w[1].departure));
    }

    #[test]
    fn shuffle_edge_cases() {
        let single = TrafficPattern {
            seed: 3,
            rates: [0.025; 4],
            vehicles: vec![Vehicle { origin: 0, destination: 2, departure: 4.0 }],
        };
        assert_eq!(shuffle_pattern(&single, 9).unwrap(), single);
        let empty = TrafficPattern { vehicles: vec![], ..single };
        assert!(shuffle_pattern(&empty, 9).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = sample_pattern(&grid(), 600.0, 11).unwrap();
        let text = p.to_json().unwrap();
        assert!(text.starts_with(r#"{"rates":["#));
        let back = TrafficPattern::from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
