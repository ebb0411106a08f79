//! Decision variables and their decoding into signal plans.
//!
//! A design is a flat vector in `[0, 1]^{I×J}`: one block of `J` logits per
//! intersection. For the phase-combination task the block selects one of the
//! four built-in combinations and the cycle is split evenly; for the
//! phase-time-allocation task the block is softmax-weighted into green
//! durations on top of the minimum green, using combination 1.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::sim::{CombinationId, SimConfig};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("design has {got} values, expected {intersections} x {options}")]
    Length { got: usize, intersections: usize, options: usize },
    #[error("design value {value} at position {index} is outside [0, 1]")]
    OutOfBox { index: usize, value: f64 },
    #[error("combination designs need exactly {expected} options per intersection, got {got}")]
    Options { expected: usize, got: usize },
    #[error("cycle time {cycle_time} must exceed {phases} x minimum green {min_green}")]
    Cycle { cycle_time: f64, min_green: f64, phases: usize },
    #[error("expected a {expected:?} design, got {got:?}")]
    Kind { expected: DesignKind, got: DesignKind },
    #[error("design dimensions must be positive")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Combination,
    #[default]
    Allocation,
}

/// Shape of a design: its kind, intersection count `I` and options per
/// intersection `J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub kind: DesignKind,
    #[serde(rename = "I")]
    pub intersections: usize,
    #[serde(rename = "J")]
    pub options: usize,
}

impl DesignSpace {
    pub fn new(kind: DesignKind, intersections: usize, options: usize) -> Result<Self, DesignError> {
        if intersections == 0 || options == 0 {
            return Err(DesignError::Empty);
        }
        if kind == DesignKind::Combination && options != CombinationId::ALL.len() {
            return Err(DesignError::Options { expected: CombinationId::ALL.len(), got: options });
        }
        Ok(Self { kind, intersections, options })
    }

    pub fn dim(&self) -> usize {
        self.intersections * self.options
    }

    /// Uniform sample from the unit box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Design {
        let values = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
        Design { space: *self, values }
    }

    pub fn design(&self, values: Vec<f64>) -> Result<Design, DesignError> {
        Design::new(*self, values)
    }
}

/// A point in the design box. Serialized as `{kind, I, J, values}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    #[serde(flatten)]
    pub space: DesignSpace,
    pub values: Vec<f64>,
}

impl Design {
    pub fn new(space: DesignSpace, values: Vec<f64>) -> Result<Self, DesignError> {
        if values.len() != space.dim() {
            return Err(DesignError::Length {
                got: values.len(),
                intersections: space.intersections,
                options: space.options,
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(DesignError::OutOfBox { index, value });
        }
        Ok(Self { space, values })
    }

    pub fn kind(&self) -> DesignKind {
        self.space.kind
    }

    /// Logits of intersection `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        let j = self.space.options;
        &self.values[i * j..(i + 1) * j]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.space.options)
    }
}

/// Combination and green durations of one intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub combination: CombinationId,
    pub durations: Vec<f64>,
}

/// Signal plans for every intersection, in intersection order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedSchedule {
    pub plans: Vec<SignalPlan>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

/// Picks a combination per intersection as the argmax of its softmaxed block.
pub fn decode_combination(x: &Design) -> Result<Vec<CombinationId>, DesignError> {
    if x.space.options != CombinationId::ALL.len() {
        return Err(DesignError::Options { expected: CombinationId::ALL.len(), got: x.space.options });
    }
    Ok(x.blocks()
        .map(|block| CombinationId::ALL[argmax(&softmax(block))])
        .collect())
}

/// Green durations `g_min + (c - g_min·J)·softmax(logits)`.
///
/// Accepts any real logits, not only the unit box.
pub fn allocation_durations(logits: &[f64], cycle_time: f64, min_green: f64) -> Result<Vec<f64>, DesignError> {
    let phases = logits.len();
    let spare = cycle_time - min_green * phases as f64;
    if !(spare > 0.0) || phases == 0 {
        return Err(DesignError::Cycle { cycle_time, min_green, phases });
    }
    Ok(softmax(logits).into_iter().map(|w| min_green + spare * w).collect())
}

/// Decodes an allocation design on combination 1.
pub fn decode_allocation(x: &Design, cycle_time: f64, min_green: f64) -> Result<DecodedSchedule, DesignError> {
    if x.kind() != DesignKind::Allocation {
        return Err(DesignError::Kind { expected: DesignKind::Allocation, got: x.kind() });
    }
    let plans = x
        .blocks()
        .map(|block| {
            Ok(SignalPlan {
                combination: CombinationId::C1,
                durations: allocation_durations(block, cycle_time, min_green)?,
            })
        })
        .collect::<Result<_, DesignError>>()?;
    Ok(DecodedSchedule { plans })
}

/// Decodes either kind of design into a schedule for the simulator.
pub fn decode(x: &Design, sim: &SimConfig) -> Result<DecodedSchedule, DesignError> {
    match x.kind() {
        DesignKind::Allocation => decode_allocation(x, sim.cycle_time, sim.min_green),
        DesignKind::Combination => {
            let phases = CombinationId::C1.canonical_phases().len();
            let even = sim.cycle_time / phases as f64;
            if !(sim.cycle_time > sim.min_green * phases as f64) {
                return Err(DesignError::Cycle { cycle_time: sim.cycle_time, min_green: sim.min_green, phases });
            }
            let plans = decode_combination(x)?
                .into_iter()
                .map(|combination| SignalPlan { combination, durations: vec![even; phases] })
                .collect();
            Ok(DecodedSchedule { plans })
        }
    }
}

/// Uniform random design, reproducible from `seed`.
pub fn sample_design(kind: DesignKind, intersections: usize, options: usize, seed: u64) -> Result<Design, DesignError> {
    let space = DesignSpace::new(kind, intersections, options)?;
    Ok(space.sample(&mut seed::rng(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn combo(values: Vec<f64>) -> Design {
        let space = DesignSpace::new(DesignKind::Combination, values.len() / 4, 4).unwrap();
        Design::new(space, values).unwrap()
    }

    #[test]
    fn combination_argmax_and_ties() {
        assert_eq!(decode_combination(&combo(vec![0.9, 0.1, 0.1, 0.1])).unwrap(), vec![CombinationId::C1]);
        assert_eq!(decode_combination(&combo(vec![0.3, 0.3, 0.1, 0.1])).unwrap()[0].number(), 1);
        assert_eq!(decode_combination(&combo(vec![0.1, 0.2, 0.2, 0.7])).unwrap()[0].number(), 4);
        let shifted = combo(vec![0.95, 0.15, 0.15, 0.15]);
        assert_eq!(decode_combination(&shifted).unwrap(), vec![CombinationId::C1]);
    }

    #[test]
    fn combination_schedule_splits_cycle_evenly() {
        let s = decode(&combo(vec![0.1, 0.8, 0.2, 0.3, 0.0, 0.0, 0.0, 1.0]), &SimConfig::default()).unwrap();
        assert_eq!(s.plans[0].combination, CombinationId::C2);
        assert_eq!(s.plans[1].combination, CombinationId::C4);
        assert!(s.plans.iter().all(|p| p.durations == vec![45.0; 4]));
    }

    #[test]
    fn combination_requires_four_options() {
        let space = DesignSpace { kind: DesignKind::Combination, intersections: 1, options: 3 };
        let x = Design { space, values: vec![0.1, 0.2, 0.3] };
        assert!(matches!(decode_combination(&x), Err(DesignError::Options { .. })));
        assert!(DesignSpace::new(DesignKind::Combination, 1, 3).is_err());
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocation_durations(&[0.5; 4], 180.0, 30.0).unwrap(), vec![45.0; 4]);
        let d = allocation_durations(&[1.0, 0.0, 0.0, 0.0], 180.0, 30.0).unwrap();
        // softmax [e, 1, 1, 1] / (e + 3)
        let e = std::f64::consts::E;
        let expected = [30.0 + 60.0 * e / (e + 3.0), 30.0 + 60.0 / (e + 3.0), 30.0 + 60.0 / (e + 3.0), 30.0 + 60.0 / (e + 3.0)];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d[0] - 58.52).abs() < 5e-3 && (d[1] - 40.49).abs() < 5e-3);
        assert!((d.iter().sum::<f64>() - 180.0).abs() < 1e-9);
        assert!(allocation_durations(&[0.0; 4], 120.0, 30.0).is_err());
    }

    #[test]
    fn allocation_rejects_wrong_kind() {
        let x = combo(vec![0.5; 4]);
        assert!(matches!(decode_allocation(&x, 180.0, 30.0), Err(DesignError::Kind { .. })));
    }

    #[test]
    fn design_validation() {
        let space = DesignSpace::new(DesignKind::Allocation, 2, 4).unwrap();
        assert!(matches!(space.design(vec![0.5; 7]), Err(DesignError::Length { .. })));
        assert!(matches!(space.design(vec![0.5, 1.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]), Err(DesignError::OutOfBox { index: 1, .. })));
        let x = space.design(vec![0.25; 8]).unwrap();
        let json = serde_json::to_string(&x).unwrap();
        assert_eq!(json, r#"{"kind":"allocation","I":2,"J":4,"values":[0.25,0.25,0.25,0.25,0.25,0.25,0.25,0.25]}"#);
        assert_eq!(serde_json::from_str::<Design>(&json).unwrap(), x);
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let a = sample_design(DesignKind::Allocation, 4, 4, 0).unwrap();
        let b = sample_design(DesignKind::Allocation, 4, 4, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 16);
        assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, sample_design(DesignKind::Allocation, 4, 4, 1).unwrap());
    }

    #[test]
    fn sample_mean_is_one_half() {
        let mut rng = seed::rng(5);
        let space = DesignSpace::new(DesignKind::Allocation, 4, 4).unwrap();
        let n = 10_000;
        let total: f64 = (0..n).map(|_| space.sample(&mut rng).values[3]).sum();
        assert!((total / n as f64 - 0.5).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn durations_sum_to_cycle_for_any_logits(logits in prop::collection::vec(-50.0f64..50.0, 4), shift in -10.0f64..10.0) {
            let d = allocation_durations(&logits, 180.0, 30.0).unwrap();
            prop_assert!((d.iter().sum::<f64>() - 180.0).abs() < 1e-9);
            prop_assert!(d.iter().all(|&v| v >= 30.0));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let e = allocation_durations(&shifted, 180.0, 30.0).unwrap();
            for (a, b) in d.iter().zip(&e) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn argmax_commutes_with_softmax(values in prop::collection::vec(0.0f64..1.0, 4)) {
            prop_assert_eq!(argmax(&values), argmax(&softmax(&values)));
        }
    }
}
