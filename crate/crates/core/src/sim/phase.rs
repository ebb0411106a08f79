use std::fmt;

use serde::{Deserialize, Serialize};

use super::network::{Direction, Movement};
use super::SimError;

const LANES: usize = 12;

fn lane(approach: Direction, movement: Movement) -> usize {
    approach.index() * 3 + movement.index()
}

fn lane_parts(lane: usize) -> (Direction, Movement) {
    (Direction::ALL[lane / 3], Movement::ALL[lane % 3])
}

// Left and straight movements from crossing axes conflict; right turns never do.
fn conflicts(a: usize, b: usize) -> bool {
    let (app_a, mov_a) = lane_parts(a);
    let (app_b, mov_b) = lane_parts(b);
    mov_a != Movement::Right
        && mov_b != Movement::Right
        && app_a.is_north_south() != app_b.is_north_south()
}

/// Set of simultaneously permitted (approach, movement) pairs.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase {
    mask: u16,
}

impl Phase {
    pub fn new(permitted: &[(Direction, Movement)]) -> Result<Self, SimError> {
        let mask = permitted.iter().fold(0u16, |m, &(a, mv)| m | 1 << lane(a, mv));
        if mask == 0 {
            return Err(SimError::Phase("a phase must permit at least one movement".into()));
        }
        let lanes: Vec<usize> = (0..LANES).filter(|&l| mask & (1 << l) != 0).collect();
        for (i, &a) in lanes.iter().enumerate() {
            for &b in &lanes[i + 1..] {
                if conflicts(a, b) {
                    return Err(SimError::Phase(format!(
                        "{:?} conflicts with {:?}",
                        lane_parts(a),
                        lane_parts(b)
                    )));
                }
            }
        }
        Ok(Self { mask })
    }

    pub fn permits(&self, approach: Direction, movement: Movement) -> bool {
        self.permits_lane(lane(approach, movement))
    }

    pub(crate) fn permits_lane(&self, lane: usize) -> bool {
        self.mask & (1 << lane) != 0
    }

    pub fn permitted(&self) -> impl Iterator<Item = (Direction, Movement)> + '_ {
        (0..LANES).filter(|&l| self.permits_lane(l)).map(lane_parts)
    }
}

impl fmt::Debug for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.permitted()).finish()
    }
}

/// The eight built-in phases. Every one of them also permits all right turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CanonicalPhase {
    NsStraight,
    NsLeft,
    EwStraight,
    EwLeft,
    NorthAll,
    SouthAll,
    EastAll,
    WestAll,
}

impl CanonicalPhase {
    pub fn phase(self) -> Phase {
        use Direction::*;
        use Movement::*;
        let mut pairs: Vec<(Direction, Movement)> = Direction::ALL.iter().map(|&d| (d, Right)).collect();
        match self {
            CanonicalPhase::NsStraight => pairs.extend([(North, Straight), (South, Straight)]),
            CanonicalPhase::NsLeft => pairs.extend([(North, Left), (South, Left)]),
            CanonicalPhase::EwStraight => pairs.extend([(East, Straight), (West, Straight)]),
            CanonicalPhase::EwLeft => pairs.extend([(East, Left), (West, Left)]),
            CanonicalPhase::NorthAll => pairs.extend([(North, Straight), (North, Left)]),
            CanonicalPhase::SouthAll => pairs.extend([(South, Straight), (South, Left)]),
            CanonicalPhase::EastAll => pairs.extend([(East, Straight), (East, Left)]),
            CanonicalPhase::WestAll => pairs.extend([(West, Straight), (West, Left)]),
        }
        Phase::new(&pairs).expect("canonical phases are conflict-free")
    }
}

/// Ordered list of phases an intersection cycles through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseCombination {
    phases: Vec<Phase>,
}

impl PhaseCombination {
    /// Validates that the phases jointly cover every movement.
    pub fn new(phases: Vec<Phase>) -> Result<Self, SimError> {
        let covered = phases.iter().fold(0u16, |m, p| m | p.mask);
        if covered != (1 << LANES) - 1 {
            let missing: Vec<_> = (0..LANES).filter(|l| covered & (1 << l) == 0).map(lane_parts).collect();
            return Err(SimError::Phase(format!("combination never serves {missing:?}")));
        }
        Ok(Self { phases })
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// The four built-in phase combinations, four phases each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CombinationId {
    C1,
    C2,
    C3,
    C4,
}

impl CombinationId {
    pub const ALL: [CombinationId; 4] = [CombinationId::C1, CombinationId::C2, CombinationId::C3, CombinationId::C4];

    /// Zero-based position in [`CombinationId::ALL`].
    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// One-based label, 1 to 4.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn canonical_phases(self) -> [CanonicalPhase; 4] {
        use CanonicalPhase::*;
        match self {
            CombinationId::C1 => [NsStraight, NsLeft, EwStraight, EwLeft],
            CombinationId::C2 => [NorthAll, SouthAll, EwStraight, EwLeft],
            CombinationId::C3 => [NsStraight, NsLeft, EastAll, WestAll],
            CombinationId::C4 => [NorthAll, SouthAll, EastAll, WestAll],
        }
    }

    pub fn combination(self) -> PhaseCombination {
        PhaseCombination::new(self.canonical_phases().iter().map(|p| p.phase()).collect())
            .expect("built-in combinations cover every movement")
    }
}
