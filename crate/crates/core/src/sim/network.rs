use serde::{Deserialize, Serialize};

use super::SimError;

/// Compass direction. Used both for the side of an intersection a vehicle
/// approaches from and for the direction it is travelling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }

    /// Direction on the left of a vehicle travelling in `self`.
    pub fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    pub fn right(self) -> Direction {
        self.left().opposite()
    }

    pub fn is_north_south(self) -> bool {
        matches!(self, Direction::North | Direction::South)
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Movement {
    Left,
    Straight,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Left, Movement::Straight, Movement::Right];

    pub(crate) fn index(self) -> usize {
        self as usize
    }

    fn classify(heading_in: Direction, heading_out: Direction) -> Option<Movement> {
        if heading_out == heading_in {
            Some(Movement::Straight)
        } else if heading_out == heading_in.left() {
            Some(Movement::Left)
        } else if heading_out == heading_in.right() {
            Some(Movement::Right)
        } else {
            None
        }
    }
}

/// A node on the grid boundary. Every boundary node is both an entry and an
/// exit. `index` is the column for north/south nodes and the row for
/// east/west nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryNode {
    pub id: usize,
    pub side: Direction,
    pub index: usize,
}

/// One intersection visit on a route.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hop {
    pub intersection: usize,
    pub approach: Direction,
    pub movement: Movement,
}

/// Rectangular grid of signalised intersections. Intersection `(r, c)` has
/// index `r * cols + c`; row 0 is the northern edge.
///
/// Boundary node ids run north (by column), east (by row), south (by column),
/// then west (by row).
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficNetwork {
    rows: usize,
    cols: usize,
    link_travel_time: f64,
    saturation_headway: f64,
    boundary_nodes: Vec<BoundaryNode>,
}

impl TrafficNetwork {
    pub const DEFAULT_LINK_TRAVEL_TIME: f64 = 30.0;
    pub const DEFAULT_SATURATION_HEADWAY: f64 = 2.0;

    /// Builds a `rows × cols` grid with 30 s links and a 2 s saturation headway.
    pub fn grid(rows: usize, cols: usize) -> Result<Self, SimError> {
        Self::with_timing(rows, cols, Self::DEFAULT_LINK_TRAVEL_TIME, Self::DEFAULT_SATURATION_HEADWAY)
    }

    pub fn with_timing(
        rows: usize,
        cols: usize,
        link_travel_time: f64,
        saturation_headway: f64,
    ) -> Result<Self, SimError> {
        if rows == 0 || cols == 0 {
            return Err(SimError::EmptyGrid { rows, cols });
        }
        if !(link_travel_time > 0.0 && link_travel_time.is_finite()) {
            return Err(SimError::Timing(format!("link travel time {link_travel_time}")));
        }
        if !(saturation_headway > 0.0 && saturation_headway.is_finite()) {
            return Err(SimError::Timing(format!("saturation headway {saturation_headway}")));
        }
        let mut boundary_nodes = Vec::with_capacity(2 * (rows + cols));
        for (side, count) in [
            (Direction::North, cols),
            (Direction::East, rows),
            (Direction::South, cols),
            (Direction::West, rows),
        ] {
            for index in 0..count {
                boundary_nodes.push(BoundaryNode { id: boundary_nodes.len(), side, index });
            }
        }
        Ok(Self { rows, cols, link_travel_time, saturation_headway, boundary_nodes })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn intersection_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn link_travel_time(&self) -> f64 {
        self.link_travel_time
    }

    pub fn saturation_headway(&self) -> f64 {
        self.saturation_headway
    }

    pub fn boundary_nodes(&self) -> &[BoundaryNode] {
        &self.boundary_nodes
    }

    pub fn boundary(&self, id: usize) -> Result<&BoundaryNode, SimError> {
        self.boundary_nodes.get(id).ok_or(SimError::UnknownNode(id))
    }

    /// Id of the boundary node on `side` at `index`.
    pub fn boundary_id(&self, side: Direction, index: usize) -> Option<usize> {
        self.boundary_nodes
            .iter()
            .find(|n| n.side == side && n.index == index)
            .map(|n| n.id)
    }

    /// Number of parallel corridors entering from `side`.
    pub fn corridors(&self, side: Direction) -> usize {
        if side.is_north_south() {
            self.cols
        } else {
            self.rows
        }
    }

    // Boundary cell next to a node, and the heading of a vehicle entering there.
    fn entry(&self, node: &BoundaryNode) -> ((usize, usize), Direction) {
        let cell = self.edge_cell(node);
        (cell, node.side.opposite())
    }

    fn edge_cell(&self, node: &BoundaryNode) -> (usize, usize) {
        match node.side {
            Direction::North => (0, node.index),
            Direction::South => (self.rows - 1, node.index),
            Direction::East => (node.index, self.cols - 1),
            Direction::West => (node.index, 0),
        }
    }

    /// Shortest Manhattan route between two boundary nodes. Row distance is
    /// closed first, then column distance.
    pub fn route(&self, origin: usize, destination: usize) -> Result<Vec<Hop>, SimError> {
        let from = self.boundary(origin)?;
        let to = self.boundary(destination)?;
        let (mut cell, mut heading) = self.entry(from);
        let exit_cell = self.edge_cell(to);
        let exit_heading = to.side;

        let mut hops = Vec::with_capacity(self.rows + self.cols);
        loop {
            let out = if cell.0 != exit_cell.0 {
                if exit_cell.0 > cell.0 {
                    Direction::South
                } else {
                    Direction::North
                }
            } else if cell.1 != exit_cell.1 {
                if exit_cell.1 > cell.1 {
                    Direction::East
                } else {
                    Direction::West
                }
            } else {
                exit_heading
            };
            let movement =
                Movement::classify(heading, out).ok_or(SimError::NoRoute { origin, destination })?;
            hops.push(Hop {
                intersection: cell.0 * self.cols + cell.1,
                approach: heading.opposite(),
                movement,
            });
            if cell == exit_cell && out == exit_heading {
                return Ok(hops);
            }
            cell = match out {
                Direction::North => (cell.0 - 1, cell.1),
                Direction::South => (cell.0 + 1, cell.1),
                Direction::East => (cell.0, cell.1 + 1),
                Direction::West => (cell.0, cell.1 - 1),
            };
            heading = out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let g = TrafficNetwork::grid(2, 2).unwrap();
        assert_eq!(g.intersection_count(), 4);
        assert_eq!(g.link_travel_time(), 30.0);
        assert_eq!(g.saturation_headway(), 2.0);

        let g = TrafficNetwork::grid(1, 1).unwrap();
        assert_eq!(g.intersection_count(), 1);
        // One node per side; each is both an entry and an exit.
        assert_eq!(g.boundary_nodes().len(), 4);

        let g = TrafficNetwork::grid(3, 3).unwrap();
        assert_eq!(g.intersection_count(), 9);
        let mut per_side = [0usize; 4];
        for n in g.boundary_nodes() {
            per_side[n.side.index()] += 1;
        }
        assert_eq!(per_side, [3, 3, 3, 3]);
        assert_eq!(g.boundary_nodes().len(), 12);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(TrafficNetwork::grid(0, 3), Err(SimError::EmptyGrid { .. })));
        assert!(matches!(TrafficNetwork::grid(2, 0), Err(SimError::EmptyGrid { .. })));
        assert!(TrafficNetwork::with_timing(1, 1, 0.0, 2.0).is_err());
        assert!(TrafficNetwork::with_timing(1, 1, 30.0, -1.0).is_err());
    }

    #[test]
    fn straight_through_route() {
        let g = TrafficNetwork::grid(3, 2).unwrap();
        let n = g.boundary_id(Direction::North, 1).unwrap();
        let s = g.boundary_id(Direction::South, 1).unwrap();
        let hops = g.route(n, s).unwrap();
        assert_eq!(hops.len(), 3);
        for (r, hop) in hops.iter().enumerate() {
            assert_eq!(hop.intersection, r * 2 + 1);
            assert_eq!(hop.approach, Direction::North);
            assert_eq!(hop.movement, Movement::Straight);
        }
    }

    #[test]
    fn rows_are_closed_before_columns() {
        let g = TrafficNetwork::grid(2, 2).unwrap();
        // North of column 0 to south of column 1: down column 0, left turn
        // east along row 1, right turn south out of (1, 1).
        let n0 = g.boundary_id(Direction::North, 0).unwrap();
        let s1 = g.boundary_id(Direction::South, 1).unwrap();
        let hops = g.route(n0, s1).unwrap();
        let summary: Vec<_> = hops.iter().map(|h| (h.intersection, h.approach, h.movement)).collect();
        assert_eq!(
            summary,
            vec![
                (0, Direction::North, Movement::Straight),
                (2, Direction::North, Movement::Left),
                (3, Direction::West, Movement::Right),
            ]
        );

        // East of row 0 to west of row 1: south first along the last column.
        let e0 = g.boundary_id(Direction::East, 0).unwrap();
        let w1 = g.boundary_id(Direction::West, 1).unwrap();
        let hops = g.route(e0, w1).unwrap();
        let summary: Vec<_> = hops.iter().map(|h| (h.intersection, h.approach, h.movement)).collect();
        assert_eq!(
            summary,
            vec![
                (1, Direction::East, Movement::Left),
                (3, Direction::North, Movement::Right),
                (2, Direction::East, Movement::Straight),
            ]
        );
    }

    #[test]
    fn right_turn_on_single_intersection() {
        let g = TrafficNetwork::grid(1, 1).unwrap();
        let n = g.boundary_id(Direction::North, 0).unwrap();
        let w = g.boundary_id(Direction::West, 0).unwrap();
        let hops = g.route(n, w).unwrap();
        assert_eq!(hops, vec![Hop { intersection: 0, approach: Direction::North, movement: Movement::Right }]);
    }

    #[test]
    fn u_turn_is_not_a_route() {
        let g = TrafficNetwork::grid(1, 1).unwrap();
        let n = g.boundary_id(Direction::North, 0).unwrap();
        assert!(matches!(g.route(n, n), Err(SimError::NoRoute { .. })));
        assert!(matches!(g.route(n, 99), Err(SimError::UnknownNode(99))));
    }
}
