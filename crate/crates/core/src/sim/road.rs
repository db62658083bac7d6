//! Four-arm intersection geometry: one incoming and one outgoing lane per arm,
//! joined inside the central box by straight connectors and quarter-circle turns.
//! Traffic keeps to the right.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::geometry::{wrap_to_pi, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    South,
    West,
    North,
    East,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::South, Arm::West, Arm::North, Arm::East];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Arm {
        Self::ALL[i % 4]
    }

    /// Unit vector pointing from the intersection centre out along the arm.
    pub fn outward(self) -> Vec2 {
        match self {
            Arm::South => Vec2::new(0.0, -1.0),
            Arm::West => Vec2::new(-1.0, 0.0),
            Arm::North => Vec2::new(0.0, 1.0),
            Arm::East => Vec2::new(1.0, 0.0),
        }
    }

    /// Arm reached by taking `turn` after entering from this arm.
    pub fn exit_for(self, turn: Turn) -> Arm {
        match turn {
            Turn::Left => Arm::from_index(self.index() + 1),
            Turn::Straight => Arm::from_index(self.index() + 2),
            Turn::Right => Arm::from_index(self.index() + 3),
        }
    }

    /// Manoeuvre needed to go from this arm to `to`; `None` for a U-turn.
    pub fn turn_to(self, to: Arm) -> Option<Turn> {
        match (to.index() + 4 - self.index()) % 4 {
            1 => Some(Turn::Left),
            2 => Some(Turn::Straight),
            3 => Some(Turn::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Arm::South => "south",
            Arm::West => "west",
            Arm::North => "north",
            Arm::East => "east",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl std::str::FromStr for Turn {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Turn::Left),
            "straight" => Ok(Turn::Straight),
            "right" => Ok(Turn::Right),
            other => Err(format!("unknown destination `{other}` (expected left, straight or right)")),
        }
    }
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Turn::Left => "left",
            Turn::Straight => "straight",
            Turn::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LaneId {
    Incoming(Arm),
    Connector { from: Arm, to: Arm },
    Outgoing(Arm),
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaneId::Incoming(a) => write!(f, "in:{a}"),
            LaneId::Connector { from, to } => write!(f, "{from}->{to}"),
            LaneId::Outgoing(a) => write!(f, "out:{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LaneShape {
    Line {
        start: Vec2,
        end: Vec2,
    },
    /// Circular arc starting at polar angle `start_angle` around `center`.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        clockwise: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub shape: LaneShape,
    pub length: f64,
}

impl Lane {
    fn line(id: LaneId, start: Vec2, end: Vec2) -> Self {
        Self {
            id,
            length: start.distance(end),
            shape: LaneShape::Line { start, end },
        }
    }

    fn quarter_arc(id: LaneId, start: Vec2, heading: Vec2, radius: f64, clockwise: bool) -> Self {
        let normal = if clockwise {
            heading.right_normal()
        } else {
            heading.left_normal()
        };
        let center = start + normal * radius;
        Self {
            id,
            length: radius * FRAC_PI_2,
            shape: LaneShape::Arc {
                center,
                radius,
                start_angle: (start - center).angle(),
                clockwise,
            },
        }
    }

    /// Point at longitudinal coordinate `s`, shifted `lateral` metres to the left.
    pub fn position(&self, s: f64, lateral: f64) -> Vec2 {
        match &self.shape {
            LaneShape::Line { start, end } => {
                let dir = (*end - *start) * (1.0 / self.length);
                *start + dir * s + dir.left_normal() * lateral
            }
            LaneShape::Arc {
                center,
                radius,
                start_angle,
                clockwise,
            } => {
                let (phi, r) = if *clockwise {
                    (start_angle - s / radius, radius + lateral)
                } else {
                    (start_angle + s / radius, radius - lateral)
                };
                *center + Vec2::from_angle(phi) * r
            }
        }
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        match &self.shape {
            LaneShape::Line { start, end } => (*end - *start).angle(),
            LaneShape::Arc {
                radius,
                start_angle,
                clockwise,
                ..
            } => {
                if *clockwise {
                    wrap_to_pi(start_angle - s / radius - FRAC_PI_2)
                } else {
                    wrap_to_pi(start_angle + s / radius + FRAC_PI_2)
                }
            }
        }
    }

    /// Signed curvature (positive when turning left).
    pub fn curvature(&self) -> f64 {
        match &self.shape {
            LaneShape::Line { .. } => 0.0,
            LaneShape::Arc {
                radius, clockwise, ..
            } => {
                if *clockwise {
                    -1.0 / radius
                } else {
                    1.0 / radius
                }
            }
        }
    }

    /// Longitudinal and lateral (positive to the left) coordinates of `p` in the lane frame.
    pub fn local_coordinates(&self, p: Vec2) -> (f64, f64) {
        match &self.shape {
            LaneShape::Line { start, end } => {
                let dir = (*end - *start) * (1.0 / self.length);
                let d = p - *start;
                (d.dot(dir), dir.cross(d))
            }
            LaneShape::Arc {
                center,
                radius,
                start_angle,
                clockwise,
            } => {
                let rel = p - *center;
                let phi = rel.angle();
                let dist = rel.norm();
                if *clockwise {
                    (radius * wrap_to_pi(start_angle - phi), dist - radius)
                } else {
                    (radius * wrap_to_pi(phi - start_angle), radius - dist)
                }
            }
        }
    }
}

/// Dimensions of the intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub lane_width: f64,
    /// Length of each incoming lane up to the box edge.
    pub approach_length: f64,
    /// Length of each outgoing lane after the box edge.
    pub exit_length: f64,
    pub right_turn_radius: f64,
}

impl Default for RoadLayout {
    fn default() -> Self {
        Self {
            lane_width: 4.0,
            approach_length: 60.0,
            exit_length: 25.0,
            right_turn_radius: 9.0,
        }
    }
}

impl RoadLayout {
    /// Distance from the centre to the stop line of every arm.
    pub fn box_half_size(&self) -> f64 {
        self.right_turn_radius + self.lane_width / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    layout: RoadLayout,
    lanes: Vec<Lane>,
}

impl Road {
    pub fn new(layout: RoadLayout) -> Self {
        let half = layout.box_half_size();
        let offset = layout.lane_width / 2.0;
        let mut lanes = Vec::with_capacity(20);
        for arm in Arm::ALL {
            let out = arm.outward();
            let inward = -out;
            let right = inward.right_normal();
            lanes.push(Lane::line(
                LaneId::Incoming(arm),
                out * (half + layout.approach_length) + right * offset,
                out * half + right * offset,
            ));
        }
        for arm in Arm::ALL {
            let out = arm.outward();
            let right = out.right_normal();
            lanes.push(Lane::line(
                LaneId::Outgoing(arm),
                out * half + right * offset,
                out * (half + layout.exit_length) + right * offset,
            ));
        }
        for from in Arm::ALL {
            for turn in [Turn::Left, Turn::Straight, Turn::Right] {
                let to = from.exit_for(turn);
                let id = LaneId::Connector { from, to };
                let inward = -from.outward();
                let start = from.outward() * half + inward.right_normal() * offset;
                let lane = match turn {
                    Turn::Straight => {
                        let end = to.outward() * half + to.outward().right_normal() * offset;
                        Lane::line(id, start, end)
                    }
                    Turn::Left => Lane::quarter_arc(id, start, inward, half + offset, false),
                    Turn::Right => Lane::quarter_arc(id, start, inward, half - offset, true),
                };
                lanes.push(lane);
            }
        }
        Self { layout, lanes }
    }

    pub fn layout(&self) -> &RoadLayout {
        &self.layout
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        let idx = match id {
            LaneId::Incoming(a) => a.index(),
            LaneId::Outgoing(a) => 4 + a.index(),
            LaneId::Connector { from, to } => {
                let turn = from.turn_to(to).expect("connector between distinct arms");
                let t = match turn {
                    Turn::Left => 0,
                    Turn::Straight => 1,
                    Turn::Right => 2,
                };
                8 + 3 * from.index() + t
            }
        };
        &self.lanes[idx]
    }

    /// Lane sequence from the incoming lane of `from` to the outgoing lane of `to`.
    pub fn route(&self, from: Arm, to: Arm) -> Vec<LaneId> {
        vec![
            LaneId::Incoming(from),
            LaneId::Connector { from, to },
            LaneId::Outgoing(to),
        ]
    }

    pub fn route_length(&self, route: &[LaneId]) -> f64 {
        route.iter().map(|id| self.lane(*id).length).sum()
    }

    /// Distance travelled along `route` when at `s` on lane `lane_index`.
    pub fn route_progress(&self, route: &[LaneId], lane_index: usize, s: f64) -> f64 {
        route[..lane_index]
            .iter()
            .map(|id| self.lane(*id).length)
            .sum::<f64>()
            + s
    }

    /// Point and heading at distance `progress` along `route`, extrapolating past its end.
    pub fn position_along_route(&self, route: &[LaneId], progress: f64) -> (Vec2, f64) {
        let (lane, s) = self.lane_along_route(route, progress);
        (lane.position(s, 0.0), lane.heading_at(s))
    }

    /// Lane containing distance `progress` along `route`, and the offset into it.
    pub fn lane_along_route(&self, route: &[LaneId], mut progress: f64) -> (&Lane, f64) {
        for (k, id) in route.iter().enumerate() {
            let lane = self.lane(*id);
            if progress <= lane.length || k + 1 == route.len() {
                return (lane, progress);
            }
            progress -= lane.length;
        }
        unreachable!("routes are never empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec2, b: Vec2) -> bool {
        a.distance(b) < 1e-9
    }

    #[test]
    fn lanes_join_without_gaps() {
        let road = Road::new(RoadLayout::default());
        for from in Arm::ALL {
            for turn in [Turn::Left, Turn::Straight, Turn::Right] {
                let to = from.exit_for(turn);
                let route = road.route(from, to);
                for pair in route.windows(2) {
                    let a = road.lane(pair[0]);
                    let b = road.lane(pair[1]);
                    assert!(close(a.position(a.length, 0.0), b.position(0.0, 0.0)));
                    let dh = wrap_to_pi(a.heading_at(a.length) - b.heading_at(0.0));
                    assert!(dh.abs() < 1e-9, "{:?} -> {:?}", pair[0], pair[1]);
                }
            }
        }
    }

    #[test]
    fn south_left_turn_geometry() {
        let road = Road::new(RoadLayout::default());
        let lane = road.lane(LaneId::Connector {
            from: Arm::South,
            to: Arm::West,
        });
        assert!(close(lane.position(0.0, 0.0), Vec2::new(2.0, -11.0)));
        assert!(close(lane.position(lane.length, 0.0), Vec2::new(-11.0, 2.0)));
        assert!((lane.length - 13.0 * FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn local_coordinates_invert_position() {
        let road = Road::new(RoadLayout::default());
        for lane in road.lanes() {
            for &(s, lat) in &[(0.5, 0.3), (3.0, -0.7), (lane.length * 0.8, 1.1)] {
                let p = lane.position(s, lat);
                let (s2, lat2) = lane.local_coordinates(p);
                assert!((s - s2).abs() < 1e-9, "{}: s {s} vs {s2}", lane.id);
                assert!((lat - lat2).abs() < 1e-9, "{}: lat {lat} vs {lat2}", lane.id);
            }
        }
    }

    #[test]
    fn turn_arithmetic() {
        assert_eq!(Arm::South.exit_for(Turn::Left), Arm::West);
        assert_eq!(Arm::South.exit_for(Turn::Right), Arm::East);
        assert_eq!(Arm::East.exit_for(Turn::Left), Arm::South);
        assert_eq!(Arm::West.turn_to(Arm::North), Some(Turn::Left));
        assert_eq!(Arm::West.turn_to(Arm::West), None);
    }
}
