//! Scene encoders: the list-of-features matrix (padded for the FCN, variable-size for
//! ego-attention) and the ego-centred occupancy grid for the CNN.
//!
//! Feature layout, shared by list rows and grid channels:
//! `presence, x, y, vx, vy, cos(psi), sin(psi)`. Positions are relative to the ego,
//! velocities are world-frame; both are scaled by their range and clipped to [-1, 1].

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::sim::{Scene, VehicleId, VehicleState};

pub const FEATURES: usize = 7;
/// Other vehicles observed by the fixed-size list.
pub const MAX_OBSERVED: usize = 14;
pub const LIST_ROWS: usize = MAX_OBSERVED + 1;
pub const GRID_CELLS: usize = 32;
pub const GRID_CELL_SIZE: f64 = 2.0;

pub type FeatureRow = [f64; FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanges {
    pub position: f64,
    pub speed: f64,
}

impl Default for FeatureRanges {
    fn default() -> Self {
        Self {
            position: 100.0,
            speed: 20.0,
        }
    }
}

fn scaled(value: f64, range: f64) -> f64 {
    (value / range).clamp(-1.0, 1.0)
}

/// Feature row of `vehicle` as seen from `ego`.
pub fn feature_row(vehicle: &VehicleState, ego: &VehicleState, ranges: &FeatureRanges) -> FeatureRow {
    let v = vehicle.velocity();
    [
        1.0,
        scaled(vehicle.x - ego.x, ranges.position),
        scaled(vehicle.y - ego.y, ranges.position),
        scaled(v.x, ranges.speed),
        scaled(v.y, ranges.speed),
        vehicle.heading.cos(),
        vehicle.heading.sin(),
    ]
}

/// Others sorted by distance to the ego, ties broken by id.
fn canonical_order(scene: &Scene) -> Vec<&VehicleState> {
    let ego = scene.ego.position();
    let mut others: Vec<&VehicleState> = scene.others.iter().collect();
    others.sort_by(|a, b| {
        let da = a.position().distance(ego);
        let db = b.position().distance(ego);
        da.total_cmp(&db).then(a.id.cmp(&b.id))
    });
    others
}

/// Row 0 is the ego; the remaining rows are vehicles in canonical order,
/// followed by all-zero padding rows when padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListObservation {
    pub rows: Vec<FeatureRow>,
}

impl ListObservation {
    pub fn new(rows: Vec<FeatureRow>) -> Self {
        Self { rows }
    }

    /// Rows whose presence bit is set.
    pub fn present_rows(&self) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(|r| r[0] > 0.5)
    }

    pub fn presence_mask(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r[0] > 0.5).collect()
    }

    /// Copy padded with absent rows up to `rows` entries (never truncates).
    pub fn padded(&self, rows: usize) -> ListObservation {
        let mut out = self.rows.clone();
        out.resize(rows.max(self.rows.len()), [0.0; FEATURES]);
        ListObservation { rows: out }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// List encoding of `scene`. Padded lists hold exactly 15 rows; beyond 14 others only
/// the nearest are kept.
pub fn list_observation(scene: &Scene, pad: bool, ranges: &FeatureRanges) -> ListObservation {
    let ordered = canonical_order(scene);
    let mut rows = Vec::with_capacity(if pad { LIST_ROWS } else { ordered.len() + 1 });
    rows.push(feature_row(&scene.ego, &scene.ego, ranges));
    let take = if pad { MAX_OBSERVED } else { ordered.len() };
    rows.extend(
        ordered
            .iter()
            .take(take)
            .map(|v| feature_row(v, &scene.ego, ranges)),
    );
    if pad {
        rows.resize(LIST_ROWS, [0.0; FEATURES]);
    }
    ListObservation { rows }
}

/// Ids of the vehicles behind the present rows of [`list_observation`], in row order.
pub fn observed_ids(scene: &Scene, pad: bool) -> Vec<VehicleId> {
    let ordered = canonical_order(scene);
    let take = if pad { MAX_OBSERVED } else { ordered.len() };
    std::iter::once(scene.ego.id)
        .chain(ordered.iter().take(take).map(|v| v.id))
        .collect()
}

/// One occupied grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub ix: usize,
    pub iy: usize,
    pub channels: FeatureRow,
}

/// 32 x 32 x 7 ego-centred occupancy grid, stored sparsely (occupied cells only,
/// ordered by `(ix, iy)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridObservation {
    cells: Vec<GridCell>,
}

impl GridObservation {
    pub const SHAPE: [usize; 3] = [GRID_CELLS, GRID_CELLS, FEATURES];

    pub fn from_cells(mut cells: Vec<GridCell>) -> Self {
        cells.sort_by_key(|c| (c.ix, c.iy));
        Self { cells }
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn cell(&self, ix: usize, iy: usize) -> Option<&GridCell> {
        self.cells
            .binary_search_by_key(&(ix, iy), |c| (c.ix, c.iy))
            .ok()
            .map(|i| &self.cells[i])
    }

    pub fn presence(&self, ix: usize, iy: usize) -> f64 {
        self.cell(ix, iy).map_or(0.0, |c| c.channels[0])
    }

    /// Dense `[32, 32, 7]` tensor; index `(ix, iy, channel)`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = vec![0.0; GRID_CELLS * GRID_CELLS * FEATURES];
        for c in &self.cells {
            let base = (c.ix * GRID_CELLS + c.iy) * FEATURES;
            data[base..base + FEATURES].copy_from_slice(&c.channels);
        }
        Tensor::new(Self::SHAPE.to_vec(), data).expect("grid shape")
    }
}

/// Cell holding a vehicle at offset `(dx, dy)` metres from the ego, if inside the grid.
pub fn grid_cell_of(dx: f64, dy: f64) -> Option<(usize, usize)> {
    let half = GRID_CELLS as f64 * GRID_CELL_SIZE / 2.0;
    let ix = ((dx + half) / GRID_CELL_SIZE).floor();
    let iy = ((dy + half) / GRID_CELL_SIZE).floor();
    let range = 0.0..GRID_CELLS as f64;
    (range.contains(&ix) && range.contains(&iy)).then_some((ix as usize, iy as usize))
}

/// Occupancy grid of `scene`. When several vehicles fall in one cell the one nearest
/// to the ego is kept (ties by id), so the ego always owns the centre cell.
pub fn grid_observation(scene: &Scene, ranges: &FeatureRanges) -> GridObservation {
    let mut cells: Vec<GridCell> = Vec::new();
    let ego = &scene.ego;
    for v in std::iter::once(ego).chain(canonical_order(scene)) {
        let Some((ix, iy)) = grid_cell_of(v.x - ego.x, v.y - ego.y) else {
            continue;
        };
        // Canonical order is nearest first, so the first vehicle claiming a cell wins.
        if cells.iter().any(|c| c.ix == ix && c.iy == iy) {
            continue;
        }
        cells.push(GridCell {
            ix,
            iy,
            channels: feature_row(v, ego, ranges),
        });
    }
    GridObservation::from_cells(cells)
}

/// Input to a Q-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    List(ListObservation),
    Grid(GridObservation),
}

impl Observation {
    pub fn as_list(&self) -> Option<&ListObservation> {
        match self {
            Observation::List(l) => Some(l),
            Observation::Grid(_) => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridObservation> {
        match self {
            Observation::Grid(g) => Some(g),
            Observation::List(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Observation::List(l) => l.rows.iter().flatten().all(|v| v.is_finite()),
            Observation::Grid(g) => g.cells.iter().flat_map(|c| c.channels).all(|v| v.is_finite()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{env_reset, EnvConfig};

    fn scene_with(others: Vec<VehicleState>) -> Scene {
        let cfg = EnvConfig {
            min_vehicles: 0,
            max_vehicles: 0,
            ..EnvConfig::default()
        };
        let mut scene = env_reset(0, &cfg).unwrap();
        scene.ego = VehicleState::new(0, 0.0, 0.0, 5.0, 0.0);
        scene.others = others;
        scene
    }

    #[test]
    fn ego_row_has_zero_position() {
        let ego = VehicleState::new(0, 12.0, -7.0, 8.0, 0.7);
        let r = feature_row(&ego, &ego, &FeatureRanges::default());
        let v = ego.velocity();
        assert_eq!(r, [1.0, 0.0, 0.0, v.x / 20.0, v.y / 20.0, 0.7f64.cos(), 0.7f64.sin()]);
    }

    #[test]
    fn feature_row_arithmetic() {
        let ranges = FeatureRanges {
            position: 100.0,
            speed: 10.0,
        };
        let ego = VehicleState::new(0, 0.0, 0.0, 3.0, 1.0);
        let v = VehicleState::new(1, 10.0, 0.0, 5.0, 0.0);
        assert_eq!(feature_row(&v, &ego, &ranges), [1.0, 0.1, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let far = VehicleState::new(2, 500.0, 0.0, 5.0, 0.0);
        assert_eq!(feature_row(&far, &ego, &ranges)[1], 1.0);
    }

    #[test]
    fn padded_empty_scene() {
        let scene = scene_with(vec![]);
        let obs = list_observation(&scene, true, &FeatureRanges::default());
        assert_eq!(obs.rows.len(), LIST_ROWS);
        assert_eq!(obs.rows[0][0], 1.0);
        assert!(obs.rows[1..].iter().all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn unpadded_size_and_prefix_agreement() {
        let others = vec![
            VehicleState::new(1, 30.0, 0.0, 5.0, 0.0),
            VehicleState::new(2, -3.0, 4.0, 5.0, 1.0),
            VehicleState::new(3, 0.0, 12.0, 5.0, 2.0),
        ];
        let scene = scene_with(others);
        let ranges = FeatureRanges::default();
        let short = list_observation(&scene, false, &ranges);
        let long = list_observation(&scene, true, &ranges);
        assert_eq!(short.rows.len(), 4);
        assert_eq!(&long.rows[..4], &short.rows[..]);
        // nearest first: id 2 (5 m), id 3 (12 m), id 1 (30 m)
        assert_eq!(short.rows[1][1], -0.03);
        assert_eq!(short.rows[3][1], 0.3);
        assert_eq!(observed_ids(&scene, false), vec![0, 2, 3, 1]);
    }

    #[test]
    fn grid_examples() {
        let ranges = FeatureRanges::default();
        let empty = grid_observation(&scene_with(vec![]), &ranges);
        assert_eq!(empty.cells().len(), 1);
        assert_eq!(empty.presence(16, 16), 1.0);

        let scene = scene_with(vec![
            VehicleState::new(1, 5.0, 0.0, 5.0, 0.0),
            VehicleState::new(2, 40.0, 0.0, 5.0, 0.0),
        ]);
        let grid = grid_observation(&scene, &ranges);
        assert_eq!(grid.presence(18, 16), 1.0);
        assert_eq!(grid.cells().len(), 2);
        let dense = grid.to_tensor();
        assert_eq!(dense.shape(), &[32, 32, 7]);
        let sum: f64 = dense.data().iter().step_by(FEATURES).sum();
        assert_eq!(sum, 2.0);
    }

    #[test]
    fn nearest_vehicle_wins_a_shared_cell() {
        let ranges = FeatureRanges::default();
        let scene = scene_with(vec![
            VehicleState::new(1, 5.9, 0.5, 5.0, 0.0),
            VehicleState::new(2, 4.1, 0.2, 7.0, 0.0),
        ]);
        let grid = grid_observation(&scene, &ranges);
        let cell = grid.cell(18, 16).unwrap();
        assert_eq!(cell.channels[1], 4.1 / 100.0);
    }
}
