use crossroads_core::dqn::encode;
use crossroads_core::nn::{ArchConfig, ModelKind, QModel, Tensor};
use crossroads_core::obs::{
    feature_row, grid_cell_of, grid_observation, list_observation, FeatureRanges, ListObservation, Observation, FEATURES, LIST_ROWS,
};
use crossroads_core::sim::{EnvConfig, IntersectionEnv, Scene, VehicleState};
use proptest::prelude::*;
use std::sync::OnceLock;

fn env() -> &'static IntersectionEnv {
    static ENV: OnceLock<IntersectionEnv> = OnceLock::new();
    ENV.get_or_init(|| IntersectionEnv::new(EnvConfig::default()).unwrap())
}

fn attention_model() -> &'static QModel {
    static MODEL: OnceLock<QModel> = OnceLock::new();
    MODEL.get_or_init(|| QModel::new(ModelKind::EgoAttention, &ArchConfig::default(), 11).unwrap())
}

/// Scene with arbitrary others placed around a reset ego.
fn scene_strategy(max_others: usize, spread: f64) -> impl Strategy<Value = Scene> {
    (
        any::<u64>(),
        prop::collection::vec((-spread..spread, -spread..spread, 0.0..25.0f64, -3.2..3.2f64), 0..=max_others),
    )
        .prop_map(move |(seed, others)| {
            let mut scene = env().reset(seed);
            let (ex, ey) = (scene.ego.x, scene.ego.y);
            scene.others = others
                .into_iter()
                .enumerate()
                .map(|(i, (dx, dy, v, psi))| VehicleState::new(i as u32 + 1, ex + dx, ey + dy, v, psi))
                .collect();
            scene
        })
}

fn shuffled(scene: &Scene, rotation: usize) -> Scene {
    let mut s = scene.clone();
    if !s.others.is_empty() {
        let k = rotation % s.others.len();
        s.others.rotate_left(k);
        s.others.reverse();
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn features_are_bounded(scene in scene_strategy(20, 400.0)) {
        let ranges = FeatureRanges::default();
        for pad in [false, true] {
            let list = list_observation(&scene, pad, &ranges);
            prop_assert!(list.rows.iter().flatten().all(|v| v.is_finite() && v.abs() <= 1.0));
            if pad {
                prop_assert_eq!(list.rows.len(), LIST_ROWS);
            } else {
                prop_assert_eq!(list.rows.len(), scene.others.len() + 1);
            }
        }
        let grid = grid_observation(&scene, &ranges);
        prop_assert!(grid.cells().iter().flat_map(|c| c.channels).all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn encodings_ignore_vehicle_order(scene in scene_strategy(14, 40.0), rotation in 0usize..20) {
        let other = shuffled(&scene, rotation);
        for kind in ModelKind::ALL {
            prop_assert_eq!(encode(&scene, kind), encode(&other, kind));
        }
    }

    #[test]
    fn grid_agrees_with_list(scene in scene_strategy(14, 40.0)) {
        let ranges = FeatureRanges::default();
        let list = list_observation(&scene, false, &ranges);
        let grid = grid_observation(&scene, &ranges);
        let vehicles: Vec<&VehicleState> = std::iter::once(&scene.ego).chain(scene.others.iter()).collect();
        let cells: Vec<Option<(usize, usize)>> =
            vehicles.iter().map(|v| grid_cell_of(v.x - scene.ego.x, v.y - scene.ego.y)).collect();
        for (i, cell) in cells.iter().enumerate() {
            let Some((ix, iy)) = *cell else { continue };
            prop_assert_eq!(grid.presence(ix, iy), 1.0);
            if cells.iter().filter(|c| **c == Some((ix, iy))).count() == 1 {
                let expected = feature_row(vehicles[i], &scene.ego, &ranges);
                prop_assert!(list.rows.contains(&expected));
                prop_assert_eq!(grid.cell(ix, iy).unwrap().channels, expected);
            }
        }
        let occupied = cells.iter().flatten().collect::<std::collections::BTreeSet<_>>().len();
        prop_assert_eq!(grid.cells().len(), occupied);
    }

    #[test]
    fn attention_is_a_distribution_and_order_free(scene in scene_strategy(14, 60.0), rotation in 0usize..20) {
        let model = attention_model();
        let raw = list_observation(&scene, false, &FeatureRanges::default());
        let mut rows = raw.rows.clone();
        if rows.len() > 2 {
            let k = 1 + rotation % (rows.len() - 1);
            rows[1..].rotate_left(k - 1);
            rows[1..].reverse();
        }
        let a = model.q_values(&Observation::List(raw.clone())).unwrap();
        let b = model.q_values(&Observation::List(ListObservation::new(rows))).unwrap();
        for (x, y) in a.values.iter().zip(b.values) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
        for head in a.trace.unwrap().heads {
            prop_assert_eq!(head.len(), raw.rows.len());
            prop_assert!(head.iter().all(|w| *w >= 0.0));
            prop_assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn padding_rows_are_inert(scene in scene_strategy(14, 60.0), extra in 0usize..6) {
        let model = attention_model();
        let raw = list_observation(&scene, false, &FeatureRanges::default());
        let padded = raw.padded(raw.rows.len() + extra);
        let a = model.q_values(&Observation::List(raw.clone())).unwrap();
        let b = model.q_values(&Observation::List(padded.clone())).unwrap();
        for (x, y) in a.values.iter().zip(b.values) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        let batch = Tensor::new(vec![1, padded.rows.len(), FEATURES], padded.flat()).unwrap();
        let c = model.masked_batch_forward(&batch, &[padded.presence_mask()]).unwrap();
        prop_assert_eq!(c[0].values, b.values);
    }
}
