//! Finite-difference verification of the reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, ModelKind, NnError, QModel, Tape, NUM_ACTIONS};
use crate::obs::{GridCell, GridObservation, ListObservation, Observation, FEATURES, GRID_CELLS, LIST_ROWS};

/// A present feature row with every entry in its valid range.
pub fn random_row(rng: &mut impl Rng) -> [f64; FEATURES] {
    let psi: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    [
        1.0,
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        psi.cos(),
        psi.sin(),
    ]
}

/// Random observation of the shape `kind` consumes: a grid with up to 12 occupied
/// cells, or a list of 1 to 15 present rows (padded to 15 for the FCN).
pub fn random_observation(kind: ModelKind, rng: &mut impl Rng) -> Observation {
    match kind {
        ModelKind::Cnn => {
            let mut cells = std::collections::BTreeMap::new();
            for _ in 0..rng.gen_range(1..=12) {
                let (ix, iy) = (rng.gen_range(0..GRID_CELLS), rng.gen_range(0..GRID_CELLS));
                cells.insert((ix, iy), GridCell { ix, iy, channels: random_row(rng) });
            }
            Observation::Grid(GridObservation::from_cells(cells.into_values().collect()))
        }
        ModelKind::Fcn | ModelKind::EgoAttention => {
            let n = rng.gen_range(1..=LIST_ROWS);
            let list = ListObservation::new((0..n).map(|_| random_row(rng)).collect());
            Observation::List(if kind.pads_list() { list.padded(LIST_ROWS) } else { list })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub kind: ModelKind,
    pub checked: usize,
    /// Draws skipped because the perturbation changed a ReLU activation pattern.
    pub skipped_kinks: usize,
    pub worst_relative_error: f64,
}

/// Compares central differences with step `h` against the reverse pass on `samples`
/// parameters, for a random linear functional of the Q-values over three random
/// observations. Half the draws come from parameters with a non-zero gradient.
/// Draws whose `+h` and `-h` evaluations differ in ReLU pattern are resampled, since
/// the difference quotient straddles a kink there.
pub fn check_gradients(kind: ModelKind, arch: &ArchConfig, samples: usize, h: f64, seed: u64) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = QModel::new(kind, arch, seed)?;
    let obs: Vec<Observation> = (0..3).map(|_| random_observation(kind, &mut rng)).collect();
    let coeffs: Vec<[f64; NUM_ACTIONS]> =
        (0..obs.len()).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    let eval = |m: &QModel| -> Result<(f64, Vec<bool>), NnError> {
        let mut tape = Tape::new();
        let mut total = 0.0;
        for (o, c) in obs.iter().zip(&coeffs) {
            let q = m.forward(o, &mut tape)?.values;
            total += q.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok((total, tape.activation_pattern()))
    };
    let mut tape = Tape::new();
    for o in &obs {
        model.forward(o, &mut tape)?;
    }
    let grads = model.backward(&mut tape, &coeffs)?;
    let active: Vec<usize> = (0..grads.len()).filter(|&i| grads[i] != 0.0).collect();
    let mut report = GradCheckReport {
        kind,
        checked: 0,
        skipped_kinks: 0,
        worst_relative_error: 0.0,
    };
    while report.checked < samples {
        let i = if report.checked.is_multiple_of(2) && !active.is_empty() {
            active[rng.gen_range(0..active.len())]
        } else {
            rng.gen_range(0..model.param_count())
        };
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let (plus, pattern_plus) = eval(&model)?;
        model.params_mut()[i] = orig - h;
        let (minus, pattern_minus) = eval(&model)?;
        model.params_mut()[i] = orig;
        if pattern_plus != pattern_minus {
            report.skipped_kinks += 1;
            if report.skipped_kinks > 100 * samples {
                return Err(NnError::Numerical("too many draws straddle a ReLU kink".into()));
            }
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-8);
        report.worst_relative_error = report.worst_relative_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
