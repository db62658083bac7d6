use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, AttentionLayerIdx, AttentionNet, HeadIdx};
use super::layers::{Layer, LayerKind, Sequential};
use super::{AttentionTrace, NnError, Tensor};
use crate::obs::{Observation, FEATURES, GRID_CELLS, LIST_ROWS};

pub const NUM_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "fcn_list")]
    Fcn,
    #[serde(rename = "cnn_grid")]
    Cnn,
    #[serde(rename = "ego_attention")]
    EgoAttention,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Fcn, ModelKind::Cnn, ModelKind::EgoAttention];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fcn => "fcn_list",
            ModelKind::Cnn => "cnn_grid",
            ModelKind::EgoAttention => "ego_attention",
        }
    }

    /// Whether the model consumes the occupancy grid rather than the feature list.
    pub fn uses_grid(self) -> bool {
        self == ModelKind::Cnn
    }

    /// Whether list observations are padded to a fixed row count.
    pub fn pads_list(self) -> bool {
        self == ModelKind::Fcn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model kind {s:?} (expected fcn_list, cnn_grid or ego_attention)"))
    }
}

/// Layer sizes; each model kind reads only its own fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub fcn_hidden: Vec<usize>,
    pub cnn_channels: Vec<usize>,
    pub cnn_dense: Vec<usize>,
    /// Encoder widths; the last one is the embedding size.
    pub encoder_layers: Vec<usize>,
    pub attention_heads: usize,
    pub attention_layers: usize,
    pub combine_bias: bool,
    pub decoder_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            fcn_hidden: vec![128, 128],
            cnn_channels: vec![16, 32, 64],
            cnn_dense: vec![20],
            encoder_layers: vec![64, 64],
            attention_heads: 2,
            attention_layers: 1,
            combine_bias: false,
            decoder_hidden: vec![64, 64],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self, kind: ModelKind) -> Result<(), NnError> {
        let positive = |name: &str, v: &[usize]| {
            if v.contains(&0) {
                Err(NnError::Usage(format!("{name} sizes must be positive")))
            } else {
                Ok(())
            }
        };
        match kind {
            ModelKind::Fcn => positive("fcn_hidden", &self.fcn_hidden),
            ModelKind::Cnn => {
                positive("cnn_channels", &self.cnn_channels)?;
                positive("cnn_dense", &self.cnn_dense)?;
                if self.cnn_channels.is_empty() || !GRID_CELLS.is_multiple_of(1 << self.cnn_channels.len()) {
                    return Err(NnError::Usage(format!(
                        "cnn_channels needs 1 to 5 layers for a {GRID_CELLS}-cell grid"
                    )));
                }
                Ok(())
            }
            ModelKind::EgoAttention => {
                positive("encoder_layers", &self.encoder_layers)?;
                positive("decoder_hidden", &self.decoder_hidden)?;
                let d_x = *self
                    .encoder_layers
                    .last()
                    .ok_or_else(|| NnError::Usage("encoder_layers must not be empty".into()))?;
                if self.attention_heads == 0 || d_x % self.attention_heads != 0 {
                    return Err(NnError::Usage(format!(
                        "embedding size {d_x} must be a multiple of attention_heads {}",
                        self.attention_heads
                    )));
                }
                if self.attention_layers == 0 {
                    return Err(NnError::Usage("attention_layers must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    fan_in: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
    len: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let offset = self.len;
        self.len += shape.iter().product::<usize>();
        self.specs.push(ParamSpec {
            name,
            shape,
            offset,
            fan_in,
        });
        offset
    }

    fn dense(&mut self, prefix: &str, inp: usize, out: usize, bias: bool, relu: bool) -> Layer {
        let weight = self.add(format!("{prefix}.weight"), vec![inp, out], inp);
        let bias = bias.then(|| self.add(format!("{prefix}.bias"), vec![out], inp));
        Layer {
            kind: LayerKind::Dense { inp, out },
            weight,
            bias,
            relu,
        }
    }

    /// Dense stack `inp -> sizes... -> out`; ReLU on hidden layers, and on the last
    /// one too when `relu_out`.
    fn mlp(&mut self, prefix: &str, inp: usize, sizes: &[usize], relu_out: bool) -> Sequential {
        let mut layers = Vec::new();
        let mut width = inp;
        for (i, &s) in sizes.iter().enumerate() {
            let relu = i + 1 < sizes.len() || relu_out;
            layers.push(self.dense(&format!("{prefix}.dense{i}"), width, s, true, relu));
            width = s;
        }
        Sequential { layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Network {
    Plain(Sequential),
    Attention(AttentionNet),
}

fn build(kind: ModelKind, arch: &ArchConfig) -> (Network, Vec<ParamSpec>, usize) {
    let mut b = Builder::default();
    let net = match kind {
        ModelKind::Fcn => {
            let mut sizes = arch.fcn_hidden.clone();
            sizes.push(NUM_ACTIONS);
            Network::Plain(b.mlp("fcn", LIST_ROWS * FEATURES, &sizes, false))
        }
        ModelKind::Cnn => {
            let mut layers = Vec::new();
            let (mut side, mut c) = (GRID_CELLS, FEATURES);
            for (i, &o) in arch.cnn_channels.iter().enumerate() {
                let weight = b.add(format!("cnn.conv{i}.kernel"), vec![2, 2, c, o], 4 * c);
                let bias = b.add(format!("cnn.conv{i}.bias"), vec![o], 4 * c);
                layers.push(Layer {
                    kind: LayerKind::Conv { h: side, w: side, c, o },
                    weight,
                    bias: Some(bias),
                    relu: true,
                });
                side /= 2;
                c = o;
            }
            let mut sizes = arch.cnn_dense.clone();
            sizes.push(NUM_ACTIONS);
            let head = b.mlp("cnn.head", side * side * c, &sizes, false);
            layers.extend(head.layers);
            Network::Plain(Sequential { layers })
        }
        ModelKind::EgoAttention => {
            let ego_encoder = b.mlp("attention.ego_encoder", FEATURES, &arch.encoder_layers, true);
            let others_encoder = b.mlp("attention.others_encoder", FEATURES, &arch.encoder_layers, true);
            let d_x = *arch.encoder_layers.last().expect("validated");
            let d_k = d_x / arch.attention_heads;
            let layers = (0..arch.attention_layers)
                .map(|l| {
                    let heads = (0..arch.attention_heads)
                        .map(|h| {
                            let mut proj = |what: &str| b.add(format!("attention.layer{l}.head{h}.{what}"), vec![d_x, d_k], d_x);
                            HeadIdx {
                                query: proj("query"),
                                key: proj("key"),
                                value: proj("value"),
                            }
                        })
                        .collect();
                    let width = arch.attention_heads * d_k;
                    let combine = b.add(format!("attention.layer{l}.combine.weight"), vec![width, d_x], width);
                    let combine_bias = arch
                        .combine_bias
                        .then(|| b.add(format!("attention.layer{l}.combine.bias"), vec![d_x], width));
                    AttentionLayerIdx {
                        heads,
                        combine,
                        combine_bias,
                    }
                })
                .collect();
            let mut sizes = arch.decoder_hidden.clone();
            sizes.push(NUM_ACTIONS);
            let decoder = b.mlp("attention.decoder", d_x, &sizes, false);
            Network::Attention(AttentionNet {
                ego_encoder,
                others_encoder,
                layers,
                decoder,
                d_x,
                d_k,
            })
        }
    };
    (net, b.specs, b.len)
}

/// Q-values with the attention weights of ego-attention models.
#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub values: [f64; NUM_ACTIONS],
    pub trace: Option<AttentionTrace>,
}

impl QOutput {
    /// Greedy action, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
enum Record {
    Plain { input: Vec<f64>, acts: Vec<Vec<f64>> },
    Attention(AttentionCache),
}

/// Forward passes recorded for a later [`QModel::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Sign pattern of every ReLU-carrying activation, useful to detect kink crossings.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for r in &self.records {
            match r {
                Record::Plain { acts, .. } => out.extend(acts.iter().flatten().map(|v| *v > 0.0)),
                Record::Attention(c) => out.extend(c.activations().flatten().map(|v| *v > 0.0)),
            }
        }
        out
    }
}

/// A Q-network of one of the three families with its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    kind: ModelKind,
    arch: ArchConfig,
    specs: Vec<ParamSpec>,
    params: Vec<f64>,
    net: Network,
}

impl QModel {
    /// Builds the model with uniform `+-sqrt(1 / fan_in)` initialisation.
    pub fn new(kind: ModelKind, arch: &ArchConfig, seed: u64) -> Result<Self, NnError> {
        let mut model = Self::zeroed(kind, arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &model.specs {
            let bound = (1.0 / spec.fan_in as f64).sqrt();
            for v in &mut model.params[spec.offset..spec.offset + spec.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeroed(kind: ModelKind, arch: &ArchConfig) -> Result<Self, NnError> {
        arch.validate(kind)?;
        let (net, specs, len) = build(kind, arch);
        Ok(Self {
            kind,
            arch: arch.clone(),
            specs,
            params: vec![0.0; len],
            net,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        let spec = self.specs.iter().find(|s| s.name == name)?;
        Tensor::new(spec.shape.clone(), self.params[spec.offset..spec.offset + spec.len()].to_vec()).ok()
    }

    /// Copies parameters from a model of identical architecture.
    pub fn copy_params_from(&mut self, other: &QModel) -> Result<(), NnError> {
        if other.kind != self.kind || other.specs != self.specs {
            return Err(NnError::Usage("parameter copy between different architectures".into()));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    fn check_params_finite(&self) -> Result<(), NnError> {
        match self.params.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let spec = self.specs.iter().find(|s| i < s.offset + s.len()).expect("offset in range");
                Err(NnError::Numerical(format!("non-finite parameter in {}", spec.name)))
            }
        }
    }

    fn check_output(values: &[f64]) -> Result<[f64; NUM_ACTIONS], NnError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Numerical(format!("non-finite Q-values {values:?}")));
        }
        Ok(values.try_into().expect("three outputs"))
    }

    fn record(&self, obs: &Observation) -> Result<Record, NnError> {
        if !obs.is_finite() {
            return Err(NnError::Numerical("non-finite observation".into()));
        }
        match (&self.net, obs) {
            (Network::Plain(seq), Observation::List(list)) if self.kind == ModelKind::Fcn => {
                if list.rows.len() != LIST_ROWS {
                    return Err(NnError::Shape(format!(
                        "{} expects {LIST_ROWS} padded rows, got {}",
                        self.kind,
                        list.rows.len()
                    )));
                }
                let input = list.flat();
                let acts = seq.forward(&self.params, &input);
                Ok(Record::Plain { input, acts })
            }
            (Network::Plain(seq), Observation::Grid(grid)) if self.kind == ModelKind::Cnn => {
                let input = grid.to_tensor().into_data();
                let acts = seq.forward(&self.params, &input);
                Ok(Record::Plain { input, acts })
            }
            (Network::Attention(net), Observation::List(list)) => {
                let mask = list.presence_mask();
                net.forward(&self.params, &list.flat(), &mask).map(Record::Attention)
            }
            _ => Err(NnError::Usage(format!("{} cannot consume this observation kind", self.kind))),
        }
    }

    fn output(record: &Record) -> Result<QOutput, NnError> {
        match record {
            Record::Plain { acts, .. } => Ok(QOutput {
                values: Self::check_output(acts.last().expect("output layer"))?,
                trace: None,
            }),
            Record::Attention(c) => Ok(QOutput {
                values: Self::check_output(c.output())?,
                trace: Some(c.trace()),
            }),
        }
    }

    pub fn q_values(&self, obs: &Observation) -> Result<QOutput, NnError> {
        self.check_params_finite()?;
        Self::output(&self.record(obs)?)
    }

    /// Forward pass whose intermediate values are appended to `tape`.
    pub fn forward(&self, obs: &Observation, tape: &mut Tape) -> Result<QOutput, NnError> {
        let record = self.record(obs)?;
        let out = Self::output(&record)?;
        tape.records.push(record);
        Ok(out)
    }

    /// Forward passes over a batch without recording; parameters are checked once.
    pub fn q_values_batch(&self, batch: &[&Observation]) -> Result<Vec<QOutput>, NnError> {
        self.check_params_finite()?;
        batch.iter().map(|o| Self::output(&self.record(o)?)).collect()
    }

    /// Ego-attention over a padded `B x R x 7` batch; rows whose mask entry is false
    /// receive `-inf` attention scores.
    pub fn masked_batch_forward(&self, batch: &Tensor, mask: &[Vec<bool>]) -> Result<Vec<QOutput>, NnError> {
        let Network::Attention(net) = &self.net else {
            return Err(NnError::Usage(format!("masked batch forward needs ego_attention, not {}", self.kind)));
        };
        let [b, r, FEATURES] = batch.shape() else {
            return Err(NnError::Shape(format!("batch shape {:?}, expected B x R x {FEATURES}", batch.shape())));
        };
        if mask.len() != *b || mask.iter().any(|m| m.len() != *r) {
            return Err(NnError::Shape("mask does not match the batch".into()));
        }
        if !batch.is_finite() {
            return Err(NnError::Numerical("non-finite observation".into()));
        }
        self.check_params_finite()?;
        let item = r * FEATURES;
        batch
            .data()
            .chunks_exact(item)
            .zip(mask)
            .map(|(rows, m)| Self::output(&Record::Attention(net.forward(&self.params, rows, m)?)))
            .collect()
    }

    /// Gradient of `sum_i upstream[i] . q_i` over the recorded passes, which are consumed.
    pub fn backward(&self, tape: &mut Tape, upstream: &[[f64; NUM_ACTIONS]]) -> Result<Vec<f64>, NnError> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(tape, upstream, &mut grads)?;
        Ok(grads)
    }

    /// As [`QModel::backward`], accumulating into `grads`.
    pub fn backward_into(
        &self,
        tape: &mut Tape,
        upstream: &[[f64; NUM_ACTIONS]],
        grads: &mut [f64],
    ) -> Result<(), NnError> {
        if tape.is_empty() {
            return Err(NnError::Usage("backward called without a recorded forward pass".into()));
        }
        if upstream.len() != tape.len() {
            return Err(NnError::Usage(format!(
                "{} upstream gradients for {} recorded passes",
                upstream.len(),
                tape.len()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Shape("gradient buffer length".into()));
        }
        for (record, dq) in tape.records.iter().zip(upstream) {
            if dq.iter().all(|g| *g == 0.0) {
                continue;
            }
            match (record, &self.net) {
                (Record::Plain { input, acts }, Network::Plain(seq)) => {
                    seq.backward(&self.params, input, acts, dq, grads, false);
                }
                (Record::Attention(cache), Network::Attention(net)) => net.backward(&self.params, cache, dq, grads),
                _ => unreachable!("records are produced by this model"),
            }
        }
        tape.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::{GridCell, GridObservation, ListObservation};

    fn list(rows: usize, seed: u64) -> ListObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ListObservation::new(
            (0..rows)
                .map(|_| {
                    let psi: f64 = rng.gen_range(-3.0..3.0);
                    [1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), psi.cos(), psi.sin()]
                })
                .collect(),
        )
    }

    #[test]
    fn parameter_counts() {
        let arch = ArchConfig::default();
        let count = |k| QModel::zeroed(k, &arch).unwrap().param_count();
        assert_eq!(count(ModelKind::Fcn), 105 * 128 + 128 + 128 * 128 + 128 + 128 * 3 + 3);
        assert_eq!(count(ModelKind::Fcn), 30_467);
        assert_eq!(count(ModelKind::Cnn), 31_363);
        assert_eq!(count(ModelKind::EgoAttention), 34_243);
        let with_bias = ArchConfig {
            combine_bias: true,
            ..ArchConfig::default()
        };
        assert_eq!(QModel::zeroed(ModelKind::EgoAttention, &with_bias).unwrap().param_count(), 34_307);
    }

    #[test]
    fn specs_tile_the_parameter_vector() {
        for kind in ModelKind::ALL {
            let m = QModel::zeroed(kind, &ArchConfig::default()).unwrap();
            let mut next = 0;
            for s in m.param_specs() {
                assert_eq!(s.offset, next);
                next += s.len();
            }
            assert_eq!(next, m.param_count());
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 9).unwrap();
        let b = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 9).unwrap();
        let c = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let w = a.param("fcn.dense0.weight").unwrap();
        let bound = (1.0f64 / 105.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn attention_accepts_every_size() {
        let m = QModel::new(ModelKind::EgoAttention, &ArchConfig::default(), 1).unwrap();
        for n in 0..=14 {
            let out = m.q_values(&Observation::List(list(n + 1, n as u64))).unwrap();
            let trace = out.trace.unwrap();
            assert_eq!(trace.heads.len(), 2);
            assert_eq!(trace.heads[0].len(), n + 1);
        }
    }

    #[test]
    fn fcn_ignores_padding_contents_beyond_zero_rows() {
        let m = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 2).unwrap();
        let a = list(3, 1).padded(LIST_ROWS);
        let b = list(3, 1).padded(LIST_ROWS);
        assert_eq!(m.q_values(&Observation::List(a)).unwrap(), m.q_values(&Observation::List(b)).unwrap());
        assert!(m.q_values(&Observation::List(list(3, 1))).is_err());
    }

    #[test]
    fn kind_mismatch_and_nan() {
        let m = QModel::new(ModelKind::Cnn, &ArchConfig::default(), 2).unwrap();
        assert!(matches!(m.q_values(&Observation::List(list(15, 0))), Err(NnError::Usage(_))));
        let grid = GridObservation::from_cells(vec![GridCell {
            ix: 16,
            iy: 16,
            channels: [1.0, 0.0, 0.0, f64::NAN, 0.0, 1.0, 0.0],
        }]);
        assert!(matches!(m.q_values(&Observation::Grid(grid)), Err(NnError::Numerical(_))));
        let mut bad = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 2).unwrap();
        bad.params_mut()[7] = f64::NAN;
        assert!(matches!(
            bad.q_values(&Observation::List(list(15, 0))),
            Err(NnError::Numerical(_))
        ));
    }

    #[test]
    fn backward_needs_a_forward() {
        let m = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 2).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(m.backward(&mut tape, &[[1.0, 0.0, 0.0]]), Err(NnError::Usage(_))));
    }

    #[test]
    fn output_bias_gradient() {
        for kind in ModelKind::ALL {
            let m = QModel::new(kind, &ArchConfig::default(), 3).unwrap();
            let obs = match kind {
                ModelKind::Cnn => Observation::Grid(GridObservation::from_cells(vec![])),
                ModelKind::Fcn => Observation::List(list(15, 4)),
                ModelKind::EgoAttention => Observation::List(list(4, 4)),
            };
            let mut tape = Tape::new();
            m.forward(&obs, &mut tape).unwrap();
            let g = m.backward(&mut tape, &[[1.0, 0.0, 0.0]]).unwrap();
            let last = m.param_specs().last().unwrap();
            assert!(last.name.ends_with("bias"));
            assert_eq!(&g[last.offset..], &[1.0, 0.0, 0.0]);
            m.forward(&obs, &mut tape).unwrap();
            let zero = m.backward(&mut tape, &[[0.0; 3]]).unwrap();
            assert!(zero.iter().all(|v| *v == 0.0));
        }
    }
}
