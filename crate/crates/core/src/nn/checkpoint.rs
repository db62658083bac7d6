use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{ArchConfig, ModelKind, NnError, QModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: ModelKind,
    pub config_hash: String,
    pub format_version: u32,
}

#[derive(Serialize)]
struct ParamOut {
    shape: Vec<usize>,
    values: Box<RawValue>,
}

#[derive(Serialize)]
struct FileOut<'a> {
    header: &'a CheckpointHeader,
    architecture: &'a ArchConfig,
    parameters: BTreeMap<&'a str, ParamOut>,
}

#[derive(Deserialize)]
struct ParamIn {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileIn {
    header: CheckpointHeader,
    architecture: ArchConfig,
    parameters: BTreeMap<String, ParamIn>,
}

/// Model parameters plus identifying header, serialised as JSON with every value
/// written to 17 significant digits so that reloading is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: QModel,
}

impl Checkpoint {
    pub fn new(model: QModel, config_hash: impl Into<String>) -> Self {
        Self {
            header: CheckpointHeader {
                model_kind: model.kind(),
                config_hash: config_hash.into(),
                format_version: FORMAT_VERSION,
            },
            model,
        }
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        let params = self.model.params();
        let mut parameters = BTreeMap::new();
        for spec in self.model.param_specs() {
            let slice = &params[spec.offset..spec.offset + spec.len()];
            let mut text = String::with_capacity(slice.len() * 24 + 2);
            text.push('[');
            for (i, v) in slice.iter().enumerate() {
                if !v.is_finite() {
                    return Err(NnError::Numerical(format!("non-finite value in {}", spec.name)));
                }
                if i > 0 {
                    text.push(',');
                }
                write!(text, "{v:.16e}").expect("write to string");
            }
            text.push(']');
            let values = RawValue::from_string(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
            parameters.insert(
                spec.name.as_str(),
                ParamOut {
                    shape: spec.shape.clone(),
                    values,
                },
            );
        }
        let file = FileOut {
            header: &self.header,
            architecture: self.model.arch(),
            parameters,
        };
        serde_json::to_string(&file).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: FileIn = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if file.header.format_version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format version {}",
                file.header.format_version
            )));
        }
        let mut model = QModel::zeroed(file.header.model_kind, &file.architecture)?;
        let specs = model.param_specs().to_vec();
        if file.parameters.len() != specs.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                file.parameters.len()
            )));
        }
        for spec in specs {
            let entry = file
                .parameters
                .get(&spec.name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {}", spec.name)))?;
            if entry.shape != spec.shape || entry.values.len() != spec.len() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name, entry.shape, spec.shape
                )));
            }
            model.params_mut()[spec.offset..spec.offset + spec.len()].copy_from_slice(&entry.values);
        }
        Ok(Self {
            header: file.header,
            model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in ModelKind::ALL {
            let mut model = QModel::new(kind, &ArchConfig::default(), 11).unwrap();
            model.params_mut()[0] = 0.1 + 0.2;
            model.params_mut()[1] = -0.0;
            model.params_mut()[2] = f64::MIN_POSITIVE / 3.0;
            model.params_mut()[3] = 1.0e300;
            let ckpt = Checkpoint::new(model, "abc123");
            let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            assert_eq!(back.header, ckpt.header);
            let bits = |m: &QModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.model), bits(&ckpt.model));
        }
    }

    #[test]
    fn rejects_tampered_shapes() {
        let model = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 1).unwrap();
        let json = Checkpoint::new(model, "h").to_json().unwrap();
        let broken = json.replacen("[105,128]", "[128,105]", 1);
        assert!(Checkpoint::from_json(&broken).is_err());
    }

    #[test]
    fn refuses_nan() {
        let mut model = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 1).unwrap();
        model.params_mut()[5] = f64::NAN;
        assert!(Checkpoint::new(model, "h").to_json().is_err());
    }
}
