use serde::{Deserialize, Serialize};

use super::{Classifier, ModelKind};
use crate::error::Result;

/// JSON form of a model: kind, dimensions, temperature and each layer's
/// row-major weight matrix and bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: String,
    pub input_dim: usize,
    pub hidden: Option<usize>,
    pub classes: usize,
    pub tau: f64,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Classifier> for ModelDocument {
    fn from(m: &Classifier) -> Self {
        let p = m.params();
        let (d, c) = (m.dim(), m.classes());
        let layer = |offset: usize, rows: usize, cols: usize| LayerDocument {
            rows,
            cols,
            weights: p[offset..offset + rows * cols].to_vec(),
            bias: p[offset + rows * cols..offset + rows * cols + cols].to_vec(),
        };
        let (kind, hidden, layers) = match m.kind() {
            ModelKind::Linear => ("linear", None, vec![layer(0, d, c)]),
            ModelKind::Mlp1 { hidden: h } => (
                "mlp1",
                Some(h),
                vec![layer(0, d, h), layer(d * h + h, h, c)],
            ),
        };
        ModelDocument {
            kind: kind.to_string(),
            input_dim: d,
            hidden,
            classes: c,
            tau: m.tau(),
            layers,
        }
    }
}

impl TryFrom<ModelDocument> for Classifier {
    type Error = crate::Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let kind = match (doc.kind.as_str(), doc.hidden) {
            ("linear", _) => ModelKind::Linear,
            ("mlp1", Some(hidden)) => ModelKind::Mlp1 { hidden },
            (other, _) => {
                return Err(crate::Error::InvalidArgument(format!(
                    "unknown model kind {other:?}"
                )))
            }
        };
        let params: Vec<f64> = doc
            .layers
            .into_iter()
            .flat_map(|l| l.weights.into_iter().chain(l.bias))
            .collect();
        Classifier::from_params(kind, doc.input_dim, doc.classes, params, doc.tau)
    }
}

impl Classifier {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Classifier::try_from(doc)
    }
}
