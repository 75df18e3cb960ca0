//! Versioned JSON model documents.
//!
//! Floats are written in scientific notation with 17 significant digits so a
//! saved model reloads bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::{DomainId, DomainStats, FlowModel, Layer, VARIANCE_EPS};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Compact JSON formatter that writes every `f64` with 17 significant digits.
pub(crate) struct PreciseFloats;

impl Formatter for PreciseFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub(crate) fn to_precise_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFloats);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[derive(Serialize, Deserialize)]
struct FlowDocument {
    version: u32,
    model_type: String,
    dim: usize,
    alpha: f64,
    /// Variance floor; variances are population (1/N) variances.
    variance_eps: f64,
    layers: Vec<Layer>,
    domains: BTreeMap<DomainId, DomainStats>,
}

impl FlowModel {
    pub fn to_json(&self) -> Result<String> {
        to_precise_json(&FlowDocument {
            version: FORMAT_VERSION,
            model_type: "flow".into(),
            dim: self.dim,
            alpha: self.alpha,
            variance_eps: VARIANCE_EPS,
            layers: self.layers.clone(),
            domains: self.domains.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FlowDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model version {} (expected {FORMAT_VERSION})",
                doc.version
            )));
        }
        if doc.model_type != "flow" {
            return Err(Error::Format(format!(
                "expected a flow model, found `{}`",
                doc.model_type
            )));
        }
        if doc.variance_eps != VARIANCE_EPS {
            return Err(Error::Format(format!(
                "variance floor {} differs from {VARIANCE_EPS}",
                doc.variance_eps
            )));
        }
        let mut model = FlowModel::new(doc.dim, doc.alpha, doc.layers)?;
        for (i, layer) in model.layers.iter().enumerate() {
            if !layer.is_adabn() {
                layer.validate(i, None)?;
            }
        }
        for (k, stats) in doc.domains {
            model.set_domain(k, stats)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
