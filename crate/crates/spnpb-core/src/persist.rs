//! Versioned JSON model files.
//!
//! A model file is one JSON object:
//!
//! ```text
//! { "format": "spnpb-model", "version": 1,
//!   "layout": { "input_order": "u,s,p", "lstm_gate_order": "i,f,o,g",
//!               "std_convention": "population", "log_variance_clamp": [-10.0, 10.0] },
//!   "model": { ...weights, normalization stats, PB table... } }
//! ```
//!
//! Reals are written in shortest round-trip form, so save/load is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, LOG_VAR_MAX, LOG_VAR_MIN};

pub const MODEL_FORMAT: &str = "spnpb-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    input_order: String,
    lstm_gate_order: String,
    std_convention: String,
    log_variance_clamp: [f64; 2],
}

impl Layout {
    fn current() -> Self {
        Self {
            input_order: "u,s,p".into(),
            lstm_gate_order: "i,f,o,g".into(),
            std_convention: "population".into(),
            log_variance_clamp: [LOG_VAR_MIN, LOG_VAR_MAX],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layout: Layout,
    model: ModelParams,
}

pub fn write_model<W: Write>(model: &ModelParams, writer: W) -> Result<()> {
    model.validate()?;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        layout: Layout::current(),
        model: model.clone(),
    };
    serde_json::to_writer(writer, &file)?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<ModelParams> {
    let file: ModelFile = serde_json::from_reader(reader)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!("not a model file (format {:?})", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "model file version {} is not supported (expected {MODEL_VERSION})",
            file.version
        )));
    }
    if file.layout != Layout::current() {
        return Err(Error::Format(format!("incompatible model layout {:?}", file.layout)));
    }
    file.model.validate()?;
    Ok(file.model)
}

pub fn save_model(model: &ModelParams, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
