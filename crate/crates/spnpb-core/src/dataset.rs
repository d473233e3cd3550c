//! Trials of timed `(state, command)` samples and their on-disk format.
//!
//! Dataset file (CSV, one sample per row):
//!
//! ```text
//! trial_id,tick,s0,..,s{N_s-1},u0,..,u{N_u-1}
//! 0,0,0.0000000000000000e0,...
//! ```
//!
//! The sidecar manifest is a CSV with header `trial_id,label` mapping each
//! trial to its environment label. Reals are written with 17 significant
//! digits, so a write/read round trip is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    /// Raw state (translational m/s, rotational rad/s).
    pub s: Vec<f64>,
    /// Raw command, same units as the state.
    pub u: Vec<f64>,
    pub tick: u64,
}

impl TimedSample {
    pub fn new(s: Vec<f64>, u: Vec<f64>, tick: u64) -> Result<Self> {
        if s.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample at tick {tick}")));
        }
        Ok(Self { s, u, tick })
    }
}

/// Samples recorded in one environment; owns one parametric-bias slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: u64,
    pub label: String,
    pub samples: Vec<TimedSample>,
}

impl Trial {
    pub fn new(id: u64, label: impl Into<String>, samples: Vec<TimedSample>) -> Result<Self> {
        let trial = Self {
            id,
            label: label.into(),
            samples,
        };
        trial.validate()?;
        Ok(trial)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Length ≥ 2, finite values, consistent dims, strictly increasing ticks.
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::Argument(format!(
                "trial {} has {} samples; at least 2 are needed",
                self.id,
                self.samples.len()
            )));
        }
        let (ns, nu) = (self.samples[0].s.len(), self.samples[0].u.len());
        for pair in self.samples.windows(2) {
            if pair[1].tick <= pair[0].tick {
                return Err(Error::Argument(format!(
                    "trial {}: tick {} does not follow {}",
                    self.id, pair[1].tick, pair[0].tick
                )));
            }
        }
        for sample in &self.samples {
            check_len("trial state dim", ns, sample.s.len())?;
            check_len("trial command dim", nu, sample.u.len())?;
            if sample.s.iter().chain(&sample.u).any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!(
                    "trial {}: non-finite value at tick {}",
                    self.id, sample.tick
                )));
            }
        }
        Ok(())
    }
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Default manifest path next to a dataset file: `<dataset>.manifest.csv`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".manifest.csv");
    PathBuf::from(name)
}

pub fn write_dataset<W: Write>(trials: &[Trial], writer: W) -> Result<()> {
    let (ns, nu) = match trials.first().and_then(|t| t.samples.first()) {
        Some(s) => (s.s.len(), s.u.len()),
        None => return Err(Error::Argument("cannot write an empty dataset".into())),
    };
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["trial_id".to_string(), "tick".to_string()];
    header.extend((0..ns).map(|i| format!("s{i}")));
    header.extend((0..nu).map(|i| format!("u{i}")));
    out.write_record(&header)?;
    for trial in trials {
        trial.validate()?;
        for sample in &trial.samples {
            check_len("dataset state dim", ns, sample.s.len())?;
            check_len("dataset command dim", nu, sample.u.len())?;
            let mut row = vec![trial.id.to_string(), sample.tick.to_string()];
            row.extend(sample.s.iter().chain(&sample.u).map(|&v| fmt_real(v)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_manifest<W: Write>(trials: &[Trial], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["trial_id", "label"])?;
    for trial in trials {
        out.write_record([trial.id.to_string(), trial.label.clone()])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a dataset and its manifest. Trials come back in order of first appearance.
pub fn read_dataset<R: Read, M: Read>(data: R, manifest: M) -> Result<Vec<Trial>> {
    let mut labels = BTreeMap::new();
    let mut man = csv::Reader::from_reader(manifest);
    for row in man.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::Format(format!(
                "manifest row has {} fields, expected 2",
                row.len()
            )));
        }
        let id = parse_id(&row[0])?;
        labels.insert(id, row[1].to_string());
    }

    let mut reader = csv::Reader::from_reader(data);
    let header = reader.headers()?.clone();
    let ns = header.iter().filter(|h| h.starts_with('s')).count();
    let nu = header.iter().filter(|h| h.starts_with('u')).count();
    if header.len() != 2 + ns + nu || ns == 0 || nu == 0 || &header[0] != "trial_id" || &header[1] != "tick" {
        return Err(Error::Format(format!("unexpected dataset header: {header:?}")));
    }

    let mut order: Vec<u64> = Vec::new();
    let mut by_id: BTreeMap<u64, Vec<TimedSample>> = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != header.len() {
            return Err(Error::Format(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                row.len(),
                header.len()
            )));
        }
        let id = parse_id(&row[0])?;
        let tick = parse_id(&row[1])?;
        let reals = row
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: bad real {f:?}: {e}", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let sample = TimedSample::new(reals[..ns].to_vec(), reals[ns..].to_vec(), tick)?;
        let samples = by_id.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        if let Some(last) = samples.last() {
            if tick <= last.tick {
                return Err(Error::Format(format!(
                    "trial {id}: ticks not strictly increasing at tick {tick}"
                )));
            }
        }
        samples.push(sample);
    }

    order
        .into_iter()
        .map(|id| {
            let label = labels
                .get(&id)
                .cloned()
                .ok_or_else(|| Error::Format(format!("trial {id} missing from manifest")))?;
            let samples = by_id.remove(&id).unwrap_or_default();
            Trial::new(id, label, samples)
        })
        .collect()
}

pub fn save_dataset(trials: &[Trial], path: &Path) -> Result<()> {
    write_dataset(trials, std::fs::File::create(path)?)?;
    write_manifest(trials, std::fs::File::create(manifest_path(path))?)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Trial>> {
    let data = std::fs::File::open(path)?;
    let manifest = std::fs::File::open(manifest_path(path))?;
    read_dataset(data, manifest)
}

fn parse_id(field: &str) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|e| Error::Format(format!("bad integer {field:?}: {e}")))
}
