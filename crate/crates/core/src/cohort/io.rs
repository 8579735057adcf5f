//! CSV ingestion and export.
//!
//! Directory layout: `outcome.csv` (`patient_id,time_days,event`), one
//! `block_<name>.csv` per modality (`patient_id,f_0,...,f_{d-1}`) and an
//! optional `features.spec` sidecar with one section per modality mapping
//! `f_<j>` (or `default`) to `numerical`, `ordinal` or `categorical:<k>`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use super::{Cohort, FeatureKind, ModalityBlock};
use crate::error::{Error, Result};
use crate::kv::KvDocument;

pub const OUTCOME_FILE: &str = "outcome.csv";
pub const BLOCK_PREFIX: &str = "block_";
pub const FEATURE_SPEC_FILE: &str = "features.spec";

fn parse_err(file: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?)
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Rows of an outcome file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable {
    pub ids: Vec<String>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

/// Reads a `patient_id,time_days,event` file.
pub fn read_outcomes(path: &Path) -> Result<OutcomeTable> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["patient_id", "time_days", "event"] {
        return Err(parse_err(
            path,
            1,
            "",
            format!("expected header `patient_id,time_days,event`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = OutcomeTable {
        ids: Vec::new(),
        times: Vec::new(),
        events: Vec::new(),
    };
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = record_line(&rec);
        if rec.len() != 3 {
            return Err(parse_err(path, row, "", format!("expected 3 fields, got {}", rec.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_err(path, row, "patient_id", "empty patient id"));
        }
        if seen.insert(id.clone(), row).is_some() {
            return Err(parse_err(path, row, "patient_id", format!("duplicate patient id `{id}`")));
        }
        let time: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, row, "time_days", format!("not a number: `{}`", &rec[1])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(parse_err(path, row, "time_days", format!("negative or non-finite time {time}")));
        }
        let event = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, row, "event", format!("event must be 0 or 1, got `{other}`"))),
        };
        out.ids.push(id);
        out.times.push(time);
        out.events.push(event);
    }
    Ok(out)
}

fn kinds_for(spec: Option<&KvDocument>, block: &str, width: usize) -> Result<Vec<FeatureKind>> {
    let Some(section) = spec.and_then(|s| s.section(block)) else {
        return Ok(vec![FeatureKind::Numerical; width]);
    };
    let default = match section.get("default") {
        Some(k) => k.parse()?,
        None => FeatureKind::Numerical,
    };
    let mut kinds = vec![default; width];
    for (key, value) in section {
        if key == "default" {
            continue;
        }
        let j = key
            .strip_prefix("f_")
            .and_then(|j| j.parse::<usize>().ok())
            .filter(|&j| j < width)
            .ok_or_else(|| Error::config(format!("feature spec [{block}]: unknown column `{key}`")))?;
        kinds[j] = value.parse()?;
    }
    Ok(kinds)
}

fn read_block(
    path: &Path,
    name: &str,
    index: &HashMap<&str, usize>,
    spec: Option<&KvDocument>,
) -> Result<ModalityBlock> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"patient_id")
        || cols.len() < 2
        || cols[1..].iter().enumerate().any(|(j, c)| *c != format!("f_{j}"))
    {
        return Err(parse_err(path, 1, "", "expected header `patient_id,f_0,...,f_{d-1}`"));
    }
    let width = cols.len() - 1;
    let kinds = kinds_for(spec, name, width)?;
    let n = index.len();
    let mut values = vec![0.0; n * width];
    let mut observed = vec![false; n * width];
    let mut present = vec![false; n];
    for rec in rdr.records() {
        let rec = rec?;
        let row = record_line(&rec);
        if rec.len() != width + 1 {
            return Err(parse_err(path, row, "", format!("expected {} fields, got {}", width + 1, rec.len())));
        }
        let id = rec[0].trim();
        let &i = index
            .get(id)
            .ok_or_else(|| parse_err(path, row, "patient_id", format!("patient `{id}` not in outcome file")))?;
        if present[i] {
            return Err(parse_err(path, row, "patient_id", format!("duplicate patient id `{id}`")));
        }
        present[i] = true;
        for j in 0..width {
            let cell = rec[j + 1].trim();
            if cell.is_empty() {
                continue;
            }
            let col = format!("f_{j}");
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, row, &col, format!("not a number: `{cell}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, row, &col, "non-finite value"));
            }
            if let FeatureKind::Categorical { cardinality } = kinds[j] {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= cardinality {
                    return Err(parse_err(
                        path,
                        row,
                        &col,
                        format!("unknown categorical level `{cell}` (cardinality {cardinality})"),
                    ));
                }
            }
            values[i * width + j] = v;
            observed[i * width + j] = true;
        }
    }
    ModalityBlock::new(name, kinds, values, observed, present)
}

/// Parses an outcome file and named block files into a cohort.
pub fn load_cohort(
    outcome: &Path,
    blocks: &BTreeMap<String, PathBuf>,
    feature_spec: Option<&Path>,
) -> Result<Cohort> {
    let o = read_outcomes(outcome)?;
    if o.ids.is_empty() {
        return Err(parse_err(outcome, 2, "", "no patients"));
    }
    let spec = feature_spec.map(KvDocument::read).transpose()?;
    let index: HashMap<&str, usize> = o.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut parsed = Vec::with_capacity(blocks.len());
    for (name, path) in blocks {
        parsed.push(read_block(path, name, &index, spec.as_ref())?);
    }
    Cohort::new(o.ids.clone(), o.times, o.events, parsed)
}

/// Loads `outcome.csv`, every `block_<name>.csv` and `features.spec` if present.
pub fn load_cohort_dir(dir: &Path) -> Result<Cohort> {
    let mut blocks = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else { continue };
        if let Some(name) = file.strip_prefix(BLOCK_PREFIX).and_then(|f| f.strip_suffix(".csv")) {
            blocks.insert(name.to_string(), path.clone());
        }
    }
    let spec = dir.join(FEATURE_SPEC_FILE);
    load_cohort(&dir.join(OUTCOME_FILE), &blocks, spec.exists().then_some(spec.as_path()))
}

/// Writes the cohort in the directory layout read by [`load_cohort_dir`].
/// Patients lacking a modality get no row in that block file.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(OUTCOME_FILE))?;
    w.write_record(["patient_id", "time_days", "event"])?;
    for i in 0..cohort.len() {
        w.write_record([
            cohort.ids()[i].clone(),
            cohort.times()[i].to_string(),
            if cohort.events()[i] { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;

    let mut spec = KvDocument::new();
    for block in cohort.blocks() {
        let path = dir.join(format!("{BLOCK_PREFIX}{}.csv", block.name()));
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["patient_id".to_string()];
        header.extend((0..block.width()).map(|j| format!("f_{j}")));
        w.write_record(&header)?;
        for i in 0..cohort.len() {
            if !block.is_present(i) {
                continue;
            }
            let mut rec = vec![cohort.ids()[i].clone()];
            for (v, &o) in block.row(i).iter().zip(block.observed_row(i)) {
                rec.push(if o { v.to_string() } else { String::new() });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        spec.set(block.name(), "default", FeatureKind::Numerical);
        for (j, k) in block.kinds().iter().enumerate() {
            if *k != FeatureKind::Numerical {
                spec.set(block.name(), &format!("f_{j}"), k);
            }
        }
    }
    spec.write(&dir.join(FEATURE_SPEC_FILE))?;
    Ok(())
}
