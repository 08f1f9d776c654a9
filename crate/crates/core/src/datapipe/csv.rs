//! Long-format CSV: one row per `(instance, time step)`.
//!
//! ```text
//! instance_id,time,<channel>...,label
//! ```
//!
//! Lines starting with `#` are comments.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{ChannelKind, ChannelMeta, Dataset};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub id_col: String,
    pub time_col: String,
    pub label_col: String,
    /// Channel columns in order; `None` takes every other column.
    pub channels: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_col: "instance_id".into(),
            time_col: "time".into(),
            label_col: "label".into(),
            channels: None,
        }
    }
}

struct Instance {
    label: bool,
    label_row: usize,
    rows: Vec<(f64, Vec<f64>)>,
}

fn number(cell: &str, col: &str, row: usize) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::parse(
                Some(row),
                format!("column '{col}': '{cell}' is not a finite number"),
            )
        })
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(file);
    let csv_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line() as usize);
        Error::parse(line, e.to_string())
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str, what: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(Some(1), format!("{what} column absent")))
    };
    let id_at = col(&schema.id_col, "instance id")?;
    let time_at = col(&schema.time_col, "time")?;
    let label_at = col(&schema.label_col, "label")?;
    let channel_names: Vec<String> = match &schema.channels {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_at, time_at, label_at].contains(i))
            .map(|(_, h)| h.trim().to_string())
            .collect(),
    };
    if channel_names.is_empty() {
        return Err(Error::parse(Some(1), "no channel columns"));
    }
    let channel_at: Vec<usize> = channel_names
        .iter()
        .map(|n| col(n, &format!("channel '{n}'")))
        .collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut instances: HashMap<String, Instance> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = rec[id_at].trim().to_string();
        let time = number(&rec[time_at], &schema.time_col, row)?;
        let label = match number(&rec[label_at], &schema.label_col, row)? {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            v => {
                return Err(Error::parse(
                    Some(row),
                    format!("label must be 0 or 1, got {v}"),
                ))
            }
        };
        let values = channel_at
            .iter()
            .zip(&channel_names)
            .map(|(&i, n)| number(&rec[i], n, row))
            .collect::<Result<Vec<_>>>()?;
        let inst = instances.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Instance {
                label,
                label_row: row,
                rows: Vec::new(),
            }
        });
        if inst.label != label {
            return Err(Error::parse(
                Some(row),
                format!(
                    "instance '{id}' has label {} here but {} at line {}",
                    label as u8, inst.label as u8, inst.label_row
                ),
            ));
        }
        inst.rows.push((time, values));
    }
    if order.is_empty() {
        return Err(Error::parse(None, "no data rows"));
    }

    let c = channel_names.len();
    let t = instances[&order[0]].rows.len();
    let mut data = Vec::with_capacity(order.len() * c * t);
    let mut labels = Vec::with_capacity(order.len());
    let mut kinds = vec![ChannelKind::Binary; c];
    for id in &order {
        let inst = instances.get_mut(id).expect("grouped instance");
        if inst.rows.len() != t {
            return Err(Error::parse(
                Some(inst.label_row),
                format!(
                    "instance '{id}' has {} time steps, expected {t}",
                    inst.rows.len()
                ),
            ));
        }
        inst.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for ch in 0..c {
            for (_, values) in &inst.rows {
                let v = values[ch];
                if v != 0.0 && v != 1.0 {
                    kinds[ch] = ChannelKind::Continuous;
                }
                data.push(v);
            }
        }
        labels.push(inst.label);
    }
    let channels = channel_names
        .into_iter()
        .zip(kinds)
        .map(|(name, kind)| ChannelMeta { name, kind })
        .collect();
    Dataset::new(
        Tensor::new(vec![order.len(), c, t], data)?,
        labels,
        order,
        channels,
    )
}

/// Writes `ds` in the long format, prefixed by `#` comment lines.
pub fn write_csv(ds: &Dataset, path: &Path, comments: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["instance_id".to_string(), "time".to_string()];
    header.extend(ds.channels.iter().map(|c| c.name.clone()));
    header.push("label".into());
    w.write_record(&header).map_err(io)?;
    let (c, t) = (ds.n_channels(), ds.window_len());
    for n in 0..ds.len() {
        for step in 0..t {
            let mut rec = vec![ds.instance_ids[n].clone(), step.to_string()];
            rec.extend((0..c).map(|ch| format!("{:?}", ds.x.data()[(n * c + ch) * t + step])));
            rec.push((ds.labels[n] as u8).to_string());
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
