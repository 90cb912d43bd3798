//! CSV ingestion with dummy coding of categorical columns, group sidecar
//! files, and CSV export of datasets.
//!
//! A categorical column with `k` observed levels becomes `k - 1` indicator
//! columns (the reference level is dropped) that form one group; a continuous
//! column is a singleton group.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, GroupStructure, GroupedDataset};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Dropped level; defaults to the lexicographically first.
    pub reference_level: Option<String>,
    /// When set, every observed value must be one of these.
    pub levels: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            reference_level: None,
            levels: None,
        }
    }

    pub fn categorical(name: &str) -> Self {
        Self {
            kind: ColumnKind::Categorical,
            ..Self::continuous(name)
        }
    }

    pub fn with_reference(self, level: &str) -> Self {
        Self {
            reference_level: Some(level.to_string()),
            ..self
        }
    }

    pub fn with_levels(self, levels: &[&str]) -> Self {
        Self {
            levels: Some(levels.iter().map(|s| s.to_string()).collect()),
            ..self
        }
    }
}

/// One input column and the design columns it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceVariable {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted observed levels (categorical only).
    pub levels: Vec<String>,
    pub reference: Option<String>,
    /// Design column indices.
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<F> {
    pub dataset: GroupedDataset<F>,
    pub column_names: Vec<String>,
    pub sources: Vec<SourceVariable>,
}

fn is_missing(v: &str) -> bool {
    let t = v.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Reads a CSV file; see [`ingest_reader`].
pub fn ingest_csv<F: Scalar>(
    path: impl AsRef<Path>,
    response: &str,
    specs: &[ColumnSpec],
    family: Family,
) -> Result<Ingested<F>> {
    ingest_reader(std::fs::File::open(path)?, response, specs, family)
}

/// Parses a header-first, comma-separated table. Columns without a spec are
/// continuous when every value parses as a number and categorical otherwise.
pub fn ingest_reader<F: Scalar, R: Read>(
    reader: R,
    response: &str,
    specs: &[ColumnSpec],
    family: Family,
) -> Result<Ingested<F>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) if !h.is_empty() => h.iter().map(|s| s.trim().to_string()).collect(),
        Ok(_) => return Err(Error::EmptyFile),
        Err(e) => return Err(e.into()),
    };
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    let position = |name: &str| header.iter().position(|h| h == name);
    let y_col = position(response).ok_or_else(|| Error::MissingColumn(response.to_string()))?;
    for s in specs {
        if position(&s.name).is_none() {
            return Err(Error::MissingColumn(s.name.clone()));
        }
    }
    let cell = |row: usize, col: usize| -> Result<&str> {
        let v = records[row].get(col).unwrap_or("");
        if is_missing(v) {
            return Err(Error::MissingValue {
                column: header[col].clone(),
                row,
            });
        }
        Ok(v.trim())
    };

    let n = records.len();
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let v = cell(i, y_col)?;
        let parsed: f64 = v.parse().map_err(|_| Error::NonNumericContinuous {
            column: response.to_string(),
            row: i,
            value: v.to_string(),
        })?;
        y.push(F::of(parsed));
    }

    let mut columns: Vec<Vec<F>> = Vec::new();
    let mut names = Vec::new();
    let mut sources = Vec::new();
    let mut groups = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == y_col {
            continue;
        }
        let spec = specs.iter().find(|s| &s.name == name);
        let kind = match spec {
            Some(s) => s.kind,
            None => {
                let mut numeric = true;
                for i in 0..n {
                    if cell(i, c)?.parse::<f64>().is_err() {
                        numeric = false;
                        break;
                    }
                }
                if numeric {
                    ColumnKind::Continuous
                } else {
                    ColumnKind::Categorical
                }
            }
        };
        match kind {
            ColumnKind::Continuous => {
                let mut col = Vec::with_capacity(n);
                for i in 0..n {
                    let v = cell(i, c)?;
                    let parsed: f64 = v.parse().map_err(|_| Error::NonNumericContinuous {
                        column: name.clone(),
                        row: i,
                        value: v.to_string(),
                    })?;
                    col.push(F::of(parsed));
                }
                groups.push(vec![columns.len()]);
                sources.push(SourceVariable {
                    name: name.clone(),
                    kind,
                    levels: vec![],
                    reference: None,
                    columns: vec![columns.len()],
                });
                names.push(name.clone());
                columns.push(col);
            }
            ColumnKind::Categorical => {
                let values: Vec<&str> = (0..n).map(|i| cell(i, c)).collect::<Result<_>>()?;
                if let Some(allowed) = spec.and_then(|s| s.levels.as_ref()) {
                    if let Some(bad) = values.iter().find(|v| !allowed.iter().any(|a| a == *v)) {
                        return Err(Error::UnknownLevel {
                            column: name.clone(),
                            level: bad.to_string(),
                        });
                    }
                }
                let levels: Vec<String> = values
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if levels.len() < 2 {
                    return Err(Error::TooFewLevels(name.clone()));
                }
                let reference = match spec.and_then(|s| s.reference_level.clone()) {
                    Some(r) if levels.contains(&r) => r,
                    Some(r) => {
                        return Err(Error::UnknownLevel {
                            column: name.clone(),
                            level: r,
                        })
                    }
                    None => levels[0].clone(),
                };
                let mut cols = Vec::new();
                for level in levels.iter().filter(|l| **l != reference) {
                    cols.push(columns.len());
                    names.push(format!("{name}={level}"));
                    columns.push(
                        values
                            .iter()
                            .map(|v| if v == level { F::one() } else { F::zero() })
                            .collect(),
                    );
                }
                groups.push(cols.clone());
                sources.push(SourceVariable {
                    name: name.clone(),
                    kind,
                    levels,
                    reference: Some(reference),
                    columns: cols,
                });
            }
        }
    }
    let p = columns.len();
    if p == 0 {
        return Err(Error::DimensionMismatch("no predictor columns".into()));
    }
    let x = Array2::from_shape_fn((n, p), |(i, j)| columns[j][i]);
    let dataset = GroupedDataset::new(x, y, GroupStructure::new(groups)?, family)?;
    Ok(Ingested {
        dataset,
        column_names: names,
        sources,
    })
}

impl<F: Scalar> Ingested<F> {
    /// Level of categorical source `s` in row `i`, read back from its dummies.
    pub fn decode(&self, s: usize, i: usize) -> Option<String> {
        let src = &self.sources[s];
        let reference = src.reference.as_ref()?;
        let x = &self.dataset.x;
        let hot: Vec<usize> = src
            .columns
            .iter()
            .copied()
            .filter(|&j| x[[i, j]] == F::one())
            .collect();
        match hot.as_slice() {
            [] => Some(reference.clone()),
            [j] => {
                let k = src.columns.iter().position(|c| c == j)?;
                src.levels
                    .iter()
                    .filter(|l| *l != reference)
                    .nth(k)
                    .cloned()
            }
            _ => None,
        }
    }

    /// Regroups design columns by a sidecar mapping of column names to group
    /// labels. Names may be source variables (all their columns move together)
    /// or individual design columns; unmapped sources keep their own group.
    /// Groups are ordered by their first column.
    pub fn regroup(&mut self, mapping: &[(String, String)]) -> Result<()> {
        let p = self.column_names.len();
        let mut label_of: Vec<String> = vec![String::new(); p];
        for src in &self.sources {
            for &j in &src.columns {
                label_of[j] = format!("\u{0}{}", src.name);
            }
        }
        for (name, label) in mapping {
            let cols: Vec<usize> = match self.sources.iter().find(|s| &s.name == name) {
                Some(src) => src.columns.clone(),
                None => match self.column_names.iter().position(|c| c == name) {
                    Some(j) => vec![j],
                    None => return Err(Error::MissingColumn(name.clone())),
                },
            };
            for j in cols {
                label_of[j] = label.clone();
            }
        }
        let mut order: Vec<String> = Vec::new();
        let mut members: HashMap<String, Vec<usize>> = HashMap::new();
        for (j, label) in label_of.into_iter().enumerate() {
            if !members.contains_key(&label) {
                order.push(label.clone());
            }
            members.entry(label).or_default().push(j);
        }
        let groups = order
            .into_iter()
            .map(|l| members.remove(&l).unwrap_or_default())
            .collect();
        self.dataset.groups = GroupStructure::new(groups)?;
        Ok(())
    }
}

/// Reads a `column,group` sidecar file.
pub fn read_group_spec(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    read_group_spec_from(std::fs::File::open(path)?)
}

pub fn read_group_spec_from<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (Some(c), Some(g)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::InvalidConfig(
                "group spec rows need a column and a group".into(),
            ));
        };
        out.push((c.trim().to_string(), g.trim().to_string()));
    }
    Ok(out)
}

/// Writes a `column,group` sidecar with one-based group labels.
pub fn write_group_spec<W: Write>(out: W, names: &[String], groups: &GroupStructure) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["column", "group"])?;
    for (g, cols) in groups.iter().enumerate() {
        for &j in cols {
            w.write_record([names[j].as_str(), &(g + 1).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Default design column names `x1..xp`.
pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Writes the predictors and a trailing `y` column.
pub fn write_dataset_csv<F: Scalar, W: Write>(
    out: W,
    d: &GroupedDataset<F>,
    names: &[String],
) -> Result<()> {
    if names.len() != d.p() {
        return Err(Error::LengthMismatch(format!(
            "{} names for {} columns",
            names.len(),
            d.p()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("y");
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut row: Vec<String> = d.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(d.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
