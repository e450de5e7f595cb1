//! CSV ingestion of series that share one input grid.
//!
//! The header is `x,<id>[:<group>][:<condition>],...`; every following row
//! holds one grid value and one response per subject.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubjectLabel {
    pub id: String,
    pub group: Option<String>,
    pub condition: Option<String>,
}

impl SubjectLabel {
    pub fn parse(field: &str) -> Result<Self, String> {
        let mut parts = field.trim().split(':');
        let id = parts.next().unwrap_or("").trim();
        if id.is_empty() {
            return Err(format!("empty subject id in header field `{field}`"));
        }
        let mut tag = || parts.next().map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        let group = tag();
        let condition = tag();
        if parts.next().is_some() {
            return Err(format!("header field `{field}` has more than id:group:condition"));
        }
        Ok(Self {
            id: id.to_string(),
            group,
            condition,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTable {
    /// Strictly increasing shared grid.
    pub x: Vec<f64>,
    pub labels: Vec<SubjectLabel>,
    /// `y[s]` is subject `s`'s response on `x`.
    pub y: Vec<Vec<f64>>,
}

impl SubjectTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }
}

pub fn ingest_csv(path: &Path) -> Result<SubjectTable, IngestError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<SubjectTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(IngestError::Shape("empty file".into())),
    };
    let header_line = header.position().map_or(1, |p| p.line());
    if header.len() < 2 {
        return Err(IngestError::Parse {
            line: header_line,
            reason: "header needs `x` and at least one subject column".into(),
        });
    }
    let labels = header
        .iter()
        .skip(1)
        .map(SubjectLabel::parse)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|reason| IngestError::Parse {
            line: header_line,
            reason,
        })?;
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].iter().any(|o| o.id == l.id) {
            return Err(IngestError::Parse {
                line: header_line,
                reason: format!("duplicate subject id `{}`", l.id),
            });
        }
    }

    let width = header.len();
    let mut x = Vec::new();
    let mut y = vec![Vec::new(); labels.len()];
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(IngestError::Parse {
                line,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let mut values = Vec::with_capacity(width);
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| IngestError::Parse {
                line,
                reason: format!("non-numeric value `{cell}` in column {}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Parse {
                    line,
                    reason: format!("non-finite value in column {}", col + 1),
                });
            }
            values.push(v);
        }
        if let Some(&prev) = x.last() {
            if values[0] <= prev {
                return Err(IngestError::Parse {
                    line,
                    reason: format!("x = {} does not increase (previous {prev})", values[0]),
                });
            }
        }
        x.push(values[0]);
        for (s, &v) in values[1..].iter().enumerate() {
            y[s].push(v);
        }
    }
    if x.len() < 3 {
        return Err(IngestError::Shape(format!("need at least 3 rows, found {}", x.len())));
    }
    Ok(SubjectTable { x, labels, y })
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::Parse {
        line,
        reason: e.to_string(),
    }
}

/// Writes a table in the format [`parse_table`] reads.
pub fn write_table(table: &SubjectTable) -> String {
    let mut out = String::from("x");
    for l in &table.labels {
        out.push(',');
        out.push_str(&l.id);
        match (&l.group, &l.condition) {
            (Some(g), Some(c)) => out.push_str(&format!(":{g}:{c}")),
            (Some(g), None) => out.push_str(&format!(":{g}")),
            (None, Some(c)) => out.push_str(&format!("::{c}")),
            (None, None) => {}
        }
    }
    out.push('\n');
    for (i, xi) in table.x.iter().enumerate() {
        out.push_str(&xi.to_string());
        for ys in &table.y {
            out.push(',');
            out.push_str(&ys[i].to_string());
        }
        out.push('\n');
    }
    out
}
