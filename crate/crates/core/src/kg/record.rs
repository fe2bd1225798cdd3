//! Record ingestion from CSV and JSON-lines files.

use std::collections::HashSet;
use std::io::{BufRead, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};

/// A `relation=token` semantic annotation of a record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    #[serde(rename = "rel")]
    pub relation: String,
    #[serde(rename = "tok")]
    pub token: String,
}

impl Tag {
    pub fn new(relation: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            relation: relation.into(),
            token: token.into(),
        }
    }
}

/// One ingested sample: numeric features, optional target, semantic tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub tags: Vec<Tag>,
}

/// Checks dimension consistency, id uniqueness and finiteness.
pub fn validate_records(records: &[Record]) -> Result<()> {
    let mut seen = HashSet::new();
    let mut dim: Option<(usize, &str)> = None;
    for (i, r) in records.iter().enumerate() {
        let ctx = || format!("record {} ({:?})", i + 1, r.id);
        if r.id.trim().is_empty() {
            return Err(NrkgError::parse(ctx(), "empty id"));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(NrkgError::parse(ctx(), format!("duplicate record id {:?}", r.id)));
        }
        if r.features.is_empty() {
            return Err(NrkgError::parse(ctx(), "no features"));
        }
        match dim {
            None => dim = Some((r.features.len(), &r.id)),
            Some((d, first)) if d != r.features.len() => {
                return Err(NrkgError::parse(
                    ctx(),
                    format!(
                        "feature dimension {} differs from {d} of record {first:?}",
                        r.features.len()
                    ),
                ))
            }
            _ => {}
        }
        if let Some(j) = r.features.iter().position(|v| !v.is_finite()) {
            return Err(NrkgError::parse(ctx(), format!("non-finite feature f_{}", j + 1)));
        }
        if matches!(r.target, Some(t) if !t.is_finite()) {
            return Err(NrkgError::parse(ctx(), "non-finite target"));
        }
        for t in &r.tags {
            if t.relation.trim().is_empty() || t.token.trim().is_empty() {
                return Err(NrkgError::parse(ctx(), format!("empty tag component in {t:?}")));
            }
        }
    }
    Ok(())
}

fn parse_tags(field: &str, ctx: &str) -> Result<Vec<Tag>> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (rel, tok) = pair
                .split_once('=')
                .ok_or_else(|| NrkgError::parse(ctx, format!("tag {pair:?} is not relation=token")))?;
            Ok(Tag::new(rel.trim(), tok.trim()))
        })
        .collect()
}

/// Reads the CSV layout `id, f_1..f_d, target, tags`.
pub fn read_csv<R: Read>(source: R) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let header = rdr
        .headers()
        .map_err(|e| NrkgError::parse("header", e.to_string()))?
        .clone();
    let n = header.len();
    if n < 4 || &header[0] != "id" || &header[n - 2] != "target" || &header[n - 1] != "tags" {
        return Err(NrkgError::parse(
            "header",
            "expected columns id, f_1..f_d, target, tags",
        ));
    }
    let d = n - 3;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| NrkgError::parse(format!("line {line}"), e.to_string()))?;
        let ctx = format!("line {line}");
        if row.len() != n {
            return Err(NrkgError::parse(ctx, format!("{} columns, header has {n}", row.len())));
        }
        let features = (1..=d)
            .map(|j| {
                row[j]
                    .parse::<f64>()
                    .map_err(|e| NrkgError::parse(format!("line {line}, column {}", &header[j]), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let target = match &row[n - 2] {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|e| NrkgError::parse(format!("line {line}, column target"), e.to_string()))?,
            ),
        };
        records.push(Record {
            id: row[0].to_string(),
            features,
            target,
            tags: parse_tags(&row[n - 1], &ctx)?,
        });
    }
    validate_records(&records)?;
    Ok(records)
}

/// Reads one JSON object per line; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(source: R) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record =
            serde_json::from_str(&line).map_err(|e| NrkgError::parse(format!("line {}", i + 1), e.to_string()))?;
        records.push(r);
    }
    validate_records(&records)?;
    Ok(records)
}

/// Dispatches on extension: `.jsonl`/`.json` are JSON-lines, anything else CSV.
pub fn ingest_records(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => read_jsonl(std::io::BufReader::new(file)),
        _ => read_csv(file),
    }
}

/// Writes records in the CSV layout accepted by [`read_csv`].
pub fn write_csv<W: std::io::Write>(records: &[Record], sink: W) -> Result<()> {
    let d = records.first().map_or(0, |r| r.features.len());
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["id".to_string()];
    header.extend((1..=d).map(|j| format!("f_{j}")));
    header.push("target".into());
    header.push("tags".into());
    w.write_record(&header).map_err(csv_io)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend(r.features.iter().map(|v| format!("{v:?}")));
        row.push(r.target.map(|t| format!("{t:?}")).unwrap_or_default());
        row.push(
            r.tags
                .iter()
                .map(|t| format!("{}={}", t.relation, t.token))
                .collect::<Vec<_>>()
                .join(";"),
        );
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> NrkgError {
    NrkgError::Io(std::io::Error::other(e.to_string()))
}
