//! Score files: CSV and JSONL readers and writers.
//!
//! CSV header: `sample_id,source,prob_<class>...,label_<class>...` with classes
//! in schema order. JSONL: one object per line,
//! `{"id": .., "source": .., "probs": {class: p}, "labels": {class: 0|1}}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{validate_with_lines, ClassSchema, RawRecord, ScoreTable};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`/`.ndjson` are JSONL, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn read_scores<T: Scalar>(path: &Path, format: Format, schema: ClassSchema<T>) -> Result<ScoreTable<T>> {
    let file = open(path)?;
    match format {
        Format::Csv => read_csv(file, schema),
        Format::Jsonl => read_jsonl(BufReader::new(file), schema),
    }
}

pub fn write_scores<T: Scalar>(table: &ScoreTable<T>, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(table, &mut out)?,
        Format::Jsonl => write_jsonl(table, &mut out)?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Class list from a score file: the `prob_` columns of a CSV header, or the
/// `probs` keys of the first JSONL record.
pub fn infer_schema<T: Scalar>(path: &Path, format: Format, theta: T) -> Result<ClassSchema<T>> {
    let file = open(path)?;
    let names: Vec<String> = match format {
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(file);
            rd.headers()?.iter().filter_map(|h| h.strip_prefix("prob_").map(String::from)).collect()
        }
        Format::Jsonl => {
            let mut first = None;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: Value =
                    serde_json::from_str(&line).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
                first = Some(v);
                break;
            }
            match first.as_ref().and_then(|v| v.get("probs")).and_then(Value::as_object) {
                Some(m) => m.keys().cloned().collect(),
                None => return Err(Error::MissingColumn("probs".into())),
            }
        }
    };
    ClassSchema::new(names, theta)
}

fn parse_num<T: Scalar>(s: &str, line: usize, column: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Parse { line, message: format!("column `{column}`: `{s}` is not a number") })
}

pub fn read_csv<T: Scalar, R: Read>(input: R, schema: ClassSchema<T>) -> Result<ScoreTable<T>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("sample_id").ok_or_else(|| Error::MissingColumn("sample_id".into()))?;
    let source_col = col("source");
    let mut prob_cols = Vec::new();
    let mut label_cols = Vec::new();
    for name in schema.class_names() {
        for (prefix, cols) in [("prob_", &mut prob_cols), ("label_", &mut label_cols)] {
            let column = format!("{prefix}{name}");
            cols.push((col(&column).ok_or(Error::MissingColumn(column.clone()))?, column));
        }
    }

    let mut raw = Vec::new();
    let mut lines = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rd.position().line() as usize;
        match rd.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(Error::Parse { line: line.max(1), message: e.to_string() }),
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(line);
        let field = |i: usize| record.get(i).unwrap_or("");
        let values = |cols: &[(usize, String)]| -> Result<Vec<T>> {
            cols.iter().map(|(i, name)| parse_num(field(*i), line, name)).collect()
        };
        raw.push(RawRecord {
            sample_id: field(id_col).to_string(),
            source: source_col.map(field).unwrap_or("").to_string(),
            probs: values(&prob_cols)?,
            labels: values(&label_cols)?,
        });
        lines.push(line);
    }
    validate_with_lines(raw, schema, Some(&lines))
}

pub fn write_csv<T: Scalar, W: Write>(table: &ScoreTable<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let names = table.schema().class_names();
    let mut header = vec!["sample_id".to_string(), "source".to_string()];
    header.extend(names.iter().map(|c| format!("prob_{c}")));
    header.extend(names.iter().map(|c| format!("label_{c}")));
    w.write_record(&header)?;
    for r in table.records() {
        let mut row = vec![r.sample_id.clone(), r.source.clone()];
        row.extend(r.probs.iter().map(|p| p.to_string()));
        row.extend(r.labels.iter().map(|&l| if l { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<scores csv>", e))?;
    Ok(())
}

fn map_values<T: Scalar>(obj: &Value, key: &str, schema: &ClassSchema<T>, line: usize) -> Result<Vec<T>> {
    let map = obj
        .get(key)
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Parse { line, message: format!("`{key}` must be an object") })?;
    let num = |v: &Value| -> Result<T> {
        match v {
            Value::Bool(b) => Ok(if *b { T::one() } else { T::zero() }),
            other => serde_json::from_value::<T>(other.clone())
                .map_err(|_| Error::Parse { line, message: format!("`{key}` value {other} is not a number") }),
        }
    };
    let mut out = Vec::with_capacity(map.len());
    for name in schema.class_names() {
        if let Some(v) = map.get(name) {
            out.push(num(v)?);
        }
    }
    // unknown classes make the record too long
    for (k, v) in map {
        if schema.class_index(k).is_none() {
            out.push(num(v)?);
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: Scalar, R: BufRead>(input: R, schema: ClassSchema<T>) -> Result<ScoreTable<T>> {
    let mut raw = Vec::new();
    let mut lines = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let id = obj
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse { line: line_no, message: "missing string `id`".into() })?;
        let source = match obj.get("source") {
            None | Some(Value::Null) => "",
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Parse { line: line_no, message: "`source` must be a string".into() }),
        };
        raw.push(RawRecord {
            sample_id: id.to_string(),
            source: source.to_string(),
            probs: map_values(&obj, "probs", &schema, line_no)?,
            labels: map_values(&obj, "labels", &schema, line_no)?,
        });
        lines.push(line_no);
    }
    validate_with_lines(raw, schema, Some(&lines))
}

pub fn write_jsonl<T: Scalar, W: Write>(table: &ScoreTable<T>, mut out: W) -> Result<()> {
    let names = table.schema().class_names();
    for r in table.records() {
        let mut probs = Map::new();
        let mut labels = Map::new();
        for (c, name) in names.iter().enumerate() {
            probs.insert(name.clone(), serde_json::to_value(r.probs[c])?);
            labels.insert(name.clone(), Value::from(r.labels[c] as u8));
        }
        let mut obj = Map::new();
        obj.insert("id".into(), Value::from(r.sample_id.clone()));
        obj.insert("source".into(), Value::from(r.source.clone()));
        obj.insert("probs".into(), Value::Object(probs));
        obj.insert("labels".into(), Value::Object(labels));
        serde_json::to_writer(&mut out, &Value::Object(obj))?;
        out.write_all(b"\n").map_err(|e| Error::io("<scores jsonl>", e))?;
    }
    Ok(())
}
