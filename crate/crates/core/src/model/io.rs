//! Canonical text formats: CSV for relations, JSON lines for collections.

use std::io::{BufRead, Read, Write};

use super::{Attribute, Collection, Document, Relation, Schema, Value, ValueType};
use crate::{Error, Result};

/// Reads a CSV relation. The header names the attributes; column types are
/// inferred from the data (int, then float, then bool, else string) and
/// empty fields are null.
pub fn read_csv<R: Read>(reader: R) -> Result<Relation> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let raw: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    let types: Vec<ValueType> = (0..names.len())
        .map(|col| infer_column(raw.iter().map(|r| r.get(col).unwrap_or(""))))
        .collect();
    let schema = Schema::new(
        names.iter().zip(&types).map(|(n, t)| Attribute::new(n.clone(), t.clone())).collect(),
    )?;
    let rows = raw
        .iter()
        .map(|r| {
            types
                .iter()
                .enumerate()
                .map(|(i, t)| parse_field(r.get(i).unwrap_or(""), t))
                .collect()
        })
        .collect();
    Relation::new(schema, rows)
}

fn infer_column<'a>(fields: impl Iterator<Item = &'a str> + Clone) -> ValueType {
    let present = fields.filter(|f| !f.is_empty());
    if present.clone().next().is_none() {
        return ValueType::Str;
    }
    if present.clone().all(|f| f.parse::<i64>().is_ok()) {
        ValueType::Int
    } else if present.clone().all(|f| f.parse::<u64>().is_ok()) {
        ValueType::UInt
    } else if present.clone().all(|f| f.parse::<f64>().is_ok()) {
        ValueType::Float
    } else if present.clone().all(|f| f == "true" || f == "false") {
        ValueType::Bool
    } else {
        ValueType::Str
    }
}

fn parse_field(field: &str, ty: &ValueType) -> Value {
    if field.is_empty() {
        return Value::Null;
    }
    match ty {
        ValueType::Int => field.parse().map(Value::Int).unwrap_or(Value::Null),
        ValueType::UInt => field.parse().map(Value::UInt).unwrap_or(Value::Null),
        ValueType::Float => field.parse().map(Value::Float).unwrap_or(Value::Null),
        ValueType::Bool => Value::Bool(field == "true"),
        _ => Value::Str(field.to_string()),
    }
}

pub fn write_csv<W: Write>(rel: &Relation, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(rel.schema.names())?;
    for row in &rel.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<R: BufRead>(name: &str, reader: R) -> Result<Collection> {
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = Document::parse_json(&line)
            .map_err(|e| Error::parse(lineno + 1, 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(Collection::new(name, docs))
}

pub fn write_jsonl<W: Write>(col: &Collection, mut writer: W) -> Result<()> {
    for doc in &col.docs {
        writeln!(writer, "{}", doc.to_json())?;
    }
    Ok(())
}
