//! CSV formats.
//!
//! Records, true or perturbed, use the header `group,value`. Seed observations
//! need a `value` column and may carry a `group` column. Error rows are
//! reported by their 1-based line number in the file, the header being line 1.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{ClientRecord, PerturbedRecord};

pub const RECORD_HEADER: [&str; 2] = ["group", "value"];

/// Maps a metric in `[0, 1]` to `[-1, 1]`.
pub fn rescale_unit(u: f64) -> f64 {
    2.0 * u - 1.0
}

/// Inverse of [`rescale_unit`].
pub fn unscale(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

fn malformed(row: u64, msg: impl Into<String>) -> Error {
    Error::MalformedRow {
        row,
        msg: msg.into(),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Accepted range of the value column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueDomain {
    /// `[-1, 1]`.
    Signed,
    /// `[0, 1]`, mapped to `[-1, 1]` on read.
    Unit,
    /// Any finite value, as in perturbed records.
    Any,
}

impl ValueDomain {
    pub fn input(rescale: bool) -> Self {
        if rescale {
            ValueDomain::Unit
        } else {
            ValueDomain::Signed
        }
    }
}

fn parse_value(raw: &str, row: u64, domain: ValueDomain) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| malformed(row, format!("bad value {raw:?}")))?;
    match domain {
        ValueDomain::Unit if !(0.0..=1.0).contains(&v) => {
            Err(malformed(row, format!("value {v} outside [0, 1]")))
        }
        ValueDomain::Unit => Ok(rescale_unit(v)),
        ValueDomain::Signed if !(-1.0..=1.0).contains(&v) => {
            Err(malformed(row, format!("value {v} outside [-1, 1]")))
        }
        ValueDomain::Any if !v.is_finite() => Err(malformed(row, format!("value {v} not finite"))),
        _ => Ok(v),
    }
}

/// Streaming reader of `group,value` rows.
pub struct RecordReader<R: Read> {
    inner: csv::Reader<R>,
    domain: ValueDomain,
    empty: bool,
    buf: csv::StringRecord,
}

impl<R: Read> RecordReader<R> {
    pub fn new(reader: R, domain: ValueDomain) -> Result<Self> {
        let mut inner = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = inner.headers()?.clone();
        let empty = headers.is_empty();
        if !empty && headers.iter().ne(RECORD_HEADER) {
            let got: Vec<&str> = headers.iter().collect();
            return Err(malformed(
                1,
                format!("expected header group,value, got {got:?}"),
            ));
        }
        Ok(Self {
            inner,
            domain,
            empty,
            buf: csv::StringRecord::new(),
        })
    }

    /// True for a zero-byte input without even a header.
    pub fn is_empty_input(&self) -> bool {
        self.empty
    }

    /// Line number of the row returned last.
    pub fn line(&self) -> u64 {
        line_of(&self.buf)
    }

    /// Rows as perturbed records.
    pub fn perturbed(self) -> impl Iterator<Item = Result<PerturbedRecord>> {
        self.map(|r| {
            r.map(|c| PerturbedRecord {
                group: c.group,
                value: c.value,
            })
        })
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    /// Values lie in `[-1, 1]` unless the domain is [`ValueDomain::Any`].
    type Item = Result<ClientRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.empty {
            return None;
        }
        match self.inner.read_record(&mut self.buf) {
            Ok(false) => None,
            Ok(true) => {
                let row = line_of(&self.buf);
                Some(parse_record(&self.buf, row, self.domain))
            }
            Err(e) => {
                let row = e.position().map_or(0, |p| p.line());
                Some(Err(malformed(row, e.to_string())))
            }
        }
    }
}

fn parse_record(rec: &csv::StringRecord, row: u64, domain: ValueDomain) -> Result<ClientRecord> {
    if rec.len() != 2 {
        return Err(malformed(
            row,
            format!("expected 2 fields, got {}", rec.len()),
        ));
    }
    let group: u32 = rec[0]
        .parse()
        .map_err(|_| malformed(row, format!("bad group {:?}", &rec[0])))?;
    let value = parse_value(&rec[1], row, domain)?;
    Ok(ClientRecord { group, value })
}

/// Reads every record; see [`RecordReader`] for streaming.
pub fn read_records<R: Read>(reader: R, rescale: bool) -> Result<Vec<ClientRecord>> {
    RecordReader::new(reader, ValueDomain::input(rescale))?.collect()
}

/// Reads perturbed records, whose values may be any finite number.
pub fn read_perturbed<R: Read>(reader: R) -> Result<Vec<PerturbedRecord>> {
    RecordReader::new(reader, ValueDomain::Any)?
        .perturbed()
        .collect()
}

/// Writes `group,value` rows with shortest round-trip floats.
pub fn write_records<W, T, I>(writer: W, rows: I) -> Result<()>
where
    W: Write,
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes any serializable rows with headers taken from the field names.
pub fn write_table<W, T, I>(writer: W, rows: I) -> Result<()>
where
    W: Write,
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads seed observations, keeping rows of `group` when both it and a
/// `group` column are present.
pub fn read_observations<R: Read>(
    reader: R,
    group: Option<u32>,
    rescale: bool,
) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let value_col = headers
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| malformed(1, "missing value column"))?;
    let group_col = headers.iter().position(|h| h == "group");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let row = line_of(&rec);
        if let (Some(want), Some(col)) = (group, group_col) {
            let g: u32 = rec
                .get(col)
                .unwrap_or("")
                .parse()
                .map_err(|_| malformed(row, format!("bad group {:?}", rec.get(col))))?;
            if g != want {
                continue;
            }
        }
        let raw = rec
            .get(value_col)
            .ok_or_else(|| malformed(row, "missing value"))?;
        out.push(parse_value(raw, row, ValueDomain::input(rescale))?);
    }
    Ok(out)
}
