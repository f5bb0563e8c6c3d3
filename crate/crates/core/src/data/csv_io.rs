use std::io::{Read, Write};
use std::path::Path;

use super::{AttackTag, BeatRecord, LabelScheme};
use crate::error::{Error, Result};

fn header(width: usize) -> Vec<String> {
    (0..width)
        .map(|i| format!("s{i}"))
        .chain(["label".to_string(), "attack".to_string()])
        .collect()
}

/// Writes records under the header `s0..s{w-1},label,attack`. Samples use
/// the shortest text that parses back to the same `f64`.
pub fn write_csv<W: Write>(out: W, records: &[BeatRecord], scheme: LabelScheme) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = records.first().map_or(0, |r| r.samples.len());
    if records.is_empty() {
        w.flush()?;
        return Ok(());
    }
    w.write_record(header(width)).map_err(csv_err)?;
    let mut row = Vec::with_capacity(width + 2);
    for (i, r) in records.iter().enumerate() {
        if r.samples.len() != width {
            return Err(Error::data(format!(
                "record {i} has {} samples, expected {width}",
                r.samples.len()
            )));
        }
        if r.label >= scheme.classes() {
            return Err(Error::data(format!("record {i} label {} outside {scheme:?}", r.label)));
        }
        row.clear();
        row.extend(r.samples.iter().map(|v| v.to_string()));
        row.push(scheme.name(r.label).to_string());
        row.push(r.attack.as_str().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses records; source ids are `{source}:{row}`. An empty input yields
/// no records.
pub fn read_csv<R: Read>(input: R, scheme: LabelScheme, source: &str) -> Result<Vec<BeatRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let head = rdr.headers().map_err(csv_err)?.clone();
    if head.is_empty() {
        return Ok(Vec::new());
    }
    let width = head.len().checked_sub(2).filter(|&w| w > 0).ok_or_else(|| {
        Error::data(format!("header has {} columns, need samples + label + attack", head.len()))
    })?;
    let expected = header(width);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::data("header must be s0..sN,label,attack"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        if rec.len() != width + 2 {
            return Err(Error::data(format!(
                "line {line}: {} columns, expected {}",
                rec.len(),
                width + 2
            )));
        }
        let samples = rec
            .iter()
            .take(width)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::data(format!("line {line}: non-numeric sample {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = scheme
            .parse_label(&rec[width])
            .map_err(|e| Error::data(format!("line {line}: {e}")))?;
        let attack: AttackTag = rec[width + 1]
            .parse()
            .map_err(|e| Error::data(format!("line {line}: {e}")))?;
        out.push(BeatRecord {
            samples,
            label,
            attack,
            source_id: format!("{source}:{}", i),
        });
    }
    Ok(out)
}

pub fn save_csv(records: &[BeatRecord], path: &Path, scheme: LabelScheme) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(f), records, scheme)
}

pub fn load_csv(path: &Path, scheme: LabelScheme) -> Result<Vec<BeatRecord>> {
    let f = std::fs::File::open(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
    read_csv(std::io::BufReader::new(f), scheme, stem)
}

fn csv_err(e: csv::Error) -> Error {
    Error::data(format!("csv: {e}"))
}
