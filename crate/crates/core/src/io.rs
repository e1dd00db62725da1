//! Series ingest, atomic artifact writes and report schema checks.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{TimeSeries, Unit};

/// Layout of an input CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// Decided by the column count of the first data row.
    #[default]
    Auto,
    /// One value per row.
    Single,
    /// `time,value` with time in seconds.
    TimeValue,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "auto" => Ok(InputFormat::Auto),
            "single" => Ok(InputFormat::Single),
            "time_value" => Ok(InputFormat::TimeValue),
            other => Err(Error::invalid(format!("unknown input format '{other}'"))),
        }
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| Error::Parse { line, message: format!("'{cell}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("'{cell}' is not finite") });
    }
    Ok(v)
}

/// Reads a series from CSV text, one row at a time.
///
/// Blank lines and lines starting with `#` are skipped. The first
/// non-comment line may be a header. For the two-column layout the sampling
/// interval is the median time step; `interval_ms` is used otherwise.
pub fn ingest_reader<R: BufRead>(reader: R, format: InputFormat, unit: Unit, interval_ms: f64) -> Result<TimeSeries> {
    let mut values = Vec::new();
    let mut times = Vec::new();
    let mut columns = match format {
        InputFormat::Auto => None,
        InputFormat::Single => Some(1),
        InputFormat::TimeValue => Some(2),
    };
    let mut seen_first = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        let first = !seen_first;
        seen_first = true;
        if first && fields.iter().any(|f| f.parse::<f64>().is_err() && f.chars().any(char::is_alphabetic)) {
            // header row
            if columns.is_none() {
                columns = Some(fields.len().min(2));
            }
            continue;
        }
        let ncol = *columns.get_or_insert(fields.len());
        if fields.len() != ncol || !(1..=2).contains(&ncol) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {ncol} column(s), found {}", fields.len()),
            });
        }
        if ncol == 2 {
            times.push(parse_cell(fields[0], lineno)?);
            values.push(parse_cell(fields[1], lineno)?);
        } else {
            values.push(parse_cell(fields[0], lineno)?);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse { line: 0, message: "file contains no data rows".into() });
    }
    let interval = if times.len() >= 2 {
        let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(j) = steps.iter().position(|d| !(*d > 0.0)) {
            return Err(Error::invalid(format!("time column is not increasing at data row {}", j + 2)));
        }
        steps.sort_by(f64::total_cmp);
        steps[steps.len() / 2] * 1000.0
    } else {
        interval_ms
    };
    TimeSeries::new(values, interval, unit)
}

pub fn ingest(path: &Path, format: InputFormat, unit: Unit, interval_ms: f64) -> Result<TimeSeries> {
    let file = File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display()))))?;
    ingest_reader(BufReader::new(file), format, unit, interval_ms)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic_with<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |w| Ok(w.write_all(bytes)?))
}

/// One value per row, with a `value` header.
pub fn write_series_csv(path: &Path, samples: &[f64]) -> Result<()> {
    write_atomic_with(path, |w| {
        writeln!(w, "value")?;
        for v in samples {
            writeln!(w, "{v}")?;
        }
        Ok(())
    })
}

/// Checks `instance` against a JSON schema.
pub fn validate_against(schema: &serde_json::Value, instance: &serde_json::Value) -> Result<()> {
    let validator = jsonschema::validator_for(schema).map_err(|e| Error::Schema(format!("bad schema: {e}")))?;
    let errors: Vec<String> =
        validator.iter_errors(instance).take(5).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Schema(errors.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, format: InputFormat) -> Result<TimeSeries> {
        ingest_reader(text.as_bytes(), format, Unit::Dbm, 1.0)
    }

    #[test]
    fn single_column() {
        assert_eq!(read("1.0\n2.0\n", InputFormat::Auto).unwrap().samples(), &[1.0, 2.0]);
    }

    #[test]
    fn bad_cell_cites_line() {
        match read("1.0\n2.0\nabc\n", InputFormat::Single) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_and_comments() {
        let s = read("# probe\ntime,power\n0.0,-50\n0.1,-51\n0.2,-49\n", InputFormat::Auto).unwrap();
        assert_eq!(s.samples(), &[-50.0, -51.0, -49.0]);
        assert!((s.interval_ms() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn inconsistent_columns() {
        match read("1,2\n3\n", InputFormat::Auto) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(read("", InputFormat::Auto).is_err());
        assert!(read("value\n", InputFormat::Auto).is_err());
    }
}
