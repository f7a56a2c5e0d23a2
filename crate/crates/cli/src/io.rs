//! CSV sample files and atomic report output.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kscore::kernel::{Group, SampleSet};

fn reader(path: &Path, header: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

fn parse_cell(path: &Path, line: u64, col: usize, text: &str) -> Result<f64> {
    let v: f64 = text
        .parse()
        .map_err(|_| anyhow!("{}: row {line}, column {col}: cannot parse '{text}' as a number", path.display()))?;
    if !v.is_finite() {
        bail!("{}: row {line}, column {col}: non-finite value '{text}'", path.display());
    }
    Ok(v)
}

/// Samples plus column names (`x1..xd` when the file has no header).
#[derive(Debug, Clone)]
pub struct Table {
    pub samples: SampleSet,
    pub names: Vec<String>,
}

fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// One sample per row, every column numeric. Row numbers in errors are file
/// line numbers; columns are 1-based.
pub fn read_samples(path: &Path, header: bool) -> Result<Table> {
    let mut rdr = reader(path, header)?;
    let names: Option<Vec<String>> = if header {
        let h = rdr.headers().with_context(|| format!("{}: cannot read header", path.display()))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            bail!("{}: row {line}: expected {w} columns, found {}", path.display(), record.len());
        }
        for (c, cell) in record.iter().enumerate() {
            data.push(parse_cell(path, line, c + 1, cell)?);
        }
        rows += 1;
    }
    let d = width.ok_or_else(|| anyhow!("{}: no samples", path.display()))?;
    let names = match names {
        Some(n) if n.len() == d => n,
        Some(n) => bail!("{}: header has {} columns, rows have {d}", path.display(), n.len()),
        None => default_names(d),
    };
    Ok(Table { samples: SampleSet::new(data, rows, d)?, names })
}

/// Single labeled file: a header with a `group` column holding P or Q, all
/// other columns numeric.
pub fn read_labeled(path: &Path) -> Result<Table> {
    let mut rdr = reader(path, true)?;
    let headers = rdr.headers().with_context(|| format!("{}: cannot read header", path.display()))?.clone();
    let group_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("group"))
        .ok_or_else(|| anyhow!("{}: header has no 'group' column", path.display()))?;
    let width = headers.len();
    let mut data = Vec::new();
    let mut groups = Vec::new();
    for record in rdr.records() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            bail!("{}: row {line}: expected {width} columns, found {}", path.display(), record.len());
        }
        for (c, cell) in record.iter().enumerate() {
            if c == group_col {
                groups.push(match cell.to_ascii_uppercase().as_str() {
                    "P" => Group::P,
                    "Q" => Group::Q,
                    _ => bail!("{}: row {line}, column {}: group must be P or Q, got '{cell}'", path.display(), c + 1),
                });
            } else {
                data.push(parse_cell(path, line, c + 1, cell)?);
            }
        }
    }
    if groups.is_empty() {
        bail!("{}: no samples", path.display());
    }
    if width < 2 {
        bail!("{}: no feature columns besides 'group'", path.display());
    }
    let names = headers.iter().enumerate().filter(|&(c, _)| c != group_col).map(|(_, h)| h.to_string()).collect();
    Ok(Table { samples: SampleSet::new(data, groups.len(), width - 1)?.with_groups(groups)?, names })
}

/// Writes samples with shortest round-trip formatting, so reading the file
/// back gives the same values.
pub fn write_samples(path: &Path, samples: &SampleSet, header: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    if header {
        wtr.write_record(default_names(samples.d()))?;
    }
    for row in samples.rows() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| anyhow!("{e}"))?;
    write_atomic(path, &bytes)
}

/// Writes via a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write to {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.into_inner().map_err(|e| anyhow!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_plain_and_labeled_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = read_samples(&file(&dir, "a.csv", "a,b\n1,2\n3,4.5\n"), true).unwrap();
        assert_eq!((t.samples.n(), t.samples.d()), (2, 2));
        assert_eq!(t.samples.get(1, 1), 4.5);
        assert_eq!(t.names, ["a", "b"]);
        let t = read_samples(&file(&dir, "b.csv", "1,2\n3,4\n"), false).unwrap();
        assert_eq!(t.samples.n(), 2);
        assert_eq!(t.names, ["x1", "x2"]);
        let t = read_labeled(&file(&dir, "c.csv", "x,group,y\n1,P,2\n3,q,4\n")).unwrap();
        assert_eq!(t.samples.groups().unwrap(), &[Group::P, Group::Q]);
        assert_eq!(t.samples.row(1), &[3.0, 4.0]);
        assert_eq!(t.names, ["x", "y"]);
    }

    #[test]
    fn errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_samples(&file(&dir, "a.csv", "a,b\n1,2\n3\n"), true).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("expected 2 columns"), "{err}");
        let err = read_samples(&file(&dir, "b.csv", "a,b\n1,2\n3,zz\n"), true).unwrap_err().to_string();
        assert!(err.contains("row 3, column 2"), "{err}");
        let err = read_labeled(&file(&dir, "c.csv", "x,group\n1,R\n")).unwrap_err().to_string();
        assert!(err.contains("row 2, column 2"), "{err}");
        assert!(read_labeled(&file(&dir, "d.csv", "x,y\n1,2\n")).is_err());
    }

    #[test]
    fn samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, f64::MIN_POSITIVE, -0.0];
        let s = SampleSet::new(values, 3, 2).unwrap();
        let p = dir.path().join("out.csv");
        write_samples(&p, &s, true).unwrap();
        let back = read_samples(&p, true).unwrap();
        assert_eq!(back.samples.data(), s.data());
    }
}
