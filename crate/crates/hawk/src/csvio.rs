//! CSV tables and dataset directories.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use hawk_core::storage::{create_table, Column, ColumnKind, ColumnTable, StorageError, Value};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {reason}")]
    Parse {
        line: u64,
        column: usize,
        reason: String,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            header: false,
        }
    }
}

fn parse_value(field: &str, kind: ColumnKind) -> Result<Value, String> {
    match kind {
        ColumnKind::Int64 => field
            .trim()
            .parse()
            .map(Value::Int)
            .map_err(|_| format!("`{field}` is not an int64")),
        ColumnKind::Float64 => field
            .trim()
            .parse()
            .map(Value::Float)
            .map_err(|_| format!("`{field}` is not a float64")),
        ColumnKind::String => Ok(Value::Str(field.to_string())),
    }
}

/// Parses CSV records from `reader` under `schema`. Lines are 1-based and
/// count the header; columns are 1-based.
pub fn read_csv<R: Read>(
    reader: R,
    name: &str,
    schema: &[(String, ColumnKind)],
    opts: CsvOptions,
) -> Result<ColumnTable, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.header)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LoadError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            column: 0,
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != schema.len() {
            return Err(LoadError::Parse {
                line,
                column: rec.len().min(schema.len()) + 1,
                reason: format!("expected {} fields, got {}", schema.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .zip(schema)
            .enumerate()
            .map(|(c, (f, (_, kind)))| {
                parse_value(f, *kind).map_err(|reason| LoadError::Parse {
                    line,
                    column: c + 1,
                    reason,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(create_table(name, schema, rows)?)
}

pub fn load_csv(
    path: &Path,
    name: &str,
    schema: &[(String, ColumnKind)],
    opts: CsvOptions,
) -> Result<ColumnTable, LoadError> {
    let file = fs::File::open(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, name, schema, opts)
}

/// Writes `table` with a typed header (`name:kind`).
pub fn write_csv<W: Write>(table: &ColumnTable, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(
        table
            .columns()
            .iter()
            .map(|c| format!("{}:{}", c.name, c.data.kind())),
    )?;
    let mut cell = String::new();
    for i in 0..table.row_count() {
        let mut rec = csv::StringRecord::new();
        for c in table.columns() {
            cell.clear();
            match &c.data {
                Column::Int64(v) => cell.push_str(&v[i].to_string()),
                // shortest representation that round-trips
                Column::Float64(v) => cell.push_str(&format!("{:?}", v[i])),
                other => cell.push_str(&other.value(i).to_string()),
            }
            rec.push_field(&cell);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the typed header written by [`write_csv`].
pub fn typed_header(line: &str, delimiter: u8) -> Result<Vec<(String, ColumnKind)>, LoadError> {
    line.trim_end_matches(['\r', '\n'])
        .split(delimiter as char)
        .enumerate()
        .map(|(i, f)| {
            let bad = |reason: String| LoadError::Parse {
                line: 1,
                column: i + 1,
                reason,
            };
            let (n, k) = f
                .rsplit_once(':')
                .ok_or_else(|| bad(format!("header field `{f}` lacks `:kind`")))?;
            let kind = ColumnKind::parse(k).ok_or_else(|| bad(format!("unknown kind `{k}`")))?;
            Ok((n.to_string(), kind))
        })
        .collect()
}

/// Loads a CSV file whose first line is a typed header.
pub fn load_typed_csv(path: &Path, name: &str) -> Result<ColumnTable, LoadError> {
    let io = |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = fs::read_to_string(path).map_err(io)?;
    let first = text.lines().next().unwrap_or("");
    let schema = typed_header(first, b',')?;
    read_csv(
        text.as_bytes(),
        name,
        &schema,
        CsvOptions {
            delimiter: b',',
            header: true,
        },
    )
}

/// Writes every table as `<dir>/<name>.csv`.
pub fn save_dataset(dir: &Path, tables: &[ColumnTable]) -> Result<(), LoadError> {
    let io = |source| LoadError::Io {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name()));
        let file = fs::File::create(&path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        write_csv(t, std::io::BufWriter::new(file)).map_err(|e| LoadError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    Ok(())
}

/// Loads every `*.csv` in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<ColumnTable>, LoadError> {
    let io = |source| LoadError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            load_typed_csv(p, &name)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(t: &ColumnTable, c: &str) -> Vec<i64> {
        match t.column(c).unwrap() {
            Column::Int64(v) => v.clone(),
            _ => panic!(),
        }
    }

    #[test]
    fn two_lines_without_header() {
        let schema = vec![("a".to_string(), ColumnKind::Int64)];
        let t = read_csv("1\n2".as_bytes(), "t", &schema, CsvOptions::default()).unwrap();
        assert_eq!(ints(&t, "a"), vec![1, 2]);
    }

    #[test]
    fn header_is_skipped() {
        let schema = vec![("a".to_string(), ColumnKind::Int64)];
        let opts = CsvOptions {
            header: true,
            ..CsvOptions::default()
        };
        let t = read_csv("a\n5\n6\n".as_bytes(), "t", &schema, opts).unwrap();
        assert_eq!(ints(&t, "a"), vec![5, 6]);
    }

    #[test]
    fn parse_errors_carry_position() {
        let schema = vec![
            ("a".to_string(), ColumnKind::Int64),
            ("b".to_string(), ColumnKind::Float64),
        ];
        let err = read_csv(
            "1,2.5\n3,x\n".as_bytes(),
            "t",
            &schema,
            CsvOptions::default(),
        )
        .unwrap_err();
        match err {
            LoadError::Parse { line, column, .. } => assert_eq!((line, column), (2, 2)),
            e => panic!("{e}"),
        }
        let err = read_csv("1\n".as_bytes(), "t", &schema, CsvOptions::default()).unwrap_err();
        assert!(matches!(err, LoadError::Parse { line: 1, .. }));
    }

    #[test]
    fn semicolons() {
        let schema = vec![
            ("s".to_string(), ColumnKind::String),
            ("n".to_string(), ColumnKind::Int64),
        ];
        let opts = CsvOptions {
            delimiter: b';',
            header: false,
        };
        let t = read_csv("x;1\ny;2\nx;3\n".as_bytes(), "t", &schema, opts).unwrap();
        match t.column("s").unwrap() {
            Column::DictString { codes, lexicon } => {
                assert_eq!(codes, &vec![0, 1, 0]);
                assert_eq!(lexicon, &vec!["x".to_string(), "y".to_string()]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv(
            Path::new("/nonexistent/x.csv"),
            "x",
            &[],
            CsvOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LoadError::Io { .. }));
    }
}
