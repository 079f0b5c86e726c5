use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw `(user, item, timestamp)` event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Seconds,
    Milliseconds,
}

/// Column layout of a delimited interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatSpec {
    pub delimiter: char,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    /// Skip the first line.
    pub has_header: bool,
    pub time_unit: TimeUnit,
}

impl Default for FormatSpec {
    fn default() -> Self {
        FormatSpec {
            delimiter: '\t',
            user_col: 0,
            item_col: 1,
            time_col: 2,
            has_header: false,
            time_unit: TimeUnit::Seconds,
        }
    }
}

/// Read a delimited log, plain or gzip-compressed (detected by magic bytes).
///
/// Blank lines are skipped. The result is sorted by user, then timestamp,
/// then input order.
pub fn load_interactions(path: &Path, format: &FormatSpec) -> Result<Vec<Interaction>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    drop(file);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn BufRead> = if n == 2 && magic == [0x1f, 0x8b] {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    read_interactions(reader, path, format)
}

pub fn read_interactions(
    reader: impl BufRead,
    path: &Path,
    format: &FormatSpec,
) -> Result<Vec<Interaction>> {
    let needed = format.user_col.max(format.item_col).max(format.time_col) + 1;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line_no == 1 && format.has_header {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter).collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if fields.len() < needed {
            return Err(parse_err(format!(
                "expected at least {needed} fields, found {}",
                fields.len()
            )));
        }
        let raw_ts = fields[format.time_col].trim();
        let ts: i64 = raw_ts
            .parse()
            .map_err(|_| parse_err(format!("timestamp {raw_ts:?} is not an integer")))?;
        if ts < 0 {
            return Err(parse_err(format!("negative timestamp {ts}")));
        }
        let timestamp = match format.time_unit {
            TimeUnit::Seconds => ts,
            TimeUnit::Milliseconds => ts / 1000,
        };
        let user_id = fields[format.user_col].trim();
        let item_id = fields[format.item_col].trim();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        out.push(Interaction {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no interactions", path.display())));
    }
    // stable: equal (user, timestamp) keep input order
    out.sort_by(|a, b| (&a.user_id, a.timestamp).cmp(&(&b.user_id, b.timestamp)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str, format: &FormatSpec) -> Result<Vec<Interaction>> {
        read_interactions(Cursor::new(text.as_bytes()), Path::new("log.tsv"), format)
    }

    #[test]
    fn three_rows_sorted_by_time() {
        let rows = read("u1\ti3\t300\nu1\ti1\t100\nu1\ti2\t200\n", &FormatSpec::default()).unwrap();
        assert_eq!(rows.len(), 3);
        let items: Vec<_> = rows.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(items, ["i1", "i2", "i3"]);
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let err = read("u1\ti1\t100\nu1\ti2\tnoon\n", &FormatSpec::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(matches!(
            read("\n\n", &FormatSpec::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let rows = read("u\tb\t5\nu\ta\t5\n", &FormatSpec::default()).unwrap();
        assert_eq!(rows[0].item_id, "b");
    }

    #[test]
    fn header_and_columns_and_millis() {
        let format = FormatSpec {
            delimiter: ',',
            user_col: 2,
            item_col: 0,
            time_col: 1,
            has_header: true,
            time_unit: TimeUnit::Milliseconds,
        };
        let rows = read("item,ts,user\nx,5000,alice\n", &format).unwrap();
        assert_eq!(
            rows,
            vec![Interaction {
                user_id: "alice".into(),
                item_id: "x".into(),
                timestamp: 5
            }]
        );
    }
}
