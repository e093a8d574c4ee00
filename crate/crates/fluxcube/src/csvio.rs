//! Long-format CSV (`date,location,keyword,value`) reading and writing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use fluxcube_core::ActivityTensor;

use crate::calendar::{format_date, parse_date};

pub const HEADER: [&str; 4] = ["date", "location", "keyword", "value"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line 1: expected header `date,location,keyword,value`, found `{found}`")]
    Header { found: String },
    #[error("line {line}: duplicate entry for ({date}, {location}, {keyword}), first seen on line {first}")]
    Duplicate {
        line: u64,
        first: u64,
        date: String,
        location: String,
        keyword: String,
    },
    #[error("missing value for ({date}, {location}, {keyword}){}", if *.interpolate { "; interpolation needs observed values on both neighboring dates" } else { "" })]
    Missing {
        date: String,
        location: String,
        keyword: String,
        interpolate: bool,
    },
    #[error("non-uniform date cadence: {previous} -> {date} is {found} days, expected {expected}")]
    Cadence {
        previous: String,
        date: String,
        expected: i64,
        found: i64,
    },
    #[error("no data rows")]
    Empty,
    #[error("{0}")]
    Tensor(#[from] fluxcube_core::Error),
}

impl IngestError {
    fn malformed(line: u64, message: impl Into<String>) -> Self {
        IngestError::Malformed {
            line,
            message: message.into(),
        }
    }
}

pub fn load_csv(path: &Path, interpolate: bool) -> Result<ActivityTensor, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, interpolate)
}

struct Row {
    date: NaiveDate,
    location: String,
    keyword: String,
    value: f64,
}

/// Reads a long-format CSV into a dense tensor. Dates ascend; locations
/// and keywords are sorted lexicographically.
pub fn read_csv<R: Read>(reader: R, interpolate: bool) -> Result<ActivityTensor, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| IngestError::malformed(csv_line(&e).unwrap_or(1), e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(IngestError::Header {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut rows = Vec::new();
    let mut seen: HashMap<(NaiveDate, String, String), u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::malformed(csv_line(&e).unwrap_or(0), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let date = parse_date(&record[0])
            .ok_or_else(|| IngestError::malformed(line, format!("`{}` is not an ISO date (YYYY-MM-DD)", &record[0])))?;
        let (location, keyword) = (record[1].to_string(), record[2].to_string());
        if location.is_empty() || keyword.is_empty() {
            return Err(IngestError::malformed(line, "empty location or keyword"));
        }
        let value: f64 = record[3]
            .parse()
            .map_err(|_| IngestError::malformed(line, format!("`{}` is not a number", &record[3])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(IngestError::malformed(line, format!("value {value} must be finite and nonnegative")));
        }
        if let Some(&first) = seen.get(&(date, location.clone(), keyword.clone())) {
            return Err(IngestError::Duplicate {
                line,
                first,
                date: format_date(date),
                location,
                keyword,
            });
        }
        seen.insert((date, location.clone(), keyword.clone()), line);
        rows.push(Row {
            date,
            location,
            keyword,
            value,
        });
    }
    if rows.is_empty() {
        return Err(IngestError::Empty);
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect();
    let locations: Vec<String> = rows.iter().map(|r| r.location.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let keywords: Vec<String> = rows.iter().map(|r| r.keyword.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if dates.len() >= 2 {
        let expected = (dates[1] - dates[0]).num_days();
        for w in dates.windows(2) {
            let found = (w[1] - w[0]).num_days();
            if found != expected {
                return Err(IngestError::Cadence {
                    previous: format_date(w[0]),
                    date: format_date(w[1]),
                    expected,
                    found,
                });
            }
        }
    }

    let index = |v: &[String]| v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect::<BTreeMap<_, _>>();
    let (loc_index, kw_index) = (index(&locations), index(&keywords));
    let date_index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let (t, l, k) = (dates.len(), locations.len(), keywords.len());
    let mut grid: Vec<Option<f64>> = vec![None; t * l * k];
    for r in &rows {
        grid[(date_index[&r.date] * l + loc_index[&r.location]) * k + kw_index[&r.keyword]] = Some(r.value);
    }

    let n = l * k;
    let mut values = Vec::with_capacity(grid.len());
    for (idx, cell) in grid.iter().enumerate() {
        let v = match cell {
            Some(v) => *v,
            None => {
                let step = idx / n;
                let neighbors = (interpolate && step > 0 && step + 1 < t)
                    .then(|| grid[idx - n].zip(grid[idx + n]))
                    .flatten();
                match neighbors {
                    Some((before, after)) => 0.5 * (before + after),
                    None => {
                        return Err(IngestError::Missing {
                            date: format_date(dates[step]),
                            location: locations[(idx % n) / k].clone(),
                            keyword: keywords[idx % k].clone(),
                            interpolate,
                        })
                    }
                }
            }
        };
        values.push(v);
    }
    let labels = dates.iter().map(|d| format_date(*d)).collect();
    Ok(ActivityTensor::new(values, labels, locations, keywords)?)
}

fn csv_line(e: &csv::Error) -> Option<u64> {
    e.position().map(|p| p.line())
}

/// Writes `T x L x K` values in long format, one row per cell, ordered by
/// time, location and keyword.
pub fn write_long_csv<W: Write>(
    out: W,
    time_labels: &[String],
    locations: &[String],
    keywords: &[String],
    values: &[f64],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    let n = locations.len() * keywords.len();
    for (t, date) in time_labels.iter().enumerate() {
        for (i, loc) in locations.iter().enumerate() {
            for (j, kw) in keywords.iter().enumerate() {
                let v = values[t * n + i * keywords.len() + j];
                w.write_record([date.as_str(), loc.as_str(), kw.as_str(), &v.to_string()])?;
            }
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = "date,location,keyword,value
2015-01-04,US,beer,1
2015-01-04,US,wine,2
2015-01-04,JP,beer,3
2015-01-04,JP,wine,4
2015-01-11,US,beer,5
2015-01-11,US,wine,6
2015-01-11,JP,beer,7
2015-01-11,JP,wine,8
2015-01-18,US,beer,9
2015-01-18,US,wine,10
2015-01-18,JP,beer,11
2015-01-18,JP,wine,12
";

    fn read(text: &str, interpolate: bool) -> Result<ActivityTensor, IngestError> {
        read_csv(text.as_bytes(), interpolate)
    }

    fn without(line_prefix: &str) -> String {
        GRID.lines().filter(|l| !l.starts_with(line_prefix)).map(|l| format!("{l}\n")).collect()
    }

    #[test]
    fn dense_grid_with_sorted_axes() {
        let x = read(GRID, false).unwrap();
        assert_eq!((x.len_t(), x.locations(), x.keywords()), (3, 2, 2));
        assert_eq!(x.location_labels(), &["JP".to_string(), "US".to_string()]);
        assert_eq!(x.keyword_labels(), &["beer".to_string(), "wine".to_string()]);
        assert_eq!(x.frame(0), &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(x.time_labels()[2], "2015-01-18");
    }

    #[test]
    fn missing_cell_is_named() {
        let err = read(&without("2015-01-11,JP,wine"), false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2015-01-11") && msg.contains("JP") && msg.contains("wine"), "{msg}");
    }

    #[test]
    fn interior_gap_is_interpolated() {
        let x = read(&without("2015-01-11,JP,wine"), true).unwrap();
        assert_eq!(x.get(1, 0, 1), 0.5 * (4.0 + 12.0));
    }

    #[test]
    fn edge_gap_cannot_be_interpolated() {
        assert!(matches!(read(&without("2015-01-18,US,beer"), true), Err(IngestError::Missing { .. })));
    }

    #[test]
    fn duplicates_are_rejected() {
        let text = format!("{GRID}2015-01-11,US,wine,6\n");
        match read(&text, false) {
            Err(IngestError::Duplicate { line, first, .. }) => assert_eq!((line, first), (14, 7)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uneven_cadence_is_rejected() {
        let text = GRID.replace("2015-01-18", "2015-01-19");
        assert!(matches!(read(&text, false), Err(IngestError::Cadence { found: 8, .. })));
    }

    #[test]
    fn bad_lines_are_cited() {
        let text = GRID.replace("2015-01-11,US,wine,6", "2015-01-11,US,wine,six");
        let err = read(&text, false).unwrap_err();
        assert!(err.to_string().starts_with("line 7:"), "{err}");
        let text = GRID.replace("2015-01-11,US,wine,6", "2015-13-11,US,wine,6");
        assert!(read(&text, false).unwrap_err().to_string().starts_with("line 7:"));
        let text = GRID.replace("2015-01-11,US,wine,6", "2015-01-11,US,wine");
        assert!(read(&text, false).unwrap_err().to_string().starts_with("line 7:"));
        let text = GRID.replace("2015-01-11,US,wine,6", "2015-01-11,US,wine,-1");
        assert!(read(&text, false).unwrap_err().to_string().starts_with("line 7:"));
        assert!(matches!(read("day,location,keyword,value\n", false), Err(IngestError::Header { .. })));
        assert!(matches!(read("date,location,keyword,value\n", false), Err(IngestError::Empty)));
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut lines: Vec<&str> = GRID.lines().skip(1).collect();
        lines.reverse();
        lines.swap(0, 5);
        let text = format!("date,location,keyword,value\n{}\n", lines.join("\n"));
        assert_eq!(read(&text, false).unwrap(), read(GRID, false).unwrap());
    }

    #[test]
    fn written_csv_reads_back() {
        let x = read(GRID, false).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&mut buf, x.time_labels(), x.location_labels(), x.keyword_labels(), x.values()).unwrap();
        assert_eq!(read_csv(buf.as_slice(), false).unwrap(), x);
    }
}
