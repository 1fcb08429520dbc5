use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::Dataset;

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Load a comma-separated file.
///
/// A first row containing any non-numeric cell is a header. A first column
/// whose first data cell is non-numeric is a date/ID column and is kept as
/// timestamps. All other cells must parse as finite numbers; rows and columns
/// in errors are 1-based file coordinates.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(&name, &text)
}

pub(crate) fn parse_csv(name: &str, text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push((i + 1, rec));
    }
    let Some((_, first)) = records.first() else {
        return Err(Error::Parse {
            row: 1,
            col: 0,
            msg: "file is empty".into(),
        });
    };
    let width = first.len();
    let has_header = first.iter().any(|c| parse_cell(c).is_none());
    let header: Option<Vec<String>> = has_header.then(|| first.iter().map(str::to_owned).collect());
    let body = &records[usize::from(has_header)..];
    let Some((_, first_data)) = body.first() else {
        return Err(Error::Parse {
            row: records.len() + 1,
            col: 0,
            msg: "no data rows".into(),
        });
    };
    let has_date = parse_cell(&first_data[0]).is_none();
    let skip = usize::from(has_date);
    let channels = width - skip;
    if channels == 0 {
        return Err(Error::Parse {
            row: 1,
            col: 1,
            msg: "no numeric columns".into(),
        });
    }

    let mut values = Vec::with_capacity(body.len() * channels);
    let mut stamps = Vec::new();
    for (row, rec) in body {
        if rec.len() != width {
            return Err(Error::Parse {
                row: *row,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if has_date {
            stamps.push(rec[0].to_owned());
        }
        for (j, cell) in rec.iter().enumerate().skip(skip) {
            let v = parse_cell(cell).ok_or_else(|| Error::Parse {
                row: *row,
                col: j + 1,
                msg: format!("not a finite number: {cell:?}"),
            })?;
            values.push(v);
        }
    }
    let channel_names = match header {
        Some(h) => h[skip..].to_vec(),
        None => (0..channels).map(|c| format!("ch{c}")).collect(),
    };
    let mut ds = Dataset::new(
        name,
        Tensor::matrix(body.len(), channels, values)?,
        channel_names,
    )?;
    if has_date {
        ds.timestamps = Some(stamps);
    }
    Ok(ds)
}

/// Write a dataset with a header row (and the date column when present).
pub fn write_csv(ds: &Dataset, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = Vec::new();
    if ds.timestamps.is_some() {
        header.push("date".to_owned());
    }
    header.extend(ds.channel_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..ds.len() {
        let mut rec = Vec::with_capacity(header.len());
        if let Some(ts) = &ds.timestamps {
            rec.push(ts[r].clone());
        }
        rec.extend(ds.values.row(r).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_numeric_file() {
        let ds = parse_csv("t", "1,2\n3,4\n5,6\n").unwrap();
        assert_eq!((ds.len(), ds.channels()), (3, 2));
        assert!(ds.timestamps.is_none());
        assert_eq!(ds.channel_names, vec!["ch0", "ch1"]);
    }

    #[test]
    fn header_and_date_column() {
        let text = "date,HUFL,OT\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00,5.7,27.8\n";
        let ds = parse_csv("ETTh1", text).unwrap();
        assert_eq!((ds.len(), ds.channels()), (2, 2));
        assert_eq!(ds.channel_names, vec!["HUFL", "OT"]);
        assert_eq!(ds.timestamps.as_ref().unwrap()[1], "2016-07-01 01:00:00");
        assert_eq!(ds.values.get(1, 1), 27.8);
    }

    #[test]
    fn ragged_row_reports_location() {
        match parse_csv("t", "a,b\n1,2\n3\n") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_nan_cells_are_errors() {
        match parse_csv("t", "a,b\n1,2\n3,x\n") {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv("t", "a,b\n1,2\n3,NaN\n").is_err());
        assert!(parse_csv("t", "a,b\n1,2\n3,inf\n").is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let text = "date,a,b\nd0,1.5,-2e-3\nd1,0.1,7\n";
        let ds = parse_csv("x", text).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = parse_csv("x", std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
