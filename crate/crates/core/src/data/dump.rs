//! Canonical CSV dump: feature columns followed by the reserved columns `__y`,
//! `__ym` (empty when ideal labels are unknown) and `__a0`, `__a1`, ...
//! One-hot columns are recognised on reading by an `=` in their name.

use std::path::Path;

use super::dataset::{ColumnKind, TabularDataset};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub fn write_dump<W: std::io::Write>(data: &TabularDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k = data.n_sensitive();
    let mut header: Vec<String> = data.column_names().to_vec();
    header.push("__y".into());
    header.push("__ym".into());
    header.extend((0..k).map(|j| format!("__a{j}")));
    w.write_record(&header)?;
    let ideal = data.ideal_labels();
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.observed_labels()[i].to_string());
        rec.push(ideal.map(|v| v[i].to_string()).unwrap_or_default());
        rec.extend(data.sensitive_row(i).iter().map(|b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<dump>", e))?;
    Ok(())
}

pub fn save_dump(data: &TabularDataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dump(data, std::io::BufWriter::new(f))
}

fn parse_bit(v: &str, row: usize, what: &str) -> Result<u8> {
    match v {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Ingest {
            row,
            message: format!("{what} `{v}` is not a bit"),
        }),
    }
}

pub fn read_dump<R: std::io::Read>(reader: R) -> Result<TabularDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let y_at = header.iter().position(|h| h == "__y").ok_or_else(|| Error::Ingest {
        row: 0,
        message: "missing `__y` column".into(),
    })?;
    if header.get(y_at + 1).map(String::as_str) != Some("__ym") {
        return Err(Error::Ingest {
            row: 0,
            message: "`__ym` must follow `__y`".into(),
        });
    }
    let a_cols = &header[y_at + 2..];
    if a_cols.is_empty() || a_cols.iter().enumerate().any(|(j, h)| *h != format!("__a{j}")) {
        return Err(Error::Ingest {
            row: 0,
            message: "expected sensitive columns `__a0`, `__a1`, ...".into(),
        });
    }
    let names = header[..y_at].to_vec();
    let kinds = names
        .iter()
        .map(|n| if n.contains('=') { ColumnKind::OneHot } else { ColumnKind::Continuous })
        .collect();
    let (mut data, mut sens, mut y, mut ym) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut any_ideal = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingest {
            row,
            message: e.to_string(),
        })?;
        for j in 0..y_at {
            let v = rec[j].parse::<f64>().map_err(|_| Error::Ingest {
                row,
                message: format!("`{}` is not a number", &rec[j]),
            })?;
            data.push(v);
        }
        y.push(parse_bit(&rec[y_at], row, "label")?);
        let has_ideal = !rec[y_at + 1].is_empty();
        if *any_ideal.get_or_insert(has_ideal) != has_ideal {
            return Err(Error::Ingest {
                row,
                message: "`__ym` must be filled on every row or on none".into(),
            });
        }
        if has_ideal {
            ym.push(parse_bit(&rec[y_at + 1], row, "ideal label")?);
        }
        for j in 0..a_cols.len() {
            sens.push(parse_bit(&rec[y_at + 2 + j], row, "sensitive bit")?);
        }
    }
    if y.is_empty() {
        return Err(Error::Ingest {
            row: 0,
            message: "dump holds no rows".into(),
        });
    }
    let n = y.len();
    TabularDataset::new(
        Matrix::from_vec(n, names.len(), data)?,
        names,
        kinds,
        sens,
        (0..a_cols.len()).map(|j| format!("a{j}")).collect(),
        y,
        any_ideal.unwrap_or(false).then_some(ym),
    )
}

pub fn load_dump(path: &Path) -> Result<TabularDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dump(std::io::BufReader::new(f))
}
