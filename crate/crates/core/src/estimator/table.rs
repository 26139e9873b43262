use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{DoseResponseEstimate, Method};
use crate::error::{Error, Result};

pub const ESTIMATE_COLUMNS: [&str; 8] = [
    "a",
    "theta_hat",
    "se",
    "ci_lower",
    "ci_upper",
    "method",
    "bandwidth",
    "n_effective",
];

fn opt(v: Option<&Vec<f64>>, i: usize) -> String {
    v.map(|x| x[i].to_string()).unwrap_or_default()
}

/// One row per grid point. Columns without a value (the plug-in's `se`, CI
/// and bandwidth) are left empty.
pub fn write_estimate_csv<W: Write>(estimates: &[DoseResponseEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_COLUMNS)?;
    for est in estimates {
        let bw = est.bandwidth().map(|h| h.to_string()).unwrap_or_default();
        for i in 0..est.grid.len() {
            w.write_record([
                est.grid[i].to_string(),
                est.theta_hat[i].to_string(),
                opt(est.se.as_ref(), i),
                opt(est.ci_lower.as_ref(), i),
                opt(est.ci_upper.as_ref(), i),
                est.method.name().to_string(),
                bw.clone(),
                est.n_effective[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<estimate>".into(),
        source,
    })
}

pub fn save_estimate_csv(estimates: &[DoseResponseEstimate], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_estimate_csv(estimates, std::io::BufWriter::new(file))
}

/// Reads a curve file back, one estimate per method in order of first
/// appearance. The CI level is not stored and comes back as 0.95.
pub fn read_estimate_csv<R: Read>(reader: R) -> Result<Vec<DoseResponseEstimate>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(ESTIMATE_COLUMNS) {
        return Err(Error::Schema(format!(
            "expected columns {}, found {}",
            ESTIMATE_COLUMNS.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<DoseResponseEstimate> = Vec::new();
    let mut slot: HashMap<Method, usize> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let num = |j: usize| -> Result<Option<f64>> {
            let cell = &rec[j];
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                row,
                column: ESTIMATE_COLUMNS[j].to_string(),
                value: cell.to_string(),
            })
        };
        let need = |j: usize| -> Result<f64> {
            num(j)?.ok_or_else(|| Error::Parse {
                row,
                column: ESTIMATE_COLUMNS[j].to_string(),
                value: String::new(),
            })
        };
        let method: Method = rec[5].parse().map_err(Error::Schema)?;
        let n_eff: usize = rec[7].parse().map_err(|_| Error::Parse {
            row,
            column: "n_effective".into(),
            value: rec[7].to_string(),
        })?;
        let idx = *slot.entry(method).or_insert_with(|| {
            out.push(DoseResponseEstimate::new(method, Vec::new(), Vec::new()));
            out.len() - 1
        });
        let est = &mut out[idx];
        let first = est.grid.is_empty();
        est.grid.push(need(0)?);
        est.theta_hat.push(need(1)?);
        est.n_effective.push(n_eff);
        est.fallback.push(false);
        let (se, lo, hi) = (num(2)?, num(3)?, num(4)?);
        if first {
            if se.is_some() {
                est.se = Some(Vec::new());
                est.ci_lower = Some(Vec::new());
                est.ci_upper = Some(Vec::new());
            }
            if let Some(h) = num(6)? {
                est.bandwidths = vec![h];
            }
        }
        match (&mut est.se, se) {
            (Some(v), Some(s)) => {
                v.push(s);
                est.ci_lower.as_mut().unwrap().push(lo.unwrap_or(f64::NAN));
                est.ci_upper.as_mut().unwrap().push(hi.unwrap_or(f64::NAN));
            }
            (None, None) => {}
            _ => {
                return Err(Error::Schema(format!(
                    "row {row}: se present for some {method} rows but not others"
                )))
            }
        }
    }
    Ok(out)
}

pub fn load_estimate_csv(path: impl AsRef<Path>) -> Result<Vec<DoseResponseEstimate>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_estimate_csv(file)
}
