//! Prediction-table files: one header line, comma separated, UTF-8.
//!
//! ```text
//! dataset,pid,true_d,true_p,pred_d,pred_p,prob_dep,prob_ptsd,phq8,pclc
//! ```
//!
//! Floats are written in shortest round-trip form, so export followed by
//! load is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{pcl_to_class, phq_to_class, Case, CohortError};
use crate::severity::SeverityPair;

pub const PREDICTION_HEADER: [&str; 10] = [
    "dataset", "pid", "true_d", "true_p", "pred_d", "pred_p", "prob_dep", "prob_ptsd", "phq8", "pclc",
];

pub fn load_predictions(path: &Path) -> Result<Vec<Case>, CohortError> {
    let file = File::open(path).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_predictions(file)
}

/// Parses a prediction table. Rows are numbered from 1 after the header.
pub fn parse_predictions<R: Read>(reader: R) -> Result<Vec<Case>, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(PREDICTION_HEADER.iter().copied()) {
        return Err(CohortError::Row {
            row: 0,
            field: "header".into(),
            message: format!("expected {}", PREDICTION_HEADER.join(",")),
        });
    }
    let mut cases = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CohortError::Row {
            row,
            field: "record".into(),
            message: e.to_string(),
        })?;
        cases.push(parse_row(row, &rec)?);
    }
    Ok(cases)
}

fn field(row: usize, rec: &csv::StringRecord, idx: usize) -> Result<&str, CohortError> {
    rec.get(idx).ok_or_else(|| CohortError::Row {
        row,
        field: PREDICTION_HEADER[idx].into(),
        message: "missing".into(),
    })
}

fn int(row: usize, rec: &csv::StringRecord, idx: usize) -> Result<i64, CohortError> {
    let raw = field(row, rec, idx)?;
    raw.parse::<i64>().map_err(|_| CohortError::Row {
        row,
        field: PREDICTION_HEADER[idx].into(),
        message: format!("not an integer: {raw:?}"),
    })
}

fn prob(row: usize, rec: &csv::StringRecord, idx: usize) -> Result<f64, CohortError> {
    let raw = field(row, rec, idx)?;
    let v = raw.parse::<f64>().map_err(|_| CohortError::Row {
        row,
        field: PREDICTION_HEADER[idx].into(),
        message: format!("not a number: {raw:?}"),
    })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(CohortError::Row {
            row,
            field: PREDICTION_HEADER[idx].into(),
            message: format!("{v} outside [0, 1]"),
        });
    }
    Ok(v)
}

fn pair(row: usize, rec: &csv::StringRecord, d_idx: usize) -> Result<SeverityPair, CohortError> {
    let d = int(row, rec, d_idx)?;
    let p = int(row, rec, d_idx + 1)?;
    let out_of_range = |idx: usize, v: i64, hi: i64| CohortError::Row {
        row,
        field: PREDICTION_HEADER[idx].into(),
        message: format!("{v} outside 0..={hi}"),
    };
    if !(0..=4).contains(&d) {
        return Err(out_of_range(d_idx, d, 4));
    }
    if !(0..=2).contains(&p) {
        return Err(out_of_range(d_idx + 1, p, 2));
    }
    Ok(SeverityPair::new(d as u8, p as u8).expect("range checked"))
}

fn parse_row(row: usize, rec: &csv::StringRecord) -> Result<Case, CohortError> {
    let dataset = field(row, rec, 0)?.to_string();
    let pid = field(row, rec, 1)?.to_string();
    if pid.is_empty() {
        return Err(CohortError::Row {
            row,
            field: "pid".into(),
            message: "empty".into(),
        });
    }
    let truth = pair(row, rec, 2)?;
    let pred = pair(row, rec, 4)?;
    let prob_dep = prob(row, rec, 6)?;
    let prob_ptsd = prob(row, rec, 7)?;
    let phq8 = int(row, rec, 8)?;
    let pclc = int(row, rec, 9)?;
    let band_err = |idx: usize, e: CohortError| CohortError::Row {
        row,
        field: PREDICTION_HEADER[idx].into(),
        message: e.to_string(),
    };
    let phq_class = phq_to_class(phq8).map_err(|e| band_err(8, e))?;
    let pcl_class = pcl_to_class(pclc).map_err(|e| band_err(9, e))?;
    if phq_class != truth.depression() {
        return Err(CohortError::Row {
            row,
            field: "phq8".into(),
            message: format!("total {phq8} is class {phq_class}, truth is {}", truth.depression()),
        });
    }
    if pcl_class != truth.ptsd() {
        return Err(CohortError::Row {
            row,
            field: "pclc".into(),
            message: format!("total {pclc} is class {pcl_class}, truth is {}", truth.ptsd()),
        });
    }
    Ok(Case {
        dataset,
        pid,
        truth,
        pred,
        prob_dep,
        prob_ptsd,
        phq8: phq8 as u8,
        pclc: pclc as u8,
    })
}

pub fn write_predictions<W: Write>(writer: W, cases: &[Case]) -> Result<(), CohortError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTION_HEADER)?;
    for c in cases {
        w.write_record([
            c.dataset.clone(),
            c.pid.clone(),
            c.truth.depression().to_string(),
            c.truth.ptsd().to_string(),
            c.pred.depression().to_string(),
            c.pred.ptsd().to_string(),
            c.prob_dep.to_string(),
            c.prob_ptsd.to_string(),
            c.phq8.to_string(),
            c.pclc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CohortError::Csv(e.into()))?;
    Ok(())
}
