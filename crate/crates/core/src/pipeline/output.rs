use std::io::{Read, Write};

use super::Forecast;
use crate::data::SalesTensor;
use crate::error::{AtlasError, Result};

/// One parsed row of a forecast file.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub store_id: String,
    pub product_id: String,
    pub week: usize,
    pub y_hat: f64,
    pub y_true: Option<f64>,
}

/// Writes `store_id,product_id,week,y_hat[,y_true]`; the `y_true` column is
/// present when any forecast has a truth and left empty where it is missing.
pub fn write_forecasts_csv<W: Write>(tensor: &SalesTensor, forecasts: &[Forecast], out: W) -> Result<()> {
    let with_truth = forecasts.iter().any(|f| f.y_true.is_some());
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| AtlasError::Schema(format!("write failure: {e}"));
    if with_truth {
        w.write_record(["store_id", "product_id", "week", "y_hat", "y_true"]).map_err(fail)?;
    } else {
        w.write_record(["store_id", "product_id", "week", "y_hat"]).map_err(fail)?;
    }
    for f in forecasts {
        let mut rec = vec![
            tensor.store_ids()[f.store].clone(),
            tensor.product_ids()[f.product].clone(),
            f.week.to_string(),
            format!("{:e}", f.y_hat),
        ];
        if with_truth {
            rec.push(f.y_true.map(|v| format!("{v:e}")).unwrap_or_default());
        }
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| AtlasError::Schema(format!("write failure: {e}")))?;
    Ok(())
}

pub fn parse_forecasts_csv<R: Read>(input: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| AtlasError::Schema(format!("unreadable header: {e}")))?
        .clone();
    let head: Vec<&str> = headers.iter().map(str::trim).collect();
    let with_truth = match head.as_slice() {
        ["store_id", "product_id", "week", "y_hat"] => false,
        ["store_id", "product_id", "week", "y_hat", "y_true"] => true,
        _ => {
            return Err(AtlasError::Schema(
                "forecast header must be store_id,product_id,week,y_hat[,y_true]".into(),
            ))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AtlasError::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let number = |i: usize, name: &str| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| AtlasError::parse(line, format!("bad {name} {:?}", &rec[i])))
        };
        let y_true = if with_truth && !rec[4].trim().is_empty() {
            Some(number(4, "y_true")?)
        } else {
            None
        };
        rows.push(ForecastRow {
            store_id: rec[0].trim().to_string(),
            product_id: rec[1].trim().to_string(),
            week: rec[2]
                .trim()
                .parse()
                .map_err(|_| AtlasError::parse(line, format!("bad week {:?}", &rec[2])))?,
            y_hat: number(3, "y_hat")?,
            y_true,
        });
    }
    Ok(rows)
}
