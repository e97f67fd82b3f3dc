use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::keyvalue::KeyValues;
use super::standardize::{StandardizeMode, Standardizer};
use super::tensor::{Cell, SalesTensor};
use crate::error::{AtlasError, Result};

/// Sidecar contents for a canonical tensor export.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMetadata {
    pub store_ids: Vec<String>,
    pub product_ids: Vec<String>,
    pub n_weeks: usize,
    pub n_cells: usize,
    pub week_origin: i64,
    pub standardizer: Standardizer,
}

impl TensorMetadata {
    pub fn of(tensor: &SalesTensor, standardizer: Standardizer) -> Self {
        Self {
            store_ids: tensor.store_ids().to_vec(),
            product_ids: tensor.product_ids().to_vec(),
            n_weeks: tensor.n_weeks(),
            n_cells: tensor.len(),
            week_origin: tensor.week_origin(),
            standardizer,
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("format", "atlas-tensor-v1");
        kv.push("n_stores", self.store_ids.len());
        kv.push("n_products", self.product_ids.len());
        kv.push("n_weeks", self.n_weeks);
        kv.push("n_cells", self.n_cells);
        kv.push("week_origin", self.week_origin);
        kv.push("standardize", self.standardizer.mode);
        kv.push("standardize_mean", format!("{:e}", self.standardizer.mean));
        kv.push("standardize_stddev", format!("{:e}", self.standardizer.stddev));
        for s in &self.store_ids {
            kv.push("store", s);
        }
        for p in &self.product_ids {
            kv.push("product", p);
        }
        kv
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        if kv.require("format")? != "atlas-tensor-v1" {
            return Err(AtlasError::Schema("unsupported tensor metadata format".into()));
        }
        let store_ids: Vec<String> = kv.get_all("store").map(String::from).collect();
        let product_ids: Vec<String> = kv.get_all("product").map(String::from).collect();
        if store_ids.len() != kv.require_value::<usize>("n_stores")? {
            return Err(AtlasError::Schema("store list does not match n_stores".into()));
        }
        if product_ids.len() != kv.require_value::<usize>("n_products")? {
            return Err(AtlasError::Schema("product list does not match n_products".into()));
        }
        let mode: StandardizeMode = kv.require("standardize")?.parse()?;
        let standardizer = Standardizer {
            mode,
            mean: kv.require_value("standardize_mean")?,
            stddev: kv.require_value("standardize_stddev")?,
        };
        if !(standardizer.stddev > 0.0) || !standardizer.mean.is_finite() {
            return Err(AtlasError::Schema("invalid standardizer parameters".into()));
        }
        Ok(Self {
            store_ids,
            product_ids,
            n_weeks: kv.require_value("n_weeks")?,
            n_cells: kv.require_value("n_cells")?,
            week_origin: kv.require_value("week_origin")?,
            standardizer,
        })
    }
}

/// Writes cells as `store_id,product_id,week_t,y` with six fractional digits.
pub fn write_tensor_csv<W: Write>(tensor: &SalesTensor, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| AtlasError::Schema(format!("write failure: {e}"));
    w.write_record(["store_id", "product_id", "week_t", "y"]).map_err(err)?;
    for c in tensor.cells() {
        w.write_record([
            tensor.store_ids()[c.store].as_str(),
            tensor.product_ids()[c.product].as_str(),
            &c.week.to_string(),
            &format!("{:.6}", c.value),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| AtlasError::Schema(format!("write failure: {e}")))?;
    Ok(())
}

/// Parses a canonical tensor CSV against its metadata.
pub fn parse_tensor_csv<R: Read>(input: R, meta: &TensorMetadata) -> Result<SalesTensor> {
    let stores = meta
        .store_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect::<std::collections::HashMap<_, _>>();
    let products = meta
        .product_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect::<std::collections::HashMap<_, _>>();
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| AtlasError::Schema(format!("unreadable header: {e}")))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["store_id", "product_id", "week_t", "y"] {
        return Err(AtlasError::Schema(
            "tensor header must be store_id,product_id,week_t,y".into(),
        ));
    }
    let mut cells = Vec::with_capacity(meta.n_cells);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AtlasError::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(AtlasError::parse(line, "expected 4 fields"));
        }
        let store = *stores
            .get(rec[0].trim())
            .ok_or_else(|| AtlasError::parse(line, format!("unknown store {:?}", &rec[0])))?;
        let product = *products
            .get(rec[1].trim())
            .ok_or_else(|| AtlasError::parse(line, format!("unknown product {:?}", &rec[1])))?;
        let week: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| AtlasError::parse(line, "bad week_t"))?;
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| AtlasError::parse(line, "bad y"))?;
        cells.push(Cell {
            store,
            product,
            week,
            value,
        });
    }
    if cells.len() != meta.n_cells {
        return Err(AtlasError::Schema(format!(
            "metadata declares {} cells, file has {}",
            meta.n_cells,
            cells.len()
        )));
    }
    SalesTensor::new(
        meta.store_ids.clone(),
        meta.product_ids.clone(),
        meta.n_weeks,
        meta.week_origin,
        cells,
    )
}

/// Writes `<stem>.csv` and `<stem>.meta` side by side.
pub fn write_tensor(tensor: &SalesTensor, standardizer: Standardizer, stem: &Path) -> Result<()> {
    let csv_path = stem.with_extension("csv");
    let meta_path = stem.with_extension("meta");
    let file = fs::File::create(&csv_path).map_err(|e| AtlasError::io(&csv_path, e))?;
    write_tensor_csv(tensor, std::io::BufWriter::new(file))?;
    let meta = TensorMetadata::of(tensor, standardizer).to_key_values().render();
    fs::write(&meta_path, meta).map_err(|e| AtlasError::io(&meta_path, e))?;
    Ok(())
}

pub fn read_tensor(stem: &Path) -> Result<(SalesTensor, Standardizer)> {
    let csv_path = stem.with_extension("csv");
    let meta_path = stem.with_extension("meta");
    let text = fs::read_to_string(&meta_path).map_err(|e| AtlasError::io(&meta_path, e))?;
    let meta = TensorMetadata::parse(&text)?;
    let file = fs::File::open(&csv_path).map_err(|e| AtlasError::io(&csv_path, e))?;
    let tensor = parse_tensor_csv(std::io::BufReader::new(file), &meta)?;
    Ok((tensor, meta.standardizer))
}
