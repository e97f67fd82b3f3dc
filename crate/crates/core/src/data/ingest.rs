use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{AtlasError, Result};

/// One raw sales record: a store selling a product during a calendar week.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub store_id: String,
    /// 1-based calendar-week ordinal.
    pub week: i64,
    /// The four UPC parts joined by `-`.
    pub product_id: String,
    pub units: f64,
    pub dollars: f64,
}

/// Header names for each input column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub store: String,
    pub week: String,
    pub syscode: String,
    pub generation: String,
    pub vendor: String,
    pub item: String,
    pub units: String,
    pub dollars: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            store: "store".into(),
            week: "week".into(),
            syscode: "syscode".into(),
            generation: "gen".into(),
            vendor: "vendor".into(),
            item: "item".into(),
            units: "units".into(),
            dollars: "dollars".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub transactions: Vec<Transaction>,
    pub rejected: Vec<RejectedRow>,
}

pub fn ingest_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<IngestReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AtlasError::io(path, e))?;
    ingest_reader(file, columns)
}

struct Positions {
    store: usize,
    week: usize,
    upc: [usize; 4],
    units: usize,
    dollars: usize,
}

fn resolve(headers: &csv::StringRecord, columns: &ColumnMap) -> Result<Positions> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| AtlasError::Schema(format!("column `{name}` not found in header")))
    };
    Ok(Positions {
        store: find(&columns.store)?,
        week: find(&columns.week)?,
        upc: [
            find(&columns.syscode)?,
            find(&columns.generation)?,
            find(&columns.vendor)?,
            find(&columns.item)?,
        ],
        units: find(&columns.units)?,
        dollars: find(&columns.dollars)?,
    })
}

fn parse_row(record: &csv::StringRecord, pos: &Positions) -> std::result::Result<Transaction, String> {
    let field = |i: usize| record.get(i).map(str::trim).ok_or_else(|| format!("missing field {}", i + 1));
    let store_id = field(pos.store)?;
    if store_id.is_empty() {
        return Err("empty store id".into());
    }
    let week: i64 = field(pos.week)?
        .parse()
        .map_err(|_| format!("non-integer week {:?}", record.get(pos.week).unwrap_or("")))?;
    if week < 1 {
        return Err(format!("week {week} is not positive"));
    }
    let mut parts = Vec::with_capacity(4);
    for &p in &pos.upc {
        parts.push(field(p)?);
    }
    let units: f64 = field(pos.units)?
        .parse()
        .map_err(|_| "non-numeric units".to_string())?;
    let dollars: f64 = field(pos.dollars)?
        .parse()
        .map_err(|_| "non-numeric dollars".to_string())?;
    if !units.is_finite() || units < 0.0 {
        return Err(format!("invalid units {units}"));
    }
    if !dollars.is_finite() || dollars < 0.0 {
        return Err(format!("invalid dollars {dollars}"));
    }
    Ok(Transaction {
        store_id: store_id.to_string(),
        week,
        product_id: parts.join("-"),
        units,
        dollars,
    })
}

/// Reads transactions from any CSV source. Rows that fail to parse are
/// reported with their line number instead of aborting the ingest.
pub fn ingest_reader<R: Read>(reader: R, columns: &ColumnMap) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| AtlasError::Schema(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(AtlasError::Schema("missing header row".into()));
    }
    let pos = resolve(&headers, columns)?;

    let mut report = IngestReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() as usize;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line() as usize);
                match parse_row(&record, &pos) {
                    Ok(t) => report.transactions.push(t),
                    Err(reason) => report.rejected.push(RejectedRow { line, reason }),
                }
            }
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(AtlasError::Schema(format!("read failure: {e}")));
                }
                report.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "store,week,syscode,gen,vendor,item,units,dollars\n";

    fn ingest(text: &str) -> IngestReport {
        ingest_reader(text.as_bytes(), &ColumnMap::default()).unwrap()
    }

    #[test]
    fn figure_row_is_parsed() {
        let r = ingest(&format!("{HEADER}234212,1479,0,1,41778,08268,1,9.99\n"));
        assert!(r.rejected.is_empty());
        assert_eq!(
            r.transactions,
            vec![Transaction {
                store_id: "234212".into(),
                week: 1479,
                product_id: "0-1-41778-08268".into(),
                units: 1.0,
                dollars: 9.99,
            }]
        );
    }

    #[test]
    fn header_only_file_is_empty() {
        let r = ingest(HEADER);
        assert!(r.transactions.is_empty());
        assert!(r.rejected.is_empty());
    }

    #[test]
    fn duplicates_are_kept_until_tensor_build() {
        let r = ingest(&format!(
            "{HEADER}1,5,0,1,2,3,1,2.00\n1,5,0,1,2,3,1,3.00\n"
        ));
        assert_eq!(r.transactions.len(), 2);
        let total: f64 = r.transactions.iter().map(|t| t.dollars).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn bad_dollars_rejected_with_line_number() {
        let r = ingest(&format!(
            "{HEADER}1,5,0,1,2,3,1,2.00\n1,5,0,1,2,3,1,abc\n1,6,0,1,2,3,1,1.5\n"
        ));
        assert_eq!(r.transactions.len(), 2);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].line, 3);
        assert!(r.rejected[0].reason.contains("dollars"));
    }

    #[test]
    fn negative_and_zero_week_rejected() {
        let r = ingest(&format!("{HEADER}1,0,0,1,2,3,1,2.00\n1,4,0,1,2,3,1,-2\n"));
        assert_eq!(r.rejected.len(), 2);
    }

    #[test]
    fn unknown_column_is_schema_error() {
        let map = ColumnMap {
            dollars: "revenue".into(),
            ..ColumnMap::default()
        };
        let err = ingest_reader(HEADER.as_bytes(), &map).unwrap_err();
        assert!(matches!(err, AtlasError::Schema(_)));
    }

    #[test]
    fn remapped_columns() {
        let map = ColumnMap {
            store: "IRI_KEY".into(),
            week: "WEEK".into(),
            dollars: "DOLLARS".into(),
            units: "UNITS".into(),
            syscode: "SY".into(),
            generation: "GE".into(),
            vendor: "VEND".into(),
            item: "ITEM".into(),
        };
        let text = "IRI_KEY,WEEK,SY,GE,VEND,ITEM,UNITS,DOLLARS,PR\n7,2,0,1,3,4,2,5.5,0\n";
        let r = ingest_reader(text.as_bytes(), &map).unwrap();
        assert_eq!(r.transactions[0].product_id, "0-1-3-4");
        assert_eq!(r.transactions[0].dollars, 5.5);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest_csv("/nonexistent/sales.csv", &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, AtlasError::Io { .. }));
    }

    #[test]
    fn empty_input_has_no_header() {
        let err = ingest_reader("".as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, AtlasError::Schema(_)));
    }
}
