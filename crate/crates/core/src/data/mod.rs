//! Transaction ingestion, the sparse sales tensor, chronological splits and
//! value standardization.

mod export;
mod ingest;
mod keyvalue;
mod split;
mod standardize;
mod tensor;

pub use export::{
    parse_tensor_csv, read_tensor, write_tensor, write_tensor_csv, TensorMetadata,
};
pub use ingest::{ingest_csv, ingest_reader, ColumnMap, IngestReport, RejectedRow, Transaction};
pub use keyvalue::KeyValues;
pub use split::{chronological_split, SplitSpec, Splits};
pub use standardize::{StandardizeMode, Standardizer};
pub use tensor::{build_tensor, Cell, SalesTensor, DEFAULT_MIN_PRODUCT_TXNS, DEFAULT_MIN_STORE_TXNS};
