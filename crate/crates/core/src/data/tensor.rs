use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use super::ingest::Transaction;
use crate::error::{AtlasError, Result};

/// Store screening threshold used for the IRI data: stores with fewer
/// transactions are dropped.
pub const DEFAULT_MIN_STORE_TXNS: usize = 1000;
/// Product screening threshold used for the IRI data.
pub const DEFAULT_MIN_PRODUCT_TXNS: usize = 200;

/// One observed tensor entry with dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub store: usize,
    pub product: usize,
    pub week: usize,
    pub value: f64,
}

/// Sparse store × product × week tensor. Unobserved cells are simply absent.
///
/// The id maps are reference-counted so that splits and re-valued copies
/// share them.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesTensor {
    store_ids: Arc<[String]>,
    product_ids: Arc<[String]>,
    n_weeks: usize,
    week_origin: i64,
    cells: Vec<Cell>,
}

impl SalesTensor {
    pub fn new(
        store_ids: Vec<String>,
        product_ids: Vec<String>,
        n_weeks: usize,
        week_origin: i64,
        cells: Vec<Cell>,
    ) -> Result<Self> {
        let t = Self {
            store_ids: store_ids.into(),
            product_ids: product_ids.into(),
            n_weeks,
            week_origin,
            cells,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.cells.len());
        for c in &self.cells {
            if c.store >= self.n_stores() || c.product >= self.n_products() || c.week >= self.n_weeks {
                return Err(AtlasError::Argument(format!(
                    "cell ({}, {}, {}) outside {}x{}x{}",
                    c.store,
                    c.product,
                    c.week,
                    self.n_stores(),
                    self.n_products(),
                    self.n_weeks
                )));
            }
            if !c.value.is_finite() {
                return Err(AtlasError::Argument(format!(
                    "non-finite value at ({}, {}, {})",
                    c.store, c.product, c.week
                )));
            }
            if !seen.insert((c.store, c.product, c.week)) {
                return Err(AtlasError::Argument(format!(
                    "duplicate cell ({}, {}, {})",
                    c.store, c.product, c.week
                )));
            }
        }
        Ok(())
    }

    /// Same index maps and shape, different cells.
    pub fn with_cells(&self, cells: Vec<Cell>) -> Result<Self> {
        let t = Self {
            cells,
            ..self.clone_shape()
        };
        t.validate()?;
        Ok(t)
    }

    fn clone_shape(&self) -> Self {
        Self {
            store_ids: Arc::clone(&self.store_ids),
            product_ids: Arc::clone(&self.product_ids),
            n_weeks: self.n_weeks,
            week_origin: self.week_origin,
            cells: Vec::new(),
        }
    }

    /// Applies `f` to every cell value, keeping the pattern of observations.
    pub fn map_values(&self, mut f: impl FnMut(&Cell) -> f64) -> Self {
        let cells = self
            .cells
            .iter()
            .map(|c| Cell { value: f(c), ..*c })
            .collect();
        Self {
            cells,
            ..self.clone_shape()
        }
    }

    /// Keeps only weeks `0..n_weeks`, shrinking the time mode.
    pub fn truncate_weeks(&self, n_weeks: usize) -> Self {
        let cells = self.cells.iter().filter(|c| c.week < n_weeks).copied().collect();
        Self {
            n_weeks,
            cells,
            ..self.clone_shape()
        }
    }

    pub fn n_stores(&self) -> usize {
        self.store_ids.len()
    }

    pub fn n_products(&self) -> usize {
        self.product_ids.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.n_weeks
    }

    pub fn week_origin(&self) -> i64 {
        self.week_origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn store_ids(&self) -> &[String] {
        &self.store_ids
    }

    pub fn product_ids(&self) -> &[String] {
        &self.product_ids
    }

    pub fn density(&self) -> f64 {
        let total = self.n_stores() * self.n_products() * self.n_weeks;
        if total == 0 {
            0.0
        } else {
            self.cells.len() as f64 / total as f64
        }
    }

    pub fn store_lookup(&self) -> HashMap<&str, usize> {
        self.store_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn product_lookup(&self) -> HashMap<&str, usize> {
        self.product_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Calendar week of a dense week index.
    pub fn calendar_week(&self, t: usize) -> i64 {
        self.week_origin + t as i64
    }

    pub fn shares_indices_with(&self, other: &SalesTensor) -> bool {
        self.store_ids == other.store_ids && self.product_ids == other.product_ids
    }

    /// Back to one transaction per cell (units unknown, reported as 0).
    pub fn to_transactions(&self) -> Vec<Transaction> {
        self.cells
            .iter()
            .map(|c| Transaction {
                store_id: self.store_ids[c.store].clone(),
                week: self.calendar_week(c.week),
                product_id: self.product_ids[c.product].clone(),
                units: 0.0,
                dollars: c.value,
            })
            .collect()
    }
}

/// Screens sparse stores and products, re-indexes densely, and sums duplicate
/// (store, product, week) rows into one cell of weekly dollar sales.
///
/// Screening repeats until no further store or product drops below its
/// threshold, since removing stores can starve products and vice versa.
pub fn build_tensor(
    txns: &[Transaction],
    min_store_txns: usize,
    min_product_txns: usize,
) -> Result<SalesTensor> {
    let mut alive: Vec<&Transaction> = txns.iter().collect();
    loop {
        let mut store_counts: HashMap<&str, usize> = HashMap::new();
        let mut product_counts: HashMap<&str, usize> = HashMap::new();
        for t in &alive {
            *store_counts.entry(&t.store_id).or_default() += 1;
            *product_counts.entry(&t.product_id).or_default() += 1;
        }
        let before = alive.len();
        alive.retain(|t| {
            store_counts[t.store_id.as_str()] >= min_store_txns
                && product_counts[t.product_id.as_str()] >= min_product_txns
        });
        if alive.len() == before {
            break;
        }
    }
    if alive.is_empty() {
        return Err(AtlasError::EmptyTensor(format!(
            "no transactions survive screening (min store {min_store_txns}, min product {min_product_txns})"
        )));
    }

    let stores: BTreeSet<&str> = alive.iter().map(|t| t.store_id.as_str()).collect();
    let products: BTreeSet<&str> = alive.iter().map(|t| t.product_id.as_str()).collect();
    let store_ix: HashMap<&str, usize> = stores.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let product_ix: HashMap<&str, usize> =
        products.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let week_min = alive.iter().map(|t| t.week).min().unwrap_or(0);
    let week_max = alive.iter().map(|t| t.week).max().unwrap_or(0);

    let mut sums: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for t in &alive {
        let key = (
            store_ix[t.store_id.as_str()],
            product_ix[t.product_id.as_str()],
            (t.week - week_min) as usize,
        );
        *sums.entry(key).or_default() += t.dollars;
    }
    let mut cells: Vec<Cell> = sums
        .into_iter()
        .map(|((store, product, week), value)| Cell {
            store,
            product,
            week,
            value,
        })
        .collect();
    cells.sort_by_key(|c| (c.week, c.store, c.product));

    SalesTensor::new(
        stores.into_iter().map(String::from).collect(),
        products.into_iter().map(String::from).collect(),
        (week_max - week_min + 1) as usize,
        week_min,
        cells,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn txn(store: &str, product: &str, week: i64, dollars: f64) -> Transaction {
        Transaction {
            store_id: store.into(),
            week,
            product_id: product.into(),
            units: 1.0,
            dollars,
        }
    }

    #[test]
    fn no_filtering_three_cells() {
        let txns = vec![txn("a", "x", 3, 1.0), txn("b", "x", 4, 2.0), txn("a", "y", 5, 3.0)];
        let t = build_tensor(&txns, 0, 0).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!((t.n_stores(), t.n_products(), t.n_weeks()), (2, 2, 3));
        assert_eq!(t.density(), 3.0 / 12.0);
        assert_eq!(t.week_origin(), 3);
    }

    #[test]
    fn duplicates_summed() {
        let txns = vec![txn("a", "x", 1, 2.0), txn("a", "x", 1, 3.0)];
        let t = build_tensor(&txns, 0, 0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.cells()[0].value, 5.0);
    }

    #[test]
    fn sparse_store_removed_gap_free() {
        // Brute force: store "b" has one transaction, everything else >= 2.
        let txns = vec![
            txn("a", "x", 1, 1.0),
            txn("a", "y", 2, 1.0),
            txn("b", "x", 1, 1.0),
            txn("c", "x", 2, 1.0),
            txn("c", "y", 3, 1.0),
        ];
        let t = build_tensor(&txns, 2, 0).unwrap();
        assert_eq!(t.store_ids(), ["a".to_string(), "c".to_string()]);
        assert_eq!(t.len(), 4);
        let used: BTreeSet<usize> = t.cells().iter().map(|c| c.store).collect();
        assert_eq!(used.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn screening_cascades() {
        // Dropping store "b" leaves product "z" with one transaction.
        let txns = vec![
            txn("a", "x", 1, 1.0),
            txn("a", "x", 2, 1.0),
            txn("b", "z", 1, 1.0),
            txn("c", "z", 1, 1.0),
            txn("c", "x", 1, 1.0),
        ];
        let t = build_tensor(&txns, 2, 2).unwrap();
        assert_eq!(t.product_ids(), ["x".to_string()]);
        assert_eq!(t.store_ids(), ["a".to_string()]);
    }

    #[test]
    fn everything_filtered_is_empty_error() {
        let txns = vec![txn("a", "x", 1, 1.0)];
        assert!(matches!(build_tensor(&txns, 5, 0), Err(AtlasError::EmptyTensor(_))));
        assert!(matches!(build_tensor(&[], 0, 0), Err(AtlasError::EmptyTensor(_))));
    }

    #[test]
    fn week_gaps_are_kept() {
        let txns = vec![txn("a", "x", 10, 1.0), txn("a", "x", 13, 1.0)];
        let t = build_tensor(&txns, 0, 0).unwrap();
        assert_eq!(t.n_weeks(), 4);
        let weeks: Vec<usize> = t.cells().iter().map(|c| c.week).collect();
        assert_eq!(weeks, vec![0, 3]);
    }

    #[test]
    fn rejects_duplicate_and_out_of_range_cells() {
        let c = Cell { store: 0, product: 0, week: 0, value: 1.0 };
        assert!(SalesTensor::new(vec!["s".into()], vec!["p".into()], 1, 1, vec![c, c]).is_err());
        let bad = Cell { week: 1, ..c };
        assert!(SalesTensor::new(vec!["s".into()], vec!["p".into()], 1, 1, vec![bad]).is_err());
    }
}
