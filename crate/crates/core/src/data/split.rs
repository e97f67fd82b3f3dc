use super::tensor::SalesTensor;
use crate::error::{AtlasError, Result};

/// Week boundaries of a chronological train / validation / test split.
/// Train is `0..train_end`, validation `train_end..valid_end`, test
/// `valid_end..test_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub valid_end: usize,
    pub test_end: usize,
}

impl SplitSpec {
    pub fn new(train_end: usize, valid_end: usize, test_end: usize) -> Self {
        Self {
            train_end,
            valid_end,
            test_end,
        }
    }

    /// The whole series is training data.
    pub fn all_train(n_weeks: usize) -> Self {
        Self::new(n_weeks, n_weeks, n_weeks)
    }

    pub fn validate(&self, n_weeks: usize) -> Result<()> {
        // (T, T, T) is accepted as the degenerate all-train split.
        let degenerate = self.train_end == n_weeks
            && self.valid_end == n_weeks
            && self.test_end == n_weeks
            && n_weeks > 0;
        let ordered = 0 < self.train_end
            && self.train_end < self.valid_end
            && self.valid_end <= self.test_end
            && self.test_end <= n_weeks;
        if degenerate || ordered {
            Ok(())
        } else {
            Err(AtlasError::Argument(format!(
                "split ({}, {}, {}) invalid for {} weeks; need 0 < train_end < valid_end <= test_end <= T",
                self.train_end, self.valid_end, self.test_end, n_weeks
            )))
        }
    }

    pub fn valid_len(&self) -> usize {
        self.valid_end - self.train_end
    }

    pub fn test_len(&self) -> usize {
        self.test_end - self.valid_end
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: SalesTensor,
    pub valid: SalesTensor,
    pub test: SalesTensor,
}

/// Partitions cells by week. All three outputs keep the input's index maps
/// and full time extent; cells at or past `test_end` are dropped.
pub fn chronological_split(tensor: &SalesTensor, spec: SplitSpec) -> Result<Splits> {
    spec.validate(tensor.n_weeks())?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in tensor.cells() {
        if c.week < spec.train_end {
            train.push(*c);
        } else if c.week < spec.valid_end {
            valid.push(*c);
        } else if c.week < spec.test_end {
            test.push(*c);
        }
    }
    Ok(Splits {
        train: tensor.with_cells(train)?,
        valid: tensor.with_cells(valid)?,
        test: tensor.with_cells(test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor_with_weeks(weeks: &[usize], n_weeks: usize) -> SalesTensor {
        let cells = weeks
            .iter()
            .enumerate()
            .map(|(i, &w)| Cell {
                store: i,
                product: 0,
                week: w,
                value: i as f64,
            })
            .collect();
        let stores = (0..weeks.len()).map(|i| format!("s{i}")).collect();
        SalesTensor::new(stores, vec!["p".into()], n_weeks, 1, cells).unwrap()
    }

    #[test]
    fn paper_protocol_boundaries() {
        let weeks: Vec<usize> = (0..208).collect();
        let t = tensor_with_weeks(&weeks, 208);
        let s = chronological_split(&t, SplitSpec::new(192, 200, 208)).unwrap();
        let range = |x: &SalesTensor| {
            let w: Vec<usize> = x.cells().iter().map(|c| c.week).collect();
            (*w.iter().min().unwrap(), *w.iter().max().unwrap(), w.len())
        };
        assert_eq!(range(&s.train), (0, 191, 192));
        assert_eq!(range(&s.valid), (192, 199, 8));
        assert_eq!(range(&s.test), (200, 207, 8));
    }

    #[test]
    fn degenerate_split_everything_in_train() {
        let t = tensor_with_weeks(&[0, 1, 2], 3);
        let s = chronological_split(&t, SplitSpec::all_train(3)).unwrap();
        assert_eq!(s.train.len(), 3);
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn random_cells_match_brute_force_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weeks: Vec<usize> = (0..10).map(|_| rng.random_range(0..10)).collect();
        let t = tensor_with_weeks(&weeks, 10);
        let s = chronological_split(&t, SplitSpec::new(5, 7, 10)).unwrap();
        let count = |lo: usize, hi: usize| weeks.iter().filter(|&&w| w >= lo && w < hi).count();
        assert_eq!(s.train.len(), count(0, 5));
        assert_eq!(s.valid.len(), count(5, 7));
        assert_eq!(s.test.len(), count(7, 10));
        assert!(s.train.shares_indices_with(&s.test));
    }

    #[test]
    fn invalid_specs_rejected() {
        let t = tensor_with_weeks(&[0], 10);
        for spec in [
            SplitSpec::new(0, 5, 10),
            SplitSpec::new(5, 5, 10),
            SplitSpec::new(5, 8, 7),
            SplitSpec::new(5, 8, 11),
        ] {
            assert!(matches!(chronological_split(&t, spec), Err(AtlasError::Argument(_))));
        }
    }
}
