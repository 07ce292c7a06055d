//! Common imputer interface and the column-mean baseline.

use serde::{Deserialize, Serialize};

use crate::dataio::MaskedSample;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fills the masked slots of a batch of rows. Implementations must return
/// `observed[i]` unchanged wherever `mask[i]` is false.
pub trait Imputer<F: Real> {
    fn name(&self) -> &'static str;

    fn impute_batch(&self, rows: &[MaskedSample<F>]) -> Result<Vec<Vec<F>>>;

    fn impute(&self, row: &MaskedSample<F>) -> Result<Vec<F>> {
        Ok(self.impute_batch(std::slice::from_ref(row))?.remove(0))
    }
}

/// Per-column means of the non-missing entries. Columns with no entries get
/// the global mean of everything observed and are listed in `fallback`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeans<F> {
    pub means: Vec<F>,
    pub fallback: Vec<usize>,
}

impl<F: Real> ColumnMeans<F> {
    /// `value(row, col)` returns `None` for a missing entry.
    pub fn compute(n_rows: usize, n_cols: usize, value: impl Fn(usize, usize) -> Option<F>) -> Result<Self> {
        let mut sums = vec![F::zero(); n_cols];
        let mut counts = vec![0usize; n_cols];
        for r in 0..n_rows {
            for (c, (s, n)) in sums.iter_mut().zip(counts.iter_mut()).enumerate() {
                if let Some(v) = value(r, c) {
                    *s += v;
                    *n += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Imputation("no observed entries to compute means from".into()));
        }
        let global = sums.iter().copied().sum::<F>() / F::of_usize(total);
        let mut fallback = Vec::new();
        let means = sums
            .iter()
            .zip(&counts)
            .enumerate()
            .map(|(c, (s, n))| {
                if *n == 0 {
                    fallback.push(c);
                    global
                } else {
                    *s / F::of_usize(*n)
                }
            })
            .collect();
        Ok(ColumnMeans { means, fallback })
    }

    pub fn of_observed(rows: &[MaskedSample<F>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.len());
        Self::compute(rows.len(), n_cols, |r, c| (!rows[r].mask[c]).then(|| rows[r].observed[c]))
    }

    pub fn of_truth(rows: &[MaskedSample<F>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.len());
        Self::compute(rows.len(), n_cols, |r, c| Some(rows[r].truth[c]))
    }

    pub fn fill(&self, row: &MaskedSample<F>) -> Vec<F> {
        row.observed
            .iter()
            .zip(&row.mask)
            .zip(&self.means)
            .map(|((v, m), mean)| if *m { *mean } else { *v })
            .collect()
    }
}

/// Baseline: masked slots take the training column mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImputer<F> {
    pub columns: ColumnMeans<F>,
}

impl<F: Real> MeanImputer<F> {
    pub fn fit(train: &[MaskedSample<F>]) -> Result<Self> {
        Ok(MeanImputer {
            columns: ColumnMeans::of_observed(train)?,
        })
    }
}

impl<F: Real> Imputer<F> for MeanImputer<F> {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn impute_batch(&self, rows: &[MaskedSample<F>]) -> Result<Vec<Vec<F>>> {
        rows.iter()
            .map(|r| {
                check_width(r, self.columns.means.len())?;
                Ok(self.columns.fill(r))
            })
            .collect()
    }
}

pub(crate) fn check_width<F: Real>(row: &MaskedSample<F>, width: usize) -> Result<()> {
    if row.len() != width || row.mask.len() != width || row.observed.len() != width {
        return Err(Error::Argument(format!("row has {} entries, model expects {width}", row.len())));
    }
    Ok(())
}

/// Root-mean-square error over the masked slots.
pub fn masked_rmse<F: Real>(rows: &[MaskedSample<F>], imputed: &[Vec<F>]) -> f64 {
    let mut sse = 0.0;
    let mut n = 0usize;
    for (row, grid) in rows.iter().zip(imputed) {
        for i in 0..row.len() {
            if row.mask[i] {
                let d = (grid[i] - row.truth[i]).as_f64();
                sse += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (sse / n as f64).sqrt()
    }
}
