//! MissForest: iterative imputation with per-column random forests.
//!
//! 1. Fill every missing entry with its column mean.
//! 2. Visit the columns with missing entries in order of increasing
//!    missingness. For each one, fit a forest on the rows where it is observed
//!    (targets) using every other column's current values as features, then
//!    overwrite its missing entries with the forest's predictions.
//! 3. After each full pass compute
//!    `delta = sum((new - old)^2) / sum(new^2)` over the imputed positions.
//! 4. Stop when `delta` increases (returning the previous pass) or after
//!    `max_iter` passes.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataio::MaskedSample;
use crate::error::{Error, Result};
use crate::forest::{Columns, Forest, ForestParams};
use crate::impute::{check_width, ColumnMeans, Imputer};
use crate::scalar::Real;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfParams {
    pub forest: ForestParams,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for MfParams {
    fn default() -> Self {
        MfParams {
            forest: ForestParams::default(),
            max_iter: 10,
            seed: 0,
        }
    }
}

/// Working matrix of an imputation run, stored column-major.
#[derive(Debug, Clone)]
pub struct ImputationState<F> {
    pub cols: Vec<Vec<F>>,
    /// `missing[c][r]` is true where the input had no value.
    pub missing: Vec<Vec<bool>>,
    pub iter: usize,
    pub diff_history: Vec<f64>,
}

impl<F: Real> ImputationState<F> {
    fn to_matrix(&self) -> Array2<F> {
        columns_to_matrix(&self.cols)
    }
}

fn columns_to_matrix<F: Real>(cols: &[Vec<F>]) -> Array2<F> {
    let n_rows = cols.first().map_or(0, |c| c.len());
    Array2::from_shape_fn((n_rows, cols.len()), |(r, c)| cols[c][r])
}

#[derive(Debug, Clone)]
pub struct MfResult<F> {
    pub matrix: Array2<F>,
    /// Normalised change after every completed pass, including a final
    /// increasing one that triggered the stop.
    pub diff_history: Vec<f64>,
    /// Pass whose imputation was returned (0 = mean initialisation).
    pub returned_iteration: usize,
    /// True if the stop came from an increase in the change measure.
    pub stopped_on_increase: bool,
    /// Columns that were missing everywhere and hold the global mean.
    pub fallback_columns: Vec<usize>,
    /// Matrix after initialisation and after each pass, when requested.
    pub snapshots: Vec<Array2<F>>,
}

/// Mean initialisation. Missing entries are `NaN`. Fully missing columns take
/// the global mean of all observed entries and are reported.
pub fn mean_mode_init<F: Real>(matrix: ArrayView2<'_, F>) -> Result<(Array2<F>, Vec<usize>)> {
    let (n_rows, n_cols) = matrix.dim();
    let means = ColumnMeans::compute(n_rows, n_cols, |r, c| {
        let v = matrix[[r, c]];
        (!v.is_nan()).then_some(v)
    })
    .map_err(|_| Error::Imputation("matrix has no observed entries".into()))?;
    let out = Array2::from_shape_fn((n_rows, n_cols), |(r, c)| {
        let v = matrix[[r, c]];
        if v.is_nan() {
            means.means[c]
        } else {
            v
        }
    });
    Ok((out, means.fallback))
}

/// Normalised change between passes over the imputed positions.
pub fn normalized_change<F: Real>(old: &[Vec<F>], new: &[Vec<F>], missing: &[Vec<bool>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..new.len() {
        for r in 0..new[c].len() {
            if missing[c][r] {
                let (a, b) = (old[c][r].as_f64(), new[c][r].as_f64());
                num += (b - a) * (b - a);
                den += b * b;
            }
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn mf_impute<F: Real>(matrix: ArrayView2<'_, F>, params: &MfParams) -> Result<MfResult<F>> {
    run(matrix, params, false)
}

/// Same as [`mf_impute`] but keeps a snapshot of every pass.
pub fn mf_impute_traced<F: Real>(matrix: ArrayView2<'_, F>, params: &MfParams) -> Result<MfResult<F>> {
    run(matrix, params, true)
}

fn run<F: Real>(matrix: ArrayView2<'_, F>, params: &MfParams, trace: bool) -> Result<MfResult<F>> {
    let (n_rows, n_cols) = matrix.dim();
    let missing: Vec<Vec<bool>> = (0..n_cols)
        .map(|c| (0..n_rows).map(|r| matrix[[r, c]].is_nan()).collect())
        .collect();
    let counts: Vec<usize> = missing.iter().map(|m| m.iter().filter(|x| **x).count()).collect();
    if counts.iter().all(|&n| n == 0) {
        return Ok(MfResult {
            matrix: matrix.to_owned(),
            diff_history: Vec::new(),
            returned_iteration: 0,
            stopped_on_increase: false,
            fallback_columns: Vec::new(),
            snapshots: if trace { vec![matrix.to_owned()] } else { Vec::new() },
        });
    }
    let (init, fallback_columns) = mean_mode_init(matrix)?;
    let mut state = ImputationState {
        cols: init.columns().into_iter().map(|c| c.to_vec()).collect(),
        missing,
        iter: 0,
        diff_history: Vec::new(),
    };
    let mut snapshots = if trace { vec![init] } else { Vec::new() };

    let mut order: Vec<usize> = (0..n_cols).filter(|&c| counts[c] > 0).collect();
    order.sort_by_key(|&c| counts[c]);

    let mut previous = state.cols.clone();
    let mut stopped_on_increase = false;
    while state.iter < params.max_iter {
        previous.clone_from(&state.cols);
        for &j in &order {
            if n_cols < 2 {
                break;
            }
            let observed: Vec<usize> = (0..n_rows).filter(|&r| !state.missing[j][r]).collect();
            if observed.is_empty() {
                continue;
            }
            let targets: Vec<usize> = (0..n_rows).filter(|&r| state.missing[j][r]).collect();
            let predictions = {
                let features: Vec<&[F]> = (0..n_cols).filter(|&c| c != j).map(|c| state.cols[c].as_slice()).collect();
                let data = Columns::new(features)?;
                let stream = (state.iter * n_cols + j) as u64;
                let forest = Forest::fit_subset(&data, &state.cols[j], &observed, &params.forest, seed::derive_seed(params.seed, stream))?;
                targets
                    .iter()
                    .map(|&r| forest.predict_with(|f| data.get(r, f)))
                    .collect::<Vec<F>>()
            };
            for (&r, v) in targets.iter().zip(predictions) {
                state.cols[j][r] = v;
            }
        }
        state.iter += 1;
        let delta = normalized_change(&previous, &state.cols, &state.missing);
        let increased = state.diff_history.last().is_some_and(|&last| delta > last);
        state.diff_history.push(delta);
        if trace {
            snapshots.push(state.to_matrix());
        }
        if increased {
            stopped_on_increase = true;
            break;
        }
    }

    let (matrix, returned_iteration) = if stopped_on_increase {
        (columns_to_matrix(&previous), state.iter - 1)
    } else {
        (state.to_matrix(), state.iter)
    };
    Ok(MfResult {
        matrix,
        diff_history: state.diff_history,
        returned_iteration,
        stopped_on_increase,
        fallback_columns,
        snapshots,
    })
}

/// Transductive MissForest imputer: rows to impute are stacked under the
/// masked training rows and the whole block is imputed jointly.
#[derive(Debug, Clone)]
pub struct MfImputer<F> {
    pub params: MfParams,
    pub train: Vec<MaskedSample<F>>,
}

impl<F: Real> MfImputer<F> {
    pub fn new(train: Vec<MaskedSample<F>>, params: MfParams) -> Result<Self> {
        let width = train
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::Argument("empty training set".into()))?;
        for r in &train {
            check_width(r, width)?;
        }
        Ok(MfImputer { params, train })
    }

    pub fn width(&self) -> usize {
        self.train[0].len()
    }

    /// Imputes `rows` and also returns the run's change history.
    pub fn impute_with_history(&self, rows: &[MaskedSample<F>]) -> Result<(Vec<Vec<F>>, MfResult<F>)> {
        let width = self.width();
        for r in rows {
            check_width(r, width)?;
        }
        let n_train = self.train.len();
        let block = Array2::from_shape_fn((n_train + rows.len(), width), |(r, c)| {
            let row = if r < n_train { &self.train[r] } else { &rows[r - n_train] };
            if row.mask[c] {
                F::nan()
            } else {
                row.observed[c]
            }
        });
        let result = mf_impute(block.view(), &self.params)?;
        let grids = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let out = result.matrix.row(n_train + i);
                (0..width).map(|c| if row.mask[c] { out[c] } else { row.observed[c] }).collect()
            })
            .collect();
        Ok((grids, result))
    }
}

impl<F: Real> Imputer<F> for MfImputer<F> {
    fn name(&self) -> &'static str {
        "mf"
    }

    fn impute_batch(&self, rows: &[MaskedSample<F>]) -> Result<Vec<Vec<F>>> {
        Ok(self.impute_with_history(rows)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_init_fills_column_mean() {
        let n = f64::NAN;
        let m = array![[1.0, 5.0], [2.0, n], [n, 7.0], [3.0, 9.0]];
        let (out, fb) = mean_mode_init(m.view()).unwrap();
        assert_eq!(out[[2, 0]], 2.0);
        assert_eq!(out.column(1).to_vec(), vec![5.0, 7.0, 7.0, 9.0]);
        assert!(fb.is_empty());
    }

    #[test]
    fn mean_init_fallback_and_error() {
        let n = f64::NAN;
        let m = array![[1.0, n], [3.0, n]];
        let (out, fb) = mean_mode_init(m.view()).unwrap();
        assert_eq!(fb, vec![1]);
        assert_eq!(out[[0, 1]], 2.0);
        let all = array![[n, n], [n, n]];
        assert!(matches!(mean_mode_init(all.view()), Err(Error::Imputation(_))));
    }

    #[test]
    fn complete_matrix_is_identity() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let r = mf_impute(m.view(), &MfParams::default()).unwrap();
        assert_eq!(r.matrix, m);
        assert!(r.diff_history.is_empty());
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let n = f64::NAN;
        let m = array![[1.0, 5.0], [2.0, n], [n, 7.0], [3.0, 9.0]];
        let p = MfParams {
            max_iter: 0,
            ..Default::default()
        };
        let r = mf_impute(m.view(), &p).unwrap();
        assert_eq!(r.matrix, mean_mode_init(m.view()).unwrap().0);
        assert!(r.diff_history.is_empty());
    }
}
