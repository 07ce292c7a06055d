//! Direct random-forest imputation: one forest per grid column, trained to
//! predict that column's true value from all other columns of the masked
//! training rows (missing inputs pre-filled with column means).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{get_real, get_u64, put_real, put_u64, Columns, Forest, ForestParams};
use crate::dataio::MaskedSample;
use crate::error::{Error, Result};
use crate::impute::{check_width, ColumnMeans, Imputer};
use crate::scalar::Real;
use crate::seed;

const MAGIC: &[u8; 8] = b"DMBRF\0\0\0";
const VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RfImputer<F> {
    pub params: ForestParams,
    /// Means of the observed training entries, used to pre-fill inputs.
    pub input_means: ColumnMeans<F>,
    /// Means of the training truth, returned for rows with nothing observed.
    pub truth_means: Vec<F>,
    /// `forests[j]` sees every column except `j`, in order.
    pub forests: Vec<Forest<F>>,
}

/// Imputed grid plus whether a fallback column mean was involved.
#[derive(Debug, Clone, PartialEq)]
pub struct RfImputation<F> {
    pub grid: Vec<F>,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfManifest {
    pub params: ForestParams,
    pub width: usize,
    pub fallback_columns: Vec<usize>,
    pub node_count: usize,
}

#[inline]
fn skip(j: usize) -> impl Fn(usize) -> usize + Copy {
    move |f| if f < j { f } else { f + 1 }
}

impl<F: Real> RfImputer<F> {
    pub fn fit(train: &[MaskedSample<F>], params: &ForestParams, seed: u64) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Argument("empty training set".into()))?;
        let width = first.len();
        if width < 2 {
            return Err(Error::Argument("need at least two grid columns".into()));
        }
        for r in train {
            check_width(r, width)?;
        }
        let input_means = ColumnMeans::of_observed(train)?;
        let truth_means = ColumnMeans::of_truth(train)?.means;
        let filled: Vec<Vec<F>> = (0..width)
            .map(|c| {
                train
                    .iter()
                    .map(|r| if r.mask[c] { input_means.means[c] } else { r.observed[c] })
                    .collect()
            })
            .collect();
        let forests = (0..width)
            .into_par_iter()
            .map(|j| {
                let features: Vec<&[F]> = (0..width).filter(|&c| c != j).map(|c| filled[c].as_slice()).collect();
                let data = Columns::new(features)?;
                let y: Vec<F> = train.iter().map(|r| r.truth[j]).collect();
                Forest::fit_columns(&data, &y, params, seed::derive_seed(seed, j as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RfImputer {
            params: *params,
            input_means,
            truth_means,
            forests,
        })
    }

    pub fn width(&self) -> usize {
        self.forests.len()
    }

    pub fn impute_row(&self, row: &MaskedSample<F>) -> Result<RfImputation<F>> {
        check_width(row, self.width())?;
        let masked = row.masked_count();
        if masked == 0 {
            return Ok(RfImputation {
                grid: row.observed.clone(),
                used_fallback: false,
            });
        }
        if masked == row.len() {
            return Ok(RfImputation {
                grid: self.truth_means.clone(),
                used_fallback: false,
            });
        }
        let filled = self.input_means.fill(row);
        let used_fallback = self.input_means.fallback.iter().any(|&c| row.mask[c]);
        let mut grid = row.observed.clone();
        for j in 0..row.len() {
            if row.mask[j] {
                let map = skip(j);
                grid[j] = self.forests[j].predict_with(|f| filled[map(f)]);
            }
        }
        Ok(RfImputation { grid, used_fallback })
    }

    pub fn manifest(&self) -> RfManifest {
        RfManifest {
            params: self.params,
            width: self.width(),
            fallback_columns: self.input_means.fallback.clone(),
            node_count: self.forests.iter().map(|f| f.node_count()).sum(),
        }
    }

    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        put_u64(w, VERSION)?;
        let params = serde_json::to_vec(&self.params).map_err(std::io::Error::other)?;
        put_u64(w, params.len() as u64)?;
        w.write_all(&params)?;
        put_u64(w, self.width() as u64)?;
        for v in self.input_means.means.iter().chain(&self.truth_means) {
            put_real(w, *v)?;
        }
        put_u64(w, self.input_means.fallback.len() as u64)?;
        for c in &self.input_means.fallback {
            put_u64(w, *c as u64)?;
        }
        for f in &self.forests {
            f.write_binary(w)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a random-forest checkpoint"));
        }
        if get_u64(r)? != VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let n = get_u64(r)? as usize;
        let mut params = vec![0u8; n];
        r.read_exact(&mut params)?;
        let params: ForestParams = serde_json::from_slice(&params).map_err(|e| bad(&e.to_string()))?;
        let width = get_u64(r)? as usize;
        let means = (0..width).map(|_| get_real(r)).collect::<std::io::Result<Vec<F>>>()?;
        let truth_means = (0..width).map(|_| get_real(r)).collect::<std::io::Result<Vec<F>>>()?;
        let n_fb = get_u64(r)? as usize;
        let fallback = (0..n_fb)
            .map(|_| get_u64(r).map(|c| c as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let forests = (0..width)
            .map(|_| Forest::read_binary(r))
            .collect::<std::io::Result<Vec<_>>>()?;
        if forests.iter().any(|f| f.n_features + 1 != width) {
            return Err(bad("forest width does not match grid width"));
        }
        Ok(RfImputer {
            params,
            input_means: ColumnMeans { means, fallback },
            truth_means,
            forests,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_binary(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(&mut BufReader::new(file)).map_err(|e| Error::format(path, e))
    }
}

impl<F: Real> Imputer<F> for RfImputer<F> {
    fn name(&self) -> &'static str {
        "rf"
    }

    fn impute_batch(&self, rows: &[MaskedSample<F>]) -> Result<Vec<Vec<F>>> {
        rows.par_iter()
            .map(|r| self.impute_row(r).map(|i| i.grid))
            .collect()
    }
}

/// Convenience wrapper: fit on `train` and impute a single row.
pub fn rf_impute<F: Real>(train: &[MaskedSample<F>], test_row: &MaskedSample<F>, params: &ForestParams, seed: u64) -> Result<RfImputation<F>> {
    RfImputer::fit(train, params, seed)?.impute_row(test_row)
}
