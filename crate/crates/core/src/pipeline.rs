//! Two-stage directed beam search.
//!
//! Stage 1 sounds a subset of the grid (the unmasked entries) and an imputer
//! predicts the rest. The `k` unsounded beams with the highest predictions are
//! scanned in Stage 2, and the final choice is the best *measured* value among
//! the Stage-1 sounding and the Stage-2 scan.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgan::CganImputer;
use crate::dataio::{apply_mask, MaskedSample};
use crate::error::{Error, Result};
use crate::forest::RfImputer;
use crate::impute::{check_width, Imputer, MeanImputer};
use crate::missforest::MfImputer;
use crate::scalar::Real;
use crate::scenario::{Dataset, GridShape};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Mf,
    Cgan,
    Mean,
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Rf, ModelKind::Mf, ModelKind::Cgan, ModelKind::Mean, ModelKind::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Mf => "mf",
            ModelKind::Cgan => "cgan",
            ModelKind::Mean => "mean",
            ModelKind::Random => "random",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown model '{s}', expected one of rf, mf, cgan, mean, random")))
    }
}

/// Result of one directed (or random) search for one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome<F> {
    pub ue_id: usize,
    pub model: ModelKind,
    pub p: f64,
    pub k: usize,
    /// Beams sounded in Stage 1.
    pub sounded: usize,
    pub stage1_indices: Vec<usize>,
    pub stage2_indices: Vec<usize>,
    /// True if fewer than `k` unsounded beams were available.
    pub truncated: bool,
    pub chosen: usize,
    pub chosen_ap: usize,
    pub chosen_beam: usize,
    pub achieved_rsrp: F,
    pub true_best_rsrp: F,
    pub gap: F,
}

/// Trained Stage-1 imputers, looked up by [`ModelKind`].
pub struct ModelSet<F> {
    pub rf: Option<RfImputer<F>>,
    pub mf: Option<MfImputer<F>>,
    pub cgan: Option<CganImputer<F>>,
    pub mean: Option<MeanImputer<F>>,
}

impl<F> Default for ModelSet<F> {
    fn default() -> Self {
        ModelSet {
            rf: None,
            mf: None,
            cgan: None,
            mean: None,
        }
    }
}

impl<F: Real> ModelSet<F> {
    /// The imputer for `kind`; `random` has none.
    pub fn imputer(&self, kind: ModelKind) -> Result<&dyn Imputer<F>> {
        let missing = || Error::State(format!("no trained {kind} model available"));
        Ok(match kind {
            ModelKind::Rf => self.rf.as_ref().ok_or_else(missing)?,
            ModelKind::Mf => self.mf.as_ref().ok_or_else(missing)?,
            ModelKind::Cgan => self.cgan.as_ref().ok_or_else(missing)?,
            ModelKind::Mean => self.mean.as_ref().ok_or_else(missing)?,
            ModelKind::Random => return Err(Error::Argument("random search has no Stage-1 model".into())),
        })
    }
}

/// Stage-1 prediction of the full grid. Fails if the imputer altered an
/// observed entry.
pub fn stage1_infer<F: Real>(row: &MaskedSample<F>, imputer: &dyn Imputer<F>) -> Result<Vec<F>> {
    let grid = imputer.impute(row)?;
    if passthrough_violations(row, &grid) > 0 {
        return Err(Error::Contract(format!("{} imputer changed observed entries of UE {}", imputer.name(), row.ue_id)));
    }
    Ok(grid)
}

/// Observed entries that differ from the input, or a length mismatch.
pub fn passthrough_violations<F: Real>(row: &MaskedSample<F>, grid: &[F]) -> usize {
    if grid.len() != row.len() {
        return row.len().max(1);
    }
    (0..row.len()).filter(|&i| !row.mask[i] && grid[i] != row.observed[i]).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    /// Flat indices, best prediction first.
    pub indices: Vec<usize>,
    pub truncated: bool,
}

/// The `k` masked slots with the highest predictions, highest first; ties go
/// to the lower flat index. NaN predictions rank last.
pub fn select_topk<F: Real>(predicted: &[F], mask: &[bool], k: usize) -> Result<TopK> {
    if predicted.len() != mask.len() {
        return Err(Error::Argument("prediction and mask lengths differ".into()));
    }
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut candidates: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let truncated = k > candidates.len();
    candidates.sort_by(|&a, &b| {
        let (x, y) = (predicted[a], predicted[b]);
        match (x.is_nan(), y.is_nan()) {
            (false, false) => y.total_cmp_real(&x).then(a.cmp(&b)),
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
        }
    });
    candidates.truncate(k);
    Ok(TopK {
        indices: candidates,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution<F> {
    pub chosen: usize,
    pub achieved: F,
    pub true_best: F,
    pub gap: F,
}

/// Simulated Stage-2 scan: reads the truth at the candidates and picks the
/// best of all measured beams.
pub fn stage2_resolve<F: Real>(row: &MaskedSample<F>, candidates: &[usize]) -> Result<Resolution<F>> {
    if let Some(&c) = candidates.iter().find(|&&c| c >= row.len() || !row.mask[c]) {
        return Err(Error::Argument(format!("candidate {c} is not an unsounded beam")));
    }
    let mut measured = vec![false; row.len()];
    for i in 0..row.len() {
        measured[i] = !row.mask[i];
    }
    for &c in candidates {
        measured[c] = true;
    }
    let chosen = (0..row.len())
        .filter(|&i| measured[i])
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if row.truth[b] >= row.truth[i] => Some(b),
            _ => Some(i),
        })
        .ok_or_else(|| Error::Argument("no beam was measured in either stage".into()))?;
    let true_best = row.truth[crate::scenario::argmax(&row.truth)];
    let achieved = row.truth[chosen];
    Ok(Resolution {
        chosen,
        achieved,
        true_best,
        gap: true_best - achieved,
    })
}

fn outcome<F: Real>(row: &MaskedSample<F>, shape: GridShape, model: ModelKind, p: f64, k: usize, top: TopK) -> Result<SearchOutcome<F>> {
    let r = stage2_resolve(row, &top.indices)?;
    let beam = shape.from_flat(r.chosen)?;
    let stage1_indices = row.observed_indices();
    Ok(SearchOutcome {
        ue_id: row.ue_id,
        model,
        p,
        k,
        sounded: stage1_indices.len(),
        stage1_indices,
        stage2_indices: top.indices,
        truncated: top.truncated,
        chosen: r.chosen,
        chosen_ap: beam.ap,
        chosen_beam: beam.beam,
        achieved_rsrp: r.achieved,
        true_best_rsrp: r.true_best,
        gap: r.gap,
    })
}

/// Unsounded beams in a seeded random order; the first `k` form the random
/// baseline's Stage-2 candidates, so larger `k` extends smaller `k`.
pub fn random_order<F: Real>(row: &MaskedSample<F>, seed: u64) -> Vec<usize> {
    let mut order = row.masked_indices();
    order.shuffle(&mut seed::rng(seed));
    order
}

pub fn random_baseline<F: Real>(row: &MaskedSample<F>, shape: GridShape, p: f64, k: usize, seed: u64) -> Result<SearchOutcome<F>> {
    check_width(row, shape.len())?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut order = random_order(row, seed);
    let truncated = k > order.len();
    order.truncate(k);
    outcome(row, shape, ModelKind::Random, p, k, TopK { indices: order, truncated })
}

/// Directed search for one UE with a Stage-1 grid already predicted.
pub fn directed_search<F: Real>(row: &MaskedSample<F>, shape: GridShape, predicted: &[F], model: ModelKind, p: f64, k: usize) -> Result<SearchOutcome<F>> {
    let top = select_topk(predicted, &row.mask, k)?;
    outcome(row, shape, model, p, k, top)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub models: Vec<ModelKind>,
    pub ps: Vec<f64>,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.ps.is_empty() || self.ks.is_empty() {
            return Err(Error::Argument("sweep needs at least one model, masking fraction and k".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if let Some(p) = self.ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!("masking fraction {p} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult<F> {
    /// Ordered by (test row, model, p, k) in `SweepSpec` order.
    pub outcomes: Vec<SearchOutcome<F>>,
    /// Observed entries altered by any imputer, summed over the sweep.
    pub passthrough_violations: usize,
}

/// Seed of the Stage-1 mask for one (row, masking fraction) pair; shared by
/// every model so they all see the same sounding.
pub fn mask_seed(seed: u64, p_index: usize, ue_id: usize) -> u64 {
    seed::derive_seed(seed::derive_seed(seed, p_index as u64), ue_id as u64)
}

/// Full factorial over (model, p, k) on the test rows.
pub fn run_sweep<F: Real>(test: &Dataset<F>, models: &ModelSet<F>, spec: &SweepSpec) -> Result<SweepResult<F>> {
    spec.validate()?;
    if test.rows.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let shape = test.shape();
    let n_rows = test.rows.len();
    let (n_m, n_p, n_k) = (spec.models.len(), spec.ps.len(), spec.ks.len());
    // cells[row][model][p] holds the k outcomes for that combination.
    let mut cells: Vec<Vec<Vec<Vec<SearchOutcome<F>>>>> = vec![vec![vec![Vec::new(); n_p]; n_m]; n_rows];
    let mut violations = 0usize;
    for (pi, &p) in spec.ps.iter().enumerate() {
        let masked: Vec<MaskedSample<F>> = test
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let mut m = apply_mask(row, p, mask_seed(spec.seed, pi, row.ue_id))?;
                m.source_row = r;
                Ok(m)
            })
            .collect::<Result<_>>()?;
        for (mi, &model) in spec.models.iter().enumerate() {
            let per_row: Vec<Vec<SearchOutcome<F>>> = if model == ModelKind::Random {
                masked
                    .par_iter()
                    .map(|row| {
                        let order = random_order(row, seed::derive_seed(mask_seed(spec.seed, pi, row.ue_id), 1));
                        spec.ks
                            .iter()
                            .map(|&k| {
                                let top = TopK {
                                    indices: order.iter().copied().take(k).collect(),
                                    truncated: k > order.len(),
                                };
                                outcome(row, shape, model, p, k, top)
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?
            } else {
                let grids = models.imputer(model)?.impute_batch(&masked)?;
                if grids.len() != masked.len() {
                    return Err(Error::Contract(format!("{model} returned {} grids for {} rows", grids.len(), masked.len())));
                }
                violations += masked.iter().zip(&grids).map(|(r, g)| passthrough_violations(r, g)).sum::<usize>();
                masked
                    .par_iter()
                    .zip(grids.par_iter())
                    .map(|(row, grid)| {
                        spec.ks
                            .iter()
                            .map(|&k| directed_search(row, shape, grid, model, p, k))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?
            };
            for (r, outs) in per_row.into_iter().enumerate() {
                cells[r][mi][pi] = outs;
            }
        }
    }
    let mut outcomes = Vec::with_capacity(n_rows * n_m * n_p * n_k);
    for row in cells {
        for model in row {
            for outs in model {
                outcomes.extend(outs);
            }
        }
    }
    Ok(SweepResult {
        outcomes,
        passthrough_violations: violations,
    })
}

const OUTCOME_HEADER: [&str; 14] = [
    "ue_id",
    "model",
    "p",
    "k",
    "sounded",
    "truncated",
    "stage1_indices",
    "stage2_indices",
    "chosen",
    "chosen_ap",
    "chosen_beam",
    "achieved_rsrp",
    "true_best_rsrp",
    "gap",
];

fn join(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn split_list(s: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    s.split_whitespace().map(str::parse).collect()
}

/// One row per outcome; index lists are space separated.
pub fn write_outcomes<F: Real>(outcomes: &[SearchOutcome<F>], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    let err = |e: csv::Error| Error::format(path, e);
    w.write_record(OUTCOME_HEADER).map_err(err)?;
    for o in outcomes {
        w.write_record([
            o.ue_id.to_string(),
            o.model.to_string(),
            o.p.to_string(),
            o.k.to_string(),
            o.sounded.to_string(),
            o.truncated.to_string(),
            join(&o.stage1_indices),
            join(&o.stage2_indices),
            o.chosen.to_string(),
            o.chosen_ap.to_string(),
            o.chosen_beam.to_string(),
            o.achieved_rsrp.to_string(),
            o.true_best_rsrp.to_string(),
            o.gap.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_outcomes<F: Real>(path: &Path) -> Result<Vec<SearchOutcome<F>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    let hdr = r.headers().map_err(|e| Error::format(path, e))?;
    if hdr.iter().ne(OUTCOME_HEADER) {
        return Err(Error::format(path, "unexpected outcome header"));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let bad = |field: &str| Error::format(path, format!("row {}: bad {field}", line + 1));
        let int = |i: usize, f: &str| rec[i].parse::<usize>().map_err(|_| bad(f));
        let real = |i: usize, f: &str| rec[i].parse::<F>().map_err(|_| bad(f));
        out.push(SearchOutcome {
            ue_id: int(0, "ue_id")?,
            model: rec[1].parse().map_err(|_| bad("model"))?,
            p: rec[2].parse().map_err(|_| bad("p"))?,
            k: int(3, "k")?,
            sounded: int(4, "sounded")?,
            truncated: rec[5].parse().map_err(|_| bad("truncated"))?,
            stage1_indices: split_list(&rec[6]).map_err(|_| bad("stage1_indices"))?,
            stage2_indices: split_list(&rec[7]).map_err(|_| bad("stage2_indices"))?,
            chosen: int(8, "chosen")?,
            chosen_ap: int(9, "chosen_ap")?,
            chosen_beam: int(10, "chosen_beam")?,
            achieved_rsrp: real(11, "achieved_rsrp")?,
            true_best_rsrp: real(12, "true_best_rsrp")?,
            gap: real(13, "gap")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Point, UeState};

    fn row(truth: &[f64], mask: &[bool]) -> MaskedSample<f64> {
        MaskedSample {
            ue_id: 3,
            ue: UeState {
                position: Point::new(0.0, 0.0),
                azimuth_deg: 0.0,
            },
            observed: truth.iter().zip(mask).map(|(v, m)| if *m { f64::NAN } else { *v }).collect(),
            mask: mask.to_vec(),
            truth: truth.to_vec(),
            source_row: 0,
        }
    }

    #[test]
    fn topk_order_ties_and_truncation() {
        let pred = [5.0, 9.0, 9.0, 1.0, 7.0, 9.0];
        let mask = [true, false, true, true, true, true];
        let t = select_topk(&pred, &mask, 3).unwrap();
        assert_eq!(t.indices, vec![2, 5, 4]);
        assert!(!t.truncated);
        let t = select_topk(&[0.0; 6], &mask, 3).unwrap();
        assert_eq!(t.indices, vec![0, 2, 3]);
        let t = select_topk(&pred, &mask, 9).unwrap();
        assert_eq!(t.indices.len(), 5);
        assert!(t.truncated);
        assert!(select_topk(&pred, &mask, 0).is_err());
    }

    #[test]
    fn resolve_by_hand() {
        // 8 beams; sounded: 0 (-90), 5 (-80). Best masked beam 3 (-60) is not scanned.
        let truth = [-90.0, -75.0, -85.0, -60.0, -70.0, -80.0, -95.0, -72.0];
        let mask = [false, true, true, true, true, false, true, true];
        let r = row(&truth, &mask);
        let res = stage2_resolve(&r, &[4, 7]).unwrap();
        assert_eq!(res.chosen, 4);
        assert_eq!(res.gap, -60.0 - -70.0);
        assert_eq!(stage2_resolve(&r, &[3]).unwrap().gap, 0.0);
        // Stage-1 best wins when candidates are all weaker.
        let res = stage2_resolve(&r, &[6]).unwrap();
        assert_eq!(res.chosen, 5);
        assert_eq!(res.gap, 20.0);
        assert!(stage2_resolve(&r, &[0]).is_err());
    }

    #[test]
    fn best_sounded_means_zero_gap() {
        let truth = [-50.0, -75.0, -85.0, -60.0];
        let r = row(&truth, &[false, true, true, true]);
        assert_eq!(stage2_resolve(&r, &[2]).unwrap().gap, 0.0);
    }

    #[test]
    fn random_exhaustive_and_seeded() {
        let truth = [-90.0, -75.0, -85.0, -60.0, -70.0, -80.0];
        let r = row(&truth, &[false, true, true, true, true, true]);
        let shape = GridShape::new(2, 3);
        for s in 0..20 {
            assert_eq!(random_baseline(&r, shape, 0.8, 5, s).unwrap().gap, 0.0);
        }
        let a = random_baseline(&r, shape, 0.8, 2, 9).unwrap();
        assert_eq!(a, random_baseline(&r, shape, 0.8, 2, 9).unwrap());
        assert_eq!(a.model, ModelKind::Random);
    }

    #[test]
    fn model_names_round_trip() {
        for m in ModelKind::ALL {
            assert_eq!(m.as_str().parse::<ModelKind>().unwrap(), m);
        }
        let e = "svm".parse::<ModelKind>().unwrap_err().to_string();
        assert!(e.contains("rf, mf, cgan"));
    }
}
