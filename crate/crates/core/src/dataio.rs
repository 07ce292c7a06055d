//! Masking, oversampling, train/test splitting and dataset files.
//!
//! Masked entries carry `NaN` in memory and an empty cell on disk.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scenario::{Dataset, DatasetMeta, GridShape, Point, RsrpSample, UeState, FORMAT_VERSION};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Unsplit,
}

/// A grid with some entries hidden. `mask[i] == true` means entry `i` was not
/// sounded and `observed[i]` is `NaN`.
#[derive(Debug, Clone)]
pub struct MaskedSample<F> {
    pub ue_id: usize,
    pub ue: UeState,
    pub observed: Vec<F>,
    pub mask: Vec<bool>,
    pub truth: Vec<F>,
    pub source_row: usize,
}

/// Equality treats the sentinels at masked slots as equal.
impl<F: Real> PartialEq for MaskedSample<F> {
    fn eq(&self, other: &Self) -> bool {
        self.ue_id == other.ue_id
            && self.ue == other.ue
            && self.mask == other.mask
            && self.truth == other.truth
            && self.source_row == other.source_row
            && self
                .observed
                .iter()
                .zip(&other.observed)
                .zip(&self.mask)
                .all(|((a, b), m)| *m || a == b)
            && self.observed.len() == other.observed.len()
    }
}

impl<F: Real> MaskedSample<F> {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    /// A sample with nothing hidden.
    pub fn unmasked(row: &RsrpSample<F>, source_row: usize) -> Self {
        MaskedSample {
            ue_id: row.ue_id,
            ue: row.ue,
            observed: row.grid.clone(),
            mask: vec![false; row.grid.len()],
            truth: row.grid.clone(),
            source_row,
        }
    }

    /// Builds a sample hiding the entries where `mask` is set.
    pub fn with_mask(row: &RsrpSample<F>, mask: Vec<bool>, source_row: usize) -> Result<Self> {
        if mask.len() != row.grid.len() {
            return Err(Error::Argument(format!(
                "mask length {} does not match grid length {}",
                mask.len(),
                row.grid.len()
            )));
        }
        let observed = row
            .grid
            .iter()
            .zip(&mask)
            .map(|(v, m)| if *m { F::nan() } else { *v })
            .collect();
        Ok(MaskedSample {
            ue_id: row.ue_id,
            ue: row.ue,
            observed,
            mask,
            truth: row.grid.clone(),
            source_row,
        })
    }
}

/// Masking parameters a masked dataset was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub p: f64,
    pub factor: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MaskedDataset<F> {
    pub meta: DatasetMeta,
    pub rows: Vec<MaskedSample<F>>,
    pub split: SplitTag,
    pub masking: MaskSpec,
}

impl<F: Real> PartialEq for MaskedDataset<F> {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta && self.rows == other.rows && self.split == other.split && self.masking == other.masking
    }
}

impl<F: Real> MaskedDataset<F> {
    pub fn shape(&self) -> GridShape {
        self.meta.shape()
    }
}

/// Number of hidden entries for a masking fraction: `round(p * len)`.
pub fn mask_count(len: usize, p: f64) -> usize {
    ((p * len as f64).round() as usize).min(len)
}

fn check_fraction(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("masking fraction {p} outside [0, 1]")));
    }
    Ok(())
}

/// Hides exactly `round(p * len)` entries chosen uniformly without replacement.
pub fn apply_mask<F: Real>(row: &RsrpSample<F>, p: f64, rng_seed: u64) -> Result<MaskedSample<F>> {
    check_fraction(p)?;
    let len = row.grid.len();
    let count = mask_count(len, p);
    let mut rng = seed::rng(rng_seed);
    let mut mask = vec![false; len];
    for i in index::sample(&mut rng, len, count) {
        mask[i] = true;
    }
    MaskedSample::with_mask(row, mask, row.ue_id)
}

/// Repeats every row `factor` times, each replica with an independent mask
/// at the same fraction `p`. `source_row` refers to the position in `ds`.
pub fn oversample<F: Real>(ds: &Dataset<F>, factor: usize, p: f64, seed: u64) -> Result<MaskedDataset<F>> {
    if factor == 0 {
        return Err(Error::Argument("oversampling factor must be at least 1".into()));
    }
    check_fraction(p)?;
    let mut rows = Vec::with_capacity(ds.rows.len() * factor);
    for (r, row) in ds.rows.iter().enumerate() {
        for rep in 0..factor {
            let s = seed::derive_seed(seed, (r * factor + rep) as u64);
            let mut m = apply_mask(row, p, s)?;
            m.source_row = r;
            rows.push(m);
        }
    }
    Ok(MaskedDataset {
        meta: ds.meta.clone(),
        rows,
        split: SplitTag::Unsplit,
        masking: MaskSpec { p, factor, seed },
    })
}

/// Partitions distinct source ids into (train, test) sets.
fn split_sources(sources: &BTreeSet<usize>, test_fraction: f64, seed: u64) -> Result<(BTreeSet<usize>, BTreeSet<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n = sources.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 distinct source rows, found {n}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<usize> = sources.iter().copied().collect();
    ids.shuffle(&mut seed::rng(seed));
    let test: BTreeSet<usize> = ids[..n_test].iter().copied().collect();
    let train = ids[n_test..].iter().copied().collect();
    Ok((train, test))
}

/// Splits by source row so replicas of one row never straddle the boundary.
pub fn split<F: Real>(ds: &MaskedDataset<F>, test_fraction: f64, seed: u64) -> Result<(MaskedDataset<F>, MaskedDataset<F>)> {
    let sources: BTreeSet<usize> = ds.rows.iter().map(|r| r.source_row).collect();
    let (_, test) = split_sources(&sources, test_fraction, seed)?;
    let (te, tr): (Vec<_>, Vec<_>) = ds.rows.iter().cloned().partition(|r| test.contains(&r.source_row));
    let mk = |rows, split| MaskedDataset {
        meta: ds.meta.clone(),
        rows,
        split,
        masking: ds.masking,
    };
    Ok((mk(tr, SplitTag::Train), mk(te, SplitTag::Test)))
}

/// Splits an unmasked dataset by row; returns the row indices of each side
/// in ascending order.
pub fn split_rows<F: Real>(ds: &Dataset<F>, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let sources: BTreeSet<usize> = (0..ds.rows.len()).collect();
    let (train, test) = split_sources(&sources, test_fraction, seed)?;
    Ok((train.into_iter().collect(), test.into_iter().collect()))
}

// ---------------------------------------------------------------------------
// Files

pub fn json_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn csv_path(stem: &Path) -> PathBuf {
    stem.with_extension("csv")
}

fn sibling(stem: &Path, suffix: &str, ext: &str) -> PathBuf {
    let name = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.with_file_name(format!("{name}_{suffix}.{ext}"))
}

pub fn masked_csv_path(stem: &Path) -> PathBuf {
    sibling(stem, "masked", "csv")
}

pub fn truth_csv_path(stem: &Path) -> PathBuf {
    sibling(stem, "truth", "csv")
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    sibling(stem, "manifest", "json")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn header(len: usize) -> Vec<String> {
    let mut h: Vec<String> = ["ue_id", "x", "y", "azimuth"].iter().map(|s| s.to_string()).collect();
    h.extend((0..len).map(|i| format!("rsrp_{i}")));
    h
}

fn write_grid_csv<'a, F: Real>(
    path: &Path,
    len: usize,
    rows: impl Iterator<Item = (usize, UeState, Box<dyn Iterator<Item = Option<F>> + 'a>)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::format(path, e);
    w.write_record(header(len)).map_err(err)?;
    let mut rec: Vec<String> = Vec::with_capacity(len + 4);
    for (id, ue, values) in rows {
        rec.clear();
        rec.push(id.to_string());
        rec.push(ue.position.x.to_string());
        rec.push(ue.position.y.to_string());
        rec.push(ue.azimuth_deg.to_string());
        rec.extend(values.map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

type CsvRow<F> = (usize, UeState, Vec<Option<F>>);

fn read_grid_csv<F: Real>(path: &Path, len: usize) -> Result<Vec<CsvRow<F>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let hdr = r.headers().map_err(|e| Error::format(path, e))?.clone();
    if hdr.len() != len + 4 {
        return Err(Error::format(path, format!("expected {} columns, found {}", len + 4, hdr.len())));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 1));
        let id: usize = rec[0].parse().map_err(|_| bad("ue_id"))?;
        let x: f64 = rec[1].parse().map_err(|_| bad("x"))?;
        let y: f64 = rec[2].parse().map_err(|_| bad("y"))?;
        let az: f64 = rec[3].parse().map_err(|_| bad("azimuth"))?;
        let mut values = Vec::with_capacity(len);
        for cell in rec.iter().skip(4) {
            if cell.is_empty() {
                values.push(None);
            } else {
                values.push(Some(cell.parse::<F>().map_err(|_| bad("rsrp value"))?));
            }
        }
        let ue = UeState {
            position: Point::new(x, y),
            azimuth_deg: az,
        };
        out.push((id, ue, values));
    }
    Ok(out)
}

/// Writes `<stem>.json` (metadata) and `<stem>.csv` (one row per UE).
pub fn save_dataset<F: Real>(ds: &Dataset<F>, stem: &Path) -> Result<()> {
    write_json(&json_path(stem), &ds.meta)?;
    let rows = ds.rows.iter().map(|r| {
        let it: Box<dyn Iterator<Item = Option<F>>> = Box::new(r.grid.iter().map(|v| Some(*v)));
        (r.ue_id, r.ue, it)
    });
    write_grid_csv(&csv_path(stem), ds.shape().len(), rows)
}

pub fn load_dataset<F: Real>(stem: &Path) -> Result<Dataset<F>> {
    let meta: DatasetMeta = read_json(&json_path(stem))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(json_path(stem), format!("unsupported format version {}", meta.format_version)));
    }
    let path = csv_path(stem);
    let rows = read_grid_csv::<F>(&path, meta.shape().len())?
        .into_iter()
        .map(|(ue_id, ue, values)| {
            let grid = values.into_iter().collect::<Option<Vec<F>>>();
            grid.map(|grid| RsrpSample { ue_id, ue, grid })
                .ok_or_else(|| Error::format(&path, "empty cell in unmasked dataset"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { meta, rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaskManifest {
    format_version: u32,
    meta: DatasetMeta,
    split: SplitTag,
    masking: MaskSpec,
    source_rows: Vec<usize>,
}

/// Writes `<stem>_masked.csv`, `<stem>_truth.csv` and `<stem>_manifest.json`.
pub fn save_masked<F: Real>(ds: &MaskedDataset<F>, stem: &Path) -> Result<()> {
    let len = ds.shape().len();
    let masked = ds.rows.iter().map(|r| {
        let it: Box<dyn Iterator<Item = Option<F>>> =
            Box::new(r.observed.iter().zip(&r.mask).map(|(v, m)| (!m).then_some(*v)));
        (r.ue_id, r.ue, it)
    });
    write_grid_csv(&masked_csv_path(stem), len, masked)?;
    let truth = ds.rows.iter().map(|r| {
        let it: Box<dyn Iterator<Item = Option<F>>> = Box::new(r.truth.iter().map(|v| Some(*v)));
        (r.ue_id, r.ue, it)
    });
    write_grid_csv(&truth_csv_path(stem), len, truth)?;
    let manifest = MaskManifest {
        format_version: FORMAT_VERSION,
        meta: ds.meta.clone(),
        split: ds.split,
        masking: ds.masking,
        source_rows: ds.rows.iter().map(|r| r.source_row).collect(),
    };
    write_json(&manifest_path(stem), &manifest)
}

pub fn load_masked<F: Real>(stem: &Path) -> Result<MaskedDataset<F>> {
    let mpath = manifest_path(stem);
    let manifest: MaskManifest = read_json(&mpath)?;
    let len = manifest.meta.shape().len();
    let masked = read_grid_csv::<F>(&masked_csv_path(stem), len)?;
    let tpath = truth_csv_path(stem);
    let truth = read_grid_csv::<F>(&tpath, len)?;
    if masked.len() != truth.len() || masked.len() != manifest.source_rows.len() {
        return Err(Error::format(&mpath, "row counts of masked, truth and manifest differ"));
    }
    let mut rows = Vec::with_capacity(masked.len());
    for (((id, ue, obs), (tid, _, tv)), src) in masked.into_iter().zip(truth).zip(&manifest.source_rows) {
        if id != tid {
            return Err(Error::format(&tpath, format!("ue_id {tid} does not match masked row {id}")));
        }
        let truth: Vec<F> = tv
            .into_iter()
            .collect::<Option<Vec<F>>>()
            .ok_or_else(|| Error::format(&tpath, "empty cell in truth file"))?;
        let mask: Vec<bool> = obs.iter().map(|v| v.is_none()).collect();
        let observed = obs.into_iter().map(|v| v.unwrap_or_else(F::nan)).collect();
        rows.push(MaskedSample {
            ue_id: id,
            ue,
            observed,
            mask,
            truth,
            source_row: *src,
        });
    }
    Ok(MaskedDataset {
        meta: manifest.meta,
        rows,
        split: manifest.split,
        masking: manifest.masking,
    })
}
