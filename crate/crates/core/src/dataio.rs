//! On-disk datasets: a CSV payload plus a JSON manifest, optionally with a
//! coefficient sidecar for simulated data.
//!
//! A dataset directory holds
//!
//! * `manifest.json` ([`DatasetManifest`], unknown keys rejected),
//! * the payload CSV named by `data_file`: header
//!   `subject_id,<mod>_0..<mod>_{J-1} (per modality),y_0..y_{m-1}`, one row per
//!   subject, floats in shortest round-trip decimal form,
//! * optionally the sidecar named by `beta_sidecar` ([`BetaSidecar`]).
//!
//! When the manifest carries a `split`, the first `split.train` rows are the
//! training subjects and the rest are the test subjects.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Rng, Vector};
use crate::simgen::{MultiModalSample, SimCoefficients, SimData, SimScenario, SplitDataset};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.csv";
pub const BETA_FILE: &str = "beta.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Number of modalities; must equal `modalities.len()`.
    pub k: usize,
    pub modalities: Vec<ModalitySpec>,
    pub outcome_dim: usize,
    pub n: usize,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_sidecar: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<StandardizationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSizes>,
}

impl DatasetManifest {
    /// Manifest for `n` subjects with modalities named `x1, x2, ...`.
    pub fn new(input_dims: &[usize], outcome_dim: usize, n: usize) -> Self {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            k: input_dims.len(),
            modalities: input_dims
                .iter()
                .enumerate()
                .map(|(i, &dim)| ModalitySpec {
                    name: format!("x{}", i + 1),
                    dim,
                })
                .collect(),
            outcome_dim,
            n,
            data_file: DATA_FILE.into(),
            grid_shape: None,
            beta_sidecar: None,
            standardization: None,
            split: None,
        }
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dim).collect()
    }

    /// Payload header in column order.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["subject_id".to_string()];
        for m in &self.modalities {
            h.extend((0..m.dim).map(|j| format!("{}_{j}", m.name)));
        }
        h.extend((0..self.outcome_dim).map(|j| format!("y_{j}")));
        h
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Format { path: path.into(), msg });
        if self.format_version != FORMAT_VERSION {
            return bad(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.k != self.modalities.len() || self.k == 0 {
            return bad(format!("k = {} but {} modalities listed", self.k, self.modalities.len()));
        }
        if self.modalities.iter().any(|m| m.dim == 0) || self.outcome_dim == 0 {
            return bad("every dimension must be >= 1".into());
        }
        let mut names: Vec<&str> = self.modalities.iter().map(|m| m.name.as_str()).collect();
        if names.iter().any(|n| n.is_empty() || *n == "y" || n.contains(',') || n.contains('"')) {
            return bad("modality names must be non-empty, not `y`, without commas or quotes".into());
        }
        names.sort_unstable();
        names.dedup();
        if names.len() != self.k {
            return bad("modality names must be unique".into());
        }
        if let Some(s) = self.split {
            if s.train + s.test != self.n {
                return bad(format!("split {}+{} does not add up to n = {}", s.train, s.test, self.n));
            }
        }
        if let Some(shape) = &self.grid_shape {
            let cells: usize = shape.iter().product();
            if self.modalities.iter().any(|m| m.dim != cells) {
                return bad(format!("grid shape {shape:?} does not match modality dims"));
            }
        }
        if let Some(rec) = &self.standardization {
            if rec.columns.len() != self.k
                || rec.columns.iter().zip(&self.modalities).any(|(c, m)| c.len() != m.dim)
            {
                return bad("standardization record does not match modality dims".into());
            }
        }
        Ok(())
    }
}

/// Subjects in file order with their identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    pub samples: Vec<MultiModalSample>,
}

impl Dataset {
    /// Numbers the subjects `0..n`.
    pub fn from_samples(samples: Vec<MultiModalSample>) -> Self {
        Dataset {
            subject_ids: (0..samples.len()).map(|i| i.to_string()).collect(),
            samples,
        }
    }

    /// Train rows followed by test rows.
    pub fn from_split(split: &SplitDataset) -> Self {
        Self::from_samples(split.train.iter().chain(&split.test).cloned().collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits by the manifest's recorded sizes.
    pub fn into_split(self, manifest: &DatasetManifest) -> Result<SplitDataset> {
        let s = manifest.split.ok_or_else(|| {
            Error::InvalidArgument("dataset has no recorded train/test split".into())
        })?;
        if s.train + s.test != self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "split {}+{} does not match {} subjects",
                s.train,
                s.test,
                self.samples.len()
            )));
        }
        let mut train = self.samples;
        let test = train.split_off(s.train);
        Ok(SplitDataset { train, test })
    }
}

/// Coefficients and per-row noise of a simulated dataset, in payload row order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSidecar {
    pub scenario: SimScenario,
    pub coefficients: SimCoefficients,
    pub noise: Vec<Vec<f64>>,
}

impl BetaSidecar {
    /// Checks `regression(x_i) + ε_i == y_i` bitwise for every row.
    pub fn replay_matches(&self, samples: &[MultiModalSample]) -> Result<bool> {
        if samples.len() != self.noise.len() {
            return Ok(false);
        }
        for (s, eps) in samples.iter().zip(&self.noise) {
            let mean = self.coefficients.regression(&s.x)?;
            if mean.len() != eps.len()
                || mean
                    .iter()
                    .zip(eps)
                    .zip(s.y.iter())
                    .any(|((m, e), y)| (m + e).to_bits() != y.to_bits())
            {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes manifest and payload into directory `dir` (created if missing).
pub fn write_dataset(ds: &Dataset, manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_FILE);
    manifest.validate(&manifest_path.display().to_string())?;
    if ds.samples.len() != manifest.n || ds.subject_ids.len() != manifest.n {
        return Err(Error::InvalidArgument(format!(
            "manifest says n = {} but dataset has {} subjects",
            manifest.n,
            ds.samples.len()
        )));
    }
    let dims = manifest.input_dims();
    for (i, s) in ds.samples.iter().enumerate() {
        let ok = s.x.len() == dims.len()
            && s.x.iter().zip(&dims).all(|(x, &j)| x.len() == j)
            && s.y.len() == manifest.outcome_dim;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "subject {i} does not match the manifest dimensions"
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let data_path = dir.join(&manifest.data_file);
    let mut w = csv::Writer::from_path(&data_path).map_err(|e| csv_err(&data_path, e))?;
    w.write_record(manifest.header()).map_err(|e| csv_err(&data_path, e))?;
    let mut row = Vec::with_capacity(manifest.header().len());
    for (id, s) in ds.subject_ids.iter().zip(&ds.samples) {
        row.clear();
        row.push(id.clone());
        for x in &s.x {
            row.extend(x.iter().map(|&v| fmt_f64(v)));
        }
        row.extend(s.y.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(|e| csv_err(&data_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&data_path, e))?;

    write_json(manifest, &manifest_path)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Data {
        path: path.display().to_string(),
        row,
        col: 0,
        msg: e.to_string(),
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let m: DatasetManifest = read_json(&path)?;
    m.validate(&path.display().to_string())?;
    Ok(m)
}

/// Reads a dataset directory. Rows and columns in errors are 1-based file
/// positions (row 1 is the header).
pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = read_manifest(dir)?;
    let data_path = dir.join(&manifest.data_file);
    let path_str = data_path.display().to_string();
    let data_err = |row: usize, col: usize, msg: String| Error::Data {
        path: path_str.clone(),
        row,
        col,
        msg,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&data_path)
        .map_err(|e| csv_err(&data_path, e))?;
    let expected = manifest.header();
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(&data_path, e))?,
        None => return Err(data_err(1, 0, "empty file, expected a header".into())),
    };
    if header.len() != expected.len() {
        return Err(data_err(
            1,
            header.len().min(expected.len()) + 1,
            format!("header has {} columns, expected {}", header.len(), expected.len()),
        ));
    }
    for (c, (got, want)) in header.iter().zip(&expected).enumerate() {
        if got != want {
            return Err(data_err(1, c + 1, format!("header column `{got}`, expected `{want}`")));
        }
    }

    let dims = manifest.input_dims();
    let mut ids = Vec::with_capacity(manifest.n);
    let mut samples = Vec::with_capacity(manifest.n);
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(&data_path, e))?;
        if rec.len() != expected.len() {
            return Err(data_err(
                row,
                rec.len().min(expected.len()) + 1,
                format!("row has {} fields, expected {}", rec.len(), expected.len()),
            ));
        }
        let mut col = 1;
        let mut next = |rec: &csv::StringRecord| -> Result<f64> {
            col += 1;
            let raw = &rec[col - 1];
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| data_err(row, col, format!("`{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(data_err(row, col, format!("non-finite value `{raw}`")));
            }
            Ok(v)
        };
        let mut x = Vec::with_capacity(dims.len());
        for &j in &dims {
            x.push((0..j).map(|_| next(&rec)).collect::<Result<Vector>>()?);
        }
        let y = (0..manifest.outcome_dim).map(|_| next(&rec)).collect::<Result<Vector>>()?;
        ids.push(rec[0].to_string());
        samples.push(MultiModalSample { x, y });
    }
    if samples.len() != manifest.n {
        return Err(data_err(
            samples.len() + 2,
            0,
            format!("expected {} subject rows, found {}", manifest.n, samples.len()),
        ));
    }
    Ok((
        Dataset {
            subject_ids: ids,
            samples,
        },
        manifest,
    ))
}

/// Writes a simulated scenario (train rows then test rows) with its sidecar.
pub fn write_sim_dataset(sim: &SimData, scenario: &SimScenario, dir: &Path) -> Result<DatasetManifest> {
    let ds = Dataset::from_split(&sim.split);
    let cells = scenario.cells();
    let mut manifest = DatasetManifest::new(&vec![cells; scenario.modalities], cells, ds.len());
    manifest.grid_shape = Some(vec![scenario.d; 3]);
    manifest.split = Some(SplitSizes {
        train: sim.split.train.len(),
        test: sim.split.test.len(),
    });
    manifest.beta_sidecar = Some(BETA_FILE.into());
    write_dataset(&ds, &manifest, dir)?;
    let sidecar = BetaSidecar {
        scenario: scenario.clone(),
        coefficients: sim.coefficients.clone(),
        noise: sim
            .train_noise
            .iter()
            .chain(&sim.test_noise)
            .map(|v| v.to_vec())
            .collect(),
    };
    write_json(&sidecar, &dir.join(BETA_FILE))?;
    Ok(manifest)
}

/// Loads the sidecar named by the manifest.
pub fn read_beta_sidecar(dir: &Path, manifest: &DatasetManifest) -> Result<BetaSidecar> {
    let name = manifest
        .beta_sidecar
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset has no beta sidecar".into()))?;
    let path: PathBuf = dir.join(name);
    read_json(&path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
    /// False for zero-variance columns, which are left untouched.
    pub scaled: bool,
}

/// Per-column statistics of every input modality, fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationRecord {
    pub columns: Vec<Vec<ColumnStats>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl StandardizationRecord {
    /// Fits column means and sample standard deviations (n − 1).
    pub fn fit(train: &[MultiModalSample]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardization needs at least 2 subjects, got {}",
                train.len()
            )));
        }
        let n = train.len() as f64;
        let mut columns = Vec::new();
        let mut warnings = Vec::new();
        for k in 0..train[0].x.len() {
            let dim = train[0].x[k].len();
            let mut stats = Vec::with_capacity(dim);
            for j in 0..dim {
                let mean = train.iter().map(|s| s.x[k][j]).sum::<f64>() / n;
                let var = train.iter().map(|s| (s.x[k][j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let sd = var.sqrt();
                let scaled = sd > 0.0 && sd.is_finite();
                if !scaled {
                    let msg = format!("modality {k} column {j} has zero variance; left unscaled");
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                stats.push(ColumnStats { mean, sd, scaled });
            }
            columns.push(stats);
        }
        Ok(StandardizationRecord { columns, warnings })
    }

    fn check(&self, s: &MultiModalSample) -> Result<()> {
        if s.x.len() != self.columns.len() || s.x.iter().zip(&self.columns).any(|(x, c)| x.len() != c.len()) {
            return Err(Error::shape(
                "StandardizationRecord",
                format!("{:?}", self.columns.iter().map(Vec::len).collect::<Vec<_>>()),
                format!("{:?}", s.x.iter().map(|x| x.len()).collect::<Vec<_>>()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, samples: &mut [MultiModalSample]) -> Result<()> {
        for s in samples {
            self.check(s)?;
            for (x, cols) in s.x.iter_mut().zip(&self.columns) {
                for (v, c) in x.iter_mut().zip(cols) {
                    if c.scaled {
                        *v = (*v - c.mean) / c.sd;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn invert(&self, samples: &mut [MultiModalSample]) -> Result<()> {
        for s in samples {
            self.check(s)?;
            for (x, cols) in s.x.iter_mut().zip(&self.columns) {
                for (v, c) in x.iter_mut().zip(cols) {
                    if c.scaled {
                        *v = *v * c.sd + c.mean;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Z-scores every input column by training statistics; outcomes are untouched.
pub fn standardize(ds: &SplitDataset) -> Result<(SplitDataset, StandardizationRecord)> {
    let record = StandardizationRecord::fit(&ds.train)?;
    let mut out = ds.clone();
    record.apply(&mut out.train)?;
    record.apply(&mut out.test)?;
    Ok((out, record))
}

/// Seeded random partition of `0..n` into `(train, test)` with
/// `test = round(0.2 n)`; both index lists are sorted.
pub fn split_indices_80_20(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::InvalidArgument(format!("80/20 split needs n >= 5, got {n}")));
    }
    let n_test = (0.2 * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    let mut test = idx.split_off(n - n_test);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

pub fn split_80_20(samples: &[MultiModalSample], seed: u64) -> Result<SplitDataset> {
    let (train, test) = split_indices_80_20(samples.len(), seed)?;
    Ok(SplitDataset {
        train: train.iter().map(|&i| samples[i].clone()).collect(),
        test: test.iter().map(|&i| samples[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::gen_scenario;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        Dataset::from_samples(
            (0..n)
                .map(|_| MultiModalSample {
                    x: vec![rng.gauss_vec(3, 0.0, 1.0).unwrap(), rng.gauss_vec(2, 5.0, 1e-3).unwrap()],
                    y: rng.gauss_vec(2, 0.0, 1e10).unwrap(),
                })
                .collect(),
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(17, 1);
        let manifest = DatasetManifest::new(&[3, 2], 2, 17);
        write_dataset(&ds, &manifest, dir.path()).unwrap();
        let (back, m2) = read_dataset(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(back.subject_ids, ds.subject_ids);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            for (xa, xb) in a.x.iter().zip(&b.x) {
                for (u, v) in xa.iter().zip(xb.iter()) {
                    assert_eq!(u.to_bits(), v.to_bits());
                }
            }
            for (u, v) in a.y.iter().zip(b.y.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&toy(4, 2), &DatasetManifest::new(&[3, 2], 2, 4), dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 30]).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data { row: 5, .. }), "{msg}");
        assert!(msg.contains("data.csv:5:"), "{msg}");
    }

    #[test]
    fn missing_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&toy(4, 2), &DatasetManifest::new(&[3, 2], 2, 4), dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(3).collect();
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("expected 4 subject rows, found 2"), "{err}");
    }

    #[test]
    fn nan_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&toy(3, 3), &DatasetManifest::new(&[3, 2], 2, 3), dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<&str> = lines[2].split(',').collect();
        cells[4] = "NaN";
        lines[2] = cells.join(",");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        match read_dataset(dir.path()).unwrap_err() {
            Error::Data { row, col, .. } => assert_eq!((row, col), (3, 5)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&toy(3, 3), &DatasetManifest::new(&[3, 2], 2, 3), dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let text = std::fs::read_to_string(&path).unwrap().replacen("x2_0", "x9_0", 1);
        std::fs::write(&path, text).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains(":1:5:") && err.contains("x9_0"), "{err}");
    }

    #[test]
    fn unknown_manifest_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&toy(3, 3), &DatasetManifest::new(&[3, 2], 2, 3), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen('{', "{\n  \"colour\": 1,", 1);
        std::fs::write(&path, text).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn sim_dataset_replays_from_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let sc = SimScenario::new(30, 2, 1, 0.1, 4);
        let sim = gen_scenario(&sc).unwrap();
        let manifest = write_sim_dataset(&sim, &sc, dir.path()).unwrap();
        let (ds, m2) = read_dataset(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        let side = read_beta_sidecar(dir.path(), &m2).unwrap();
        assert_eq!(side.coefficients, sim.coefficients);
        assert!(side.replay_matches(&ds.samples).unwrap());
        let split = ds.into_split(&m2).unwrap();
        assert_eq!(split, sim.split);
    }

    #[test]
    fn standardize_centers_and_scales() {
        let ds = toy(50, 5);
        let split = SplitDataset {
            train: ds.samples[..40].to_vec(),
            test: ds.samples[40..].to_vec(),
        };
        let (out, rec) = standardize(&split).unwrap();
        for k in 0..2 {
            for j in 0..out.train[0].x[k].len() {
                let col: Vec<f64> = out.train.iter().map(|s| s.x[k][j]).collect();
                let mean = col.iter().sum::<f64>() / 40.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 39.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-8);
            }
        }
        assert_eq!(out.train[0].y, split.train[0].y);
        let mut back = out.test.clone();
        rec.invert(&mut back).unwrap();
        for (a, b) in back.iter().zip(&split.test) {
            for (u, v) in a.x[0].iter().zip(b.x[0].iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let (once, _) = standardize(&SplitDataset {
            train: toy(30, 6).samples,
            test: vec![],
        })
        .unwrap();
        let (twice, _) = standardize(&once).unwrap();
        for (a, b) in once.train.iter().zip(&twice.train) {
            for (u, v) in a.x[0].iter().zip(b.x[0].iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_column_left_alone_with_warning() {
        let mut train = toy(10, 7).samples;
        for s in &mut train {
            s.x[0][1] = 3.5;
        }
        let (out, rec) = standardize(&SplitDataset { train: train.clone(), test: vec![] }).unwrap();
        assert_eq!(rec.warnings.len(), 1);
        assert!(rec.warnings[0].contains("column 1"));
        assert!(out.train.iter().all(|s| s.x[0][1] == 3.5));
    }

    #[test]
    fn standardize_needs_two_subjects() {
        assert!(StandardizationRecord::fit(&toy(1, 1).samples).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        for n in [5, 10, 711] {
            let (train, test) = split_indices_80_20(n, 42).unwrap();
            assert_eq!(test.len(), (0.2 * n as f64).round() as usize);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert_eq!(split_indices_80_20(10, 1).unwrap().0.len(), 8);
        assert_eq!(split_indices_80_20(10, 3).unwrap(), split_indices_80_20(10, 3).unwrap());
        assert!(split_indices_80_20(4, 0).is_err());
    }

    #[test]
    fn split_moves_samples() {
        let ds = toy(10, 8);
        let split = split_80_20(&ds.samples, 9).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (8, 2));
        let (_, test) = split_indices_80_20(10, 9).unwrap();
        assert_eq!(split.test[0], ds.samples[test[0]]);
    }
}
