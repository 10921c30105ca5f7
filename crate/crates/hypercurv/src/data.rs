//! Datasets: synthetic tree generation, CSV ingestion, splits, and the
//! Gromov four-point δ-hyperbolicity statistic.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Maximum leaf count of the tree generator.
pub const MAX_LEAVES: usize = 100_000;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// (n × d) feature matrix.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub name: String,
    /// File path or generator seed the data came from.
    pub provenance: String,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, name: String, provenance: String) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Contract("dataset features must be rank 2".into()));
        }
        let n = features.shape()[0];
        if n < 2 {
            return Err(Error::Contract("dataset needs at least two rows".into()));
        }
        if labels.len() != n {
            return Err(Error::Contract("feature/label count mismatch".into()));
        }
        if !features.is_finite() {
            return Err(Error::Contract("non-finite features".into()));
        }
        Ok(Dataset {
            features,
            labels,
            name,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.labels {
            seen.insert(l);
        }
        seen.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    pub fn euclidean_distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Write as a CSV with feature columns `f0..f{d-1}` and a `label` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|x| format!("{x:?}")).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian sample via Box–Muller.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gauss(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Embed the leaves of a balanced tree: each child sits at its parent plus a
/// random unit step scaled by 2^{−level}; leaves get Gaussian noise σ. The
/// label of a leaf is the root child its subtree hangs from.
pub fn gen_tree_dataset(
    depth: usize,
    branching: usize,
    noise_sigma: f64,
    d_in: usize,
    seed: u64,
) -> Result<Dataset> {
    if depth < 2 || branching < 2 {
        return Err(Error::Config(format!(
            "tree needs depth ≥ 2 and branching ≥ 2, got ({depth}, {branching})"
        )));
    }
    if d_in == 0 {
        return Err(Error::Config("tree feature dimension must be ≥ 1".into()));
    }
    let leaves = (branching as u128).pow(depth as u32);
    if leaves > MAX_LEAVES as u128 {
        return Err(Error::Size(format!(
            "{leaves} leaves exceed the cap of {MAX_LEAVES}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Level-order expansion; only the frontier is kept.
    let mut frontier: Vec<(Vec<f64>, usize)> = vec![(vec![0.0; d_in], usize::MAX)];
    for level in 1..=depth {
        let scale = 0.5f64.powi(level as i32);
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for (parent_pos, root_child) in &frontier {
            for b in 0..branching {
                let step = random_unit(&mut rng, d_in);
                let pos: Vec<f64> = parent_pos
                    .iter()
                    .zip(&step)
                    .map(|(p, s)| p + scale * s)
                    .collect();
                let label = if level == 1 { b } else { *root_child };
                next.push((pos, label));
            }
        }
        frontier = next;
    }
    let mut data = Vec::with_capacity(frontier.len() * d_in);
    let mut labels = Vec::with_capacity(frontier.len());
    for (pos, label) in &frontier {
        for &x in pos {
            data.push(x + noise_sigma * gauss(&mut rng));
        }
        labels.push(*label);
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, d_in], data)?,
        labels,
        format!("tree-d{depth}-b{branching}"),
        format!("seed={seed},sigma={noise_sigma}"),
    )
}

/// Parse a headed CSV: every column except `label_column` must be numeric;
/// labels map to indices in first-appearance order.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: label_column.into(),
            message: "label column not found in header".into(),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (row_i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_i + 2,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_i + 2,
                column: String::new(),
                message: format!(
                    "ragged row: {} fields, header has {}",
                    record.len(),
                    headers.len()
                ),
            });
        }
        for (col_i, field) in record.iter().enumerate() {
            if col_i == label_idx {
                let name = field.to_string();
                let id = match label_names.iter().position(|l| l == &name) {
                    Some(id) => id,
                    None => {
                        label_names.push(name);
                        label_names.len() - 1
                    }
                };
                labels.push(id);
            } else {
                let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    row: row_i + 2,
                    column: headers[col_i].to_string(),
                    message: format!("non-numeric feature {field:?}"),
                })?;
                data.push(value);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    let n = labels.len();
    let d = feature_names.len();
    Dataset::new(
        Tensor::new(vec![n, d], data)?,
        labels,
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into()),
        path.display().to_string(),
    )
}

/// Disjoint seeded train/validation split by shuffled indices.
pub fn split_dataset(
    ds: &Dataset,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction <= 1.0 + 1e-12)
    {
        return Err(Error::Config("bad split fractions".into()));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher–Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((n as f64) * train_fraction).round().max(1.0) as usize;
    let n_val = (((n as f64) * val_fraction).round().max(1.0) as usize).min(n - n_train);
    if n_train == 0 || n_val == 0 || n_train + n_val > n {
        return Err(Error::Config(format!(
            "split ({n_train}, {n_val}) infeasible for {n} rows"
        )));
    }
    let take = |ids: &[usize], tag: &str| -> Result<Dataset> {
        let d = ds.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        let mut labels = Vec::with_capacity(ids.len());
        for &i in ids {
            data.extend_from_slice(&ds.features.data()[i * d..(i + 1) * d]);
            labels.push(ds.labels[i]);
        }
        Dataset::new(
            Tensor::new(vec![ids.len(), d], data)?,
            labels,
            format!("{}-{tag}", ds.name),
            ds.provenance.clone(),
        )
    };
    Ok((
        take(&idx[..n_train], "train")?,
        take(&idx[n_train..n_train + n_val], "val")?,
    ))
}

/// Sampled Gromov four-point δ over an arbitrary distance function,
/// normalized by the maximum sampled distance.
pub fn delta_hyperbolicity_metric(
    n_points: usize,
    dist: impl Fn(usize, usize) -> f64,
    n_quadruples: usize,
    seed: u64,
) -> Result<f64> {
    if n_points < 4 {
        return Err(Error::Size(format!(
            "δ-hyperbolicity needs ≥ 4 points, got {n_points}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_delta: f64 = 0.0;
    let mut max_dist: f64 = 0.0;
    for _ in 0..n_quadruples {
        // four distinct indices
        let mut ids = [0usize; 4];
        let mut filled = 0;
        while filled < 4 {
            let cand = rng.gen_range(0..n_points);
            if !ids[..filled].contains(&cand) {
                ids[filled] = cand;
                filled += 1;
            }
        }
        let [x, y, z, w] = ids;
        let dxy = dist(x, y);
        let dzw = dist(z, w);
        let dxz = dist(x, z);
        let dyw = dist(y, w);
        let dxw = dist(x, w);
        let dyz = dist(y, z);
        for d in [dxy, dzw, dxz, dyw, dxw, dyz] {
            max_dist = max_dist.max(d);
        }
        let mut sums = [dxy + dzw, dxz + dyw, dxw + dyz];
        sums.sort_by(|a, b| b.partial_cmp(a).unwrap());
        max_delta = max_delta.max((sums[0] - sums[1]) / 2.0);
    }
    if max_dist == 0.0 {
        return Ok(0.0);
    }
    Ok(max_delta / max_dist)
}

/// Relative four-point δ of a dataset under Euclidean feature distances.
pub fn delta_hyperbolicity(ds: &Dataset, n_quadruples: usize, seed: u64) -> Result<f64> {
    delta_hyperbolicity_metric(ds.len(), |i, j| ds.euclidean_distance(i, j), n_quadruples, seed)
}
