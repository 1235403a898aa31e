use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Labeled examples: a row-major `len × dim` feature matrix and labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    pub name: String,
    pub seed_of_origin: u64,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
        seed_of_origin: u64,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("dataset must contain at least one example"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::shape(format!("{} feature values for {} rows of dim {dim}", features.len(), labels.len())));
        }
        if num_classes < 2 {
            return Err(Error::data("need at least two classes"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::data(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::data("NaN feature value"));
        }
        Ok(Dataset { features, dim, labels, num_classes, name: name.into(), seed_of_origin })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::data(format!("index {i} out of range for {} rows", self.len())));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, self.dim, labels, self.num_classes, self.name.clone(), self.seed_of_origin)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// CSV with header `f0,…,f{d-1},label`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV form. The class count is `max(label) + 1` unless given.
    pub fn read_csv<R: Read>(r: R, name: &str, num_classes: Option<usize>) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = header.len().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| Error::data("CSV needs feature columns and a label"))?;
        for (j, h) in header.iter().enumerate().take(dim) {
            if h != format!("f{j}") {
                return Err(Error::data(format!("unexpected column `{h}`, wanted `f{j}`")));
            }
        }
        if &header[dim] != "label" {
            return Err(Error::data("last column must be `label`"));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter().take(dim) {
                features.push(field.parse::<f64>().map_err(|e| Error::data(format!("bad feature `{field}`: {e}")))?);
            }
            let y = &rec[dim];
            labels.push(y.parse::<usize>().map_err(|e| Error::data(format!("bad label `{y}`: {e}")))?);
        }
        let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(features, dim, labels, classes, name, 0)
    }

    /// Compact binary form: magic, dims, labels as u32, features as f64, little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"ULDS")?;
        for v in [self.len() as u64, self.dim as u64, self.num_classes as u64, self.seed_of_origin] {
            w.write_all(&v.to_le_bytes())?;
        }
        let name = self.name.as_bytes();
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name)?;
        for &y in &self.labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
        for v in &self.features {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"ULDS" {
            return Err(Error::data("not a binary dataset"));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next(&mut r)? as usize;
        let dim = next(&mut r)? as usize;
        let classes = next(&mut r)? as usize;
        let seed = next(&mut r)?;
        let name_len = next(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::data("dataset name is not UTF-8"))?;
        let mut labels = Vec::with_capacity(n);
        let mut b4 = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            labels.push(u32::from_le_bytes(b4) as usize);
        }
        let mut features = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            r.read_exact(&mut word)?;
            features.push(f64::from_le_bytes(word));
        }
        Dataset::new(features, dim, labels, classes, name, seed)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Isotropic Gaussian clusters whose means are seeded points on the unit sphere.
///
/// Rows are grouped by class: `per_class` rows of class 0, then class 1, and so on.
pub fn generate_blobs(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class < 2 || dim == 0 {
        return Err(Error::config(format!("blobs need classes >= 2, per_class >= 2, dim >= 1 (got {classes}, {per_class}, {dim})")));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::config(format!("spread must be a finite nonnegative number, got {spread}")));
    }
    let mut rng = rng::seeded(seed, 0);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut m: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        m.iter_mut().for_each(|v| *v /= norm);
        means.push(m);
    }
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(mu + spread * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, dim, labels, classes, format!("blobs-{classes}x{dim}"), seed)
}

/// Seeded uniform partition into `(target, shadow)`.
///
/// The target part holds `floor(fraction * n)` rows, clamped so that both parts
/// are non-empty. Each part keeps the original row order.
pub fn split_target_shadow(data: &Dataset, target_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::config(format!("target fraction must lie in (0, 1), got {target_fraction}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::config("need at least two rows to split"));
    }
    let n_target = ((target_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed, 0));
    let mut target_idx = order[..n_target].to_vec();
    let mut shadow_idx = order[n_target..].to_vec();
    target_idx.sort_unstable();
    shadow_idx.sort_unstable();
    let mut target = data.subset(&target_idx)?;
    let mut shadow = data.subset(&shadow_idx)?;
    target.name = format!("{}/target", data.name);
    shadow.name = format!("{}/shadow", data.name);
    Ok((target, shadow))
}
