//! Labelled point sets in `R^d`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `n` points in `R^d` (row-major) with integer class labels in `[0, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    name: Option<String>,
    label_names: Option<Vec<String>>,
    feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    /// Builds a dataset; the class count is `max(label) + 1`.
    pub fn new(points: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        let c = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_num_classes(points, dim, labels, c)
    }

    pub fn with_num_classes(
        points: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension must be at least 1".into()));
        }
        if points.len() != labels.len() * dim {
            return Err(Error::InvalidLength {
                expected: labels.len() * dim,
                found: points.len(),
            });
        }
        if labels.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 points, got {}",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("need at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            points,
            dim,
            labels,
            num_classes,
            name: None,
            label_names: None,
            feature_names: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Self {
        self.label_names = Some(names);
        self
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = Some(names);
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Number of points per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of the points of each class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            idx[l].push(i);
        }
        idx
    }

    /// Dataset restricted to `indices`, keeping the label universe and
    /// metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidDataset(format!(
                    "index {i} out of range for {} points",
                    self.len()
                )));
            }
            points.extend_from_slice(self.point(i));
            labels.push(self.labels[i]);
        }
        let mut out = Self::with_num_classes(points, self.dim, labels, self.num_classes)?;
        out.name.clone_from(&self.name);
        out.label_names.clone_from(&self.label_names);
        out.feature_names.clone_from(&self.feature_names);
        Ok(out)
    }

    /// Copy with every point mapped through `f`, which must return
    /// `out_dim` values.
    pub(crate) fn map_points(&self, out_dim: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut points = Vec::with_capacity(self.len() * out_dim);
        for i in 0..self.len() {
            points.extend(f(self.point(i)));
        }
        let mut out = Self::with_num_classes(points, out_dim, self.labels.clone(), self.num_classes)?;
        out.name.clone_from(&self.name);
        out.label_names.clone_from(&self.label_names);
        Ok(out)
    }

    pub fn fingerprint(&self) -> DatasetFingerprint {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for v in &self.points {
            hasher.update(v.to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            hasher.update((l as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        DatasetFingerprint {
            n: self.len(),
            d: self.dim,
            c: self.num_classes,
            hash: format!("{:016x}", u64::from_le_bytes(head)),
        }
    }
}

/// Shape and 64-bit content hash of a dataset's points and labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub hash: String,
}

/// Per-feature z-scoring fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    /// Fits means and standard deviations; constant features get scale 1.
    pub fn fit(data: &LabeledDataset) -> Self {
        let n = data.len() as f64;
        let d = data.dim();
        let mut means = vec![0.0; d];
        for i in 0..data.len() {
            for (m, v) in means.iter_mut().zip(data.point(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for i in 0..data.len() {
            for ((s, v), m) in vars.iter_mut().zip(data.point(i)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let scales = vars
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, scales }
    }

    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        if data.dim() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                found: data.dim(),
            });
        }
        data.map_points(data.dim(), |p| {
            p.iter()
                .zip(&self.means)
                .zip(&self.scales)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset {
        LabeledDataset::new(vec![0.0, 0.0, 1.0, 1.0, 2.0, 4.0], 2, vec![0, 1, 1]).unwrap()
    }

    #[test]
    fn rejects_invalid() {
        assert!(LabeledDataset::new(vec![1.0], 1, vec![0]).is_err());
        assert!(LabeledDataset::new(vec![1.0, 2.0, 3.0], 2, vec![0, 0]).is_err());
        assert!(LabeledDataset::new(vec![1.0, f64::NAN], 1, vec![0, 0]).is_err());
        assert!(LabeledDataset::with_num_classes(vec![1.0, 2.0], 1, vec![0, 2], 2).is_err());
        assert!(LabeledDataset::new(vec![], 0, vec![]).is_err());
    }

    #[test]
    fn subset_keeps_label_universe() {
        let ds = toy();
        let sub = ds.subset(&[1, 2]).unwrap();
        assert_eq!(sub.num_classes(), 2);
        assert_eq!(sub.point(1), &[2.0, 4.0]);
        assert!(ds.subset(&[0, 9]).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = toy();
        assert_eq!(a.fingerprint(), toy().fingerprint());
        let moved = LabeledDataset::new(vec![0.0, 0.0, 1.0, 1.0, 2.0, 4.5], 2, vec![0, 1, 1]).unwrap();
        assert_ne!(a.fingerprint().hash, moved.fingerprint().hash);
        let relabeled = LabeledDataset::new(a.points().to_vec(), 2, vec![1, 1, 0]).unwrap();
        assert_ne!(a.fingerprint().hash, relabeled.fingerprint().hash);
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let ds = toy();
        let z = Standardizer::fit(&ds).apply(&ds).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| z.point(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / 3.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
