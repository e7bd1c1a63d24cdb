//! Seeded generators for random SPD matrices and labelled toy datasets.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::LabeledDataset;
use crate::spd::{Matrix, SpdMatrix, SymMatrix};

/// Random SPD matrix `G Gᵀ / d + shift · I` with Gaussian `G`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, shift: f64) -> SpdMatrix {
    let g = random_gaussian_matrix(rng, dim, dim);
    let mut m = g.matmul(&g.transpose()).expect("square").scale(1.0 / dim as f64);
    for i in 0..dim {
        m[(i, i)] += shift;
    }
    SpdMatrix::new(SymMatrix::new(m).expect("square")).expect("shifted Gram matrix is SPD")
}

/// Random SPD matrix with eigenvalues spread over `[1, cond]` in a random basis.
pub fn random_spd_with_condition<R: Rng + ?Sized>(rng: &mut R, dim: usize, cond: f64) -> SpdMatrix {
    let q = random_orthogonal(rng, dim);
    let eig: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                1.0
            } else {
                cond.powf(i as f64 / (dim - 1) as f64)
            }
        })
        .collect();
    let qd = q.matmul(&Matrix::from_diag(&eig)).expect("square");
    let m = qd.matmul(&q.transpose()).expect("square");
    SpdMatrix::new(SymMatrix::new(m).expect("square")).expect("well-conditioned")
}

pub fn random_gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    Matrix::from_row_major(rows, cols, data).expect("sized")
}

/// Orthogonal matrix from modified Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Matrix {
    let g = random_gaussian_matrix(rng, dim, dim);
    let mut cols: Vec<Vec<f64>> = (0..dim)
        .map(|j| (0..dim).map(|i| g[(i, j)]).collect())
        .collect();
    for j in 0..dim {
        for k in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let ck = cols[k].clone();
            for (a, b) in cols[j].iter_mut().zip(&ck) {
                *a -= dot * b;
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for a in cols[j].iter_mut() {
            *a /= norm;
        }
    }
    let mut q = Matrix::zeros(dim, dim);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    q
}

/// Isotropic Gaussian blobs: class `c` is centred at `centers[c]` with
/// per-coordinate standard deviation `sigma`, `per_class` points each.
pub fn gaussian_blobs<R: Rng + ?Sized>(
    rng: &mut R,
    centers: &[Vec<f64>],
    sigma: f64,
    per_class: usize,
) -> LabeledDataset {
    let dim = centers[0].len();
    let mut points = Vec::with_capacity(centers.len() * per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut *rng);
                points.push(c + sigma * z);
            }
            labels.push(label);
        }
    }
    LabeledDataset::new(points, dim, labels).expect("generated data is valid")
}

/// Two classes separated only along feature 0 (means `±separation / 2`,
/// unit spread); the remaining `noise_dims` features are pure noise with
/// standard deviation `noise_sigma`.
pub fn anisotropic_two_class<R: Rng + ?Sized>(
    rng: &mut R,
    per_class: usize,
    noise_dims: usize,
    separation: f64,
    noise_sigma: f64,
) -> LabeledDataset {
    let dim = 1 + noise_dims;
    let mut points = Vec::with_capacity(2 * per_class * dim);
    let mut labels = Vec::with_capacity(2 * per_class);
    for label in 0..2usize {
        let mean = if label == 0 { -separation / 2.0 } else { separation / 2.0 };
        for _ in 0..per_class {
            let z: f64 = StandardNormal.sample(&mut *rng);
            points.push(mean + z);
            for _ in 0..noise_dims {
                let z: f64 = StandardNormal.sample(&mut *rng);
                points.push(noise_sigma * z);
            }
            labels.push(label);
        }
    }
    LabeledDataset::new(points, dim, labels).expect("generated data is valid")
}

/// Dataset whose points span only a `rank`-dimensional subspace of
/// `R^dim`, so within-class scatter is singular.
pub fn rank_deficient<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    rank: usize,
    classes: usize,
    per_class: usize,
) -> LabeledDataset {
    let basis = random_gaussian_matrix(rng, rank, dim);
    let mut points = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::new();
    for label in 0..classes {
        let offset: Vec<f64> = (0..rank)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                4.0 * z
            })
            .collect();
        for _ in 0..per_class {
            let coeffs: Vec<f64> = offset
                .iter()
                .map(|o| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    o + z
                })
                .collect();
            for j in 0..dim {
                points.push((0..rank).map(|r| coeffs[r] * basis[(r, j)]).sum());
            }
            labels.push(label);
        }
    }
    LabeledDataset::new(points, dim, labels).expect("generated data is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(&mut rng, 6);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(crate::spd::rel_frobenius_diff(&qtq, &Matrix::identity(6)) < 1e-12);
    }

    #[test]
    fn conditioned_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spd_with_condition(&mut rng, 5, 100.0);
        let ev = a.eigenvalues().unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-10);
        assert!((ev[4] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn blob_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = gaussian_blobs(&mut rng, &[vec![0.0, 0.0], vec![10.0, 0.0]], 1.0, 7);
        assert_eq!(ds.len(), 14);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), 2);
    }
}
