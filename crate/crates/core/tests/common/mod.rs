//! Reference linear algebra on `Vec<Vec<f64>>`, written independently of the
//! library so it can serve as an oracle.
#![allow(dead_code)]

use gmml::spd::{Matrix, SpdMatrix, SymMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dense(m: &SymMatrix) -> Dense {
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn from_dense(m: &Dense) -> SymMatrix {
    SymMatrix::new(Matrix::from_rows(m)).unwrap()
}

pub fn spd(m: &Dense) -> SpdMatrix {
    SpdMatrix::new(from_dense(m)).unwrap()
}

pub fn eye(n: usize) -> Dense {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn sub(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect()
}

pub fn scale(a: &Dense, s: f64) -> Dense {
    a.iter().map(|r| r.iter().map(|x| x * s).collect()).collect()
}

pub fn sym(a: &Dense) -> Dense {
    scale(&add(a, &transpose(a)), 0.5)
}

pub fn fro(a: &Dense) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_diff(a: &Dense, b: &Dense) -> f64 {
    fro(&sub(a, b)) / fro(b)
}

pub fn trace(a: &Dense) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a.iter().zip(eye(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 0.0, "singular matrix in oracle inverse");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, pv) in m[i].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Cyclic Jacobi eigensolver: returns (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    let n = a.len();
    let mut m = a.clone();
    let mut v = eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off.sqrt() <= 1e-15 * fro(&m).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}

/// `V f(Λ) Vᵀ` from the Jacobi decomposition.
pub fn matrix_fn(a: &Dense, f: impl Fn(f64) -> f64) -> Dense {
    let (vals, v) = jacobi_eigen(a);
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for k in 0..n {
        let fk = f(vals[k]);
        for i in 0..n {
            for j in 0..n {
                out[i][j] += v[i][k] * fk * v[j][k];
            }
        }
    }
    sym(&out)
}

/// Arithmetic–harmonic mean iteration; converges to the geometric mean.
pub fn ahm_mean(a: &Dense, b: &Dense) -> Dense {
    let (mut x, mut y) = (a.clone(), b.clone());
    for _ in 0..200 {
        if fro(&sub(&x, &y)) < 1e-14 * fro(&x).max(1.0) {
            break;
        }
        let nx = scale(&add(&x, &y), 0.5);
        let ny = scale(&inverse(&add(&inverse(&x), &inverse(&y))), 2.0);
        x = sym(&nx);
        y = sym(&ny);
    }
    x
}

/// Riemannian distance via Jacobi eigenvalues of `Y^{-1/2} X Y^{-1/2}`.
pub fn riem_dist(x: &Dense, y: &Dense) -> f64 {
    let yih = matrix_fn(y, |l| 1.0 / l.sqrt());
    let m = sym(&mul(&mul(&yih, x), &yih));
    jacobi_eigen(&m).0.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt()
}

pub fn random_dense_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Dense {
    let g: Dense = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut a = scale(&mul(&g, &transpose(&g)), 1.0 / n as f64);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += shift;
    }
    sym(&a)
}

pub fn random_sym<R: Rng>(rng: &mut R, n: usize) -> Dense {
    let g: Dense = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    sym(&g)
}

/// SPD probe near `a`: `(I + εE) a (I + εE)ᵀ` for random `E`.
pub fn probe_near<R: Rng>(rng: &mut R, a: &Dense, eps: f64) -> Dense {
    let n = a.len();
    let e: Dense = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } + eps * rng.random_range(-1.0..1.0)).collect())
        .collect();
    sym(&mul(&mul(&e, a), &transpose(&e)))
}
