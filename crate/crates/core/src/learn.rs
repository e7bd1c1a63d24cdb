//! Geometric mean metric learning.
//!
//! Given similar pairs `S` and dissimilar pairs `D`, the learned metric is a
//! point on the SPD geodesic between the inverse similarity scatter and the
//! dissimilarity scatter:
//!
//! ```text
//! A = (S + λ A0⁻¹)⁻¹ ♯_t (D + λ A0)
//! ```
//!
//! With `λ = 0` and `t = 1/2` this is the unique SPD solution of the Riccati
//! equation `A S A = D`, i.e. the minimizer of `tr(A S) + tr(A⁻¹ D)`.

use crate::dataset::{DatasetFingerprint, LabeledDataset};
use crate::error::{Error, Result, ScatterKind};
use crate::spd::{
    riemannian_distance, sld_divergence, GeodesicPath, Matrix, SpdMatrix, SymMatrix,
};

/// Index pairs into a dataset: same-class pairs and different-class pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairConstraints {
    sim_pairs: Vec<(usize, usize)>,
    dis_pairs: Vec<(usize, usize)>,
}

impl PairConstraints {
    pub fn new(sim_pairs: Vec<(usize, usize)>, dis_pairs: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(i, _)) = sim_pairs.iter().chain(&dis_pairs).find(|(i, j)| i == j) {
            return Err(Error::InvalidConstraints(format!("self-pair ({i}, {i})")));
        }
        Ok(Self {
            sim_pairs,
            dis_pairs,
        })
    }

    pub fn sim_pairs(&self) -> &[(usize, usize)] {
        &self.sim_pairs
    }

    pub fn dis_pairs(&self) -> &[(usize, usize)] {
        &self.dis_pairs
    }

    pub fn len(&self) -> usize {
        self.sim_pairs.len() + self.dis_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every index against a dataset of `n` points.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        for &(i, j) in self.sim_pairs.iter().chain(&self.dis_pairs) {
            if i >= n || j >= n {
                return Err(Error::InvalidConstraints(format!(
                    "pair ({i}, {j}) out of range for {n} points"
                )));
            }
        }
        Ok(())
    }
}

/// Similarity and dissimilarity scatter matrices (raw sums of outer
/// products of pair differences, not normalized by pair counts).
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrices {
    pub s_mat: SymMatrix,
    pub d_mat: SymMatrix,
    pub sim_count: usize,
    pub dis_count: usize,
}

impl ScatterMatrices {
    /// Wraps precomputed matrices, e.g. for testing the solvers directly.
    pub fn from_matrices(s_mat: SymMatrix, d_mat: SymMatrix) -> Result<Self> {
        if s_mat.dim() != d_mat.dim() {
            return Err(Error::DimensionMismatch {
                expected: s_mat.dim(),
                found: d_mat.dim(),
            });
        }
        Ok(Self {
            s_mat,
            d_mat,
            sim_count: 0,
            dis_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.s_mat.dim()
    }
}

/// Prior metric `A0` for the regularized solver.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Prior {
    #[default]
    Identity,
    Matrix(SpdMatrix),
}

impl Prior {
    pub fn resolve(&self, dim: usize) -> Result<SpdMatrix> {
        match self {
            Prior::Identity => Ok(SpdMatrix::identity(dim)),
            Prior::Matrix(m) if m.dim() == dim => Ok(m.clone()),
            Prior::Matrix(m) => Err(Error::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            }),
        }
    }
}

/// Hyper-parameters: geodesic step `t`, regularization weight `lambda`,
/// prior `A0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmlConfig {
    t: f64,
    lambda: f64,
    prior: Prior,
}

impl Default for GmmlConfig {
    fn default() -> Self {
        Self {
            t: 0.5,
            lambda: 0.0,
            prior: Prior::Identity,
        }
    }
}

impl GmmlConfig {
    pub fn new(t: f64, lambda: f64, prior: Prior) -> Result<Self> {
        check_t(t)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { t, lambda, prior })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn with_t(&self, t: f64) -> Result<Self> {
        Self::new(t, self.lambda, self.prior.clone())
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Where a learned metric came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub sim_count: usize,
    pub dis_count: usize,
    /// `‖A S A − D‖_F / ‖D‖_F` against the (possibly regularized) scatter
    /// matrices. Only defined for `t = 1/2`, where the Riccati equation
    /// characterizes the solution.
    pub riccati_residual: Option<f64>,
    pub dataset: Option<DatasetFingerprint>,
    pub label_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedMetric {
    pub a_mat: SpdMatrix,
    pub config: GmmlConfig,
    pub provenance: Provenance,
}

impl LearnedMetric {
    pub fn dim(&self) -> usize {
        self.a_mat.dim()
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        mahalanobis(&self.a_mat, x, y)
    }
}

/// Squared Mahalanobis distance `(x − y)ᵀ A (x − y)`.
pub fn mahalanobis(a: &SymMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let u: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(a.quadratic_form(&u)?.max(0.0))
}

/// `S = Σ_S (xᵢ − xⱼ)(xᵢ − xⱼ)ᵀ` and `D` likewise over the dissimilar pairs.
pub fn scatter_matrices(data: &LabeledDataset, pairs: &PairConstraints) -> Result<ScatterMatrices> {
    pairs.validate_for(data.len())?;
    let d = data.dim();
    let accumulate = |list: &[(usize, usize)]| -> SymMatrix {
        let mut acc = Matrix::zeros(d, d);
        let mut u = vec![0.0; d];
        for &(i, j) in list {
            for ((uk, a), b) in u.iter_mut().zip(data.point(i)).zip(data.point(j)) {
                *uk = a - b;
            }
            for r in 0..d {
                let ur = u[r];
                if ur == 0.0 {
                    continue;
                }
                for c in r..d {
                    acc[(r, c)] += ur * u[c];
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                acc[(r, c)] = acc[(c, r)];
            }
        }
        SymMatrix::new(acc).expect("square")
    };
    Ok(ScatterMatrices {
        s_mat: accumulate(pairs.sim_pairs()),
        d_mat: accumulate(pairs.dis_pairs()),
        sim_count: pairs.sim_pairs().len(),
        dis_count: pairs.dis_pairs().len(),
    })
}

fn check_dims(a: &SpdMatrix, sc: &ScatterMatrices) -> Result<()> {
    if a.dim() != sc.dim() {
        return Err(Error::DimensionMismatch {
            expected: sc.dim(),
            found: a.dim(),
        });
    }
    Ok(())
}

/// `h(A) = tr(A S) + tr(A⁻¹ D)`.
pub fn objective(a: &SpdMatrix, sc: &ScatterMatrices) -> Result<f64> {
    check_dims(a, sc)?;
    Ok(a.inner_product(&sc.s_mat)? + a.inverse()?.inner_product(&sc.d_mat)?)
}

/// `∇h(A) = S − A⁻¹ D A⁻¹`.
pub fn objective_gradient(a: &SpdMatrix, sc: &ScatterMatrices) -> Result<SymMatrix> {
    check_dims(a, sc)?;
    let ainv = a.inverse()?;
    let pull = sandwich(&ainv, &sc.d_mat)?;
    sc.s_mat.sub(&pull)
}

/// `λ D_sld(A, A0) + tr(A S) + tr(A⁻¹ D)`.
pub fn regularized_objective(
    a: &SpdMatrix,
    sc: &ScatterMatrices,
    lambda: f64,
    prior: &SpdMatrix,
) -> Result<f64> {
    Ok(lambda * sld_divergence(a, prior)? + objective(a, sc)?)
}

/// `λ (A0⁻¹ − A⁻¹ A0 A⁻¹) + S − A⁻¹ D A⁻¹`.
pub fn regularized_gradient(
    a: &SpdMatrix,
    sc: &ScatterMatrices,
    lambda: f64,
    prior: &SpdMatrix,
) -> Result<SymMatrix> {
    let ainv = a.inverse()?;
    let reg = prior.inverse()?.sub(&sandwich(&ainv, prior)?)?;
    objective_gradient(a, sc)?.add(&reg.scale(lambda))
}

/// `(1 − t) δ_R²(A, S⁻¹) + t δ_R²(A, D)`.
pub fn weighted_objective(a: &SpdMatrix, sc: &ScatterMatrices, t: f64) -> Result<f64> {
    let (s, d) = spd_scatter(sc)?;
    let s_inv = s.inverse()?;
    let to_s = riemannian_distance(a, &s_inv)?;
    let to_d = riemannian_distance(a, &d)?;
    Ok((1.0 - t) * to_s * to_s + t * to_d * to_d)
}

/// `M X M` for symmetric `M`, `X`.
fn sandwich(m: &SymMatrix, x: &SymMatrix) -> Result<SymMatrix> {
    let mx = m.as_matrix().matmul(x.as_matrix())?;
    SymMatrix::new(mx.matmul(m.as_matrix())?)
}

/// Relative Riccati residual `‖A S A − D‖_F / ‖D‖_F`.
pub fn riccati_residual(a: &SymMatrix, s: &SymMatrix, d: &SymMatrix) -> Result<f64> {
    let asa = sandwich(a, s)?;
    let diff = asa.sub(d)?.frobenius_norm();
    let scale = d.frobenius_norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

fn spd_scatter(sc: &ScatterMatrices) -> Result<(SpdMatrix, SpdMatrix)> {
    let s = SpdMatrix::new(sc.s_mat.clone()).map_err(|_| Error::SingularScatter {
        which: ScatterKind::Similarity,
        dataset: None,
    })?;
    let d = SpdMatrix::new(sc.d_mat.clone()).map_err(|_| Error::SingularScatter {
        which: ScatterKind::Dissimilarity,
        dataset: None,
    })?;
    Ok((s, d))
}

/// The geodesic between the (possibly regularized) endpoints
/// `(S + λ A0⁻¹)⁻¹` and `D + λ A0`, factored once so that the metric for any
/// step `t` is cheap to produce.
#[derive(Debug, Clone)]
pub struct MetricPath {
    path: GeodesicPath,
    s_eff: SymMatrix,
    d_eff: SymMatrix,
    lambda: f64,
    prior: Prior,
    sim_count: usize,
    dis_count: usize,
}

impl MetricPath {
    /// With `lambda = 0` both scatter matrices must be SPD; otherwise the
    /// error names the singular one.
    pub fn new(sc: &ScatterMatrices, lambda: f64, prior: &Prior) -> Result<Self> {
        let (s_eff, d_eff, s_spd, d_spd) = if lambda == 0.0 {
            let (s, d) = spd_scatter(sc)?;
            (sc.s_mat.clone(), sc.d_mat.clone(), s, d)
        } else {
            let a0 = prior.resolve(sc.dim())?;
            let s_mod = sc.s_mat.add(&a0.inverse()?.scale(lambda))?;
            let d_mod = sc.d_mat.add(&a0.scale(lambda))?;
            let s_spd = SpdMatrix::new(s_mod.clone())?;
            let d_spd = SpdMatrix::new(d_mod.clone())?;
            (s_mod, d_mod, s_spd, d_spd)
        };
        let path = GeodesicPath::new(&s_spd.inverse()?, &d_spd)?;
        Ok(Self {
            path,
            s_eff,
            d_eff,
            lambda,
            prior: prior.clone(),
            sim_count: sc.sim_count,
            dis_count: sc.dis_count,
        })
    }

    /// The metric at geodesic step `t`.
    pub fn at(&self, t: f64) -> Result<LearnedMetric> {
        let config = GmmlConfig::new(t, self.lambda, self.prior.clone())?;
        let a_mat = self.path.point(t)?;
        let riccati_residual = if t == 0.5 {
            Some(riccati_residual(&a_mat, &self.s_eff, &self.d_eff)?)
        } else {
            None
        };
        Ok(LearnedMetric {
            a_mat,
            config,
            provenance: Provenance {
                sim_count: self.sim_count,
                dis_count: self.dis_count,
                riccati_residual,
                ..Provenance::default()
            },
        })
    }
}

/// Unregularized midpoint solution `A = S⁻¹ ♯_{1/2} D`.
pub fn solve_plain(sc: &ScatterMatrices) -> Result<LearnedMetric> {
    solve_weighted(sc, 0.5)
}

/// Weighted solution `A = S⁻¹ ♯_t D`.
pub fn solve_weighted(sc: &ScatterMatrices, t: f64) -> Result<LearnedMetric> {
    check_t(t)?;
    MetricPath::new(sc, 0.0, &Prior::Identity)?.at(t)
}

/// Regularized solution `A = (S + λ A0⁻¹)⁻¹ ♯_t (D + λ A0)`; reduces to
/// [`solve_weighted`] when `λ = 0`.
pub fn solve_regularized(sc: &ScatterMatrices, cfg: &GmmlConfig) -> Result<LearnedMetric> {
    let mut out = MetricPath::new(sc, cfg.lambda, &cfg.prior)?.at(cfg.t)?;
    out.config = cfg.clone();
    Ok(out)
}

/// Full pipeline: scatter matrices from `pairs` over `data`, then the
/// closed-form solve selected by `cfg`.
pub fn learn(data: &LabeledDataset, pairs: &PairConstraints, cfg: &GmmlConfig) -> Result<LearnedMetric> {
    let sc = scatter_matrices(data, pairs)?;
    let mut metric = solve_regularized(&sc, cfg).map_err(|e| match e {
        Error::SingularScatter { which, .. } => Error::SingularScatter {
            which,
            dataset: data.name().map(str::to_owned),
        },
        other => other,
    })?;
    metric.provenance.dataset = Some(data.fingerprint());
    metric.provenance.label_names = data.label_names().map(<[String]>::to_vec);
    Ok(metric)
}
