//! k-NN evaluation protocol: constraint sampling, k-NN classification under
//! a learned metric, stratified random splits and a two-step
//! cross-validation search over the geodesic step `t`.
//!
//! Every random choice is driven by a seed derived from the caller's seed
//! and the (run, fold) coordinates of the unit of work, so results do not
//! depend on execution order or thread count.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetFingerprint, LabeledDataset, Standardizer};
use crate::error::{Error, Result};
use crate::learn::{mahalanobis, scatter_matrices, GmmlConfig, MetricPath, PairConstraints};
use crate::spd::{SpdMatrix, SymMatrix};

/// Default number of neighbours.
pub const DEFAULT_K: usize = 5;
/// Default first-stage grid for `t`.
pub const DEFAULT_COARSE_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_FINE_COUNT: usize = 12;
pub const DEFAULT_FINE_SPACING: f64 = 0.02;
pub const DEFAULT_CV_FOLDS: usize = 5;
/// Bounds applied to every second-stage candidate.
pub const T_MIN: f64 = 0.01;
pub const T_MAX: f64 = 0.99;

/// `40 c (c − 1)`; zero for a single class.
pub fn default_constraint_count(num_classes: usize) -> usize {
    40 * num_classes * num_classes.saturating_sub(1)
}

/// Mixes `parts` into `base` (SplitMix64 finalizer per step).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_runs: usize,
    pub n_folds: usize,
    pub rng_seed: u64,
}

impl SplitPlan {
    pub fn new(n_runs: usize, n_folds: usize, rng_seed: u64) -> Result<Self> {
        if n_runs == 0 {
            return Err(Error::param("runs", "must be at least 1"));
        }
        if n_folds < 2 {
            return Err(Error::param("folds", format!("must be at least 2, got {n_folds}")));
        }
        Ok(Self {
            n_runs,
            n_folds,
            rng_seed,
        })
    }
}

/// Two-step search over `t`: score a coarse grid, then `fine_count` values
/// spaced `fine_spacing` apart centred on the coarse winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPolicy {
    pub coarse_grid: Vec<f64>,
    pub fine_count: usize,
    pub fine_spacing: f64,
    pub cv_folds: usize,
}

impl Default for CvPolicy {
    fn default() -> Self {
        Self {
            coarse_grid: DEFAULT_COARSE_GRID.to_vec(),
            fine_count: DEFAULT_FINE_COUNT,
            fine_spacing: DEFAULT_FINE_SPACING,
            cv_folds: DEFAULT_CV_FOLDS,
        }
    }
}

impl CvPolicy {
    pub fn new(coarse_grid: Vec<f64>, fine_count: usize, fine_spacing: f64, cv_folds: usize) -> Result<Self> {
        if coarse_grid.is_empty() {
            return Err(Error::param("coarse-grid", "must not be empty"));
        }
        if let Some(bad) = coarse_grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::param("coarse-grid", format!("values must lie in (0, 1), got {bad}")));
        }
        if fine_count == 0 {
            return Err(Error::param("fine-count", "must be at least 1"));
        }
        if !(fine_spacing > 0.0) || !fine_spacing.is_finite() {
            return Err(Error::param("fine-spacing", format!("must be > 0, got {fine_spacing}")));
        }
        if cv_folds < 2 {
            return Err(Error::param("cv-folds", format!("must be at least 2, got {cv_folds}")));
        }
        Ok(Self {
            coarse_grid,
            fine_count,
            fine_spacing,
            cv_folds,
        })
    }

    /// Second-stage candidates around `center`, clamped to `[T_MIN, T_MAX]`,
    /// duplicates removed.
    pub fn fine_grid(&self, center: f64) -> Vec<f64> {
        let half = (self.fine_count as f64 - 1.0) / 2.0;
        let mut out: Vec<f64> = Vec::with_capacity(self.fine_count);
        for i in 0..self.fine_count {
            let t = (center + (i as f64 - half) * self.fine_spacing).clamp(T_MIN, T_MAX);
            let t = (t * 1e12).round() / 1e12;
            if !out.iter().any(|u| (u - t).abs() < 1e-12) {
                out.push(t);
            }
        }
        out
    }
}

/// Draws `count` index pairs: uniformly without replacement from the
/// `n (n − 1) / 2` unordered distinct pairs, or independently with
/// replacement when `count` exceeds that universe. Same-label pairs go to
/// the similar set, the rest to the dissimilar set.
pub fn sample_constraints(data: &LabeledDataset, count: usize, seed: u64) -> Result<PairConstraints> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidDataset("constraint sampling needs at least 2 points".into()));
    }
    if count == 0 {
        return Err(Error::param("constraints", "count must be at least 1"));
    }
    let mut rng = rng_for(seed);
    let universe = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if count <= universe {
        index::sample(&mut rng, universe, count)
            .into_iter()
            .map(|k| unrank_pair(k, n))
            .collect()
    } else {
        (0..count)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let (sim, dis): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .partition(|&(i, j)| data.label(i) == data.label(j));
    PairConstraints::new(sim, dis)
}

/// Maps `k ∈ [0, n(n−1)/2)` to the `k`-th pair `(i, j)`, `i < j`, in
/// row-major order of the strict upper triangle.
fn unrank_pair(k: usize, n: usize) -> (usize, usize) {
    // Pairs before row i: i·n − i(i+1)/2.
    let before = |i: usize| i * n - i * (i + 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * k as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor().max(0.0) as usize;
    i = i.min(n - 2);
    while i > 0 && before(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && before(i + 1) <= k {
        i += 1;
    }
    let j = k - before(i) + i + 1;
    (i, j)
}

/// Majority vote among the `k` nearest `(distance, label)` candidates.
///
/// Every point tied with the `k`-th distance is admitted. Vote ties go to
/// the class with the smaller mean distance among its voters, then to the
/// smaller class index.
fn vote(mut cands: Vec<(f64, usize)>, k: usize, num_classes: usize) -> usize {
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = k.min(cands.len());
    let kth = cands[k - 1].0;
    let mut counts = vec![0usize; num_classes];
    let mut dist_sums = vec![0.0f64; num_classes];
    for &(d, l) in cands.iter().take_while(|(d, _)| *d <= kth) {
        counts[l] += 1;
        dist_sums[l] += d;
    }
    let mut best = 0usize;
    for c in 1..num_classes {
        let (cb, cc) = (counts[best], counts[c]);
        if cc > cb {
            best = c;
        } else if cc == cb && cc > 0 {
            let mean_b = dist_sums[best] / cb as f64;
            let mean_c = dist_sums[c] / cc as f64;
            if mean_c < mean_b {
                best = c;
            }
        }
    }
    best
}

fn check_k(k: usize, n: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if k > n {
        log::warn!("k = {k} exceeds the {n} training points; using k = {n}");
        return Ok(n);
    }
    Ok(k)
}

/// k-NN label for `query` under the Mahalanobis distance induced by `metric`.
pub fn knn_predict(train: &LabeledDataset, metric: &SymMatrix, query: &[f64], k: usize) -> Result<usize> {
    if metric.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: metric.dim(),
        });
    }
    if query.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: query.len(),
        });
    }
    let k = check_k(k, train.len())?;
    let cands = (0..train.len())
        .map(|i| Ok((mahalanobis(metric, query, train.point(i))?, train.label(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok(vote(cands, k, train.num_classes()))
}

/// Batch k-NN classifier. With a metric `A = L Lᵀ` the training points are
/// mapped once through `Lᵀ`, after which `d_A(x, y) = ‖Lᵀx − Lᵀy‖²`.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    transform: Option<crate::spd::Matrix>,
    train: LabeledDataset,
    k: usize,
}

impl KnnClassifier {
    pub fn new(train: &LabeledDataset, metric: Option<&SpdMatrix>, k: usize) -> Result<Self> {
        let k = check_k(k, train.len())?;
        let transform = match metric {
            None => None,
            Some(m) if m.dim() != train.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: train.dim(),
                    found: m.dim(),
                })
            }
            Some(m) => Some(m.cholesky().transpose()),
        };
        let train = match &transform {
            None => train.clone(),
            Some(lt) => train.map_points(train.dim(), |p| lt.mul_vec(p).expect("dims checked"))?,
        };
        Ok(Self { transform, train, k })
    }

    pub fn predict(&self, query: &[f64]) -> Result<usize> {
        if query.len() != self.train.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.train.dim(),
                found: query.len(),
            });
        }
        let q = match &self.transform {
            None => query.to_vec(),
            Some(lt) => lt.mul_vec(query)?,
        };
        let cands = (0..self.train.len())
            .map(|i| {
                let d = q
                    .iter()
                    .zip(self.train.point(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, self.train.label(i))
            })
            .collect();
        Ok(vote(cands, self.k, self.train.num_classes()))
    }

    /// Fraction of `test` points whose predicted label is wrong.
    pub fn error_rate(&self, test: &LabeledDataset) -> Result<f64> {
        let mut wrong = 0usize;
        for i in 0..test.len() {
            if self.predict(test.point(i))? != test.label(i) {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / test.len() as f64)
    }
}

/// k-NN error of `test` against `train` under a fixed metric (`None` is
/// the Euclidean baseline).
pub fn evaluate_with_metric(
    train: &LabeledDataset,
    test: &LabeledDataset,
    metric: Option<&SpdMatrix>,
    k: usize,
) -> Result<f64> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    KnnClassifier::new(train, metric, k)?.error_rate(test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub error: f64,
    pub learn_secs: f64,
    pub classify_secs: f64,
    pub sim_count: usize,
    pub dis_count: usize,
    pub riccati_residual: Option<f64>,
}

fn resolve_count(data: &LabeledDataset, count: Option<usize>) -> Result<usize> {
    let c = count.unwrap_or_else(|| default_constraint_count(data.num_classes()));
    if c == 0 {
        return Err(Error::InvalidDataset(
            "metric learning needs at least 2 classes (default constraint count is 0)".into(),
        ));
    }
    Ok(c)
}

fn with_dataset_name(err: Error, data: &LabeledDataset) -> Error {
    match err {
        Error::SingularScatter { which, dataset: None } => Error::SingularScatter {
            which,
            dataset: data.name().map(str::to_owned),
        },
        other => other,
    }
}

/// Learns a metric from constraints sampled on `train` and reports the k-NN
/// error on `test`.
pub fn evaluate_split(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &GmmlConfig,
    k: usize,
    constraint_count: usize,
    seed: u64,
) -> Result<SplitOutcome> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    let started = Instant::now();
    let pairs = sample_constraints(train, constraint_count, seed)?;
    let sc = scatter_matrices(train, &pairs)?;
    let metric = MetricPath::new(&sc, cfg.lambda(), cfg.prior())
        .and_then(|p| p.at(cfg.t()))
        .map_err(|e| with_dataset_name(e, train))?;
    let learn_secs = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let error = evaluate_with_metric(train, test, Some(&metric.a_mat), k)?;
    Ok(SplitOutcome {
        error,
        learn_secs,
        classify_secs: started.elapsed().as_secs_f64(),
        sim_count: sc.sim_count,
        dis_count: sc.dis_count,
        riccati_residual: metric.provenance.riccati_residual,
    })
}

/// Stratified partition of `0..labels.len()` into `n_folds` folds: each
/// class is shuffled and dealt round-robin, continuing the deal across
/// classes so fold sizes differ by at most one.
pub fn stratified_folds<R: Rng + ?Sized>(labels: &[usize], n_folds: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0usize;
    for mut members in by_class {
        members.shuffle(rng);
        for i in members {
            folds[next % n_folds].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Seeded stratified halving of `data` into (train, test).
pub fn half_split(data: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut rng = rng_for(derive_seed(seed, &[0]));
    let folds = stratified_folds(data.labels(), 2, &mut rng);
    Ok((data.subset(&folds[0])?, data.subset(&folds[1])?))
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TScore {
    pub t: f64,
    /// Mean validation error across folds; `None` if any fold failed.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub chosen_t: f64,
    pub scores: Vec<TScore>,
}

/// Reusable cross-validation folds over a training set: fold assignment and
/// per-fold geodesics are computed once and shared by every `t` scored.
pub struct CvFolds {
    folds: Vec<FoldState>,
}

struct FoldState {
    train: LabeledDataset,
    validation: LabeledDataset,
    path: Result<MetricPath>,
}

impl CvFolds {
    pub fn new(
        train: &LabeledDataset,
        n_folds: usize,
        cfg: &GmmlConfig,
        constraint_count: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let count = resolve_count(train, constraint_count)?;
        let mut rng = rng_for(derive_seed(seed, &[0xF01D]));
        let assignment = stratified_folds(train.labels(), n_folds, &mut rng);
        let mut folds = Vec::with_capacity(n_folds);
        for (f, members) in assignment.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let rest = complement(train.len(), members);
            if rest.len() < 2 {
                continue;
            }
            let fold_train = train.subset(&rest)?;
            let validation = train.subset(members).or_else(|_| {
                // a single-point fold is still a valid validation set
                let mut idx = members.clone();
                idx.push(members[0]);
                train.subset(&idx)
            })?;
            let path = sample_constraints(&fold_train, count, derive_seed(seed, &[f as u64]))
                .and_then(|pairs| scatter_matrices(&fold_train, &pairs))
                .and_then(|sc| MetricPath::new(&sc, cfg.lambda(), cfg.prior()));
            folds.push(FoldState {
                train: fold_train,
                validation,
                path,
            });
        }
        if folds.is_empty() {
            return Err(Error::InvalidDataset("too few points for cross-validation".into()));
        }
        Ok(Self { folds })
    }

    /// Mean validation error at `t`. Any fold failure disqualifies `t` and
    /// is returned as the error.
    pub fn score(&self, t: f64, k: usize) -> Result<f64> {
        let mut total = 0.0;
        for fold in &self.folds {
            let path = fold.path.as_ref().map_err(clone_error)?;
            let metric = path.at(t)?;
            let k_eff = k.min(fold.train.len());
            total += evaluate_with_metric(&fold.train, &fold.validation, Some(&metric.a_mat), k_eff)?;
        }
        Ok(total / self.folds.len() as f64)
    }
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::SingularScatter { which, dataset } => Error::SingularScatter {
            which: *which,
            dataset: dataset.clone(),
        },
        Error::NotPositiveDefinite(m) => Error::NotPositiveDefinite(m.clone()),
        Error::NoConvergence { iterations } => Error::NoConvergence {
            iterations: *iterations,
        },
        other => Error::InvalidDataset(other.to_string()),
    }
}

/// Picks the best score; ties go to the `t` nearest 0.5, then the smaller `t`.
pub fn select_best(scores: &[TScore]) -> Option<f64> {
    const TIE: f64 = 1e-12;
    let mut best: Option<(f64, f64)> = None;
    for s in scores {
        let Some(e) = s.error else { continue };
        best = match best {
            None => Some((s.t, e)),
            Some((bt, be)) => {
                let better = e < be - TIE
                    || ((e - be).abs() <= TIE
                        && ((s.t - 0.5).abs() < (bt - 0.5).abs() - TIE
                            || ((s.t - 0.5).abs() - (bt - 0.5).abs()).abs() <= TIE && s.t < bt));
                if better {
                    Some((s.t, e))
                } else {
                    Some((bt, be))
                }
            }
        };
    }
    best.map(|(t, _)| t)
}

/// Two-step cross-validated choice of `t` on `train`.
pub fn cross_validate_t(
    train: &LabeledDataset,
    policy: &CvPolicy,
    cfg: &GmmlConfig,
    k: usize,
    constraint_count: Option<usize>,
    seed: u64,
) -> Result<CvOutcome> {
    let folds = CvFolds::new(train, policy.cv_folds, cfg, constraint_count, seed)?;
    let mut scores: Vec<TScore> = Vec::new();
    let mut last_err = None;
    let mut score_all = |ts: &[f64], scores: &mut Vec<TScore>| {
        for &t in ts {
            if scores.iter().any(|s| (s.t - t).abs() < 1e-12) {
                continue;
            }
            let error = match folds.score(t, k) {
                Ok(e) => Some(e),
                Err(e) => {
                    last_err = Some(e);
                    None
                }
            };
            scores.push(TScore { t, error });
        }
    };
    score_all(&policy.coarse_grid, &mut scores);
    let Some(coarse_best) = select_best(&scores) else {
        return Err(last_err.unwrap_or_else(|| Error::InvalidDataset("no t candidate could be scored".into())));
    };
    score_all(&policy.fine_grid(coarse_best), &mut scores);
    let chosen_t = select_best(&scores).expect("coarse winner is scored");
    Ok(CvOutcome { chosen_t, scores })
}

/// How the geodesic step is chosen for each split.
#[derive(Debug, Clone, PartialEq)]
pub enum TSelection {
    Fixed,
    CrossValidate(CvPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Learn a metric on every training split.
    Gmml,
    /// Identity metric, no learning.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub config: GmmlConfig,
    pub k: usize,
    /// `None` uses `40 c (c − 1)`.
    pub constraint_count: Option<usize>,
    pub t_selection: TSelection,
    pub mode: MetricMode,
    pub standardize: bool,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            config: GmmlConfig::default(),
            k: DEFAULT_K,
            constraint_count: None,
            t_selection: TSelection::CrossValidate(CvPolicy::default()),
            mode: MetricMode::Gmml,
            standardize: false,
            jobs: 0,
        }
    }
}

/// One held-out fold of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub fold: usize,
    pub test_size: usize,
    pub error: Option<f64>,
    pub chosen_t: Option<f64>,
    pub sim_pairs: usize,
    pub dis_pairs: usize,
    pub learn_secs: f64,
    pub total_secs: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub fingerprint: DatasetFingerprint,
    pub label_names: Option<Vec<String>>,
    pub mode: MetricMode,
    pub seed: u64,
    pub n_runs: usize,
    pub n_folds: usize,
    pub k: usize,
    pub lambda: f64,
    /// Fixed `t`, or `None` when chosen by cross-validation.
    pub fixed_t: Option<f64>,
    pub cv_policy: Option<CvPolicy>,
    pub constraint_count: usize,
    pub standardize: bool,
    pub records: Vec<RunRecord>,
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
    pub failures: usize,
}

impl EvalReport {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.error).collect()
    }

    pub fn mean_learn_secs(&self) -> f64 {
        let ok: Vec<_> = self.records.iter().filter(|r| r.error.is_some()).collect();
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| r.learn_secs).sum::<f64>() / ok.len() as f64
        }
    }

    /// Copy with all wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.learn_secs = 0.0;
            r.total_secs = 0.0;
        }
        out
    }

    fn aggregate(&mut self) {
        let errs = self.errors();
        self.failures = self.records.len() - errs.len();
        if errs.is_empty() {
            self.mean_error = None;
            self.std_error = None;
            return;
        }
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let var = if errs.len() > 1 {
            errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        self.mean_error = Some(mean);
        self.std_error = Some(var.sqrt());
    }
}

fn run_unit(
    data: &LabeledDataset,
    opts: &BenchmarkOptions,
    count: usize,
    run: usize,
    fold: usize,
    test_idx: &[usize],
    seed: u64,
) -> RunRecord {
    let started = Instant::now();
    let mut record = RunRecord {
        run,
        fold,
        test_size: test_idx.len(),
        error: None,
        chosen_t: None,
        sim_pairs: 0,
        dis_pairs: 0,
        learn_secs: 0.0,
        total_secs: 0.0,
        failure: None,
    };
    let outcome = (|| -> Result<()> {
        let mut train = data.subset(&complement(data.len(), test_idx))?;
        let mut test = data.subset(test_idx)?;
        if opts.standardize {
            let z = Standardizer::fit(&train);
            train = z.apply(&train)?;
            test = z.apply(&test)?;
        }
        match opts.mode {
            MetricMode::Euclidean => {
                record.error = Some(evaluate_with_metric(&train, &test, None, opts.k)?);
            }
            MetricMode::Gmml => {
                let t = match &opts.t_selection {
                    TSelection::Fixed => opts.config.t(),
                    TSelection::CrossValidate(policy) => {
                        cross_validate_t(&train, policy, &opts.config, opts.k, Some(count), derive_seed(seed, &[1]))?
                            .chosen_t
                    }
                };
                let cfg = opts.config.with_t(t)?;
                let out = evaluate_split(&train, &test, &cfg, opts.k, count, derive_seed(seed, &[2]))?;
                record.error = Some(out.error);
                record.chosen_t = Some(t);
                record.sim_pairs = out.sim_count;
                record.dis_pairs = out.dis_count;
                record.learn_secs = out.learn_secs;
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        record.failure = Some(with_dataset_name(e, data).to_string());
    }
    record.total_secs = started.elapsed().as_secs_f64();
    record
}

/// Repeated stratified `n_folds`-fold evaluation. Each run reshuffles the
/// data; each fold is held out once, so a two-fold plan yields two error
/// measurements per run. Failures are recorded per unit and do not abort
/// the remaining runs.
pub fn run_benchmark(data: &LabeledDataset, plan: &SplitPlan, opts: &BenchmarkOptions) -> Result<EvalReport> {
    let count = match opts.mode {
        MetricMode::Gmml => resolve_count(data, opts.constraint_count)?,
        MetricMode::Euclidean => opts
            .constraint_count
            .unwrap_or_else(|| default_constraint_count(data.num_classes())),
    };
    if opts.k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }

    let mut units = Vec::with_capacity(plan.n_runs * plan.n_folds);
    for run in 0..plan.n_runs {
        let mut rng = rng_for(derive_seed(plan.rng_seed, &[run as u64]));
        let folds = stratified_folds(data.labels(), plan.n_folds, &mut rng);
        for (fold, idx) in folds.into_iter().enumerate() {
            units.push((run, fold, idx));
        }
    }

    let work = || -> Vec<RunRecord> {
        units
            .par_iter()
            .map(|(run, fold, idx)| {
                let seed = derive_seed(plan.rng_seed, &[*run as u64, *fold as u64, 0xBE7C]);
                run_unit(data, opts, count, *run, *fold, idx, seed)
            })
            .collect()
    };
    let records = if opts.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::param("jobs", e.to_string()))?
            .install(work)
    } else {
        work()
    };

    let mut report = EvalReport {
        dataset: data.name().unwrap_or("unnamed").to_owned(),
        fingerprint: data.fingerprint(),
        label_names: data.label_names().map(<[String]>::to_vec),
        mode: opts.mode,
        seed: plan.rng_seed,
        n_runs: plan.n_runs,
        n_folds: plan.n_folds,
        k: opts.k,
        lambda: opts.config.lambda(),
        fixed_t: match (&opts.t_selection, opts.mode) {
            (_, MetricMode::Euclidean) => None,
            (TSelection::Fixed, _) => Some(opts.config.t()),
            (TSelection::CrossValidate(_), _) => None,
        },
        cv_policy: match (&opts.t_selection, opts.mode) {
            (TSelection::CrossValidate(p), MetricMode::Gmml) => Some(p.clone()),
            _ => None,
        },
        constraint_count: count,
        standardize: opts.standardize,
        records,
        mean_error: None,
        std_error: None,
        failures: 0,
    };
    report.aggregate();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::Prior;

    fn line_data() -> LabeledDataset {
        LabeledDataset::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], 1, vec![0, 0, 1, 1, 1]).unwrap()
    }

    #[test]
    fn constraint_counts() {
        assert_eq!(default_constraint_count(1), 0);
        assert_eq!(default_constraint_count(2), 80);
        assert_eq!(default_constraint_count(3), 240);
        assert_eq!(default_constraint_count(26), 26000);
    }

    #[test]
    fn unrank_covers_all_pairs() {
        for n in 2..9 {
            let all: Vec<_> = (0..n * (n - 1) / 2).map(|k| unrank_pair(k, n)).collect();
            let mut expected = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    expected.push((i, j));
                }
            }
            assert_eq!(all, expected, "n = {n}");
        }
        // large n near the end of the range
        let n = 5000;
        let last = n * (n - 1) / 2 - 1;
        assert_eq!(unrank_pair(last, n), (n - 2, n - 1));
        assert_eq!(unrank_pair(n - 1, n), (1, 2));
    }

    #[test]
    fn sampling_two_points() {
        let same = LabeledDataset::new(vec![0.0, 1.0], 1, vec![0, 0]).unwrap();
        let p = sample_constraints(&same, 1, 3).unwrap();
        assert_eq!(p.sim_pairs(), &[(0, 1)]);
        assert!(p.dis_pairs().is_empty());
        let diff = LabeledDataset::new(vec![0.0, 1.0], 1, vec![0, 1]).unwrap();
        let p = sample_constraints(&diff, 1, 3).unwrap();
        assert_eq!(p.dis_pairs(), &[(0, 1)]);
    }

    #[test]
    fn sampling_is_distinct_when_possible_and_deterministic() {
        let ds = line_data();
        let p = sample_constraints(&ds, 10, 11).unwrap();
        let mut all: Vec<_> = p.sim_pairs().iter().chain(p.dis_pairs()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10);
        assert_eq!(p, sample_constraints(&ds, 10, 11).unwrap());
        // more than the universe: falls back to replacement
        let p = sample_constraints(&ds, 25, 11).unwrap();
        assert_eq!(p.len(), 25);
        assert!(p.sim_pairs().iter().chain(p.dis_pairs()).all(|(i, j)| i < j));
    }

    #[test]
    fn knn_basic() {
        let ds = line_data();
        let id = SymMatrix::identity(1);
        assert_eq!(knn_predict(&ds, &id, &[3.0], 1).unwrap(), 1);
        assert_eq!(knn_predict(&ds, &id, &[0.0], 1).unwrap(), 0);
        // k=3 at the left end: neighbours 0,1,2 -> labels 0,0,1
        assert_eq!(knn_predict(&ds, &id, &[-0.5], 3).unwrap(), 0);
        // k larger than n is clamped
        assert_eq!(knn_predict(&ds, &id, &[-0.5], 50).unwrap(), 1);
        assert!(knn_predict(&ds, &id, &[0.0, 1.0], 1).is_err());
        assert!(knn_predict(&ds, &id, &[0.0], 0).is_err());
    }

    #[test]
    fn vote_tie_breaks() {
        // two votes each; class 1 is closer on average
        let c = vec![(1.0, 0), (4.0, 0), (2.0, 1), (2.5, 1)];
        assert_eq!(vote(c, 4, 2), 1);
        // full tie -> smaller class index
        let c = vec![(1.0, 1), (1.0, 0)];
        assert_eq!(vote(c, 2, 2), 0);
        // ties at the k-th distance are all admitted
        let c = vec![(0.5, 1), (1.0, 0), (1.0, 0), (3.0, 1)];
        assert_eq!(vote(c, 2, 2), 0);
    }

    #[test]
    fn stratified_folds_partition() {
        let labels: Vec<usize> = (0..23).map(|i| i % 3).collect();
        let mut rng = rng_for(1);
        let folds = stratified_folds(&labels, 4, &mut rng);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            for c in 0..3 {
                assert!(f.iter().any(|&i| labels[i] == c));
            }
        }
    }

    #[test]
    fn fine_grid_shape() {
        let p = CvPolicy::default();
        let g = p.fine_grid(0.5);
        assert_eq!(g.len(), 12);
        assert!((g[0] - 0.39).abs() < 1e-12 && (g[11] - 0.61).abs() < 1e-12);
        let g = p.fine_grid(0.1);
        assert!(g.iter().all(|&t| (T_MIN..=T_MAX).contains(&t)));
        assert!(g.len() < 12);
        let single = CvPolicy::new(vec![0.5], 1, 0.02, 2).unwrap();
        assert_eq!(single.fine_grid(0.7), vec![0.7]);
    }

    #[test]
    fn select_best_tie_rules() {
        let s = |t, e| TScore { t, error: e };
        assert_eq!(select_best(&[s(0.1, Some(0.2)), s(0.5, Some(0.2)), s(0.9, Some(0.2))]), Some(0.5));
        assert_eq!(select_best(&[s(0.3, Some(0.2)), s(0.7, Some(0.2))]), Some(0.3));
        assert_eq!(select_best(&[s(0.3, Some(0.2)), s(0.7, Some(0.1)), s(0.5, None)]), Some(0.7));
        assert_eq!(select_best(&[s(0.3, None)]), None);
    }

    #[test]
    fn policy_validation() {
        assert!(CvPolicy::new(vec![], 1, 0.02, 5).is_err());
        assert!(CvPolicy::new(vec![1.0], 1, 0.02, 5).is_err());
        assert!(CvPolicy::new(vec![0.5], 0, 0.02, 5).is_err());
        assert!(CvPolicy::new(vec![0.5], 1, 0.0, 5).is_err());
        assert!(CvPolicy::new(vec![0.5], 1, 0.02, 1).is_err());
        assert!(SplitPlan::new(0, 2, 0).is_err());
        assert!(SplitPlan::new(1, 1, 0).is_err());
    }

    #[test]
    fn single_class_needs_explicit_error() {
        let ds = LabeledDataset::new(vec![0.0, 1.0, 2.0], 1, vec![0, 0, 0]).unwrap();
        let plan = SplitPlan::new(1, 2, 0).unwrap();
        assert!(run_benchmark(&ds, &plan, &BenchmarkOptions::default()).is_err());
        let cfg = GmmlConfig::new(0.5, 0.0, Prior::Identity).unwrap();
        assert!(cross_validate_t(&ds, &CvPolicy::default(), &cfg, 1, None, 0).is_err());
    }
}
