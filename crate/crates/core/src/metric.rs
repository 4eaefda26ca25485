//! The learned Mahalanobis metric: full or diagonal positive-semidefinite
//! parametrization, Gram matrices, PSD projection, regularizers, and PCA
//! initialization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hermite::HermiteConfig;
use crate::linalg::symmetric_eigen_desc;

/// Partitioning task a metric is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Changepoint,
    Cluster,
    Ncuts,
}

/// Whether the number of clusters is given at decode time or selected by the
/// trace penalty (with the penalty scale absorbed into the metric).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMode {
    Known(usize),
    Penalized,
}

/// Marker for the two metric parametrizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Full,
    Diagonal,
}

/// A positive-semidefinite bilinear form on feature space: either a full
/// symmetric PSD matrix or a nonnegative diagonal reweighting.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl Metric {
    pub fn identity(kind: MetricKind, dim: usize) -> Metric {
        match kind {
            MetricKind::Full => Metric::Full(DMatrix::identity(dim, dim)),
            MetricKind::Diagonal => Metric::Diagonal(DVector::from_element(dim, 1.0)),
        }
    }

    pub fn zeros(kind: MetricKind, dim: usize) -> Metric {
        match kind {
            MetricKind::Full => Metric::Full(DMatrix::zeros(dim, dim)),
            MetricKind::Diagonal => Metric::Diagonal(DVector::zeros(dim)),
        }
    }

    pub fn kind(&self) -> MetricKind {
        match self {
            Metric::Full(_) => MetricKind::Full,
            Metric::Diagonal(_) => MetricKind::Diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Metric::Full(b) => b.nrows(),
            Metric::Diagonal(b) => b.len(),
        }
    }

    /// The metric as a dense P×P matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Metric::Full(b) => b.clone(),
            Metric::Diagonal(b) => DMatrix::from_diagonal(b),
        }
    }

    /// Gram matrix X B Xᵀ of the rows of `x` under this metric.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "data has {} features but the metric has dimension {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(match self {
            Metric::Full(b) => x * b * x.transpose(),
            Metric::Diagonal(b) => {
                let mut xb = x.clone();
                for (p, mut col) in xb.column_iter_mut().enumerate() {
                    col *= b[p];
                }
                &xb * x.transpose()
            }
        })
    }

    /// Quadratic form dᵀ B d.
    pub fn quad_form(&self, d: &DVector<f64>) -> f64 {
        match self {
            Metric::Full(b) => (d.transpose() * b * d)[(0, 0)],
            Metric::Diagonal(b) => d.iter().zip(b.iter()).map(|(di, bi)| bi * di * di).sum(),
        }
    }

    /// Maps data into a space where the metric becomes Euclidean: returns
    /// X L with B = L Lᵀ (negative eigenvalues are clipped first).
    pub fn transform_data(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid("data/metric dimension mismatch"));
        }
        Ok(match self {
            Metric::Full(b) => {
                let (vals, vecs) = symmetric_eigen_desc(b);
                let mut l = vecs;
                for (i, mut col) in l.column_iter_mut().enumerate() {
                    col *= vals[i].max(0.0).sqrt();
                }
                x * l
            }
            Metric::Diagonal(b) => {
                let mut xt = x.clone();
                for (p, mut col) in xt.column_iter_mut().enumerate() {
                    col *= b[p].max(0.0).sqrt();
                }
                xt
            }
        })
    }

    /// Euclidean projection onto the feasible set: symmetrize and clip
    /// negative eigenvalues (full), or clip negative entries (diagonal).
    pub fn project(&self) -> Metric {
        match self {
            Metric::Full(b) => {
                let (vals, vecs) = symmetric_eigen_desc(b);
                let mut scaled = vecs.clone();
                for (i, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= vals[i].max(0.0);
                }
                Metric::Full(&scaled * vecs.transpose())
            }
            Metric::Diagonal(b) => Metric::Diagonal(b.map(|v| v.max(0.0))),
        }
    }

    /// `self − step · g`; the shapes must match.
    pub fn step(&self, g: &Metric, step: f64) -> Result<Metric> {
        match (self, g) {
            (Metric::Full(b), Metric::Full(d)) => Ok(Metric::Full(b - d * step)),
            (Metric::Diagonal(b), Metric::Diagonal(d)) => Ok(Metric::Diagonal(b - d * step)),
            _ => Err(Error::invalid("metric/gradient kind mismatch")),
        }
    }

    pub fn scale(&self, c: f64) -> Metric {
        match self {
            Metric::Full(b) => Metric::Full(b * c),
            Metric::Diagonal(b) => Metric::Diagonal(b * c),
        }
    }

    pub fn add(&self, other: &Metric) -> Result<Metric> {
        match (self, other) {
            (Metric::Full(a), Metric::Full(b)) => Ok(Metric::Full(a + b)),
            (Metric::Diagonal(a), Metric::Diagonal(b)) => Ok(Metric::Diagonal(a + b)),
            _ => Err(Error::invalid("metric kind mismatch")),
        }
    }

    /// Frobenius inner product with a metric of the same kind.
    pub fn dot(&self, other: &Metric) -> Result<f64> {
        match (self, other) {
            (Metric::Full(a), Metric::Full(b)) => Ok(a.dot(b)),
            (Metric::Diagonal(a), Metric::Diagonal(b)) => Ok(a.dot(b)),
            _ => Err(Error::invalid("metric kind mismatch")),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Metric::Full(b) => b.trace(),
            Metric::Diagonal(b) => b.sum(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        match self {
            Metric::Full(b) => b.norm_squared(),
            Metric::Diagonal(b) => b.norm_squared(),
        }
    }
}

/// Regularization added to the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub kind: RegKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    /// (μ/2)·‖B‖²_F.
    FrobeniusSq,
    /// μ·‖b‖₁ on a diagonal metric (nonnegativity makes this μ·Σb).
    L1Diag,
    /// μ·tr(B), the convex surrogate for low rank.
    Trace,
}

impl Regularizer {
    pub fn frobenius(weight: f64) -> Self {
        Regularizer {
            kind: RegKind::FrobeniusSq,
            weight,
        }
    }

    pub fn l1(weight: f64) -> Self {
        Regularizer {
            kind: RegKind::L1Diag,
            weight,
        }
    }

    pub fn trace(weight: f64) -> Self {
        Regularizer {
            kind: RegKind::Trace,
            weight,
        }
    }
}

/// Value and subgradient of a regularizer at `metric`.
pub fn reg_value_and_subgrad(metric: &Metric, reg: &Regularizer) -> Result<(f64, Metric)> {
    let mu = reg.weight;
    match reg.kind {
        RegKind::FrobeniusSq => Ok((
            0.5 * mu * metric.frobenius_norm_sq(),
            metric.scale(mu),
        )),
        RegKind::L1Diag => match metric {
            Metric::Diagonal(b) => Ok((
                mu * b.sum(),
                Metric::Diagonal(DVector::from_element(b.len(), mu)),
            )),
            Metric::Full(_) => Err(Error::invalid(
                "the l1 regularizer applies to diagonal metrics only",
            )),
        },
        RegKind::Trace => Ok((
            mu * metric.trace(),
            match metric {
                Metric::Full(b) => Metric::Full(DMatrix::identity(b.nrows(), b.nrows()) * mu),
                Metric::Diagonal(b) => Metric::Diagonal(DVector::from_element(b.len(), mu)),
            },
        )),
    }
}

/// The trained artifact: a metric plus the task it decodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub metric: Metric,
    pub task: Task,
    pub k_mode: KMode,
    /// Present when the model expects univariate series embedded through
    /// Hermite features before decoding.
    pub hermite: Option<HermiteConfig>,
}

impl MetricModel {
    pub fn new(metric: Metric, task: Task, k_mode: KMode) -> Self {
        MetricModel {
            metric,
            task,
            k_mode,
            hermite: None,
        }
    }

    pub fn with_hermite(mut self, cfg: HermiteConfig) -> Self {
        self.hermite = Some(cfg);
        self
    }

    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.metric.gram(x)
    }
}

const RANK_TOL: f64 = 1e-12;
const VARIANCE_FLOOR: f64 = 1e-12;

/// PCA-based initial metric over one or more datasets sharing the feature
/// space.
///
/// Full kind: the projector U_d U_dᵀ onto the top `d` principal directions of
/// the pooled, centered data; `d` defaults to the smallest dimension
/// explaining 90% of the variance and is reduced to the data rank if needed.
/// Diagonal kind: per-dimension inverse variances normalized to a maximum of
/// one (dimensions with no variance get weight zero).
pub fn pca_init(datasets: &[DMatrix<f64>], kind: MetricKind, d: Option<usize>) -> Result<Metric> {
    if datasets.is_empty() {
        return Err(Error::invalid("pca_init needs at least one dataset"));
    }
    let p = datasets[0].ncols();
    if datasets.iter().any(|x| x.ncols() != p) {
        return Err(Error::invalid("datasets must share the feature dimension"));
    }
    let n: usize = datasets.iter().map(|x| x.nrows()).sum();
    if n < 2 {
        return Err(Error::invalid("pca_init needs at least two rows in total"));
    }

    let mut stacked = DMatrix::zeros(n, p);
    let mut row = 0;
    for x in datasets {
        stacked.rows_mut(row, x.nrows()).copy_from(x);
        row += x.nrows();
    }
    let mean = stacked.row_mean();
    for mut r in stacked.row_iter_mut() {
        r -= &mean;
    }

    match kind {
        MetricKind::Diagonal => {
            let denom = (n - 1) as f64;
            let variances: Vec<f64> =
                (0..p).map(|j| stacked.column(j).norm_squared() / denom).collect();
            let mut weights = DVector::from_iterator(
                p,
                variances.iter().map(|&v| {
                    if v <= VARIANCE_FLOOR {
                        0.0
                    } else {
                        1.0 / v
                    }
                }),
            );
            let max = weights.max();
            if max > 0.0 {
                weights /= max;
            }
            Ok(Metric::Diagonal(weights))
        }
        MetricKind::Full => {
            let cov = stacked.transpose() * &stacked / (n - 1) as f64;
            let (vals, vecs) = symmetric_eigen_desc(&cov);
            let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
            let rank = vals
                .iter()
                .filter(|&&v| v > RANK_TOL * vals[0].max(RANK_TOL))
                .count()
                .max(1);
            let mut d_eff = match d {
                Some(d) => {
                    if d > p {
                        return Err(Error::invalid(format!(
                            "requested {d} components but only {p} dimensions exist"
                        )));
                    }
                    d
                }
                None => {
                    let mut acc = 0.0;
                    let mut d90 = p;
                    for (i, v) in vals.iter().enumerate() {
                        acc += v.max(0.0);
                        if acc >= 0.9 * total {
                            d90 = i + 1;
                            break;
                        }
                    }
                    d90
                }
            };
            if d_eff > rank {
                log::warn!("pca_init: reducing d from {d_eff} to the data rank {rank}");
                d_eff = rank;
            }
            let u = vecs.columns(0, d_eff);
            Ok(Metric::Full(&u * u.transpose()))
        }
    }
}
