//! Large-margin training of the metric: structured feature maps,
//! loss-augmented inference, the hinge surrogate, projected-subgradient
//! optimization, a majorization-minimization loop for similarity-based
//! (normalized-cut) training, alternation for partially labelled sequences,
//! and decoding.

use nalgebra::{DMatrix, DVector};

use crate::dp::{dp_segment, SegmentMode, SequentialConstraints};
use crate::error::{Error, Result};
use crate::hermite::embed_series;
use crate::metric::{
    pca_init, reg_value_and_subgrad, KMode, Metric, MetricKind, MetricModel, Regularizer, Task,
};
use crate::ncuts::{gaussian_similarity, ncut_decode, SimilarityMatrix};
use crate::partition::{to_rescaled_equivalence, trace_form_loss, Partition, RescaledEquivalence};
use crate::spectral::{kmeans, round_projector, spectral_relax_auto, spectral_relax_k};

/// One supervised dataset: observations with their ground-truth partition.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    x: DMatrix<f64>,
    truth: Partition,
    truth_m: RescaledEquivalence,
}

impl TrainingSample {
    pub fn new(x: DMatrix<f64>, truth: Partition) -> Result<Self> {
        if x.nrows() != truth.len() {
            return Err(Error::invalid(format!(
                "data has {} rows but the partition has {} items",
                x.nrows(),
                truth.len()
            )));
        }
        let truth_m = to_rescaled_equivalence(&truth);
        Ok(TrainingSample { x, truth, truth_m })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn truth(&self) -> &Partition {
        &self.truth
    }

    pub fn truth_matrix(&self) -> &DMatrix<f64> {
        self.truth_m.matrix()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Settings of the projected-subgradient trainer.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub task: Task,
    pub mode: KMode,
    pub reg: Regularizer,
    pub max_iters: usize,
    /// Step at iteration t is `step0 / sqrt(t)`.
    pub step0: f64,
    /// Stop when the objective changes by less than this relative amount
    /// over a 10-iteration window. Zero disables early stopping.
    pub tol: f64,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn new(task: Task, mode: KMode) -> Self {
        TrainerConfig {
            task,
            mode,
            reg: Regularizer::frobenius(1e-3),
            max_iters: 200,
            step0: 1.0,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Result of a training run: the best feasible iterate by objective value
/// and the recorded objective at every iteration.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metric: Metric,
    pub objective_trace: Vec<f64>,
    pub best_objective: f64,
    pub best_iteration: usize,
}

/// Structured feature inner product ⟨w, φ(X, M)⟩ for a candidate partition
/// matrix: tr(B XᵀMX) when the cluster count is known, and
/// (tr(B XᵀMX) − tr M)/T when it is selected by penalization.
pub fn feature_inner(
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    metric: &Metric,
    mode: KMode,
) -> Result<f64> {
    if m.nrows() != x.nrows() || m.ncols() != x.nrows() {
        return Err(Error::invalid("partition matrix must be T x T"));
    }
    let gram = metric.gram(x)?;
    let score = gram.dot(m);
    Ok(match mode {
        KMode::Known(_) => score,
        KMode::Penalized => (score - m.trace()) / x.nrows() as f64,
    })
}

/// Matrix A_i whose linear maximizer over the admissible set solves the
/// loss-augmented inference problem: (X B Xᵀ − 2M_i + I)/T with a known
/// cluster count, (X B Xᵀ − 2M_i)/T otherwise. Generally indefinite.
pub fn loss_augmented_matrix(
    sample: &TrainingSample,
    metric: &Metric,
    mode: KMode,
) -> Result<DMatrix<f64>> {
    let t = sample.len() as f64;
    let mut a = metric.gram(&sample.x)? - 2.0 * sample.truth_matrix();
    if let KMode::Known(_) = mode {
        for i in 0..sample.len() {
            a[(i, i)] += 1.0;
        }
    }
    Ok(a / t)
}

// Per-sample feature term with the uniform 1/T scaling used by the surrogate
// (the known-K feature map is divided by T so that samples of different
// lengths contribute comparably; the argmax is unchanged).
fn scaled_feature(gram: &DMatrix<f64>, m: &DMatrix<f64>, mode: KMode) -> f64 {
    let t = gram.nrows() as f64;
    match mode {
        KMode::Known(_) => gram.dot(m) / t,
        KMode::Penalized => (gram.dot(m) - m.trace()) / t,
    }
}

fn loss_augmented_argmax(
    sample: &TrainingSample,
    a: &DMatrix<f64>,
    task: Task,
    mode: KMode,
) -> Result<DMatrix<f64>> {
    match task {
        Task::Changepoint => {
            if !sample.truth.is_sequential() {
                return Err(Error::invalid(
                    "change-point training needs sequential ground truth",
                ));
            }
            let dp_mode = match mode {
                KMode::Known(k) => SegmentMode::FixedK(k),
                // the trace penalty cancels against the loss term, so the
                // inner maximization is unpenalized
                KMode::Penalized => SegmentMode::Penalized(0.0),
            };
            let seg = dp_segment(a, dp_mode, None)?;
            Ok(to_rescaled_equivalence(&seg.partition).matrix().clone())
        }
        Task::Cluster => {
            let projector = match mode {
                KMode::Known(k) => spectral_relax_k(a, k)?,
                KMode::Penalized => spectral_relax_auto(a)?,
            };
            Ok(projector.matrix().clone())
        }
        Task::Ncuts => Err(Error::infeasible(
            "similarity-based training uses train_ncuts_cccp",
        )),
    }
}

/// Margin-rescaled hinge surrogate for one sample: the loss-augmented
/// maximum of ℓ(M, M_i) + ⟨w, φ(M) − φ(M_i)⟩. Returns the value and the
/// maximizing matrix (a genuine partition matrix for change-point tasks, a
/// relaxed projector for clustering).
pub fn surrogate_loss(
    sample: &TrainingSample,
    metric: &Metric,
    task: Task,
    mode: KMode,
) -> Result<(f64, DMatrix<f64>)> {
    let a = loss_augmented_matrix(sample, metric, mode)?;
    let m_star = loss_augmented_argmax(sample, &a, task, mode)?;
    let gram = metric.gram(&sample.x)?;
    let value = trace_form_loss(&m_star, sample.truth_matrix())
        + scaled_feature(&gram, &m_star, mode)
        - scaled_feature(&gram, sample.truth_matrix(), mode);
    Ok((value, m_star))
}

// Subgradient of the per-sample surrogate with respect to the metric:
// Xᵀ (M* − M_i) X / T, restricted to the diagonal for diagonal metrics.
fn surrogate_subgrad(
    x: &DMatrix<f64>,
    m_star: &DMatrix<f64>,
    m_truth: &DMatrix<f64>,
    kind: MetricKind,
) -> Metric {
    let t = x.nrows() as f64;
    let diff = m_star - m_truth;
    let dx = &diff * x;
    match kind {
        MetricKind::Full => Metric::Full(x.transpose() * dx / t),
        MetricKind::Diagonal => Metric::Diagonal(DVector::from_iterator(
            x.ncols(),
            (0..x.ncols()).map(|p| x.column(p).dot(&dx.column(p)) / t),
        )),
    }
}

fn window_converged(trace: &[f64], tol: f64) -> bool {
    if tol <= 0.0 || trace.len() < 11 {
        return false;
    }
    let cur = trace[trace.len() - 1];
    let old = trace[trace.len() - 11];
    (cur - old).abs() <= tol * old.abs().max(1e-12)
}

/// Full-batch projected subgradient descent on the regularized surrogate
/// objective; returns the best feasible iterate.
pub fn train(
    samples: &[TrainingSample],
    cfg: &TrainerConfig,
    init: &Metric,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    let p = samples[0].x.ncols();
    if samples.iter().any(|s| s.x.ncols() != p) || init.dim() != p {
        return Err(Error::invalid("inconsistent feature dimensions"));
    }
    if matches!(cfg.task, Task::Ncuts) {
        return Err(Error::infeasible(
            "similarity-based training uses train_ncuts_cccp",
        ));
    }
    let n = samples.len() as f64;
    let kind = init.kind();
    let mut metric = init.project();
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<(f64, Metric, usize)> = None;

    for t in 1..=cfg.max_iters {
        let (reg_value, reg_grad) = reg_value_and_subgrad(&metric, &cfg.reg)?;
        let mut objective = reg_value;
        let mut grad = reg_grad;
        for sample in samples {
            let (li, m_star) = surrogate_loss(sample, &metric, cfg.task, cfg.mode)?;
            objective += li / n;
            let gi = surrogate_subgrad(&sample.x, &m_star, sample.truth_matrix(), kind);
            grad = grad.add(&gi.scale(1.0 / n))?;
        }
        trace.push(objective);
        if best.as_ref().map_or(true, |(b, _, _)| objective < *b) {
            best = Some((objective, metric.clone(), t));
        }
        if window_converged(&trace, cfg.tol) {
            break;
        }
        let step = cfg.step0 / (t as f64).sqrt();
        metric = metric.step(&grad, step)?.project();
    }
    let (best_objective, metric, best_iteration) = best.unwrap();
    Ok(TrainOutcome {
        metric,
        objective_trace: trace,
        best_objective,
        best_iteration,
    })
}

const DECODE_RESTARTS: usize = 20;
const DECODE_SEED: u64 = 0;

/// Runs the unsupervised decoder the model was trained for. `k_override`
/// forces a fixed cluster count regardless of the stored mode.
pub fn decode(x: &DMatrix<f64>, model: &MetricModel, k_override: Option<usize>) -> Result<Partition> {
    let embedded;
    let x = if let Some(cfg) = &model.hermite {
        if x.ncols() != 1 {
            return Err(Error::invalid(
                "hermite models decode univariate series (one column)",
            ));
        }
        let series: Vec<f64> = x.column(0).iter().copied().collect();
        embedded = embed_series(&series, cfg)?;
        &embedded
    } else {
        x
    };
    let mode = match (k_override, model.k_mode) {
        (Some(k), _) => KMode::Known(k),
        (None, m) => m,
    };
    match model.task {
        Task::Changepoint => {
            let gram = model.metric.gram(x)?;
            let seg_mode = match mode {
                KMode::Known(k) => SegmentMode::FixedK(k),
                KMode::Penalized => SegmentMode::Penalized(1.0),
            };
            Ok(dp_segment(&gram, seg_mode, None)?.partition)
        }
        Task::Cluster => match mode {
            KMode::Known(k) => Ok(kmeans(x, &model.metric, k, DECODE_RESTARTS, DECODE_SEED)?.partition),
            KMode::Penalized => {
                let mut shifted = model.metric.gram(x)?;
                for i in 0..shifted.nrows() {
                    shifted[(i, i)] -= 1.0;
                }
                let projector = spectral_relax_auto(&shifted)?;
                if projector.rank() == 0 {
                    Partition::new(vec![0; x.nrows()], false)
                } else {
                    round_projector(&projector, projector.rank(), DECODE_SEED)
                }
            }
        },
        Task::Ncuts => {
            let KMode::Known(k) = mode else {
                return Err(Error::infeasible(
                    "normalized-cut decoding needs a cluster count",
                ));
            };
            let w = gaussian_similarity(x, &model.metric)?;
            ncut_decode(&w, k, DECODE_SEED)
        }
    }
}

/// Annotation of a sequence prefix, expressed as cut constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLabels {
    pub constraints: SequentialConstraints,
    /// Fraction of the series the constraints were derived from.
    pub fraction: f64,
}

/// Derives constraints from knowing the ground truth on the leading
/// `fraction` of the series: every boundary inside the annotated prefix is
/// forced and every non-boundary position is forbidden.
pub fn prefix_partial_labels(truth: &Partition, fraction: f64) -> Result<PartialLabels> {
    if !truth.is_sequential() {
        return Err(Error::invalid("partial labels apply to sequential truth"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction must lie in [0, 1]"));
    }
    let t = truth.len();
    let annotated = (fraction * t as f64).ceil() as usize;
    let max_pos = annotated.min(t).saturating_sub(1); // positions 1..=max_pos are observable
    let cuts: std::collections::BTreeSet<usize> = truth.boundaries().into_iter().collect();
    let mut forced = Vec::new();
    let mut forbidden = Vec::new();
    let mut run_start: Option<usize> = None;
    for pos in 1..=max_pos {
        if cuts.contains(&pos) {
            if let Some(s) = run_start.take() {
                forbidden.push((s, pos - 1));
            }
            forced.push(pos);
        } else if run_start.is_none() {
            run_start = Some(pos);
        }
    }
    if let Some(s) = run_start {
        forbidden.push((s, max_pos));
    }
    Ok(PartialLabels {
        constraints: SequentialConstraints {
            forced_breaks: forced,
            forbidden_intervals: forbidden,
            min_segment_len: 0,
        },
        fraction,
    })
}

/// A sequence whose ground truth is only partially known.
#[derive(Debug, Clone)]
pub struct PartialSample {
    pub x: DMatrix<f64>,
    pub partial: PartialLabels,
}

/// Alternating training with partial labels: starting from the PCA metric,
/// repeatedly (a) complete every sample by constrained decoding under the
/// current metric and (b) retrain on the completed labels, until the
/// completions stop changing or `rounds` is exhausted.
pub fn train_partial(
    samples: &[PartialSample],
    cfg: &TrainerConfig,
    kind: MetricKind,
    rounds: usize,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if !matches!(cfg.task, Task::Changepoint) {
        return Err(Error::infeasible(
            "partial-label alternation is defined for change-point tasks",
        ));
    }
    let datasets: Vec<DMatrix<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let mut metric = pca_init(&datasets, kind, None)?;
    let mut previous: Option<Vec<Partition>> = None;
    let mut outcome = None;

    for _ in 0..rounds.max(1) {
        let mut completed = Vec::with_capacity(samples.len());
        for s in samples {
            let gram = metric.gram(&s.x)?;
            let seg_mode = match cfg.mode {
                KMode::Known(k) => SegmentMode::FixedK(k),
                KMode::Penalized => SegmentMode::Penalized(1.0),
            };
            completed.push(dp_segment(&gram, seg_mode, Some(&s.partial.constraints))?.partition);
        }
        if previous.as_ref() == Some(&completed) {
            break;
        }
        let training: Vec<TrainingSample> = samples
            .iter()
            .zip(&completed)
            .map(|(s, p)| TrainingSample::new(s.x.clone(), p.clone()))
            .collect::<Result<_>>()?;
        let run = train(&training, cfg, &metric)?;
        metric = run.metric.clone();
        outcome = Some(run);
        previous = Some(completed);
    }
    outcome.ok_or_else(|| Error::infeasible("no training round executed"))
}

/// Settings for the majorization-minimization (convex-concave) trainer used
/// with Gaussian similarities.
#[derive(Debug, Clone)]
pub struct CccpConfig {
    pub mode: KMode,
    pub reg: Regularizer,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub step0: f64,
    /// Outer loop stops when the objective improves by less than this
    /// relative amount.
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct CccpOutcome {
    pub metric: Metric,
    /// Objective after initialization and after every outer iteration;
    /// non-increasing by construction.
    pub outer_objectives: Vec<f64>,
}

/// Gradient of tr(W_B M) with respect to the metric, where
/// (W_B)_{jk} = exp(−(x_j−x_k)ᵀB(x_j−x_k)):
/// −Σ_{jk} M_{jk} (W_B)_{jk} (x_j−x_k)(x_j−x_k)ᵀ.
pub fn similarity_trace_grad(
    x: &DMatrix<f64>,
    w: &SimilarityMatrix,
    m: &DMatrix<f64>,
    kind: MetricKind,
) -> Metric {
    let t = x.nrows();
    let p = x.ncols();
    match kind {
        MetricKind::Full => {
            let mut g = DMatrix::zeros(p, p);
            for j in 0..t {
                for k in (j + 1)..t {
                    let coeff = -2.0 * m[(j, k)] * w.matrix()[(j, k)];
                    let d = (x.row(j) - x.row(k)).transpose();
                    g.ger(coeff, &d, &d, 1.0);
                }
            }
            Metric::Full(g)
        }
        MetricKind::Diagonal => {
            let mut g = DVector::zeros(p);
            for j in 0..t {
                for k in (j + 1)..t {
                    let coeff = -2.0 * m[(j, k)] * w.matrix()[(j, k)];
                    for q in 0..p {
                        let d = x[(j, q)] - x[(k, q)];
                        g[q] += coeff * d * d;
                    }
                }
            }
            Metric::Diagonal(g)
        }
    }
}

fn ncuts_sample_objective(
    sample: &TrainingSample,
    metric: &Metric,
    k: usize,
) -> Result<(f64, SimilarityMatrix, DMatrix<f64>)> {
    let w = gaussian_similarity(&sample.x, metric)?;
    let t = sample.len() as f64;
    let a = w.matrix() - 2.0 / t * sample.truth_matrix();
    let m_star = spectral_relax_k(&a, k)?.matrix().clone();
    let value = trace_form_loss(&m_star, sample.truth_matrix())
        + w.matrix().dot(&m_star)
        - w.matrix().dot(sample.truth_matrix());
    Ok((value, w, m_star))
}

/// Trains a metric for normalized-cut decoding. The per-sample objective is
/// a difference of functions of the metric, so each outer iteration replaces
/// the concave part −tr(W_B M_i) by its tangent and minimizes the resulting
/// surrogate by projected subgradient; the outer objective never increases.
pub fn train_ncuts_cccp(
    samples: &[TrainingSample],
    cfg: &CccpConfig,
    init: &Metric,
) -> Result<CccpOutcome> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    let KMode::Known(k) = cfg.mode else {
        return Err(Error::infeasible(
            "similarity-based training supports a known cluster count only",
        ));
    };
    let n = samples.len() as f64;
    let kind = init.kind();
    let mut metric = init.project();

    let outer_objective = |metric: &Metric| -> Result<f64> {
        let mut total = reg_value_and_subgrad(metric, &cfg.reg)?.0;
        for s in samples {
            total += ncuts_sample_objective(s, metric, k)?.0 / n;
        }
        Ok(total)
    };

    let mut objectives = vec![outer_objective(&metric)?];
    for _ in 0..cfg.outer_iters {
        // tangent data at the current iterate
        let anchor = metric.clone();
        let mut anchor_terms = Vec::with_capacity(samples.len());
        for s in samples {
            let w_t = gaussian_similarity(&s.x, &anchor)?;
            let g_t = similarity_trace_grad(&s.x, &w_t, s.truth_matrix(), kind);
            let score_t = w_t.matrix().dot(s.truth_matrix());
            anchor_terms.push((g_t, score_t));
        }

        // inner minimization of the convexified surrogate, keeping the best
        // iterate; the anchor itself is a candidate, so the surrogate value
        // cannot increase
        let surrogate = |m: &Metric| -> Result<(f64, Metric)> {
            let (reg_value, reg_grad) = reg_value_and_subgrad(m, &cfg.reg)?;
            let mut value = reg_value;
            let mut grad = reg_grad;
            for (s, (g_t, score_t)) in samples.iter().zip(&anchor_terms) {
                let w = gaussian_similarity(&s.x, m)?;
                let t = s.len() as f64;
                let a = w.matrix() - 2.0 / t * s.truth_matrix();
                let m_star = spectral_relax_k(&a, k)?.matrix().clone();
                let hinge = trace_form_loss(&m_star, s.truth_matrix()) + w.matrix().dot(&m_star);
                let tangent = -score_t - g_t.dot(&m.step(&anchor, 1.0)?)?;
                value += (hinge + tangent) / n;
                let gi = similarity_trace_grad(&s.x, &w, &m_star, kind);
                grad = grad.add(&gi.step(g_t, 1.0)?.scale(1.0 / n))?;
            }
            Ok((value, grad))
        };

        let mut best_value = surrogate(&metric)?.0;
        let mut best_metric = metric.clone();
        let mut current = metric.clone();
        for t in 1..=cfg.inner_iters {
            let (value, grad) = surrogate(&current)?;
            if value < best_value {
                best_value = value;
                best_metric = current.clone();
            }
            let step = cfg.step0 / (t as f64).sqrt();
            current = current.step(&grad, step)?.project();
        }
        metric = best_metric;

        let objective = outer_objective(&metric)?;
        let prev = *objectives.last().unwrap();
        debug_assert!(
            objective <= prev + 1e-8,
            "outer objective increased: {prev} -> {objective}"
        );
        objectives.push(objective);
        if (prev - objective).abs() <= cfg.tol * prev.abs().max(1e-12) {
            break;
        }
    }
    Ok(CccpOutcome {
        metric,
        outer_objectives: objectives,
    })
}
