//! Partitions, their rescaled equivalence matrices, and distances between
//! partitions (Frobenius loss, Rand index, Hausdorff distance), together with
//! numerical checks of the asymptotic-loss and Hausdorff-equivalence bounds.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A partition of `T` items into `K` clusters, stored as a label sequence.
///
/// Cluster ids are contiguous in `[0, K)` and every id occurs at least once.
/// When `sequential` is set, segments are contiguous runs with labels that
/// increase by exactly one at every change, which is the representation used
/// for change-point problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
    sequential: bool,
}

impl Partition {
    /// Validates `labels` and builds a partition.
    pub fn new(labels: Vec<usize>, sequential: bool) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("partition must contain at least one item"));
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::invalid(format!(
                "cluster ids must cover [0, {k}) with no gaps"
            )));
        }
        if sequential {
            for w in labels.windows(2) {
                if w[1] != w[0] && w[1] != w[0] + 1 {
                    return Err(Error::invalid(
                        "sequential partition labels must be non-decreasing and \
                         increase by exactly 1 at each change",
                    ));
                }
            }
        }
        Ok(Partition {
            labels,
            k,
            sequential,
        })
    }

    /// Builds a sequential partition from consecutive segment lengths.
    pub fn from_segment_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() || lengths.iter().any(|&l| l == 0) {
            return Err(Error::invalid("segment lengths must be positive"));
        }
        let mut labels = Vec::with_capacity(lengths.iter().sum());
        for (seg, &len) in lengths.iter().enumerate() {
            labels.extend(std::iter::repeat(seg).take(len));
        }
        Partition::new(labels, true)
    }

    /// Builds a (non-sequential) partition from arbitrary assignments,
    /// relabelling clusters compactly in order of first occurrence.
    pub fn from_assignments(raw: &[usize]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("partition must contain at least one item"));
        }
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = map.len();
            labels.push(*map.entry(r).or_insert(next));
        }
        Partition::new(labels, false)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid partition always has at least one item
    }

    pub fn num_clusters(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_sequential(&self) -> bool {
        self.sequential
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Interior boundary positions of a sequential partition: position `b`
    /// means a cut between items `b-1` and `b`, so values lie in `[1, T-1]`.
    pub fn boundaries(&self) -> Vec<usize> {
        self.labels
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] != w[1])
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Boundary positions normalized into [0, 1]: a cut after item `b` maps
    /// to `b / T`.
    pub fn frontier(&self) -> Vec<f64> {
        let t = self.len() as f64;
        self.boundaries().iter().map(|&b| b as f64 / t).collect()
    }

    /// The rescaled equivalence matrix of this partition.
    pub fn rescaled_equivalence(&self) -> RescaledEquivalence {
        to_rescaled_equivalence(self)
    }
}

/// The projection matrix M = Y (YᵀY)⁻¹ Yᵀ of a partition: entries are 0
/// across clusters and 1/|cluster| inside, rows sum to one, and the trace
/// equals the number of clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledEquivalence {
    m: DMatrix<f64>,
    k: usize,
}

impl RescaledEquivalence {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn cluster_count(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.m.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Builds the rescaled equivalence matrix of a partition.
pub fn to_rescaled_equivalence(p: &Partition) -> RescaledEquivalence {
    let t = p.len();
    let sizes = p.cluster_sizes();
    let mut m = DMatrix::zeros(t, t);
    for i in 0..t {
        let li = p.labels()[i];
        let w = 1.0 / sizes[li] as f64;
        for j in 0..t {
            if p.labels()[j] == li {
                m[(i, j)] = w;
            }
        }
    }
    RescaledEquivalence {
        m,
        k: p.num_clusters(),
    }
}

/// Normalized Frobenius loss (1/T)‖M − N‖²_F between two partitions.
pub fn partition_loss(m: &RescaledEquivalence, n: &RescaledEquivalence) -> Result<f64> {
    if m.len() != n.len() {
        return Err(Error::invalid(format!(
            "partition size mismatch: {} vs {}",
            m.len(),
            n.len()
        )));
    }
    Ok((&m.m - &n.m).norm_squared() / m.len() as f64)
}

/// Trace form of the loss, (1/T)(tr M + tr N − 2 tr MN), valid for any pair
/// of projection matrices; used where a relaxed (non-integral) matrix stands
/// in for a partition.
pub fn trace_form_loss(m: &DMatrix<f64>, n: &DMatrix<f64>) -> f64 {
    let t = m.nrows() as f64;
    (m.trace() + n.trace() - 2.0 * m.dot(n)) / t
}

/// Rand index: the fraction of item pairs on which the partitions agree.
pub fn rand_index(p: &Partition, q: &Partition) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("partitions must have the same length"));
    }
    let t = p.len();
    if t < 2 {
        return Err(Error::invalid("Rand index requires at least two items"));
    }
    let mut concordant = 0usize;
    for i in 0..t {
        for j in (i + 1)..t {
            let same_p = p.labels()[i] == p.labels()[j];
            let same_q = q.labels()[i] == q.labels()[j];
            if same_p == same_q {
                concordant += 1;
            }
        }
    }
    Ok(concordant as f64 / (t * (t - 1) / 2) as f64)
}

/// Hausdorff distance between the frontiers of two sequential partitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HausdorffResult {
    Distance(f64),
    /// Exactly one of the partitions has no interior boundary, so the two
    /// frontiers cannot be compared.
    Incomparable,
}

impl HausdorffResult {
    pub fn distance(&self) -> Option<f64> {
        match self {
            HausdorffResult::Distance(d) => Some(*d),
            HausdorffResult::Incomparable => None,
        }
    }
}

fn directed_sup_inf(from: &[f64], to: &[f64]) -> f64 {
    from.iter()
        .map(|x| {
            to.iter()
                .map(|y| (x - y).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Hausdorff distance on normalized breakpoint sets: the max of the two
/// directed sup-inf distances under the absolute value on [0, 1].
pub fn hausdorff(p: &Partition, q: &Partition) -> Result<HausdorffResult> {
    if !p.is_sequential() || !q.is_sequential() {
        return Err(Error::invalid(
            "Hausdorff distance is defined for sequential partitions only",
        ));
    }
    let fp = p.frontier();
    let fq = q.frontier();
    match (fp.is_empty(), fq.is_empty()) {
        (true, true) => Ok(HausdorffResult::Distance(0.0)),
        (true, false) | (false, true) => Ok(HausdorffResult::Incomparable),
        (false, false) => Ok(HausdorffResult::Distance(f64::max(
            directed_sup_inf(&fp, &fq),
            directed_sup_inf(&fq, &fp),
        ))),
    }
}

/// K₁×K₂ table of intersection cardinalities |P_k ∩ Q_l|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<usize>>,
}

impl ContingencyTable {
    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let cols = self.counts[0].len();
        (0..cols)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Pearson chi-squared association of the table.
    pub fn chi_squared(&self) -> f64 {
        let t = self.total() as f64;
        let rows = self.row_sums();
        let cols = self.col_sums();
        let mut chi2 = 0.0;
        for (k, row) in self.counts.iter().enumerate() {
            for (l, &n) in row.iter().enumerate() {
                let expected = rows[k] as f64 * cols[l] as f64 / t;
                let d = n as f64 - expected;
                chi2 += d * d / expected;
            }
        }
        chi2
    }
}

/// Counts pairwise cluster intersections between two partitions of the same
/// items.
pub fn contingency(p: &Partition, q: &Partition) -> Result<ContingencyTable> {
    if p.len() != q.len() {
        return Err(Error::invalid("partitions must have the same length"));
    }
    let mut counts = vec![vec![0usize; q.num_clusters()]; p.num_clusters()];
    for (&a, &b) in p.labels().iter().zip(q.labels()) {
        counts[a][b] += 1;
    }
    Ok(ContingencyTable { counts })
}

/// Flows of items between index-aligned clusters of two K-cluster partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStats {
    /// ε_{k→}: items leaving cluster k of P.
    pub eps_out: Vec<usize>,
    /// ε_{→k}: items entering cluster k of Q from other clusters of P.
    pub eps_in: Vec<usize>,
    /// ε_{k→l} = |P_k ∩ Q_l| for k ≠ l (diagonal entries are zero).
    pub eps_pair: Vec<Vec<usize>>,
    /// max_{k≠l} ε_{k→l} / min(|P_k|, |P_l|).
    pub m_pq: f64,
}

/// Aligns the clusters of `q` to those of `p` by greedy maximal overlap
/// (ties toward lower indices) and computes the inter-cluster flows.
pub fn flow_stats(p: &Partition, q: &Partition) -> Result<FlowStats> {
    let k = p.num_clusters();
    if q.num_clusters() != k {
        return Err(Error::invalid(format!(
            "flow stats require equal cluster counts: {} vs {}",
            k,
            q.num_clusters()
        )));
    }
    let table = contingency(p, q)?;
    let counts = table.counts();

    // Greedy alignment: repeatedly match the most-overlapping unmatched pair.
    let mut q_to_p = vec![usize::MAX; k];
    let mut p_used = vec![false; k];
    let mut q_used = vec![false; k];
    for _ in 0..k {
        let mut best: Option<(usize, usize, usize)> = None;
        for kp in 0..k {
            if p_used[kp] {
                continue;
            }
            for kq in 0..k {
                if q_used[kq] {
                    continue;
                }
                let c = counts[kp][kq];
                if best.map_or(true, |(bc, _, _)| c > bc) {
                    best = Some((c, kp, kq));
                }
            }
        }
        let (_, kp, kq) = best.unwrap();
        q_to_p[kq] = kp;
        p_used[kp] = true;
        q_used[kq] = true;
    }

    let mut eps_pair = vec![vec![0usize; k]; k];
    for kp in 0..k {
        for kq in 0..k {
            let l = q_to_p[kq];
            if l != kp {
                eps_pair[kp][l] = counts[kp][kq];
            }
        }
    }
    let eps_out: Vec<usize> = (0..k).map(|a| eps_pair[a].iter().sum()).collect();
    let eps_in: Vec<usize> = (0..k).map(|b| (0..k).map(|a| eps_pair[a][b]).sum()).collect();

    let sizes = p.cluster_sizes();
    let mut m_pq = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            if a != b && eps_pair[a][b] > 0 {
                let denom = sizes[a].min(sizes[b]) as f64;
                m_pq = m_pq.max(eps_pair[a][b] as f64 / denom);
            }
        }
    }
    Ok(FlowStats {
        eps_out,
        eps_in,
        eps_pair,
        m_pq,
    })
}

/// Exact loss versus its first-order flow approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticCheck {
    /// T·ℓ(M_P, M_Q) = ‖M_P − M_Q‖²_F.
    pub loss_exact: f64,
    /// 2 Σ_k (ε_{k→} + ε_{→k}) / |P_k|.
    pub loss_approx: f64,
    /// `loss_exact / loss_approx`, or `None` when the approximation is zero.
    pub ratio: Option<f64>,
}

/// Compares the exact Frobenius loss with the flow-based approximation that
/// it approaches when cluster perturbations are small.
pub fn check_asymptotic_bound(p: &Partition, q: &Partition) -> Result<AsymptoticCheck> {
    let flows = flow_stats(p, q)?;
    let mp = to_rescaled_equivalence(p);
    let mq = to_rescaled_equivalence(q);
    let loss_exact = partition_loss(&mp, &mq)? * p.len() as f64;
    let sizes = p.cluster_sizes();
    let loss_approx: f64 = (0..p.num_clusters())
        .map(|k| 2.0 * (flows.eps_out[k] + flows.eps_in[k]) as f64 / sizes[k] as f64)
        .sum();
    let ratio = if loss_approx == 0.0 {
        None
    } else {
        Some(loss_exact / loss_approx)
    };
    Ok(AsymptoticCheck {
        loss_exact,
        loss_approx,
        ratio,
    })
}

/// Hausdorff-vs-Frobenius sandwich for sequential partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct HausdorffBounds {
    /// ε / l_ma(P); only meaningful when `applicable`.
    pub lower: Option<f64>,
    /// 12·K·ε / l_m(P); only meaningful when `applicable`.
    pub upper: Option<f64>,
    /// T·ℓ = ‖M_P − M_Q‖²_F.
    pub loss: f64,
    /// ε / max(l_ma(P), l_m(Q)); holds without the equal-size hypothesis.
    pub unconditional_lower: Option<f64>,
    /// True when |P| = |Q| and ε < l_m(P) / 2.
    pub applicable: bool,
}

fn segment_length_range(p: &Partition) -> (f64, f64) {
    let t = p.len() as f64;
    let sizes = p.cluster_sizes();
    let min = sizes.iter().min().copied().unwrap() as f64 / t;
    let max = sizes.iter().max().copied().unwrap() as f64 / t;
    (min, max)
}

/// Evaluates both sides of the equivalence between the Hausdorff distance and
/// the Frobenius loss. The two-sided sandwich applies when the partitions
/// have the same number of segments and the Hausdorff distance is below half
/// the minimal segment length of `p`; the one-sided lower bound needs neither
/// hypothesis.
pub fn check_hausdorff_bounds(p: &Partition, q: &Partition) -> Result<HausdorffBounds> {
    let eps = hausdorff(p, q)?;
    let mp = to_rescaled_equivalence(p);
    let mq = to_rescaled_equivalence(q);
    let loss = partition_loss(&mp, &mq)? * p.len() as f64;

    let (l_min_p, l_max_p) = segment_length_range(p);
    let (l_min_q, _) = segment_length_range(q);

    match eps {
        HausdorffResult::Incomparable => Ok(HausdorffBounds {
            lower: None,
            upper: None,
            loss,
            unconditional_lower: None,
            applicable: false,
        }),
        HausdorffResult::Distance(e) => {
            let unconditional = e / l_max_p.max(l_min_q);
            let applicable = p.num_clusters() == q.num_clusters() && e < l_min_p / 2.0;
            let (lower, upper) = if applicable {
                let lo = e / l_max_p;
                let hi = 12.0 * p.num_clusters() as f64 * e / l_min_p;
                debug_assert!(lo <= loss + 1e-9 && loss <= hi + 1e-9);
                (Some(lo), Some(hi))
            } else {
                (None, None)
            };
            debug_assert!(loss + 1e-9 >= unconditional);
            Ok(HausdorffBounds {
                lower,
                upper,
                loss,
                unconditional_lower: Some(unconditional),
                applicable,
            })
        }
    }
}
