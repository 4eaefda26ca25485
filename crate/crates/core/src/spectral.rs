//! Spectral relaxations of the partitioning objective (projectors in place of
//! rescaled equivalence matrices) and Lloyd's K-means under a Mahalanobis
//! metric, used both for decoding and for rounding relaxed solutions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;
use crate::metric::Metric;
use crate::partition::Partition;

/// An orthogonal projector M = U Uᵀ onto `k` eigenvectors, the relaxed
/// stand-in for a rescaled equivalence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProjector {
    matrix: DMatrix<f64>,
    basis: DMatrix<f64>,
    k: usize,
}

impl SpectralProjector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// T×k orthonormal basis of the projected subspace.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.k
    }

    /// tr(A M) for the matrix the projector was built from equals the sum of
    /// the selected eigenvalues; callers can recompute it against any A.
    pub fn objective(&self, a: &DMatrix<f64>) -> f64 {
        a.dot(&self.matrix)
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("matrix must be square"));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::invalid("matrix is not symmetric"));
            }
        }
    }
    Ok(())
}

fn projector_from_basis(basis: DMatrix<f64>) -> SpectralProjector {
    let k = basis.ncols();
    let matrix = &basis * basis.transpose();
    SpectralProjector { matrix, basis, k }
}

/// Projector onto the `k` leading eigenvectors of a symmetric matrix; its
/// objective value tr(AM) is the sum of the k largest eigenvalues and upper
/// bounds the combinatorial maximum over k-cluster partitions.
pub fn spectral_relax_k(a: &DMatrix<f64>, k: usize) -> Result<SpectralProjector> {
    check_symmetric(a)?;
    if k == 0 || k > a.nrows() {
        return Err(Error::invalid(format!(
            "k = {k} outside [1, {}]",
            a.nrows()
        )));
    }
    let (_, vecs) = symmetric_eigen_desc(a);
    Ok(projector_from_basis(vecs.columns(0, k).into_owned()))
}

/// Projector onto the eigenvectors with strictly positive eigenvalue; its
/// objective value is the positive part of the spectrum, the relaxation used
/// when the number of clusters is free.
pub fn spectral_relax_auto(a: &DMatrix<f64>) -> Result<SpectralProjector> {
    check_symmetric(a)?;
    let (vals, vecs) = symmetric_eigen_desc(a);
    let k = vals.iter().filter(|&&v| v > 0.0).count();
    Ok(projector_from_basis(vecs.columns(0, k).into_owned()))
}

/// Output of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub partition: Partition,
    /// K×P cluster means in the original (untransformed) feature space.
    pub centroids: DMatrix<f64>,
    /// Σ_i (x_i − c_{a(i)})ᵀ B (x_i − c_{a(i)}).
    pub distortion: f64,
}

const LLOYD_MAX_ITERS: usize = 200;

fn squared_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn kmeans_pp_seed(
    rows: &[DVector<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let t = rows.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(rows[rng.gen_range(0..t)].clone());
    let mut d2: Vec<f64> = rows
        .iter()
        .map(|r| squared_dist(r, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= f64::MIN_POSITIVE {
            rng.gen_range(0..t)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = t - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.push(rows[idx].clone());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(squared_dist(r, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd_once(
    rows: &[DVector<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, f64) {
    let t = rows.len();
    let mut centers = kmeans_pp_seed(rows, k, rng);
    let mut assign = vec![0usize; t];
    for _ in 0..LLOYD_MAX_ITERS {
        // assignment step
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = squared_dist(r, &centers[0]);
            for (j, c) in centers.iter().enumerate().skip(1) {
                let d = squared_dist(r, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // re-seed any empty cluster with the point farthest from its center
        for j in 0..k {
            if !assign.contains(&j) {
                let far = (0..t)
                    .max_by(|&a, &b| {
                        squared_dist(&rows[a], &centers[assign[a]])
                            .partial_cmp(&squared_dist(&rows[b], &centers[assign[b]]))
                            .unwrap()
                    })
                    .unwrap();
                assign[far] = j;
                centers[j] = rows[far].clone();
                changed = true;
            }
        }
        // update step
        let dim = rows[0].len();
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            sums[assign[i]] += r;
            counts[assign[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / counts[j] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let distortion = rows
        .iter()
        .enumerate()
        .map(|(i, r)| squared_dist(r, &centers[assign[i]]))
        .sum();
    (assign, distortion)
}

/// Lloyd's K-means on the rows of `x` under the metric `b`, restarted from
/// `restarts` seedings; the lowest-distortion run wins (ties keep the
/// earliest restart). Deterministic for a given seed.
pub fn kmeans(
    x: &DMatrix<f64>,
    b: &Metric,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<KMeansResult> {
    let t = x.nrows();
    if k == 0 || k > t {
        return Err(Error::invalid(format!("k = {k} outside [1, {t}]")));
    }
    if restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let transformed = b.transform_data(x)?;
    let rows: Vec<DVector<f64>> = (0..t)
        .map(|i| transformed.row(i).transpose())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts {
        let (assign, distortion) = lloyd_once(&rows, k, &mut rng);
        if best.as_ref().map_or(true, |(_, d)| distortion < *d) {
            best = Some((assign, distortion));
        }
    }
    let (assign, distortion) = best.unwrap();
    let partition = Partition::from_assignments(&assign)?;

    // centroids are the per-cluster means in the original space
    let kk = partition.num_clusters();
    let mut centroids = DMatrix::zeros(kk, x.ncols());
    let sizes = partition.cluster_sizes();
    for (i, &c) in partition.labels().iter().enumerate() {
        for p in 0..x.ncols() {
            centroids[(c, p)] += x[(i, p)];
        }
    }
    for c in 0..kk {
        for p in 0..x.ncols() {
            centroids[(c, p)] /= sizes[c] as f64;
        }
    }
    Ok(KMeansResult {
        partition,
        centroids,
        distortion,
    })
}

const ZERO_ROW_TOL: f64 = 1e-12;

/// Rounds a relaxed projector to a genuine partition: K-means on the
/// row-normalized basis. Rows that are exactly zero join cluster 0; if `k`
/// exceeds the basis rank the basis is padded with zero columns.
pub fn round_projector(p: &SpectralProjector, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let t = p.basis.nrows();
    if k > t {
        return Err(Error::invalid(format!("k = {k} exceeds {t} items")));
    }
    let width = p.basis.ncols().max(k);
    let mut rows = DMatrix::zeros(t, width);
    rows.columns_mut(0, p.basis.ncols()).copy_from(&p.basis);
    let mut zero_rows = Vec::new();
    for i in 0..t {
        let norm = rows.row(i).norm();
        if norm < ZERO_ROW_TOL {
            zero_rows.push(i);
        } else {
            let mut r = rows.row_mut(i);
            r /= norm;
        }
    }
    let result = kmeans(&rows, &Metric::identity(crate::metric::MetricKind::Diagonal, width), k, 10, seed)?;
    let mut assign = result.partition.labels().to_vec();
    for i in zero_rows {
        assign[i] = 0;
    }
    Partition::from_assignments(&assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricKind;
    use crate::partition::to_rescaled_equivalence;
    use rand::Rng;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(values.to_vec()))
    }

    #[test]
    fn relax_k_on_diagonal_matrix() {
        let a = diag(&[3.0, 1.0, -2.0]);
        let p = spectral_relax_k(&a, 2).unwrap();
        assert!((p.objective(&a) - 4.0).abs() < 1e-10);
        assert!((p.matrix() - diag(&[1.0, 1.0, 0.0])).amax() < 1e-10);

        let id = DMatrix::<f64>::identity(5, 5);
        for k in 1..=5 {
            let p = spectral_relax_k(&id, k).unwrap();
            assert!((p.objective(&id) - k as f64).abs() < 1e-10);
        }

        assert!(spectral_relax_k(&a, 0).is_err());
        assert!(spectral_relax_k(&a, 4).is_err());
    }

    #[test]
    fn relax_auto_examples() {
        let a = diag(&[3.0, 1.0, -2.0]);
        let p = spectral_relax_auto(&a).unwrap();
        assert_eq!(p.rank(), 2);
        assert!((p.objective(&a) - 4.0).abs() < 1e-10);

        let neg = diag(&[-1.0, -0.5]);
        let p = spectral_relax_auto(&neg).unwrap();
        assert_eq!(p.rank(), 0);
        assert!(p.matrix().amax() < 1e-15);
        assert!(p.objective(&neg).abs() < 1e-15);
    }

    #[test]
    fn relax_auto_thresholds_gram_spectrum() {
        // positive eigenvalues of X Xᵀ − λ I are exactly those of X Xᵀ above λ
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let g = &x * x.transpose();
        let lambda = 0.5;
        let shifted = &g - DMatrix::identity(6, 6) * lambda;
        let p = spectral_relax_auto(&shifted).unwrap();
        let (vals, _) = symmetric_eigen_desc(&g);
        let expected = vals.iter().filter(|&&v| v > lambda).count();
        assert_eq!(p.rank(), expected);
    }

    #[test]
    fn projector_invariants_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let t = rng.gen_range(2..=10);
            let mut a = DMatrix::zeros(t, t);
            for i in 0..t {
                for j in i..t {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let k = rng.gen_range(1..=t);
            let p = spectral_relax_k(&a, k).unwrap();
            let m = p.matrix();
            assert!((m - m.transpose()).amax() < 1e-8);
            assert!((m * m - m).amax() < 1e-8);
            assert!((m.trace() - k as f64).abs() < 1e-8);
            assert!((m - p.basis() * p.basis().transpose()).amax() < 1e-10);
        }
    }

    #[test]
    fn relaxation_dominates_exhaustive_partitions() {
        // enumerate all set partitions of up to 8 items into k clusters
        fn enumerate(t: usize, k: usize) -> Vec<Vec<usize>> {
            let mut out = Vec::new();
            let mut labels = vec![0usize; t];
            fn rec(
                labels: &mut Vec<usize>,
                i: usize,
                used: usize,
                k: usize,
                out: &mut Vec<Vec<usize>>,
            ) {
                let t = labels.len();
                if i == t {
                    if used == k {
                        out.push(labels.clone());
                    }
                    return;
                }
                for c in 0..=used.min(k - 1) {
                    labels[i] = c;
                    let new_used = used.max(c + 1);
                    if new_used + (t - i - 1) >= k {
                        rec(labels, i + 1, new_used, k, out);
                    }
                }
            }
            rec(&mut labels, 1, 1, k, &mut out); // item 0 fixed to cluster 0
            out
        }

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let t = 8;
            let mut a = DMatrix::zeros(t, t);
            for i in 0..t {
                for j in i..t {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let k = 3;
            let relaxed = spectral_relax_k(&a, k).unwrap().objective(&a);
            let mut best = f64::NEG_INFINITY;
            for labels in enumerate(t, k) {
                let p = Partition::new(labels, false).unwrap();
                let m = to_rescaled_equivalence(&p);
                best = best.max(a.dot(m.matrix()));
            }
            assert!(
                relaxed >= best - 1e-8,
                "relaxed {relaxed} below combinatorial max {best}"
            );
        }
    }

    #[test]
    fn kmeans_separated_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut x = DMatrix::zeros(20, 2);
        for i in 0..10 {
            x[(i, 0)] = rng.gen_range(-0.5..0.5);
            x[(i, 1)] = rng.gen_range(-0.5..0.5);
        }
        for i in 10..20 {
            x[(i, 0)] = 50.0 + rng.gen_range(-0.5..0.5);
            x[(i, 1)] = rng.gen_range(-0.5..0.5);
        }
        for seed in 0..5 {
            let r = kmeans(&x, &Metric::identity(MetricKind::Full, 2), 2, 3, seed).unwrap();
            let labels = r.partition.labels();
            assert!(labels[..10].iter().all(|&l| l == labels[0]));
            assert!(labels[10..].iter().all(|&l| l == labels[10]));
            assert_ne!(labels[0], labels[10]);
        }
    }

    #[test]
    fn kmeans_k_equals_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let r = kmeans(&x, &Metric::identity(MetricKind::Full, 2), 6, 5, 0).unwrap();
        assert_eq!(r.partition.num_clusters(), 6);
        assert!(r.distortion < 1e-12);
    }

    #[test]
    fn kmeans_zero_weight_dimension_matches_projected_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let x = DMatrix::from_fn(30, 2, |i, j| {
            if j == 0 {
                if i < 15 {
                    rng.gen_range(-0.5..0.5)
                } else {
                    10.0 + rng.gen_range(-0.5..0.5)
                }
            } else {
                rng.gen_range(-20.0..20.0) // pure noise dimension
            }
        });
        let masked = Metric::Diagonal(DVector::from_vec(vec![1.0, 0.0]));
        let r1 = kmeans(&x, &masked, 2, 4, 11).unwrap();
        // reference: same run on the explicitly projected data
        let mut projected = x.clone();
        for mut r in projected.row_iter_mut() {
            r[1] = 0.0;
        }
        let r2 = kmeans(&projected, &Metric::identity(MetricKind::Diagonal, 2), 2, 4, 11).unwrap();
        assert_eq!(r1.partition, r2.partition);
        assert!((r1.distortion - r2.distortion).abs() < 1e-9);
    }

    #[test]
    fn kmeans_centroids_are_cluster_means_and_distortion_matches_trace_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let x = DMatrix::from_fn(12, 3, |_, _| rng.gen_range(-2.0..2.0));
        let raw = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = Metric::Full(&raw * raw.transpose());
        let r = kmeans(&x, &b, 3, 5, 2).unwrap();
        // centroids equal per-cluster means
        let sizes = r.partition.cluster_sizes();
        for (c, &size) in sizes.iter().enumerate() {
            let mut mean = DVector::zeros(3);
            for (i, &l) in r.partition.labels().iter().enumerate() {
                if l == c {
                    mean += x.row(i).transpose();
                }
            }
            mean /= size as f64;
            assert!((r.centroids.row(c).transpose() - mean).amax() < 1e-10);
        }
        // distortion equals tr[X B Xᵀ (I − M)]
        let g = b.gram(&x).unwrap();
        let m = to_rescaled_equivalence(&r.partition);
        let trace_form = g.trace() - g.dot(m.matrix());
        assert!((r.distortion - trace_form).abs() < 1e-8);
    }

    #[test]
    fn round_projector_recovers_blocks() {
        // two-block constant structure
        let p = Partition::new(vec![0, 0, 0, 1, 1], false).unwrap();
        let m = to_rescaled_equivalence(&p);
        let relaxed = spectral_relax_k(m.matrix(), 2).unwrap();
        let rounded = round_projector(&relaxed, 2, 0).unwrap();
        assert!((rand_index_of(&rounded, &p) - 1.0).abs() < 1e-12);

        let single = round_projector(&relaxed, 1, 0).unwrap();
        assert_eq!(single.num_clusters(), 1);

        let id = spectral_relax_k(&DMatrix::<f64>::identity(4, 4), 4).unwrap();
        let all = round_projector(&id, 4, 0).unwrap();
        assert_eq!(all.num_clusters(), 4);
    }

    fn rand_index_of(a: &Partition, b: &Partition) -> f64 {
        crate::partition::rand_index(a, b).unwrap()
    }

    #[test]
    fn lloyd_distortion_majorized_by_any_restart() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let x = DMatrix::from_fn(25, 2, |_, _| rng.gen_range(-3.0..3.0));
        let b = Metric::identity(MetricKind::Full, 2);
        let best = kmeans(&x, &b, 4, 10, 5).unwrap();
        let single = kmeans(&x, &b, 4, 1, 5).unwrap();
        assert!(best.distortion <= single.distortion + 1e-12);
    }
}
