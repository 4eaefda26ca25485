//! Gaussian similarity graphs under a learned metric and spectral decoding
//! in the normalized-cut style.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::partition::Partition;
use crate::spectral::{round_projector, spectral_relax_k};

/// Symmetric pairwise similarity matrix with entries in (0, 1] and a unit
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    w: DMatrix<f64>,
}

impl SimilarityMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }
}

/// W_ij = exp(−(x_i − x_j)ᵀ B (x_i − x_j)) for the rows of `x`.
pub fn gaussian_similarity(x: &DMatrix<f64>, b: &Metric) -> Result<SimilarityMatrix> {
    if x.ncols() != b.dim() {
        return Err(Error::invalid(format!(
            "data has {} features but the metric has dimension {}",
            x.ncols(),
            b.dim()
        )));
    }
    let t = x.nrows();
    let mut w = DMatrix::from_element(t, t, 1.0);
    for i in 0..t {
        for j in (i + 1)..t {
            let d = (x.row(i) - x.row(j)).transpose();
            let s = (-b.quad_form(&d)).exp();
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix { w })
}

/// Symmetric normalization Diag(W1)^{−1/2} W Diag(W1)^{−1/2}; the result has
/// spectral radius at most one.
pub fn normalize_similarity(w: &SimilarityMatrix) -> Result<DMatrix<f64>> {
    let t = w.len();
    let mut inv_sqrt = Vec::with_capacity(t);
    for i in 0..t {
        let row_sum: f64 = w.w.row(i).sum();
        if row_sum <= 0.0 {
            return Err(Error::invalid(format!("row {i} of W sums to zero")));
        }
        inv_sqrt.push(1.0 / row_sum.sqrt());
    }
    let mut out = w.w.clone();
    for i in 0..t {
        for j in 0..t {
            out[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(out)
}

/// Spectral decoding on the (unnormalized) similarity: relax to the top-k
/// projector of W and round to a genuine partition.
pub fn ncut_decode(w: &SimilarityMatrix, k: usize, seed: u64) -> Result<Partition> {
    let projector = spectral_relax_k(&w.w, k)?;
    round_projector(&projector, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigen_desc;
    use crate::metric::MetricKind;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn similarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-2.0..2.0));

        // zero metric: everything maximally similar
        let w = gaussian_similarity(&x, &Metric::zeros(MetricKind::Full, 3)).unwrap();
        assert!((w.matrix() - DMatrix::from_element(5, 5, 1.0)).amax() < 1e-15);

        // identical rows
        let mut dup = x.clone();
        let first = dup.row(0).into_owned();
        dup.set_row(1, &first);
        let w = gaussian_similarity(&dup, &Metric::identity(MetricKind::Full, 3)).unwrap();
        assert!((w.matrix()[(0, 1)] - 1.0).abs() < 1e-15);

        // squared distance ln 2 gives similarity one half
        let x2 = DMatrix::from_row_slice(2, 1, &[0.0, (2.0f64).ln().sqrt()]);
        let w = gaussian_similarity(&x2, &Metric::identity(MetricKind::Diagonal, 1)).unwrap();
        assert!((w.matrix()[(0, 1)] - 0.5).abs() < 1e-12);

        assert!(gaussian_similarity(&x, &Metric::zeros(MetricKind::Full, 2)).is_err());
    }

    #[test]
    fn similarity_monotone_in_metric_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let b1 = Metric::Diagonal(DVector::from_vec(vec![1.0, 1.0]));
        let b2 = b1.scale(2.5);
        let w1 = gaussian_similarity(&x, &b1).unwrap();
        let w2 = gaussian_similarity(&x, &b2).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert!(w2.matrix()[(i, j)] <= w1.matrix()[(i, j)] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn normalization_examples() {
        // identity stays identity
        let eye = SimilarityMatrix {
            w: DMatrix::identity(3, 3),
        };
        let n = normalize_similarity(&eye).unwrap();
        assert!((&n - DMatrix::identity(3, 3)).amax() < 1e-15);

        // all-ones collapses to the constant 1/T matrix with top eigenvalue 1
        let ones = SimilarityMatrix {
            w: DMatrix::from_element(3, 3, 1.0),
        };
        let n = normalize_similarity(&ones).unwrap();
        assert!((&n - DMatrix::from_element(3, 3, 1.0 / 3.0)).amax() < 1e-12);
        let (vals, _) = symmetric_eigen_desc(&n);
        assert!((vals[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalized_spectrum_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let x = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-2.0..2.0));
            let w = gaussian_similarity(&x, &Metric::identity(MetricKind::Diagonal, 2)).unwrap();
            let n = normalize_similarity(&w).unwrap();
            let (vals, _) = symmetric_eigen_desc(&n);
            assert!(vals[0] <= 1.0 + 1e-8);
            assert!(vals[vals.len() - 1] >= -1.0 - 1e-8);
        }
    }

    #[test]
    fn decode_recovers_block_structure() {
        // strong in-block similarity, weak across
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut x = DMatrix::zeros(12, 1);
        for i in 0..6 {
            x[(i, 0)] = rng.gen_range(-0.1..0.1);
        }
        for i in 6..12 {
            x[(i, 0)] = 4.0 + rng.gen_range(-0.1..0.1);
        }
        let w = gaussian_similarity(&x, &Metric::identity(MetricKind::Diagonal, 1)).unwrap();
        let p = ncut_decode(&w, 2, 0).unwrap();
        let truth = Partition::new(
            vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
            false,
        )
        .unwrap();
        assert!((crate::partition::rand_index(&p, &truth).unwrap() - 1.0).abs() < 1e-12);

        assert_eq!(ncut_decode(&w, 1, 0).unwrap().num_clusters(), 1);
        assert_eq!(ncut_decode(&w, 12, 0).unwrap().num_clusters(), 12);
    }
}
