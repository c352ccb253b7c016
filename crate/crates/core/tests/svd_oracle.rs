//! Jacobi SVD against nalgebra.

use moore_core::linalg::svd;
use moore_core::Matrix;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

#[test]
fn singular_values_match_nalgebra() {
    for (seed, (rows, cols)) in [(4, 4), (7, 3), (12, 12), (20, 9), (33, 16), (64, 64)].into_iter().enumerate() {
        let w = Matrix::random_uniform(rows, cols, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed as u64));
        let f = svd(&w).unwrap();
        let mut reference: Vec<f64> = to_na(&w).singular_values().iter().copied().collect();
        reference.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(f.sigma.len(), reference.len());
        for (a, b) in f.sigma.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12 * reference[0], "{rows}x{cols}: {a} vs {b}");
        }
    }
}

#[test]
fn factors_reconstruct_and_are_orthonormal() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let w = Matrix::random_uniform(10, 6, -2.0, 2.0, &mut rng);
        let f = svd(&w).unwrap();
        assert!(f.u.orthonormality_error() < 1e-12);
        assert!(f.v.orthonormality_error() < 1e-12);
        let us = Matrix::from_fn(10, 6, |i, j| f.u.get(i, j) * f.sigma[j]);
        let rebuilt = us.matmul(&f.v.transpose(), None).unwrap();
        assert!(rebuilt.max_abs_diff(&w) < 1e-12);
        // nalgebra reconstruction as a second opinion on the same matrix
        let na = to_na(&w).svd(true, true);
        let na_rebuilt = na.recompose().unwrap();
        assert!(rebuilt.data().iter().zip(na_rebuilt.transpose().iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn rank_deficient_is_rejected() {
    let w = Matrix::from_fn(5, 3, |i, j| (i + 1) as f64 * [1.0, 2.0, -1.0][j]);
    let err = svd(&w).unwrap_err();
    assert_eq!(err.kind(), "RankDeficient");
}
