//! Shared helpers for integration tests: random valid spiked models and
//! orthonormal frames, deterministic in an explicit seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scrgmvp::spiked::{SpikeSpec, SpikedCovariance};

/// Gram-Schmidt on standard-normal draws: `count` orthonormal M-vectors.
pub fn random_orthonormal(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    assert!(count <= dim);
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        for u in &frame {
            let proj = u.dot(&v);
            v.axpy(-proj, u, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-6 {
            frame.push(v / norm);
        }
    }
    frame
}

/// Random valid model: `r1` positive spikes in [1, 25] and `r2` negative
/// spikes in (-0.95, -0.05), strictly ordered, on a random orthonormal frame.
pub fn random_model(dim: usize, r1: usize, r2: usize, sigma2: f64, seed: u64) -> SpikedCovariance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = random_orthonormal(dim, r1 + r2, &mut rng);

    let mut positive: Vec<f64> = (0..r1).map(|_| rng.random_range(1.0..25.0)).collect();
    positive.sort_by(|a, b| b.total_cmp(a));
    // Force strict gaps.
    for i in 1..positive.len() {
        if positive[i] >= positive[i - 1] - 1e-3 {
            positive[i] = positive[i - 1] - 1e-3 - 0.1 * i as f64;
        }
    }

    let mut negative: Vec<f64> = (0..r2).map(|_| rng.random_range(-0.95..-0.05)).collect();
    // Index -r2 carries the largest value, index -1 the most negative.
    negative.sort_by(|a, b| b.total_cmp(a));
    for i in 1..negative.len() {
        if negative[i] >= negative[i - 1] - 1e-3 {
            negative[i] = (negative[i - 1] - 1e-3 - 0.05).max(-0.95);
        }
    }

    let mut spikes = Vec::with_capacity(r1 + r2);
    let mut frame = vectors.into_iter();
    for (rank, lambda) in positive.into_iter().enumerate() {
        spikes.push(SpikeSpec::new(rank as i32 + 1, lambda, frame.next().unwrap()).unwrap());
    }
    for (rank, lambda) in negative.into_iter().enumerate() {
        let index = -(r2 as i32) + rank as i32;
        spikes.push(SpikeSpec::new(index, lambda, frame.next().unwrap()).unwrap());
    }
    SpikedCovariance::new(sigma2, spikes, dim).unwrap()
}

/// Dense symmetric inverse through a generic eigendecomposition, independent
/// of the rank-r closed forms under test.
pub fn dense_solver_inverse(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = matrix.clone().symmetric_eigen();
    let inv_values = DVector::from_fn(matrix.nrows(), |i, _| 1.0 / eig.eigenvalues[i]);
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_values) * eig.eigenvectors.transpose()
}

/// Dense symmetric square root through the same generic route.
pub fn dense_solver_sqrt(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = matrix.clone().symmetric_eigen();
    let root_values = DVector::from_fn(matrix.nrows(), |i, _| eig.eigenvalues[i].max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root_values) * eig.eigenvectors.transpose()
}
