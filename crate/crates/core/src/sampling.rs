//! Seeded samplers for random test matrices.
//!
//! Random invertible matrices are drawn as U·diag(e^{u_i})·Vᵀ with U, V
//! Haar-ish orthogonal (QR of a Gaussian matrix) and log singular values
//! uniform in a bounded range. This keeps condition numbers under control so
//! identity checks are meaningful at 1e-10 tolerances.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::Matrix;

/// Haar-like random orthogonal matrix via QR of a Gaussian sample.
pub fn orthogonal<R: Rng>(rng: &mut R, d: usize) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix signs so the distribution is symmetric
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random invertible matrix with log singular values uniform in
/// [-log_range, log_range].
pub fn invertible<R: Rng>(rng: &mut R, d: usize, log_range: f64) -> Matrix {
    let u = orthogonal(rng, d);
    let v = orthogonal(rng, d);
    let s = DVector::from_fn(d, |_, _| (rng.gen_range(-log_range..log_range)).exp());
    u * Matrix::from_diagonal(&s) * v.transpose()
}

/// Random non-increasing log singular values with zero sum (unimodular
/// spectrum), for σ-graph algebra tests.
pub fn unimodular_lambdas<R: Rng>(rng: &mut R, d: usize, spread: f64) -> Vec<f64> {
    let mut l: Vec<f64> = (0..d).map(|_| rng.gen_range(-spread..spread)).collect();
    l.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mean = l.iter().sum::<f64>() / d as f64;
    for x in &mut l {
        *x -= mean;
    }
    l.sort_by(|a, b| b.partial_cmp(a).unwrap());
    l
}

/// Random unit vector.
pub fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 2..=6 {
            let q = orthogonal(&mut rng, d);
            let defect = (q.transpose() * &q - Matrix::identity(d, d)).norm();
            assert!(defect < 1e-12, "d={d} defect={defect}");
        }
    }

    #[test]
    fn unimodular_lambdas_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 2..=6 {
            let l = unimodular_lambdas(&mut rng, d, 3.0);
            assert!(l.windows(2).all(|w| w[0] >= w[1]));
            assert!(l.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
