//! Overflow-safe accumulation of long matrix products.
//!
//! The σ-graph of A^n(x) is tracked through the exterior powers: for each
//! i the compound product ∧^i(A_{n-1})···∧^i(A_0) is accumulated with its
//! own scalar log-scale, so σ_i = log‖∧^i A^n(x)‖ stays finite for spreads
//! far beyond f64 range. σ_d is accumulated additively from log|det|.

use crate::error::{Error, Result};
use crate::linalg::{self, SingularData};
use crate::Matrix;

/// Rescale cadence for accumulated factors.
pub const RENORM_EVERY: usize = 20;

/// A segment product A^n(x) in log-scaled form: `matrix` has unit operator
/// norm and the true product is exp(log_scale)·matrix. `sigma` is the exact
/// σ-ledger (σ_0 = 0, …, σ_d) accumulated through compound matrices, which
/// reproduces the true σ-graph even when the product itself would overflow.
#[derive(Debug, Clone)]
pub struct SegmentProduct {
    pub dim: usize,
    pub len: usize,
    pub matrix: Matrix,
    pub log_scale: f64,
    pub sigma: Vec<f64>,
}

impl SegmentProduct {
    pub fn singular_data(&self) -> Result<SingularData> {
        SingularData::from_log_sigmas(&self.sigma)
    }

    pub fn zeta(&self) -> Result<f64> {
        Ok(self.singular_data()?.zeta)
    }

    pub fn kappa(&self) -> Result<f64> {
        Ok(self.singular_data()?.kappa)
    }
}

/// Incremental product accumulator. `push` composes one more factor on the
/// left (A fresh ↦ A·M, the cocycle order); `push_right` composes on the
/// right, used for suffix scans.
pub struct ProductAccumulator {
    dim: usize,
    /// (compound matrix, log scale) for i = 1..=d−1; entry 0 is the product
    /// itself.
    comps: Vec<(Matrix, f64)>,
    log_det: f64,
    steps: usize,
    buf: Vec<Matrix>,
}

impl ProductAccumulator {
    pub fn new(dim: usize) -> Self {
        let mut comps = Vec::with_capacity(dim.saturating_sub(1));
        let mut buf = Vec::with_capacity(dim.saturating_sub(1));
        for i in 1..dim {
            let n = linalg::binomial(dim, i) as usize;
            comps.push((Matrix::identity(n, n), 0.0));
            buf.push(Matrix::zeros(n, n));
        }
        ProductAccumulator {
            dim,
            comps,
            log_det: 0.0,
            steps: 0,
            buf,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn push(&mut self, a: &Matrix) -> Result<()> {
        self.compose(a, false)
    }

    pub fn push_right(&mut self, a: &Matrix) -> Result<()> {
        self.compose(a, true)
    }

    fn compose(&mut self, a: &Matrix, right: bool) -> Result<()> {
        debug_assert_eq!(a.nrows(), self.dim);
        let det = a.clone().determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidMatrix(format!(
                "non-invertible factor in product (det = {det})"
            )));
        }
        self.log_det += det.abs().ln();
        for i in 1..self.dim {
            let wedge = if i == 1 {
                None
            } else {
                Some(linalg::exterior_power(a, i)?)
            };
            let w = wedge.as_ref().unwrap_or(a);
            let (comp, _) = &self.comps[i - 1];
            let out = &mut self.buf[i - 1];
            if right {
                comp.mul_to(w, out);
            } else {
                w.mul_to(comp, out);
            }
            std::mem::swap(&mut self.comps[i - 1].0, out);
        }
        self.steps += 1;
        if self.steps % RENORM_EVERY == 0 {
            self.renormalize()?;
        }
        Ok(())
    }

    fn renormalize(&mut self) -> Result<()> {
        for (m, scale) in &mut self.comps {
            let top = m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()));
            if top == 0.0 || !top.is_finite() {
                return Err(Error::Numerical(
                    "product accumulator collapsed to zero or overflowed".into(),
                ));
            }
            *m /= top;
            *scale += top.ln();
        }
        Ok(())
    }

    /// The σ-ledger of the accumulated product: σ_0 = 0, σ_i from the
    /// compound norms, σ_d exact from the determinant ledger.
    pub fn sigma(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim + 1);
        out.push(0.0);
        for (m, scale) in &self.comps {
            out.push(scale + linalg::operator_norm(m).ln());
        }
        out.push(self.log_det);
        out
    }

    pub fn singular_data(&self) -> Result<SingularData> {
        SingularData::from_log_sigmas(&self.sigma())
    }

    pub fn snapshot(&self) -> SegmentProduct {
        let (m, scale) = match self.comps.first() {
            Some((m, s)) => (m.clone(), *s),
            None => (Matrix::identity(self.dim, self.dim), 0.0),
        };
        let norm = linalg::operator_norm(&m);
        let (matrix, log_scale) = if norm > 0.0 && norm.is_finite() {
            (m / norm, scale + norm.ln())
        } else {
            (m, scale)
        };
        SegmentProduct {
            dim: self.dim,
            len: self.steps,
            matrix,
            log_scale,
            sigma: self.sigma(),
        }
    }
}

/// Product of an explicit list of maps, taken in cocycle order
/// (maps[n−1]···maps[0]).
pub fn product_of_maps(dim: usize, maps: &[Matrix]) -> Result<SegmentProduct> {
    let mut acc = ProductAccumulator::new(dim);
    for a in maps {
        acc.push(a)?;
    }
    Ok(acc.snapshot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn diag(entries: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_row_slice(entries))
    }

    #[test]
    fn empty_product_is_identity() {
        let p = product_of_maps(3, &[]).unwrap();
        assert_eq!(p.len, 0);
        assert_abs_diff_eq!(p.log_scale, 0.0, epsilon = 1e-15);
        let sd = p.singular_data().unwrap();
        assert_eq!(sd.zeta, 0.0);
    }

    #[test]
    fn huge_spread_does_not_overflow() {
        // diag(2, 1/2)^1000 has singular spread 1386 nats, far past f64
        let m = diag(&[2.0, 0.5]);
        let maps: Vec<Matrix> = (0..1000).map(|_| m.clone()).collect();
        let p = product_of_maps(2, &maps).unwrap();
        let sd = p.singular_data().unwrap();
        let ln2 = 2.0_f64.ln();
        assert_abs_diff_eq!(sd.lambdas[0], 1000.0 * ln2, epsilon = 1e-6);
        assert_abs_diff_eq!(sd.lambdas[1], -1000.0 * ln2, epsilon = 1e-6);
        assert_abs_diff_eq!(sd.zeta, 1000.0 * ln2, epsilon = 1e-6);
        assert_abs_diff_eq!(sd.kappa, 2000.0 * ln2, epsilon = 1e-6);
    }

    #[test]
    fn sigma_ledger_matches_direct_svd_for_moderate_products() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for d in 2..=4 {
            let maps: Vec<Matrix> = (0..12)
                .map(|_| crate::sampling::invertible(&mut rng, d, 0.8))
                .collect();
            let p = product_of_maps(d, &maps).unwrap();
            let direct = maps
                .iter()
                .fold(Matrix::identity(d, d), |acc, m| m * acc);
            let sd_direct = SingularData::from_matrix(&direct).unwrap();
            let sd_ledger = p.singular_data().unwrap();
            for i in 0..=d {
                assert_abs_diff_eq!(
                    sd_ledger.sigmas[i],
                    sd_direct.sigmas[i],
                    epsilon = 1e-8
                );
            }
            // scaled matrix reproduces the product up to scale
            let rebuilt = &p.matrix * p.log_scale.exp();
            assert!((rebuilt - &direct).norm() / direct.norm() < 1e-8);
        }
    }

    #[test]
    fn right_accumulation_builds_suffixes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let maps: Vec<Matrix> = (0..9)
            .map(|_| crate::sampling::invertible(&mut rng, 2, 0.6))
            .collect();
        // suffix product maps[8]···maps[3]
        let mut acc = ProductAccumulator::new(2);
        for a in maps[3..].iter().rev() {
            acc.push_right(a).unwrap();
        }
        let suffix = acc.snapshot();
        let direct = maps[3..]
            .iter()
            .rev()
            .fold(Matrix::identity(2, 2), |acc, m| acc * m);
        let rebuilt = &suffix.matrix * suffix.log_scale.exp();
        assert!((rebuilt - &direct).norm() / direct.norm() < 1e-10);
    }

    #[test]
    fn singular_factor_rejected() {
        let mut acc = ProductAccumulator::new(2);
        assert!(acc.push(&diag(&[1.0, 0.0])).is_err());
    }
}
