//! Per-matrix spectrum records and the σ-graph.
//!
//! For an invertible L with log singular values λ_1 ≥ … ≥ λ_d, the σ-graph
//! is the concave piecewise-linear graph of the partial sums
//! σ_i = λ_1 + … + λ_i over i = 0..d. Everything downstream is read off it:
//!
//! - ζ(L): area between the σ-graph and the chord joining (0,0) to (d,σ_d);
//!   zero exactly for conformal maps,
//! - κ(L): log(‖L‖/𝔪(L)) = λ_1 − λ_d,
//! - γ_i(L): half-gaps (λ_i − λ_{i+1})/2, the triangle areas at the interior
//!   vertices of the σ-graph.
//!
//! All quantities are computed and stored in the log domain so that long
//! cocycle products never overflow.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

/// Relative gap below which two consecutive singular values are considered
/// tied when selecting frames.
pub const DEGENERATE_GAP_TOL: f64 = 1e-12;

/// ζ below this is classified as conformal (below SVD noise floor).
pub const CONFORMAL_TOL: f64 = 1e-9;

/// Spectrum record of an invertible matrix: the σ-graph and the distortion
/// functionals derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularData {
    pub dim: usize,
    /// Log singular values, non-increasing.
    pub lambdas: Vec<f64>,
    /// Partial sums σ_0 = 0, σ_i = λ_1 + … + λ_i; length dim + 1.
    pub sigmas: Vec<f64>,
    /// Half-gaps γ_i = (λ_i − λ_{i+1})/2 for i = 1..d−1; empty when d = 1.
    pub gammas: Vec<f64>,
    pub zeta: f64,
    pub kappa: f64,
}

impl SingularData {
    /// Spectrum of an explicit matrix via SVD.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let lambdas = log_singular_values(m)?;
        Ok(Self::from_lambdas(lambdas))
    }

    /// Spectrum of e^{log_scale}·M given the unit-scaled factor M. The scale
    /// shifts every λ_i; ζ, κ and the γ_i are homothety-invariant.
    pub fn from_scaled_matrix(m: &Matrix, log_scale: f64) -> Result<Self> {
        let mut lambdas = log_singular_values(m)?;
        for l in &mut lambdas {
            *l += log_scale;
        }
        Ok(Self::from_lambdas(lambdas))
    }

    /// Rebuild a record from a σ-ledger (σ_0 = 0, σ_1, …, σ_d), as produced
    /// by compound-matrix accumulation of long products. Tiny non-concavity
    /// from rounding is clipped; anything larger is a numerical failure.
    pub fn from_log_sigmas(sigmas: &[f64]) -> Result<Self> {
        if sigmas.len() < 2 || sigmas[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "sigma ledger must start at 0 and have length d+1".into(),
            ));
        }
        let d = sigmas.len() - 1;
        let mut lambdas: Vec<f64> = (1..=d).map(|i| sigmas[i] - sigmas[i - 1]).collect();
        let scale = lambdas.iter().map(|l| l.abs()).fold(1.0, f64::max);
        for i in 1..d {
            if lambdas[i] > lambdas[i - 1] {
                if lambdas[i] - lambdas[i - 1] > 1e-6 * scale {
                    return Err(Error::Numerical(format!(
                        "sigma ledger is not concave at index {i}: λ_{i} = {} > λ_{} = {}",
                        lambdas[i],
                        i - 1,
                        lambdas[i - 1],
                    )));
                }
                lambdas[i] = lambdas[i - 1];
            }
        }
        Ok(Self::from_lambdas(lambdas))
    }

    /// Build the record from non-increasing log singular values.
    pub fn from_lambdas(lambdas: Vec<f64>) -> Self {
        let d = lambdas.len();
        debug_assert!(d >= 1);
        let mut sigmas = Vec::with_capacity(d + 1);
        sigmas.push(0.0);
        let mut acc = 0.0;
        for &l in &lambdas {
            acc += l;
            sigmas.push(acc);
        }
        let gammas: Vec<f64> = (0..d.saturating_sub(1))
            .map(|i| 0.5 * (lambdas[i] - lambdas[i + 1]))
            .collect();
        let zeta = if d == 1 {
            0.0
        } else {
            sigmas[1..d].iter().sum::<f64>() - 0.5 * (d as f64 - 1.0) * sigmas[d]
        };
        let kappa = lambdas[0] - lambdas[d - 1];
        SingularData {
            dim: d,
            lambdas,
            sigmas,
            gammas,
            zeta,
            kappa,
        }
    }

    /// σ_i for i in 0..=d.
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    /// γ_i for i in 1..=d−1 (1-based, as in the σ-graph picture).
    pub fn gamma(&self, i: usize) -> f64 {
        self.gammas[i - 1]
    }

    /// Log of the mininorm 𝔪(L) = ‖L^{-1}‖^{-1}; equals λ_d.
    pub fn mininorm_log(&self) -> f64 {
        *self.lambdas.last().unwrap()
    }

    /// Log singular-value gap λ_i − λ_{i+1} at index i in 1..=d−1.
    pub fn log_gap(&self, i: usize) -> f64 {
        2.0 * self.gammas[i - 1]
    }

    pub fn is_conformal(&self) -> bool {
        self.zeta < CONFORMAL_TOL
    }
}

/// Log singular values of an invertible matrix, non-increasing.
fn log_singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let (_, sv, _) = sorted_svd(m)?;
    let smallest = sv[sv.len() - 1];
    if !(smallest > 0.0) || !smallest.is_finite() {
        return Err(Error::InvalidMatrix(format!(
            "matrix is singular or near-singular (smallest singular value {smallest:e})"
        )));
    }
    Ok(sv.iter().map(|s| s.ln()).collect())
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entries".into()))
    }
}

/// Largest half-gap of the σ-graph: returns (i*, γ_{i*}) with 1-based i*,
/// ties broken toward the smallest index. Satisfies γ_{i*} ≥ b_d·ζ.
pub fn max_half_gap(s: &SingularData) -> Result<(usize, f64)> {
    if s.dim < 2 {
        return Err(Error::InvalidArgument(
            "no singular-value gaps exist for d < 2".into(),
        ));
    }
    let mut best = (1usize, s.gammas[0]);
    for (idx, &g) in s.gammas.iter().enumerate().skip(1) {
        if g > best.1 {
            best = (idx + 1, g);
        }
    }
    Ok(best)
}

/// Constants depending only on the dimension:
/// b = 6/(d(d²−1)) relating the maximal half-gap to ζ,
/// a = 1/(1+b/2) — the guaranteed ζ-contraction factor of the segment
/// perturbation, and c — the slack constant of the three-factor singular
/// value bound, fixed as d + 2·log C(d,⌊d/2⌋).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionConstants {
    pub dim: usize,
    pub b: f64,
    pub a: f64,
    pub c: f64,
}

pub fn dimension_constants(d: usize) -> Result<DimensionConstants> {
    if d < 2 {
        return Err(Error::InvalidArgument(
            "dimension constants require d >= 2".into(),
        ));
    }
    let df = d as f64;
    let b = 6.0 / (df * (df * df - 1.0));
    let a = 1.0 / (1.0 + b / 2.0);
    let c = df + 2.0 * (binomial(d, d / 2) as f64).ln();
    Ok(DimensionConstants { dim: d, b, a, c })
}

/// C(n, k) for the small dimensions used here.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u64 / (j + 1) as u64;
    }
    acc
}

/// Lexicographically ordered k-element subsets of {0, …, n−1}.
pub fn index_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, k) as usize);
    let mut current: Vec<usize> = (0..k).collect();
    if k == 0 {
        out.push(Vec::new());
        return out;
    }
    if k > n {
        return out;
    }
    loop {
        out.push(current.clone());
        // advance to the next subset in lex order
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// i-th exterior power (compound matrix) of M: the C(d,i)×C(d,i) matrix of
/// i×i minors, rows and columns indexed by lexicographically ordered index
/// subsets. Its operator norm is exp(σ_i(M)).
pub fn exterior_power(m: &Matrix, i: usize) -> Result<Matrix> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::InvalidMatrix("exterior power of a non-square matrix".into()));
    }
    if i == 0 || i > d {
        return Err(Error::InvalidArgument(format!(
            "exterior power index {i} out of range 1..={d}"
        )));
    }
    check_finite(m)?;
    if i == 1 {
        return Ok(m.clone());
    }
    let subsets = index_subsets(d, i);
    let n = subsets.len();
    let mut out = Matrix::zeros(n, n);
    let mut minor = Matrix::zeros(i, i);
    for (r, rows) in subsets.iter().enumerate() {
        for (c, cols) in subsets.iter().enumerate() {
            for (a, &row) in rows.iter().enumerate() {
                for (b, &col) in cols.iter().enumerate() {
                    minor[(a, b)] = m[(row, col)];
                }
            }
            out[(r, c)] = minor.clone().determinant();
        }
    }
    Ok(out)
}

/// Operator norm (largest singular value).
pub fn operator_norm(m: &Matrix) -> f64 {
    match singular_values(m) {
        Ok(sv) => sv[0],
        Err(_) => f64::NAN,
    }
}

/// Smallest singular value (the mininorm for square invertible matrices).
pub fn mininorm(m: &Matrix) -> f64 {
    match singular_values(m) {
        Ok(sv) => sv[sv.len() - 1],
        Err(_) => f64::NAN,
    }
}

/// Singular values only, non-increasing; accepts rectangular input.
pub fn singular_values(m: &Matrix) -> Result<DVector<f64>> {
    Ok(thin_svd(m)?.1)
}

/// SVD of a square matrix with singular values sorted in non-increasing
/// order and the columns of U / rows of Vᵀ permuted to match.
pub fn sorted_svd(m: &Matrix) -> Result<(Matrix, DVector<f64>, Matrix)> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidMatrix(format!(
            "expected nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    thin_svd(m)
}

/// Thin SVD M = U·Σ·Vᵀ with U of shape m×r, Σ of length r = min(m,n), Vᵀ of
/// shape r×n, singular values non-increasing.
///
/// One-sided Jacobi: rotate column pairs of M until mutually orthogonal;
/// the column norms are the singular values, the normalized columns form U
/// and the accumulated rotations form V. At the dimensions used here
/// (at most C(6,3) = 20) this is fast and, unlike bidiagonalization-based
/// SVDs, keeps high relative accuracy on zero and repeated spectra.
pub fn thin_svd(m: &Matrix) -> Result<(Matrix, DVector<f64>, Matrix)> {
    check_finite(m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    if m.nrows() >= m.ncols() {
        jacobi_tall(m)
    } else {
        let (u, s, vt) = jacobi_tall(&m.transpose())?;
        Ok((vt.transpose(), s, u.transpose()))
    }
}

fn jacobi_tall(m: &Matrix) -> Result<(Matrix, DVector<f64>, Matrix)> {
    let rows = m.nrows();
    let n = m.ncols();
    debug_assert!(rows >= n);
    let mut a = m.clone();
    let mut v = Matrix::identity(n, n);
    const MAX_SWEEPS: usize = 64;
    const TOL: f64 = 1e-15;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for r in 0..rows {
                    app += a[(r, p)] * a[(r, p)];
                    aqq += a[(r, q)] * a[(r, q)];
                    apq += a[(r, p)] * a[(r, q)];
                }
                if apq.abs() <= TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let ap = a[(r, p)];
                    let aq = a[(r, q)];
                    a[(r, p)] = c * ap - s * aq;
                    a[(r, q)] = s * ap + c * aq;
                }
                for r in 0..n {
                    let vp = v[(r, p)];
                    let vq = v[(r, q)];
                    v[(r, p)] = c * vp - s * vq;
                    v[(r, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // singular values are the column norms; sort descending
    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (a.column(j).norm(), j)).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    let sorted_s = DVector::from_iterator(n, order.iter().map(|&(nm, _)| nm));
    let mut u = Matrix::zeros(rows, n);
    let mut vt = Matrix::zeros(n, n);
    let top = sorted_s[0];
    let mut filled = 0usize;
    for (slot, &(nm, j)) in order.iter().enumerate() {
        vt.set_row(slot, &v.column(j).transpose());
        if nm > top * 1e-300 && nm > 0.0 {
            u.set_column(slot, &(a.column(j) / nm));
            filled = slot + 1;
        }
    }
    // complete U for numerically vanished columns (rank-deficient input)
    for slot in filled..n {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for cand in 0..rows {
            let mut e = DVector::zeros(rows);
            e[cand] = 1.0;
            for j in 0..slot {
                let proj = u.column(j).dot(&e);
                e -= u.column(j) * proj;
            }
            let norm = e.norm();
            if best.as_ref().map_or(true, |(bn, _)| norm > *bn) {
                best = Some((norm, e));
            }
        }
        let (norm, e) = best.unwrap();
        if norm < 1e-12 {
            return Err(Error::Numerical("could not complete singular basis".into()));
        }
        u.set_column(slot, &(e / norm));
    }
    Ok((u, sorted_s, vt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn diag(entries: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_row_slice(entries))
    }

    #[test]
    fn identity_is_conformal() {
        for d in 1..=6 {
            let s = SingularData::from_matrix(&Matrix::identity(d, d)).unwrap();
            assert!(s.lambdas.iter().all(|&l| l.abs() < 1e-14));
            assert_eq!(s.zeta, 0.0);
            assert_eq!(s.kappa, 0.0);
            assert!(s.is_conformal());
        }
    }

    #[test]
    fn diagonal_two_by_two() {
        let s = SingularData::from_matrix(&diag(&[3.0, 1.0 / 3.0])).unwrap();
        let ln3 = 3.0_f64.ln();
        assert_abs_diff_eq!(s.lambdas[0], ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lambdas[1], -ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma(1), ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma(2), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.gamma(1), ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.zeta, ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.kappa, 2.0 * ln3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mininorm_log(), -ln3, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_three_by_three() {
        let s =
            SingularData::from_matrix(&diag(&[3.0_f64.exp(), 1.0_f64.exp(), 1.0])).unwrap();
        assert_abs_diff_eq!(s.lambdas[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lambdas[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lambdas[2], 0.0, epsilon = 1e-12);
        assert_eq!(s.sigmas.len(), 4);
        assert_abs_diff_eq!(s.sigma(2), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.gamma(1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.gamma(2), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.zeta, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.kappa, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_matrix_rejected() {
        let err = SingularData::from_matrix(&dmatrix![1.0, 2.0; 2.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidMatrix(_)));
        let err = SingularData::from_matrix(&dmatrix![f64::NAN, 0.0; 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidMatrix(_)));
    }

    #[test]
    fn degenerate_dimension_one() {
        let s = SingularData::from_matrix(&diag(&[2.5])).unwrap();
        assert_eq!(s.zeta, 0.0);
        assert_eq!(s.kappa, 0.0);
        assert!(s.gammas.is_empty());
        assert!(max_half_gap(&s).is_err());
    }

    #[test]
    fn max_gap_examples() {
        let s = SingularData::from_matrix(&diag(&[3.0, 1.0 / 3.0])).unwrap();
        let (i, g) = max_half_gap(&s).unwrap();
        assert_eq!(i, 1);
        assert_abs_diff_eq!(g, 3.0_f64.ln(), epsilon = 1e-12);

        let s =
            SingularData::from_matrix(&diag(&[3.0_f64.exp(), 1.0_f64.exp(), 1.0])).unwrap();
        let (i, g) = max_half_gap(&s).unwrap();
        assert_eq!(i, 1);
        assert_abs_diff_eq!(g, 1.0, epsilon = 1e-12);
        let b3 = dimension_constants(3).unwrap().b;
        assert!(g >= b3 * s.zeta);

        // conformal: scalar multiple of a rotation
        let th = 0.7_f64;
        let rot = dmatrix![th.cos(), -th.sin(); th.sin(), th.cos()] * 2.0;
        let s = SingularData::from_matrix(&rot).unwrap();
        let (i, g) = max_half_gap(&s).unwrap();
        assert_eq!(i, 1);
        assert!(g.abs() < 1e-12);
        assert!(s.zeta.abs() < 1e-12);
    }

    #[test]
    fn constants_match_closed_forms() {
        let c2 = dimension_constants(2).unwrap();
        assert_abs_diff_eq!(c2.b, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c2.a, 2.0 / 3.0, epsilon = 1e-15);
        let c3 = dimension_constants(3).unwrap();
        assert_abs_diff_eq!(c3.b, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(c3.a, 8.0 / 9.0, epsilon = 1e-15);
        let c4 = dimension_constants(4).unwrap();
        assert_abs_diff_eq!(c4.b, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c4.a, 20.0 / 21.0, epsilon = 1e-15);
        assert!(dimension_constants(1).is_err());
        // c_d dominates log C(d, d/2)
        for d in 2..=6 {
            let c = dimension_constants(d).unwrap();
            assert!(c.c >= (binomial(d, d / 2) as f64).ln());
        }
    }

    #[test]
    fn exterior_power_examples() {
        let m = diag(&[3.0_f64.exp(), 1.0_f64.exp(), 1.0]);
        // top power is the determinant
        let top = exterior_power(&m, 3).unwrap();
        assert_eq!(top.nrows(), 1);
        assert_abs_diff_eq!(top[(0, 0)], m.determinant(), epsilon = 1e-9);
        // i = 2 minors of a diagonal matrix
        let w2 = exterior_power(&m, 2).unwrap();
        let expect = diag(&[4.0_f64.exp(), 3.0_f64.exp(), 1.0_f64.exp()]);
        assert_abs_diff_eq!((w2 - &expect).norm(), 0.0, epsilon = 1e-9);
        let s = SingularData::from_matrix(&m).unwrap();
        assert_abs_diff_eq!(operator_norm(&expect).ln(), s.sigma(2), epsilon = 1e-12);
        // i = 1 is the matrix itself; rotations have norm 1
        let th = 1.1_f64;
        let rot = dmatrix![th.cos(), -th.sin(); th.sin(), th.cos()];
        let w1 = exterior_power(&rot, 1).unwrap();
        assert_abs_diff_eq!((w1 - &rot).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(operator_norm(&rot), 1.0, epsilon = 1e-12);
        // index out of range
        assert!(exterior_power(&rot, 0).is_err());
        assert!(exterior_power(&rot, 3).is_err());
    }

    #[test]
    fn subset_enumeration_is_lexicographic() {
        assert_eq!(
            index_subsets(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(index_subsets(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(binomial(6, 3), 20);
    }

    #[test]
    fn svd_reconstruction_random() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for d in 1..=8 {
            for _ in 0..20 {
                let m = crate::sampling::invertible(&mut rng, d, 2.0);
                let (u, s, vt) = sorted_svd(&m).unwrap();
                let rebuilt = &u * Matrix::from_diagonal(&s) * &vt;
                assert!((&rebuilt - &m).norm() < 1e-12 * m.norm(), "d={d}");
                assert!((u.transpose() * &u - Matrix::identity(d, d)).norm() < 1e-13);
                assert!((vt.transpose() * &vt - Matrix::identity(d, d)).norm() < 1e-13);
                assert!(s.iter().zip(s.iter().skip(1)).all(|(a, b)| a >= b));
            }
        }
    }

    #[test]
    fn svd_exact_on_rank_deficient_projector() {
        // regression: a rank-1 symmetric projector must come out with
        // singular values exactly (1, 0, 0) and an orthogonal U
        let f = Matrix::from_row_slice(
            3,
            2,
            &[
                0.8568157426704911,
                0.18958290375702946,
                -0.33232556078721237,
                0.9140782928551539,
                -0.3942416831836534,
                -0.35849574214216334,
            ],
        );
        let proj = Matrix::identity(3, 3) - &f * f.transpose();
        let (u, s, _) = sorted_svd(&proj).unwrap();
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-12);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
        // top vector orthogonal to the columns of f
        let defect = (u.columns(0, 1).transpose() * &f).norm();
        assert!(defect < 1e-12, "defect {defect}");
    }

    #[test]
    fn sigma_ledger_roundtrip() {
        let s = SingularData::from_matrix(&diag(&[4.0, 2.0, 0.5])).unwrap();
        let rebuilt = SingularData::from_log_sigmas(&s.sigmas).unwrap();
        assert_abs_diff_eq!(rebuilt.zeta, s.zeta, epsilon = 1e-12);
        assert_abs_diff_eq!(rebuilt.kappa, s.kappa, epsilon = 1e-12);
        // non-concave ledger beyond tolerance is rejected
        assert!(SingularData::from_log_sigmas(&[0.0, 1.0, 3.0]).is_err());
    }
}
