//! Linear cocycles over a base system: generator families, segment products,
//! distortion-functional estimators, and dominated-splitting detection.

mod estimate;
mod product;
mod splitting;

pub use estimate::{Functional, FunctionalEstimate, SusaetReport};
pub(crate) use estimate::dense_checkpoints;
pub use product::{product_of_maps, ProductAccumulator, SegmentProduct, RENORM_EVERY};
pub use splitting::{
    orthocomplement, orthonormalize, principal_angle_max, subspace_intersection,
    DominationReport, FineEstimate, GapFit, SplittingFrame, DOMINATION_R2_THRESHOLD,
    DOMINATION_SLOPE_THRESHOLD, EQUIVARIANCE_TOL,
};

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BaseSystem, Point};
use crate::error::{Error, Result};
use crate::linalg;
use crate::Matrix;

/// Grid size used when none is configured: the desk-scale surrogate for
/// "sup over x in X".
pub const DEFAULT_GRID: usize = 4096;

/// A total, deterministic generator map x ↦ A(x) ∈ GL(d,ℝ).
pub trait Generator: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &Point) -> Matrix;
}

/// Named generator families, as configured from the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// A(x) ≡ M.
    Constant { matrix: Vec<Vec<f64>> },
    /// A(x) = R_{2πx}·diag(λ, 1/λ) on ℝ²; λ = 1 gives the rotation-valued
    /// (conformal) family.
    RotationScale { lambda: f64 },
    /// A_E(x) = [[E − 2cos(2πx), −1], [1, 0]].
    Schrodinger { energy: f64 },
    /// Matrices tabulated at g uniform grid cells with nearest-sample
    /// evaluation over the first coordinate.
    GridTable { samples: Vec<Vec<Vec<f64>>> },
}

impl GeneratorConfig {
    pub fn dim(&self) -> Result<usize> {
        match self {
            GeneratorConfig::Constant { matrix } => Ok(matrix.len()),
            GeneratorConfig::RotationScale { .. } | GeneratorConfig::Schrodinger { .. } => Ok(2),
            GeneratorConfig::GridTable { samples } => samples
                .first()
                .map(|m| m.len())
                .ok_or_else(|| Error::InvalidArgument("empty grid table".into())),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Generator>> {
        match self {
            GeneratorConfig::Constant { matrix } => {
                Ok(Arc::new(ConstantGenerator::new(rows_to_matrix(matrix)?)))
            }
            GeneratorConfig::RotationScale { lambda } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "rotation-scale lambda must be positive, got {lambda}"
                    )));
                }
                Ok(Arc::new(RotationScaleGenerator { lambda: *lambda }))
            }
            GeneratorConfig::Schrodinger { energy } => {
                if !energy.is_finite() {
                    return Err(Error::InvalidArgument("non-finite energy".into()));
                }
                Ok(Arc::new(SchrodingerGenerator { energy: *energy }))
            }
            GeneratorConfig::GridTable { samples } => {
                let mats: Vec<Matrix> = samples
                    .iter()
                    .map(|m| rows_to_matrix(m))
                    .collect::<Result<_>>()?;
                if mats.is_empty() {
                    return Err(Error::InvalidArgument("empty grid table".into()));
                }
                let d = mats[0].nrows();
                if mats.iter().any(|m| m.nrows() != d) {
                    return Err(Error::InvalidArgument(
                        "grid table entries have mixed dimensions".into(),
                    ));
                }
                Ok(Arc::new(GridTableGenerator { samples: mats }))
            }
        }
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument(
            "matrix rows must form a nonempty square array".into(),
        ));
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

struct ConstantGenerator {
    m: Matrix,
}

impl ConstantGenerator {
    fn new(m: Matrix) -> Self {
        ConstantGenerator { m }
    }
}

impl Generator for ConstantGenerator {
    fn dim(&self) -> usize {
        self.m.nrows()
    }
    fn eval(&self, _x: &Point) -> Matrix {
        self.m.clone()
    }
}

struct RotationScaleGenerator {
    lambda: f64,
}

impl Generator for RotationScaleGenerator {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &Point) -> Matrix {
        let th = TAU * x.scalar();
        let (s, c) = th.sin_cos();
        let l = self.lambda;
        // R_θ · diag(λ, 1/λ)
        Matrix::from_row_slice(2, 2, &[c * l, -s / l, s * l, c / l])
    }
}

struct SchrodingerGenerator {
    energy: f64,
}

impl Generator for SchrodingerGenerator {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &Point) -> Matrix {
        let v = self.energy - 2.0 * (TAU * x.scalar()).cos();
        Matrix::from_row_slice(2, 2, &[v, -1.0, 1.0, 0.0])
    }
}

struct GridTableGenerator {
    samples: Vec<Matrix>,
}

impl Generator for GridTableGenerator {
    fn dim(&self) -> usize {
        self.samples[0].nrows()
    }
    fn eval(&self, x: &Point) -> Matrix {
        let g = self.samples.len();
        let idx = (x.scalar() * g as f64).round() as usize % g;
        self.samples[idx].clone()
    }
}

/// Block-diagonal constant generator used by the d = 4 examples:
/// diag(s_top·R_θ, s_bot·R_φ).
pub fn two_block_matrix(theta: f64, phi: f64, s_top: f64, s_bot: f64) -> Matrix {
    let mut m = Matrix::zeros(4, 4);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    m[(0, 0)] = s_top * ct;
    m[(0, 1)] = -s_top * st;
    m[(1, 0)] = s_top * st;
    m[(1, 1)] = s_top * ct;
    m[(2, 2)] = s_bot * cp;
    m[(2, 3)] = -s_bot * sp;
    m[(3, 2)] = s_bot * sp;
    m[(3, 3)] = s_bot * cp;
    m
}

/// A linear cocycle: base system plus generator, with cached norm bounds
/// estimated over the sampling grid. Values are immutable and cheap to
/// clone (the generator is shared).
#[derive(Clone)]
pub struct Cocycle {
    base: BaseSystem,
    dim: usize,
    generator: Arc<dyn Generator>,
    config: Option<GeneratorConfig>,
    /// C ≥ max over the probe grid of max(‖A(x)‖, ‖A(x)^{-1}‖), at least 1.
    norm_bound: f64,
    /// inf over the probe grid of the mininorm 𝔪(A(x)).
    min_mininorm: f64,
    default_grid: usize,
}

impl Cocycle {
    pub fn from_config(
        base: BaseSystem,
        config: GeneratorConfig,
        default_grid: usize,
    ) -> Result<Self> {
        let generator = config.build()?;
        let mut c = Self::from_generator(base, generator, default_grid)?;
        c.config = Some(config);
        Ok(c)
    }

    pub fn from_generator(
        base: BaseSystem,
        generator: Arc<dyn Generator>,
        default_grid: usize,
    ) -> Result<Self> {
        let dim = generator.dim();
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional generator".into()));
        }
        let probe = default_grid.clamp(256, DEFAULT_GRID);
        let mut norm_bound: f64 = 1.0;
        let mut min_mininorm = f64::INFINITY;
        let mut p = base.origin();
        for _ in 0..probe {
            let a = generator.eval(&p);
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::InvalidMatrix(
                    "generator returned a matrix of the wrong size".into(),
                ));
            }
            let top = linalg::operator_norm(&a);
            let bottom = linalg::mininorm(&a);
            if !(bottom > 1e-12) || !top.is_finite() {
                return Err(Error::InvalidMatrix(format!(
                    "generator is singular or unbounded near x = {:?}",
                    p.coords()
                )));
            }
            norm_bound = norm_bound.max(top).max(1.0 / bottom);
            min_mininorm = min_mininorm.min(bottom);
            base.advance(&mut p);
        }
        Ok(Cocycle {
            base,
            dim,
            generator,
            config: None,
            norm_bound,
            min_mininorm,
            default_grid: default_grid.max(16),
        })
    }

    pub fn base(&self) -> &BaseSystem {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> Option<&GeneratorConfig> {
        self.config.as_ref()
    }

    /// Cached bound C with max(‖A(x)‖, ‖A(x)^{-1}‖) ≤ C over the probe grid.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Cached inf of the mininorm over the probe grid.
    pub fn min_mininorm(&self) -> f64 {
        self.min_mininorm
    }

    pub fn default_grid(&self) -> usize {
        self.default_grid
    }

    pub fn generator(&self) -> &Arc<dyn Generator> {
        &self.generator
    }

    /// A(x).
    pub fn generator_at(&self, x: &Point) -> Matrix {
        self.generator.eval(x)
    }

    /// Generator evaluations along the orbit of `start`:
    /// out[j] = A(T^j(start)) for j = 0..count.
    pub fn orbit_matrices(&self, start: &Point, count: usize) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(count);
        let mut p = start.clone();
        for _ in 0..count {
            out.push(self.generator.eval(&p));
            self.base.advance(&mut p);
        }
        out
    }

    /// The segment product A^n(x) = A(T^{n−1}x)···A(x) in log-scaled form.
    pub fn product(&self, x: &Point, n: usize) -> Result<SegmentProduct> {
        let mut acc = ProductAccumulator::new(self.dim);
        let mut p = x.clone();
        for _ in 0..n {
            acc.push(&self.generator.eval(&p))?;
            self.base.advance(&mut p);
        }
        Ok(acc.snapshot())
    }
}
