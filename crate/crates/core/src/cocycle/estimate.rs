//! Grid estimators for the distortion functionals K and Z, Lyapunov spectra,
//! and the semi-uniform subadditive ergodic check.
//!
//! The sup over the space is replaced by a max over the orbit grid of the
//! origin (asymptotically dense by minimality); grid size is a configuration
//! knob carried in every report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cocycle, ProductAccumulator};
use crate::error::{Error, Result};
use crate::linalg::SingularData;

/// Which subadditive functional of the segment product to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Zeta,
    Kappa,
    /// σ_i for a 1-based index i.
    Sigma(usize),
}

impl Functional {
    fn extract(&self, sd: &SingularData) -> f64 {
        match self {
            Functional::Zeta => sd.zeta,
            Functional::Kappa => sd.kappa,
            Functional::Sigma(i) => sd.sigma(*i),
        }
    }
}

/// A per-step grid estimate of one of the limiting functionals, with the
/// finite-n sequence kept for monotonicity inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    /// (1/n)·max over the grid at the final horizon.
    pub value: f64,
    /// (horizon, per-step max) at each checkpoint, ascending horizons.
    pub sequence: Vec<(usize, f64)>,
    /// Grid index attaining the final max.
    pub argmax_grid_index: usize,
    pub horizon: usize,
    pub grid_size: usize,
}

/// Both sides of the semi-uniform subadditive ergodic theorem at a finite
/// horizon: the per-step grid max and the per-step grid (Birkhoff) average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SusaetReport {
    pub functional: Functional,
    pub horizon: usize,
    pub grid_size: usize,
    pub sup_side: f64,
    pub avg_side: f64,
}

impl Cocycle {
    /// Values of `extract` applied to the singular data of A^j(x_g) for each
    /// grid point g and each checkpoint j; shared kernel for the estimators.
    pub(crate) fn sweep_table(
        &self,
        n: usize,
        grid_size: usize,
        checkpoints: &[usize],
        extract: impl Fn(&SingularData) -> Vec<f64> + Sync,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        if n == 0 || grid_size == 0 {
            return Err(Error::InvalidArgument(
                "sweep requires n >= 1 and a nonempty grid".into(),
            ));
        }
        debug_assert!(checkpoints.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(checkpoints.last().is_some_and(|&c| c <= n));
        let cache = self.orbit_matrices(&self.base().origin(), grid_size + n);
        (0..grid_size)
            .into_par_iter()
            .map(|g| {
                let mut acc = ProductAccumulator::new(self.dim());
                let mut row = Vec::with_capacity(checkpoints.len());
                let mut next = 0;
                for j in 0..n {
                    acc.push(&cache[g + j])?;
                    if next < checkpoints.len() && acc.steps() == checkpoints[next] {
                        row.push(extract(&acc.singular_data()?));
                        next += 1;
                    }
                }
                Ok(row)
            })
            .collect()
    }

    /// Grid estimate of Z(A): the per-step max of ζ(A^n(x)) over the orbit
    /// grid, over-approximating the sup term at this horizon.
    pub fn estimate_z(&self, n: usize, grid_size: usize) -> Result<FunctionalEstimate> {
        self.estimate_functional(Functional::Zeta, n, grid_size)
    }

    /// Grid estimate of K(A), as `estimate_z` with κ in place of ζ.
    pub fn estimate_k(&self, n: usize, grid_size: usize) -> Result<FunctionalEstimate> {
        self.estimate_functional(Functional::Kappa, n, grid_size)
    }

    pub fn estimate_functional(
        &self,
        f: Functional,
        n: usize,
        grid_size: usize,
    ) -> Result<FunctionalEstimate> {
        let checkpoints = geometric_checkpoints(n);
        let table = self.sweep_table(n, grid_size, &checkpoints, |sd| vec![f.extract(sd)])?;
        let mut sequence = Vec::with_capacity(checkpoints.len());
        let mut argmax = 0usize;
        for (ci, &ckpt) in checkpoints.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (g, row) in table.iter().enumerate() {
                let v = row[ci][0];
                if v > best {
                    best = v;
                    if ckpt == n {
                        argmax = g;
                    }
                }
            }
            sequence.push((ckpt, best / ckpt as f64));
        }
        Ok(FunctionalEstimate {
            value: sequence.last().unwrap().1,
            sequence,
            argmax_grid_index: argmax,
            horizon: n,
            grid_size,
        })
    }

    /// ζ- and κ-estimates from a single sweep.
    pub fn estimate_zk(
        &self,
        n: usize,
        grid_size: usize,
    ) -> Result<(FunctionalEstimate, FunctionalEstimate)> {
        let checkpoints = geometric_checkpoints(n);
        let table =
            self.sweep_table(n, grid_size, &checkpoints, |sd| vec![sd.zeta, sd.kappa])?;
        let mut out = Vec::with_capacity(2);
        for slot in 0..2 {
            let mut sequence = Vec::with_capacity(checkpoints.len());
            let mut argmax = 0usize;
            for (ci, &ckpt) in checkpoints.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for (g, row) in table.iter().enumerate() {
                    let v = row[ci][slot];
                    if v > best {
                        best = v;
                        if ckpt == n {
                            argmax = g;
                        }
                    }
                }
                sequence.push((ckpt, best / ckpt as f64));
            }
            out.push(FunctionalEstimate {
                value: sequence.last().unwrap().1,
                sequence,
                argmax_grid_index: argmax,
                horizon: n,
                grid_size,
            });
        }
        let kappa = out.pop().unwrap();
        let zeta = out.pop().unwrap();
        Ok((zeta, kappa))
    }

    /// Lyapunov spectrum approximation (1/n)(λ_1, …, λ_d) of A^n(x),
    /// accumulated through rescaled exterior-power products.
    pub fn lyapunov_spectrum(&self, x: &crate::dynamics::Point, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("lyapunov spectrum requires n >= 1".into()));
        }
        let sd = self.product(x, n)?.singular_data()?;
        Ok(sd.lambdas.iter().map(|l| l / n as f64).collect())
    }

    /// Both sides of the semi-uniform subadditive ergodic theorem for a
    /// subadditive functional at horizon n: per-step grid max vs per-step
    /// grid average (the Birkhoff surrogate for the integral).
    pub fn susaet_check(
        &self,
        functional: Functional,
        n: usize,
        grid_size: usize,
    ) -> Result<SusaetReport> {
        if let Functional::Sigma(i) = functional {
            if i == 0 || i > self.dim() {
                return Err(Error::InvalidArgument(format!(
                    "sigma index {i} out of range 1..={}",
                    self.dim()
                )));
            }
        }
        let table =
            self.sweep_table(n, grid_size, &[n], |sd| vec![functional.extract(sd)])?;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for row in &table {
            let v = row[0][0];
            max = max.max(v);
            sum += v;
        }
        Ok(SusaetReport {
            functional,
            horizon: n,
            grid_size,
            sup_side: max / n as f64,
            avg_side: sum / (n as f64 * grid_size as f64),
        })
    }
}

/// Halving ladder of horizons ending at n, ascending.
pub(crate) fn geometric_checkpoints(n: usize) -> Vec<usize> {
    let mut pts = vec![n];
    let mut v = n;
    while v > 8 {
        v /= 2;
        pts.push(v);
    }
    pts.sort_unstable();
    pts.dedup();
    pts
}

/// Denser geometric ladder (four points per octave) ending at n, ascending;
/// used where a horizon is read off the profile and coarse steps would
/// overshoot it.
pub(crate) fn dense_checkpoints(n: usize) -> Vec<usize> {
    let mut pts = vec![n];
    let mut v = n as f64;
    while v > 8.0 {
        v /= 2f64.powf(0.25);
        pts.push(v.round() as usize);
    }
    pts.retain(|&p| p >= 1);
    pts.sort_unstable();
    pts.dedup();
    pts
}

/// Ordinary least squares fit y ≈ slope·x + intercept with R².
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = syy - slope * sxy;
    let r2 = if syy > 1e-18 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (slope, intercept, r2)
}
