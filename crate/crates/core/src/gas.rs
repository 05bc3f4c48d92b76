//! Gradient-adaptive stabilization.
//!
//! A [`GradientBuffer`] accumulates squared gradients of a weight matrix over
//! one training session. [`noise_scales`] maps the buffer to per-weight
//! scales in `(0, 1]`: weights with small accumulated gradient get scales
//! near 1, weights with large gradient get scales near 0. [`perturb`] draws
//! `W + scales * xi` with `xi ~ N(0, I)`.
//!
//! The quadratic-landscape helpers evaluate the expected loss increase of a
//! perturbation at a minimum and compare it with the worst case over an
//! l2 ball of the same total budget.

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Epsilon values of the robustness sweep preset.
pub const EPSILON_SWEEP: [f64; 4] = [1e-6, 1e-7, 1e-8, 1e-9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBuffer {
    #[serde(with = "crate::rows")]
    sums: Array2<f64>,
    step_count: u64,
    epsilon: f64,
}

impl GradientBuffer {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            sums: Array2::zeros((rows, cols)),
            step_count: 0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(rows: usize, cols: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            ..Self::new(rows, cols)
        })
    }

    /// A buffer holding precomputed sums, counted as one accumulation.
    pub fn from_sums(sums: Array2<f64>, epsilon: f64) -> Result<Self> {
        if sums.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(domain("accumulated squared gradients must be finite and >= 0"));
        }
        let mut buf = Self::with_epsilon(sums.nrows(), sums.ncols(), epsilon)?;
        buf.sums = sums;
        buf.step_count = 1;
        Ok(buf)
    }

    pub fn sums(&self) -> &Array2<f64> {
        &self.sums
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn shape(&self) -> (usize, usize) {
        self.sums.dim()
    }

    /// `sums += gradients^2`, one step.
    pub fn accumulate(&mut self, gradients: &Array2<f64>) -> Result<()> {
        if gradients.dim() != self.sums.dim() {
            return Err(shape(
                format!("{:?}", self.sums.dim()),
                format!("{:?}", gradients.dim()),
            ));
        }
        Zip::from(&mut self.sums)
            .and(gradients)
            .for_each(|s, g| *s += g * g);
        self.step_count += 1;
        Ok(())
    }

    /// Clears the sums at a session boundary.
    pub fn reset(&mut self) {
        self.sums.fill(0.0);
        self.step_count = 0;
    }
}

/// Normalized per-weight noise scales, every entry in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScaleVector {
    #[serde(with = "crate::rows")]
    scales: Array2<f64>,
}

impl NoiseScaleVector {
    pub fn scales(&self) -> &Array2<f64> {
        &self.scales
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.scales
    }

    /// Constant scales, mainly for tests and ablations.
    pub fn uniform(rows: usize, cols: usize, value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(domain(format!("noise scale must lie in (0, 1], got {value}")));
        }
        Ok(Self {
            scales: Array2::from_elem((rows, cols), value),
        })
    }
}

/// `s_ij = (1 + Ginv_ij - min Ginv) / (1 + max Ginv - min Ginv)` with
/// `Ginv_ij = 1 / (sums_ij + eps)`.
pub fn noise_scales(buffer: &GradientBuffer) -> Result<NoiseScaleVector> {
    if buffer.step_count == 0 || buffer.sums.is_empty() {
        return Err(Error::State(
            "noise scales requested from an empty gradient buffer".into(),
        ));
    }
    let inv = buffer.sums.mapv(|g| 1.0 / (g + buffer.epsilon));
    let (lo, hi) = inv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let denom = 1.0 + hi - lo;
    Ok(NoiseScaleVector {
        scales: inv.mapv(|v| (1.0 + v - lo) / denom),
    })
}

/// `W + scales * xi`, with `xi` drawn row-major from a ChaCha8 stream seeded
/// by `rng_seed`.
pub fn perturb(weights: &Array2<f64>, scales: &NoiseScaleVector, rng_seed: u64) -> Result<Array2<f64>> {
    if weights.dim() != scales.scales.dim() {
        return Err(shape(
            format!("{:?}", scales.scales.dim()),
            format!("{:?}", weights.dim()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = weights.clone();
    Zip::from(&mut out).and(&scales.scales).for_each(|w, s| {
        let xi: f64 = rng.sample(StandardNormal);
        *w += s * xi;
    });
    Ok(out)
}

/// A quadratic loss `0.5 (theta - theta*)^T diag(lambda) (theta - theta*)`
/// written in its Hessian eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLandscape {
    eigenvalues: Vec<f64>,
    optimum: Vec<f64>,
}

impl QuadraticLandscape {
    /// Eigenvalues must be positive. Coordinates are reordered so that the
    /// eigenvalues are descending.
    pub fn new(eigenvalues: Vec<f64>, optimum: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(domain("landscape needs at least one eigenvalue"));
        }
        if eigenvalues.len() != optimum.len() {
            return Err(shape(
                format!("optimum of length {}", eigenvalues.len()),
                optimum.len(),
            ));
        }
        if eigenvalues.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(domain("hessian eigenvalues must be positive and finite"));
        }
        let mut pairs: Vec<(f64, f64)> = eigenvalues.into_iter().zip(optimum).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (eigenvalues, optimum) = pairs.into_iter().unzip();
        Ok(Self {
            eigenvalues,
            optimum,
        })
    }

    /// Landscape centered at the origin.
    pub fn centered(eigenvalues: Vec<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        Self::new(eigenvalues, vec![0.0; d])
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn mean_curvature(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.dim() as f64
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_max() / self.lambda_min()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * self
            .eigenvalues
            .iter()
            .zip(theta.iter().zip(&self.optimum))
            .map(|(l, (t, o))| l * (t - o).powi(2))
            .sum::<f64>()
    }

    /// Inverse-curvature scales with total budget `sum s_i^2 = radius^2`.
    pub fn gas_scales(&self, radius: f64) -> Array1<f64> {
        let harmonic: f64 = self.eigenvalues.iter().map(|l| 1.0 / l).sum();
        self.eigenvalues
            .iter()
            .map(|l| (radius * radius / (l * harmonic)).sqrt())
            .collect()
    }
}

/// `E[L(theta* + s * xi)] - L(theta*) = 0.5 sum_i lambda_i s_i^2`, exact on
/// quadratics.
pub fn expected_quadratic_increase(landscape: &QuadraticLandscape, scales: &[f64]) -> Result<f64> {
    if scales.len() != landscape.dim() {
        return Err(shape(format!("{} scales", landscape.dim()), scales.len()));
    }
    Ok(0.5
        * landscape
            .eigenvalues
            .iter()
            .zip(scales)
            .map(|(l, s)| l * s * s)
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialComparison {
    pub delta_adv: f64,
    pub delta_gas: f64,
    pub ratio: f64,
}

/// Worst-case l2-ball loss increase against GAS's expected increase at equal
/// budget. `ratio` always lies in `[1, kappa]`.
pub fn adversarial_comparison(
    landscape: &QuadraticLandscape,
    rho_radius: f64,
) -> Result<AdversarialComparison> {
    if !(rho_radius > 0.0 && rho_radius.is_finite()) {
        return Err(domain(format!("perturbation radius must be positive, got {rho_radius}")));
    }
    let r2 = rho_radius * rho_radius;
    let delta_adv = 0.5 * r2 * landscape.lambda_max();
    let harmonic: f64 = landscape.eigenvalues.iter().map(|l| 1.0 / l).sum();
    let delta_gas = r2 * landscape.dim() as f64 / (2.0 * harmonic);
    Ok(AdversarialComparison {
        delta_adv,
        delta_gas,
        ratio: delta_adv / delta_gas,
    })
}
