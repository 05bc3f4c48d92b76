//! Diagonal-Gaussian posterior algebra.
//!
//! All candidate posteriors are compared against a Laplace-style reference
//! `N(theta*, diag(1 / F_ii))` built from the current diagonal Fisher. Means
//! are shared across candidates, so every KL in [`kl_comparison`] is
//! variance-only: `0.5 * sum_i f(sigma_q_i^2 / sigma_pi_i^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};

/// `N(mean, diag(variance))` with strictly positive, finite variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(domain("gaussian dimension must be at least 1"));
        }
        if mean.len() != variance.len() {
            return Err(shape(
                format!("variance of length {}", mean.len()),
                format!("length {}", variance.len()),
            ));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(domain(format!("mean[{i}] is not finite")));
        }
        check_positive(&variance, "variance")?;
        Ok(Self { mean, variance })
    }

    /// Zero-mean Gaussian with the given variances.
    pub fn centered(variance: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; variance.len()], variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }
}

/// Diagonal of a Fisher information matrix, optionally with the bounds
/// `F_min <= F_ii <= F_max` it is asserted to satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    values: Vec<f64>,
    bounds: Option<(f64, f64)>,
}

impl FisherDiagonal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("fisher diagonal must be nonempty"));
        }
        check_positive(&values, "fisher")?;
        Ok(Self {
            values,
            bounds: None,
        })
    }

    pub fn with_bounds(values: Vec<f64>, min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min <= max && max.is_finite()) {
            return Err(domain(format!(
                "fisher bounds must satisfy 0 < min <= max, got [{min}, {max}]"
            )));
        }
        let mut fisher = Self::new(values)?;
        if let Some(i) = fisher.values.iter().position(|&v| v < min || v > max) {
            return Err(domain(format!(
                "fisher[{i}] = {} outside bounds [{min}, {max}]",
                fisher.values[i]
            )));
        }
        fisher.bounds = Some((min, max));
        Ok(fisher)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance of the diagonal entries.
    pub fn heterogeneity(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.values.len() as f64
    }

    /// The Laplace reference posterior `N(theta_star, diag(1 / F_ii))`.
    pub fn laplace_posterior(&self, theta_star: &[f64]) -> Result<DiagonalGaussian> {
        DiagonalGaussian::new(
            theta_star.to_vec(),
            self.values.iter().map(|f| 1.0 / f).collect(),
        )
    }
}

fn check_positive(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(i) => Err(domain(format!(
            "{what}[{i}] = {} must be positive and finite",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// `f(x) = x - ln x - 1`, the per-coordinate variance-ratio penalty.
pub fn f_ratio(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(domain(format!("f_ratio requires x > 0, got {x}")));
    }
    // ln_1p keeps precision near the minimum at x = 1.
    let d = x - 1.0;
    Ok((d - d.ln_1p()).max(0.0))
}

/// `KL(q || p)` for diagonal Gaussians.
pub fn kl_diag(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(shape(format!("dimension {}", p.dim()), q.dim()));
    }
    let mut total = 0.0;
    for i in 0..q.dim() {
        let ratio = q.variance[i] / p.variance[i];
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(domain(format!("variance ratio underflow at coordinate {i}")));
        }
        let dm = q.mean[i] - p.mean[i];
        total += dm * dm / p.variance[i] + f_ratio(ratio)?;
    }
    Ok(0.5 * total)
}

/// How a candidate posterior sets its per-coordinate variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PosteriorMode {
    /// `sigma_i^2 = c / F_ii`
    Gas { c: f64 },
    /// `sigma_i^2 = c / mean(F)`
    Isotropic { c: f64 },
    /// `sigma_i^2 = 1 / lambda`
    Static { lambda: f64 },
    /// `sigma_i^2 = 1 / (lambda * F_hist_i)`
    Memory {
        lambda: f64,
        fisher_hist: FisherDiagonal,
    },
}

pub fn posterior_variances(fisher: &FisherDiagonal, mode: &PosteriorMode) -> Result<Vec<f64>> {
    let scale = match mode {
        PosteriorMode::Gas { c } | PosteriorMode::Isotropic { c } => *c,
        PosteriorMode::Static { lambda } | PosteriorMode::Memory { lambda, .. } => *lambda,
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(domain(format!("scale parameter must be positive, got {scale}")));
    }
    let out: Vec<f64> = match mode {
        PosteriorMode::Gas { c } => fisher.values.iter().map(|f| c / f).collect(),
        PosteriorMode::Isotropic { c } => vec![c / fisher.mean(); fisher.dim()],
        PosteriorMode::Static { lambda } => vec![1.0 / lambda; fisher.dim()],
        PosteriorMode::Memory {
            lambda,
            fisher_hist,
        } => {
            if fisher_hist.dim() != fisher.dim() {
                return Err(shape(
                    format!("historical fisher of dimension {}", fisher.dim()),
                    fisher_hist.dim(),
                ));
            }
            fisher_hist.values.iter().map(|h| 1.0 / (lambda * h)).collect()
        }
    };
    check_positive(&out, "posterior variance")?;
    Ok(out)
}

/// Normalization constant for the GAS posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasScale {
    Fixed(f64),
    /// The KL-minimizing constant `c = d / sum_i (1 + eta_i)`, where
    /// `1 + eta_i` is the GAS variance ratio at `c = 1`.
    Optimal,
}

impl Default for GasScale {
    fn default() -> Self {
        GasScale::Fixed(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPrior {
    pub lambda: f64,
    pub fisher_hist: FisherDiagonal,
}

/// Which candidates [`kl_comparison`] evaluates, and how.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub gas_scale: GasScale,
    /// Scale `c` of the isotropic candidate; `None` reuses the fixed GAS scale (or 1).
    pub iso_scale: Option<f64>,
    /// Relative gradient-Fisher errors `e_i`: GAS sees `G_i = F_ii (1 + e_i)`.
    /// `None` means exact correspondence.
    pub approx_error: Option<Vec<f64>>,
    pub static_lambda: Option<f64>,
    pub memory: Option<MemoryPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlComparisonReport {
    pub kl_gas: f64,
    pub kl_iso: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl_static: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl_memory: Option<f64>,
    pub fisher_variance: f64,
}

fn variance_only_kl(candidate: &[f64], truth: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (q, p) in candidate.iter().zip(truth) {
        total += f_ratio(q / p)?;
    }
    Ok(0.5 * total)
}

/// Variance-only KL of each configured candidate against the Laplace
/// posterior of `fisher_current`.
pub fn kl_comparison(
    fisher_current: &FisherDiagonal,
    config: &ComparisonConfig,
) -> Result<KlComparisonReport> {
    let d = fisher_current.dim();
    let truth: Vec<f64> = fisher_current.values.iter().map(|f| 1.0 / f).collect();

    // Squared gradients standing in for the Fisher.
    let observed: Vec<f64> = match &config.approx_error {
        None => fisher_current.values.clone(),
        Some(err) => {
            if err.len() != d {
                return Err(shape(format!("approx_error of length {d}"), err.len()));
            }
            if let Some(i) = err.iter().position(|&e| !(e > -1.0 && e.is_finite())) {
                return Err(domain(format!("approx_error[{i}] must exceed -1")));
            }
            fisher_current
                .values
                .iter()
                .zip(err)
                .map(|(f, e)| f * (1.0 + e))
                .collect()
        }
    };
    let c_gas = match config.gas_scale {
        GasScale::Fixed(c) => c,
        GasScale::Optimal => {
            let ratio_sum: f64 = fisher_current
                .values
                .iter()
                .zip(&observed)
                .map(|(f, g)| f / g)
                .sum();
            d as f64 / ratio_sum
        }
    };
    let gas_fisher = FisherDiagonal::new(observed)?;
    let gas = posterior_variances(&gas_fisher, &PosteriorMode::Gas { c: c_gas })?;

    let c_iso = config.iso_scale.unwrap_or(match config.gas_scale {
        GasScale::Fixed(c) => c,
        GasScale::Optimal => 1.0,
    });
    let iso = posterior_variances(fisher_current, &PosteriorMode::Isotropic { c: c_iso })?;

    let kl_static = config
        .static_lambda
        .map(|lambda| {
            let v = posterior_variances(fisher_current, &PosteriorMode::Static { lambda })?;
            variance_only_kl(&v, &truth)
        })
        .transpose()?;
    let kl_memory = config
        .memory
        .as_ref()
        .map(|m| {
            let v = posterior_variances(
                fisher_current,
                &PosteriorMode::Memory {
                    lambda: m.lambda,
                    fisher_hist: m.fisher_hist.clone(),
                },
            )?;
            variance_only_kl(&v, &truth)
        })
        .transpose()?;

    Ok(KlComparisonReport {
        kl_gas: variance_only_kl(&gas, &truth)?,
        kl_iso: variance_only_kl(&iso, &truth)?,
        kl_static,
        kl_memory,
        fisher_variance: fisher_current.heterogeneity(),
    })
}

/// McAllester complexity term `sqrt((KL + ln(2 sqrt(n) / delta)) / (2n))`.
pub fn pac_bayes_gap(kl: f64, n: u64, confidence_delta: f64) -> Result<f64> {
    if !(kl >= 0.0 && kl.is_finite()) {
        return Err(domain(format!("kl must be nonnegative, got {kl}")));
    }
    if n == 0 {
        return Err(domain("sample count n must be at least 1"));
    }
    if !(confidence_delta > 0.0 && confidence_delta < 1.0) {
        return Err(domain(format!(
            "confidence delta must lie in (0, 1), got {confidence_delta}"
        )));
    }
    let n = n as f64;
    Ok(((kl + (2.0 * n.sqrt() / confidence_delta).ln()) / (2.0 * n)).sqrt())
}
