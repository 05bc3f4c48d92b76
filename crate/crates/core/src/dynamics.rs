//! Pseudo-label error dynamics for an EMA teacher / student pair.
//!
//! Without filtering the teacher error follows
//! `e' = lambda e + (1 - alpha)(1 - gamma) eps0` with
//! `lambda = alpha + (1 - alpha) gamma`, whose fixed point is `eps0`.
//! With a filter of coverage `f` and precision `rho`,
//! `e' = lambda_eff e + (1 - alpha)(1 - f gamma) eps0` with
//! `lambda_eff = alpha + (1 - alpha) f gamma (1 - rho)`, converging to
//! `(1 - f gamma) eps0 / (1 - f gamma (1 - rho))`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::seed::child_seed;

pub const CONVERGENCE_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 1_000_000;
pub const AUDIT_GRID_POINTS: usize = 1024;
pub const MIN_POPULATION: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    pub epsilon0: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub f: f64,
    pub rho_precision: f64,
}

impl DynamicsParams {
    pub fn new(epsilon0: f64, gamma: f64, alpha: f64, f: f64, rho_precision: f64) -> Result<Self> {
        let p = Self {
            epsilon0,
            gamma,
            alpha,
            f,
            rho_precision,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        let closed = |v: f64| (0.0..=1.0).contains(&v);
        if !open(self.epsilon0) {
            return Err(domain(format!("epsilon0 must lie in (0, 1), got {}", self.epsilon0)));
        }
        if !open(self.gamma) {
            return Err(domain(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(domain(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !closed(self.f) {
            return Err(domain(format!("coverage f must lie in [0, 1], got {}", self.f)));
        }
        if !closed(self.rho_precision) {
            return Err(domain(format!("precision rho must lie in [0, 1], got {}", self.rho_precision)));
        }
        Ok(())
    }

    /// Unfiltered contraction factor `alpha + (1 - alpha) gamma`.
    pub fn lambda(&self) -> f64 {
        self.alpha + (1.0 - self.alpha) * self.gamma
    }

    /// Filtered contraction factor `alpha + (1 - alpha) f gamma (1 - rho)`.
    pub fn lambda_eff(&self) -> f64 {
        self.alpha + (1.0 - self.alpha) * self.f * self.gamma * (1.0 - self.rho_precision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Unfiltered,
    Filtered,
}

/// One teacher-error update.
pub fn step(eps_t: f64, params: &DynamicsParams, mode: FilterMode) -> Result<f64> {
    if !(0.0..=1.0).contains(&eps_t) {
        return Err(domain(format!("teacher error must lie in [0, 1], got {eps_t}")));
    }
    params.validate()?;
    let p = params;
    let next = match mode {
        FilterMode::Unfiltered => {
            p.lambda() * eps_t + (1.0 - p.alpha) * (1.0 - p.gamma) * p.epsilon0
        }
        FilterMode::Filtered => {
            p.lambda_eff() * eps_t + (1.0 - p.alpha) * (1.0 - p.f * p.gamma) * p.epsilon0
        }
    };
    Ok(next.clamp(0.0, 1.0))
}

/// Limit of [`step`] iterated from any starting error.
pub fn asymptotic_error(params: &DynamicsParams, mode: FilterMode) -> Result<f64> {
    params.validate()?;
    let p = params;
    Ok(match mode {
        FilterMode::Unfiltered => p.epsilon0,
        FilterMode::Filtered => {
            // Ratio first: exactly 1 at rho = 0, and exactly 1 - f gamma at rho = 1.
            let fg = p.f * p.gamma;
            p.epsilon0 * ((1.0 - fg) / (1.0 - fg * (1.0 - p.rho_precision)))
        }
    })
}

/// Iterates [`step`] until successive errors differ by less than
/// [`CONVERGENCE_TOL`] or [`MAX_ITERATIONS`] is hit. Returns the final error
/// and the iteration count.
pub fn iterate_to_convergence(
    params: &DynamicsParams,
    mode: FilterMode,
    start: f64,
) -> Result<(f64, usize)> {
    let mut e = start;
    for i in 1..=MAX_ITERATIONS {
        let next = step(e, params, mode)?;
        if (next - e).abs() < CONVERGENCE_TOL {
            return Ok((next, i));
        }
        e = next;
    }
    Ok((e, MAX_ITERATIONS))
}

/// `(2 f gamma - 1) / (f gamma)`: precision above this value guarantees
/// `eps_inf < eps0`. The exact condition is `rho > 0` (see
/// [`improves_on_supervised`]); the threshold is non-positive whenever
/// `f gamma <= 0.5`.
pub fn improvement_threshold(f: f64, gamma: f64) -> Result<f64> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(domain(format!("coverage f must lie in (0, 1], got {f}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let fg = f * gamma;
    Ok((2.0 * fg - 1.0) / fg)
}

/// Whether the filtered limit is strictly below `eps0`.
pub fn improves_on_supervised(params: &DynamicsParams) -> Result<bool> {
    Ok(asymptotic_error(params, FilterMode::Filtered)? < params.epsilon0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaStats {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Fraction of pseudo-labels that are correct before filtering.
    pub base_rate: f64,
}

impl CriteriaStats {
    pub fn new(alpha1: f64, alpha2: f64, beta1: f64, beta2: f64, base_rate: f64) -> Result<Self> {
        let s = Self {
            alpha1,
            alpha2,
            beta1,
            beta2,
            base_rate,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(domain(format!("base rate must lie in (0, 1), got {}", self.base_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPrecision {
    pub rho1: f64,
    pub rho12: f64,
    /// `rho12 / rho1` via the likelihood-ratio form.
    pub gain: f64,
}

/// Precision of confidence-only filtering versus both criteria, assuming
/// the criteria are conditionally independent given correctness.
pub fn dual_precision(stats: &CriteriaStats) -> Result<DualPrecision> {
    stats.validate()?;
    let CriteriaStats {
        alpha1,
        alpha2,
        beta1,
        beta2,
        base_rate: pi,
    } = *stats;
    let rho1 = alpha1 * pi / (alpha1 * pi + beta1 * (1.0 - pi));
    let rho12 = alpha1 * alpha2 * pi / (alpha1 * alpha2 * pi + beta1 * beta2 * (1.0 - pi));
    let odds = (1.0 - pi) / pi;
    let lr1 = alpha1 / beta1;
    let lr2 = alpha2 / beta2;
    let gain = (1.0 + odds / lr1) / (1.0 + odds / (lr1 * lr2));
    Ok(DualPrecision { rho1, rho12, gain })
}

pub type ErrorResponse = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Self-reinforcing memory bank `e' = (1 - eta) e + eta g(e)`.
#[derive(Clone)]
pub struct MemoryBankModel {
    eta: f64,
    g: ErrorResponse,
    e0: f64,
}

impl std::fmt::Debug for MemoryBankModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryBankModel")
            .field("eta", &self.eta)
            .field("e0", &self.e0)
            .finish_non_exhaustive()
    }
}

impl MemoryBankModel {
    /// Audits `g` on a uniform grid: `g(e) in [0, 1]`, `g(e) >= e`, `g(0) > 0`.
    pub fn new(eta: f64, g: ErrorResponse, e0: f64) -> Result<Self> {
        Self::build(eta, g, e0, true)
    }

    /// Same audit without the `g(0) > 0` requirement.
    pub fn without_base_error(eta: f64, g: ErrorResponse, e0: f64) -> Result<Self> {
        Self::build(eta, g, e0, false)
    }

    fn build(eta: f64, g: ErrorResponse, e0: f64, strict: bool) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(domain(format!("update fraction eta must lie in (0, 1], got {eta}")));
        }
        if !(0.0..=1.0).contains(&e0) {
            return Err(domain(format!("initial error must lie in [0, 1], got {e0}")));
        }
        for i in 0..AUDIT_GRID_POINTS {
            let e = i as f64 / (AUDIT_GRID_POINTS - 1) as f64;
            let v = g(e);
            if !(0.0..=1.0).contains(&v) {
                return Err(domain(format!("g({e}) = {v} leaves [0, 1]")));
            }
            if v < e {
                return Err(domain(format!("g({e}) = {v} < e violates error reinforcement")));
            }
        }
        if strict && g(0.0) <= 0.0 {
            return Err(domain("g(0) must be positive"));
        }
        Ok(Self { eta, g, e0 })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    pub fn response(&self, e: f64) -> f64 {
        (self.g)(e)
    }
}

/// `e_0 ... e_steps`.
pub fn memory_bank_trajectory(model: &MemoryBankModel, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(domain("trajectory needs at least one step"));
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut e = model.e0;
    out.push(e);
    for _ in 0..steps {
        e = (1.0 - model.eta) * e + model.eta * (model.g)(e);
        out.push(e);
    }
    Ok(out)
}

/// First step from which the memory bank's precision `1 - e_t` stays below
/// `rho_pas`, or `None` within the trajectory.
pub fn crossover_step(trajectory: &[f64], rho_pas: f64) -> Option<usize> {
    let mut candidate = None;
    for (t, e) in trajectory.iter().enumerate() {
        if rho_pas > 1.0 - e {
            candidate.get_or_insert(t);
        } else {
            candidate = None;
        }
    }
    candidate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub step: usize,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTrajectory {
    pub params: DynamicsParams,
    pub population: u64,
    pub replicates: usize,
    pub points: Vec<McPoint>,
}

impl McTrajectory {
    /// Whether the analytic value lies within `k` standard errors of the
    /// simulated mean at every step.
    pub fn within(&self, k: f64) -> bool {
        self.points.iter().all(|p| {
            let diff = (p.analytic - p.mc_mean).abs();
            diff <= k * p.mc_stderr || diff <= 1e-15
        })
    }

    pub fn final_point(&self) -> &McPoint {
        self.points.last().expect("trajectory has step 0")
    }
}

/// Stochastic item-level simulation of the filtered dynamics.
///
/// Each round, every one of `population` items is trained either on its
/// labeled target (probability `1 - f gamma`, wrong with probability
/// `eps0`) or on an accepted pseudo-label (probability `f gamma`). A
/// pseudo-label is wrong with probability equal to the current teacher
/// error and a wrong one slips through the filter with probability
/// `1 - rho`. The student error is the empirical wrong fraction and the
/// teacher follows the EMA rule. Counts are drawn as binomials, which is
/// equivalent in distribution to per-item Bernoulli draws.
pub fn monte_carlo_oracle(
    params: &DynamicsParams,
    population: u64,
    steps: usize,
    replicates: usize,
    seed: u64,
) -> Result<McTrajectory> {
    params.validate()?;
    if population < MIN_POPULATION {
        return Err(domain(format!(
            "population must be at least {MIN_POPULATION}, got {population}"
        )));
    }
    if replicates < 2 {
        return Err(domain("at least two replicates are needed for a standard error"));
    }
    let p = *params;
    let fg = p.f * p.gamma;
    let runs: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &format!("dynamics/mc/{r}")));
            let binom = |n: u64, q: f64| {
                Binomial::new(n, q.clamp(0.0, 1.0)).map_err(|e| Error::Domain(e.to_string()))
            };
            let mut e = p.epsilon0;
            let mut traj = Vec::with_capacity(steps + 1);
            traj.push(e);
            for _ in 0..steps {
                let pseudo = binom(population, fg)?.sample(&mut rng);
                let labeled = population - pseudo;
                let wrong_labeled = binom(labeled, p.epsilon0)?.sample(&mut rng);
                let wrong_pseudo = binom(pseudo, e * (1.0 - p.rho_precision))?.sample(&mut rng);
                let student = (wrong_labeled + wrong_pseudo) as f64 / population as f64;
                e = p.alpha * e + (1.0 - p.alpha) * student;
                traj.push(e);
            }
            Ok(traj)
        })
        .collect::<Result<_>>()?;

    let mut analytic = p.epsilon0;
    let mut points = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        if t > 0 {
            analytic = step(analytic, &p, FilterMode::Filtered)?;
        }
        let n = replicates as f64;
        let mean = runs.iter().map(|r| r[t]).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        points.push(McPoint {
            step: t,
            analytic,
            mc_mean: mean,
            mc_stderr: (var / n).sqrt(),
        });
    }
    Ok(McTrajectory {
        params: p,
        population,
        replicates,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub f: f64,
    pub rho_precision: f64,
    pub asymptotic_error: f64,
    pub improves: bool,
}

/// Filtered limits over a `(f, rho)` grid.
pub fn coverage_precision_sweep(
    base: &DynamicsParams,
    fs: &[f64],
    rhos: &[f64],
) -> Result<Vec<SweepCell>> {
    let mut out = Vec::with_capacity(fs.len() * rhos.len());
    for &f in fs {
        for &rho in rhos {
            let p = DynamicsParams { f, rho_precision: rho, ..*base };
            let e = asymptotic_error(&p, FilterMode::Filtered)?;
            out.push(SweepCell {
                f,
                rho_precision: rho,
                asymptotic_error: e,
                improves: e < p.epsilon0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn params(e0: f64, g: f64, a: f64, f: f64, r: f64) -> DynamicsParams {
        DynamicsParams::new(e0, g, a, f, r).unwrap()
    }

    #[test]
    fn step_cases() {
        let p = params(0.2, 0.5, 0.9, 0.5, 0.5);
        assert_abs_diff_eq!(step(0.2, &p, FilterMode::Unfiltered).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(step(0.4, &p, FilterMode::Unfiltered).unwrap(), 0.39, epsilon = 1e-15);
        let p0 = params(0.2, 0.5, 0.9, 0.0, 0.5);
        let e = 0.37;
        assert_abs_diff_eq!(
            step(e, &p0, FilterMode::Filtered).unwrap(),
            0.9 * e + 0.1 * 0.2,
            epsilon = 1e-15
        );
        assert!(step(1.5, &p, FilterMode::Filtered).is_err());
        assert!(DynamicsParams::new(0.0, 0.5, 0.5, 0.5, 0.5).is_err());
        assert!(DynamicsParams::new(0.2, 1.0, 0.5, 0.5, 0.5).is_err());
        assert!(DynamicsParams::new(0.2, 0.5, 1.0, 0.5, 0.5).is_err());
        assert!(DynamicsParams::new(0.2, 0.5, 0.5, 1.1, 0.5).is_err());
    }

    #[test]
    fn asymptotic_cases() {
        let p = params(0.3, 0.8, 0.9, 0.5, 0.0);
        assert_eq!(asymptotic_error(&p, FilterMode::Filtered).unwrap(), 0.3);
        let p = params(0.3, 0.8, 0.9, 0.5, 1.0);
        assert_eq!(asymptotic_error(&p, FilterMode::Filtered).unwrap(), (1.0 - 0.4) * 0.3);
        let p = params(0.3, 0.8, 0.9, 0.5, 0.9);
        assert_abs_diff_eq!(asymptotic_error(&p, FilterMode::Filtered).unwrap(), 0.1875, epsilon = 1e-15);
        let mut e = 0.3;
        for _ in 0..10_000 {
            e = step(e, &p, FilterMode::Filtered).unwrap();
        }
        assert_abs_diff_eq!(e, 0.1875, epsilon = 1e-9);
        assert_eq!(asymptotic_error(&p, FilterMode::Unfiltered).unwrap(), 0.3);
    }

    #[test]
    fn convergence_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = params(
                rng.random_range(0.01..0.99),
                rng.random_range(0.01..0.99),
                rng.random_range(0.0..0.95),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
            );
            let target = asymptotic_error(&p, FilterMode::Filtered).unwrap();
            let bound = (1e-9f64.ln() / p.lambda_eff().ln()).ceil().max(1.0) as usize;
            let mut e = p.epsilon0;
            for _ in 0..bound {
                e = step(e, &p, FilterMode::Filtered).unwrap();
            }
            assert!((e - target).abs() < 1e-9, "{p:?}");
            assert!(p.lambda() < 1.0 && p.lambda_eff() <= p.lambda() + 1e-15);
        }
    }

    #[test]
    fn threshold_cases() {
        assert_eq!(improvement_threshold(1.0, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(improvement_threshold(0.5, 0.8).unwrap(), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(improvement_threshold(1.0, 0.8).unwrap(), 0.75, epsilon = 1e-15);
        assert!(improvement_threshold(0.0, 0.5).is_err());
    }

    #[test]
    fn threshold_is_sufficient_and_rho_positive_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let p = params(
                rng.random_range(0.01..0.99),
                rng.random_range(0.01..0.99),
                rng.random_range(0.0..0.99),
                rng.random_range(0.01..=1.0),
                rng.random_range(0.0..=1.0),
            );
            let improves = improves_on_supervised(&p).unwrap();
            assert_eq!(improves, p.rho_precision > 0.0);
            if p.rho_precision > improvement_threshold(p.f, p.gamma).unwrap() {
                assert!(improves || p.rho_precision == 0.0);
            }
        }
    }

    #[test]
    fn dual_precision_cases() {
        let s = CriteriaStats::new(0.9, 0.9, 0.1, 0.1, 0.5).unwrap();
        let d = dual_precision(&s).unwrap();
        assert_abs_diff_eq!(d.rho1, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(d.rho12, 0.81 / 0.82, epsilon = 1e-15);
        let s = CriteriaStats::new(0.7, 0.4, 0.2, 0.4, 0.3).unwrap();
        let d = dual_precision(&s).unwrap();
        assert_abs_diff_eq!(d.rho12, d.rho1, epsilon = 1e-15);
        assert_abs_diff_eq!(d.gain, 1.0, epsilon = 1e-15);
        assert!(CriteriaStats::new(0.0, 0.5, 0.5, 0.5, 0.5).is_err());
        assert!(CriteriaStats::new(0.5, 0.5, 0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn memory_bank_cases() {
        let id = MemoryBankModel::without_base_error(0.5, Arc::new(|e| e), 0.3).unwrap();
        assert!(memory_bank_trajectory(&id, 5).unwrap().iter().all(|&e| e == 0.3));
        assert!(MemoryBankModel::new(0.5, Arc::new(|e| e), 0.3).is_err());

        let m = MemoryBankModel::new(0.5, Arc::new(|e: f64| (e + 0.1).min(1.0)), 0.0).unwrap();
        let t = memory_bank_trajectory(&m, 3).unwrap();
        assert_abs_diff_eq!(t[1], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(t[2], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(t[3], 0.15, epsilon = 1e-15);
        assert!(memory_bank_trajectory(&m, 0).is_err());

        let bad = MemoryBankModel::new(0.5, Arc::new(|e: f64| 0.5 * e + 0.1), 0.0);
        assert!(bad.is_err());
        assert!(MemoryBankModel::new(0.0, Arc::new(|e: f64| (e + 0.1).min(1.0)), 0.0).is_err());
    }

    #[test]
    fn crossover_finds_first_persistent_step() {
        assert_eq!(crossover_step(&[0.0, 0.1, 0.2, 0.3], 0.85), Some(2));
        assert_eq!(crossover_step(&[0.0, 0.01], 0.5), None);
    }

    #[test]
    fn monte_carlo_limits() {
        let p = params(0.3, 0.5, 0.9, 1.0, 1.0);
        let mc = monte_carlo_oracle(&p, 100_000, 150, 20, 1).unwrap();
        let last = mc.final_point();
        assert!((last.mc_mean - 0.15).abs() <= 3.0 * last.mc_stderr.max(1e-12));
        let p0 = params(0.3, 0.5, 0.9, 0.0, 0.5);
        let mc = monte_carlo_oracle(&p0, 100_000, 150, 20, 2).unwrap();
        let last = mc.final_point();
        assert!((last.mc_mean - 0.3).abs() <= 3.0 * last.mc_stderr);
        assert!(monte_carlo_oracle(&p0, 999, 10, 5, 0).is_err());
        assert_eq!(
            monte_carlo_oracle(&p0, 1000, 10, 3, 9).unwrap(),
            monte_carlo_oracle(&p0, 1000, 10, 3, 9).unwrap()
        );
    }

    #[test]
    fn sweep_grid() {
        let base = params(0.3, 0.8, 0.9, 0.5, 0.5);
        let cells = coverage_precision_sweep(&base, &[0.5], &[0.0, 0.9]).unwrap();
        assert_eq!(cells[0].asymptotic_error, 0.3);
        assert!(!cells[0].improves);
        assert_abs_diff_eq!(cells[1].asymptotic_error, 0.1875, epsilon = 1e-15);
    }
}
