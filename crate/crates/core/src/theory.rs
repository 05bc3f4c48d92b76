//! Named invariant suites over numerics, gas, dynamics and pas.
//!
//! Each [`Invariant`] is a deterministic randomized check driven by
//! [`TheoryConfig`]. `validate-theory` runs all of them; the acceptance and
//! integration tests call them by name.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    asymptotic_error, dual_precision, improvement_threshold, iterate_to_convergence,
    memory_bank_trajectory, monte_carlo_oracle, step, CriteriaStats, DynamicsParams, FilterMode,
    McTrajectory, MemoryBankModel,
};
use crate::gas::{
    adversarial_comparison, expected_quadratic_increase, noise_scales, perturb, GradientBuffer,
    NoiseScaleVector, QuadraticLandscape,
};
use crate::numerics::{
    f_ratio, kl_comparison, kl_diag, pac_bayes_gap, ComparisonConfig, DiagonalGaussian,
    FisherDiagonal, MemoryPrior,
};
use crate::pas::{
    compute_prototypes, consistency_loss, decide_rows, ema_update, validate_pixels, FeatureMap,
    FilterConfig, PrototypeBank, ValidityMask,
};
use crate::seed::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub seed: u64,
    /// Samples per Monte-Carlo KL estimate.
    pub kl_samples: usize,
    /// Draws per Monte-Carlo expected-loss estimate on a quadratic.
    pub landscape_samples: usize,
    /// Seeds used for perturbation moment checks.
    pub perturb_seeds: usize,
    pub mc_population: u64,
    pub mc_replicates: usize,
    pub mc_steps: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kl_samples: 1_000_000,
            landscape_samples: 100_000,
            perturb_seeds: 100_000,
            mc_population: 100_000,
            mc_replicates: 20,
            mc_steps: 200,
        }
    }
}

/// `Ok(detail)` on pass, `Err(detail)` on failure.
pub type CheckResult = std::result::Result<String, String>;

pub struct Invariant {
    pub name: &'static str,
    pub module: &'static str,
    pub run: fn(&TheoryConfig) -> CheckResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub module: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub config: TheoryConfig,
    pub all_passed: bool,
    pub checks: Vec<CheckOutcome>,
}

impl TheorySummary {
    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }
}

pub fn invariants() -> &'static [Invariant] {
    INVARIANTS
}

pub fn find(name: &str) -> Option<&'static Invariant> {
    INVARIANTS.iter().find(|i| i.name == name)
}

pub fn run_one(inv: &Invariant, cfg: &TheoryConfig) -> CheckOutcome {
    let (status, detail) = match (inv.run)(cfg) {
        Ok(d) => (Status::Pass, d),
        Err(d) => (Status::Fail, d),
    };
    CheckOutcome {
        name: inv.name.into(),
        module: inv.module.into(),
        status,
        detail,
    }
}

/// Runs every invariant, or only those whose module is listed in `modules`.
pub fn run_suite(cfg: &TheoryConfig, modules: Option<&[String]>) -> TheorySummary {
    let checks: Vec<CheckOutcome> = INVARIANTS
        .iter()
        .filter(|i| modules.is_none_or(|m| m.iter().any(|m| m == i.module)))
        .map(|i| run_one(i, cfg))
        .collect();
    TheorySummary {
        config: cfg.clone(),
        all_passed: checks.iter().all(|c| c.status == Status::Pass),
        checks,
    }
}

const INVARIANTS: &[Invariant] = &[
    Invariant { name: "f_ratio_minimum", module: "numerics", run: f_ratio_minimum },
    Invariant { name: "f_ratio_quadratic_envelope", module: "numerics", run: f_ratio_quadratic_envelope },
    Invariant { name: "kl_self_zero", module: "numerics", run: kl_self_zero },
    Invariant { name: "kl_monte_carlo", module: "numerics", run: kl_monte_carlo },
    Invariant { name: "jensen_strictness", module: "numerics", run: jensen_strictness },
    Invariant { name: "pac_bayes_ordering", module: "numerics", run: pac_bayes_ordering },
    Invariant { name: "static_shift_ordering", module: "numerics", run: static_shift_ordering },
    Invariant { name: "memory_mismatch_ordering", module: "numerics", run: memory_mismatch_ordering },
    Invariant { name: "noise_scale_range", module: "gas", run: noise_scale_range },
    Invariant { name: "noise_scale_hand_cases", module: "gas", run: noise_scale_hand_cases },
    Invariant { name: "perturb_reproducible", module: "gas", run: perturb_reproducible },
    Invariant { name: "perturb_moments", module: "gas", run: perturb_moments },
    Invariant { name: "quadratic_increase_monte_carlo", module: "gas", run: quadratic_increase_monte_carlo },
    Invariant { name: "adversarial_ratio_bounds", module: "gas", run: adversarial_ratio_bounds },
    Invariant { name: "contraction", module: "dynamics", run: contraction },
    Invariant { name: "closed_form_convergence", module: "dynamics", run: closed_form_convergence },
    Invariant { name: "precision_limits", module: "dynamics", run: precision_limits },
    Invariant { name: "monotone_in_precision", module: "dynamics", run: monotone_in_precision },
    Invariant { name: "improvement_threshold", module: "dynamics", run: improvement_threshold_check },
    Invariant { name: "monte_carlo_agreement", module: "dynamics", run: monte_carlo_agreement },
    Invariant { name: "dual_precision_sign", module: "dynamics", run: dual_precision_sign },
    Invariant { name: "memory_bank_monotone", module: "dynamics", run: memory_bank_monotone },
    Invariant { name: "precision_ordering_composition", module: "dynamics", run: precision_ordering_composition },
    Invariant { name: "prototype_hand_cases", module: "pas", run: prototype_hand_cases },
    Invariant { name: "prototype_invariances", module: "pas", run: prototype_invariances },
    Invariant { name: "validation_invariances", module: "pas", run: validation_invariances },
    Invariant { name: "filter_monotonicity", module: "pas", run: filter_monotonicity },
    Invariant { name: "dual_filter_precision", module: "pas", run: dual_filter_precision },
    Invariant { name: "consistency_cases", module: "pas", run: consistency_cases },
    Invariant { name: "ema_convergence", module: "pas", run: ema_convergence },
];

fn rng_for(cfg: &TheoryConfig, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, &format!("theory/{name}")))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: crate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn fisher(v: Vec<f64>) -> std::result::Result<FisherDiagonal, String> {
    lib(FisherDiagonal::new(v))
}

// ---- numerics ----

fn f_ratio_minimum(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "f_ratio_minimum");
    ensure(lib(f_ratio(1.0))? == 0.0, || "f(1) != 0".into())?;
    for _ in 0..1000 {
        let x = log_uniform(&mut rng, 1e-3, 1e3);
        let v = lib(f_ratio(x))?;
        ensure(v > 0.0 || x == 1.0, || format!("f({x}) = {v} not positive"))?;
    }
    Ok("f >= 0 on 1000 draws, zero only at 1".into())
}

fn f_ratio_quadratic_envelope(cfg: &TheoryConfig) -> CheckResult {
    // Taylor with remainder: f(x) = (x - 1)^2 / (2 xi^2) with xi between 1 and x.
    let mut rng = rng_for(cfg, "f_ratio_quadratic_envelope");
    for _ in 0..1000 {
        let x: f64 = rng.random_range(0.5..1.5);
        let f = lib(f_ratio(x))?;
        let q = (x - 1.0).powi(2);
        let tol = 1e-15;
        ensure(2.0 / 9.0 * q <= f + tol && f <= q + tol, || format!("(2/9)q <= f <= q fails at {x}"))?;
        if x <= 1.0 {
            ensure(0.5 * q <= f + tol, || format!("q/2 <= f fails at {x}"))?;
        } else {
            ensure(f <= 0.5 * q + tol, || format!("f <= q/2 fails at {x}"))?;
        }
    }
    Ok("(2/9)q <= f <= q on [0.5, 1.5]; q/2 is a lower bound below 1 and an upper bound above".into())
}

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize, spread: f64) -> std::result::Result<DiagonalGaussian, String> {
    let mean = (0..d).map(|_| rng.random_range(-spread..spread)).collect();
    let var = (0..d).map(|_| log_uniform(rng, 0.3, 3.0)).collect();
    lib(DiagonalGaussian::new(mean, var))
}

fn kl_self_zero(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "kl_self_zero");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let g = random_gaussian(&mut rng, d, 3.0)?;
        worst = worst.max(lib(kl_diag(&g, &g))?.abs());
    }
    ensure(worst < 1e-12, || format!("max |KL(q||q)| = {worst:e}"))?;
    Ok(format!("max |KL(q||q)| = {worst:e} over 100 draws"))
}

/// `E_q[log q - log p]` by sampling, with its standard error.
pub fn monte_carlo_kl(q: &DiagonalGaussian, p: &DiagonalGaussian, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_density = |g: &DiagonalGaussian, x: &[f64]| -> f64 {
        x.iter()
            .zip(g.mean().iter().zip(g.variance()))
            .map(|(x, (m, v))| -0.5 * ((x - m).powi(2) / v + v.ln()))
            .sum()
    };
    let (mut s, mut s2) = (0.0, 0.0);
    let mut x = vec![0.0; q.dim()];
    for _ in 0..n {
        for (i, xi) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *xi = q.mean()[i] + q.variance()[i].sqrt() * z;
        }
        let v = log_density(q, &x) - log_density(p, &x);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

fn kl_monte_carlo(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "kl_monte_carlo");
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let d = rng.random_range(1..=5);
        let q = random_gaussian(&mut rng, d, 1.0)?;
        let p = random_gaussian(&mut rng, d, 1.0)?;
        let exact = lib(kl_diag(&q, &p))?;
        let (mc, se) = monte_carlo_kl(&q, &p, cfg.kl_samples, rng.random());
        let z = (mc - exact).abs() / se;
        ensure(z <= 3.0, || format!("case {case}: exact {exact}, sampled {mc} ± {se}"))?;
        worst = worst.max(z);
    }
    Ok(format!("20 cases within {worst:.2} standard errors"))
}

fn heterogeneous_fisher(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = rng.random_range(2..=20);
    loop {
        let v: Vec<f64> = (0..d).map(|_| log_uniform(rng, 0.01, 100.0)).collect();
        if v.iter().any(|x| *x != v[0]) {
            return v;
        }
    }
}

fn jensen_strictness(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "jensen_strictness");
    let mut min_margin = f64::INFINITY;
    for _ in 0..1000 {
        let f = fisher(heterogeneous_fisher(&mut rng))?;
        let r = lib(kl_comparison(&f, &ComparisonConfig::default()))?;
        let margin = r.kl_iso - r.kl_gas;
        ensure(margin > 0.0, || format!("kl_gas {} >= kl_iso {}", r.kl_gas, r.kl_iso))?;
        min_margin = min_margin.min(margin);
    }
    for _ in 0..100 {
        let d = rng.random_range(1..=20);
        let v = log_uniform(&mut rng, 0.01, 100.0);
        let r = lib(kl_comparison(&fisher(vec![v; d])?, &ComparisonConfig::default()))?;
        ensure((r.kl_gas - r.kl_iso).abs() < 1e-12, || {
            format!("homogeneous F = {v}: kl_gas {} vs kl_iso {}", r.kl_gas, r.kl_iso)
        })?;
    }
    Ok(format!("1000 heterogeneous cases, min margin {min_margin:e}; 100 homogeneous equal"))
}

fn pac_bayes_ordering(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "pac_bayes_ordering");
    for _ in 0..1000 {
        let f = fisher(heterogeneous_fisher(&mut rng))?;
        let r = lib(kl_comparison(&f, &ComparisonConfig::default()))?;
        let n = rng.random_range(1..100_000u64);
        let delta = rng.random_range(0.001..0.5);
        let (g, i) = (lib(pac_bayes_gap(r.kl_gas, n, delta))?, lib(pac_bayes_gap(r.kl_iso, n, delta))?);
        ensure(g < i, || format!("gap(kl_gas) {g} >= gap(kl_iso) {i}"))?;
        let more = lib(pac_bayes_gap(r.kl_iso, n + 1, delta))?;
        ensure(more < i, || format!("gap not decreasing in n at n = {n}"))?;
    }
    Ok("gap(kl_gas) < gap(kl_iso) on 1000 cases; decreasing in n".into())
}

/// `f(r) >= (r - 1)^2 / (2 max(r, 1)^2)`; summed and halved this lower-bounds a
/// variance-only KL with ratios `r`.
fn kl_lower_bound(ratios: impl Iterator<Item = f64>) -> f64 {
    0.5 * ratios.map(|r| (r - 1.0).powi(2) / (2.0 * r.max(1.0).powi(2))).sum::<f64>()
}

/// Upper bound on the GAS KL when the gradient proxy is off by `|e_i| <= delta`:
/// ratio `1 / (1 + e)` gives `f <= e^2 (1 + delta)^2 / (2 (1 - delta)^2)`.
fn gas_kl_upper_bound(d: usize, delta: f64) -> f64 {
    0.5 * d as f64 * delta * delta * (1.0 + delta).powi(2) / (2.0 * (1.0 - delta).powi(2))
}

struct ShiftScenario {
    current: Vec<f64>,
    previous: Vec<f64>,
    approx_error: Vec<f64>,
    delta: f64,
}

fn shift_scenario(rng: &mut ChaCha8Rng) -> ShiftScenario {
    let d = rng.random_range(2..=12);
    let delta = 0.05;
    let previous: Vec<f64> = (0..d).map(|_| log_uniform(rng, 0.1, 10.0)).collect();
    let magnitude = rng.random_range(0.02..2.0);
    let current = previous
        .iter()
        .map(|p| {
            let z: f64 = rng.sample(StandardNormal);
            p * (magnitude * z).exp()
        })
        .collect();
    let approx_error = (0..d).map(|_| rng.random_range(-delta..delta)).collect();
    ShiftScenario { current, previous, approx_error, delta }
}

fn static_shift_ordering(cfg: &TheoryConfig) -> CheckResult {
    let hand = lib(kl_comparison(
        &fisher(vec![2.0, 0.5])?,
        &ComparisonConfig { static_lambda: Some(1.0), ..Default::default() },
    ))?;
    let ks = hand.kl_static.expect("requested");
    ensure((ks - 0.25).abs() < 1e-12 && hand.kl_gas < ks, || {
        format!("hand case: kl_static {ks}, kl_gas {}", hand.kl_gas)
    })?;

    let mut rng = rng_for(cfg, "static_shift_ordering");
    let (mut certified, mut ordered) = (0, 0);
    for case in 0..500 {
        let s = shift_scenario(&mut rng);
        // Weight decay calibrated on the previous session's mean Fisher.
        let lambda = s.previous.iter().sum::<f64>() / s.previous.len() as f64;
        let r = lib(kl_comparison(
            &fisher(s.current.clone())?,
            &ComparisonConfig {
                approx_error: Some(s.approx_error.clone()),
                static_lambda: Some(lambda),
                ..Default::default()
            },
        ))?;
        let ks = r.kl_static.expect("requested");
        let lower = kl_lower_bound(s.current.iter().map(|f| f / lambda));
        // The sufficient condition: the shift-induced static KL floor is above the GAS ceiling.
        if lower > gas_kl_upper_bound(s.current.len(), s.delta) {
            certified += 1;
            ensure(r.kl_gas < ks, || format!("case {case}: kl_gas {} >= kl_static {ks}", r.kl_gas))?;
        }
        ordered += usize::from(r.kl_gas < ks);
    }
    ensure(certified >= 100, || format!("only {certified} scenarios met the shift condition"))?;
    Ok(format!(
        "hand case kl_static = 0.25; {certified}/500 scenarios met the shift condition, all ordered ({ordered}/500 ordered overall)"
    ))
}

fn memory_mismatch_ordering(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "memory_mismatch_ordering");
    let (mut certified, mut ordered) = (0, 0);
    for case in 0..500 {
        let s = shift_scenario(&mut rng);
        let lambda = 1.0;
        let r = lib(kl_comparison(
            &fisher(s.current.clone())?,
            &ComparisonConfig {
                approx_error: Some(s.approx_error.clone()),
                memory: Some(MemoryPrior { lambda, fisher_hist: fisher(s.previous.clone())? }),
                ..Default::default()
            },
        ))?;
        let km = r.kl_memory.expect("requested");
        let lower = kl_lower_bound(s.current.iter().zip(&s.previous).map(|(c, h)| c / (lambda * h)));
        if lower > gas_kl_upper_bound(s.current.len(), s.delta) {
            certified += 1;
            ensure(r.kl_gas < km, || format!("case {case}: kl_gas {} >= kl_memory {km}", r.kl_gas))?;
        }
        ordered += usize::from(r.kl_gas < km);
    }
    ensure(certified >= 100, || format!("only {certified} scenarios met the mismatch condition"))?;
    Ok(format!(
        "{certified}/500 scenarios met the mismatch condition, all ordered ({ordered}/500 ordered overall)"
    ))
}

// ---- gas ----

fn noise_scale_range(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "noise_scale_range");
    for case in 0..1000 {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let sums = Array2::from_shape_fn((m, n), |_| {
            if rng.random_bool(0.1) {
                0.0
            } else {
                log_uniform(&mut rng, 1e-6, 1e4)
            }
        });
        let s = lib(noise_scales(&lib(GradientBuffer::from_sums(sums.clone(), 1e-8))?))?;
        let s = s.scales();
        ensure(s.iter().all(|v| *v > 0.0 && *v <= 1.0), || format!("case {case}: scale outside (0, 1]"))?;
        let (imin, _) = sums
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        ensure(s.iter().nth(imin) == Some(&1.0), || format!("case {case}: minimum-gradient entry is not 1"))?;
        for (a, sa) in sums.iter().zip(s.iter()) {
            for (b, sb) in sums.iter().zip(s.iter()) {
                if a < b {
                    ensure(sa >= sb, || format!("case {case}: scales not monotone"))?;
                }
            }
        }
    }
    Ok("1000 random buffers: scales in (0, 1], min-gradient entry exactly 1, monotone".into())
}

fn noise_scale_hand_cases(_: &TheoryConfig) -> CheckResult {
    let equal = lib(noise_scales(&lib(GradientBuffer::from_sums(Array2::from_elem((2, 3), 4.2), 1e-8))?))?;
    ensure(equal.scales().iter().all(|v| *v == 1.0), || "equal buffer not all ones".into())?;
    let s = lib(noise_scales(&lib(GradientBuffer::from_sums(ndarray::array![[1.0, 3.0]], 1e-300))?))?;
    let s = s.scales();
    ensure(s[[0, 0]] == 1.0 && (s[[0, 1]] - 0.6).abs() < 1e-12, || format!("[1, 3] -> {s}"))?;
    let s = lib(noise_scales(&lib(GradientBuffer::from_sums(ndarray::array![[0.0, 1e8]], 1e-8))?))?;
    ensure(s.scales()[[0, 0]] == 1.0, || "zero-gradient entry not 1".into())?;
    ensure(noise_scales(&GradientBuffer::new(1, 2)).is_err(), || "empty buffer accepted".into())?;
    Ok("equal -> ones; [1, 3] -> [1, 0.6]; zero gradient -> 1; empty buffer rejected".into())
}

fn perturb_reproducible(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "perturb_reproducible");
    for _ in 0..100 {
        let w = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let s = lib(noise_scales(&lib(GradientBuffer::from_sums(
            Array2::from_shape_fn((3, 4), |_| rng.random_range(0.0..5.0)),
            1e-8,
        ))?))?;
        let seed: u64 = rng.random();
        let a = lib(perturb(&w, &s, seed))?;
        let b = lib(perturb(&w, &s, seed))?;
        let same = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || "same seed gave different draws".into())?;
        // Uniform scale: (W~ - W) / s is the raw normal stream.
        let half = lib(NoiseScaleVector::uniform(3, 4, 0.5))?;
        let one = lib(NoiseScaleVector::uniform(3, 4, 1.0))?;
        let raw = lib(perturb(&Array2::zeros((3, 4)), &one, seed))?;
        let p = lib(perturb(&w, &half, seed))?;
        let lin = p.iter().zip(w.iter()).zip(raw.iter()).all(|((p, w), r)| ((p - w) / 0.5 - r).abs() < 1e-12);
        ensure(lin, || "uniform-scale linearity broken".into())?;
    }
    Ok("100 bit-identical reruns; uniform-scale draws reproduce the raw stream".into())
}

fn perturb_moments(cfg: &TheoryConfig) -> CheckResult {
    let scales = lib(noise_scales(&lib(GradientBuffer::from_sums(ndarray::array![[0.0, 1.0, 4.0], [0.25, 9.0, 2.0]], 1e-8))?))?;
    let w = ndarray::array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]];
    let n = cfg.perturb_seeds as f64;
    let mut s1 = Array2::<f64>::zeros((2, 3));
    let mut s2 = Array2::<f64>::zeros((2, 3));
    let mut s4 = Array2::<f64>::zeros((2, 3));
    let root = child_seed(cfg.seed, "theory/perturb_moments");
    for k in 0..cfg.perturb_seeds {
        let d = lib(perturb(&w, &scales, child_seed(root, &k.to_string())))? - &w;
        s1 += &d;
        s2 += &d.mapv(|v| v * v);
        s4 += &d.mapv(|v| v.powi(4));
    }
    for (idx, &s) in scales.scales().indexed_iter() {
        let mean = s1[idx] / n;
        let se_mean = s / n.sqrt();
        ensure(mean.abs() <= 3.0 * se_mean, || format!("{idx:?}: mean {mean} vs 0 ± {se_mean}"))?;
        let m2 = s2[idx] / n;
        let se_var = ((s4[idx] / n - m2 * m2).max(0.0) / n).sqrt();
        ensure((m2 - s * s).abs() <= 3.0 * se_var, || format!("{idx:?}: variance {m2} vs {} ± {se_var}", s * s))?;
    }
    Ok(format!("mean 0 and variance scales^2 within 3 standard errors over {} seeds", cfg.perturb_seeds))
}

fn random_landscape(rng: &mut ChaCha8Rng) -> std::result::Result<QuadraticLandscape, String> {
    let d = rng.random_range(1..=10);
    let kappa = log_uniform(rng, 1.0 + 1e-9, 100.0);
    let mut eig: Vec<f64> = (0..d).map(|_| log_uniform(rng, 1.0, kappa)).collect();
    eig[0] = kappa;
    if d > 1 {
        eig[1] = 1.0;
    }
    lib(QuadraticLandscape::centered(eig))
}

/// Per-case `(exact, sampled mean, standard error)` of the expected loss
/// increase on random quadratics with random per-coordinate scales.
pub fn quadratic_increase_samples(cfg: &TheoryConfig) -> std::result::Result<Vec<(f64, f64, f64)>, String> {
    let mut rng = rng_for(cfg, "quadratic_increase_monte_carlo");
    let mut out = Vec::with_capacity(QUADRATIC_CASES);
    for _ in 0..QUADRATIC_CASES {
        let l = random_landscape(&mut rng)?;
        let scales: Vec<f64> = (0..l.dim()).map(|_| rng.random_range(0.0..1.0)).collect();
        let exact = lib(expected_quadratic_increase(&l, &scales))?;
        let (mut s, mut s2) = (0.0, 0.0);
        let mut theta = vec![0.0; l.dim()];
        for _ in 0..cfg.landscape_samples {
            for (t, (o, sc)) in theta.iter_mut().zip(l.optimum().iter().zip(&scales)) {
                let z: f64 = rng.sample(StandardNormal);
                *t = o + sc * z;
            }
            let v = l.loss(&theta);
            s += v;
            s2 += v * v;
        }
        let n = cfg.landscape_samples as f64;
        let mean = s / n;
        out.push((exact, mean, ((s2 / n - mean * mean).max(0.0) / n).sqrt()));
    }
    Ok(out)
}

pub const QUADRATIC_CASES: usize = 20;

/// Bonferroni band for 20 normal z-scores at 1% family-wise error.
pub const QUADRATIC_BAND: f64 = 3.5;

fn quadratic_increase_monte_carlo(cfg: &TheoryConfig) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut over3 = 0;
    for (case, (exact, mean, se)) in quadratic_increase_samples(cfg)?.into_iter().enumerate() {
        let z = if se > 0.0 { (mean - exact).abs() / se } else { (mean - exact).abs() };
        ensure(z <= QUADRATIC_BAND, || format!("case {case}: exact {exact}, sampled {mean} ± {se}"))?;
        over3 += (z > 3.0) as usize;
        worst = worst.max(z);
    }
    Ok(format!("{QUADRATIC_CASES} landscapes, max z {worst:.2} ({over3} above 3)"))
}

fn adversarial_ratio_bounds(cfg: &TheoryConfig) -> CheckResult {
    let hand = lib(adversarial_comparison(&lib(QuadraticLandscape::centered(vec![3.0, 1.0]))?, 1.0))?;
    ensure(hand.delta_adv == 1.5 && hand.delta_gas == 0.75 && hand.ratio == 2.0, || format!("hand case {hand:?}"))?;
    let iso = lib(adversarial_comparison(&lib(QuadraticLandscape::centered(vec![1.0, 1.0]))?, 1.0))?;
    ensure(iso.ratio == 1.0, || format!("isotropic ratio {}", iso.ratio))?;
    let mut rng = rng_for(cfg, "adversarial_ratio_bounds");
    for case in 0..100 {
        let l = random_landscape(&mut rng)?;
        let rho = log_uniform(&mut rng, 0.01, 10.0);
        let r = lib(adversarial_comparison(&l, rho))?;
        let k = l.condition_number();
        ensure(r.ratio >= 1.0 - 1e-12 && r.ratio <= k * (1.0 + 1e-12), || {
            format!("case {case}: ratio {} outside [1, {k}]", r.ratio)
        })?;
        // The GAS budget allocation reproduces delta_gas.
        let s = l.gas_scales(rho);
        let budget: f64 = s.iter().map(|v| v * v).sum();
        let inc = lib(expected_quadratic_increase(&l, s.as_slice().expect("contiguous")))?;
        ensure((budget - rho * rho).abs() <= 1e-9 * rho * rho && (inc - r.delta_gas).abs() <= 1e-9 * r.delta_gas, || {
            format!("case {case}: GAS allocation inconsistent")
        })?;
    }
    Ok("hand case (1.5, 0.75, 2); 100 random landscapes with ratio in [1, kappa]".into())
}

// ---- dynamics ----

fn random_params(rng: &mut ChaCha8Rng) -> std::result::Result<DynamicsParams, String> {
    lib(DynamicsParams::new(
        rng.random_range(0.01..0.99),
        rng.random_range(0.01..0.99),
        rng.random_range(0.0..0.99),
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..=1.0),
    ))
}

fn contraction(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "contraction");
    for _ in 0..1000 {
        let p = random_params(&mut rng)?;
        ensure(p.lambda() < 1.0 && p.lambda_eff() <= p.lambda(), || format!("{p:?}"))?;
    }
    Ok("lambda < 1 and lambda_eff <= lambda on 1000 draws".into())
}

fn closed_form_convergence(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "closed_form_convergence");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_params(&mut rng)?;
        let limit = lib(asymptotic_error(&p, FilterMode::Filtered))?;
        let (e, _) = lib(iterate_to_convergence(&p, FilterMode::Filtered, p.epsilon0))?;
        ensure((e - limit).abs() < 1e-9, || format!("{p:?}: iterated {e} vs closed form {limit}"))?;
        worst = worst.max((e - limit).abs());
        // Geometric rate: |e_n - limit| <= lambda_eff^n for any start in [0, 1].
        let n = (1e-9f64.ln() / p.lambda_eff().ln()).ceil().max(1.0) as usize;
        if n <= 100_000 {
            let mut e = p.epsilon0;
            for _ in 0..n {
                e = lib(step(e, &p, FilterMode::Filtered))?;
            }
            ensure((e - limit).abs() <= 1e-9, || format!("{p:?}: {n} steps leave {}", (e - limit).abs()))?;
        }
        let (u, _) = lib(iterate_to_convergence(&p, FilterMode::Unfiltered, 1.0))?;
        ensure((u - p.epsilon0).abs() < 1e-9, || format!("{p:?}: unfiltered limit {u}"))?;
    }
    Ok(format!("1000 draws, max |iterated - closed form| = {worst:e}"))
}

fn precision_limits(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "precision_limits");
    for _ in 0..1000 {
        let p = random_params(&mut rng)?;
        let fg = p.f * p.gamma;
        let zero = lib(asymptotic_error(&DynamicsParams { rho_precision: 0.0, ..p }, FilterMode::Filtered))?;
        let one = lib(asymptotic_error(&DynamicsParams { rho_precision: 1.0, ..p }, FilterMode::Filtered))?;
        ensure(zero == p.epsilon0, || format!("{p:?}: rho = 0 gives {zero}"))?;
        let target = (1.0 - fg) * p.epsilon0;
        ensure(one == target, || format!("{p:?}: rho = 1 gives {one}"))?;
    }
    let p = lib(DynamicsParams::new(0.3, 0.8, 0.9, 0.5, 0.9))?;
    let v = lib(asymptotic_error(&p, FilterMode::Filtered))?;
    ensure((v - 0.1875).abs() < 1e-12, || format!("hand case gives {v}"))?;
    Ok("rho = 0 recovers eps0 and rho = 1 gives (1 - f gamma) eps0, bit-exact on 1000 draws; hand case 0.1875".into())
}

fn monotone_in_precision(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "monotone_in_precision");
    for _ in 0..1000 {
        let mut p = random_params(&mut rng)?;
        p.f = rng.random_range(0.01..=1.0);
        p.rho_precision = rng.random_range(0.0..0.999);
        let h = 1e-6;
        let a = lib(asymptotic_error(&p, FilterMode::Filtered))?;
        let b = lib(asymptotic_error(&DynamicsParams { rho_precision: p.rho_precision + h, ..p }, FilterMode::Filtered))?;
        ensure((b - a) / h < 0.0, || format!("{p:?}: derivative {}", (b - a) / h))?;
    }
    Ok("finite-difference d eps_inf / d rho < 0 at 1000 points".into())
}

fn improvement_threshold_check(cfg: &TheoryConfig) -> CheckResult {
    for (f, gamma, want) in [(1.0, 0.5, 0.0), (0.5, 0.8, -0.5), (1.0, 0.8, 0.75)] {
        let got = lib(improvement_threshold(f, gamma))?;
        ensure((got - want).abs() < 1e-12, || format!("threshold at f gamma = {}: {got}", f * gamma))?;
    }
    ensure(improvement_threshold(0.0, 0.5).is_err(), || "f = 0 accepted".into())?;
    let mut rng = rng_for(cfg, "improvement_threshold");
    let mut strictly_sufficient = 0;
    for _ in 0..1000 {
        let mut p = random_params(&mut rng)?;
        p.f = rng.random_range(0.01..=1.0);
        let t = lib(improvement_threshold(p.f, p.gamma))?;
        let improves = lib(asymptotic_error(&p, FilterMode::Filtered))? < p.epsilon0;
        if p.rho_precision > t && p.rho_precision > 0.0 {
            ensure(improves, || format!("{p:?}: rho above threshold {t} but no improvement"))?;
        }
        // Exact condition for f > 0.
        ensure(improves == (p.rho_precision > 0.0), || format!("{p:?}: improves = {improves}"))?;
        if improves && p.rho_precision <= t {
            strictly_sufficient += 1;
        }
    }
    Ok(format!(
        "rho > threshold implies improvement; exact condition rho > 0; {strictly_sufficient}/1000 draws improve below the threshold"
    ))
}

/// Parameter sets for the simulation agreement check.
pub const MC_PARAMETER_SETS: [(f64, f64, f64, f64, f64); 5] = [
    (0.3, 0.5, 0.9, 0.6, 0.8),
    (0.2, 0.5, 0.8, 1.0, 1.0),
    (0.25, 0.6, 0.9, 0.0, 0.5),
    (0.4, 0.9, 0.5, 0.9, 0.3),
    (0.1, 0.3, 0.95, 0.5, 0.5),
];

/// Band for the per-step z-scores of [`monte_carlo_agreement`]: the
/// two-sided t(19) quantile at 1e-5, i.e. 1% family-wise error over the
/// 5 x 200 points.
pub const MC_BAND: f64 = 6.0;

/// One simulated trajectory per entry of [`MC_PARAMETER_SETS`].
pub fn monte_carlo_runs(cfg: &TheoryConfig) -> std::result::Result<Vec<McTrajectory>, String> {
    MC_PARAMETER_SETS
        .iter()
        .enumerate()
        .map(|(k, &(e0, g, a, f, r))| {
            let p = lib(DynamicsParams::new(e0, g, a, f, r))?;
            lib(monte_carlo_oracle(
                &p,
                cfg.mc_population,
                cfg.mc_steps,
                cfg.mc_replicates,
                child_seed(cfg.seed, &format!("theory/monte_carlo_agreement/{k}")),
            ))
        })
        .collect()
}

/// Largest `|analytic - mean| / stderr`, skipping points where the two agree
/// to rounding (step 0 has no spread).
pub fn max_z(traj: &McTrajectory) -> f64 {
    traj.points
        .iter()
        .filter(|pt| (pt.analytic - pt.mc_mean).abs() > 1e-15)
        .map(|pt| (pt.analytic - pt.mc_mean).abs() / pt.mc_stderr)
        .fold(0.0, f64::max)
}

fn monte_carlo_agreement(cfg: &TheoryConfig) -> CheckResult {
    let mut details = Vec::new();
    for (k, traj) in monte_carlo_runs(cfg)?.iter().enumerate() {
        let worst = max_z(traj);
        ensure(traj.within(MC_BAND), || format!("set {k}: analytic leaves the {MC_BAND}-stderr band (max z {worst:.2})"))?;
        details.push(format!("{worst:.2}"));
    }
    Ok(format!(
        "5 parameter sets inside {MC_BAND} standard errors at every step; max z {}",
        details.join(", ")
    ))
}

fn dual_precision_sign(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "dual_precision_sign");
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let u = |rng: &mut ChaCha8Rng| rng.random_range(1e-3..=1.0);
        let s = lib(CriteriaStats::new(u(&mut rng), u(&mut rng), u(&mut rng), u(&mut rng), rng.random_range(1e-3..1.0 - 1e-3)))?;
        let d = lib(dual_precision(&s))?;
        let want = (s.alpha2 - s.beta2).partial_cmp(&0.0);
        let got = (d.rho12 - d.rho1).partial_cmp(&0.0);
        ensure(want == got, || format!("{s:?}: sign mismatch, rho1 {}, rho12 {}", d.rho1, d.rho12))?;
        let direct = d.rho12 / d.rho1;
        ensure((d.gain - direct).abs() <= 1e-12 * direct.max(1.0), || format!("{s:?}: gain {} vs {direct}", d.gain))?;
        worst = worst.max((d.gain - direct).abs());
    }
    let equal = lib(dual_precision(&lib(CriteriaStats::new(0.9, 0.4, 0.1, 0.4, 0.5))?))?;
    ensure(equal.rho12 == equal.rho1, || "alpha2 = beta2 should leave precision unchanged".into())?;
    Ok(format!("10^4 draws: sign rule holds, max |gain - ratio| = {worst:e}"))
}

fn random_response(rng: &mut ChaCha8Rng) -> crate::dynamics::ErrorResponse {
    let k = rng.random_range(2..=8);
    let knots: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let e = i as f64 / (k - 1) as f64;
            (e, (e + rng.random_range(0.0..0.3)).min(1.0))
        })
        .collect();
    let g0 = rng.random_range(0.01..0.3);
    let knots: Vec<(f64, f64)> = knots
        .into_iter()
        .map(|(e, v)| if e == 0.0 { (e, g0) } else { (e, v) })
        .collect();
    Arc::new(move |e: f64| {
        let i = knots.partition_point(|(x, _)| *x <= e).clamp(1, knots.len() - 1);
        let ((x0, y0), (x1, y1)) = (knots[i - 1], knots[i]);
        (y0 + (y1 - y0) * (e - x0) / (x1 - x0)).clamp(e, 1.0)
    })
}

fn memory_bank_monotone(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "memory_bank_monotone");
    for case in 0..100 {
        let g = random_response(&mut rng);
        let m = lib(MemoryBankModel::new(rng.random_range(0.01..=1.0), g, rng.random_range(0.0..0.5)))?;
        let traj = lib(memory_bank_trajectory(&m, 200))?;
        ensure(traj.windows(2).all(|w| w[1] >= w[0]), || format!("case {case}: error decreased"))?;
        // Precision 1 - e_t can only fall.
        ensure(traj.windows(2).all(|w| 1.0 - w[1] <= 1.0 - w[0]), || format!("case {case}: precision rose"))?;
    }
    let g: crate::dynamics::ErrorResponse = Arc::new(|e: f64| (e + 0.1).min(1.0));
    let t = lib(memory_bank_trajectory(&lib(MemoryBankModel::new(0.5, g, 0.0))?, 3))?;
    ensure(t.iter().zip([0.0, 0.05, 0.1, 0.15]).all(|(a, b)| (a - b).abs() < 1e-12), || format!("hand trajectory {t:?}"))?;
    Ok("100 random admissible responses give non-decreasing error; hand trajectory 0, 0.05, 0.1, 0.15".into())
}

fn precision_ordering_composition(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "precision_ordering_composition");
    for _ in 0..1000 {
        let u = |rng: &mut ChaCha8Rng| rng.random_range(0.05..=1.0);
        let s = lib(CriteriaStats::new(u(&mut rng), u(&mut rng), u(&mut rng), u(&mut rng), rng.random_range(0.05..0.95)))?;
        let d = lib(dual_precision(&s))?;
        let mut p = random_params(&mut rng)?;
        p.f = rng.random_range(0.01..=1.0);
        let with = |rho: f64| asymptotic_error(&DynamicsParams { rho_precision: rho, ..p }, FilterMode::Filtered);
        let (dual, single) = (lib(with(d.rho12))?, lib(with(d.rho1))?);
        if s.alpha2 > s.beta2 {
            ensure(dual < single, || format!("{s:?}: dual limit {dual} >= single {single}"))?;
        }
    }
    Ok("at equal coverage the higher dual-criteria precision always lowers the limit".into())
}

// ---- pas ----

fn feature_map(pixels: &[Vec<f64>], h: usize, w: usize) -> std::result::Result<FeatureMap, String> {
    let d = pixels[0].len();
    let rows = Array2::from_shape_fn((h * w, d), |(i, j)| pixels[i][j]);
    lib(FeatureMap::from_pixel_rows(rows.view(), h, w))
}

fn prototype_hand_cases(_: &TheoryConfig) -> CheckResult {
    let one = lib(compute_prototypes(&[(feature_map(&[vec![3.0, 4.0]], 1, 1)?, ndarray::array![[2usize]])]))?;
    let v = &one.get(2).ok_or("class missing")?.vector;
    ensure((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15, || format!("(3, 4) -> {v:?}"))?;
    let two = lib(compute_prototypes(&[
        (feature_map(&[vec![5.0, 0.0]], 1, 1)?, ndarray::array![[1usize]]),
        (feature_map(&[vec![0.0, 0.25]], 1, 1)?, ndarray::array![[1usize]]),
    ]))?;
    let p = two.get(1).ok_or("class missing")?;
    ensure(p.vector == vec![0.5, 0.5] && p.count == 2, || format!("averaged -> {p:?}"))?;
    Ok("(3, 4) -> (0.6, 0.8); (1, 0) and (0, 1) -> (0.5, 0.5)".into())
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, d: usize) -> std::result::Result<Vec<(FeatureMap, Array2<usize>)>, String> {
    (0..n)
        .map(|_| {
            let (h, w) = (3, 4);
            let feats = Array3::from_shape_fn((d, h, w), |_| rng.random_range(-1.0..1.0) + 0.5);
            let labels = Array2::from_shape_fn((h, w), |_| rng.random_range(0..3usize));
            Ok((lib(FeatureMap::new(feats))?, labels))
        })
        .collect()
}

fn banks_close(a: &PrototypeBank, b: &PrototypeBank) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((ca, pa), (cb, pb))| {
            ca == cb && pa.count == pb.count && pa.vector.iter().zip(&pb.vector).all(|(x, y)| (x - y).abs() < 1e-12)
        })
}

fn prototype_invariances(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "prototype_invariances");
    for case in 0..100 {
        let samples = random_samples(&mut rng, 5, 4)?;
        let base = lib(compute_prototypes(&samples))?;
        let mut reversed = samples.clone();
        reversed.reverse();
        ensure(banks_close(&base, &lib(compute_prototypes(&reversed))?), || format!("case {case}: order changed the bank"))?;
        // Rescale every pixel of one sample by a positive factor.
        let k = rng.random_range(0.01..100.0);
        let mut scaled = samples.clone();
        scaled[0].0 = lib(FeatureMap::new(scaled[0].0.features() * k))?;
        ensure(banks_close(&base, &lib(compute_prototypes(&scaled))?), || format!("case {case}: rescaling changed the bank"))?;
    }
    Ok("100 cases invariant to sample order and per-sample rescaling".into())
}

fn random_pixels(rng: &mut ChaCha8Rng, n: usize, c: usize, d: usize) -> (Array2<f64>, Array2<f64>, PrototypeBank) {
    let logits = Array2::from_shape_fn((n, c), |_| rng.random_range(-4.0..4.0));
    let protos: Vec<Vec<f64>> = (0..c).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let feats = Array2::from_shape_fn((n, d), |(i, j)| {
        let class = i % c;
        protos[class][j] + 0.5 * rng.sample::<f64, _>(StandardNormal)
    });
    let mut samples = Vec::new();
    for (k, p) in protos.iter().enumerate() {
        let fm = FeatureMap::new(Array3::from_shape_fn((d, 1, 1), |(j, _, _)| p[j])).expect("finite");
        samples.push((fm, Array2::from_elem((1, 1), k)));
    }
    (logits, feats, compute_prototypes(&samples).expect("nonzero prototypes"))
}

fn validation_invariances(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "validation_invariances");
    let cfgf = FilterConfig::default();
    let (logits, feats, bank) = random_pixels(&mut rng, 1000, 4, 6);
    let base = lib(decide_rows(logits.view(), feats.view(), &bank, &cfgf))?;
    let scaled_feats = Array2::from_shape_fn(feats.dim(), |(i, j)| feats[[i, j]] * (1.0 + (i % 7) as f64 * 3.0));
    let shifted = Array2::from_shape_fn(logits.dim(), |(i, j)| logits[[i, j]] + (i as f64 * 0.37).sin() * 50.0);
    let a = lib(decide_rows(logits.view(), scaled_feats.view(), &bank, &cfgf))?;
    let b = lib(decide_rows(shifted.view(), feats.view(), &bank, &cfgf))?;
    let accepted = base.iter().filter(|d| d.accepted).count();
    for (i, ((x, y), z)) in base.iter().zip(&a).zip(&b).enumerate() {
        ensure(x.accepted == y.accepted && x.class == y.class, || format!("pixel {i}: feature rescaling changed the decision"))?;
        ensure(x.accepted == z.accepted && x.class == z.class, || format!("pixel {i}: logit shift changed the decision"))?;
    }
    // The grid entry point agrees with the row form.
    let grid = Array3::from_shape_fn((4, 25, 40), |(c, y, x)| logits[[y * 40 + x, c]]);
    let mask = lib(validate_pixels(&grid, &lib(FeatureMap::from_pixel_rows(feats.view(), 25, 40))?, &bank, &cfgf))?;
    ensure(mask.accepted_count() == accepted, || "grid and row validation disagree".into())?;
    Ok(format!("1000 pixels ({accepted} accepted) invariant to feature rescaling and logit shifts"))
}

fn filter_monotonicity(cfg: &TheoryConfig) -> CheckResult {
    let mut rng = rng_for(cfg, "filter_monotonicity");
    let (logits, feats, bank) = random_pixels(&mut rng, 2000, 3, 5);
    let count = |c: f64, s: f64| -> std::result::Result<usize, String> {
        let d = lib(decide_rows(logits.view(), feats.view(), &bank, &lib(FilterConfig::new(c, s))?))?;
        Ok(d.iter().filter(|d| d.accepted).count())
    };
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    for &c in &grid {
        for w in grid.windows(2) {
            ensure(count(c, w[1])? <= count(c, w[0])?, || format!("raising tau_sim at tau_conf {c} increased acceptance"))?;
            ensure(count(w[1], c)? <= count(w[0], c)?, || format!("raising tau_conf at tau_sim {c} increased acceptance"))?;
        }
    }
    Ok("accepted count non-increasing in both thresholds over an 11 x 11 grid".into())
}

/// Synthetic Gaussian-feature pixels: features sit near their true class
/// prototype, while logits come from an independently corrupted view, so
/// confident mistakes tend to be far from the predicted class's prototype.
pub fn gaussian_testbed_precision(seed: u64, tau: FilterConfig) -> crate::Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d, n) = (4usize, 8usize, 2000usize);
    let protos: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let feats = Array2::from_shape_fn((n, d), |(i, j)| protos[truth[i]][j] + 0.25 * rng.sample::<f64, _>(StandardNormal));
    let logits = Array2::from_shape_fn((n, c), |(i, k)| {
        let view: f64 = (0..d).map(|j| feats[[i, j]] * protos[k][j]).sum();
        4.0 * view + 1.5 * rng.sample::<f64, _>(StandardNormal)
    });
    let mut samples = Vec::new();
    for (k, p) in protos.iter().enumerate() {
        let fm = FeatureMap::new(Array3::from_shape_fn((d, 1, 1), |(j, _, _)| p[j]))?;
        samples.push((fm, Array2::from_elem((1, 1), k)));
    }
    let bank = compute_prototypes(&samples)?;
    let decisions = decide_rows(logits.view(), feats.view(), &bank, &tau)?;
    let accepted = decisions.iter().filter(|x| x.accepted).count();
    let correct = decisions.iter().zip(&truth).filter(|(x, t)| x.accepted && x.class == **t).count();
    Ok((accepted, correct))
}

fn dual_filter_precision(cfg: &TheoryConfig) -> CheckResult {
    let root = child_seed(cfg.seed, "theory/dual_filter_precision");
    let (mut sum_conf, mut sum_dual) = (0.0, 0.0);
    for s in 0..50u64 {
        let seed = child_seed(root, &s.to_string());
        let (na, nc) = lib(gaussian_testbed_precision(seed, lib(FilterConfig::new(0.7, 0.0))?))?;
        let (da, dc) = lib(gaussian_testbed_precision(seed, FilterConfig::default()))?;
        let rho = |a: usize, c: usize| if a == 0 { 1.0 } else { c as f64 / a as f64 };
        let (r_conf, r_dual) = (rho(na, nc), rho(da, dc));
        ensure(r_dual >= r_conf, || format!("seed {s}: dual precision {r_dual} < confidence-only {r_conf}"))?;
        sum_conf += r_conf;
        sum_dual += r_dual;
    }
    Ok(format!("50 seeds: mean precision {:.4} confidence-only vs {:.4} dual", sum_conf / 50.0, sum_dual / 50.0))
}

fn consistency_cases(cfg: &TheoryConfig) -> CheckResult {
    let all = ValidityMask::new(Array2::from_elem((1, 1), true));
    let none = ValidityMask::new(Array2::from_elem((1, 1), false));
    let s = Array3::from_shape_vec((2, 1, 1), vec![1.0, 0.0]).expect("shape");
    let t = Array3::from_shape_vec((2, 1, 1), vec![0.0, 1.0]).expect("shape");
    ensure(lib(consistency_loss(&s, &t, &all, &all))? == 2.0, || "one-hot disagreement should be 2".into())?;
    ensure(lib(consistency_loss(&s, &t, &all, &none))? == 0.0, || "empty joint mask should give 0".into())?;
    ensure(lib(consistency_loss(&s, &s, &all, &all))? == 0.0, || "identical tensors should give 0".into())?;
    let mut rng = rng_for(cfg, "consistency_cases");
    for case in 0..100 {
        let probs = |rng: &mut ChaCha8Rng| {
            let mut p = Array3::from_shape_fn((3, 4, 5), |_| rng.random_range(0.01..1.0));
            for y in 0..4 {
                for x in 0..5 {
                    let z: f64 = p.slice(ndarray::s![.., y, x]).sum();
                    p.slice_mut(ndarray::s![.., y, x]).mapv_inplace(|v| v / z);
                }
            }
            p
        };
        let (a, b) = (probs(&mut rng), probs(&mut rng));
        let ma = ValidityMask::new(Array2::from_shape_fn((4, 5), |_| rng.random_bool(0.5)));
        let mb = ValidityMask::new(Array2::from_shape_fn((4, 5), |_| rng.random_bool(0.5)));
        let (x, y) = (lib(consistency_loss(&a, &b, &ma, &mb))?, lib(consistency_loss(&b, &a, &mb, &ma))?);
        ensure((x - y).abs() < 1e-15 && x >= 0.0, || format!("case {case}: asymmetric {x} vs {y}"))?;
    }
    Ok("(1,0) vs (0,1) -> 2; empty mask and identical tensors -> 0; symmetric on 100 draws".into())
}

fn ema_convergence(cfg: &TheoryConfig) -> CheckResult {
    let t = lib(ema_update(&[1.0], &[0.0], 0.9))?;
    ensure((t[0] - 0.9).abs() < 1e-15, || format!("hand case {t:?}"))?;
    ensure(lib(ema_update(&[3.0, 4.0], &[1.0, 2.0], 0.0))? == vec![1.0, 2.0], || "alpha = 0 must copy the student".into())?;
    let mut rng = rng_for(cfg, "ema_convergence");
    for _ in 0..100 {
        let alpha = rng.random_range(0.0..0.99);
        let student: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let start: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut teacher = start.clone();
        for k in 1..=50 {
            teacher = lib(ema_update(&teacher, &student, alpha))?;
            let bound = alpha.powi(k);
            for ((t, s), t0) in teacher.iter().zip(&student).zip(&start) {
                let want = bound * (t0 - s);
                ensure(((t - s) - want).abs() <= 1e-9 * (1.0 + want.abs()), || format!("alpha {alpha}: step {k} off the geometric path"))?;
            }
        }
    }
    Ok("teacher approaches a constant student geometrically at rate alpha".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TheoryConfig {
        TheoryConfig {
            kl_samples: 200_000,
            landscape_samples: 20_000,
            perturb_seeds: 20_000,
            mc_population: 10_000,
            ..TheoryConfig::default()
        }
    }

    #[test]
    fn names_unique() {
        let mut names: Vec<_> = invariants().iter().map(|i| i.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), invariants().len());
        assert!(find("jensen_strictness").is_some());
        assert!(find("nope").is_none());
    }

    #[test]
    fn reduced_suite_passes_and_is_deterministic() {
        let a = run_suite(&small(), None);
        let failed: Vec<String> = a.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        assert!(failed.is_empty(), "{failed:#?}");
        let b = run_suite(&small(), Some(&["dynamics".to_string()]));
        assert!(b.checks.iter().all(|c| c.module == "dynamics"));
        let again = run_suite(&small(), Some(&["dynamics".to_string()]));
        assert_eq!(b, again);
    }
}
