use clap::Args;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{load_config, write_csv, write_json, write_snapshot, CliError, CliResult, Common};
use crate::gas::{adversarial_comparison, noise_scales, GradientBuffer, QuadraticLandscape, EPSILON_SWEEP};
use crate::numerics::{kl_comparison, pac_bayes_gap, ComparisonConfig, FisherDiagonal, GasScale, MemoryPrior};

/// One KL comparison. With `previous`, the static candidate uses
/// `lambda = mean(previous)` and the memory candidate `F_hist = previous`
/// with `lambda = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlCase {
    pub name: String,
    pub fisher: Vec<f64>,
    #[serde(default)]
    pub previous: Option<Vec<f64>>,
    #[serde(default)]
    pub approx_error: Option<Vec<f64>>,
    #[serde(default)]
    pub gas_scale: GasScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeCase {
    pub name: String,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasLandscapeConfig {
    pub kl_cases: Vec<KlCase>,
    /// Sample count and confidence for the PAC-Bayes gap column.
    pub pac_n: u64,
    pub pac_delta: f64,
    pub landscapes: Vec<LandscapeCase>,
    pub radii: Vec<f64>,
    /// Squared-gradient sums for the epsilon sweep, row-major.
    pub sweep_buffer: Vec<Vec<f64>>,
    /// Empty disables the sweep.
    pub epsilon_sweep: Vec<f64>,
}

impl Default for GasLandscapeConfig {
    fn default() -> Self {
        let case = |name: &str, fisher: Vec<f64>, previous: Option<Vec<f64>>| KlCase {
            name: name.into(),
            fisher,
            previous,
            approx_error: None,
            gas_scale: GasScale::Fixed(1.0),
        };
        Self {
            kl_cases: vec![
                case("homogeneous", vec![1.0; 4], None),
                case("mild", vec![0.5, 1.0, 1.5, 2.0], None),
                case("heterogeneous", vec![0.01, 0.1, 1.0, 10.0, 100.0], None),
                case("shift", vec![2.0, 0.5], Some(vec![1.0, 1.0])),
                KlCase {
                    name: "shift-approx".into(),
                    fisher: vec![4.0, 1.0, 0.25],
                    previous: Some(vec![1.0, 2.0, 1.0]),
                    approx_error: Some(vec![0.03, -0.02, 0.04]),
                    gas_scale: GasScale::Optimal,
                },
            ],
            pac_n: 10_000,
            pac_delta: 0.05,
            landscapes: vec![
                LandscapeCase { name: "isotropic".into(), eigenvalues: vec![1.0; 4] },
                LandscapeCase { name: "kappa10".into(), eigenvalues: vec![0.1, 0.4, 0.7, 1.0] },
                LandscapeCase { name: "kappa1000".into(), eigenvalues: vec![0.001, 0.01, 0.1, 1.0] },
            ],
            radii: vec![0.01, 0.05, 0.1],
            sweep_buffer: vec![vec![0.0, 1e-9, 1e-4, 1.0], vec![1e-6, 1e-2, 0.5, 10.0]],
            epsilon_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Recompute noise scales of a fixed buffer for each epsilon.
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 0..,
        default_missing_value = "1e-6,1e-7,1e-8,1e-9"
    )]
    pub epsilon_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct KlRow {
    case: String,
    dim: usize,
    fisher_variance: f64,
    kl_gas: f64,
    kl_iso: f64,
    kl_static: Option<f64>,
    kl_memory: Option<f64>,
    gap_gas: f64,
    gap_iso: f64,
}

#[derive(Serialize)]
struct AdvRow {
    landscape: String,
    condition_number: f64,
    radius: f64,
    delta_adv: f64,
    delta_gas: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct EpsRow {
    epsilon: f64,
    row: usize,
    col: usize,
    sum: f64,
    scale: f64,
}

fn kl_row(case: &KlCase, n: u64, delta: f64) -> CliResult<KlRow> {
    let fisher = FisherDiagonal::new(case.fisher.clone())?;
    let mut cfg = ComparisonConfig {
        gas_scale: case.gas_scale,
        approx_error: case.approx_error.clone(),
        ..Default::default()
    };
    if let Some(prev) = &case.previous {
        let hist = FisherDiagonal::new(prev.clone())?;
        cfg.static_lambda = Some(hist.mean());
        cfg.memory = Some(MemoryPrior { lambda: 1.0, fisher_hist: hist });
    }
    let r = kl_comparison(&fisher, &cfg)?;
    Ok(KlRow {
        case: case.name.clone(),
        dim: fisher.dim(),
        fisher_variance: r.fisher_variance,
        kl_gas: r.kl_gas,
        kl_iso: r.kl_iso,
        kl_static: r.kl_static,
        kl_memory: r.kl_memory,
        gap_gas: pac_bayes_gap(r.kl_gas, n, delta)?,
        gap_iso: pac_bayes_gap(r.kl_iso, n, delta)?,
    })
}

pub fn resolve(common: &Common, o: &Overrides) -> CliResult<GasLandscapeConfig> {
    let mut cfg: GasLandscapeConfig = load_config(common.config.as_deref())?;
    if let Some(list) = &o.epsilon_sweep {
        cfg.epsilon_sweep = if list.is_empty() { EPSILON_SWEEP.to_vec() } else { list.clone() };
    }
    Ok(cfg)
}

pub fn run(common: &Common, o: &Overrides) -> CliResult<()> {
    let cfg = resolve(common, o)?;
    let out = &common.out;
    write_snapshot(out, "gas-landscape", &cfg)?;

    let kl: Vec<KlRow> = cfg
        .kl_cases
        .iter()
        .map(|c| kl_row(c, cfg.pac_n, cfg.pac_delta))
        .collect::<CliResult<_>>()?;
    write_csv(out, "kl_comparison.csv", &kl)?;
    write_json(out, "kl_comparison.json", &kl)?;

    let mut adv = Vec::new();
    for l in &cfg.landscapes {
        let land = QuadraticLandscape::centered(l.eigenvalues.clone())?;
        for &radius in &cfg.radii {
            let a = adversarial_comparison(&land, radius)?;
            adv.push(AdvRow {
                landscape: l.name.clone(),
                condition_number: land.condition_number(),
                radius,
                delta_adv: a.delta_adv,
                delta_gas: a.delta_gas,
                ratio: a.ratio,
            });
        }
    }
    write_csv(out, "adversarial.csv", &adv)?;

    if !cfg.epsilon_sweep.is_empty() {
        let rows = cfg.sweep_buffer.len();
        let cols = cfg.sweep_buffer.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || cfg.sweep_buffer.iter().any(|r| r.len() != cols) {
            return Err(CliError::Input("sweep_buffer must be a non-empty rectangular matrix".into()));
        }
        let flat: Vec<f64> = cfg.sweep_buffer.iter().flatten().copied().collect();
        let sums = Array2::from_shape_vec((rows, cols), flat).expect("rectangular by construction");
        let mut eps_rows = Vec::new();
        for &eps in &cfg.epsilon_sweep {
            let buf = GradientBuffer::from_sums(sums.clone(), eps)?;
            let s = noise_scales(&buf)?;
            for ((row, col), &scale) in s.scales().indexed_iter() {
                eps_rows.push(EpsRow { epsilon: eps, row, col, sum: sums[[row, col]], scale });
            }
        }
        write_csv(out, "epsilon_sweep.csv", &eps_rows)?;
    }

    for r in &kl {
        println!("{:<16} kl_gas {:.6} kl_iso {:.6}", r.case, r.kl_gas, r.kl_iso);
    }
    Ok(())
}
