use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};

use super::{grid, load_config, write_csv, write_json, write_snapshot, CliError, CliResult, Common};
use crate::dynamics::{
    asymptotic_error, coverage_precision_sweep, crossover_step, memory_bank_trajectory,
    monte_carlo_oracle, DynamicsParams, FilterMode, MemoryBankModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl RhoSweep {
    fn values(&self) -> CliResult<Vec<f64>> {
        grid(self.start, self.stop, self.step)
    }
}

/// Memory bank with response `g(e) = base + (1 - base) e^power`, `power in (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryBankSpec {
    pub eta: f64,
    pub base: f64,
    pub power: f64,
    pub e0: f64,
    pub steps: usize,
    /// Precision of the PAS gate the bank is compared against.
    pub rho_pas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsRunConfig {
    pub seed: u64,
    pub params: DynamicsParams,
    pub steps: usize,
    pub mc_population: u64,
    pub mc_replicates: usize,
    pub rho_sweep: RhoSweep,
    pub heatmap_f: RhoSweep,
    pub heatmap_rho: RhoSweep,
    pub memory_bank: MemoryBankSpec,
}

impl Default for DynamicsRunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            params: DynamicsParams {
                epsilon0: 0.3,
                gamma: 0.8,
                alpha: 0.9,
                f: 0.5,
                rho_precision: 0.9,
            },
            steps: 200,
            mc_population: 100_000,
            mc_replicates: 20,
            rho_sweep: RhoSweep { start: 0.0, stop: 1.0, step: 0.1 },
            heatmap_f: RhoSweep { start: 0.0, stop: 1.0, step: 0.05 },
            heatmap_rho: RhoSweep { start: 0.0, stop: 1.0, step: 0.05 },
            memory_bank: MemoryBankSpec {
                eta: 0.1,
                base: 0.02,
                power: 0.8,
                e0: 0.05,
                steps: 200,
                rho_pas: 0.9,
            },
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub epsilon0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Spacing of the precision sweep over [0, 1].
    #[arg(long)]
    pub rho_step: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mc_population: Option<u64>,
}

#[derive(Serialize)]
struct SweepRow {
    rho_precision: f64,
    asymptotic_error: f64,
    unfiltered_error: f64,
    improves: bool,
}

#[derive(Serialize)]
struct BankRow {
    step: usize,
    error: f64,
    precision: f64,
    rho_pas: f64,
}

#[derive(Serialize)]
struct Summary {
    params: DynamicsParams,
    asymptotic_filtered: f64,
    asymptotic_unfiltered: f64,
    mc_within_3_stderr: bool,
    mc_final_mean: f64,
    memory_bank_crossover: Option<usize>,
}

pub fn resolve(common: &Common, o: &Overrides) -> CliResult<DynamicsRunConfig> {
    let mut cfg: DynamicsRunConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let p = &mut cfg.params;
    if let Some(v) = o.epsilon0 {
        p.epsilon0 = v;
    }
    if let Some(v) = o.gamma {
        p.gamma = v;
    }
    if let Some(v) = o.alpha {
        p.alpha = v;
    }
    if let Some(v) = o.f {
        p.f = v;
    }
    if let Some(v) = o.rho {
        p.rho_precision = v;
    }
    if let Some(v) = o.rho_step {
        cfg.rho_sweep.step = v;
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.mc_population {
        cfg.mc_population = v;
    }
    cfg.params.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}

pub fn run(common: &Common, o: &Overrides) -> CliResult<()> {
    let cfg = resolve(common, o)?;
    let out = &common.out;
    write_snapshot(out, "dynamics", &cfg)?;
    let p = cfg.params;

    let mc = monte_carlo_oracle(&p, cfg.mc_population, cfg.steps, cfg.mc_replicates, cfg.seed)?;
    write_csv(out, "trajectory.csv", &mc.points)?;

    let mut sweep = Vec::new();
    for rho in cfg.rho_sweep.values()? {
        let q = DynamicsParams { rho_precision: rho, ..p };
        let e = asymptotic_error(&q, FilterMode::Filtered)?;
        sweep.push(SweepRow {
            rho_precision: rho,
            asymptotic_error: e,
            unfiltered_error: asymptotic_error(&q, FilterMode::Unfiltered)?,
            improves: e < q.epsilon0,
        });
    }
    write_csv(out, "rho_sweep.csv", &sweep)?;

    let heat = coverage_precision_sweep(&p, &cfg.heatmap_f.values()?, &cfg.heatmap_rho.values()?)?;
    write_csv(out, "heatmap.csv", &heat)?;
    write_json(out, "heatmap.json", &heat)?;

    let m = cfg.memory_bank;
    if !(m.power > 0.0 && m.power <= 1.0 && (0.0..=1.0).contains(&m.base)) {
        return Err(CliError::Input("memory_bank needs 0 < power <= 1 and base in [0, 1]".into()));
    }
    let (base, power) = (m.base, m.power);
    let g = Arc::new(move |e: f64| base + (1.0 - base) * e.powf(power));
    let model = MemoryBankModel::new(m.eta, g, m.e0).map_err(|e| CliError::Input(e.to_string()))?;
    let traj = memory_bank_trajectory(&model, m.steps)?;
    let crossover = crossover_step(&traj, m.rho_pas);
    let rows: Vec<BankRow> = traj
        .iter()
        .enumerate()
        .map(|(step, &e)| BankRow { step, error: e, precision: 1.0 - e, rho_pas: m.rho_pas })
        .collect();
    write_csv(out, "memory_bank.csv", &rows)?;

    let summary = Summary {
        params: p,
        asymptotic_filtered: asymptotic_error(&p, FilterMode::Filtered)?,
        asymptotic_unfiltered: asymptotic_error(&p, FilterMode::Unfiltered)?,
        mc_within_3_stderr: mc.within(3.0),
        mc_final_mean: mc.final_point().mc_mean,
        memory_bank_crossover: crossover,
    };
    write_json(out, "dynamics_summary.json", &summary)?;
    println!(
        "filtered limit {:.6}, unfiltered limit {:.6}, mc within 3 stderr: {}, bank crossover: {}",
        summary.asymptotic_filtered,
        summary.asymptotic_unfiltered,
        summary.mc_within_3_stderr,
        crossover.map_or("none".to_string(), |t| t.to_string())
    );
    Ok(())
}
