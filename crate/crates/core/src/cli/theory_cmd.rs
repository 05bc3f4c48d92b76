use clap::Args;
use serde::{Deserialize, Serialize};

use super::{load_config, write_json, write_snapshot, CliError, CliResult, Common};
use crate::theory::{run_suite, TheoryConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryRunConfig {
    pub theory: TheoryConfig,
    /// Restrict to these modules (numerics, gas, dynamics, pas); all when empty.
    pub modules: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Only run invariants of this module; repeatable.
    #[arg(long = "module")]
    pub modules: Vec<String>,
    #[arg(long)]
    pub mc_population: Option<u64>,
}

const MODULES: [&str; 4] = ["numerics", "gas", "dynamics", "pas"];

pub fn run(common: &Common, o: &Overrides) -> CliResult<()> {
    let mut cfg: TheoryRunConfig = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.theory.seed = s;
    }
    if !o.modules.is_empty() {
        cfg.modules = o.modules.clone();
    }
    if let Some(p) = o.mc_population {
        cfg.theory.mc_population = p;
    }
    if let Some(m) = cfg.modules.iter().find(|m| !MODULES.contains(&m.as_str())) {
        return Err(CliError::Input(format!("unknown module `{m}`")));
    }
    write_snapshot(&common.out, "validate-theory", &cfg)?;
    let modules = (!cfg.modules.is_empty()).then_some(cfg.modules.as_slice());
    let summary = run_suite(&cfg.theory, modules);
    write_json(&common.out, "theory_summary.json", &summary)?;
    for c in &summary.checks {
        println!("{:<5} {:<9} {:<32} {}", format!("{:?}", c.status).to_lowercase(), c.module, c.name, c.detail);
    }
    let failed: Vec<String> = summary.failures().map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed))
    }
}
