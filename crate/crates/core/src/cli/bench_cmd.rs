use clap::Args;
use serde::{Deserialize, Serialize};

use super::{load_config, write_csv, write_json, write_snapshot, CliError, CliResult, Common};
use crate::bench::runner::ComparisonReport;
use crate::bench::store::{write_dataset, write_report};
use crate::bench::{generate_protocol_data_styled, run_protocol, BenchSettings, ConfigKind, ContinualProtocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchRunConfig {
    pub shots: usize,
    pub unlabeled: usize,
    pub seeds: Vec<u64>,
    pub configs: Vec<ConfigKind>,
    pub settings: BenchSettings,
    /// Also write the first seed's dataset under `<out>/dataset`.
    pub write_dataset: bool,
}

impl Default for BenchRunConfig {
    fn default() -> Self {
        let mut configs = ConfigKind::MATRIX.to_vec();
        configs.push(ConfigKind::JasclNoUnlabeled);
        Self {
            shots: 5,
            unlabeled: 50,
            seeds: (0..5).collect(),
            configs,
            settings: BenchSettings::default(),
            write_dataset: false,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Comma-separated configuration names.
    #[arg(long, value_delimiter = ',')]
    pub configs: Option<Vec<String>>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub unlabeled: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub write_dataset: bool,
}

#[derive(Serialize)]
struct LogRow<'a> {
    config: &'a str,
    seed: u64,
    session: usize,
    epoch: usize,
    ce: f64,
    consistency: f64,
    replay: f64,
    total: f64,
    accepted_pct: Option<f64>,
    measured_f: Option<f64>,
    measured_rho: Option<f64>,
    gas_scale_mean: Option<f64>,
}

#[derive(Serialize)]
struct AggRow<'a> {
    config: &'a str,
    session: usize,
    mean_dice: f64,
    miou: f64,
    seen_dice: Option<f64>,
    new_dice: Option<f64>,
    harmonic_dice: Option<f64>,
    total_drop: f64,
}

/// Directional comparison across seeds; `None` when a configuration is missing.
#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub name: String,
    pub wins: usize,
    pub of: usize,
    pub required: usize,
    pub holds: bool,
}

fn wins(a: &[Option<f64>], b: &[Option<f64>], strictly: impl Fn(f64, f64) -> bool) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| matches!((x, y), (Some(x), Some(y)) if strictly(*x, *y)))
        .count()
}

/// The four session-1 directions of the ablation matrix.
pub fn findings(report: &ComparisonReport) -> Vec<Finding> {
    let has = |c: ConfigKind| report.cells.iter().any(|x| x.config == c);
    let n = report.seeds.len();
    let h1 = |c: ConfigKind| report.harmonic_at(c, 1);
    let mut out = Vec::new();
    let mut push = |name: &str, wins: usize, required: usize| {
        out.push(Finding { name: name.into(), wins, of: n, required, holds: wins >= required });
    };
    if has(ConfigKind::Vanilla) && report.protocol.len() > 1 {
        let drops = report
            .seeds
            .iter()
            .filter(|&&s| {
                let m = &report.cell(ConfigKind::Vanilla, s).expect("present").metrics.sessions;
                let before = m[0].mean_dice;
                m[1].seen_dice.is_some_and(|after| before > 0.0 && (before - after) / before >= 0.30)
            })
            .count();
        push("vanilla_forgets", drops, n);
        for (c, name, need) in [
            (ConfigKind::Jascl, "jascl_beats_vanilla", 4usize),
            (ConfigKind::GasOnly, "gas_only_beats_vanilla", 3),
            (ConfigKind::PasOnly, "pas_only_beats_vanilla", 3),
        ] {
            if has(c) {
                push(name, wins(&h1(c), &h1(ConfigKind::Vanilla), |a, b| a > b), need.min(n));
            }
        }
    }
    if has(ConfigKind::Jascl) && has(ConfigKind::JasclNoUnlabeled) && report.protocol.len() > 1 {
        let w = wins(&h1(ConfigKind::JasclNoUnlabeled), &h1(ConfigKind::Jascl), |a, b| a < b);
        push("unlabeled_helps", w, 4.min(n));
    }
    out
}

pub fn resolve(common: &Common, o: &Overrides) -> CliResult<BenchRunConfig> {
    let mut cfg: BenchRunConfig = load_config(common.config.as_deref())?;
    let first = common.seed.or(cfg.seeds.first().copied()).unwrap_or(0);
    let count = o.seeds.unwrap_or(cfg.seeds.len() as u64);
    if common.seed.is_some() || o.seeds.is_some() {
        cfg.seeds = (first..first + count).collect();
    }
    if let Some(names) = &o.configs {
        cfg.configs = names.iter().map(|n| n.parse()).collect::<crate::Result<_>>()?;
    }
    if let Some(k) = o.shots {
        cfg.shots = k;
    }
    if let Some(m) = o.unlabeled {
        cfg.unlabeled = m;
    }
    if let Some(e) = o.epochs {
        cfg.settings.incremental.epochs = e;
    }
    cfg.write_dataset |= o.write_dataset;
    if cfg.seeds.is_empty() || cfg.configs.is_empty() {
        return Err(CliError::Input("bench needs at least one seed and one configuration".into()));
    }
    Ok(cfg)
}

pub fn run(common: &Common, o: &Overrides) -> CliResult<()> {
    let cfg = resolve(common, o)?;
    let out = &common.out;
    write_snapshot(out, "bench", &cfg)?;
    let protocol = ContinualProtocol::joint_shift_3(cfg.shots, cfg.unlabeled)?;

    if cfg.write_dataset {
        let s = &cfg.settings;
        let data = generate_protocol_data_styled(&protocol, s.image_size, cfg.seeds[0], &s.style)?;
        let dir = out.join("dataset");
        std::fs::create_dir_all(&dir)?;
        write_dataset(&dir, &protocol, &data, cfg.seeds[0], s.image_size)?;
    }

    let report = run_protocol(&protocol, &cfg.configs, &cfg.seeds, &cfg.settings)?;
    write_report(out, &report)?;

    let agg: Vec<AggRow> = report
        .aggregates
        .iter()
        .map(|a| AggRow {
            config: a.config.name(),
            session: a.session,
            mean_dice: a.mean_dice,
            miou: a.miou,
            seen_dice: a.seen_dice,
            new_dice: a.new_dice,
            harmonic_dice: a.harmonic_dice,
            total_drop: a.total_drop,
        })
        .collect();
    write_csv(out, "aggregates.csv", &agg)?;

    let mut logs = Vec::new();
    for cell in &report.cells {
        for log in &cell.logs {
            for e in &log.epochs {
                logs.push(LogRow {
                    config: cell.config.name(),
                    seed: cell.seed,
                    session: log.session,
                    epoch: e.epoch,
                    ce: e.ce,
                    consistency: e.consistency,
                    replay: e.replay,
                    total: e.total,
                    accepted_pct: e.accepted_pct,
                    measured_f: e.measured_f,
                    measured_rho: e.measured_rho,
                    gas_scale_mean: e.gas_scale_mean,
                });
            }
        }
    }
    write_csv(out, "training_log.csv", &logs)?;

    let found = findings(&report);
    write_json(out, "findings.json", &found)?;
    for a in agg.iter().filter(|a| a.session == 1) {
        println!(
            "{:<20} session 1 harmonic {}",
            a.config,
            a.harmonic_dice.map_or("-".into(), |h| format!("{h:.4}"))
        );
    }
    for f in &found {
        println!("{:<24} {}/{} (need {}) {}", f.name, f.wins, f.of, f.required, if f.holds { "holds" } else { "does not hold" });
    }
    Ok(())
}
