//! Configuration matrix over seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::Featurizer;
use super::metrics::{evaluate, MetricsReport, SessionMetrics};
use super::model::{train_session, PixelClassifierModel, TrainConfig, TrainingLog};
use super::protocol::ContinualProtocol;
use super::render::{generate_protocol_data_styled, RenderStyle, SessionData};
use crate::error::{Error, Result};
use crate::pas::PrototypeBank;
use crate::seed::child_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfigKind {
    Vanilla,
    GasOnly,
    PasOnly,
    Jascl,
    /// Full method with the unlabeled splits withheld.
    JasclNoUnlabeled,
}

impl ConfigKind {
    pub const MATRIX: [ConfigKind; 4] = [
        ConfigKind::Vanilla,
        ConfigKind::GasOnly,
        ConfigKind::PasOnly,
        ConfigKind::Jascl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConfigKind::Vanilla => "vanilla",
            ConfigKind::GasOnly => "gas-only",
            ConfigKind::PasOnly => "pas-only",
            ConfigKind::Jascl => "jascl",
            ConfigKind::JasclNoUnlabeled => "jascl-no-unlabeled",
        }
    }

    /// Sets the mechanism flags on top of the shared incremental settings.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let (gas, pas, replay, unlabeled) = match self {
            ConfigKind::Vanilla => (false, false, false, false),
            ConfigKind::GasOnly => (true, false, false, false),
            ConfigKind::PasOnly => (false, true, true, true),
            ConfigKind::Jascl => (true, true, true, true),
            ConfigKind::JasclNoUnlabeled => (true, true, true, false),
        };
        TrainConfig {
            gas,
            pas,
            replay,
            use_unlabeled: unlabeled,
            ..base.clone()
        }
    }
}

impl std::str::FromStr for ConfigKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ConfigKind::Vanilla,
            ConfigKind::GasOnly,
            ConfigKind::PasOnly,
            ConfigKind::Jascl,
            ConfigKind::JasclNoUnlabeled,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown bench configuration `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub image_size: (usize, usize),
    pub style: RenderStyle,
    pub featurizer_filters: usize,
    pub frozen_featurizer: bool,
    /// Base session training; mechanisms are always off here.
    pub base: TrainConfig,
    /// Incremental sessions; mechanism flags are overridden per configuration.
    pub incremental: TrainConfig,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            image_size: (32, 32),
            style: RenderStyle::default(),
            featurizer_filters: 15,
            frozen_featurizer: true,
            base: TrainConfig {
                epochs: 12,
                batch_size: 10,
                ..TrainConfig::default()
            }
            .vanilla(),
            incremental: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub config: ConfigKind,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub logs: Vec<TrainingLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config: ConfigKind,
    pub session: usize,
    pub mean_dice: f64,
    pub miou: f64,
    pub seen_dice: Option<f64>,
    pub new_dice: Option<f64>,
    pub harmonic_dice: Option<f64>,
    pub total_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub protocol: ContinualProtocol,
    pub settings: BenchSettings,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub aggregates: Vec<AggregateRow>,
}

impl ComparisonReport {
    pub fn cell(&self, config: ConfigKind, seed: u64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.config == config && c.seed == seed)
    }

    /// Harmonic-mean Dice at session `t` for every seed of `config`, in seed order.
    pub fn harmonic_at(&self, config: ConfigKind, t: usize) -> Vec<Option<f64>> {
        self.seeds
            .iter()
            .map(|&s| {
                self.cell(config, s)
                    .and_then(|c| c.metrics.sessions.get(t))
                    .and_then(|m| m.harmonic_dice)
            })
            .collect()
    }
}

/// Session-0 state shared by every configuration of one seed.
pub struct BaseRun {
    pub data: Vec<SessionData>,
    pub model: PixelClassifierModel,
    pub bank: PrototypeBank,
    pub log: TrainingLog,
    pub metrics: SessionMetrics,
}

pub fn train_base(protocol: &ContinualProtocol, settings: &BenchSettings, seed: u64) -> Result<BaseRun> {
    let data = generate_protocol_data_styled(protocol, settings.image_size, seed, &settings.style)?;
    let featurizer = Featurizer::new(settings.featurizer_filters, child_seed(seed, "bench/featurizer"))?;
    let model = PixelClassifierModel::new(featurizer, protocol.active_classes(0), settings.frozen_featurizer)?;
    let cfg = TrainConfig {
        seed: child_seed(seed, "bench/session0/train"),
        ..settings.base.vanilla()
    };
    let out = train_session(&model, &data[0], &PrototypeBank::default(), protocol.active_classes(0), &cfg)?;
    let metrics = evaluate(&out.model, protocol, &data, 0)?;
    Ok(BaseRun {
        data,
        model: out.model,
        bank: out.bank,
        log: out.log,
        metrics,
    })
}

/// Continues one configuration from the shared base through every later session.
pub fn run_cell(
    protocol: &ContinualProtocol,
    settings: &BenchSettings,
    base: &BaseRun,
    config: ConfigKind,
    seed: u64,
) -> Result<CellReport> {
    let mut model = base.model.clone();
    let mut bank = base.bank.clone();
    let mut logs = vec![base.log.clone()];
    let mut sessions = vec![base.metrics.clone()];
    for t in 1..protocol.len() {
        let cfg = TrainConfig {
            seed: child_seed(seed, &format!("bench/session{t}/train")),
            ..config.apply(&settings.incremental)
        };
        let out = train_session(&model, &base.data[t], &bank, protocol.active_classes(t), &cfg)?;
        model = out.model;
        bank = out.bank;
        logs.push(out.log);
        sessions.push(evaluate(&model, protocol, &base.data, t)?);
    }
    Ok(CellReport {
        config,
        seed,
        metrics: MetricsReport::from_sessions(sessions)?,
        logs,
    })
}

pub fn run_protocol(
    protocol: &ContinualProtocol,
    configs: &[ConfigKind],
    seeds: &[u64],
    settings: &BenchSettings,
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Config("run_protocol needs at least one seed".into()));
    }
    if configs.is_empty() {
        return Err(Error::Config("run_protocol needs at least one configuration".into()));
    }
    let bases: Vec<BaseRun> = seeds
        .par_iter()
        .map(|&s| train_base(protocol, settings, s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, ConfigKind)> = configs
        .iter()
        .flat_map(|&c| (0..seeds.len()).map(move |i| (i, c)))
        .collect();
    let cells: Vec<CellReport> = jobs
        .par_iter()
        .map(|&(i, c)| run_cell(protocol, settings, &bases[i], c, seeds[i]))
        .collect::<Result<_>>()?;
    let aggregates = aggregate(&cells, configs, protocol.len());
    Ok(ComparisonReport {
        protocol: protocol.clone(),
        settings: settings.clone(),
        seeds: seeds.to_vec(),
        cells,
        aggregates,
    })
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn aggregate(cells: &[CellReport], configs: &[ConfigKind], sessions: usize) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &config in configs {
        let mine: Vec<&CellReport> = cells.iter().filter(|c| c.config == config).collect();
        let n = mine.len() as f64;
        for t in 0..sessions {
            let at = |f: &dyn Fn(&SessionMetrics) -> Option<f64>| {
                mean_opt(mine.iter().map(|c| f(&c.metrics.sessions[t])))
            };
            rows.push(AggregateRow {
                config,
                session: t,
                mean_dice: at(&|m| Some(m.mean_dice)).unwrap_or(0.0),
                miou: at(&|m| Some(m.miou)).unwrap_or(0.0),
                seen_dice: at(&|m| m.seen_dice),
                new_dice: at(&|m| m.new_dice),
                harmonic_dice: at(&|m| m.harmonic_dice),
                total_drop: mine.iter().map(|c| c.metrics.total_drop).sum::<f64>() / n,
            });
        }
    }
    rows
}
