use std::fmt;
use std::fs;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};
use crate::harness::batch::{run_jobs, BatchSummary, Job, SummaryRow};
use crate::harness::config::ExperimentConfig;
use crate::objective::{BindingVariant, ObjectiveConfig, PresenceVariant};
use crate::pipeline::{LoopConfig, Variant};

/// A named change to the default loop or objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    Default,
    NoBinding,
    NoPresence,
    MaxPresence,
    Tv,
    Jsd,
    Kld,
    StaticWeighting,
    Vanilla,
    RedoTimestep,
    TEnd(usize),
    NoSelection,
}

impl Ablation {
    /// The full set compared in the ablation tables.
    pub fn standard_set() -> Vec<Ablation> {
        vec![
            Ablation::Default,
            Ablation::NoBinding,
            Ablation::NoPresence,
            Ablation::MaxPresence,
            Ablation::Tv,
            Ablation::Jsd,
            Ablation::Kld,
            Ablation::StaticWeighting,
            Ablation::Vanilla,
            Ablation::RedoTimestep,
            Ablation::TEnd(41),
            Ablation::TEnd(1),
            Ablation::NoSelection,
        ]
    }

    /// Applies the change on top of the given base configuration.
    pub fn apply(self, base_loop: &LoopConfig, base_obj: &ObjectiveConfig) -> (LoopConfig, ObjectiveConfig) {
        let mut l = base_loop.clone();
        let mut o = base_obj.clone();
        match self {
            Ablation::Default => {}
            Ablation::NoBinding => o.binding_variant = BindingVariant::None,
            Ablation::NoPresence => o.presence_variant = PresenceVariant::None,
            Ablation::MaxPresence => o.presence_variant = PresenceVariant::MaxOnly,
            Ablation::Tv => o.presence_variant = PresenceVariant::TotalVariation,
            Ablation::Jsd => o.binding_variant = BindingVariant::Jsd,
            Ablation::Kld => o.binding_variant = BindingVariant::Kld,
            Ablation::StaticWeighting => l.variant = Variant::StaticWeighting,
            Ablation::Vanilla => l.variant = Variant::Vanilla,
            Ablation::RedoTimestep => l.variant = Variant::RedoTimestep,
            Ablation::TEnd(k) => l.t_end = k,
            Ablation::NoSelection => l.selection = Some(false),
        }
        (l, o)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::Default => f.write_str("default"),
            Ablation::NoBinding => f.write_str("no_binding"),
            Ablation::NoPresence => f.write_str("no_presence"),
            Ablation::MaxPresence => f.write_str("max_presence"),
            Ablation::Tv => f.write_str("tv"),
            Ablation::Jsd => f.write_str("jsd"),
            Ablation::Kld => f.write_str("kld"),
            Ablation::StaticWeighting => f.write_str("static_weighting"),
            Ablation::Vanilla => f.write_str("vanilla"),
            Ablation::RedoTimestep => f.write_str("redo_timestep"),
            Ablation::TEnd(k) => write!(f, "t_end={k}"),
            Ablation::NoSelection => f.write_str("no_selection"),
        }
    }
}

impl FromStr for Ablation {
    type Err = FrapError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("t_end=") {
            return k
                .parse()
                .map(Ablation::TEnd)
                .map_err(|_| FrapError::UnknownVariant(s.to_string()));
        }
        Ok(match s {
            "default" => Ablation::Default,
            "no_binding" => Ablation::NoBinding,
            "no_presence" => Ablation::NoPresence,
            "max_presence" => Ablation::MaxPresence,
            "tv" => Ablation::Tv,
            "jsd" => Ablation::Jsd,
            "kld" => Ablation::Kld,
            "static_weighting" => Ablation::StaticWeighting,
            "vanilla" => Ablation::Vanilla,
            "redo_timestep" => Ablation::RedoTimestep,
            "no_selection" => Ablation::NoSelection,
            _ => return Err(FrapError::UnknownVariant(s.to_string())),
        })
    }
}

/// Comma-separated list of ablation names.
pub fn parse_ablations(list: &str) -> Result<Vec<Ablation>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Per-variant means, one row per requested ablation in request order.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<SummaryRow>,
    pub batch: BatchSummary,
}

/// Runs every ablation over the same prompts and seeds. Writes the batch
/// artifacts plus `ablation.csv`.
pub fn ablate(config: &ExperimentConfig, ablations: &[Ablation]) -> Result<AblationTable> {
    if ablations.is_empty() {
        return Err(FrapError::config("no ablation variants given"));
    }
    config.validate()?;
    let prompts = config.prompts()?;
    let mut variants = Vec::new();
    for a in ablations {
        let (l, o) = a.apply(&config.loop_config, &config.objective);
        l.validate().map_err(|e| FrapError::config(format!("{a}: {e}")))?;
        o.validate()?;
        variants.push((a.to_string(), l, o));
    }
    fs::create_dir_all(&config.output_dir).map_err(|e| FrapError::io(&config.output_dir, e))?;
    let mut jobs = Vec::new();
    for prompt_index in 0..prompts.len() {
        for &seed in &config.seeds {
            for (label, l, o) in &variants {
                jobs.push(Job {
                    prompt_index,
                    seed,
                    label: label.clone(),
                    loop_config: LoopConfig { seed, ..l.clone() },
                    objective: o.clone(),
                });
            }
        }
    }
    let batch = run_jobs(config, &prompts, jobs)?;
    let rows: Vec<SummaryRow> = variants
        .iter()
        .filter_map(|(label, _, _)| batch.means.iter().find(|m| &m.variant == label).cloned())
        .collect();
    crate::harness::batch::write_summary_csv(&config.output_dir.join("ablation.csv"), &rows)?;
    Ok(AblationTable { rows, batch })
}
