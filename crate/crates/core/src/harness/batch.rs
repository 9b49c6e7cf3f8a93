use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, ToyDenoiser, ToyTextEncoder};
use crate::error::{FrapError, Result};
use crate::harness::config::ExperimentConfig;
use crate::objective::ObjectiveConfig;
use crate::pipeline::{run, LoopConfig, RunRecord};
use crate::prompt::PromptSpec;

/// Label of the aggregate rows in the summary CSV.
pub const MEAN_ROW: &str = "MEAN";

/// One CSV row: a run, or the per-variant mean over successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub prompt_id: String,
    pub seed: Option<u64>,
    pub variant: String,
    pub status: String,
    pub prompt: String,
    pub final_total: Option<f64>,
    pub final_presence: Option<f64>,
    pub final_binding: Option<f64>,
    pub proxy_presence_mean: Option<f64>,
    pub proxy_presence_min: Option<f64>,
    pub proxy_binding_mean: Option<f64>,
    pub proxy_final_total_loss: Option<f64>,
    pub weighting_steps: Option<f64>,
    pub call_count: Option<f64>,
    pub wall_ms: Option<f64>,
    pub error: String,
}

impl SummaryRow {
    pub fn is_mean(&self) -> bool {
        self.prompt_id == MEAN_ROW
    }

    fn from_record(id: &str, label: &str, rec: &RunRecord) -> Self {
        let last = rec.final_loss();
        Self {
            prompt_id: id.to_string(),
            seed: Some(rec.seed),
            variant: label.to_string(),
            status: "ok".into(),
            prompt: rec.prompt.text().to_string(),
            final_total: last.map(|l| l.total),
            final_presence: last.map(|l| l.presence),
            final_binding: last.map(|l| l.binding),
            proxy_presence_mean: rec.proxy.mean_presence(),
            proxy_presence_min: rec.proxy.min_presence(),
            proxy_binding_mean: rec.proxy.mean_binding(),
            proxy_final_total_loss: Some(rec.proxy.final_total_loss),
            weighting_steps: Some(rec.losses.len() as f64),
            call_count: Some(rec.call_count as f64),
            wall_ms: Some(rec.wall_ms),
            error: String::new(),
        }
    }

    fn failed(id: &str, seed: u64, label: &str, prompt: &PromptSpec, err: &FrapError) -> Self {
        Self {
            prompt_id: id.to_string(),
            seed: Some(seed),
            variant: label.to_string(),
            status: "failed".into(),
            prompt: prompt.text().to_string(),
            final_total: None,
            final_presence: None,
            final_binding: None,
            proxy_presence_mean: None,
            proxy_presence_min: None,
            proxy_binding_mean: None,
            proxy_final_total_loss: None,
            weighting_steps: None,
            call_count: None,
            wall_ms: None,
            error: err.to_string(),
        }
    }

    fn numeric_mut(&mut self) -> [&mut Option<f64>; 10] {
        [
            &mut self.final_total,
            &mut self.final_presence,
            &mut self.final_binding,
            &mut self.proxy_presence_mean,
            &mut self.proxy_presence_min,
            &mut self.proxy_binding_mean,
            &mut self.proxy_final_total_loss,
            &mut self.weighting_steps,
            &mut self.call_count,
            &mut self.wall_ms,
        ]
    }

    /// Numeric columns in CSV order.
    pub fn numeric(&self) -> [Option<f64>; 10] {
        [
            self.final_total,
            self.final_presence,
            self.final_binding,
            self.proxy_presence_mean,
            self.proxy_presence_min,
            self.proxy_binding_mean,
            self.proxy_final_total_loss,
            self.weighting_steps,
            self.call_count,
            self.wall_ms,
        ]
    }
}

/// Column-wise means over the `ok` rows of each variant, in variant order.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !r.is_mean()) {
        groups.entry(&row.variant).or_default();
        if row.status == "ok" {
            groups.get_mut(row.variant.as_str()).expect("inserted").push(row);
        }
    }
    groups
        .into_iter()
        .map(|(variant, group)| {
            let mut mean = SummaryRow {
                prompt_id: MEAN_ROW.into(),
                seed: None,
                variant: variant.to_string(),
                status: "mean".into(),
                prompt: String::new(),
                final_total: None,
                final_presence: None,
                final_binding: None,
                proxy_presence_mean: None,
                proxy_presence_min: None,
                proxy_binding_mean: None,
                proxy_final_total_loss: None,
                weighting_steps: None,
                call_count: None,
                wall_ms: None,
                error: String::new(),
            };
            for (col, slot) in mean.numeric_mut().into_iter().enumerate() {
                let values: Vec<f64> = group.iter().filter_map(|r| r.numeric()[col]).collect();
                if !values.is_empty() {
                    *slot = Some(values.iter().sum::<f64>() / values.len() as f64);
                }
            }
            mean
        })
        .collect()
}

/// A unit of batch work.
#[derive(Debug, Clone)]
pub struct Job {
    pub prompt_index: usize,
    pub seed: u64,
    pub label: String,
    pub loop_config: LoopConfig,
    pub objective: ObjectiveConfig,
}

pub fn prompt_id(index: usize) -> String {
    format!("p{index:04}")
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Result of a batch: the sorted data rows, the aggregates and where the
/// artifacts went.
#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub rows: Vec<SummaryRow>,
    pub means: Vec<SummaryRow>,
    pub csv_path: PathBuf,
    pub record_paths: Vec<PathBuf>,
}

impl BatchSummary {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| FrapError::io(path, e))
}

/// Runs every job on a pool of `config.workers` threads and writes one
/// record (JSON and PPM) per successful run plus `summary.csv`.
pub fn run_jobs(config: &ExperimentConfig, prompts: &[PromptSpec], jobs: Vec<Job>) -> Result<BatchSummary> {
    let denoiser = ToyDenoiser::new(config.denoiser_seed);
    let encoder = ToyTextEncoder::new(config.encoder_seed, denoiser.embed_dim());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| FrapError::config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(Job, Result<RunRecord>)> = pool.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let prompt = &prompts[job.prompt_index];
                let emb = encoder.encode(prompt);
                let res = run(&denoiser, &emb, prompt, &job.objective, &job.loop_config);
                (job, res)
            })
            .collect()
    });

    let records_dir = config.output_dir.join("records");
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut record_paths = Vec::new();
    let mut sorted = outcomes;
    sorted.sort_by(|(a, _), (b, _)| (a.prompt_index, a.seed, &a.label).cmp(&(b.prompt_index, b.seed, &b.label)));
    for (job, res) in &sorted {
        let id = prompt_id(job.prompt_index);
        match res {
            Ok(rec) => {
                let dir = records_dir.join(file_stem(&job.label));
                fs::create_dir_all(&dir).map_err(|e| FrapError::io(&dir, e))?;
                let stem = format!("{id}-s{}", job.seed);
                let json = dir.join(format!("{stem}.json"));
                fs::write(&json, serde_json::to_vec_pretty(rec)?).map_err(|e| FrapError::io(&json, e))?;
                rec.image.write_ppm(&dir.join(format!("{stem}.ppm")))?;
                record_paths.push(json);
                rows.push(SummaryRow::from_record(&id, &job.label, rec));
            }
            Err(err) => rows.push(SummaryRow::failed(
                &id,
                job.seed,
                &job.label,
                &prompts[job.prompt_index],
                err,
            )),
        }
    }
    let means = aggregate(&rows);
    let csv_path = config.output_dir.join("summary.csv");
    let all: Vec<SummaryRow> = rows.iter().chain(&means).cloned().collect();
    write_summary_csv(&csv_path, &all)?;
    Ok(BatchSummary {
        rows,
        means,
        csv_path,
        record_paths,
    })
}

/// Every prompt under every seed with the configured loop.
pub fn run_batch(config: &ExperimentConfig) -> Result<BatchSummary> {
    config.validate()?;
    let prompts = config.prompts()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| FrapError::io(&config.output_dir, e))?;
    let label = config.loop_config.variant.name().to_string();
    let jobs = (0..prompts.len())
        .flat_map(|i| config.seeds.iter().map(move |&seed| (i, seed)))
        .map(|(prompt_index, seed)| Job {
            prompt_index,
            seed,
            label: label.clone(),
            loop_config: LoopConfig {
                seed,
                ..config.loop_config.clone()
            },
            objective: config.objective.clone(),
        })
        .collect();
    run_jobs(config, &prompts, jobs)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| FrapError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, status: &str, total: Option<f64>) -> SummaryRow {
        SummaryRow {
            prompt_id: "p0000".into(),
            seed: Some(0),
            variant: variant.into(),
            status: status.into(),
            prompt: "x".into(),
            final_total: total,
            final_presence: total,
            final_binding: None,
            proxy_presence_mean: None,
            proxy_presence_min: None,
            proxy_binding_mean: None,
            proxy_final_total_loss: None,
            weighting_steps: Some(25.0),
            call_count: Some(65.0),
            wall_ms: Some(1.0),
            error: String::new(),
        }
    }

    #[test]
    fn means_skip_failures_and_missing_cells() {
        let rows = vec![
            row("frap", "ok", Some(0.2)),
            row("frap", "ok", Some(0.4)),
            row("frap", "failed", None),
            row("vanilla", "ok", Some(1.0)),
        ];
        let means = aggregate(&rows);
        assert_eq!(means.len(), 2);
        assert!((means[0].final_total.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(means[0].final_binding, None);
        assert_eq!(means[1].variant, "vanilla");
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("t_end=41"), "t_end-41");
    }
}
