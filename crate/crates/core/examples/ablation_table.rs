//! Ablation table over a handful of prompts.
//!
//! cargo run --release --example ablation_table -- default,no_binding,vanilla,t_end=41

use frap::harness::{ablate, parse_ablations, render_table, Ablation, DatasetSource, ExperimentConfig};
use frap::prelude::*;

fn main() -> Result<()> {
    let ablations = match std::env::args().nth(1) {
        Some(list) => parse_ablations(&list)?,
        None => Ablation::standard_set(),
    };
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Template {
            template: TemplateId::AnimalObject,
            vocab: None,
            seed: 0,
            limit: Some(5),
        },
        vec![0, 1],
    );
    cfg.output_dir = std::env::temp_dir().join("frap-ablation");
    cfg.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let table = ablate(&cfg, &ablations)?;
    print!("{}", render_table(&table.rows));
    Ok(())
}
