//! A small batch over a template dataset, then the report table.

use frap::harness::{read_summary_csv, render_table, run_batch, DatasetSource, ExperimentConfig};
use frap::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Template {
            template: TemplateId::ColorObject,
            vocab: None,
            seed: 0,
            limit: Some(3),
        },
        vec![0, 1],
    );
    cfg.output_dir = std::env::temp_dir().join("frap-batch");
    cfg.workers = 2;
    let summary = run_batch(&cfg)?;
    print!("{}", render_table(&read_summary_csv(&summary.csv_path)?));
    println!("records under {}", cfg.output_dir.join("records").display());
    Ok(())
}
