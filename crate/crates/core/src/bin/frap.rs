use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frap::denoiser::{Denoiser, ToyDenoiser, ToyTextEncoder};
use frap::grad::{grad_check, GradCheckConfig};
use frap::harness::{
    ablate, load_record, parse_ablations, read_summary_csv, render_table, run_batch, write_trajectory, Ablation,
    ExperimentConfig,
};
use frap::objective::ObjectiveConfig;
use frap::pipeline::{run, LoopConfig, Variant};
use frap::prompt::{parse_annotated, DEFAULT_TOKENS};
use frap::template::{default_vocabulary, expand_template, TemplateId, Vocabulary};
use frap::FrapError;

#[derive(Parser)]
#[command(name = "frap", version, about = "Adaptive prompt weighting on a toy diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate once from an annotated prompt, e.g. "a [m1:red] [o1:apple]".
    Run {
        #[arg(long)]
        prompt: String,
        #[arg(long, env = "FRAP_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "frap")]
        variant: Variant,
        #[arg(long)]
        t_end: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        no_selection: bool,
        #[arg(long, default_value_t = 0)]
        denoiser_seed: u64,
        #[arg(long, default_value_t = 0)]
        encoder_seed: u64,
        /// Write the run record as JSON.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write the decoded image as PPM.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Run every prompt under every seed of an experiment config.
    Batch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare loop and objective variants over the same prompts and seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variant names; all of them when omitted.
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a prompt template into one prompt spec JSON per line.
    GenDataset {
        #[arg(long)]
        template: TemplateId,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, env = "FRAP_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Print a summary CSV as a table; optionally dump loss trajectories.
    Report {
        #[arg(long)]
        csv: PathBuf,
        /// Directory of run records (searched one level deep).
        #[arg(long, requires = "trajectories")]
        records: Option<PathBuf>,
        /// Output directory for per-run trajectory CSVs.
        #[arg(long, requires = "records")]
        trajectories: Option<PathBuf>,
    },
}

enum Failure {
    Usage(FrapError),
    Runs(String),
}

impl From<FrapError> for Failure {
    fn from(e: FrapError) -> Self {
        match e {
            FrapError::NonFinite(_) => Failure::Runs(e.to_string()),
            other => Failure::Usage(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runs(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path, workers: Option<usize>, out: Option<PathBuf>) -> Result<ExperimentConfig, FrapError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env()?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Command::Run {
            prompt,
            seed,
            variant,
            t_end,
            eta,
            lambda,
            no_selection,
            denoiser_seed,
            encoder_seed,
            record,
            image,
        } => {
            let spec = parse_annotated(&prompt, DEFAULT_TOKENS)?;
            let defaults = LoopConfig::default();
            let loop_cfg = LoopConfig {
                seed,
                variant,
                t_end: t_end.unwrap_or(defaults.t_end),
                eta: eta.unwrap_or(defaults.eta),
                selection: no_selection.then_some(false),
                ..defaults
            };
            let objective = ObjectiveConfig {
                lambda: lambda.unwrap_or(1.0),
                ..ObjectiveConfig::default()
            };
            let denoiser = ToyDenoiser::new(denoiser_seed);
            let emb = ToyTextEncoder::new(encoder_seed, denoiser.embed_dim()).encode(&spec);
            let rec = run(&denoiser, &emb, &spec, &objective, &loop_cfg)?;
            let last = rec.final_loss().expect("monitored steps");
            let _ = writeln!(stdout, "prompt      {}", spec.text());
            let _ = writeln!(stdout, "variant     {variant}  seed {seed}");
            if let Some(b) = rec.b_star {
                let _ = writeln!(stdout, "selected    b*={b} of {}", rec.selection_losses.len());
            }
            let _ = writeln!(
                stdout,
                "first loss  {:.6}\nfinal loss  {:.6} (presence {:.6}, binding {:.6})",
                rec.losses[0].total, last.total, last.presence, last.binding
            );
            let _ = writeln!(stdout, "calls       {}\nwall_ms     {:.1}", rec.call_count, rec.wall_ms);
            if let Some(path) = record {
                fs::write(&path, serde_json::to_vec_pretty(&rec).map_err(FrapError::from)?)
                    .map_err(|e| FrapError::io(&path, e))?;
            }
            if let Some(path) = image {
                rec.image.write_ppm(&path)?;
            }
        }
        Command::Batch {
            config,
            workers,
            out,
            seeds,
        } => {
            let mut cfg = load_config(&config, workers, out)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let summary = run_batch(&cfg)?;
            let _ = write!(stdout, "{}", render_table(&summary.means));
            let _ = writeln!(
                stdout,
                "{} runs, summary at {}",
                summary.rows.len(),
                summary.csv_path.display()
            );
            if summary.failures() > 0 {
                return Err(Failure::Runs(format!("{} run(s) failed", summary.failures())));
            }
        }
        Command::Ablate {
            config,
            variants,
            workers,
            out,
        } => {
            let cfg = load_config(&config, workers, out)?;
            let ablations = match variants {
                Some(list) => parse_ablations(&list)?,
                None => Ablation::standard_set(),
            };
            let table = ablate(&cfg, &ablations)?;
            let _ = write!(stdout, "{}", render_table(&table.rows));
            if table.batch.failures() > 0 {
                return Err(Failure::Runs(format!("{} run(s) failed", table.batch.failures())));
            }
        }
        Command::GenDataset {
            template,
            vocab,
            seed,
            out,
        } => {
            let vocab: Vocabulary = match vocab {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| FrapError::io(&path, e))?;
                    serde_json::from_str(&text).map_err(FrapError::from)?
                }
                None => default_vocabulary(),
            };
            let prompts = expand_template(template, &vocab, seed)?;
            let mut text = String::new();
            for p in &prompts {
                text.push_str(&serde_json::to_string(p).map_err(FrapError::from)?);
                text.push('\n');
            }
            fs::write(&out, text).map_err(|e| FrapError::io(&out, e))?;
            let _ = writeln!(stdout, "{} prompts written to {}", prompts.len(), out.display());
        }
        Command::Gradcheck { trials, h, tol, seed } => {
            let cfg = GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            };
            let report = grad_check(&cfg, trials, h, tol)?;
            let _ = writeln!(
                stdout,
                "{}/{} trials passed; max relative error {:.3e}, max absolute error {:.3e}",
                report.passed,
                report.trials.len(),
                report.max_rel_error,
                report.max_abs_error
            );
            if !report.all_passed() {
                return Err(Failure::Runs("gradient check failed".into()));
            }
        }
        Command::Report {
            csv,
            records,
            trajectories,
        } => {
            let rows = read_summary_csv(&csv)?;
            let _ = write!(stdout, "{}", render_table(&rows));
            if let (Some(records), Some(out)) = (records, trajectories) {
                let n = dump_trajectories(&records, &out)?;
                let _ = writeln!(stdout, "{n} trajectories written to {}", out.display());
            }
        }
    }
    Ok(())
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, FrapError> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| FrapError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| FrapError::io(dir, e))?.path();
        if path.is_dir() {
            let inner = fs::read_dir(&path).map_err(|e| FrapError::io(&path, e))?;
            for e in inner {
                let p = e.map_err(|e| FrapError::io(&path, e))?.path();
                if p.extension().is_some_and(|x| x == "json") {
                    out.push(p);
                }
            }
        } else if path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn dump_trajectories(records: &Path, out: &Path) -> Result<usize, FrapError> {
    fs::create_dir_all(out).map_err(|e| FrapError::io(out, e))?;
    let files = json_files(records)?;
    for file in &files {
        let rec = load_record(file)?;
        let parent = file
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        write_trajectory(&out.join(format!("{parent}-{stem}.csv")), &rec)?;
    }
    Ok(files.len())
}
