use std::io::Write;
use std::path::PathBuf;

use choicekit::bench::{log_log_slope, run_scaling_suite, Axis, BenchConfig, BenchRow};
use choicekit::synth::{SimModel, SimSpec};
use choicekit::{FitOptions, Optimizer};

use crate::{write_file, CliError, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// `records`, `covariates` or `items`.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<usize>,
    /// Comma-separated simulation models.
    #[arg(long, value_delimiter = ',', default_value = "m1")]
    models: Vec<String>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    users: usize,
    #[arg(long, default_value_t = 30)]
    items: usize,
    #[arg(long, default_value_t = 10_000)]
    records: usize,
    /// User and item observable dimension.
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value = "lbfgs")]
    optimizer: String,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timing CSV path.
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let usage = |e: choicekit::Error| CliError::Usage(e.to_string());
    let axis = Axis::parse(&a.axis).map_err(usage)?;
    let models = a
        .models
        .iter()
        .map(|m| SimModel::parse(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let cfg = BenchConfig {
        axis,
        grid: a.grid.clone(),
        models: models.clone(),
        repetitions: a.reps,
        base: SimSpec {
            num_users: a.users,
            num_items: a.items,
            num_records: a.records,
            user_dim: a.dim,
            item_dim: a.dim,
            seed: a.seed,
            ..SimSpec::default()
        },
        fit: FitOptions {
            optimizer: Optimizer::parse(&a.optimizer).map_err(usage)?,
            learning_rate: a.lr,
            num_epochs: a.epochs,
            early_stop: None,
            ..FitOptions::default()
        },
    };
    let rows = run_scaling_suite(&cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BenchRow::HEADER).expect("in memory");
    for r in &rows {
        w.write_record(r.to_record()).expect("in memory");
    }
    write_file(&a.out, &w.into_inner().expect("in memory"))?;
    for m in models {
        let failed = rows.iter().filter(|r| r.model == m && r.error.is_some()).count();
        match log_log_slope(&rows, m) {
            Some(s) => {
                let _ = writeln!(out, "{m}: log-log slope of time vs {axis} = {s:.3} ({failed} failed)");
            }
            None => {
                let _ = writeln!(out, "{m}: not enough successful grid points for a slope ({failed} failed)");
            }
        }
    }
    let _ = writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display());
    Ok(EXIT_OK)
}
