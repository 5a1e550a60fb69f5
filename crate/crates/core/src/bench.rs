//! Timing runs over a grid of problem sizes.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use log::info;

use crate::clogit::ConditionalLogit;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions};
use crate::synth::{simulate, SimModel, SimSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Number of records.
    Records,
    /// Observable dimension, applied to both user and item observables.
    Covariates,
    Items,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "records" => Ok(Axis::Records),
            "covariates" => Ok(Axis::Covariates),
            "items" => Ok(Axis::Items),
            _ => Err(Error::BadOptions(format!(
                "unknown axis `{s}` (records, covariates, items)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Records => "records",
            Axis::Covariates => "covariates",
            Axis::Items => "items",
        }
    }

    fn apply(self, base: &SimSpec, value: usize) -> SimSpec {
        let mut s = base.clone();
        match self {
            Axis::Records => s.num_records = value,
            Axis::Covariates => {
                s.user_dim = value;
                s.item_dim = value;
            }
            Axis::Items => s.num_items = value,
        }
        s
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub axis: Axis,
    pub grid: Vec<usize>,
    pub models: Vec<SimModel>,
    pub repetitions: usize,
    /// Sizes not on the axis; its seed is offset by the repetition number.
    pub base: SimSpec,
    pub fit: FitOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub axis: Axis,
    pub axis_value: usize,
    pub model: SimModel,
    pub rep: usize,
    /// Fit time only (simulation excluded).
    pub wall_seconds: f64,
    pub final_nll: f64,
    pub epochs: usize,
    /// Wall time over the mean wall time at the first grid value, same model.
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

impl BenchRow {
    pub const HEADER: [&'static str; 9] = [
        "axis",
        "axis_value",
        "model",
        "rep",
        "wall_seconds",
        "final_nll",
        "epochs",
        "ratio",
        "error",
    ];

    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.axis.to_string(),
            self.axis_value.to_string(),
            self.model.to_string(),
            self.rep.to_string(),
            format!("{:.6}", self.wall_seconds),
            if self.error.is_some() { String::new() } else { format!("{}", self.final_nll) },
            self.epochs.to_string(),
            self.ratio.map_or_else(String::new, |r| format!("{r:.6}")),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

fn run_one(spec: &SimSpec, opts: &FitOptions) -> Result<(f64, f64, usize)> {
    let sim = simulate(spec)?;
    let mut m = ConditionalLogit::from_formula(sim.formula, &sim.data, spec.num_items, Some(spec.num_users))?;
    let t0 = Instant::now();
    let r = fit(&mut m, &sim.data, opts)?;
    Ok((t0.elapsed().as_secs_f64(), r.nll, r.epochs))
}

/// One fit per (grid value, model, repetition). Failures are recorded in the
/// row and the suite continues.
pub fn run_scaling_suite(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.grid.is_empty() {
        return Err(Error::BadOptions("benchmark grid is empty".into()));
    }
    if cfg.models.is_empty() || cfg.repetitions == 0 {
        return Err(Error::BadOptions("benchmark needs at least one model and one repetition".into()));
    }
    let mut rows = Vec::new();
    for &value in &cfg.grid {
        for &model in &cfg.models {
            for rep in 0..cfg.repetitions {
                let mut spec = cfg.axis.apply(&cfg.base, value);
                spec.model = model;
                spec.seed = cfg.base.seed.wrapping_add(rep as u64);
                let row = match run_one(&spec, &cfg.fit) {
                    Ok((wall, nll, epochs)) => BenchRow {
                        axis: cfg.axis,
                        axis_value: value,
                        model,
                        rep,
                        wall_seconds: wall,
                        final_nll: nll,
                        epochs,
                        ratio: None,
                        error: None,
                    },
                    Err(e) => BenchRow {
                        axis: cfg.axis,
                        axis_value: value,
                        model,
                        rep,
                        wall_seconds: 0.0,
                        final_nll: f64::NAN,
                        epochs: 0,
                        ratio: None,
                        error: Some(format!("{}: {e}", e.name())),
                    },
                };
                info!(
                    "{}={} {} rep {}: {:.3}s",
                    cfg.axis, value, model, rep, row.wall_seconds
                );
                rows.push(row);
            }
        }
    }
    let first = cfg.grid[0];
    let mut base: HashMap<SimModel, (f64, usize)> = HashMap::new();
    for r in rows.iter().filter(|r| r.axis_value == first && r.error.is_none()) {
        let e = base.entry(r.model).or_default();
        e.0 += r.wall_seconds;
        e.1 += 1;
    }
    for r in rows.iter_mut().filter(|r| r.error.is_none()) {
        if let Some(&(total, count)) = base.get(&r.model) {
            let mean = total / count as f64;
            if mean > 0.0 {
                r.ratio = Some(r.wall_seconds / mean);
            }
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log(time)` against `log(axis value)`, using the
/// mean time per grid value.
pub fn log_log_slope(rows: &[BenchRow], model: SimModel) -> Option<f64> {
    let mut by_value: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.model == model && r.error.is_none()) {
        match by_value.iter_mut().find(|(v, _, _)| *v == r.axis_value) {
            Some(e) => {
                e.1 += r.wall_seconds;
                e.2 += 1;
            }
            None => by_value.push((r.axis_value, r.wall_seconds, 1)),
        }
    }
    if by_value.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = by_value
        .iter()
        .map(|(v, t, c)| ((*v as f64).ln(), (t / *c as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::Optimizer;

    fn small(axis: Axis, grid: Vec<usize>) -> BenchConfig {
        BenchConfig {
            axis,
            grid,
            models: vec![SimModel::M1],
            repetitions: 2,
            base: SimSpec {
                num_users: 5,
                num_items: 4,
                num_records: 200,
                user_dim: 2,
                item_dim: 2,
                ..SimSpec::default()
            },
            fit: FitOptions {
                optimizer: Optimizer::Lbfgs,
                num_epochs: 20,
                ..FitOptions::default()
            },
        }
    }

    #[test]
    fn one_row_per_cell() {
        let rows = run_scaling_suite(&small(Axis::Records, vec![100, 200, 400])).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.error.is_none() && r.ratio.is_some()));
        assert!(log_log_slope(&rows, SimModel::M1).is_some());
    }

    #[test]
    fn failures_are_rows() {
        let cfg = BenchConfig {
            models: vec![SimModel::M2],
            ..small(Axis::Items, vec![3, 1])
        };
        let rows = run_scaling_suite(&cfg).unwrap();
        assert!(rows[0].error.is_none());
        assert!(rows[2].error.as_deref().unwrap().starts_with("BadOptions"));
        assert!(run_scaling_suite(&small(Axis::Items, vec![])).is_err());
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let rows: Vec<BenchRow> = [10usize, 100, 1000]
            .iter()
            .map(|&v| BenchRow {
                axis: Axis::Records,
                axis_value: v,
                model: SimModel::M1,
                rep: 0,
                wall_seconds: 0.001 * v as f64,
                final_nll: 0.0,
                epochs: 1,
                ratio: None,
                error: None,
            })
            .collect();
        assert!((log_log_slope(&rows, SimModel::M1).unwrap() - 1.0).abs() < 1e-12);
    }
}
