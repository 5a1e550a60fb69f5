use std::io::Write;
use std::path::{Path, PathBuf};

use choicekit::estimation::{CoefRow, FitResult};
use choicekit::ingest::Encodings;
use choicekit::nested::{joint, nest_dataset, NestStructure};
use choicekit::{
    fit, ConditionalLogit, EarlyStop, Estimable, FitOptions, NestedLogit, Norm, Optimizer, Regularization,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{nest_observables, Manifest};
use crate::{create_dir, json_bytes, manifest_dir, write_file, CliError, EXIT_OK};

fn parse_json_arg(s: &str) -> Result<Value, String> {
    let t = s.trim_start();
    if t.starts_with('[') || t.starts_with('{') {
        serde_json::from_str(s).map_err(|e| e.to_string())
    } else {
        let text = std::fs::read_to_string(s).map_err(|e| format!("{s}: {e}"))?;
        serde_json::from_str(&text).map_err(|e| format!("{s}: {e}"))
    }
}

/// Fit settings. Every field may come from `--config` or a flag; flags win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `clm` or `nlm`.
    #[arg(long)]
    pub model: Option<String>,
    /// Conditional logit formula.
    #[arg(long)]
    pub formula: Option<String>,
    /// Nest-level formula (may be empty).
    #[arg(long)]
    pub nest_formula: Option<String>,
    #[arg(long)]
    pub item_formula: Option<String>,
    /// Item labels per nest, as JSON (`[["a","b"],["c"]]` or `{"name": [...]}`) or a JSON file path.
    #[arg(long, value_parser = parse_json_arg)]
    pub nests: Option<Value>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shared_lambda: Option<bool>,
    /// `adam`, `gd` or `lbfgs`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `-1` for full batch.
    #[arg(long, allow_hyphen_values = true)]
    pub batch_size: Option<i64>,
    /// `l1` or `l2`.
    #[arg(long)]
    pub regularization: Option<String>,
    #[arg(long)]
    pub reg_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compute standard errors after fitting.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub se: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub early_stop: Option<bool>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl FitConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut c: FitConfig = serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dir = manifest_dir(path);
        for p in [&mut c.data, &mut c.out].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(c)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(&mut self, top: &FitConfig) {
        overlay!(
            self,
            top,
            data,
            model,
            formula,
            nest_formula,
            item_formula,
            nests,
            shared_lambda,
            optimizer,
            lr,
            epochs,
            batch_size,
            regularization,
            reg_weight,
            seed,
            out,
            se,
            early_stop,
            grad_tol
        );
    }

    /// Fills defaults and checks the combination of settings.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let usage = |m: &str| CliError::Usage(m.to_string());
        if self.data.is_none() {
            return Err(usage("--data is required"));
        }
        if self.out.is_none() {
            return Err(usage("--out is required"));
        }
        let model = self.model.get_or_insert_with(|| "clm".into()).clone();
        match model.as_str() {
            "clm" => {
                if self.formula.is_none() {
                    return Err(usage("--model clm needs --formula"));
                }
                if self.item_formula.is_some() || self.nest_formula.is_some() || self.nests.is_some() {
                    return Err(usage("--nest-formula, --item-formula and --nests apply to --model nlm only"));
                }
            }
            "nlm" => {
                if self.item_formula.is_none() {
                    return Err(usage("--model nlm needs --item-formula"));
                }
                if self.nests.is_none() {
                    return Err(usage("--model nlm needs --nests"));
                }
                if self.formula.is_some() {
                    return Err(usage("--formula applies to --model clm; use --item-formula"));
                }
                self.nest_formula.get_or_insert_with(String::new);
                self.shared_lambda.get_or_insert(false);
            }
            m => return Err(CliError::Usage(format!("unknown model `{m}` (clm, nlm)"))),
        }
        let opt = self.optimizer.get_or_insert_with(|| "adam".into()).clone();
        Optimizer::parse(&opt).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(r) = &self.regularization {
            Norm::parse(r).map_err(|e| CliError::Usage(e.to_string()))?;
            self.reg_weight.get_or_insert(0.0);
        } else if self.reg_weight.is_some() {
            return Err(usage("--reg-weight needs --regularization"));
        }
        let d = FitOptions::default();
        self.lr.get_or_insert(d.learning_rate);
        self.epochs.get_or_insert(d.num_epochs);
        self.batch_size.get_or_insert(d.batch_size);
        self.seed.get_or_insert(d.seed);
        self.se.get_or_insert(false);
        self.early_stop.get_or_insert(true);
        self.grad_tol.get_or_insert(d.grad_tol);
        Ok(self)
    }

    fn fit_options(&self) -> Result<FitOptions, CliError> {
        let o = FitOptions {
            optimizer: Optimizer::parse(self.optimizer.as_deref().unwrap_or("adam"))?,
            learning_rate: self.lr.unwrap_or(0.01),
            num_epochs: self.epochs.unwrap_or(5000),
            batch_size: self.batch_size.unwrap_or(-1),
            seed: self.seed.unwrap_or(0),
            early_stop: self.early_stop.unwrap_or(true).then(EarlyStop::default),
            grad_tol: self.grad_tol.unwrap_or(1e-7),
            compute_se: self.se.unwrap_or(false),
            ..FitOptions::default()
        };
        o.validate()?;
        Ok(o)
    }

    fn regularization_value(&self) -> Result<Option<Regularization>, CliError> {
        match &self.regularization {
            None => Ok(None),
            Some(r) => Ok(Some(Regularization::new(Norm::parse(r)?, self.reg_weight.unwrap_or(0.0))?)),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    /// JSON file with any of the fit settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: FitConfig,
}

/// Item labels per nest from `[[...], ...]` or `{"name": [...], ...}`.
fn parse_nests(v: &Value, enc: &Encodings, shared: bool) -> Result<(NestStructure, Vec<String>), CliError> {
    let label = |x: &Value| -> Result<String, CliError> {
        match x {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(CliError::Usage(format!("nest member must be a string or number, got {other}"))),
        }
    };
    let groups: Vec<(String, &Value)> = match v {
        Value::Array(a) => a.iter().enumerate().map(|(k, g)| (k.to_string(), g)).collect(),
        Value::Object(o) => o.iter().map(|(k, g)| (k.clone(), g)).collect(),
        _ => return Err(CliError::Usage("--nests must be a JSON array or object".into())),
    };
    let mut names = Vec::with_capacity(groups.len());
    let mut nests = Vec::with_capacity(groups.len());
    for (name, g) in groups {
        let members = g
            .as_array()
            .ok_or_else(|| CliError::Usage(format!("nest `{name}` must be a list of item labels")))?;
        let mut items = Vec::with_capacity(members.len());
        for m in members {
            let l = label(m)?;
            items.push(
                enc.items
                    .encode(&l)
                    .ok_or_else(|| CliError::Invalid(format!("nest `{name}`: unknown item `{l}`")))?,
            );
        }
        names.push(name);
        nests.push(items);
    }
    Ok((NestStructure::new(nests, shared)?, names))
}

fn entity_label(row: &CoefRow, enc: &Encodings, nest_names: &[String]) -> String {
    let Some(i) = row.entity_index else {
        return String::new();
    };
    let decoded = match row.entity_kind {
        "user" => enc.users.as_ref().and_then(|u| u.decode(i)).map(str::to_string),
        "item" => enc.items.decode(i).map(str::to_string),
        "nest" => nest_names.get(i).cloned(),
        _ => None,
    };
    decoded.unwrap_or_else(|| i.to_string())
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn coefficient_outputs(rows: &[CoefRow], enc: &Encodings, nest_names: &[String]) -> (Vec<u8>, Value) {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["coefficient", "level", "entity_kind", "entity", "dim", "value", "std_err"])
        .expect("in memory");
    let mut entries = Vec::with_capacity(rows.len());
    for r in rows {
        let entity = entity_label(r, enc, nest_names);
        let level = r.level.map_or("", |l| l.as_str());
        w.write_record([
            r.coefficient.as_str(),
            level,
            r.entity_kind,
            entity.as_str(),
            &r.dim.to_string(),
            &num(r.value),
            &r.se.map_or_else(String::new, num),
        ])
        .expect("in memory");
        entries.push(json!({
            "coefficient": r.coefficient,
            "level": r.level.map(|l| l.as_str()),
            "entity_kind": r.entity_kind,
            "entity": if r.entity_index.is_some() { Value::from(entity) } else { Value::Null },
            "dim": r.dim,
            "value": r.value,
            "std_err": r.se,
        }));
    }
    (w.into_inner().expect("in memory"), Value::Array(entries))
}

fn trace_csv(r: &FitResult) -> (Vec<u8>, Vec<u8>) {
    let mut t = String::from("epoch,nll,grad_norm\n");
    let mut ms = String::from("epoch,wall_ms\n");
    for (row, wall) in r.trace.iter().zip(&r.epoch_ms) {
        t.push_str(&format!("{},{},{}\n", row.epoch, num(row.nll), num(row.grad_norm)));
        ms.push_str(&format!("{},{:.3}\n", row.epoch, wall));
    }
    (t.into_bytes(), ms.into_bytes())
}

fn estimate<M: Estimable>(model: &mut M, data: &M::Data, opts: &FitOptions) -> Result<(FitResult, Vec<CoefRow>), CliError> {
    let r = fit(model, data, opts)?;
    let rows = model.coefficient_rows(r.se.as_deref());
    Ok((r, rows))
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = match &args.config {
        Some(p) => FitConfig::read(p)?,
        None => FitConfig::default(),
    };
    cfg.overlay(&args.flags);
    let cfg = cfg.resolve()?;
    let opts = cfg.fit_options()?;
    let reg = cfg.regularization_value()?;
    let data_path = cfg.data.clone().expect("resolved");
    let out_dir = cfg.out.clone().expect("resolved");

    let manifest = Manifest::read(&data_path)?;
    let loaded = manifest.load(&manifest_dir(&data_path))?;
    let enc = loaded.encodings;
    let num_users = loaded.data.has_user_index().then(|| loaded.data.num_users());

    let (result, rows, nest_names, num_params, warnings) = if cfg.model.as_deref() == Some("nlm") {
        let (nests, names) = parse_nests(cfg.nests.as_ref().expect("resolved"), &enc, cfg.shared_lambda == Some(true))?;
        let nest_f = cfg.nest_formula.clone().unwrap_or_default();
        let nest_member = if nest_f.trim().is_empty() {
            None
        } else {
            let obs = nest_observables(&loaded.nest_tables, &names, &enc)?;
            Some(nest_dataset(&loaded.data, &nests, obs)?)
        };
        let data = joint(loaded.data, nest_member)?;
        let item_f = cfg.item_formula.as_deref().expect("resolved");
        let mut m = NestedLogit::from_formulas(&nest_f, item_f, &data, nests, num_users)?.with_regularization(reg);
        let (r, rows) = estimate(&mut m, &data, &opts)?;
        let n = m.num_params();
        (r, rows, names, n, m.lambda_warnings())
    } else {
        let f = cfg.formula.as_deref().expect("resolved");
        let mut m = ConditionalLogit::from_formula(f, &loaded.data, loaded.data.num_items(), num_users)?
            .with_regularization(reg);
        let (r, rows) = estimate(&mut m, &loaded.data, &opts)?;
        let n = m.num_params();
        (r, rows, Vec::new(), n, Vec::new())
    };

    create_dir(&out_dir)?;
    let (coef_csv, coef_json) = coefficient_outputs(&rows, &enc, &nest_names);
    write_file(&out_dir.join("coefficients.csv"), &coef_csv)?;
    write_file(&out_dir.join("coefficients.json"), &json_bytes(&coef_json))?;
    let (trace, timing) = trace_csv(&result);
    write_file(&out_dir.join("trace.csv"), &trace)?;
    write_file(&out_dir.join("timing.csv"), &timing)?;
    let mut all_warnings = result.warnings.clone();
    all_warnings.extend(warnings);
    let summary = json!({
        "model": cfg.model,
        "optimizer": cfg.optimizer,
        "num_parameters": num_params,
        "num_records": enc.records.len(),
        "final_nll": result.nll,
        "objective": result.objective,
        "epochs": result.epochs,
        "wall_seconds": result.wall_seconds,
        "converged": result.converged,
        "stop_reason": result.stop_reason.as_str(),
        "grad_norm": result.grad_norm,
        "learning_rate": result.learning_rate,
        "warnings": all_warnings,
    });
    write_file(&out_dir.join("summary.json"), &json_bytes(&summary))?;
    let resolved = serde_json::to_value(&cfg).expect("serializable");
    write_file(&out_dir.join("resolved_config.json"), &json_bytes(&resolved))?;

    let _ = writeln!(
        out,
        "{} parameters, final NLL {:.6} after {} epochs ({}, {})",
        num_params,
        result.nll,
        result.epochs,
        result.stop_reason.as_str(),
        if result.converged { "converged" } else { "not converged" }
    );
    for w in &all_warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let _ = writeln!(out, "wrote {}", out_dir.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let mut base = FitConfig {
            lr: Some(0.5),
            epochs: Some(10),
            formula: Some("(1|item)".into()),
            ..FitConfig::default()
        };
        base.overlay(&FitConfig {
            lr: Some(0.1),
            ..FitConfig::default()
        });
        assert_eq!(base.lr, Some(0.1));
        assert_eq!(base.epochs, Some(10));
    }

    #[test]
    fn resolve_reports_usage_errors() {
        let ok = FitConfig {
            data: Some("m.json".into()),
            out: Some("o".into()),
            formula: Some("(1|item)".into()),
            ..FitConfig::default()
        };
        let r = ok.clone().resolve().unwrap();
        assert_eq!(r.optimizer.as_deref(), Some("adam"));
        assert_eq!(r.batch_size, Some(-1));
        let nlm = FitConfig {
            model: Some("nlm".into()),
            formula: None,
            nests: Some(json!([[0, 1]])),
            ..ok.clone()
        };
        assert!(matches!(nlm.resolve(), Err(CliError::Usage(_))));
        let bad = FitConfig {
            optimizer: Some("newton".into()),
            ..ok
        };
        assert!(matches!(bad.resolve(), Err(CliError::Usage(_))));
    }
}
