//! Maximum-likelihood fitting loop and standard errors.

use std::fmt;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};

use crate::clogit::ConditionalLogit;
use crate::dataset::{batch_plan, ChoiceDataset, JointDataset, Records};
use crate::error::{Error, Result};
use crate::formula::{CoefVariation, ModelSpec, Regularization};
use crate::nested::{Level, NestedLogit};
use crate::optim::{gd_update, inf_norm, Adam, Lbfgs, LbfgsOptions};

/// One reported coefficient entry.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefRow {
    /// Display name, e.g. `price[constant]` or `lambda`.
    pub coefficient: String,
    pub level: Option<Level>,
    /// `constant`, `user`, `item`, `nest` or `shared`.
    pub entity_kind: &'static str,
    pub entity_index: Option<usize>,
    /// Position within the coefficient vector.
    pub dim: usize,
    pub value: f64,
    /// `None` when not estimated (pinned) or not computed.
    pub se: Option<f64>,
}

/// A model the fitting loop can drive.
pub trait Estimable: Clone + Send + Sync {
    type Data: Records;

    fn num_params(&self) -> usize;
    fn theta(&self) -> &[f64];
    fn set_theta(&mut self, theta: &[f64]) -> Result<()>;
    fn check_data(&self, data: &Self::Data) -> Result<()>;
    /// Negative log-likelihood at `theta`; fills `grad` (overwriting) when given.
    fn nll_at(&self, theta: &[f64], data: &Self::Data, grad: Option<&mut [f64]>) -> Result<f64>;
    /// Penalty at `theta`; adds its (sub)gradient to `grad` when given.
    fn penalty_at(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64;
    fn regularization_weight(&self) -> f64;
    /// Reported coefficients; `se` is aligned with the internal parameter vector.
    fn coefficient_rows(&self, se: Option<&[f64]>) -> Vec<CoefRow>;
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

fn spec_rows(spec: &ModelSpec, theta: &[f64], se: Option<&[f64]>, level: Option<Level>, out: &mut Vec<CoefRow>) {
    for c in &spec.coefficients {
        let (kind, indexed) = match (c.variation, level) {
            (CoefVariation::Constant, _) => ("constant", false),
            (CoefVariation::User, _) => ("user", true),
            (_, Some(Level::Nest)) => ("nest", true),
            _ => ("item", true),
        };
        let pinned = usize::from(c.variation == CoefVariation::Item);
        for row in 0..c.view_rows() {
            for k in 0..c.dim {
                let stored = row.checked_sub(pinned).map(|r| c.offset + r * c.dim + k);
                out.push(CoefRow {
                    coefficient: c.name(),
                    level,
                    entity_kind: kind,
                    entity_index: indexed.then_some(row),
                    dim: k,
                    value: stored.map_or(0.0, |p| theta[p]),
                    se: stored.and_then(|p| se.map(|s| s[p])),
                });
            }
        }
    }
}

fn penalize(reg: Option<Regularization>, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
    match reg {
        Some(r) if r.weight != 0.0 => r.apply(theta, grad),
        _ => 0.0,
    }
}

impl Estimable for ConditionalLogit {
    type Data = ChoiceDataset;

    fn num_params(&self) -> usize {
        ConditionalLogit::num_params(self)
    }

    fn theta(&self) -> &[f64] {
        ConditionalLogit::theta(self)
    }

    fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        ConditionalLogit::set_theta(self, theta)
    }

    fn check_data(&self, data: &ChoiceDataset) -> Result<()> {
        ConditionalLogit::check_data(self, data)
    }

    fn nll_at(&self, theta: &[f64], data: &ChoiceDataset, grad: Option<&mut [f64]>) -> Result<f64> {
        ConditionalLogit::nll_at(self, theta, data, grad)
    }

    fn penalty_at(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        penalize(self.regularization(), theta, grad)
    }

    fn regularization_weight(&self) -> f64 {
        self.regularization().map_or(0.0, |r| r.weight)
    }

    fn coefficient_rows(&self, se: Option<&[f64]>) -> Vec<CoefRow> {
        let mut out = Vec::new();
        spec_rows(self.spec(), self.theta(), se, None, &mut out);
        out
    }
}

impl Estimable for NestedLogit {
    type Data = JointDataset;

    fn num_params(&self) -> usize {
        NestedLogit::num_params(self)
    }

    fn theta(&self) -> &[f64] {
        NestedLogit::theta(self)
    }

    fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        NestedLogit::set_theta(self, theta)
    }

    fn check_data(&self, data: &JointDataset) -> Result<()> {
        NestedLogit::check_data(self, data)
    }

    fn nll_at(&self, theta: &[f64], data: &JointDataset, grad: Option<&mut [f64]>) -> Result<f64> {
        NestedLogit::nll_at(self, theta, data, grad)
    }

    fn penalty_at(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        NestedLogit::penalty_at(self, theta, grad)
    }

    fn regularization_weight(&self) -> f64 {
        self.regularization().map_or(0.0, |r| r.weight)
    }

    /// Lambda rows report `lambda = exp(rho)` with `SE(lambda) = lambda * SE(rho)`.
    fn coefficient_rows(&self, se: Option<&[f64]>) -> Vec<CoefRow> {
        let theta = self.theta();
        let nw = self.nest_spec().total_params();
        let nc = self.num_coefficients();
        let mut out = Vec::new();
        spec_rows(self.nest_spec(), &theta[..nw], se.map(|s| &s[..nw]), Some(Level::Nest), &mut out);
        spec_rows(self.item_spec(), &theta[nw..nc], se.map(|s| &s[nw..nc]), Some(Level::Item), &mut out);
        let shared = self.nests().shared_lambda();
        for (k, rho) in theta[nc..].iter().enumerate() {
            let lambda = rho.exp();
            out.push(CoefRow {
                coefficient: "lambda".into(),
                level: None,
                entity_kind: if shared { "shared" } else { "nest" },
                entity_index: (!shared).then_some(k),
                dim: 0,
                value: lambda,
                se: se.map(|s| lambda * s[nc + k]),
            });
        }
        out
    }

    fn warnings(&self) -> Vec<String> {
        self.lambda_warnings()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Gd,
    Adam,
    Lbfgs,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::Adam),
            "lbfgs" | "l-bfgs" => Ok(Optimizer::Lbfgs),
            _ => Err(Error::BadOptions(format!("unknown optimizer `{s}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Gd => "gd",
            Optimizer::Adam => "adam",
            Optimizer::Lbfgs => "lbfgs",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stop when the current NLL differs from the mean of the previous `window`
/// epochs by less than `rel_tol` (relative).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 50,
            rel_tol: 1e-5,
        }
    }
}

impl EarlyStop {
    /// Whether the rule fires on `trace` after its latest entry.
    pub fn fires(&self, trace: &[f64]) -> bool {
        let n = trace.len();
        if n <= self.window {
            return false;
        }
        let prev = &trace[n - 1 - self.window..n - 1];
        let avg = prev.iter().sum::<f64>() / self.window as f64;
        let cur = trace[n - 1];
        if avg == 0.0 {
            return cur == 0.0;
        }
        ((avg - cur) / avg).abs() < self.rel_tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub num_epochs: usize,
    /// `-1` for full batch.
    pub batch_size: i64,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
    /// Hard cap on epochs regardless of `num_epochs`.
    pub max_epochs: usize,
    /// Stop once the per-record objective gradient's largest entry is below this.
    pub grad_tol: f64,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            num_epochs: 5000,
            batch_size: -1,
            seed: 0,
            early_stop: Some(EarlyStop::default()),
            max_epochs: 30_000,
            grad_tol: 1e-7,
            compute_se: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::BadOptions(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(es) = self.early_stop {
            if es.window == 0 {
                return Err(Error::BadOptions("early-stop window must be at least 1".into()));
            }
        }
        if self.batch_size == 0 || self.batch_size < -1 {
            return Err(Error::BadBatchSize(self.batch_size));
        }
        if self.optimizer == Optimizer::Lbfgs && self.batch_size != -1 {
            return Err(Error::BadOptions("lbfgs runs full batch only (batch size -1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    /// Full-data NLL after the epoch (no penalty).
    pub nll: f64,
    /// Largest absolute entry of the per-record objective gradient.
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EpochLimit,
    EarlyStop,
    GradientTolerance,
    LineSearch,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EpochLimit => "epoch_limit",
            StopReason::EarlyStop => "early_stop",
            StopReason::GradientTolerance => "gradient_tolerance",
            StopReason::LineSearch => "line_search",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Internal parameter vector at exit.
    pub theta: Vec<f64>,
    pub nll: f64,
    /// NLL plus penalty.
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    /// Wall time per epoch, milliseconds.
    pub epoch_ms: Vec<f64>,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub grad_norm: f64,
    /// Standard errors aligned with `theta`.
    pub se: Option<Vec<f64>>,
    pub learning_rate: f64,
    pub warnings: Vec<String>,
}

/// Value and per-record gradient of the penalized objective on the full data.
fn full_objective<M: Estimable>(model: &M, data: &M::Data, theta: &[f64], grad: &mut [f64]) -> Result<(f64, f64)> {
    let n = data.num_records() as f64;
    let nll = model.nll_at(theta, data, Some(grad))?;
    let pen = model.penalty_at(theta, Some(grad));
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((nll, (nll + pen) / n))
}

/// Fits `model` to `data`, leaving the final parameters in the model.
pub fn fit<M: Estimable>(model: &mut M, data: &M::Data, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    model.check_data(data)?;
    let n = data.num_records();
    if n == 0 {
        return Err(Error::EmptyInput("no records to fit".into()));
    }
    let start = Instant::now();
    let p = model.num_params();
    let epochs = opts.num_epochs.min(opts.max_epochs);
    let full_batch = opts.batch_size == -1 || opts.batch_size as usize >= n;

    let mut theta = model.theta().to_vec();
    let mut grad = vec![0.0; p];
    let (mut nll, mut obj) = full_objective(model, data, &theta, &mut grad)?;
    if !nll.is_finite() {
        return Err(Error::Diverged(0));
    }

    let mut lr = opts.learning_rate;
    let mut halvings = 0;
    let mut adam = Adam::new(p);
    let mut lbfgs = Lbfgs::new(LbfgsOptions {
        initial_step: lr,
        ..LbfgsOptions::default()
    });
    let mut trace = Vec::with_capacity(epochs.min(4096));
    let mut nlls = Vec::with_capacity(epochs.min(4096));
    let mut epoch_ms = Vec::with_capacity(epochs.min(4096));
    let mut warnings = Vec::new();
    let mut stop = StopReason::EpochLimit;
    let mut converged = false;
    let mut batch_grad = vec![0.0; p];

    let mut epoch = 0;
    while epoch < epochs {
        if inf_norm(&grad) <= opts.grad_tol {
            stop = StopReason::GradientTolerance;
            converged = true;
            break;
        }
        let t0 = Instant::now();
        let before = theta.clone();
        let mut line_search_failed = false;
        match opts.optimizer {
            Optimizer::Lbfgs => {
                let mut f = |x: &[f64], g: &mut [f64]| full_objective(model, data, x, g).map(|(_, o)| o);
                match lbfgs.step(&mut f, &mut theta, obj, &grad) {
                    Ok(_) => {}
                    Err(Error::LineSearchFailed(msg)) => {
                        debug!("line search stopped at epoch {}: {msg}", epoch + 1);
                        line_search_failed = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            Optimizer::Gd | Optimizer::Adam if full_batch => {
                if opts.optimizer == Optimizer::Gd {
                    gd_update(&mut theta, &grad, lr);
                } else {
                    adam.update(&mut theta, &grad, lr);
                }
            }
            Optimizer::Gd | Optimizer::Adam => {
                let plan = batch_plan(n, opts.batch_size, true, opts.seed, epoch as u64)?;
                for idx in plan {
                    let batch = data.select(&idx)?;
                    let _ = model.nll_at(&theta, &batch, Some(&mut batch_grad))?;
                    let b = idx.len() as f64;
                    batch_grad.iter_mut().for_each(|g| *g /= b);
                    let mut pen_grad = vec![0.0; p];
                    model.penalty_at(&theta, Some(&mut pen_grad));
                    for (g, pg) in batch_grad.iter_mut().zip(&pen_grad) {
                        *g += pg / n as f64;
                    }
                    if opts.optimizer == Optimizer::Gd {
                        gd_update(&mut theta, &batch_grad, lr);
                    } else {
                        adam.update(&mut theta, &batch_grad, lr);
                    }
                }
            }
        }
        if line_search_failed {
            theta = before;
            stop = StopReason::LineSearch;
            converged = inf_norm(&grad) <= 1e-5;
            if !converged {
                warnings.push(format!(
                    "line search failed at epoch {} with gradient norm {:.3e}",
                    epoch + 1,
                    inf_norm(&grad)
                ));
            }
            break;
        }
        let mut new_grad = vec![0.0; p];
        let evaluated = if theta.iter().all(|t| t.is_finite()) {
            full_objective(model, data, &theta, &mut new_grad).ok()
        } else {
            None
        };
        let Some((new_nll, new_obj)) = evaluated.filter(|(v, o)| v.is_finite() && o.is_finite()) else {
            if halvings == 5 || opts.optimizer == Optimizer::Lbfgs {
                return Err(Error::Diverged(epoch + 1));
            }
            halvings += 1;
            lr /= 2.0;
            warn!("non-finite objective at epoch {}; learning rate halved to {lr}", epoch + 1);
            theta = before;
            adam = Adam::new(p);
            continue;
        };
        nll = new_nll;
        obj = new_obj;
        grad = new_grad;
        epoch += 1;
        epoch_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        nlls.push(nll);
        trace.push(TraceRow {
            epoch,
            nll,
            grad_norm: inf_norm(&grad),
        });
        if let Some(es) = opts.early_stop {
            if es.fires(&nlls) {
                stop = StopReason::EarlyStop;
                converged = true;
                break;
            }
        }
    }
    if stop == StopReason::EpochLimit && epoch == epochs && inf_norm(&grad) <= opts.grad_tol && epochs > 0 {
        stop = StopReason::GradientTolerance;
        converged = true;
    }
    if halvings > 0 {
        warnings.push(format!("learning rate halved {halvings} time(s) to {lr}"));
    }
    if nll / (n as f64) < 1e-6 && model.num_params() > 0 {
        warnings.push("chosen items are predicted with probability ~1; the data may be separable and the maximum likelihood estimate may not exist".into());
    }
    model.set_theta(&theta)?;
    warnings.extend(model.warnings());
    for w in &warnings {
        warn!("{w}");
    }

    let se = if opts.compute_se {
        match standard_errors(model, data) {
            Ok(se) => Some(se),
            Err(e) => {
                warnings.push(format!("standard errors unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let grad_norm = inf_norm(&grad);
    Ok(FitResult {
        theta,
        nll,
        objective: obj * n as f64,
        trace,
        epoch_ms,
        epochs: epoch,
        wall_seconds: start.elapsed().as_secs_f64(),
        converged,
        stop_reason: stop,
        grad_norm,
        se,
        learning_rate: lr,
        warnings,
    })
}

/// Hessian of the NLL by central differences of the analytic gradient.
pub fn hessian<M: Estimable>(model: &M, data: &M::Data, h: f64) -> Result<DMatrix<f64>> {
    let theta = model.theta().to_vec();
    let p = theta.len();
    let mut hm = DMatrix::zeros(p, p);
    let mut gp = vec![0.0; p];
    let mut gm = vec![0.0; p];
    let mut x = theta.clone();
    for j in 0..p {
        x[j] = theta[j] + h;
        model.nll_at(&x, data, Some(&mut gp))?;
        x[j] = theta[j] - h;
        model.nll_at(&x, data, Some(&mut gm))?;
        x[j] = theta[j];
        for i in 0..p {
            hm[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    Ok((&hm + hm.transpose()) * 0.5)
}

/// `sqrt(diag(H^-1))` of the NLL at the model's current parameters, aligned
/// with the internal parameter vector.
pub fn standard_errors<M: Estimable>(model: &M, data: &M::Data) -> Result<Vec<f64>> {
    if model.regularization_weight() > 0.0 {
        return Err(Error::RegularizedModel);
    }
    let h = hessian(model, data, 1e-5)?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHessian);
    }
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(min > 1e-10 * max.max(1.0)) {
        return Err(Error::SingularHessian);
    }
    let chol = h.cholesky().ok_or(Error::SingularHessian)?;
    let inv = chol.inverse();
    (0..inv.nrows())
        .map(|i| {
            let v = inv[(i, i)];
            if v > 0.0 && v.is_finite() {
                Ok(v.sqrt())
            } else {
                Err(Error::SingularHessian)
            }
        })
        .collect()
}
