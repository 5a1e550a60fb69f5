//! Conditional logit: linear utilities, availability-masked softmax within
//! each category, log-likelihood and its analytic gradient.

use std::ops::Range;

use ndarray::{Array2, ArrayD};
use rayon::prelude::*;

use crate::dataset::{CategoryPartition, ChoiceDataset};
use crate::error::{Error, Result};
use crate::formula::{parse_formula, resolve, ModelSpec, Regularization};
use crate::params::{Init, LinearUtility, ParamStore};

/// Log-probability reported for unavailable items.
pub const UNAVAILABLE_LOG_PROB: f64 = -1e30;

/// Records per evaluation shard. Fixed so reductions do not depend on the
/// number of worker threads.
pub(crate) const SHARD: usize = 1024;

/// Sums `f` over fixed-size record shards, in parallel, reducing partial
/// values and gradients in shard order.
pub(crate) fn sharded_sum<F>(n: usize, num_params: usize, grad: Option<&mut [f64]>, f: F) -> Result<f64>
where
    F: Fn(Range<usize>, Option<&mut [f64]>) -> Result<f64> + Sync,
{
    let want_grad = grad.is_some();
    let shards: Vec<Range<usize>> = (0..n.div_ceil(SHARD))
        .map(|s| s * SHARD..((s + 1) * SHARD).min(n))
        .collect();
    let partials: Vec<Result<(f64, Vec<f64>)>> = shards
        .into_par_iter()
        .map(|range| {
            let mut g = if want_grad { vec![0.0; num_params] } else { Vec::new() };
            let v = f(range, want_grad.then_some(g.as_mut_slice()))?;
            Ok((v, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    for p in partials {
        let (v, g) = p?;
        total += v;
        if let Some(acc) = grad.as_deref_mut() {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    Ok(total)
}

/// Conditional logit model.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalLogit {
    params: ParamStore,
    categories: Option<CategoryPartition>,
}

impl ConditionalLogit {
    pub fn new(spec: ModelSpec) -> Self {
        Self::with_init(spec, Init::Zeros)
    }

    pub fn with_init(spec: ModelSpec, init: Init) -> Self {
        Self {
            params: ParamStore::new(spec, init),
            categories: None,
        }
    }

    /// Parses `formula` and resolves it against `data`.
    pub fn from_formula(
        formula: &str,
        data: &ChoiceDataset,
        num_items: usize,
        num_users: Option<usize>,
    ) -> Result<Self> {
        let spec = resolve(&parse_formula(formula)?, data, num_items, num_users)?;
        let model = Self::new(spec);
        model.check_data(data)?;
        Ok(model)
    }

    /// Items are normalized within each category. Overrides the dataset's partition.
    pub fn with_categories(mut self, c: CategoryPartition) -> Result<Self> {
        if c.num_items() != self.num_items() {
            return Err(Error::BadCategories(format!(
                "partition covers {} items, model has {}",
                c.num_items(),
                self.num_items()
            )));
        }
        self.categories = Some(c);
        Ok(self)
    }

    pub fn with_regularization(mut self, reg: Option<Regularization>) -> Self {
        let spec = self.params.spec().clone().with_regularization(reg);
        let theta = self.params.values().to_vec();
        self.params = ParamStore::new(spec, Init::Zeros);
        self.params.set_values(&theta).expect("same layout");
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        self.params.spec()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn theta(&self) -> &[f64] {
        self.params.values()
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        self.params.set_values(theta)
    }

    pub fn num_items(&self) -> usize {
        self.spec().num_items
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn regularization(&self) -> Option<Regularization> {
        self.spec().regularization
    }

    pub fn check_data(&self, data: &ChoiceDataset) -> Result<()> {
        if data.num_items() != self.num_items() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} items, dataset has {}",
                self.num_items(),
                data.num_items()
            )));
        }
        self.spec().check_dataset(data)
    }

    fn partition<'a>(&'a self, data: &'a ChoiceDataset) -> Option<&'a CategoryPartition> {
        self.categories.as_ref().or(data.categories())
    }

    /// `B x I` utilities before availability masking.
    pub fn utilities(&self, data: &ChoiceDataset) -> Result<Array2<f64>> {
        self.check_data(data)?;
        let lin = LinearUtility::new(self.spec(), self.theta(), data)?;
        let items = self.num_items();
        Ok(Array2::from_shape_fn((data.len(), items), |(r, i)| {
            lin.utility(data.user_of(r), i, data.session_of(r))
        }))
    }

    /// Masked log-probabilities (`B x I`, unavailable entries set to
    /// [`UNAVAILABLE_LOG_PROB`]) and the chosen item's log-probability per record.
    pub fn log_prob(&self, data: &ChoiceDataset) -> Result<(Array2<f64>, Vec<f64>)> {
        let mu = self.utilities(data)?;
        let single;
        let part = match self.partition(data) {
            Some(p) => p,
            None => {
                single = CategoryPartition::single(self.num_items());
                &single
            }
        };
        let mut out = Array2::from_elem(mu.dim(), UNAVAILABLE_LOG_PROB);
        let mut chosen = Vec::with_capacity(data.len());
        for r in 0..data.len() {
            let s = data.session_of(r);
            let row = mu.row(r);
            for c in 0..part.num_categories() {
                let avail: Vec<usize> = part
                    .items(c)
                    .iter()
                    .copied()
                    .filter(|&i| data.is_available(s, i))
                    .collect();
                if avail.is_empty() {
                    return Err(Error::EmptyChoiceSet(r));
                }
                let lse = log_sum_exp(avail.iter().map(|&i| row[i]));
                for &i in &avail {
                    out[[r, i]] = row[i] - lse;
                }
            }
            chosen.push(out[[r, data.item_of(r)]]);
        }
        Ok((out, chosen))
    }

    /// Negative log-likelihood at the stored parameters.
    pub fn neg_log_likelihood(&self, data: &ChoiceDataset) -> Result<f64> {
        self.nll_at(self.theta(), data, None)
    }

    /// Gradient of the negative log-likelihood at the stored parameters.
    pub fn gradient(&self, data: &ChoiceDataset) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.num_params()];
        self.nll_at(self.theta(), data, Some(&mut g))?;
        Ok(g)
    }

    /// NLL plus the regularization penalty.
    pub fn objective(&self, data: &ChoiceDataset) -> Result<f64> {
        let nll = self.neg_log_likelihood(data)?;
        Ok(match self.regularization() {
            Some(r) if r.weight != 0.0 => nll + r.apply(self.theta(), None),
            _ => nll,
        })
    }

    /// NLL at an arbitrary parameter vector; writes the gradient when asked.
    pub fn nll_at(&self, theta: &[f64], data: &ChoiceDataset, grad: Option<&mut [f64]>) -> Result<f64> {
        if theta.len() != self.num_params() {
            return Err(Error::ParamLength {
                got: theta.len(),
                expected: self.num_params(),
            });
        }
        self.check_data(data)?;
        let lin = LinearUtility::new(self.spec(), theta, data)?;
        let single;
        let part = match self.partition(data) {
            Some(p) => p,
            None => {
                single = CategoryPartition::single(self.num_items());
                &single
            }
        };
        sharded_sum(data.len(), theta.len(), grad, |range, mut g| {
            let mut total = 0.0;
            let mut mu = Vec::new();
            let mut prob = Vec::new();
            for r in range {
                let (u, s, chosen) = (data.user_of(r), data.session_of(r), data.item_of(r));
                let members = part.items(part.category_of(chosen));
                mu.clear();
                for &i in members {
                    mu.push(if data.is_available(s, i) {
                        lin.utility(u, i, s)
                    } else {
                        f64::NEG_INFINITY
                    });
                }
                let lse = log_sum_exp(mu.iter().copied().filter(|m| m.is_finite()));
                let pos = members.iter().position(|&i| i == chosen).expect("chosen in own category");
                total -= mu[pos] - lse;
                if let Some(g) = g.as_deref_mut() {
                    prob.clear();
                    prob.extend(mu.iter().map(|m| (m - lse).exp()));
                    for (j, &i) in members.iter().enumerate() {
                        let w = prob[j] - f64::from(u8::from(i == chosen));
                        lin.accumulate(u, i, s, w, g);
                    }
                }
            }
            Ok(total)
        })
    }

    /// Coefficient by `<observable>[<variation>]` name.
    pub fn get_coefficient(&self, name: &str) -> Result<ArrayD<f64>> {
        self.params.get(name)
    }
}

/// Stable `log(sum(exp(x)))`; `-inf` for an empty input.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
