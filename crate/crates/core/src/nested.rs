//! Two-level nested logit.
//!
//! Utility splits into a nest part `W_k` and an item part `T_i`. With
//! inclusive values `IV_k = log sum_{j in k, available} exp(T_j / lambda_k)`:
//!
//! `log P(i) = T_i/lambda_k - IV_k + W_k + lambda_k IV_k - log sum_l exp(W_l + lambda_l IV_l)`
//!
//! `lambda` is stored as `log lambda` so it stays positive during optimization.

use std::fmt;

use ndarray::{Array2, ArrayD, ArrayView2, IxDyn};

use crate::clogit::{log_sum_exp, sharded_sum, UNAVAILABLE_LOG_PROB};
use crate::dataset::{ChoiceDataset, JointDataset, Observable};
use crate::error::{Error, Result};
use crate::formula::{parse_formula_allow_empty, resolve, ModelSpec, Regularization};
use crate::params::{block_view, squeeze, LinearUtility};

pub const NEST_MEMBER: &str = "nest";
pub const ITEM_MEMBER: &str = "item";

/// Partition of items into nests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NestStructure {
    nests: Vec<Vec<usize>>,
    nest_of: Vec<usize>,
    shared_lambda: bool,
}

impl NestStructure {
    /// `nests[k]` lists the items of nest `k`. Nests must be nonempty, disjoint
    /// and together cover `0..I`.
    pub fn new(nests: Vec<Vec<usize>>, shared_lambda: bool) -> Result<Self> {
        if nests.is_empty() {
            return Err(Error::BadNests("no nests".into()));
        }
        let num_items: usize = nests.iter().map(Vec::len).sum();
        let mut nest_of = vec![usize::MAX; num_items];
        for (k, items) in nests.iter().enumerate() {
            if items.is_empty() {
                return Err(Error::BadNests(format!("nest {k} is empty")));
            }
            for &i in items {
                if i >= num_items {
                    return Err(Error::BadNests(format!(
                        "item {i} in nest {k} is outside 0..{num_items}"
                    )));
                }
                if nest_of[i] != usize::MAX {
                    return Err(Error::BadNests(format!("item {i} appears in more than one nest")));
                }
                nest_of[i] = k;
            }
        }
        Ok(Self {
            nests,
            nest_of,
            shared_lambda,
        })
    }

    pub fn num_nests(&self) -> usize {
        self.nests.len()
    }

    pub fn num_items(&self) -> usize {
        self.nest_of.len()
    }

    pub fn nest_of(&self, item: usize) -> usize {
        self.nest_of[item]
    }

    pub fn items(&self, nest: usize) -> &[usize] {
        &self.nests[nest]
    }

    pub fn nests(&self) -> &[Vec<usize>] {
        &self.nests
    }

    pub fn shared_lambda(&self) -> bool {
        self.shared_lambda
    }

    pub fn num_lambdas(&self) -> usize {
        if self.shared_lambda {
            1
        } else {
            self.num_nests()
        }
    }

    #[inline]
    fn lambda_slot(&self, nest: usize) -> usize {
        if self.shared_lambda {
            0
        } else {
            nest
        }
    }

    /// Inclusive values for one record. `t[i] = -inf` marks an unavailable item;
    /// a nest without available items gets `-inf`.
    pub fn inclusive_values_row(&self, t: &[f64], lambda: &[f64], out: &mut [f64]) {
        for (k, items) in self.nests.iter().enumerate() {
            let l = lambda[k];
            out[k] = log_sum_exp(
                items
                    .iter()
                    .map(|&j| t[j])
                    .filter(|v| *v > f64::NEG_INFINITY)
                    .map(|v| v / l),
            );
        }
    }

    /// `B x K` inclusive values; `lambda` has one entry per nest.
    pub fn inclusive_values(&self, t: ArrayView2<f64>, lambda: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((t.nrows(), self.num_nests()));
        let mut row = Vec::with_capacity(self.num_items());
        for (b, mut o) in out.rows_mut().into_iter().enumerate() {
            row.clear();
            row.extend(t.row(b).iter().copied());
            self.inclusive_values_row(&row, lambda, o.as_slice_mut().expect("contiguous"));
        }
        out
    }
}

/// Which half of a nested model a coefficient belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Nest,
    Item,
}

impl Level {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nest" => Some(Level::Nest),
            "item" => Some(Level::Item),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Nest => "nest",
            Level::Item => "item",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Builds the `nest` member of a joint dataset: same records, users and
/// sessions as `item`, with the chosen nest as the "item" and nest-level
/// observables (item-varying ones need one row per nest).
pub fn nest_dataset(
    item: &ChoiceDataset,
    nests: &NestStructure,
    observables: impl IntoIterator<Item = Observable>,
) -> Result<ChoiceDataset> {
    let chosen = item.item_index().iter().map(|&i| nests.nest_of(i)).collect();
    let mut b = ChoiceDataset::builder(chosen)
        .session_index(item.session_index().to_vec())
        .num_items(nests.num_nests())
        .num_sessions(item.num_sessions())
        .observables(observables);
    if let Some(u) = item.user_index() {
        b = b.user_index(u.to_vec()).num_users(item.num_users());
    }
    b.build()
}

/// Joint dataset holding `item` and, when given, `nest` members.
pub fn joint(item: ChoiceDataset, nest: Option<ChoiceDataset>) -> Result<JointDataset> {
    let mut members = vec![(ITEM_MEMBER, item)];
    if let Some(n) = nest {
        members.insert(0, (NEST_MEMBER, n));
    }
    JointDataset::new(members)
}

fn member<'a>(data: &'a JointDataset, name: &str) -> Result<&'a ChoiceDataset> {
    data.get(name)
        .ok_or_else(|| Error::EmptyInput(format!("joint dataset has no `{name}` member")))
}

/// Nested logit model with parameters `[nest coefs | item coefs | log lambda]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedLogit {
    nests: NestStructure,
    nest_spec: ModelSpec,
    item_spec: ModelSpec,
    regularization: Option<Regularization>,
    theta: Vec<f64>,
}

/// Per-record scratch space.
struct Work {
    t: Vec<f64>,
    lambda: Vec<f64>,
    w: Vec<f64>,
    iv: Vec<f64>,
    v: Vec<f64>,
    lse: f64,
}

impl NestedLogit {
    pub fn new(nests: NestStructure, nest_spec: ModelSpec, item_spec: ModelSpec) -> Result<Self> {
        if item_spec.is_empty() {
            return Err(Error::EmptyItemModel);
        }
        if nest_spec.num_items != nests.num_nests() {
            return Err(Error::ShapeMismatch(format!(
                "nest-level layout has {} entries, there are {} nests",
                nest_spec.num_items,
                nests.num_nests()
            )));
        }
        if item_spec.num_items != nests.num_items() {
            return Err(Error::ShapeMismatch(format!(
                "item-level layout has {} items, nests cover {}",
                item_spec.num_items,
                nests.num_items()
            )));
        }
        let n = nest_spec.total_params() + item_spec.total_params() + nests.num_lambdas();
        Ok(Self {
            nests,
            nest_spec,
            item_spec,
            regularization: None,
            theta: vec![0.0; n],
        })
    }

    /// Resolves both formulas against the joint dataset. The nest formula may be
    /// empty, in which case the `nest` member is optional.
    pub fn from_formulas(
        nest_formula: &str,
        item_formula: &str,
        data: &JointDataset,
        nests: NestStructure,
        num_users: Option<usize>,
    ) -> Result<Self> {
        let item_terms = parse_formula_allow_empty(item_formula)?;
        if item_terms.is_empty() {
            return Err(Error::EmptyItemModel);
        }
        let nest_terms = parse_formula_allow_empty(nest_formula)?;
        let item_ds = member(data, ITEM_MEMBER)?;
        let item_spec = resolve(&item_terms, item_ds, nests.num_items(), num_users)?;
        let nest_spec = if nest_terms.is_empty() {
            ModelSpec::empty(nests.num_nests(), item_spec.num_users)
        } else {
            resolve(&nest_terms, member(data, NEST_MEMBER)?, nests.num_nests(), num_users)?
        };
        let model = Self::new(nests, nest_spec, item_spec)?;
        model.check_data(data)?;
        Ok(model)
    }

    pub fn with_regularization(mut self, reg: Option<Regularization>) -> Self {
        self.regularization = reg;
        self
    }

    pub fn regularization(&self) -> Option<Regularization> {
        self.regularization
    }

    pub fn nests(&self) -> &NestStructure {
        &self.nests
    }

    pub fn nest_spec(&self) -> &ModelSpec {
        &self.nest_spec
    }

    pub fn item_spec(&self) -> &ModelSpec {
        &self.item_spec
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Number of coefficients excluding the lambda block.
    pub fn num_coefficients(&self) -> usize {
        self.nest_spec.total_params() + self.item_spec.total_params()
    }

    /// Internal parameter vector (lambda entries in log space).
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::ParamLength {
                got: theta.len(),
                expected: self.theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Sets the lambda block from positive values (1 or K of them).
    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.nests.num_lambdas() {
            return Err(Error::ParamLength {
                got: lambda.len(),
                expected: self.nests.num_lambdas(),
            });
        }
        if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::BadNests("lambda must be positive".into()));
        }
        let start = self.num_coefficients();
        for (t, l) in self.theta[start..].iter_mut().zip(lambda) {
            *t = l.ln();
        }
        Ok(())
    }

    /// Lambda block as stored: one value if shared, else one per nest.
    pub fn lambda(&self) -> Vec<f64> {
        self.theta[self.num_coefficients()..].iter().map(|r| r.exp()).collect()
    }

    fn lambdas_at(&self, theta: &[f64], out: &mut Vec<f64>) {
        let rho = &theta[self.num_coefficients()..];
        out.clear();
        out.extend((0..self.nests.num_nests()).map(|k| rho[self.nests.lambda_slot(k)].exp()));
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], &'t [f64]) {
        let nw = self.nest_spec.total_params();
        let nt = self.item_spec.total_params();
        (&theta[..nw], &theta[nw..nw + nt])
    }

    pub fn check_data(&self, data: &JointDataset) -> Result<()> {
        let item = member(data, ITEM_MEMBER)?;
        if item.num_items() != self.nests.num_items() {
            return Err(Error::ShapeMismatch(format!(
                "nests cover {} items, item dataset has {}",
                self.nests.num_items(),
                item.num_items()
            )));
        }
        self.item_spec.check_dataset(item)?;
        if !self.nest_spec.is_empty() {
            self.nest_spec.check_dataset(member(data, NEST_MEMBER)?)?;
        }
        Ok(())
    }

    fn nest_member<'a>(&self, data: &'a JointDataset) -> Result<Option<&'a ChoiceDataset>> {
        if self.nest_spec.is_empty() {
            Ok(None)
        } else {
            member(data, NEST_MEMBER).map(Some)
        }
    }

    fn new_work(&self, theta: &[f64]) -> Work {
        let mut lambda = Vec::new();
        self.lambdas_at(theta, &mut lambda);
        let k = self.nests.num_nests();
        Work {
            t: vec![0.0; self.nests.num_items()],
            lambda,
            w: vec![0.0; k],
            iv: vec![0.0; k],
            v: vec![0.0; k],
            lse: 0.0,
        }
    }

    /// Fills `work` for record `r`.
    fn eval_record(
        &self,
        r: usize,
        item: &ChoiceDataset,
        nest: Option<&ChoiceDataset>,
        lw: Option<&LinearUtility>,
        lt: &LinearUtility,
        work: &mut Work,
    ) -> Result<()> {
        let (u, s) = (item.user_of(r), item.session_of(r));
        for i in 0..work.t.len() {
            work.t[i] = if item.is_available(s, i) {
                lt.utility(u, i, s)
            } else {
                f64::NEG_INFINITY
            };
        }
        match (nest, lw) {
            (Some(nd), Some(lw)) => {
                let (un, sn) = (nd.user_of(r), nd.session_of(r));
                for k in 0..work.w.len() {
                    work.w[k] = lw.utility(un, k, sn);
                }
            }
            _ => work.w.fill(0.0),
        }
        self.nests.inclusive_values_row(&work.t, &work.lambda, &mut work.iv);
        for k in 0..work.v.len() {
            work.v[k] = if work.iv[k] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                work.w[k] + work.lambda[k] * work.iv[k]
            };
        }
        work.lse = log_sum_exp(work.v.iter().copied().filter(|v| *v > f64::NEG_INFINITY));
        if work.lse == f64::NEG_INFINITY {
            return Err(Error::EmptyChoiceSet(r));
        }
        Ok(())
    }

    fn log_prob_of(&self, i: usize, work: &Work) -> f64 {
        if work.t[i] == f64::NEG_INFINITY {
            return UNAVAILABLE_LOG_PROB;
        }
        let k = self.nests.nest_of(i);
        work.t[i] / work.lambda[k] - work.iv[k] + work.v[k] - work.lse
    }

    /// `B x I` log-probabilities (unavailable entries at [`UNAVAILABLE_LOG_PROB`])
    /// and the chosen item's log-probability per record.
    pub fn log_prob(&self, data: &JointDataset) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check_data(data)?;
        let item = member(data, ITEM_MEMBER)?;
        let nest = self.nest_member(data)?;
        let (tw, tt) = self.split(&self.theta);
        let lt = LinearUtility::new(&self.item_spec, tt, item)?;
        let lw = nest.map(|nd| LinearUtility::new(&self.nest_spec, tw, nd)).transpose()?;
        let mut work = self.new_work(&self.theta);
        let mut out = Array2::zeros((item.len(), self.nests.num_items()));
        let mut chosen = Vec::with_capacity(item.len());
        for r in 0..item.len() {
            self.eval_record(r, item, nest, lw.as_ref(), &lt, &mut work)?;
            for i in 0..self.nests.num_items() {
                out[[r, i]] = self.log_prob_of(i, &work);
            }
            chosen.push(out[[r, item.item_of(r)]]);
        }
        Ok((out, chosen))
    }

    /// `B x K` inclusive values at the current parameters.
    pub fn inclusive_values(&self, data: &JointDataset) -> Result<Array2<f64>> {
        self.check_data(data)?;
        let item = member(data, ITEM_MEMBER)?;
        let (_, tt) = self.split(&self.theta);
        let lt = LinearUtility::new(&self.item_spec, tt, item)?;
        let t = Array2::from_shape_fn((item.len(), self.nests.num_items()), |(r, i)| {
            let s = item.session_of(r);
            if item.is_available(s, i) {
                lt.utility(item.user_of(r), i, s)
            } else {
                f64::NEG_INFINITY
            }
        });
        let mut lambda = Vec::new();
        self.lambdas_at(&self.theta, &mut lambda);
        Ok(self.nests.inclusive_values(t.view(), &lambda))
    }

    pub fn neg_log_likelihood(&self, data: &JointDataset) -> Result<f64> {
        self.nll_at(&self.theta, data, None)
    }

    /// Gradient with respect to the internal parameter vector.
    pub fn gradient(&self, data: &JointDataset) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.num_params()];
        self.nll_at(&self.theta, data, Some(&mut g))?;
        Ok(g)
    }

    /// Coefficient penalty at `theta`; lambda is not penalized.
    pub fn penalty_at(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self.regularization {
            Some(r) if r.weight != 0.0 => {
                let n = self.num_coefficients();
                r.apply(&theta[..n], grad.map(|g| &mut g[..n]))
            }
            _ => 0.0,
        }
    }

    pub fn objective(&self, data: &JointDataset) -> Result<f64> {
        let nll = self.neg_log_likelihood(data)?;
        Ok(match self.regularization {
            Some(r) if r.weight != 0.0 => nll + self.penalty_at(&self.theta, None),
            _ => nll,
        })
    }

    pub fn nll_at(&self, theta: &[f64], data: &JointDataset, grad: Option<&mut [f64]>) -> Result<f64> {
        if theta.len() != self.num_params() {
            return Err(Error::ParamLength {
                got: theta.len(),
                expected: self.num_params(),
            });
        }
        self.check_data(data)?;
        let item = member(data, ITEM_MEMBER)?;
        let nest = self.nest_member(data)?;
        let (tw, tt) = self.split(theta);
        let lt = LinearUtility::new(&self.item_spec, tt, item)?;
        let lw = nest.map(|nd| LinearUtility::new(&self.nest_spec, tw, nd)).transpose()?;
        let nw = self.nest_spec.total_params();
        let nc = self.num_coefficients();
        let nests = &self.nests;
        sharded_sum(item.len(), theta.len(), grad, |range, mut g| {
            let mut work = self.new_work(theta);
            let mut q = vec![0.0; nests.num_items()];
            let mut e = vec![0.0; nests.num_nests()];
            let mut total = 0.0;
            for r in range {
                self.eval_record(r, item, nest, lw.as_ref(), &lt, &mut work)?;
                let c = item.item_of(r);
                total -= self.log_prob_of(c, &work);
                let Some(g) = g.as_deref_mut() else {
                    continue;
                };
                let (gw, rest) = g.split_at_mut(nw);
                let (gt, grho) = rest.split_at_mut(nc - nw);
                let m = nests.nest_of(c);
                let lam = &work.lambda;
                e.fill(0.0);
                for i in 0..q.len() {
                    let k = nests.nest_of(i);
                    q[i] = if work.t[i] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (work.t[i] / lam[k] - work.iv[k]).exp()
                    };
                    if q[i] > 0.0 {
                        e[k] += q[i] * work.t[i];
                    }
                }
                let (u, s) = (item.user_of(r), item.session_of(r));
                for j in 0..q.len() {
                    if q[j] == 0.0 && work.t[j] == f64::NEG_INFINITY {
                        continue;
                    }
                    let k = nests.nest_of(j);
                    let big_q = (work.v[k] - work.lse).exp();
                    let mut d = -big_q * q[j];
                    if k == m {
                        d += (lam[m] - 1.0) * q[j] / lam[m];
                    }
                    if j == c {
                        d += 1.0 / lam[m];
                    }
                    lt.accumulate(u, j, s, -d, gt);
                }
                for k in 0..nests.num_nests() {
                    let big_q = if work.v[k] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (work.v[k] - work.lse).exp()
                    };
                    if let (Some(lw), Some(nd)) = (lw.as_ref(), nest) {
                        let dw = f64::from(u8::from(k == m)) - big_q;
                        lw.accumulate(nd.user_of(r), k, nd.session_of(r), -dw, gw);
                    }
                    let mut dl = 0.0;
                    if k == m {
                        dl += -work.t[c] / (lam[m] * lam[m]) + work.iv[m]
                            - (lam[m] - 1.0) * e[m] / (lam[m] * lam[m]);
                    }
                    if big_q > 0.0 {
                        dl -= big_q * (work.iv[k] - e[k] / lam[k]);
                    }
                    grho[nests.lambda_slot(k)] -= lam[k] * dl;
                }
            }
            Ok(total)
        })
    }

    /// Coefficient by name and level. `"lambda"` ignores the level and is a
    /// scalar when shared, else a vector over nests.
    pub fn get_coefficient(&self, name: &str, level: Option<Level>) -> Result<ArrayD<f64>> {
        if name == "lambda" {
            let l = self.lambda();
            return Ok(if self.nests.shared_lambda {
                ArrayD::from_elem(IxDyn(&[]), l[0])
            } else {
                ArrayD::from_shape_vec(IxDyn(&[l.len()]), l).expect("length")
            });
        }
        let level = level.ok_or_else(|| Error::MissingLevel(name.to_string()))?;
        let (tw, tt) = self.split(&self.theta);
        let (spec, theta) = match level {
            Level::Nest => (&self.nest_spec, tw),
            Level::Item => (&self.item_spec, tt),
        };
        let c = spec
            .coefficient(name)
            .ok_or_else(|| Error::UnknownCoefficient(format!("{name} ({level} level)")))?;
        Ok(squeeze(c, block_view(c, theta)))
    }

    /// Lambda estimates outside `(0, 1]`.
    pub fn lambda_warnings(&self) -> Vec<String> {
        self.lambda()
            .iter()
            .enumerate()
            .filter(|(_, l)| !(**l > 0.0 && **l <= 1.0))
            .map(|(k, l)| {
                let which = if self.nests.shared_lambda {
                    "shared lambda".to_string()
                } else {
                    format!("lambda for nest {k}")
                };
                format!("{which} = {l:.6} lies outside (0, 1]; inconsistent with utility maximization")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clogit::ConditionalLogit;
    use crate::dataset::Availability;
    use ndarray::array;

    fn items_only(chosen: Vec<usize>, num_items: usize) -> JointDataset {
        let ds = ChoiceDataset::builder(chosen).num_items(num_items).build().unwrap();
        joint(ds, None).unwrap()
    }

    fn uniform_half() -> NestedLogit {
        let nests = NestStructure::new(vec![vec![0, 1], vec![2]], true).unwrap();
        let data = items_only(vec![2], 3);
        let mut m = NestedLogit::from_formulas("", "(1|item-full)", &data, nests, None).unwrap();
        m.set_lambda(&[0.5]).unwrap();
        m
    }

    #[test]
    fn hand_probabilities() {
        let m = uniform_half();
        let data = items_only(vec![2], 3);
        let (lp, chosen) = m.log_prob(&data).unwrap();
        let r2 = 2f64.sqrt();
        let want = [r2 / (2.0 * (r2 + 1.0)), r2 / (2.0 * (r2 + 1.0)), 1.0 / (r2 + 1.0)];
        for i in 0..3 {
            assert!((lp[[0, i]].exp() - want[i]).abs() < 1e-12);
        }
        assert!((chosen[0] - (1.0 / (r2 + 1.0)).ln()).abs() < 1e-12);
        assert!((m.neg_log_likelihood(&data).unwrap() - 0.881373587).abs() < 1e-8);
        let iv = m.inclusive_values(&data).unwrap();
        assert!((iv[[0, 0]] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(iv[[0, 1]], 0.0);
    }

    #[test]
    fn singleton_nests_have_scaled_inclusive_values() {
        let nests = NestStructure::new(vec![vec![1], vec![0], vec![2]], false).unwrap();
        let t = array![[0.3, -1.2, 2.0]];
        let iv = nests.inclusive_values(t.view(), &[0.5, 2.0, 0.9]);
        assert!((iv[[0, 0]] - -1.2 / 0.5).abs() < 1e-15);
        assert!((iv[[0, 1]] - 0.3 / 2.0).abs() < 1e-15);
        assert!((iv[[0, 2]] - 2.0 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn unavailable_nest_gets_zero_mass() {
        let nests = NestStructure::new(vec![vec![0, 1], vec![2]], false).unwrap();
        let ds = ChoiceDataset::builder(vec![0])
            .session_index(vec![0])
            .availability(Availability::from_rows(&[vec![true, true, false]]).unwrap())
            .build()
            .unwrap();
        let data = joint(ds, None).unwrap();
        let mut m = NestedLogit::from_formulas("", "(1|item-full)", &data, nests, None).unwrap();
        m.set_lambda(&[0.4, 0.7]).unwrap();
        let (lp, _) = m.log_prob(&data).unwrap();
        assert_eq!(lp[[0, 2]], UNAVAILABLE_LOG_PROB);
        assert!((lp[[0, 0]].exp() + lp[[0, 1]].exp() - 1.0).abs() < 1e-12);
        let iv = m.inclusive_values(&data).unwrap();
        assert_eq!(iv[[0, 1]], f64::NEG_INFINITY);
    }

    #[test]
    fn unit_lambda_matches_conditional_logit() {
        let nests = NestStructure::new(vec![vec![0, 2], vec![1, 3]], false).unwrap();
        let ds = ChoiceDataset::builder(vec![0, 3, 1, 2]).build().unwrap();
        let data = joint(ds.clone(), None).unwrap();
        let mut m = NestedLogit::from_formulas("", "(1|item-full)", &data, nests, None).unwrap();
        let t = [0.4, -1.0, 2.0, 0.1];
        let mut theta = t.to_vec();
        theta.extend([0.0, 0.0]);
        m.set_theta(&theta).unwrap();
        let mut c = ConditionalLogit::from_formula("(1|item-full)", &ds, 4, None).unwrap();
        c.set_theta(&t).unwrap();
        let a = m.neg_log_likelihood(&data).unwrap();
        let b = c.neg_log_likelihood(&ds).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn construction_errors() {
        let data = items_only(vec![0], 2);
        let nests = NestStructure::new(vec![vec![0], vec![1]], true).unwrap();
        let err = NestedLogit::from_formulas("", "", &data, nests.clone(), None).unwrap_err();
        assert_eq!(err.name(), "EmptyItemModel");
        assert_eq!(NestStructure::new(vec![vec![0], vec![0]], true).unwrap_err().name(), "BadNests");
        assert_eq!(NestStructure::new(vec![vec![0], vec![]], true).unwrap_err().name(), "BadNests");
        assert_eq!(NestStructure::new(vec![vec![0, 3]], true).unwrap_err().name(), "BadNests");
        let m = NestedLogit::from_formulas("", "(1|item)", &data, nests, None).unwrap();
        assert_eq!(m.get_coefficient("intercept[item]", None).unwrap_err().name(), "MissingLevel");
        assert_eq!(
            m.get_coefficient("intercept[item]", Some(Level::Nest)).unwrap_err().name(),
            "UnknownCoefficient"
        );
        let lam = m.get_coefficient("lambda", Some(Level::Item)).unwrap();
        assert_eq!(lam.ndim(), 0);
        assert_eq!(lam[IxDyn(&[])], 1.0);
    }

    #[test]
    fn nest_level_item_variation_counts_nests() {
        let nests = NestStructure::new(vec![vec![0, 1, 2], vec![3, 4]], false).unwrap();
        let ds = ChoiceDataset::builder(vec![0, 4, 3])
            .user_index(vec![0, 1, 2])
            .build()
            .unwrap();
        let nd = nest_dataset(&ds, &nests, []).unwrap();
        let data = joint(ds, Some(nd)).unwrap();
        let m = NestedLogit::from_formulas("(1|item) + (1|user)", "(1|item)", &data, nests, None).unwrap();
        assert_eq!(m.nest_spec().total_params(), 1 + 3);
        assert_eq!(m.num_params(), 4 + 4 + 2);
        assert_eq!(m.get_coefficient("intercept[user]", Some(Level::Nest)).unwrap().shape(), &[3]);
        assert_eq!(m.get_coefficient("lambda", None).unwrap().shape(), &[2]);
    }

    #[test]
    fn lambda_warning_outside_unit_interval() {
        let mut m = uniform_half();
        assert!(m.lambda_warnings().is_empty());
        m.set_lambda(&[1.7]).unwrap();
        assert_eq!(m.lambda_warnings().len(), 1);
    }
}
