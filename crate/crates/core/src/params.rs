//! Flat parameter vectors with a named block layout.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ChoiceDataset, Observable};
use crate::error::{Error, Result};
use crate::formula::{CoefVariation, CoefficientSpec, ModelSpec, ObsRef};

/// How to initialize coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Init {
    #[default]
    Zeros,
    /// Seeded Gaussian draws with standard deviation `sigma`.
    Gaussian { sigma: f64, seed: u64 },
}

impl Init {
    pub fn draw(self, n: usize) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Gaussian { sigma, seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
        }
    }
}

/// Coefficient values laid out according to a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    spec: ModelSpec,
    theta: Vec<f64>,
}

impl ParamStore {
    pub fn new(spec: ModelSpec, init: Init) -> Self {
        let theta = init.draw(spec.total_params());
        Self { spec, theta }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn set_values(&mut self, theta: &[f64]) -> Result<()> {
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

    /// Materialized `(rows, K)` block; `item` blocks get a leading zero row.
    pub fn block_view(&self, c: &CoefficientSpec) -> Array2<f64> {
        block_view(c, &self.theta)
    }

    /// Coefficient by display name, squeezed the way users expect:
    /// constant K=1 is a scalar, constant K>1 a vector, per-entity K=1 a vector,
    /// otherwise a matrix with one row per user or item.
    pub fn get(&self, name: &str) -> Result<ArrayD<f64>> {
        let c = self
            .spec
            .coefficient(name)
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))?;
        Ok(squeeze(c, self.block_view(c)))
    }
}

pub(crate) fn block_view(c: &CoefficientSpec, theta: &[f64]) -> Array2<f64> {
    let stored = &theta[c.offset..c.offset + c.param_count()];
    let mut out = Array2::zeros((c.view_rows(), c.dim));
    let skip = usize::from(c.variation == CoefVariation::Item);
    for (r, chunk) in stored.chunks(c.dim).enumerate() {
        out.row_mut(r + skip).assign(&ndarray::aview1(chunk));
    }
    out
}

pub(crate) fn squeeze(c: &CoefficientSpec, view: Array2<f64>) -> ArrayD<f64> {
    let (rows, k) = view.dim();
    match (c.variation, k) {
        (CoefVariation::Constant, 1) => view.into_shape_with_order(IxDyn(&[])).unwrap(),
        (CoefVariation::Constant, _) => view.into_shape_with_order(IxDyn(&[k])).unwrap(),
        (_, 1) => view.into_shape_with_order(IxDyn(&[rows])).unwrap(),
        _ => view.into_dyn(),
    }
}

/// Evaluates `sum_p theta_p(selected row) . x_p` for one model level and
/// routes utility derivatives back onto the parameter vector.
pub(crate) struct LinearUtility<'a> {
    spec: &'a ModelSpec,
    theta: &'a [f64],
    obs: Vec<Option<&'a Observable>>,
}

const ONE: [f64; 1] = [1.0];

impl<'a> LinearUtility<'a> {
    pub(crate) fn new(spec: &'a ModelSpec, theta: &'a [f64], data: &'a ChoiceDataset) -> Result<Self> {
        let obs = spec
            .coefficients
            .iter()
            .map(|c| match &c.observable {
                ObsRef::Intercept => Ok(None),
                ObsRef::Named(n) => data
                    .observable(n)
                    .map(Some)
                    .ok_or_else(|| Error::UnknownObservable(n.clone())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, theta, obs })
    }

    #[inline]
    fn row(c: &CoefficientSpec, user: usize, item: usize) -> Option<usize> {
        match c.variation {
            CoefVariation::Constant => Some(0),
            CoefVariation::User => Some(user),
            CoefVariation::Item => item.checked_sub(1),
            CoefVariation::ItemFull => Some(item),
        }
    }

    #[inline]
    fn feature(&self, p: usize, user: usize, item: usize, session: usize) -> &[f64] {
        match self.obs[p] {
            None => &ONE,
            Some(o) => o.feature(user, item, session),
        }
    }

    /// Utility of `item` for a record with the given user and session.
    #[inline]
    pub(crate) fn utility(&self, user: usize, item: usize, session: usize) -> f64 {
        let mut total = 0.0;
        for (p, c) in self.spec.coefficients.iter().enumerate() {
            let Some(row) = Self::row(c, user, item) else {
                continue;
            };
            let start = c.offset + row * c.dim;
            let coef = &self.theta[start..start + c.dim];
            let x = self.feature(p, user, item, session);
            total += coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    /// `grad += weight * d utility(user, item, session) / d theta`.
    #[inline]
    pub(crate) fn accumulate(&self, user: usize, item: usize, session: usize, weight: f64, grad: &mut [f64]) {
        if weight == 0.0 {
            return;
        }
        for (p, c) in self.spec.coefficients.iter().enumerate() {
            let Some(row) = Self::row(c, user, item) else {
                continue;
            };
            let start = c.offset + row * c.dim;
            let x = self.feature(p, user, item, session);
            for (g, xv) in grad[start..start + c.dim].iter_mut().zip(x) {
                *g += weight * xv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{parse_formula, resolve};

    #[test]
    fn item_view_prepends_zero_row() {
        let d = ChoiceDataset::builder(vec![0, 1, 2]).build().unwrap();
        let spec = resolve(&parse_formula("(1|item) + (1|constant)").unwrap(), &d, 3, None).unwrap();
        let mut p = ParamStore::new(spec, Init::Zeros);
        p.set_values(&[0.5, -1.0, 2.0]).unwrap();
        let item = p.get("intercept[item]").unwrap();
        assert_eq!(item.shape(), &[3]);
        assert_eq!(item.as_slice().unwrap(), &[0.0, 0.5, -1.0]);
        let c = p.get("intercept[constant]").unwrap();
        assert_eq!(c.ndim(), 0);
        assert_eq!(c[IxDyn(&[])], 2.0);
        assert_eq!(p.get("nope[item]").unwrap_err().name(), "UnknownCoefficient");
        assert_eq!(p.set_values(&[1.0]).unwrap_err().name(), "ParamLength");
    }

    #[test]
    fn gaussian_init_is_seeded() {
        let a = Init::Gaussian { sigma: 0.1, seed: 3 }.draw(5);
        let b = Init::Gaussian { sigma: 0.1, seed: 3 }.draw(5);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() < 1.0));
    }
}
