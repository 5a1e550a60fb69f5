//! Synthetic choice data from a known conditional logit.

use std::fmt;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::clogit::ConditionalLogit;
use crate::dataset::{ChoiceDataset, Observable};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Independent random streams under one seed.
const STREAM_OBSERVABLES: u64 = 0;
const STREAM_INDICES: u64 = 1;
const STREAM_CHOICES: u64 = 2;
const STREAM_TRUTH: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SimModel {
    /// `beta' Z_i`
    M1,
    /// `alpha_i' X_u`
    M2,
    /// `alpha_i' X_u + beta' Z_i`
    M3,
}

impl SimModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(SimModel::M1),
            "m2" => Ok(SimModel::M2),
            "m3" => Ok(SimModel::M3),
            _ => Err(Error::BadOptions(format!("unknown simulation model `{s}` (m1, m2, m3)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimModel::M1 => "m1",
            SimModel::M2 => "m2",
            SimModel::M3 => "m3",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            SimModel::M1 => "(item_obs|constant)",
            SimModel::M2 => "(user_obs|item)",
            SimModel::M3 => "(user_obs|item) + (item_obs|constant)",
        }
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    /// Standard normal draws from the spec's seed.
    Gaussian,
    Given(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub num_sessions: usize,
    pub num_records: usize,
    pub user_dim: usize,
    pub item_dim: usize,
    pub session_dim: usize,
    pub itemsession_dim: usize,
    pub model: SimModel,
    pub truth: Truth,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            num_users: 100,
            num_items: 30,
            num_sessions: 1,
            num_records: 10_000,
            user_dim: 30,
            item_dim: 30,
            session_dim: 0,
            itemsession_dim: 0,
            model: SimModel::M1,
            truth: Truth::Gaussian,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("users", self.num_users),
            ("items", self.num_items),
            ("sessions", self.num_sessions),
            ("records", self.num_records),
        ] {
            if v == 0 {
                return Err(Error::BadOptions(format!("number of {what} must be at least 1")));
            }
        }
        let needs_user = matches!(self.model, SimModel::M2 | SimModel::M3);
        let needs_item = matches!(self.model, SimModel::M1 | SimModel::M3);
        if needs_user && self.user_dim == 0 {
            return Err(Error::BadOptions(format!("model {} needs user_dim >= 1", self.model)));
        }
        if needs_item && self.item_dim == 0 {
            return Err(Error::BadOptions(format!("model {} needs item_dim >= 1", self.model)));
        }
        if needs_user && self.num_items < 2 {
            return Err(Error::BadOptions("item-specific coefficients need at least 2 items".into()));
        }
        Ok(())
    }
}

/// Simulated dataset with the data-generating parameters.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub data: ChoiceDataset,
    pub truth: ParamStore,
    pub formula: &'static str,
}

fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normals(r: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Draws observables, indices and choices. Every item is available.
pub fn simulate(spec: &SimSpec) -> Result<Simulation> {
    spec.validate()?;
    let (u, i, s, n) = (spec.num_users, spec.num_items, spec.num_sessions, spec.num_records);

    let mut ro = rng(spec.seed, STREAM_OBSERVABLES);
    let mut obs = Vec::new();
    if spec.user_dim > 0 {
        let v = Array2::from_shape_vec((u, spec.user_dim), normals(&mut ro, u * spec.user_dim)).expect("sized");
        obs.push(Observable::from_matrix("user_obs", v)?);
    }
    if spec.item_dim > 0 {
        let v = Array2::from_shape_vec((i, spec.item_dim), normals(&mut ro, i * spec.item_dim)).expect("sized");
        obs.push(Observable::from_matrix("item_obs", v)?);
    }
    if spec.session_dim > 0 {
        let v = Array2::from_shape_vec((s, spec.session_dim), normals(&mut ro, s * spec.session_dim)).expect("sized");
        obs.push(Observable::from_matrix("session_obs", v)?);
    }
    if spec.itemsession_dim > 0 {
        let k = spec.itemsession_dim;
        let v = Array3::from_shape_vec((s, i, k), normals(&mut ro, s * i * k)).expect("sized");
        obs.push(Observable::from_tensor("itemsession_obs", v)?);
    }

    let mut ri = rng(spec.seed, STREAM_INDICES);
    let users: Vec<usize> = (0..n).map(|_| ri.random_range(0..u)).collect();
    let sessions: Vec<usize> = (0..n).map(|_| ri.random_range(0..s)).collect();

    // Placeholder choices; resolved against the final layout below.
    let skeleton = ChoiceDataset::builder(vec![0; n])
        .user_index(users.clone())
        .session_index(sessions.clone())
        .num_users(u)
        .num_items(i)
        .num_sessions(s)
        .observables(obs.clone())
        .build()?;
    let mut model = ConditionalLogit::from_formula(spec.model.formula(), &skeleton, i, Some(u))?;
    let theta = match &spec.truth {
        Truth::Gaussian => normals(&mut rng(spec.seed, STREAM_TRUTH), model.num_params()),
        Truth::Given(t) => t.clone(),
    };
    model.set_theta(&theta)?;

    // Utilities here depend on the user only.
    let probe = ChoiceDataset::builder(vec![0; u])
        .user_index((0..u).collect())
        .session_index(vec![0; u])
        .num_users(u)
        .num_items(i)
        .num_sessions(s)
        .observables(obs.clone())
        .build()?;
    let (logp, _) = model.log_prob(&probe)?;
    let cdf: Vec<Vec<f64>> = logp
        .rows()
        .into_iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|lp| {
                    acc += lp.exp();
                    acc
                })
                .collect()
        })
        .collect();
    let mut rc = rng(spec.seed, STREAM_CHOICES);
    let items: Vec<usize> = users
        .iter()
        .map(|&usr| {
            let c = &cdf[usr];
            let x: f64 = rc.random::<f64>() * c[i - 1];
            c.partition_point(|&v| v <= x).min(i - 1)
        })
        .collect();

    let data = ChoiceDataset::builder(items)
        .user_index(users)
        .session_index(sessions)
        .num_users(u)
        .num_items(i)
        .num_sessions(s)
        .observables(obs)
        .build()?;
    Ok(Simulation {
        data,
        truth: model.params().clone(),
        formula: spec.model.formula(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observable_shapes() {
        let spec = SimSpec {
            num_users: 10,
            num_items: 4,
            num_sessions: 500,
            num_records: 10_000,
            user_dim: 128,
            item_dim: 64,
            session_dim: 10,
            itemsession_dim: 12,
            ..SimSpec::default()
        };
        let sim = simulate(&spec).unwrap();
        let d = &sim.data;
        assert_eq!(d.observable("user_obs").unwrap().shape(), vec![10, 128]);
        assert_eq!(d.observable("item_obs").unwrap().shape(), vec![4, 64]);
        assert_eq!(d.observable("session_obs").unwrap().shape(), vec![500, 10]);
        assert_eq!(d.observable("itemsession_obs").unwrap().shape(), vec![500, 4, 12]);
        assert_eq!(d.len(), 10_000);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SimSpec {
            num_records: 500,
            model: SimModel::M3,
            ..SimSpec::default()
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        let c = simulate(&SimSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.data.item_index(), c.data.item_index());
    }

    #[test]
    fn saturated_choice() {
        let spec = SimSpec {
            num_users: 3,
            num_items: 2,
            num_records: 200,
            user_dim: 0,
            item_dim: 1,
            truth: Truth::Given(vec![10.0]),
            ..SimSpec::default()
        };
        let mut sim = simulate(&spec).unwrap();
        // Force Z = [[0], [1]].
        let z = sim.data.observable_mut("item_obs").unwrap().values_mut();
        z[[0, 0, 0]] = 0.0;
        z[[1, 0, 0]] = 1.0;
        let mut m = ConditionalLogit::from_formula(sim.formula, &sim.data, 2, None).unwrap();
        m.set_theta(&[10.0]).unwrap();
        let (lp, _) = m.log_prob(&sim.data.subset(&[0]).unwrap()).unwrap();
        assert!(lp[[0, 1]].exp() > 0.9999);
    }

    #[test]
    fn m3_parameter_count() {
        let spec = SimSpec {
            num_items: 7,
            user_dim: 5,
            item_dim: 3,
            num_records: 50,
            model: SimModel::M3,
            ..SimSpec::default()
        };
        let sim = simulate(&spec).unwrap();
        assert_eq!(sim.truth.len(), 6 * 5 + 3);
        let alpha = sim.truth.get("user_obs[item]").unwrap();
        assert!(alpha.index_axis(ndarray::Axis(0), 0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bad_specs() {
        assert!(simulate(&SimSpec { num_users: 0, ..SimSpec::default() }).is_err());
        assert!(simulate(&SimSpec { item_dim: 0, ..SimSpec::default() }).is_err());
        assert_eq!(SimModel::parse("m4").unwrap_err().name(), "BadOptions");
    }
}
