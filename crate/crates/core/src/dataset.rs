//! Columnar storage of choice records.
//!
//! A [`ChoiceDataset`] stores one `(user, item, session)` triple per record plus
//! observables at the granularity they actually vary at: per user, per item,
//! per session, or per (session, item). Nothing is repeated per record, so a
//! dataset with millions of records and thousands of items stays small.
//! [`ChoiceDataset::expand_observables`] reconstructs the dense
//! `(records, items, dim)` view on demand.
//!
//! Observable arrays are reference counted and copied on write, so `clone`
//! and `subset` are cheap while still behaving as deep copies.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use bitvec::prelude::*;
use indexmap::IndexMap;
use ndarray::{s, Array2, Array3, ArrayD, Axis, Ix2, Ix3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What an observable varies with. Determines storage shape and broadcast rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsVariation {
    User,
    Item,
    Session,
    #[serde(rename = "itemsession")]
    ItemSession,
}

impl ObsVariation {
    pub const ALL: [ObsVariation; 4] = [
        ObsVariation::User,
        ObsVariation::Item,
        ObsVariation::Session,
        ObsVariation::ItemSession,
    ];

    /// Infers the variation from an observable name's prefix.
    ///
    /// `price_` is accepted as an alias of `itemsession_`.
    pub fn from_name(name: &str) -> Result<Self> {
        // longest prefixes first: `itemsession_` also starts with `item`
        let table = [
            ("itemsession_", ObsVariation::ItemSession),
            ("price_", ObsVariation::ItemSession),
            ("session_", ObsVariation::Session),
            ("user_", ObsVariation::User),
            ("item_", ObsVariation::Item),
        ];
        for (prefix, var) in table {
            if let Some(rest) = name.strip_prefix(prefix) {
                if !rest.is_empty() {
                    return Ok(var);
                }
            }
        }
        Err(Error::BadPrefix(name.to_string()))
    }

    pub fn prefix(self) -> &'static str {
        match self {
            ObsVariation::User => "user_",
            ObsVariation::Item => "item_",
            ObsVariation::Session => "session_",
            ObsVariation::ItemSession => "itemsession_",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObsVariation::User => "user",
            ObsVariation::Item => "item",
            ObsVariation::Session => "session",
            ObsVariation::ItemSession => "itemsession",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user" => Some(ObsVariation::User),
            "item" => Some(ObsVariation::Item),
            "session" => Some(ObsVariation::Session),
            "itemsession" => Some(ObsVariation::ItemSession),
            _ => None,
        }
    }
}

/// Storage precision for observable values.
///
/// `F32` rounds every stored value to single precision; arithmetic stays in f64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// A named covariate array.
///
/// Values are kept as a `(rows, cols, dim)` array where `cols == 1` for user,
/// item and session observables and `cols == I` for (session, item) ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    name: String,
    variation: ObsVariation,
    values: Arc<Array3<f64>>,
}

impl Observable {
    /// Builds a user, item or session observable from a `(rows, dim)` matrix.
    pub fn from_matrix(name: impl Into<String>, values: Array2<f64>) -> Result<Self> {
        let name = name.into();
        let variation = ObsVariation::from_name(&name)?;
        if variation == ObsVariation::ItemSession {
            return Err(Error::ShapeMismatch(format!(
                "`{name}` is a (session, item) observable and needs a 3-d array"
            )));
        }
        let (rows, dim) = values.dim();
        let values = values
            .into_shape_with_order((rows, 1, dim))
            .expect("row-major reshape");
        Self::checked(name, variation, values)
    }

    /// Builds a (session, item) observable from a `(S, I, dim)` array.
    pub fn from_tensor(name: impl Into<String>, values: Array3<f64>) -> Result<Self> {
        let name = name.into();
        let variation = ObsVariation::from_name(&name)?;
        if variation != ObsVariation::ItemSession {
            return Err(Error::ShapeMismatch(format!(
                "`{name}` is a {} observable and needs a 2-d array",
                variation.as_str()
            )));
        }
        Self::checked(name, variation, values)
    }

    /// Dispatches on dimensionality.
    pub fn new(name: impl Into<String>, values: ArrayD<f64>) -> Result<Self> {
        let name = name.into();
        match values.ndim() {
            2 => Self::from_matrix(name, values.into_dimensionality::<Ix2>().unwrap()),
            3 => Self::from_tensor(name, values.into_dimensionality::<Ix3>().unwrap()),
            d => Err(Error::ShapeMismatch(format!(
                "`{name}` has {d} dimensions; expected 2 or 3"
            ))),
        }
    }

    fn checked(name: String, variation: ObsVariation, values: Array3<f64>) -> Result<Self> {
        let (rows, _, dim) = values.dim();
        if rows == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "`{name}` has an empty shape {:?}",
                values.shape()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Self {
            name,
            variation,
            values: Arc::new(values),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn variation(&self) -> ObsVariation {
        self.variation
    }

    /// Number of features `K`.
    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    /// Size of the leading (entity) axis: U, I or S.
    pub fn leading(&self) -> usize {
        self.values.dim().0
    }

    /// Logical shape: `[rows, K]` or `[S, I, K]`.
    pub fn shape(&self) -> Vec<usize> {
        let (r, c, k) = self.values.dim();
        match self.variation {
            ObsVariation::ItemSession => vec![r, c, k],
            _ => vec![r, k],
        }
    }

    /// Raw `(rows, cols, dim)` storage.
    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    /// Mutable access; copies the array first if it is shared with a clone.
    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        Arc::make_mut(&mut self.values)
    }

    /// Feature vector relevant to `(user, item, session)`.
    #[inline]
    pub fn feature(&self, user: usize, item: usize, session: usize) -> &[f64] {
        let k = self.values.dim().2;
        let data = self.values.as_slice().expect("standard layout");
        let start = match self.variation {
            ObsVariation::User => user * k,
            ObsVariation::Item => item * k,
            ObsVariation::Session => session * k,
            ObsVariation::ItemSession => (session * self.values.dim().1 + item) * k,
        };
        &data[start..start + k]
    }

    fn round_to_f32(&mut self) {
        self.values_mut().mapv_inplace(|v| v as f32 as f64);
    }
}

/// Packed `S x I` boolean availability matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Availability {
    sessions: usize,
    items: usize,
    bits: BitVec<u64, Lsb0>,
}

impl Availability {
    pub fn all(sessions: usize, items: usize) -> Self {
        Self {
            sessions,
            items,
            bits: bitvec![u64, Lsb0; 1; sessions * items],
        }
    }

    pub fn none(sessions: usize, items: usize) -> Self {
        Self {
            sessions,
            items,
            bits: bitvec![u64, Lsb0; 0; sessions * items],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let sessions = rows.len();
        let items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != items) {
            return Err(Error::ShapeMismatch("ragged availability rows".into()));
        }
        let mut a = Self::none(sessions, items);
        for (s, row) in rows.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                a.set(s, i, v);
            }
        }
        Ok(a)
    }

    pub fn from_array(values: &Array2<bool>) -> Self {
        let (sessions, items) = values.dim();
        let mut a = Self::none(sessions, items);
        for ((s, i), &v) in values.indexed_iter() {
            a.set(s, i, v);
        }
        a
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    #[inline]
    pub fn get(&self, session: usize, item: usize) -> bool {
        self.bits[session * self.items + item]
    }

    pub fn set(&mut self, session: usize, item: usize, value: bool) {
        self.bits.set(session * self.items + item, value);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn to_array(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.sessions, self.items), |(s, i)| self.get(s, i))
    }
}

/// Partition of items into categories; one choice is made per category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryPartition {
    category_of_item: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl CategoryPartition {
    pub fn new(category_of_item: Vec<usize>) -> Result<Self> {
        if category_of_item.is_empty() {
            return Err(Error::BadCategories("no items".into()));
        }
        let count = category_of_item.iter().max().unwrap() + 1;
        let mut members = vec![Vec::new(); count];
        for (item, &c) in category_of_item.iter().enumerate() {
            members[c].push(item);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::BadCategories(format!("category {c} is empty")));
        }
        Ok(Self {
            category_of_item,
            members,
        })
    }

    /// Single category holding all `num_items` items.
    pub fn single(num_items: usize) -> Self {
        Self {
            category_of_item: vec![0; num_items],
            members: vec![(0..num_items).collect()],
        }
    }

    pub fn num_categories(&self) -> usize {
        self.members.len()
    }

    pub fn num_items(&self) -> usize {
        self.category_of_item.len()
    }

    pub fn category_of(&self, item: usize) -> usize {
        self.category_of_item[item]
    }

    pub fn items(&self, category: usize) -> &[usize] {
        &self.members[category]
    }

    pub fn category_of_item(&self) -> &[usize] {
        &self.category_of_item
    }
}

/// Collection of choice records with their observables.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceDataset {
    item_index: Vec<usize>,
    user_index: Option<Vec<usize>>,
    session_index: Vec<usize>,
    availability: Option<Arc<Availability>>,
    observables: BTreeMap<String, Observable>,
    categories: Option<CategoryPartition>,
    num_users: usize,
    num_items: usize,
    num_sessions: usize,
}

/// Staged construction of a [`ChoiceDataset`].
#[derive(Clone, Debug, Default)]
pub struct DatasetBuilder {
    item_index: Vec<usize>,
    user_index: Option<Vec<usize>>,
    session_index: Option<Vec<usize>>,
    availability: Option<Availability>,
    observables: Vec<Observable>,
    categories: Option<CategoryPartition>,
    num_users: Option<usize>,
    num_items: Option<usize>,
    num_sessions: Option<usize>,
    precision: Precision,
}

impl DatasetBuilder {
    pub fn user_index(mut self, v: Vec<usize>) -> Self {
        self.user_index = Some(v);
        self
    }

    pub fn session_index(mut self, v: Vec<usize>) -> Self {
        self.session_index = Some(v);
        self
    }

    pub fn availability(mut self, a: Availability) -> Self {
        self.availability = Some(a);
        self
    }

    pub fn observable(mut self, obs: Observable) -> Self {
        self.observables.push(obs);
        self
    }

    pub fn observables(mut self, obs: impl IntoIterator<Item = Observable>) -> Self {
        self.observables.extend(obs);
        self
    }

    pub fn categories(mut self, c: CategoryPartition) -> Self {
        self.categories = Some(c);
        self
    }

    /// Declares the number of users (allows users that never appear).
    pub fn num_users(mut self, n: usize) -> Self {
        self.num_users = Some(n);
        self
    }

    pub fn num_items(mut self, n: usize) -> Self {
        self.num_items = Some(n);
        self
    }

    pub fn num_sessions(mut self, n: usize) -> Self {
        self.num_sessions = Some(n);
        self
    }

    pub fn precision(mut self, p: Precision) -> Self {
        self.precision = p;
        self
    }

    pub fn build(self) -> Result<ChoiceDataset> {
        let n = self.item_index.len();
        if n == 0 {
            return Err(Error::EmptyInput("item_index".into()));
        }
        for (what, idx) in [
            ("user_index", self.user_index.as_ref()),
            ("session_index", self.session_index.as_ref()),
        ] {
            if let Some(v) = idx {
                if v.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{what} has length {}, item_index has {n}",
                        v.len()
                    )));
                }
            }
        }
        let session_index = self.session_index.unwrap_or_else(|| (0..n).collect());

        let mut observables = BTreeMap::new();
        for mut obs in self.observables {
            if self.precision == Precision::F32 {
                obs.round_to_f32();
            }
            let name = obs.name.clone();
            if observables.insert(name.clone(), obs).is_some() {
                return Err(Error::DuplicateKey {
                    table: "observables".into(),
                    key: name,
                });
            }
        }

        let max_plus_one = |v: &[usize]| v.iter().max().map_or(0, |m| m + 1);
        let mut user_decl = Vec::new();
        let mut item_decl = Vec::new();
        let mut session_decl = Vec::new();
        for obs in observables.values() {
            let (rows, cols, _) = obs.values.dim();
            let label = format!("observable `{}`", obs.name);
            match obs.variation {
                ObsVariation::User => user_decl.push((label, rows)),
                ObsVariation::Item => item_decl.push((label, rows)),
                ObsVariation::Session => session_decl.push((label, rows)),
                ObsVariation::ItemSession => {
                    session_decl.push((label.clone(), rows));
                    item_decl.push((label, cols));
                }
            }
        }
        if let Some(a) = &self.availability {
            session_decl.push(("availability".into(), a.sessions));
            item_decl.push(("availability".into(), a.items));
        }
        if let Some(c) = &self.categories {
            item_decl.push(("category partition".into(), c.num_items()));
        }
        if let Some(u) = self.num_users {
            user_decl.push(("declared num_users".into(), u));
        }
        if let Some(i) = self.num_items {
            item_decl.push(("declared num_items".into(), i));
        }
        if let Some(s) = self.num_sessions {
            session_decl.push(("declared num_sessions".into(), s));
        }

        let num_users = reconcile(
            "users",
            self.user_index.as_deref().map_or(1, max_plus_one),
            &user_decl,
        )?;
        let num_items = reconcile("items", max_plus_one(&self.item_index), &item_decl)?;
        let num_sessions = reconcile("sessions", max_plus_one(&session_index), &session_decl)?;

        let availability = self
            .availability
            .filter(|a| a.count_ones() != a.sessions * a.items)
            .map(Arc::new);

        let ds = ChoiceDataset {
            item_index: self.item_index,
            user_index: self.user_index,
            session_index,
            availability,
            observables,
            categories: self.categories,
            num_users,
            num_items,
            num_sessions,
        };
        if let Some(err) = ds.violations().into_iter().next() {
            return Err(err);
        }
        Ok(ds)
    }
}

fn reconcile(kind: &str, demanded: usize, declared: &[(String, usize)]) -> Result<usize> {
    let Some((first_label, first)) = declared.first() else {
        return Ok(demanded);
    };
    for (label, size) in &declared[1..] {
        if size != first {
            return Err(Error::ShapeMismatch(format!(
                "{first_label} implies {first} {kind} but {label} implies {size}"
            )));
        }
    }
    if *first < demanded {
        return Err(Error::ShapeMismatch(format!(
            "indices require {demanded} {kind} but {first_label} has {first}"
        )));
    }
    Ok(*first)
}

impl ChoiceDataset {
    pub fn builder(item_index: Vec<usize>) -> DatasetBuilder {
        DatasetBuilder {
            item_index,
            ..Default::default()
        }
    }

    /// Number of records `N`.
    pub fn len(&self) -> usize {
        self.item_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_index.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_sessions(&self) -> usize {
        self.num_sessions
    }

    pub fn item_index(&self) -> &[usize] {
        &self.item_index
    }

    pub fn user_index(&self) -> Option<&[usize]> {
        self.user_index.as_deref()
    }

    pub fn session_index(&self) -> &[usize] {
        &self.session_index
    }

    pub fn has_user_index(&self) -> bool {
        self.user_index.is_some()
    }

    #[inline]
    pub fn user_of(&self, record: usize) -> usize {
        self.user_index.as_ref().map_or(0, |u| u[record])
    }

    #[inline]
    pub fn session_of(&self, record: usize) -> usize {
        self.session_index[record]
    }

    #[inline]
    pub fn item_of(&self, record: usize) -> usize {
        self.item_index[record]
    }

    /// `None` when every item is available in every session.
    pub fn availability(&self) -> Option<&Availability> {
        self.availability.as_deref()
    }

    #[inline]
    pub fn is_available(&self, session: usize, item: usize) -> bool {
        self.availability.as_ref().is_none_or(|a| a.get(session, item))
    }

    pub fn categories(&self) -> Option<&CategoryPartition> {
        self.categories.as_ref()
    }

    pub fn observables(&self) -> impl Iterator<Item = &Observable> {
        self.observables.values()
    }

    pub fn observable(&self, name: &str) -> Option<&Observable> {
        self.observables.get(name)
    }

    pub fn observable_mut(&mut self, name: &str) -> Option<&mut Observable> {
        self.observables.get_mut(name)
    }

    pub fn item_index_mut(&mut self) -> &mut [usize] {
        &mut self.item_index
    }

    pub fn user_index_mut(&mut self) -> Option<&mut [usize]> {
        self.user_index.as_deref_mut()
    }

    pub fn session_index_mut(&mut self) -> &mut [usize] {
        &mut self.session_index
    }

    /// All invariant violations, in a deterministic order. Empty means valid.
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let n = self.len();
        for (r, &i) in self.item_index.iter().enumerate() {
            if i >= self.num_items {
                out.push(Error::IndexOutOfRange {
                    what: "item",
                    index: i,
                    limit: self.num_items,
                });
            } else {
                let s = self.session_index[r];
                if s < self.num_sessions && !self.is_available(s, i) {
                    out.push(Error::ChosenItemUnavailable {
                        record: r,
                        item: i,
                        session: s,
                    });
                }
            }
        }
        if let Some(u) = &self.user_index {
            if u.len() != n {
                out.push(Error::ShapeMismatch("user_index length".into()));
            }
            for &v in u.iter().filter(|&&v| v >= self.num_users) {
                out.push(Error::IndexOutOfRange {
                    what: "user",
                    index: v,
                    limit: self.num_users,
                });
            }
        }
        if self.session_index.len() != n {
            out.push(Error::ShapeMismatch("session_index length".into()));
        }
        for &v in self.session_index.iter().filter(|&&v| v >= self.num_sessions) {
            out.push(Error::IndexOutOfRange {
                what: "session",
                index: v,
                limit: self.num_sessions,
            });
        }
        if let Some(a) = &self.availability {
            for s in 0..a.sessions {
                if (0..a.items).all(|i| !a.get(s, i)) {
                    out.push(Error::EmptySession(s));
                }
            }
        }
        for obs in self.observables.values() {
            let (rows, cols, _) = obs.values.dim();
            let (want_rows, want_cols) = match obs.variation {
                ObsVariation::User => (self.num_users, 1),
                ObsVariation::Item => (self.num_items, 1),
                ObsVariation::Session => (self.num_sessions, 1),
                ObsVariation::ItemSession => (self.num_sessions, self.num_items),
            };
            if rows != want_rows || cols != want_cols {
                out.push(Error::ShapeMismatch(format!(
                    "observable `{}` has shape {:?}",
                    obs.name,
                    obs.shape()
                )));
            }
            if obs.values.iter().any(|v| !v.is_finite()) {
                out.push(Error::NonFinite(obs.name.clone()));
            }
        }
        out
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        match indices.iter().find(|&&i| i >= self.len()) {
            Some(&bad) => Err(Error::IndexOutOfRange {
                what: "record",
                index: bad,
                limit: self.len(),
            }),
            None => Ok(()),
        }
    }

    /// Dataset restricted to `indices` (in the given order). Observables,
    /// availability and categories are carried over whole.
    pub fn subset(&self, indices: &[usize]) -> Result<ChoiceDataset> {
        self.check_indices(indices)?;
        let gather = |v: &[usize]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(ChoiceDataset {
            item_index: gather(&self.item_index),
            user_index: self.user_index.as_deref().map(gather),
            session_index: gather(&self.session_index),
            availability: self.availability.clone(),
            observables: self.observables.clone(),
            categories: self.categories.clone(),
            num_users: self.num_users,
            num_items: self.num_items,
            num_sessions: self.num_sessions,
        })
    }

    /// Dense `(B, I, K)` view of every observable for the given records.
    pub fn expand_observables(&self, indices: &[usize]) -> Result<BTreeMap<String, Array3<f64>>> {
        self.check_indices(indices)?;
        let items = self.num_items;
        let mut out = BTreeMap::new();
        for obs in self.observables.values() {
            let k = obs.dim();
            let mut arr = Array3::<f64>::zeros((indices.len(), items, k));
            for (b, &r) in indices.iter().enumerate() {
                let (u, s) = (self.user_of(r), self.session_of(r));
                for i in 0..items {
                    arr.slice_mut(s![b, i, ..])
                        .as_slice_mut()
                        .unwrap()
                        .copy_from_slice(obs.feature(u, i, s));
                }
            }
            out.insert(obs.name.clone(), arr);
        }
        Ok(out)
    }

    /// Record indices of each batch, in iteration order.
    pub fn batch_indices(&self, batch_size: i64, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
        batch_plan(self.len(), batch_size, shuffle, seed, 0)
    }

    /// Iterates over subsets of at most `batch_size` records (`-1` = everything).
    pub fn iterate_batches(
        &self,
        batch_size: i64,
        shuffle: bool,
        seed: u64,
    ) -> Result<impl Iterator<Item = ChoiceDataset> + '_> {
        let plan = self.batch_indices(batch_size, shuffle, seed)?;
        Ok(plan
            .into_iter()
            .map(move |ix| self.subset(&ix).expect("indices from plan are in range")))
    }

    /// Fraction of (session, item) pairs that are available.
    pub fn availability_density(&self) -> f64 {
        match &self.availability {
            None => 1.0,
            Some(a) => a.count_ones() as f64 / (a.sessions * a.items) as f64,
        }
    }

    /// Multi-line human readable report.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "ChoiceDataset: N={} records, U={} users, I={} items, S={} sessions\n",
            self.len(),
            self.num_users,
            self.num_items,
            self.num_sessions
        ));
        let total = self.num_sessions * self.num_items;
        let on = self.availability.as_ref().map_or(total, |a| a.count_ones());
        s.push_str(&format!(
            "availability: {on}/{total} (session, item) pairs available, density {:.6}\n",
            self.availability_density()
        ));
        s.push_str(&format!(
            "user_index: {}\n",
            if self.user_index.is_some() { "provided" } else { "absent (single user)" }
        ));
        s.push_str(&format!(
            "categories: {}\n",
            self.categories.as_ref().map_or(1, |c| c.num_categories())
        ));
        s.push_str(&format!("observables: {}\n", self.observables.len()));
        for obs in self.observables.values() {
            s.push_str(&format!(
                "  {:<32} {:<12} shape={:?}\n",
                obs.name,
                obs.variation.as_str(),
                obs.shape()
            ));
        }
        s
    }
}

impl fmt::Display for ChoiceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChoiceDataset(item_index=[{}]", self.len())?;
        if self.user_index.is_some() {
            write!(f, ", user_index=[{}]", self.len())?;
        }
        write!(
            f,
            ", session_index=[{}], item_availability=[{}, {}]",
            self.len(),
            self.num_sessions,
            self.num_items
        )?;
        for obs in self.observables.values() {
            let shape: Vec<String> = obs.shape().iter().map(ToString::to_string).collect();
            write!(f, ", {}=[{}]", obs.name, shape.join(", "))?;
        }
        write!(f, ")")
    }
}

/// Splits `0..n` into batches. `stream` selects an independent shuffle per call
/// site (e.g. the epoch number) from the same seed.
pub fn batch_plan(
    n: usize,
    batch_size: i64,
    shuffle: bool,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size < -1 {
        return Err(Error::BadBatchSize(batch_size));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        order.shuffle(&mut rng);
    }
    if batch_size == -1 {
        return Ok(vec![order]);
    }
    Ok(order
        .chunks(batch_size as usize)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Several datasets over the same records, indexed together.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDataset {
    members: IndexMap<String, ChoiceDataset>,
}

impl JointDataset {
    pub fn new<I, S>(members: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, ChoiceDataset)>,
        S: Into<String>,
    {
        let mut map = IndexMap::new();
        for (name, ds) in members {
            let name = name.into();
            if map.contains_key(&name) {
                return Err(Error::DuplicateKey {
                    table: "joint dataset".into(),
                    key: name,
                });
            }
            map.insert(name, ds);
        }
        let Some(first) = map.values().next() else {
            return Err(Error::EmptyInput("joint dataset has no members".into()));
        };
        let n = first.len();
        if let Some((name, ds)) = map.iter().find(|(_, d)| d.len() != n) {
            return Err(Error::LengthMismatch(format!(
                "member `{name}` has {} records, expected {n}",
                ds.len()
            )));
        }
        Ok(Self { members: map })
    }

    pub fn len(&self) -> usize {
        self.members[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn get(&self, name: &str) -> Option<&ChoiceDataset> {
        self.members.get(name)
    }

    pub fn members(&self) -> impl Iterator<Item = (&str, &ChoiceDataset)> {
        self.members.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Applies the same record indices to every member.
    pub fn subset(&self, indices: &[usize]) -> Result<JointDataset> {
        let members = self
            .members
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.subset(indices)?)))
            .collect::<Result<IndexMap<_, _>>>()?;
        Ok(Self { members })
    }

    /// Same as [`subset`](Self::subset) but returns the plain name → dataset map.
    pub fn subset_members(&self, indices: &[usize]) -> Result<IndexMap<String, ChoiceDataset>> {
        Ok(self.subset(indices)?.members)
    }
}

impl fmt::Display for JointDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "JointDataset with {} sub-datasets: (", self.members.len())?;
        for (name, ds) in &self.members {
            writeln!(f, "    {name}: {ds}")?;
        }
        write!(f, ")")
    }
}

/// Anything that can be split into record batches for estimation.
pub trait Records: Clone + Send + Sync {
    fn num_records(&self) -> usize;
    fn select(&self, indices: &[usize]) -> Result<Self>;
}

impl Records for ChoiceDataset {
    fn num_records(&self) -> usize {
        self.len()
    }

    fn select(&self, indices: &[usize]) -> Result<Self> {
        self.subset(indices)
    }
}

impl Records for JointDataset {
    fn num_records(&self) -> usize {
        self.len()
    }

    fn select(&self, indices: &[usize]) -> Result<Self> {
        self.subset(indices)
    }
}

/// Convenience: `(rows, K)` observable array stacked by `Axis(0)`.
pub fn stack_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::ShapeMismatch("ragged rows".into()));
    }
    let mut out = Array2::zeros((rows.len(), k));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&ndarray::aview1(src));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fruit() -> ChoiceDataset {
        ChoiceDataset::builder(vec![0, 1, 2, 1, 2])
            .user_index(vec![0, 1, 1, 2, 2])
            .session_index(vec![0, 1, 2, 3, 3])
            .observable(Observable::from_matrix("item_obs", array![[1.5], [12.0], [3.3]]).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn fruit_example_dims() {
        let d = fruit();
        assert_eq!((d.len(), d.num_users(), d.num_items(), d.num_sessions()), (5, 3, 3, 4));
        assert!(d.availability().is_none());
        assert!((0..4).all(|s| (0..3).all(|i| d.is_available(s, i))));
    }

    #[test]
    fn minimal_defaults() {
        let d = ChoiceDataset::builder(vec![0]).build().unwrap();
        assert_eq!((d.len(), d.num_users(), d.num_items(), d.num_sessions()), (1, 1, 1, 1));
        assert_eq!(d.session_index(), &[0]);
        assert!(d.is_available(0, 0));
        assert!(!d.has_user_index());
    }

    #[test]
    fn undersized_user_observable_is_rejected() {
        let err = ChoiceDataset::builder(vec![0, 0, 0])
            .user_index(vec![0, 1, 2])
            .observable(Observable::from_matrix("user_x", Array2::zeros((2, 4))).unwrap())
            .build()
            .unwrap_err();
        assert_eq!(err.name(), "ShapeMismatch");
    }

    #[test]
    fn oversized_observable_adds_unobserved_entities() {
        let d = ChoiceDataset::builder(vec![0, 1])
            .observable(Observable::from_matrix("item_x", Array2::zeros((5, 1))).unwrap())
            .build()
            .unwrap();
        assert_eq!(d.num_items(), 5);
    }

    #[test]
    fn prefixes() {
        assert_eq!(ObsVariation::from_name("itemsession_price").unwrap(), ObsVariation::ItemSession);
        assert_eq!(ObsVariation::from_name("price_obs").unwrap(), ObsVariation::ItemSession);
        assert_eq!(ObsVariation::from_name("item_obs").unwrap(), ObsVariation::Item);
        assert_eq!(ObsVariation::from_name("user_").unwrap_err().name(), "BadPrefix");
        assert_eq!(ObsVariation::from_name("income_of_user").unwrap_err().name(), "BadPrefix");
        assert!(Observable::from_matrix("itemsession_p", Array2::zeros((1, 1))).is_err());
        assert!(Observable::from_tensor("user_p", Array3::zeros((1, 1, 1))).is_err());
    }

    #[test]
    fn non_finite_observable_rejected() {
        let e = Observable::from_matrix("item_x", array![[f64::NAN]]).unwrap_err();
        assert_eq!(e.name(), "NonFinite");
    }

    #[test]
    fn chosen_unavailable_is_an_error() {
        let a = Availability::from_rows(&[vec![true, false]]).unwrap();
        let err = ChoiceDataset::builder(vec![1])
            .session_index(vec![0])
            .availability(a)
            .build()
            .unwrap_err();
        assert_eq!(err.name(), "ChosenItemUnavailable");
    }

    #[test]
    fn empty_session_is_an_error() {
        let a = Availability::from_rows(&[vec![true, false], vec![false, false]]).unwrap();
        let err = ChoiceDataset::builder(vec![0])
            .session_index(vec![0])
            .availability(a)
            .build()
            .unwrap_err();
        assert_eq!(err.name(), "EmptySession");
    }

    #[test]
    fn clone_is_isolated() {
        let d = ChoiceDataset::builder(vec![2, 2, 3, 1, 3, 2, 2, 1, 0, 1])
            .observable(Observable::from_matrix("item_obs", Array2::from_elem((4, 2), -1.5811)).unwrap())
            .build()
            .unwrap();
        let mut c = d.clone();
        c.item_index_mut().iter_mut().for_each(|v| *v = 99);
        c.observable_mut("item_obs").unwrap().values_mut().mapv_inplace(|v| v + 1.0);
        assert_eq!(&d.item_index()[..5], &[2, 2, 3, 1, 3]);
        assert_eq!(d.observable("item_obs").unwrap().values()[[0, 0, 0]], -1.5811);
        assert!((c.observable("item_obs").unwrap().values()[[0, 0, 0]] - -0.5811).abs() < 1e-12);
    }

    #[test]
    fn clone_of_bare_dataset_is_equal() {
        let d = ChoiceDataset::builder(vec![0, 1]).build().unwrap();
        assert_eq!(d.clone(), d);
    }

    #[test]
    fn subset_bounds_and_identity() {
        let d = fruit();
        assert_eq!(d.subset(&[5]).unwrap_err().name(), "IndexOutOfRange");
        assert_eq!(d.subset(&[0, 1, 2, 3, 4]).unwrap(), d.clone());
        let mut sub = d.subset(&[4, 0]).unwrap();
        assert_eq!(sub.item_index(), &[2, 0]);
        assert_eq!(sub.user_index().unwrap(), &[2, 0]);
        sub.item_index_mut()[0] += 1;
        assert_eq!(d.item_index()[4], 2);
    }

    #[test]
    fn expansion_single_cell() {
        let d = ChoiceDataset::builder(vec![0])
            .observable(Observable::from_matrix("item_a", array![[7.25]]).unwrap())
            .build()
            .unwrap();
        let x = d.expand_observables(&[0]).unwrap();
        assert_eq!(x["item_a"].shape(), &[1, 1, 1]);
        assert_eq!(x["item_a"][[0, 0, 0]], 7.25);
    }

    #[test]
    fn expansion_shares_session_slices() {
        let d = ChoiceDataset::builder(vec![0, 1, 0])
            .session_index(vec![1, 1, 0])
            .observable(Observable::from_matrix("session_d", array![[1.0, 2.0], [3.0, 4.0]]).unwrap())
            .build()
            .unwrap();
        let x = &d.expand_observables(&[0, 1, 2]).unwrap()["session_d"];
        assert_eq!(x.slice(s![0, .., ..]), x.slice(s![1, .., ..]));
        assert_eq!(x[[0, 1, 1]], 4.0);
        assert_eq!(x[[2, 0, 0]], 1.0);
    }

    #[test]
    fn batches() {
        let d = ChoiceDataset::builder(vec![0; 100]).build().unwrap();
        let plan = d.batch_indices(32, false, 0).unwrap();
        assert_eq!(plan.len(), 4);
        assert_eq!(plan[3], (96..100).collect::<Vec<_>>());
        assert_eq!(d.batch_indices(-1, false, 0).unwrap().len(), 1);
        assert_eq!(d.batch_indices(0, false, 0).unwrap_err().name(), "BadBatchSize");
        assert_eq!(d.batch_indices(-2, false, 0).unwrap_err().name(), "BadBatchSize");
        let a = d.batch_indices(7, true, 11).unwrap();
        let b = d.batch_indices(7, true, 11).unwrap();
        assert_eq!(a, b);
        let mut flat: Vec<usize> = a.concat();
        assert_ne!(flat, (0..100).collect::<Vec<_>>());
        flat.sort();
        assert_eq!(flat, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn joint_dataset() {
        let d = fruit();
        let j = JointDataset::new([("item", d.clone()), ("nest", d.clone())]).unwrap();
        assert_eq!(j.num_members(), 2);
        let sub = j.subset_members(&[0]).unwrap();
        assert!(sub.values().all(|m| m.len() == 1));
        let other = ChoiceDataset::builder(vec![0; 6]).build().unwrap();
        let bad = ChoiceDataset::builder(vec![0; 5]).build().unwrap();
        assert_eq!(
            JointDataset::new([("a", bad), ("b", other)]).unwrap_err().name(),
            "LengthMismatch"
        );
        assert!(j.to_string().starts_with("JointDataset with 2 sub-datasets"));
    }

    #[test]
    fn summary_reports_counts() {
        let s = fruit().summary();
        assert!(s.contains("N=5 records, U=3 users, I=3 items, S=4 sessions"));
        let bare = ChoiceDataset::builder(vec![0]).build().unwrap().summary();
        assert!(bare.contains("observables: 0"));
    }

    #[test]
    fn f32_precision_rounds_values() {
        let d = ChoiceDataset::builder(vec![0])
            .observable(Observable::from_matrix("item_a", array![[0.1]]).unwrap())
            .precision(Precision::F32)
            .build()
            .unwrap();
        assert_eq!(d.observable("item_a").unwrap().values()[[0, 0, 0]], 0.1f32 as f64);
    }

    #[test]
    fn categories_validate() {
        assert!(CategoryPartition::new(vec![0, 2]).is_err());
        let c = CategoryPartition::new(vec![0, 1, 0]).unwrap();
        assert_eq!(c.items(0), &[0, 2]);
        let err = ChoiceDataset::builder(vec![0]).categories(c).num_items(2).build().unwrap_err();
        assert_eq!(err.name(), "ShapeMismatch");
    }
}
