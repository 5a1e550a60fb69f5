//! The `(observable|variation)` formula language and parameter layouts.
//!
//! ```text
//! formula := term ('+' term)*
//! term    := '(' obs '|' var ')'
//! obs     := identifier | '1' | 'intercept'
//! var     := 'constant' | 'user' | 'item' | 'item-full'
//! ```

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{ChoiceDataset, ObsVariation};
use crate::error::{Error, Result};

/// How a coefficient varies across users and items.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoefVariation {
    Constant,
    User,
    /// Per item, with item 0's coefficient pinned to zero.
    Item,
    /// Per item, no pinning.
    ItemFull,
}

impl CoefVariation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(CoefVariation::Constant),
            "user" => Ok(CoefVariation::User),
            "item" => Ok(CoefVariation::Item),
            "item-full" => Ok(CoefVariation::ItemFull),
            other => Err(Error::UnknownVariation(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoefVariation::Constant => "constant",
            CoefVariation::User => "user",
            CoefVariation::Item => "item",
            CoefVariation::ItemFull => "item-full",
        }
    }
}

impl fmt::Display for CoefVariation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Left-hand side of a term.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObsRef {
    Intercept,
    Named(String),
}

impl ObsRef {
    pub fn name(&self) -> &str {
        match self {
            ObsRef::Intercept => "intercept",
            ObsRef::Named(n) => n,
        }
    }

    fn from_token(tok: &str) -> Self {
        match tok {
            "1" | "intercept" => ObsRef::Intercept,
            other => ObsRef::Named(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub observable: ObsRef,
    pub variation: CoefVariation,
}

impl Term {
    pub fn new(observable: ObsRef, variation: CoefVariation) -> Self {
        Self {
            observable,
            variation,
        }
    }

    /// Lookup name, e.g. `intercept[user]`.
    pub fn coefficient_name(&self) -> String {
        format!("{}[{}]", self.observable.name(), self.variation)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}|{})", self.observable.name(), self.variation)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.src.len()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(&got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            Some(&got) => Err(self.error(format!("expected `{}`, found `{}`", c as char, got as char))),
            None => Err(self.error(format!("expected `{}`, found end of input", c as char))),
        }
    }

    fn word(&mut self, allow_dash: bool, what: &str) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_alphanumeric() || c == b'_' || (allow_dash && c == b'-') {
                self.pos += 1;
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).expect("ascii"))
    }

    fn error(&self, message: String) -> Error {
        Error::SyntaxError {
            position: self.pos,
            message,
        }
    }

    fn term(&mut self) -> Result<Term> {
        self.expect(b'(')?;
        let obs_pos = {
            self.skip_ws();
            self.pos
        };
        let obs = self.word(false, "an observable name")?;
        if obs.as_bytes()[0].is_ascii_digit() && obs != "1" {
            return Err(Error::SyntaxError {
                position: obs_pos,
                message: format!("`{obs}` is not an observable name"),
            });
        }
        self.expect(b'|')?;
        let var = self.word(true, "a variation")?;
        let variation = CoefVariation::parse(var)?;
        self.expect(b')')?;
        Ok(Term::new(ObsRef::from_token(obs), variation))
    }
}

/// Parses a nonempty formula into its ordered terms.
pub fn parse_formula(text: &str) -> Result<Vec<Term>> {
    if text.trim().is_empty() {
        return Err(Error::SyntaxError {
            position: 0,
            message: "empty formula".into(),
        });
    }
    parse_formula_allow_empty(text)
}

/// Like [`parse_formula`], but blank text yields an empty term list
/// (only meaningful for the nest level of a nested logit).
pub fn parse_formula_allow_empty(text: &str) -> Result<Vec<Term>> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut terms: Vec<Term> = Vec::new();
    if p.at_end() {
        return Ok(terms);
    }
    loop {
        let term = p.term()?;
        if terms.contains(&term) {
            return Err(Error::DuplicateTerm(term.to_string()));
        }
        terms.push(term);
        if p.at_end() {
            break;
        }
        p.expect(b'+')?;
    }
    Ok(terms)
}

/// Canonical text of a term list; `parse_formula` round-trips it.
pub fn format_formula(terms: &[Term]) -> String {
    terms
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" + ")
}

/// A term resolved against concrete dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub observable: ObsRef,
    pub variation: CoefVariation,
    /// Variation of the observable itself; `None` for the intercept.
    pub obs_variation: Option<ObsVariation>,
    /// Observable dimension `K`.
    pub dim: usize,
    /// Stored coefficient rows `m` (1, U, I-1 or I).
    pub rows: usize,
    /// Offset of this block in the flat parameter vector.
    pub offset: usize,
}

impl CoefficientSpec {
    pub fn name(&self) -> String {
        format!("{}[{}]", self.observable.name(), self.variation)
    }

    pub fn param_count(&self) -> usize {
        self.rows * self.dim
    }

    /// Rows in the materialized view (item 0's zero row included).
    pub fn view_rows(&self) -> usize {
        match self.variation {
            CoefVariation::Item => self.rows + 1,
            _ => self.rows,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    /// Unsquared Euclidean norm.
    L2,
    /// `||theta||_2^2`, the usual weight-decay form.
    L2Squared,
}

impl Norm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "l2sq" | "l2-squared" | "l2_squared" => Ok(Norm::L2Squared),
            other => Err(Error::BadRegularization(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub norm: Norm,
    pub weight: f64,
}

impl Regularization {
    pub fn new(norm: Norm, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::BadRegularization(format!("weight {weight} must be >= 0")));
        }
        Ok(Self { norm, weight })
    }

    /// Penalty value and its (sub)gradient added into `grad`.
    pub fn apply(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        let w = self.weight;
        match self.norm {
            Norm::L1 => {
                if let Some(g) = grad {
                    for (g, &t) in g.iter_mut().zip(theta) {
                        if t != 0.0 {
                            *g += w * t.signum();
                        }
                    }
                }
                w * theta.iter().map(|t| t.abs()).sum::<f64>()
            }
            Norm::L2 => {
                let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
                if let Some(g) = grad {
                    if norm > 0.0 {
                        for (g, &t) in g.iter_mut().zip(theta) {
                            *g += w * t / norm;
                        }
                    }
                }
                w * norm
            }
            Norm::L2Squared => {
                if let Some(g) = grad {
                    for (g, &t) in g.iter_mut().zip(theta) {
                        *g += 2.0 * w * t;
                    }
                }
                w * theta.iter().map(|t| t * t).sum::<f64>()
            }
        }
    }
}

/// Ordered coefficient blocks tiling a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub coefficients: Vec<CoefficientSpec>,
    pub num_items: usize,
    pub num_users: usize,
    pub regularization: Option<Regularization>,
}

impl ModelSpec {
    fn from_parts(
        parts: Vec<(ObsRef, CoefVariation, Option<ObsVariation>, usize)>,
        num_items: usize,
        num_users: usize,
    ) -> Result<Self> {
        let mut coefficients: Vec<CoefficientSpec> = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (observable, variation, obs_variation, dim) in parts {
            if coefficients
                .iter()
                .any(|c| c.observable == observable && c.variation == variation)
            {
                return Err(Error::DuplicateTerm(format!("({}|{variation})", observable.name())));
            }
            if dim == 0 {
                return Err(Error::ShapeMismatch(format!("`{}` has dimension 0", observable.name())));
            }
            let rows = match variation {
                CoefVariation::Constant => 1,
                CoefVariation::User => num_users,
                CoefVariation::Item => num_items.saturating_sub(1),
                CoefVariation::ItemFull => num_items,
            };
            let c = CoefficientSpec {
                observable,
                variation,
                obs_variation,
                dim,
                rows,
                offset,
            };
            offset += c.param_count();
            coefficients.push(c);
        }
        Ok(Self {
            coefficients,
            num_items,
            num_users,
            regularization: None,
        })
    }

    pub fn empty(num_items: usize, num_users: usize) -> Self {
        Self {
            coefficients: Vec::new(),
            num_items,
            num_users,
            regularization: None,
        }
    }

    pub fn with_regularization(mut self, reg: Option<Regularization>) -> Self {
        self.regularization = reg;
        self
    }

    pub fn total_params(&self) -> usize {
        self.coefficients.iter().map(CoefficientSpec::param_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn coefficient(&self, name: &str) -> Option<&CoefficientSpec> {
        self.coefficients.iter().find(|c| c.name() == name)
    }

    pub fn terms(&self) -> Vec<Term> {
        self.coefficients
            .iter()
            .map(|c| Term::new(c.observable.clone(), c.variation))
            .collect()
    }

    /// Checks the layout against a dataset whose "items" axis has
    /// `self.num_items` entries.
    pub fn check_dataset(&self, data: &ChoiceDataset) -> Result<()> {
        for c in &self.coefficients {
            if c.variation == CoefVariation::User {
                if !data.has_user_index() {
                    return Err(Error::MissingUserIndex(c.name()));
                }
                if data.num_users() > self.num_users {
                    return Err(Error::ShapeMismatch(format!(
                        "{} has {} user rows but the dataset has {} users",
                        c.name(),
                        self.num_users,
                        data.num_users()
                    )));
                }
            }
            let ObsRef::Named(name) = &c.observable else {
                continue;
            };
            let obs = data
                .observable(name)
                .ok_or_else(|| Error::UnknownObservable(name.clone()))?;
            if obs.dim() != c.dim {
                return Err(Error::ShapeMismatch(format!(
                    "{} expects dimension {} but `{name}` has {}",
                    c.name(),
                    c.dim,
                    obs.dim()
                )));
            }
            let (rows, cols, _) = obs.values().dim();
            let ok = match obs.variation() {
                ObsVariation::User => rows >= data.num_users(),
                ObsVariation::Item => rows == self.num_items,
                ObsVariation::Session => rows == data.num_sessions(),
                ObsVariation::ItemSession => rows == data.num_sessions() && cols == self.num_items,
            };
            if !ok {
                return Err(Error::ShapeMismatch(format!(
                    "observable `{name}` with shape {:?} does not fit {} items",
                    obs.shape(),
                    self.num_items
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_formula(&self.terms()))
    }
}

/// Resolves parsed terms against a dataset into a parameter layout.
///
/// `num_users` defaults to the dataset's user count.
pub fn resolve(
    terms: &[Term],
    data: &ChoiceDataset,
    num_items: usize,
    num_users: Option<usize>,
) -> Result<ModelSpec> {
    let num_users = num_users.unwrap_or(data.num_users());
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        if t.variation == CoefVariation::User && !data.has_user_index() {
            return Err(Error::MissingUserIndex(t.coefficient_name()));
        }
        match &t.observable {
            ObsRef::Intercept => parts.push((ObsRef::Intercept, t.variation, None, 1)),
            ObsRef::Named(name) => {
                let obs = data
                    .observable(name)
                    .ok_or_else(|| Error::UnknownObservable(name.clone()))?;
                parts.push((
                    t.observable.clone(),
                    t.variation,
                    Some(obs.variation()),
                    obs.dim(),
                ));
            }
        }
    }
    ModelSpec::from_parts(parts, num_items, num_users)
}

/// Builds a layout from name → variation and name → dimension maps.
///
/// Dimensions are checked against data only when a model is built.
pub fn dict_config(
    coef_variation: &IndexMap<String, String>,
    num_params: &IndexMap<String, usize>,
    num_items: usize,
    num_users: Option<usize>,
) -> Result<ModelSpec> {
    for key in num_params.keys() {
        if !coef_variation.contains_key(key) {
            return Err(Error::KeyMismatch(key.clone()));
        }
    }
    let mut parts = Vec::with_capacity(coef_variation.len());
    for (name, var) in coef_variation {
        let dim = *num_params
            .get(name)
            .ok_or_else(|| Error::KeyMismatch(name.clone()))?;
        let variation = CoefVariation::parse(var)?;
        if variation == CoefVariation::User && num_users.is_none() {
            return Err(Error::MissingUserIndex(format!("{name}[user]")));
        }
        let observable = ObsRef::from_token(name);
        let obs_variation = match &observable {
            ObsRef::Intercept => None,
            ObsRef::Named(n) => Some(ObsVariation::from_name(n)?),
        };
        parts.push((observable, variation, obs_variation, dim));
    }
    ModelSpec::from_parts(parts, num_items, num_users.unwrap_or(1))
}
