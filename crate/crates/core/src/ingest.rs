//! Long-format tables (one row per record and candidate item) to
//! [`ChoiceDataset`].

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array2, Array3};

use crate::dataset::{Availability, ChoiceDataset, ObsVariation, Observable, Precision};
use crate::error::{Error, Result};

/// A CSV table kept as strings so values read back exactly as written.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let t = Self { headers, rows };
        for (i, r) in t.rows.iter().enumerate() {
            if r.len() != t.headers.len() {
                return Err(Error::Csv(format!(
                    "row {} has {} fields, header has {}",
                    i + 1,
                    r.len(),
                    t.headers.len()
                )));
            }
        }
        Ok(t)
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = rdr
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_reader(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Csv(m) => Error::Csv(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_writer(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.headers)?;
        for r in &self.rows {
            wtr.write_record(r)?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.to_writer(std::io::BufWriter::new(f))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelMode {
    /// Codes follow the order labels first appear in.
    #[default]
    FirstAppearance,
    /// Codes follow sorted order: numeric when every label is a number, else lexicographic.
    Sorted,
}

impl LabelMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "first-appearance" | "first_appearance" => Ok(LabelMode::FirstAppearance),
            "sorted" => Ok(LabelMode::Sorted),
            _ => Err(Error::BadOptions(format!(
                "label encoding must be `first-appearance` or `sorted`, got `{s}`"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::FirstAppearance => "first-appearance",
            LabelMode::Sorted => "sorted",
        }
    }
}

/// Bijection between raw labels and codes `0..M`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelEncoding {
    labels: Vec<String>,
    codes: HashMap<String, usize>,
}

impl LabelEncoding {
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut codes = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if codes.insert(l.clone(), i).is_some() {
                return Err(Error::DuplicateKey {
                    table: "label encoding".into(),
                    key: l.clone(),
                });
            }
        }
        Ok(Self { labels, codes })
    }

    pub fn encode(&self, label: &str) -> Option<usize> {
        self.codes.get(label).copied()
    }

    pub fn decode(&self, code: usize) -> Option<&str> {
        self.labels.get(code).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Encodes `values` to consecutive integer codes.
pub fn encode_labels<S: AsRef<str>>(values: &[S], mode: LabelMode) -> (Vec<usize>, LabelEncoding) {
    let mut seen: IndexMap<&str, ()> = IndexMap::new();
    for v in values {
        seen.insert(v.as_ref(), ());
    }
    let mut labels: Vec<String> = seen.keys().map(|s| s.to_string()).collect();
    if mode == LabelMode::Sorted {
        let nums: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
        match nums {
            Some(n) if n.iter().all(|v| v.is_finite()) => {
                let mut order: Vec<usize> = (0..labels.len()).collect();
                order.sort_by(|&a, &b| n[a].total_cmp(&n[b]).then_with(|| labels[a].cmp(&labels[b])));
                labels = order.into_iter().map(|i| labels[i].clone()).collect();
            }
            _ => labels.sort(),
        }
    }
    let enc = LabelEncoding::from_labels(labels).expect("distinct labels");
    let codes = values.iter().map(|v| enc.encode(v.as_ref()).expect("seen")).collect();
    (codes, enc)
}

/// Which main-table columns identify records, items, choices, users and sessions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnRoles {
    pub record: String,
    pub item: String,
    pub choice: String,
    pub user: Option<String>,
    pub session: Option<String>,
}

/// Observable taken from main-table columns (one feature per column).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSource {
    pub name: String,
    pub variation: ObsVariation,
    pub columns: Vec<String>,
}

/// Observable taken from a side table keyed by user, item, session or both.
/// Every non-key column is a feature.
#[derive(Clone, Debug, PartialEq)]
pub struct TableSource {
    pub name: String,
    pub variation: ObsVariation,
    pub table: Table,
}

/// `short` with the variation prefix added unless already present.
pub fn observable_name(variation: ObsVariation, short: &str) -> String {
    match ObsVariation::from_name(short) {
        Ok(v) if v == variation => short.to_string(),
        _ => format!("{}{short}", variation.prefix()),
    }
}

/// One single-feature observable per listed column, named `<prefix><column>`.
pub fn columns_by_variation(spec: &[(ObsVariation, Vec<String>)]) -> Vec<ColumnSource> {
    spec.iter()
        .flat_map(|(v, cols)| {
            cols.iter().map(move |c| ColumnSource {
                name: observable_name(*v, c),
                variation: *v,
                columns: vec![c.clone()],
            })
        })
        .collect()
}

/// Label encodings produced by ingestion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Encodings {
    pub mode: LabelMode,
    pub items: LabelEncoding,
    pub users: Option<LabelEncoding>,
    /// `None` when the table has no session column (each record is its own session).
    pub sessions: Option<LabelEncoding>,
    /// Record labels in dataset order.
    pub records: Vec<String>,
}

impl fmt::Display for Encodings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} records, {} items, {} users, {} sessions ({})",
            self.records.len(),
            self.items.len(),
            self.users.as_ref().map_or(0, LabelEncoding::len),
            self.sessions.as_ref().map_or(self.records.len(), LabelEncoding::len),
            self.mode.as_str()
        )
    }
}

fn parse_number(column: &str, value: &str) -> Result<f64> {
    let v: f64 = value.trim().parse().map_err(|_| Error::BadNumber {
        column: column.to_string(),
        value: value.to_string(),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::BadNumber {
            column: column.to_string(),
            value: value.to_string(),
        })
    }
}

fn parse_choice(value: &str) -> Result<bool> {
    match value.trim() {
        "1" | "1.0" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "0.0" | "false" | "False" | "FALSE" => Ok(false),
        _ => Err(Error::BadChoiceValue(value.to_string())),
    }
}

fn entity_name(v: ObsVariation) -> &'static str {
    match v {
        ObsVariation::User => "user",
        ObsVariation::Item => "item",
        ObsVariation::Session => "session",
        ObsVariation::ItemSession => "(session, item)",
    }
}

/// Row slot of a (user, item, session) key for an observable variation.
fn slot(v: ObsVariation, user: usize, item: usize, session: usize, num_items: usize) -> usize {
    match v {
        ObsVariation::User => user,
        ObsVariation::Item => item,
        ObsVariation::Session => session,
        ObsVariation::ItemSession => session * num_items + item,
    }
}

/// Dense value buffer with a "filled" mask, for consistency checks.
struct Fill {
    values: Vec<f64>,
    set: Vec<bool>,
    dim: usize,
}

impl Fill {
    fn new(slots: usize, dim: usize) -> Self {
        Self {
            values: vec![0.0; slots * dim],
            set: vec![false; slots],
            dim,
        }
    }

    fn put(&mut self, slot: usize, row: &[f64]) -> bool {
        let dst = &mut self.values[slot * self.dim..(slot + 1) * self.dim];
        if self.set[slot] {
            return dst.iter().zip(row).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        dst.copy_from_slice(row);
        self.set[slot] = true;
        true
    }
}

/// Builds a dataset from a long-format main table.
///
/// Records are the distinct values of the record column in order of first
/// appearance. Item availability per session is the union of the items listed
/// in that session's rows. Item-session values for unavailable pairs are 0.
pub fn from_long_format(
    main: &Table,
    roles: &ColumnRoles,
    columns: &[ColumnSource],
    tables: &[TableSource],
    mode: LabelMode,
    precision: Precision,
) -> Result<(ChoiceDataset, Encodings)> {
    if main.is_empty() {
        return Err(Error::EmptyInput("main table has no rows".into()));
    }
    let rc = main.require(&roles.record)?;
    let ic = main.require(&roles.item)?;
    let cc = main.require(&roles.choice)?;
    let uc = roles.user.as_deref().map(|c| main.require(c)).transpose()?;
    let sc = roles.session.as_deref().map(|c| main.require(c)).transpose()?;

    let col = |c: usize| -> Vec<&str> { main.rows.iter().map(|r| r[c].as_str()).collect() };
    let (item_codes, items) = encode_labels(&col(ic), mode);
    let users = uc.map(|c| encode_labels(&col(c), mode));
    let sessions_enc = sc.map(|c| encode_labels(&col(c), mode));

    // Group rows by record.
    let mut groups: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (r, row) in main.rows.iter().enumerate() {
        groups.entry(row[rc].as_str()).or_default().push(r);
    }
    let n = groups.len();
    let mut item_index = Vec::with_capacity(n);
    let mut user_index = users.as_ref().map(|_| Vec::with_capacity(n));
    let mut session_index = Vec::with_capacity(n);
    let mut record_of_row = vec![0usize; main.len()];
    for (g, (label, rows)) in groups.iter().enumerate() {
        let mut chosen = None;
        for &r in rows {
            record_of_row[r] = g;
            if parse_choice(&main.rows[r][cc])? {
                if chosen.is_some() {
                    return Err(Error::MultipleChosen(label.to_string()));
                }
                chosen = Some(r);
            }
        }
        let chosen = chosen.ok_or_else(|| Error::NoneChosen(label.to_string()))?;
        item_index.push(item_codes[chosen]);
        if let (Some((codes, _)), Some(ui)) = (&users, user_index.as_mut()) {
            let u = codes[rows[0]];
            if rows.iter().any(|&r| codes[r] != u) {
                return Err(Error::InconsistentUserOrSession(label.to_string(), "user"));
            }
            ui.push(u);
        }
        let s = match &sessions_enc {
            Some((codes, _)) => {
                let s = codes[rows[0]];
                if rows.iter().any(|&r| codes[r] != s) {
                    return Err(Error::InconsistentUserOrSession(label.to_string(), "session"));
                }
                s
            }
            None => g,
        };
        session_index.push(s);
    }
    let num_items = items.len();
    let num_sessions = sessions_enc.as_ref().map_or(n, |(_, e)| e.len());
    let num_users = users.as_ref().map_or(1, |(_, e)| e.len());
    let session_of_row = |r: usize| -> usize {
        match &sessions_enc {
            Some((codes, _)) => codes[r],
            None => record_of_row[r],
        }
    };
    let user_of_row = |r: usize| -> usize { users.as_ref().map_or(0, |(codes, _)| codes[r]) };

    let mut avail = Availability::none(num_sessions, num_items);
    for r in 0..main.len() {
        avail.set(session_of_row(r), item_codes[r], true);
    }

    let slots = |v: ObsVariation| -> usize {
        match v {
            ObsVariation::User => num_users,
            ObsVariation::Item => num_items,
            ObsVariation::Session => num_sessions,
            ObsVariation::ItemSession => num_sessions * num_items,
        }
    };
    let shape = |v: ObsVariation, dim: usize| -> (usize, usize, usize) {
        match v {
            ObsVariation::User => (num_users, 1, dim),
            ObsVariation::Item => (num_items, 1, dim),
            ObsVariation::Session => (num_sessions, 1, dim),
            ObsVariation::ItemSession => (num_sessions, num_items, dim),
        }
    };
    let need_user = |name: &str| -> Result<()> {
        if users.is_none() {
            Err(Error::MissingColumn(format!(
                "user column role (needed for user observable `{name}`)"
            )))
        } else {
            Ok(())
        }
    };

    let mut observables = Vec::with_capacity(columns.len() + tables.len());
    for src in columns {
        let name = observable_name(src.variation, &src.name);
        if src.variation == ObsVariation::User {
            need_user(&name)?;
        }
        let idx = src
            .columns
            .iter()
            .map(|c| main.require(c))
            .collect::<Result<Vec<_>>>()?;
        if idx.is_empty() {
            return Err(Error::MissingColumn(format!("no columns listed for `{name}`")));
        }
        let mut fill = Fill::new(slots(src.variation), idx.len());
        let mut row_vals = vec![0.0; idx.len()];
        for (r, row) in main.rows.iter().enumerate() {
            for (k, &c) in idx.iter().enumerate() {
                row_vals[k] = parse_number(&main.headers[c], &row[c])?;
            }
            let s = slot(src.variation, user_of_row(r), item_codes[r], session_of_row(r), num_items);
            if !fill.put(s, &row_vals) {
                let key = match src.variation {
                    ObsVariation::User => main.rows[r][uc.expect("checked")].clone(),
                    ObsVariation::Item => main.rows[r][ic].clone(),
                    ObsVariation::Session => sc.map_or_else(|| main.rows[r][rc].clone(), |c| main.rows[r][c].clone()),
                    ObsVariation::ItemSession => format!(
                        "{}, {}",
                        sc.map_or_else(|| main.rows[r][rc].clone(), |c| main.rows[r][c].clone()),
                        main.rows[r][ic]
                    ),
                };
                return Err(Error::InconsistentObservable {
                    column: src.columns.join(","),
                    entity: entity_name(src.variation),
                    key,
                });
            }
        }
        observables.push(make_observable(name, shape(src.variation, idx.len()), fill.values)?);
    }

    for src in tables {
        let name = observable_name(src.variation, &src.name);
        let t = &src.table;
        let key_cols: Vec<(&str, Option<&LabelEncoding>)> = match src.variation {
            ObsVariation::User => {
                need_user(&name)?;
                vec![(roles.user.as_deref().expect("checked"), users.as_ref().map(|u| &u.1))]
            }
            ObsVariation::Item => vec![(roles.item.as_str(), Some(&items))],
            ObsVariation::Session => vec![(
                roles.session.as_deref().unwrap_or(roles.record.as_str()),
                sessions_enc.as_ref().map(|s| &s.1),
            )],
            ObsVariation::ItemSession => vec![
                (roles.item.as_str(), Some(&items)),
                (
                    roles.session.as_deref().unwrap_or(roles.record.as_str()),
                    sessions_enc.as_ref().map(|s| &s.1),
                ),
            ],
        };
        let mut key_idx = Vec::with_capacity(key_cols.len());
        for (kc, _) in &key_cols {
            key_idx.push(t.column(kc).ok_or_else(|| Error::MissingKeyColumn {
                table: name.clone(),
                column: kc.to_string(),
            })?);
        }
        let value_idx: Vec<usize> = (0..t.headers.len()).filter(|c| !key_idx.contains(c)).collect();
        if value_idx.is_empty() {
            return Err(Error::MissingColumn(format!("table `{name}` has no value columns")));
        }
        let record_codes: Option<HashMap<&str, usize>> = if sessions_enc.is_none() {
            Some(groups.keys().enumerate().map(|(i, k)| (*k, i)).collect())
        } else {
            None
        };
        let code_of = |k: usize, label: &str| -> Option<usize> {
            match key_cols[k].1 {
                Some(enc) => enc.encode(label),
                None => record_codes.as_ref().and_then(|m| m.get(label).copied()),
            }
        };
        let mut fill = Fill::new(slots(src.variation), value_idx.len());
        let mut row_vals = vec![0.0; value_idx.len()];
        for row in &t.rows {
            let codes: Vec<Option<usize>> = key_idx.iter().enumerate().map(|(k, &c)| code_of(k, &row[c])).collect();
            // Keys that never occur in the main table are ignored.
            if codes.iter().any(Option::is_none) {
                continue;
            }
            let s = match src.variation {
                ObsVariation::ItemSession => {
                    let (i, ses) = (codes[0].expect("some"), codes[1].expect("some"));
                    if !avail.get(ses, i) {
                        continue;
                    }
                    ses * num_items + i
                }
                _ => codes[0].expect("some"),
            };
            if fill.set[s] {
                let key: Vec<&str> = key_idx.iter().map(|&c| row[c].as_str()).collect();
                return Err(Error::DuplicateKey {
                    table: name.clone(),
                    key: key.join(", "),
                });
            }
            for (k, &c) in value_idx.iter().enumerate() {
                row_vals[k] = parse_number(&t.headers[c], &row[c])?;
            }
            fill.put(s, &row_vals);
        }
        for s in 0..fill.set.len() {
            if fill.set[s] {
                continue;
            }
            let key = match src.variation {
                ObsVariation::ItemSession => {
                    let (ses, i) = (s / num_items, s % num_items);
                    if !avail.get(ses, i) {
                        continue;
                    }
                    format!("{}, {}", session_label(&sessions_enc, &groups, ses), items.labels()[i])
                }
                ObsVariation::User => users.as_ref().expect("checked").1.labels()[s].clone(),
                ObsVariation::Item => items.labels()[s].clone(),
                ObsVariation::Session => session_label(&sessions_enc, &groups, s),
            };
            return Err(Error::MissingEntity {
                table: name.clone(),
                entity: entity_name(src.variation),
                key,
            });
        }
        observables.push(make_observable(name, shape(src.variation, value_idx.len()), fill.values)?);
    }

    let mut b = ChoiceDataset::builder(item_index)
        .session_index(session_index)
        .availability(avail)
        .num_items(num_items)
        .num_sessions(num_sessions)
        .observables(observables)
        .precision(precision);
    if let Some(ui) = user_index {
        b = b.user_index(ui).num_users(num_users);
    }
    let ds = b.build()?;
    let enc = Encodings {
        mode,
        items,
        users: users.map(|u| u.1),
        sessions: sessions_enc.map(|s| s.1),
        records: groups.keys().map(|k| k.to_string()).collect(),
    };
    Ok((ds, enc))
}

fn make_observable(name: String, shape: (usize, usize, usize), values: Vec<f64>) -> Result<Observable> {
    let arr = Array3::from_shape_vec(shape, values).expect("sized");
    if ObsVariation::from_name(&name)? == ObsVariation::ItemSession {
        Observable::from_tensor(name, arr)
    } else {
        let (rows, _, k) = shape;
        Observable::from_matrix(name, arr.into_shape_with_order((rows, k)).expect("sized"))
    }
}

fn session_label(
    sessions: &Option<(Vec<usize>, LabelEncoding)>,
    groups: &IndexMap<&str, Vec<usize>>,
    s: usize,
) -> String {
    match sessions {
        Some((_, e)) => e.labels()[s].clone(),
        None => groups.get_index(s).map_or_else(|| s.to_string(), |(k, _)| k.to_string()),
    }
}

/// Column names used by [`to_long_format`].
pub fn long_format_roles(with_user: bool) -> ColumnRoles {
    ColumnRoles {
        record: "record_id".into(),
        item: "item".into(),
        choice: "choice".into(),
        user: with_user.then(|| "user_id".into()),
        session: Some("session_id".into()),
    }
}

/// Emits one row per record and available item. Labels come from `enc` when
/// given, otherwise codes are written. Observables become columns named after
/// the observable (`<name>.<k>` for multi-feature ones); the returned sources
/// re-ingest them.
pub fn to_long_format(ds: &ChoiceDataset, enc: Option<&Encodings>) -> (Table, ColumnRoles, Vec<ColumnSource>) {
    let roles = long_format_roles(ds.has_user_index());
    let mut headers = vec![roles.record.clone()];
    if let Some(u) = &roles.user {
        headers.push(u.clone());
    }
    headers.extend([
        roles.session.clone().expect("set"),
        roles.item.clone(),
        roles.choice.clone(),
    ]);
    let mut sources = Vec::new();
    for obs in ds.observables() {
        let cols: Vec<String> = if obs.dim() == 1 {
            vec![obs.name().to_string()]
        } else {
            (0..obs.dim()).map(|k| format!("{}.{k}", obs.name())).collect()
        };
        headers.extend(cols.iter().cloned());
        sources.push(ColumnSource {
            name: obs.name().to_string(),
            variation: obs.variation(),
            columns: cols,
        });
    }
    let label = |e: Option<&LabelEncoding>, code: usize| -> String {
        e.and_then(|e| e.decode(code)).map_or_else(|| code.to_string(), str::to_string)
    };
    let mut rows = Vec::new();
    for r in 0..ds.len() {
        let (u, s, chosen) = (ds.user_of(r), ds.session_of(r), ds.item_of(r));
        let record = enc
            .and_then(|e| e.records.get(r).cloned())
            .unwrap_or_else(|| r.to_string());
        for i in 0..ds.num_items() {
            if !ds.is_available(s, i) {
                continue;
            }
            let mut row = vec![record.clone()];
            if ds.has_user_index() {
                row.push(label(enc.and_then(|e| e.users.as_ref()), u));
            }
            row.push(label(enc.and_then(|e| e.sessions.as_ref()), s));
            row.push(label(enc.map(|e| &e.items), i));
            row.push(if i == chosen { "1" } else { "0" }.to_string());
            for obs in ds.observables() {
                row.extend(obs.feature(u, i, s).iter().map(|v| format!("{v:?}")));
            }
            rows.push(row);
        }
    }
    (Table { headers, rows }, roles, sources)
}

/// `(rows, K)` view of a 2-D feature table, for callers building side tables.
pub fn side_table(key_header: &str, keys: &[String], value_headers: &[String], values: &Array2<f64>) -> Table {
    let mut headers = vec![key_header.to_string()];
    headers.extend(value_headers.iter().cloned());
    let rows = keys
        .iter()
        .zip(values.rows())
        .map(|(k, v)| {
            let mut r = vec![k.clone()];
            r.extend(v.iter().map(|x| format!("{x:?}")));
            r
        })
        .collect();
    Table { headers, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> Table {
        Table::from_reader(csv.as_bytes()).unwrap()
    }

    fn roles() -> ColumnRoles {
        ColumnRoles {
            record: "rec".into(),
            item: "item".into(),
            choice: "y".into(),
            user: Some("user".into()),
            session: Some("sess".into()),
        }
    }

    #[test]
    fn label_encoding_orders() {
        let (codes, enc) = encode_labels(&["Amy", "Ben", "Ben", "Charlie", "Charlie"], LabelMode::FirstAppearance);
        assert_eq!(codes, vec![0, 1, 1, 2, 2]);
        assert_eq!(enc.decode(2), Some("Charlie"));
        let (codes, enc) = encode_labels(&["banana", "apple", "orange"], LabelMode::FirstAppearance);
        assert_eq!(codes, vec![0, 1, 2]);
        assert_eq!(enc.encode("apple"), Some(1));
        let (codes, _) = encode_labels(&["banana", "apple", "orange"], LabelMode::Sorted);
        assert_eq!(codes, vec![1, 0, 2]);
        let (codes, _) = encode_labels(&["10", "9", "100"], LabelMode::Sorted);
        assert_eq!(codes, vec![1, 0, 2]);
        let (codes, _) = encode_labels(&["x", "x"], LabelMode::Sorted);
        assert_eq!(codes, vec![0, 0]);
    }

    #[test]
    fn group_errors() {
        let base = "rec,item,y,user,sess\n";
        let run = |body: &str| {
            from_long_format(&table(&format!("{base}{body}")), &roles(), &[], &[], LabelMode::FirstAppearance, Precision::F64)
                .map(|_| ())
                .unwrap_err()
                .name()
        };
        assert_eq!(run("1,a,1,u,s\n1,b,1,u,s\n"), "MultipleChosen");
        assert_eq!(run("1,a,0,u,s\n1,b,0,u,s\n"), "NoneChosen");
        assert_eq!(run("1,a,1,u,s\n1,b,0,v,s\n"), "InconsistentUserOrSession");
        assert_eq!(run("1,a,1,u,s\n1,b,0,u,t\n"), "InconsistentUserOrSession");
        assert_eq!(run("1,a,2,u,s\n"), "BadChoiceValue");
    }

    #[test]
    fn inconsistent_column_observable() {
        let t = table("rec,item,y,user,sess,user_age\n1,a,1,u,s,3\n1,b,0,u,s,4\n");
        let cols = columns_by_variation(&[(ObsVariation::User, vec!["user_age".into()])]);
        let err = from_long_format(&t, &roles(), &cols, &[], LabelMode::FirstAppearance, Precision::F64).unwrap_err();
        assert_eq!(err.name(), "InconsistentObservable");
        assert_eq!(cols[0].name, "user_age");
    }

    #[test]
    fn side_table_errors() {
        let main = table("rec,item,y,user,sess\n1,a,1,u,s\n1,b,0,u,s\n2,a,0,v,t\n2,b,1,v,t\n");
        let run = |csv: &str, v: ObsVariation| {
            let src = TableSource {
                name: "x".into(),
                variation: v,
                table: table(csv),
            };
            from_long_format(&main, &roles(), &[], &[src], LabelMode::FirstAppearance, Precision::F64)
                .map(|_| ())
                .unwrap_err()
                .name()
        };
        assert_eq!(run("who,x\nu,1\nv,2\n", ObsVariation::User), "MissingKeyColumn");
        assert_eq!(run("user,x\nu,1\nu,2\nv,3\n", ObsVariation::User), "DuplicateKey");
        assert_eq!(run("user,x\nu,1\n", ObsVariation::User), "MissingEntity");
        assert_eq!(run("item,x\na,1\nb,zz\n", ObsVariation::Item), "BadNumber");
        assert_eq!(run("item,sess,x\na,s,1\nb,s,1\na,t,1\n", ObsVariation::ItemSession), "MissingEntity");
    }

    #[test]
    fn records_without_sessions_are_their_own_sessions() {
        let t = table("rec,item,y\nr1,a,1\nr1,b,0\nr2,b,1\n");
        let roles = ColumnRoles {
            record: "rec".into(),
            item: "item".into(),
            choice: "y".into(),
            user: None,
            session: None,
        };
        let side = TableSource {
            name: "session_w".into(),
            variation: ObsVariation::Session,
            table: table("rec,w\nr2,5\nr1,4\n"),
        };
        let (ds, enc) = from_long_format(&t, &roles, &[], &[side], LabelMode::FirstAppearance, Precision::F64).unwrap();
        assert_eq!(ds.session_index(), &[0, 1]);
        assert!(!ds.is_available(1, 0));
        assert_eq!(ds.observable("session_w").unwrap().feature(0, 0, 1), &[5.0]);
        assert_eq!(enc.records, vec!["r1", "r2"]);
        assert!(!ds.has_user_index());
    }
}
