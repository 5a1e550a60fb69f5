//! Dataset manifest: where the long-format CSV lives and how to read it.

use std::path::{Path, PathBuf};

use choicekit::ingest::{
    columns_by_variation, from_long_format, observable_name, ColumnRoles, Encodings, LabelMode, Table, TableSource,
};
use choicekit::{ChoiceDataset, ObsVariation, Observable, Precision};
use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub record: String,
    pub item: String,
    pub choice: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
}

/// Side table CSV: first column is the key, the rest are features.
/// Item-session tables key on item then session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub name: String,
    pub variation: ObsVariation,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: u32,
    pub main_csv: PathBuf,
    pub roles: Roles,
    /// `first-appearance` (default) or `sorted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<String>,
    /// `f64` (default) or `f32`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<String>,
    /// Variation name to main-table columns, one observable per column.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub columns: IndexMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<TableEntry>,
    /// Nest-level observables for nested logit. Item-varying ones are keyed
    /// by nest name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nest_tables: Vec<TableEntry>,
}

/// Ingested manifest.
pub struct Loaded {
    pub data: ChoiceDataset,
    pub encodings: Encodings,
    pub nest_tables: Vec<(TableEntry, Table)>,
}

fn read_table(base: &Path, p: &Path) -> Result<Table, CliError> {
    Ok(Table::read_csv(base.join(p))?)
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if m.schema != SCHEMA {
            return Err(CliError::Invalid(format!(
                "{}: unsupported manifest schema {} (expected {SCHEMA})",
                path.display(),
                m.schema
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn label_mode(&self) -> Result<LabelMode, CliError> {
        Ok(LabelMode::parse(self.encoding.as_deref().unwrap_or("first-appearance"))?)
    }

    pub fn precision(&self) -> Result<Precision, CliError> {
        match self.precision.as_deref().unwrap_or("f64") {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            p => Err(CliError::Invalid(format!("unknown precision `{p}` (f64, f32)"))),
        }
    }

    pub fn column_roles(&self) -> ColumnRoles {
        ColumnRoles {
            record: self.roles.record.clone(),
            item: self.roles.item.clone(),
            choice: self.roles.choice.clone(),
            user: self.roles.user.clone(),
            session: self.roles.session.clone(),
        }
    }

    /// Reads every referenced CSV (relative paths resolve against `base`) and ingests.
    pub fn load(&self, base: &Path) -> Result<Loaded, CliError> {
        let main = read_table(base, &self.main_csv)?;
        let mut by_var = Vec::new();
        for (var, cols) in &self.columns {
            let v = ObsVariation::parse(var)
                .ok_or_else(|| CliError::Invalid(format!("unknown variation `{var}` in manifest columns")))?;
            by_var.push((v, cols.clone()));
        }
        let columns = columns_by_variation(&by_var);
        let mut tables = Vec::with_capacity(self.tables.len());
        for t in &self.tables {
            tables.push(TableSource {
                name: t.name.clone(),
                variation: t.variation,
                table: read_table(base, &t.path)?,
            });
        }
        let (data, encodings) = from_long_format(
            &main,
            &self.column_roles(),
            &columns,
            &tables,
            self.label_mode()?,
            self.precision()?,
        )?;
        let mut nest_tables = Vec::new();
        for t in &self.nest_tables {
            nest_tables.push((t.clone(), read_table(base, &t.path)?));
        }
        Ok(Loaded {
            data,
            encodings,
            nest_tables,
        })
    }
}

/// Nest-level observables from side tables keyed by nest name, user label or
/// session label.
pub fn nest_observables(
    tables: &[(TableEntry, Table)],
    nest_names: &[String],
    enc: &Encodings,
) -> Result<Vec<Observable>, CliError> {
    let mut out = Vec::new();
    for (entry, table) in tables {
        let keys: Vec<String> = match entry.variation {
            ObsVariation::Item => nest_names.to_vec(),
            ObsVariation::User => enc
                .users
                .as_ref()
                .ok_or_else(|| CliError::Invalid(format!("nest table `{}` is user-keyed but the data has no users", entry.name)))?
                .labels()
                .to_vec(),
            ObsVariation::Session => match &enc.sessions {
                Some(s) => s.labels().to_vec(),
                None => enc.records.clone(),
            },
            ObsVariation::ItemSession => {
                return Err(CliError::Invalid(format!(
                    "nest table `{}`: item-session nest observables are not supported",
                    entry.name
                )))
            }
        };
        if table.headers.len() < 2 {
            return Err(CliError::Invalid(format!("nest table `{}` has no feature columns", entry.name)));
        }
        let dim = table.headers.len() - 1;
        let mut values = Array2::zeros((keys.len(), dim));
        for (r, key) in keys.iter().enumerate() {
            let row = table.rows.iter().find(|row| &row[0] == key).ok_or_else(|| {
                CliError::Invalid(format!("nest table `{}` has no row for `{key}`", entry.name))
            })?;
            for k in 0..dim {
                values[[r, k]] = row[k + 1].trim().parse::<f64>().map_err(|_| {
                    CliError::Invalid(format!(
                        "nest table `{}`: cannot parse `{}` in column `{}`",
                        entry.name,
                        row[k + 1],
                        table.headers[k + 1]
                    ))
                })?;
            }
        }
        out.push(Observable::from_matrix(observable_name(entry.variation, &entry.name), values)?);
    }
    Ok(out)
}
