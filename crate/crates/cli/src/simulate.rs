use std::io::Write;
use std::path::PathBuf;

use choicekit::ingest::{side_table, Table};
use choicekit::synth::{simulate, SimModel, SimSpec};
use choicekit::ObsVariation;
use indexmap::IndexMap;
use serde_json::{json, Value};

use crate::manifest::{Manifest, Roles, TableEntry, SCHEMA};
use crate::{create_dir, json_bytes, write_file, CliError, EXIT_OK};

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// `m1`, `m2` or `m3`.
    #[arg(long, default_value = "m1")]
    model: String,
    #[arg(long, default_value_t = 100)]
    users: usize,
    #[arg(long, default_value_t = 30)]
    items: usize,
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = 10_000)]
    records: usize,
    #[arg(long, default_value_t = 30)]
    user_dim: usize,
    #[arg(long, default_value_t = 30)]
    item_dim: usize,
    #[arg(long, default_value_t = 0)]
    session_dim: usize,
    #[arg(long, default_value_t = 0)]
    itemsession_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn feature_headers(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

fn to_csv(t: &Table) -> Vec<u8> {
    let mut buf = Vec::new();
    t.to_writer(&mut buf).expect("in memory");
    buf
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let model = SimModel::parse(&a.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SimSpec {
        num_users: a.users,
        num_items: a.items,
        num_sessions: a.sessions,
        num_records: a.records,
        user_dim: a.user_dim,
        item_dim: a.item_dim,
        session_dim: a.session_dim,
        itemsession_dim: a.itemsession_dim,
        model,
        seed: a.seed,
        ..SimSpec::default()
    };
    let sim = simulate(&spec)?;
    let ds = &sim.data;
    create_dir(&a.out)?;

    let mut main = String::from("record_id,user_id,session_id,item,choice\n");
    for r in 0..ds.len() {
        let (u, s, c) = (ds.user_of(r), ds.session_of(r), ds.item_of(r));
        for i in 0..ds.num_items() {
            main.push_str(&format!("{r},{u},{s},{i},{}\n", u8::from(i == c)));
        }
    }
    write_file(&a.out.join("main.csv"), main.as_bytes())?;

    let mut tables = Vec::new();
    for obs in ds.observables() {
        let file = format!("{}.csv", obs.name());
        let values = obs.values();
        let table = match obs.variation() {
            ObsVariation::ItemSession => {
                let mut headers = vec!["item".to_string(), "session_id".to_string()];
                headers.extend(feature_headers(obs.dim()));
                let mut rows = Vec::new();
                for s in 0..ds.num_sessions() {
                    for i in 0..ds.num_items() {
                        let mut row = vec![i.to_string(), s.to_string()];
                        row.extend(obs.feature(0, i, s).iter().map(|v| format!("{v:?}")));
                        rows.push(row);
                    }
                }
                Table::new(headers, rows)?
            }
            v => {
                let key = match v {
                    ObsVariation::User => "user_id",
                    ObsVariation::Item => "item",
                    _ => "session_id",
                };
                let (rows, _, dim) = values.dim();
                let flat = values.to_shape((rows, dim)).expect("contiguous").to_owned();
                side_table(key, &labels(rows), &feature_headers(dim), &flat)
            }
        };
        write_file(&a.out.join(&file), &to_csv(&table))?;
        tables.push(TableEntry {
            name: obs.name().to_string(),
            variation: obs.variation(),
            path: file.into(),
        });
    }

    let manifest = Manifest {
        schema: SCHEMA,
        main_csv: "main.csv".into(),
        roles: Roles {
            record: "record_id".into(),
            item: "item".into(),
            choice: "choice".into(),
            user: Some("user_id".into()),
            session: Some("session_id".into()),
        },
        // Numeric labels sort back to the simulated codes.
        encoding: Some("sorted".into()),
        precision: None,
        columns: IndexMap::new(),
        tables,
        nest_tables: Vec::new(),
    };
    manifest.write(&a.out.join("manifest.json"))?;

    let mut coefficients = serde_json::Map::new();
    for c in &sim.truth.spec().coefficients {
        let name = c.name();
        let arr = sim.truth.get(&name)?;
        let v: Vec<f64> = arr.iter().copied().collect();
        coefficients.insert(
            name,
            json!({ "variation": c.variation.as_str(), "shape": arr.shape(), "values": v }),
        );
    }
    let truth = json!({
        "model": model.as_str(),
        "formula": sim.formula,
        "seed": a.seed,
        "theta": sim.truth.values(),
        "coefficients": Value::Object(coefficients),
    });
    write_file(&a.out.join("truth.json"), &json_bytes(&truth))?;
    let _ = writeln!(
        out,
        "simulated {} records ({} users, {} items, model {model}) into {}",
        ds.len(),
        ds.num_users(),
        ds.num_items(),
        a.out.display()
    );
    let _ = writeln!(out, "fit formula: {}", sim.formula);
    Ok(EXIT_OK)
}
