//! Result tables: one row per learner, accuracy on S_train, S_val and T.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_file;

pub const CSV_HEADER: &str = "row_name,s_train,s_val,t";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    pub s_train: f32,
    pub s_val: f32,
    pub t: f32,
}

impl ResultRow {
    pub fn columns(&self) -> [f32; 3] {
        [self.s_train, self.s_val, self.t]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Names of the base CNN rows, `model 1` to `model n`.
pub fn model_row_name(i: usize) -> String {
    format!("model {}", i + 1)
}

pub fn is_model_row(name: &str) -> bool {
    name.strip_prefix("model ").is_some_and(|n| n.parse::<usize>().is_ok())
}

/// Three decimals, as in the published tables.
pub fn fmt_accuracy(v: f32) -> String {
    format!("{:.3}", v as f64)
}

impl ResultsTable {
    pub fn get(&self, name: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    fn check(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Config("results table has no rows".into()));
        }
        for r in &self.rows {
            if r.columns().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("row {} has an accuracy outside [0, 1]", r.name)));
            }
        }
        Ok(())
    }

    pub fn render(&self, format: TableFormat) -> Result<String> {
        self.check()?;
        let mut out = String::new();
        match format {
            TableFormat::Csv => {
                out.push_str(CSV_HEADER);
                out.push('\n');
                for r in &self.rows {
                    let [a, b, c] = r.columns().map(fmt_accuracy);
                    writeln!(out, "{},{a},{b},{c}", r.name).expect("writing to a String");
                }
            }
            TableFormat::Markdown => {
                out.push_str("| Model | S_train | S_val | T |\n|:------|--------:|------:|--:|\n");
                for r in &self.rows {
                    let [a, b, c] = r.columns().map(fmt_accuracy);
                    let name = if is_model_row(&r.name) || matches!(r.name.as_str(), "RF" | "SVM" | "LR") {
                        r.name.clone()
                    } else {
                        format!("**{}**", r.name)
                    };
                    writeln!(out, "| {name} | {a} | {b} | {c} |").expect("writing to a String");
                }
            }
        }
        Ok(out)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = ::csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::format("results CSV", format!("header `{}`", header.join(","))));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f32> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format("results CSV", format!("bad value in row {:?}", rec.get(0))))
            };
            rows.push(ResultRow {
                name: rec.get(0).unwrap_or_default().to_string(),
                s_train: num(1)?,
                s_val: num(2)?,
                t: num(3)?,
            });
        }
        let table = Self { rows };
        table.check()?;
        Ok(table)
    }
}

pub fn emit_table(table: &ResultsTable, format: TableFormat, path: &Path) -> Result<()> {
    write_file(path, table.render(format)?.as_bytes())
}

pub const COLUMNS: [&str; 3] = ["s_train", "s_val", "t"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDelta {
    pub column: String,
    pub value: f64,
    pub member_mean: f64,
    pub member_best: f64,
    pub delta_vs_mean: f64,
    pub delta_vs_best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub name: String,
    /// Rows the ensemble is compared against.
    pub members: Vec<String>,
    pub columns: Vec<ColumnDelta>,
}

/// Deltas of every fused row against the mean and best of the rows it fuses:
/// the base CNNs for EnA, EnM, EnM2 and HCNN, the classical learners for EnT.
pub fn compare_summary(table: &ResultsTable) -> Vec<EnsembleSummary> {
    let bases: Vec<&ResultRow> = table.rows.iter().filter(|r| is_model_row(&r.name)).collect();
    let classical: Vec<&ResultRow> = table
        .rows
        .iter()
        .filter(|r| matches!(r.name.as_str(), "RF" | "SVM" | "LR"))
        .collect();
    let mut out = Vec::new();
    for row in &table.rows {
        let members = match row.name.as_str() {
            "EnA" | "EnM" | "EnM2" | "HCNN" => &bases,
            "EnT" => &classical,
            _ => continue,
        };
        if members.is_empty() {
            continue;
        }
        let columns = (0..3)
            .map(|c| {
                let vals: Vec<f64> = members.iter().map(|m| m.columns()[c] as f64).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let value = row.columns()[c] as f64;
                ColumnDelta {
                    column: COLUMNS[c].to_string(),
                    value,
                    member_mean: mean,
                    member_best: best,
                    delta_vs_mean: value - mean,
                    delta_vs_best: value - best,
                }
            })
            .collect();
        out.push(EnsembleSummary {
            name: row.name.clone(),
            members: members.iter().map(|m| m.name.clone()).collect(),
            columns,
        });
    }
    out
}
