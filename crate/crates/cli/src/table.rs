//! Results grid: one row per (dataset, L, S), one mse/mae column pair per
//! variant, each cell averaged over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use walkdir::WalkDir;
use wavets_core::Variant;

use crate::commands::{mean_std, write_with_config};
use crate::CliError;

#[derive(Args, Debug, Clone, Serialize)]
pub struct TableArgs {
    /// report.csv files or directories searched recursively for them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Markdown instead of CSV.
    #[arg(long)]
    pub markdown: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub dataset: String,
    pub variant: Variant,
    pub lookback: usize,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
}

fn report_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_file() {
            files.push(input.clone());
        } else if input.is_dir() {
            for entry in WalkDir::new(input).sort_by_file_name() {
                let entry = entry.map_err(|e| CliError::Data(e.to_string()))?;
                if entry.file_type().is_file() && entry.file_name() == "report.csv" {
                    files.push(entry.into_path());
                }
            }
        } else {
            return Err(CliError::Data(format!(
                "{}: no such file or directory",
                input.display()
            )));
        }
    }
    Ok(files)
}

pub fn read_reports(path: &Path) -> Result<Vec<Row>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let (d, v, l, s, mse, mae) = (
        col("dataset")?,
        col("variant")?,
        col("L")?,
        col("S")?,
        col("mse")?,
        col("mae")?,
    );
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let num = |i: usize| {
            r[i].parse::<f64>()
                .map_err(|_| CliError::Data(format!("{}: bad number `{}`", path.display(), &r[i])))
        };
        rows.push(Row {
            dataset: r[d].to_string(),
            variant: r[v].parse()?,
            lookback: num(l)? as usize,
            horizon: num(s)? as usize,
            mse: num(mse)?,
            mae: num(mae)?,
        });
    }
    Ok(rows)
}

type Grid = BTreeMap<(String, usize, usize), BTreeMap<usize, (Vec<f64>, Vec<f64>)>>;

fn variant_rank(v: Variant) -> usize {
    Variant::ALL.iter().position(|&x| x == v).expect("listed variant")
}

pub fn render(rows: &[Row], markdown: bool) -> String {
    let mut grid: Grid = BTreeMap::new();
    for r in rows {
        let cell = grid
            .entry((r.dataset.clone(), r.lookback, r.horizon))
            .or_default()
            .entry(variant_rank(r.variant))
            .or_default();
        cell.0.push(r.mse);
        cell.1.push(r.mae);
    }
    let mut present: Vec<usize> = grid.values().flat_map(|m| m.keys().copied()).collect();
    present.sort_unstable();
    present.dedup();
    let names: Vec<&str> = present.iter().map(|&i| Variant::ALL[i].name()).collect();

    let mut out = String::new();
    if markdown {
        let _ = writeln!(out, "| dataset | L | S | {} |", names.join(" | "));
        let _ = writeln!(out, "|---|---|---|{}", "---|".repeat(names.len()));
    } else {
        let cols: Vec<String> = names
            .iter()
            .flat_map(|n| [format!("{n}_mse"), format!("{n}_mae")])
            .collect();
        let _ = writeln!(out, "dataset,L,S,{}", cols.join(","));
    }
    for ((dataset, l, s), cells) in &grid {
        let values: Vec<String> = present
            .iter()
            .map(|i| match cells.get(i) {
                Some((mse, mae)) => {
                    let (m, a) = (mean_std(mse).0, mean_std(mae).0);
                    if markdown {
                        format!("{m:.3}/{a:.3}")
                    } else {
                        format!("{m:.6},{a:.6}")
                    }
                }
                None if markdown => "–".into(),
                None => ",".into(),
            })
            .collect();
        if markdown {
            let _ = writeln!(out, "| {dataset} | {l} | {s} | {} |", values.join(" | "));
        } else {
            let _ = writeln!(out, "{dataset},{l},{s},{}", values.join(","));
        }
    }
    out
}

pub fn run(args: &TableArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for file in report_files(&args.inputs)? {
        rows.extend(read_reports(&file)?);
    }
    if rows.is_empty() {
        return Err(CliError::Data("no report.csv rows found".into()));
    }
    let text = render(&rows, args.markdown);
    print!("{text}");
    if let Some(path) = &args.output {
        write_with_config(path, text.as_bytes(), args)?;
    }
    Ok(())
}
