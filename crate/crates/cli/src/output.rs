//! Run directories: `<out_dir>/<timestamp>-<hash>/`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use wavets_core::eval::{count_macs, count_params, MacCount, ParamCount};
use wavets_core::run::RunOutput;
use wavets_core::{ModelConfig, RunConfig, RunReport};

use crate::CliError;

/// First eight hex digits of the SHA-256 of the config's JSON.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(4).map(|b| format!("{b:02x}")).collect())
}

/// Creates a fresh directory named after the current time and the config hash.
pub fn fresh_dir<T: Serialize>(root: &Path, prefix: &str, cfg: &T) -> Result<PathBuf, CliError> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{prefix}{stamp}-{}", config_hash(cfg)?);
    fs::create_dir_all(root)?;
    let mut dir = root.join(&base);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = root.join(format!("{base}-{n}"));
    }
    fs::create_dir(&dir)?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

#[derive(Serialize)]
struct Details<'a> {
    report: &'a RunReport,
    model: &'a ModelConfig,
    params: ParamCount,
    macs: MacCount,
    parameter_names: &'a [String],
    version: &'static str,
}

/// Writes config, report, checkpoint and details of one finished run.
pub fn write_run(root: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<PathBuf, CliError> {
    let dir = fresh_dir(root, "", cfg)?;
    write_json(&dir.join("config.json"), cfg)?;
    RunReport::write_csv([&out.report], File::create(dir.join("report.csv"))?)?;
    out.model.params().save(&dir.join("checkpoint.json"))?;
    let model = out.model.config();
    let details = Details {
        report: &out.report,
        model,
        params: count_params(model)?,
        macs: count_macs(model, cfg.batch_size)?,
        parameter_names: out.model.params().names(),
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&dir.join("details.json"), &details)?;
    Ok(dir)
}
