//! The `gen-data` command: one certified synthetic dataset as CSV, binary
//! cache and metadata JSON.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use alignflow::data;
use alignflow::{Dataset, Rng};

use crate::config::Config;
use crate::error::CliError;
use crate::experiment::DATA_STREAM;

pub const CSV_FILE: &str = "dataset.csv";
pub const CACHE_FILE: &str = "dataset.afds";
pub const META_FILE: &str = "dataset.meta.json";

/// Uses the same random stream as `train`, so `train` with the same seed and
/// keys sees this exact dataset.
pub fn generate(cfg: &Config) -> Result<Dataset, CliError> {
    let mut rng = Rng::new(cfg.get("seed")?).fork(DATA_STREAM);
    let n = cfg.get("samples")?;
    let d = cfg.get("dim")?;
    match cfg.require("dataset")? {
        "orthogonal" => Ok(data::gen_orthogonal_separable(n, d, cfg.get("gamma")?, &mut rng)?),
        "nearly-orthogonal" => Ok(data::gen_nearly_orthogonal(n, d, cfg.get("epsilon")?, &mut rng)?),
        other => Err(CliError::Config(format!("bad value `{other}` for `dataset` (gen-data supports orthogonal | nearly-orthogonal)"))),
    }
}

pub fn run(cfg: &Config, out: &Path) -> Result<Dataset, CliError> {
    let ds = generate(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(crate::train::RESOLVED_CONFIG), cfg.render())?;
    data::write_csv(&ds, BufWriter::new(File::create(out.join(CSV_FILE))?))?;
    data::write_cache(&ds, BufWriter::new(File::create(out.join(CACHE_FILE))?))?;
    fs::write(out.join(META_FILE), serde_json::to_string_pretty(ds.meta())?)?;
    Ok(ds)
}
