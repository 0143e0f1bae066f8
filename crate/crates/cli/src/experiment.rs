//! Turns a resolved config into datasets, networks and training configs.

use std::path::{Path, PathBuf};

use alignflow::data::{self, Dataset};
use alignflow::losses::Loss;
use alignflow::network::{Architecture, InitStrategy, Network};
use alignflow::trainer::{SaturationPolicy, Schedule, TrainConfig};
use alignflow::{Rng, Rule};

use crate::config::Config;
use crate::error::CliError;

/// Tags for deriving independent streams from one replicate seed.
pub const DATA_STREAM: u64 = 1;
const NET_STREAM: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Job {
    pub width: usize,
    pub rule: Rule,
    pub seed: u64,
}

impl Job {
    pub fn dir_name(&self) -> String {
        format!("w{}-{}-s{}", self.width, self.rule, self.seed)
    }
}

pub fn jobs(cfg: &Config) -> Result<Vec<Job>, CliError> {
    let widths: Vec<usize> = cfg.list("widths")?;
    let rules: Vec<Rule> = cfg.list("rules")?;
    let replicates: u64 = cfg.get("replicates")?;
    let seed: u64 = cfg.get("seed")?;
    if widths.is_empty() || rules.is_empty() || replicates == 0 {
        return Err(CliError::Config("`widths`, `rules` and `replicates` must be non-empty".into()));
    }
    let mut out = Vec::new();
    for &width in &widths {
        for &rule in &rules {
            for r in 0..replicates {
                out.push(Job { width, rule, seed: seed + r });
            }
        }
    }
    Ok(out)
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig, CliError> {
    let schedule = match cfg.require("schedule")? {
        "constant" => Schedule::Constant,
        "step" => Schedule::StepDecay {
            factor: cfg.get("decay_factor")?,
            every: cfg.get("decay_every")?,
        },
        other => return Err(CliError::Config(format!("bad value `{other}` for `schedule`"))),
    };
    let saturation = match cfg.require("saturation")? {
        "stop" => SaturationPolicy::Stop,
        "flag" => SaturationPolicy::Flag,
        other => return Err(CliError::Config(format!("bad value `{other}` for `saturation`"))),
    };
    let tc = TrainConfig {
        loss: cfg.get("loss")?,
        lr: cfg.get("lr")?,
        schedule,
        momentum: cfg.get("momentum")?,
        steps: cfg.get("steps")?,
        log_every: cfg.get("log_every")?,
        seed: cfg.get("seed")?,
        saturation,
        init: cfg.get("init")?,
        track_conservation: true,
        snapshot_every: None,
    };
    tc.validate()?;
    Ok(tc)
}

fn find_file(dir: &Path, stems: &[&str]) -> Option<PathBuf> {
    stems
        .iter()
        .flat_map(|s| [dir.join(format!("{s}.gz")), dir.join(s)])
        .find(|p| p.exists())
}

/// The MNIST pool and, when the directory holds the official test files,
/// the separate clean test set.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Option<Dataset>), CliError> {
    let images = find_file(dir, &["train-images-idx3-ubyte", "images-idx3-ubyte"]);
    let labels = find_file(dir, &["train-labels-idx1-ubyte", "labels-idx1-ubyte"]);
    let (Some(images), Some(labels)) = (images, labels) else {
        return Err(CliError::Config(format!("`dataset_path` {} has no IDX image/label files", dir.display())));
    };
    let pool = data::load_idx(images, labels)?;
    let test = match (find_file(dir, &["t10k-images-idx3-ubyte"]), find_file(dir, &["t10k-labels-idx1-ubyte"])) {
        (Some(i), Some(l)) => Some(data::load_idx(i, l)?),
        _ => None,
    };
    Ok((pool, test))
}

pub struct Source {
    pub kind: String,
    pub mnist: Option<(Dataset, Option<Dataset>)>,
}

impl Source {
    pub fn open(cfg: &Config) -> Result<Source, CliError> {
        let kind = cfg.require("dataset")?.to_string();
        let mnist = match kind.as_str() {
            "mnist" => Some(load_mnist(Path::new(cfg.require("dataset_path")?))?),
            "cache" => {
                let path = cfg.require("dataset_path")?;
                let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
                Some((data::read_cache(&bytes)?, None))
            }
            "orthogonal" | "nearly-orthogonal" => None,
            other => return Err(CliError::Config(format!("bad value `{other}` for `dataset`"))),
        };
        Ok(Source { kind, mnist })
    }

    /// Train and optional test sets for one replicate seed. Every width and
    /// rule sharing the seed sees the same data.
    pub fn datasets(&self, cfg: &Config, seed: u64) -> Result<(Dataset, Option<Dataset>), CliError> {
        let mut rng = Rng::new(seed).fork(DATA_STREAM);
        let noise: f64 = cfg.get("noise")?;
        let (train, test) = match (&self.mnist, self.kind.as_str()) {
            (Some((pool, official_test)), _) => {
                let classes: Option<Vec<usize>> = match cfg.raw("classes") {
                    Some(s) if !s.is_empty() => Some(cfg.list("classes")?),
                    _ => None,
                };
                let filter = classes.as_deref();
                let (pool, test) = match official_test {
                    Some(t) => {
                        let all = if filter.is_some() { count_matching(t, filter) } else { t.len() };
                        (pool.clone(), Some(data::subset(t, all, &mut rng, filter)?))
                    }
                    None if self.kind == "mnist" => {
                        let test_size: usize = cfg.get("test_size")?;
                        let (rest, held) = pool.split(test_size, &mut rng)?;
                        let held_n = count_matching(&held, filter);
                        (rest, Some(data::subset(&held, held_n, &mut rng, filter)?))
                    }
                    None => (pool.clone(), None),
                };
                let available = count_matching(&pool, filter);
                let n: usize = cfg.get_opt("train_size")?.unwrap_or(available);
                let train = if filter.is_none() && self.kind == "cache" && n == pool.len() {
                    pool
                } else {
                    data::subset(&pool, n, &mut rng, filter)?
                };
                (train, test)
            }
            (None, "orthogonal") => (data::gen_orthogonal_separable(cfg.get("samples")?, cfg.get("dim")?, cfg.get("gamma")?, &mut rng)?, None),
            (None, _) => (data::gen_nearly_orthogonal(cfg.get("samples")?, cfg.get("dim")?, cfg.get("epsilon")?, &mut rng)?, None),
        };
        let train = if noise > 0.0 { data::inject_label_noise(&train, noise, &mut rng)? } else { train };
        Ok((train, test))
    }
}

fn count_matching(ds: &Dataset, filter: Option<&[usize]>) -> usize {
    match filter {
        None => ds.len(),
        Some(f) => ds.labels().class_indices().iter().filter(|c| f.contains(c)).count(),
    }
}

pub fn build_network(cfg: &Config, job: &Job, input_dim: usize, loss: Loss, train: &Dataset) -> Result<Network, CliError> {
    let hidden: usize = cfg.get("hidden_layers")?;
    if hidden == 0 {
        return Err(CliError::Config("`hidden_layers` must be at least 1".into()));
    }
    let mut widths = vec![input_dim];
    widths.extend(std::iter::repeat(job.width).take(hidden));
    widths.push(loss.output_dim(train.labels()));
    let arch = Architecture::new(widths, cfg.get("leaky_slope")?)?;
    let init: InitStrategy = cfg.get("init")?;
    let mut rng = Rng::new(job.seed).fork(NET_STREAM + job.width as u64);
    Ok(Network::init(arch, init, job.rule, &mut rng)?)
}
