//! Flat `key = value` configuration with preset defaults, environment
//! overrides and command-line `--set` overrides, in that order of priority.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use alignflow::presets::{self, DominancePreset, SweepPreset};
use alignflow::trainer::Schedule;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "ALIGNFLOW_";

/// Environment variables that belong to global flags, not config keys.
const GLOBAL_ENV: &[&str] = &["CONFIG", "SEED", "OUT", "WORKERS"];

pub struct KeySpec {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { name, default, help }
}

const COMMON: &[KeySpec] = &[
    key("preset", None, "named defaults: mnist-noisy-sweep | ortho-dominance"),
    key("dataset", Some("orthogonal"), "mnist | orthogonal | nearly-orthogonal | cache"),
    key("dataset_path", None, "MNIST directory or dataset cache file"),
    key("classes", None, "comma list of digits to keep; two digits give a binary task"),
    key("train_size", None, "training samples drawn from the pool (default: all)"),
    key("test_size", Some("1000"), "held-out clean samples when no separate test files exist"),
    key("noise", Some("0"), "fraction of training labels corrupted"),
    key("samples", Some("20"), "synthetic sample count"),
    key("dim", Some("10"), "synthetic input dimension"),
    key("gamma", Some("0.5"), "orthogonal-separable margin"),
    key("epsilon", Some("0.1"), "nearly-orthogonal slack"),
    key("widths", Some("50"), "comma list of hidden widths"),
    key("hidden_layers", Some("1"), "hidden layers per network, all of the same width"),
    key("rules", Some("fa"), "comma list of bp | fa | adafa | signfa"),
    key("replicates", Some("1"), "seeds per (width, rule), counting up from --seed"),
    key("init", Some("uniform"), "uniform | aligned | xavier"),
    key("leaky_slope", Some("0.01"), "negative-side slope of the activation"),
    key("loss", Some("exp"), "exp | ce"),
    key("lr", Some("0.0001"), "initial learning rate"),
    key("momentum", Some("0"), "heavy-ball coefficient in [0, 1)"),
    key("schedule", Some("constant"), "constant | step"),
    key("decay_factor", Some("0.1"), "step schedule multiplier"),
    key("decay_every", Some("1000"), "step schedule period in steps"),
    key("steps", Some("1000"), "total training steps"),
    key("log_every", Some("10"), "logging cadence in steps"),
    key("saturation", Some("flag"), "stop | flag when the exponential loss saturates"),
];

const TRAIN_ONLY: &[KeySpec] = &[key("resume", None, "checkpoint to continue (single run only)")];

const VERIFY_ONLY: &[KeySpec] = &[
    key("verifiers", Some("gradcheck,conservation,sign-floor,dale,dominance,envelope,eq1-bookkeeping"), "comma list of verifiers to run"),
    key("gradcheck_nets", Some("50"), "random networks for gradcheck"),
    key("beta", Some("2"), "dominance exponent"),
    key("loss_floor", Some("0"), "infimum of the loss"),
    key("envelope_tolerance", Some("0.05"), "relative slack before a step counts as a violation"),
    key("alpha_scale", Some("1"), "multiplier on the measured alpha passed to the envelope"),
    key("refine", Some("10"), "step-size ratio for the conservation comparison"),
];

const GEN_DATA: &[KeySpec] = &[
    key("preset", None, "named defaults"),
    key("dataset", Some("orthogonal"), "orthogonal | nearly-orthogonal"),
    key("samples", Some("20"), "sample count"),
    key("dim", Some("10"), "input dimension"),
    key("gamma", Some("0.5"), "orthogonal-separable margin"),
    key("epsilon", Some("0.1"), "nearly-orthogonal slack"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Verify,
    GenData,
}

pub fn specs(cmd: Command) -> Vec<&'static KeySpec> {
    match cmd {
        Command::Train => COMMON.iter().chain(TRAIN_ONLY).collect(),
        Command::Verify => COMMON.iter().chain(VERIFY_ONLY).collect(),
        Command::GenData => GEN_DATA.iter().collect(),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn sweep_values(p: &SweepPreset) -> Vec<(&'static str, String)> {
    let t = &p.train;
    let mut v = vec![
        ("dataset", "mnist".to_string()),
        ("widths", join(&p.widths)),
        ("rules", join(&p.rules)),
        ("noise", p.noise.to_string()),
        ("train_size", p.train_size.to_string()),
        ("replicates", p.replicates.to_string()),
        ("init", p.init.to_string()),
        ("leaky_slope", p.leaky_slope.to_string()),
        ("loss", t.loss.to_string()),
        ("lr", t.lr.to_string()),
        ("momentum", t.momentum.to_string()),
        ("steps", t.steps.to_string()),
        ("log_every", t.log_every.to_string()),
    ];
    if let Some(c) = &p.classes {
        v.push(("classes", join(c)));
    }
    if let Schedule::StepDecay { factor, every } = t.schedule {
        v.extend([("schedule", "step".to_string()), ("decay_factor", factor.to_string()), ("decay_every", every.to_string())]);
    }
    v
}

fn dominance_values(p: &DominancePreset) -> Vec<(&'static str, String)> {
    let t = &p.train;
    vec![
        ("dataset", "orthogonal".to_string()),
        ("samples", p.samples.to_string()),
        ("dim", p.dim.to_string()),
        ("gamma", p.gamma.to_string()),
        ("widths", p.width.to_string()),
        ("rules", join(&p.rules)),
        ("replicates", p.replicates.to_string()),
        ("init", t.init.to_string()),
        ("leaky_slope", p.leaky_slope.to_string()),
        ("loss", t.loss.to_string()),
        ("lr", t.lr.to_string()),
        ("momentum", t.momentum.to_string()),
        ("steps", t.steps.to_string()),
        ("log_every", t.log_every.to_string()),
        ("beta", p.beta.to_string()),
        ("envelope_tolerance", p.envelope_tolerance.to_string()),
        ("verifiers", "dominance,envelope,dale,eq1-bookkeeping".to_string()),
    ]
}

fn preset_values(name: &str) -> Result<Vec<(&'static str, String)>, CliError> {
    match name {
        "mnist-noisy-sweep" => Ok(sweep_values(&presets::mnist_noisy_sweep())),
        "ortho-dominance" => Ok(dominance_values(&presets::ortho_dominance())),
        other => Err(CliError::Config(format!("unknown preset `{other}` (known: {})", presets::names().join(", ")))),
    }
}

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys are an
/// error.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(CliError::Config(format!("{origin}:{}: duplicate key `{k}`", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

pub struct Sources<'a> {
    pub file: Option<&'a Path>,
    pub env: Vec<(String, String)>,
    pub sets: &'a [String],
    pub seed: Option<u64>,
}

impl Config {
    pub fn resolve(cmd: Command, src: Sources<'_>) -> Result<Config, CliError> {
        let specs = specs(cmd);
        let known = |k: &str| specs.iter().any(|s| s.name == k);
        let mut layers: Vec<(String, Vec<(String, String)>)> = Vec::new();

        if let Some(path) = src.file {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            layers.push((path.display().to_string(), parse_kv(&text, &path.display().to_string())?));
        }
        let env: Vec<(String, String)> = src
            .env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|s| (s.to_string(), v)))
            .filter(|(k, _)| !GLOBAL_ENV.contains(&k.as_str()))
            .map(|(k, v)| (k.to_ascii_lowercase(), v))
            .collect();
        layers.push(("environment".into(), env));
        let mut sets = Vec::new();
        for s in src.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{s}`")))?;
            sets.push((k.trim().to_string(), v.trim().to_string()));
        }
        layers.push(("--set".into(), sets));

        for (origin, kvs) in &layers {
            if let Some((k, _)) = kvs.iter().find(|(k, _)| !known(k)) {
                return Err(CliError::Config(format!("unknown key `{k}` in {origin}")));
            }
        }

        let mut values: BTreeMap<String, String> = BTreeMap::new();
        for s in &specs {
            if let Some(d) = s.default {
                values.insert(s.name.to_string(), d.to_string());
            }
        }
        // The preset may come from any layer; it is applied beneath all of them.
        let preset = layers.iter().rev().flat_map(|(_, kvs)| kvs.iter()).find(|(k, _)| k == "preset").map(|(_, v)| v.clone());
        if let Some(p) = &preset {
            for (k, v) in preset_values(p)? {
                if known(k) {
                    values.insert(k.to_string(), v);
                }
            }
        }
        for (_, kvs) in layers {
            values.extend(kvs);
        }
        if let Some(seed) = src.seed {
            values.insert("seed".into(), seed.to_string());
        }
        values.entry("seed".into()).or_insert_with(|| "0".into());
        Ok(Config { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse().map_err(|e| CliError::Config(format!("bad value `{raw}` for `{key}`: {e}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None | Some("") => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("bad entry `{s}` in `{key}`: {e}"))))
            .collect()
    }

    /// Every resolved key, sorted, in the same format the parser reads.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(env: &[(&str, &str)], sets: &[&str]) -> Result<Config, CliError> {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        Config::resolve(
            Command::Train,
            Sources {
                file: None,
                env: env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
                sets: &sets,
                seed: None,
            },
        )
    }

    #[test]
    fn priority_order() {
        let c = resolve(&[("ALIGNFLOW_LR", "0.5"), ("ALIGNFLOW_STEPS", "7")], &["lr=0.25"]).unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), 0.25);
        assert_eq!(c.get::<u64>("steps").unwrap(), 7);
        assert_eq!(c.get::<u64>("seed").unwrap(), 0);
    }

    #[test]
    fn preset_sits_under_overrides() {
        let c = resolve(&[], &["preset=mnist-noisy-sweep", "steps=5"]).unwrap();
        assert_eq!(c.raw("widths"), Some("15,30,45,60,75,100,125,150,175,200"));
        assert_eq!(c.raw("rules"), Some("bp,fa,adafa,signfa"));
        assert_eq!(c.raw("steps"), Some("5"));
        assert_eq!(c.raw("schedule"), Some("step"));
        assert!(resolve(&[], &["preset=nope"]).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let err = resolve(&[], &["lrr=1"]).unwrap_err().to_string();
        assert!(err.contains("lrr"));
        assert!(resolve(&[("ALIGNFLOW_BOGUS", "1")], &[]).is_err());
        assert!(resolve(&[("ALIGNFLOW_SEED", "3"), ("OTHER", "x")], &[]).is_ok());
        let c = resolve(&[], &["lr=abc"]).unwrap();
        assert!(c.get::<f64>("lr").unwrap_err().to_string().contains("lr"));
        let err = c.require("dataset_path").unwrap_err().to_string();
        assert!(err.contains("dataset_path"));
    }

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("# c\nlr = 0.1  # rate\n\nwidths=15,30\n", "f").unwrap();
        assert_eq!(kv, vec![("lr".into(), "0.1".into()), ("widths".into(), "15,30".into())]);
        assert!(parse_kv("lr\n", "f").is_err());
        assert!(parse_kv("lr=1\nlr=2\n", "f").is_err());
    }

    #[test]
    fn render_round_trips() {
        let c = resolve(&[], &["widths=15, 30"]).unwrap();
        let again = parse_kv(&c.render(), "r").unwrap();
        let map: BTreeMap<String, String> = again.into_iter().collect();
        assert_eq!(map, c.values);
        assert_eq!(c.list::<usize>("widths").unwrap(), vec![15, 30]);
    }
}
