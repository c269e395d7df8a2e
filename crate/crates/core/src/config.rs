//! Run configuration as flat `key=value` text. Values are layered: built-in
//! defaults, then a config file, then command-line overrides. The source of
//! every value is remembered so a run can record how it was configured.

use std::collections::BTreeMap;
use std::fmt;

use crate::data::{Meta, DEFAULT_THRESHOLD};
use crate::error::{HsrError, Result};
use crate::model::{AttentionMode, Geometry, ModelConfig};

/// Where a configuration value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

/// Search grids used when tuning on validation AUC.
pub const LEARNING_RATE_GRID: [f64; 4] = [1e-4, 5e-4, 1e-3, 5e-3];
pub const DIM_GRID: [usize; 5] = [8, 16, 32, 64, 128];
pub const LAMBDA_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const TAU_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.5];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dim: usize,
    pub lambda: f64,
    pub tau: f64,
    pub layers: usize,
    pub batch_size: usize,
    pub curvature: f64,
    pub gamma: f64,
    pub fd_radius: f64,
    pub fd_temperature: f64,
    pub leaky_slope: f64,
    pub ball_eps: f64,
    pub k_max: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub geometry: Geometry,
    pub attention: AttentionMode,
    pub threshold: f64,
    sources: BTreeMap<&'static str, Source>,
}

/// Every addressable key, in rendering order.
pub const KEYS: [&str; 19] = [
    "learning_rate",
    "dim",
    "lambda",
    "tau",
    "layers",
    "batch_size",
    "curvature",
    "gamma",
    "fd_radius",
    "fd_temperature",
    "leaky_slope",
    "ball_eps",
    "k_max",
    "epochs",
    "patience",
    "seed",
    "geometry",
    "attention",
    "threshold",
];

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            learning_rate: 1e-3,
            dim: m.dim,
            lambda: 1e-2,
            tau: m.tau,
            layers: m.layers,
            batch_size: 1024,
            curvature: m.curvature,
            gamma: m.gamma,
            fd_radius: m.fd_radius,
            fd_temperature: m.fd_temperature,
            leaky_slope: m.leaky_slope,
            ball_eps: m.ball_eps,
            k_max: 512,
            epochs: 500,
            patience: 10,
            seed: 0,
            geometry: m.geometry,
            attention: m.attention,
            threshold: DEFAULT_THRESHOLD,
            sources: KEYS.iter().map(|&k| (k, Source::Default)).collect(),
        }
    }
}

fn canonical(key: &str) -> Option<&'static str> {
    let alias = match key {
        "eta" | "lr" => "learning_rate",
        "d" => "dim",
        "L" => "layers",
        "b" | "batch" => "batch_size",
        "c" => "curvature",
        "r" => "fd_radius",
        "t" => "fd_temperature",
        "eps" | "epsilon" => "ball_eps",
        other => other,
    };
    KEYS.iter().copied().find(|&k| k == alias)
}

/// Splits config text into `(key, value)` pairs. Blank lines and `#`
/// comments are skipped; keys must be known.
pub fn parse_config(text: &str, source_name: &str) -> Result<Vec<(&'static str, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HsrError::parse(source_name, i + 1, "expected key=value"))?;
        let key = canonical(k.trim())
            .ok_or_else(|| HsrError::parse(source_name, i + 1, format!("unknown key '{}'", k.trim())))?;
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| HsrError::Input(format!("invalid value '{v}' for {key}")))
}

impl TrainConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        let key = canonical(key).ok_or_else(|| HsrError::Input(format!("unknown config key '{key}'")))?;
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "curvature" => self.curvature = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "fd_radius" => self.fd_radius = num(key, value)?,
            "fd_temperature" => self.fd_temperature = num(key, value)?,
            "leaky_slope" => self.leaky_slope = num(key, value)?,
            "ball_eps" => self.ball_eps = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "geometry" => self.geometry = value.parse()?,
            "attention" => self.attention = value.parse()?,
            "threshold" => self.threshold = num(key, value)?,
            _ => unreachable!("canonical keys are exhaustive"),
        }
        self.sources.insert(key, source);
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, source_name: &str, source: Source) -> Result<()> {
        for (k, v) in parse_config(text, source_name)? {
            self.set(k, &v, source)?;
        }
        Ok(())
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        canonical(key).and_then(|k| self.sources.get(k).copied())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let key = canonical(key)?;
        Some(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "dim" => self.dim.to_string(),
            "lambda" => self.lambda.to_string(),
            "tau" => self.tau.to_string(),
            "layers" => self.layers.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "curvature" => self.curvature.to_string(),
            "gamma" => self.gamma.to_string(),
            "fd_radius" => self.fd_radius.to_string(),
            "fd_temperature" => self.fd_temperature.to_string(),
            "leaky_slope" => self.leaky_slope.to_string(),
            "ball_eps" => self.ball_eps.to_string(),
            "k_max" => self.k_max.to_string(),
            "epochs" => self.epochs.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "geometry" => self.geometry.to_string(),
            "attention" => self.attention.to_string(),
            "threshold" => self.threshold.to_string(),
            _ => unreachable!("canonical keys are exhaustive"),
        })
    }

    /// Fully resolved config as `key=value` text, readable by [`Self::apply_text`].
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Records every value and its source under `config.*` and `config_source.*`.
    pub fn record_into(&self, meta: &mut Meta) {
        for k in KEYS {
            meta.set(&format!("config.{k}"), self.get(k).expect("known key"));
            meta.set(&format!("config_source.{k}"), self.source(k).unwrap_or(Source::Default));
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            layers: self.layers,
            curvature: self.curvature,
            gamma: self.gamma,
            tau: self.tau,
            fd_radius: self.fd_radius,
            fd_temperature: self.fd_temperature,
            geometry: self.geometry,
            attention: self.attention,
            leaky_slope: self.leaky_slope,
            ball_eps: self.ball_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let bad = |m: &str| Err(HsrError::Input(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_documented_ones() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.layers, c.dim), (1024, 1, 32));
        assert_eq!((c.curvature, c.gamma, c.fd_radius, c.fd_temperature), (1.0, 1.0, 2.0, 1.0));
        assert_eq!((c.learning_rate, c.lambda, c.tau), (1e-3, 1e-2, 0.1));
        assert_eq!((c.epochs, c.patience), (500, 10));
        assert!(LEARNING_RATE_GRID.contains(&c.learning_rate));
        assert!(DIM_GRID.contains(&c.dim));
        assert!(LAMBDA_GRID.contains(&c.lambda));
        assert!(TAU_GRID.contains(&c.tau));
    }

    #[test]
    fn layering_and_sources() {
        let mut c = TrainConfig::default();
        c.apply_text("dim = 16  # smaller\neta=5e-4\n\ngeometry=euclidean\n", "run.cfg", Source::File)
            .unwrap();
        c.set("dim", "8", Source::Flag).unwrap();
        assert_eq!(c.dim, 8);
        assert_eq!(c.learning_rate, 5e-4);
        assert_eq!(c.geometry, Geometry::Euclidean);
        assert_eq!(c.source("dim"), Some(Source::Flag));
        assert_eq!(c.source("learning_rate"), Some(Source::File));
        assert_eq!(c.source("tau"), Some(Source::Default));
        let mut meta = Meta::default();
        c.record_into(&mut meta);
        assert_eq!(meta.get("config.dim"), Some("8"));
        assert_eq!(meta.get("config_source.dim"), Some("flag"));
    }

    #[test]
    fn render_round_trips() {
        let mut c = TrainConfig::default();
        c.set("attention", "mean", Source::Flag).unwrap();
        c.set("lambda", "0", Source::Flag).unwrap();
        let mut back = TrainConfig::default();
        back.apply_text(&c.render(), "r", Source::File).unwrap();
        assert_eq!(back.render(), c.render());
    }

    #[test]
    fn errors() {
        let err = parse_config("dim=4\nbogus=1\n", "f").unwrap_err();
        assert!(matches!(err, HsrError::Parse { line: 2, .. }));
        assert!(parse_config("justtext\n", "f").is_err());
        let mut c = TrainConfig::default();
        assert!(c.set("dim", "-3", Source::Flag).is_err());
        assert!(c.set("geometry", "spherical", Source::Flag).is_err());
        c.set("learning_rate", "0", Source::Flag).unwrap();
        assert!(c.validate().is_err());
    }
}
