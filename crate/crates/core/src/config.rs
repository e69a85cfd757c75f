//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional;
//! unknown and repeated keys are rejected. [`RunConfig::to_manifest`] writes
//! every key with its resolved value, so a manifest parses back to an equal
//! config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DatasetSpec;
use crate::encoder::EncoderSpec;
use crate::error::{Error, Result};
use crate::feataug::{MixtureMode, ViewConfig};
use crate::protocol::{AblationVariant, Aggregation};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Sample store to load; synthetic data is generated when unset.
    pub store: Option<PathBuf>,
    pub base_classes: usize,
    pub inc_classes: usize,
    pub sessions: usize,
    pub ways: usize,
    pub shots: usize,
    pub input_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise_sd: f64,

    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub projection_dim: usize,

    pub epochs_base: usize,
    pub epochs_incremental: usize,
    /// Fine-tune the new classifier rows on the few shots of each
    /// incremental session. Off: prototypes only.
    pub incremental_finetune: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    /// Non-identity input transforms (`M`).
    pub transforms: usize,
    pub delta: f64,
    pub tau: f64,
    pub queue_size: usize,
    pub ema: f64,
    pub seed: u64,

    pub use_sscl: bool,
    pub use_proxy: bool,
    pub use_feataug: bool,
    pub mixture: MixtureMode,
    pub noise_scale: f64,
    pub aggregation: Aggregation,
    pub view_jitter: f64,

    pub out_dir: PathBuf,
    /// Checkpoint file name inside the output directory.
    pub checkpoint: String,
    pub sweep_deltas: Vec<f64>,
    /// Seeds per δ in a sweep: `seed, seed+1, …`.
    pub sweep_seeds: usize,
    pub ablations: Vec<AblationVariant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            store: None,
            base_classes: 10,
            inc_classes: 6,
            sessions: 3,
            ways: 2,
            shots: 5,
            input_dim: 32,
            train_per_class: 200,
            test_per_class: 50,
            separation: 3.0,
            noise_sd: 1.0,
            hidden_dims: vec![64],
            feature_dim: 32,
            projection_dim: 32,
            epochs_base: 20,
            epochs_incremental: 10,
            incremental_finetune: false,
            batch_size: 64,
            lr: 0.05,
            sgd_momentum: 0.9,
            transforms: 1,
            delta: 0.5,
            tau: 0.07,
            queue_size: 1024,
            ema: 0.999,
            seed: 0,
            use_sscl: true,
            use_proxy: true,
            use_feataug: true,
            mixture: MixtureMode::AUG_AUG,
            noise_scale: 1.0,
            aggregation: Aggregation::Sum,
            view_jitter: 0.05,
            out_dir: PathBuf::from("out"),
            checkpoint: "model.facl".into(),
            sweep_deltas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sweep_seeds: 1,
            ablations: AblationVariant::default_grid(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key '{key}': cannot parse '{value}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", n + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "store" => self.store = (!v.is_empty()).then(|| PathBuf::from(v)),
            "base_classes" => self.base_classes = parse_value(key, v)?,
            "inc_classes" => self.inc_classes = parse_value(key, v)?,
            "sessions" => self.sessions = parse_value(key, v)?,
            "ways" => self.ways = parse_value(key, v)?,
            "shots" => self.shots = parse_value(key, v)?,
            "input_dim" => self.input_dim = parse_value(key, v)?,
            "train_per_class" => self.train_per_class = parse_value(key, v)?,
            "test_per_class" => self.test_per_class = parse_value(key, v)?,
            "separation" => self.separation = parse_value(key, v)?,
            "noise_sd" => self.noise_sd = parse_value(key, v)?,
            "hidden_dims" => self.hidden_dims = parse_list(key, v)?,
            "feature_dim" => self.feature_dim = parse_value(key, v)?,
            "projection_dim" => self.projection_dim = parse_value(key, v)?,
            "epochs_base" => self.epochs_base = parse_value(key, v)?,
            "epochs_incremental" => self.epochs_incremental = parse_value(key, v)?,
            "incremental_finetune" => self.incremental_finetune = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "sgd_momentum" => self.sgd_momentum = parse_value(key, v)?,
            "transforms" => self.transforms = parse_value(key, v)?,
            "delta" => self.delta = parse_value(key, v)?,
            "tau" => self.tau = parse_value(key, v)?,
            "queue_size" => self.queue_size = parse_value(key, v)?,
            "ema" => self.ema = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "use_sscl" => self.use_sscl = parse_value(key, v)?,
            "use_proxy" => self.use_proxy = parse_value(key, v)?,
            "use_feataug" => self.use_feataug = parse_value(key, v)?,
            "mixture" => self.mixture = parse_value(key, v)?,
            "noise_scale" => self.noise_scale = parse_value(key, v)?,
            "aggregation" => self.aggregation = parse_value(key, v)?,
            "view_jitter" => self.view_jitter = parse_value(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = v.to_string(),
            "sweep_deltas" => self.sweep_deltas = parse_list(key, v)?,
            "sweep_seeds" => self.sweep_seeds = parse_value(key, v)?,
            "ablations" => self.ablations = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("store", self.store.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("base_classes", self.base_classes.to_string()),
            ("inc_classes", self.inc_classes.to_string()),
            ("sessions", self.sessions.to_string()),
            ("ways", self.ways.to_string()),
            ("shots", self.shots.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("train_per_class", self.train_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("separation", self.separation.to_string()),
            ("noise_sd", self.noise_sd.to_string()),
            ("hidden_dims", join(&self.hidden_dims)),
            ("feature_dim", self.feature_dim.to_string()),
            ("projection_dim", self.projection_dim.to_string()),
            ("epochs_base", self.epochs_base.to_string()),
            ("epochs_incremental", self.epochs_incremental.to_string()),
            ("incremental_finetune", self.incremental_finetune.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("sgd_momentum", self.sgd_momentum.to_string()),
            ("transforms", self.transforms.to_string()),
            ("delta", self.delta.to_string()),
            ("tau", self.tau.to_string()),
            ("queue_size", self.queue_size.to_string()),
            ("ema", self.ema.to_string()),
            ("seed", self.seed.to_string()),
            ("use_sscl", self.use_sscl.to_string()),
            ("use_proxy", self.use_proxy.to_string()),
            ("use_feataug", self.use_feataug.to_string()),
            ("mixture", self.mixture.to_string()),
            ("noise_scale", self.noise_scale.to_string()),
            ("aggregation", self.aggregation.to_string()),
            ("view_jitter", self.view_jitter.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint", self.checkpoint.clone()),
            ("sweep_deltas", join(&self.sweep_deltas)),
            ("sweep_seeds", self.sweep_seeds.to_string()),
            ("ablations", join(&self.ablations)),
        ]
    }

    pub fn to_manifest(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            base_classes: self.base_classes,
            inc_classes: self.inc_classes,
            sessions: self.sessions,
            ways: self.ways,
            shots: self.shots,
            input_dim: self.input_dim,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
            projection_dim: self.projection_dim,
        }
    }

    pub fn variant(&self) -> AblationVariant {
        AblationVariant {
            use_sscl: self.use_sscl,
            use_proxy: self.use_proxy,
            use_feataug: self.use_feataug,
            mixture: self.mixture,
        }
    }

    pub fn with_variant(&self, v: &AblationVariant) -> Self {
        Self {
            use_sscl: v.use_sscl,
            use_proxy: v.use_proxy,
            use_feataug: v.use_feataug,
            mixture: v.mixture,
            ..self.clone()
        }
    }

    pub fn view_config(&self) -> ViewConfig {
        ViewConfig {
            delta: self.delta,
            mixture: self.mixture,
            mix: self.use_feataug,
            proxy: self.use_proxy,
            noise_scale: self.noise_scale,
            jitter: self.view_jitter,
        }
    }

    pub fn proxy_factor(&self) -> usize {
        if self.use_proxy {
            crate::feataug::PROXY_FACTOR
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.dataset_spec().validate().map_err(cfg_err)?;
        self.encoder_spec().validate().map_err(cfg_err)?;
        self.variant().validate().map_err(cfg_err)?;
        for v in &self.ablations {
            v.validate().map_err(cfg_err)?;
        }
        let bad = |key: &str, why: &str| Err(Error::Config(format!("key '{key}': {why}")));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad("sgd_momentum", "must lie in [0,1)");
        }
        if !unit(self.delta) {
            return bad("delta", "must lie in [0,1]");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", "must be positive");
        }
        if self.queue_size == 0 {
            return bad("queue_size", "must be positive");
        }
        if !unit(self.ema) {
            return bad("ema", "must lie in [0,1]");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale", "must be finite and non-negative");
        }
        if !(self.view_jitter >= 0.0 && self.view_jitter.is_finite()) {
            return bad("view_jitter", "must be finite and non-negative");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation", "must be finite and non-negative");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd", "must be finite and non-negative");
        }
        if self.sweep_deltas.is_empty() || !self.sweep_deltas.iter().all(|&d| unit(d)) {
            return bad("sweep_deltas", "needs at least one value, all in [0,1]");
        }
        if self.sweep_seeds == 0 {
            return bad("sweep_seeds", "must be positive");
        }
        if self.checkpoint.is_empty() {
            return bad("checkpoint", "must name a file");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_manifest() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_manifest()).unwrap(), cfg);
    }

    #[test]
    fn edited_values_round_trip() {
        let text = "# comment\nlr = 0.013\nhidden_dims = 16, 8\nmixture = ori+noise\naggregation = max\nsweep_deltas = 0.1,0.9\nstore = data.bin\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.lr, 0.013);
        assert_eq!(cfg.hidden_dims, vec![16, 8]);
        assert_eq!(cfg.mixture, MixtureMode::ORI_NOISE);
        assert_eq!(cfg.aggregation, Aggregation::Max);
        assert_eq!(cfg.store, Some(PathBuf::from("data.bin")));
        assert_eq!(RunConfig::parse(&cfg.to_manifest()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        match RunConfig::parse("learning_rate = 0.1") {
            Err(Error::Config(m)) => assert!(m.contains("learning_rate"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_and_bad_values_rejected() {
        assert!(matches!(RunConfig::parse("lr = 1\nlr = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("delta = 1.5"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("sessions = 4"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("use_feataug = maybe"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("use_proxy = false"), Err(Error::Config(_))));
    }
}
