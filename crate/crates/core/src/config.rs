//! Flat `key = value` run configuration.
//!
//! Values are applied in order: defaults, config file, `CROSSREID_SEED`,
//! then command-line overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{LayoutConfig, SynthConfig};
use crate::diffcore::Precision;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::ScoreMode;
use crate::fmr::Schedule;

pub const SEED_ENV: &str = "CROSSREID_SEED";

/// `(key, default, description)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data.root", "", "dataset root; empty uses a generated synthetic dataset"),
    ("data.cam_a", "cam_a", "camera A directory name"),
    ("data.cam_b", "cam_b", "camera B directory name"),
    ("data.single_shot", "single_shot", "single-shot probe directory name"),
    ("data.max_identities", "all", "keep only the first n identities"),
    ("data.resolution", "32", "square input size after resizing"),
    ("data.trials", "3", "number of random train/test splits"),
    ("data.seed", "0", "run seed; overridden by CROSSREID_SEED"),
    ("synth.k", "8", "synthetic identities"),
    ("synth.frames", "6", "synthetic frames per camera"),
    ("synth.noise", "0.05", "synthetic pixel noise std"),
    ("train.epochs", "200", "training epochs"),
    ("train.lr", "0.001", "SGD learning rate"),
    ("train.precision", "f32", "f32 or f64"),
    ("train.checkpoint_every", "0", "checkpoint cadence in epochs; 0 keeps only the last"),
    ("model.feature_dim", "64", "coordinated feature size d"),
    ("model.conv_channels", "8,16", "conv widths, comma separated"),
    ("model.kernel", "3", "conv kernel size"),
    ("model.stride", "1", "conv stride"),
    ("model.pool", "2", "max-pool window"),
    ("model.share_frame_encoder", "true", "image and video branches share one frame encoder"),
    ("fmr.enabled", "true", "train with fixed model reuse"),
    ("fmr.wp_end", "auto", "first KD epoch (0-based); auto is 40% of epochs"),
    ("fmr.kd_end", "auto", "first WPK epoch (0-based); auto is 80% of epochs"),
    ("fmr.fixed_seed", "auto", "seed of the frozen branches; auto derives it from data.seed"),
    ("eval.score", "verification", "verification or distance"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub root: Option<PathBuf>,
    pub layout: LayoutConfig,
    pub resolution: usize,
    pub trials: usize,
    pub seed: u64,
    pub synth_k: usize,
    pub synth_frames: usize,
    pub synth_noise: f64,
    pub epochs: usize,
    pub lr: f64,
    pub precision: Precision,
    pub checkpoint_every: usize,
    pub feature_dim: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    pub share_frame_encoder: bool,
    pub fmr: bool,
    pub wp_end: Option<usize>,
    pub kd_end: Option<usize>,
    pub fixed_seed: Option<u64>,
    pub score: ScoreMode,
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Config {
            root: None,
            layout: LayoutConfig::default(),
            resolution: 0,
            trials: 0,
            seed: 0,
            synth_k: 0,
            synth_frames: 0,
            synth_noise: 0.0,
            epochs: 0,
            lr: 0.0,
            precision: Precision::F32,
            checkpoint_every: 0,
            feature_dim: 0,
            conv_channels: Vec::new(),
            kernel: 0,
            stride: 0,
            pool: 0,
            share_frame_encoder: true,
            fmr: true,
            wp_end: None,
            kd_end: None,
            fixed_seed: None,
            score: ScoreMode::Verification,
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("valid default");
        }
        c
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn auto<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v.trim() {
        "auto" | "all" | "" => Ok(None),
        s => num(key, s).map(Some),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data.root" => self.root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.cam_a" => self.layout.cam_a = v.into(),
            "data.cam_b" => self.layout.cam_b = v.into(),
            "data.single_shot" => self.layout.single_shot = v.into(),
            "data.max_identities" => self.layout.max_identities = auto(key, v)?,
            "data.resolution" => self.resolution = num(key, v)?,
            "data.trials" => self.trials = num(key, v)?,
            "data.seed" => self.seed = num(key, v)?,
            "synth.k" => self.synth_k = num(key, v)?,
            "synth.frames" => self.synth_frames = num(key, v)?,
            "synth.noise" => self.synth_noise = num(key, v)?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.lr" => self.lr = num(key, v)?,
            "train.precision" => self.precision = Precision::parse(v)?,
            "train.checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "model.feature_dim" => self.feature_dim = num(key, v)?,
            "model.conv_channels" => {
                self.conv_channels = v.split(',').map(|c| num(key, c)).collect::<Result<_>>()?
            }
            "model.kernel" => self.kernel = num(key, v)?,
            "model.stride" => self.stride = num(key, v)?,
            "model.pool" => self.pool = num(key, v)?,
            "model.share_frame_encoder" => self.share_frame_encoder = boolean(key, v)?,
            "fmr.enabled" => self.fmr = boolean(key, v)?,
            "fmr.wp_end" => self.wp_end = auto(key, v)?,
            "fmr.kd_end" => self.kd_end = auto(key, v)?,
            "fmr.fixed_seed" => self.fixed_seed = auto(key, v)?,
            "eval.score" => self.score = ScoreMode::parse(v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip(e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text, &path.display().to_string())
    }

    /// Applies `CROSSREID_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self
                .set("data.seed", &v)
                .map_err(|_| Error::Config(format!("{SEED_ENV}: cannot parse `{v}`"))),
            Err(_) => Ok(()),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))?;
        self.set(k, v)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            channels: 3,
            resolution: self.resolution,
            conv_channels: self.conv_channels.clone(),
            kernel: self.kernel,
            stride: self.stride,
            pool: self.pool,
            feature_dim: self.feature_dim,
        }
    }

    pub fn schedule(&self) -> Schedule {
        let d = Schedule::default_for(self.epochs);
        Schedule {
            wp_end: self.wp_end.unwrap_or(d.wp_end),
            kd_end: self.kd_end.unwrap_or(d.kd_end),
            total_epochs: self.epochs,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            identities: self.synth_k,
            frames: self.synth_frames,
            resolution: self.resolution,
            noise: self.synth_noise,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().stage_sizes()?;
        if self.trials == 0 {
            return Err(Error::Config("data.trials must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.fmr {
            self.schedule().validate()?;
        }
        if self.root.is_none() {
            self.synth().validate()?;
        }
        Ok(())
    }

    /// Every key with its current value, in `KEYS` order.
    pub fn dump(&self) -> String {
        let opt = |o: Option<String>, none: &str| o.unwrap_or_else(|| none.to_string());
        let mut s = String::new();
        for (k, _, _) in KEYS {
            let v = match *k {
                "data.root" => opt(self.root.as_ref().map(|p| p.display().to_string()), ""),
                "data.cam_a" => self.layout.cam_a.clone(),
                "data.cam_b" => self.layout.cam_b.clone(),
                "data.single_shot" => self.layout.single_shot.clone(),
                "data.max_identities" => opt(self.layout.max_identities.map(|v| v.to_string()), "all"),
                "data.resolution" => self.resolution.to_string(),
                "data.trials" => self.trials.to_string(),
                "data.seed" => self.seed.to_string(),
                "synth.k" => self.synth_k.to_string(),
                "synth.frames" => self.synth_frames.to_string(),
                "synth.noise" => self.synth_noise.to_string(),
                "train.epochs" => self.epochs.to_string(),
                "train.lr" => self.lr.to_string(),
                "train.precision" => self.precision.name().into(),
                "train.checkpoint_every" => self.checkpoint_every.to_string(),
                "model.feature_dim" => self.feature_dim.to_string(),
                "model.conv_channels" => self
                    .conv_channels
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                "model.kernel" => self.kernel.to_string(),
                "model.stride" => self.stride.to_string(),
                "model.pool" => self.pool.to_string(),
                "model.share_frame_encoder" => self.share_frame_encoder.to_string(),
                "fmr.enabled" => self.fmr.to_string(),
                "fmr.wp_end" => opt(self.wp_end.map(|v| v.to_string()), "auto"),
                "fmr.kd_end" => opt(self.kd_end.map(|v| v.to_string()), "auto"),
                "fmr.fixed_seed" => opt(self.fixed_seed.map(|v| v.to_string()), "auto"),
                "eval.score" => self.score.name().into(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Help text listing every key and its default.
pub fn keys_help() -> String {
    let mut s = String::new();
    for (k, d, help) in KEYS {
        let d = if d.is_empty() { "\"\"" } else { d };
        let _ = writeln!(s, "  {k:<28} {help} [default: {d}]");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.root, None);
        assert_eq!((c.synth_k, c.synth_frames, c.resolution), (8, 6, 32));
        assert_eq!(c.epochs, 200);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.conv_channels, vec![8, 16]);
        assert_eq!(c.schedule(), Schedule::default_for(200));
        c.validate().unwrap();
    }

    #[test]
    fn file_then_override() {
        let mut c = Config::default();
        c.apply_str("# run\ntrain.epochs = 10  # short\n\nmodel.conv_channels=4,4\n", "cfg").unwrap();
        assert_eq!(c.epochs, 10);
        assert_eq!(c.conv_channels, vec![4, 4]);
        c.apply_override("train.epochs=12").unwrap();
        assert_eq!(c.epochs, 12);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = Config::default();
        let e = c.apply_str("train.epoch = 3\n", "run.cfg").unwrap_err().to_string();
        assert!(e.contains("train.epoch") && e.contains("run.cfg:1"), "{e}");
        assert!(c.apply_override("nonsense").is_err());
        assert!(c.apply_override("train.lr=fast").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let mut c = Config::default();
        c.apply_str("data.root=/tmp/x\nfmr.wp_end=3\nfmr.fixed_seed=9\neval.score=distance\n", "a")
            .unwrap();
        let mut d = Config::default();
        d.apply_str(&c.dump(), "dump").unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn help_lists_every_key() {
        let h = keys_help();
        for (k, _, _) in KEYS {
            assert!(h.contains(k));
        }
    }
}
