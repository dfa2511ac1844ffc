//! Flat `key = value` experiment configuration with `#` comments.
//!
//! ```text
//! # desk-scale sweep
//! N = 16
//! M = 2
//! K = 2
//! snr_db = 0, 6, 12
//! ```
//!
//! Lists are comma separated. Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::beampattern::{make_spec, BeampatternSpec};
use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::pga::InitKind;
use crate::unfolding::{GradientMode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_antennas: usize,
    pub n_rf: usize,
    pub n_users: usize,
    pub directions_deg: Vec<f64>,
    pub halfwidth_deg: f64,
    pub grid_points: usize,
    pub omega: f64,
    pub outer: usize,
    pub inner: usize,
    pub snr_db: Vec<f64>,
    pub n_channels: usize,
    pub seed: u64,
    pub schedule: Option<PathBuf>,
    pub init: InitKind,
    /// Power at which `solve-psi` solves the benchmark covariance.
    pub p_bs: f64,
    pub paths: usize,
    /// Write measured wall time into the `seconds` column of sweep CSVs;
    /// when off the column holds zeros and the file is reproducible byte for byte.
    pub record_timing: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_snr_min_db: f64,
    pub train_snr_max_db: f64,
    pub train_step_size: f64,
    pub train_perturbation: f64,
    pub train_mode: GradientMode,
    pub gradient_clip: f64,
    pub repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_antennas: 64,
            n_rf: 4,
            n_users: 4,
            directions_deg: vec![-60.0, 0.0, 60.0],
            halfwidth_deg: 5.0,
            grid_points: 181,
            omega: 0.3,
            outer: 120,
            inner: 20,
            snr_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            n_channels: 100,
            seed: 0,
            schedule: None,
            init: InitKind::Proposed,
            p_bs: 1.0,
            paths: 10,
            record_timing: true,
            epochs: 20,
            batch_size: 10,
            train_snr_min_db: 0.0,
            train_snr_max_db: 12.0,
            train_step_size: 1e-3,
            train_perturbation: 1e-4,
            train_mode: GradientMode::SimultaneousPerturbation,
            gradient_clip: 1.0,
            repetitions: 5,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad value {raw:?} for {key}: {e}")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|v| parse_value(key, v)).collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad value {other:?} for {key}: expected true or false"))),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().to_string();
            if seen.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: key {key} given twice", lineno + 1)));
            }
        }
        let mut c = ExperimentConfig::default();
        for (key, v) in &seen {
            let k = key.as_str();
            match k {
                "N" => c.n_antennas = parse_value(k, v)?,
                "M" => c.n_rf = parse_value(k, v)?,
                "K" => c.n_users = parse_value(k, v)?,
                "directions" => c.directions_deg = parse_list(k, v)?,
                "halfwidth_deg" => c.halfwidth_deg = parse_value(k, v)?,
                "grid_points" => c.grid_points = parse_value(k, v)?,
                "omega" => c.omega = parse_value(k, v)?,
                "I" => c.outer = parse_value(k, v)?,
                "J" => c.inner = parse_value(k, v)?,
                "snr_db" => c.snr_db = parse_list(k, v)?,
                "n_channels" => c.n_channels = parse_value(k, v)?,
                "seed" => c.seed = parse_value(k, v)?,
                "schedule" => c.schedule = (!v.is_empty()).then(|| PathBuf::from(v)),
                "init" => c.init = parse_value(k, v)?,
                "p_bs" => c.p_bs = parse_value(k, v)?,
                "paths" => c.paths = parse_value(k, v)?,
                "record_timing" => c.record_timing = parse_bool(k, v)?,
                "epochs" => c.epochs = parse_value(k, v)?,
                "batch_size" => c.batch_size = parse_value(k, v)?,
                "train_snr_min_db" => c.train_snr_min_db = parse_value(k, v)?,
                "train_snr_max_db" => c.train_snr_max_db = parse_value(k, v)?,
                "train_step_size" => c.train_step_size = parse_value(k, v)?,
                "train_perturbation" => c.train_perturbation = parse_value(k, v)?,
                "train_mode" => c.train_mode = parse_value(k, v)?,
                "gradient_clip" => c.gradient_clip = parse_value(k, v)?,
                "repetitions" => c.repetitions = parse_value(k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("N", self.n_antennas.to_string());
        kv("M", self.n_rf.to_string());
        kv("K", self.n_users.to_string());
        kv("directions", join(&self.directions_deg));
        kv("halfwidth_deg", self.halfwidth_deg.to_string());
        kv("grid_points", self.grid_points.to_string());
        kv("omega", self.omega.to_string());
        kv("I", self.outer.to_string());
        kv("J", self.inner.to_string());
        kv("snr_db", join(&self.snr_db));
        kv("n_channels", self.n_channels.to_string());
        kv("seed", self.seed.to_string());
        if let Some(p) = &self.schedule {
            kv("schedule", p.display().to_string());
        }
        kv("init", self.init.to_string());
        kv("p_bs", self.p_bs.to_string());
        kv("paths", self.paths.to_string());
        kv("record_timing", self.record_timing.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("train_snr_min_db", self.train_snr_min_db.to_string());
        kv("train_snr_max_db", self.train_snr_max_db.to_string());
        kv("train_step_size", self.train_step_size.to_string());
        kv("train_perturbation", self.train_perturbation.to_string());
        kv("train_mode", self.train_mode.to_string());
        kv("gradient_clip", self.gradient_clip.to_string());
        kv("repetitions", self.repetitions.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("N", self.n_antennas),
            ("M", self.n_rf),
            ("K", self.n_users),
            ("grid_points", self.grid_points),
            ("J", self.inner),
            ("n_channels", self.n_channels),
            ("paths", self.paths),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("repetitions", self.repetitions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.directions_deg.is_empty() {
            return Err(Error::Config("directions must list at least one angle".into()));
        }
        if self.n_rf < self.n_users || self.n_rf > self.n_users + self.directions_deg.len() {
            return Err(Error::Config(format!(
                "need K <= M <= K + P, got M={}, K={}, P={}",
                self.n_rf,
                self.n_users,
                self.directions_deg.len()
            )));
        }
        if self.n_users > self.n_antennas {
            return Err(Error::Config(format!("K={} exceeds N={}", self.n_users, self.n_antennas)));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("snr_db must be a nonempty list of finite values".into()));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::Config(format!("omega must be finite and >= 0, got {}", self.omega)));
        }
        if !(self.p_bs > 0.0) || !self.p_bs.is_finite() {
            return Err(Error::Config(format!("p_bs must be positive, got {}", self.p_bs)));
        }
        self.train_config().validate()?;
        self.channel_model().validate()?;
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<BeampatternSpec> {
        make_spec(&self.directions_deg, self.halfwidth_deg, self.grid_points)
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            paths: self.paths,
            ..ChannelModel::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            outer: self.outer,
            inner: self.inner,
            epochs: self.epochs,
            batch_size: self.batch_size,
            snr_min_db: self.train_snr_min_db,
            snr_max_db: self.train_snr_max_db,
            omega: self.omega,
            step_size: self.train_step_size,
            perturbation: self.train_perturbation,
            mode: self.train_mode,
            seed: self.seed,
            n_rf: self.n_rf,
            init: self.init,
            gradient_clip: self.gradient_clip,
            ..TrainConfig::default()
        }
    }
}
