//! Experiment commands behind the CLI: corpus generation, covariance solve,
//! training, SNR sweeps, beampattern export and timing scans.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::baselines::{conventional_pga, zf_digital, zf_sum_rate};
use crate::beampattern::{
    beampattern_mse, beampattern_mse_digital, load_psi, save_psi, solve_benchmark_covariance, BenchmarkCovariance,
    BeampatternSpec, SolverOptions,
};
use crate::channel::{gen_channels, gen_corpus, load_dataset, save_dataset, ChannelSet};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;
use crate::objective::{objective, Precoders, SystemParams};
use crate::pga::{fmt_f64, initialize, load_schedule, run_pga, save_schedule, StepSchedule};
use crate::unfolding::{train_step_sizes, TrainReport};

pub const SWEEP_HEADER: [&str; 7] = [
    "method",
    "snr_db",
    "channel_idx",
    "sum_rate",
    "beampattern_mse",
    "objective",
    "seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Upganet,
    Pga,
    Zf,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Upganet => "upganet",
            Method::Pga => "pga",
            Method::Zf => "zf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub method: Method,
    pub snr_db: f64,
    pub channel_idx: usize,
    pub sum_rate: f64,
    pub beampattern_mse: f64,
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    /// Ordered by method, then SNR (config order), then channel index.
    pub records: Vec<SweepRecord>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::schema(path, format!("{other:?}")),
    }
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            w.write_record([
                r.method.to_string(),
                fmt_f64(r.snr_db),
                r.channel_idx.to_string(),
                fmt_f64(r.sum_rate),
                fmt_f64(r.beampattern_mse),
                fmt_f64(r.objective),
                fmt_f64(r.seconds),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn of_method(&self, method: Method) -> impl Iterator<Item = &SweepRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }

    /// Mean of `field` over the records of `method` at `snr_db`.
    pub fn mean(&self, method: Method, snr_db: f64, field: impl Fn(&SweepRecord) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.of_method(method).filter(|r| r.snr_db == snr_db).map(field).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Benchmark covariance rescaled to `p_bs` (the optimum is homogeneous in power).
pub fn psi_at_power(cov: &BenchmarkCovariance, p_bs: f64) -> ComplexMatrix {
    &cov.psi * Complex64::new(p_bs / cov.p_bs, 0.0)
}

fn init_seed(config: &ExperimentConfig, channel_idx: usize) -> u64 {
    config.seed.wrapping_add(channel_idx as u64)
}

fn check_dataset(config: &ExperimentConfig, channels: &[ChannelSet]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::Config("dataset holds no channels".into()));
    }
    for (i, c) in channels.iter().enumerate() {
        if c.n_antennas() != config.n_antennas || c.n_users() != config.n_users {
            return Err(Error::Dimension(format!(
                "channel {i} is {}x{}, config expects K={} by N={}",
                c.n_users(),
                c.n_antennas(),
                config.n_users,
                config.n_antennas
            )));
        }
    }
    Ok(())
}

fn run_cell(
    (method, snr_db, channel_idx): (Method, f64, usize),
    h: &ComplexMatrix,
    cov: &BenchmarkCovariance,
    spec: &BeampatternSpec,
    config: &ExperimentConfig,
    schedule: Option<&StepSchedule>,
) -> Result<SweepRecord> {
    let params = SystemParams::from_snr_db(snr_db, config.omega, config.n_antennas);
    let psi = psi_at_power(cov, params.p_bs);
    let started = Instant::now();
    let (sum_rate, mse, obj) = match method {
        Method::Zf => {
            let zf = zf_digital(h, params.p_bs)?;
            let rate = zf_sum_rate(h, &zf.x, params.noise_var);
            let mse = beampattern_mse_digital(&zf.x, spec);
            let as_precoders = Precoders {
                digital: ComplexMatrix::identity(zf.x.ncols(), zf.x.ncols()),
                analog: zf.x,
            };
            (rate, mse, objective(h, &as_precoders, &psi, &params))
        }
        Method::Pga | Method::Upganet => {
            let init = initialize(
                config.init,
                h,
                spec,
                config.n_rf,
                params.p_bs,
                init_seed(config, channel_idx),
            )?;
            let tr = match (method, schedule) {
                (Method::Upganet, Some(s)) => run_pga(h, &psi, &params, s, &init)?,
                _ => conventional_pga(h, &psi, &params, config.outer, &init)?,
            };
            let rec = tr.final_record();
            (rec.rate, beampattern_mse(&tr.precoders, spec), rec.objective)
        }
    };
    let seconds = if config.record_timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok(SweepRecord {
        method,
        snr_db,
        channel_idx,
        sum_rate,
        beampattern_mse: mse,
        objective: obj,
        seconds,
    })
}

/// Runs every `(method, SNR, channel)` cell in parallel and returns the records
/// in deterministic order. `Method::Upganet` requires a schedule.
pub fn run_sweep(
    config: &ExperimentConfig,
    channels: &[ChannelSet],
    cov: &BenchmarkCovariance,
    schedule: Option<&StepSchedule>,
    methods: &[Method],
) -> Result<SweepResult> {
    config.validate()?;
    check_dataset(config, channels)?;
    if cov.psi.nrows() != config.n_antennas {
        return Err(Error::Dimension(format!(
            "covariance is {0}x{0}, config has N={1}",
            cov.psi.nrows(),
            config.n_antennas
        )));
    }
    if methods.contains(&Method::Upganet) && schedule.is_none() {
        return Err(Error::Config("UPGANet rows need a schedule".into()));
    }
    let spec = config.spec()?;
    let cells: Vec<(Method, f64, usize)> = methods
        .iter()
        .flat_map(|&m| {
            config
                .snr_db
                .iter()
                .flat_map(move |&snr| (0..channels.len()).map(move |c| (m, snr, c)))
        })
        .collect();
    let records = cells
        .par_iter()
        .map(|&(m, snr, c)| run_cell((m, snr, c), &channels[c].h, cov, &spec, config, schedule))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { records })
}

pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> Result<Vec<ChannelSet>> {
    config.validate()?;
    let corpus = gen_corpus(
        config.n_channels,
        config.n_users,
        config.n_antennas,
        &config.channel_model(),
        config.seed,
    )?;
    save_dataset(out, &corpus)?;
    Ok(corpus)
}

pub fn cmd_solve_psi(config: &ExperimentConfig, out: &Path) -> Result<BenchmarkCovariance> {
    config.validate()?;
    let cov = solve_benchmark_covariance(&config.spec()?, config.p_bs, config.n_antennas, SolverOptions::default())?;
    if !cov.converged {
        log::warn!(
            "covariance solver stopped before convergence after {} iterations",
            cov.history.len().saturating_sub(1)
        );
    }
    save_psi(out, &cov)?;
    Ok(cov)
}

/// Trains on the dataset, writes the schedule to `out` and, when given, the
/// per-epoch report to `report`.
pub fn cmd_train(config: &ExperimentConfig, dataset: &Path, out: &Path, report: Option<&Path>) -> Result<TrainReport> {
    config.validate()?;
    let channels = load_dataset(dataset)?;
    check_dataset(config, &channels)?;
    let (schedule, rep) = train_step_sizes(&channels, &config.spec()?, &config.train_config())?;
    save_schedule(out, &schedule)?;
    if let Some(path) = report {
        rep.write_csv(path)?;
    }
    Ok(rep)
}

pub fn cmd_eval(
    config: &ExperimentConfig,
    dataset: &Path,
    psi: &Path,
    schedule: Option<&Path>,
    out: &Path,
) -> Result<SweepResult> {
    config.validate()?;
    let channels = load_dataset(dataset)?;
    let cov = load_psi(psi)?;
    let schedule = match schedule {
        Some(p) => Some(load_schedule(p)?),
        None => {
            log::warn!("no schedule given; UPGANet rows are omitted");
            None
        }
    };
    let methods: Vec<Method> = if schedule.is_some() {
        vec![Method::Upganet, Method::Pga, Method::Zf]
    } else {
        vec![Method::Pga, Method::Zf]
    };
    let result = run_sweep(config, &channels, &cov, schedule.as_ref(), &methods)?;
    result.write_csv(out)?;
    Ok(result)
}

/// What `cmd_beampattern` draws.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternSource {
    /// A saved benchmark covariance.
    Covariance(PathBuf),
    /// Precoders optimized on every channel of a dataset at the first SNR of
    /// the config, by UPGANet when a schedule is given and by fixed-step PGA
    /// otherwise; the patterns are averaged.
    Optimized { dataset: PathBuf, schedule: Option<PathBuf> },
}

pub fn write_pattern_csv(path: &Path, grid_deg: &[f64], gains: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["theta_deg", "gain"]).map_err(|e| csv_err(path, e))?;
    for (t, g) in grid_deg.iter().zip(gains) {
        w.write_record([fmt_f64(*t), fmt_f64(*g)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Realized beampattern on the config grid; one `(theta, gain)` row per grid point.
pub fn cmd_beampattern(config: &ExperimentConfig, source: &PatternSource, out: &Path) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    let spec = config.spec()?;
    let gains = match source {
        PatternSource::Covariance(path) => spec.pattern_of_covariance(&load_psi(path)?.psi)?,
        PatternSource::Optimized { dataset, schedule } => {
            let channels = load_dataset(dataset)?;
            check_dataset(config, &channels)?;
            let schedule = schedule.as_deref().map(load_schedule).transpose()?;
            let p_bs = 10f64.powf(config.snr_db[0] / 10.0);
            let cov = solve_benchmark_covariance(&spec, p_bs, config.n_antennas, SolverOptions::default())?;
            let params = SystemParams::from_snr_db(config.snr_db[0], config.omega, config.n_antennas);
            let patterns = channels
                .par_iter()
                .enumerate()
                .map(|(i, c)| {
                    let init = initialize(config.init, &c.h, &spec, config.n_rf, p_bs, init_seed(config, i))?;
                    let tr = match &schedule {
                        Some(s) => run_pga(&c.h, &cov.psi, &params, s, &init)?,
                        None => conventional_pga(&c.h, &cov.psi, &params, config.outer, &init)?,
                    };
                    Ok(spec.pattern_of_precoder(&tr.precoders.effective()))
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let count = patterns.len() as f64;
            (0..spec.len())
                .map(|t| patterns.iter().map(|p| p[t]).sum::<f64>() / count)
                .collect()
        }
    };
    write_pattern_csv(out, &spec.grid_deg, &gains)?;
    Ok(spec.grid_deg.iter().copied().zip(gains).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingAxis {
    Antennas,
    Users,
}

impl std::str::FromStr for ScalingAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "n" | "antennas" => Ok(ScalingAxis::Antennas),
            "k" | "users" => Ok(ScalingAxis::Users),
            other => Err(Error::Config(format!("unknown scaling axis {other:?}; use n or k"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub n_antennas: usize,
    pub n_users: usize,
    /// Median over repetitions of the run time divided by `I`.
    pub seconds_per_iteration: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Time of one outer iteration of the forward pass at the given shape.
/// The covariance is `(P/N) I`, which costs the same as any other.
pub fn time_outer_iteration(config: &ExperimentConfig, n: usize, k: usize) -> Result<f64> {
    if config.outer == 0 {
        return Err(Error::Config("timing needs I >= 1".into()));
    }
    if config.n_rf < k || config.n_rf > k + config.directions_deg.len() || k > n {
        return Err(Error::Config(format!(
            "shape N={n}, K={k} is incompatible with M={}",
            config.n_rf
        )));
    }
    let spec = config.spec()?;
    let params = SystemParams::from_snr_db(config.snr_db[0], config.omega, n);
    let psi = ComplexMatrix::identity(n, n) * Complex64::new(params.p_bs / n as f64, 0.0);
    let h = gen_channels(k, n, &config.channel_model(), config.seed)?.h;
    let init = initialize(config.init, &h, &spec, config.n_rf, params.p_bs, config.seed)?;
    let schedule = StepSchedule::constant(config.outer, config.inner, 1e-4, 1e-4)?;
    run_pga(&h, &psi, &params, &schedule, &init)?;
    let times = (0..config.repetitions)
        .map(|_| {
            let started = Instant::now();
            run_pga(&h, &psi, &params, &schedule, &init)?;
            Ok(started.elapsed().as_secs_f64() / config.outer as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(median(times))
}

pub fn cmd_scaling(config: &ExperimentConfig, axis: ScalingAxis, values: &[usize], out: &Path) -> Result<Vec<ScalingRow>> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::Config("scaling needs at least one value".into()));
    }
    let rows = values
        .iter()
        .map(|&v| {
            let (n, k) = match axis {
                ScalingAxis::Antennas => (v, config.n_users),
                ScalingAxis::Users => (config.n_antennas, v),
            };
            Ok(ScalingRow {
                n_antennas: n,
                n_users: k,
                seconds_per_iteration: time_outer_iteration(config, n, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_err(out, e))?;
    w.write_record(["n_antennas", "n_users", "seconds_per_iteration"])
        .map_err(|e| csv_err(out, e))?;
    for r in &rows {
        w.write_record([r.n_antennas.to_string(), r.n_users.to_string(), fmt_f64(r.seconds_per_iteration)])
            .map_err(|e| csv_err(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}
