//! Learning the step schedule of the unfolded PGA network.
//!
//! Every layer of the network is one outer iteration of [`run_pga`]; the
//! trainable parameters are its `I J + I` step sizes. The loss is
//! `omega * tau - R` at the last layer. Derivatives with respect to the step
//! sizes are estimated from loss evaluations only, either by simultaneous
//! perturbation (two evaluations per update) or by central differences along
//! every coordinate.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beampattern::{solve_benchmark_covariance, BeampatternSpec, SolverOptions};
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;
use crate::objective::{Precoders, SystemParams};
use crate::pga::{fmt_f64, initialize, run_pga, InitKind, StepSchedule, TrainingMeta};

/// Standard SPSA gain exponents.
const GAIN_DECAY: f64 = 0.602;
const PERTURBATION_DECAY: f64 = 0.101;
/// Consecutive increases of the epoch training loss that stop training.
const DIVERGENCE_PATIENCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    SimultaneousPerturbation,
    CoordinateFd,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spsa" | "simultaneous-perturbation" => Ok(GradientMode::SimultaneousPerturbation),
            "fd" | "coordinate-fd" => Ok(GradientMode::CoordinateFd),
            other => Err(Error::Config(format!("unknown gradient mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for GradientMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradientMode::SimultaneousPerturbation => "simultaneous-perturbation",
            GradientMode::CoordinateFd => "coordinate-fd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub outer: usize,
    pub inner: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub omega: f64,
    /// Gain `a0` of the stochastic approximation update.
    pub step_size: f64,
    /// Perturbation size `c0`.
    pub perturbation: f64,
    pub mode: GradientMode,
    pub seed: u64,
    /// RF chains `M`.
    pub n_rf: usize,
    pub init: InitKind,
    /// Value of every step size before training.
    pub initial_step: f64,
    /// Fraction of the dataset used for training; the rest validates.
    pub train_fraction: f64,
    /// Bound on each coordinate of the gradient estimate before the update;
    /// `f64::INFINITY` disables clipping.
    pub gradient_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer: 120,
            inner: 20,
            epochs: 20,
            batch_size: 10,
            snr_min_db: 0.0,
            snr_max_db: 12.0,
            omega: 0.3,
            step_size: 1e-3,
            perturbation: 1e-4,
            mode: GradientMode::SimultaneousPerturbation,
            seed: 0,
            n_rf: 4,
            init: InitKind::Proposed,
            initial_step: 0.01,
            train_fraction: 0.9,
            gradient_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner == 0 || self.epochs == 0 || self.batch_size == 0 || self.n_rf == 0 {
            return Err(Error::Config("J, epochs, batch_size and M must all be >= 1".into()));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(Error::Config(format!(
                "SNR range [{}, {}] dB is empty",
                self.snr_min_db, self.snr_max_db
            )));
        }
        if !(self.omega >= 0.0) || !self.step_size.is_finite() || !self.initial_step.is_finite() {
            return Err(Error::Config("omega must be >= 0 and step sizes finite".into()));
        }
        if !(self.perturbation > 0.0) {
            return Err(Error::Config("perturbation size must be positive".into()));
        }
        if !(self.gradient_clip > 0.0) {
            return Err(Error::Config("gradient_clip must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn meta(&self) -> TrainingMeta {
        TrainingMeta {
            seed: self.seed,
            snr_min_db: self.snr_min_db,
            snr_max_db: self.snr_max_db,
            omega: self.omega,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Validation loss of the untrained schedule.
    pub initial_val_loss: f64,
    /// Epoch whose parameters were returned, `None` for the initialization.
    pub best_epoch: Option<usize>,
    pub halted_early: bool,
    pub schedule: StepSchedule,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        match self.best_epoch {
            None => self.initial_val_loss,
            Some(e) => self.epochs[e - 1].val_loss,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut text = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.epochs {
            text.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                fmt_f64(r.train_loss),
                fmt_f64(r.val_loss),
                fmt_f64(r.seconds)
            ));
        }
        out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// One channel at one transmit power, with everything the forward pass needs.
#[derive(Debug, Clone)]
pub struct LossSample {
    pub h: ComplexMatrix,
    pub psi: ComplexMatrix,
    pub params: SystemParams,
    pub init: Precoders,
}

impl LossSample {
    /// `psi_unit` is the benchmark covariance at unit power; the optimal
    /// covariance scales linearly with the power budget.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: &ComplexMatrix,
        psi_unit: &ComplexMatrix,
        p_bs: f64,
        omega: f64,
        spec: &BeampatternSpec,
        n_rf: usize,
        init: InitKind,
        init_seed: u64,
    ) -> Result<Self> {
        let n = h.ncols();
        let params = SystemParams::new(p_bs, 1.0, omega, n);
        params.validate()?;
        let init = initialize(init, h, spec, n_rf, p_bs, init_seed)?;
        Ok(LossSample {
            h: h.clone(),
            psi: psi_unit * Complex64::new(p_bs, 0.0),
            params,
            init,
        })
    }
}

/// `omega * tau - R` after the last layer.
pub fn upga_loss(
    h: &ComplexMatrix,
    psi: &ComplexMatrix,
    params: &SystemParams,
    schedule: &StepSchedule,
    init: &Precoders,
) -> Result<f64> {
    Ok(-run_pga(h, psi, params, schedule, init)?.final_record().objective)
}

/// Mean loss over `samples`, reduced in index order.
pub fn batch_loss(samples: &[LossSample], schedule: &StepSchedule) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|s| upga_loss(&s.h, &s.psi, &s.params, schedule, &s.init))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Transmit power for an SNR drawn uniformly in dB (unit noise).
pub fn sample_power<R: Rng + ?Sized>(snr_min_db: f64, snr_max_db: f64, rng: &mut R) -> Result<f64> {
    if !(snr_min_db <= snr_max_db) || !snr_min_db.is_finite() || !snr_max_db.is_finite() {
        return Err(Error::Config(format!("SNR range [{snr_min_db}, {snr_max_db}] dB is empty")));
    }
    let u = if snr_min_db == snr_max_db {
        snr_min_db
    } else {
        rng.random_range(snr_min_db..=snr_max_db)
    };
    Ok(10f64.powf(u / 10.0))
}

/// Two-sided simultaneous-perturbation estimate with Rademacher directions.
/// Returns the gradient estimate and the mean of the two losses.
pub fn spsa_gradient<R: Rng + ?Sized>(
    samples: &[LossSample],
    schedule: &StepSchedule,
    c: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let theta = schedule.to_vec();
    let delta: Vec<f64> = (0..theta.len())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let shifted = |sign: f64| -> Vec<f64> { theta.iter().zip(&delta).map(|(t, d)| t + sign * c * d).collect() };
    let plus = batch_loss(samples, &schedule.with_params(&shifted(1.0))?)?;
    let minus = batch_loss(samples, &schedule.with_params(&shifted(-1.0))?)?;
    let diff = (plus - minus) / (2.0 * c);
    Ok((delta.iter().map(|d| diff / d).collect(), 0.5 * (plus + minus)))
}

/// Central differences along every step size. Returns the gradient and the
/// mean loss over all evaluated points.
pub fn coordinate_gradient(samples: &[LossSample], schedule: &StepSchedule, h: f64) -> Result<(Vec<f64>, f64)> {
    let theta = schedule.to_vec();
    let pairs = (0..theta.len())
        .map(|i| {
            let mut p = theta.clone();
            p[i] += h;
            let plus = batch_loss(samples, &schedule.with_params(&p)?)?;
            p[i] = theta[i] - h;
            let minus = batch_loss(samples, &schedule.with_params(&p)?)?;
            Ok((plus, minus))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let grad = pairs.iter().map(|(p, m)| (p - m) / (2.0 * h)).collect();
    let mean = pairs.iter().map(|(p, m)| p + m).sum::<f64>() / (2 * pairs.len()).max(1) as f64;
    Ok((grad, mean))
}

fn draw_samples(
    dataset: &[ChannelSet],
    indices: &[usize],
    psi_unit: &ComplexMatrix,
    spec: &BeampatternSpec,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossSample>> {
    indices
        .iter()
        .map(|&idx| {
            let p_bs = sample_power(config.snr_min_db, config.snr_max_db, rng)?;
            let init_seed = rng.random::<u64>();
            LossSample::new(
                &dataset[idx].h,
                psi_unit,
                p_bs,
                config.omega,
                spec,
                config.n_rf,
                config.init,
                init_seed,
            )
        })
        .collect()
}

/// Learns a step schedule on a seed-determined split of `dataset` and returns
/// the parameters with the lowest validation loss seen, including the
/// initialization itself.
pub fn train_step_sizes(
    dataset: &[ChannelSet],
    spec: &BeampatternSpec,
    config: &TrainConfig,
) -> Result<(StepSchedule, TrainReport)> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 channels for a validation split, got {}",
            dataset.len()
        )));
    }
    let n = dataset[0].n_antennas();
    let k = dataset[0].n_users();
    if dataset.iter().any(|c| c.n_antennas() != n || c.n_users() != k) {
        return Err(Error::Dimension("all channels in a dataset must share (K, N)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((dataset.len() as f64 * config.train_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);

    let psi_unit = solve_benchmark_covariance(spec, 1.0, n, SolverOptions::default())?.psi;
    let val_samples = draw_samples(dataset, val_idx, &psi_unit, spec, config, &mut rng)?;

    let mut schedule = StepSchedule::constant(config.outer, config.inner, config.initial_step, config.initial_step)?;
    schedule.meta = config.meta();
    let initial_val_loss = batch_loss(&val_samples, &schedule)?;
    let mut best = (initial_val_loss, None, schedule.clone());

    let mut records = Vec::with_capacity(config.epochs);
    let mut theta = schedule.to_vec();
    let mut t = 0usize;
    let mut increases = 0usize;
    let mut halted_early = false;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut epoch_idx = train_idx.to_vec();
        epoch_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in epoch_idx.chunks(config.batch_size) {
            let samples = draw_samples(dataset, chunk, &psi_unit, spec, config, &mut rng)?;
            let a_t = config.step_size / ((t + 1) as f64).powf(GAIN_DECAY);
            let c_t = config.perturbation / ((t + 1) as f64).powf(PERTURBATION_DECAY);
            let current = schedule.with_params(&theta)?;
            let (grad, loss) = match config.mode {
                GradientMode::SimultaneousPerturbation => spsa_gradient(&samples, &current, c_t, &mut rng)?,
                GradientMode::CoordinateFd => coordinate_gradient(&samples, &current, c_t)?,
            };
            for (p, g) in theta.iter_mut().zip(&grad) {
                *p -= a_t * g.clamp(-config.gradient_clip, config.gradient_clip);
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("step sizes diverged in epoch {epoch}")));
            }
            loss_sum += loss;
            batches += 1;
            t += 1;
        }
        let current = schedule.with_params(&theta)?;
        let val_loss = batch_loss(&val_samples, &current)?;
        let train_loss = loss_sum / batches as f64;
        if let Some(prev) = records.last().map(|r: &EpochRecord| r.train_loss) {
            increases = if train_loss > prev { increases + 1 } else { 0 };
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if val_loss < best.0 {
            best = (val_loss, Some(epoch), current);
        }
        if increases >= DIVERGENCE_PATIENCE {
            log::warn!("training loss rose {DIVERGENCE_PATIENCE} epochs in a row; stopping at epoch {epoch}");
            halted_early = true;
            break;
        }
    }

    let (_, best_epoch, best_schedule) = best;
    let report = TrainReport {
        epochs: records,
        initial_val_loss,
        best_epoch,
        halted_early,
        schedule: best_schedule.clone(),
    };
    Ok((best_schedule, report))
}
