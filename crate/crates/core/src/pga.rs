//! Projected gradient ascent on `R - omega * tau` with `J` analog steps per
//! digital step, feasibility projections and the three initializations.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::beampattern::BeampatternSpec;
use crate::channel::steering;
use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, fro_norm, pseudo_inverse, svd, ComplexMatrix};
use crate::objective::{grad_rate_analog, grad_rate_digital, grad_tau_analog, grad_tau_digital, sum_rate, tau, Precoders, SystemParams};

pub const SCHEDULE_VERSION: u32 = 1;

/// Provenance stored alongside a learned schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub omega: f64,
}

/// Per-layer step sizes: `mu[i][j]` for the analog steps and `lambda[i]`
/// for the digital step of outer iteration `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    outer: usize,
    inner: usize,
    mu: Vec<f64>,
    lambda: Vec<f64>,
    pub meta: TrainingMeta,
}

impl StepSchedule {
    pub fn new(outer: usize, inner: usize, mu: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if inner == 0 {
            return Err(Error::Config("schedule needs J >= 1".into()));
        }
        if mu.len() != outer * inner || lambda.len() != outer {
            return Err(Error::Config(format!(
                "schedule {outer}x{inner} needs {} mu and {outer} lambda values, got {} and {}",
                outer * inner,
                mu.len(),
                lambda.len()
            )));
        }
        if mu.iter().chain(&lambda).any(|v| !v.is_finite()) {
            return Err(Error::Config("schedule contains non-finite step sizes".into()));
        }
        Ok(StepSchedule {
            outer,
            inner,
            mu,
            lambda,
            meta: TrainingMeta::default(),
        })
    }

    /// Every analog step `mu`, every digital step `lambda`.
    pub fn constant(outer: usize, inner: usize, mu: f64, lambda: f64) -> Result<Self> {
        Self::new(outer, inner, vec![mu; outer * inner], vec![lambda; outer])
    }

    pub fn outer(&self) -> usize {
        self.outer
    }

    pub fn inner(&self) -> usize {
        self.inner
    }

    pub fn mu(&self, i: usize, j: usize) -> f64 {
        self.mu[i * self.inner + j]
    }

    pub fn mu_row(&self, i: usize) -> &[f64] {
        &self.mu[i * self.inner..(i + 1) * self.inner]
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambda[i]
    }

    /// Number of trainable step sizes, `I J + I`.
    pub fn n_params(&self) -> usize {
        self.mu.len() + self.lambda.len()
    }

    /// Flat parameter vector: all `mu` row-major, then all `lambda`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.lambda).copied().collect()
    }

    /// Same shape and metadata, new parameters in `to_vec` order.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let split = self.mu.len();
        let mut out = Self::new(self.outer, self.inner, params[..split].to_vec(), params[split..].to_vec())?;
        out.meta = self.meta;
        Ok(out)
    }
}

/// Objective and feasibility after one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    pub rate: f64,
    pub tau: f64,
    pub unit_modulus_error: f64,
    pub power_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `I + 1` records; the first is the projected initial point.
    pub records: Vec<IterationRecord>,
    pub precoders: Precoders,
}

impl Trajectory {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trajectory always holds the initial record")
    }
}

/// Entry-wise phase projection onto the unit circle; zero entries map to `1`.
pub fn project_analog(a: &ComplexMatrix) -> ComplexMatrix {
    a.map(|z| {
        let r = z.norm();
        if r == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            z / r
        }
    })
}

/// Rescales `d` so that `||A D||_F^2 = p_bs`.
pub fn project_digital(a: &ComplexMatrix, d: &ComplexMatrix, p_bs: f64) -> Result<ComplexMatrix> {
    let norm = fro_norm(&(a * d));
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!("cannot normalize digital precoder, ||AD|| = {norm}")));
    }
    Ok(d * Complex64::new(p_bs.sqrt() / norm, 0.0))
}

/// `J` unprojected analog ascent steps with `D` held fixed, then the phase projection.
pub fn analog_inner_loop(
    a: &ComplexMatrix,
    d: &ComplexMatrix,
    steps: &[f64],
    h: &ComplexMatrix,
    psi: &ComplexMatrix,
    params: &SystemParams,
) -> Result<ComplexMatrix> {
    let mut pc = Precoders {
        analog: a.clone(),
        digital: d.clone(),
    };
    for &mu in steps {
        let mut dir = grad_rate_analog(h, &pc, params.noise_var);
        if params.omega != 0.0 {
            dir -= grad_tau_analog(&pc, psi) * Complex64::new(params.omega, 0.0);
        }
        ensure_finite(&dir, "analog gradient")?;
        pc.analog += dir * Complex64::new(mu, 0.0);
    }
    Ok(project_analog(&pc.analog))
}

/// One digital ascent step with the `eta`-weighted beampattern term, then power normalization.
pub fn digital_step(
    a: &ComplexMatrix,
    d: &ComplexMatrix,
    lambda: f64,
    h: &ComplexMatrix,
    psi: &ComplexMatrix,
    params: &SystemParams,
) -> Result<ComplexMatrix> {
    let pc = Precoders {
        analog: a.clone(),
        digital: d.clone(),
    };
    let mut dir = grad_rate_digital(h, &pc, params.noise_var);
    if params.omega != 0.0 {
        dir -= grad_tau_digital(&pc, psi) * Complex64::new(params.omega * params.eta, 0.0);
    }
    ensure_finite(&dir, "digital gradient")?;
    let updated = d + dir * Complex64::new(lambda, 0.0);
    project_digital(a, &updated, params.p_bs)
}

fn record(h: &ComplexMatrix, pc: &Precoders, psi: &ComplexMatrix, params: &SystemParams) -> IterationRecord {
    let rate = sum_rate(h, pc, params.noise_var);
    let t = tau(pc, psi);
    let objective = if params.omega == 0.0 { rate } else { rate - params.omega * t };
    IterationRecord {
        objective,
        rate,
        tau: t,
        unit_modulus_error: pc.unit_modulus_error(),
        power_error: pc.power_error(params.p_bs),
    }
}

/// Forward pass of the unfolded network: `I` outer iterations of analog
/// inner loop followed by one digital step, recorded at feasible points.
pub fn run_pga(
    h: &ComplexMatrix,
    psi: &ComplexMatrix,
    params: &SystemParams,
    schedule: &StepSchedule,
    init: &Precoders,
) -> Result<Trajectory> {
    params.validate()?;
    init.check_dims(h, Some(psi))?;
    let analog = project_analog(&init.analog);
    let digital = project_digital(&analog, &init.digital, params.p_bs)?;
    let mut pc = Precoders { analog, digital };
    let mut records = Vec::with_capacity(schedule.outer() + 1);
    records.push(record(h, &pc, psi, params));
    for i in 0..schedule.outer() {
        pc.analog = analog_inner_loop(&pc.analog, &pc.digital, schedule.mu_row(i), h, psi, params)?;
        pc.digital = digital_step(&pc.analog, &pc.digital, schedule.lambda(i), h, psi, params)?;
        records.push(record(h, &pc, psi, params));
    }
    Ok(Trajectory { records, precoders: pc })
}

/// Which starting point to feed the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Proposed,
    Random,
    Svd,
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(InitKind::Proposed),
            "random" => Ok(InitKind::Random),
            "svd" => Ok(InitKind::Svd),
            other => Err(Error::Config(format!("unknown init kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitKind::Proposed => "proposed",
            InitKind::Random => "random",
            InitKind::Svd => "svd",
        })
    }
}

pub fn initialize(
    kind: InitKind,
    h: &ComplexMatrix,
    spec: &BeampatternSpec,
    n_rf: usize,
    p_bs: f64,
    seed: u64,
) -> Result<Precoders> {
    match kind {
        InitKind::Proposed => init_proposed(h, spec, n_rf, p_bs),
        InitKind::Random => init_random(h, n_rf, seed, p_bs),
        InitKind::Svd => init_svd(h, spec, n_rf, p_bs),
    }
}

fn sensing_columns(spec: &BeampatternSpec, n_users: usize, n_rf: usize) -> Result<&[f64]> {
    if n_rf < n_users {
        return Err(Error::Config(format!("need M >= K, got M={n_rf}, K={n_users}")));
    }
    let extra = n_rf - n_users;
    if extra > spec.directions_deg.len() {
        return Err(Error::Config(format!(
            "M={n_rf} exceeds K + P = {}",
            n_users + spec.directions_deg.len()
        )));
    }
    Ok(&spec.directions_deg[..extra])
}

/// `D0 = A0^+ H^+`, normalized to full power.
fn zf_matched_digital(a0: &ComplexMatrix, h: &ComplexMatrix, p_bs: f64) -> Result<ComplexMatrix> {
    let x_zf = pseudo_inverse(h)?;
    let d0 = pseudo_inverse(a0)? * x_zf;
    project_digital(a0, &d0, p_bs)
}

/// Phase-aligned initialization: columns of `A0` take the phases of the user
/// channels and of steering vectors toward the first `M - K` sensing
/// directions; `D0` is the least-squares fit of `A0 D` to zero forcing.
pub fn init_proposed(h: &ComplexMatrix, spec: &BeampatternSpec, n_rf: usize, p_bs: f64) -> Result<Precoders> {
    let (k, n) = h.shape();
    let dirs = sensing_columns(spec, k, n_rf)?;
    let mut g = ComplexMatrix::zeros(n, n_rf);
    for u in 0..k {
        g.set_column(u, &h.row(u).adjoint());
    }
    for (p, &theta) in dirs.iter().enumerate() {
        g.set_column(k + p, &steering(theta, n));
    }
    let a0 = project_analog(&g);
    let d0 = zf_matched_digital(&a0, h, p_bs)?;
    Ok(Precoders { analog: a0, digital: d0 })
}

/// Uniform random phases for `A0` and `D0 = (H A0)^+`.
pub fn init_random(h: &ComplexMatrix, n_rf: usize, seed: u64, p_bs: f64) -> Result<Precoders> {
    let n = h.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a0 = ComplexMatrix::from_fn(n, n_rf, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)));
    let d0 = pseudo_inverse(&(h * &a0))?;
    let d0 = project_digital(&a0, &d0, p_bs)?;
    Ok(Precoders { analog: a0, digital: d0 })
}

/// `A0` from the dominant singular vectors of the channel plus sensing
/// steering vectors, phase-projected so that it is feasible.
pub fn init_svd(h: &ComplexMatrix, spec: &BeampatternSpec, n_rf: usize, p_bs: f64) -> Result<Precoders> {
    let (k, n) = h.shape();
    let dirs = sensing_columns(spec, k, n_rf)?;
    let dec = svd(&h.adjoint())?;
    let mut a = ComplexMatrix::zeros(n, n_rf);
    for u in 0..k {
        a.set_column(u, &dec.u.column(u));
    }
    for (p, &theta) in dirs.iter().enumerate() {
        a.set_column(k + p, &steering(theta, n));
    }
    let a0 = project_analog(&a);
    let d0 = zf_matched_digital(&a0, h, p_bs)?;
    Ok(Precoders { analog: a0, digital: d0 })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    version: u32,
    #[serde(rename = "I")]
    outer: usize,
    #[serde(rename = "J")]
    inner: usize,
    mu: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    training: TrainingFile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingFile {
    seed: i64,
    snr_min_db: f64,
    snr_max_db: f64,
    omega: f64,
}

/// 17 significant digits, enough for an exact decimal round trip.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn schedule_to_string(s: &StepSchedule) -> String {
    let mut out = String::new();
    out.push_str("# hbf-jcas step schedule\n");
    out.push_str(&format!("version = {SCHEDULE_VERSION}\n"));
    out.push_str(&format!("I = {}\nJ = {}\n", s.outer, s.inner));
    out.push_str("mu = [\n");
    for i in 0..s.outer {
        out.push_str(&format!("  {},\n", fmt_list(s.mu_row(i))));
    }
    out.push_str("]\n");
    out.push_str(&format!("lambda = {}\n\n", fmt_list(&s.lambda)));
    out.push_str("[training]\n");
    out.push_str(&format!("seed = {}\n", s.meta.seed as i64));
    out.push_str(&format!("snr_min_db = {}\n", fmt_f64(s.meta.snr_min_db)));
    out.push_str(&format!("snr_max_db = {}\n", fmt_f64(s.meta.snr_max_db)));
    out.push_str(&format!("omega = {}\n", fmt_f64(s.meta.omega)));
    out
}

pub fn schedule_from_str(text: &str, origin: &Path) -> Result<StepSchedule> {
    let file: ScheduleFile = toml::from_str(text).map_err(|e| Error::schema(origin, e.to_string()))?;
    if file.version != SCHEDULE_VERSION {
        return Err(Error::schema(
            origin,
            format!("schedule version {} not supported (expected {SCHEDULE_VERSION})", file.version),
        ));
    }
    if file.mu.len() != file.outer || file.mu.iter().any(|row| row.len() != file.inner) {
        return Err(Error::schema(origin, format!("mu must be {}x{}", file.outer, file.inner)));
    }
    let mu = file.mu.into_iter().flatten().collect();
    let mut s = StepSchedule::new(file.outer, file.inner, mu, file.lambda).map_err(|e| Error::schema(origin, e.to_string()))?;
    s.meta = TrainingMeta {
        // TOML integers are signed; the u64 seed is stored bit-for-bit as i64
        seed: file.training.seed as u64,
        snr_min_db: file.training.snr_min_db,
        snr_max_db: file.training.snr_max_db,
        omega: file.training.omega,
    };
    Ok(s)
}

pub fn save_schedule(path: &Path, schedule: &StepSchedule) -> Result<()> {
    std::fs::write(path, schedule_to_string(schedule)).map_err(|e| Error::io(path, e))
}

pub fn load_schedule(path: &Path) -> Result<StepSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    schedule_from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beampattern::{make_spec, solve_benchmark_covariance, SolverOptions};
    use crate::channel::{gen_channels, ChannelModel};
    use crate::numerics::{fro_norm_sqr, random_complex_normal};
    use crate::objective::objective;

    struct Desk {
        h: ComplexMatrix,
        psi: ComplexMatrix,
        spec: BeampatternSpec,
        params: SystemParams,
    }

    fn desk(n: usize, k: usize, seed: u64, snr_db: f64) -> Desk {
        let spec = make_spec(&[-60.0, 0.0, 60.0], 5.0, 181).unwrap();
        let params = SystemParams::from_snr_db(snr_db, 0.3, n);
        let psi = solve_benchmark_covariance(&spec, params.p_bs, n, SolverOptions { max_iters: 200, tol: 1e-8 })
            .unwrap()
            .psi;
        let h = gen_channels(k, n, &ChannelModel::default(), seed).unwrap().h;
        Desk { h, psi, spec, params }
    }

    fn bits_equal(a: &ComplexMatrix, b: &ComplexMatrix) -> bool {
        a.shape() == b.shape()
            && a.iter().zip(b.iter()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
    }

    #[test]
    fn analog_projection_cases() {
        let mut a = ComplexMatrix::from_fn(3, 2, |i, j| Complex64::from_polar(1.0, (i * 2 + j) as f64 * 0.7));
        let p = project_analog(&a);
        assert!(p.iter().zip(a.iter()).all(|(x, y)| (x - y).norm() < 1e-15));
        a[(0, 0)] = Complex64::from_polar(2.0, std::f64::consts::FRAC_PI_3);
        a[(1, 1)] = Complex64::new(0.0, 0.0);
        let p = project_analog(&a);
        assert!((p[(0, 0)] - Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_3)).norm() < 1e-15);
        assert_eq!(p[(1, 1)], Complex64::new(1.0, 0.0));
        let pp = project_analog(&p);
        assert!(pp.iter().zip(p.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
    }

    #[test]
    fn digital_projection_cases() {
        let d = desk(16, 2, 1, 6.0);
        let pc = init_random(&d.h, 2, 3, d.params.p_bs).unwrap();
        // already feasible -> unchanged
        let again = project_digital(&pc.analog, &pc.digital, d.params.p_bs).unwrap();
        assert!(crate::numerics::relative_error(&again, &pc.digital) < 1e-12);
        // scale invariance
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw = random_complex_normal(2, 2, &mut rng);
        let p1 = project_digital(&pc.analog, &raw, 3.0).unwrap();
        let p7 = project_digital(&pc.analog, &(&raw * Complex64::new(7.0, 0.0)), 3.0).unwrap();
        assert!(crate::numerics::relative_error(&p7, &p1) < 1e-14);
        let power = fro_norm_sqr(&(&pc.analog * &p1));
        assert!((power - 3.0).abs() < 1e-9 * 3.0);
        assert!(matches!(
            project_digital(&pc.analog, &ComplexMatrix::zeros(2, 2), 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn zero_step_inner_loop_only_projects() {
        let d = desk(16, 2, 2, 6.0);
        let pc = init_random(&d.h, 2, 5, d.params.p_bs).unwrap();
        let skewed = &pc.analog * Complex64::new(1.7, 0.3);
        let out = analog_inner_loop(&skewed, &pc.digital, &[0.0, 0.0, 0.0], &d.h, &d.psi, &d.params).unwrap();
        assert!(bits_equal(&out, &project_analog(&skewed)));
    }

    #[test]
    fn single_inner_step_is_plain_pga() {
        let d = desk(16, 2, 3, 6.0);
        let pc = init_proposed(&d.h, &d.spec, 2, d.params.p_bs).unwrap();
        let mu = 0.01;
        let out = analog_inner_loop(&pc.analog, &pc.digital, &[mu], &d.h, &d.psi, &d.params).unwrap();
        let dir = grad_rate_analog(&d.h, &pc, 1.0) - grad_tau_analog(&pc, &d.psi) * Complex64::new(0.3, 0.0);
        let manual = project_analog(&(&pc.analog + dir * Complex64::new(mu, 0.0)));
        assert!(crate::numerics::relative_error(&out, &manual) < 1e-14);
    }

    #[test]
    fn tiny_steps_increase_rate() {
        let d = desk(8, 2, 4, 6.0);
        let params = SystemParams { omega: 0.0, ..d.params };
        let mut pc = init_random(&d.h, 2, 6, params.p_bs).unwrap();
        let mut prev = sum_rate(&d.h, &pc, 1.0);
        for _ in 0..10 {
            let dir = grad_rate_analog(&d.h, &pc, 1.0);
            pc.analog += dir * Complex64::new(1e-4, 0.0);
            let r = sum_rate(&d.h, &pc, 1.0);
            assert!(r >= prev - 1e-12, "{r} < {prev}");
            prev = r;
        }
        // and the loop itself, with its final projection, runs cleanly
        let pc0 = init_random(&d.h, 2, 6, params.p_bs).unwrap();
        let out = analog_inner_loop(&pc0.analog, &pc0.digital, &[1e-4; 10], &d.h, &d.psi, &params).unwrap();
        assert!(out.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn digital_step_cases() {
        let d = desk(16, 2, 5, 6.0);
        let pc = init_random(&d.h, 2, 7, d.params.p_bs).unwrap();
        let zero = digital_step(&pc.analog, &pc.digital, 0.0, &d.h, &d.psi, &d.params).unwrap();
        assert!(bits_equal(&zero, &project_digital(&pc.analog, &pc.digital, d.params.p_bs).unwrap()));

        let params0 = SystemParams { omega: 0.0, ..d.params };
        let step = digital_step(&pc.analog, &pc.digital, 0.05, &d.h, &d.psi, &params0).unwrap();
        let manual = &pc.digital + grad_rate_digital(&d.h, &pc, 1.0) * Complex64::new(0.05, 0.0);
        let manual = project_digital(&pc.analog, &manual, d.params.p_bs).unwrap();
        assert!(crate::numerics::relative_error(&step, &manual) < 1e-14);

        let full = digital_step(&pc.analog, &pc.digital, 0.05, &d.h, &d.psi, &d.params).unwrap();
        let power = fro_norm_sqr(&(&pc.analog * &full));
        assert!((power - d.params.p_bs).abs() < 1e-9 * d.params.p_bs);
    }

    #[test]
    fn zero_schedule_returns_projected_init() {
        let d = desk(16, 2, 6, 6.0);
        let init = init_random(&d.h, 2, 8, d.params.p_bs).unwrap();
        let skewed = Precoders {
            analog: &init.analog * Complex64::new(2.0, 0.0),
            digital: &init.digital * Complex64::new(0.3, 0.1),
        };
        let sched = StepSchedule::constant(5, 3, 0.0, 0.0).unwrap();
        let traj = run_pga(&d.h, &d.psi, &d.params, &sched, &skewed).unwrap();
        assert_eq!(traj.records.len(), 6);
        let first = traj.records[0].objective;
        assert!(traj.records.iter().all(|r| (r.objective - first).abs() <= 1e-12 * first.abs()));
        let a = project_analog(&skewed.analog);
        let dd = project_digital(&a, &skewed.digital, d.params.p_bs).unwrap();
        assert!(bits_equal(&traj.precoders.analog, &a));
        assert!(crate::numerics::relative_error(&traj.precoders.digital, &dd) < 1e-14);
    }

    #[test]
    fn single_iteration_matches_manual_pga() {
        let d = desk(16, 2, 7, 12.0);
        let init = init_proposed(&d.h, &d.spec, 2, d.params.p_bs).unwrap();
        let sched = StepSchedule::constant(1, 1, 0.01, 0.01).unwrap();
        let traj = run_pga(&d.h, &d.psi, &d.params, &sched, &init).unwrap();
        let a0 = project_analog(&init.analog);
        let d0 = project_digital(&a0, &init.digital, d.params.p_bs).unwrap();
        let pc0 = Precoders { analog: a0.clone(), digital: d0.clone() };
        let dir_a = grad_rate_analog(&d.h, &pc0, 1.0) - grad_tau_analog(&pc0, &d.psi) * Complex64::new(0.3, 0.0);
        let a1 = project_analog(&(&a0 + dir_a * Complex64::new(0.01, 0.0)));
        let pc_mid = Precoders { analog: a1.clone(), digital: d0.clone() };
        let eta = 1.0 / 16.0;
        let dir_d = grad_rate_digital(&d.h, &pc_mid, 1.0) - grad_tau_digital(&pc_mid, &d.psi) * Complex64::new(0.3 * eta, 0.0);
        let d1 = project_digital(&a1, &(&d0 + dir_d * Complex64::new(0.01, 0.0)), d.params.p_bs).unwrap();
        assert!(crate::numerics::relative_error(&traj.precoders.analog, &a1) < 1e-13);
        assert!(crate::numerics::relative_error(&traj.precoders.digital, &d1) < 1e-13);
        let obj = objective(&d.h, &traj.precoders, &d.psi, &d.params);
        assert!((traj.final_record().objective - obj).abs() < 1e-12 * obj.abs().max(1.0));
    }

    #[test]
    fn feasibility_after_every_outer_iteration() {
        for seed in 0..5 {
            let d = desk(16, 2, 100 + seed, 12.0);
            let init = init_proposed(&d.h, &d.spec, 2, d.params.p_bs).unwrap();
            let sched = StepSchedule::constant(20, 3, 0.01, 0.01).unwrap();
            let traj = run_pga(&d.h, &d.psi, &d.params, &sched, &init).unwrap();
            for r in &traj.records {
                assert!(r.unit_modulus_error <= 1e-12);
                assert!(r.power_error <= 1e-9);
            }
        }
    }

    #[test]
    fn omega_zero_ignores_covariance() {
        let d = desk(16, 2, 8, 6.0);
        let params = SystemParams { omega: 0.0, ..d.params };
        let init = init_proposed(&d.h, &d.spec, 2, params.p_bs).unwrap();
        let sched = StepSchedule::constant(10, 2, 0.01, 0.01).unwrap();
        let a = run_pga(&d.h, &d.psi, &params, &sched, &init).unwrap();
        let b = run_pga(&d.h, &ComplexMatrix::zeros(16, 16), &params, &sched, &init).unwrap();
        assert!(bits_equal(&a.precoders.analog, &b.precoders.analog));
        assert!(bits_equal(&a.precoders.digital, &b.precoders.digital));
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.objective.to_bits(), y.objective.to_bits());
            assert_eq!(x.rate.to_bits(), y.rate.to_bits());
        }
    }

    #[test]
    fn run_is_deterministic() {
        let d = desk(16, 2, 9, 6.0);
        let init = init_random(&d.h, 2, 1, d.params.p_bs).unwrap();
        let sched = StepSchedule::constant(8, 2, 0.01, 0.02).unwrap();
        let a = run_pga(&d.h, &d.psi, &d.params, &sched, &init).unwrap();
        let b = run_pga(&d.h, &d.psi, &d.params, &sched, &init).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_shapes_and_feasibility() {
        let d = desk(16, 2, 10, 6.0);
        for kind in [InitKind::Proposed, InitKind::Random, InitKind::Svd] {
            for m in [2, 3, 5] {
                let pc = initialize(kind, &d.h, &d.spec, m, d.params.p_bs, 11).unwrap();
                assert_eq!(pc.analog.shape(), (16, m));
                assert_eq!(pc.digital.shape(), (m, 2));
                assert!(pc.unit_modulus_error() <= 1e-12, "{kind}");
                assert!(pc.power_error(d.params.p_bs) <= 1e-9, "{kind}");
            }
        }
        assert!(matches!(init_proposed(&d.h, &d.spec, 6, 1.0), Err(Error::Config(_))));
        assert!(matches!(init_svd(&d.h, &d.spec, 1, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn proposed_init_aligns_with_channels_and_lobes() {
        let d = desk(16, 2, 11, 6.0);
        let pc = init_proposed(&d.h, &d.spec, 3, 1.0).unwrap();
        for u in 0..2 {
            let hk = d.h.row(u).adjoint();
            let expect = project_analog(&ComplexMatrix::from_column_slice(16, 1, hk.as_slice()));
            assert!(bits_equal(&ComplexMatrix::from_column_slice(16, 1, pc.analog.column(u).clone_owned().as_slice()), &expect));
        }
        let lobe = steering(-60.0, 16);
        assert!(pc.analog.column(2).iter().zip(lobe.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
    }

    #[test]
    fn svd_init_uses_dominant_subspace_when_m_equals_k() {
        let d = desk(16, 2, 12, 6.0);
        let dec = svd(&d.h.adjoint()).unwrap();
        let pc = init_svd(&d.h, &d.spec, 2, 1.0).unwrap();
        let expect = project_analog(&dec.u.columns(0, 2).clone_owned());
        assert!(bits_equal(&pc.analog, &expect));
    }

    #[test]
    fn proposed_init_suppresses_interference_on_orthogonal_channels() {
        // rows of a DFT matrix are orthogonal user channels
        let (n, k) = (64, 4);
        let spec = make_spec(&[-60.0, 0.0, 60.0], 5.0, 181).unwrap();
        let h = ComplexMatrix::from_fn(k, n, |u, i| {
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * ((u * 7) * i) as f64 / n as f64)
        });
        let pc = init_proposed(&h, &spec, k, 10.0).unwrap();
        let e = &h * pc.effective();
        let signal: f64 = (0..k).map(|u| e[(u, u)].norm_sqr()).sum();
        let leak: f64 = fro_norm_sqr(&e) - signal;
        assert!(10.0 * (signal / leak.max(1e-300)).log10() >= 20.0);
    }

    #[test]
    fn random_init_is_seeded() {
        let d = desk(16, 2, 13, 6.0);
        let a = init_random(&d.h, 2, 5, 1.0).unwrap();
        let b = init_random(&d.h, 2, 5, 1.0).unwrap();
        let c = init_random(&d.h, 2, 6, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn schedule_text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu: Vec<f64> = (0..120 * 20).map(|_| rng.random_range(-1.0..1.0) * 1e-2).collect();
        let lambda: Vec<f64> = (0..120).map(|_| rng.random::<f64>() / 3.0).collect();
        let mut s = StepSchedule::new(120, 20, mu, lambda).unwrap();
        s.meta = TrainingMeta {
            seed: 42,
            snr_min_db: 0.0,
            snr_max_db: 12.0,
            omega: 0.3,
        };
        let back = schedule_from_str(&schedule_to_string(&s), Path::new("mem")).unwrap();
        assert_eq!(back.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back, s);
    }

    #[test]
    fn schedule_version_and_shape_errors() {
        let s = StepSchedule::constant(2, 2, 0.01, 0.01).unwrap();
        let text = schedule_to_string(&s).replace("version = 1", "version = 2");
        assert!(matches!(schedule_from_str(&text, Path::new("x")), Err(Error::Schema { .. })));
        let text = schedule_to_string(&s).replace("I = 2", "I = 3");
        assert!(matches!(schedule_from_str(&text, Path::new("x")), Err(Error::Schema { .. })));
        assert!(StepSchedule::new(2, 0, vec![], vec![0.0; 2]).is_err());
        assert!(StepSchedule::new(1, 1, vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn schedule_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let s = StepSchedule::new(2, 3, vec![0.1, -0.2, 1e-300, 5.0, 0.0, -0.0], vec![0.01, 1.0 / 3.0]).unwrap();
        save_schedule(&path, &s).unwrap();
        let back = load_schedule(&path).unwrap();
        assert_eq!(back.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
