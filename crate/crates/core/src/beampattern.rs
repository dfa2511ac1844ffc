//! Desired radar beampatterns, the benchmark covariance fit and beampattern
//! error metrics.

use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::steering;
use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::numerics::{fro_norm_sqr, hermitian_eig, hermitize_in_place, psd_project, ComplexMatrix};
use crate::objective::Precoders;

pub const PSI_SCHEMA: &str = "psi-v1";

/// Minimum eigenvalue accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-9;

/// Angular grid with an indicator-shaped desired pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternSpec {
    pub grid_deg: Vec<f64>,
    pub desired: Vec<f64>,
    /// Mainlobe directions, sorted with duplicates removed.
    pub directions_deg: Vec<f64>,
    pub halfwidth_deg: f64,
}

pub fn make_spec(directions_deg: &[f64], halfwidth_deg: f64, grid_points: usize) -> Result<BeampatternSpec> {
    if grid_points < 2 {
        return Err(Error::Config(format!("grid needs at least 2 points, got {grid_points}")));
    }
    if !(halfwidth_deg > 0.0) {
        return Err(Error::Config(format!("mainlobe halfwidth must be positive, got {halfwidth_deg}")));
    }
    if let Some(bad) = directions_deg.iter().find(|d| !(-90.0..=90.0).contains(*d)) {
        return Err(Error::Config(format!("direction {bad} deg outside [-90, 90]")));
    }
    let mut dirs = directions_deg.to_vec();
    dirs.sort_by(f64::total_cmp);
    dirs.dedup();

    let step = 180.0 / (grid_points - 1) as f64;
    let grid_deg: Vec<f64> = (0..grid_points)
        .map(|t| if t + 1 == grid_points { 90.0 } else { -90.0 + t as f64 * step })
        .collect();
    // slack keeps lobe edges that land on the grid inside the lobe
    let slack = 1e-9;
    let desired = grid_deg
        .iter()
        .map(|&theta| {
            let hit = dirs.iter().any(|&d| (theta - d).abs() <= halfwidth_deg + slack);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(BeampatternSpec {
        grid_deg,
        desired,
        directions_deg: dirs,
        halfwidth_deg,
    })
}

impl BeampatternSpec {
    pub fn len(&self) -> usize {
        self.grid_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_deg.is_empty()
    }

    /// `N x T` matrix whose columns are the grid steering vectors.
    pub fn steering_matrix(&self, n_antennas: usize) -> ComplexMatrix {
        let mut s = ComplexMatrix::zeros(n_antennas, self.len());
        for (t, &theta) in self.grid_deg.iter().enumerate() {
            s.set_column(t, &steering(theta, n_antennas));
        }
        s
    }

    /// Realized pattern of covariance `c` on the grid.
    pub fn pattern_of_covariance(&self, c: &ComplexMatrix) -> Result<Vec<f64>> {
        check_square(c)?;
        let s = self.steering_matrix(c.nrows());
        Ok(quadratic_forms(c, &s))
    }

    /// Realized pattern of `X X^H` on the grid, without forming the covariance.
    pub fn pattern_of_precoder(&self, x: &ComplexMatrix) -> Vec<f64> {
        let s = self.steering_matrix(x.nrows());
        let y = x.adjoint() * s;
        y.column_iter().map(|col| col.norm_squared()).collect()
    }

    fn mse_of_pattern(&self, pattern: &[f64]) -> f64 {
        let sum: f64 = self
            .desired
            .iter()
            .zip(pattern)
            .map(|(b, p)| (b - p) * (b - p))
            .sum();
        sum / self.len() as f64
    }
}

fn check_square(c: &ComplexMatrix) -> Result<()> {
    if c.nrows() != c.ncols() {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// `Re(s_t^H C s_t)` for every column `s_t` of `s`.
fn quadratic_forms(c: &ComplexMatrix, s: &ComplexMatrix) -> Vec<f64> {
    let cs = c * s;
    s.column_iter()
        .zip(cs.column_iter())
        .map(|(a, ca)| a.dotc(&ca).re)
        .collect()
}

pub fn beampattern_value(c: &ComplexMatrix, angle_deg: f64) -> Result<f64> {
    check_square(c)?;
    let a = steering(angle_deg, c.nrows());
    Ok(a.dotc(&(c * &a)).re)
}

/// Mean squared deviation of the realized pattern of `A D D^H A^H` from the desired gains.
pub fn beampattern_mse(pc: &Precoders, spec: &BeampatternSpec) -> f64 {
    let x = &pc.analog * &pc.digital;
    spec.mse_of_pattern(&spec.pattern_of_precoder(&x))
}

/// Same metric for an arbitrary `N x K` fully digital precoder.
pub fn beampattern_mse_digital(x: &ComplexMatrix, spec: &BeampatternSpec) -> f64 {
    spec.mse_of_pattern(&spec.pattern_of_precoder(x))
}

/// Solution of the covariance fit: Hermitian PSD with constant diagonal `P_BS / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCovariance {
    pub psi: ComplexMatrix,
    pub p_bs: f64,
    pub alpha: f64,
    /// Final value of `sum_t |alpha B_d(theta_t) - a^H Psi a|^2`.
    pub residual: f64,
    pub converged: bool,
    /// Objective after each accepted iteration, starting with the initial point.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the relative objective decrease of an iteration falls below this.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 3000,
            tol: 1e-10,
        }
    }
}

struct FitState {
    psi: ComplexMatrix,
    alpha: f64,
    residuals: Vec<f64>,
    value: f64,
}

fn fit_state(psi: ComplexMatrix, desired: &[f64], s: &ComplexMatrix) -> FitState {
    let pattern = quadratic_forms(&psi, s);
    let bb: f64 = desired.iter().map(|b| b * b).sum();
    let alpha = if bb > 0.0 {
        desired.iter().zip(&pattern).map(|(b, p)| b * p).sum::<f64>() / bb
    } else {
        0.0
    };
    let residuals: Vec<f64> = desired.iter().zip(&pattern).map(|(b, p)| alpha * b - p).collect();
    let value = residuals.iter().map(|r| r * r).sum();
    FitState {
        psi,
        alpha,
        residuals,
        value,
    }
}

/// Projects onto `{Hermitian, PSD, diag = d}` by cycling Hermitian
/// symmetrization, eigenvalue clipping and diagonal reset; a final convex
/// combination with `d I` removes any leftover negative eigenvalue.
pub fn project_covariance_set(x: &ComplexMatrix, diag: f64) -> Result<ComplexMatrix> {
    const MAX_CYCLES: usize = 20;
    let n = x.nrows();
    let mut cur = x.clone();
    let mut min_eig = f64::NEG_INFINITY;
    for _ in 0..MAX_CYCLES {
        cur = psd_project(&cur)?;
        set_diagonal(&mut cur, diag);
        min_eig = hermitian_eig(&cur)?.min_eigenvalue();
        if min_eig >= -PSD_TOL * 1e-3 {
            return Ok(cur);
        }
    }
    // (1 - t) X + t d I keeps the diagonal and lifts the spectrum to >= 0
    let t = -min_eig / (diag - min_eig);
    cur.scale_mut(1.0 - t);
    for i in 0..n {
        cur[(i, i)] = Complex64::new(diag, 0.0);
    }
    hermitize_in_place(&mut cur);
    Ok(cur)
}

fn set_diagonal(x: &mut ComplexMatrix, d: f64) {
    for i in 0..x.nrows() {
        x[(i, i)] = Complex64::new(d, 0.0);
    }
}

/// Fits a covariance in the feasible set to the desired pattern, alternating
/// a closed-form scale with backtracked projected gradient steps on `Psi`.
pub fn solve_benchmark_covariance(
    spec: &BeampatternSpec,
    p_bs: f64,
    n_antennas: usize,
    opts: SolverOptions,
) -> Result<BenchmarkCovariance> {
    if n_antennas < 2 {
        return Err(Error::Config(format!("covariance fit needs N >= 2, got {n_antennas}")));
    }
    if !(p_bs > 0.0) || !p_bs.is_finite() {
        return Err(Error::Config(format!("transmit power must be positive, got {p_bs}")));
    }
    let diag = p_bs / n_antennas as f64;
    let s = spec.steering_matrix(n_antennas);
    let mut state = fit_state(ComplexMatrix::identity(n_antennas, n_antennas) * Complex64::new(diag, 0.0), &spec.desired, &s);
    let mut history = vec![state.value];

    // 1 / Lipschitz constant of the Psi-gradient: sum_t ||a_t||^4 = T N^2
    let mut step = 1.0 / (2.0 * spec.len() as f64 * (n_antennas * n_antennas) as f64);
    let mut converged = false;

    for _ in 0..opts.max_iters {
        if state.value == 0.0 {
            converged = true;
            break;
        }
        let grad = psi_gradient(&s, &state.residuals);
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &state.psi - &grad * Complex64::new(step, 0.0);
            let trial = project_covariance_set(&trial, diag)?;
            let cand = fit_state(trial, &spec.desired, &s);
            if cand.value <= state.value {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            converged = true;
            break;
        };
        let decrease = state.value - next.value;
        state = next;
        history.push(state.value);
        step *= 1.5;
        if decrease <= opts.tol * history[0].max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(BenchmarkCovariance {
        psi: state.psi,
        p_bs,
        alpha: state.alpha,
        residual: state.value,
        converged,
        history,
    })
}

/// Euclidean gradient of `sum_t r_t^2` with `r_t = alpha B_t - a_t^H Psi a_t`.
fn psi_gradient(s: &ComplexMatrix, residuals: &[f64]) -> ComplexMatrix {
    // -2 sum_t r_t a_t a_t^H = -2 S diag(r) S^H
    let mut weighted = s.clone();
    for (t, &r) in residuals.iter().enumerate() {
        weighted.column_mut(t).scale_mut(-2.0 * r);
    }
    let mut g = weighted * s.adjoint();
    hermitize_in_place(&mut g);
    g
}

impl BenchmarkCovariance {
    /// Largest violation among the three feasibility conditions.
    pub fn feasibility_report(&self) -> Result<FeasibilityReport> {
        feasibility(&self.psi, self.p_bs)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeasibilityReport {
    pub hermitian_error: f64,
    pub max_diag_rel_error: f64,
    pub min_eigenvalue: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.hermitian_error <= 1e-10 && self.max_diag_rel_error <= 1e-9 && self.min_eigenvalue >= -PSD_TOL
    }
}

pub fn feasibility(psi: &ComplexMatrix, p_bs: f64) -> Result<FeasibilityReport> {
    check_square(psi)?;
    let n = psi.nrows();
    let target = p_bs / n as f64;
    let herm = fro_norm_sqr(&(psi - psi.adjoint())).sqrt() / fro_norm_sqr(psi).sqrt().max(f64::MIN_POSITIVE);
    let diag_err = (0..n)
        .map(|i| (psi[(i, i)] - Complex64::new(target, 0.0)).norm() / target)
        .fold(0.0, f64::max);
    let min_eig = hermitian_eig(psi)?.min_eigenvalue();
    Ok(FeasibilityReport {
        hermitian_error: herm,
        max_diag_rel_error: diag_err,
        min_eigenvalue: min_eig,
    })
}

#[derive(Serialize, Deserialize)]
struct PsiHeader {
    schema: String,
    n: usize,
    p_bs: f64,
    alpha: f64,
    residual: f64,
    converged: bool,
}

pub fn save_psi(path: &Path, cov: &BenchmarkCovariance) -> Result<()> {
    let header = PsiHeader {
        schema: PSI_SCHEMA.into(),
        n: cov.psi.nrows(),
        p_bs: cov.p_bs,
        alpha: cov.alpha,
        residual: cov.residual,
        converged: cov.converged,
    };
    let payload: Vec<Complex64> = cov.psi.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    write_container(path, &header, &payload)
}

/// Loads a covariance file; the solver history is not persisted.
pub fn load_psi(path: &Path) -> Result<BenchmarkCovariance> {
    let (h, payload): (PsiHeader, Vec<Complex64>) = read_container(path)?;
    if h.schema != PSI_SCHEMA {
        return Err(Error::schema(path, format!("expected schema {PSI_SCHEMA}, found {}", h.schema)));
    }
    if payload.len() != h.n * h.n || h.n == 0 {
        return Err(Error::schema(path, format!("expected {}x{} entries, found {}", h.n, h.n, payload.len())));
    }
    Ok(BenchmarkCovariance {
        psi: ComplexMatrix::from_row_slice(h.n, h.n, &payload),
        p_bs: h.p_bs,
        alpha: h.alpha,
        residual: h.residual,
        converged: h.converged,
        history: Vec::new(),
    })
}

/// Pattern at arbitrary angles, used for CSV output.
pub fn pattern_at(c: &ComplexMatrix, angles_deg: &[f64]) -> Result<DVector<f64>> {
    check_square(c)?;
    Ok(DVector::from_iterator(
        angles_deg.len(),
        angles_deg.iter().map(|&a| {
            let v = steering(a, c.nrows());
            v.dotc(&(c * &v)).re
        }),
    ))
}
