//! Sum rate, beampattern error and their conjugate-Wirtinger gradients with
//! respect to the analog and digital precoders.
//!
//! With `X = A D`, `E = H X` (entry `(k, j)` = `h_k^H A d_j`) and
//! `S_k = sum_j |E_kj|^2`, `I_k = S_k - |E_kk|^2`, both rate gradients share
//! the `K x K` weight matrix
//!
//! ```text
//! W_k,: = xi * (E_k,: / (S_k + s2) - Ebar_k,: / (I_k + s2)),   xi = 1 / ln 2
//! ```
//!
//! where `Ebar_k,:` is row `k` of `E` with its diagonal entry zeroed. Then
//! `grad_A R = H^H W D^H` and `grad_D R = (H A)^H W`, which is the per-user
//! sum `xi H_k A V / (tr(A V A^H H_k) + s2) - ...` evaluated without ever
//! forming an `N x N` matrix.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{fro_norm_sqr, ComplexMatrix};

/// Hybrid precoder pair: `analog` is `N x M`, `digital` is `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoders {
    pub analog: ComplexMatrix,
    pub digital: ComplexMatrix,
}

impl Precoders {
    pub fn n_antennas(&self) -> usize {
        self.analog.nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.analog.ncols()
    }

    pub fn n_streams(&self) -> usize {
        self.digital.ncols()
    }

    /// Effective `N x K` precoder `A D`.
    pub fn effective(&self) -> ComplexMatrix {
        &self.analog * &self.digital
    }

    pub fn transmit_power(&self) -> f64 {
        fro_norm_sqr(&self.effective())
    }

    pub fn check_dims(&self, h: &ComplexMatrix, psi: Option<&ComplexMatrix>) -> Result<()> {
        let (n, m) = self.analog.shape();
        let (m2, k) = self.digital.shape();
        if m != m2 {
            return Err(Error::Dimension(format!("analog is {n}x{m} but digital is {m2}x{k}")));
        }
        if h.shape() != (k, n) {
            return Err(Error::Dimension(format!(
                "channel is {}x{}, expected {k}x{n}",
                h.nrows(),
                h.ncols()
            )));
        }
        if let Some(psi) = psi {
            if psi.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "covariance is {}x{}, expected {n}x{n}",
                    psi.nrows(),
                    psi.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Largest deviation of `|A_nm|` from one.
    pub fn unit_modulus_error(&self) -> f64 {
        self.analog.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `| ||A D||_F^2 - P | / P`.
    pub fn power_error(&self, p_bs: f64) -> f64 {
        (self.transmit_power() - p_bs).abs() / p_bs
    }
}

/// Transmit power, noise level and tradeoff weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub p_bs: f64,
    pub noise_var: f64,
    /// Weight of the beampattern error in `R - omega * tau`.
    pub omega: f64,
    /// Extra weight on `grad_D tau` in the digital update.
    pub eta: f64,
}

impl SystemParams {
    /// Parameters with the default `eta = 1 / N`.
    pub fn new(p_bs: f64, noise_var: f64, omega: f64, n_antennas: usize) -> Self {
        SystemParams {
            p_bs,
            noise_var,
            omega,
            eta: 1.0 / n_antennas as f64,
        }
    }

    /// Transmit SNR `P_BS / noise` in dB with unit noise.
    pub fn from_snr_db(snr_db: f64, omega: f64, n_antennas: usize) -> Self {
        Self::new(10f64.powf(snr_db / 10.0), 1.0, omega, n_antennas)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p_bs > 0.0
            && self.noise_var > 0.0
            && self.omega >= 0.0
            && self.eta > 0.0
            && [self.p_bs, self.noise_var, self.omega, self.eta].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid system parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub d_analog: ComplexMatrix,
    pub d_digital: ComplexMatrix,
}

fn xi() -> f64 {
    1.0 / std::f64::consts::LN_2
}

/// `E = H A D`; entry `(k, j)` is the gain of stream `j` at user `k`.
fn effective_gains(h: &ComplexMatrix, pc: &Precoders) -> (ComplexMatrix, ComplexMatrix) {
    let ha = h * &pc.analog;
    let e = &ha * &pc.digital;
    (ha, e)
}

pub fn sum_rate(h: &ComplexMatrix, pc: &Precoders, noise_var: f64) -> f64 {
    let (_, e) = effective_gains(h, pc);
    sum_rate_from_gains(&e, noise_var)
}

pub(crate) fn sum_rate_from_gains(e: &ComplexMatrix, noise_var: f64) -> f64 {
    (0..e.nrows())
        .map(|k| {
            let signal = e[(k, k)].norm_sqr();
            let total: f64 = e.row(k).iter().map(|z| z.norm_sqr()).sum();
            let interference = total - signal;
            (1.0 + signal / (interference.max(0.0) + noise_var)).log2()
        })
        .sum()
}

/// `||A D D^H A^H - Psi||_F^2`.
pub fn tau(pc: &Precoders, psi: &ComplexMatrix) -> f64 {
    let x = pc.effective();
    fro_norm_sqr(&(&x * x.adjoint() - psi))
}

/// Rate weights `W` shared by both rate gradients.
fn rate_weights(e: &ComplexMatrix, noise_var: f64) -> ComplexMatrix {
    let k = e.nrows();
    let xi = xi();
    let mut w = ComplexMatrix::zeros(k, e.ncols());
    for u in 0..k {
        let total: f64 = e.row(u).iter().map(|z| z.norm_sqr()).sum();
        let interference = total - e[(u, u)].norm_sqr();
        let a = xi / (total + noise_var);
        let b = xi / (interference.max(0.0) + noise_var);
        for j in 0..e.ncols() {
            let coeff = if j == u { a } else { a - b };
            w[(u, j)] = e[(u, j)] * coeff;
        }
    }
    w
}

pub fn grad_rate_analog(h: &ComplexMatrix, pc: &Precoders, noise_var: f64) -> ComplexMatrix {
    let (_, e) = effective_gains(h, pc);
    let w = rate_weights(&e, noise_var);
    h.adjoint() * (w * pc.digital.adjoint())
}

pub fn grad_rate_digital(h: &ComplexMatrix, pc: &Precoders, noise_var: f64) -> ComplexMatrix {
    let (ha, e) = effective_gains(h, pc);
    let w = rate_weights(&e, noise_var);
    ha.adjoint() * w
}

/// `(A D D^H A^H - Psi) A D` computed as `X (X^H X) - Psi X`.
fn tau_residual_times_x(x: &ComplexMatrix, psi: &ComplexMatrix) -> ComplexMatrix {
    let gram = x.adjoint() * x;
    x * gram - psi * x
}

/// `2 (A D D^H A^H - Psi) A D D^H`.
pub fn grad_tau_analog(pc: &Precoders, psi: &ComplexMatrix) -> ComplexMatrix {
    let x = pc.effective();
    let r = tau_residual_times_x(&x, psi);
    r * pc.digital.adjoint() * Complex64::new(2.0, 0.0)
}

/// `2 A^H (A D D^H A^H - Psi) A D`.
pub fn grad_tau_digital(pc: &Precoders, psi: &ComplexMatrix) -> ComplexMatrix {
    let x = pc.effective();
    let r = tau_residual_times_x(&x, psi);
    pc.analog.adjoint() * r * Complex64::new(2.0, 0.0)
}

pub fn rate_gradients(h: &ComplexMatrix, pc: &Precoders, noise_var: f64) -> GradientPair {
    let (ha, e) = effective_gains(h, pc);
    let w = rate_weights(&e, noise_var);
    GradientPair {
        d_analog: h.adjoint() * (&w * pc.digital.adjoint()),
        d_digital: ha.adjoint() * w,
    }
}

pub fn tau_gradients(pc: &Precoders, psi: &ComplexMatrix) -> GradientPair {
    let x = pc.effective();
    let r = tau_residual_times_x(&x, psi);
    let two = Complex64::new(2.0, 0.0);
    GradientPair {
        d_analog: &r * pc.digital.adjoint() * two,
        d_digital: pc.analog.adjoint() * r * two,
    }
}

/// `R - omega * tau`; with `omega = 0` the beampattern term is skipped entirely.
pub fn objective(h: &ComplexMatrix, pc: &Precoders, psi: &ComplexMatrix, params: &SystemParams) -> f64 {
    let r = sum_rate(h, pc, params.noise_var);
    if params.omega == 0.0 {
        r
    } else {
        r - params.omega * tau(pc, psi)
    }
}
