//! Reference designs: fully digital zero forcing and fixed-step PGA.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{fro_norm, pseudo_inverse, svd, ComplexMatrix};
use crate::objective::{sum_rate_from_gains, Precoders, SystemParams};
use crate::pga::{run_pga, StepSchedule, Trajectory};

/// Step size used by the non-unfolded benchmark for both precoders.
pub const FIXED_STEP: f64 = 0.01;

/// Fully digital `N x K` precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalPrecoder {
    pub x: ComplexMatrix,
    pub p_bs: f64,
}

/// `H^H (H H^H)^{-1}` scaled by one common factor to total power `p_bs`.
pub fn zf_digital(h: &ComplexMatrix, p_bs: f64) -> Result<DigitalPrecoder> {
    let (k, n) = h.shape();
    if k > n {
        return Err(Error::Dimension(format!("zero forcing needs K <= N, got K={k}, N={n}")));
    }
    let sv = svd(h)?.singular_values;
    let (max, min) = (sv[0], sv[k - 1]);
    if max == 0.0 || min <= 1e-12 * max {
        return Err(Error::Degenerate(format!("channel is rank deficient (sigma_min / sigma_max = {})", min / max)));
    }
    let x = pseudo_inverse(h)?;
    let scale = p_bs.sqrt() / fro_norm(&x);
    Ok(DigitalPrecoder {
        x: x * Complex64::new(scale, 0.0),
        p_bs,
    })
}

/// Sum rate of a fully digital precoder (any `N x K` matrix).
pub fn zf_sum_rate(h: &ComplexMatrix, x: &ComplexMatrix, noise_var: f64) -> f64 {
    sum_rate_from_gains(&(h * x), noise_var)
}

/// PGA with `J = 1` and every step fixed to [`FIXED_STEP`].
pub fn conventional_pga(
    h: &ComplexMatrix,
    psi: &ComplexMatrix,
    params: &SystemParams,
    outer: usize,
    init: &Precoders,
) -> Result<Trajectory> {
    let schedule = StepSchedule::constant(outer, 1, FIXED_STEP, FIXED_STEP)?;
    run_pga(h, psi, params, &schedule, init)
}
