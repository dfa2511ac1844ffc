//! Dense complex linear algebra on top of `nalgebra`, plus the central
//! difference conjugate-Wirtinger gradient used to validate every closed-form
//! gradient in the crate.
//!
//! Gradients follow the convention `[grad_Z f]_rc = df / d conj(Z_rc)`, which
//! for a real `f` equals `0.5 * (df/dRe Z_rc + j df/dIm Z_rc)`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense complex matrix used for channels, precoders and covariances.
pub type ComplexMatrix = DMatrix<Complex64>;

/// Relative cut-off below which singular values are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Eigendecomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `eigenvalues`.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    /// `V diag(f(lambda)) V^H`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.eigenvectors.nrows();
        let mut scaled = self.eigenvectors.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let w = f(lam);
            scaled.column_mut(j).scale_mut(w);
        }
        let mut out = &scaled * self.eigenvectors.adjoint();
        // the product is Hermitian up to rounding
        hermitize_in_place(&mut out);
        debug_assert_eq!(out.nrows(), n);
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|l| l)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }
}

pub fn all_finite(x: &ComplexMatrix) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub(crate) fn ensure_finite(x: &ComplexMatrix, what: &str) -> Result<()> {
    if all_finite(x) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn fro_norm(x: &ComplexMatrix) -> f64 {
    fro_norm_sqr(x).sqrt()
}

pub fn fro_norm_sqr(x: &ComplexMatrix) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// Replace `x` by its Hermitian part `(x + x^H) / 2`.
pub fn hermitize_in_place(x: &mut ComplexMatrix) {
    let n = x.nrows();
    assert_eq!(n, x.ncols(), "hermitize requires a square matrix");
    for i in 0..n {
        x[(i, i)] = Complex64::new(x[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (x[(i, j)] + x[(j, i)].conj()) * 0.5;
            x[(i, j)] = avg;
            x[(j, i)] = avg.conj();
        }
    }
}

pub fn hermitian_part(x: &ComplexMatrix) -> ComplexMatrix {
    let mut h = x.clone();
    hermitize_in_place(&mut h);
    h
}

/// Eigendecomposition of the Hermitian part of a square matrix.
pub fn hermitian_eig(x: &ComplexMatrix) -> Result<HermitianEig> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    ensure_finite(x, "hermitian_eig input")?;
    let eig = SymmetricEigen::new(hermitian_part(x));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = x.nrows();
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEig {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Nearest positive semidefinite matrix (Frobenius norm) to the Hermitian part of `x`.
pub fn psd_project(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(x)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

/// Thin singular value decomposition `X = U diag(sigma) V^H`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v: ComplexMatrix,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Columns are rotated pairwise until mutually orthogonal; the rotations
/// accumulate into `V`. Accurate to working precision even for
/// rank-deficient inputs, at `O(m n^2)` per sweep.
pub fn svd(x: &ComplexMatrix) -> Result<Svd> {
    ensure_finite(x, "svd input")?;
    let (m, n) = x.shape();
    if m < n {
        let t = svd(&x.adjoint())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    const MAX_SWEEPS: usize = 80;
    let tol = 4.0 * f64::EPSILON;
    let mut a = x.clone();
    let mut v = ComplexMatrix::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // phase that makes the pair's inner product real
                let ph = (gamma / g).conj();
                rotate_columns(&mut a, p, q, c, s, ph);
                rotate_columns(&mut v, p, q, c, s, ph);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, a.column(j).norm())).collect();
    order.sort_by(|l, r| r.1.total_cmp(&l.1));
    let mut u = ComplexMatrix::zeros(m, n);
    let mut vs = ComplexMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &(src, s)) in order.iter().enumerate() {
        sigma.push(s);
        vs.set_column(dst, &v.column(src));
        if s > 0.0 {
            u.set_column(dst, &(a.column(src) / Complex64::new(s, 0.0)));
        }
    }
    Ok(Svd {
        u,
        singular_values: sigma,
        v: vs,
    })
}

/// `[x_p, x_q] <- [c x_p - s ph x_q, s x_p + c ph x_q]`, a unitary 2x2 update.
fn rotate_columns(x: &mut ComplexMatrix, p: usize, q: usize, c: f64, s: f64, ph: Complex64) {
    for r in 0..x.nrows() {
        let xp = x[(r, p)];
        let xq = x[(r, q)] * ph;
        x[(r, p)] = xp * c - xq * s;
        x[(r, q)] = xp * s + xq * c;
    }
}

/// Moore-Penrose pseudo-inverse; singular values at or below
/// `PINV_RTOL * sigma_max` are dropped.
pub fn pseudo_inverse(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (m, n) = x.shape();
    let dec = svd(x)?;
    let mut out = ComplexMatrix::zeros(n, m);
    let sigma_max = dec.singular_values.first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return Ok(out);
    }
    let cutoff = PINV_RTOL * sigma_max;
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s <= cutoff {
            break;
        }
        // out += v_i (1/s) u_i^H
        let scaled_v = dec.v.column(i) / Complex64::new(s, 0.0);
        out += scaled_v * dec.u.column(i).adjoint();
    }
    Ok(out)
}

/// Central-difference conjugate-Wirtinger gradient of a real function.
///
/// Entry `(r, c)` is `0.5 * (df/dRe + j df/dIm)` estimated with step `h`.
pub fn wirtinger_fd_gradient<F>(f: F, x: &ComplexMatrix, h: f64) -> Result<ComplexMatrix>
where
    F: Fn(&ComplexMatrix) -> f64,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-7, 1e-4]"
        )));
    }
    let mut probe = x.clone();
    let mut grad = ComplexMatrix::zeros(x.nrows(), x.ncols());
    let eval = |m: &ComplexMatrix| -> Result<f64> {
        let v = f(m);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite-difference function evaluation".into()))
        }
    };
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let base = x[(r, c)];
            let mut central = |delta: Complex64| -> Result<f64> {
                probe[(r, c)] = base + delta;
                let plus = eval(&probe)?;
                probe[(r, c)] = base - delta;
                let minus = eval(&probe)?;
                probe[(r, c)] = base;
                Ok((plus - minus) / (2.0 * h))
            };
            let d_re = central(Complex64::new(h, 0.0))?;
            let d_im = central(Complex64::new(0.0, h))?;
            grad[(r, c)] = Complex64::new(0.5 * d_re, 0.5 * d_im);
        }
    }
    Ok(grad)
}

/// Matrix with i.i.d. `CN(0, 1)` entries.
pub fn random_complex_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// One draw from `CN(0, 1)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Frobenius distance relative to the norm of `reference` (absolute when the reference is zero).
pub fn relative_error(value: &ComplexMatrix, reference: &ComplexMatrix) -> f64 {
    let diff = fro_norm(&(value - reference));
    let scale = fro_norm(reference);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
