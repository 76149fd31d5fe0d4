//! Small dense complex matrix helpers shared across the crate.
//!
//! Everything here operates on `nalgebra::DMatrix<Complex<f64>>` at desk
//! scale (dimension <= 12), so plain dense algorithms are used throughout.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Hard cap on matrix dimension; all objects in this toolkit are small.
pub const MAX_DIM: usize = 12;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

/// Max-abs entry norm. Order-independent, so parallel reductions with `max`
/// give deterministic results.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_im(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.im.abs()))
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn try_inverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Matrix exponential by scaling-and-squaring with a Taylor kernel.
///
/// The norm is scaled below 1/4, where an order-14 Taylor sum is accurate
/// to well under f64 roundoff for the matrix sizes used here.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm = max_abs(a) * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = a * cr(scale);
    let mut term = identity(n);
    let mut sum = identity(n);
    for k in 1..=14 {
        term = &term * &b / cr(k as f64);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Principal matrix square root via the Denman-Beavers iteration.
///
/// Converges for matrices whose spectrum avoids the closed negative real
/// axis; callers use it on near-identity inputs.
pub fn sqrtm(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = identity(n);
    for _ in 0..60 {
        let y_inv = try_inverse(&y)?;
        let z_inv = try_inverse(&z)?;
        let y_next = (&y + &z_inv) * cr(0.5);
        let z_next = (&z + &y_inv) * cr(0.5);
        let step = max_abs(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if step < 1e-15 {
            break;
        }
    }
    let res = max_abs(&(&y * &y - a));
    if res > 1e-10 {
        return Err(Error::Numerical(format!(
            "matrix square root did not converge (residual {res:.2e})"
        )));
    }
    Ok(y)
}

/// ||F^t J F - J||_inf for a diagonal signature `j_diag` of +-1 entries.
pub fn group_residual_matrix(f: &CMat, j_diag: &[f64]) -> f64 {
    let n = f.nrows();
    let mut j = zeros(n);
    for (i, &d) in j_diag.iter().enumerate() {
        j[(i, i)] = cr(d);
    }
    let r = f.transpose() * &j * f - &j;
    max_abs(&r)
}

/// Singular values computed through the Hermitian eigendecomposition of the
/// Gram matrix. The dedicated complex SVD can silently lose accuracy even on
/// well-conditioned inputs, while the Hermitian eigensolver is dependable;
/// the price is squared sensitivity near the underflow floor, which does not
/// matter for rank and condition estimates.
fn gram_singular_values(m: &CMat) -> Vec<f64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let gram = if rows >= cols {
        m.adjoint() * m
    } else {
        m * m.adjoint()
    };
    gram.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&e| e.max(0.0).sqrt())
        .collect()
}

/// Numerical rank from singular values with an absolute threshold.
pub fn numerical_rank(m: &CMat, tol: f64) -> usize {
    gram_singular_values(m).iter().filter(|&&s| s > tol).count()
}

/// Largest and smallest singular values (condition estimate helper).
pub fn extreme_singular_values(m: &CMat) -> (f64, f64) {
    let sv = gram_singular_values(m);
    let mut hi = 0.0_f64;
    let mut lo = f64::INFINITY;
    for s in sv {
        hi = hi.max(s);
        lo = lo.min(s);
    }
    (hi, lo)
}

fn inf_norm(m: &CMat) -> f64 {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c_| m[(r, c_)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Least-squares solve of `A x = b` for complex dense `A`, returning the
/// solution and a condition estimate of `A`. Implemented through the normal
/// equations and a direct LU solve: the iterative complex decompositions
/// (SVD, Hermitian eigen) sporadically lose many digits even on
/// well-conditioned systems, while LU with full pivoting is dependable.
/// The condition estimate is sqrt(||G|| * ||G^-1||) for the Gram matrix G.
pub fn lstsq(a: &CMat, b: &CMat) -> Result<(CMat, f64)> {
    if a.nrows() < a.ncols() {
        return Err(Error::Dimension(
            "least squares expects at least as many rows as columns".into(),
        ));
    }
    let gram = a.adjoint() * a;
    let rhs = a.adjoint() * b;
    let lu = gram.clone().full_piv_lu();
    match lu.try_inverse() {
        Some(gram_inv) => {
            let cond = (inf_norm(&gram) * inf_norm(&gram_inv)).max(1.0).sqrt();
            Ok((gram_inv * rhs, cond))
        }
        None => {
            // singular normal equations: report unbounded condition and
            // return a ridge-regularized solution so callers can still
            // inspect residuals
            let n = gram.nrows();
            let ridge = &gram + identity(n) * cr(1e-12 * (1.0 + inf_norm(&gram)));
            let x = ridge
                .full_piv_lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("regularized solve failed".into()))?;
            Ok((x, f64::INFINITY))
        }
    }
}
