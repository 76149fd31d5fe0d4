//! Numerical Birkhoff-type loop factorization with big-cell detection,
//! the forward/backward correspondence between symmetry-fixed frame
//! families and their plus factors, and the holomorphic-extension
//! pipeline built on top of it.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::flats::ComplexStrip;
use crate::frames::{Grid, OneFormField};
use crate::loopalg::{apply_involution, InvolutionSpec, LaurentLoop};
use crate::matrix::{self, c, cr, sqrtm, C64, CMat};

pub const DEFAULT_BANDWIDTH: usize = 16;
pub const DEFAULT_CONDITION_THRESHOLD: f64 = 1e8;
pub const DEFAULT_SPLIT_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// L = plus * minus, plus factor normalized to I at 0.
    Left,
    /// L = minus * plus, minus factor normalized to I at infinity.
    Right,
}

#[derive(Debug, Clone)]
pub struct SplitOpts {
    /// Truncation degree for the factors.
    pub bandwidth: usize,
    /// Condition number above which the loop is declared outside the big cell.
    pub condition_threshold: f64,
    /// Product-reconstruction residual above which the split is rejected.
    pub residual_threshold: f64,
}

impl Default for SplitOpts {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
            residual_threshold: DEFAULT_SPLIT_RESIDUAL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub side: Side,
    /// Holomorphic in the disc (degrees >= 0).
    pub plus: LaurentLoop,
    /// Holomorphic outside and bounded at infinity (degrees <= 0).
    pub minus: LaurentLoop,
    /// Max-abs reconstruction error of the factor product on the circle.
    pub residual: f64,
    pub in_big_cell: bool,
    /// Condition number of the factorization linear system.
    pub condition: f64,
}

impl SplitResult {
    /// The factor product in the order dictated by the side.
    pub fn product(&self) -> Result<LaurentLoop> {
        match self.side {
            Side::Left => self.plus.mul(&self.minus),
            Side::Right => self.minus.mul(&self.plus),
        }
    }
}

// ---------------------------------------------------------------------------
// Loop arithmetic helpers (band-limited)
// ---------------------------------------------------------------------------

/// Product truncated to degrees within [-band, band].
fn mul_trunc(a: &LaurentLoop, b: &LaurentLoop, band: i32) -> Result<LaurentLoop> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("loop product dimension mismatch".into()));
    }
    let mut coeffs: BTreeMap<i32, CMat> = BTreeMap::new();
    for (&da, ma) in a.coeffs() {
        for (&db, mb) in b.coeffs() {
            let d = da + db;
            if d.abs() > band {
                continue;
            }
            let prod = ma * mb;
            coeffs
                .entry(d)
                .and_modify(|m| *m += &prod)
                .or_insert(prod);
        }
    }
    if coeffs.is_empty() {
        coeffs.insert(0, matrix::zeros(a.dim()));
    }
    LaurentLoop::new(a.dim(), coeffs)
}

/// Degree reflection d -> -d (the substitution lambda -> 1/lambda).
fn reflect(l: &LaurentLoop) -> LaurentLoop {
    let coeffs: BTreeMap<i32, CMat> =
        l.coeffs().iter().map(|(&d, m)| (-d, m.clone())).collect();
    LaurentLoop::new(l.dim(), coeffs).expect("reflection preserves validity")
}

fn loop_sum(a: &LaurentLoop, b: &LaurentLoop, scale_b: C64) -> Result<LaurentLoop> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("loop sum dimension mismatch".into()));
    }
    let mut coeffs: BTreeMap<i32, CMat> = a.coeffs().clone();
    for (&d, m) in b.coeffs() {
        let term = m * scale_b;
        coeffs
            .entry(d)
            .and_modify(|x| *x += &term)
            .or_insert(term);
    }
    LaurentLoop::new(a.dim(), coeffs)
}

/// Inverse of a loop with only nonnegative degrees and invertible constant
/// term, truncated to degrees <= band. Exact in the formal-power-series
/// sense up to the truncation degree.
fn invert_plus(l: &LaurentLoop, band: i32) -> Result<LaurentLoop> {
    let n = l.dim();
    if l.min_degree() < 0 {
        return Err(Error::Domain("not a plus loop".into()));
    }
    let c0 = l
        .coeff(0)
        .cloned()
        .ok_or_else(|| Error::Domain("plus loop has no constant term".into()))?;
    let c0_inv = matrix::try_inverse(&c0)?;
    // l = c0 (I + N), N of min degree >= 1; inverse = (sum (-N)^k) c0^-1
    let mut nilp_coeffs: BTreeMap<i32, CMat> = BTreeMap::new();
    for (&d, m) in l.coeffs() {
        if d > 0 {
            nilp_coeffs.insert(d, &c0_inv * m);
        }
    }
    let acc_c0inv = LaurentLoop::constant(c0_inv)?;
    if nilp_coeffs.is_empty() {
        return Ok(acc_c0inv);
    }
    let neg_n = LaurentLoop::new(
        n,
        nilp_coeffs.into_iter().map(|(d, m)| (d, -m)).collect(),
    )?;
    let mut term = LaurentLoop::identity(n);
    let mut acc = LaurentLoop::identity(n);
    for _ in 0..band.max(1) {
        term = mul_trunc(&term, &neg_n, band)?.pruned(1e-300);
        if term.coeffs().is_empty() {
            break;
        }
        acc = loop_sum(&acc, &term, cr(1.0))?;
    }
    mul_trunc(&acc, &acc_c0inv, band)
}

/// Inverse of a loop with only nonpositive degrees, truncated.
fn invert_minus(l: &LaurentLoop, band: i32) -> Result<LaurentLoop> {
    Ok(reflect(&invert_plus(&reflect(l), band)?))
}

/// General loop inverse through circle sampling: invert pointwise on
/// `n_samples` unit-circle points and fit a band-limited loop back.
pub fn invert_loop_via_circle(l: &LaurentLoop, n_samples: usize, band: i32) -> Result<LaurentLoop> {
    let samples = circle_points(n_samples);
    let mut values = Vec::with_capacity(n_samples);
    for &lam in &samples {
        values.push(matrix::try_inverse(&l.eval(lam)?)?);
    }
    let coeffs = dft_coefficients(&values);
    let n = l.dim();
    let mut map = BTreeMap::new();
    for (d, m) in coeffs {
        if d.abs() <= band && matrix::max_abs(&m) > 1e-13 {
            map.insert(d, m);
        }
    }
    if map.is_empty() {
        map.insert(0, matrix::zeros(n));
    }
    LaurentLoop::new(n, map)
}

pub fn circle_points(n: usize) -> Vec<C64> {
    (0..n)
        .map(|s| {
            let t = 2.0 * std::f64::consts::PI * s as f64 / n as f64;
            c(t.cos(), t.sin())
        })
        .collect()
}

/// Fourier coefficients of matrix values on equispaced circle points,
/// returned as (degree, coefficient) with degrees in (-n/2, n/2].
pub fn dft_coefficients(values: &[CMat]) -> Vec<(i32, CMat)> {
    let n = values.len();
    let dim = values[0].nrows();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut bins = vec![matrix::zeros(dim); n];
    let mut buf = vec![cr(0.0); n];
    for r in 0..dim {
        for col in 0..dim {
            for (s, v) in values.iter().enumerate() {
                buf[s] = v[(r, col)];
            }
            fft.process(&mut buf);
            for (j, z) in buf.iter().enumerate() {
                bins[j][(r, col)] = z / cr(n as f64);
            }
        }
    }
    bins.into_iter()
        .enumerate()
        .map(|(j, m)| {
            let d = if j <= n / 2 { j as i32 } else { j as i32 - n as i32 };
            (d, m)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Circle sampling representation
// ---------------------------------------------------------------------------

/// A loop represented by its values on equispaced unit-circle samples.
#[derive(Debug, Clone)]
pub struct CircleSampling {
    pub values: Vec<CMat>,
}

impl CircleSampling {
    pub fn from_fn(n_samples: usize, f: impl Fn(C64) -> CMat) -> Result<Self> {
        if n_samples < 4 || !n_samples.is_power_of_two() {
            return Err(Error::Domain(
                "sample count must be a power of two >= 4".into(),
            ));
        }
        Ok(Self {
            values: circle_points(n_samples).into_iter().map(f).collect(),
        })
    }

    pub fn from_loop(l: &LaurentLoop, n_samples: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(n_samples);
        for &lam in &circle_points(n_samples) {
            out.push(l.eval(lam)?);
        }
        if n_samples < 4 || !n_samples.is_power_of_two() {
            return Err(Error::Domain(
                "sample count must be a power of two >= 4".into(),
            ));
        }
        Ok(Self { values: out })
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn fourier(&self) -> Vec<(i32, CMat)> {
        dft_coefficients(&self.values)
    }

    /// Max norm of the top-quartile Fourier coefficients; small values mean
    /// the sampling resolves the loop.
    pub fn spectral_tail(&self) -> f64 {
        let n = self.n_samples() as i32;
        self.fourier()
            .iter()
            .filter(|(d, _)| d.abs() >= n / 4)
            .map(|(_, m)| matrix::max_abs(m))
            .fold(0.0, f64::max)
    }

    pub fn to_loop(&self, dim: usize, band: i32, prune: f64) -> Result<LaurentLoop> {
        let mut map = BTreeMap::new();
        for (d, m) in self.fourier() {
            if d.abs() <= band && matrix::max_abs(&m) > prune {
                map.insert(d, m);
            }
        }
        if map.is_empty() {
            map.insert(0, matrix::zeros(dim));
        }
        LaurentLoop::new(dim, map)
    }
}

// ---------------------------------------------------------------------------
// Birkhoff splitting
// ---------------------------------------------------------------------------

struct LeftSystem {
    y: LaurentLoop, // plus loop with Y(0) = I such that Y * L is a minus loop
    condition: f64,
    fit_residual: f64,
}

/// Solve for the plus-inverse Y (Y_0 = I, degrees 1..B) that kills the
/// positive Fourier coefficients of Y * L, via block-Toeplitz least squares.
fn left_system(l: &LaurentLoop, band: i32) -> Result<LeftSystem> {
    let n = l.dim();
    let bb = band as usize;
    let e_max = (band + l.max_degree()).max(1) as usize;
    let mut a = CMat::zeros(e_max * n, bb * n);
    let mut rhs = CMat::zeros(e_max * n, n);
    for e in 1..=e_max {
        if let Some(m) = l.coeff(e as i32) {
            // Y_0 = I contribution moved to the right-hand side
            rhs
                .view_mut(((e - 1) * n, 0), (n, n))
                .copy_from(&(-m.transpose()));
        }
        for d in 1..=bb {
            if let Some(m) = l.coeff(e as i32 - d as i32) {
                a.view_mut(((e - 1) * n, (d - 1) * n), (n, n))
                    .copy_from(&m.transpose());
            }
        }
    }
    let (x, condition) = matrix::lstsq(&a, &rhs)?;
    let fit_residual = matrix::max_abs(&(&a * &x - rhs));
    let mut coeffs = BTreeMap::from([(0, matrix::identity(n))]);
    for d in 1..=bb {
        let block = x.view(((d - 1) * n, 0), (n, n)).transpose();
        if matrix::max_abs(&block.clone_owned()) > 1e-14 {
            coeffs.insert(d as i32, block.clone_owned());
        }
    }
    Ok(LeftSystem {
        y: LaurentLoop::new(n, coeffs)?,
        condition,
        fit_residual,
    })
}

fn circle_product_residual(
    side: Side,
    plus: &LaurentLoop,
    minus: &LaurentLoop,
    l: &LaurentLoop,
    n_samples: usize,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for &lam in &circle_points(n_samples) {
        let p = plus.eval(lam)?;
        let m = minus.eval(lam)?;
        let prod = match side {
            Side::Left => p * m,
            Side::Right => m * p,
        };
        worst = worst.max(matrix::max_abs(&(prod - l.eval(lam)?)));
    }
    Ok(worst)
}

fn left_split(l: &LaurentLoop, opts: &SplitOpts) -> Result<SplitResult> {
    let band = opts.bandwidth as i32;
    let sys = left_system(l, band)?;
    let scale = 1.0 + loop_max_abs(l);
    if sys.condition > opts.condition_threshold {
        return Err(Error::BigCell(format!(
            "factorization system condition {:.3e} exceeds {:.1e}",
            sys.condition, opts.condition_threshold
        )));
    }
    // minus = Y * L; positive-degree leakage beyond the fit residual means
    // no factorization with a disc-holomorphic unit plus factor exists
    let prod = mul_trunc(&sys.y, l, band + l.max_degree().abs())?;
    let mut minus_coeffs = BTreeMap::new();
    let mut leakage = sys.fit_residual;
    for (&d, m) in prod.coeffs() {
        if d <= 0 {
            if matrix::max_abs(m) > 1e-14 {
                minus_coeffs.insert(d, m.clone());
            }
        } else {
            leakage = leakage.max(matrix::max_abs(m));
        }
    }
    if leakage > opts.residual_threshold * scale {
        return Err(Error::BigCell(format!(
            "no disc-holomorphic unit factor: positive-degree residual {leakage:.3e}"
        )));
    }
    if minus_coeffs.is_empty() {
        minus_coeffs.insert(0, matrix::zeros(l.dim()));
    }
    let minus = LaurentLoop::new(l.dim(), minus_coeffs)?;
    let plus = invert_plus(&sys.y, band)?.pruned(1e-14);
    let residual = circle_product_residual(Side::Left, &plus, &minus, l, 64)?;
    if residual > opts.residual_threshold * scale {
        return Err(Error::BigCell(format!(
            "factor product residual {residual:.3e} exceeds threshold \
             (bandwidth {} may be insufficient)",
            opts.bandwidth
        )));
    }
    Ok(SplitResult {
        side: Side::Left,
        plus,
        minus,
        residual,
        in_big_cell: true,
        condition: sys.condition,
    })
}

fn loop_max_abs(l: &LaurentLoop) -> f64 {
    l.coeffs()
        .values()
        .map(matrix::max_abs)
        .fold(0.0, f64::max)
}

/// Factor a loop into disc- and exterior-holomorphic parts. Errors with
/// `BigCell` when no such factorization exists at the requested accuracy.
pub fn birkhoff_split(l: &LaurentLoop, side: Side, opts: &SplitOpts) -> Result<SplitResult> {
    match side {
        Side::Left => left_split(l, opts),
        Side::Right => {
            let mirrored = left_split(&reflect(l), opts)?;
            let plus = reflect(&mirrored.minus);
            let minus = reflect(&mirrored.plus);
            let residual = circle_product_residual(Side::Right, &plus, &minus, l, 64)?;
            Ok(SplitResult {
                side: Side::Right,
                plus,
                minus,
                residual,
                in_big_cell: true,
                condition: mirrored.condition,
            })
        }
    }
}

/// Big-cell membership with the condition estimate of the factorization
/// system. Unlike `birkhoff_split` this never errors on failure.
pub fn in_big_cell(l: &LaurentLoop, opts: &SplitOpts) -> Result<(bool, f64)> {
    let sys = left_system(l, opts.bandwidth as i32)?;
    let scale = 1.0 + loop_max_abs(l);
    let ok = sys.condition <= opts.condition_threshold
        && sys.fit_residual <= opts.residual_threshold * scale;
    Ok((ok, sys.condition))
}

// ---------------------------------------------------------------------------
// Loop fields over grids and the forward/backward correspondence
// ---------------------------------------------------------------------------

/// A loop per point of a real parameter grid.
#[derive(Debug, Clone)]
pub struct LoopField {
    pub grid: Grid,
    pub loops: Vec<LaurentLoop>,
}

impl LoopField {
    pub fn new(grid: Grid, loops: Vec<LaurentLoop>) -> Result<Self> {
        if loops.len() != grid.num_points() {
            return Err(Error::Dimension("loop count != grid points".into()));
        }
        Ok(Self { grid, loops })
    }
}

/// Left-renormalization at a grid point: R(x) = F(q)^-1 F(x), which has
/// R(q) = I and the same Maurer-Cartan form as F.
pub fn renormalize_at(field: &LoopField, q: (usize, usize), opts: &SplitOpts) -> Result<LoopField> {
    let base = &field.loops[field.grid.idx(q.0, q.1)];
    let band = opts.bandwidth as i32;
    let base_inv = invert_loop_via_circle(base, 64, band)?;
    let loops: Result<Vec<_>> = field
        .loops
        .iter()
        .map(|l| Ok(mul_trunc(&base_inv, l, band + l.max_degree().abs())?.pruned(1e-13)))
        .collect();
    LoopField::new(field.grid.clone(), loops?)
}

/// Pointwise left Birkhoff split of a frame family given as loops; returns
/// the plus factors. On failure reports the first offending grid point.
pub fn dpw_forward(field: &LoopField, opts: &SplitOpts) -> Result<LoopField> {
    let grid = &field.grid;
    let plus: Result<Vec<_>> = field
        .loops
        .par_iter()
        .enumerate()
        .map(|(idx, l)| {
            birkhoff_split(l, Side::Left, opts).map(|s| s.plus).map_err(|e| {
                let (i, j) = (idx / grid.nv(), idx % grid.nv());
                match e {
                    Error::BigCell(msg) => {
                        Error::BigCell(format!("grid point ({i}, {j}): {msg}"))
                    }
                    other => other,
                }
            })
        })
        .collect();
    LoopField::new(grid.clone(), plus?)
}

fn is_negative_reality(tau: &InvolutionSpec) -> bool {
    matches!(
        tau,
        InvolutionSpec::Rho3
            | InvolutionSpec::Tau1(_, _)
            | InvolutionSpec::Tau2(_)
            | InvolutionSpec::Tau3
    )
}

/// Reconstruct the tau-fixed loop whose left plus factor is `f_plus`.
///
/// With S = tau(F+)^-1 F+ and the left split S = S+ S-, the loop
/// F = F+ S-^-1 sqrt(S-(inf)) is fixed by tau and splits back to F+.
pub fn dpw_backward(
    f_plus: &LaurentLoop,
    tau: &InvolutionSpec,
    opts: &SplitOpts,
) -> Result<LaurentLoop> {
    backward_core(f_plus, tau, opts).map(|(f, _)| f)
}

/// Shared backward construction; also returns the value at infinity of the
/// minus factor X with F = F+ X, which anchored callers need.
fn backward_core(
    f_plus: &LaurentLoop,
    tau: &InvolutionSpec,
    opts: &SplitOpts,
) -> Result<(LaurentLoop, CMat)> {
    if !is_negative_reality(tau) {
        return Err(Error::Domain(
            "backward correspondence needs an involution acting by 1/conj(lambda)".into(),
        ));
    }
    if f_plus.min_degree() < 0 {
        return Err(Error::Domain("input must be a plus loop".into()));
    }
    let band = opts.bandwidth as i32;
    let n = f_plus.dim();
    let tau_fp = apply_involution(tau, f_plus)?;
    let tau_fp_inv = invert_minus(&tau_fp, band)?;
    let s = mul_trunc(&tau_fp_inv, f_plus, band)?.pruned(1e-15);
    let split = left_split(&s, opts)?;
    let e0 = split
        .minus
        .coeff(0)
        .cloned()
        .unwrap_or_else(|| matrix::zeros(n));
    let d = sqrtm(&e0)?;
    let s_minus_inv = invert_minus(&split.minus, band)?;
    let x = mul_trunc(&s_minus_inv, &LaurentLoop::constant(d.clone())?, band)?;
    let f = mul_trunc(f_plus, &x, band)?.pruned(1e-14);
    // the construction is exact in exact arithmetic; verify fixedness here
    let samples: Vec<C64> = circle_points(16);
    let res = crate::loopalg::fixed_residual(tau, &f, &samples)?;
    let scale = 1.0 + loop_max_abs(&f);
    if res > 1e-6 * scale {
        return Err(Error::Numerical(format!(
            "backward factorization left fixedness residual {res:.3e}; \
             input may be outside the convergence neighbourhood"
        )));
    }
    let x_inf = matrix::try_inverse(&e0)? * d;
    Ok((f, x_inf))
}

/// Backward step anchored to a full loop rather than a bare plus factor.
///
/// Writing L = F N with F fixed by tau and N a minus loop, F is unique once
/// N(inf) is required to have no component along tau's constant fixed group
/// (polar-type normalization: N(inf) = k p with tau0(k) = k, tau0(p) = p^-1,
/// and k absorbed into F). Consequences: a loop that is already tau-fixed is
/// returned unchanged, and the result is invariant under tau-fixed left
/// translations of L -- renormalizing at different base points yields the
/// same reconstruction, which is what makes glued extensions consistent.
pub fn dpw_backward_anchored(
    l: &LaurentLoop,
    tau: &InvolutionSpec,
    opts: &SplitOpts,
) -> Result<LaurentLoop> {
    let band = opts.bandwidth as i32;
    let split = birkhoff_split(l, Side::Left, opts)?;
    let w = split
        .minus
        .coeff(0)
        .cloned()
        .ok_or_else(|| Error::Numerical("minus factor has no constant term".into()))?;
    let (raw, x_inf) = backward_core(&split.plus, tau, opts)?;
    // N(inf) of the raw reconstruction, then its polar correction
    let n_inf = matrix::try_inverse(&x_inf)? * w;
    let t = matrix::try_inverse(&tau.matrix_action(&n_inf))? * &n_inf;
    let p = sqrtm(&t)?;
    let k = &n_inf * matrix::try_inverse(&p)?;
    mul_trunc(&raw, &LaurentLoop::constant(k)?, band).map(|f| f.pruned(1e-14))
}

// ---------------------------------------------------------------------------
// Holomorphic frame evaluators and the extension pipeline
// ---------------------------------------------------------------------------

/// A frame family given in closed form, evaluable at complexified domain
/// coordinates. This is what makes holomorphic extension possible.
pub trait HoloFrameEval: Sync {
    fn matrix_dim(&self) -> usize;
    fn eval_loop(&self, zu: C64, zv: C64) -> Result<LaurentLoop>;
}

/// The closed-form case-3 example frame.
#[derive(Debug, Clone, Copy)]
pub struct ExampleFrameEval;

impl HoloFrameEval for ExampleFrameEval {
    fn matrix_dim(&self) -> usize {
        4
    }

    fn eval_loop(&self, zu: C64, zv: C64) -> Result<LaurentLoop> {
        Ok(crate::immersions::example_frame_loop_complex(zu, zv))
    }
}

/// Negative control: multiplies an evaluator's output on the right by a
/// unipotent factor depending on conj(z_u), destroying holomorphy.
pub struct AntiHolomorphicPerturbation<E> {
    pub inner: E,
    pub amount: f64,
    /// Row/column of the nilpotent generator E_{row,col}.
    pub slot: (usize, usize),
}

impl<E: HoloFrameEval> HoloFrameEval for AntiHolomorphicPerturbation<E> {
    fn matrix_dim(&self) -> usize {
        self.inner.matrix_dim()
    }

    fn eval_loop(&self, zu: C64, zv: C64) -> Result<LaurentLoop> {
        let f = self.inner.eval_loop(zu, zv)?;
        let n = self.matrix_dim();
        let mut gen = matrix::zeros(n);
        gen[self.slot] = cr(self.amount) * zu.conj();
        let pert = loop_sum(
            &LaurentLoop::identity(n),
            &LaurentLoop::monomial(1, gen)?,
            cr(1.0),
        )?;
        mul_trunc(&f, &pert, f.max_degree().abs() + 1)
    }
}

/// Plus factor of the evaluator's frame at a (complex) domain point.
pub fn plus_factor_at(
    eval: &dyn HoloFrameEval,
    zu: C64,
    zv: C64,
    opts: &SplitOpts,
) -> Result<LaurentLoop> {
    birkhoff_split(&eval.eval_loop(zu, zv)?, Side::Left, opts).map(|s| s.plus)
}

/// Max off-degree-one Fourier mass of the plus factors' Maurer-Cartan form,
/// probed by small central differences at the given points.
pub fn mc_off_degree_residual(
    eval: &dyn HoloFrameEval,
    points: &[(f64, f64)],
    delta: f64,
    opts: &SplitOpts,
) -> Result<f64> {
    let n_samples = 32usize;
    let lams = circle_points(n_samples);
    let worst = points
        .par_iter()
        .map(|&(u, v)| -> Result<f64> {
            let fp = plus_factor_at(eval, cr(u), cr(v), opts)?;
            let mut local = 0.0_f64;
            for dir in 0..2 {
                let (du, dv) = if dir == 0 { (delta, 0.0) } else { (0.0, delta) };
                let f_hi = plus_factor_at(eval, cr(u + du), cr(v + dv), opts)?;
                let f_lo = plus_factor_at(eval, cr(u - du), cr(v - dv), opts)?;
                let df = loop_sum(&f_hi, &f_lo, cr(-1.0))?;
                let mut values = Vec::with_capacity(n_samples);
                for &lam in &lams {
                    let a = matrix::try_inverse(&fp.eval(lam)?)?
                        * df.eval(lam)?
                        * cr(0.5 / delta);
                    values.push(a);
                }
                for (d, m) in dft_coefficients(&values) {
                    if d != 1 {
                        local = local.max(matrix::max_abs(&m));
                    }
                }
            }
            Ok(local)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    Ok(worst)
}

/// Maurer-Cartan Fourier coefficients of a loop field on its grid, by
/// central (one-sided at borders) finite differences. Returns the degree-0
/// and degree-1 parts as 1-form fields plus the max mass at other degrees.
pub fn loop_field_mc(field: &LoopField) -> Result<(OneFormField, OneFormField, f64)> {
    let grid = &field.grid;
    grid.require_surface()?;
    let (nu, nv) = (grid.nu(), grid.nv());
    let (hu, hv) = (grid.axes()[0].step(), grid.axes()[1].step());
    let n = field.loops[0].dim();
    let n_samples = 16usize;
    let lams = circle_points(n_samples);
    let npts = grid.num_points();
    let mut a0 = vec![vec![matrix::zeros(n); npts], vec![matrix::zeros(n); npts]];
    let mut a1 = vec![vec![matrix::zeros(n); npts], vec![matrix::zeros(n); npts]];
    let mut off = 0.0_f64;
    for i in 0..nu {
        for j in 0..nv {
            let p = grid.idx(i, j);
            for ax in 0..2 {
                let (h, extent, at) = if ax == 0 { (hu, nu, i) } else { (hv, nv, j) };
                let (lo, hi) = if ax == 0 {
                    (
                        grid.idx(i.saturating_sub(1), j),
                        grid.idx((i + 1).min(nu - 1), j),
                    )
                } else {
                    (
                        grid.idx(i, j.saturating_sub(1)),
                        grid.idx(i, (j + 1).min(nv - 1)),
                    )
                };
                let span = if at == 0 || at + 1 == extent { h } else { 2.0 * h };
                let df = loop_sum(&field.loops[hi], &field.loops[lo], cr(-1.0))?;
                let mut values = Vec::with_capacity(n_samples);
                for &lam in &lams {
                    values.push(
                        matrix::try_inverse(&field.loops[p].eval(lam)?)?
                            * df.eval(lam)?
                            * cr(1.0 / span),
                    );
                }
                for (d, m) in dft_coefficients(&values) {
                    match d {
                        0 => a0[ax][p] = m,
                        1 => a1[ax][p] = m,
                        _ => off = off.max(matrix::max_abs(&m)),
                    }
                }
            }
        }
    }
    Ok((
        OneFormField::new(grid.clone(), a0)?,
        OneFormField::new(grid.clone(), a1)?,
        off,
    ))
}

/// A loop per point of a complex strip.
#[derive(Debug, Clone)]
pub struct StripLoopField {
    pub strip: ComplexStrip,
    pub loops: Vec<LaurentLoop>,
}

impl StripLoopField {
    pub fn new(strip: ComplexStrip, loops: Vec<LaurentLoop>) -> Result<Self> {
        if loops.len() != strip.num_points() {
            return Err(Error::Dimension("loop count != strip points".into()));
        }
        Ok(Self { strip, loops })
    }

    /// Loops on the real slice, row-major over the base grid.
    pub fn real_slice(&self) -> Vec<&LaurentLoop> {
        let (c0, c1) = (self.strip.center(0), self.strip.center(1));
        let mut out = Vec::with_capacity(self.strip.base.num_points());
        for i in 0..self.strip.base.nu() {
            for j in 0..self.strip.base.nv() {
                out.push(&self.loops[self.strip.idx(i, j, c0, c1)]);
            }
        }
        out
    }
}

fn strip_point_list(strip: &ComplexStrip) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::with_capacity(strip.num_points());
    for i in 0..strip.base.nu() {
        for j in 0..strip.base.nv() {
            for a in 0..strip.ny[0] {
                for b in 0..strip.ny[1] {
                    out.push((i, j, a, b));
                }
            }
        }
    }
    out
}

/// The extension pipeline: per strip point, evaluate the holomorphic frame
/// and reconstruct the tau-fixed loop through the anchored backward step.
/// The anchoring makes the reconstruction restrict exactly to tau-fixed
/// input on the real slice and renders it renormalization-invariant.
pub fn pluriharmonic_extend(
    eval: &dyn HoloFrameEval,
    tau: &InvolutionSpec,
    strip: &ComplexStrip,
    opts: &SplitOpts,
) -> Result<StripLoopField> {
    let pts = strip_point_list(strip);
    let loops: Result<Vec<_>> = pts
        .par_iter()
        .map(|&(i, j, a, b)| {
            let (zu, zv) = strip.coords(i, j, a, b);
            let l = eval.eval_loop(zu, zv)?;
            dpw_backward_anchored(&l, tau, opts).map_err(|e| match e {
                Error::BigCell(msg) => Error::BigCell(format!(
                    "strip point ({i}, {j}, {a}, {b}): {msg}"
                )),
                other => other,
            })
        })
        .collect();
    StripLoopField::new(strip.clone(), loops?)
}

/// Same pipeline after renormalizing the family at base-grid point q; the
/// result is glued back by left multiplication with F(q), so it extends
/// the original family on a patch around q.
pub fn pluriharmonic_extend_renormalized(
    eval: &dyn HoloFrameEval,
    tau: &InvolutionSpec,
    strip: &ComplexStrip,
    q: (usize, usize),
    opts: &SplitOpts,
) -> Result<StripLoopField> {
    let (qu, qv) = strip.base.coords(q.0, q.1);
    let fq = eval.eval_loop(cr(qu), cr(qv))?;
    let band = opts.bandwidth as i32;
    let fq_inv = invert_loop_via_circle(&fq, 64, band)?;
    struct Renormed<'a> {
        inner: &'a dyn HoloFrameEval,
        fq_inv: LaurentLoop,
        band: i32,
    }
    impl HoloFrameEval for Renormed<'_> {
        fn matrix_dim(&self) -> usize {
            self.inner.matrix_dim()
        }
        fn eval_loop(&self, zu: C64, zv: C64) -> Result<LaurentLoop> {
            let f = self.inner.eval_loop(zu, zv)?;
            Ok(mul_trunc(&self.fq_inv, &f, self.band)?.pruned(1e-14))
        }
    }
    let renormed = Renormed {
        inner: eval,
        fq_inv,
        band,
    };
    let extended = pluriharmonic_extend(&renormed, tau, strip, opts)?;
    let loops: Result<Vec<_>> = extended
        .loops
        .iter()
        .map(|l| Ok(mul_trunc(&fq, l, band)?.pruned(1e-14)))
        .collect();
    StripLoopField::new(strip.clone(), loops?)
}

/// Residuals of the pluriharmonicity conditions on the top Maurer-Cartan
/// coefficient: the anti-holomorphic part of A_1, and the conjugate
/// relation between the anti-part of A_{-1} and the holomorphic part of A_1.
#[derive(Debug, Clone, Copy)]
pub struct PluriharmonicReport {
    /// Max norm of the (0,1)-part of A_1.
    pub antiholomorphic: f64,
    /// Max norm of A_{-1}'' - conj(A_1').
    pub conjugate_relation: f64,
}

/// Central-difference derivative of strip loops along one of the four real
/// directions (x_u, y_u, x_v, y_v), fourth-order where the strip allows it.
fn strip_loop_derivative(
    field: &StripLoopField,
    p: (usize, usize, usize, usize),
    dir: usize,
) -> Result<Option<LaurentLoop>> {
    let strip = &field.strip;
    let (i, j, a, b) = p;
    let (extent, at, h) = match dir {
        0 => (strip.base.nu(), i, strip.base.axes()[0].step()),
        1 => (strip.base.nv(), j, strip.base.axes()[1].step()),
        2 => (strip.ny[0], a, strip.ystep(0)),
        _ => (strip.ny[1], b, strip.ystep(1)),
    };
    let shift = |o: isize| -> usize {
        let t = at as isize + o;
        let (mut i2, mut j2, mut a2, mut b2) = (i, j, a, b);
        match dir {
            0 => i2 = t as usize,
            1 => j2 = t as usize,
            2 => a2 = t as usize,
            _ => b2 = t as usize,
        }
        strip.idx(i2, j2, a2, b2)
    };
    // when the strip affords fourth-order stencils, use only those: mixing
    // in second-order rows near the boundary would dominate the residual
    let order4 = extent >= 5 && at >= 2 && at + 2 < extent;
    let order2 = extent < 5 && at >= 1 && at + 1 < extent;
    let stencil: &[(isize, f64)] = if order4 {
        &[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)]
    } else if order2 {
        &[(-1, -0.5), (1, 0.5)]
    } else {
        return Ok(None);
    };
    let n = field.loops[0].dim();
    let mut acc = LaurentLoop::constant(matrix::zeros(n))?;
    for &(o, w) in stencil {
        acc = loop_sum(&acc, &field.loops[shift(o)], cr(w / h))?;
    }
    Ok(Some(acc))
}

pub fn pluriharmonic_residual(field: &StripLoopField) -> Result<PluriharmonicReport> {
    let strip = &field.strip;
    for ax in 0..2 {
        if strip.ny[ax] < 3 {
            return Err(Error::Domain(
                "pluriharmonicity stencils need >= 3 imaginary samples per axis".into(),
            ));
        }
    }
    let n_samples = 16usize;
    let lams = circle_points(n_samples);
    let pts = strip_point_list(strip);
    let report = pts
        .par_iter()
        .map(|&p| -> Result<(f64, f64)> {
            let idx = strip.idx(p.0, p.1, p.2, p.3);
            let f_inv_vals: Vec<CMat> = lams
                .iter()
                .map(|&lam| matrix::try_inverse(&field.loops[idx].eval(lam)?))
                .collect::<Result<_>>()?;
            // per complex coordinate: x-derivative (dirs 0,1) and
            // y-derivative (dirs 2,3)
            let mut anti = 0.0_f64;
            let mut conj_rel = 0.0_f64;
            for coord in 0..2 {
                let dx = strip_loop_derivative(field, p, coord)?;
                let dy = strip_loop_derivative(field, p, coord + 2)?;
                let (dx, dy) = match (dx, dy) {
                    (Some(a), Some(b)) => (a, b),
                    _ => continue,
                };
                // Fourier coefficients of A = F^-1 dF along both directions
                let coeff_pair = |dl: &LaurentLoop| -> Result<(CMat, CMat)> {
                    let mut values = Vec::with_capacity(n_samples);
                    for (s, &lam) in lams.iter().enumerate() {
                        values.push(&f_inv_vals[s] * dl.eval(lam)?);
                    }
                    let mut a1 = matrix::zeros(field.loops[0].dim());
                    let mut am1 = a1.clone();
                    for (d, m) in dft_coefficients(&values) {
                        if d == 1 {
                            a1 = m;
                        } else if d == -1 {
                            am1 = m;
                        }
                    }
                    Ok((am1, a1))
                };
                let (am1_x, a1_x) = coeff_pair(&dx)?;
                let (am1_y, a1_y) = coeff_pair(&dy)?;
                let half = cr(0.5);
                let ih = c(0.0, 0.5);
                let a1_anti = &a1_x * half + &a1_y * ih;
                let a1_holo = &a1_x * half - &a1_y * ih;
                let am1_anti = &am1_x * half + &am1_y * ih;
                anti = anti.max(matrix::max_abs(&a1_anti));
                conj_rel = conj_rel
                    .max(matrix::max_abs(&(am1_anti - a1_holo.map(|z| z.conj()))));
            }
            Ok((anti, conj_rel))
        })
        .try_reduce(
            || (0.0, 0.0),
            |a, b| Ok((a.0.max(b.0), a.1.max(b.1))),
        )?;
    Ok(PluriharmonicReport {
        antiholomorphic: report.0,
        conjugate_relation: report.1,
    })
}

/// Fixedness residual of the loops on one imaginary slice (a, b) of the
/// strip, max over base points and circle samples.
pub fn reality_residual_on_slice(
    field: &StripLoopField,
    rho: &InvolutionSpec,
    slice: (usize, usize),
) -> Result<f64> {
    let strip = &field.strip;
    let samples = circle_points(16);
    let mut worst = 0.0_f64;
    for i in 0..strip.base.nu() {
        for j in 0..strip.base.nv() {
            let l = &field.loops[strip.idx(i, j, slice.0, slice.1)];
            worst = worst.max(crate::loopalg::fixed_residual(rho, l, &samples)?);
        }
    }
    Ok(worst)
}

/// Fixedness residual on the real slice y = 0.
pub fn reality_residual_on_m(field: &StripLoopField, rho: &InvolutionSpec) -> Result<f64> {
    reality_residual_on_slice(field, rho, (field.strip.center(0), field.strip.center(1)))
}

/// Max distance between a distinguished column of two loop fields on the
/// real slice, over circle samples. Columns are invariant under the
/// isotropy freedom of the correspondence, so this is the right comparison.
pub fn real_slice_column_distance(
    field: &StripLoopField,
    reference: &dyn HoloFrameEval,
    column: usize,
) -> Result<f64> {
    let strip = &field.strip;
    let samples = circle_points(16);
    let mut worst = 0.0_f64;
    let slice = field.real_slice();
    for i in 0..strip.base.nu() {
        for j in 0..strip.base.nv() {
            let (u, v) = strip.base.coords(i, j);
            let refl = reference.eval_loop(cr(u), cr(v))?;
            let got = slice[i * strip.base.nv() + j];
            for &lam in &samples {
                let a = got.eval(lam)?;
                let b = refl.eval(lam)?;
                for r in 0..a.nrows() {
                    worst = worst.max((a[(r, column)] - b[(r, column)]).norm());
                }
            }
        }
    }
    Ok(worst)
}

/// Column disagreement between two strip loop fields over their full strips.
pub fn strip_column_distance(
    a: &StripLoopField,
    b: &StripLoopField,
    column: usize,
) -> Result<f64> {
    if a.strip != b.strip {
        return Err(Error::Dimension("strip mismatch".into()));
    }
    let samples = circle_points(16);
    let mut worst = 0.0_f64;
    for (la, lb) in a.loops.iter().zip(&b.loops) {
        for &lam in &samples {
            let ma = la.eval(lam)?;
            let mb = lb.eval(lam)?;
            for r in 0..ma.nrows() {
                worst = worst.max((ma[(r, column)] - mb[(r, column)]).norm());
            }
        }
    }
    Ok(worst)
}
