//! Curved flats: construction from off-diagonal 1-form data, gauge
//! normalization, flatness residuals, and holomorphic extension of the
//! frames onto a complex strip around the real domain.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frames::{
    integrate_frame_eval, ConnectionFamily, Grid, IntegrateOpts, OneFormField, SampledConnection,
};
use crate::loopalg::SignatureForm;
use crate::matrix::{self, c, commutator, cr, expm, C64, CMat};

/// Off-diagonal 1-form data of a curved flat, together with the signature
/// form whose +-blocks define the symmetric-space involution.
#[derive(Debug, Clone)]
pub struct CurvedFlatData {
    pub eta: OneFormField,
    pub p_form: SignatureForm,
}

impl CurvedFlatData {
    /// Residual of the -1 eigenspace condition: entries inside the diagonal
    /// blocks of the P-splitting must vanish.
    pub fn eigenspace_residual(&self) -> f64 {
        let p = self.p_form.diag();
        let mut worst = 0.0_f64;
        for comp in &self.eta.components {
            for m in comp {
                for r in 0..m.nrows() {
                    for col in 0..m.ncols() {
                        if p[r] * p[col] > 0.0 {
                            worst = worst.max(m[(r, col)].norm());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Discrete residuals of the curved-flat equations: (max ||d eta|| per
/// cell, max ||eta ^ eta|| per cell), both at cell centres.
pub fn flat_residuals(eta: &OneFormField) -> Result<(f64, f64)> {
    let grid = &eta.grid;
    if !grid.is_surface() {
        return Err(Error::Domain("flat residuals need a two-axis grid".into()));
    }
    let (nu, nv) = (grid.nu(), grid.nv());
    let (hu, hv) = (grid.axes()[0].step(), grid.axes()[1].step());
    let eu = &eta.components[0];
    let ev = &eta.components[1];
    let mut r_closed = 0.0_f64;
    let mut r_wedge = 0.0_f64;
    for i in 0..nu - 1 {
        for j in 0..nv - 1 {
            let p00 = grid.idx(i, j);
            let p10 = grid.idx(i + 1, j);
            let p01 = grid.idx(i, j + 1);
            let p11 = grid.idx(i + 1, j + 1);
            let dev_du = (&ev[p10] + &ev[p11] - &ev[p00] - &ev[p01]) * cr(0.5 / hu);
            let deu_dv = (&eu[p01] + &eu[p11] - &eu[p00] - &eu[p10]) * cr(0.5 / hv);
            let eu_mid = (&eu[p00] + &eu[p10] + &eu[p01] + &eu[p11]) * cr(0.25);
            let ev_mid = (&ev[p00] + &ev[p10] + &ev[p01] + &ev[p11]) * cr(0.25);
            r_closed = r_closed.max(matrix::max_abs(&(dev_du - deu_dv)));
            r_wedge = r_wedge.max(matrix::max_abs(&commutator(&eu_mid, &ev_mid)));
        }
    }
    Ok((r_closed, r_wedge))
}

/// Gauge away the degree-0 part of a connection A_0 + A_1 lambda: integrate
/// K with dK = K A_0, K(base) = I, and return Ad_K(A_1). If the input pair
/// satisfies the Maurer-Cartan equation for all lambda, the output
/// satisfies the curved-flat equations.
pub fn gauge_normalize(
    a0: &OneFormField,
    a1: &OneFormField,
    tolerance: f64,
    opts: &IntegrateOpts,
) -> Result<OneFormField> {
    if a0.grid != a1.grid {
        return Err(Error::Dimension("A0 and A1 on different grids".into()));
    }
    let fam = ConnectionFamily::new(std::collections::BTreeMap::from([(0, a0.clone())]))?;
    let res = crate::frames::mc_residual(&fam, cr(1.0))?;
    if res > tolerance {
        return Err(Error::NonIntegrable(format!(
            "degree-0 part is not flat (residual {res:.3e} > {tolerance:.1e})"
        )));
    }
    let grid = a0.grid.clone();
    let conn = SampledConnection::new(&fam, cr(1.0))?;
    let ks = integrate_frame_eval(&conn, &grid, opts)?;
    let npts = grid.num_points();
    let mut comps = vec![Vec::with_capacity(npts), Vec::with_capacity(npts)];
    for p in 0..npts {
        let k_inv = matrix::try_inverse(&ks[p])?;
        for (ax, comp) in comps.iter_mut().enumerate() {
            comp.push(&ks[p] * &a1.components[ax][p] * &k_inv);
        }
    }
    OneFormField::new(grid, comps)
}

/// Integrate the pencil A(lambda) = eta * lambda into frames at each
/// sample, after checking the curved-flat residuals.
pub fn curved_flat_from_eta(
    eta: &OneFormField,
    lambdas: &[C64],
    threshold: f64,
    opts: &IntegrateOpts,
) -> Result<crate::frames::FrameFamily> {
    let (rc, rw) = flat_residuals(eta)?;
    if rc > threshold || rw > threshold {
        return Err(Error::NonIntegrable(format!(
            "curved-flat residuals ({rc:.3e}, {rw:.3e}) exceed threshold {threshold:.1e}"
        )));
    }
    let fam = ConnectionFamily::new(std::collections::BTreeMap::from([(1, eta.clone())]))?;
    let grid = eta.grid.clone();
    let frames: Result<Vec<_>> = lambdas
        .par_iter()
        .map(|&lam| {
            let conn = SampledConnection::new(&fam, lam)?;
            integrate_frame_eval(&conn, &grid, opts)
        })
        .collect();
    Ok(crate::frames::FrameFamily {
        lambda_samples: lambdas.to_vec(),
        frames: frames?,
        grid,
        normalized: true,
    })
}

// ---------------------------------------------------------------------------
// Complex strips and holomorphic extension
// ---------------------------------------------------------------------------

/// A strip around the real domain in the complexification of both
/// coordinates: z_j = x_j + i y_j with |y_j| <= eps_j.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexStrip {
    pub base: Grid,
    pub eps: [f64; 2],
    /// Imaginary sample counts per axis; odd so that y = 0 is a sample.
    pub ny: [usize; 2],
}

impl ComplexStrip {
    pub fn new(base: Grid, eps: [f64; 2], ny: [usize; 2]) -> Result<Self> {
        if !base.is_surface() {
            return Err(Error::Domain("strip base must be a two-axis grid".into()));
        }
        for ax in 0..2 {
            if eps[ax] <= 0.0 {
                return Err(Error::Domain("strip half-width must be positive".into()));
            }
            if ny[ax] < 3 || ny[ax] % 2 == 0 {
                return Err(Error::Domain(
                    "imaginary sample count must be odd and >= 3".into(),
                ));
            }
        }
        Ok(Self { base, eps, ny })
    }

    pub fn ystep(&self, ax: usize) -> f64 {
        2.0 * self.eps[ax] / (self.ny[ax] - 1) as f64
    }

    pub fn ycoord(&self, ax: usize, a: usize) -> f64 {
        -self.eps[ax] + self.ystep(ax) * a as f64
    }

    /// Index of the y = 0 sample.
    pub fn center(&self, ax: usize) -> usize {
        (self.ny[ax] - 1) / 2
    }

    pub fn num_points(&self) -> usize {
        self.base.num_points() * self.ny[0] * self.ny[1]
    }

    pub fn idx(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.base.nv() + j) * self.ny[0] + a) * self.ny[1] + b
    }

    pub fn coords(&self, i: usize, j: usize, a: usize, b: usize) -> (C64, C64) {
        let (u, v) = self.base.coords(i, j);
        (
            c(u, self.ycoord(0, a)),
            c(v, self.ycoord(1, b)),
        )
    }

    pub fn halved(&self) -> Result<Self> {
        ComplexStrip::new(
            self.base.clone(),
            [self.eps[0] / 2.0, self.eps[1] / 2.0],
            self.ny,
        )
    }
}

/// A matrix-valued 1-form sampled over a strip (dz-components).
#[derive(Debug, Clone)]
pub struct StripField {
    pub strip: ComplexStrip,
    /// components[axis][strip index]
    pub components: [Vec<CMat>; 2],
}

impl StripField {
    pub fn matrix_dim(&self) -> usize {
        self.components[0].first().map(|m| m.nrows()).unwrap_or(0)
    }
}

/// Closed-form matrix 1-form: one expression per entry per axis, in the
/// coordinates (u, v), evaluable at complex arguments.
#[derive(Debug, Clone)]
pub struct AnalyticOneForm {
    pub n: usize,
    /// comps[axis] is an n*n row-major expression matrix.
    pub comps: [Vec<Expr>; 2],
}

impl AnalyticOneForm {
    pub fn eval_at(&self, zu: C64, zv: C64) -> [CMat; 2] {
        let args = [zu, zv];
        let n = self.n;
        [0, 1].map(|ax| {
            CMat::from_iterator(
                n,
                n,
                // from_iterator fills column-major; transpose the row-major list
                (0..n * n).map(|idx| {
                    let (r, col) = (idx % n, idx / n);
                    self.comps[ax][r * n + col].eval(&args)
                }),
            )
        })
    }

    /// Sample on a real grid.
    pub fn sample(&self, grid: &Grid) -> Result<OneFormField> {
        OneFormField::from_fn(grid.clone(), |u, v| self.eval_at(cr(u), cr(v)))
    }
}

const BLOWUP_LIMIT: f64 = 1e10;

/// Evaluate a closed-form 1-form over a strip. Errors if any entry is
/// non-finite or blows up, which indicates a singularity inside the strip.
pub fn complexify_eta(eta: &AnalyticOneForm, strip: &ComplexStrip) -> Result<StripField> {
    let base = &strip.base;
    let mut comps = [
        vec![matrix::zeros(0); 0],
        vec![matrix::zeros(0); 0],
    ];
    comps[0] = Vec::with_capacity(strip.num_points());
    comps[1] = Vec::with_capacity(strip.num_points());
    for i in 0..base.nu() {
        for j in 0..base.nv() {
            for a in 0..strip.ny[0] {
                for b in 0..strip.ny[1] {
                    let (zu, zv) = strip.coords(i, j, a, b);
                    let [mu, mv] = eta.eval_at(zu, zv);
                    for m in [&mu, &mv] {
                        if !matrix::all_finite(m) || matrix::max_abs(m) > BLOWUP_LIMIT {
                            return Err(Error::Domain(format!(
                                "analytic extension fails near (Re z, Im z) = \
                                 ({:.3}+{:.3}i, {:.3}+{:.3}i): singularity inside the strip; \
                                 try halving the strip width",
                                zu.re, zu.im, zv.re, zv.im
                            )));
                        }
                    }
                    comps[0].push(mu);
                    comps[1].push(mv);
                }
            }
        }
    }
    Ok(StripField {
        strip: strip.clone(),
        components: comps,
    })
}

/// Like `complexify_eta`, but halves the strip width on failure, up to six
/// times. Returns the field together with the strip actually used.
pub fn complexify_eta_adaptive(
    eta: &AnalyticOneForm,
    strip: &ComplexStrip,
) -> Result<(StripField, ComplexStrip)> {
    let mut current = strip.clone();
    let mut last_err = None;
    for _ in 0..=6 {
        match complexify_eta(eta, &current) {
            Ok(f) => return Ok((f, current)),
            Err(e) => {
                last_err = Some(e);
                current = current.halved()?;
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Domain("strip width selection failed".into())))
}

/// Curved-flat residuals of a strip field, slice by slice in the real
/// directions (the dz-derivative of a holomorphic field equals its
/// x-derivative).
pub fn strip_flat_residuals(field: &StripField) -> Result<(f64, f64)> {
    let strip = &field.strip;
    let base = &strip.base;
    let (nu, nv) = (base.nu(), base.nv());
    let (hu, hv) = (base.axes()[0].step(), base.axes()[1].step());
    let mut r_closed = 0.0_f64;
    let mut r_wedge = 0.0_f64;
    for a in 0..strip.ny[0] {
        for b in 0..strip.ny[1] {
            for i in 0..nu - 1 {
                for j in 0..nv - 1 {
                    let p00 = strip.idx(i, j, a, b);
                    let p10 = strip.idx(i + 1, j, a, b);
                    let p01 = strip.idx(i, j + 1, a, b);
                    let p11 = strip.idx(i + 1, j + 1, a, b);
                    let eu = &field.components[0];
                    let ev = &field.components[1];
                    let dev_du = (&ev[p10] + &ev[p11] - &ev[p00] - &ev[p01]) * cr(0.5 / hu);
                    let deu_dv = (&eu[p01] + &eu[p11] - &eu[p00] - &eu[p10]) * cr(0.5 / hv);
                    let eu_mid = (&eu[p00] + &eu[p10] + &eu[p01] + &eu[p11]) * cr(0.25);
                    let ev_mid = (&ev[p00] + &ev[p10] + &ev[p01] + &ev[p11]) * cr(0.25);
                    r_closed = r_closed.max(matrix::max_abs(&(dev_du - deu_dv)));
                    r_wedge = r_wedge.max(matrix::max_abs(&commutator(&eu_mid, &ev_mid)));
                }
            }
        }
    }
    Ok((r_closed, r_wedge))
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_88; // sqrt(3)/6

/// Cubic interpolation of matrix samples on a uniform index grid at a
/// fractional position.
fn interp_line(samples: &[&CMat], pos: f64) -> CMat {
    let len = samples.len();
    if len == 1 {
        return samples[0].clone();
    }
    let window = len.min(4);
    let mut i0 = pos.floor() as isize - 1;
    i0 = i0.clamp(0, (len - window) as isize);
    let i0 = i0 as usize;
    let mut out = samples[i0] * cr(0.0);
    for a in 0..window {
        let xa = (i0 + a) as f64;
        let mut w = 1.0;
        for b in 0..window {
            if a != b {
                let xb = (i0 + b) as f64;
                w *= (pos - xb) / (xa - xb);
            }
        }
        out += samples[i0 + a] * cr(w);
    }
    out
}

/// Integrate dF = F * A(s) * dz/ds along a line of uniformly indexed
/// samples, starting from `start` at `start_idx` and marching in both
/// directions. `dz` is the complex step between consecutive samples.
fn integrate_line(
    start: &CMat,
    samples: &[&CMat],
    start_idx: usize,
    dz: C64,
    substeps: usize,
) -> Vec<CMat> {
    let len = samples.len();
    let mut out = vec![CMat::zeros(0, 0); len];
    out[start_idx] = start.clone();
    for dir in [1isize, -1isize] {
        let mut k = start_idx as isize;
        loop {
            let next = k + dir;
            if next < 0 || next >= len as isize {
                break;
            }
            let mut f = out[k as usize].clone();
            let h = dir as f64 / substeps as f64;
            let step = dz * cr(h);
            for s in 0..substeps {
                let s0 = k as f64 + h * s as f64;
                let mid = s0 + 0.5 * h;
                let a1 = interp_line(samples, mid - GAUSS_OFFSET * h);
                let a2 = interp_line(samples, mid + GAUSS_OFFSET * h);
                let omega = (&a1 + &a2) * (step * cr(0.5))
                    + commutator(&a1, &a2) * (step * step * cr(3.0_f64.sqrt() / 12.0));
                f *= expm(&omega);
            }
            out[next as usize] = f;
            k = next;
        }
    }
    out
}

/// Holomorphic frames over a strip, one grid of matrices per strip point.
pub type StripFrames = Vec<CMat>;

/// Order in which the imaginary directions are filled (for uniqueness
/// checks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagOrder {
    FirstAxisThenSecond,
    SecondAxisThenFirst,
}

/// Integrate dF = F * (eta_u dz_u + eta_v dz_v) * lambda over the strip:
/// first the real slice, then along the imaginary directions.
pub fn extend_frame_holo_at(
    field: &StripField,
    lambda: C64,
    substeps: usize,
    order: ImagOrder,
) -> Result<StripFrames> {
    let strip = &field.strip;
    let base = &strip.base;
    let (nu, nv) = (base.nu(), base.nv());
    let (c0, c1) = (strip.center(0), strip.center(1));
    let (bi, bj) = (base.base()[0], base.base()[1]);
    let n = field.matrix_dim();
    let mut frames = vec![CMat::zeros(0, 0); strip.num_points()];
    let scaled = |p: usize, ax: usize| field.components[ax][p].clone() * lambda;

    // real slice: axis 0 through the base row, then axis 1 per column
    {
        let row: Vec<CMat> = (0..nu).map(|i| scaled(strip.idx(i, bj, c0, c1), 0)).collect();
        let row_refs: Vec<&CMat> = row.iter().collect();
        let hu = cr(base.axes()[0].step());
        let got = integrate_line(&matrix::identity(n), &row_refs, bi, hu, substeps);
        for (i, f) in got.into_iter().enumerate() {
            frames[strip.idx(i, bj, c0, c1)] = f;
        }
        let hv = cr(base.axes()[1].step());
        for i in 0..nu {
            let col: Vec<CMat> = (0..nv).map(|j| scaled(strip.idx(i, j, c0, c1), 1)).collect();
            let col_refs: Vec<&CMat> = col.iter().collect();
            let start = frames[strip.idx(i, bj, c0, c1)].clone();
            let got = integrate_line(&start, &col_refs, bj, hv, substeps);
            for (j, f) in got.into_iter().enumerate() {
                frames[strip.idx(i, j, c0, c1)] = f;
            }
        }
    }

    // imaginary directions: moving in y_j multiplies the step by i
    let march_imag_axis0 = |frames: &mut Vec<CMat>, b_fixed: Option<usize>| {
        let dz = c(0.0, strip.ystep(0));
        for i in 0..nu {
            for j in 0..nv {
                let bs: Vec<usize> = match b_fixed {
                    Some(b) => vec![b],
                    None => (0..strip.ny[1]).collect(),
                };
                for b in bs {
                    let line: Vec<CMat> =
                        (0..strip.ny[0]).map(|a| scaled(strip.idx(i, j, a, b), 0)).collect();
                    let refs: Vec<&CMat> = line.iter().collect();
                    let start = frames[strip.idx(i, j, c0, b)].clone();
                    let got = integrate_line(&start, &refs, c0, dz, substeps);
                    for (a, f) in got.into_iter().enumerate() {
                        frames[strip.idx(i, j, a, b)] = f;
                    }
                }
            }
        }
    };
    let march_imag_axis1 = |frames: &mut Vec<CMat>, a_fixed: Option<usize>| {
        let dz = c(0.0, strip.ystep(1));
        for i in 0..nu {
            for j in 0..nv {
                let a_s: Vec<usize> = match a_fixed {
                    Some(a) => vec![a],
                    None => (0..strip.ny[0]).collect(),
                };
                for a in a_s {
                    let line: Vec<CMat> =
                        (0..strip.ny[1]).map(|b| scaled(strip.idx(i, j, a, b), 1)).collect();
                    let refs: Vec<&CMat> = line.iter().collect();
                    let start = frames[strip.idx(i, j, a, c1)].clone();
                    let got = integrate_line(&start, &refs, c1, dz, substeps);
                    for (b, f) in got.into_iter().enumerate() {
                        frames[strip.idx(i, j, a, b)] = f;
                    }
                }
            }
        }
    };
    match order {
        ImagOrder::FirstAxisThenSecond => {
            march_imag_axis0(&mut frames, Some(c1));
            march_imag_axis1(&mut frames, None);
        }
        ImagOrder::SecondAxisThenFirst => {
            march_imag_axis1(&mut frames, Some(c0));
            march_imag_axis0(&mut frames, None);
        }
    }
    Ok(frames)
}

/// Extend the curved-flat frames over the strip at many loop parameters.
pub fn extend_frame_holo(
    field: &StripField,
    lambdas: &[C64],
    substeps: usize,
) -> Result<Vec<StripFrames>> {
    lambdas
        .par_iter()
        .map(|&lam| extend_frame_holo_at(field, lam, substeps, ImagOrder::FirstAxisThenSecond))
        .collect()
}

/// Fourth-order central-difference weights for the first derivative.
const FD4: [f64; 5] = [
    1.0 / 12.0,
    -8.0 / 12.0,
    0.0,
    8.0 / 12.0,
    -1.0 / 12.0,
];

/// Max discrete Cauchy-Riemann residual of strip frames:
/// (d/dx + i d/dy)/2 per complex coordinate, fourth-order stencils,
/// evaluated at points with two interior layers in every direction.
pub fn cr_residual(frames: &StripFrames, strip: &ComplexStrip) -> Result<f64> {
    let base = &strip.base;
    let (nu, nv) = (base.nu(), base.nv());
    if nu < 5 || nv < 5 || strip.ny[0] < 5 || strip.ny[1] < 5 {
        return Err(Error::Domain(
            "Cauchy-Riemann residual needs at least 5 samples per direction".into(),
        ));
    }
    let steps = [
        base.axes()[0].step(),
        base.axes()[1].step(),
        strip.ystep(0),
        strip.ystep(1),
    ];
    let mut worst = 0.0_f64;
    for i in 2..nu - 2 {
        for j in 2..nv - 2 {
            for a in 2..strip.ny[0] - 2 {
                for b in 2..strip.ny[1] - 2 {
                    let deriv = |dir: usize| {
                        let mut d = &frames[strip.idx(i, j, a, b)] * cr(0.0);
                        for (s, &w) in FD4.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let o = s as isize - 2;
                            let p = match dir {
                                0 => strip.idx((i as isize + o) as usize, j, a, b),
                                1 => strip.idx(i, (j as isize + o) as usize, a, b),
                                2 => strip.idx(i, j, (a as isize + o) as usize, b),
                                _ => strip.idx(i, j, a, (b as isize + o) as usize),
                            };
                            d += &frames[p] * cr(w / steps[dir]);
                        }
                        d
                    };
                    for (x_dir, y_dir) in [(0, 2), (1, 3)] {
                        let bar = (deriv(x_dir) + deriv(y_dir) * c(0.0, 1.0)) * cr(0.5);
                        worst = worst.max(matrix::max_abs(&bar));
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Restriction of strip frames to the real slice, row-major on the base grid.
pub fn real_slice(frames: &StripFrames, strip: &ComplexStrip) -> Vec<CMat> {
    let (c0, c1) = (strip.center(0), strip.center(1));
    let base = &strip.base;
    let mut out = Vec::with_capacity(base.num_points());
    for i in 0..base.nu() {
        for j in 0..base.nv() {
            out.push(frames[strip.idx(i, j, c0, c1)].clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::frames::Axis;
    use crate::matrix::{identity, max_abs, zeros};

    fn p_block(n: usize, r: usize, col: usize, val: f64) -> CMat {
        // off-diagonal element w.r.t. P = diag(I_2, -I_2) and its so-mirror
        let mut m = zeros(n);
        m[(r, col)] = cr(val);
        m[(col, r)] = cr(-val);
        m
    }

    #[test]
    fn flat_residuals_trivial_and_wedge() {
        let grid = Grid::centered_square(1.0, 8).unwrap();
        // commuting constants
        let x = p_block(4, 0, 2, 1.0);
        let npts = grid.num_points();
        let field = OneFormField::new(
            grid.clone(),
            vec![vec![x.clone(); npts], vec![x.clone() * cr(2.0); npts]],
        )
        .unwrap();
        let (rc, rw) = flat_residuals(&field).unwrap();
        assert!(rc < 1e-15 && rw < 1e-15);
        // non-commuting constants
        let y = p_block(4, 0, 3, 1.0);
        let field2 = OneFormField::new(
            grid,
            vec![vec![x; npts], vec![y; npts]],
        )
        .unwrap();
        let (rc2, rw2) = flat_residuals(&field2).unwrap();
        assert!(rc2 < 1e-15);
        assert!(rw2 > 0.5);
    }

    #[test]
    fn eigenspace_residual_detects_diagonal_blocks() {
        let grid = Grid::centered_square(1.0, 4).unwrap();
        let p = SignatureForm::blocks(&[(2, 1), (2, -1)]);
        let good = CurvedFlatData {
            eta: OneFormField::new(
                grid.clone(),
                vec![
                    vec![p_block(4, 0, 2, 1.0); grid.num_points()],
                    vec![p_block(4, 1, 3, 1.0); grid.num_points()],
                ],
            )
            .unwrap(),
            p_form: p.clone(),
        };
        assert!(good.eigenspace_residual() < 1e-15);
        let bad = CurvedFlatData {
            eta: OneFormField::new(
                grid.clone(),
                vec![
                    vec![p_block(4, 0, 1, 1.0); grid.num_points()],
                    vec![zeros(4); grid.num_points()],
                ],
            )
            .unwrap(),
            p_form: p,
        };
        assert!(bad.eigenspace_residual() > 0.5);
    }

    #[test]
    fn gauge_normalize_zero_a0_is_identity() {
        let grid = Grid::centered_square(1.0, 8).unwrap();
        let a0 = OneFormField::zero(grid.clone(), 4);
        let a1 = OneFormField::new(
            grid.clone(),
            vec![
                vec![p_block(4, 0, 2, 0.7); grid.num_points()],
                vec![p_block(4, 1, 3, -0.3); grid.num_points()],
            ],
        )
        .unwrap();
        let out = gauge_normalize(&a0, &a1, 1e-8, &IntegrateOpts::default()).unwrap();
        for ax in 0..2 {
            for (m, m0) in out.components[ax].iter().zip(&a1.components[ax]) {
                assert!(max_abs(&(m - m0)) < 1e-12);
            }
        }
    }

    #[test]
    fn gauge_normalize_commuting_oracle() {
        // A0_u = S, A0_v = 2S with S block-diagonal skew; K = exp((u+2v)S)
        let grid = Grid::centered_square(0.8, 16).unwrap();
        let mut s = zeros(4);
        s[(0, 1)] = cr(1.0);
        s[(1, 0)] = cr(-1.0);
        let npts = grid.num_points();
        let a0 = OneFormField::new(
            grid.clone(),
            vec![vec![s.clone(); npts], vec![&s * cr(2.0); npts]],
        )
        .unwrap();
        let nmat = p_block(4, 0, 2, 1.0);
        let a1 = OneFormField::new(
            grid.clone(),
            vec![vec![nmat.clone(); npts], vec![zeros(4); npts]],
        )
        .unwrap();
        let out = gauge_normalize(&a0, &a1, 1e-8, &IntegrateOpts::default()).unwrap();
        for i in 0..grid.nu() {
            for j in 0..grid.nv() {
                let (u, v) = grid.coords(i, j);
                let k = expm(&(&s * cr(u + 2.0 * v)));
                let k_inv = expm(&(&s * cr(-(u + 2.0 * v))));
                let oracle = &k * &nmat * k_inv;
                let got = &out.components[0][grid.idx(i, j)];
                assert!(max_abs(&(got - oracle)) < 1e-8);
            }
        }
    }

    #[test]
    fn gauge_normalize_rejects_nonflat_a0() {
        let grid = Grid::centered_square(1.0, 8).unwrap();
        // A0_u depends on v but A0_v = 0: not flat
        let mut s = zeros(4);
        s[(0, 1)] = cr(1.0);
        s[(1, 0)] = cr(-1.0);
        let sc = s.clone();
        let a0 = OneFormField::from_fn(grid.clone(), move |_u, v| {
            [&sc * cr(v.sin()), zeros(4)]
        })
        .unwrap();
        let a1 = OneFormField::zero(grid, 4);
        assert!(matches!(
            gauge_normalize(&a0, &a1, 1e-6, &IntegrateOpts::default()),
            Err(Error::NonIntegrable(_))
        ));
    }

    #[test]
    fn curved_flat_zero_eta() {
        let grid = Grid::centered_square(1.0, 6).unwrap();
        let eta = OneFormField::zero(grid, 4);
        let fam = curved_flat_from_eta(&eta, &[cr(1.0), c(0.0, 1.0)], 1e-8, &IntegrateOpts::default())
            .unwrap();
        for fr in &fam.frames {
            for f in fr {
                assert!(max_abs(&(f - identity(4))) < 1e-14);
            }
        }
    }

    #[test]
    fn curved_flat_rank_one_oracle_and_symmetry() {
        // eta = N du with constant N in the off-diagonal block:
        // F(u, v, lambda) = exp(u * lambda * N)
        let grid = Grid::centered_square(1.0, 12).unwrap();
        let nmat = p_block(4, 0, 2, 0.8);
        let npts = grid.num_points();
        let eta = OneFormField::new(
            grid.clone(),
            vec![vec![nmat.clone(); npts], vec![zeros(4); npts]],
        )
        .unwrap();
        let lam = c(0.4, 0.3);
        let fam =
            curved_flat_from_eta(&eta, &[lam, -lam], 1e-8, &IntegrateOpts::default()).unwrap();
        let p = SignatureForm::blocks(&[(2, 1), (2, -1)]);
        for i in 0..grid.nu() {
            for j in 0..grid.nv() {
                let (u, _) = grid.coords(i, j);
                let idx = grid.idx(i, j);
                let oracle = expm(&(&nmat * (lam * cr(u))));
                assert!(max_abs(&(&fam.frames[0][idx] - oracle)) < 1e-10);
                // sigma-fixedness: Ad_P F(-lambda) = F(lambda)
                let minus = &fam.frames[1][idx];
                let mut ad = minus.clone();
                for r in 0..4 {
                    for col in 0..4 {
                        ad[(r, col)] *= cr(p.diag()[r] * p.diag()[col]);
                    }
                }
                assert!(max_abs(&(ad - &fam.frames[0][idx])) < 1e-10);
            }
        }
    }

    #[test]
    fn curved_flat_real_for_real_eta_and_lambda() {
        let grid = Grid::centered_square(1.0, 8).unwrap();
        let eta = OneFormField::from_fn(grid.clone(), |u, _v| {
            [p_block(4, 0, 2, u.cos()), p_block(4, 0, 2, 1.0)]
        })
        .unwrap();
        let fam = curved_flat_from_eta(&eta, &[cr(0.7)], 1e-2, &IntegrateOpts::default()).unwrap();
        for f in &fam.frames[0] {
            assert!(matrix::max_abs_im(f) < 1e-12);
        }
    }

    fn strip_for_tests(cells: usize, ny: usize) -> ComplexStrip {
        let base = Grid::centered_square(0.8, cells).unwrap();
        ComplexStrip::new(base, [0.2, 0.2], [ny, ny]).unwrap()
    }

    #[test]
    fn complexify_polynomial_is_exact() {
        let e01 = parse("(mul u v)").unwrap();
        let mut comps = [vec![Expr::zero(); 4], vec![Expr::zero(); 4]];
        comps[0][1] = e01.clone();
        comps[0][2] = Expr::Neg(Box::new(e01)); // row-major 2x2: [[0, uv], [-uv, 0]]
        let eta = AnalyticOneForm { n: 2, comps };
        let strip = strip_for_tests(4, 3);
        let field = complexify_eta(&eta, &strip).unwrap();
        let (zu, zv) = strip.coords(1, 2, 0, 2);
        let got = &field.components[0][strip.idx(1, 2, 0, 2)];
        assert!((got[(0, 1)] - zu * zv).norm() < 1e-15);
        assert!((got[(1, 0)] + zu * zv).norm() < 1e-15);
    }

    #[test]
    fn complexify_matches_real_slice() {
        let mut comps = [vec![Expr::zero(); 4], vec![Expr::zero(); 4]];
        comps[0][1] = parse("(cos v)").unwrap();
        comps[0][2] = parse("(neg (cos v))").unwrap();
        comps[1][3] = parse("(sin u)").unwrap();
        let eta = AnalyticOneForm { n: 2, comps };
        let strip = strip_for_tests(6, 5);
        let field = complexify_eta(&eta, &strip).unwrap();
        let sampled = eta.sample(&strip.base).unwrap();
        let (c0, c1) = (strip.center(0), strip.center(1));
        for i in 0..strip.base.nu() {
            for j in 0..strip.base.nv() {
                for ax in 0..2 {
                    let a = &field.components[ax][strip.idx(i, j, c0, c1)];
                    let b = &sampled.components[ax][strip.base.idx(i, j)];
                    assert!(max_abs(&(a - b)) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn complexify_detects_pole_and_adapts() {
        // 1/(1+u^2) has poles at u = +-i; a strip of half-width 2 whose
        // imaginary samples hit y = 1 fails, and adaptive halving recovers
        let mut comps = [vec![Expr::zero(); 1], vec![Expr::zero(); 1]];
        comps[0][0] = parse("(pow (add (const 1) (mul u u)) -1)").unwrap();
        let eta = AnalyticOneForm { n: 1, comps };
        let base = Grid::centered_square(1.0, 4).unwrap();
        let strip = ComplexStrip::new(base, [2.0, 2.0], [5, 5]).unwrap();
        assert!(complexify_eta(&eta, &strip).is_err());
        let (_, used) = complexify_eta_adaptive(&eta, &strip).unwrap();
        assert!(used.eps[0] < 1.0);
    }

    #[test]
    fn extend_holo_zero_eta() {
        let strip = strip_for_tests(4, 3);
        let field = StripField {
            strip: strip.clone(),
            components: [
                vec![zeros(3); strip.num_points()],
                vec![zeros(3); strip.num_points()],
            ],
        };
        let frames = extend_frame_holo_at(&field, cr(1.3), 2, ImagOrder::FirstAxisThenSecond)
            .unwrap();
        for f in &frames {
            assert!(max_abs(&(f - identity(3))) < 1e-14);
        }
    }

    fn rank_one_field(strip: &ComplexStrip, nmat: &CMat) -> StripField {
        StripField {
            strip: strip.clone(),
            components: [
                vec![nmat.clone(); strip.num_points()],
                vec![zeros(4); strip.num_points()],
            ],
        }
    }

    #[test]
    fn extend_holo_rank_one_oracle() {
        let strip = strip_for_tests(8, 5);
        let nmat = p_block(4, 0, 3, 0.9);
        let field = rank_one_field(&strip, &nmat);
        let lam = cr(0.8);
        let frames = extend_frame_holo_at(&field, lam, 2, ImagOrder::FirstAxisThenSecond).unwrap();
        for i in 0..strip.base.nu() {
            for j in 0..strip.base.nv() {
                for a in 0..strip.ny[0] {
                    for b in 0..strip.ny[1] {
                        let (zu, _) = strip.coords(i, j, a, b);
                        let oracle = expm(&(&nmat * (lam * zu)));
                        let got = &frames[strip.idx(i, j, a, b)];
                        assert!(max_abs(&(got - oracle)) < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn extend_holo_cr_residual_small() {
        let base = Grid::new(
            vec![
                Axis { lo: -0.8, hi: 0.8, count: 17 },
                Axis { lo: -0.8, hi: 0.8, count: 17 },
            ],
            vec![8, 8],
        )
        .unwrap();
        let strip = ComplexStrip::new(base, [0.2, 0.2], [5, 5]).unwrap();
        let nmat = p_block(4, 0, 3, 0.9);
        let field = rank_one_field(&strip, &nmat);
        let frames =
            extend_frame_holo_at(&field, cr(0.8), 2, ImagOrder::FirstAxisThenSecond).unwrap();
        let res = cr_residual(&frames, &strip).unwrap();
        assert!(res < 1e-6, "CR residual {res:.3e}");
    }

    #[test]
    fn extend_holo_restriction_and_order_independence() {
        let strip = strip_for_tests(8, 5);
        // u- and v-components that commute so the field is exactly flat
        let nmat = p_block(4, 0, 2, 0.5);
        let field = StripField {
            strip: strip.clone(),
            components: [
                vec![nmat.clone(); strip.num_points()],
                vec![nmat.clone() * cr(2.0); strip.num_points()],
            ],
        };
        let lam = cr(1.1);
        let f1 = extend_frame_holo_at(&field, lam, 2, ImagOrder::FirstAxisThenSecond).unwrap();
        let f2 = extend_frame_holo_at(&field, lam, 2, ImagOrder::SecondAxisThenFirst).unwrap();
        let mut cross = 0.0_f64;
        for (a, b) in f1.iter().zip(&f2) {
            cross = cross.max(max_abs(&(a - b)));
        }
        assert!(cross < 1e-9, "order disagreement {cross:.3e}");
        // restriction to the real slice equals the 2D integration
        let eta2d = OneFormField::new(
            strip.base.clone(),
            vec![
                vec![nmat.clone(); strip.base.num_points()],
                vec![nmat * cr(2.0); strip.base.num_points()],
            ],
        )
        .unwrap();
        let flat = curved_flat_from_eta(&eta2d, &[lam], 1e-8, &IntegrateOpts::default()).unwrap();
        let slice = real_slice(&f1, &strip);
        for (a, b) in slice.iter().zip(&flat.frames[0]) {
            assert!(max_abs(&(a - b)) < 1e-10);
        }
    }
}
