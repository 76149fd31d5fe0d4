//! Parameter-domain grids, matrix-valued 1-form fields, Maurer-Cartan
//! residuals, and integration of flat-connection families into frames.
//!
//! Integration is per-edge: F_next = F * exp(Omega) with Omega a two-node
//! Gauss-Magnus truncation (4th order), optionally followed by a polar-type
//! projection back onto the quadratic group of a signature form.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loopalg::SignatureForm;
use crate::matrix::{self, commutator, cr, expm, sqrtm, C64, CMat};

/// One sampled axis of a rectangular parameter domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    /// Number of samples (>= 2), so the cell count is `count - 1`.
    pub count: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }
}

/// Rectangular sample grid with a distinguished base point. Integration
/// supports two axes; algebraic operations accept any dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    base: Vec<usize>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>, base: Vec<usize>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Domain("grid needs at least one axis".into()));
        }
        if base.len() != axes.len() {
            return Err(Error::Dimension("base point arity mismatch".into()));
        }
        for (ax, &b) in axes.iter().zip(&base) {
            if ax.count < 2 {
                return Err(Error::Domain("axis needs at least 2 samples".into()));
            }
            if !(ax.hi > ax.lo) {
                return Err(Error::Domain("axis range is degenerate".into()));
            }
            if b >= ax.count {
                return Err(Error::Domain("base point outside grid".into()));
            }
        }
        Ok(Self { axes, base })
    }

    /// Square 2D grid centred on the origin with the base point at (0, 0).
    /// `cells` must be even so the origin is a sample.
    pub fn centered_square(half_width: f64, cells: usize) -> Result<Self> {
        if cells % 2 != 0 {
            return Err(Error::Domain("cell count must be even".into()));
        }
        let ax = Axis {
            lo: -half_width,
            hi: half_width,
            count: cells + 1,
        };
        Grid::new(vec![ax.clone(), ax], vec![cells / 2, cells / 2])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn base(&self) -> &[usize] {
        &self.base
    }

    pub fn num_points(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_surface(&self) -> bool {
        self.axes.len() == 2
    }

    /// Row-major linear index for a 2D grid (axis 0 outer).
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.axes[1].count + j
    }

    pub fn nu(&self) -> usize {
        self.axes[0].count
    }

    pub fn nv(&self) -> usize {
        self.axes[1].count
    }

    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.axes[0].coord(i), self.axes[1].coord(j))
    }

    pub(crate) fn require_surface(&self) -> Result<()> {
        if self.is_surface() {
            Ok(())
        } else {
            Err(Error::Domain(
                "operation requires a two-axis grid".into(),
            ))
        }
    }
}

/// A matrix-valued 1-form sampled on a grid: one matrix per point per axis.
#[derive(Debug, Clone)]
pub struct OneFormField {
    pub grid: Grid,
    /// components[axis][linear point index]
    pub components: Vec<Vec<CMat>>,
}

impl OneFormField {
    pub fn new(grid: Grid, components: Vec<Vec<CMat>>) -> Result<Self> {
        if components.len() != grid.axes().len() {
            return Err(Error::Dimension("one component list per axis required".into()));
        }
        let npts = grid.num_points();
        let mut shape = None;
        for comp in &components {
            if comp.len() != npts {
                return Err(Error::Dimension("component count != grid points".into()));
            }
            for m in comp {
                let s = shape.get_or_insert((m.nrows(), m.ncols()));
                if (m.nrows(), m.ncols()) != *s {
                    return Err(Error::Dimension(
                        "non-uniform matrix dimensions in field".into(),
                    ));
                }
            }
        }
        Ok(Self { grid, components })
    }

    pub fn zero(grid: Grid, n: usize) -> Self {
        let npts = grid.num_points();
        let comps = vec![vec![matrix::zeros(n); npts]; grid.axes().len()];
        Self {
            grid,
            components: comps,
        }
    }

    pub fn matrix_dim(&self) -> usize {
        self.components
            .first()
            .and_then(|c| c.first())
            .map(|m| m.nrows())
            .unwrap_or(0)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.components
            .first()
            .and_then(|c| c.first())
            .map(|m| (m.nrows(), m.ncols()))
            .unwrap_or((0, 0))
    }

    /// Zero field of a rectangular shape.
    pub fn zero_rect(grid: Grid, rows: usize, cols: usize) -> Self {
        let npts = grid.num_points();
        let comps = vec![vec![CMat::zeros(rows, cols); npts]; grid.axes().len()];
        Self {
            grid,
            components: comps,
        }
    }

    /// Build from a closure giving per-axis components at 2D grid points.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> [CMat; 2]) -> Result<Self> {
        grid.require_surface()?;
        let (nu, nv) = (grid.nu(), grid.nv());
        let mut comps = vec![Vec::with_capacity(nu * nv), Vec::with_capacity(nu * nv)];
        for i in 0..nu {
            for j in 0..nv {
                let (u, v) = grid.coords(i, j);
                let [au, av] = f(u, v);
                comps[0].push(au);
                comps[1].push(av);
            }
        }
        OneFormField::new(grid, comps)
    }
}

/// A Laurent family of 1-form fields: degree -> coefficient field, all on
/// one grid. Evaluating at a loop parameter gives a single 1-form.
#[derive(Debug, Clone)]
pub struct ConnectionFamily {
    pub coeffs: std::collections::BTreeMap<i32, OneFormField>,
}

impl ConnectionFamily {
    pub fn new(coeffs: std::collections::BTreeMap<i32, OneFormField>) -> Result<Self> {
        let mut iter = coeffs.values();
        if let Some(first) = iter.next() {
            for f in iter {
                if f.grid != first.grid {
                    return Err(Error::Dimension(
                        "connection coefficients on different grids".into(),
                    ));
                }
                if f.matrix_dim() != first.matrix_dim() {
                    return Err(Error::Dimension(
                        "connection coefficients of different matrix size".into(),
                    ));
                }
            }
        }
        Ok(Self { coeffs })
    }

    pub fn grid(&self) -> Result<&Grid> {
        self.coeffs
            .values()
            .next()
            .map(|f| &f.grid)
            .ok_or_else(|| Error::Domain("empty connection family".into()))
    }

    pub fn matrix_dim(&self) -> usize {
        self.coeffs
            .values()
            .next()
            .map(|f| f.matrix_dim())
            .unwrap_or(0)
    }

    /// Evaluate the Laurent polynomial at `lambda`, producing per-axis
    /// grids of matrices.
    pub fn eval(&self, lambda: C64) -> Result<OneFormField> {
        let grid = self.grid()?.clone();
        let n = self.matrix_dim();
        let naxes = grid.axes().len();
        let npts = grid.num_points();
        let mut comps = vec![vec![matrix::zeros(n); npts]; naxes];
        for (&d, field) in &self.coeffs {
            if lambda == cr(0.0) && d < 0 {
                return Err(Error::Domain("lambda must be nonzero".into()));
            }
            let w = lambda.powi(d);
            for ax in 0..naxes {
                for (acc, m) in comps[ax].iter_mut().zip(&field.components[ax]) {
                    *acc += m * w;
                }
            }
        }
        OneFormField::new(grid, comps)
    }
}

/// Evaluation interface used by the integrator: per-axis connection
/// matrices at a continuous domain point, for a fixed loop parameter.
pub trait ConnectionEval: Sync {
    fn matrix_dim(&self) -> usize;
    fn eval_at(&self, u: f64, v: f64) -> [CMat; 2];
}

/// Analytic connection given by a closure.
pub struct AnalyticConnection<F: Fn(f64, f64) -> [CMat; 2] + Sync> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(f64, f64) -> [CMat; 2] + Sync> ConnectionEval for AnalyticConnection<F> {
    fn matrix_dim(&self) -> usize {
        self.n
    }

    fn eval_at(&self, u: f64, v: f64) -> [CMat; 2] {
        (self.f)(u, v)
    }
}

/// Grid-sampled connection evaluated off-node by tensor cubic interpolation
/// (4x4 Lagrange stencil, clamped at the boundary).
pub struct SampledConnection {
    field: OneFormField,
}

impl SampledConnection {
    pub fn new(family: &ConnectionFamily, lambda: C64) -> Result<Self> {
        let field = family.eval(lambda)?;
        field.grid.require_surface()?;
        Ok(Self { field })
    }

    fn stencil(axis: &Axis, x: f64) -> ([usize; 4], [f64; 4]) {
        let t = ((x - axis.lo) / axis.step()).clamp(0.0, (axis.count - 1) as f64);
        let mut i0 = t.floor() as isize - 1;
        i0 = i0.clamp(0, axis.count as isize - 4);
        let idxs = [
            i0 as usize,
            i0 as usize + 1,
            i0 as usize + 2,
            i0 as usize + 3,
        ];
        let xs = idxs.map(|i| axis.coord(i));
        let mut w = [0.0; 4];
        for a in 0..4 {
            let mut prod = 1.0;
            for b in 0..4 {
                if a != b {
                    prod *= (x - xs[b]) / (xs[a] - xs[b]);
                }
            }
            w[a] = prod;
        }
        (idxs, w)
    }
}

impl ConnectionEval for SampledConnection {
    fn matrix_dim(&self) -> usize {
        self.field.matrix_dim()
    }

    fn eval_at(&self, u: f64, v: f64) -> [CMat; 2] {
        let grid = &self.field.grid;
        let (iu, wu) = Self::stencil(&grid.axes()[0], u);
        let (iv, wv) = Self::stencil(&grid.axes()[1], v);
        let n = self.matrix_dim();
        let mut out = [matrix::zeros(n), matrix::zeros(n)];
        for (a, &i) in iu.iter().enumerate() {
            for (b, &j) in iv.iter().enumerate() {
                let w = cr(wu[a] * wv[b]);
                let p = grid.idx(i, j);
                out[0] += &self.field.components[0][p] * w;
                out[1] += &self.field.components[1][p] * w;
            }
        }
        out
    }
}

/// Options for frame integration.
#[derive(Debug, Clone)]
pub struct IntegrateOpts {
    /// Subdivisions per grid edge (>= 1).
    pub substeps: usize,
    /// Project each step back onto the group of this signature form.
    pub project: Option<SignatureForm>,
    /// Traverse axis 1 first instead of axis 0 (for path-independence checks).
    pub column_major: bool,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        Self {
            substeps: 2,
            project: None,
            column_major: false,
        }
    }
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_88; // sqrt(3)/6

/// One Magnus step for dF = F * A along a single axis over [t0, t1].
fn magnus_step(
    f: &CMat,
    axis: usize,
    fixed: f64,
    t0: f64,
    t1: f64,
    conn: &dyn ConnectionEval,
) -> CMat {
    let h = t1 - t0;
    let mid = 0.5 * (t0 + t1);
    let (p1, p2) = (mid - GAUSS_OFFSET * h, mid + GAUSS_OFFSET * h);
    let (a1, a2) = if axis == 0 {
        (
            conn.eval_at(p1, fixed)[0].clone(),
            conn.eval_at(p2, fixed)[0].clone(),
        )
    } else {
        (
            conn.eval_at(fixed, p1)[1].clone(),
            conn.eval_at(fixed, p2)[1].clone(),
        )
    };
    // For the right equation dF = F A the bracket enters with + sign
    // (transpose of the left-equation Magnus truncation).
    let omega = (&a1 + &a2) * cr(0.5 * h) + commutator(&a1, &a2) * cr(h * h * 3.0_f64.sqrt() / 12.0);
    f * expm(&omega)
}

/// Polar-type projection of F onto { F : F^t J F = J }:
/// F <- F * (J F^t J F)^{-1/2}. Exact for F already in the group.
pub fn project_to_group(f: &CMat, j: &SignatureForm) -> Result<CMat> {
    let jm = j.matrix();
    let g = &jm * f.transpose() * &jm * f;
    let s = sqrtm(&g)?;
    Ok(f * matrix::try_inverse(&s)?)
}

fn march(
    frames: &mut [Option<CMat>],
    grid: &Grid,
    conn: &dyn ConnectionEval,
    opts: &IntegrateOpts,
    axis: usize,
    fixed_idx: usize,
    from: usize,
) -> Result<()> {
    let ax = &grid.axes()[axis];
    let fixed = grid.axes()[1 - axis].coord(fixed_idx);
    let lin = |k: usize| {
        if axis == 0 {
            grid.idx(k, fixed_idx)
        } else {
            grid.idx(fixed_idx, k)
        }
    };
    // forward then backward from the starting sample
    for dir in [1isize, -1isize] {
        let mut k = from;
        loop {
            let next = k as isize + dir;
            if next < 0 || next >= ax.count as isize {
                break;
            }
            let next = next as usize;
            let mut f = frames[lin(k)]
                .clone()
                .ok_or_else(|| Error::Numerical("integration order bug".into()))?;
            let (t0, t1) = (ax.coord(k), ax.coord(next));
            let h = (t1 - t0) / opts.substeps as f64;
            for s in 0..opts.substeps {
                let s0 = t0 + h * s as f64;
                f = magnus_step(&f, axis, fixed, s0, s0 + h, conn);
            }
            if let Some(j) = &opts.project {
                f = project_to_group(&f, j)?;
            }
            frames[lin(next)] = Some(f);
            k = next;
        }
    }
    Ok(())
}

/// Integrate dF = F * A over a 2D grid with F(base) = I.
///
/// Marches along one axis through the base point, then fills the transverse
/// direction per line. Returns frames in row-major order (axis 0 outer).
pub fn integrate_frame_eval(
    conn: &dyn ConnectionEval,
    grid: &Grid,
    opts: &IntegrateOpts,
) -> Result<Vec<CMat>> {
    grid.require_surface()?;
    let n = conn.matrix_dim();
    let mut frames: Vec<Option<CMat>> = vec![None; grid.num_points()];
    let (bi, bj) = (grid.base()[0], grid.base()[1]);
    frames[grid.idx(bi, bj)] = Some(matrix::identity(n));
    let (first_axis, first_fixed, first_from) = if opts.column_major {
        (1, bi, bj)
    } else {
        (0, bj, bi)
    };
    march(&mut frames, grid, conn, opts, first_axis, first_fixed, first_from)?;
    let second_axis = 1 - first_axis;
    let transverse_count = grid.axes()[first_axis].count;
    let second_from = if opts.column_major { bi } else { bj };
    for line in 0..transverse_count {
        march(&mut frames, grid, conn, opts, second_axis, line, second_from)?;
    }
    frames
        .into_iter()
        .map(|f| f.ok_or_else(|| Error::Numerical("unfilled grid point".into())))
        .collect()
}

/// Default per-cell threshold on the Maurer-Cartan residual.
pub const MC_RESIDUAL_THRESHOLD: f64 = 1e-6;

/// Integrate a sampled connection family at one loop parameter, rejecting
/// inputs whose flatness residual exceeds `threshold`.
pub fn integrate_frame(
    family: &ConnectionFamily,
    lambda: C64,
    threshold: f64,
    opts: &IntegrateOpts,
) -> Result<Vec<CMat>> {
    let res = mc_residual(family, lambda)?;
    if res > threshold {
        return Err(Error::NonIntegrable(format!(
            "Maurer-Cartan residual {res:.3e} exceeds threshold {threshold:.1e} at lambda = {lambda}"
        )));
    }
    let conn = SampledConnection::new(family, lambda)?;
    let grid = family.grid()?.clone();
    integrate_frame_eval(&conn, &grid, opts)
}

/// Frames of a connection family over a list of loop-parameter samples.
#[derive(Debug, Clone)]
pub struct FrameFamily {
    pub lambda_samples: Vec<C64>,
    /// frames[sample][row-major grid point]
    pub frames: Vec<Vec<CMat>>,
    pub grid: Grid,
    pub normalized: bool,
}

impl FrameFamily {
    /// Base-point normalization check: identity to 1e-12 at every sample.
    pub fn base_residual(&self) -> f64 {
        let p = self.grid.idx(self.grid.base()[0], self.grid.base()[1]);
        self.frames
            .iter()
            .map(|fr| {
                let n = fr[p].nrows();
                matrix::max_abs(&(&fr[p] - matrix::identity(n)))
            })
            .fold(0.0, f64::max)
    }
}

/// Integrate a family at many loop parameters in parallel.
pub fn integrate_family(
    family: &ConnectionFamily,
    lambdas: &[C64],
    threshold: f64,
    opts: &IntegrateOpts,
) -> Result<FrameFamily> {
    let grid = family.grid()?.clone();
    let frames: Result<Vec<_>> = lambdas
        .par_iter()
        .map(|&lam| integrate_frame(family, lam, threshold, opts))
        .collect();
    Ok(FrameFamily {
        lambda_samples: lambdas.to_vec(),
        frames: frames?,
        grid,
        normalized: true,
    })
}

/// Discrete F^{-1} dF by finite differences: central in the interior,
/// one-sided at the boundary, O(h^2).
pub fn mc_form(frames: &[CMat], grid: &Grid) -> Result<OneFormField> {
    grid.require_surface()?;
    if frames.len() != grid.num_points() {
        return Err(Error::Dimension("frame count != grid points".into()));
    }
    let (nu, nv) = (grid.nu(), grid.nv());
    let (hu, hv) = (grid.axes()[0].step(), grid.axes()[1].step());
    let n = frames[0].nrows();
    let mut comps = vec![vec![matrix::zeros(n); frames.len()]; 2];
    let diff = |a: &CMat, b: &CMat, h: f64| (b - a) * cr(1.0 / h);
    for i in 0..nu {
        for j in 0..nv {
            let p = grid.idx(i, j);
            let f_inv = matrix::try_inverse(&frames[p])?;
            let du = if i == 0 {
                diff(&frames[p], &frames[grid.idx(1, j)], hu)
            } else if i == nu - 1 {
                diff(&frames[grid.idx(nu - 2, j)], &frames[p], hu)
            } else {
                diff(&frames[grid.idx(i - 1, j)], &frames[grid.idx(i + 1, j)], 2.0 * hu)
            };
            let dv = if j == 0 {
                diff(&frames[p], &frames[grid.idx(i, 1)], hv)
            } else if j == nv - 1 {
                diff(&frames[grid.idx(i, nv - 2)], &frames[p], hv)
            } else {
                diff(&frames[grid.idx(i, j - 1)], &frames[grid.idx(i, j + 1)], 2.0 * hv)
            };
            comps[0][p] = &f_inv * du;
            comps[1][p] = &f_inv * dv;
        }
    }
    OneFormField::new(grid.clone(), comps)
}

/// F^{-1} dF from analytic derivatives of the frame, avoiding stencil error.
pub fn mc_form_from_derivs(f: &CMat, df_du: &CMat, df_dv: &CMat) -> Result<[CMat; 2]> {
    let f_inv = matrix::try_inverse(f)?;
    Ok([&f_inv * df_du, &f_inv * df_dv])
}

/// Max over grid cells of the discrete flatness 2-form
/// d_u A_v - d_v A_u + [A_u, A_v], evaluated at `lambda` and measured at
/// cell centres.
pub fn mc_residual(family: &ConnectionFamily, lambda: C64) -> Result<f64> {
    let field = family.eval(lambda)?;
    let grid = &field.grid;
    grid.require_surface()?;
    let (nu, nv) = (grid.nu(), grid.nv());
    let (hu, hv) = (grid.axes()[0].step(), grid.axes()[1].step());
    let au = &field.components[0];
    let av = &field.components[1];
    let cells: Vec<(usize, usize)> = (0..nu - 1)
        .flat_map(|i| (0..nv - 1).map(move |j| (i, j)))
        .collect();
    let worst = cells
        .par_iter()
        .map(|&(i, j)| {
            let p00 = grid.idx(i, j);
            let p10 = grid.idx(i + 1, j);
            let p01 = grid.idx(i, j + 1);
            let p11 = grid.idx(i + 1, j + 1);
            // cell-centred derivatives and averaged components
            let dav_du = (&av[p10] + &av[p11] - &av[p00] - &av[p01]) * cr(0.5 / hu);
            let dau_dv = (&au[p01] + &au[p11] - &au[p00] - &au[p10]) * cr(0.5 / hv);
            let au_mid = (&au[p00] + &au[p10] + &au[p01] + &au[p11]) * cr(0.25);
            let av_mid = (&av[p00] + &av[p10] + &av[p01] + &av[p11]) * cr(0.25);
            let res = dav_du - dau_dv + commutator(&au_mid, &av_mid);
            matrix::max_abs(&res)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{c, identity, max_abs, zeros};
    use std::collections::BTreeMap;

    fn skew3(a: f64, b: f64, g: f64) -> CMat {
        let mut m = zeros(3);
        m[(0, 1)] = cr(-a);
        m[(1, 0)] = cr(a);
        m[(0, 2)] = cr(-b);
        m[(2, 0)] = cr(b);
        m[(1, 2)] = cr(-g);
        m[(2, 1)] = cr(g);
        m
    }

    fn zero_family(grid: Grid, n: usize) -> ConnectionFamily {
        ConnectionFamily::new(BTreeMap::from([(0, OneFormField::zero(grid, n))])).unwrap()
    }

    #[test]
    fn zero_connection_gives_identity_frames() {
        let grid = Grid::centered_square(1.0, 8).unwrap();
        let fam = zero_family(grid.clone(), 3);
        let frames =
            integrate_frame(&fam, cr(1.0), MC_RESIDUAL_THRESHOLD, &IntegrateOpts::default())
                .unwrap();
        for f in &frames {
            assert!(max_abs(&(f - identity(3))) < 1e-14);
        }
    }

    #[test]
    fn commuting_constant_pair_matches_exponential() {
        // A_u = X, A_v = X^2 commute; F = exp(u X + v X^2)
        let x = skew3(0.4, -0.2, 0.7);
        let x2 = &x * &x;
        let conn = AnalyticConnection {
            n: 3,
            f: |u: f64, v: f64| {
                let _ = (u, v);
                [skew3(0.4, -0.2, 0.7), {
                    let x = skew3(0.4, -0.2, 0.7);
                    &x * &x
                }]
            },
        };
        let grid = Grid::centered_square(1.0, 16).unwrap();
        let frames = integrate_frame_eval(&conn, &grid, &IntegrateOpts::default()).unwrap();
        for i in 0..grid.nu() {
            for j in 0..grid.nv() {
                let (u, v) = grid.coords(i, j);
                let oracle = expm(&(&x * cr(u) + &x2 * cr(v)));
                let err = max_abs(&(&frames[grid.idx(i, j)] - oracle));
                assert!(err < 1e-8, "err {err} at ({u}, {v})");
            }
        }
    }

    fn flat_noncommuting() -> (
        AnalyticConnection<impl Fn(f64, f64) -> [CMat; 2] + Sync>,
        impl Fn(f64, f64) -> CMat,
    ) {
        // F(u, v) = exp(u X) exp(v Y): A_u = Ad_{exp(-vY)} X, A_v = Y
        let x = skew3(0.9, 0.0, 0.0);
        let y = skew3(0.0, 0.0, 1.1);
        let xc = x.clone();
        let yc = y.clone();
        let conn = AnalyticConnection {
            n: 3,
            f: move |_u: f64, v: f64| {
                let e = expm(&(&yc * cr(-v)));
                let e_inv = expm(&(&yc * cr(v)));
                [&e * &xc * &e_inv, yc.clone()]
            },
        };
        let oracle = move |u: f64, v: f64| expm(&(&x * cr(u))) * expm(&(&y * cr(v)));
        (conn, oracle)
    }

    #[test]
    fn path_independence_for_flat_connection() {
        let (conn, oracle) = flat_noncommuting();
        let grid = Grid::centered_square(1.0, 12).unwrap();
        let row_major =
            integrate_frame_eval(&conn, &grid, &IntegrateOpts::default()).unwrap();
        let col_major = integrate_frame_eval(
            &conn,
            &grid,
            &IntegrateOpts {
                column_major: true,
                ..Default::default()
            },
        )
        .unwrap();
        let mut one_path_err = 0.0_f64;
        let mut cross_err = 0.0_f64;
        for i in 0..grid.nu() {
            for j in 0..grid.nv() {
                let (u, v) = grid.coords(i, j);
                let p = grid.idx(i, j);
                one_path_err = one_path_err.max(max_abs(&(&row_major[p] - oracle(u, v))));
                cross_err = cross_err.max(max_abs(&(&row_major[p] - &col_major[p])));
            }
        }
        assert!(cross_err <= 10.0 * one_path_err.max(1e-12));
    }

    #[test]
    fn integrator_is_fourth_order() {
        // commuting but non-constant: A_u = cos(u) X, A_v = sin(v) X,
        // F = exp((sin u + 1 - cos v) X); quadrature error dominates.
        let x = skew3(0.0, 1.3, 0.0);
        let xc = x.clone();
        let conn = AnalyticConnection {
            n: 3,
            f: move |u: f64, v: f64| [&xc * cr(u.cos()), &xc * cr(v.sin())],
        };
        let oracle = |u: f64, v: f64| expm(&(&x * cr(u.sin() + 1.0 - v.cos())));
        let err_for = |cells: usize| {
            let grid = Grid::centered_square(1.0, cells).unwrap();
            let opts = IntegrateOpts {
                substeps: 1,
                ..Default::default()
            };
            let frames = integrate_frame_eval(&conn, &grid, &opts).unwrap();
            let mut worst = 0.0_f64;
            for i in 0..grid.nu() {
                for j in 0..grid.nv() {
                    let (u, v) = grid.coords(i, j);
                    worst = worst.max(max_abs(&(&frames[grid.idx(i, j)] - oracle(u, v))));
                }
            }
            worst
        };
        let coarse = err_for(8);
        let fine = err_for(16);
        assert!(
            coarse / fine >= 8.0,
            "order check failed: coarse {coarse:.3e}, fine {fine:.3e}"
        );
    }

    #[test]
    fn projection_keeps_group_residual_small() {
        let (conn, _) = flat_noncommuting();
        let j = SignatureForm::euclidean(3);
        let grid = Grid::centered_square(2.0, 20).unwrap();
        let opts = IntegrateOpts {
            project: Some(j.clone()),
            ..Default::default()
        };
        let frames = integrate_frame_eval(&conn, &grid, &opts).unwrap();
        for f in &frames {
            assert!(matrix::group_residual_matrix(f, j.diag()) < 1e-8);
        }
    }

    #[test]
    fn mc_form_of_constant_frame_is_zero() {
        let grid = Grid::centered_square(1.0, 6).unwrap();
        let mut cmat = identity(3);
        cmat[(0, 2)] = c(0.3, -0.4);
        let frames = vec![cmat; grid.num_points()];
        let field = mc_form(&frames, &grid).unwrap();
        for ax in &field.components {
            for m in ax {
                assert!(max_abs(m) < 1e-13);
            }
        }
    }

    #[test]
    fn mc_form_of_nilpotent_exponential() {
        // F = exp(u N) = I + u N for nilpotent N; du-component is exactly N
        let mut nmat = zeros(3);
        nmat[(0, 1)] = cr(1.0);
        let grid = Grid::centered_square(1.0, 32).unwrap();
        let mut frames = Vec::new();
        for i in 0..grid.nu() {
            for _j in 0..grid.nv() {
                let (u, _) = grid.coords(i, 0);
                frames.push(identity(3) + &nmat * cr(u));
            }
        }
        let field = mc_form(&frames, &grid).unwrap();
        let h = grid.axes()[0].step();
        for (p, m) in field.components[0].iter().enumerate() {
            assert!(
                max_abs(&(m - &nmat)) < 10.0 * h * h,
                "point {p}: {}",
                max_abs(&(m - &nmat))
            );
        }
    }

    #[test]
    fn mc_residual_zero_for_zero_connection() {
        let grid = Grid::centered_square(1.0, 8).unwrap();
        let fam = zero_family(grid, 4);
        assert!(mc_residual(&fam, cr(0.7)).unwrap() < 1e-15);
    }

    #[test]
    fn mc_residual_detects_nonflat_input() {
        // A_1-only family with non-commuting constant components:
        // residual = || lambda^2 [A_u, A_v] || > 0
        let grid = Grid::centered_square(1.0, 8).unwrap();
        let au = skew3(1.0, 0.0, 0.0);
        let av = skew3(0.0, 0.0, 1.0);
        let npts = grid.num_points();
        let field = OneFormField::new(
            grid.clone(),
            vec![vec![au; npts], vec![av; npts]],
        )
        .unwrap();
        let fam = ConnectionFamily::new(BTreeMap::from([(1, field)])).unwrap();
        let res = mc_residual(&fam, cr(1.0)).unwrap();
        assert!(res > 0.5);
        // and integrate_frame rejects it
        assert!(matches!(
            integrate_frame(&fam, cr(1.0), MC_RESIDUAL_THRESHOLD, &IntegrateOpts::default()),
            Err(Error::NonIntegrable(_))
        ));
    }

    #[test]
    fn mc_form_roundtrip_recovers_connection() {
        let (conn, _) = flat_noncommuting();
        let grid = Grid::centered_square(0.8, 32).unwrap();
        let frames = integrate_frame_eval(&conn, &grid, &IntegrateOpts::default()).unwrap();
        let field = mc_form(&frames, &grid).unwrap();
        let h = grid.axes()[0].step();
        // interior points only (one-sided boundary stencils are O(h))
        for i in 1..grid.nu() - 1 {
            for j in 1..grid.nv() - 1 {
                let (u, v) = grid.coords(i, j);
                let [au, av] = conn.eval_at(u, v);
                let p = grid.idx(i, j);
                assert!(max_abs(&(&field.components[0][p] - au)) < 20.0 * h * h);
                assert!(max_abs(&(&field.components[1][p] - av)) < 20.0 * h * h);
            }
        }
    }
}
