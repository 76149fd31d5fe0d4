//! Loop-parameter insertion into adapted frames, evaluation of immersion
//! families across the case catalog, geometric verifiers (curvature, normal
//! flatness, quadric membership, immersivity, metric ratios), and the
//! closed-form case-3 example used as an oracle throughout the tests.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frames::{ConnectionFamily, Grid, OneFormField};
use crate::loopalg::{case_catalog, CatalogRow, LaurentLoop, SignatureForm};
use crate::matrix::{self, c, cr, numerical_rank, C64, CMat};

pub type RVec = DVector<f64>;
pub type CVec = DVector<C64>;

/// Blocks of the Maurer-Cartan form of an adapted frame along a
/// constant-curvature immersion with flat normal bundle: tangent connection
/// omega (m x m), coframe theta (m x 1), second-fundamental-form block
/// beta (m x k), normal connection eta ((k+1) x (k+1), first row and
/// column zero). `eps` is +1 for a spherical ambient, -1 for hyperbolic;
/// `normal_signs` are the ambient signature entries on the k normal
/// directions (all +1 in the Riemannian space forms).
#[derive(Debug, Clone)]
pub struct AdaptedFrameData {
    pub m: usize,
    pub k: usize,
    pub omega: OneFormField,
    pub theta: OneFormField,
    pub beta: OneFormField,
    pub eta: OneFormField,
    pub eps: i8,
    pub normal_signs: Vec<i8>,
}

impl AdaptedFrameData {
    pub fn validate(&self) -> Result<()> {
        if self.eps != 1 && self.eps != -1 {
            return Err(Error::Domain("eps must be +-1".into()));
        }
        if self.normal_signs.len() != self.k
            || self.normal_signs.iter().any(|&s| s != 1 && s != -1)
        {
            return Err(Error::Domain("normal_signs must be k entries of +-1".into()));
        }
        if self.omega.shape() != (self.m, self.m)
            || self.theta.shape() != (self.m, 1)
            || self.beta.shape() != (self.m, self.k)
            || self.eta.shape() != (self.k + 1, self.k + 1)
        {
            return Err(Error::Dimension("adapted-frame block shapes".into()));
        }
        for f in [&self.omega, &self.theta, &self.beta, &self.eta] {
            if f.grid != self.omega.grid {
                return Err(Error::Dimension("blocks on different grids".into()));
            }
        }
        Ok(())
    }

    /// Structural residual: skewness of omega, skewness of eta, and the
    /// first row/column of eta, all of which should vanish.
    pub fn structure_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for comp in &self.omega.components {
            for a in comp {
                worst = worst.max(matrix::max_abs(&(a + a.transpose())));
            }
        }
        for comp in &self.eta.components {
            for e in comp {
                worst = worst.max(matrix::max_abs(&(e + e.transpose())));
                for i in 0..e.nrows() {
                    worst = worst.max(e[(i, 0)].norm()).max(e[(0, i)].norm());
                }
            }
        }
        worst
    }
}

/// A (case, row) choice with derived catalog data.
#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub case: u8,
    pub row: u8,
    pub m: usize,
    pub k: usize,
    pub catalog: CatalogRow,
}

impl CaseSpec {
    pub fn new(case: u8, row: u8, m: usize, k: usize) -> Result<Self> {
        let catalog = case_catalog(case, row, m, k)?;
        Ok(Self {
            case,
            row,
            m,
            k,
            catalog,
        })
    }
}

/// A real surface in a quadric of a pseudo-Euclidean ambient space.
#[derive(Clone)]
pub struct ImmersionSurface {
    pub grid: Grid,
    /// Row-major grid of ambient position vectors.
    pub points: Vec<RVec>,
    pub ambient_j: SignatureForm,
    /// +1 for <x,x> = 1 targets, -1 for <x,x> = -1.
    pub quadric_sign: i8,
    /// Optional exact evaluator for off-grid probes and tight derivatives.
    pub analytic: Option<Arc<dyn Fn(f64, f64) -> RVec + Send + Sync>>,
}

impl std::fmt::Debug for ImmersionSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImmersionSurface")
            .field("grid", &self.grid)
            .field("ambient_j", &self.ambient_j)
            .field("quadric_sign", &self.quadric_sign)
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

fn rinner(j: &SignatureForm, x: &RVec, y: &RVec) -> f64 {
    j.diag()
        .iter()
        .zip(x.iter().zip(y.iter()))
        .map(|(s, (a, b))| s * a * b)
        .sum()
}

/// lambda_0 = (1/sqrt(kappa))(1 + sqrt(1-kappa)) with kappa = eps * c and
/// the principal branch sqrt(1-kappa) = i sqrt(kappa-1) for kappa > 1.
pub fn lambda_zero(c_curv: f64, eps: i8) -> Result<C64> {
    let kappa = validate_kappa(c_curv, eps)?;
    let root = sqrt_one_minus(kappa);
    Ok((cr(1.0) + root) / cr(kappa.sqrt()))
}

fn sqrt_one_minus(kappa: f64) -> C64 {
    if kappa <= 1.0 {
        cr((1.0 - kappa).sqrt())
    } else {
        c(0.0, (kappa - 1.0).sqrt())
    }
}

fn validate_kappa(c_curv: f64, eps: i8) -> Result<f64> {
    let kappa = eps as f64 * c_curv;
    if kappa <= 0.0 {
        return Err(Error::Domain(format!(
            "curvature {c_curv} incompatible with eps = {eps}: need eps*c > 0"
        )));
    }
    if (kappa - 1.0).abs() < 1e-12 {
        return Err(Error::Domain(
            "totally geodesic case (eps*c = 1): the loop parameter cannot be inserted".into(),
        ));
    }
    Ok(kappa)
}

/// Insert the loop parameter into the Maurer-Cartan blocks of an adapted
/// frame of a curvature-`c` immersion: theta is scaled by
/// (sqrt(k)/2)(l + 1/l) and beta by (sqrt(k)/(2 sqrt(1-k)))(l - 1/l),
/// k = eps*c. At lambda_zero the connection reproduces the input exactly.
pub fn insert_lambda(data: &AdaptedFrameData, c_curv: f64) -> Result<ConnectionFamily> {
    data.validate()?;
    let kappa = validate_kappa(c_curv, data.eps)?;
    let s_theta = cr(kappa.sqrt() / 2.0);
    let s_beta = cr(kappa.sqrt()) / (sqrt_one_minus(kappa) * cr(2.0));
    let (m, k) = (data.m, data.k);
    let n = m + k + 1;
    let grid = data.omega.grid.clone();
    let npts = grid.num_points();
    let naxes = grid.axes().len();
    // J2 = lower-right block of the ambient form: diag(eps, normal signs)
    let j2_first = data.eps as f64;

    let mut a_minus = vec![vec![matrix::zeros(n); npts]; naxes];
    let mut a_zero = vec![vec![matrix::zeros(n); npts]; naxes];
    let mut a_plus = vec![vec![matrix::zeros(n); npts]; naxes];
    for ax in 0..naxes {
        for p in 0..npts {
            let om = &data.omega.components[ax][p];
            let th = &data.theta.components[ax][p];
            let be = &data.beta.components[ax][p];
            let et = &data.eta.components[ax][p];
            let a0 = &mut a_zero[ax][p];
            for r in 0..m {
                for col in 0..m {
                    a0[(r, col)] = om[(r, col)];
                }
            }
            for r in 0..=k {
                for col in 0..=k {
                    a0[(m + r, m + col)] = et[(r, col)];
                }
            }
            // degree +-1: B_d = [s_theta * theta | +- s_beta * beta],
            // lower-left C_d = -J2^{-1} B_d^t J1 with J1 = I_m.
            for (dst, beta_sign) in [(&mut a_plus[ax][p], 1.0), (&mut a_minus[ax][p], -1.0)] {
                let mut b_block = CMat::zeros(m, k + 1);
                for r in 0..m {
                    b_block[(r, 0)] = s_theta * th[(r, 0)];
                    for col in 0..k {
                        b_block[(r, col + 1)] = s_beta * cr(beta_sign) * be[(r, col)];
                    }
                }
                for r in 0..m {
                    for col in 0..=k {
                        dst[(r, m + col)] = b_block[(r, col)];
                        let j2 = if col == 0 {
                            j2_first
                        } else {
                            data.normal_signs[col - 1] as f64
                        };
                        dst[(m + col, r)] = -b_block[(r, col)] / cr(j2);
                    }
                }
            }
        }
    }
    let mk = |comps| OneFormField::new(grid.clone(), comps);
    ConnectionFamily::new(std::collections::BTreeMap::from([
        (-1, mk(a_minus)?),
        (0, mk(a_zero)?),
        (1, mk(a_plus)?),
    ]))
}

/// Transform a frame by Ad_T and extract the (m+1)'th column, which is the
/// position vector of the immersion: (T F T^{-1}) E_{m+1}.
fn transformed_column(frame: &CMat, t: &CMat, m: usize) -> CVec {
    let n = frame.nrows();
    let mut col = CVec::zeros(n);
    for i in 0..n {
        col[i] = t[(i, i)] * frame[(i, m)] / t[(m, m)];
    }
    col
}

/// Default tolerance on discarded imaginary parts.
pub const IMAG_TOLERANCE: f64 = 1e-10;

/// Evaluate an extended-frame grid at one admissible loop parameter into a
/// real surface in the row's target quadric.
pub fn evaluate_family(
    frames: &[CMat],
    grid: &Grid,
    lambda: C64,
    spec: &CaseSpec,
    imag_tol: f64,
) -> Result<ImmersionSurface> {
    if !spec.catalog.lambda_range.contains(lambda) {
        return Err(Error::Domain(format!(
            "lambda = {lambda} outside the admissible range: {}",
            spec.catalog.lambda_range.describe()
        )));
    }
    if frames.len() != grid.num_points() {
        return Err(Error::Dimension("frame count != grid points".into()));
    }
    let t = &spec.catalog.transform;
    let mut points = Vec::with_capacity(frames.len());
    for f in frames {
        let col = transformed_column(f, t, spec.m);
        let im = col.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if im > imag_tol {
            return Err(Error::Numerical(format!(
                "imaginary part {im:.3e} of evaluated column exceeds {imag_tol:.1e}; \
                 case/row pairing does not match the frame's reality condition"
            )));
        }
        points.push(RVec::from_iterator(col.len(), col.iter().map(|z| z.re)));
    }
    Ok(ImmersionSurface {
        grid: grid.clone(),
        points,
        ambient_j: spec.catalog.j_hat.clone(),
        quadric_sign: spec.catalog.quadric_sign,
        analytic: None,
    })
}

/// Max over the grid of |<x,x>_J - quadric_sign|.
pub fn quadric_residual(surface: &ImmersionSurface) -> f64 {
    surface
        .points
        .iter()
        .map(|x| (rinner(&surface.ambient_j, x, x) - surface.quadric_sign as f64).abs())
        .fold(0.0, f64::max)
}

/// Discrete flatness residual of the normal connection, d eta + eta ^ eta.
pub fn normal_flatness_residual(eta: &OneFormField) -> Result<f64> {
    let fam = ConnectionFamily::new(std::collections::BTreeMap::from([(0, eta.clone())]))?;
    crate::frames::mc_residual(&fam, cr(1.0))
}

/// Intrinsic curvature of the induced metric via the Brioschi formula on
/// the discrete first fundamental form. Returns one value per grid point,
/// `None` at the boundary (two layers) and at degenerate points.
pub fn gauss_curvature_estimate(surface: &ImmersionSurface) -> Result<Vec<Option<f64>>> {
    let grid = &surface.grid;
    if !grid.is_surface() {
        return Err(Error::Domain("curvature needs a two-axis grid".into()));
    }
    let (nu, nv) = (grid.nu(), grid.nv());
    let (hu, hv) = (grid.axes()[0].step(), grid.axes()[1].step());
    let j = &surface.ambient_j;
    let pts = &surface.points;
    // first fundamental form at one-ring interior points
    let mut efg: Vec<Option<[f64; 3]>> = vec![None; pts.len()];
    for i in 1..nu - 1 {
        for jv in 1..nv - 1 {
            let p = grid.idx(i, jv);
            let fu = (&pts[grid.idx(i + 1, jv)] - &pts[grid.idx(i - 1, jv)]) / (2.0 * hu);
            let fv = (&pts[grid.idx(i, jv + 1)] - &pts[grid.idx(i, jv - 1)]) / (2.0 * hv);
            efg[p] = Some([rinner(j, &fu, &fu), rinner(j, &fu, &fv), rinner(j, &fv, &fv)]);
        }
    }
    let mut out: Vec<Option<f64>> = vec![None; pts.len()];
    for i in 2..nu.saturating_sub(2) {
        for jv in 2..nv.saturating_sub(2) {
            let at = |di: isize, dj: isize| {
                efg[grid.idx((i as isize + di) as usize, (jv as isize + dj) as usize)]
            };
            let (Some(c0), Some(cu_p), Some(cu_m), Some(cv_p), Some(cv_m)) =
                (at(0, 0), at(1, 0), at(-1, 0), at(0, 1), at(0, -1))
            else {
                continue;
            };
            let (Some(cpp), Some(cpm), Some(cmp_), Some(cmm)) =
                (at(1, 1), at(1, -1), at(-1, 1), at(-1, -1))
            else {
                continue;
            };
            let [e, f, g] = c0;
            let det = e * g - f * f;
            if det.abs() < 1e-10 {
                continue; // degenerate point: skip, never extrapolate
            }
            let du = |idx: usize| (cu_p[idx] - cu_m[idx]) / (2.0 * hu);
            let dv = |idx: usize| (cv_p[idx] - cv_m[idx]) / (2.0 * hv);
            let e_u = du(0);
            let e_v = dv(0);
            let f_u = du(1);
            let f_v = dv(1);
            let g_u = du(2);
            let g_v = dv(2);
            let e_vv = (cv_p[0] - 2.0 * e + cv_m[0]) / (hv * hv);
            let g_uu = (cu_p[2] - 2.0 * g + cu_m[2]) / (hu * hu);
            let f_uv = (cpp[1] - cpm[1] - cmp_[1] + cmm[1]) / (4.0 * hu * hv);
            let m1 = DMatrix::from_row_slice(
                3,
                3,
                &[
                    -0.5 * e_vv + f_uv - 0.5 * g_uu,
                    0.5 * e_u,
                    f_u - 0.5 * e_v,
                    f_v - 0.5 * g_u,
                    e,
                    f,
                    0.5 * g_v,
                    f,
                    g,
                ],
            );
            let m2 = DMatrix::from_row_slice(
                3,
                3,
                &[0.0, 0.5 * e_v, 0.5 * g_u, 0.5 * e_v, e, f, 0.5 * g_u, f, g],
            );
            out[grid.idx(i, jv)] = Some((m1.determinant() - m2.determinant()) / (det * det));
        }
    }
    Ok(out)
}

/// Curvature of the member at `lambda`: sign * 4 / (l + 1/l)^2, the sign
/// taken from the catalog row. Real for admissible lambda.
pub fn curvature_at(lambda: C64, row: &CatalogRow) -> Result<f64> {
    let s = lambda + lambda.inv();
    let val = cr(row.curvature_sign * 4.0) / (s * s);
    if val.im.abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "lambda = {lambda} gives non-real curvature; outside the admissible range"
        )));
    }
    Ok(val.re)
}

/// The m coframe 1-forms at a grid point, as an m x (axes) matrix of the
/// column-(m+1) entries of the connection at `lambda`.
fn coframe_matrix(
    family: &ConnectionFamily,
    lambda: C64,
    point: usize,
    m: usize,
) -> Result<CMat> {
    let naxes = family.grid()?.axes().len();
    let mut out = CMat::zeros(m, naxes);
    for (&d, field) in &family.coeffs {
        let w = lambda.powi(d);
        for ax in 0..naxes {
            let a = &field.components[ax][point];
            for r in 0..m {
                out[(r, ax)] += a[(r, m)] * w;
            }
        }
    }
    Ok(out)
}

/// Numerical rank (singular values above 1e-10) of the coframe at a point.
pub fn coframe_rank(
    family: &ConnectionFamily,
    lambda: C64,
    point: usize,
    m: usize,
) -> Result<usize> {
    let cf = coframe_matrix(family, lambda, point, m)?;
    Ok(numerical_rank(&cf, 1e-10))
}

/// The constant ratio relating the induced metrics of two members of one
/// family, estimated at probe points. Errors if the ratio is not constant
/// to 1e-6 relative across probes (input not in the family) or if fewer
/// than 3 probes are non-degenerate.
pub fn metric_ratio(
    family: &ConnectionFamily,
    lambda1: C64,
    lambda2: C64,
    m: usize,
    probes: &[usize],
) -> Result<f64> {
    let mut ratios = Vec::new();
    for &p in probes {
        let c1 = coframe_matrix(family, lambda1, p, m)?;
        let c2 = coframe_matrix(family, lambda2, p, m)?;
        let t1: f64 = c1.iter().map(|z| z.norm_sqr()).sum();
        let t2: f64 = c2.iter().map(|z| z.norm_sqr()).sum();
        if t1 < 1e-16 || t2 < 1e-16 {
            continue; // degenerate probe
        }
        ratios.push(t2 / t1);
    }
    if ratios.len() < 3 {
        return Err(Error::Domain(
            "need at least 3 non-degenerate probe points".into(),
        ));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for r in &ratios {
        if (r - mean).abs() > 1e-6 * mean.abs() {
            return Err(Error::Numerical(format!(
                "metric ratio not constant across probes ({r} vs mean {mean}); \
                 input is not a member of a single family"
            )));
        }
    }
    Ok(mean)
}

/// Result of adapted-frame extraction: the Maurer-Cartan blocks plus the
/// frames themselves (normalized to the identity at the base point).
#[derive(Debug, Clone)]
pub struct ExtractedFrame {
    pub data: AdaptedFrameData,
    pub frames: Vec<CMat>,
}

const EXTRACT_RANK_TOL: f64 = 1e-8;

/// J-orthonormalize (fu, fv), append f, and complete with normals from the
/// standard basis. Columns: [e_1, e_2, f, n_1, ..., n_k].
fn adapted_frame_at(
    f: &RVec,
    fu: &RVec,
    fv: &RVec,
    j: &SignatureForm,
) -> Result<DMatrix<f64>> {
    let n = f.len();
    let mut cols: Vec<RVec> = Vec::with_capacity(n);
    let mut signs: Vec<f64> = Vec::with_capacity(n);
    for t in [fu, fv] {
        let mut v = t.clone();
        for (w, s) in cols.iter().zip(&signs) {
            let coef = rinner(j, &v, w) / s;
            v -= w * coef;
        }
        let nn = rinner(j, &v, &v);
        if nn <= EXTRACT_RANK_TOL {
            return Err(Error::Domain(
                "tangent vectors are rank-deficient or not spacelike".into(),
            ));
        }
        cols.push(v / nn.sqrt());
        signs.push(1.0);
    }
    let fs = rinner(j, f, f);
    cols.push(f.clone());
    signs.push(fs.signum());
    // complete with normals from standard basis vectors
    for b in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = RVec::zeros(n);
        v[b] = 1.0;
        for (w, s) in cols.iter().zip(&signs) {
            let coef = rinner(j, &v, w) / s;
            v -= w * coef;
        }
        let nn = rinner(j, &v, &v);
        if nn.abs() <= EXTRACT_RANK_TOL {
            continue;
        }
        cols.push(v / nn.abs().sqrt());
        signs.push(nn.signum());
    }
    if cols.len() < n {
        return Err(Error::Numerical(
            "could not complete the normal frame".into(),
        ));
    }
    let mut g = DMatrix::zeros(n, n);
    for (ci, col) in cols.iter().enumerate() {
        g.set_column(ci, col);
    }
    // fix orientation so the frame lies in the special orthogonal group
    if g.determinant() < 0.0 {
        let last = n - 1;
        let flipped = -g.column(last);
        g.set_column(last, &flipped);
    }
    Ok(g)
}

fn to_cmat(g: &DMatrix<f64>) -> CMat {
    CMat::from_iterator(g.nrows(), g.ncols(), g.iter().map(|&x| cr(x)))
}

/// Step used for analytic-surface derivatives.
const ANALYTIC_DELTA: f64 = 1e-4;

/// Build an adapted frame along the surface by J-orthonormalization and
/// return its Maurer-Cartan blocks. Uses the surface's analytic evaluator
/// for derivatives when present (tight tolerances), otherwise grid
/// stencils. Frames are left-normalized to the identity at the base point,
/// which leaves the Maurer-Cartan form unchanged.
pub fn extract_adapted_frame(surface: &ImmersionSurface, m: usize) -> Result<ExtractedFrame> {
    let grid = &surface.grid;
    if !grid.is_surface() || m != 2 {
        return Err(Error::Domain("extraction implemented for m = 2 surfaces".into()));
    }
    let n = surface.ambient_j.dim();
    let k = n - m - 1;
    let j = &surface.ambient_j;
    let (nu, nv) = (grid.nu(), grid.nv());
    let npts = grid.num_points();

    let frame_real: Vec<DMatrix<f64>> = if let Some(eval) = &surface.analytic {
        let d = ANALYTIC_DELTA;
        let mut out = Vec::with_capacity(npts);
        for i in 0..nu {
            for jv in 0..nv {
                let (u, v) = grid.coords(i, jv);
                let f = eval(u, v);
                let fu = (eval(u + d, v) - eval(u - d, v)) / (2.0 * d);
                let fv = (eval(u, v + d) - eval(u, v - d)) / (2.0 * d);
                out.push(adapted_frame_at(&f, &fu, &fv, j)?);
            }
        }
        out
    } else {
        let (hu, hv) = (grid.axes()[0].step(), grid.axes()[1].step());
        let pts = &surface.points;
        let mut out = Vec::with_capacity(npts);
        for i in 0..nu {
            for jv in 0..nv {
                let fu = if i == 0 {
                    (&pts[grid.idx(1, jv)] - &pts[grid.idx(0, jv)]) / hu
                } else if i == nu - 1 {
                    (&pts[grid.idx(nu - 1, jv)] - &pts[grid.idx(nu - 2, jv)]) / hu
                } else {
                    (&pts[grid.idx(i + 1, jv)] - &pts[grid.idx(i - 1, jv)]) / (2.0 * hu)
                };
                let fv = if jv == 0 {
                    (&pts[grid.idx(i, 1)] - &pts[grid.idx(i, 0)]) / hv
                } else if jv == nv - 1 {
                    (&pts[grid.idx(i, nv - 1)] - &pts[grid.idx(i, nv - 2)]) / hv
                } else {
                    (&pts[grid.idx(i, jv + 1)] - &pts[grid.idx(i, jv - 1)]) / (2.0 * hv)
                };
                out.push(adapted_frame_at(&pts[grid.idx(i, jv)], &fu, &fv, j)?);
            }
        }
        out
    };

    // Maurer-Cartan form of the frame field
    let mc: Vec<[CMat; 2]> = if let Some(eval) = &surface.analytic {
        let d = ANALYTIC_DELTA;
        let frame_of = |u: f64, v: f64| -> Result<DMatrix<f64>> {
            let f = eval(u, v);
            let fu = (eval(u + d, v) - eval(u - d, v)) / (2.0 * d);
            let fv = (eval(u, v + d) - eval(u, v - d)) / (2.0 * d);
            adapted_frame_at(&f, &fu, &fv, j)
        };
        let mut out = Vec::with_capacity(npts);
        for i in 0..nu {
            for jv in 0..nv {
                let (u, v) = grid.coords(i, jv);
                let g = to_cmat(&frame_real[grid.idx(i, jv)]);
                let du = (frame_of(u + d, v)? - frame_of(u - d, v)?) / (2.0 * d);
                let dv = (frame_of(u, v + d)? - frame_of(u, v - d)?) / (2.0 * d);
                let g_inv = matrix::try_inverse(&g)?;
                out.push([&g_inv * to_cmat(&du), &g_inv * to_cmat(&dv)]);
            }
        }
        out
    } else {
        let frames_c: Vec<CMat> = frame_real.iter().map(to_cmat).collect();
        let field = crate::frames::mc_form(&frames_c, grid)?;
        (0..npts)
            .map(|p| {
                [
                    field.components[0][p].clone(),
                    field.components[1][p].clone(),
                ]
            })
            .collect()
    };

    // left-normalize frames; this does not change the Maurer-Cartan form
    let base = grid.idx(grid.base()[0], grid.base()[1]);
    let g0_inv = frame_real[base]
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular base frame".into()))?;
    let frames: Vec<CMat> = frame_real.iter().map(|g| to_cmat(&(&g0_inv * g))).collect();

    // split the Maurer-Cartan form into the adapted blocks
    let mut omega = vec![vec![CMat::zeros(m, m); npts]; 2];
    let mut theta = vec![vec![CMat::zeros(m, 1); npts]; 2];
    let mut beta = vec![vec![CMat::zeros(m, k); npts]; 2];
    let mut eta = vec![vec![CMat::zeros(k + 1, k + 1); npts]; 2];
    for p in 0..npts {
        for ax in 0..2 {
            let a = &mc[p][ax];
            for r in 0..m {
                for col in 0..m {
                    omega[ax][p][(r, col)] = a[(r, col)];
                }
                theta[ax][p][(r, 0)] = a[(r, m)];
                for col in 0..k {
                    beta[ax][p][(r, col)] = a[(r, m + 1 + col)];
                }
            }
            for r in 0..=k {
                for col in 0..=k {
                    eta[ax][p][(m + r - m, col)] = a[(m + r, m + col)];
                }
            }
        }
    }
    let data = AdaptedFrameData {
        m,
        k,
        omega: OneFormField::new(grid.clone(), omega)?,
        theta: OneFormField::new(grid.clone(), theta)?,
        beta: OneFormField::new(grid.clone(), beta)?,
        eta: OneFormField::new(grid.clone(), eta)?,
        eps: surface.quadric_sign,
        normal_signs: j.diag()[m + 1..].iter().map(|&s| s as i8).collect(),
    };
    Ok(ExtractedFrame { data, frames })
}

// ---------------------------------------------------------------------------
// Closed-form case-3 example (m = 2, k = 1): the frame, its Maurer-Cartan
// form, derivatives, and the member surfaces for each row.
// ---------------------------------------------------------------------------

/// a = (l + 1/l)/2 and b = i(l - 1/l)/2; a^2 + b^2 = 1 identically.
pub fn example_ab(lambda: C64) -> (C64, C64) {
    let a = (lambda + lambda.inv()) * cr(0.5);
    let b = (lambda - lambda.inv()) * c(0.0, 0.5);
    (a, b)
}

/// The closed-form 4x4 frame of the case-3 example.
pub fn example_frame(u: f64, v: f64, lambda: C64) -> CMat {
    let (a, b) = example_ab(lambda);
    let (su, cu) = (cr(u.sin()), cr(u.cos()));
    let (sv, cv) = (cr(v.sin()), cr(v.cos()));
    let one = cr(1.0);
    CMat::from_row_slice(
        4,
        4,
        &[
            cu,
            -su * sv,
            a * su * cv,
            b * su * cv,
            cr(0.0),
            cv,
            a * sv,
            b * sv,
            -a * su,
            -a * cu * sv,
            a * a * cu * cv + b * b,
            a * b * (cu * cv - one),
            -b * su,
            -b * cu * sv,
            a * b * (cu * cv - one),
            b * b * cu * cv + a * a,
        ],
    )
}

/// Exact partial derivatives of the example frame.
pub fn example_frame_derivs(u: f64, v: f64, lambda: C64) -> (CMat, CMat) {
    let (a, b) = example_ab(lambda);
    let (su, cu) = (cr(u.sin()), cr(u.cos()));
    let (sv, cv) = (cr(v.sin()), cr(v.cos()));
    let z = cr(0.0);
    let du = CMat::from_row_slice(
        4,
        4,
        &[
            -su,
            -cu * sv,
            a * cu * cv,
            b * cu * cv,
            z,
            z,
            z,
            z,
            -a * cu,
            a * su * sv,
            -a * a * su * cv,
            -a * b * su * cv,
            -b * cu,
            b * su * sv,
            -a * b * su * cv,
            -b * b * su * cv,
        ],
    );
    let dv = CMat::from_row_slice(
        4,
        4,
        &[
            z,
            -su * cv,
            -a * su * sv,
            -b * su * sv,
            z,
            -sv,
            a * cv,
            b * cv,
            z,
            -a * cu * cv,
            -a * a * cu * sv,
            -a * b * cu * sv,
            z,
            -b * cu * cv,
            -a * b * cu * sv,
            -b * b * cu * sv,
        ],
    );
    (du, dv)
}

/// The example's Maurer-Cartan components (A_u, A_v) in closed form.
pub fn example_mc(u: f64, v: f64, lambda: C64) -> [CMat; 2] {
    let (a, b) = example_ab(lambda);
    let (sv, cv) = (cr(v.sin()), cr(v.cos()));
    let z = cr(0.0);
    let _ = u; // the form does not depend on u
    let au = CMat::from_row_slice(
        4,
        4,
        &[
            z, -sv, a * cv, b * cv, sv, z, z, z, -a * cv, z, z, z, -b * cv, z, z, z,
        ],
    );
    let av = CMat::from_row_slice(
        4,
        4,
        &[z, z, z, z, z, z, a, b, z, -a, z, z, z, -b, z, z],
    );
    [au, av]
}

/// Third column of the example frame: the S^3 member at unit-circle lambda.
pub fn example_f(u: f64, v: f64, lambda: C64) -> CVec {
    let fr = example_frame(u, v, lambda);
    CVec::from_iterator(4, (0..4).map(|i| fr[(i, 2)]))
}

/// The example frame as an exact Laurent loop (degrees -2..2) at one
/// domain point.
pub fn example_frame_loop(u: f64, v: f64) -> LaurentLoop {
    example_frame_loop_complex(cr(u), cr(v))
}

/// Same closed form with complexified domain coordinates: the entries are
/// entire in (u, v), so this is the holomorphic extension of the frame.
pub fn example_frame_loop_complex(u: C64, v: C64) -> LaurentLoop {
    let (su, cu) = (u.sin(), u.cos());
    let (sv, cv) = (v.sin(), v.cos());
    let z = matrix::zeros(4);
    let one = cr(1.0);
    // F = M_c + a M_a + b M_b + a^2 M_aa + ab M_ab + b^2 M_bb
    let mut m_c = z.clone();
    m_c[(0, 0)] = cu;
    m_c[(0, 1)] = -su * sv;
    m_c[(1, 1)] = cv;
    let mut m_a = z.clone();
    m_a[(0, 2)] = su * cv;
    m_a[(1, 2)] = sv;
    m_a[(2, 0)] = -su;
    m_a[(2, 1)] = -cu * sv;
    let mut m_b = z.clone();
    m_b[(0, 3)] = su * cv;
    m_b[(1, 3)] = sv;
    m_b[(3, 0)] = -su;
    m_b[(3, 1)] = -cu * sv;
    let mut m_aa = z.clone();
    m_aa[(2, 2)] = cu * cv;
    m_aa[(3, 3)] = one;
    let mut m_ab = z.clone();
    m_ab[(2, 3)] = cu * cv - one;
    m_ab[(3, 2)] = cu * cv - one;
    let mut m_bb = z;
    m_bb[(2, 2)] = one;
    m_bb[(3, 3)] = cu * cv;
    // a = l/2 + 1/(2l); b = il/2 - i/(2l);
    // a^2 = l^2/4 + 1/2 + l^-2/4; b^2 = -l^2/4 + 1/2 - l^-2/4;
    // ab = i l^2/4 - i l^-2/4
    let half = cr(0.5);
    let quarter = cr(0.25);
    let iq = c(0.0, 0.25);
    let ih = c(0.0, 0.5);
    let coeffs = std::collections::BTreeMap::from([
        (-2, &m_aa * quarter - &m_ab * iq - &m_bb * quarter),
        (-1, &m_a * half - &m_b * ih),
        (0, &m_c + &m_aa * half + &m_bb * half),
        (1, &m_a * half + &m_b * ih),
        (2, &m_aa * quarter + &m_ab * iq - &m_bb * quarter),
    ]);
    LaurentLoop::new(4, coeffs).expect("valid loop")
}

/// The example's connection as a degree {-1,0,1} family sampled on a grid.
pub fn example_connection_family(grid: &Grid) -> Result<ConnectionFamily> {
    let z = matrix::zeros(4);
    let build = |deg: i32| -> Result<OneFormField> {
        OneFormField::from_fn(grid.clone(), |_u, v| {
            let (sv, cv) = (v.sin(), v.cos());
            let mut au = z.clone();
            let mut av = z.clone();
            match deg {
                0 => {
                    au[(0, 1)] = cr(-sv);
                    au[(1, 0)] = cr(sv);
                }
                _ => {
                    // a contributes 1/2 at both degrees; b contributes
                    // +i/2 at degree 1 and -i/2 at degree -1
                    let ca = cr(0.5);
                    let cb = c(0.0, 0.5 * deg as f64);
                    au[(0, 2)] = ca * cr(cv);
                    au[(2, 0)] = -ca * cr(cv);
                    au[(0, 3)] = cb * cr(cv);
                    au[(3, 0)] = -cb * cr(cv);
                    av[(1, 2)] = ca;
                    av[(2, 1)] = -ca;
                    av[(1, 3)] = cb;
                    av[(3, 1)] = -cb;
                }
            }
            [au, av]
        })
    };
    ConnectionFamily::new(std::collections::BTreeMap::from([
        (-1, build(-1)?),
        (0, build(0)?),
        (1, build(1)?),
    ]))
}

/// Member surface of the example for a case-3 row, with the closed form
/// attached as the analytic evaluator.
pub fn example_surface(row: u8, grid: &Grid, lambda: C64) -> Result<ImmersionSurface> {
    let spec = CaseSpec::new(3, row, 2, 1)?;
    if !spec.catalog.lambda_range.contains(lambda) {
        return Err(Error::Domain(format!(
            "lambda = {lambda} outside row {row}: {}",
            spec.catalog.lambda_range.describe()
        )));
    }
    let t = spec.catalog.transform.clone();
    let eval = move |u: f64, v: f64| -> RVec {
        let fr = example_frame(u, v, lambda);
        let col = transformed_column(&fr, &t, 2);
        RVec::from_iterator(4, col.iter().map(|z| z.re))
    };
    let mut frames = Vec::with_capacity(grid.num_points());
    for i in 0..grid.nu() {
        for jv in 0..grid.nv() {
            let (u, v) = grid.coords(i, jv);
            frames.push(example_frame(u, v, lambda));
        }
    }
    let mut surface = evaluate_family(&frames, grid, lambda, &spec, IMAG_TOLERANCE)?;
    surface.analytic = Some(Arc::new(eval));
    Ok(surface)
}
