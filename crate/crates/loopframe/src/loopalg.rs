//! Finite Laurent matrix loops, the involution catalog, Ad_T conjugations
//! and group-membership residuals.
//!
//! A loop is a finite Laurent polynomial in the loop parameter with square
//! complex matrix coefficients. Involutions act exactly at the coefficient
//! level; sampling enters only through residual checks.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::{self, c, cr, C64, CMat, MAX_DIM};

/// Degree span allowed for loop coefficients. The geometric objects here
/// have span [-1, 1] and frames span [-2, 2], but truncated factorization
/// factors carry wider bands (default bandwidth 16, doubled by products).
pub const MIN_DEGREE: i32 = -40;
pub const MAX_DEGREE: i32 = 40;

/// Finite Laurent polynomial in the loop parameter with n x n complex
/// matrix coefficients. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LaurentLoop {
    n: usize,
    coeffs: BTreeMap<i32, CMat>,
}

impl LaurentLoop {
    pub fn new(n: usize, coeffs: BTreeMap<i32, CMat>) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::Dimension(format!(
                "loop dimension {n} outside 1..={MAX_DIM}"
            )));
        }
        for (&d, m) in &coeffs {
            if !(MIN_DEGREE..=MAX_DEGREE).contains(&d) {
                return Err(Error::Domain(format!(
                    "degree {d} outside [{MIN_DEGREE}, {MAX_DEGREE}]"
                )));
            }
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!(
                    "coefficient at degree {d} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !matrix::all_finite(m) {
                return Err(Error::Numerical(format!(
                    "non-finite entries in coefficient at degree {d}"
                )));
            }
        }
        Ok(Self { n, coeffs })
    }

    pub fn constant(m: CMat) -> Result<Self> {
        let n = m.nrows();
        Self::new(n, BTreeMap::from([(0, m)]))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(n, BTreeMap::from([(0, matrix::identity(n))])).expect("valid")
    }

    pub fn monomial(degree: i32, m: CMat) -> Result<Self> {
        let n = m.nrows();
        Self::new(n, BTreeMap::from([(degree, m)]))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &BTreeMap<i32, CMat> {
        &self.coeffs
    }

    pub fn coeff(&self, degree: i32) -> Option<&CMat> {
        self.coeffs.get(&degree)
    }

    pub fn min_degree(&self) -> i32 {
        self.coeffs.keys().next().copied().unwrap_or(0)
    }

    pub fn max_degree(&self) -> i32 {
        self.coeffs.keys().next_back().copied().unwrap_or(0)
    }

    /// Drop coefficients whose max-abs entry is below `tol`.
    pub fn pruned(mut self, tol: f64) -> Self {
        self.coeffs.retain(|_, m| matrix::max_abs(m) > tol);
        self
    }

    /// Evaluate at a nonzero loop parameter.
    pub fn eval(&self, lambda: C64) -> Result<CMat> {
        if lambda == c(0.0, 0.0) && self.min_degree() < 0 {
            return Err(Error::Domain(
                "cannot evaluate loop with negative degrees at lambda = 0".into(),
            ));
        }
        let mut sum = matrix::zeros(self.n);
        for (&d, m) in &self.coeffs {
            sum += m * lambda.powi(d);
        }
        Ok(sum)
    }

    /// Coefficient-wise product; degrees add.
    pub fn mul(&self, other: &LaurentLoop) -> Result<LaurentLoop> {
        if self.n != other.n {
            return Err(Error::Dimension("loop product dimension mismatch".into()));
        }
        let mut coeffs: BTreeMap<i32, CMat> = BTreeMap::new();
        for (&d1, m1) in &self.coeffs {
            for (&d2, m2) in &other.coeffs {
                let d = d1 + d2;
                let prod = m1 * m2;
                coeffs
                    .entry(d)
                    .and_modify(|acc| *acc += &prod)
                    .or_insert(prod);
            }
        }
        LaurentLoop::new(self.n, coeffs)
    }

    fn map_coeffs(&self, f: impl Fn(i32, &CMat) -> (i32, CMat)) -> LaurentLoop {
        let mut coeffs = BTreeMap::new();
        for (&d, m) in &self.coeffs {
            let (nd, nm) = f(d, m);
            coeffs.insert(nd, nm);
        }
        LaurentLoop {
            n: self.n,
            coeffs,
        }
    }
}

/// Diagonal signature form J = diag(+-1, ..., +-1).
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureForm {
    diag: Vec<f64>,
}

impl SignatureForm {
    pub fn new(diag: Vec<i8>) -> Result<Self> {
        if diag.iter().any(|&d| d != 1 && d != -1) {
            return Err(Error::Domain("signature entries must be +-1".into()));
        }
        Ok(Self {
            diag: diag.into_iter().map(|d| d as f64).collect(),
        })
    }

    pub fn euclidean(n: usize) -> Self {
        Self {
            diag: vec![1.0; n],
        }
    }

    /// diag(I_a, -I_b, I_c, -I_d, ...) from alternating signed block sizes.
    pub fn blocks(blocks: &[(usize, i8)]) -> Self {
        let mut diag = Vec::new();
        for &(len, sign) in blocks {
            diag.extend(std::iter::repeat(sign as f64).take(len));
        }
        Self { diag }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn matrix(&self) -> CMat {
        let n = self.dim();
        let mut m = matrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = cr(self.diag[i]);
        }
        m
    }

    /// Inner product <x, y>_J = x^t J y (bilinear, not Hermitian).
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.diag
            .iter()
            .zip(x.iter().zip(y.iter()))
            .map(|(j, (a, b))| j * a * b)
            .sum()
    }
}

/// The involutions and reality conditions used on loops.
///
/// `P` and `Q` are diagonal signature matrices; the paper's choices are
/// P = diag(I_m, -I_{k+1}) and Q = diag(I_{m+1}, -I_k).
#[derive(Debug, Clone, PartialEq)]
pub enum InvolutionSpec {
    /// (sigma X)(l) = Ad_P X(-l) — the symmetric-space twisting.
    Sigma(SignatureForm),
    /// (mu X)(l) = Ad_Q X(1/l).
    Mu(SignatureForm),
    /// (rho1 X)(l) = conj(X(-conj(l))).
    Rho1,
    /// (rho2 X)(l) = conj(X(conj(l))).
    Rho2,
    /// (rho3 X)(l) = conj(X(1/conj(l))).
    Rho3,
    /// (rho_hat3 X)(l) = Ad_Q conj(X(conj(l))).
    RhoHat3(SignatureForm),
    /// (tau1 X)(l) = Ad_Q Ad_P conj(X(1/conj(l))).
    Tau1(SignatureForm, SignatureForm),
    /// (tau2 X)(l) = Ad_Q conj(X(1/conj(l))).
    Tau2(SignatureForm),
    /// (tau3 X)(l) = conj(X(1/conj(l))).
    Tau3,
}

impl InvolutionSpec {
    fn check_dims(&self, n: usize) -> Result<()> {
        let ok = match self {
            InvolutionSpec::Sigma(p) => p.dim() == n,
            InvolutionSpec::Mu(q) | InvolutionSpec::RhoHat3(q) | InvolutionSpec::Tau2(q) => {
                q.dim() == n
            }
            InvolutionSpec::Tau1(p, q) => p.dim() == n && q.dim() == n,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("involution P/Q dimension mismatch".into()))
        }
    }

    /// Pointwise action on a sampled loop value. The parameter map is
    /// already applied by the caller; this is the matrix-level part.
    pub fn matrix_action(&self, x: &CMat) -> CMat {
        match self {
            InvolutionSpec::Sigma(p) => ad_diag(p, x),
            InvolutionSpec::Mu(q) => ad_diag(q, x),
            InvolutionSpec::Rho1 | InvolutionSpec::Rho2 | InvolutionSpec::Rho3
            | InvolutionSpec::Tau3 => x.map(|z| z.conj()),
            InvolutionSpec::RhoHat3(q) | InvolutionSpec::Tau2(q) => {
                ad_diag(q, &x.map(|z| z.conj()))
            }
            InvolutionSpec::Tau1(p, q) => ad_diag(q, &ad_diag(p, &x.map(|z| z.conj()))),
        }
    }

    /// The induced map on the loop parameter, for sampling-based checks:
    /// returns the argument at which the original loop is evaluated.
    pub fn parameter_map(&self, lambda: C64) -> C64 {
        match self {
            InvolutionSpec::Sigma(_) => -lambda,
            InvolutionSpec::Mu(_) => lambda.inv(),
            InvolutionSpec::Rho1 => -lambda.conj(),
            InvolutionSpec::Rho2 | InvolutionSpec::RhoHat3(_) => lambda.conj(),
            InvolutionSpec::Rho3 | InvolutionSpec::Tau1(_, _) | InvolutionSpec::Tau2(_)
            | InvolutionSpec::Tau3 => lambda.conj().inv(),
        }
    }
}

fn ad_diag(s: &SignatureForm, x: &CMat) -> CMat {
    // Ad by a diagonal +-1 matrix: entry (r, c) scaled by s_r * s_c.
    let n = x.nrows();
    let mut out = x.clone();
    for r in 0..n {
        for col in 0..n {
            out[(r, col)] *= cr(s.diag()[r] * s.diag()[col]);
        }
    }
    out
}

/// Coefficient-level action of an involution on a Laurent loop.
pub fn apply_involution(spec: &InvolutionSpec, l: &LaurentLoop) -> Result<LaurentLoop> {
    spec.check_dims(l.dim())?;
    let out = match spec {
        // sigma: A_d -> Ad_P(A_d) * (-1)^d at degree d
        InvolutionSpec::Sigma(p) => l.map_coeffs(|d, m| {
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            (d, ad_diag(p, m) * cr(sign))
        }),
        // mu: A_d -> Ad_Q(A_d) at degree -d
        InvolutionSpec::Mu(q) => l.map_coeffs(|d, m| (-d, ad_diag(q, m))),
        // rho1: A_d -> conj(A_d) * (-1)^d at degree d
        InvolutionSpec::Rho1 => l.map_coeffs(|d, m| {
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            (d, m.map(|z| z.conj()) * cr(sign))
        }),
        // rho2: A_d -> conj(A_d) at degree d
        InvolutionSpec::Rho2 => l.map_coeffs(|d, m| (d, m.map(|z| z.conj()))),
        // rho3 / tau3: A_d -> conj(A_d) at degree -d
        InvolutionSpec::Rho3 | InvolutionSpec::Tau3 => {
            l.map_coeffs(|d, m| (-d, m.map(|z| z.conj())))
        }
        // rho_hat3: A_d -> Ad_Q conj(A_d) at degree d
        InvolutionSpec::RhoHat3(q) => l.map_coeffs(|d, m| (d, ad_diag(q, &m.map(|z| z.conj())))),
        // tau2: A_d -> Ad_Q conj(A_d) at degree -d
        InvolutionSpec::Tau2(q) => l.map_coeffs(|d, m| (-d, ad_diag(q, &m.map(|z| z.conj())))),
        // tau1: A_d -> Ad_Q Ad_P conj(A_d) at degree -d
        InvolutionSpec::Tau1(p, q) => {
            l.map_coeffs(|d, m| (-d, ad_diag(q, &ad_diag(p, &m.map(|z| z.conj())))))
        }
    };
    Ok(out)
}

/// Membership residual for the fixed-point subgroup of an involution:
/// max over samples of || eval(phi L, l) - eval(L, l) ||_inf.
pub fn fixed_residual(
    spec: &InvolutionSpec,
    l: &LaurentLoop,
    lambda_samples: &[C64],
) -> Result<f64> {
    let mapped = apply_involution(spec, l)?;
    let mut worst = 0.0_f64;
    for &lam in lambda_samples {
        if lam == c(0.0, 0.0) {
            return Err(Error::Domain("lambda sample must be nonzero".into()));
        }
        let a = mapped.eval(lam)?;
        let b = l.eval(lam)?;
        worst = worst.max(matrix::max_abs(&(a - b)));
    }
    Ok(worst)
}

/// Pointwise fixedness residual on a sampled value: compares
/// `matrix_action(X at parameter_map(lambda))` against `X at lambda`.
/// Useful for frames known only by samples; the caller supplies both values.
pub fn pointwise_fixed_residual(spec: &InvolutionSpec, x_at_mapped: &CMat, x_at_lambda: &CMat) -> f64 {
    matrix::max_abs(&(spec.matrix_action(x_at_mapped) - x_at_lambda))
}

/// Replace every coefficient by T A T^{-1} for invertible diagonal T.
pub fn conjugate_by(t: &CMat, l: &LaurentLoop) -> Result<LaurentLoop> {
    let n = l.dim();
    if t.nrows() != n || t.ncols() != n {
        return Err(Error::Dimension("conjugation matrix dimension mismatch".into()));
    }
    for i in 0..n {
        if t[(i, i)].norm() < 1e-300 {
            return Err(Error::Domain("conjugation matrix is singular".into()));
        }
    }
    Ok(l.map_coeffs(|d, m| {
        let mut out = m.clone();
        for r in 0..n {
            for c_ in 0..n {
                out[(r, c_)] = t[(r, r)] * m[(r, c_)] / t[(c_, c_)];
            }
        }
        (d, out)
    }))
}

/// Max over samples of || F^t J F - J ||_inf with F = eval(L, lambda).
pub fn group_residual(l: &LaurentLoop, j: &SignatureForm, lambda_samples: &[C64]) -> Result<f64> {
    if j.dim() != l.dim() {
        return Err(Error::Dimension("signature dimension mismatch".into()));
    }
    let mut worst = 0.0_f64;
    for &lam in lambda_samples {
        let f = l.eval(lam)?;
        worst = worst.max(matrix::group_residual_matrix(&f, j.diag()));
    }
    Ok(worst)
}

/// The admissible range of the loop parameter for a catalog row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRange {
    /// Nonzero real axis.
    RealAxis,
    /// Nonzero imaginary axis, excluding +-i.
    ImaginaryAxis,
    /// Unit circle, excluding +-i.
    UnitCircle,
}

/// Membership tolerances: 1e-12 on the defining condition, exclusion balls
/// of radius 1e-6 around 0 and +-i.
pub const RANGE_MEMBERSHIP_TOL: f64 = 1e-12;
pub const RANGE_EXCLUSION_RADIUS: f64 = 1e-6;

impl LambdaRange {
    pub fn contains(&self, lambda: C64) -> bool {
        if lambda.norm() < RANGE_EXCLUSION_RADIUS
            || (lambda - c(0.0, 1.0)).norm() < RANGE_EXCLUSION_RADIUS
            || (lambda + c(0.0, 1.0)).norm() < RANGE_EXCLUSION_RADIUS
        {
            return false;
        }
        match self {
            LambdaRange::RealAxis => lambda.im.abs() <= RANGE_MEMBERSHIP_TOL,
            LambdaRange::ImaginaryAxis => lambda.re.abs() <= RANGE_MEMBERSHIP_TOL,
            LambdaRange::UnitCircle => (lambda.norm() - 1.0).abs() <= RANGE_MEMBERSHIP_TOL,
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            LambdaRange::RealAxis => "real axis (nonzero)",
            LambdaRange::ImaginaryAxis => "imaginary axis (nonzero, excluding +-i)",
            LambdaRange::UnitCircle => "unit circle (excluding +-i)",
        }
    }
}

/// One row of the case tables: the diagonal transform T, the target
/// signature form, the admissible parameter range, the curvature interval
/// (with +-infinity endpoints encoded as f64 infinities), the target space
/// label, and the sign of <x, x> on the target quadric.
#[derive(Debug, Clone)]
pub struct CatalogRow {
    pub case: u8,
    pub row: u8,
    pub transform: CMat,
    pub j_hat: SignatureForm,
    pub lambda_range: LambdaRange,
    pub curvature_interval: (f64, f64),
    /// Whether the interval endpoints are attained (closed) at lo / hi.
    pub interval_closed: (bool, bool),
    pub target_label: String,
    /// +1 for sphere-type targets (<x,x> = 1), -1 for hyperbolic (<x,x> = -1).
    pub quadric_sign: i8,
    /// Curvature law: c_lambda = curvature_sign * 4 / (lambda + 1/lambda)^2.
    pub curvature_sign: f64,
}

fn diag_t(entries: &[(usize, C64)]) -> CMat {
    let n: usize = entries.iter().map(|&(k, _)| k).sum();
    let mut t = matrix::zeros(n);
    let mut i = 0;
    for &(len, val) in entries {
        for _ in 0..len {
            t[(i, i)] = val;
            i += 1;
        }
    }
    t
}

/// The (case, row) catalog of the four case tables, parameterized by the
/// tangent dimension m and codimension k (so n = m + k + 1 ambient).
///
/// Row indices follow the tables: row 1 is the imaginary-axis range, row 2
/// the real axis, row 3 the unit circle.
pub fn case_catalog(case: u8, row: u8, m: usize, k: usize) -> Result<CatalogRow> {
    if !(1..=4).contains(&case) || !(1..=3).contains(&row) {
        return Err(Error::Domain(format!(
            "case {case} / row {row} outside the catalog (cases 1..4, rows 1..3)"
        )));
    }
    let one = cr(1.0);
    let i_ = c(0.0, 1.0);
    let n = m + k + 1;
    let ident = matrix::identity(n);
    let range = match row {
        1 => LambdaRange::ImaginaryAxis,
        2 => LambdaRange::RealAxis,
        _ => LambdaRange::UnitCircle,
    };
    let inf = f64::INFINITY;
    let sphere = |s: usize| {
        if s == 0 {
            format!("S^{}", m + k)
        } else {
            format!("S^{}_{}", m + k, s)
        }
    };
    let hyper = |s: usize| {
        if s == 0 {
            format!("H^{}", m + k)
        } else {
            format!("H^{}_{}", m + k, s)
        }
    };
    // J-hat block shorthand: (len, sign) runs.
    let row_data = match (case, row) {
        // Case 1: rho1.
        (1, 1) => (
            ident.clone(),
            SignatureForm::euclidean(n),
            (-inf, 0.0),
            (false, false),
            sphere(0),
            1,
        ),
        (1, 2) => (
            diag_t(&[(m, i_), (1, one), (k, one)]),
            SignatureForm::blocks(&[(m, 1), (k + 1, -1)]),
            (-1.0, 0.0),
            (true, false),
            hyper(k),
            -1,
        ),
        (1, 3) => (
            diag_t(&[(m, i_), (1, one), (k, i_)]),
            SignatureForm::blocks(&[(m, 1), (1, -1), (k, 1)]),
            (-inf, -1.0),
            (false, true),
            hyper(0),
            -1,
        ),
        // Case 2: rho2.
        (2, 1) => (
            diag_t(&[(m, i_), (1, one), (k, one)]),
            SignatureForm::blocks(&[(m, 1), (1, -1), (k, -1)]),
            (0.0, inf),
            (false, false),
            hyper(k),
            -1,
        ),
        (2, 2) => (
            ident.clone(),
            SignatureForm::euclidean(n),
            (0.0, 1.0),
            (false, true),
            sphere(0),
            1,
        ),
        (2, 3) => (
            diag_t(&[(m, i_), (1, i_), (k, one)]),
            SignatureForm::blocks(&[(m, 1), (1, 1), (k, -1)]),
            (1.0, inf),
            (true, false),
            sphere(k),
            1,
        ),
        // Case 3: rho3.
        (3, 1) => (
            diag_t(&[(m, i_), (1, one), (k, i_)]),
            SignatureForm::blocks(&[(m, 1), (1, -1), (k, 1)]),
            (0.0, inf),
            (false, false),
            hyper(0),
            -1,
        ),
        (3, 2) => (
            diag_t(&[(m, i_), (1, i_), (k, one)]),
            SignatureForm::blocks(&[(m, 1), (1, 1), (k, -1)]),
            (0.0, 1.0),
            (false, true),
            sphere(k),
            1,
        ),
        (3, 3) => (
            ident.clone(),
            SignatureForm::euclidean(n),
            (1.0, inf),
            (true, false),
            sphere(0),
            1,
        ),
        // Case 4: base group preserves J = diag(I_m, -1, I_k), rho2.
        (4, 1) => (
            diag_t(&[(m, one), (1, i_), (k, i_)]),
            SignatureForm::blocks(&[(m, 1), (1, 1), (k, -1)]),
            (-inf, 0.0),
            (false, false),
            sphere(k),
            1,
        ),
        (4, 2) => (
            ident.clone(),
            SignatureForm::blocks(&[(m, 1), (1, -1), (k, 1)]),
            (-1.0, 0.0),
            (true, false),
            hyper(0),
            -1,
        ),
        (4, 3) => (
            diag_t(&[(m, one), (1, one), (k, i_)]),
            SignatureForm::blocks(&[(m, 1), (1, -1), (k, -1)]),
            (-inf, -1.0),
            (false, true),
            hyper(k),
            -1,
        ),
        _ => unreachable!(),
    };
    let (transform, j_hat, curvature_interval, interval_closed, target_label, quadric_sign) =
        row_data;
    Ok(CatalogRow {
        case,
        row,
        transform,
        j_hat,
        lambda_range: range,
        curvature_interval,
        interval_closed,
        target_label,
        quadric_sign,
        curvature_sign: quadric_sign as f64,
    })
}

/// Base-group signature for a case: cases 1-3 use the Euclidean form,
/// case 4 the Lorentz-type form diag(I_m, -1, I_k).
pub fn base_signature(case: u8, m: usize, k: usize) -> Result<SignatureForm> {
    match case {
        1..=3 => Ok(SignatureForm::euclidean(m + k + 1)),
        4 => Ok(SignatureForm::blocks(&[(m, 1), (1, -1), (k, 1)])),
        _ => Err(Error::Domain(format!("case {case} outside 1..4"))),
    }
}

/// The paper's standard P and Q for given (m, k).
pub fn standard_p(m: usize, k: usize) -> SignatureForm {
    SignatureForm::blocks(&[(m, 1), (k + 1, -1)])
}

pub fn standard_q(m: usize, k: usize) -> SignatureForm {
    SignatureForm::blocks(&[(m + 1, 1), (k, -1)])
}

/// Reality condition of the case (rho_1, rho_2 or rho_3; case 4 uses rho_2).
pub fn case_reality(case: u8) -> Result<InvolutionSpec> {
    match case {
        1 => Ok(InvolutionSpec::Rho1),
        2 | 4 => Ok(InvolutionSpec::Rho2),
        3 => Ok(InvolutionSpec::Rho3),
        _ => Err(Error::Domain(format!("case {case} outside 1..4"))),
    }
}

/// Sample points in a lambda range, avoiding the exclusion balls.
pub fn sample_lambdas(range: LambdaRange, count: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let t = 0.3 + 1.7 * (idx as f64 + 0.5) / count as f64; // in (0.3, 2.0)
        let lam = match range {
            LambdaRange::RealAxis => cr(t),
            LambdaRange::ImaginaryAxis => {
                // keep away from +-i
                let s = if (t - 1.0).abs() < 0.1 { t + 0.15 } else { t };
                c(0.0, s)
            }
            LambdaRange::UnitCircle => {
                // angles away from +-pi/2
                let ang = 0.2 + 1.1 * (idx as f64 + 0.5) / count as f64;
                c(ang.cos(), ang.sin())
            }
        };
        out.push(lam);
    }
    out
}

/// Random loop in the twisted algebra: a = A_{-1}/lambda + A_0 + A_1 lambda,
/// fixed by sigma, mu and the case's reality condition, skew w.r.t. the
/// case's base signature.
///
/// The generator works at the Lie-algebra level on purpose: a group-valued
/// finite Laurent loop with real coefficients is entrywise bounded on the
/// real axis, and a bounded Laurent polynomial is constant, so nontrivial
/// rho_2-fixed test loops cannot exist as Laurent data. Group-level test
/// matrices are obtained by exponentiating samples of this loop, the same
/// sample representation used for integrated frames.
pub fn random_fixed_algebra(case: u8, m: usize, k: usize, seed: u64) -> Result<LaurentLoop> {
    use rand::{Rng, SeedableRng};
    let j = base_signature(case, m, k)?;
    let q = standard_q(m, k);
    let n = m + k + 1;
    if n > matrix::MAX_DIM {
        return Err(Error::Dimension(format!("dimension {n} above the cap")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = move || 0.3 * (rng.gen::<f64>() - 0.5);
    // A_0: real, skew w.r.t. J, block-diagonal for both P and Q, i.e.
    // supported on the m- and k-blocks with zero row/column in the middle.
    let mut a0 = matrix::zeros(n);
    let skew_pair = |mat: &mut CMat, r: usize, col: usize, e: C64| {
        mat[(r, col)] = e;
        mat[(col, r)] = -e * cr(j.diag()[r] / j.diag()[col]);
    };
    for r in 0..m {
        for col in (r + 1)..m {
            let e = cr(draw());
            skew_pair(&mut a0, r, col, e);
        }
    }
    for r in (m + 1)..n {
        for col in (r + 1)..n {
            let e = cr(draw());
            skew_pair(&mut a0, r, col, e);
        }
    }
    // A_1: off-block for P (rows < m against columns >= m), with the
    // case's reality pattern; A_{-1} = Ad_Q A_1 makes the loop mu-fixed.
    let mut a1 = matrix::zeros(n);
    for r in 0..m {
        for col in m..n {
            let v = draw();
            let e = match case {
                1 => c(0.0, v),
                2 | 4 => cr(v),
                // rho_3: conj(A_1) = Ad_Q A_1, so the column through Q's
                // positive middle slot is real and the rest imaginary
                3 => {
                    if col == m {
                        cr(v)
                    } else {
                        c(0.0, v)
                    }
                }
                _ => unreachable!(),
            };
            skew_pair(&mut a1, r, col, e);
        }
    }
    let am1 = ad_diag(&q, &a1);
    LaurentLoop::new(n, BTreeMap::from([(-1, am1), (0, a0), (1, a1)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{expm, identity, max_abs, max_abs_im, zeros};
    use proptest::prelude::*;

    fn unit_entry(n: usize, r: usize, c_: usize) -> CMat {
        let mut m = zeros(n);
        m[(r, c_)] = cr(1.0);
        m
    }

    #[test]
    fn eval_constant_loop() {
        let m = identity(3) * cr(2.5);
        let l = LaurentLoop::constant(m.clone()).unwrap();
        for lam in [cr(1.0), c(0.3, -0.7), cr(-2.0)] {
            assert!(max_abs(&(l.eval(lam).unwrap() - &m)) < 1e-15);
        }
    }

    #[test]
    fn eval_monomial() {
        let l = LaurentLoop::monomial(1, identity(2)).unwrap();
        let v = l.eval(cr(2.0)).unwrap();
        assert!(max_abs(&(v - identity(2) * cr(2.0))) < 1e-15);
    }

    #[test]
    fn eval_cancellation_at_i() {
        // coeffs {-1: N, 1: N} with N = E_12 evaluates to N*(i + 1/i) = 0 at i
        let nmat = unit_entry(2, 0, 1);
        let l = LaurentLoop::new(
            2,
            BTreeMap::from([(-1, nmat.clone()), (1, nmat)]),
        )
        .unwrap();
        let v = l.eval(c(0.0, 1.0)).unwrap();
        assert!(max_abs(&v) < 1e-15);
    }

    #[test]
    fn eval_rejects_zero_with_negative_degrees() {
        let l = LaurentLoop::monomial(-1, identity(2)).unwrap();
        assert!(l.eval(cr(0.0)).is_err());
    }

    #[test]
    fn dimension_cap_enforced() {
        assert!(LaurentLoop::constant(identity(13)).is_err());
    }

    #[test]
    fn sigma_fixes_even_block_diagonal() {
        // P = diag(I_m, -I_{k+1}), degree-0 block-diagonal loop is fixed
        let p = standard_p(2, 1); // dim 4
        let mut m = zeros(4);
        m[(0, 1)] = cr(1.0);
        m[(1, 0)] = cr(-1.0);
        m[(2, 3)] = cr(0.5);
        m[(3, 2)] = cr(-0.5);
        let l = LaurentLoop::constant(m).unwrap();
        let out = apply_involution(&InvolutionSpec::Sigma(p), &l).unwrap();
        assert_eq!(out, l);
    }

    #[test]
    fn mu_maps_degree_one_to_minus_one() {
        let q = standard_q(2, 1);
        let a = unit_entry(4, 0, 3);
        let l = LaurentLoop::monomial(1, a.clone()).unwrap();
        let out = apply_involution(&InvolutionSpec::Mu(q.clone()), &l).unwrap();
        assert_eq!(out.min_degree(), -1);
        assert_eq!(out.max_degree(), -1);
        // Ad_Q flips the sign of the (0,3) entry: row sign +, col sign -
        let expect = a * cr(-1.0);
        assert!(max_abs(&(out.coeff(-1).unwrap() - expect)) < 1e-15);
    }

    #[test]
    fn rho2_fixes_real_coefficients() {
        let l = LaurentLoop::new(
            2,
            BTreeMap::from([(-1, identity(2) * cr(0.3)), (2, identity(2) * cr(-1.2))]),
        )
        .unwrap();
        let out = apply_involution(&InvolutionSpec::Rho2, &l).unwrap();
        assert_eq!(out, l);
    }

    #[test]
    fn identity_loop_fixed_by_everything() {
        let l = LaurentLoop::identity(4);
        let p = standard_p(2, 1);
        let q = standard_q(2, 1);
        let samples = [cr(0.5), c(0.2, 0.9), cr(-1.3)];
        for spec in [
            InvolutionSpec::Sigma(p.clone()),
            InvolutionSpec::Mu(q.clone()),
            InvolutionSpec::Rho1,
            InvolutionSpec::Rho2,
            InvolutionSpec::Rho3,
            InvolutionSpec::RhoHat3(q.clone()),
            InvolutionSpec::Tau1(p, q.clone()),
            InvolutionSpec::Tau2(q),
            InvolutionSpec::Tau3,
        ] {
            assert!(fixed_residual(&spec, &l, &samples).unwrap() < 1e-15);
        }
    }

    #[test]
    fn conjugate_by_identity_is_noop() {
        let l = LaurentLoop::monomial(1, unit_entry(3, 0, 2)).unwrap();
        let out = conjugate_by(&identity(3), &l).unwrap();
        assert_eq!(out, l);
    }

    #[test]
    fn conjugate_entrywise_scaling() {
        // T = diag(i, i, 1, i), L = E_13 - E_31 at degree 0:
        // entry (1,3) multiplied by i, entry (3,1) by -i -> both become i
        let t = diag_t(&[(2, c(0.0, 1.0)), (1, cr(1.0)), (1, c(0.0, 1.0))]);
        let mut m = zeros(4);
        m[(0, 2)] = cr(1.0);
        m[(2, 0)] = cr(-1.0);
        let l = LaurentLoop::constant(m).unwrap();
        let out = conjugate_by(&t, &l).unwrap();
        let coeff = out.coeff(0).unwrap();
        assert!((coeff[(0, 2)] - c(0.0, 1.0)).norm() < 1e-15);
        assert!((coeff[(2, 0)] - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn group_residual_identity_zero() {
        let l = LaurentLoop::identity(3);
        let j = SignatureForm::euclidean(3);
        assert!(group_residual(&l, &j, &[cr(1.0), c(0.3, 0.4)]).unwrap() < 1e-15);
    }

    #[test]
    fn group_residual_detects_non_orthogonal() {
        let mut m = identity(2);
        m[(0, 1)] = cr(0.7);
        let l = LaurentLoop::constant(m).unwrap();
        let j = SignatureForm::euclidean(2);
        assert!(group_residual(&l, &j, &[cr(1.0)]).unwrap() > 0.1);
    }

    #[test]
    fn catalog_case3_row3() {
        let row = case_catalog(3, 3, 2, 1).unwrap();
        assert!(max_abs(&(row.transform.clone() - identity(4))) < 1e-15);
        assert_eq!(row.j_hat, SignatureForm::euclidean(4));
        assert_eq!(row.lambda_range, LambdaRange::UnitCircle);
        assert_eq!(row.curvature_interval, (1.0, f64::INFINITY));
        assert_eq!(row.target_label, "S^3");
        assert_eq!(row.quadric_sign, 1);
    }

    #[test]
    fn catalog_case3_row1() {
        let row = case_catalog(3, 1, 2, 1).unwrap();
        // T = diag(i I_m, 1, i I_k)
        assert!((row.transform[(0, 0)] - c(0.0, 1.0)).norm() < 1e-15);
        assert!((row.transform[(2, 2)] - cr(1.0)).norm() < 1e-15);
        assert!((row.transform[(3, 3)] - c(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(row.j_hat, SignatureForm::blocks(&[(2, 1), (1, -1), (1, 1)]));
        assert_eq!(row.lambda_range, LambdaRange::ImaginaryAxis);
        assert_eq!(row.curvature_interval, (0.0, f64::INFINITY));
        assert_eq!(row.target_label, "H^3");
    }

    #[test]
    fn catalog_case1_row2() {
        let row = case_catalog(1, 2, 2, 1).unwrap();
        assert!((row.transform[(0, 0)] - c(0.0, 1.0)).norm() < 1e-15);
        assert!((row.transform[(2, 2)] - cr(1.0)).norm() < 1e-15);
        assert!((row.transform[(3, 3)] - cr(1.0)).norm() < 1e-15);
        assert_eq!(row.lambda_range, LambdaRange::RealAxis);
        assert_eq!(row.curvature_interval, (-1.0, 0.0));
        assert_eq!(row.target_label, "H^3_1");
    }

    #[test]
    fn catalog_rejects_out_of_range() {
        assert!(case_catalog(5, 1, 2, 1).is_err());
        assert!(case_catalog(1, 4, 2, 1).is_err());
    }

    #[test]
    fn lambda_range_membership() {
        assert!(LambdaRange::RealAxis.contains(cr(2.0)));
        assert!(!LambdaRange::RealAxis.contains(c(2.0, 0.1)));
        assert!(LambdaRange::ImaginaryAxis.contains(c(0.0, 0.5)));
        assert!(!LambdaRange::ImaginaryAxis.contains(c(0.0, 1.0)));
        assert!(LambdaRange::UnitCircle.contains(c(0.3_f64.cos(), 0.3_f64.sin())));
        assert!(!LambdaRange::UnitCircle.contains(c(0.0, 1.0)));
        assert!(!LambdaRange::UnitCircle.contains(cr(0.9)));
    }

    fn coeff_distance(a: &LaurentLoop, b: &LaurentLoop) -> f64 {
        let lo = a.min_degree().min(b.min_degree());
        let hi = a.max_degree().max(b.max_degree());
        let n = a.dim();
        let mut worst = 0.0_f64;
        for d in lo..=hi {
            let ca = a.coeff(d).cloned().unwrap_or_else(|| zeros(n));
            let cb = b.coeff(d).cloned().unwrap_or_else(|| zeros(n));
            worst = worst.max(max_abs(&(ca - cb)));
        }
        worst
    }

    fn skew_residual(l: &LaurentLoop, j: &SignatureForm) -> f64 {
        let n = l.dim();
        let mut jm = zeros(n);
        for (i, &d) in j.diag().iter().enumerate() {
            jm[(i, i)] = cr(d);
        }
        let mut worst = 0.0_f64;
        for d in l.min_degree()..=l.max_degree() {
            if let Some(a) = l.coeff(d) {
                worst = worst.max(max_abs(&(a.transpose() * &jm + &jm * a)));
            }
        }
        worst
    }

    #[test]
    fn random_algebra_is_fixed_and_skew() {
        let (m, k) = (2, 1);
        let samples = [c(0.4, 0.3), cr(-1.2), c(0.1, -0.9)];
        for case in 1..=4u8 {
            let a = random_fixed_algebra(case, m, k, 7 + case as u64).unwrap();
            let j = base_signature(case, m, k).unwrap();
            assert!(skew_residual(&a, &j) < 1e-14, "case {case} not skew");
            let sigma = InvolutionSpec::Sigma(standard_p(m, k));
            let mu = InvolutionSpec::Mu(standard_q(m, k));
            let rho = case_reality(case).unwrap();
            for spec in [sigma, mu, rho] {
                assert!(
                    fixed_residual(&spec, &a, &samples).unwrap() < 1e-12,
                    "case {case} not fixed by {spec:?}"
                );
            }
        }
    }

    #[test]
    fn catalog_exponentials_land_in_the_real_forms() {
        // exponentiate algebra samples and conjugate by the catalog T: the
        // result must preserve J-hat and be entrywise real on the row's range
        let (m, k) = (2, 1);
        for case in 1..=4u8 {
            let a = random_fixed_algebra(case, m, k, 40 + case as u64).unwrap();
            for row in 1..=3u8 {
                let cat = case_catalog(case, row, m, k).unwrap();
                let t_inv = crate::matrix::try_inverse(&cat.transform).unwrap();
                for lam in sample_lambdas(cat.lambda_range, 5) {
                    let x = expm(&a.eval(lam).unwrap());
                    let y = &cat.transform * x * &t_inv;
                    let g = crate::matrix::group_residual_matrix(&y, cat.j_hat.diag());
                    assert!(g < 1e-10, "case {case} row {row}: group residual {g:.2e}");
                    let im = max_abs_im(&y);
                    assert!(im < 1e-10, "case {case} row {row}: imaginary part {im:.2e}");
                }
            }
        }
    }

    // the section-8 reformulation identities, checked as exact coefficient
    // identities on generated fixed loops
    #[test]
    fn tau2_matches_mu_on_rho2_fixed_loops() {
        let q = standard_q(2, 1);
        let a = random_fixed_algebra(2, 2, 1, 11).unwrap();
        let via_tau = apply_involution(&InvolutionSpec::Tau2(q.clone()), &a).unwrap();
        let via_mu = apply_involution(&InvolutionSpec::Mu(q), &a).unwrap();
        assert!(coeff_distance(&via_tau, &via_mu) < 1e-12);
    }

    #[test]
    fn tau1_matches_mu_on_rho1_sigma_fixed_loops() {
        let p = standard_p(2, 1);
        let q = standard_q(2, 1);
        let a = random_fixed_algebra(1, 2, 1, 12).unwrap();
        let via_tau = apply_involution(&InvolutionSpec::Tau1(p, q.clone()), &a).unwrap();
        let via_mu = apply_involution(&InvolutionSpec::Mu(q), &a).unwrap();
        assert!(coeff_distance(&via_tau, &via_mu) < 1e-12);
    }

    #[test]
    fn rho_hat3_matches_rho3_on_mu_fixed_loops() {
        let q = standard_q(2, 1);
        let a = random_fixed_algebra(3, 2, 1, 13).unwrap();
        let via_hat = apply_involution(&InvolutionSpec::RhoHat3(q), &a).unwrap();
        let via_rho = apply_involution(&InvolutionSpec::Rho3, &a).unwrap();
        assert!(coeff_distance(&via_hat, &via_rho) < 1e-12);
    }

    fn random_loop(seed: u64) -> LaurentLoop {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = BTreeMap::new();
        for d in -2..=2i32 {
            let mut m = zeros(4);
            for r in 0..4 {
                for c_ in 0..4 {
                    m[(r, c_)] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                }
            }
            coeffs.insert(d, m);
        }
        LaurentLoop::new(4, coeffs).unwrap()
    }

    fn all_specs() -> Vec<InvolutionSpec> {
        let p = standard_p(2, 1);
        let q = standard_q(2, 1);
        vec![
            InvolutionSpec::Sigma(p.clone()),
            InvolutionSpec::Mu(q.clone()),
            InvolutionSpec::Rho1,
            InvolutionSpec::Rho2,
            InvolutionSpec::Rho3,
            InvolutionSpec::RhoHat3(q.clone()),
            InvolutionSpec::Tau1(p, q.clone()),
            InvolutionSpec::Tau2(q),
            InvolutionSpec::Tau3,
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn involutions_are_involutive(seed in any::<u64>()) {
            let l = random_loop(seed);
            for spec in all_specs() {
                let twice =
                    apply_involution(&spec, &apply_involution(&spec, &l).unwrap()).unwrap();
                prop_assert!(coeff_distance(&twice, &l) < 1e-12);
            }
        }

        #[test]
        fn sigma_mu_rho_commute_pairwise(seed in any::<u64>()) {
            let l = random_loop(seed);
            let specs = [
                InvolutionSpec::Sigma(standard_p(2, 1)),
                InvolutionSpec::Mu(standard_q(2, 1)),
                InvolutionSpec::Rho1,
                InvolutionSpec::Rho2,
                InvolutionSpec::Rho3,
            ];
            for s1 in &specs {
                for s2 in &specs {
                    let ab = apply_involution(s1, &apply_involution(s2, &l).unwrap()).unwrap();
                    let ba = apply_involution(s2, &apply_involution(s1, &l).unwrap()).unwrap();
                    prop_assert!(coeff_distance(&ab, &ba) < 1e-12);
                }
            }
        }

        #[test]
        fn conjugation_preserves_group_membership(
            case in 1..=4u8,
            row in 1..=3u8,
            seed in any::<u64>(),
        ) {
            let a = random_fixed_algebra(case, 2, 1, seed).unwrap();
            let cat = case_catalog(case, row, 2, 1).unwrap();
            let t_inv = crate::matrix::try_inverse(&cat.transform).unwrap();
            for lam in sample_lambdas(cat.lambda_range, 3) {
                let x = expm(&a.eval(lam).unwrap());
                let y = &cat.transform * x * &t_inv;
                prop_assert!(
                    crate::matrix::group_residual_matrix(&y, cat.j_hat.diag()) < 1e-10
                );
            }
        }
    }
}
