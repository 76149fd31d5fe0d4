//! File formats: loop/factor files, run configuration, surface exports
//! (CSV, OBJ, legacy VTK), diagnostics reports, and the lambda parser.
//!
//! Loop files are JSON with an integer `n` and a `coeffs` map from degree
//! strings to n x n arrays of [re, im] pairs; doubles round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Grid;
use crate::immersions::ImmersionSurface;
use crate::loopalg::LaurentLoop;
use crate::matrix::{c, CMat, C64};

// ---------------------------------------------------------------------------
// Loop and factor files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LoopFile {
    n: usize,
    /// "plus" / "minus" on factor files written by the splitter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factor: Option<String>,
    coeffs: BTreeMap<String, Vec<Vec<[f64; 2]>>>,
}

pub fn loop_to_json(l: &LaurentLoop, factor: Option<&str>) -> Result<String> {
    let n = l.dim();
    let mut coeffs = BTreeMap::new();
    for d in l.min_degree()..=l.max_degree() {
        let Some(m) = l.coeff(d) else { continue };
        let rows: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|r| (0..n).map(|col| [m[(r, col)].re, m[(r, col)].im]).collect())
            .collect();
        coeffs.insert(d.to_string(), rows);
    }
    let file = LoopFile {
        n,
        factor: factor.map(str::to_owned),
        coeffs,
    };
    serde_json::to_string_pretty(&file).map_err(Error::from)
}

pub fn loop_from_json(text: &str) -> Result<(LaurentLoop, Option<String>)> {
    let file: LoopFile = serde_json::from_str(text)?;
    let mut coeffs = BTreeMap::new();
    for (key, rows) in &file.coeffs {
        let d: i32 = key
            .parse()
            .map_err(|_| Error::Parse(format!("bad degree key {key:?}")))?;
        if rows.len() != file.n || rows.iter().any(|r| r.len() != file.n) {
            return Err(Error::Parse(format!(
                "coefficient at degree {d} is not {0} x {0}",
                file.n
            )));
        }
        let mut m = CMat::zeros(file.n, file.n);
        for (r, row) in rows.iter().enumerate() {
            for (col, &[re, im]) in row.iter().enumerate() {
                m[(r, col)] = c(re, im);
            }
        }
        coeffs.insert(d, m);
    }
    Ok((LaurentLoop::new(file.n, coeffs)?, file.factor))
}

pub fn write_loop_file(path: &Path, l: &LaurentLoop, factor: Option<&str>) -> Result<()> {
    std::fs::write(path, loop_to_json(l, factor)?).map_err(Error::from)
}

pub fn read_loop_file(path: &Path) -> Result<(LaurentLoop, Option<String>)> {
    loop_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Parameters of a CLI run; round-trips losslessly through JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub case: u8,
    pub row: u8,
    /// Curvature parameter for insertion round trips.
    pub c: f64,
    /// Lambda values in the textual forms accepted by `parse_lambda`.
    pub lambdas: Vec<String>,
    /// Grid sample counts (width x height) on the standard square domain.
    pub grid: [usize; 2],
    pub grid_half_width: f64,
    pub strip_eps: f64,
    pub tol_mc: f64,
    pub tol_group: f64,
    pub tol_curvature: f64,
    pub tol_quadric: f64,
    pub tol_pluriharmonic: f64,
    pub tol_reality: f64,
    pub seed: u64,
    pub threads: usize,
    /// Invariant suites for `verify`; empty means all of them.
    pub suites: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: 3,
            row: 3,
            c: 0.5,
            lambdas: vec!["1e^{0.3i}".into()],
            grid: [64, 64],
            grid_half_width: 1.0,
            strip_eps: 0.1,
            tol_mc: 1e-6,
            tol_group: 1e-10,
            tol_curvature: 1e-2,
            tol_quadric: 1e-8,
            tol_pluriharmonic: 1e-5,
            tol_reality: 1e-8,
            seed: 7,
            threads: 0,
            suites: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tol_mc", self.tol_mc),
            ("tol_group", self.tol_group),
            ("tol_curvature", self.tol_curvature),
            ("tol_quadric", self.tol_quadric),
            ("tol_pluriharmonic", self.tol_pluriharmonic),
            ("tol_reality", self.tol_reality),
        ] {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {t}")));
            }
        }
        if self.grid[0] < 2 || self.grid[1] < 2 {
            return Err(Error::Domain("grid needs at least 2 samples per axis".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Lambda parsing
// ---------------------------------------------------------------------------

/// Parse a loop parameter in `a+bi` or `re^{it}` form, e.g. `2`, `0.5i`,
/// `1+0.3i`, `e^{0.3i}`, `2e^{-1.1i}`.
pub fn parse_lambda(text: &str) -> Result<C64> {
    let s: String = text.chars().filter(|ch| !ch.is_whitespace()).collect();
    if s.is_empty() {
        return Err(Error::Parse("empty lambda".into()));
    }
    if let Some(pos) = s.find("e^{") {
        let radius = if pos == 0 {
            1.0
        } else {
            s[..pos]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad modulus in {text:?}")))?
        };
        let rest = &s[pos + 3..];
        let inner = rest
            .strip_suffix('}')
            .ok_or_else(|| Error::Parse(format!("unterminated exponent in {text:?}")))?;
        let ang_text = inner
            .strip_suffix('i')
            .or_else(|| inner.strip_prefix('i'))
            .ok_or_else(|| Error::Parse(format!("exponent in {text:?} must be imaginary")))?;
        let angle = if ang_text.is_empty() {
            1.0
        } else {
            ang_text
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad angle in {text:?}")))?
        };
        return Ok(c(radius * angle.cos(), radius * angle.sin()));
    }
    // rectangular form: split at the last +/- that is not an exponent sign
    // or the leading sign
    let bytes = s.as_bytes();
    let mut split = None;
    for i in (1..bytes.len()).rev() {
        let ch = bytes[i] as char;
        if (ch == '+' || ch == '-') && !matches!(bytes[i - 1] as char, 'e' | 'E') {
            split = Some(i);
            break;
        }
    }
    let parse_part = |p: &str, what: &str| -> Result<f64> {
        match p {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => p
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad {what} part in {text:?}"))),
        }
    };
    match split {
        Some(i) => {
            let (re_part, im_part) = (&s[..i], &s[i..]);
            let im_body = im_part
                .strip_suffix('i')
                .ok_or_else(|| Error::Parse(format!("expected `a+bi` in {text:?}")))?;
            Ok(c(parse_part(re_part, "real")?, parse_part(im_body, "imaginary")?))
        }
        None => match s.strip_suffix('i') {
            Some(body) => Ok(c(0.0, parse_part(body, "imaginary")?)),
            None => Ok(c(parse_part(&s, "real")?, 0.0)),
        },
    }
}

// ---------------------------------------------------------------------------
// Surface exports
// ---------------------------------------------------------------------------

/// Fixed-precision decimal (15 significant digits) used for every printed
/// float, so identical runs produce byte-identical output.
pub fn sig15(x: f64) -> String {
    format!("{x:.14e}")
}

/// CSV with header `u,v,x1..xn`, 15 significant digits per value.
pub fn surface_to_csv(surface: &ImmersionSurface) -> String {
    let grid = &surface.grid;
    let dim = surface.points.first().map_or(0, |p| p.len());
    let mut out = String::from("u,v");
    for i in 1..=dim {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for i in 0..grid.nu() {
        for j in 0..grid.nv() {
            let (u, v) = grid.coords(i, j);
            out.push_str(&sig15(u));
            out.push(',');
            out.push_str(&sig15(v));
            for x in surface.points[grid.idx(i, j)].iter() {
                out.push(',');
                out.push_str(&sig15(*x));
            }
            out.push('\n');
        }
    }
    out
}

fn xyz(p: &nalgebra::DVector<f64>) -> (f64, f64, f64) {
    (
        p.get(0).copied().unwrap_or(0.0),
        p.get(1).copied().unwrap_or(0.0),
        p.get(2).copied().unwrap_or(0.0),
    )
}

/// Wavefront OBJ quad mesh over the grid. Only the first three ambient
/// coordinates are written; remaining coordinates go to the CSV/VTK exports.
pub fn surface_to_obj(surface: &ImmersionSurface) -> Result<String> {
    let grid = &surface.grid;
    let (nu, nv) = (grid.nu(), grid.nv());
    let mut out = String::from("# surface export\n");
    for i in 0..nu {
        for j in 0..nv {
            let (x, y, z) = xyz(&surface.points[grid.idx(i, j)]);
            out.push_str(&format!("v {} {} {}\n", sig15(x), sig15(y), sig15(z)));
        }
    }
    for i in 0..nu - 1 {
        for j in 0..nv - 1 {
            // 1-based, row-major
            let a = i * nv + j + 1;
            let b = (i + 1) * nv + j + 1;
            out.push_str(&format!("f {a} {b} {} {}\n", b + 1, a + 1));
        }
    }
    Ok(out)
}

/// Legacy ASCII VTK structured grid; extra ambient coordinates beyond the
/// third are attached as point scalars.
pub fn surface_to_vtk(surface: &ImmersionSurface) -> Result<String> {
    let grid = &surface.grid;
    let (nu, nv) = (grid.nu(), grid.nv());
    let npts = nu * nv;
    let dim = surface.points.first().map_or(0, |p| p.len());
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("surface export\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET STRUCTURED_GRID\n");
    out.push_str(&format!("DIMENSIONS {nv} {nu} 1\n"));
    out.push_str(&format!("POINTS {npts} double\n"));
    for i in 0..nu {
        for j in 0..nv {
            let (x, y, z) = xyz(&surface.points[grid.idx(i, j)]);
            out.push_str(&format!("{} {} {}\n", sig15(x), sig15(y), sig15(z)));
        }
    }
    if dim > 3 {
        out.push_str(&format!("POINT_DATA {npts}\n"));
        for extra in 3..dim {
            out.push_str(&format!("SCALARS x{} double 1\n", extra + 1));
            out.push_str("LOOKUP_TABLE default\n");
            for i in 0..nu {
                for j in 0..nv {
                    out.push_str(&sig15(surface.points[grid.idx(i, j)][extra]));
                    out.push('\n');
                }
            }
        }
    }
    Ok(out)
}

/// Per-grid scalar field export (e.g. curvature estimates) as CSV.
pub fn field_to_csv(grid: &Grid, name: &str, values: &[Option<f64>]) -> String {
    let mut out = format!("u,v,{name}\n");
    for i in 0..grid.nu() {
        for j in 0..grid.nv() {
            if let Some(x) = values[grid.idx(i, j)] {
                let (u, v) = grid.coords(i, j);
                out.push_str(&format!("{},{},{}\n", sig15(u), sig15(v), sig15(x)));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticEntry {
    pub name: String,
    /// Fixed-precision decimal so reports are byte-identical across runs.
    pub measured: String,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub entries: Vec<DiagnosticEntry>,
}

impl DiagnosticsReport {
    pub fn push(&mut self, name: &str, measured: f64, tolerance: f64) -> bool {
        let pass = measured <= tolerance;
        self.entries.push(DiagnosticEntry {
            name: name.to_owned(),
            measured: sig15(measured),
            tolerance: sig15(tolerance),
            pass,
        });
        pass
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }

    /// Human-readable lines, one per entry.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} {}: measured {} (tolerance {})\n",
                if e.pass { "PASS" } else { "FAIL" },
                e.name,
                e.measured,
                e.tolerance
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::immersions::example_surface;
    use crate::matrix::cr;

    #[test]
    fn loop_file_round_trip_is_exact() {
        let l = crate::immersions::example_frame_loop(0.371, -0.82);
        let text = loop_to_json(&l, None).unwrap();
        let (back, factor) = loop_from_json(&text).unwrap();
        assert!(factor.is_none());
        assert_eq!(back.dim(), l.dim());
        for d in l.min_degree()..=l.max_degree() {
            match (l.coeff(d), back.coeff(d)) {
                (None, None) => {}
                (Some(a), Some(b)) => assert_eq!(a, b, "degree {d} not bit-identical"),
                _ => panic!("degree {d} lost"),
            }
        }
    }

    #[test]
    fn factor_tag_round_trips() {
        let l = crate::loopalg::LaurentLoop::identity(2);
        let text = loop_to_json(&l, Some("plus")).unwrap();
        let (_, factor) = loop_from_json(&text).unwrap();
        assert_eq!(factor.as_deref(), Some("plus"));
    }

    #[test]
    fn config_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_tolerance() {
        let mut cfg = RunConfig::default();
        cfg.tol_mc = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lambda_forms() {
        assert_eq!(parse_lambda("2").unwrap(), cr(2.0));
        assert_eq!(parse_lambda("-1.5").unwrap(), cr(-1.5));
        assert_eq!(parse_lambda("0.5i").unwrap(), c(0.0, 0.5));
        assert_eq!(parse_lambda("i").unwrap(), c(0.0, 1.0));
        assert_eq!(parse_lambda("-i").unwrap(), c(0.0, -1.0));
        assert_eq!(parse_lambda("1+0.3i").unwrap(), c(1.0, 0.3));
        assert_eq!(parse_lambda("2e-1+1e-2i").unwrap(), c(0.2, 0.01));
        let l = parse_lambda("e^{0.3i}").unwrap();
        assert!((l - c(0.3f64.cos(), 0.3f64.sin())).norm() < 1e-15);
        let l2 = parse_lambda("2e^{-1.1i}").unwrap();
        assert!((l2 - c(2.0 * (-1.1f64).cos(), 2.0 * (-1.1f64).sin())).norm() < 1e-15);
        assert!(parse_lambda("").is_err());
        assert!(parse_lambda("e^{0.3}").is_err());
        assert!(parse_lambda("nope").is_err());
    }

    #[test]
    fn exports_have_expected_shape() {
        let grid = Grid::centered_square(0.5, 4).unwrap();
        let surface = example_surface(3, &grid, cr(1.0)).unwrap();
        let csv = surface_to_csv(&surface);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "u,v,x1,x2,x3,x4");
        assert_eq!(csv.lines().count(), 1 + grid.num_points());
        let obj = surface_to_obj(&surface).unwrap();
        let nverts = obj.lines().filter(|l| l.starts_with("v ")).count();
        let nfaces = obj.lines().filter(|l| l.starts_with("f ")).count();
        assert_eq!(nverts, grid.num_points());
        assert_eq!(nfaces, (grid.nu() - 1) * (grid.nv() - 1));
        let vtk = surface_to_vtk(&surface).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
        assert!(vtk.contains(&format!("POINTS {} double", grid.num_points())));
        assert!(vtk.contains("SCALARS x4 double 1"));
    }

    #[test]
    fn diagnostics_report_renders_and_gates() {
        let mut rep = DiagnosticsReport::default();
        assert!(rep.push("small", 1e-12, 1e-8));
        assert!(!rep.push("big", 1.0, 1e-8));
        assert!(!rep.all_pass());
        let text = rep.render();
        assert!(text.contains("PASS small"));
        assert!(text.contains("FAIL big"));
        let json = rep.to_json().unwrap();
        let back: DiagnosticsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.entries.len(), 2);
    }
}
