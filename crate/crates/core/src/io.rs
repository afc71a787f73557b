//! Text files for steady states, paths and reports.
//!
//! Every number is written with 17 significant digits (`{:.16e}`), which
//! round-trips `f64` exactly. Point and path files start with `key = value`
//! header lines followed by a comma-separated body with one header row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::continuation::{Branch, BranchRecord, PointType};
use crate::error::{Error, Result};
use crate::fem1d::{FemOps, Mesh1D};
use crate::models::{self, Problem, SystemState};
use crate::tbvp::{CanonicalPath, TimeMesh};

pub const FORMAT_VERSION: u32 = 1;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn nums(xs: &[f64]) -> String {
    xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

fn parse_err(file: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        reason: reason.into(),
    }
}

/// Header fields and CSV body of a point or path file.
struct TextFile {
    header: BTreeMap<String, String>,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_text(path: &Path) -> Result<TextFile> {
    let text = fs::read_to_string(path)?;
    let mut header = BTreeMap::new();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut columns = None;
    for line in lines.by_ref() {
        if let Some((k, v)) = line.split_once('=') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            columns = Some(line.split(',').map(|c| c.trim().to_string()).collect::<Vec<_>>());
            break;
        }
    }
    let columns = columns.ok_or_else(|| parse_err(path, "missing column header"))?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("body row {}: {e}", i + 1)))?;
        if row.len() != columns.len() {
            return Err(parse_err(
                path,
                format!("body row {} has {} values for {} columns", i + 1, row.len(), columns.len()),
            ));
        }
        rows.push(row);
    }
    Ok(TextFile { header, columns, rows })
}

impl TextFile {
    fn get(&self, path: &Path, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| parse_err(path, format!("missing header field `{key}`")))
    }

    fn get_f64(&self, path: &Path, key: &str) -> Result<f64> {
        self.get(path, key)?
            .parse()
            .map_err(|e| parse_err(path, format!("field `{key}`: {e}")))
    }

    fn get_usize(&self, path: &Path, key: &str) -> Result<usize> {
        self.get(path, key)?
            .parse()
            .map_err(|e| parse_err(path, format!("field `{key}`: {e}")))
    }

    fn get_vec(&self, path: &Path, key: &str) -> Result<Vec<f64>> {
        let v = self.get(path, key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("field `{key}`: {e}")))
    }
}

/// Metadata stored with a steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeta {
    pub point_type: PointType,
    pub n_unstable: usize,
    pub j_ca: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct LoadedPoint {
    pub problem: Problem,
    pub state: SystemState,
    pub meta: PointMeta,
}

fn problem_header(out: &mut String, problem: &Problem, params: &[f64]) {
    let mesh = problem.fem().mesh();
    let model = problem.model();
    let _ = writeln!(out, "format = {FORMAT_VERSION}");
    let _ = writeln!(out, "model = {}", model.name());
    let _ = writeln!(out, "param_names = {}", model.param_names().join(" "));
    let _ = writeln!(out, "params = {}", nums(params));
    let _ = writeln!(out, "diffusion = {}", nums(&model.diffusion(params)));
    let _ = writeln!(out, "n_nodes = {}", mesh.n_nodes());
    let _ = writeln!(out, "x_min = {}", num(mesh.x_min()));
    let _ = writeln!(out, "x_max = {}", num(mesh.x_max()));
}

fn component_names(problem: &Problem) -> Vec<String> {
    (0..problem.n_comps()).map(|c| format!("u{c}")).collect()
}

pub fn point_to_string(problem: &Problem, state: &SystemState, meta: &PointMeta) -> String {
    let mut out = String::new();
    problem_header(&mut out, problem, &state.params);
    let _ = writeln!(out, "active_param = {}", state.active);
    let _ = writeln!(out, "point_type = {}", meta.point_type);
    let _ = writeln!(out, "n_unstable = {}", meta.n_unstable);
    let _ = writeln!(out, "j_ca = {}", num(meta.j_ca));
    let _ = writeln!(out, "residual = {}", num(meta.residual));
    let _ = writeln!(out, "x,{}", component_names(problem).join(","));
    let n = problem.n_nodes();
    for (i, &x) in problem.fem().mesh().nodes().iter().enumerate() {
        out.push_str(&num(x));
        for c in 0..problem.n_comps() {
            out.push(',');
            out.push_str(&num(state.u[c * n + i]));
        }
        out.push('\n');
    }
    out
}

pub fn save_point(path: &Path, problem: &Problem, state: &SystemState, meta: &PointMeta) -> Result<()> {
    fs::write(path, point_to_string(problem, state, meta))?;
    Ok(())
}

fn rebuild_problem(path: &Path, f: &TextFile, nodes: Vec<f64>) -> Result<Problem> {
    let name = f.get(path, "model")?;
    let diffusion = f.get_vec(path, "diffusion").unwrap_or_default();
    let model = models::builtin_with_diffusion(name, &diffusion)
        .ok_or_else(|| parse_err(path, format!("unknown model `{name}`")))?;
    let n_nodes = f.get_usize(path, "n_nodes")?;
    let mesh = if nodes.is_empty() {
        Mesh1D::uniform(f.get_f64(path, "x_min")?, f.get_f64(path, "x_max")?, n_nodes)?
    } else {
        if nodes.len() != n_nodes {
            return Err(parse_err(path, format!("{} nodes listed, header says {n_nodes}", nodes.len())));
        }
        Mesh1D::from_nodes(nodes)?
    };
    Ok(Problem::new(model, FemOps::assemble(mesh)))
}

/// Read a point file without checking its residual.
pub fn read_point(path: &Path) -> Result<LoadedPoint> {
    let f = read_text(path)?;
    let nodes: Vec<f64> = f.rows.iter().map(|r| r[0]).collect();
    let problem = rebuild_problem(path, &f, nodes)?;
    let nc = problem.n_comps();
    if f.columns.len() != nc + 1 {
        return Err(parse_err(path, format!("expected {} columns, found {}", nc + 1, f.columns.len())));
    }
    let n = problem.n_nodes();
    let u = DVector::from_fn(nc * n, |k, _| f.rows[k % n][1 + k / n]);
    let params = f.get_vec(path, "params")?;
    if params.len() != problem.model().param_names().len() {
        return Err(parse_err(path, "parameter count does not match the model"));
    }
    let active = f.get_usize(path, "active_param")?;
    if active >= params.len() {
        return Err(parse_err(path, "active parameter index out of range"));
    }
    let point_type = PointType::parse(f.get(path, "point_type")?)
        .ok_or_else(|| parse_err(path, "unknown point type"))?;
    let meta = PointMeta {
        point_type,
        n_unstable: f.get_usize(path, "n_unstable")?,
        j_ca: f.get_f64(path, "j_ca")?,
        residual: f.get_f64(path, "residual")?,
    };
    Ok(LoadedPoint {
        problem,
        state: SystemState::new(u, params, active),
        meta,
    })
}

/// Read a point file and reject it unless `‖G‖_∞ ≤ 10·newton_tol`.
pub fn load_point(path: &Path, newton_tol: f64) -> Result<LoadedPoint> {
    let p = read_point(path)?;
    let res = p.problem.residual(&p.state.u, &p.state.params)?.amax();
    if res > 10.0 * newton_tol {
        return Err(parse_err(
            path,
            format!("stale point: residual {res:.3e} exceeds {:.3e}", 10.0 * newton_tol),
        ));
    }
    Ok(p)
}

pub fn path_to_string(problem: &Problem, params: &[f64], path: &CanonicalPath) -> String {
    let mut out = String::new();
    problem_header(&mut out, problem, params);
    let _ = writeln!(out, "alpha = {}", num(path.alpha));
    let _ = writeln!(out, "t_end = {}", num(path.mesh.t_end()));
    let _ = writeln!(out, "m = {}", path.mesh.len());
    let _ = writeln!(out, "value = {}", num(path.value.unwrap_or(f64::NAN)));
    let n = problem.n_nodes();
    let cols: Vec<String> = (0..problem.n_comps())
        .flat_map(|c| (0..n).map(move |i| format!("u{c}_{i}")))
        .collect();
    let _ = writeln!(out, "t,{}", cols.join(","));
    for (j, &t) in path.mesh.points().iter().enumerate() {
        out.push_str(&num(t));
        for k in 0..path.dim() {
            out.push(',');
            out.push_str(&num(path.values[(k, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn save_path(file: &Path, problem: &Problem, params: &[f64], path: &CanonicalPath) -> Result<()> {
    fs::write(file, path_to_string(problem, params, path))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LoadedPath {
    pub problem: Problem,
    pub params: Vec<f64>,
    pub path: CanonicalPath,
}

pub fn load_path(file: &Path) -> Result<LoadedPath> {
    let f = read_text(file)?;
    let problem = rebuild_problem(file, &f, Vec::new())?;
    let params = f.get_vec(file, "params")?;
    let d = problem.dim();
    if f.columns.len() != d + 1 {
        return Err(parse_err(file, format!("expected {} columns, found {}", d + 1, f.columns.len())));
    }
    let times: Vec<f64> = f.rows.iter().map(|r| r[0]).collect();
    let m = f.get_usize(file, "m")?;
    if times.len() != m {
        return Err(parse_err(file, format!("{} time rows, header says {m}", times.len())));
    }
    let values = DMatrix::from_fn(d, m, |k, j| f.rows[j][1 + k]);
    let mut path = CanonicalPath::new(TimeMesh::new(times)?, values, f.get_f64(file, "alpha")?)?;
    let v = f.get_f64(file, "value")?;
    path.value = (!v.is_nan()).then_some(v);
    path.converged = true;
    Ok(LoadedPath { problem, params, path })
}

pub const BRANCH_COLUMNS: &str = "index,point_type,n_unstable,param,l2norm,j_ca,j_disc,point_file";

pub fn branch_csv(records: &[BranchRecord]) -> String {
    let mut out = String::from(BRANCH_COLUMNS);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.index,
            r.point_type,
            r.n_unstable,
            num(r.param),
            num(r.l2norm),
            num(r.j_ca),
            num(r.j_disc),
            r.point_file
        );
    }
    out
}

/// Write `branch.csv` and one point file per record into `dir`.
pub fn save_branch(dir: &Path, problem: &Problem, branch: &Branch) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("branch.csv"), branch_csv(&branch.records))?;
    for p in &branch.points {
        let meta = PointMeta {
            point_type: p.point_type,
            n_unstable: p.n_unstable,
            j_ca: p.j_ca,
            residual: p.residual,
        };
        save_point(&dir.join(&p.label), problem, &p.state, &meta)?;
    }
    Ok(())
}

pub fn alpha_value_csv(alv: &[f64], vv: &[f64]) -> String {
    let mut out = String::from("step,alpha,value\n");
    for (k, (a, v)) in alv.iter().zip(vv).enumerate() {
        let _ = writeln!(out, "{k},{},{}", num(*a), num(*v));
    }
    out
}
