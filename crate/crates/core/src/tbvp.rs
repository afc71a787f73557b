//! Boundary-value problems in time for `M u̇ = −G(u)` on `[0, T]`.
//!
//! The discretization is the trapezoidal rule on a (possibly graded) time
//! mesh,
//!
//! ```text
//! M (u_{i+1} − u_i)/h_i + ½ (G(u_{i+1}) + G(u_i)) = 0,
//! ```
//!
//! with the first `n_fix` components of `u_0` prescribed as
//! `α v_start + (1−α) v̂` and the terminal condition `Ψ (u_{m−1} − û) = 0`.
//! In extended mode `α` is an extra unknown (constant in time) closed by an
//! arclength row in the initial values.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{AbdSystem, Coupling};
use crate::models::Problem;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    points: Vec<f64>,
}

impl TimeMesh {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::Config("time mesh needs at least two points starting at 0".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || !points.iter().all(|t| t.is_finite()) {
            return Err(Error::Config("time mesh must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.points.last().expect("mesh is never empty")
    }

    pub fn steps(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `tᵢ = T (i/(m−1))^s`, clustering points near `t = 0` for `s > 1`.
pub fn make_graded_mesh(t_end: f64, m: usize, s: f64) -> Result<TimeMesh> {
    if !(t_end > 0.0) || m < 2 || !(s >= 1.0) {
        return Err(Error::Config(format!(
            "graded mesh needs T > 0, m >= 2, s >= 1 (got {t_end}, {m}, {s})"
        )));
    }
    let last = (m - 1) as f64;
    let mut pts: Vec<f64> = (0..m).map(|i| t_end * (i as f64 / last).powf(s)).collect();
    pts[m - 1] = t_end;
    TimeMesh::new(pts)
}

#[derive(Debug, Clone)]
pub struct CanonicalPath {
    pub mesh: TimeMesh,
    /// Column `i` is `u(tᵢ)`.
    pub values: DMatrix<f64>,
    pub alpha: f64,
    pub value: Option<f64>,
    pub converged: bool,
    pub max_residual: f64,
    pub iterations: usize,
    /// `‖u(T) − û‖_∞`, NaN until solved.
    pub terminal_gap: f64,
}

impl CanonicalPath {
    pub fn new(mesh: TimeMesh, values: DMatrix<f64>, alpha: f64) -> Result<Self> {
        check_len(mesh.len(), values.ncols(), "path columns vs time mesh")?;
        Ok(Self {
            mesh,
            values,
            alpha,
            value: None,
            converged: false,
            max_residual: f64::NAN,
            iterations: 0,
            terminal_gap: f64::NAN,
        })
    }

    /// The path `u(t) ≡ u` on `mesh`.
    pub fn constant(mesh: TimeMesh, u: &DVector<f64>, alpha: f64) -> Self {
        let values = DMatrix::from_fn(u.len(), mesh.len(), |i, _| u[i]);
        Self::new(mesh, values, alpha).expect("column count matches by construction")
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.values.column(i).into_owned()
    }

    pub fn initial(&self) -> DVector<f64> {
        self.column(0)
    }

    pub fn terminal(&self) -> DVector<f64> {
        self.column(self.mesh.len() - 1)
    }

    /// Piecewise-linear interpolation in time, clamped to `[0, T]`.
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let pts = self.mesh.points();
        if t <= 0.0 {
            return self.column(0);
        }
        if t >= self.mesh.t_end() {
            return self.terminal();
        }
        let k = pts.partition_point(|&x| x <= t) - 1;
        let th = (t - pts[k]) / (pts[k + 1] - pts[k]);
        self.values.column(k) * (1.0 - th) + self.values.column(k + 1) * th
    }

    /// The same path on another mesh, by linear interpolation.
    pub fn resample(&self, mesh: TimeMesh) -> Self {
        let mut values = DMatrix::zeros(self.dim(), mesh.len());
        for (j, &t) in mesh.points().iter().enumerate() {
            values.set_column(j, &self.interpolate(t * self.mesh.t_end() / mesh.t_end()));
        }
        let mut out = Self::new(mesh, values, self.alpha).expect("column count matches");
        out.value = None;
        out
    }
}

/// `M u̇ = −G(u)` with a constant mass matrix; the first `n_fixed()`
/// components are the ones prescribed at `t = 0`.
pub trait MassSystem {
    fn dim(&self) -> usize;
    fn n_fixed(&self) -> usize;
    fn mass(&self) -> &DMatrix<f64>;
    fn rhs(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn rhs_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// The canonical system of a problem at fixed parameters.
pub struct CanonicalSystem<'a> {
    problem: &'a Problem,
    params: Vec<f64>,
    mass: DMatrix<f64>,
}

impl<'a> CanonicalSystem<'a> {
    pub fn new(problem: &'a Problem, params: &[f64]) -> Self {
        Self {
            problem,
            params: params.to_vec(),
            mass: problem.mass_matrix(),
        }
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }
}

impl MassSystem for CanonicalSystem<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn n_fixed(&self) -> usize {
        self.problem.n_state_values()
    }

    fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    fn rhs(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.problem.residual(u, &self.params)
    }

    fn rhs_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.problem.jacobian(u, &self.params)
    }
}

/// `⟨s, u(0) − u_prev(0)⟩ + s_α (α − α_prev) = σ`.
#[derive(Debug, Clone)]
pub struct ArclengthRow {
    pub s: DVector<f64>,
    pub s_alpha: f64,
    pub sigma: f64,
    pub u0_prev: DVector<f64>,
    pub alpha_prev: f64,
}

impl ArclengthRow {
    pub fn residual(&self, u0: &DVector<f64>, alpha: f64) -> f64 {
        self.s.dot(&(u0 - &self.u0_prev)) + self.s_alpha * (alpha - self.alpha_prev) - self.sigma
    }
}

#[derive(Debug, Clone)]
pub struct BvpBc {
    /// Initial states at `α = 1`.
    pub v_start: DVector<f64>,
    /// Initial states at `α = 0` (the states of `û`).
    pub v_hat: DVector<f64>,
    pub u_hat: DVector<f64>,
    pub psi: DMatrix<f64>,
    /// Fixed homotopy value; the starting guess for `α` in extended mode.
    pub alpha: f64,
    /// Present in extended mode.
    pub arclength: Option<ArclengthRow>,
}

impl BvpBc {
    pub fn extended(&self) -> bool {
        self.arclength.is_some()
    }

    pub fn initial_states(&self, alpha: f64) -> DVector<f64> {
        &self.v_start * alpha + &self.v_hat * (1.0 - alpha)
    }

    fn check(&self, sys: &dyn MassSystem) -> Result<()> {
        let (d, nf) = (sys.dim(), sys.n_fixed());
        check_len(nf, self.v_start.len(), "initial states v_start")?;
        check_len(nf, self.v_hat.len(), "initial states v_hat")?;
        check_len(d, self.u_hat.len(), "terminal steady state")?;
        if self.psi.nrows() > 0 {
            check_len(d, self.psi.ncols(), "projection columns")?;
        }
        if self.psi.nrows() + nf != d {
            return Err(Error::ProjectionMismatch(format!(
                "{} projection rows and {nf} initial conditions for {d} unknowns per time",
                self.psi.nrows()
            )));
        }
        if let Some(a) = &self.arclength {
            check_len(d, a.s.len(), "arclength direction")?;
            check_len(d, a.u0_prev.len(), "arclength reference")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSettings {
    /// Residual tolerance, scaled by `max(1, ‖u‖_∞)`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative tolerance of the terminal proximity check.
    pub terminal_tol: f64,
    pub max_points: usize,
    /// Absolute target of the refinement error indicator.
    pub err_tol: f64,
}

impl Default for BvpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            max_halvings: 8,
            terminal_tol: 1e-2,
            max_points: 400,
            err_tol: 1e-4,
        }
    }
}

struct Evaluated {
    res: DVector<f64>,
    max_res: f64,
}

/// Stacked residual: initial rows, arclength row, collocation rows, terminal rows.
fn evaluate(
    sys: &dyn MassSystem,
    bc: &BvpBc,
    mesh: &TimeMesh,
    u: &DMatrix<f64>,
    alpha: f64,
) -> Result<Evaluated> {
    let (d, nf, m) = (sys.dim(), sys.n_fixed(), mesh.len());
    let mass = sys.mass();
    let mut g = Vec::with_capacity(m);
    for i in 0..m {
        let gi = sys.rhs(&u.column(i).into_owned()).map_err(|e| Error::PathEvaluation {
            time_index: i,
            source: Box::new(e),
        })?;
        g.push(gi);
    }
    let n_arc = usize::from(bc.extended());
    let total = nf + n_arc + (m - 1) * d + bc.psi.nrows();
    let mut res = DVector::zeros(total);
    let v0 = bc.initial_states(alpha);
    for k in 0..nf {
        res[k] = u[(k, 0)] - v0[k];
    }
    if let Some(a) = &bc.arclength {
        res[nf] = a.residual(&u.column(0).into_owned(), alpha);
    }
    let h = mesh.steps();
    let mut row = nf + n_arc;
    for i in 0..m - 1 {
        let du = (u.column(i + 1) - u.column(i)) / h[i];
        let r = mass * du + (&g[i] + &g[i + 1]) * 0.5;
        res.rows_mut(row, d).copy_from(&r);
        row += d;
    }
    if bc.psi.nrows() > 0 {
        let r = &bc.psi * (u.column(m - 1) - &bc.u_hat);
        res.rows_mut(row, r.len()).copy_from(&r);
    }
    let max_res = res.amax();
    Ok(Evaluated { res, max_res })
}

fn newton_system(
    sys: &dyn MassSystem,
    bc: &BvpBc,
    mesh: &TimeMesh,
    u: &DMatrix<f64>,
    ev: &Evaluated,
) -> Result<AbdSystem> {
    let (d, nf, m) = (sys.dim(), sys.n_fixed(), mesh.len());
    let ext = bc.extended();
    let w0 = d + usize::from(ext);
    let mass = sys.mass();
    let n_arc = usize::from(ext);

    let mut top = DMatrix::zeros(nf + n_arc, w0);
    let mut top_rhs = DVector::zeros(nf + n_arc);
    for k in 0..nf {
        top[(k, k)] = 1.0;
        if ext {
            top[(k, d)] = -(bc.v_start[k] - bc.v_hat[k]);
        }
        top_rhs[k] = -ev.res[k];
    }
    if let Some(a) = &bc.arclength {
        for j in 0..d {
            top[(nf, j)] = a.s[j];
        }
        top[(nf, d)] = a.s_alpha;
        top_rhs[nf] = -ev.res[nf];
    }

    let h = mesh.steps();
    let mut jac_next = sys
        .rhs_jacobian(&u.column(0).into_owned())
        .map_err(|e| Error::PathEvaluation {
            time_index: 0,
            source: Box::new(e),
        })?;
    let mut couplings = Vec::with_capacity(m - 1);
    let mut row = nf + n_arc;
    for i in 0..m - 1 {
        let jac_i = jac_next;
        jac_next = sys
            .rhs_jacobian(&u.column(i + 1).into_owned())
            .map_err(|e| Error::PathEvaluation {
                time_index: i + 1,
                source: Box::new(e),
            })?;
        let left_core = jac_i * 0.5 - mass / h[i];
        let left = if i == 0 && ext {
            let mut l = DMatrix::zeros(d, w0);
            l.view_mut((0, 0), (d, d)).copy_from(&left_core);
            l
        } else {
            left_core
        };
        let right = &jac_next * 0.5 + mass / h[i];
        couplings.push(Coupling {
            left,
            right,
            rhs: -ev.res.rows(row, d).into_owned(),
        });
        row += d;
    }
    let bottom = if bc.psi.nrows() == 0 { DMatrix::zeros(0, d) } else { bc.psi.clone() };
    let bottom_rhs = -ev.res.rows(row, bc.psi.nrows()).into_owned();
    Ok(AbdSystem {
        top,
        top_rhs,
        couplings,
        bottom,
        bottom_rhs,
    })
}

/// Damped Newton on the space-time system.
///
/// `guess.alpha` is ignored in natural mode, where `bc.alpha` is used.
pub fn solve_bvp(
    sys: &dyn MassSystem,
    bc: &BvpBc,
    guess: &CanonicalPath,
    settings: &BvpSettings,
) -> Result<CanonicalPath> {
    bc.check(sys)?;
    check_len(sys.dim(), guess.dim(), "path guess rows")?;
    let mesh = guess.mesh.clone();
    let m = mesh.len();
    let d = sys.dim();
    let ext = bc.extended();
    let mut u = guess.values.clone();
    let mut alpha = if ext { guess.alpha } else { bc.alpha };
    let tol_of = |u: &DMatrix<f64>| settings.tol * u.amax().max(1.0);

    let mut ev = evaluate(sys, bc, &mesh, &u, alpha)?;
    let mut iter = 0;
    while ev.max_res > tol_of(&u) {
        if iter == settings.max_iter {
            return Err(Error::PathFailure {
                iterations: iter,
                residual: ev.max_res,
            });
        }
        iter += 1;
        let abd = newton_system(sys, bc, &mesh, &u, &ev)?;
        let delta = abd.solve()?;
        let mut theta = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let mut trial = u.clone();
            for i in 0..m {
                let mut col = trial.column_mut(i);
                col.axpy(theta, &delta[i].rows(0, d), 1.0);
            }
            let a_trial = if ext { alpha + theta * delta[0][d] } else { alpha };
            if let Ok(e) = evaluate(sys, bc, &mesh, &trial, a_trial) {
                if e.max_res < ev.max_res {
                    accepted = Some((trial, a_trial, e));
                    break;
                }
            }
            theta *= 0.5;
        }
        match accepted {
            Some((trial, a_trial, e)) => {
                debug!("bvp iteration {iter}: residual {:.3e} (step {theta})", e.max_res);
                u = trial;
                alpha = a_trial;
                ev = e;
            }
            None => {
                return Err(Error::PathFailure {
                    iterations: iter,
                    residual: ev.max_res,
                })
            }
        }
    }
    let mut path = CanonicalPath::new(mesh, u, alpha)?;
    path.converged = true;
    path.max_residual = ev.max_res;
    path.iterations = iter;
    path.terminal_gap = (path.terminal() - &bc.u_hat).amax();
    let scale = bc.u_hat.amax();
    if path.terminal_gap > settings.terminal_tol * scale {
        warn!(
            "path end is {:.3e} away from the steady state (limit {:.3e}); consider a larger T",
            path.terminal_gap,
            settings.terminal_tol * scale
        );
    }
    Ok(path)
}

/// Residual of a path in the discrete system, independent of the solver.
pub fn path_residual(sys: &dyn MassSystem, bc: &BvpBc, path: &CanonicalPath) -> Result<f64> {
    bc.check(sys)?;
    Ok(evaluate(sys, bc, &path.mesh, &path.values, path.alpha)?.max_res)
}

/// Per-interval error indicator `h² ‖u''‖_∞ / 8` from second differences.
pub fn error_indicator(path: &CanonicalPath) -> Vec<f64> {
    let pts = path.mesh.points();
    let m = pts.len();
    let h = path.mesh.steps();
    if m < 3 {
        return vec![0.0; m.saturating_sub(1)];
    }
    let mut d2 = vec![0.0; m];
    for j in 1..m - 1 {
        let s1 = (path.values.column(j + 1) - path.values.column(j)) / h[j];
        let s0 = (path.values.column(j) - path.values.column(j - 1)) / h[j - 1];
        d2[j] = ((s1 - s0) * (2.0 / (h[j] + h[j - 1]))).amax();
    }
    d2[0] = d2[1];
    d2[m - 1] = d2[m - 2];
    (0..m - 1)
        .map(|i| h[i] * h[i] * d2[i].max(d2[i + 1]) / 8.0)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub path: CanonicalPath,
    pub estimate_before: f64,
    pub estimate_after: f64,
    /// False when re-convergence failed; `path` is then the input path.
    pub refined: bool,
}

/// Split intervals so that the error indicator drops to
/// `max(estimate/factor, err_tol)`, then re-solve on the new mesh.
pub fn refine_mesh(
    sys: &dyn MassSystem,
    bc: &BvpBc,
    path: &CanonicalPath,
    factor: f64,
    settings: &BvpSettings,
) -> Result<Refinement> {
    if !(factor > 1.0) {
        return Err(Error::Config(format!("refinement factor must exceed 1 (got {factor})")));
    }
    let eta = error_indicator(path);
    let before = eta.iter().copied().fold(0.0, f64::max);
    let target = (before / factor).max(settings.err_tol);
    let mut pieces: Vec<usize> = eta
        .iter()
        .map(|&e| if e > target { (e / target).sqrt().ceil() as usize } else { 1 })
        .collect();
    let total = |p: &[usize]| p.iter().sum::<usize>() + 1;
    if total(&pieces) > settings.max_points {
        // shrink every request by the same ratio to respect the point budget
        let extra: usize = pieces.iter().map(|k| k - 1).sum();
        let room = settings.max_points.saturating_sub(pieces.len() + 1);
        let ratio = room as f64 / extra as f64;
        for k in pieces.iter_mut() {
            *k = 1 + ((*k - 1) as f64 * ratio).floor() as usize;
        }
    }
    if pieces.iter().all(|&k| k == 1) {
        return Ok(Refinement {
            path: path.clone(),
            estimate_before: before,
            estimate_after: before,
            refined: true,
        });
    }
    let pts = path.mesh.points();
    let mut new_pts = Vec::with_capacity(total(&pieces));
    for (i, &k) in pieces.iter().enumerate() {
        let (a, b) = (pts[i], pts[i + 1]);
        for j in 0..k {
            new_pts.push(a + (b - a) * j as f64 / k as f64);
        }
    }
    new_pts.push(path.mesh.t_end());
    let guess = path.resample(TimeMesh::new(new_pts)?);
    match solve_bvp(sys, bc, &guess, settings) {
        Ok(p) => {
            let after = error_indicator(&p).into_iter().fold(0.0, f64::max);
            Ok(Refinement {
                path: p,
                estimate_before: before,
                estimate_after: after,
                refined: true,
            })
        }
        Err(e) => {
            warn!("re-convergence on the refined mesh failed: {e}");
            Ok(Refinement {
                path: path.clone(),
                estimate_before: before,
                estimate_after: before,
                refined: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `u̇ = −a u` in one component, `u(0)` prescribed.
    struct Decay {
        a: f64,
        mass: DMatrix<f64>,
    }

    impl Decay {
        fn new(a: f64) -> Self {
            Self {
                a,
                mass: DMatrix::identity(1, 1),
            }
        }
    }

    impl MassSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn n_fixed(&self) -> usize {
            1
        }
        fn mass(&self) -> &DMatrix<f64> {
            &self.mass
        }
        fn rhs(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(u * self.a)
        }
        fn rhs_jacobian(&self, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, self.a))
        }
    }

    fn decay_bc() -> BvpBc {
        BvpBc {
            v_start: DVector::from_element(1, 1.0),
            v_hat: DVector::zeros(1),
            u_hat: DVector::zeros(1),
            psi: DMatrix::zeros(0, 1),
            alpha: 1.0,
            arclength: None,
        }
    }

    #[test]
    fn graded_mesh_formula() {
        let m = make_graded_mesh(1.0, 3, 2.0).unwrap();
        assert_eq!(m.points(), &[0.0, 0.25, 1.0]);
        let u = make_graded_mesh(4.0, 5, 1.0).unwrap();
        assert_eq!(u.points(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(make_graded_mesh(0.0, 3, 2.0).is_err());
        assert!(make_graded_mesh(1.0, 1, 2.0).is_err());
        assert!(make_graded_mesh(1.0, 3, 0.5).is_err());
    }

    #[test]
    fn decay_is_second_order() {
        let sys = Decay::new(1.0);
        let bc = decay_bc();
        let err = |m: usize| {
            let mesh = make_graded_mesh(2.0, m, 1.0).unwrap();
            let guess = CanonicalPath::constant(mesh, &DVector::zeros(1), 1.0);
            let p = solve_bvp(&sys, &bc, &guess, &BvpSettings::default()).unwrap();
            p.mesh
                .points()
                .iter()
                .enumerate()
                .map(|(i, &t)| (p.values[(0, i)] - (-t).exp()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(21), err(41));
        assert!((e1 / e2).log2() > 1.8, "{e1} {e2}");
    }

    #[test]
    fn constant_path_needs_no_iteration() {
        let sys = Decay::new(2.0);
        let mut bc = decay_bc();
        bc.alpha = 0.0;
        let guess = CanonicalPath::constant(make_graded_mesh(5.0, 6, 2.0).unwrap(), &DVector::zeros(1), 0.0);
        let p = solve_bvp(&sys, &bc, &guess, &BvpSettings::default()).unwrap();
        assert_eq!(p.iterations, 0);
        assert!(p.converged);
    }

    #[test]
    fn projection_rows_must_match() {
        let sys = Decay::new(1.0);
        let mut bc = decay_bc();
        bc.psi = DMatrix::from_element(1, 1, 1.0);
        let guess = CanonicalPath::constant(make_graded_mesh(1.0, 3, 1.0).unwrap(), &DVector::zeros(1), 1.0);
        assert!(matches!(
            solve_bvp(&sys, &bc, &guess, &BvpSettings::default()),
            Err(Error::ProjectionMismatch(_))
        ));
    }

    #[test]
    fn interpolation_is_linear() {
        let mesh = TimeMesh::new(vec![0.0, 1.0, 3.0]).unwrap();
        let vals = DMatrix::from_row_slice(1, 3, &[0.0, 2.0, 6.0]);
        let p = CanonicalPath::new(mesh, vals, 0.0).unwrap();
        assert_eq!(p.interpolate(0.5)[0], 1.0);
        assert_eq!(p.interpolate(2.0)[0], 4.0);
        assert_eq!(p.interpolate(9.0)[0], 6.0);
    }
}
