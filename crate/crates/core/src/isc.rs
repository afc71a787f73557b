//! Initial-state continuation of canonical paths.
//!
//! Paths to a target CSS `û` start from `v(0) = α v₀ + (1−α) v̂`. At `α = 0`
//! the constant path `u ≡ û` solves the truncated problem; the homotopy
//! then moves `α` towards 1 either in prescribed steps (natural mode) or by
//! pseudo-arclength continuation with `α` free (arc mode), which can pass
//! folds in `α`.

use log::{debug, info, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::{Problem, SystemState};
use crate::spectral::{self, Projection};
use crate::tbvp::{
    self, make_graded_mesh, ArclengthRow, BvpBc, BvpSettings, CanonicalPath, CanonicalSystem,
};
use crate::value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// The previous converged path.
    Previous,
    /// Linear extrapolation through the last two converged paths.
    Secant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IscSettings {
    pub alvin: Vec<f64>,
    pub sig: f64,
    pub sig_min: f64,
    pub sig_max: f64,
    pub n_steps: usize,
    pub predictor: Predictor,
    /// Weight of `u(0)` against `α` in the arclength secant.
    pub xi_arc: f64,
    /// Truncation time; `None` takes the spectral suggestion.
    pub t_end: Option<f64>,
    pub m: usize,
    pub grading: f64,
    pub decay: f64,
    pub bvp: BvpSettings,
    /// Refine each converged path until the error indicator meets `bvp.err_tol`.
    pub refine: bool,
    pub alpha_margin: f64,
    pub grow: f64,
    pub fast_iter: usize,
    pub retain: bool,
}

impl Default for IscSettings {
    fn default() -> Self {
        Self {
            alvin: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            sig: 0.1,
            sig_min: 1e-3,
            sig_max: 0.5,
            n_steps: 20,
            predictor: Predictor::Previous,
            xi_arc: 0.5,
            t_end: None,
            m: 10,
            grading: 2.0,
            decay: spectral::DEFAULT_DECAY,
            bvp: BvpSettings::default(),
            refine: true,
            alpha_margin: 0.05,
            grow: 1.2,
            fast_iter: 4,
            retain: false,
        }
    }
}

impl IscSettings {
    pub fn validate(&self) -> Result<()> {
        let sorted = self.alvin.windows(2).all(|w| w[1] > w[0]);
        let in_range = self.alvin.iter().all(|&a| a > 0.0 && a <= 1.0);
        let ok = sorted
            && in_range
            && self.sig_min > 0.0
            && self.sig_min <= self.sig
            && self.sig <= self.sig_max
            && self.xi_arc >= 0.0
            && self.xi_arc <= 1.0
            && self.m >= 2
            && self.grading >= 1.0
            && self.t_end.is_none_or(|t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid initial-state continuation settings: {self:?}")))
        }
    }
}

/// A target CSS with its projection and truncation time.
#[derive(Debug, Clone)]
pub struct PathTarget {
    pub u_hat: DVector<f64>,
    pub params: Vec<f64>,
    pub projection: Projection,
    pub t_end: f64,
}

impl PathTarget {
    /// Spectral set-up at the target; fails unless the target has the
    /// saddle-point property.
    pub fn prepare(problem: &Problem, target: &SystemState, settings: &IscSettings) -> Result<Self> {
        let projection = spectral::projection(problem, target, settings.decay)?;
        if !projection.has_spp {
            return Err(Error::ProjectionMismatch(format!(
                "target steady state has defect {} and no saddle-point property",
                projection.defect
            )));
        }
        let t_end = settings.t_end.unwrap_or(projection.suggested_t);
        Ok(Self {
            u_hat: target.u.clone(),
            params: target.params.clone(),
            projection,
            t_end,
        })
    }
}

/// Data to continue an arc-mode run where a previous one stopped.
#[derive(Debug, Clone)]
pub struct ArcResume {
    pub last: CanonicalPath,
    pub previous: CanonicalPath,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct IscResult {
    pub alv: Vec<f64>,
    pub vv: Vec<f64>,
    pub last_path: CanonicalPath,
    pub history: Vec<CanonicalPath>,
    /// `α` at the first reversal of the continuation direction.
    pub fold_detected: Option<f64>,
    /// The corrected path at `α = 1` when arc mode crossed it.
    pub at_one: Option<CanonicalPath>,
    /// False when the run stopped early on a failure.
    pub completed: bool,
    pub failure: Option<String>,
    pub resume: Option<ArcResume>,
}

impl IscResult {
    fn new(path: CanonicalPath, retain: bool) -> Self {
        let mut r = Self {
            alv: Vec::new(),
            vv: Vec::new(),
            last_path: path.clone(),
            history: Vec::new(),
            fold_detected: None,
            at_one: None,
            completed: true,
            failure: None,
            resume: None,
        };
        r.push(path, retain);
        r
    }

    fn push(&mut self, path: CanonicalPath, retain: bool) {
        self.alv.push(path.alpha);
        self.vv.push(path.value.unwrap_or(f64::NAN));
        if retain {
            self.history.push(path.clone());
        }
        self.last_path = path;
    }

    pub fn max_alpha(&self) -> f64 {
        self.alv.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Initial-state continuation towards one target from one initial state.
pub struct IscRun<'a> {
    problem: &'a Problem,
    target: &'a PathTarget,
    sys: CanonicalSystem<'a>,
    v_start: DVector<f64>,
    settings: &'a IscSettings,
}

impl<'a> IscRun<'a> {
    pub fn new(
        problem: &'a Problem,
        target: &'a PathTarget,
        v_start: DVector<f64>,
        settings: &'a IscSettings,
    ) -> Self {
        Self {
            problem,
            target,
            sys: CanonicalSystem::new(problem, &target.params),
            v_start,
            settings,
        }
    }

    pub fn bc(&self, alpha: f64, arclength: Option<ArclengthRow>) -> BvpBc {
        let nf = self.problem.n_state_values();
        BvpBc {
            v_start: self.v_start.clone(),
            v_hat: self.target.u_hat.rows(0, nf).into_owned(),
            u_hat: self.target.u_hat.clone(),
            psi: self.target.projection.psi.clone(),
            alpha,
            arclength,
        }
    }

    pub fn system(&self) -> &CanonicalSystem<'a> {
        &self.sys
    }

    fn with_value(&self, mut path: CanonicalPath) -> Result<CanonicalPath> {
        path.value = Some(value::path_value(self.problem, &self.target.params, &path)?);
        Ok(path)
    }

    /// The constant path `u ≡ û` at `α = 0`.
    pub fn trivial_path(&self) -> Result<CanonicalPath> {
        let mesh = make_graded_mesh(self.target.t_end, self.settings.m, self.settings.grading)?;
        let guess = CanonicalPath::constant(mesh, &self.target.u_hat, 0.0);
        let path = tbvp::solve_bvp(&self.sys, &self.bc(0.0, None), &guess, &self.settings.bvp)?;
        self.with_value(path)
    }

    fn refined(&self, bc: &BvpBc, mut path: CanonicalPath) -> Result<CanonicalPath> {
        if !self.settings.refine {
            return Ok(path);
        }
        for _ in 0..6 {
            let est = tbvp::error_indicator(&path).into_iter().fold(0.0, f64::max);
            if est <= self.settings.bvp.err_tol || path.mesh.len() >= self.settings.bvp.max_points {
                break;
            }
            let r = tbvp::refine_mesh(&self.sys, bc, &path, 4.0, &self.settings.bvp)?;
            if !r.refined || r.path.mesh.len() == path.mesh.len() {
                break;
            }
            debug!("refined time mesh to {} points (indicator {:.2e})", r.path.mesh.len(), r.estimate_after);
            path = r.path;
        }
        Ok(path)
    }

    /// Fixed-`α` solve from `guess`, refined and with its value.
    pub fn solve_natural(&self, guess: &CanonicalPath, alpha: f64) -> Result<CanonicalPath> {
        let bc = self.bc(alpha, None);
        let path = tbvp::solve_bvp(&self.sys, &bc, guess, &self.settings.bvp)?;
        let path = self.refined(&bc, path)?;
        self.with_value(path)
    }

    /// Natural continuation through the targets `alvin` (with `α = 0` first).
    pub fn natural(&self, alvin: &[f64]) -> Result<IscResult> {
        let trivial = self.trivial_path()?;
        let mut res = IscResult::new(trivial, self.settings.retain);
        let mut prev: Option<CanonicalPath> = None;
        for (j, &alpha) in alvin.iter().enumerate() {
            let last = res.last_path.clone();
            let guess = match (self.settings.predictor, &prev) {
                (Predictor::Secant, Some(p)) => extrapolate(p, &last, alpha),
                _ => last.clone(),
            };
            match self.solve_natural(&guess, alpha) {
                Ok(path) => {
                    info!("alpha = {alpha}: J = {:.10}", path.value.unwrap_or(f64::NAN));
                    prev = Some(last);
                    res.push(path, self.settings.retain);
                }
                Err(e) => {
                    if j == 0 {
                        return Err(Error::NoProgress(format!(
                            "no path at the first homotopy value {alpha}: {e}"
                        )));
                    }
                    warn!("natural continuation stopped before alpha = {alpha}: {e}");
                    res.completed = false;
                    res.failure = Some(e.to_string());
                    break;
                }
            }
        }
        Ok(res)
    }

    /// Arclength continuation in `(u, α)`; starts with one natural step of
    /// size `sig` unless resumed.
    pub fn arc(&self, resume: Option<ArcResume>) -> Result<IscResult> {
        let st = self.settings;
        let retain = st.retain;
        let (mut res, mut previous, mut sigma) = match resume {
            Some(r) => {
                let mut res = IscResult::new(r.last.clone(), retain);
                // a resumed run reports only new points
                res.alv.clear();
                res.vv.clear();
                res.history.clear();
                (res, r.previous, r.sigma)
            }
            None => {
                let trivial = self.trivial_path()?;
                let first = self
                    .solve_natural(&trivial, st.sig)
                    .map_err(|e| Error::NoProgress(format!("no path at the first homotopy value {}: {e}", st.sig)))?;
                let mut res = IscResult::new(trivial.clone(), retain);
                res.push(first, retain);
                (res, trivial, st.sig)
            }
        };
        let mut last = res.last_path.clone();
        let mut fold_seen = false;

        let mut steps = 0;
        while steps < st.n_steps {
            let prev = if previous.mesh == last.mesh { previous.clone() } else { previous.resample(last.mesh.clone()) };
            let du0 = last.initial() - prev.initial();
            let dalpha = last.alpha - prev.alpha;
            let xi = st.xi_arc;
            let norm = (xi * du0.norm_squared() + (1.0 - xi) * dalpha * dalpha).sqrt();
            if !(norm > 0.0) {
                return Err(Error::NoProgress("secant of the last two paths vanishes".into()));
            }
            let row = ArclengthRow {
                s: &du0 * (xi / norm),
                s_alpha: (1.0 - xi) * dalpha / norm,
                sigma,
                u0_prev: last.initial(),
                alpha_prev: last.alpha,
            };
            let mut guess = last.clone();
            guess.values = &last.values + (&last.values - &prev.values) * (sigma / norm);
            guess.alpha = last.alpha + sigma * dalpha / norm;
            let bc = self.bc(last.alpha, Some(row));
            let solved = tbvp::solve_bvp(&self.sys, &bc, &guess, &st.bvp)
                .and_then(|p| self.refined(&bc, p))
                .and_then(|p| self.with_value(p));
            match solved {
                Ok(path) => {
                    steps += 1;
                    let new_dalpha = path.alpha - last.alpha;
                    if !fold_seen && new_dalpha * dalpha < 0.0 {
                        fold_seen = true;
                        res.fold_detected = Some(last.alpha);
                        info!("fold in alpha at {:.6}", last.alpha);
                    }
                    info!("arc step {steps}: alpha = {:.6}, J = {:.10}", path.alpha, path.value.unwrap_or(f64::NAN));
                    if (last.alpha - 1.0) * (path.alpha - 1.0) <= 0.0 && path.alpha != last.alpha && res.at_one.is_none() {
                        let th = (1.0 - last.alpha) / (path.alpha - last.alpha);
                        let mut g = last.clone();
                        let p_on = if path.mesh == last.mesh { path.clone() } else { path.resample(last.mesh.clone()) };
                        g.values = &last.values * (1.0 - th) + &p_on.values * th;
                        match self.solve_natural(&g, 1.0) {
                            Ok(p1) => res.at_one = Some(p1),
                            Err(e) => warn!("correction at alpha = 1 failed: {e}"),
                        }
                    }
                    let iters = path.iterations;
                    previous = last;
                    last = path.clone();
                    res.push(path, retain);
                    if iters <= st.fast_iter {
                        sigma = (sigma * st.grow).min(st.sig_max);
                    }
                    if last.alpha < 0.0 || last.alpha > 1.0 + st.alpha_margin {
                        break;
                    }
                }
                Err(e) => {
                    debug!("arc step failed with sigma = {sigma}: {e}");
                    if sigma * 0.5 < st.sig_min {
                        warn!("arclength continuation stalled at alpha = {}: {e}", last.alpha);
                        res.completed = false;
                        res.failure = Some(e.to_string());
                        break;
                    }
                    sigma *= 0.5;
                }
            }
        }
        res.resume = Some(ArcResume {
            last,
            previous,
            sigma,
        });
        Ok(res)
    }

    /// Re-solve a stored path at a fixed `α`.
    pub fn correct_at_alpha(&self, path: &CanonicalPath, alpha: f64) -> Result<CanonicalPath> {
        let bc = self.bc(alpha, None);
        let p = tbvp::solve_bvp(&self.sys, &bc, path, &self.settings.bvp)?;
        self.with_value(p)
    }
}

/// `b + (α − α_b)/(α_b − α_a) (b − a)` on the mesh of `b`.
fn extrapolate(a: &CanonicalPath, b: &CanonicalPath, alpha: f64) -> CanonicalPath {
    let da = b.alpha - a.alpha;
    if da == 0.0 {
        return b.clone();
    }
    let a = if a.mesh == b.mesh { a.clone() } else { a.resample(b.mesh.clone()) };
    let mut g = b.clone();
    g.values = &b.values + (&b.values - &a.values) * ((alpha - b.alpha) / da);
    g.alpha = alpha;
    g
}

fn start_states(problem: &Problem, start: &SystemState) -> DVector<f64> {
    start.u.rows(0, problem.n_state_values()).into_owned()
}

/// Natural initial-state continuation from the states of `start` to `target`.
pub fn iscnat(
    problem: &Problem,
    start: &SystemState,
    target: &SystemState,
    settings: &IscSettings,
) -> Result<IscResult> {
    settings.validate()?;
    let t = PathTarget::prepare(problem, target, settings)?;
    IscRun::new(problem, &t, start_states(problem, start), settings).natural(&settings.alvin)
}

/// Arclength initial-state continuation, optionally resuming a previous run.
pub fn iscarc(
    problem: &Problem,
    start: &SystemState,
    target: &SystemState,
    resume: Option<ArcResume>,
    settings: &IscSettings,
) -> Result<IscResult> {
    settings.validate()?;
    let t = PathTarget::prepare(problem, target, settings)?;
    IscRun::new(problem, &t, start_states(problem, start), settings).arc(resume)
}

/// Fixed-`α` correction of a stored path towards `target`.
pub fn correct_at_alpha(
    problem: &Problem,
    start: &SystemState,
    target: &SystemState,
    path: &CanonicalPath,
    alpha: f64,
    settings: &IscSettings,
) -> Result<CanonicalPath> {
    let t = PathTarget::prepare(problem, target, settings)?;
    IscRun::new(problem, &t, start_states(problem, start), settings).correct_at_alpha(path, alpha)
}

/// The path with the larger value first.
pub fn order_by_value(a: CanonicalPath, b: CanonicalPath) -> (CanonicalPath, CanonicalPath) {
    if b.value.unwrap_or(f64::NEG_INFINITY) > a.value.unwrap_or(f64::NEG_INFINITY) {
        (b, a)
    } else {
        (a, b)
    }
}
