//! Newton correction and pseudo-arclength continuation of canonical steady
//! states `G(u, η) = 0` in one active parameter, with fold and bifurcation
//! detection, user target values and branch switching.

use std::fmt;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{Problem, SystemState};
use crate::spectral::{self, CountSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSettings {
    pub ds_init: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub lam_min: f64,
    pub lam_max: f64,
    pub usrlam: Vec<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Weight of the PDE part in the arclength; `None` means `1/(2Nn)`.
    pub xi: Option<f64>,
    pub bifcheck: bool,
    pub n_eig_watch: usize,
    pub dense_limit: usize,
    pub max_steps: usize,
    /// Parameter accuracy of localized bifurcation points.
    pub localize_tol: f64,
    /// Newton iteration count at or below which the step grows.
    pub fast_iter: usize,
    pub grow: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            ds_init: 0.1,
            ds_min: 1e-6,
            ds_max: 0.5,
            lam_min: f64::NEG_INFINITY,
            lam_max: f64::INFINITY,
            usrlam: Vec::new(),
            newton_tol: 1e-10,
            newton_max_iter: 20,
            xi: None,
            bifcheck: true,
            n_eig_watch: 50,
            dense_limit: 1200,
            max_steps: 100,
            localize_tol: 1e-6,
            fast_iter: 3,
            grow: 1.3,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ds_min > 0.0
            && self.ds_min <= self.ds_max
            && self.ds_init.abs() >= self.ds_min
            && self.newton_tol > 0.0
            && self.newton_max_iter > 0
            && self.xi.is_none_or(|x| x > 0.0 && x <= 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid continuation settings: {self:?}")))
        }
    }

    pub fn xi_for(&self, dim: usize) -> f64 {
        self.xi.unwrap_or(1.0 / dim as f64)
    }

    fn count_settings(&self) -> CountSettings {
        CountSettings {
            dense_limit: self.dense_limit,
            n_watch: self.n_eig_watch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointType {
    Regular,
    Bifurcation,
    Fold,
    UserTarget,
}

impl PointType {
    pub fn as_str(self) -> &'static str {
        match self {
            PointType::Regular => "regular",
            PointType::Bifurcation => "bifurcation",
            PointType::Fold => "fold",
            PointType::UserTarget => "user",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regular" => Some(PointType::Regular),
            "bifurcation" => Some(PointType::Bifurcation),
            "fold" => Some(PointType::Fold),
            "user" => Some(PointType::UserTarget),
            _ => None,
        }
    }
}

impl fmt::Display for PointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Branch direction, normalized so that `xi‖du‖² + (1−xi)dlam² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub du: DVector<f64>,
    pub dlam: f64,
}

impl Tangent {
    pub fn norm(&self, xi: f64) -> f64 {
        (xi * self.du.norm_squared() + (1.0 - xi) * self.dlam * self.dlam).sqrt()
    }

    pub fn normalized(mut self, xi: f64) -> Self {
        let n = self.norm(xi);
        self.du /= n;
        self.dlam /= n;
        self
    }

    pub fn dot(&self, other: &Tangent, xi: f64) -> f64 {
        xi * self.du.dot(&other.du) + (1.0 - xi) * self.dlam * other.dlam
    }

    fn flipped(self) -> Self {
        Tangent {
            du: -self.du,
            dlam: -self.dlam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub index: usize,
    pub point_type: PointType,
    pub n_unstable: usize,
    pub param: f64,
    pub l2norm: f64,
    pub j_ca: f64,
    /// `j_ca/ρ`, NaN when `ρ = 0`.
    pub j_disc: f64,
    pub point_file: String,
}

/// A converged point kept from a continuation run.
#[derive(Debug, Clone)]
pub struct SavedPoint {
    pub label: String,
    pub point_type: PointType,
    pub state: SystemState,
    pub tangent: Tangent,
    pub n_unstable: usize,
    pub j_ca: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    MaxSteps,
    ParameterWindow,
    StepTooSmall { param: f64, residual: f64 },
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub records: Vec<BranchRecord>,
    pub points: Vec<SavedPoint>,
    pub termination: Termination,
}

impl Branch {
    pub fn point(&self, label: &str) -> Option<&SavedPoint> {
        self.points.iter().find(|p| p.label == label)
    }

    pub fn of_type(&self, t: PointType) -> impl Iterator<Item = &SavedPoint> {
        self.points.iter().filter(move |p| p.point_type == t)
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Damped Newton at fixed parameters. Returns the converged state and the
/// residual history (`‖G‖_∞` before each step and at the end).
pub fn newton_correct(
    problem: &Problem,
    state: &SystemState,
    settings: &ContinuationSettings,
) -> Result<(SystemState, Vec<f64>)> {
    let mut u = state.u.clone();
    let params = &state.params;
    let mut r = problem.residual(&u, params)?;
    let mut res = max_abs(&r);
    let mut history = vec![res];
    let mut iter = 0;
    while res > settings.newton_tol {
        if iter == settings.newton_max_iter {
            return Err(Error::NewtonFailure {
                iterations: iter,
                residual: res,
            });
        }
        iter += 1;
        let jac = problem.jacobian(&u, params)?;
        let step = jac.lu().solve(&r).ok_or(Error::Singular("Jacobian of G"))?;
        let (u_new, r_new, res_new) = damped_update(problem, &u, &step, params, res)?;
        u = u_new;
        r = r_new;
        res = res_new;
        history.push(res);
    }
    Ok((SystemState::new(u, params.clone(), state.active), history))
}

/// `u − θ·step` with θ halved (at most 10 times) while the residual grows.
fn damped_update(
    problem: &Problem,
    u: &DVector<f64>,
    step: &DVector<f64>,
    params: &[f64],
    res: f64,
) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let mut theta = 1.0;
    let mut last_err = None;
    for _ in 0..=10 {
        let trial = u - step * theta;
        match problem.residual(&trial, params) {
            Ok(r) => {
                let rn = max_abs(&r);
                if rn < res || theta < 1.0 / 1024.0 + 1e-12 {
                    return Ok((trial, r, rn));
                }
            }
            Err(e) => last_err = Some(e),
        }
        theta *= 0.5;
    }
    Err(last_err.unwrap_or(Error::NewtonFailure {
        iterations: 0,
        residual: res,
    }))
}

/// Corrector for the extended system `G(u,λ) = 0`,
/// `xi⟨τᵤ, u − u_p⟩ + (1−xi)τ_λ(λ − λ_p) = 0`.
struct Corrected {
    state: SystemState,
    iterations: usize,
    residual: f64,
}

fn arclength_correct(
    problem: &Problem,
    predicted: &SystemState,
    border: &Tangent,
    xi: f64,
    settings: &ContinuationSettings,
) -> Result<Corrected> {
    let d = problem.dim();
    let act = predicted.active;
    let u_p = predicted.u.clone();
    let lam_p = predicted.param();
    let mut st = predicted.clone();
    let mut r = problem.residual(&st.u, &st.params)?;
    let mut res = max_abs(&r);
    let mut iter = 0;
    loop {
        let arc = xi * border.du.dot(&(&st.u - &u_p)) + (1.0 - xi) * border.dlam * (st.param() - lam_p);
        if res <= settings.newton_tol && arc.abs() <= 1e-10 {
            return Ok(Corrected {
                state: st,
                iterations: iter,
                residual: res,
            });
        }
        if iter == settings.newton_max_iter {
            return Err(Error::NewtonFailure {
                iterations: iter,
                residual: res,
            });
        }
        iter += 1;
        let a = bordered_matrix(problem, &st, border, xi)?;
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&r);
        rhs[d] = arc;
        let step = a.lu().solve(&rhs).ok_or(Error::Singular("bordered Jacobian"))?;
        let mut theta = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let mut trial = st.clone();
            trial.u = &st.u - step.rows(0, d) * theta;
            trial.params[act] = st.params[act] - theta * step[d];
            if let Ok(rt) = problem.residual(&trial.u, &trial.params) {
                let rn = max_abs(&rt);
                if rn < res || theta < 1.0 / 1024.0 + 1e-12 || res <= settings.newton_tol {
                    st = trial;
                    r = rt;
                    res = rn;
                    accepted = true;
                    break;
                }
            }
            theta *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonFailure {
                iterations: iter,
                residual: res,
            });
        }
    }
}

fn bordered_matrix(
    problem: &Problem,
    st: &SystemState,
    border: &Tangent,
    xi: f64,
) -> Result<DMatrix<f64>> {
    let d = problem.dim();
    let jac = problem.jacobian(&st.u, &st.params)?;
    let glam = problem.param_derivative(&st.u, &st.params, st.active)?;
    let mut a = DMatrix::zeros(d + 1, d + 1);
    a.view_mut((0, 0), (d, d)).copy_from(&jac);
    a.view_mut((0, d), (d, 1)).copy_from(&glam);
    for j in 0..d {
        a[(d, j)] = xi * border.du[j];
    }
    a[(d, d)] = (1.0 - xi) * border.dlam;
    Ok(a)
}

/// Tangent at a converged point from the bordered system with `border` as
/// last row; oriented to have positive product with `border`.
pub fn tangent_at(problem: &Problem, st: &SystemState, border: &Tangent, xi: f64) -> Result<Tangent> {
    let d = problem.dim();
    let a = bordered_matrix(problem, st, border, xi)?;
    let mut rhs = DVector::zeros(d + 1);
    rhs[d] = 1.0;
    let z = a.lu().solve(&rhs).ok_or(Error::Singular("bordered Jacobian"))?;
    let t = Tangent {
        du: z.rows(0, d).into_owned(),
        dlam: z[d],
    }
    .normalized(xi);
    Ok(if t.dot(border, xi) < 0.0 { t.flipped() } else { t })
}

/// Tangent in the direction of increasing parameter.
pub fn initial_tangent(problem: &Problem, st: &SystemState, xi: f64) -> Result<Tangent> {
    let natural = Tangent {
        du: DVector::zeros(problem.dim()),
        dlam: 1.0,
    }
    .normalized(xi);
    tangent_at(problem, st, &natural, xi)
}

#[derive(Debug, Clone)]
struct ContPoint {
    state: SystemState,
    tangent: Tangent,
    n_unstable: usize,
    residual: f64,
}

fn predict(from: &ContPoint, ds: f64) -> SystemState {
    let mut st = from.state.clone();
    st.u += &from.tangent.du * ds;
    st.params[st.active] += ds * from.tangent.dlam;
    st
}

/// One predictor–corrector step of arclength `ds` along the tangent of `from`.
fn step_from(
    problem: &Problem,
    from: &ContPoint,
    ds: f64,
    xi: f64,
    settings: &ContinuationSettings,
) -> Result<(ContPoint, usize)> {
    let pred = predict(from, ds);
    let c = arclength_correct(problem, &pred, &from.tangent, xi, settings)?;
    let tangent = tangent_at(problem, &c.state, &from.tangent, xi)?;
    Ok((
        ContPoint {
            state: c.state,
            tangent,
            n_unstable: 0,
            residual: c.residual,
        },
        c.iterations,
    ))
}

fn unstable_count(problem: &Problem, st: &SystemState, settings: &ContinuationSettings) -> Option<usize> {
    match spectral::stability_count(problem, st, &settings.count_settings()) {
        Ok(c) => {
            if !c.certified {
                warn!("unstable count {} at parameter {} is not certified", c.n_unstable, st.param());
            }
            Some(c.n_unstable)
        }
        Err(e) => {
            warn!("stability count failed at parameter {}: {e}", st.param());
            None
        }
    }
}

/// Localize a change of the unstable count between `prev` (s = 0) and the
/// point reached with arclength `ds` by bisection in arclength.
///
/// Returns `None` when the counts agree. The returned flag is `true` when
/// the bisection reached the parameter tolerance.
pub fn detect_bifurcation(
    problem: &Problem,
    prev: &SystemState,
    prev_tangent: &Tangent,
    prev_count: usize,
    ds: f64,
    cur_count: usize,
    settings: &ContinuationSettings,
) -> Result<Option<(SavedPoint, bool)>> {
    if prev_count == cur_count {
        return Ok(None);
    }
    let xi = settings.xi_for(problem.dim());
    let start = ContPoint {
        state: prev.clone(),
        tangent: prev_tangent.clone(),
        n_unstable: prev_count,
        residual: 0.0,
    };
    let (mut lo, mut hi) = (0.0, ds);
    let (mut lam_lo, mut lam_hi) = (prev.param(), f64::NAN);
    let mut best: Option<ContPoint> = None;
    let mut exact = false;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let (pt, _) = step_from(problem, &start, mid, xi, settings)?;
        let c = unstable_count(problem, &pt.state, settings).unwrap_or(prev_count);
        if c == prev_count {
            lo = mid;
            lam_lo = pt.state.param();
        } else {
            hi = mid;
            lam_hi = pt.state.param();
        }
        best = Some(ContPoint { n_unstable: c, ..pt });
        if (lam_hi - lam_lo).abs() <= settings.localize_tol || (hi - lo) < 1e-12 * ds.abs().max(1.0) {
            exact = (lam_hi - lam_lo).abs() <= settings.localize_tol;
            break;
        }
    }
    if !exact {
        warn!("bifurcation localization did not reach tolerance; point is approximate");
    }
    let pt = best.expect("at least one bisection step");
    let j_ca = problem.j_ca(&pt.state.u, &pt.state.params)?;
    Ok(Some((
        SavedPoint {
            label: String::new(),
            point_type: PointType::Bifurcation,
            state: pt.state,
            tangent: pt.tangent,
            n_unstable: pt.n_unstable,
            j_ca,
            residual: pt.residual,
        },
        exact,
    )))
}

/// Fold between `from` and the point at arclength `ds` (where `dlam`
/// changed sign), localized by bisection on the sign of `dlam`.
fn localize_fold(
    problem: &Problem,
    from: &ContPoint,
    ds: f64,
    xi: f64,
    settings: &ContinuationSettings,
) -> Result<ContPoint> {
    let s0 = from.tangent.dlam.signum();
    let (mut lo, mut hi) = (0.0, ds);
    let mut best = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (pt, _) = step_from(problem, from, mid, xi, settings)?;
        if pt.tangent.dlam.signum() == s0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some(pt);
        if (hi - lo).abs() < 1e-8 * ds.abs().max(1e-3) {
            break;
        }
    }
    let mut pt = best.expect("fold bisection ran");
    pt.n_unstable = unstable_count(problem, &pt.state, settings).unwrap_or(from.n_unstable);
    Ok(pt)
}

struct BranchBuilder<'a> {
    problem: &'a Problem,
    rho: f64,
    records: Vec<BranchRecord>,
    points: Vec<SavedPoint>,
    n_bif: usize,
    n_fold: usize,
}

impl BranchBuilder<'_> {
    fn push(&mut self, pt: &ContPoint, kind: PointType) -> Result<()> {
        let index = self.records.len();
        let label = match kind {
            PointType::Bifurcation => {
                self.n_bif += 1;
                format!("bpt{}", self.n_bif)
            }
            PointType::Fold => {
                self.n_fold += 1;
                format!("fpt{}", self.n_fold)
            }
            _ => format!("pt{index}"),
        };
        let st = &pt.state;
        let j_ca = self.problem.j_ca(&st.u, &st.params)?;
        let j_disc = if self.rho != 0.0 { j_ca / self.rho } else { f64::NAN };
        if let Some((node, why)) = self.problem.admissibility(&st.u, &st.params) {
            warn!("{label}: inadmissible at node {node}: {why}");
        }
        self.records.push(BranchRecord {
            index,
            point_type: kind,
            n_unstable: pt.n_unstable,
            param: st.param(),
            l2norm: self.problem.l2_norm(&st.u),
            j_ca,
            j_disc,
            point_file: label.clone(),
        });
        self.points.push(SavedPoint {
            label,
            point_type: kind,
            state: st.clone(),
            tangent: pt.tangent.clone(),
            n_unstable: pt.n_unstable,
            j_ca,
            residual: pt.residual,
        });
        Ok(())
    }
}

/// Pseudo-arclength continuation from a converged CSS.
///
/// A negative `ds_init` reverses the initial direction. Without a tangent
/// the branch starts in the direction of increasing parameter.
pub fn continue_branch(
    problem: &Problem,
    start: &SystemState,
    tangent: Option<Tangent>,
    settings: &ContinuationSettings,
) -> Result<Branch> {
    settings.validate()?;
    let xi = settings.xi_for(problem.dim());
    let rho = problem.rho(&start.params);
    let residual = max_abs(&problem.residual(&start.u, &start.params)?);
    let mut tangent = match tangent {
        Some(t) => tangent_at(problem, start, &t.normalized(xi), xi)?,
        None => initial_tangent(problem, start, xi)?,
    };
    if settings.ds_init < 0.0 {
        tangent = tangent.flipped();
    }
    let mut cur = ContPoint {
        state: start.clone(),
        tangent,
        n_unstable: 0,
        residual,
    };
    cur.n_unstable = unstable_count(problem, &cur.state, settings).unwrap_or(0);

    let mut out = BranchBuilder {
        problem,
        rho,
        records: Vec::new(),
        points: Vec::new(),
        n_bif: 0,
        n_fold: 0,
    };
    out.push(&cur, PointType::Regular)?;
    let in_window = |l: f64| l >= settings.lam_min && l <= settings.lam_max;
    if !in_window(cur.state.param()) {
        return Ok(Branch {
            records: out.records,
            points: out.points,
            termination: Termination::ParameterWindow,
        });
    }

    let mut ds = settings.ds_init.abs().min(settings.ds_max);
    let mut steps = 0;
    let termination = loop {
        if steps == settings.max_steps {
            break Termination::MaxSteps;
        }
        let (mut next, iters) = match step_from(problem, &cur, ds, xi, settings) {
            Ok(x) => x,
            Err(e) => {
                debug!("step ds={ds:.3e} failed: {e}");
                if ds * 0.5 < settings.ds_min {
                    warn!("continuation stopped at parameter {}: step size below minimum", cur.state.param());
                    break Termination::StepTooSmall {
                        param: cur.state.param(),
                        residual: cur.residual,
                    };
                }
                ds *= 0.5;
                continue;
            }
        };
        steps += 1;
        next.n_unstable = unstable_count(problem, &next.state, settings).unwrap_or(cur.n_unstable);

        let fold = next.tangent.dlam * cur.tangent.dlam < 0.0;
        let count_change = next.n_unstable as i64 - cur.n_unstable as i64;
        if fold {
            let fp = localize_fold(problem, &cur, ds, xi, settings)?;
            info!("fold at parameter {:.8}", fp.state.param());
            out.push(&fp, PointType::Fold)?;
            if count_change.abs() > 1 {
                warn!("unstable count changed by {count_change} across a fold; extra crossing not localized");
            }
        } else if settings.bifcheck && count_change != 0 {
            // several crossings in one step are localized one at a time
            let mut from = cur.clone();
            let mut remaining = ds;
            for _ in 0..count_change.unsigned_abs() {
                match detect_bifurcation(
                    problem,
                    &from.state,
                    &from.tangent,
                    from.n_unstable,
                    remaining,
                    next.n_unstable,
                    settings,
                )? {
                    Some((mut bp, _)) => {
                        info!("bifurcation at parameter {:.8}", bp.state.param());
                        let cp = ContPoint {
                            state: bp.state.clone(),
                            tangent: std::mem::replace(
                                &mut bp.tangent,
                                Tangent {
                                    du: DVector::zeros(0),
                                    dlam: 0.0,
                                },
                            ),
                            n_unstable: bp.n_unstable,
                            residual: bp.residual,
                        };
                        out.push(&cp, PointType::Bifurcation)?;
                        // continue searching beyond the localized point
                        let travelled = arclength_between(&from, &cp, xi);
                        remaining -= travelled;
                        from = cp;
                        if remaining <= 0.0 || from.n_unstable == next.n_unstable {
                            break;
                        }
                    }
                    None => break,
                }
            }
        }

        // user target values bracketed by this step
        let (l0, l1) = (cur.state.param(), next.state.param());
        let mut targets: Vec<f64> = settings
            .usrlam
            .iter()
            .copied()
            .filter(|&t| t != l0 && (t - l0) * (t - l1) <= 0.0)
            .collect();
        targets.sort_by(|a, b| ((a - l0).abs()).total_cmp(&(b - l0).abs()));
        for t in targets {
            let theta = (t - l0) / (l1 - l0);
            let mut guess = cur.state.clone();
            guess.u = &cur.state.u + (&next.state.u - &cur.state.u) * theta;
            guess.params[guess.active] = t;
            match newton_correct(problem, &guess, settings) {
                Ok((st, hist)) => {
                    let tangent = tangent_at(problem, &st, &next.tangent, xi)?;
                    let n_unstable = unstable_count(problem, &st, settings).unwrap_or(next.n_unstable);
                    let pt = ContPoint {
                        state: st,
                        tangent,
                        n_unstable,
                        residual: *hist.last().unwrap_or(&0.0),
                    };
                    out.push(&pt, PointType::UserTarget)?;
                }
                Err(e) => warn!("could not land on target parameter {t}: {e}"),
            }
        }

        out.push(&next, PointType::Regular)?;
        let lam = next.state.param();
        cur = next;
        if !in_window(lam) {
            break Termination::ParameterWindow;
        }
        if iters <= settings.fast_iter {
            ds = (ds * settings.grow).min(settings.ds_max);
        }
    };
    Ok(Branch {
        records: out.records,
        points: out.points,
        termination,
    })
}

fn arclength_between(a: &ContPoint, b: &ContPoint, xi: f64) -> f64 {
    let du = &b.state.u - &a.state.u;
    let dl = b.state.param() - a.state.param();
    xi * a.tangent.du.dot(&du) + (1.0 - xi) * a.tangent.dlam * dl
}

/// Kernel direction of `∂ᵤG` at a bifurcation point: the real eigenvector
/// of `(∂ᵤG, M)` whose eigenvalue is nearest zero.
pub fn kernel_direction(problem: &Problem, st: &SystemState) -> Result<(DVector<f64>, f64, f64)> {
    let a = problem.jacobian(&st.u, &st.params)?;
    let (vals, vecs) = spectral::right_eig_dense(&a, &problem.mass_matrix())?;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[i].norm().total_cmp(&vals[j].norm()));
    let (i0, i1) = (order[0], order[1]);
    if vals[i0].im.abs() > 1e-8 * (1.0 + vals[i0].norm()) {
        return Err(Error::BranchSwitch(format!(
            "eigenvalue nearest zero is complex ({})",
            vals[i0]
        )));
    }
    let col = vecs.column(i0);
    let re = DVector::from_fn(col.len(), |i, _| col[i].re);
    let im = DVector::from_fn(col.len(), |i, _| col[i].im);
    let v = if re.norm() >= im.norm() { re } else { im };
    Ok((v.normalize(), vals[i0].norm(), vals[i1].norm()))
}

/// Start a new branch at a simple bifurcation point.
///
/// The kernel direction (scaled to a unit tangent with `dlam = 0`) is the
/// predictor direction; `direction` (±1) picks the side and `ds` the
/// distance. Returns the first corrected point on the new branch and its
/// tangent.
pub fn branch_switch(
    problem: &Problem,
    bif: &SystemState,
    direction: f64,
    ds: f64,
    settings: &ContinuationSettings,
) -> Result<(SystemState, Tangent)> {
    let xi = settings.xi_for(problem.dim());
    let (phi, l0, l1) = kernel_direction(problem, bif)?;
    if !(l1 > 10.0 * l0) {
        return Err(Error::BranchSwitch(format!(
            "kernel is not one-dimensional (eigenvalues {l0:.3e}, {l1:.3e})"
        )));
    }
    let dir = if direction < 0.0 { -1.0 } else { 1.0 };
    let kernel = Tangent {
        du: phi * dir,
        dlam: 0.0,
    }
    .normalized(xi);
    let mut pred = bif.clone();
    pred.u += &kernel.du * ds.abs();
    let c = arclength_correct(problem, &pred, &kernel, xi, settings)?;
    // the corrected point must have left the trivial branch
    let moved = xi * kernel.du.dot(&(&c.state.u - &bif.u));
    if !(moved > 0.0) {
        return Err(Error::BranchSwitch("corrector fell back onto the old branch".into()));
    }
    let tangent = tangent_at(problem, &c.state, &kernel, xi)?;
    Ok((c.state, tangent))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem1d::{FemOps, Mesh1D};
    use crate::models::Sloc;

    fn small() -> (Problem, SystemState) {
        let mesh = Mesh1D::uniform(-1.0, 1.0, 5).unwrap();
        let pb = Problem::new(Arc::new(Sloc), FemOps::assemble(mesh));
        let guess = pb.constant_field(&[0.35, -12.0]).unwrap();
        let st = SystemState::new(guess, vec![0.03, 0.55, 0.5, 0.5], Sloc::B);
        let (st, _) = newton_correct(&pb, &st, &ContinuationSettings::default()).unwrap();
        (pb, st)
    }

    fn settings() -> ContinuationSettings {
        ContinuationSettings {
            ds_init: 0.01,
            ds_max: 0.02,
            max_steps: 5,
            ..Default::default()
        }
    }

    #[test]
    fn newton_keeps_flat_states_flat() {
        let (pb, st) = small();
        let p = pb.component(&st.u, 0);
        assert!(p.iter().all(|x| (x - p[0]).abs() < 1e-12));
        assert!(pb.residual(&st.u, &st.params).unwrap().amax() < 1e-10);
    }

    #[test]
    fn newton_failure_reports_residual() {
        let (pb, mut st) = small();
        st.u[2] += 0.5;
        let s = ContinuationSettings { newton_max_iter: 1, ..settings() };
        assert!(matches!(newton_correct(&pb, &st, &s), Err(Error::NewtonFailure { iterations: 1, .. })));
    }

    #[test]
    fn one_step_budget() {
        let (pb, st) = small();
        let s = ContinuationSettings { max_steps: 1, ..settings() };
        let br = continue_branch(&pb, &st, None, &s).unwrap();
        assert_eq!(br.records.len(), 2);
        assert_eq!(br.termination, Termination::MaxSteps);
        assert!(br.records[1].param > br.records[0].param);
    }

    #[test]
    fn start_outside_window_stops_at_once() {
        let (pb, st) = small();
        let s = ContinuationSettings { lam_max: 0.5, ..settings() };
        let br = continue_branch(&pb, &st, None, &s).unwrap();
        assert_eq!(br.records.len(), 1);
        assert_eq!(br.termination, Termination::ParameterWindow);
    }

    #[test]
    fn negative_step_reverses_direction() {
        let (pb, st) = small();
        let s = ContinuationSettings { ds_init: -0.01, max_steps: 2, ..settings() };
        let br = continue_branch(&pb, &st, None, &s).unwrap();
        assert!(br.records[2].param < br.records[1].param);
        assert!(br.records[1].param < 0.55);
    }

    #[test]
    fn user_values_are_hit_exactly() {
        let (pb, st) = small();
        let s = ContinuationSettings { usrlam: vec![0.56], max_steps: 20, ..settings() };
        let br = continue_branch(&pb, &st, None, &s).unwrap();
        let p = br.of_type(PointType::UserTarget).next().expect("user point");
        assert_eq!(p.state.param(), 0.56);
        assert!(p.residual < 1e-10);
        assert_eq!(br.point(&p.label).unwrap().label, p.label);
    }

    #[test]
    fn flat_fold_location() {
        // b at the fold of the flat branch, where the 0D determinant vanishes
        let (pb, st) = small();
        let s = ContinuationSettings {
            lam_max: 1.0,
            ds_init: 0.1,
            ds_max: 0.3,
            max_steps: 200,
            ..settings()
        };
        let br = continue_branch(&pb, &st, None, &s).unwrap();
        let fold = br.of_type(PointType::Fold).next().expect("fold");
        assert!((fold.state.param() - 0.727_179_47).abs() < 1e-4, "{}", fold.state.param());
        assert!(br.of_type(PointType::Bifurcation).next().is_none());
    }

    #[test]
    fn invalid_settings_rejected() {
        let (pb, st) = small();
        for s in [
            ContinuationSettings { ds_min: 0.0, ..settings() },
            ContinuationSettings { ds_min: 1.0, ..settings() },
            ContinuationSettings { xi: Some(2.0), ..settings() },
        ] {
            assert!(matches!(continue_branch(&pb, &st, None, &s), Err(Error::Config(_))));
        }
    }

    #[test]
    fn point_type_names() {
        for t in [PointType::Regular, PointType::Bifurcation, PointType::Fold, PointType::UserTarget] {
            assert_eq!(PointType::parse(t.as_str()), Some(t));
        }
        assert_eq!(PointType::parse("cusp"), None);
    }

    #[test]
    fn tangent_normalization() {
        let t = Tangent {
            du: DVector::from_vec(vec![3.0, 4.0]),
            dlam: 2.0,
        }
        .normalized(0.5);
        assert!((t.norm(0.5) - 1.0).abs() < 1e-15);
        assert!((t.dot(&t, 0.5) - 1.0).abs() < 1e-15);
    }
}
