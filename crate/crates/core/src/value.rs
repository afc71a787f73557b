//! Objective values of steady states and canonical paths, and Skiba points
//! between paths to two competing steady states.

use log::{info, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::isc::{self, IscSettings, PathTarget};
use crate::models::{Problem, SystemState};
use crate::tbvp::CanonicalPath;

/// `(1 − e^{−x})/x` and `(1 − e^{−x}(1+x))/x²`, the weights of the
/// constant and linear parts of `∫₀¹ e^{−xs}(a + (b−a)s) ds`.
fn exp_weights(x: f64) -> (f64, f64) {
    if x.abs() < 0.05 {
        // Taylor series; the closed forms cancel badly for small x
        let (mut phi, mut psi, mut term) = (0.0, 0.0, 1.0);
        for k in 0..10 {
            phi += term / (k + 1) as f64;
            psi += term / (k + 2) as f64;
            term *= -x / (k + 1) as f64;
        }
        (phi, psi)
    } else {
        let em = -(-x).exp_m1();
        let phi = em / x;
        let psi = (em - x * (-x).exp()) / (x * x);
        (phi, psi)
    }
}

/// `∫₀ᵀ e^{−ρt} J(t) dt` for `J` piecewise linear through `(tᵢ, jᵢ)`.
///
/// The discount factor is integrated exactly on each interval, so a
/// constant `J` gives `J (1 − e^{−ρT})/ρ` up to rounding. For `ρ = 0` this
/// is the trapezoidal rule.
pub fn discounted_integral(times: &[f64], values: &[f64], rho: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..times.len().saturating_sub(1) {
        let h = times[i + 1] - times[i];
        let (phi, psi) = exp_weights(rho * h);
        let w0 = h * (phi - psi);
        let w1 = h * psi;
        total += (-rho * times[i]).exp() * (w0 * values[i] + w1 * values[i + 1]);
    }
    total
}

/// `J_ca(u(tᵢ))` on the path's mesh.
pub fn path_j_ca(problem: &Problem, params: &[f64], path: &CanonicalPath) -> Result<Vec<f64>> {
    (0..path.mesh.len())
        .map(|i| {
            problem
                .j_ca(&path.column(i), params)
                .map_err(|e| Error::PathEvaluation {
                    time_index: i,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Discounted objective `∫₀ᵀ e^{−ρt} J_ca(u(t)) dt` of a path.
pub fn path_value(problem: &Problem, params: &[f64], path: &CanonicalPath) -> Result<f64> {
    let jca = path_j_ca(problem, params, path)?;
    Ok(discounted_integral(path.mesh.points(), &jca, problem.rho(params)))
}

/// `e^{−ρT} J_ca(u(T))/ρ`, the value of staying at the end state of a path
/// after its truncation time.
pub fn tail_value(problem: &Problem, params: &[f64], path: &CanonicalPath) -> Result<f64> {
    let rho = problem.rho(params);
    if rho == 0.0 {
        return Err(Error::Undefined("discounted tail value for rho = 0"));
    }
    let jca = problem.j_ca(&path.terminal(), params)?;
    Ok((-rho * path.mesh.t_end()).exp() * jca / rho)
}

/// `(J_ca, J_ca/ρ)` of a steady state.
pub fn css_value(problem: &Problem, state: &SystemState) -> Result<(f64, f64)> {
    let jca = problem.j_ca(&state.u, &state.params)?;
    let rho = problem.rho(&state.params);
    if rho == 0.0 {
        return Err(Error::Undefined("discounted steady-state value for rho = 0"));
    }
    Ok((jca, jca / rho))
}

#[derive(Debug, Clone)]
pub struct SkibaSettings {
    pub isc: IscSettings,
    /// Accepted value difference at the reported point.
    pub skiba_tol: f64,
    /// Bisection stops once the α-bracket is this narrow.
    pub alpha_tol: f64,
    /// Compare `J + e^{−ρT} J_ca(u(T))/ρ` instead of the truncated `J`.
    pub with_tail: bool,
}

impl Default for SkibaSettings {
    fn default() -> Self {
        Self {
            isc: IscSettings::default(),
            skiba_tol: 0.05,
            alpha_tol: 1e-3,
            with_tail: true,
        }
    }
}

/// The values compared at one `α`, see [`SkibaSettings::with_tail`].
#[derive(Debug, Clone, PartialEq)]
pub struct SkibaSample {
    pub alpha: f64,
    pub j_a: f64,
    pub j_b: f64,
}

impl SkibaSample {
    pub fn diff(&self) -> f64 {
        self.j_a - self.j_b
    }
}

#[derive(Debug, Clone)]
pub struct SkibaResult {
    pub alpha_star: Option<f64>,
    /// Grid samples where both paths converged, then bisection samples.
    pub grid: Vec<SkibaSample>,
    pub bisection: Vec<SkibaSample>,
    pub bracket: Option<(f64, f64)>,
    pub path_a: Option<CanonicalPath>,
    pub path_b: Option<CanonicalPath>,
    pub value_gap: f64,
    /// Both targets produce the same values everywhere.
    pub degenerate: bool,
}

impl SkibaResult {
    pub fn found(&self) -> bool {
        self.alpha_star.is_some()
    }
}

/// Scan the initial states `αv₀ + (1−α)v̂_A` for equal values of the paths
/// to `target_a` and `target_b`.
///
/// Paths to A are continued along the grid from `α = 0`; paths to B start
/// from the same initial states (states only) and are reached from B by
/// natural continuation with the `alvin` targets of the settings.
pub fn skiba_scan(
    problem: &Problem,
    start: &SystemState,
    target_a: &SystemState,
    target_b: &SystemState,
    alpha_grid: &[f64],
    settings: &SkibaSettings,
) -> Result<SkibaResult> {
    let mut grid: Vec<f64> = alpha_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() || grid[0] < 0.0 {
        return Err(Error::Config("Skiba grid must be non-empty with values >= 0".into()));
    }
    // common horizon for both targets
    let mut ta = PathTarget::prepare(problem, target_a, &settings.isc)?;
    let mut tb = PathTarget::prepare(problem, target_b, &settings.isc)?;
    let t_end = ta.t_end.max(tb.t_end);
    ta.t_end = t_end;
    tb.t_end = t_end;
    let total = |p: &CanonicalPath| -> f64 {
        let tail = if settings.with_tail {
            tail_value(problem, &ta.params, p).unwrap_or(f64::NAN)
        } else {
            0.0
        };
        p.value.unwrap_or(f64::NAN) + tail
    };
    let nf = problem.n_state_values();
    let v0 = start.u.rows(0, nf).into_owned();
    let va = ta.u_hat.rows(0, nf).into_owned();
    let initial = |alpha: f64| -> DVector<f64> { &v0 * alpha + &va * (1.0 - alpha) };

    // paths to A along the grid
    let run_a = isc::IscRun::new(problem, &ta, v0.clone(), &settings.isc);
    let mut paths_a: Vec<Option<CanonicalPath>> = vec![None; grid.len()];
    let mut prev = run_a.trivial_path()?;
    for (k, &alpha) in grid.iter().enumerate() {
        match run_a.solve_natural(&prev, alpha) {
            Ok(p) => {
                prev = p.clone();
                paths_a[k] = Some(p);
            }
            Err(e) => {
                warn!("path to A failed at alpha = {alpha}: {e}; remaining grid points skipped");
                break;
            }
        }
    }

    let path_b_at = |alpha: f64, guess: Option<&CanonicalPath>| -> Result<CanonicalPath> {
        let run_b = isc::IscRun::new(problem, &tb, initial(alpha), &settings.isc);
        if let Some(g) = guess {
            if let Ok(p) = run_b.solve_natural(g, 1.0) {
                return Ok(p);
            }
        }
        let res = run_b.natural(&settings.isc.alvin)?;
        if res.alv.last() == Some(&1.0) {
            Ok(res.last_path)
        } else {
            Err(Error::NoProgress(format!(
                "path to B from alpha = {alpha} stopped at homotopy value {:?}",
                res.alv.last()
            )))
        }
    };

    let mut samples = Vec::new();
    let mut pairs: Vec<(CanonicalPath, CanonicalPath)> = Vec::new();
    for (k, &alpha) in grid.iter().enumerate() {
        let Some(pa) = &paths_a[k] else { continue };
        match path_b_at(alpha, None) {
            Ok(pb) => {
                let s = SkibaSample {
                    alpha,
                    j_a: total(pa),
                    j_b: total(&pb),
                };
                info!("alpha = {alpha:.4}: J_A = {:.6}, J_B = {:.6}", s.j_a, s.j_b);
                samples.push(s);
                pairs.push((pa.clone(), pb));
            }
            Err(e) => warn!("path to B failed at alpha = {alpha}: {e}; point skipped"),
        }
    }

    let scale = samples
        .iter()
        .map(|s| s.j_a.abs().max(s.j_b.abs()))
        .fold(1.0, f64::max);
    let degenerate = !samples.is_empty() && samples.iter().all(|s| s.diff().abs() <= 1e-12 * scale);
    let mut result = SkibaResult {
        alpha_star: None,
        grid: samples.clone(),
        bisection: Vec::new(),
        bracket: None,
        path_a: None,
        path_b: None,
        value_gap: f64::NAN,
        degenerate,
    };
    if degenerate {
        return Ok(result);
    }
    let Some(k) = samples
        .windows(2)
        .position(|w| w[0].diff() == 0.0 || w[0].diff() * w[1].diff() < 0.0)
    else {
        info!("no sign change of J_A - J_B on the grid");
        return Ok(result);
    };

    let (mut lo, mut hi) = (samples[k].clone(), samples[k + 1].clone());
    let (mut lo_paths, mut hi_paths) = (pairs[k].clone(), pairs[k + 1].clone());
    let blend = |a: &CanonicalPath, b: &CanonicalPath, th: f64| -> CanonicalPath {
        let b = if a.mesh == b.mesh { b.clone() } else { b.resample(a.mesh.clone()) };
        let mut g = a.clone();
        g.values = &a.values * (1.0 - th) + &b.values * th;
        g
    };
    while lo.diff() != 0.0 && hi.alpha - lo.alpha > settings.alpha_tol {
        let mid = 0.5 * (lo.alpha + hi.alpha);
        let ga = blend(&lo_paths.0, &hi_paths.0, 0.5);
        let gb = blend(&lo_paths.1, &hi_paths.1, 0.5);
        let pa = run_a.solve_natural(&ga, mid);
        let pb = path_b_at(mid, Some(&gb));
        let (pa, pb) = match (pa, pb) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                warn!(
                    "bisection stopped at alpha = {mid}: {}",
                    a.err().or(b.err()).map(|e| e.to_string()).unwrap_or_default()
                );
                break;
            }
        };
        let s = SkibaSample {
            alpha: mid,
            j_a: total(&pa),
            j_b: total(&pb),
        };
        result.bisection.push(s.clone());
        if s.diff() * lo.diff() > 0.0 {
            lo = s;
            lo_paths = (pa, pb);
        } else {
            hi = s;
            hi_paths = (pa, pb);
        }
    }
    let alpha_star = if lo.diff() == 0.0 {
        lo.alpha
    } else {
        lo.alpha + (hi.alpha - lo.alpha) * lo.diff() / (lo.diff() - hi.diff())
    };
    result.bracket = Some((lo.alpha, hi.alpha));
    result.alpha_star = Some(alpha_star);

    // both paths again at the reported point
    let th = if hi.alpha > lo.alpha { (alpha_star - lo.alpha) / (hi.alpha - lo.alpha) } else { 0.0 };
    let pa = run_a.solve_natural(&blend(&lo_paths.0, &hi_paths.0, th), alpha_star);
    let pb = path_b_at(alpha_star, Some(&blend(&lo_paths.1, &hi_paths.1, th)));
    match (pa, pb) {
        (Ok(a), Ok(b)) => {
            result.value_gap = (total(&a) - total(&b)).abs();
            result.path_a = Some(a);
            result.path_b = Some(b);
        }
        _ => {
            warn!("paths at the interpolated Skiba point did not converge; using the bracket end");
            result.value_gap = lo.diff().abs().min(hi.diff().abs());
            let (sa, sb) = if lo.diff().abs() <= hi.diff().abs() { lo_paths } else { hi_paths };
            result.path_a = Some(sa);
            result.path_b = Some(sb);
        }
    }
    if result.value_gap > settings.skiba_tol {
        warn!(
            "value gap {:.3e} at the Skiba point exceeds the tolerance {}",
            result.value_gap, settings.skiba_tol
        );
    }
    Ok(result)
}
