//! Spectral data at a canonical steady state.
//!
//! Sign convention: the linearized dynamics are `M ξ̇ = −∂ᵤG ξ`, so an
//! eigenvalue `Λ` of the pencil `(∂ᵤG, M)` corresponds to the dynamics
//! eigenvalue `μ = −Λ`. Stable dynamics directions have `Re Λ > 0`. For a
//! canonical system the dynamics spectrum is symmetric about `Re μ = ρ/2`,
//! i.e. the multiset `{Λ}` is invariant under `Λ ↦ −ρ − Λ̄`.

use faer::Mat;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{Problem, SystemState};

/// Eigenvalues with `|Re Λ|` below this are treated as center directions.
pub const CENTER_TOL: f64 = 1e-10;

/// Default decay constant for the truncation-time suggestion.
pub const DEFAULT_DECAY: f64 = 15.0;

/// Eigenpairs of `∂ᵤGᵀ Φ = Λ M Φ`; column `j` of `vectors` belongs to
/// `eigenvalues[j]` and has unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct AdjointSpectrum {
    pub eigenvalues: Vec<Complex64>,
    pub vectors: DMatrix<Complex64>,
}

/// Everything needed to pose the truncated path problem at a CSS.
#[derive(Debug, Clone)]
pub struct Projection {
    pub eigenvalues: Vec<Complex64>,
    pub defect: i64,
    pub has_spp: bool,
    /// Orthonormal rows spanning the unstable adjoint directions; only its
    /// row space is meaningful.
    pub psi: DMatrix<f64>,
    pub suggested_t: f64,
}

struct Reduced {
    chol: Cholesky<f64, Dyn>,
    /// `L⁻¹ A L⁻ᵀ` with `M = L Lᵀ`
    c: DMatrix<f64>,
}

fn reduce(a: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<Reduced> {
    if a.nrows() != a.ncols() || mass.shape() != a.shape() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: mass.nrows(),
            context: "generalized eigenproblem",
        });
    }
    let chol = Cholesky::new(mass.clone())
        .ok_or_else(|| Error::Spectral("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or(Error::Singular("mass Cholesky factor"))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::Singular("mass Cholesky factor"))?
        .transpose();
    Ok(Reduced { chol, c })
}

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn eig_full(c: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let evd = to_faer(c)
        .eigen()
        .map_err(|e| Error::Spectral(format!("eigen-solver did not converge: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = c.nrows();
    let vals: Vec<Complex64> = (0..n).map(|i| Complex64::new(s[i].re, s[i].im)).collect();
    let vecs = DMatrix::from_fn(n, n, |i, j| {
        let z = u[(i, j)];
        Complex64::new(z.re, z.im)
    });
    Ok((vals, vecs))
}

/// Eigenvalues of the pencil `(a, mass)` without vectors.
pub fn pencil_eigenvalues(a: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let red = reduce(a, mass)?;
    let vals = to_faer(&red.c)
        .eigenvalues()
        .map_err(|e| Error::Spectral(format!("eigen-solver did not converge: {e:?}")))?;
    Ok(vals.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

/// Map `y ↦ L⁻ᵀ y` column-wise and normalize each column.
fn back_transform(chol: &Cholesky<f64, Dyn>, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let lt = chol.l().transpose();
    let re = y.map(|z| z.re);
    let im = y.map(|z| z.im);
    let xr = lt.solve_upper_triangular(&re).expect("nonsingular Cholesky factor");
    let xi = lt.solve_upper_triangular(&im).expect("nonsingular Cholesky factor");
    let mut out = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| Complex64::new(xr[(i, j)], xi[(i, j)]));
    for mut col in out.column_iter_mut() {
        let nrm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 0.0 {
            col /= Complex64::from(nrm);
        }
    }
    out
}

/// Adjoint eigenpairs `aᵀΦ = Λ mass Φ` by a dense reduction to standard form.
pub fn adjoint_eig_dense(a: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<AdjointSpectrum> {
    let red = reduce(a, mass)?;
    let (vals, y) = eig_full(&red.c.transpose())?;
    let vectors = back_transform(&red.chol, &y);
    Ok(AdjointSpectrum {
        eigenvalues: vals,
        vectors,
    })
}

/// Right eigenpairs `a ξ = Λ mass ξ`, i.e. the dynamics eigenvectors.
pub fn right_eig_dense(
    a: &DMatrix<f64>,
    mass: &DMatrix<f64>,
) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let red = reduce(a, mass)?;
    let (vals, y) = eig_full(&red.c)?;
    Ok((vals, back_transform(&red.chol, &y)))
}

/// Adjoint eigenproblem of a CSS.
pub fn adjoint_eig(problem: &Problem, state: &SystemState) -> Result<AdjointSpectrum> {
    let a = problem.jacobian(&state.u, &state.params)?;
    let spec = adjoint_eig_dense(&a, &problem.mass_matrix())?;
    let mass = problem.mass_matrix();
    let ac = a.map(Complex64::from);
    let mc = mass.map(Complex64::from);
    for (j, lam) in spec.eigenvalues.iter().enumerate() {
        let phi = spec.vectors.column(j);
        let res = ac.tr_mul(&phi) - (&mc * phi) * *lam;
        let r = res.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(r <= 1e-8 * (1.0 + lam.norm())) {
            return Err(Error::Spectral(format!(
                "adjoint eigenpair {j} has residual {r:.3e}"
            )));
        }
    }
    Ok(spec)
}

/// `d = dim E_s − Nn` with `dim E_s = #{Re Λ > 0}`.
pub fn defect(eigenvalues: &[Complex64], n_state_values: usize) -> Result<i64> {
    if let Some(z) = eigenvalues.iter().find(|z| z.re.abs() < CENTER_TOL) {
        return Err(Error::DegenerateSpectrum { re: z.re, im: z.im });
    }
    let stable = eigenvalues.iter().filter(|z| z.re > 0.0).count();
    Ok(stable as i64 - n_state_values as i64)
}

/// Number of dynamics-unstable directions, `#{Re Λ < 0}`.
pub fn count_unstable(eigenvalues: &[Complex64]) -> usize {
    eigenvalues.iter().filter(|z| z.re < 0.0).count()
}

/// Orthonormal real basis of the span of `M Φⱼ` over all `Re Λⱼ < 0`.
///
/// Complex-conjugate pairs contribute their real and imaginary parts once.
pub fn build_psi(
    eigenvalues: &[Complex64],
    phi: &DMatrix<Complex64>,
    mass: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = mass.nrows();
    let mut raw: Vec<DVector<f64>> = Vec::new();
    for (j, lam) in eigenvalues.iter().enumerate() {
        if lam.re >= 0.0 {
            continue;
        }
        let col = phi.column(j);
        let re = mass * DVector::from_fn(d, |i, _| col[i].re);
        let im = mass * DVector::from_fn(d, |i, _| col[i].im);
        if lam.im.abs() <= 1e-12 * (1.0 + lam.norm()) {
            // real eigenvalue: pick the dominant part of a possibly rotated vector
            raw.push(if re.norm() >= im.norm() { re } else { im });
        } else if lam.im > 0.0 {
            raw.push(re);
            raw.push(im);
        }
    }
    let rows = orthonormalize(raw)?;
    let mut psi = DMatrix::zeros(rows.len(), d);
    for (i, r) in rows.iter().enumerate() {
        psi.row_mut(i).copy_from(&r.transpose());
    }
    Ok(psi)
}

/// Modified Gram–Schmidt with one reorthogonalization pass.
fn orthonormalize(vs: Vec<DVector<f64>>) -> Result<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vs.len());
    for mut v in vs {
        let n0 = v.norm();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let n1 = v.norm();
        if !(n1 > 1e-10 * n0) {
            return Err(Error::ProjectionMismatch(
                "unstable adjoint directions are rank deficient".into(),
            ));
        }
        out.push(v / n1);
    }
    Ok(out)
}

/// `T = c_T / min{Re Λ : Re Λ > 0}`.
pub fn suggest_t(eigenvalues: &[Complex64], decay: f64) -> Result<f64> {
    eigenvalues
        .iter()
        .filter(|z| z.re > 0.0)
        .map(|z| z.re)
        .min_by(f64::total_cmp)
        .map(|m| decay / m)
        .ok_or(Error::NoPath)
}

/// Distance of the spectrum from its mirror image under `Λ ↦ −ρ − Λ̄`,
/// relative to `1 + max|Λ|`.
pub fn symmetry_error(eigenvalues: &[Complex64], rho: f64) -> f64 {
    let scale = 1.0 + eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    eigenvalues
        .iter()
        .map(|z| {
            let mirror = Complex64::new(-rho - z.re, z.im);
            eigenvalues
                .iter()
                .map(|w| (w - mirror).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        / scale
}

/// Full spectral analysis of a CSS: defect, projection and truncation time.
pub fn projection(problem: &Problem, state: &SystemState, decay: f64) -> Result<Projection> {
    let spec = adjoint_eig(problem, state)?;
    let d = defect(&spec.eigenvalues, problem.n_state_values())?;
    let psi = build_psi(&spec.eigenvalues, &spec.vectors, &problem.mass_matrix())?;
    let unstable = count_unstable(&spec.eigenvalues);
    if psi.nrows() != unstable {
        return Err(Error::ProjectionMismatch(format!(
            "projection has {} rows for {unstable} unstable directions",
            psi.nrows()
        )));
    }
    let suggested_t = suggest_t(&spec.eigenvalues, decay)?;
    Ok(Projection {
        eigenvalues: spec.eigenvalues,
        defect: d,
        has_spp: d == 0,
        psi,
        suggested_t,
    })
}

/// Settings for counting unstable directions along a branch.
#[derive(Debug, Clone, Copy)]
pub struct CountSettings {
    /// Dense eigensolve up to this many unknowns; shift-invert above.
    pub dense_limit: usize,
    /// Number of eigenvalues tracked by the shift-invert iteration.
    pub n_watch: usize,
}

impl Default for CountSettings {
    fn default() -> Self {
        Self {
            dense_limit: 1200,
            n_watch: 50,
        }
    }
}

/// Unstable-direction count at a state, plus whether it is certified.
#[derive(Debug, Clone)]
pub struct StabilityCount {
    pub n_unstable: usize,
    pub certified: bool,
    /// The eigenvalues the count was derived from (all of them when dense).
    pub eigenvalues: Vec<Complex64>,
}

/// `#{Re Λ < 0}` for the pencil `(∂ᵤG, M)` at a state.
///
/// Small systems use the full dense spectrum. Large ones track the
/// `n_watch` eigenvalues nearest the symmetry point `−ρ/2`: eigenvalues
/// outside the strip `−ρ < Re Λ < 0` pair up one stable with one unstable,
/// so `#{Re Λ < 0} = Nn + #strip/2`.
pub fn stability_count(
    problem: &Problem,
    state: &SystemState,
    settings: &CountSettings,
) -> Result<StabilityCount> {
    let a = problem.jacobian(&state.u, &state.params)?;
    let mass = problem.mass_matrix();
    if a.nrows() <= settings.dense_limit {
        let eigenvalues = pencil_eigenvalues(&a, &mass)?;
        return Ok(StabilityCount {
            n_unstable: count_unstable(&eigenvalues),
            certified: true,
            eigenvalues,
        });
    }
    let rho = problem.rho(&state.params);
    let sigma = -0.5 * rho;
    let eigenvalues = shift_invert_eigenvalues(&a, &mass, sigma, settings.n_watch)?;
    let in_strip = |z: &Complex64| z.re < 0.0 && z.re > -rho;
    let strip = eigenvalues.iter().filter(|z| in_strip(z)).count();
    // the farthest watched eigenvalues must already be saddle-type
    let tail = eigenvalues.len().min(4);
    let certified = eigenvalues[eigenvalues.len() - tail..]
        .iter()
        .all(|z| !in_strip(z));
    Ok(StabilityCount {
        n_unstable: problem.n_state_values() + strip / 2,
        certified,
        eigenvalues,
    })
}

/// The `n_watch` eigenvalues of `(a, mass)` nearest `sigma`, sorted by distance,
/// from subspace iteration on `(a − σ mass)⁻¹ mass`.
pub fn shift_invert_eigenvalues(
    a: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    sigma: f64,
    n_watch: usize,
) -> Result<Vec<Complex64>> {
    let d = a.nrows();
    let n_watch = n_watch.min(d);
    let block = (n_watch + 10).min(d);
    let shifted = a - mass * sigma;
    let lu = shifted.lu();
    if !lu.is_invertible() {
        return Err(Error::Singular("shift-invert operator"));
    }
    // deterministic start block
    let mut v = DMatrix::from_fn(d, block, |i, j| ((i * 7919 + j * 104_729) as f64 * 0.618_033_988_7).sin());
    v = v.qr().q();
    let mut previous: Option<Vec<Complex64>> = None;
    for _ in 0..1000 {
        let w = lu.solve(&(mass * &v)).ok_or(Error::Singular("shift-invert operator"))?;
        let h = v.tr_mul(&w);
        v = w.qr().q();
        let theta = to_faer(&h)
            .eigenvalues()
            .map_err(|e| Error::Spectral(format!("Ritz eigen-solver failed: {e:?}")))?;
        let mut lams: Vec<Complex64> = theta
            .into_iter()
            .map(|t| Complex64::new(sigma, 0.0) + Complex64::new(1.0, 0.0) / Complex64::new(t.re, t.im))
            .collect();
        lams.sort_by(|x, y| {
            (x - sigma).norm().total_cmp(&(y - sigma).norm()).then(x.im.total_cmp(&y.im))
        });
        lams.truncate(n_watch);
        if let Some(prev) = &previous {
            let change = lams
                .iter()
                .zip(prev)
                .map(|(x, y)| (x - y).norm() / (1.0 + x.norm()))
                .fold(0.0, f64::max);
            if change < 1e-10 {
                return Ok(lams);
            }
        }
        previous = Some(lams);
    }
    Err(Error::Spectral("shift-invert iteration did not converge".into()))
}
