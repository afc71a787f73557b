//! Canonical systems `∂ₜu = 𝒟Δu + f(u)` for states and costates, and their
//! FEM discretization `G(u) = K_𝒟 u − M f(u)`.
//!
//! A [`Model`] only describes the pointwise reaction terms: every built-in
//! model (and every model this crate is designed for) has a reaction `f`
//! whose value at a node depends on the `2N` component values at that node
//! alone. Diffusion enters through the stiffness matrix.

mod sloc;
mod vegoc;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::fem1d::FemOps;

pub use sloc::Sloc;
pub use vegoc::VegOc;

/// Pointwise description of a canonical system.
///
/// Component order is `(v₁..v_N, λ₁..λ_N)`. All evaluation functions are
/// pure. Nodal failures (e.g. a control formula leaving its domain) are
/// reported as a reason string; callers attach the node index.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Number of state components `N`.
    fn n_states(&self) -> usize;

    fn n_comps(&self) -> usize {
        2 * self.n_states()
    }

    fn param_names(&self) -> Vec<String>;

    fn default_params(&self) -> Vec<f64>;

    fn default_active_param(&self) -> usize;

    /// Index of the discount rate in the parameter vector.
    fn rho_index(&self) -> usize;

    /// Diffusion constants `(D₁..D_N)` of the states.
    fn diffusion(&self, params: &[f64]) -> Vec<f64>;

    /// Reaction terms `f(u)` at one node; `u` and `f` have length `2N`.
    fn reaction(&self, u: &[f64], params: &[f64], f: &mut [f64]) -> std::result::Result<(), String>;

    /// Row-major `2N×2N` Jacobian `∂fₐ/∂u_b` at one node.
    ///
    /// The default is a central difference with step `1e-6·max(1,|u_b|)`.
    fn reaction_jacobian(
        &self,
        u: &[f64],
        params: &[f64],
        jac: &mut [f64],
    ) -> std::result::Result<(), String> {
        fd_reaction_jacobian(self, u, params, jac)
    }

    fn has_analytic_jacobian(&self) -> bool {
        false
    }

    /// Local current value `J_c` at one node.
    fn local_value(&self, u: &[f64], params: &[f64]) -> std::result::Result<f64, String>;

    /// Control at one node, from `∂ₖ𝓗 = 0`.
    fn control(&self, u: &[f64], params: &[f64]) -> std::result::Result<f64, String>;

    /// Control-dependent Hamiltonian integrand `J_c(v,k) + λᵀg₁(v,k)` at one
    /// node for an arbitrary control value `k`.
    fn hamiltonian(&self, u: &[f64], params: &[f64], control: f64) -> f64;

    /// Diagnostic for positivity-type requirements; `None` when admissible.
    fn admissibility(&self, _u: &[f64], _params: &[f64]) -> Option<String> {
        None
    }
}

/// Central finite-difference Jacobian of a model's pointwise reaction.
pub fn fd_reaction_jacobian<M: Model + ?Sized>(
    model: &M,
    u: &[f64],
    params: &[f64],
    jac: &mut [f64],
) -> std::result::Result<(), String> {
    let nc = u.len();
    let mut up = u.to_vec();
    let mut fp = vec![0.0; nc];
    let mut fm = vec![0.0; nc];
    for b in 0..nc {
        let h = 1e-6 * u[b].abs().max(1.0);
        up[b] = u[b] + h;
        model.reaction(&up, params, &mut fp)?;
        up[b] = u[b] - h;
        model.reaction(&up, params, &mut fm)?;
        up[b] = u[b];
        for a in 0..nc {
            jac[a * nc + b] = (fp[a] - fm[a]) / (2.0 * h);
        }
    }
    Ok(())
}

/// Look up a built-in model by name.
pub fn builtin(name: &str) -> Option<Arc<dyn Model>> {
    match name.to_ascii_lowercase().as_str() {
        "sloc" => Some(Arc::new(Sloc)),
        "vegoc" => Some(Arc::new(VegOc::default())),
        _ => None,
    }
}

/// A built-in model with explicit state diffusion constants where the
/// model keeps them outside the parameter vector.
pub fn builtin_with_diffusion(name: &str, diffusion: &[f64]) -> Option<Arc<dyn Model>> {
    match (name.to_ascii_lowercase().as_str(), diffusion) {
        ("vegoc", [d1, d2]) => Some(Arc::new(VegOc { d1: *d1, d2: *d2 })),
        _ => builtin(name),
    }
}

/// Nodal values of a CSS-type problem together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Component-major nodal values: all nodes of component 0, then 1, ...
    pub u: DVector<f64>,
    pub params: Vec<f64>,
    pub active: usize,
}

impl SystemState {
    pub fn new(u: DVector<f64>, params: Vec<f64>, active: usize) -> Self {
        Self { u, params, active }
    }

    pub fn param(&self) -> f64 {
        self.params[self.active]
    }

    pub fn set_param(&mut self, value: f64) {
        self.params[self.active] = value;
    }
}

/// A model on an assembled mesh.
#[derive(Debug, Clone)]
pub struct Problem {
    model: Arc<dyn Model>,
    fem: FemOps,
}

impl Problem {
    pub fn new(model: Arc<dyn Model>, fem: FemOps) -> Self {
        Self { model, fem }
    }

    pub fn model(&self) -> &dyn Model {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> Arc<dyn Model> {
        Arc::clone(&self.model)
    }

    pub fn fem(&self) -> &FemOps {
        &self.fem
    }

    pub fn n_nodes(&self) -> usize {
        self.fem.n_nodes()
    }

    pub fn n_comps(&self) -> usize {
        self.model.n_comps()
    }

    /// Total number of nodal unknowns `2Nn`.
    pub fn dim(&self) -> usize {
        self.n_comps() * self.n_nodes()
    }

    /// Number of nodal state values `Nn`.
    pub fn n_state_values(&self) -> usize {
        self.model.n_states() * self.n_nodes()
    }

    pub fn rho(&self, params: &[f64]) -> f64 {
        params[self.model.rho_index()]
    }

    /// Constant field with the given per-component values.
    pub fn constant_field(&self, values: &[f64]) -> Result<DVector<f64>> {
        check_len(self.n_comps(), values.len(), "constant_field")?;
        let n = self.n_nodes();
        Ok(DVector::from_fn(self.dim(), |i, _| values[i / n]))
    }

    /// Values of one component at all nodes.
    pub fn component<'a>(&self, u: &'a DVector<f64>, comp: usize) -> &'a [f64] {
        let n = self.n_nodes();
        &u.as_slice()[comp * n..(comp + 1) * n]
    }

    fn gather(&self, u: &[f64], node: usize, out: &mut [f64]) {
        let n = self.n_nodes();
        for (c, o) in out.iter_mut().enumerate() {
            *o = u[c * n + node];
        }
    }

    fn check_dims(&self, u: &DVector<f64>, params: &[f64]) -> Result<()> {
        check_len(self.dim(), u.len(), "state vector")?;
        check_len(self.model.param_names().len(), params.len(), "parameter vector")
    }

    /// Nodal reaction values, component-major.
    pub fn reaction_field(&self, u: &DVector<f64>, params: &[f64]) -> Result<DVector<f64>> {
        self.check_dims(u, params)?;
        let (n, nc) = (self.n_nodes(), self.n_comps());
        let mut f = DVector::zeros(self.dim());
        let mut un = vec![0.0; nc];
        let mut fn_ = vec![0.0; nc];
        for node in 0..n {
            self.gather(u.as_slice(), node, &mut un);
            self.model
                .reaction(&un, params, &mut fn_)
                .map_err(|reason| Error::Evaluation { node, reason })?;
            for c in 0..nc {
                if !fn_[c].is_finite() {
                    return Err(Error::Evaluation {
                        node,
                        reason: format!("non-finite reaction in component {c}"),
                    });
                }
                f[c * n + node] = fn_[c];
            }
        }
        Ok(f)
    }

    /// Signed diffusion coefficient of each component (`+D` states, `−D` costates).
    pub fn signed_diffusion(&self, params: &[f64]) -> Vec<f64> {
        let d = self.model.diffusion(params);
        d.iter().copied().chain(d.iter().map(|x| -x)).collect()
    }

    /// `G(u) = K_𝒟 u − M_blk f(u)`; zero at a canonical steady state.
    pub fn residual(&self, u: &DVector<f64>, params: &[f64]) -> Result<DVector<f64>> {
        let f = self.reaction_field(u, params)?;
        let n = self.n_nodes();
        let diff = self.signed_diffusion(params);
        let mut r = DVector::zeros(self.dim());
        let mut ku = vec![0.0; n];
        let mut mf = vec![0.0; n];
        for (c, dc) in diff.iter().enumerate() {
            let range = c * n..(c + 1) * n;
            self.fem.stiffness().apply(&u.as_slice()[range.clone()], &mut ku);
            self.fem.mass().apply(&f.as_slice()[range.clone()], &mut mf);
            for i in 0..n {
                r[c * n + i] = dc * ku[i] - mf[i];
            }
        }
        Ok(r)
    }

    /// Dense `∂ᵤG`, analytic or finite-difference according to the model.
    pub fn jacobian(&self, u: &DVector<f64>, params: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(u, params)?;
        let (n, nc) = (self.n_nodes(), self.n_comps());
        // nodal reaction Jacobians, jn[node][a*nc+b]
        let mut jn = vec![0.0; n * nc * nc];
        let mut un = vec![0.0; nc];
        for node in 0..n {
            self.gather(u.as_slice(), node, &mut un);
            let block = &mut jn[node * nc * nc..(node + 1) * nc * nc];
            self.model
                .reaction_jacobian(&un, params, block)
                .map_err(|reason| Error::Evaluation { node, reason })?;
            if block.iter().any(|x| !x.is_finite()) {
                return Err(Error::Evaluation {
                    node,
                    reason: "non-finite reaction Jacobian".into(),
                });
            }
        }
        let diff = self.signed_diffusion(params);
        let mass = self.fem.mass();
        let stiff = self.fem.stiffness();
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);
        for a in 0..nc {
            for b in 0..nc {
                for i in 0..n {
                    let lo = i.saturating_sub(1);
                    let hi = (i + 1).min(n - 1);
                    for j in lo..=hi {
                        let mut v = -mass.entry(i, j) * jn[j * nc * nc + a * nc + b];
                        if a == b {
                            v += diff[a] * stiff.entry(i, j);
                        }
                        jac[(a * n + i, b * n + j)] = v;
                    }
                }
            }
        }
        Ok(jac)
    }

    /// `∂G/∂η` for parameter `index`, by central differences.
    pub fn param_derivative(
        &self,
        u: &DVector<f64>,
        params: &[f64],
        index: usize,
    ) -> Result<DVector<f64>> {
        let h = 1e-6 * params[index].abs().max(1.0);
        let mut p = params.to_vec();
        p[index] = params[index] + h;
        let rp = self.residual(u, &p)?;
        p[index] = params[index] - h;
        let rm = self.residual(u, &p)?;
        Ok((rp - rm) / (2.0 * h))
    }

    /// Block-diagonal mass matrix, one FEM mass block per component.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let m = self.fem.mass().to_dense();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for c in 0..self.n_comps() {
            out.view_mut((c * n, c * n), (n, n)).copy_from(&m);
        }
        out
    }

    pub fn mass_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n_nodes();
        let mut out = DVector::zeros(x.len());
        for c in 0..x.len() / n {
            let range = c * n..(c + 1) * n;
            self.fem
                .mass()
                .apply(&x.as_slice()[range.clone()], &mut out.as_mut_slice()[range]);
        }
        out
    }

    fn nodal_map(
        &self,
        u: &DVector<f64>,
        params: &[f64],
        f: impl Fn(&[f64], &[f64]) -> std::result::Result<f64, String>,
    ) -> Result<Vec<f64>> {
        self.check_dims(u, params)?;
        let mut un = vec![0.0; self.n_comps()];
        (0..self.n_nodes())
            .map(|node| {
                self.gather(u.as_slice(), node, &mut un);
                let v = f(&un, params).map_err(|reason| Error::Evaluation { node, reason })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Evaluation {
                        node,
                        reason: "non-finite value".into(),
                    })
                }
            })
            .collect()
    }

    pub fn control_field(&self, u: &DVector<f64>, params: &[f64]) -> Result<Vec<f64>> {
        self.nodal_map(u, params, |un, p| self.model.control(un, p))
    }

    pub fn local_value_field(&self, u: &DVector<f64>, params: &[f64]) -> Result<Vec<f64>> {
        self.nodal_map(u, params, |un, p| self.model.local_value(un, p))
    }

    /// Spatially averaged current value `J_ca = (1/|Ω|)·1ᵀM j_c(u)`.
    pub fn j_ca(&self, u: &DVector<f64>, params: &[f64]) -> Result<f64> {
        let jc = self.local_value_field(u, params)?;
        self.fem.average(&jc)
    }

    /// `‖u‖_{L²} / |Ω|^{1/2}` over all components.
    pub fn l2_norm(&self, u: &DVector<f64>) -> f64 {
        let n = self.n_nodes();
        let total: f64 = (0..u.len() / n)
            .map(|c| {
                self.fem
                    .l2_norm_sq(&u.as_slice()[c * n..(c + 1) * n])
                    .unwrap_or(f64::NAN)
            })
            .sum();
        (total / self.fem.mesh().domain_length()).sqrt()
    }

    /// First inadmissible node, if any (diagnostic only).
    pub fn admissibility(&self, u: &DVector<f64>, params: &[f64]) -> Option<(usize, String)> {
        let mut un = vec![0.0; self.n_comps()];
        (0..self.n_nodes()).find_map(|node| {
            self.gather(u.as_slice(), node, &mut un);
            self.model.admissibility(&un, params).map(|r| (node, r))
        })
    }

    /// Mirror image `x → −x` of a nodal field on a symmetric uniform mesh.
    pub fn reflect(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n_nodes();
        DVector::from_fn(u.len(), |i, _| {
            let (c, j) = (i / n, i % n);
            u[c * n + (n - 1 - j)]
        })
    }
}
