use super::Model;

/// Shallow-lake optimal control: phosphorus `P`, costate `q`, control
/// (phosphate load) `k = −1/q`, local value `ln k − γP²`.
///
/// Parameters `(ρ, b, γ, D)`; `D` is read from the parameter vector at every
/// evaluation so that it stays continuable.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sloc;

impl Sloc {
    pub const RHO: usize = 0;
    pub const B: usize = 1;
    pub const GAMMA: usize = 2;
    pub const D: usize = 3;

    /// Reaction terms of the canonical system at one point.
    pub fn rates(p: f64, q: f64, params: &[f64]) -> (f64, f64) {
        let (rho, b, gamma) = (params[Self::RHO], params[Self::B], params[Self::GAMMA]);
        let s = 1.0 + p * p;
        let f1 = -1.0 / q - b * p + p * p / s;
        let f2 = 2.0 * gamma * p + q * (rho + b - 2.0 * p / (s * s));
        (f1, f2)
    }
}

fn check_costate(q: f64) -> Result<(), String> {
    if q == 0.0 || !q.is_finite() {
        Err(format!("costate q = {q} leaves the control k = -1/q undefined"))
    } else {
        Ok(())
    }
}

impl Model for Sloc {
    fn name(&self) -> &str {
        "sloc"
    }

    fn n_states(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        ["rho", "b", "gamma", "D"].map(String::from).to_vec()
    }

    fn default_params(&self) -> Vec<f64> {
        vec![0.03, 0.55, 0.5, 0.5]
    }

    fn default_active_param(&self) -> usize {
        Self::B
    }

    fn rho_index(&self) -> usize {
        Self::RHO
    }

    fn diffusion(&self, params: &[f64]) -> Vec<f64> {
        vec![params[Self::D]]
    }

    fn reaction(&self, u: &[f64], params: &[f64], f: &mut [f64]) -> Result<(), String> {
        check_costate(u[1])?;
        let (f1, f2) = Self::rates(u[0], u[1], params);
        f[0] = f1;
        f[1] = f2;
        Ok(())
    }

    fn reaction_jacobian(&self, u: &[f64], params: &[f64], jac: &mut [f64]) -> Result<(), String> {
        let (p, q) = (u[0], u[1]);
        check_costate(q)?;
        let (rho, b, gamma) = (params[Self::RHO], params[Self::B], params[Self::GAMMA]);
        let s = 1.0 + p * p;
        jac[0] = -b + 2.0 * p / (s * s);
        jac[1] = 1.0 / (q * q);
        jac[2] = 2.0 * gamma - q * (2.0 - 6.0 * p * p) / (s * s * s);
        jac[3] = rho + b - 2.0 * p / (s * s);
        Ok(())
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn local_value(&self, u: &[f64], params: &[f64]) -> Result<f64, String> {
        let k = self.control(u, params)?;
        if k <= 0.0 {
            return Err(format!("control k = {k} is not positive"));
        }
        Ok(k.ln() - params[Self::GAMMA] * u[0] * u[0])
    }

    fn control(&self, u: &[f64], _params: &[f64]) -> Result<f64, String> {
        check_costate(u[1])?;
        Ok(-1.0 / u[1])
    }

    fn hamiltonian(&self, u: &[f64], params: &[f64], k: f64) -> f64 {
        let (p, q) = (u[0], u[1]);
        let b = params[Self::B];
        k.ln() - params[Self::GAMMA] * p * p + q * (k - b * p + p * p / (1.0 + p * p))
    }

    fn admissibility(&self, u: &[f64], _params: &[f64]) -> Option<String> {
        (u[1] >= 0.0).then(|| format!("costate q = {} is not negative", u[1]))
    }
}
