use super::Model;

/// Grazing control of a semi-arid vegetation/water system.
///
/// Components `(v, w, λ, μ)`: biomass, soil water and their costates. The
/// control is the grazing effort `E`, the harvest `H = v^α E^{1−α}` and the
/// local value `J_c = pH − cE`.
///
/// Parameters `(ρ, g, η, d, δ, β, ξ, R, r_u, r_w, c, p, α)`. The costate
/// equation for `λ` uses `−μ(Rξ − r_u w)`, the exact derivative of the
/// Hamiltonian with respect to `v`.
#[derive(Debug, Clone, Copy)]
pub struct VegOc {
    pub d1: f64,
    pub d2: f64,
}

impl Default for VegOc {
    fn default() -> Self {
        Self { d1: 0.05, d2: 10.0 }
    }
}

struct Par {
    rho: f64,
    g: f64,
    eta: f64,
    d: f64,
    delta: f64,
    beta: f64,
    xi: f64,
    r: f64,
    ru: f64,
    rw: f64,
    c: f64,
    p: f64,
    alpha: f64,
}

impl Par {
    fn new(par: &[f64]) -> Self {
        Self {
            rho: par[0],
            g: par[1],
            eta: par[2],
            d: par[3],
            delta: par[4],
            beta: par[5],
            xi: par[6],
            r: par[7],
            ru: par[8],
            rw: par[9],
            c: par[10],
            p: par[11],
            alpha: par[12],
        }
    }

    /// `((p−λ)(1−α)/c)^{1/α}`, the ratio `E/v` at the optimal effort.
    fn effort_ratio(&self, v: f64, lam: f64) -> Result<f64, String> {
        if !(v > 0.0) {
            return Err(format!("biomass v = {v} is not positive"));
        }
        let base = (self.p - lam) * (1.0 - self.alpha) / self.c;
        if !(base > 0.0) {
            return Err(format!("costate lambda = {lam} is not below the price p = {}", self.p));
        }
        Ok(base.powf(1.0 / self.alpha))
    }
}

impl VegOc {
    pub const RHO: usize = 0;
    pub const R: usize = 7;
    pub const C: usize = 10;
    pub const P: usize = 11;
    pub const ALPHA: usize = 12;

    /// Parameter vector of the grazing demo with discount rate `rho`.
    pub fn demo_params(rho: f64) -> Vec<f64> {
        vec![
            rho, 1e-3, 0.5, 0.03, 0.005, 0.9, 1e-3, 34.0, 0.01, 0.1, 1.0, 1.1, 0.3,
        ]
    }
}

impl Model for VegOc {
    fn name(&self) -> &str {
        "vegoc"
    }

    fn n_states(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        [
            "rho", "g", "eta", "d", "delta", "beta", "xi", "R", "ru", "rw", "c", "p", "alpha",
        ]
        .map(String::from)
        .to_vec()
    }

    fn default_params(&self) -> Vec<f64> {
        Self::demo_params(0.03)
    }

    fn default_active_param(&self) -> usize {
        Self::R
    }

    fn rho_index(&self) -> usize {
        Self::RHO
    }

    fn diffusion(&self, _params: &[f64]) -> Vec<f64> {
        vec![self.d1, self.d2]
    }

    fn reaction(&self, u: &[f64], params: &[f64], f: &mut [f64]) -> Result<(), String> {
        let q = Par::new(params);
        let (v, w, l1, l2) = (u[0], u[1], u[2], u[3]);
        let gas = q.effort_ratio(v, l1)?;
        // H = v^α E^{1−α} with E = gas·v
        let h = v * gas.powf(1.0 - q.alpha);
        let veta = v.powf(q.eta);
        f[0] = (q.g * w * veta - q.d * (1.0 + q.delta * v)) * v - h;
        f[1] = q.r * (q.beta + q.xi * v) - (q.ru * v + q.rw) * w;
        f[2] = q.rho * l1
            - q.p * q.alpha * h / v
            - l1 * (q.g * (q.eta + 1.0) * w * veta - 2.0 * q.d * q.delta * v - q.d - q.alpha * h / v)
            - l2 * (q.r * q.xi - q.ru * w);
        f[3] = q.rho * l2 - l1 * q.g * v * veta + l2 * (q.ru * v + q.rw);
        Ok(())
    }

    fn local_value(&self, u: &[f64], params: &[f64]) -> Result<f64, String> {
        let q = Par::new(params);
        let v = u[0];
        let gas = q.effort_ratio(v, u[2])?;
        let e = gas * v;
        let h = v * gas.powf(1.0 - q.alpha);
        Ok(q.p * h - q.c * e)
    }

    fn control(&self, u: &[f64], params: &[f64]) -> Result<f64, String> {
        let q = Par::new(params);
        Ok(q.effort_ratio(u[0], u[2])? * u[0])
    }

    fn hamiltonian(&self, u: &[f64], params: &[f64], e: f64) -> f64 {
        let q = Par::new(params);
        let (v, w, l1, l2) = (u[0], u[1], u[2], u[3]);
        let h = v.powf(q.alpha) * e.powf(1.0 - q.alpha);
        let g1 = (q.g * w * v.powf(q.eta) - q.d * (1.0 + q.delta * v)) * v - h;
        let g2 = q.r * (q.beta + q.xi * v) - (q.ru * v + q.rw) * w;
        q.p * h - q.c * e + l1 * g1 + l2 * g2
    }

    fn admissibility(&self, u: &[f64], params: &[f64]) -> Option<String> {
        let p = params[Self::P];
        if u[0] <= 0.0 {
            Some(format!("biomass v = {} is not positive", u[0]))
        } else if u[1] <= 0.0 {
            Some(format!("water w = {} is not positive", u[1]))
        } else if u[2] >= p {
            Some(format!("costate lambda = {} is not below p = {p}", u[2]))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ratio_gives_effort_equal_to_biomass() {
        let par = VegOc::demo_params(0.03);
        let (c, p, alpha) = (par[10], par[11], par[12]);
        let lam = p - c / (1.0 - alpha);
        let u = [2.5, 1.0, lam, 0.1];
        let m = VegOc::default();
        let e = m.control(&u, &par).unwrap();
        assert!((e - 2.5).abs() < 1e-12);
        let jc = m.local_value(&u, &par).unwrap();
        assert!((jc - (p - c) * 2.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_inadmissible_nodes() {
        let par = VegOc::demo_params(0.03);
        let m = VegOc::default();
        let mut f = [0.0; 4];
        assert!(m.reaction(&[0.0, 1.0, 0.0, 0.0], &par, &mut f).is_err());
        assert!(m.reaction(&[1.0, 1.0, 1.2, 0.0], &par, &mut f).is_err());
        assert!(m.admissibility(&[1.0, 1.0, 0.0, 0.0], &par).is_none());
        assert!(m.admissibility(&[1.0, -1.0, 0.0, 0.0], &par).is_some());
    }
}
