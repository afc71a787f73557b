//! Piecewise-linear finite elements on an interval.
//!
//! Homogeneous Neumann conditions are natural for the weak form, so no
//! boundary rows are touched: constants lie in the kernel of the stiffness
//! matrix and the mass matrix integrates nodal fields exactly for linear data.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Ordered node coordinates of a 1D mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
}

impl Mesh1D {
    /// Uniform mesh with `n_nodes` nodes on `[x_min, x_max]`.
    pub fn uniform(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::Config(format!(
                "invalid mesh bounds [{x_min}, {x_max}]"
            )));
        }
        if n_nodes < 3 {
            return Err(Error::Config(format!(
                "mesh needs at least 3 nodes, got {n_nodes}"
            )));
        }
        let h = (x_max - x_min) / (n_nodes - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_nodes).map(|i| x_min + i as f64 * h).collect();
        // pin the right end exactly
        nodes[n_nodes - 1] = x_max;
        Ok(Self { nodes })
    }

    /// Mesh from explicit, strictly increasing coordinates.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Config(format!(
                "mesh needs at least 3 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("mesh nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn x_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn x_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn element_lengths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn domain_length(&self) -> f64 {
        self.x_max() - self.x_min()
    }
}

/// Symmetric tridiagonal matrix stored by its diagonal and first off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `out = self * x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            0.0
        }
    }
}

/// Assembled P1 mass and stiffness matrices of a mesh.
#[derive(Debug, Clone)]
pub struct FemOps {
    mesh: Mesh1D,
    mass: SymTridiag,
    stiffness: SymTridiag,
}

impl FemOps {
    /// Consistent mass matrix `∫φᵢφⱼ` and stiffness matrix `∫φᵢ'φⱼ'`.
    pub fn assemble(mesh: Mesh1D) -> Self {
        let n = mesh.n_nodes();
        let mut mass = SymTridiag {
            diag: vec![0.0; n],
            off: vec![0.0; n - 1],
        };
        let mut stiffness = mass.clone();
        for (e, h) in mesh.element_lengths().into_iter().enumerate() {
            mass.diag[e] += h / 3.0;
            mass.diag[e + 1] += h / 3.0;
            mass.off[e] += h / 6.0;
            stiffness.diag[e] += 1.0 / h;
            stiffness.diag[e + 1] += 1.0 / h;
            stiffness.off[e] -= 1.0 / h;
        }
        Self {
            mesh,
            mass,
            stiffness,
        }
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn mass(&self) -> &SymTridiag {
        &self.mass
    }

    pub fn stiffness(&self) -> &SymTridiag {
        &self.stiffness
    }

    /// `1ᵀ M w`, the P1 approximation of `∫_Ω w dx`.
    pub fn integrate(&self, w: &[f64]) -> Result<f64> {
        check_len(self.n_nodes(), w.len(), "integrate")?;
        // 1ᵀM is the lumped row-sum vector
        let n = w.len();
        let mut s = 0.0;
        for i in 0..n {
            let mut row = self.mass.diag[i];
            if i > 0 {
                row += self.mass.off[i - 1];
            }
            if i + 1 < n {
                row += self.mass.off[i];
            }
            s += row * w[i];
        }
        Ok(s)
    }

    /// `∫_Ω w dx / |Ω|`
    pub fn average(&self, w: &[f64]) -> Result<f64> {
        Ok(self.integrate(w)? / self.mesh.domain_length())
    }

    /// `wᵀ M w`
    pub fn l2_norm_sq(&self, w: &[f64]) -> Result<f64> {
        check_len(self.n_nodes(), w.len(), "l2_norm_sq")?;
        let mut mw = vec![0.0; w.len()];
        self.mass.apply(w, &mut mw);
        Ok(w.iter().zip(&mw).map(|(a, b)| a * b).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_three_nodes() {
        let m = Mesh1D::uniform(0.0, 1.0, 3).unwrap();
        assert_eq!(m.nodes(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn sloc_domain() {
        let lx = 2.0 * std::f64::consts::PI / 0.44;
        let m = Mesh1D::uniform(-lx, lx, 50).unwrap();
        assert_eq!(m.n_nodes(), 50);
        assert!((m.domain_length() - 2.0 * lx).abs() < 1e-12);
        let total: f64 = m.element_lengths().iter().sum();
        assert!((total - m.domain_length()).abs() < 1e-12);
    }

    #[test]
    fn bad_meshes_rejected() {
        assert!(matches!(Mesh1D::uniform(1.0, 0.0, 5), Err(Error::Config(_))));
        assert!(matches!(Mesh1D::uniform(0.0, 1.0, 2), Err(Error::Config(_))));
        assert!(Mesh1D::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn interior_stiffness_stencil() {
        let fem = FemOps::assemble(Mesh1D::uniform(0.0, 1.0, 11).unwrap());
        let h = 0.1;
        let k = fem.stiffness();
        assert!((k.entry(5, 4) + 1.0 / h).abs() < 1e-9);
        assert!((k.entry(5, 5) - 2.0 / h).abs() < 1e-9);
        assert!((k.entry(5, 6) + 1.0 / h).abs() < 1e-9);
    }

    #[test]
    fn total_mass_is_domain_length() {
        let fem = FemOps::assemble(Mesh1D::uniform(0.0, 1.0, 3).unwrap());
        let total: f64 = fem.mass().to_dense().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn integrate_errors_on_length() {
        let fem = FemOps::assemble(Mesh1D::uniform(0.0, 1.0, 3).unwrap());
        assert!(matches!(fem.integrate(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }
}
