use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use ocpde_core::continuation::ContinuationSettings;
use ocpde_core::fem1d::{FemOps, Mesh1D};
use ocpde_core::isc::{IscSettings, Predictor};
use ocpde_core::models::{self, Model, Problem, SystemState};
use ocpde_core::{Error, Result};

/// A run configuration file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub active_param: Option<String>,
    /// State diffusion constants for models that keep them outside the
    /// parameter vector.
    pub diffusion: Option<Vec<f64>>,
    pub domain: Option<DomainConfig>,
    /// Constant initial guess, one value per component.
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub isc: IscConfig,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub ds_init: Option<f64>,
    pub ds_min: Option<f64>,
    pub ds_max: Option<f64>,
    pub lam_min: Option<f64>,
    pub lam_max: Option<f64>,
    pub usrlam: Option<Vec<f64>>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub xi: Option<f64>,
    pub bifcheck: Option<bool>,
    pub n_eig_watch: Option<usize>,
    pub dense_limit: Option<usize>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TimeSpec {
    Fixed(f64),
    Word(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// A number or "auto".
    pub t_end: Option<TimeSpec>,
    pub m: Option<usize>,
    pub grading: Option<f64>,
    pub tol_bvp: Option<f64>,
    pub max_points: Option<usize>,
    pub err_tol: Option<f64>,
    pub refine: Option<bool>,
    pub decay: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IscConfig {
    pub alvin: Option<Vec<f64>>,
    pub sig: Option<f64>,
    pub sig_min: Option<f64>,
    pub sig_max: Option<f64>,
    pub n_steps: Option<usize>,
    /// 0: previous path, 1: secant.
    pub msw: Option<u8>,
    pub xi_arc: Option<f64>,
    pub retain: Option<bool>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn model(&self) -> Result<Arc<dyn Model>> {
        let name = self.model.as_deref().ok_or_else(|| cfg_err("no model given"))?;
        let m = match &self.diffusion {
            Some(d) => models::builtin_with_diffusion(name, d),
            None => models::builtin(name),
        };
        m.ok_or_else(|| cfg_err(format!("unknown model `{name}`")))
    }

    /// Default parameters overridden by the named values of the file.
    pub fn params(&self, model: &dyn Model) -> Result<Vec<f64>> {
        let names = model.param_names();
        let mut p = model.default_params();
        for (k, v) in &self.params {
            let i = names
                .iter()
                .position(|n| n == k)
                .ok_or_else(|| cfg_err(format!("model `{}` has no parameter `{k}`", model.name())))?;
            p[i] = *v;
        }
        Ok(p)
    }

    pub fn active_index(&self, model: &dyn Model) -> Result<usize> {
        match &self.active_param {
            None => Ok(model.default_active_param()),
            Some(name) => model
                .param_names()
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| cfg_err(format!("model `{}` has no parameter `{name}`", model.name()))),
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let model = self.model()?;
        let d = self.domain.as_ref().ok_or_else(|| cfg_err("no domain given"))?;
        let mesh = Mesh1D::uniform(d.x_min, d.x_max, d.n_nodes)?;
        Ok(Problem::new(model, FemOps::assemble(mesh)))
    }

    /// Constant initial guess from `init`.
    pub fn initial_state(&self, problem: &Problem) -> Result<SystemState> {
        let model = problem.model();
        let init = self.init.as_ref().ok_or_else(|| cfg_err("no initial guess `init` given"))?;
        let u = problem.constant_field(init)?;
        Ok(SystemState::new(u, self.params(model)?, self.active_index(model)?))
    }

    pub fn continuation(&self) -> ContinuationSettings {
        let c = &self.continuation;
        let d = ContinuationSettings::default();
        ContinuationSettings {
            ds_init: c.ds_init.unwrap_or(d.ds_init),
            ds_min: c.ds_min.unwrap_or(d.ds_min),
            ds_max: c.ds_max.unwrap_or(d.ds_max),
            lam_min: c.lam_min.unwrap_or(d.lam_min),
            lam_max: c.lam_max.unwrap_or(d.lam_max),
            usrlam: c.usrlam.clone().unwrap_or(d.usrlam),
            newton_tol: c.newton_tol.unwrap_or(d.newton_tol),
            newton_max_iter: c.newton_max_iter.unwrap_or(d.newton_max_iter),
            xi: c.xi.or(d.xi),
            bifcheck: c.bifcheck.unwrap_or(d.bifcheck),
            n_eig_watch: c.n_eig_watch.unwrap_or(d.n_eig_watch),
            dense_limit: c.dense_limit.unwrap_or(d.dense_limit),
            max_steps: c.max_steps.unwrap_or(d.max_steps),
            ..d
        }
    }

    pub fn isc(&self) -> Result<IscSettings> {
        let d = IscSettings::default();
        let (p, i) = (&self.path, &self.isc);
        let t_end = match &p.t_end {
            None => d.t_end,
            Some(TimeSpec::Fixed(t)) => Some(*t),
            Some(TimeSpec::Word(w)) if w == "auto" => None,
            Some(TimeSpec::Word(w)) => return Err(cfg_err(format!("t_end must be a number or \"auto\", not `{w}`"))),
        };
        let predictor = match i.msw.unwrap_or(0) {
            0 => Predictor::Previous,
            1 => Predictor::Secant,
            k => return Err(cfg_err(format!("msw must be 0 or 1, not {k}"))),
        };
        let mut bvp = d.bvp.clone();
        bvp.tol = p.tol_bvp.unwrap_or(bvp.tol);
        bvp.max_points = p.max_points.unwrap_or(bvp.max_points);
        bvp.err_tol = p.err_tol.unwrap_or(bvp.err_tol);
        let s = IscSettings {
            alvin: i.alvin.clone().unwrap_or(d.alvin.clone()),
            sig: i.sig.unwrap_or(d.sig),
            sig_min: i.sig_min.unwrap_or(d.sig_min),
            sig_max: i.sig_max.unwrap_or(d.sig_max),
            n_steps: i.n_steps.unwrap_or(d.n_steps),
            predictor,
            xi_arc: i.xi_arc.unwrap_or(d.xi_arc),
            t_end,
            m: p.m.unwrap_or(d.m),
            grading: p.grading.unwrap_or(d.grading),
            decay: p.decay.unwrap_or(d.decay),
            bvp,
            refine: p.refine.unwrap_or(d.refine),
            retain: i.retain.unwrap_or(d.retain),
            ..d
        };
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SLOC: &str = r#"
model = "sloc"
active_param = "b"
init = [0.3, -13.0]
[params]
b = 0.6
[domain]
x_min = -1.0
x_max = 1.0
n_nodes = 5
[continuation]
usrlam = [0.6, 0.7]
[path]
t_end = "auto"
"#;

    #[test]
    fn parses_and_overrides_defaults() {
        let c: RunConfig = toml::from_str(SLOC).unwrap();
        let pb = c.problem().unwrap();
        let st = c.initial_state(&pb).unwrap();
        assert_eq!(st.params, vec![0.03, 0.6, 0.5, 0.5]);
        assert_eq!(st.active, 1);
        assert_eq!(st.u[0], 0.3);
        assert_eq!(st.u[9], -13.0);
        assert_eq!(c.continuation().usrlam, vec![0.6, 0.7]);
        assert_eq!(c.isc().unwrap().t_end, None);
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let c: RunConfig = toml::from_str("model = \"sloc\"\n[params]\nbeta = 1.0\n").unwrap();
        let m = c.model().unwrap();
        assert!(c.params(m.as_ref()).is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1").is_err());
    }
}
