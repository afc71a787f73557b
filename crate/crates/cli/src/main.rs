mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use ocpde_core::continuation::{self, ContinuationSettings};
use ocpde_core::io::{self, num, LoadedPoint};
use ocpde_core::isc::{IscRun, PathTarget};
use ocpde_core::models::Problem;
use ocpde_core::spectral;
use ocpde_core::value::{self, SkibaSettings};
use ocpde_core::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ocpde", version, about = "Steady states and canonical paths of optimal control problems for 1D reaction-diffusion systems")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `out_dir` of the config or `.`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Correct a steady state and continue it in the active parameter.
    CssCont {
        #[command(flatten)]
        common: Common,
        /// Start from a saved point instead of the configured guess.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Switch to the bifurcating branch at a saved bifurcation point and continue it.
    BranchSwitch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bif: PathBuf,
        #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
        dir: i32,
        #[arg(long, allow_negative_numbers = true)]
        ds: f64,
    },
    /// Spectrum, defect and projection data at a saved steady state.
    Spectral {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        point: PathBuf,
    },
    /// Natural initial-state continuation of paths from one steady state to another.
    IscNat {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pair: Pair,
    },
    /// Arclength initial-state continuation of paths.
    IscArc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pair: Pair,
        /// Number of arclength steps (overrides the config).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Scan for a Skiba point between paths to two steady states.
    Skiba {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        to_a: PathBuf,
        #[arg(long)]
        to_b: PathBuf,
        /// Comma-separated values of α.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Print the value of a steady state or a path.
    Value {
        #[arg(long, conflicts_with = "path", required_unless_present = "path")]
        point: Option<PathBuf>,
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Pair {
    /// Steady state whose states give the initial state at α = 1.
    #[arg(long)]
    from: PathBuf,
    /// Target steady state.
    #[arg(long)]
    to: PathBuf,
    /// Interchange start and target.
    #[arg(long)]
    flip: bool,
}

/// Command outcome: full success or stopped early with partial output.
enum Outcome {
    Done,
    Partial,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn out_dir(&self, cfg: &RunConfig) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn load(path: &Path, settings: &ContinuationSettings) -> Result<LoadedPoint> {
    io::load_point(path, settings.newton_tol)
}

fn same_discretization(a: &Problem, b: &Problem) -> Result<()> {
    if a.model().name() != b.model().name() || a.fem().mesh() != b.fem().mesh() {
        return Err(Error::Config("start and target points use different models or meshes".into()));
    }
    Ok(())
}

fn css_cont(common: &Common, from: Option<&Path>) -> Result<Outcome> {
    let cfg = common.config()?;
    let settings = cfg.continuation();
    let (problem, mut guess) = match from {
        Some(f) => {
            let p = load(f, &settings)?;
            (p.problem, p.state)
        }
        None => {
            let problem = cfg.problem()?;
            let st = cfg.initial_state(&problem)?;
            (problem, st)
        }
    };
    if cfg.active_param.is_some() {
        guess.active = cfg.active_index(problem.model())?;
    }
    let (start, hist) = continuation::newton_correct(&problem, &guess, &settings)?;
    info!("start corrected in {} Newton steps", hist.len() - 1);
    let branch = continuation::continue_branch(&problem, &start, None, &settings)?;
    let dir = common.out_dir(&cfg)?;
    io::save_branch(&dir, &problem, &branch)?;
    report_branch(&branch);
    Ok(Outcome::Done)
}

fn report_branch(branch: &continuation::Branch) {
    for p in branch.points.iter().filter(|p| p.point_type != continuation::PointType::Regular) {
        println!("{} {} at {}", p.label, p.point_type, num(p.state.param()));
    }
    println!(
        "{} points, stopped by {:?}",
        branch.records.len(),
        branch.termination
    );
}

fn branch_switch(common: &Common, bif: &Path, dir: i32, ds: f64) -> Result<Outcome> {
    let cfg = common.config()?;
    let settings = cfg.continuation();
    let p = load(bif, &settings)?;
    if p.meta.point_type != continuation::PointType::Bifurcation {
        return Err(Error::BranchSwitch(format!("{} is not a bifurcation point", bif.display())));
    }
    let (state, tangent) = continuation::branch_switch(&p.problem, &p.state, f64::from(dir), ds, &settings)?;
    let branch = continuation::continue_branch(&p.problem, &state, Some(tangent), &settings)?;
    let out = common.out_dir(&cfg)?;
    io::save_branch(&out, &p.problem, &branch)?;
    report_branch(&branch);
    Ok(Outcome::Done)
}

fn spectral_cmd(common: &Common, point: &Path) -> Result<Outcome> {
    let cfg = common.config()?;
    let p = load(point, &cfg.continuation())?;
    let decay = cfg.path.decay.unwrap_or(spectral::DEFAULT_DECAY);
    let proj = spectral::projection(&p.problem, &p.state, decay)?;
    let rho = p.problem.rho(&p.state.params);
    let dir = common.out_dir(&cfg)?;
    let mut csv = String::from("index,re,im\n");
    for (k, z) in proj.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{k},{},{}\n", num(z.re), num(z.im)));
    }
    fs::write(dir.join("spectrum.csv"), csv)?;
    let summary = format!(
        "defect = {}\nspp = {}\nsuggested_t = {}\nsymmetry_error = {}\n",
        proj.defect,
        proj.has_spp,
        num(proj.suggested_t),
        num(spectral::symmetry_error(&proj.eigenvalues, rho))
    );
    fs::write(dir.join("spectrum.txt"), &summary)?;
    print!("{summary}");
    Ok(Outcome::Done)
}

fn load_pair(pair: &Pair, settings: &ContinuationSettings) -> Result<(LoadedPoint, LoadedPoint)> {
    let (a, b) = if pair.flip { (&pair.to, &pair.from) } else { (&pair.from, &pair.to) };
    let start = load(a, settings)?;
    let target = load(b, settings)?;
    same_discretization(&start.problem, &target.problem)?;
    Ok((start, target))
}

fn write_isc(
    dir: &Path,
    problem: &Problem,
    params: &[f64],
    res: &ocpde_core::isc::IscResult,
) -> Result<()> {
    fs::write(dir.join("alpha_value.csv"), io::alpha_value_csv(&res.alv, &res.vv))?;
    io::save_path(&dir.join("path_last"), problem, params, &res.last_path)?;
    for (k, p) in res.history.iter().enumerate() {
        io::save_path(&dir.join(format!("path{k}")), problem, params, p)?;
    }
    if let Some(p) = &res.at_one {
        io::save_path(&dir.join("path_alpha1"), problem, params, p)?;
    }
    Ok(())
}

fn isc_cmd(common: &Common, pair: &Pair, arc_steps: Option<Option<usize>>) -> Result<Outcome> {
    let cfg = common.config()?;
    let mut settings = cfg.isc()?;
    let (start, target) = load_pair(pair, &cfg.continuation())?;
    let problem = &target.problem;
    let t = PathTarget::prepare(problem, &target.state, &settings)?;
    println!("T = {}", num(t.t_end));
    let v0 = start.state.u.rows(0, problem.n_state_values()).into_owned();
    let res = match arc_steps {
        None => IscRun::new(problem, &t, v0, &settings).natural(&settings.alvin)?,
        Some(steps) => {
            if let Some(n) = steps {
                settings.n_steps = n;
            }
            IscRun::new(problem, &t, v0, &settings).arc(None)?
        }
    };
    let dir = common.out_dir(&cfg)?;
    write_isc(&dir, problem, &target.state.params, &res)?;
    for (a, v) in res.alv.iter().zip(&res.vv) {
        println!("alpha = {}  J = {}", num(*a), num(*v));
    }
    if let Some(a) = res.fold_detected {
        println!("fold in alpha at {}", num(a));
    }
    if res.completed {
        Ok(Outcome::Done)
    } else {
        eprintln!("stopped early: {}", res.failure.as_deref().unwrap_or("unknown reason"));
        Ok(Outcome::Partial)
    }
}

fn skiba_cmd(common: &Common, from: &Path, to_a: &Path, to_b: &Path, grid: &[f64]) -> Result<Outcome> {
    let cfg = common.config()?;
    let cs = cfg.continuation();
    let start = load(from, &cs)?;
    let a = load(to_a, &cs)?;
    let b = load(to_b, &cs)?;
    same_discretization(&start.problem, &a.problem)?;
    same_discretization(&a.problem, &b.problem)?;
    let settings = SkibaSettings {
        isc: cfg.isc()?,
        ..SkibaSettings::default()
    };
    let res = value::skiba_scan(&a.problem, &start.state, &a.state, &b.state, grid, &settings)?;
    let mut samples: Vec<_> = res.grid.iter().chain(&res.bisection).cloned().collect();
    samples.sort_by(|x, y| x.alpha.total_cmp(&y.alpha));
    let mut csv = String::from("alpha,j_a,j_b,diff\n");
    for s in &samples {
        csv.push_str(&format!("{},{},{},{}\n", num(s.alpha), num(s.j_a), num(s.j_b), num(s.diff())));
    }
    let summary = match res.alpha_star {
        Some(a) => format!("alpha_star = {}\nvalue_gap = {}\n", num(a), num(res.value_gap)),
        None if res.degenerate => "degenerate: both targets give equal values\n".to_string(),
        None => "none found\n".to_string(),
    };
    let dir = common.out_dir(&cfg)?;
    fs::write(dir.join("skiba.csv"), csv)?;
    fs::write(dir.join("skiba.txt"), &summary)?;
    let params = &a.state.params;
    if let Some(p) = &res.path_a {
        io::save_path(&dir.join("path_a"), &a.problem, params, p)?;
    }
    if let Some(p) = &res.path_b {
        io::save_path(&dir.join("path_b"), &a.problem, params, p)?;
    }
    print!("{summary}");
    Ok(Outcome::Done)
}

fn value_cmd(point: Option<&Path>, path: Option<&Path>) -> Result<Outcome> {
    if let Some(f) = point {
        let p = io::read_point(f)?;
        let (jca, jdisc) = value::css_value(&p.problem, &p.state)?;
        println!("j_ca = {}\nj_disc = {}", num(jca), num(jdisc));
    } else if let Some(f) = path {
        let p = io::load_path(f)?;
        let v = value::path_value(&p.problem, &p.params, &p.path)?;
        println!("value = {}", num(v));
    }
    Ok(Outcome::Done)
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::CssCont { common, from } => css_cont(common, from.as_deref()),
        Command::BranchSwitch { common, bif, dir, ds } => branch_switch(common, bif, *dir, *ds),
        Command::Spectral { common, point } => spectral_cmd(common, point),
        Command::IscNat { common, pair } => isc_cmd(common, pair, None),
        Command::IscArc { common, pair, steps } => isc_cmd(common, pair, Some(*steps)),
        Command::Skiba {
            common,
            from,
            to_a,
            to_b,
            grid,
        } => skiba_cmd(common, from, to_a, to_b, grid),
        Command::Value { point, path } => value_cmd(point.as_deref(), path.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
