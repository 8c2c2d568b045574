//! Command dispatch: resolve the configuration, run, write artifacts.

use std::path::{Path, PathBuf};

use fxtes::experiments::{
    params_report, run_figure1, run_hessian_convergence, run_montecarlo, run_oracle_suite,
    run_simulation, ExperimentConfig, ExperimentError, ExperimentReport, RunOutcome,
};
use fxtes::plant::{Analytic, Measure};
use fxtes::sim::Trajectory;
use fxtes::Execution;
use thiserror::Error;

use crate::config::{
    parse_entries, parse_overrides, render_config, resolve, ConfigError, Entry, Origin,
};
use crate::csv::{num, write_file, write_trajectory_csv, WriteError};
use crate::svg::{render_svg, Series, Style, SvgError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Params {
        q1: Option<f64>,
        q2: Option<f64>,
        k: Option<f64>,
        t_star: Option<f64>,
    },
    Simulate,
    Figure1,
    Hessian,
    Montecarlo,
    Oracles,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Params { .. } => "params",
            Command::Simulate => "simulate",
            Command::Figure1 => "figure1",
            Command::Hessian => "hessian",
            Command::Montecarlo => "montecarlo",
            Command::Oracles => "oracles",
        }
    }

    pub fn defaults(&self) -> ExperimentConfig {
        match self {
            Command::Montecarlo => ExperimentConfig::montecarlo(),
            _ => ExperimentConfig::figure1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub sets: Vec<String>,
    pub exec: Execution,
}

impl Options {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            config: None,
            out: out.into(),
            seed: None,
            sets: Vec::new(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Write(#[from] WriteError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.report.pass
    }

    /// Human-readable check table.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {}\n",
            self.report.experiment_id,
            if self.pass() { "PASS" } else { "FAIL" }
        );
        for c in &self.report.checks {
            let bounds = match (c.lo, c.hi) {
                (Some(l), Some(h)) => format!("in [{l}, {h}]"),
                (None, Some(h)) => format!("<= {h}"),
                (Some(l), None) => format!(">= {l}"),
                (None, None) => String::new(),
            };
            s.push_str(&format!(
                "  {:<36} {:>14}  {:<22} {}\n",
                c.name,
                num(c.value),
                bounds,
                if c.pass { "ok" } else { "FAIL" }
            ));
        }
        for n in &self.report.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
        s
    }
}

/// Defaults, then the config file, then `--set`, then `--seed` and command flags.
pub fn resolve_options(cmd: &Command, opts: &Options) -> Result<ExperimentConfig, CliError> {
    let mut layers = Vec::new();
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.clone(),
            source,
        })?;
        layers.push(parse_entries(&text)?);
    }
    layers.push(parse_overrides(&opts.sets)?);
    let flag = |key: &str, value: String| Entry {
        key: key.into(),
        value,
        origin: Origin::Override(0),
    };
    let mut flags = Vec::new();
    if let Some(seed) = opts.seed {
        flags.push(flag("seed", seed.to_string()));
    }
    if let Command::Params { q1, q2, k, t_star } = cmd {
        for (key, v) in [("q1", q1), ("q2", q2), ("k", k), ("t_star", t_star)] {
            if let Some(v) = v {
                flags.push(flag(key, format!("{v}")));
            }
        }
        if k.is_some() && t_star.is_some() {
            return Err(ConfigError::Parse {
                origin: Origin::Override(0),
                message: "`--k` and `--t-star` are mutually exclusive".into(),
            }
            .into());
        }
    }
    layers.push(flags);
    Ok(resolve(cmd.defaults(), &layers)?)
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_file(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn trajectory(
        &mut self,
        name: &str,
        traj: &Trajectory,
        cfg: &ExperimentConfig,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_trajectory_csv(traj, &cfg.map, cfg.params.a, &cfg.minimizer(), &path)?;
        self.files.push(path);
        Ok(())
    }

    fn plot(&mut self, name: &str, series: &[Series], style: &Style) -> Result<(), CliError> {
        self.text(name, &render_svg(series, style)?)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Write(WriteError {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn distance_series(label: &str, traj: &Trajectory, z: &[f64]) -> Series {
    Series::new(label, traj.times.clone(), traj.distances(z))
}

fn component_series(label: &str, traj: &Trajectory, slot: usize) -> Series {
    Series::new(label, traj.times.clone(), traj.component(slot))
}

fn state_series(prefix: &str, traj: &Trajectory) -> Vec<Series> {
    traj.layout
        .x()
        .expect("controller trajectory")
        .enumerate()
        .map(|(i, slot)| component_series(&format!("{prefix}x{}", i + 1), traj, slot))
        .collect()
}

fn xi1_series(traj: &Trajectory) -> Vec<Series> {
    let n = traj.layout.n().expect("controller trajectory");
    traj.layout
        .xi1()
        .expect("controller trajectory")
        .enumerate()
        .map(|(k, slot)| component_series(&format!("xi1_{}{}", k / n + 1, k % n + 1), traj, slot))
        .collect()
}

fn phi_series(label: &str, traj: &Trajectory, cfg: &ExperimentConfig) -> Series {
    let values = traj
        .states()
        .map(|s| {
            cfg.map.measure(&fxtes::experiments::probe_point(
                &traj.layout,
                s,
                cfg.params.a,
            ))
        })
        .collect();
    Series::new(label, traj.times.clone(), values)
}

fn t_star_marker(report: &ExperimentReport) -> Option<(f64, String)> {
    let t = report.params_used.t_star();
    Some((t, format!("T* = {t:.1}")))
}

/// Run `cmd`; write `resolved.config`, `report.json` and the command's CSV/SVG files into `opts.out`.
pub fn execute(cmd: &Command, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = resolve_options(cmd, opts)?;
    ensure_dir(&opts.out)?;
    let mut art = Artifacts {
        dir: opts.out.clone(),
        files: Vec::new(),
    };
    art.text("resolved.config", &render_config(&cfg))?;
    let z = cfg.minimizer();
    let report = match cmd {
        Command::Params { .. } => params_report(&cfg)?,
        Command::Simulate => {
            let out = run_simulation(&cfg)?;
            let tr = &out.nfxtes.trajectory;
            art.trajectory("trajectory.csv", tr, &cfg)?;
            let mut style = Style::new("Closed-loop input", "t", "x");
            style.vline = t_star_marker(&out.report);
            style.hlines = z
                .iter()
                .enumerate()
                .map(|(i, v)| (*v, format!("z*{}", i + 1)))
                .collect();
            art.plot("trajectory.svg", &state_series("", tr), &style)?;
            out.report
        }
        Command::Figure1 => {
            let out = run_figure1(&cfg)?;
            art.trajectory("figure1_nfxtes.csv", &out.nfxtes.trajectory, &cfg)?;
            art.trajectory("figure1_baseline.csv", &out.baseline.trajectory, &cfg)?;
            let mut style = Style::new("Distance to the minimizer", "t", "|x - z*|");
            style.vline = t_star_marker(&out.report);
            style.hlines = vec![(cfg.nu, format!("nu = {}", cfg.nu))];
            let series = [
                distance_series("NFxTES", &out.nfxtes.trajectory, &z),
                distance_series("Newton ES", &out.baseline.trajectory, &z),
            ];
            art.plot("figure1_distance.svg", &series, &style)?;
            let mut states = state_series("NFxTES ", &out.nfxtes.trajectory);
            states.extend(state_series("Newton ES ", &out.baseline.trajectory));
            let mut style = Style::new("Input trajectories", "t", "x");
            style.vline = t_star_marker(&out.report);
            style.hlines = z
                .iter()
                .enumerate()
                .map(|(i, v)| (*v, format!("z*{}", i + 1)))
                .collect();
            art.plot("figure1_states.svg", &states, &style)?;
            out.report
        }
        Command::Hessian => {
            let out = run_hessian_convergence(&cfg)?;
            let tr = &out.nfxtes.trajectory;
            art.trajectory("hessian.csv", tr, &cfg)?;
            let mut style = Style::new("Hessian-inverse estimate", "t", "xi1");
            if let Some(inv) = cfg.map.hessian(&z).try_inverse() {
                let n = inv.nrows();
                for i in 0..n {
                    for j in i..n {
                        style
                            .hlines
                            .push((inv[(i, j)], format!("inverse Hessian {}{}", i + 1, j + 1)));
                    }
                }
            }
            art.plot("hessian.svg", &xi1_series(tr), &style)?;
            out.report
        }
        Command::Montecarlo => {
            let out = run_montecarlo(&cfg, opts.exec)?;
            write_montecarlo(&mut art, &cfg, &out.report, &out.runs)?;
            out.report
        }
        Command::Oracles => run_oracle_suite(&cfg, opts.exec)?,
    };
    art.text("report.json", &report.to_json())?;
    Ok(Outcome {
        report,
        files: art.files,
    })
}

fn write_montecarlo(
    art: &mut Artifacts,
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
    runs: &[RunOutcome],
) -> Result<(), CliError> {
    let n = cfg.params.dim();
    let mut table = String::from("run,seed");
    for i in 1..=n {
        table.push_str(&format!(",x0_{i}"));
    }
    table.push_str(",convergence_time,final_distance,phi_at_t_star\n");
    for (i, r) in report.runs.iter().enumerate() {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        table.push_str(&format!(
            "{i},{}",
            r.seed.map(|s| s.to_string()).unwrap_or_default()
        ));
        for v in &r.x0 {
            table.push(',');
            table.push_str(&num(*v));
        }
        table.push_str(&format!(
            ",{},{},{}\n",
            opt(r.convergence_time),
            num(r.final_distance),
            opt(r.phi.as_ref().and_then(|p| p.at_t_star))
        ));
    }
    art.text("montecarlo_runs.csv", &table)?;
    let runs_dir = art.dir.join("runs");
    ensure_dir(&runs_dir)?;
    for (i, run) in runs.iter().enumerate() {
        art.trajectory(&format!("runs/run_{i:03}.csv"), &run.trajectory, cfg)?;
    }
    let z = cfg.minimizer();
    let mut style = Style::new("Monte Carlo: distance to the minimizer", "t", "|x - z*|");
    style.vline = t_star_marker(report);
    let dist: Vec<Series> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| distance_series(&format!("run {i}"), &r.trajectory, &z))
        .collect();
    art.plot("montecarlo_distance.svg", &dist, &style)?;
    let mut style = Style::new("Monte Carlo: measured cost", "t", "phi(z)");
    style.vline = t_star_marker(report);
    let phi: Vec<Series> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| phi_series(&format!("run {i}"), &r.trajectory, cfg))
        .collect();
    art.plot("montecarlo_phi.svg", &phi, &style)?;
    Ok(())
}
