//! Subcommand orchestration for the `quadnls` binary. All artifacts of a
//! run are written sequentially into one output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::dichotomy::{initial_data, run_experiment, DataFamily, DichotomyReport};
use crate::error::{invalid, Error, Result};
use crate::evolution::{detect_blowup, evolve, write_trajectory_csv, Detection, EvolveConfig, Monitors};
use crate::ground_state::{sharp_constant, solve, write_csv, GroundStateResult, SharpConstant};
use crate::radial_grid::RadialGrid;
use crate::report::{self, SCHEMA_VERSION};
use crate::verify::{run_verify, Status, VerifyReport};
use crate::FieldPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GroundState,
    Evolve,
    Dichotomy,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::Evolve => "evolve",
            Command::Dichotomy => "dichotomy",
            Command::Verify => "verify",
        }
    }
}

/// What the binary prints and how it exits.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub artifacts: Vec<PathBuf>,
    /// Names of failed invariants; non-empty means exit status 1.
    pub failures: Vec<String>,
}

/// True for errors caused by the configuration rather than the numerics.
pub fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Parse(_) | Error::InvalidParameter { .. } | Error::UnsupportedDimension(_) | Error::Json(_)
    )
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    result: T,
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    command: Command,
    out: Outcome,
}

impl Writer<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.directory.join(name)
    }

    fn file(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.out.artifacts.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, result: T) -> Result<()> {
        if !self.cfg.output.wants(Format::Json) {
            return Ok(());
        }
        let text = report::to_string(&Envelope {
            schema_version: SCHEMA_VERSION,
            command: self.command.name(),
            config: self.cfg,
            result,
        })?;
        self.file(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn script(&mut self, name: &str, text: &str) -> Result<()> {
        if self.cfg.output.emit_plot_scripts {
            self.file(name, |w| Ok(w.write_all(text.as_bytes())?))?;
        }
        Ok(())
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output.directory)?;
    let mut w = Writer {
        cfg,
        command,
        out: Outcome::default(),
    };
    match command {
        Command::GroundState => ground_state(&mut w)?,
        Command::Evolve => evolve_cmd(&mut w)?,
        Command::Dichotomy => dichotomy(&mut w)?,
        Command::Verify => verify(&mut w)?,
    }
    Ok(w.out)
}

#[derive(Serialize)]
struct GroundStateSummary<'a> {
    ground_state: &'a GroundStateResult,
    sharp_constant: Option<SharpConstant>,
}

fn ground_state(w: &mut Writer) -> Result<()> {
    let cfg = w.cfg;
    let gs = solve(cfg.grid.n, cfg.kappa(), &cfg.ground_state_config())?;
    if cfg.output.wants(Format::Csv) {
        w.file("ground_state.csv", |f| write_csv(&gs, f))?;
    }
    let sharp = sharp_constant(&gs).ok();
    w.json(
        "ground_state.json",
        GroundStateSummary {
            ground_state: &gs,
            sharp_constant: sharp,
        },
    )?;
    w.script("plot_ground_state.py", PLOT_GROUND_STATE)?;
    w.out.lines.push(format!(
        "n = {}, kappa = {}: alpha1 = {:.10e}, C_op = {:.10e}, iterations = {}",
        gs.n, gs.kappa, gs.alpha1, gs.c_op, gs.iterations
    ));
    w.out.lines.push(format!(
        "pohozaev residual = {:.3e}, elliptic residual = {:.3e}",
        gs.pohozaev_residuals.max(),
        gs.elliptic_residual
    ));
    if gs.pohozaev_residuals.max() > cfg.solver.tol_pohozaev {
        w.out.failures.push("pohozaev_residual".into());
    }
    if gs.elliptic_residual > cfg.solver.tol_pde {
        w.out.failures.push("elliptic_residual".into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvolveSummary {
    evolve: EvolveConfig,
    detection: Detection,
    completed: bool,
    steps: usize,
    step_halvings: usize,
    q_drift: f64,
    e_drift: f64,
    max_outer_fraction: f64,
    trajectory_csv: Option<String>,
    warnings: Vec<String>,
}

/// Evolution data: a scaled ground state on its own grid, or a Gaussian on
/// the configured grid, either extended to `evolve_num_nodes`.
fn evolve_data(cfg: &RunConfig) -> Result<FieldPair> {
    let spec = cfg.experiment_spec();
    match spec.data {
        DataFamily::ScaledGroundState { .. } => {
            let gs = solve(cfg.grid.n, cfg.kappa(), &cfg.ground_state_config())?;
            initial_data(&spec, &gs)
        }
        DataFamily::Gaussian {
            amplitude_u,
            amplitude_v,
            width,
        } => {
            if !(width.is_finite() && width > 0.0) {
                return Err(invalid("experiment.parameters.width", "must be positive"));
            }
            let base = RadialGrid::new(cfg.grid.n, cfg.grid.r_max, cfg.grid.num_nodes)?;
            let grid = Arc::new(base.extended(spec.evolve_num_nodes.max(cfg.grid.num_nodes))?);
            let g = move |a: f64| move |r: f64| (a * (-(r * r) / (width * width)).exp()).into();
            Ok(FieldPair::from_fns(grid, g(amplitude_u), g(amplitude_v)))
        }
    }
}

fn evolve_cmd(w: &mut Writer) -> Result<()> {
    let cfg = w.cfg;
    let ec = cfg.evolve_config();
    let state = evolve_data(cfg)?;
    let rec = evolve(&state, &ec, &Monitors::default())?;
    let detection = detect_blowup(&rec, &ec, None);
    let csv = cfg.output.wants(Format::Csv);
    if csv {
        w.file("trajectory.csv", |f| write_trajectory_csv(&rec, f))?;
    }
    w.json(
        "evolve.json",
        EvolveSummary {
            evolve: ec,
            detection,
            completed: rec.completed,
            steps: rec.steps,
            step_halvings: rec.step_halvings,
            q_drift: rec.q_drift(),
            e_drift: rec.e_drift(),
            max_outer_fraction: rec.max_outer_fraction,
            trajectory_csv: csv.then(|| "trajectory.csv".into()),
            warnings: rec.warnings.clone(),
        },
    )?;
    w.script("plot_trajectory.py", PLOT_TRAJECTORY)?;
    w.out.lines.push(format!(
        "verdict {:?} (t_detect {:?}); Q drift {:.3e}, E drift {:.3e}",
        detection.verdict,
        detection.t_detect,
        rec.q_drift(),
        rec.e_drift()
    ));
    Ok(())
}

fn dichotomy(w: &mut Writer) -> Result<()> {
    let cfg = w.cfg;
    if cfg.grid.n != 5 {
        return Err(invalid(
            "grid.n",
            format!("the dichotomy is five-dimensional, got {}", cfg.grid.n),
        ));
    }
    let gs = solve(5, cfg.kappa(), &cfg.ground_state_config())?;
    let (mut report, rec) = run_experiment(&cfg.experiment_spec(), &gs)?;
    if cfg.output.wants(Format::Csv) {
        w.file("trajectory.csv", |f| write_trajectory_csv(&rec, f))?;
        if let Some(sim) = report.simulation.as_mut() {
            sim.trajectory_csv = Some("trajectory.csv".into());
        }
    }
    w.json("dichotomy.json", &report)?;
    w.script("plot_trajectory.py", PLOT_TRAJECTORY)?;
    w.out.lines.push(describe(&report));
    Ok(())
}

fn describe(r: &DichotomyReport) -> String {
    let label = |v: serde_json::Value| v.as_str().map(String::from).unwrap_or_else(|| "-".into());
    let sim = r
        .simulation
        .as_ref()
        .and_then(|s| serde_json::to_value(s.verdict).ok())
        .map(label)
        .unwrap_or_else(|| "-".into());
    format!(
        "EQ/EQ* = {:.5}, KQ/KQ* = {:.5}: {} + {} ({})",
        r.eq_ratio,
        r.kq_ratio,
        serde_json::to_value(r.classification).map(label).unwrap_or_default(),
        sim,
        serde_json::to_value(r.consistency).map(label).unwrap_or_default(),
    )
}

fn verify(w: &mut Writer) -> Result<()> {
    let report: VerifyReport = run_verify(w.cfg)?;
    for c in &report.checks {
        let status = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        w.out.lines.push(format!(
            "{status} {:<30} measured {:>12.4e}  tolerance {:>10.3e}",
            c.name, c.measured, c.tolerance
        ));
    }
    w.out.failures.extend(report.failures().map(|c| c.name.clone()));
    w.json("verify.json", &report)
}

const PLOT_GROUND_STATE: &str = r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "ground_state.csv"
df = pd.read_csv(path, skiprows=2)
fig, ax = plt.subplots()
ax.plot(df["r"], df["phi"], label="phi")
ax.plot(df["r"], df["psi"], label="psi")
ax.set_xlabel("r")
ax.legend()
fig.savefig("ground_state.png", dpi=150)
"#;

const PLOT_TRAJECTORY: &str = r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trajectory.csv"
df = pd.read_csv(path)
fig, axes = plt.subplots(2, 1, sharex=True)
axes[0].semilogy(df["t"], df["K"], label="K")
axes[0].legend()
axes[1].plot(df["t"], df["Q"] / df["Q"].iloc[0] - 1, label="Q drift")
axes[1].plot(df["t"], df["E"] / df["E"].iloc[0] - 1, label="E drift")
axes[1].set_xlabel("t")
axes[1].legend()
fig.savefig("trajectory.png", dpi=150)
"#;
