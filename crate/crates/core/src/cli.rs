//! Workflows behind the command-line tool. Each command turns a
//! [`RunConfig`] into a set of named output files; nothing here touches the
//! file system except [`Outputs::write`].

use std::fmt::Display;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ProblemKind, RunConfig, ScanMode};
use crate::continuation::{branch_from_event, continue_branch, spectral_tail, Branch, PeriodicProblem};
use crate::dynamics::Mechanics;
use crate::equilibria::{find_satellite_equilibria, maxwell_ring, ring_residual, ring_sum, EquilibriumPoint, RingConfiguration};
use crate::error::Error;
use crate::spectral::{
    default_nu_max, event_pattern_thresholds, find_mu_k, mu_grid, mu_sweep, planar_criterion, ring_blocks,
    satellite_blocks_at, scan_blocks, weighted_hessian, BifurcationEvent, SpectralBlock,
};
use crate::symmetry::BlockKind;
use crate::verification::{closure_error, oracle_suite, OracleOptions, OracleReport};

/// Version of the CSV and JSON layouts written by this module.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ring,
    Equilibria,
    Scan,
    Continue,
    Verify,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Domain(#[from] Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Domain(_) | Self::Io(_) => 2,
            Self::Verification(_) => 3,
        }
    }
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Named output files, in the order they are produced.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
}

impl Outputs {
    fn push(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_str())
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

fn table<R, I, S>(header: &[&str], rows: R) -> String
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn cell(x: impl Display) -> String {
    x.to_string()
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Outputs, CliError> {
    match cmd {
        Command::Ring => cmd_ring(cfg),
        Command::Equilibria => cmd_equilibria(cfg),
        Command::Scan => cmd_scan(cfg),
        Command::Continue => cmd_continue(cfg),
        Command::Verify => cmd_verify(cfg),
    }
}

/// `ring.csv`: `n,mu,s1,omega,residual`; `bodies.csv`: `index,x,y,mass`.
pub fn cmd_ring(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let ring = maxwell_ring(cfg.n, cfg.mu)?;
    let mut out = Outputs::default();
    out.push(
        "ring.csv",
        table(
            &["n", "mu", "s1", "omega", "residual"],
            [[cell(ring.n), num(ring.mu), num(ring.s1), num(ring.omega), num(ring_residual(&ring))]],
        ),
    );
    let rows = ring
        .positions
        .iter()
        .zip(&ring.masses)
        .enumerate()
        .map(|(i, (p, m))| [cell(i), num(p[0]), num(p[1]), num(*m)]);
    out.push("bodies.csv", table(&["index", "x", "y", "mass"], rows));
    Ok(out)
}

fn equilibria_of(cfg: &RunConfig) -> Result<(RingConfiguration, Vec<EquilibriumPoint>), CliError> {
    let ring = maxwell_ring(cfg.n, cfg.mu)?;
    let eqs = find_satellite_equilibria(&ring, &cfg.search_grid())?;
    Ok((ring, eqs))
}

/// `equilibria.csv`: `index,orbit,label,x,y,radius,trace,det,morse_index,planar_events`.
/// `planar_events` is the count predicted from trace and determinant, empty
/// when degenerate.
pub fn cmd_equilibria(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (_, eqs) = equilibria_of(cfg)?;
    let rows = eqs.iter().enumerate().map(|(i, e)| {
        let predicted = planar_criterion(e.trace, e.det).map(cell).unwrap_or_default();
        [
            cell(i),
            cell(e.orbit_id),
            cell(e.label),
            num(e.coords[0]),
            num(e.coords[1]),
            num(e.radius()),
            num(e.trace),
            num(e.det),
            cell(e.morse_index),
            predicted,
        ]
    });
    let header = ["index", "orbit", "label", "x", "y", "radius", "trace", "det", "morse_index", "planar_events"];
    let mut out = Outputs::default();
    out.push("equilibria.csv", table(&header, rows));
    Ok(out)
}

/// One row of the event table together with what is needed to continue it.
pub struct EventEntry {
    /// Equilibrium index for satellite problems; `None` for the ring.
    pub source: Option<usize>,
    pub event: BifurcationEvent,
    pub block: SpectralBlock,
}

pub fn event_table(cfg: &RunConfig) -> Result<Vec<EventEntry>, CliError> {
    let mut entries = Vec::new();
    match cfg.problem {
        ProblemKind::Satellite => {
            let (ring, eqs) = equilibria_of(cfg)?;
            let sys = ring.satellite_system();
            for (i, eq) in eqs.iter().enumerate() {
                let blocks = satellite_blocks_at(eq, &ring)?;
                let opts = cfg.scan_options(default_nu_max(&sys.hessian(&eq.position())?));
                push_events(&mut entries, Some(i), &blocks, scan_blocks(&blocks, &opts)?);
            }
        }
        ProblemKind::Nbody => {
            let ring = maxwell_ring(cfg.n, cfg.mu)?;
            let blocks = ring_blocks(&ring)?;
            let (hs, _) = weighted_hessian(&ring)?;
            let opts = cfg.scan_options(default_nu_max(&hs));
            push_events(&mut entries, None, &blocks, scan_blocks(&blocks, &opts)?);
        }
    }
    Ok(entries)
}

fn push_events(entries: &mut Vec<EventEntry>, source: Option<usize>, blocks: &[SpectralBlock], events: Vec<BifurcationEvent>) {
    for ev in events {
        let block = blocks.iter().find(|b| b.id == ev.block).expect("event block").clone();
        entries.push(EventEntry { source, event: ev, block });
    }
}

const EVENT_HEADER: [&str; 8] = ["index", "source", "block", "label", "nu0", "eta", "resonant", "width"];

/// `events.csv` (events mode), or `sweep.csv` with `mu,k,kind,nu0,eta` and
/// `thresholds.csv` with `kind,k,mu,bracket_lo,bracket_hi,left,right`
/// (mu_sweep mode, n-body only).
pub fn cmd_scan(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let mut out = Outputs::default();
    match cfg.scan_mode {
        ScanMode::Events => {
            let rows = event_table(cfg)?.into_iter().enumerate().map(|(i, e)| {
                [
                    cell(i),
                    e.source.map(cell).unwrap_or_else(|| "ring".into()),
                    cell(e.event.block),
                    cell(e.event.label),
                    num(e.event.nu0),
                    cell(e.event.eta),
                    cell(e.event.resonant),
                    num(e.event.width),
                ]
            });
            out.push("events.csv", table(&EVENT_HEADER, rows));
        }
        ScanMode::MuSweep => {
            if cfg.problem != ProblemKind::Nbody {
                return Err(Error::Argument("mass sweeps need problem = nbody".into()).into());
            }
            let mus = mu_grid(cfg.sweep_mu_min, cfg.sweep_mu_max, cfg.sweep_points);
            let mut rows = Vec::new();
            for &mu in &mus {
                let ring = maxwell_ring(cfg.n, mu)?;
                let opts = cfg.scan_options(default_nu_max(&weighted_hessian(&ring)?.0));
                rows.extend(mu_sweep(cfg.n, &[mu], &opts)?);
            }
            let sweep = rows.iter().map(|r| [num(r.mu), cell(r.k), cell(r.kind), num(r.nu0), cell(r.eta)]);
            out.push("sweep.csv", table(&["mu", "k", "kind", "nu0", "eta"], sweep));
            let mut thresholds = Vec::new();
            for k in 1..cfg.n {
                thresholds.extend(find_mu_k(cfg.n, k, (cfg.sweep_mu_min, cfg.sweep_mu_max))?);
            }
            for k in 1..=cfg.n {
                for kind in [BlockKind::Planar, BlockKind::Spatial] {
                    thresholds.extend(event_pattern_thresholds(&rows, &mus, k, kind));
                }
            }
            let trows = thresholds.iter().map(|t| {
                let kind = serde_json::to_value(t.kind).expect("enum").as_str().unwrap_or_default().to_string();
                [kind, cell(t.k), num(t.mu), num(t.bracket[0]), num(t.bracket[1]), num(t.left), num(t.right)]
            });
            out.push("thresholds.csv", table(&["kind", "k", "mu", "bracket_lo", "bracket_hi", "left", "right"], trows));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct PointRecord<'a> {
    step: usize,
    nu: f64,
    period: f64,
    arclength: f64,
    amplitude: f64,
    residual: f64,
    lambda: &'a [f64],
    symmetry_residual: f64,
    spectral_tail: f64,
    closure_error: Option<f64>,
    coefficients: &'a crate::fourier::FourierLoop,
}

#[derive(Serialize)]
struct BranchDocument<'a> {
    schema_version: u32,
    config: &'a RunConfig,
    source: Option<usize>,
    origin: &'a BifurcationEvent,
    epsilon: f64,
    termination: Option<crate::continuation::Termination>,
    points: Vec<PointRecord<'a>>,
}

/// Builds the problem for the selected event and runs the continuation.
pub fn continue_event(cfg: &RunConfig) -> Result<(EventEntry, PeriodicProblem, Branch), CliError> {
    let mut table = event_table(cfg)?;
    if cfg.event >= table.len() {
        return Err(Error::Argument(format!("event {} out of range: the table has {} rows", cfg.event, table.len())).into());
    }
    let entry = table.swap_remove(cfg.event);
    if entry.event.resonant {
        log::warn!("event {} is flagged resonant", cfg.event);
    }
    let order = cfg.order_or_default();
    let ring = maxwell_ring(cfg.n, cfg.mu)?;
    let (mut problem, equilibrium, inv_sqrt_mass) = match cfg.problem {
        ProblemKind::Satellite => {
            let (_, eqs) = equilibria_of(cfg)?;
            let eq = &eqs[entry.source.expect("satellite events carry their equilibrium")];
            let mut p = PeriodicProblem::satellite(ring.satellite_system(), order, entry.event.label)?;
            p.equilibria = eqs.iter().map(|e| e.position()).collect();
            (p, eq.position(), DVector::from_element(3, 1.0))
        }
        ProblemKind::Nbody => {
            let mut p = PeriodicProblem::bodies(ring.body_system(), order, entry.event.label)?;
            p.equilibria = vec![ring.state_vector()];
            let (_, sq) = weighted_hessian(&ring)?;
            (p, ring.state_vector(), sq.map(|s| 1.0 / s))
        }
    };
    problem.equilibria.retain(|e| (e - &equilibrium).norm() > 0.0);
    let branch = branch_from_event(&problem, &entry.event, &entry.block, &equilibrium, &inv_sqrt_mass, cfg.epsilon)?;
    let branch = continue_branch(&problem, branch, cfg.steps, cfg.step_control());
    Ok((entry, problem, branch))
}

/// `branch.json` and `branch_metrics.csv` with
/// `step,nu,period,arclength,amplitude,order,residual,lambda_max,symmetry_residual,spectral_tail,closure_error`.
/// A closure error is left empty when the integration collides.
pub fn cmd_continue(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let (entry, problem, branch) = continue_event(cfg)?;
    let mut points = Vec::new();
    for (i, p) in branch.points.iter().enumerate() {
        points.push(PointRecord {
            step: i,
            nu: p.nu,
            period: 2.0 * std::f64::consts::PI / p.nu,
            arclength: p.arclength,
            amplitude: p.amplitude,
            residual: p.residual,
            lambda: &p.lambda,
            symmetry_residual: p.symmetry_residual,
            spectral_tail: spectral_tail(&p.coefficients),
            closure_error: closure_error(&p.coefficients, problem.system(), cfg.dt_closure).ok(),
            coefficients: &p.coefficients,
        });
    }
    let rows = points.iter().map(|p| {
        let lam = p.lambda.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        [
            cell(p.step),
            num(p.nu),
            num(p.period),
            num(p.arclength),
            num(p.amplitude),
            cell(p.coefficients.order()),
            num(p.residual),
            num(lam),
            num(p.symmetry_residual),
            num(p.spectral_tail),
            p.closure_error.map(num).unwrap_or_default(),
        ]
    });
    let header = [
        "step",
        "nu",
        "period",
        "arclength",
        "amplitude",
        "order",
        "residual",
        "lambda_max",
        "symmetry_residual",
        "spectral_tail",
        "closure_error",
    ];
    let metrics = table(&header, rows);
    let doc = BranchDocument {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        source: entry.source,
        origin: &branch.origin,
        epsilon: branch.epsilon,
        termination: branch.termination,
        points,
    };
    let mut out = Outputs::default();
    out.push("branch.json", serde_json::to_string_pretty(&doc).expect("serializable") + "\n");
    out.push("branch_metrics.csv", metrics);
    Ok(out)
}

/// `verify.csv`: `check,value,tolerance,passed`. The checks run on the ring
/// configuration of the config (for either problem kind); any failing check
/// makes the command fail with a verification error after writing.
pub fn verification_report(cfg: &RunConfig) -> Result<OracleReport, CliError> {
    let ring = maxwell_ring(cfg.n, cfg.mu)?;
    let opts = OracleOptions {
        seed: cfg.seed,
        samples: cfg.verify_samples,
        dt: cfg.dt_check,
    };
    let mut report = oracle_suite(&ring, &opts)?;
    let direct: f64 = (1..cfg.n).map(|j| 0.25 / (std::f64::consts::PI * j as f64 / cfg.n as f64).sin()).sum();
    report.checks.push(crate::verification::Check::below("s1_direct_sum", (ring_sum(cfg.n) - direct).abs(), 1e-14));
    Ok(report)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let report = verification_report(cfg)?;
    let rows = report.checks.iter().map(|c| [c.name.clone(), num(c.value), num(c.tolerance), cell(c.passed)]);
    let mut out = Outputs::default();
    out.push("verify.csv", table(&["check", "value", "tolerance", "passed"], rows));
    Ok(out)
}

/// Failed checks of a `verify.csv` body, by name.
pub fn failed_checks(verify_csv: &str) -> Vec<String> {
    verify_csv
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",false"))
        .filter_map(|l| l.split(',').next().map(str::to_string))
        .collect()
}
