//! Run configuration: a `key = value` text file over a fixed schema.
//!
//! Blank lines and lines starting with `#` are ignored. Every key below may
//! appear at most once; unknown keys are rejected. Values not given take the
//! schema default.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::continuation::StepControl;
use crate::equilibria::SearchGrid;
use crate::spectral::ScanOptions;

/// `(key, default, meaning)`.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("problem", "nbody", "satellite | nbody"),
    ("n", "3", "number of ring bodies (>= 2)"),
    ("mu", "1", "central mass (>= 0)"),
    ("nu_min", "0", "lower end of the frequency scan"),
    ("nu_max", "auto", "upper end of the frequency scan, or auto"),
    ("nu_step", "0.001", "coarse scan step"),
    ("nu_tol", "1e-10", "bisection tolerance for crossings"),
    ("harmonics", "5", "highest harmonic checked for resonances"),
    ("scan_mode", "events", "events | mu_sweep"),
    ("sweep_mu_min", "0", "lower end of the mass sweep"),
    ("sweep_mu_max", "50", "upper end of the mass sweep"),
    ("sweep_points", "100", "masses sampled by the sweep"),
    ("grid_angular", "360", "equilibrium search: angular seeds"),
    ("grid_radial", "60", "equilibrium search: radial seeds"),
    ("grid_r_min", "0.1", "equilibrium search: inner seed radius"),
    ("grid_r_max", "3", "equilibrium search: outer seed radius"),
    ("order", "auto", "Fourier truncation, or auto (16 satellite, 12 nbody)"),
    ("epsilon", "0.001", "initial branch amplitude, in [1e-4, 1e-2]"),
    ("event", "0", "row of the event table to continue"),
    ("steps", "20", "continuation steps"),
    ("h_min", "1e-5", "smallest arclength step"),
    ("h_max", "0.1", "largest arclength step"),
    ("h_init", "0.01", "first arclength step"),
    ("tail_tol", "1e-8", "largest accepted norm of the top three Fourier modes"),
    ("max_order", "40", "largest truncation the continuation may grow to"),
    ("dt_check", "0.001", "integrator step for conservation checks"),
    ("dt_closure", "0.0001", "integrator step for closure errors"),
    ("verify_samples", "25", "random frequencies in the block check"),
    ("seed", "0", "seed for randomized checks"),
    ("out", ".", "output directory"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path, self.line, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Satellite,
    Nbody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Events,
    MuSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub n: usize,
    pub mu: f64,
    pub nu_min: f64,
    pub nu_max: Option<f64>,
    pub nu_step: f64,
    pub nu_tol: f64,
    pub harmonics: usize,
    pub scan_mode: ScanMode,
    pub sweep_mu_min: f64,
    pub sweep_mu_max: f64,
    pub sweep_points: usize,
    pub grid_angular: usize,
    pub grid_radial: usize,
    pub grid_r_min: f64,
    pub grid_r_max: f64,
    pub order: Option<usize>,
    pub epsilon: f64,
    pub event: usize,
    pub steps: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub h_init: f64,
    pub tail_tol: f64,
    pub max_order: usize,
    pub dt_check: f64,
    pub dt_closure: f64,
    pub verify_samples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
}

struct Entry<'a> {
    value: &'a str,
    line: usize,
}

struct Reader<'a> {
    path: &'a str,
    entries: Vec<(&'a str, Entry<'a>)>,
}

impl<'a> Reader<'a> {
    fn err(&self, line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_string(),
            line,
            message: message.into(),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, e)| e.line).unwrap_or(0)
    }

    fn raw(&self, key: &str) -> (&'a str, usize) {
        match self.entries.iter().find(|(k, _)| *k == key) {
            Some((_, e)) => (e.value, e.line),
            None => {
                let d = SCHEMA.iter().find(|s| s.0 == key).expect("schema key").1;
                (d, 0)
            }
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let (v, line) = self.raw(key);
        v.parse().map_err(|e| self.err(line, format!("invalid value `{v}` for `{key}`: {e}")))
    }

    fn real(&self, key: &str) -> Result<f64, ConfigError> {
        let x: f64 = self.parse(key)?;
        if !x.is_finite() {
            return Err(self.err(self.raw(key).1, format!("`{key}` must be finite")));
        }
        Ok(x)
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        let x = self.real(key)?;
        if x <= 0.0 {
            return Err(self.err(self.raw(key).1, format!("`{key}` must be positive, got {x}")));
        }
        Ok(x)
    }

    fn auto<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        if self.raw(key).0 == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: name.clone(),
            line: 0,
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(&text, &name)
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut r = Reader { path, entries: Vec::new() };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let Some((k, v)) = s.split_once('=') else {
                return Err(r.err(line, format!("expected `key = value`, found `{s}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !SCHEMA.iter().any(|e| e.0 == k) {
                return Err(r.err(line, format!("unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(r.err(line, format!("missing value for `{k}`")));
            }
            if let Some(first) = r.entries.iter().find(|(key, _)| *key == k) {
                let msg = format!("duplicate key `{k}` (first set on line {})", first.1.line);
                return Err(r.err(line, msg));
            }
            r.entries.push((k, Entry { value: v, line }));
        }
        let cfg = Self {
            problem: match r.raw("problem").0 {
                "satellite" => ProblemKind::Satellite,
                "nbody" => ProblemKind::Nbody,
                other => return Err(r.err(r.raw("problem").1, format!("`problem` must be satellite or nbody, got `{other}`"))),
            },
            n: r.parse("n")?,
            mu: r.real("mu")?,
            nu_min: r.real("nu_min")?,
            nu_max: r.auto("nu_max")?,
            nu_step: r.positive("nu_step")?,
            nu_tol: r.positive("nu_tol")?,
            harmonics: r.parse("harmonics")?,
            scan_mode: match r.raw("scan_mode").0 {
                "events" => ScanMode::Events,
                "mu_sweep" => ScanMode::MuSweep,
                other => return Err(r.err(r.raw("scan_mode").1, format!("`scan_mode` must be events or mu_sweep, got `{other}`"))),
            },
            sweep_mu_min: r.real("sweep_mu_min")?,
            sweep_mu_max: r.real("sweep_mu_max")?,
            sweep_points: r.parse("sweep_points")?,
            grid_angular: r.parse("grid_angular")?,
            grid_radial: r.parse("grid_radial")?,
            grid_r_min: r.positive("grid_r_min")?,
            grid_r_max: r.positive("grid_r_max")?,
            order: r.auto("order")?,
            epsilon: r.positive("epsilon")?,
            event: r.parse("event")?,
            steps: r.parse("steps")?,
            h_min: r.positive("h_min")?,
            h_max: r.positive("h_max")?,
            h_init: r.positive("h_init")?,
            tail_tol: r.positive("tail_tol")?,
            max_order: r.parse("max_order")?,
            dt_check: r.positive("dt_check")?,
            dt_closure: r.positive("dt_closure")?,
            verify_samples: r.parse("verify_samples")?,
            seed: r.parse("seed")?,
            out: PathBuf::from(r.raw("out").0),
        };
        let at = |keys: &[&str]| keys.iter().map(|k| r.line_of(k)).max().unwrap_or(0);
        let fail = |keys: &[&str], msg: String| Err(r.err(at(keys), msg));
        if cfg.n < 2 {
            return fail(&["n"], format!("`n` must be at least 2, got {}", cfg.n));
        }
        if cfg.mu < 0.0 {
            return fail(&["mu"], format!("`mu` must be non-negative, got {}", cfg.mu));
        }
        if cfg.nu_min < 0.0 {
            return fail(&["nu_min"], format!("`nu_min` must be non-negative, got {}", cfg.nu_min));
        }
        if let Some(hi) = cfg.nu_max {
            if !(hi > cfg.nu_min) {
                return fail(&["nu_min", "nu_max"], format!("empty frequency range [{}, {hi}]", cfg.nu_min));
            }
        }
        if !(cfg.sweep_mu_max > cfg.sweep_mu_min) || cfg.sweep_mu_min < 0.0 {
            return fail(&["sweep_mu_min", "sweep_mu_max"], format!("empty mass range [{}, {}]", cfg.sweep_mu_min, cfg.sweep_mu_max));
        }
        if cfg.sweep_points < 2 {
            return fail(&["sweep_points"], "`sweep_points` must be at least 2".into());
        }
        if cfg.grid_angular == 0 || cfg.grid_radial == 0 || !(cfg.grid_r_max > cfg.grid_r_min) {
            return fail(&["grid_angular", "grid_radial", "grid_r_min", "grid_r_max"], "empty equilibrium search grid".into());
        }
        if cfg.order == Some(0) {
            return fail(&["order"], "`order` must be positive".into());
        }
        if !(cfg.h_min <= cfg.h_init && cfg.h_init <= cfg.h_max) {
            return fail(&["h_min", "h_init", "h_max"], "need h_min <= h_init <= h_max".into());
        }
        if cfg.max_order < cfg.order_or_default() {
            return fail(&["max_order", "order"], "`max_order` is below the truncation order".into());
        }
        Ok(cfg)
    }

    pub fn order_or_default(&self) -> usize {
        self.order.unwrap_or(match self.problem {
            ProblemKind::Satellite => crate::continuation::DEFAULT_ORDER_SATELLITE,
            ProblemKind::Nbody => crate::continuation::DEFAULT_ORDER_BODIES,
        })
    }

    /// Scan options; `nu_max` falls back to `auto_max`.
    pub fn scan_options(&self, auto_max: f64) -> ScanOptions {
        ScanOptions {
            nu_min: self.nu_min,
            nu_max: self.nu_max.unwrap_or(auto_max),
            step: self.nu_step,
            tol: self.nu_tol,
            harmonics: self.harmonics,
        }
    }

    pub fn search_grid(&self) -> SearchGrid {
        SearchGrid {
            angular: self.grid_angular,
            radial: self.grid_radial,
            r_min: self.grid_r_min,
            r_max: self.grid_r_max,
        }
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            h_min: self.h_min,
            h_max: self.h_max,
            h_init: self.h_init,
            tail_tol: self.tail_tol,
            max_order: self.max_order,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse("", "<defaults>").expect("schema defaults are valid")
    }
}
