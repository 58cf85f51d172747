//! Run configuration: a flat `key=value` file overlaid by command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use choreo4::bvp::{Apsis, BvpKind, KeplerSeed, NewtonOptions, Problem, Sense, Side};
use choreo4::continuation::{ContinuationSettings, VERIFY_SAMPLES};
use choreo4::integrate::IntegratorSettings;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Cart,
    Reg,
}

impl FromStr for Chart {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cart" => Ok(Chart::Cart),
            "reg" => Ok(Chart::Reg),
            _ => Err(format!("chart must be 'cart' or 'reg', got '{s}'")),
        }
    }
}

/// Inclusive 1-based row range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rows {
    pub first: usize,
    pub last: usize,
}

impl Rows {
    pub fn contains(&self, i: usize) -> bool {
        (self.first..=self.last).contains(&i)
    }
}

impl FromStr for Rows {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("rows must look like 'A-B' or 'N' with 1 ≤ A ≤ B, got '{s}'");
        let (a, b) = s.split_once('-').unwrap_or((s, s));
        let first: usize = a.trim().parse().map_err(|_| bad())?;
        let last: usize = b.trim().parse().map_err(|_| bad())?;
        if first == 0 || first > last {
            return Err(bad());
        }
        Ok(Rows { first, last })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tol: f64,
    pub out: PathBuf,
    pub samples: usize,
    pub chart: Chart,
    pub rows: Option<Rows>,
    /// Single table row used as a start by `propagate`, `solve` and `trace`.
    pub row: Option<usize>,
    /// Solution record used as a start instead of a row.
    pub record: Option<PathBuf>,
    /// User table for `verify-table`.
    pub table: Option<PathBuf>,
    /// Natural time span of `propagate`; 12 T̄ (or the period for the
    /// choreography) when unset.
    pub span: Option<f64>,
    /// Output points of `propagate`.
    pub points: usize,
    pub choreography: bool,
    pub kepler: KeplerSeed,
    pub kind: BvpKind,
    pub fix: usize,
    pub periodic: bool,
    pub discover: bool,
    pub newton: NewtonOptions,
    pub continuation: ContinuationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tol: IntegratorSettings::default().rel_tol,
            out: PathBuf::from("."),
            samples: VERIFY_SAMPLES,
            chart: Chart::Reg,
            rows: None,
            row: None,
            record: None,
            table: None,
            span: None,
            points: 1000,
            choreography: false,
            kepler: KeplerSeed::new(0.1, 0.0, Apsis::Periapsis, Sense::Prograde),
            kind: BvpKind::R,
            fix: 0,
            periodic: false,
            discover: false,
            newton: NewtonOptions::default(),
            continuation: ContinuationSettings::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("bad value for '{key}': '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "bad value for '{key}': '{v}' (expected true or false)"
        ))),
    }
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let c = &mut self.continuation;
        match key {
            "tol" => self.tol = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "samples" => self.samples = parse(key, v)?,
            "chart" => self.chart = v.parse().map_err(CliError::Usage)?,
            "rows" => self.rows = Some(v.parse().map_err(CliError::Usage)?),
            "row" => self.row = Some(parse(key, v)?),
            "record" => self.record = Some(PathBuf::from(v)),
            "table" => self.table = Some(PathBuf::from(v)),
            "span" => self.span = Some(parse(key, v)?),
            "points" => self.points = parse(key, v)?,
            "choreography" => self.choreography = parse_bool(key, v)?,
            "a" => self.kepler.a = parse(key, v)?,
            "e" => self.kepler.e = parse(key, v)?,
            "apsis" => {
                self.kepler.apsis = match v {
                    "periapsis" => Apsis::Periapsis,
                    "apoapsis" => Apsis::Apoapsis,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "apsis must be periapsis or apoapsis, got '{v}'"
                        )))
                    }
                }
            }
            "sense" => {
                self.kepler.sense = match v {
                    "prograde" => Sense::Prograde,
                    "retrograde" => Sense::Retrograde,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "sense must be prograde or retrograde, got '{v}'"
                        )))
                    }
                }
            }
            "side" => {
                self.kepler.side = match v {
                    "plus" => Side::PlusX,
                    "minus" => Side::MinusX,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "side must be plus or minus, got '{v}'"
                        )))
                    }
                }
            }
            "kind" => {
                self.kind = v
                    .parse()
                    .map_err(|e: choreo4::Error| CliError::Usage(e.to_string()))?
            }
            "fix" => self.fix = parse(key, v)?,
            "periodic" => self.periodic = parse_bool(key, v)?,
            "discover" => self.discover = parse_bool(key, v)?,
            "newton_tol" => self.newton.tol = parse(key, v)?,
            "max_iter" => self.newton.max_iter = parse(key, v)?,
            "step" => c.step = parse(key, v)?,
            "min_step" => c.min_step = parse(key, v)?,
            "max_step" => c.max_step = parse(key, v)?,
            "max_points" => c.max_points = parse(key, v)?,
            "collision_threshold" => c.collision_threshold = parse(key, v)?,
            "tau_scale" => c.tau_scale = parse(key, v)?,
            "corrector_tol" => c.corrector_tol = parse(key, v)?,
            "window_lo" => c.family_window.0 = parse(key, v)?,
            "window_hi" => c.family_window.1 = parse(key, v)?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown configuration key '{key}'"
                )))
            }
        }
        Ok(())
    }

    /// Applies every line of a configuration file. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: expected key=value, got '{line}'",
                    n + 1
                ))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let p = Problem::with_tolerance(self.tol);
        p.cfg
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }
}
