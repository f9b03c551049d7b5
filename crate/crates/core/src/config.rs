//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and everything after `#` are ignored. Keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `horizon` | run length `T` | `0.005` |
//! | `intervals` | splitting intervals `N + 1` | `64` |
//! | `epsilon` | regularization | `0.01` |
//! | `theta` | lift exponent, in `(0, 0.4)` | `0.3` |
//! | `record_every` | record cadence in intervals | `1` |
//! | `seed` | base seed | `0` |
//! | `shift_method` | `spectral` or `cubic` | `spectral` |
//! | `dt_internal` | inner step cap: a number, `inf`, or `cfl` | `inf` |
//! | `averaging` | `entropy_consistent`, `arithmetic`, `harmonic` | `entropy_consistent` |
//! | `newton_tol`, `newton_max_iter`, `linear_solver_tol` | Newton controls | `1e-12`, `30`, `1e-10` |
//! | `length`, `points` | torus length and node count | `1`, `128` |
//! | `initial_condition` | `constant`, `sine_bump`, `gaussian_bump`, `from_file` | `sine_bump` |
//! | `amplitude`, `mean_level`, `width` | initial-condition shape | `0.3`, `1`, `0.1` |
//! | `ic_file` | snapshot file read by `from_file` | none |
//! | `output_dir` | where results go | `out` |
//! | `ensemble_size` | number of paths | `8` |
//! | `epsilon_sweep` | comma-separated, decreasing | `0.1, 0.01, 0.001` |
//! | `n_doublings` | refinements for the splitting convergence test | `3` |
//! | `decay_tol` | `sup_dev` below which a path counts as decayed | `1e-3` |
//! | `threads` | worker count (0 = automatic) | `0` |
//!
//! `dt_internal = cfl` keeps the cap infinite and starts the controller from
//! `h^4 / (8 max f_eps)` evaluated on the lifted initial data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::det_step::cfl_step_guess;
use crate::error::{Result, SimError};
use crate::grid::{Field, TorusGrid};
use crate::io::read_snapshot;
use crate::splitting::SplittingConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `mean_level`
    Constant,
    /// `mean_level + amplitude sin(2 pi x / L)`
    SineBump,
    /// `mean_level + amplitude exp(-(x - L/2)^2 / (2 width^2))`
    GaussianBump,
    /// Values read from a snapshot file on the same grid.
    FromFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerStep {
    Cap(f64),
    Cfl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub splitting: SplittingConfig,
    pub inner_step: InnerStep,
    pub length: f64,
    pub points: usize,
    pub initial_condition: InitialCondition,
    pub amplitude: f64,
    pub mean_level: f64,
    pub width: f64,
    pub output_dir: PathBuf,
    pub ensemble_size: usize,
    pub epsilon_sweep: Vec<f64>,
    pub n_doublings: u32,
    pub decay_tol: f64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            splitting: SplittingConfig {
                horizon: 0.005,
                ..Default::default()
            },
            inner_step: InnerStep::Cap(f64::INFINITY),
            length: 1.0,
            points: 128,
            initial_condition: InitialCondition::SineBump,
            amplitude: 0.3,
            mean_level: 1.0,
            width: 0.1,
            output_dir: PathBuf::from("out"),
            ensemble_size: 8,
            epsilon_sweep: vec![1e-1, 1e-2, 1e-3],
            n_doublings: 3,
            decay_tol: 1e-3,
            threads: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| SimError::Config(format!("bad value '{value}' for '{key}'")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses the text format over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.splitting;
        match key {
            "horizon" => s.horizon = parse_num(key, value)?,
            "intervals" => s.intervals = parse_num(key, value)?,
            "epsilon" => s.epsilon = parse_num(key, value)?,
            "theta" => s.theta = parse_num(key, value)?,
            "record_every" => s.record_every = parse_num(key, value)?,
            "seed" => s.seed = parse_num(key, value)?,
            "shift_method" => s.shift_method = value.parse()?,
            "dt_internal" => {
                self.inner_step = match value {
                    "cfl" => InnerStep::Cfl,
                    "inf" => InnerStep::Cap(f64::INFINITY),
                    v => InnerStep::Cap(parse_num(key, v)?),
                }
            }
            "averaging" => s.det.averaging = value.parse()?,
            "newton_tol" => s.det.newton_tol = parse_num(key, value)?,
            "newton_max_iter" => s.det.newton_max_iter = parse_num(key, value)?,
            "linear_solver_tol" => s.det.linear_solver_tol = parse_num(key, value)?,
            "length" => self.length = parse_num(key, value)?,
            "points" => self.points = parse_num(key, value)?,
            "initial_condition" => {
                self.initial_condition = match value {
                    "constant" => InitialCondition::Constant,
                    "sine_bump" => InitialCondition::SineBump,
                    "gaussian_bump" => InitialCondition::GaussianBump,
                    "from_file" => match &self.initial_condition {
                        InitialCondition::FromFile(p) => InitialCondition::FromFile(p.clone()),
                        _ => InitialCondition::FromFile(PathBuf::new()),
                    },
                    other => {
                        return Err(SimError::Config(format!("unknown initial_condition '{other}'")))
                    }
                }
            }
            "ic_file" => self.initial_condition = InitialCondition::FromFile(PathBuf::from(value)),
            "amplitude" => self.amplitude = parse_num(key, value)?,
            "mean_level" => self.mean_level = parse_num(key, value)?,
            "width" => self.width = parse_num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "ensemble_size" => self.ensemble_size = parse_num(key, value)?,
            "epsilon_sweep" => {
                self.epsilon_sweep = value
                    .split(',')
                    .map(|v| parse_num(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "n_doublings" => self.n_doublings = parse_num(key, value)?,
            "decay_tol" => self.decay_tol = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            other => return Err(SimError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let mut s = self.splitting;
        if let InnerStep::Cap(c) = self.inner_step {
            s.det.dt_internal = c;
        }
        s.validate()?;
        if self.ensemble_size == 0 {
            return Err(SimError::Config("ensemble_size must be >= 1".into()));
        }
        if self.epsilon_sweep.is_empty()
            || self.epsilon_sweep.iter().any(|e| !(*e > 0.0))
            || self.epsilon_sweep.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(SimError::Config(
                "epsilon_sweep must be a non-empty decreasing list of positive values".into(),
            ));
        }
        if !(self.decay_tol > 0.0) {
            return Err(SimError::Config("decay_tol must be > 0".into()));
        }
        if matches!(&self.initial_condition, InitialCondition::FromFile(p) if p.as_os_str().is_empty())
        {
            return Err(SimError::Config("initial_condition = from_file needs ic_file".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.length, self.points)
    }

    /// Builds and validates the (unlifted) initial field.
    pub fn initial_field(&self) -> Result<Field> {
        let grid = self.grid()?;
        let l = self.length;
        let (a, c, w) = (self.amplitude, self.mean_level, self.width);
        let field = match &self.initial_condition {
            InitialCondition::Constant => Field::constant(grid, c),
            InitialCondition::SineBump => Field::from_fn(grid, |x| c + a * (2.0 * PI * x / l).sin()),
            InitialCondition::GaussianBump => {
                Field::from_fn(grid, |x| c + a * (-(x - 0.5 * l).powi(2) / (2.0 * w * w)).exp())
            }
            InitialCondition::FromFile(path) => {
                let snap = read_snapshot(path)?;
                if snap.values.len() != self.points || (snap.length - l).abs() > 1e-12 * l {
                    return Err(SimError::Config(format!(
                        "{} holds n = {}, L = {}; config has n = {}, L = {l}",
                        path.display(),
                        snap.values.len(),
                        snap.length,
                        self.points
                    )));
                }
                Field::new(grid, snap.values)?
            }
        };
        if let Some((index, &value)) = field.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(SimError::NegativeInitialData { index, value });
        }
        Ok(field)
    }

    /// Splitting configuration with the inner-step rule resolved against
    /// `u0`.
    pub fn splitting_config(&self, u0: &Field) -> Result<SplittingConfig> {
        let mut s = self.splitting;
        match self.inner_step {
            InnerStep::Cap(c) => s.det.dt_internal = c,
            InnerStep::Cfl => {
                let m = s.mobility()?;
                s.det.dt_internal = f64::INFINITY;
                s.det.initial_step = Some(cfl_step_guess(&m, &m.lift_initial(u0)?));
            }
        }
        s.validate()?;
        Ok(s)
    }
}
