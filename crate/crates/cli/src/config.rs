//! Flat TOML run configuration with `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vesiclecc_core::energy::PhysParams;
use vesiclecc_core::init::{ShapeKind, ShapeSpec, SmoothingSettings};
use vesiclecc_core::pcg::PcgSettings;
use vesiclecc_core::scenario::{IcKind, Scenario};
use vesiclecc_core::stepper::{Scheme, StepperOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    TemporalStudy,
    SpatialStudy,
    RefinementStudy,
    Benchmark,
    SmoothOnly,
}

/// Every key of the configuration file. Missing keys take the growth
/// benchmark defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: String,
    /// Cells per side.
    pub n: usize,
    /// Side length of the square domain.
    pub length: f64,
    pub dt: f64,
    pub t_final: f64,

    pub gamma_surf: f64,
    pub gamma_bend: f64,
    pub gamma_area: f64,
    pub gamma_in: f64,
    pub gamma_out: f64,
    pub psi_in: f64,
    pub psi_out: f64,
    pub beta_in: f64,
    pub beta_out: f64,
    pub eps: f64,
    pub m_phi: f64,
    pub m0: f64,
    /// Target arc length; taken from the initial condition when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_target: Option<f64>,
    pub beta: f64,
    pub theta: f64,
    pub lambda: f64,

    /// ellipse | triangle | star | hexagon_incomplete | crescent
    pub shape: String,
    pub center_x: f64,
    pub center_y: f64,
    pub rotation: f64,
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub edge: f64,
    pub star_r0: f64,
    pub star_amplitude: f64,
    pub star_points: u32,
    pub crescent_outer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crescent_inner: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crescent_offset: Option<f64>,
    /// tanh (ellipse only) | smoothed
    pub ic: String,
    pub smooth_mobility: f64,
    pub smooth_dt: f64,
    pub smooth_t_final: f64,
    pub psi_a: f64,
    pub psi_b: f64,

    pub output_dir: PathBuf,
    /// Write snapshots every this many steps (0: initial and final only).
    pub snapshot_every: usize,
    pub record_every: usize,
    pub write_ppm: bool,
    pub check_residuals: bool,
    pub track_energy: bool,
    pub pcg_tol: f64,
    pub pcg_max_iters: usize,

    pub dt_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub path_n0: usize,
    pub path_nmax: usize,
    pub path_c: f64,
    pub bench_n_list: Vec<usize>,
    pub bench_steps: usize,
    pub bench_schemes: Vec<String>,

    // Multigrid settings of the reference nonlinear solver; accepted so
    // shared parameter files load, but unused here.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlmg_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlmg_minlevel: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlmg_presmooth: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlmg_postsmooth: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlmg_maxits: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PhysParams::default();
        let smooth = SmoothingSettings::default();
        Self {
            scheme: "cc_bdf2".into(),
            n: 256,
            length: 1.0,
            dt: 1e-6,
            t_final: 0.02,
            gamma_surf: p.gamma_surf,
            gamma_bend: p.gamma_bend,
            gamma_area: p.gamma_area,
            gamma_in: p.gamma_in,
            gamma_out: p.gamma_out,
            psi_in: p.psi_in,
            psi_out: p.psi_out,
            beta_in: p.beta_in,
            beta_out: p.beta_out,
            eps: p.eps,
            m_phi: p.m_phi,
            m0: p.m0,
            a_target: None,
            beta: p.beta_stab,
            theta: p.theta,
            lambda: p.lambda_stab,
            shape: "ellipse".into(),
            center_x: 0.5,
            center_y: 0.5,
            rotation: 0.0,
            ellipse_a: 0.3,
            ellipse_b: 0.2,
            edge: 0.5,
            star_r0: 0.25,
            star_amplitude: 0.4,
            star_points: 5,
            crescent_outer: 0.3,
            crescent_inner: None,
            crescent_offset: None,
            ic: "tanh".into(),
            smooth_mobility: smooth.mobility,
            smooth_dt: smooth.dt,
            smooth_t_final: smooth.dt * smooth.steps as f64,
            psi_a: -0.35,
            psi_b: 0.45,
            output_dir: PathBuf::from("out"),
            snapshot_every: 0,
            record_every: 1,
            write_ppm: true,
            check_residuals: true,
            track_energy: true,
            pcg_tol: PcgSettings::default().tol,
            pcg_max_iters: PcgSettings::default().max_iters,
            dt_list: vec![1e-5, 5e-6, 2.5e-6, 1.25e-6],
            n_list: vec![128, 256, 512],
            path_n0: 128,
            path_nmax: 512,
            path_c: 0.002,
            bench_n_list: vec![128, 256, 512],
            bench_steps: 100,
            bench_schemes: vec!["cc".into(), "classical_pcg".into()],
            nlmg_tol: None,
            nlmg_minlevel: None,
            nlmg_presmooth: None,
            nlmg_postsmooth: None,
            nlmg_maxits: None,
        }
    }
}

/// Problems found while loading or validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.reason)
        } else {
            write!(f, "`{}`: {}", self.key, self.reason)
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<vesiclecc_core::Error> for ConfigError {
    fn from(e: vesiclecc_core::Error) -> Self {
        match e {
            vesiclecc_core::Error::Config { key, reason } => Self { key, reason },
            other => Self::new("", other.to_string()),
        }
    }
}

/// Parses the value side of `key=value` as TOML, falling back to a bare string.
fn parse_override(item: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::new(item, "override must look like key=value"))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

/// Integers are accepted wherever a float is expected.
fn coerce_numbers(table: &mut toml::Table) {
    for (k, v) in table.iter_mut() {
        if FLOAT_KEYS.contains(&k.as_str()) {
            if let toml::Value::Integer(i) = v {
                *v = toml::Value::Float(*i as f64);
            }
        }
        if k == "dt_list" {
            if let toml::Value::Array(items) = v {
                for it in items.iter_mut() {
                    if let toml::Value::Integer(i) = it {
                        *it = toml::Value::Float(*i as f64);
                    }
                }
            }
        }
    }
}

const FLOAT_KEYS: &[&str] = &[
        "length", "dt", "t_final", "gamma_surf", "gamma_bend", "gamma_area", "gamma_in",
        "gamma_out", "psi_in", "psi_out", "beta_in", "beta_out", "eps", "m_phi", "m0",
        "a_target", "beta", "theta", "lambda", "center_x", "center_y", "rotation", "ellipse_a",
        "ellipse_b", "edge", "star_r0", "star_amplitude", "crescent_outer", "crescent_inner",
        "crescent_offset", "smooth_mobility", "smooth_dt", "smooth_t_final", "psi_a", "psi_b",
        "pcg_tol", "path_c", "nlmg_tol",
];

impl RunConfig {
    /// Loads `path` (if any), applies overrides in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError::new("", format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (k, v) = parse_override(item)?;
            table.insert(k, v);
        }
        Self::from_table(table)
    }

    pub fn from_table(mut table: toml::Table) -> Result<Self, ConfigError> {
        coerce_numbers(&mut table);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::new("", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        Scheme::parse(&self.scheme).ok_or_else(|| {
            ConfigError::new("scheme", format!("unknown scheme {:?}", self.scheme))
        })
    }

    pub fn bench_schemes(&self) -> Result<Vec<Scheme>, ConfigError> {
        self.bench_schemes
            .iter()
            .map(|s| {
                Scheme::parse(s).ok_or_else(|| ConfigError::new("bench_schemes", format!("unknown scheme {s:?}")))
            })
            .collect()
    }

    pub fn params(&self) -> PhysParams {
        PhysParams {
            gamma_surf: self.gamma_surf,
            gamma_bend: self.gamma_bend,
            gamma_area: self.gamma_area,
            gamma_in: self.gamma_in,
            gamma_out: self.gamma_out,
            psi_in: self.psi_in,
            psi_out: self.psi_out,
            beta_in: self.beta_in,
            beta_out: self.beta_out,
            eps: self.eps,
            m_phi: self.m_phi,
            m0: self.m0,
            a_target: self.a_target.unwrap_or(0.0),
            beta_stab: self.beta,
            theta: self.theta,
            lambda_stab: self.lambda,
        }
    }

    pub fn shape_spec(&self) -> Result<ShapeSpec, ConfigError> {
        let kind = match self.shape.as_str() {
            "ellipse" => ShapeKind::Ellipse {
                a: self.ellipse_a,
                b: self.ellipse_b,
            },
            "triangle" => ShapeKind::Triangle { edge: self.edge },
            "star" => ShapeKind::Star {
                r0: self.star_r0,
                amplitude: self.star_amplitude,
                points: self.star_points,
            },
            "hexagon_incomplete" => ShapeKind::HexagonIncomplete { edge: self.edge },
            "crescent" => ShapeKind::Crescent {
                outer: self.crescent_outer,
                inner: self.crescent_inner.unwrap_or(self.crescent_outer),
                offset: self.crescent_offset.unwrap_or(0.5 * self.crescent_outer),
            },
            other => return Err(ConfigError::new("shape", format!("unknown shape {other:?}"))),
        };
        Ok(ShapeSpec {
            kind,
            center: (self.center_x, self.center_y),
            rotation: self.rotation,
        })
    }

    pub fn ic_kind(&self) -> Result<IcKind, ConfigError> {
        match self.ic.as_str() {
            "tanh" => Ok(IcKind::Tanh),
            "smoothed" => Ok(IcKind::Smoothed(SmoothingSettings::from_duration(
                self.smooth_mobility,
                self.smooth_dt,
                self.smooth_t_final,
            ))),
            other => Err(ConfigError::new("ic", format!("unknown initial condition {other:?}"))),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        Ok(Scenario {
            length: self.length,
            params: self.params(),
            target_from_ic: self.a_target.is_none(),
            shape: self.shape_spec()?,
            ic: self.ic_kind()?,
            psi_profile: (self.psi_a, self.psi_b),
            scheme: self.scheme()?,
        })
    }

    pub fn stepper_options(&self) -> StepperOptions {
        StepperOptions {
            check_residuals: self.check_residuals,
            track_energy: self.track_energy,
            pcg: PcgSettings {
                tol: self.pcg_tol,
                max_iters: self.pcg_max_iters,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(key, format!("must be positive, got {v}")))
            }
        };
        if self.n < 4 {
            return Err(ConfigError::new("n", format!("need at least 4 cells, got {}", self.n)));
        }
        positive("length", self.length)?;
        positive("dt", self.dt)?;
        if !(self.t_final >= 0.0) {
            return Err(ConfigError::new("t_final", "must be non-negative"));
        }
        positive("eps", self.eps)?;
        positive("pcg_tol", self.pcg_tol)?;
        positive("smooth_dt", self.smooth_dt)?;
        if self.record_every == 0 {
            return Err(ConfigError::new("record_every", "must be at least 1"));
        }
        if self.dt_list.iter().any(|d| !(*d > 0.0)) {
            return Err(ConfigError::new("dt_list", "all entries must be positive"));
        }
        if let Some(k) = self.n_list.iter().chain(&self.bench_n_list).find(|k| **k < 4) {
            return Err(ConfigError::new("n_list", format!("grid size {k} is too small")));
        }
        self.scheme()?;
        self.bench_schemes()?;
        self.ic_kind()?;
        self.shape_spec()?;
        self.params().validate()?;
        if self.nlmg_tol.is_some()
            || self.nlmg_minlevel.is_some()
            || self.nlmg_presmooth.is_some()
            || self.nlmg_postsmooth.is_some()
            || self.nlmg_maxits.is_some()
        {
            log::info!("nlmg_* keys are ignored by this solver");
        }
        Ok(())
    }
}
