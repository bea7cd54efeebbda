//! Run configuration. The file is TOML restricted in practice to dotted
//! top-level assignments (`design.N = 8`); nested tables are flattened to
//! the same dotted keys, so either spelling loads. Keys under `manifest.`
//! are ignored, which lets a bundle's `manifest.toml` be fed back in.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use spillfree_core::{BeamNd, BeamPhysical};
use toml::Value;

use crate::CliError;

pub type FlatConfig = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub enum BeamSpec {
    Physical(BeamPhysical),
    Nd { c1: f64, c2: f64, x_left: f64, x_right: f64 },
}

impl BeamSpec {
    pub fn resolve(&self) -> spillfree_core::Result<BeamNd> {
        match self {
            BeamSpec::Physical(p) => BeamNd::from_physical(p),
            BeamSpec::Nd { c1, c2, x_left, x_right } => BeamNd::new(*c1, *c2, *x_left, *x_right),
        }
    }
}

/// How γ is chosen for a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    /// Bisect for the smallest feasible γ.
    Min,
    Fixed(f64),
    /// `γ₀`, the bound without control (residue command only).
    NoControl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n_modes: usize,
    pub spillover_aware: bool,
    pub gamma: GammaSpec,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceKind {
    WorstCase,
    Random,
    Zero,
}

impl DisturbanceKind {
    fn as_str(self) -> &'static str {
        match self {
            DisturbanceKind::WorstCase => "worst_case",
            DisturbanceKind::Random => "random",
            DisturbanceKind::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub n_sim: usize,
    pub n_ctrl: usize,
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
    pub cost_modes: Vec<usize>,
    pub field_points: usize,
    pub disturbance: DisturbanceKind,
    pub disturbance_modes: usize,
    /// `None`: 1.01·γ₀.
    pub disturbance_gamma: Option<f64>,
    pub seed: u64,
    pub per_mode: usize,
    pub max_frequency: f64,
    pub l2_norm: f64,
    /// γ in the cost `J`; `None` uses the design's γ.
    pub cost_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub beam: BeamSpec,
    pub rho_x: f64,
    pub rho_u: f64,
    pub design: Design,
    pub sweep_min: usize,
    pub sweep_max: usize,
    pub sim: SimSettings,
    pub output_dir: PathBuf,
    pub plots: bool,
}

const PHYSICAL_KEYS: [&str; 8] = [
    "beam.length",
    "beam.linear_density",
    "beam.youngs_modulus",
    "beam.moment_of_inertia",
    "beam.viscous_damping",
    "beam.structural_damping",
    "beam.actuator_left",
    "beam.actuator_right",
];
const ND_KEYS: [&str; 4] = ["nd.c1", "nd.c2", "nd.x_left", "nd.x_right"];

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut FlatConfig) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

pub fn parse_flat(text: &str, origin: &str) -> Result<FlatConfig, CliError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| config_err(format!("{origin}: {e}")))?;
    let mut flat = FlatConfig::new();
    flatten("", &table, &mut flat);
    Ok(flat)
}

pub fn read_flat(path: &Path) -> Result<FlatConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    parse_flat(&text, &path.display().to_string())
}

/// `key=value`; the value is read as a TOML value, and as a bare string if
/// that fails.
pub fn parse_override(spec: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_err(format!("override '{spec}' has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Reads the keys it knows and complains about the rest.
struct Reader {
    flat: FlatConfig,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.flat.remove(key)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => as_f64(key, &v),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => as_usize(key, &v),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(v) => Err(config_err(format!("{key} must be true or false, got {v}"))),
        }
    }

    /// A number, or one of the given words mapping to `None`.
    fn f64_or_word(&mut self, key: &str, word: &str) -> Result<Option<f64>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) if s == word => Ok(None),
            Some(v) => as_f64(key, &v).map(Some),
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, CliError> {
    let x = match v {
        Value::Float(x) => *x,
        Value::Integer(i) => *i as f64,
        _ => return Err(config_err(format!("{key} must be a number, got {v}"))),
    };
    if !x.is_finite() {
        return Err(config_err(format!("{key} must be finite, got {x}")));
    }
    Ok(x)
}

fn as_usize(key: &str, v: &Value) -> Result<usize, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(config_err(format!("{key} must be a non-negative integer, got {v}"))),
    }
}

impl RunConfig {
    pub fn from_flat(flat: FlatConfig) -> Result<Self, CliError> {
        let mut r = Reader {
            flat: flat.into_iter().filter(|(k, _)| !k.starts_with("manifest.")).collect(),
        };

        let has_phys = PHYSICAL_KEYS.iter().any(|k| r.flat.contains_key(*k));
        let has_nd = ND_KEYS.iter().any(|k| r.flat.contains_key(*k));
        let beam = match (has_phys, has_nd) {
            (true, true) => {
                return Err(config_err(
                    "exactly one beam specification allowed: found both beam.* and nd.* keys",
                ))
            }
            (false, false) => {
                return Err(config_err("no beam specification: give beam.* (physical) or nd.* keys"))
            }
            (true, false) => {
                let mut v = [0.0; 8];
                for (slot, key) in v.iter_mut().zip(PHYSICAL_KEYS) {
                    let val = r.take(key).ok_or_else(|| config_err(format!("missing {key}")))?;
                    *slot = as_f64(key, &val)?;
                }
                BeamSpec::Physical(BeamPhysical {
                    length: v[0],
                    linear_density: v[1],
                    youngs_modulus: v[2],
                    moment_of_inertia: v[3],
                    viscous_damping: v[4],
                    structural_damping: v[5],
                    actuator_left: v[6],
                    actuator_right: v[7],
                })
            }
            (false, true) => {
                let mut v = [0.0; 4];
                for (slot, key) in v.iter_mut().zip(ND_KEYS) {
                    let val = r.take(key).ok_or_else(|| config_err(format!("missing {key}")))?;
                    *slot = as_f64(key, &val)?;
                }
                BeamSpec::Nd {
                    c1: v[0],
                    c2: v[1],
                    x_left: v[2],
                    x_right: v[3],
                }
            }
        };

        let rho_x = r.f64_or("weights.rho_x", 0.1)?;
        let rho_u = r.f64_or("weights.rho_u", 1e-3)?;

        let n_modes = r.usize_or("design.N", 8)?;
        let spillover_aware = r.bool_or("design.spillover_aware", true)?;
        let gamma = match r.take("design.gamma") {
            None => GammaSpec::Min,
            Some(Value::String(s)) if s == "min" => GammaSpec::Min,
            Some(Value::String(s)) if s == "no-control" => GammaSpec::NoControl,
            Some(v) => GammaSpec::Fixed(as_f64("design.gamma", &v).map_err(|_| {
                config_err(format!("design.gamma must be a number, \"min\" or \"no-control\", got {v}"))
            })?),
        };
        let tol = r.f64_or("design.tol", 1e-3)?;
        let design = Design {
            n_modes,
            spillover_aware,
            gamma,
            tol,
        };

        let sweep_min = r.usize_or("sweep.N_min", 1)?;
        let sweep_max = r.usize_or("sweep.N_max", 40)?;

        let disturbance = match r.take("sim.disturbance") {
            None => DisturbanceKind::WorstCase,
            Some(Value::String(s)) => match s.as_str() {
                "worst_case" => DisturbanceKind::WorstCase,
                "random" => DisturbanceKind::Random,
                "zero" => DisturbanceKind::Zero,
                _ => {
                    return Err(config_err(format!(
                        "sim.disturbance must be worst_case, random or zero, got {s}"
                    )))
                }
            },
            Some(v) => return Err(config_err(format!("sim.disturbance must be a string, got {v}"))),
        };
        let cost_modes = match r.take("sim.cost_modes") {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| as_usize("sim.cost_modes", v))
                .collect::<Result<_, _>>()?,
            Some(v) => return Err(config_err(format!("sim.cost_modes must be a list, got {v}"))),
        };
        let seed = match r.take("sim.seed") {
            None => 1,
            Some(v) => as_usize("sim.seed", &v)? as u64,
        };
        let sim = SimSettings {
            n_sim: r.usize_or("sim.N_sim", 50)?,
            n_ctrl: r.usize_or("sim.N_ctrl", n_modes)?,
            dt: r.f64_or("sim.dt", 1e-3)?,
            t_final: r.f64_or("sim.t_final", 100.0)?,
            output_stride: r.usize_or("sim.output_stride", 100)?,
            cost_modes,
            field_points: r.usize_or("sim.field_points", 33)?,
            disturbance,
            disturbance_modes: r.usize_or("sim.disturbance_modes", 30)?,
            disturbance_gamma: r.f64_or_word("sim.disturbance_gamma", "default")?,
            seed,
            per_mode: r.usize_or("sim.per_mode", 3)?,
            max_frequency: r.f64_or("sim.max_frequency", 20.0)?,
            l2_norm: r.f64_or("sim.l2_norm", 1.0)?,
            cost_gamma: r.f64_or_word("sim.cost_gamma", "design")?,
        };

        let output_dir = match r.take("output_dir") {
            None => PathBuf::from("out"),
            Some(Value::String(s)) => PathBuf::from(s),
            Some(v) => return Err(config_err(format!("output_dir must be a string, got {v}"))),
        };
        let plots = r.bool_or("plots", false)?;

        if let Some(key) = r.flat.keys().next() {
            return Err(config_err(format!("unknown key {key}")));
        }
        let cfg = RunConfig {
            beam,
            rho_x,
            rho_u,
            design,
            sweep_min,
            sweep_max,
            sim,
            output_dir,
            plots,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not depend on the command. Beam invariants are
    /// checked when the beam is resolved.
    fn validate(&self) -> Result<(), CliError> {
        if !(self.rho_x >= 0.0) {
            return Err(config_err(format!("weights.rho_x must be >= 0, got {}", self.rho_x)));
        }
        if !(self.rho_u > 0.0) {
            return Err(config_err(format!("weights.rho_u must be > 0, got {}", self.rho_u)));
        }
        if !(self.design.tol > 0.0 && self.design.tol < 1.0) {
            return Err(config_err(format!("design.tol must be in (0, 1), got {}", self.design.tol)));
        }
        if let GammaSpec::Fixed(g) = self.design.gamma {
            if !(g > 0.0) {
                return Err(config_err(format!("design.gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Every setting, defaults included, as dotted keys. Loading this back
    /// gives the same configuration.
    pub fn to_flat(&self) -> FlatConfig {
        let mut m = FlatConfig::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        match &self.beam {
            BeamSpec::Physical(p) => {
                let vals = [
                    p.length,
                    p.linear_density,
                    p.youngs_modulus,
                    p.moment_of_inertia,
                    p.viscous_damping,
                    p.structural_damping,
                    p.actuator_left,
                    p.actuator_right,
                ];
                for (k, v) in PHYSICAL_KEYS.iter().zip(vals) {
                    put(k, Value::Float(v));
                }
            }
            BeamSpec::Nd { c1, c2, x_left, x_right } => {
                for (k, v) in ND_KEYS.iter().zip([*c1, *c2, *x_left, *x_right]) {
                    put(k, Value::Float(v));
                }
            }
        }
        put("weights.rho_x", Value::Float(self.rho_x));
        put("weights.rho_u", Value::Float(self.rho_u));
        put("design.N", int(self.design.n_modes));
        put("design.spillover_aware", Value::Boolean(self.design.spillover_aware));
        put(
            "design.gamma",
            match self.design.gamma {
                GammaSpec::Min => Value::String("min".into()),
                GammaSpec::NoControl => Value::String("no-control".into()),
                GammaSpec::Fixed(g) => Value::Float(g),
            },
        );
        put("design.tol", Value::Float(self.design.tol));
        put("sweep.N_min", int(self.sweep_min));
        put("sweep.N_max", int(self.sweep_max));
        let s = &self.sim;
        put("sim.N_sim", int(s.n_sim));
        put("sim.N_ctrl", int(s.n_ctrl));
        put("sim.dt", Value::Float(s.dt));
        put("sim.t_final", Value::Float(s.t_final));
        put("sim.output_stride", int(s.output_stride));
        put("sim.cost_modes", Value::Array(s.cost_modes.iter().map(|&n| int(n)).collect()));
        put("sim.field_points", int(s.field_points));
        put("sim.disturbance", Value::String(s.disturbance.as_str().into()));
        put("sim.disturbance_modes", int(s.disturbance_modes));
        put(
            "sim.disturbance_gamma",
            s.disturbance_gamma.map_or(Value::String("default".into()), Value::Float),
        );
        put("sim.seed", Value::Integer(s.seed as i64));
        put("sim.per_mode", int(s.per_mode));
        put("sim.max_frequency", Value::Float(s.max_frequency));
        put("sim.l2_norm", Value::Float(s.l2_norm));
        put(
            "sim.cost_gamma",
            s.cost_gamma.map_or(Value::String("design".into()), Value::Float),
        );
        put("output_dir", Value::String(self.output_dir.display().to_string()));
        put("plots", Value::Boolean(self.plots));
        m
    }
}

fn int(n: usize) -> Value {
    Value::Integer(n as i64)
}

/// One `key = value` line per entry.
pub fn render_flat(flat: &FlatConfig) -> String {
    flat.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Loads `path` (if any), applies overrides in order and builds the
/// configuration.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut flat = match path {
        Some(p) => read_flat(p)?,
        None => FlatConfig::new(),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        flat.insert(k, v);
    }
    RunConfig::from_flat(flat)
}
